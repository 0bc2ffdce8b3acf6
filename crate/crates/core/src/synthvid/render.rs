use super::{SceneObject, SceneSpec};
use crate::error::Result;
use crate::tensor::{Clip, Frame, Tensor};

/// 2x2 supersampling offsets inside a unit pixel.
const SUBSAMPLES: [(f64, f64); 4] = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)];

pub struct RenderOutput {
    pub clip: Clip,
    /// `[T+1, H, W, 3]`: per pixel `(dx, dy, valid)`. `(dx, dy)` is how far
    /// the content under the pixel moved since the previous frame, so it was
    /// at `p - (dx, dy)` in frame `t - 1`. `valid` is 1 where that source is
    /// unoccluded and fully covered by the same layer; always 0 for frame 0.
    pub flow: Tensor,
    /// `[T+1, H, W, n_objects]` visible coverage of each object.
    pub masks: Tensor,
}

pub fn render_scene(spec: &SceneSpec) -> Result<RenderOutput> {
    spec.validate()?;
    let present = vec![true; spec.objects.len()];
    let colors: Vec<[f32; 3]> = spec.objects.iter().map(|o| o.color).collect();
    Ok(render_layers(spec, &present, &colors))
}

/// Layer 0 is the background; layer `i + 1` is object `i`.
fn owner_at(objects: &[SceneObject], present: &[bool], px: f64, py: f64, t: f64) -> usize {
    let mut owner = 0;
    for (i, o) in objects.iter().enumerate() {
        if !present[i] {
            continue;
        }
        let (cx, cy) = o.center(t);
        if o.shape.contains(px - cx, py - cy, f64::from(o.radius)) {
            owner = i + 1;
        }
    }
    owner
}

/// Renders the scene with a subset of objects and per-object colours.
pub(crate) fn render_layers(
    spec: &SceneSpec,
    present: &[bool],
    colors: &[[f32; 3]],
) -> RenderOutput {
    let (h, w, n_t, n_obj) = (spec.height, spec.width, spec.frames, spec.objects.len());
    let pan = spec.camera_pan.map(f64::from);
    let velocity = |layer: usize| -> [f64; 2] {
        if layer == 0 {
            pan
        } else {
            spec.objects[layer - 1].velocity.map(f64::from)
        }
    };

    let mut frames = Vec::with_capacity(n_t);
    let mut masks = vec![0f32; n_t * h * w * n_obj.max(1)];
    // Some(layer) where all subsamples of a pixel belong to one layer.
    let mut pure: Vec<Vec<Option<usize>>> = Vec::with_capacity(n_t);
    let mut center_owner: Vec<Vec<usize>> = Vec::with_capacity(n_t);

    for t in 0..n_t {
        let tf = t as f64;
        let mut frame = Frame::zeros(h, w, 3);
        let mut pure_t = vec![None; h * w];
        let mut center_t = vec![0usize; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0f64; 3];
                let mut owners = [0usize; 4];
                for (k, (ox, oy)) in SUBSAMPLES.iter().enumerate() {
                    let (px, py) = (x as f64 + ox, y as f64 + oy);
                    let owner = owner_at(&spec.objects, present, px, py, tf);
                    owners[k] = owner;
                    let c = if owner == 0 {
                        spec.background.value(px - pan[0] * tf, py - pan[1] * tf)
                    } else {
                        colors[owner - 1].map(f64::from)
                    };
                    for (a, v) in acc.iter_mut().zip(c) {
                        *a += v;
                    }
                    if owner > 0 {
                        masks[((t * h + y) * w + x) * n_obj + owner - 1] += 0.25;
                    }
                }
                for (ch, a) in acc.iter().enumerate() {
                    *frame.at_mut(y, x, ch) = (a / 4.0) as f32;
                }
                let idx = y * w + x;
                if owners.iter().all(|&o| o == owners[0]) {
                    pure_t[idx] = Some(owners[0]);
                }
                center_t[idx] = owner_at(
                    &spec.objects,
                    present,
                    x as f64 + 0.5,
                    y as f64 + 0.5,
                    tf,
                );
            }
        }
        frames.push(frame);
        pure.push(pure_t);
        center_owner.push(center_t);
    }

    let mut flow = vec![0f32; n_t * h * w * 3];
    for t in 0..n_t {
        for y in 0..h {
            for x in 0..w {
                let idx = y * w + x;
                let layer = pure[t][idx].unwrap_or(center_owner[t][idx]);
                let v = velocity(layer);
                let valid = t > 0
                    && pure[t][idx].is_some()
                    && source_is_pure(&pure[t - 1], w, h, x as f64 - v[0], y as f64 - v[1], layer);
                let o = ((t * h + y) * w + x) * 3;
                flow[o] = v[0] as f32;
                flow[o + 1] = v[1] as f32;
                flow[o + 2] = if valid { 1.0 } else { 0.0 };
            }
        }
    }

    RenderOutput {
        clip: Clip { frames },
        flow: Tensor {
            dims: vec![n_t, h, w, 3],
            data: flow,
        },
        masks: Tensor {
            dims: vec![n_t, h, w, n_obj.max(1)],
            data: masks,
        },
    }
}

/// Every bilinear tap with non-zero weight around `(sx, sy)` must lie on the
/// canvas and be fully covered by `layer`.
fn source_is_pure(pure_prev: &[Option<usize>], w: usize, h: usize, sx: f64, sy: f64, layer: usize) -> bool {
    let (x0, y0) = (sx.floor(), sy.floor());
    let xs: &[f64] = if sx > x0 { &[x0, x0 + 1.0] } else { &[x0] };
    let ys: &[f64] = if sy > y0 { &[y0, y0 + 1.0] } else { &[y0] };
    for &ty in ys {
        for &tx in xs {
            if tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                return false;
            }
            if pure_prev[ty as usize * w + tx as usize] != Some(layer) {
                return false;
            }
        }
    }
    true
}
