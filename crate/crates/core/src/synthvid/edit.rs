use super::render::render_layers;
use super::vocab::{EditOp, PromptSpec, ShapeSelector, COLOR_PALETTE, STYLE_MATRICES};
use super::SceneSpec;
use crate::error::{Result, RfdmError};
use crate::tensor::{Clip, Tensor};

/// An input clip, an instruction, and the exact edited clip.
#[derive(Debug, Clone)]
pub struct EditTriplet {
    pub input: Clip,
    pub target: Clip,
    pub prompt: PromptSpec,
    /// Motion field of the target clip (see [`super::RenderOutput::flow`]).
    pub gt_flow: Tensor,
    /// Motion field of the input clip; `None` when loaded from disk.
    pub input_flow: Option<Tensor>,
    /// Visible coverage of each input object, `[T+1, H, W, n_objects]`;
    /// `None` when loaded from disk.
    pub masks: Option<Tensor>,
}

pub fn apply_edit(spec: &SceneSpec, prompt: &PromptSpec) -> Result<EditTriplet> {
    prompt.validate()?;
    spec.validate()?;
    let all = vec![true; spec.objects.len()];
    let colors: Vec<[f32; 3]> = spec.objects.iter().map(|o| o.color).collect();
    let input = render_layers(spec, &all, &colors);

    let selected = |sel_id: u32| -> Result<Vec<bool>> {
        let sel = ShapeSelector::from_id(sel_id)
            .ok_or_else(|| RfdmError::InvalidPrompt(format!("selector {sel_id}")))?;
        let picked: Vec<bool> = spec.objects.iter().map(|o| sel.matches(o.shape)).collect();
        if !picked.iter().any(|&p| p) {
            return Err(RfdmError::InvalidPrompt(format!(
                "selector `{}` matches no object in the scene",
                sel.name()
            )));
        }
        Ok(picked)
    };

    let (target, gt_flow) = match prompt.op {
        EditOp::GlobalStyle => {
            let m = &STYLE_MATRICES[prompt.arg0 as usize];
            let frames = input.clip.frames.iter().map(|f| apply_color_matrix(f, m)).collect();
            (Clip { frames }, input.flow.clone())
        }
        EditOp::LocalStyle => {
            let picked = selected(prompt.arg0)?;
            let color = COLOR_PALETTE[prompt.arg1.unwrap_or(0) as usize];
            let recolored: Vec<[f32; 3]> = colors
                .iter()
                .zip(&picked)
                .map(|(&c, &p)| if p { color } else { c })
                .collect();
            let out = render_layers(spec, &all, &recolored);
            (out.clip, out.flow)
        }
        EditOp::Remove => {
            let picked = selected(prompt.arg0)?;
            let keep: Vec<bool> = picked.iter().map(|&p| !p).collect();
            let out = render_layers(spec, &keep, &colors);
            (out.clip, out.flow)
        }
    };

    Ok(EditTriplet {
        input: input.clip,
        target,
        prompt: *prompt,
        gt_flow,
        input_flow: Some(input.flow),
        masks: Some(input.masks),
    })
}

fn apply_color_matrix(frame: &crate::tensor::Frame, m: &[[f32; 3]; 3]) -> crate::tensor::Frame {
    let mut out = frame.clone();
    for (src, dst) in frame.data.chunks_exact(3).zip(out.data.chunks_exact_mut(3)) {
        for (row, d) in m.iter().zip(dst.iter_mut()) {
            *d = (row[0] * src[0] + row[1] * src[1] + row[2] * src[2]).clamp(0.0, 1.0);
        }
    }
    out
}

/// Picks a random prompt that is valid for `spec`.
pub(crate) fn random_prompt<R: rand::Rng>(spec: &SceneSpec, rng: &mut R) -> PromptSpec {
    let present_selector = |rng: &mut R| {
        // `All` or the shape of a random present object.
        if rng.random_bool(0.25) {
            ShapeSelector::All
        } else {
            let o = &spec.objects[rng.random_range(0..spec.objects.len())];
            match o.shape {
                super::ShapeKind::Circle => ShapeSelector::Circle,
                super::ShapeKind::Square => ShapeSelector::Square,
                super::ShapeKind::Triangle => ShapeSelector::Triangle,
            }
        }
    };
    match rng.random_range(0..3) {
        0 => PromptSpec::global_style(rng.random_range(1..STYLE_MATRICES.len() as u32)),
        1 => {
            let sel = present_selector(rng);
            PromptSpec::local_style(sel, rng.random_range(0..COLOR_PALETTE.len() as u32))
        }
        _ => PromptSpec::remove(present_selector(rng)),
    }
}
