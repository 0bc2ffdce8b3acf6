//! Procedural paired edit videos with exact ground truth.
//!
//! Scenes are a smooth sinusoidal background seen through a panning camera
//! plus one to three flat-coloured shapes on linear trajectories. Because
//! the renderer is analytic, every edit has a pixel-exact target and every
//! frame has an exact motion field.

mod dataset;
mod edit;
mod render;
mod vocab;

pub use dataset::{assign_splits, build_dataset, load_triplet, stored_scene, SplitRatios, SPLIT_NAMES};
pub use edit::{apply_edit, EditTriplet};
pub use render::{render_scene, RenderOutput};
pub use vocab::{
    EditOp, PromptSpec, ShapeSelector, COLOR_NAMES, COLOR_PALETTE, NULL_TOKEN, STYLE_MATRICES, STYLE_NAMES,
    VOCAB_SIZE,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RfdmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    /// Point-in-shape test for an offset `(dx, dy)` from the centre; image
    /// `y` grows downwards, so triangles point up.
    pub fn contains(self, dx: f64, dy: f64, radius: f64) -> bool {
        match self {
            ShapeKind::Circle => dx * dx + dy * dy <= radius * radius,
            ShapeKind::Square => dx.abs() <= radius && dy.abs() <= radius,
            ShapeKind::Triangle => dy <= radius && dx.abs() <= 0.5 * (dy + radius),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub shape: ShapeKind,
    pub color: [f32; 3],
    /// Centre at frame 0, pixels (x, y).
    pub start: [f32; 2],
    /// Pixels per frame (x, y).
    pub velocity: [f32; 2],
    pub radius: f32,
}

impl SceneObject {
    pub fn center(&self, t: f64) -> (f64, f64) {
        (
            f64::from(self.start[0]) + f64::from(self.velocity[0]) * t,
            f64::from(self.start[1]) + f64::from(self.velocity[1]) * t,
        )
    }
}

/// One plane wave of the background: `amp * sin(2π (f·p) + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wave {
    pub amp: [f32; 3],
    /// Cycles per pixel along (x, y).
    pub freq: [f32; 2],
    pub phase: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Background {
    pub base: [f32; 3],
    pub waves: Vec<Wave>,
}

impl Background {
    pub fn value(&self, x: f64, y: f64) -> [f64; 3] {
        let mut out = self.base.map(f64::from);
        for w in &self.waves {
            let arg = std::f64::consts::TAU
                * (f64::from(w.freq[0]) * x + f64::from(w.freq[1]) * y)
                + f64::from(w.phase);
            let s = arg.sin();
            for (o, a) in out.iter_mut().zip(w.amp) {
                *o += f64::from(a) * s;
            }
        }
        out.map(|v| v.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Number of frames, `T + 1`.
    pub frames: usize,
    pub background: Background,
    /// Screen-space velocity of background content, pixels per frame.
    pub camera_pan: [f32; 2],
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 || self.frames == 0 {
            return Err(RfdmError::Generation(format!(
                "degenerate scene {}x{} with {} frames",
                self.height, self.width, self.frames
            )));
        }
        if self.objects.is_empty() || self.objects.len() > 3 {
            return Err(RfdmError::Generation(format!(
                "scenes hold 1 to 3 objects, got {}",
                self.objects.len()
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !object_stays_inside(o, self.width, self.height, self.frames) {
                return Err(RfdmError::Generation(format!(
                    "object {i} leaves the canvas"
                )));
            }
        }
        Ok(())
    }

    pub fn sample(seed: u64, cfg: &GeneratorConfig) -> Result<SceneSpec> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let min_dim = w.min(h);

        let base = [(); 3].map(|_| rng.random_range(0.3f32..0.7));
        let waves = (0..cfg.background_waves)
            .map(|_| {
                let period = rng.random_range(cfg.min_wave_period..cfg.min_wave_period * 2.0);
                let angle = rng.random_range(0.0..std::f32::consts::TAU);
                Wave {
                    amp: [(); 3].map(|_| rng.random_range(0.02f32..0.1)),
                    freq: [angle.cos() / period, angle.sin() / period],
                    phase: rng.random_range(0.0..std::f32::consts::TAU),
                }
            })
            .collect();
        let pan = random_velocity(&mut rng, cfg.max_pan);

        let n_obj = rng.random_range(cfg.min_objects..=cfg.max_objects);
        let mut objects = Vec::with_capacity(n_obj);
        for i in 0..n_obj {
            let mut placed = None;
            for _ in 0..200 {
                let radius = rng.random_range(cfg.radius_range[0]..cfg.radius_range[1]) as f64 * min_dim;
                let obj = SceneObject {
                    shape: ShapeKind::ALL[rng.random_range(0..3)],
                    color: [(); 3].map(|_| rng.random_range(0.0f32..1.0)),
                    start: [
                        rng.random_range(0.0..w) as f32,
                        rng.random_range(0.0..h) as f32,
                    ],
                    velocity: random_velocity(&mut rng, cfg.max_speed),
                    radius: radius as f32,
                };
                if object_stays_inside(&obj, cfg.width, cfg.height, cfg.frames) {
                    placed = Some(obj);
                    break;
                }
            }
            objects.push(placed.ok_or_else(|| {
                RfdmError::Generation(format!("could not place object {i} inside the canvas"))
            })?);
        }

        let spec = SceneSpec {
            seed,
            height: cfg.height,
            width: cfg.width,
            frames: cfg.frames,
            background: Background { base, waves },
            camera_pan: pan,
            objects,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn random_velocity(rng: &mut ChaCha8Rng, max: f32) -> [f32; 2] {
    if max <= 0.0 {
        return [0.0, 0.0];
    }
    let speed = rng.random_range(0.0..max);
    let angle = rng.random_range(0.0..std::f32::consts::TAU);
    [speed * angle.cos(), speed * angle.sin()]
}

/// Motion is linear, so checking the first and last frame bounds the path.
fn object_stays_inside(o: &SceneObject, width: usize, height: usize, frames: usize) -> bool {
    let r = f64::from(o.radius);
    let last = frames.saturating_sub(1) as f64;
    [0.0, last].iter().all(|&t| {
        let (cx, cy) = o.center(t);
        cx - r >= 1.0 && cx + r <= width as f64 - 1.0 && cy - r >= 1.0 && cy + r <= height as f64 - 1.0
    })
}

/// Knobs for random scene generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    /// Clip length `T + 1`.
    pub frames: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object radius as a fraction of the smaller canvas side.
    pub radius_range: [f32; 2],
    /// Maximum object speed, pixels per frame.
    pub max_speed: f32,
    /// Maximum camera pan speed, pixels per frame.
    pub max_pan: f32,
    pub background_waves: usize,
    /// Shortest background wavelength in pixels. Long wavelengths keep
    /// bilinear warping of the background accurate.
    pub min_wave_period: f32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 16,
            min_objects: 1,
            max_objects: 3,
            radius_range: [0.1, 0.2],
            max_speed: 1.5,
            max_pan: 0.75,
            background_waves: 2,
            min_wave_period: 64.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(RfdmError::config("generator.height/width", "canvas must be at least 8x8"));
        }
        if self.frames == 0 {
            return Err(RfdmError::config("generator.frames", "must be positive"));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > 3 {
            return Err(RfdmError::config(
                "generator.min_objects/max_objects",
                "need 1 <= min_objects <= max_objects <= 3",
            ));
        }
        let [lo, hi] = self.radius_range;
        if !(lo > 0.0 && lo < hi && hi < 0.45) {
            return Err(RfdmError::config("generator.radius_range", "need 0 < lo < hi < 0.45"));
        }
        if !(self.max_speed >= 0.0 && self.max_pan >= 0.0) {
            return Err(RfdmError::config("generator.max_speed", "speeds must be non-negative"));
        }
        if !(self.min_wave_period > 1.0) {
            return Err(RfdmError::config("generator.min_wave_period", "must exceed 1 pixel"));
        }
        Ok(())
    }
}
