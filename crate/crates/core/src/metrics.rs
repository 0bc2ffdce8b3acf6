//! Video editing metrics: faithfulness (ViDreamSim), drift (error
//! accumulation), warping-error temporal consistency and directional visual
//! similarity, with seeded stand-in backends for the perceptual distance and
//! the image embedding.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::denoiser::nn::Conv3x3;
use crate::error::{Result, RfdmError};
use crate::tensor::{Clip, Frame, Tensor};
use crate::tensorio::{read_tensor, DatasetManifest};

/// Perceptual distance backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistanceFn {
    /// Mean squared pixel difference.
    PixelMse,
    /// Mean squared difference of two layers of fixed random conv features.
    RandomConvFeatures { seed: u64 },
}

impl Default for DistanceFn {
    fn default() -> Self {
        DistanceFn::RandomConvFeatures { seed: 0 }
    }
}

const FEATURE_CHANNELS: usize = 16;

/// A [`DistanceFn`] with its weights materialised.
pub struct Distance {
    kind: DistanceFn,
    convs: Option<(Conv3x3, Conv3x3)>,
}

fn random_conv(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Conv3x3 {
    let mut c = Conv3x3::zeros(cin, cout);
    let std = (2.0 / (cin * 9) as f32).sqrt();
    for w in &mut c.weight {
        let z: f32 = StandardNormal.sample(rng);
        *w = z * std;
    }
    c
}

fn to_planes(f: &Frame) -> Vec<f32> {
    let n = f.height * f.width;
    let mut out = vec![0.0; f.len()];
    for (p, px) in f.data.chunks_exact(f.channels).enumerate() {
        for (c, v) in px.iter().enumerate() {
            out[c * n + p] = *v;
        }
    }
    out
}

fn avg_pool2(planes: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, usize, usize) {
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let (mut acc, mut cnt) = (0.0, 0.0);
                for sy in 2 * y..(2 * y + 2).min(h) {
                    for sx in 2 * x..(2 * x + 2).min(w) {
                        acc += planes[(ch * h + sy) * w + sx];
                        cnt += 1.0;
                    }
                }
                out[(ch * ho + y) * wo + x] = acc / cnt;
            }
        }
    }
    (out, ho, wo)
}

impl DistanceFn {
    pub fn build(&self, channels: usize) -> Distance {
        let convs = match *self {
            DistanceFn::PixelMse => None,
            DistanceFn::RandomConvFeatures { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_conv(channels, FEATURE_CHANNELS, &mut rng);
                let b = random_conv(FEATURE_CHANNELS, FEATURE_CHANNELS, &mut rng);
                Some((a, b))
            }
        };
        Distance { kind: *self, convs }
    }
}

impl Distance {
    pub fn kind(&self) -> DistanceFn {
        self.kind
    }

    fn features(&self, f: &Frame) -> Vec<Vec<f32>> {
        let (c1, c2) = self.convs.as_ref().expect("feature backend");
        let relu = |v: Vec<f32>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
        let l1 = relu(c1.forward(&to_planes(f), f.height, f.width));
        let (pooled, h, w) = avg_pool2(&l1, FEATURE_CHANNELS, f.height, f.width);
        let l2 = relu(c2.forward(&pooled, h, w));
        vec![l1, l2]
    }

    pub fn distance(&self, a: &Frame, b: &Frame) -> Result<f64> {
        a.check_same_dims(b, "distance")?;
        match self.convs {
            None => Ok(a.mean_sq_diff(b)),
            Some(_) => {
                let (fa, fb) = (self.features(a), self.features(b));
                let per_layer: f64 = fa
                    .iter()
                    .zip(&fb)
                    .map(|(x, y)| {
                        x.iter()
                            .zip(y)
                            .map(|(p, q)| f64::from(p - q).powi(2))
                            .sum::<f64>()
                            / x.len() as f64
                    })
                    .sum();
                Ok(per_layer / fa.len() as f64)
            }
        }
    }
}

/// Image embedding backend for DVS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedFn {
    /// Bilinear downsample to `size x size`, then a seeded Gaussian
    /// projection to `dim` values.
    DownsampleProject { seed: u64, size: usize, dim: usize },
}

impl Default for EmbedFn {
    fn default() -> Self {
        EmbedFn::DownsampleProject {
            seed: 0,
            size: 16,
            dim: 128,
        }
    }
}

pub struct Embedder {
    size: usize,
    dim: usize,
    channels: usize,
    proj: Vec<f32>,
}

impl EmbedFn {
    pub fn build(&self, channels: usize) -> Embedder {
        let EmbedFn::DownsampleProject { seed, size, dim } = *self;
        let din = size * size * channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (din as f32).sqrt();
        let proj = (0..dim * din)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Embedder {
            size,
            dim,
            channels,
            proj,
        }
    }
}

/// Bilinear sample with edge clamping, pixel-index coordinates.
pub fn bilinear(f: &Frame, x: f64, y: f64, c: usize) -> f32 {
    let xc = x.clamp(0.0, (f.width - 1) as f64);
    let yc = y.clamp(0.0, (f.height - 1) as f64);
    let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(f.width - 1), (y0 + 1).min(f.height - 1));
    let (fx, fy) = ((xc - x0 as f64) as f32, (yc - y0 as f64) as f32);
    let top = f.at(y0, x0, c) * (1.0 - fx) + f.at(y0, x1, c) * fx;
    let bot = f.at(y1, x0, c) * (1.0 - fx) + f.at(y1, x1, c) * fx;
    top * (1.0 - fy) + bot * fy
}

impl Embedder {
    pub fn embed(&self, f: &Frame) -> Result<Vec<f64>> {
        if f.channels != self.channels {
            return Err(RfdmError::Shape(format!(
                "embedder built for {} channels, got {}",
                self.channels, f.channels
            )));
        }
        let s = self.size;
        let (sy, sx) = (f.height as f64 / s as f64, f.width as f64 / s as f64);
        let mut small = Vec::with_capacity(s * s * f.channels);
        for i in 0..s {
            for j in 0..s {
                for c in 0..f.channels {
                    small.push(bilinear(f, (j as f64 + 0.5) * sx - 0.5, (i as f64 + 0.5) * sy - 0.5, c));
                }
            }
        }
        Ok(self
            .proj
            .chunks_exact(small.len())
            .take(self.dim)
            .map(|row| row.iter().zip(&small).map(|(w, v)| f64::from(w * v)).sum())
            .collect())
    }
}

fn check_pair(a: &Clip, b: &Clip, what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(RfdmError::Shape(format!("{what}: clip lengths {} and {} differ", a.len(), b.len())));
    }
    if a.frame_dims() != b.frame_dims() {
        return Err(RfdmError::Shape(format!("{what}: frame dims differ")));
    }
    Ok(())
}

/// `(1/T) * sum_{t=1..T} d(out_t, gt_t)` for frames `0..=T`.
pub fn vidreamsim(out: &Clip, gt: &Clip, d: &Distance) -> Result<f64> {
    check_pair(out, gt, "vidreamsim")?;
    if out.len() < 2 {
        return Err(RfdmError::Shape("vidreamsim needs at least 2 frames".into()));
    }
    let t = out.len() - 1;
    let mut sum = 0.0;
    for i in 1..=t {
        sum += d.distance(&out.frames[i], &gt.frames[i])?;
    }
    Ok(sum / t as f64)
}

/// Normaliser of the error-accumulation sum over `t = 1..T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ErrAccuNorm {
    /// `1 / (T - 1)`
    #[default]
    TMinusOne,
    /// `1 / T`
    T,
}

pub fn err_accu(out: &Clip, d: &Distance, norm: ErrAccuNorm) -> Result<f64> {
    let t = out.len().saturating_sub(1);
    let denom = match norm {
        ErrAccuNorm::TMinusOne => t.saturating_sub(1),
        ErrAccuNorm::T => t,
    };
    if denom == 0 {
        return Err(RfdmError::Shape(format!(
            "err_accu with {norm:?} normaliser is undefined for a {}-frame clip",
            out.len()
        )));
    }
    let mut sum = 0.0;
    for i in 1..=t {
        sum += d.distance(&out.frames[i], &out.frames[0])?;
    }
    Ok(sum / denom as f64)
}

/// Previous frame resampled along `flow_t`: `warped(p) = prev(p - flow(p))`.
pub fn warp_prev(prev: &Frame, flow: &Tensor, t: usize) -> Frame {
    let (h, w) = (prev.height, prev.width);
    let mut out = Frame::zeros_like(prev);
    for y in 0..h {
        for x in 0..w {
            let o = ((t * h + y) * w + x) * 3;
            let (dx, dy) = (f64::from(flow.data[o]), f64::from(flow.data[o + 1]));
            for c in 0..prev.channels {
                *out.at_mut(y, x, c) = bilinear(prev, x as f64 - dx, y as f64 - dy, c);
            }
        }
    }
    out
}

fn check_flow(clip: &Clip, flow: &Tensor) -> Result<()> {
    let [h, w, _] = clip.frame_dims().ok_or_else(|| RfdmError::Shape("empty clip".into()))?;
    if flow.dims != [clip.len(), h, w, 3] {
        return Err(RfdmError::Shape(format!(
            "flow dims {:?} do not match clip [{}, {h}, {w}, 3]",
            flow.dims,
            clip.len()
        )));
    }
    Ok(())
}

/// Mean over consecutive pairs of the masked mean absolute warping error.
/// Pairs without any valid pixel are skipped.
pub fn temp_con(out: &Clip, flow: &Tensor) -> Result<f64> {
    check_flow(out, flow)?;
    let [h, w, c] = out.frame_dims().expect("checked");
    let (mut total, mut pairs) = (0.0, 0usize);
    for t in 1..out.len() {
        let warped = warp_prev(&out.frames[t - 1], flow, t);
        let (mut err, mut cnt) = (0.0f64, 0usize);
        for p in 0..h * w {
            if flow.data[(t * h * w + p) * 3 + 2] < 0.5 {
                continue;
            }
            for ch in 0..c {
                err += f64::from((warped.data[p * c + ch] - out.frames[t].data[p * c + ch]).abs());
            }
            cnt += c;
        }
        if cnt > 0 {
            total += err / cnt as f64;
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 0.0 } else { total / pairs as f64 })
}

/// Integer block-matching flow in the same `(dx, dy, valid)` layout as the
/// generator's ground truth. Every in-bounds match is marked valid.
pub fn estimate_flow(clip: &Clip, radius: usize, patch: usize) -> Result<Tensor> {
    let [h, w, c] = clip.frame_dims().ok_or_else(|| RfdmError::Shape("empty clip".into()))?;
    let mut flow = Tensor::zeros(vec![clip.len(), h, w, 3]);
    let (r, pr) = (radius as isize, patch as isize);
    let inb = |y: isize, x: isize| y >= 0 && x >= 0 && y < h as isize && x < w as isize;
    for t in 1..clip.len() {
        let (cur, prev) = (&clip.frames[t], &clip.frames[t - 1]);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut best = (f64::INFINITY, 0isize, 0isize);
                for dy in -r..=r {
                    for dx in -r..=r {
                        if !inb(y - dy, x - dx) {
                            continue;
                        }
                        let mut sad = 0.0;
                        for py in -pr..=pr {
                            for px in -pr..=pr {
                                let (ay, ax) = (y + py, x + px);
                                let (by, bx) = (ay - dy, ax - dx);
                                if !inb(ay, ax) || !inb(by, bx) {
                                    continue;
                                }
                                for ch in 0..c {
                                    sad += f64::from(
                                        (cur.at(ay as usize, ax as usize, ch) - prev.at(by as usize, bx as usize, ch))
                                            .abs(),
                                    );
                                }
                            }
                        }
                        // Prefer the smallest displacement on ties.
                        let better = sad < best.0 - 1e-12
                            || ((sad - best.0).abs() <= 1e-12 && dx.abs() + dy.abs() < best.1.abs() + best.2.abs());
                        if better {
                            best = (sad, dx, dy);
                        }
                    }
                }
                let o = ((t * h + y as usize) * w + x as usize) * 3;
                flow.data[o] = best.1 as f32;
                flow.data[o + 1] = best.2 as f32;
                flow.data[o + 2] = 1.0;
            }
        }
    }
    Ok(flow)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvsScore {
    pub value: f64,
    /// Frames skipped because a direction vector was (near) zero.
    pub skipped: usize,
}

/// Mean cosine between `e(out_t) - e(x_t)` and `e(gt_t) - e(x_t)`.
pub fn dvs(input: &Clip, out: &Clip, gt: &Clip, embed: &Embedder) -> Result<DvsScore> {
    check_pair(input, out, "dvs")?;
    check_pair(input, gt, "dvs")?;
    let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for t in 0..input.len() {
        let ex = embed.embed(&input.frames[t])?;
        let eo = embed.embed(&out.frames[t])?;
        let eg = embed.embed(&gt.frames[t])?;
        let a: Vec<f64> = eo.iter().zip(&ex).map(|(o, x)| o - x).collect();
        let b: Vec<f64> = eg.iter().zip(&ex).map(|(g, x)| g - x).collect();
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na < 1e-8 || nb < 1e-8 {
            skipped += 1;
            continue;
        }
        let dot: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
        sum += (dot / (na * nb)).clamp(-1.0, 1.0);
        used += 1;
    }
    if used == 0 {
        return Err(RfdmError::Numeric(format!(
            "dvs undefined: all {skipped} frames have a degenerate direction"
        )));
    }
    Ok(DvsScore {
        value: sum / used as f64,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlowSource {
    #[default]
    GroundTruth,
    BlockMatching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub distance: DistanceFn,
    pub embed: EmbedFn,
    pub flow: FlowSource,
    pub err_accu_norm: ErrAccuNorm,
    /// Search radius and patch half-size for block matching.
    pub block_radius: usize,
    pub block_patch: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            distance: DistanceFn::default(),
            embed: EmbedFn::default(),
            flow: FlowSource::GroundTruth,
            err_accu_norm: ErrAccuNorm::TMinusOne,
            block_radius: 2,
            block_patch: 1,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        let EmbedFn::DownsampleProject { size, dim, .. } = self.embed;
        if size == 0 || dim == 0 {
            return Err(RfdmError::config("metrics.embed", "size and dim must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRow {
    pub id: String,
    pub task: String,
    pub vidreamsim: f64,
    pub err_accu: f64,
    pub temp_con: f64,
    /// `None` when every frame's direction was degenerate.
    pub dvs: Option<f64>,
    pub dvs_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub videos: usize,
    pub vidreamsim: f64,
    pub err_accu: f64,
    pub temp_con: f64,
    pub dvs: Option<f64>,
    pub dvs_videos: usize,
}

impl Aggregate {
    pub fn of(rows: &[&VideoRow]) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: &dyn Fn(&VideoRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let dvs: Vec<f64> = rows.iter().filter_map(|r| r.dvs).collect();
        Self {
            videos: rows.len(),
            vidreamsim: mean(&|r| r.vidreamsim),
            err_accu: mean(&|r| r.err_accu),
            temp_con: mean(&|r| r.temp_con),
            dvs: (!dvs.is_empty()).then(|| dvs.iter().sum::<f64>() / dvs.len() as f64),
            dvs_videos: dvs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: String,
    pub config: MetricsConfig,
    pub overall: Aggregate,
    pub per_task: BTreeMap<String, Aggregate>,
    pub videos: Vec<VideoRow>,
}

impl MetricReport {
    pub fn from_rows(split: &str, config: &MetricsConfig, mut videos: Vec<VideoRow>) -> Self {
        videos.sort_by(|a, b| a.id.cmp(&b.id));
        let all: Vec<&VideoRow> = videos.iter().collect();
        let mut tasks: BTreeMap<String, Vec<&VideoRow>> = BTreeMap::new();
        for r in &videos {
            tasks.entry(r.task.clone()).or_default().push(r);
        }
        Self {
            split: split.to_owned(),
            config: config.clone(),
            overall: Aggregate::of(&all),
            per_task: tasks.into_iter().map(|(k, v)| (k, Aggregate::of(&v))).collect(),
            videos,
        }
    }
}

/// Everything needed to score one edited clip.
pub struct Scorer {
    pub config: MetricsConfig,
    distance: Distance,
    embed: Embedder,
}

impl Scorer {
    pub fn new(config: &MetricsConfig, channels: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            distance: config.distance.build(channels),
            embed: config.embed.build(channels),
        })
    }

    pub fn distance(&self) -> &Distance {
        &self.distance
    }

    pub fn score(&self, id: &str, task: &str, input: &Clip, out: &Clip, gt: &Clip, gt_flow: &Tensor) -> Result<VideoRow> {
        let flow = match self.config.flow {
            FlowSource::GroundTruth => gt_flow.clone(),
            FlowSource::BlockMatching => estimate_flow(out, self.config.block_radius, self.config.block_patch)?,
        };
        let (dvs, skipped) = match dvs(input, out, gt, &self.embed) {
            Ok(s) => (Some(s.value), s.skipped),
            Err(RfdmError::Numeric(_)) => (None, input.len()),
            Err(e) => return Err(e),
        };
        Ok(VideoRow {
            id: id.to_owned(),
            task: task.to_owned(),
            vidreamsim: vidreamsim(out, gt, &self.distance)?,
            err_accu: err_accu(out, &self.distance, self.config.err_accu_norm)?,
            temp_con: temp_con(out, &flow)?,
            dvs,
            dvs_skipped: skipped,
        })
    }
}

pub const RESULT_FILE: &str = "output.vt";

/// Scores `results_dir/<id>/output.vt` for every record of `split`.
/// Missing results are reported together, never skipped.
pub fn evaluate_corpus(
    manifest: &DatasetManifest,
    split: &str,
    results_dir: &Path,
    config: &MetricsConfig,
) -> Result<MetricReport> {
    let records = manifest.split(split);
    let missing: Vec<String> = records
        .iter()
        .filter(|r| !results_dir.join(&r.id).join(RESULT_FILE).is_file())
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(RfdmError::MissingResults(missing));
    }
    let mut rows = Vec::with_capacity(records.len());
    let mut scorer: Option<Scorer> = None;
    for rec in records {
        let tr = crate::synthvid::load_triplet(manifest, rec)?;
        let out = Clip::from_tensor(&read_tensor(results_dir.join(&rec.id).join(RESULT_FILE))?)?;
        let channels = tr.target.frame_dims().map_or(3, |d| d[2]);
        let sc = match &scorer {
            Some(s) => s,
            None => scorer.insert(Scorer::new(config, channels)?),
        };
        let task = rec
            .meta
            .get("task")
            .and_then(|v| v.as_str())
            .unwrap_or(tr.prompt.op.task_name());
        rows.push(sc.score(&rec.id, task, &tr.input, &out, &tr.target, &tr.gt_flow)?);
    }
    Ok(MetricReport::from_rows(split, config, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_clip(v: &[f32]) -> Clip {
        Clip::new(v.iter().map(|&x| Frame::filled(1, 1, 1, x)).collect()).unwrap()
    }

    #[test]
    fn hand_fixtures() {
        let d = DistanceFn::PixelMse.build(1);
        let out = scalar_clip(&[0.0, 1.0, 2.0]);
        let gt = scalar_clip(&[0.0, 0.0, 0.0]);
        assert_eq!(vidreamsim(&out, &gt, &d).unwrap(), 2.5);
        assert_eq!(err_accu(&out, &d, ErrAccuNorm::TMinusOne).unwrap(), 5.0);
        assert_eq!(err_accu(&out, &d, ErrAccuNorm::T).unwrap(), 2.5);
    }

    #[test]
    fn err_accu_needs_enough_frames() {
        let d = DistanceFn::PixelMse.build(1);
        assert!(err_accu(&scalar_clip(&[0.0, 1.0]), &d, ErrAccuNorm::TMinusOne).is_err());
        assert!(err_accu(&scalar_clip(&[0.0, 1.0]), &d, ErrAccuNorm::T).is_ok());
    }

    #[test]
    fn dvs_antipodal_and_identical() {
        let e = EmbedFn::default().build(1);
        let x = scalar_clip(&[0.5, 0.5]);
        let up = scalar_clip(&[0.7, 0.9]);
        let down = scalar_clip(&[0.3, 0.1]);
        assert!((dvs(&x, &up, &up, &e).unwrap().value - 1.0).abs() < 1e-12);
        assert!((dvs(&x, &down, &up, &e).unwrap().value + 1.0).abs() < 1e-12);
        assert!(dvs(&x, &x, &up, &e).is_err());
    }
}
