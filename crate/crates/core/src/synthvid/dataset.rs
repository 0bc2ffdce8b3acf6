use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::edit::{apply_edit, random_prompt, EditTriplet};
use super::vocab::PromptSpec;
use super::{GeneratorConfig, SceneSpec};
use crate::error::{Result, RfdmError};
use crate::tensor::Clip;
use crate::tensorio::{read_tensor, write_tensor, DatasetManifest, ManifestRecord};

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// Fractions of clips assigned to train / val / test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios(pub [f64; 3]);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios([0.8, 0.15, 0.05])
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(RfdmError::config("generator.split_ratios", "each ratio must lie in [0, 1]"));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RfdmError::config(
                "generator.split_ratios",
                format!("ratios must sum to 1, got {sum}"),
            ));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn clip_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

/// Split index (into [`SPLIT_NAMES`]) for every clip. Clips are ranked by a
/// seeded hash of their index; the first `floor(r0 * n)` ranks are train,
/// the next `floor(r1 * n)` val, the rest test.
pub fn assign_splits(n: usize, ratios: &SplitRatios, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (splitmix64(seed ^ 0x5a17_5eed ^ splitmix64(i as u64)), i));
    let n_train = (ratios.0[0] * n as f64 + 1e-9).floor() as usize;
    let n_val = (ratios.0[1] * n as f64 + 1e-9).floor() as usize;
    let mut split = vec![2; n];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_train {
            0
        } else if rank < n_train + n_val {
            1
        } else {
            2
        };
    }
    split
}

/// Generates `n_clips` edit triplets under `out_dir` and writes
/// `out_dir/manifest.jsonl`. Each clip lives in `clips/<id>/` as
/// `input.vt`, `target.vt` and `flow.vt`.
pub fn build_dataset(
    gen: &GeneratorConfig,
    n_clips: usize,
    ratios: &SplitRatios,
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<DatasetManifest> {
    gen.validate()?;
    ratios.validate()?;
    let out_dir = out_dir.as_ref();
    let splits = assign_splits(n_clips, ratios, seed);
    let mut records = Vec::with_capacity(n_clips);
    for (i, &split) in splits.iter().enumerate() {
        let id = format!("clip_{i:05}");
        let cseed = clip_seed(seed, i as u64);
        let scene = SceneSpec::sample(cseed, gen)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cseed ^ 0x70_726f_6d70);
        let prompt = random_prompt(&scene, &mut rng);
        let triplet = apply_edit(&scene, &prompt)?;

        let rel = format!("clips/{id}");
        let input_path = format!("{rel}/input.vt");
        let target_path = format!("{rel}/target.vt");
        let flow_path = format!("{rel}/flow.vt");
        write_tensor(out_dir.join(&input_path), &triplet.input.to_tensor())?;
        write_tensor(out_dir.join(&target_path), &triplet.target.to_tensor())?;
        write_tensor(out_dir.join(&flow_path), &triplet.gt_flow)?;

        records.push(ManifestRecord {
            id,
            input_path,
            target_path,
            flow_path,
            prompt: prompt.to_ids(),
            meta: serde_json::json!({
                "split": SPLIT_NAMES[split],
                "task": prompt.op.task_name(),
                "scene": scene,
            }),
        });
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        records,
    };
    manifest.write(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Loads the stored tensors of one manifest record. Masks and the input
/// flow are not persisted.
pub fn load_triplet(manifest: &DatasetManifest, rec: &ManifestRecord) -> Result<EditTriplet> {
    let input = Clip::from_tensor(&read_tensor(manifest.resolve(&rec.input_path))?)?;
    let target = Clip::from_tensor(&read_tensor(manifest.resolve(&rec.target_path))?)?;
    let gt_flow = read_tensor(manifest.resolve(&rec.flow_path))?;
    let prompt = PromptSpec::from_ids(rec.prompt)?;
    if input.frame_dims() != target.frame_dims() || input.len() != target.len() {
        return Err(RfdmError::Shape(format!(
            "record {}: input and target clips differ in shape",
            rec.id
        )));
    }
    Ok(EditTriplet {
        input,
        target,
        prompt,
        gt_flow,
        input_flow: None,
        masks: None,
    })
}

/// The scene stored in a record's metadata, if any.
pub fn stored_scene(rec: &ManifestRecord) -> Option<SceneSpec> {
    rec.meta
        .get("scene")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
}
