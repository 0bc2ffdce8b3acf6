//! Ablation sweeps: train, edit and score one cell per setting of an axis,
//! all cells sharing the data, training and sampling seeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::denoiser::DenoiserParams;
use crate::error::{Result, RfdmError};
use crate::forward::Formulation;
use crate::metrics::{evaluate_corpus, MetricReport, RESULT_FILE};
use crate::sample::edit_video;
use crate::synthvid::{build_dataset, load_triplet};
use crate::tensorio::{write_tensor, Checkpoint, DatasetManifest};
use crate::train::{load_params, run_training, Forcing, FINAL_CHECKPOINT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    ArFrames,
    Conditioning,
    Forcing,
    Delta,
    Unroll,
    Formulation,
}

impl Axis {
    pub const ALL: [Axis; 6] = [
        Axis::ArFrames,
        Axis::Conditioning,
        Axis::Forcing,
        Axis::Delta,
        Axis::Unroll,
        Axis::Formulation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::ArFrames => "ar_frames",
            Axis::Conditioning => "conditioning",
            Axis::Forcing => "forcing",
            Axis::Delta => "delta",
            Axis::Unroll => "unroll",
            Axis::Formulation => "formulation",
        }
    }
}

impl FromStr for Axis {
    type Err = RfdmError;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Axis::ALL.iter().map(|a| a.name()).collect();
                RfdmError::config("axis", format!("unknown axis `{s}`, expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub config: RunConfig,
}

fn with_formulation(mut c: RunConfig, f: Formulation) -> RunConfig {
    c.train.formulation = f;
    c.sampler.formulation = f;
    c
}

/// The settings of `axis`, each applied on top of `base`.
pub fn cells(axis: Axis, base: &RunConfig) -> Vec<Cell> {
    let cell = |label: &str, config: RunConfig| Cell {
        label: label.to_owned(),
        config,
    };
    match axis {
        Axis::ArFrames => [0, 1, 3, 5]
            .into_iter()
            .map(|k| {
                let mut c = base.clone();
                c.train.ar_frames = k;
                cell(&format!("K={k}"), c)
            })
            .collect(),
        Axis::Conditioning => {
            let mut x_only = with_formulation(base.clone(), Formulation::FramePrediction);
            x_only.train.cond_x_only = true;
            vec![cell("x", x_only), cell("x+prev", base.clone())]
        }
        Axis::Forcing => [("teacher", Forcing::Teacher), ("diffusion", Forcing::Diffusion)]
            .into_iter()
            .map(|(l, f)| {
                let mut c = base.clone();
                c.train.forcing = f;
                cell(l, c)
            })
            .collect(),
        Axis::Delta => [0, 1, 3, 5]
            .into_iter()
            .map(|d| {
                let mut c = base.clone();
                c.sampler.delta = d;
                cell(&format!("delta={d}"), c)
            })
            .collect(),
        Axis::Unroll => [("yes", true), ("no", false)]
            .into_iter()
            .map(|(l, u)| {
                let mut c = base.clone();
                c.train.unroll = u;
                cell(l, c)
            })
            .collect(),
        Axis::Formulation => vec![
            cell("frame", with_formulation(base.clone(), Formulation::FramePrediction)),
            cell("residual_flow", with_formulation(base.clone(), Formulation::ResidualFlow)),
        ],
    }
}

fn data_hash(cfg: &RunConfig) -> Result<String> {
    #[derive(Serialize)]
    struct Key<'a> {
        generator: &'a crate::synthvid::GeneratorConfig,
        data: &'a crate::config::DataConfig,
    }
    let text = toml::to_string(&Key {
        generator: &cfg.generator,
        data: &cfg.data,
    })
    .map_err(|e| RfdmError::config("<serialize>", e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Generates the dataset for `cfg` under `root/data-<hash>` unless present.
pub fn ensure_dataset(cfg: &RunConfig, root: &Path) -> Result<DatasetManifest> {
    let dir = root.join(format!("data-{}", &data_hash(cfg)?[..16]));
    let manifest = dir.join("manifest.jsonl");
    if manifest.is_file() {
        return DatasetManifest::read(&manifest);
    }
    build_dataset(&cfg.generator, cfg.data.n_clips, &cfg.data.ratios(), &dir, cfg.data.seed)
}

/// Trains `cfg` into `cache/<training hash>/` unless a final checkpoint is
/// already there.
pub fn ensure_trained(cfg: &RunConfig, manifest: &DatasetManifest, cache: &Path) -> Result<PathBuf> {
    let th = cfg.training_hash()?;
    let dir = cache.join(format!("{}-s{}", &th[..16], cfg.train.steps));
    let ckpt = dir.join(FINAL_CHECKPOINT);
    if ckpt.is_file() {
        return Ok(ckpt);
    }
    run_training(manifest, &cfg.model, &cfg.train, &cfg.schedule, &th, &dir, None)?;
    Ok(ckpt)
}

/// Edits every clip of `split` into `results/<id>/output.vt`.
pub fn edit_split(
    params: &DenoiserParams,
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    split: &str,
    results: &Path,
) -> Result<()> {
    for rec in manifest.split(split) {
        let tr = load_triplet(manifest, rec)?;
        let res = edit_video(params, &tr.input, tr.prompt, &cfg.sampler, &cfg.schedule)?;
        write_tensor(results.join(&rec.id).join(RESULT_FILE), &res.output.to_tensor())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub config_hash: String,
    pub training_hash: String,
    pub temp_con: f64,
    pub err_accu: f64,
    pub vidreamsim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: Axis,
    pub split: String,
    pub data_seed: u64,
    pub train_seed: u64,
    pub sampler_seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# axis={} split={} data_seed={} train_seed={} sampler_seed={}\n",
            self.axis.name(),
            self.split,
            self.data_seed,
            self.train_seed,
            self.sampler_seed
        );
        s.push_str("setting\ttemp_con\terr_accu\tvidreamsim\tconfig_hash\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                r.label, r.temp_con, r.err_accu, r.vidreamsim, r.config_hash
            ));
        }
        s
    }
}

/// Trains (or reuses), edits and scores one cell.
pub fn run_cell(
    cell: &Cell,
    manifest: &DatasetManifest,
    split: &str,
    out_dir: &Path,
) -> Result<(AblationRow, MetricReport)> {
    cell.config.validate()?;
    let ckpt_path = ensure_trained(&cell.config, manifest, &out_dir.join("models"))?;
    let params = load_params(&Checkpoint::read(&ckpt_path)?)?;
    let hash = cell.config.hash()?;
    let results = out_dir.join("cells").join(&hash[..16]);
    if results.exists() {
        fs::remove_dir_all(&results).map_err(|e| RfdmError::io(&results, e))?;
    }
    edit_split(&params, &cell.config, manifest, split, &results)?;
    let report = evaluate_corpus(manifest, split, &results, &cell.config.metrics)?;
    let json = serde_json::to_vec_pretty(&report)?;
    let report_path = results.join("report.json");
    fs::write(&report_path, json).map_err(|e| RfdmError::io(&report_path, e))?;
    Ok((
        AblationRow {
            label: cell.label.clone(),
            config_hash: hash,
            training_hash: cell.config.training_hash()?,
            temp_con: report.overall.temp_con,
            err_accu: report.overall.err_accu,
            vidreamsim: report.overall.vidreamsim,
        },
        report,
    ))
}

/// Runs every cell of `axis` and writes `table.tsv` and `table.json` into
/// `out_dir`.
pub fn run_ablation(axis: Axis, base: &RunConfig, split: &str, out_dir: &Path) -> Result<AblationTable> {
    base.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| RfdmError::io(out_dir, e))?;
    let manifest = ensure_dataset(base, out_dir)?;
    if manifest.split(split).is_empty() {
        return Err(RfdmError::config("split", format!("split `{split}` has no clips")));
    }
    let mut rows = Vec::new();
    for cell in cells(axis, base) {
        rows.push(run_cell(&cell, &manifest, split, out_dir)?.0);
    }
    let table = AblationTable {
        axis,
        split: split.to_owned(),
        data_seed: base.data.seed,
        train_seed: base.train.seed,
        sampler_seed: base.sampler.seed,
        rows,
    };
    let tsv = out_dir.join(format!("{}.tsv", axis.name()));
    fs::write(&tsv, table.to_text()).map_err(|e| RfdmError::io(&tsv, e))?;
    let json = out_dir.join(format!("{}.json", axis.name()));
    fs::write(&json, serde_json::to_vec_pretty(&table)?).map_err(|e| RfdmError::io(&json, e))?;
    Ok(table)
}
