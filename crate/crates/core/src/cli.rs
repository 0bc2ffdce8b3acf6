//! Command-line front end. Every command writes its outputs under `--out`
//! and appends wall-clock timings to `run.log` there; everything else is a
//! pure function of the config file, the flags and the seeds.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::ablate::{run_ablation, Axis};
use crate::config::RunConfig;
use crate::error::{Result, RfdmError};
use crate::metrics::evaluate_corpus;
use crate::sample::edit_video;
use crate::synthvid::{build_dataset, PromptSpec};
use crate::tensor::Clip;
use crate::tensorio::{read_tensor, write_tensor, Checkpoint, DatasetManifest};
use crate::train::{checkpoint_formulation, load_params, run_training};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_HASH: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "rfdm", version, about = "Residual flow diffusion for causal video editing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired-edit dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a denoiser on the train split of a dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory or manifest file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Edit one clip with a trained checkpoint.
    Edit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input clip, a `[T+1, H, W, C]` tensor file.
        #[arg(long)]
        input: PathBuf,
        /// e.g. `remove:circle`, `local_style:square:red`, `global_style:sepia`.
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        delta: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long = "omega-x")]
        omega_x: Option<f64>,
        #[arg(long = "omega-xp")]
        omega_xp: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score edited clips against a dataset split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory or manifest file.
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding `<id>/output.vt` per clip.
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, edit and score every setting of one ablation axis.
    Ablate {
        /// ar_frames | conditioning | forcing | delta | unroll | formulation
        #[arg(long)]
        axis: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(err: &RfdmError) -> i32 {
    match err {
        RfdmError::Config { .. } | RfdmError::InvalidPrompt(_) | RfdmError::Domain(_) => EXIT_CONFIG,
        RfdmError::Io { .. } | RfdmError::Format { .. } | RfdmError::Json(_) | RfdmError::MissingResults(_) => {
            EXIT_IO
        }
        RfdmError::ConfigHashMismatch { .. } => EXIT_HASH,
        _ => EXIT_OTHER,
    }
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.jsonl")
    } else {
        p.to_path_buf()
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| RfdmError::io(p, e))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| RfdmError::io(path, e))
}

/// Appends one timestamped line to `out/run.log`.
fn log_line(out: &Path, msg: &str) {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(out.join("run.log")) {
        let _ = writeln!(f, "{secs} {msg}");
    }
}

fn resolved(config: Option<&Path>, apply: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(config)?;
    apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn stamp_config(out: &Path, cfg: &RunConfig) -> Result<String> {
    let path = out.join("config.toml");
    fs::write(&path, cfg.to_toml()?).map_err(|e| RfdmError::io(&path, e))?;
    cfg.hash()
}

pub fn execute(cmd: Command) -> Result<()> {
    let started = Instant::now();
    let (out, name) = match &cmd {
        Command::GenData { out, .. } => (out.clone(), "gen-data"),
        Command::Train { out, .. } => (out.clone(), "train"),
        Command::Edit { out, .. } => (out.clone(), "edit"),
        Command::Eval { out, .. } => (out.clone(), "eval"),
        Command::Ablate { out, .. } => (out.clone(), "ablate"),
    };
    match cmd {
        Command::GenData { config, out, seed, n } => {
            let cfg = resolved(config.as_deref(), |c| {
                if let Some(s) = seed {
                    c.data.seed = s;
                }
                if let Some(n) = n {
                    c.data.n_clips = n;
                }
            })?;
            create_dir(&out)?;
            let hash = stamp_config(&out, &cfg)?;
            let m = build_dataset(&cfg.generator, cfg.data.n_clips, &cfg.data.ratios(), &out, cfg.data.seed)?;
            m.validate(|ids| PromptSpec::from_ids(ids).is_ok())?;
            log_line(&out, &format!("gen-data config={hash} clips={}", m.records.len()));
        }
        Command::Train {
            config,
            data,
            out,
            resume,
            steps,
            seed,
        } => {
            let cfg = resolved(config.as_deref(), |c| {
                if let Some(s) = steps {
                    c.train.steps = s;
                }
                if let Some(s) = seed {
                    c.train.seed = s;
                }
            })?;
            let manifest = DatasetManifest::read(manifest_path(&data))?;
            create_dir(&out)?;
            let hash = stamp_config(&out, &cfg)?;
            let identity = cfg.training_hash()?;
            let res = run_training(&manifest, &cfg.model, &cfg.train, &cfg.schedule, &identity, &out, resume.as_deref())?;
            log_line(
                &out,
                &format!("train config={hash} step={} checkpoint={}", res.checkpoint.header.step, res.checkpoint_path.display()),
            );
        }
        Command::Edit {
            config,
            checkpoint,
            input,
            prompt,
            delta,
            steps,
            omega_x,
            omega_xp,
            seed,
            out,
        } => {
            let mut cfg = resolved(config.as_deref(), |c| {
                if let Some(d) = delta {
                    c.sampler.delta = d;
                }
                if let Some(s) = steps {
                    c.sampler.steps = s;
                }
                if let Some(w) = omega_x {
                    c.sampler.omega_x = w;
                }
                if let Some(w) = omega_xp {
                    c.sampler.omega_xp = w;
                }
                if let Some(s) = seed {
                    c.sampler.seed = s;
                }
            })?;
            let prompt = PromptSpec::parse(&prompt)?;
            let ckpt = Checkpoint::read(&checkpoint)?;
            if let Some(f) = checkpoint_formulation(&ckpt) {
                cfg.sampler.formulation = f;
            }
            let params = load_params(&ckpt)?;
            let clip = Clip::from_tensor(&read_tensor(&input)?)?;
            create_dir(&out)?;
            let hash = stamp_config(&out, &cfg)?;
            let res = edit_video(&params, &clip, prompt, &cfg.sampler, &cfg.schedule)?;
            write_tensor(out.join("output.vt"), &res.output.to_tensor())?;
            write_json(
                &out.join("edit.json"),
                &json!({
                    "config_hash": hash,
                    "checkpoint_config_hash": ckpt.header.config_hash,
                    "prompt": prompt.to_string(),
                    "key_frames": res.key_frames,
                    "trace": res.trace,
                }),
            )?;
            log_line(&out, &format!("edit config={hash} frames={}", clip.len()));
        }
        Command::Eval {
            config,
            manifest,
            results,
            split,
            out,
        } => {
            let cfg = resolved(config.as_deref(), |_| {})?;
            let m = DatasetManifest::read(manifest_path(&manifest))?;
            create_dir(&out)?;
            let hash = stamp_config(&out, &cfg)?;
            let report = evaluate_corpus(&m, &split, &results, &cfg.metrics)?;
            let mut v = serde_json::to_value(&report)?;
            v["config_hash"] = json!(hash);
            write_json(&out.join("report.json"), &v)?;
            log_line(&out, &format!("eval config={hash} videos={}", report.overall.videos));
        }
        Command::Ablate {
            axis,
            config,
            split,
            out,
        } => {
            let axis: Axis = axis.parse()?;
            let cfg = resolved(config.as_deref(), |_| {})?;
            create_dir(&out)?;
            let hash = stamp_config(&out, &cfg)?;
            let table = run_ablation(axis, &cfg, &split, &out)?;
            log_line(&out, &format!("ablate axis={} config={hash} rows={}", axis.name(), table.rows.len()));
        }
    }
    log_line(&out, &format!("{name} done in {:.1}s", started.elapsed().as_secs_f64()));
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
