//! The `c3det` command line: one entry point for data generation, training,
//! evaluation, ablation runs, the annotation server, DOTA label import and
//! gradient checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use c3det_core::dataset::{self, Split};
use c3det_core::{dota, synthgen, LabeledImage};
use c3det_model::evalharness::{self, Method, PASSTHROUGH};
use c3det_model::trainer::{self, TrainData};
use c3det_model::{gradcheck, Detector, Variant};
use clap::{Args, Parser, Subcommand};
use log::info;

pub use config::ResolvedConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "c3det", version, about = "Interactive multi-class tiny-object detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic dataset.
    GenData(GenDataArgs),
    /// Train one model variant.
    Train(TrainArgs),
    /// Run the click protocol on a checkpoint.
    Eval(EvalArgs),
    /// Train (or reuse) several variants and compare them with paired sessions.
    Ablate(AblateArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
    /// Import DOTA-style text labels into a dataset.
    ImportDota(ImportArgs),
    /// Finite-difference checks of every differentiable stage.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration merged over the profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named defaults: default, desk or paper-profile.
    #[arg(long)]
    pub profile: Option<String>,
    /// Seed for every random stream of the run.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub data_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `passthrough` evaluates the passthrough rule on the checkpoint's detections.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub max_clicks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated methods: model variants and/or `passthrough`.
    #[arg(long, value_delimiter = ',', default_value = "full,no_uel,lf_only,c3_only,collate_then_correlate,early_fusion,late_fusion_baseline,detector_only")]
    pub variants: Vec<String>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub max_clicks: Option<usize>,
    #[arg(long)]
    pub data_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Dataset root (default: `C3DET_DATA`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint (default: `C3DET_CHECKPOINT`); without one `/infer` answers 503.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Port (default: `C3DET_PORT`, else 8080).
    #[arg(long)]
    pub port: Option<u16>,
    /// Session storage (default: `<data>/sessions`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Directory of `*.txt` label files.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset root holding `meta.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// A failure attributed to the subsystem that raised it.
#[derive(Debug)]
pub struct Failure {
    pub subsystem: &'static str,
    pub error: anyhow::Error,
}

trait Within<T> {
    fn within(self, subsystem: &'static str) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Within<T> for std::result::Result<T, E> {
    fn within(self, subsystem: &'static str) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure {
            subsystem,
            error: e.into(),
        })
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error [{}]: {:#}", f.subsystem, f.error);
            EXIT_FAILURE
        }
    }
}

fn resolve(common: &Common, out: Option<&Path>) -> std::result::Result<ResolvedConfig, Failure> {
    let mut cfg = ResolvedConfig::load(common.config.as_deref(), common.profile.as_deref()).within("config")?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg).and_then(|cfg| {
        if let Some(dir) = out {
            echo(&cfg, dir)?;
        }
        Ok(cfg)
    })
}

/// Print the banner and write `resolved_config.json` to `dir`.
fn echo(cfg: &ResolvedConfig, dir: &Path) -> std::result::Result<(), Failure> {
    println!("{}", cfg.banner());
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .within("config")?;
    dataset::write_json_atomic(&dir.join("resolved_config.json"), cfg).within("config")
}

pub fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::GenData(a) => {
            let cfg = resolve(&a.common, Some(&a.out))?;
            let manifest = synthgen::generate(&cfg.gen, &a.out).within("synthgen")?;
            for (split, stats) in &manifest.splits {
                println!("{split}: {}", serde_json::to_string(stats).expect("stats serialize"));
            }
            Ok(())
        }
        Command::Train(a) => {
            let mut cfg = resolve(&a.common, None)?;
            if let Some(v) = a.variant {
                cfg.model.variant = v;
            }
            if let Some(f) = a.data_fraction {
                cfg.train.data_fraction = f;
            }
            cfg.train.validate().within("config")?;
            echo(&cfg, &a.out)?;
            train_variant(&cfg, &a.data, &a.out).within("trainer")?;
            Ok(())
        }
        Command::Eval(a) => {
            let mut cfg = resolve(&a.common, None)?;
            apply_eval_flags(&mut cfg, a.sessions, a.max_clicks);
            echo(&cfg, &a.out)?;
            let (catalog, test) = load_split(&a.data, Split::Test).within("dataset")?;
            let det = Detector::load(&a.checkpoint, Some(&catalog)).within("checkpoint")?;
            let method = match a.variant.as_deref() {
                Some(PASSTHROUGH) => Method::Passthrough(&det),
                Some(other) => {
                    let v: Variant = other.parse().within("config")?;
                    if v != det.config().variant {
                        return Err(Failure {
                            subsystem: "checkpoint",
                            error: anyhow!("checkpoint holds {} but --variant {v} was requested", det.config().variant),
                        });
                    }
                    Method::Model(&det)
                }
                None => Method::Model(&det),
            };
            let result = evalharness::run_protocol(method, &test, &cfg.eval).within("evalharness")?;
            for path in evalharness::write_protocol_csvs(&a.out, &result).within("evalharness")? {
                println!("wrote {}", path.display());
            }
            print_summary(&result);
            Ok(())
        }
        Command::Ablate(a) => {
            let mut cfg = resolve(&a.common, None)?;
            apply_eval_flags(&mut cfg, a.sessions, a.max_clicks);
            if let Some(f) = a.data_fraction {
                cfg.train.data_fraction = f;
            }
            echo(&cfg, &a.out)?;
            let results = ablate(&cfg, &a.data, &a.out, &a.variants)?;
            for r in &results {
                print_summary(r);
            }
            Ok(())
        }
        Command::Serve(a) => {
            let env = |k: &str| std::env::var_os(k).map(PathBuf::from);
            let data = a.data.or_else(|| env("C3DET_DATA")).ok_or_else(|| Failure {
                subsystem: "server",
                error: anyhow!("no dataset: pass --data or set C3DET_DATA"),
            })?;
            let port = match a.port {
                Some(p) => p,
                None => match std::env::var("C3DET_PORT") {
                    Ok(p) => p.parse().with_context(|| format!("C3DET_PORT={p:?}")).within("server")?,
                    Err(_) => 8080,
                },
            };
            let cfg = c3det_server::ServerConfig {
                sessions_dir: a.out.unwrap_or_else(|| data.join("sessions")),
                data,
                checkpoint: a.checkpoint.or_else(|| env("C3DET_CHECKPOINT")),
                port,
            };
            c3det_server::serve_blocking(cfg).within("server")
        }
        Command::ImportDota(a) => {
            let report = dota::import_dota(&a.data, &a.out, a.split).within("dota")?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
        Command::Gradcheck(a) => {
            let checks = gradcheck::run_all(a.seed).within("gradcheck")?;
            let mut failed = Vec::new();
            for c in &checks {
                let e = c.result.max_rel_error();
                let ok = e < a.tolerance;
                println!("{:<32} {:>10.3e} {}", c.name, e, if ok { "ok" } else { "FAIL" });
                if !ok {
                    failed.push(c.name);
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure {
                    subsystem: "gradcheck",
                    error: anyhow!("relative error at or above {} in {failed:?}", a.tolerance),
                })
            }
        }
    }
}

fn apply_eval_flags(cfg: &mut ResolvedConfig, sessions: Option<usize>, max_clicks: Option<usize>) {
    if let Some(s) = sessions {
        cfg.eval.sessions = s;
    }
    if let Some(m) = max_clicks {
        cfg.eval.max_clicks = m;
    }
}

fn print_summary(r: &evalharness::ProtocolResult) {
    let at = |t: usize| r.summary.iter().find(|s| s.clicks == t);
    let first = at(0);
    let last = r.summary.last();
    if let (Some(a), Some(b)) = (first, last) {
        println!(
            "{}: mAP@0.5 {:.4} ± {:.4} at 0 clicks, {:.4} ± {:.4} at {} clicks",
            r.name, a.mean, a.std, b.mean, b.std, b.clicks
        );
    }
}

pub fn load_split(root: &Path, split: Split) -> Result<(c3det_core::ClassCatalog, Vec<LabeledImage>)> {
    let meta = dataset::read_meta(root).with_context(|| format!("reading dataset at {}", root.display()))?;
    let images = dataset::load_dataset(root, split).with_context(|| format!("loading {} split of {}", split.as_str(), root.display()))?;
    Ok((meta.classes, images))
}

/// Checkpoint an evaluation should use from a training directory: the best
/// validation checkpoint when one was written, else the final one.
pub fn preferred_checkpoint(dir: &Path) -> PathBuf {
    let best = dir.join("best.json");
    if best.exists() {
        best
    } else {
        dir.join("final.json")
    }
}

/// Train `cfg.model.variant` on `data` into `out`.
pub fn train_variant(cfg: &ResolvedConfig, data: &Path, out: &Path) -> Result<PathBuf> {
    let (catalog, train) = load_split(data, Split::Train)?;
    let val = if dataset::list_split(data, Split::Val).map(|v| !v.is_empty()).unwrap_or(false) {
        load_split(data, Split::Val)?.1
    } else {
        Vec::new()
    };
    info!(
        "training {} on {} images ({} used), {} validation images",
        cfg.model.variant,
        train.len(),
        trainer::subset_size(train.len(), cfg.train.data_fraction),
        val.len()
    );
    let outcome = trainer::train(
        &TrainData {
            train: &train,
            val: &val,
            catalog: &catalog,
        },
        &cfg.model,
        &cfg.train,
        Some(out),
    )?;
    if let Some((epoch, v)) = outcome.best_val {
        println!("{}: best validation mAP@0.5 {v:.4} after epoch {epoch}", cfg.model.variant);
    }
    Ok(preferred_checkpoint(out))
}

/// Written next to each checkpoint trained by [`ablate`]: `{"seconds": wall_time}`.
pub const TRAIN_TIME_FILE: &str = "train_time.json";

/// Model variants that must be trained for `methods`.
pub fn required_variants(methods: &[String]) -> Result<Vec<Variant>> {
    let mut out = Vec::new();
    for m in methods {
        let v = if m == PASSTHROUGH { Variant::DetectorOnly } else { m.parse()? };
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Train every needed variant under `out/checkpoints/<variant>` unless a run
/// with the identical resolved configuration already exists there, then
/// evaluate all methods with paired sessions.
pub fn ablate(cfg: &ResolvedConfig, data: &Path, out: &Path, methods: &[String]) -> std::result::Result<Vec<evalharness::ProtocolResult>, Failure> {
    if methods.is_empty() {
        return Err(Failure {
            subsystem: "config",
            error: anyhow!("no variants given"),
        });
    }
    let variants = required_variants(methods).within("config")?;
    let (catalog, test) = load_split(data, Split::Test).within("dataset")?;
    let mut checkpoints = BTreeMap::new();
    for v in variants {
        let mut vcfg = cfg.clone();
        vcfg.model.variant = v;
        let dir = out.join("checkpoints").join(v.as_str());
        let path = match reusable_run(&vcfg, &dir) {
            Some(path) => {
                info!("{v}: reusing {}", path.display());
                path
            }
            None => {
                // Drop the stamp first so an interrupted run is never reused.
                let _ = std::fs::remove_file(dir.join("resolved_config.json"));
                let started = std::time::Instant::now();
                let path = train_variant(&vcfg, data, &dir).within("trainer")?;
                let seconds = started.elapsed().as_secs_f64();
                dataset::write_json_atomic(&dir.join(TRAIN_TIME_FILE), &serde_json::json!({ "seconds": seconds })).within("trainer")?;
                dataset::write_json_atomic(&dir.join("resolved_config.json"), &vcfg).within("trainer")?;
                path
            }
        };
        checkpoints.insert(v, Detector::load(&path, Some(&catalog)).within("checkpoint")?);
    }
    let results = evalharness::run_matrix(methods, &checkpoints, &test, &cfg.eval, out).within("evalharness")?;
    println!("wrote {}", out.join("matrix_summary.csv").display());
    Ok(results)
}

/// A finished training run in `dir` whose stamp equals `cfg` (evaluation
/// settings excluded: they do not affect training).
fn reusable_run(cfg: &ResolvedConfig, dir: &Path) -> Option<PathBuf> {
    let stamp: ResolvedConfig = serde_json::from_slice(&std::fs::read(dir.join("resolved_config.json")).ok()?).ok()?;
    let same = stamp.model == cfg.model && stamp.train == cfg.train && stamp.gen == cfg.gen;
    let path = preferred_checkpoint(dir);
    (same && path.exists()).then_some(path)
}
