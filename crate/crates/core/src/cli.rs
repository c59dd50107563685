//! `vsrlab degrade|train|upscale|evaluate --config <file> [--seed N] [--out DIR]`
//!
//! Exit status: 0 on success, 1 on runtime failures, 2 on configuration or
//! usage errors. Every command that gets past configuration writes
//! `manifest.json` into its output directory.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::degrade::apply_plan;
use crate::error::{config_err, Error, Result};
use crate::eval::{evaluate_clip, MetricsReport};
use crate::gen::{Generator, InterpolationUpscaler, LookupOracle, Upscaler};
use crate::loss::perceptual::{ConvFeatureExtractor, FeatureExtractor};
use crate::resample::Interpolation;
use crate::rng::{derive_seed, stream_id};
use crate::seqcore::downsample;
use crate::seqcore::io::{load_clip, save_clip};
use crate::trainer::Trainer;

pub const OUT_ENV: &str = "VSRLAB_OUT";
pub const DEFAULT_OUT: &str = "vsrlab-out";
pub const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "vsrlab", version, about = "Video super-resolution lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Degrade (and optionally downsample) every clip of the dataset.
    Degrade(Common),
    /// Train a generator on the dataset.
    Train(Common),
    /// Upscale one clip with a trained generator.
    Upscale(Common),
    /// Score models and baselines on a clip set.
    Evaluate(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (name, common) = match &cli.command {
        Command::Degrade(c) => ("degrade", c),
        Command::Train(c) => ("train", c),
        Command::Upscale(c) => ("upscale", c),
        Command::Evaluate(c) => ("evaluate", c),
    };
    match execute(name, common) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

/// `--out` beats `VSRLAB_OUT`, which beats the config file.
pub fn resolve_output(cli: Option<&Path>, env: Option<OsString>, config: Option<&Path>) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| env.filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn execute(name: &str, common: &Common) -> Result<()> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = resolve_output(common.out.as_deref(), std::env::var_os(OUT_ENV), cfg.output_dir.as_deref());
    cfg.output_dir = Some(out.clone());

    let job = match name {
        "degrade" => prepare_degrade(&cfg)?,
        "train" => prepare_train(&cfg)?,
        "upscale" => prepare_upscale(&cfg)?,
        _ => prepare_evaluate(&cfg)?,
    };

    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut manifest = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "output_dir": out.display().to_string(),
        "config": cfg,
        "config_ini": cfg.to_ini(),
    });
    let result = job.run(&cfg, &out, &mut manifest);
    manifest["status"] = match &result {
        Ok(()) => json!("ok"),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let path = out.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    result
}

/// Everything a command needs, checked before any output is written.
enum Job {
    Degrade(Dataset),
    Train(Box<Trainer>, Dataset),
    Upscale(Generator, PathBuf),
    Evaluate(Vec<(String, Model)>, Dataset, Option<ConvFeatureExtractor>),
}

enum Model {
    Fixed(Box<dyn Upscaler>),
    Oracle,
}

fn existing_dir(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = p.as_ref().ok_or_else(|| config_err!("{what} is not set"))?;
    if !p.is_dir() {
        return Err(config_err!("{what} {} is not a directory", p.display()));
    }
    Ok(p.clone())
}

fn existing_file(p: &Path, what: &str) -> Result<()> {
    if !p.is_file() {
        return Err(config_err!("{what} {} does not exist", p.display()));
    }
    Ok(())
}

fn extractor(p: &Option<PathBuf>) -> Result<Option<ConvFeatureExtractor>> {
    match p {
        None => Ok(None),
        Some(p) => {
            existing_file(p, "feature extractor")?;
            Ok(Some(ConvFeatureExtractor::load(p, &Device::Cpu)?))
        }
    }
}

fn prepare_degrade(cfg: &RunConfig) -> Result<Job> {
    let root = existing_dir(&cfg.dataset_root, "[dataset] root")?;
    Ok(Job::Degrade(Dataset::open(&root)?))
}

fn prepare_train(cfg: &RunConfig) -> Result<Job> {
    let ex = extractor(&cfg.loss_extractor)?.map(|e| Box::new(e) as Box<dyn FeatureExtractor>);
    let plan = cfg.degrade.plan.clone();
    let trainer = match &cfg.resume {
        Some(p) => {
            existing_file(p, "resume state")?;
            Trainer::load_state(p, cfg.train.clone(), cfg.loss.clone(), plan, ex)?
        }
        None => Trainer::new(
            cfg.train.clone(),
            cfg.loss.clone(),
            plan,
            cfg.generator.clone(),
            cfg.discriminator.clone(),
            cfg.seed,
            ex,
        )?,
    };
    let root = existing_dir(&cfg.dataset_root, "[dataset] root")?;
    Ok(Job::Train(Box::new(trainer), Dataset::open(&root)?))
}

fn prepare_upscale(cfg: &RunConfig) -> Result<Job> {
    let ck = cfg
        .upscale
        .checkpoint
        .as_ref()
        .ok_or_else(|| config_err!("[upscale] checkpoint is not set"))?;
    existing_file(ck, "checkpoint")?;
    let input = existing_dir(&cfg.upscale.input, "[upscale] input")?;
    Ok(Job::Upscale(Generator::load(ck, &Device::Cpu)?, input))
}

fn prepare_evaluate(cfg: &RunConfig) -> Result<Job> {
    let e = &cfg.eval;
    let mut models: Vec<(String, Model)> = Vec::new();
    for (name, p) in &e.models {
        existing_file(p, "model checkpoint")?;
        models.push((name.clone(), Model::Fixed(Box::new(Generator::load(p, &Device::Cpu)?))));
    }
    for b in &e.baselines {
        let m = match b.as_str() {
            "bicubic" => Model::Fixed(Box::new(InterpolationUpscaler(Interpolation::Bicubic))),
            "bilinear" => Model::Fixed(Box::new(InterpolationUpscaler(Interpolation::Bilinear))),
            _ => Model::Oracle,
        };
        models.push((b.clone(), m));
    }
    if models.is_empty() {
        return Err(config_err!("evaluation needs at least one model or baseline"));
    }
    let root = existing_dir(&e.root.clone().or_else(|| cfg.dataset_root.clone()), "[eval] root")?;
    let ds = Dataset::open(&root)?;
    if ds.is_empty() {
        return Err(config_err!("evaluation clip set {} is empty", root.display()));
    }
    Ok(Job::Evaluate(models, ds, extractor(&e.extractor)?))
}

impl Job {
    fn run(self, cfg: &RunConfig, out: &Path, manifest: &mut Value) -> Result<()> {
        match self {
            Job::Degrade(ds) => run_degrade(cfg, &ds, out, manifest),
            Job::Train(t, ds) => run_train(*t, &ds, out, manifest),
            Job::Upscale(g, input) => run_upscale(cfg, &g, &input, out, manifest),
            Job::Evaluate(models, ds, ex) => run_evaluate(cfg, &models, &ds, ex.as_ref(), out, manifest),
        }
    }
}

fn run_degrade(cfg: &RunConfig, ds: &Dataset, out: &Path, manifest: &mut Value) -> Result<()> {
    let mut clips = Vec::new();
    for clip in &ds.clips {
        let hr = clip.load()?;
        let plan = cfg
            .degrade
            .plan
            .with_seed(derive_seed(cfg.seed, &[stream_id("degrade"), stream_id(&clip.id)]));
        let (mut lr, records) = apply_plan(&hr, &plan)?;
        if cfg.degrade.scale > 1 {
            lr = downsample(&lr, cfg.degrade.scale, cfg.degrade.method)?;
        }
        let files = save_clip(&lr, &out.join(&clip.id))?;
        println!("{}: {} frames -> {}", clip.id, files.len(), out.join(&clip.id).display());
        clips.push(json!({
            "clip_id": clip.id,
            "plan_seed": plan.seed,
            "frames": files.len(),
            "steps": records,
        }));
    }
    manifest["clips"] = Value::Array(clips);
    Ok(())
}

fn run_train(mut t: Trainer, ds: &Dataset, out: &Path, manifest: &mut Value) -> Result<()> {
    let epochs = t.config.epochs;
    let every = t.config.checkpoint_every.max(1);
    manifest["start_step"] = json!(t.counters.generator_updates);
    manifest["epochs"] = json!([]);
    let mut checkpoints = Vec::new();
    for k in 0..epochs {
        let summary = t.train_epoch(ds)?;
        if summary.images == 0 {
            eprintln!(
                "warning: no usable crops in epoch {} ({} rejected as too dark)",
                summary.epoch, summary.skipped_dark
            );
        }
        let terms: Vec<String> = summary.mean.values.iter().map(|(t, v)| format!("{t}={v:.6}")).collect();
        println!(
            "epoch {}: images {} total {:.6} {}",
            summary.epoch,
            summary.images,
            summary.mean.total,
            terms.join(" ")
        );
        let mut entry = serde_json::to_value(&summary)?;
        entry["step"] = json!(t.counters.generator_updates);
        if let Some(list) = manifest["epochs"].as_array_mut() {
            list.push(entry);
        }
        if (k + 1) % every == 0 && k + 1 < epochs {
            let p = out.join(format!("generator_epoch{:03}.ckpt", summary.epoch));
            t.save_generator(&p)?;
            checkpoints.push(p.display().to_string());
        }
    }
    let gen = out.join("generator.ckpt");
    let state = out.join("state.ckpt");
    t.save_generator(&gen)?;
    t.save_state(&state)?;
    checkpoints.push(gen.display().to_string());
    manifest["checkpoints"] = json!(checkpoints);
    manifest["state"] = json!(state.display().to_string());
    manifest["counters"] = serde_json::to_value(&t.counters)?;
    manifest["step"] = json!(t.counters.generator_updates);
    Ok(())
}

fn run_upscale(cfg: &RunConfig, g: &Generator, input: &Path, out: &Path, manifest: &mut Value) -> Result<()> {
    let seq = load_clip(input)?;
    let scale = cfg.upscale.scale;
    let up = crate::gen::upscale_sequence(g, &seq, scale)?;
    let name = input.file_name().map_or("clip".into(), |n| n.to_string_lossy().into_owned());
    let dir = out.join(&name);
    let files = save_clip(&up, &dir)?;
    println!(
        "{}: {} frames {}x{} -> {}x{} in {}",
        name,
        files.len(),
        seq.width(),
        seq.height(),
        up.width(),
        up.height(),
        dir.display()
    );
    manifest["input"] = json!({ "frames": seq.frames(), "height": seq.height(), "width": seq.width() });
    manifest["output"] = json!({
        "dir": dir.display().to_string(),
        "frames": up.frames(),
        "height": up.height(),
        "width": up.width(),
    });
    Ok(())
}

fn run_evaluate(
    cfg: &RunConfig,
    models: &[(String, Model)],
    ds: &Dataset,
    ex: Option<&ConvFeatureExtractor>,
    out: &Path,
    manifest: &mut Value,
) -> Result<()> {
    let e = &cfg.eval;
    let ex = ex.map(|x| x as &dyn FeatureExtractor);
    let mut rows = Vec::new();
    for (name, model) in models {
        for clip in &ds.clips {
            let hr = clip.load()?;
            for &scale in &e.scales {
                for &method in &e.methods {
                    let mut row = match model {
                        Model::Fixed(m) => evaluate_clip(m.as_ref(), &clip.id, &hr, scale, method, ex)?,
                        Model::Oracle => {
                            let oracle = LookupOracle::new(&hr, method, &[2, 4])?;
                            evaluate_clip(&oracle, &clip.id, &hr, scale, method, ex)?
                        }
                    };
                    row.model = name.clone();
                    rows.push(row);
                }
            }
        }
    }
    let report = MetricsReport::from_rows(rows);
    report.write(out)?;
    println!("{}", report.table());
    manifest["aggregates"] = serde_json::to_value(&report.aggregates)?;
    manifest["report"] = json!(["metrics.csv", "metrics.json"]);
    Ok(())
}
