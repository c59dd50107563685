//! INI run configuration shared by every command.
//!
//! Every key has a default; unknown sections, unknown keys and repeated keys
//! are errors. [`RunConfig::to_ini`] writes every field, so parsing its
//! output gives back the same configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};

use crate::degrade::DegradationPlan;
use crate::disc::DiscriminatorSpec;
use crate::error::{config_err, Error, Result};
use crate::gen::{GeneratorSpec, Pairwise, Variant};
use crate::loss::{EdgeKernel, LossConfig, LossTerm, NormKind};
use crate::resample::Interpolation;
use crate::trainer::{OptimizerKind, PatchOrder, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradeOptions {
    pub plan: DegradationPlan,
    /// 1 keeps the resolution; 2 or 4 also downsamples after degrading.
    pub scale: usize,
    pub method: Interpolation,
}

impl Default for DegradeOptions {
    fn default() -> Self {
        DegradeOptions {
            plan: DegradationPlan::default_plan(0),
            scale: 1,
            method: Interpolation::Bicubic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub root: Option<PathBuf>,
    pub scales: Vec<usize>,
    pub methods: Vec<Interpolation>,
    /// Named generator checkpoints.
    pub models: BTreeMap<String, PathBuf>,
    /// Parameter-free reference models: `bicubic`, `bilinear`, `oracle`.
    pub baselines: Vec<String>,
    /// Feature extractor checkpoint for the LPIPS column.
    pub extractor: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            root: None,
            scales: vec![2, 4],
            methods: vec![Interpolation::Bicubic, Interpolation::Bilinear],
            models: BTreeMap::new(),
            baselines: vec!["bicubic".into()],
            extractor: None,
        }
    }
}

pub const BASELINES: [&str; 3] = ["bicubic", "bilinear", "oracle"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpscaleOptions {
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub scale: usize,
}

impl Default for UpscaleOptions {
    fn default() -> Self {
        UpscaleOptions {
            checkpoint: None,
            input: None,
            scale: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub dataset_root: Option<PathBuf>,
    pub degrade: DegradeOptions,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub loss: LossConfig,
    /// Feature extractor checkpoint for the perceptual term.
    pub loss_extractor: Option<PathBuf>,
    pub train: TrainConfig,
    /// Train-state checkpoint to continue from.
    pub resume: Option<PathBuf>,
    pub eval: EvalOptions,
    pub upscale: UpscaleOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: None,
            dataset_root: None,
            degrade: DegradeOptions::default(),
            generator: GeneratorSpec::rrdb_based(),
            discriminator: DiscriminatorSpec::default(),
            loss: LossConfig::default(),
            loss_extractor: None,
            train: TrainConfig::default(),
            resume: None,
            eval: EvalOptions::default(),
            upscale: UpscaleOptions::default(),
        }
    }
}

/// Key/value pairs of one section; tracks which keys were read.
struct Section {
    name: String,
    values: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Section {
    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.values.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn parse<T: FromStr>(&mut self, key: &str, target: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.raw(key) {
            *target = v
                .parse()
                .map_err(|e| config_err!("[{}] {key} = {v}: {e}", self.name))?;
        }
        Ok(())
    }

    fn with<T>(&mut self, key: &str, target: &mut T, f: impl FnOnce(&str) -> Result<T>) -> Result<()> {
        if let Some(v) = self.raw(key) {
            *target = f(&v).map_err(|e| config_err!("[{}] {key} = {v}: {e}", self.name))?;
        }
        Ok(())
    }

    fn path(&mut self, key: &str, target: &mut Option<PathBuf>) -> Result<()> {
        self.with(key, target, |v| Ok(opt_str(v).map(PathBuf::from)))
    }

    /// Keys `prefix.<suffix>`, marked as used.
    fn prefixed(&mut self, prefix: &str) -> Vec<(String, String)> {
        let hits: Vec<(String, String)> = self
            .values
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        for (s, _) in &hits {
            self.used.insert(format!("{prefix}{s}"));
        }
        hits
    }

    fn finish(self) -> Result<()> {
        match self.values.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(config_err!("unknown key `{k}` in [{}]", self.name)),
            None => Ok(()),
        }
    }
}

fn opt_str(v: &str) -> Option<&str> {
    match v.trim() {
        "" | "none" => None,
        s => Some(s),
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_err!("expected a boolean")),
    }
}

fn parse_list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    match opt_str(v) {
        None => Ok(vec![]),
        Some(s) => s.split(',').map(|p| f(p.trim())).collect(),
    }
}

fn parse_usize(v: &str) -> Result<usize> {
    v.trim().parse().map_err(|e| config_err!("{e}"))
}

fn parse_auto(v: &str) -> Result<Option<usize>> {
    match v.trim() {
        "auto" => Ok(None),
        s => parse_usize(s).map(Some),
    }
}

fn parse_method(v: &str) -> Result<Interpolation> {
    Interpolation::parse(v).ok_or_else(|| config_err!("unknown interpolation `{v}`"))
}

fn join<T: ToString>(v: &[T]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    }
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("none".into(), |p| p.display().to_string())
}

const SECTIONS: [&str; 9] = [
    "run",
    "dataset",
    "degrade",
    "generator",
    "discriminator",
    "loss",
    "train",
    "eval",
    "upscale",
];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => config_err!("config file {} not found", path.display()),
            _ => Error::io(path, e),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str_noescape(text).map_err(|e| config_err!("config syntax: {e}"))?;
        let mut sections: BTreeMap<String, Section> = BTreeMap::new();
        for (name, props) in ini.iter() {
            let name = match name {
                None if props.is_empty() => continue,
                None => return Err(config_err!("keys must appear inside a [section]")),
                Some(n) => n.trim().to_string(),
            };
            if !SECTIONS.contains(&name.as_str()) {
                return Err(config_err!("unknown section [{name}]"));
            }
            if sections.contains_key(&name) {
                return Err(config_err!("section [{name}] appears twice"));
            }
            let mut values = BTreeMap::new();
            for (k, v) in props.iter() {
                if values.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                    return Err(config_err!("key `{k}` repeated in [{name}]"));
                }
            }
            sections.insert(
                name.clone(),
                Section {
                    name,
                    values,
                    used: BTreeSet::new(),
                },
            );
        }
        let mut take = |n: &str| {
            sections.remove(n).unwrap_or(Section {
                name: n.to_string(),
                values: BTreeMap::new(),
                used: BTreeSet::new(),
            })
        };

        let mut cfg = RunConfig::default();

        let mut s = take("run");
        s.parse("seed", &mut cfg.seed)?;
        s.path("output_dir", &mut cfg.output_dir)?;
        s.finish()?;

        let mut s = take("dataset");
        s.path("root", &mut cfg.dataset_root)?;
        s.finish()?;

        let mut s = take("degrade");
        let mut mode = "default".to_string();
        s.parse("plan", &mut mode)?;
        let mut steps: Vec<(usize, String)> = s
            .prefixed("step.")
            .into_iter()
            .map(|(k, v)| {
                k.parse::<usize>()
                    .map(|i| (i, v))
                    .map_err(|_| config_err!("[degrade] step.{k}: step keys are numbered"))
            })
            .collect::<Result<_>>()?;
        steps.sort_by_key(|(i, _)| *i);
        cfg.degrade.plan = match mode.as_str() {
            "default" | "none" if !steps.is_empty() => {
                return Err(config_err!("[degrade] step.N keys need plan = custom"));
            }
            "default" => DegradationPlan::default_plan(0),
            "none" => DegradationPlan::empty(0),
            "custom" => {
                let lines: Vec<&str> = steps.iter().map(|(_, l)| l.as_str()).collect();
                DegradationPlan::from_step_lines(&lines, 0)?
            }
            other => return Err(config_err!("[degrade] plan must be default, none or custom, got `{other}`")),
        };
        s.with("scale", &mut cfg.degrade.scale, |v| match parse_usize(v)? {
            n @ (1 | 2 | 4) => Ok(n),
            n => Err(config_err!("scale must be 1, 2 or 4, got {n}")),
        })?;
        s.with("method", &mut cfg.degrade.method, parse_method)?;
        s.finish()?;

        let mut s = take("generator");
        let mut variant = cfg.generator.variant;
        s.with("variant", &mut variant, Variant::parse)?;
        let g = &mut cfg.generator;
        *g = GeneratorSpec::default_for(variant);
        s.parse("channels", &mut g.base_channels)?;
        s.parse("blocks", &mut g.num_blocks)?;
        s.with("nonlocal", &mut g.nonlocal_positions, |v| parse_list(v, parse_usize))?;
        s.with("pairwise", &mut g.pairwise, Pairwise::parse)?;
        s.with("growth", &mut g.growth, parse_auto)?;
        s.with("bottleneck", &mut g.bottleneck, parse_auto)?;
        s.with("nonlocal_subsample", &mut g.nonlocal_subsample, parse_bool)?;
        s.with("global_skip", &mut g.global_skip, parse_bool)?;
        s.finish()?;
        g.validate()?;

        let mut s = take("discriminator");
        s.parse("channels", &mut cfg.discriminator.base_channels)?;
        s.parse("depth", &mut cfg.discriminator.depth)?;
        s.finish()?;
        cfg.discriminator.validate()?;

        let mut s = take("loss");
        let l = &mut cfg.loss;
        for (term, v) in s.prefixed("weight.") {
            let t = LossTerm::from_name(&term).ok_or_else(|| config_err!("[loss] unknown term `{term}`"))?;
            let w: f64 = v.parse().map_err(|e| config_err!("[loss] weight.{term} = {v}: {e}"))?;
            l.weights.insert(t, w);
        }
        s.parse("charbonnier_epsilon", &mut l.charbonnier_epsilon)?;
        s.parse("pyramid_levels", &mut l.pyramid_levels)?;
        s.with("perceptual_norm", &mut l.perceptual_norm, |v| match v {
            "l1" => Ok(NormKind::L1),
            "l2" => Ok(NormKind::L2),
            _ => Err(config_err!("expected l1 or l2")),
        })?;
        s.with("laplacian_kernel", &mut l.laplacian_kernel, |v| match v {
            "k1" => Ok(EdgeKernel::LaplacianK1),
            "k2" => Ok(EdgeKernel::LaplacianK2),
            "ricker" => Ok(EdgeKernel::Ricker),
            _ => Err(config_err!("expected k1, k2 or ricker")),
        })?;
        s.path("extractor", &mut cfg.loss_extractor)?;
        s.finish()?;
        cfg.loss.validate()?;

        let mut s = take("train");
        let t = &mut cfg.train;
        s.parse("learning_rate", &mut t.learning_rate)?;
        s.parse("clip_norm", &mut t.clip_norm)?;
        let mut opt = t.optimizer.name().to_string();
        s.parse("optimizer", &mut opt)?;
        let (mut b1, mut b2, mut eps) = match t.optimizer {
            OptimizerKind::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            OptimizerKind::Sgd => (0.9, 0.999, 1e-8),
        };
        s.parse("beta1", &mut b1)?;
        s.parse("beta2", &mut b2)?;
        s.parse("eps", &mut eps)?;
        t.optimizer = match opt.as_str() {
            "adam" => OptimizerKind::Adam {
                beta1: b1,
                beta2: b2,
                eps,
            },
            "sgd" => OptimizerKind::Sgd,
            other => return Err(config_err!("[train] optimizer must be adam or sgd, got `{other}`")),
        };
        s.parse("patch_size", &mut t.patch_size)?;
        s.parse("leaf_scale_steps", &mut t.leaf_scale_steps)?;
        s.parse("crop_size", &mut t.crop_size)?;
        s.parse("seq_len", &mut t.seq_len)?;
        s.with("scales", &mut t.scales, |v| parse_list(v, parse_usize))?;
        s.with("patch_order", &mut t.patch_order, PatchOrder::parse)?;
        s.parse("patch_stride", &mut t.patch_stride)?;
        s.parse("epochs", &mut t.epochs)?;
        s.parse("crops_per_clip", &mut t.crops_per_clip)?;
        s.with("augment", &mut t.augment, parse_bool)?;
        s.parse("dark_threshold", &mut t.dark_filter.threshold)?;
        s.with("dark_border", &mut t.dark_filter.border_strip, |v| match opt_str(v) {
            None => Ok(None),
            Some(n) => parse_usize(n).map(Some),
        })?;
        s.with("downsample", &mut t.downsample, parse_method)?;
        s.with("mixed_precision", &mut t.mixed_precision, parse_bool)?;
        s.parse("checkpoint_every", &mut t.checkpoint_every)?;
        s.path("resume", &mut cfg.resume)?;
        s.finish()?;
        cfg.train.validate()?;

        let mut s = take("eval");
        let e = &mut cfg.eval;
        s.path("root", &mut e.root)?;
        s.with("scales", &mut e.scales, |v| {
            parse_list(v, |p| match parse_usize(p)? {
                n @ (2 | 4) => Ok(n),
                n => Err(config_err!("scale must be 2 or 4, got {n}")),
            })
        })?;
        s.with("methods", &mut e.methods, |v| parse_list(v, parse_method))?;
        s.with("baselines", &mut e.baselines, |v| {
            parse_list(v, |p| {
                if BASELINES.contains(&p) {
                    Ok(p.to_string())
                } else {
                    Err(config_err!("unknown baseline `{p}`"))
                }
            })
        })?;
        for (name, v) in s.prefixed("model.") {
            if name.is_empty() || BASELINES.contains(&name.as_str()) {
                return Err(config_err!("[eval] model name `{name}` is empty or reserved"));
            }
            e.models.insert(name, PathBuf::from(v));
        }
        s.path("extractor", &mut e.extractor)?;
        s.finish()?;
        if e.scales.is_empty() || e.methods.is_empty() {
            return Err(config_err!("[eval] scales and methods must not be empty"));
        }

        let mut s = take("upscale");
        let u = &mut cfg.upscale;
        s.path("checkpoint", &mut u.checkpoint)?;
        s.path("input", &mut u.input)?;
        s.with("scale", &mut u.scale, |v| match parse_usize(v)? {
            n @ (2 | 4) => Ok(n),
            n => Err(config_err!("scale must be 2 or 4, got {n}")),
        })?;
        s.finish()?;

        Ok(cfg)
    }

    /// Full INI text with every key spelled out.
    pub fn to_ini(&self) -> String {
        let mut o = String::new();
        let kv = |o: &mut String, k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        o.push_str("[run]\n");
        kv(&mut o, "seed", self.seed.to_string());
        kv(&mut o, "output_dir", show_path(&self.output_dir));

        o.push_str("\n[dataset]\n");
        kv(&mut o, "root", show_path(&self.dataset_root));

        o.push_str("\n[degrade]\n");
        kv(&mut o, "plan", "custom".into());
        for (i, line) in self.degrade.plan.step_lines().into_iter().enumerate() {
            kv(&mut o, &format!("step.{}", i + 1), line);
        }
        kv(&mut o, "scale", self.degrade.scale.to_string());
        kv(&mut o, "method", self.degrade.method.to_string());

        let g = &self.generator;
        o.push_str("\n[generator]\n");
        kv(&mut o, "variant", g.variant.name().into());
        kv(&mut o, "channels", g.base_channels.to_string());
        kv(&mut o, "blocks", g.num_blocks.to_string());
        kv(&mut o, "nonlocal", join(&g.nonlocal_positions));
        kv(&mut o, "pairwise", g.pairwise.name().into());
        kv(&mut o, "growth", g.growth.map_or("auto".into(), |v| v.to_string()));
        kv(&mut o, "bottleneck", g.bottleneck.map_or("auto".into(), |v| v.to_string()));
        kv(&mut o, "nonlocal_subsample", g.nonlocal_subsample.to_string());
        kv(&mut o, "global_skip", g.global_skip.to_string());

        o.push_str("\n[discriminator]\n");
        kv(&mut o, "channels", self.discriminator.base_channels.to_string());
        kv(&mut o, "depth", self.discriminator.depth.to_string());

        let l = &self.loss;
        o.push_str("\n[loss]\n");
        for t in LossTerm::ALL {
            kv(&mut o, &format!("weight.{}", t.name()), l.weight(t).to_string());
        }
        kv(&mut o, "charbonnier_epsilon", l.charbonnier_epsilon.to_string());
        kv(&mut o, "pyramid_levels", l.pyramid_levels.to_string());
        let norm = match l.perceptual_norm {
            NormKind::L1 => "l1",
            NormKind::L2 => "l2",
        };
        kv(&mut o, "perceptual_norm", norm.into());
        let lap = match l.laplacian_kernel {
            EdgeKernel::LaplacianK1 => "k1",
            EdgeKernel::LaplacianK2 => "k2",
            EdgeKernel::Ricker => "ricker",
        };
        kv(&mut o, "laplacian_kernel", lap.into());
        kv(&mut o, "extractor", show_path(&self.loss_extractor));

        let t = &self.train;
        o.push_str("\n[train]\n");
        kv(&mut o, "learning_rate", t.learning_rate.to_string());
        kv(&mut o, "clip_norm", t.clip_norm.to_string());
        kv(&mut o, "optimizer", t.optimizer.name().into());
        if let OptimizerKind::Adam { beta1, beta2, eps } = t.optimizer {
            kv(&mut o, "beta1", beta1.to_string());
            kv(&mut o, "beta2", beta2.to_string());
            kv(&mut o, "eps", eps.to_string());
        }
        kv(&mut o, "patch_size", t.patch_size.to_string());
        kv(&mut o, "leaf_scale_steps", t.leaf_scale_steps.to_string());
        kv(&mut o, "crop_size", t.crop_size.to_string());
        kv(&mut o, "seq_len", t.seq_len.to_string());
        kv(&mut o, "scales", join(&t.scales));
        kv(&mut o, "patch_order", t.patch_order.name().into());
        kv(&mut o, "patch_stride", t.patch_stride.to_string());
        kv(&mut o, "epochs", t.epochs.to_string());
        kv(&mut o, "crops_per_clip", t.crops_per_clip.to_string());
        kv(&mut o, "augment", t.augment.to_string());
        kv(&mut o, "dark_threshold", t.dark_filter.threshold.to_string());
        kv(&mut o, "dark_border", t.dark_filter.border_strip.map_or("none".into(), |v| v.to_string()));
        kv(&mut o, "downsample", t.downsample.to_string());
        kv(&mut o, "mixed_precision", t.mixed_precision.to_string());
        kv(&mut o, "checkpoint_every", t.checkpoint_every.to_string());
        kv(&mut o, "resume", show_path(&self.resume));

        let e = &self.eval;
        o.push_str("\n[eval]\n");
        kv(&mut o, "root", show_path(&e.root));
        kv(&mut o, "scales", join(&e.scales));
        kv(&mut o, "methods", join(&e.methods));
        kv(&mut o, "baselines", join(&e.baselines));
        for (name, p) in &e.models {
            kv(&mut o, &format!("model.{name}"), p.display().to_string());
        }
        kv(&mut o, "extractor", show_path(&e.extractor));

        let u = &self.upscale;
        o.push_str("\n[upscale]\n");
        kv(&mut o, "checkpoint", show_path(&u.checkpoint));
        kv(&mut o, "input", show_path(&u.input));
        kv(&mut o, "scale", u.scale.to_string());
        o
    }
}
