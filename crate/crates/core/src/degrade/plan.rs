use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::*;
use crate::error::{config_err, Result};
use crate::seqcore::FrameSequence;

/// Closed interval sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloatRange {
    pub lo: f64,
    pub hi: f64,
}

impl FloatRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(config_err!("invalid range {lo}:{hi}"));
        }
        Ok(FloatRange { lo, hi })
    }

    pub fn fixed(v: f64) -> Self {
        FloatRange { lo: v, hi: v }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen();
        self.lo + (self.hi - self.lo) * u
    }

    fn parse(s: &str) -> Result<Self> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| config_err!("bad number {t:?}"));
        match s.split_once(':') {
            Some((a, b)) => FloatRange::new(num(a)?, num(b)?),
            None => {
                let v = num(s)?;
                FloatRange::new(v, v)
            }
        }
    }
}

impl fmt::Display for FloatRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}:{}", self.lo, self.hi)
        }
    }
}

/// Inclusive integer interval sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub lo: u32,
    pub hi: u32,
}

impl IntRange {
    pub fn new(lo: u32, hi: u32) -> Result<Self> {
        if lo > hi {
            return Err(config_err!("invalid range {lo}:{hi}"));
        }
        Ok(IntRange { lo, hi })
    }

    pub fn fixed(v: u32) -> Self {
        IntRange { lo: v, hi: v }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        rng.gen_range(self.lo..=self.hi)
    }

    fn parse(s: &str) -> Result<Self> {
        let num = |t: &str| t.trim().parse::<u32>().map_err(|_| config_err!("bad integer {t:?}"));
        match s.split_once(':') {
            Some((a, b)) => IntRange::new(num(a)?, num(b)?),
            None => {
                let v = num(s)?;
                IntRange::new(v, v)
            }
        }
    }
}

impl fmt::Display for IntRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}:{}", self.lo, self.hi)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    GaussianBlur,
    GaussianNoise,
    ContrastBrightness,
    FrequencyGuided,
    Cutblur,
    Diffusion,
    ContentAware,
    Adaptive,
    Jpeg,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 9] = [
        OperatorKind::GaussianBlur,
        OperatorKind::GaussianNoise,
        OperatorKind::ContrastBrightness,
        OperatorKind::FrequencyGuided,
        OperatorKind::Cutblur,
        OperatorKind::Diffusion,
        OperatorKind::ContentAware,
        OperatorKind::Adaptive,
        OperatorKind::Jpeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::GaussianBlur => "gaussian_blur",
            OperatorKind::GaussianNoise => "gaussian_noise",
            OperatorKind::ContrastBrightness => "contrast_brightness",
            OperatorKind::FrequencyGuided => "frequency_guided",
            OperatorKind::Cutblur => "cutblur",
            OperatorKind::Diffusion => "diffusion",
            OperatorKind::ContentAware => "content_aware",
            OperatorKind::Adaptive => "adaptive",
            OperatorKind::Jpeg => "jpeg",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Parameter ranges of one degradation operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorConfig {
    GaussianBlur {
        /// `None` sizes the kernel from the drawn sigma.
        kernel_size: Option<usize>,
        sigma: FloatRange,
    },
    GaussianNoise {
        sigma: FloatRange,
    },
    ContrastBrightness {
        contrast: FloatRange,
        brightness: FloatRange,
    },
    FrequencyGuided {
        detail_scale: FloatRange,
        /// Probability of zeroing the detail bands instead of scaling them.
        zero_probability: f64,
    },
    Cutblur {
        mask_fraction: FloatRange,
        /// Candidate blur factors, each in {2, 4}.
        factors: Vec<usize>,
    },
    Diffusion {
        iterations: IntRange,
        sigma_step: FloatRange,
    },
    ContentAware {
        sigma_min: FloatRange,
        sigma_max: FloatRange,
    },
    Adaptive {
        sigma_min: FloatRange,
        sigma_max: FloatRange,
        iterations: IntRange,
    },
    Jpeg {
        quality: IntRange,
    },
}

/// Concrete parameter draw of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampledOp {
    GaussianBlur { kernel_size: usize, sigma: f64 },
    GaussianNoise { sigma: f64, seed: u64 },
    ContrastBrightness { contrast: f64, brightness: f64 },
    FrequencyGuided { detail_scale: f64, zero_details: bool },
    Cutblur { mask_fraction: f64, factor: usize, seed: u64 },
    Diffusion { iterations: usize, sigma_step: f64 },
    ContentAware { sigma_min: f64, sigma_max: f64 },
    Adaptive { sigma_min: f64, sigma_max: f64, iterations: usize },
    Jpeg { quality: u8 },
}

impl OperatorConfig {
    pub fn kind(&self) -> OperatorKind {
        match self {
            OperatorConfig::GaussianBlur { .. } => OperatorKind::GaussianBlur,
            OperatorConfig::GaussianNoise { .. } => OperatorKind::GaussianNoise,
            OperatorConfig::ContrastBrightness { .. } => OperatorKind::ContrastBrightness,
            OperatorConfig::FrequencyGuided { .. } => OperatorKind::FrequencyGuided,
            OperatorConfig::Cutblur { .. } => OperatorKind::Cutblur,
            OperatorConfig::Diffusion { .. } => OperatorKind::Diffusion,
            OperatorConfig::ContentAware { .. } => OperatorKind::ContentAware,
            OperatorConfig::Adaptive { .. } => OperatorKind::Adaptive,
            OperatorConfig::Jpeg { .. } => OperatorKind::Jpeg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |r: &FloatRange, what: &str| {
            if r.lo < 0.0 {
                Err(config_err!("{what} must be >= 0, range starts at {}", r.lo))
            } else {
                Ok(())
            }
        };
        match self {
            OperatorConfig::GaussianBlur { kernel_size, sigma } => {
                nonneg(sigma, "blur sigma")?;
                if let Some(k) = kernel_size {
                    if k % 2 == 0 {
                        return Err(config_err!("blur kernel size must be odd, got {k}"));
                    }
                }
            }
            OperatorConfig::GaussianNoise { sigma } => nonneg(sigma, "noise sigma")?,
            OperatorConfig::ContrastBrightness { contrast, .. } => {
                if contrast.lo <= 0.0 {
                    return Err(config_err!("contrast must be > 0"));
                }
            }
            OperatorConfig::FrequencyGuided { zero_probability, .. } => {
                if !(0.0..=1.0).contains(zero_probability) {
                    return Err(config_err!("zero probability must be in [0, 1]"));
                }
            }
            OperatorConfig::Cutblur { mask_fraction, factors } => {
                if mask_fraction.lo <= 0.0 || mask_fraction.hi > 1.0 {
                    return Err(config_err!("mask fraction must lie in (0, 1]"));
                }
                if factors.is_empty() || factors.iter().any(|f| *f != 2 && *f != 4) {
                    return Err(config_err!("cutblur factors must be a non-empty subset of {{2, 4}}"));
                }
            }
            OperatorConfig::Diffusion { sigma_step, .. } => nonneg(sigma_step, "diffusion sigma")?,
            OperatorConfig::ContentAware { sigma_min, sigma_max } => {
                nonneg(sigma_min, "sigma_min")?;
                nonneg(sigma_max, "sigma_max")?;
            }
            OperatorConfig::Adaptive {
                sigma_min,
                sigma_max,
                iterations,
            } => {
                nonneg(sigma_min, "sigma_min")?;
                nonneg(sigma_max, "sigma_max")?;
                if iterations.lo == 0 {
                    return Err(config_err!("adaptive iterations must be >= 1"));
                }
            }
            OperatorConfig::Jpeg { quality } => {
                if quality.lo < 1 || quality.hi > 100 {
                    return Err(config_err!("jpeg quality must lie in 1..=100"));
                }
            }
        }
        Ok(())
    }

    /// Draws concrete parameters; every value lies inside its declared range.
    pub fn sample(&self, rng: &mut impl Rng) -> SampledOp {
        match self {
            OperatorConfig::GaussianBlur { kernel_size, sigma } => {
                let s = sigma.sample(rng);
                SampledOp::GaussianBlur {
                    kernel_size: kernel_size.unwrap_or_else(|| filters::kernel_size_for_sigma(s)),
                    sigma: s,
                }
            }
            OperatorConfig::GaussianNoise { sigma } => SampledOp::GaussianNoise {
                sigma: sigma.sample(rng),
                seed: rng.gen(),
            },
            OperatorConfig::ContrastBrightness { contrast, brightness } => SampledOp::ContrastBrightness {
                contrast: contrast.sample(rng),
                brightness: brightness.sample(rng),
            },
            OperatorConfig::FrequencyGuided {
                detail_scale,
                zero_probability,
            } => {
                let detail_scale = detail_scale.sample(rng);
                SampledOp::FrequencyGuided {
                    detail_scale,
                    zero_details: rng.gen::<f64>() < *zero_probability,
                }
            }
            OperatorConfig::Cutblur { mask_fraction, factors } => SampledOp::Cutblur {
                mask_fraction: mask_fraction.sample(rng),
                factor: factors[rng.gen_range(0..factors.len())],
                seed: rng.gen(),
            },
            OperatorConfig::Diffusion { iterations, sigma_step } => SampledOp::Diffusion {
                iterations: iterations.sample(rng) as usize,
                sigma_step: sigma_step.sample(rng),
            },
            OperatorConfig::ContentAware { sigma_min, sigma_max } => {
                let (a, b) = (sigma_min.sample(rng), sigma_max.sample(rng));
                SampledOp::ContentAware {
                    sigma_min: a.min(b),
                    sigma_max: a.max(b),
                }
            }
            OperatorConfig::Adaptive {
                sigma_min,
                sigma_max,
                iterations,
            } => {
                let (a, b) = (sigma_min.sample(rng), sigma_max.sample(rng));
                SampledOp::Adaptive {
                    sigma_min: a.min(b),
                    sigma_max: a.max(b),
                    iterations: iterations.sample(rng) as usize,
                }
            }
            OperatorConfig::Jpeg { quality } => SampledOp::Jpeg {
                quality: quality.sample(rng) as u8,
            },
        }
    }

    fn params_text(&self) -> Vec<(&'static str, String)> {
        match self {
            OperatorConfig::GaussianBlur { kernel_size, sigma } => vec![
                ("sigma", sigma.to_string()),
                ("kernel", kernel_size.map_or("auto".to_string(), |k| k.to_string())),
            ],
            OperatorConfig::GaussianNoise { sigma } => vec![("sigma", sigma.to_string())],
            OperatorConfig::ContrastBrightness { contrast, brightness } => vec![
                ("contrast", contrast.to_string()),
                ("brightness", brightness.to_string()),
            ],
            OperatorConfig::FrequencyGuided {
                detail_scale,
                zero_probability,
            } => vec![
                ("detail_scale", detail_scale.to_string()),
                ("zero_p", zero_probability.to_string()),
            ],
            OperatorConfig::Cutblur { mask_fraction, factors } => vec![
                ("fraction", mask_fraction.to_string()),
                (
                    "factors",
                    factors.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","),
                ),
            ],
            OperatorConfig::Diffusion { iterations, sigma_step } => vec![
                ("iterations", iterations.to_string()),
                ("sigma_step", sigma_step.to_string()),
            ],
            OperatorConfig::ContentAware { sigma_min, sigma_max } => vec![
                ("sigma_min", sigma_min.to_string()),
                ("sigma_max", sigma_max.to_string()),
            ],
            OperatorConfig::Adaptive {
                sigma_min,
                sigma_max,
                iterations,
            } => vec![
                ("sigma_min", sigma_min.to_string()),
                ("sigma_max", sigma_max.to_string()),
                ("iterations", iterations.to_string()),
            ],
            OperatorConfig::Jpeg { quality } => vec![("quality", quality.to_string())],
        }
    }

    fn from_params(kind: OperatorKind, params: &[(String, String)]) -> Result<Self> {
        let mut used = vec![false; params.len()];
        let mut take = |key: &str| -> Option<String> {
            let i = params.iter().position(|(k, _)| k == key)?;
            used[i] = true;
            Some(params[i].1.clone())
        };
        let name = kind.name();
        let need = |v: Option<String>, key: &str| v.ok_or_else(|| config_err!("{name}: missing `{key}`"));
        let cfg = match kind {
            OperatorKind::GaussianBlur => {
                let sigma = FloatRange::parse(&need(take("sigma"), "sigma")?)?;
                let kernel_size = match take("kernel").as_deref() {
                    None | Some("auto") => None,
                    Some(k) => Some(k.parse().map_err(|_| config_err!("{name}: bad kernel {k:?}"))?),
                };
                OperatorConfig::GaussianBlur { kernel_size, sigma }
            }
            OperatorKind::GaussianNoise => OperatorConfig::GaussianNoise {
                sigma: FloatRange::parse(&need(take("sigma"), "sigma")?)?,
            },
            OperatorKind::ContrastBrightness => OperatorConfig::ContrastBrightness {
                contrast: FloatRange::parse(&take("contrast").unwrap_or_else(|| "1".into()))?,
                brightness: FloatRange::parse(&take("brightness").unwrap_or_else(|| "0".into()))?,
            },
            OperatorKind::FrequencyGuided => OperatorConfig::FrequencyGuided {
                detail_scale: FloatRange::parse(&need(take("detail_scale"), "detail_scale")?)?,
                zero_probability: take("zero_p")
                    .unwrap_or_else(|| "0".into())
                    .parse()
                    .map_err(|_| config_err!("{name}: bad zero_p"))?,
            },
            OperatorKind::Cutblur => OperatorConfig::Cutblur {
                mask_fraction: FloatRange::parse(&need(take("fraction"), "fraction")?)?,
                factors: take("factors")
                    .unwrap_or_else(|| "2".into())
                    .split(',')
                    .map(|f| f.trim().parse().map_err(|_| config_err!("{name}: bad factor {f:?}")))
                    .collect::<Result<_>>()?,
            },
            OperatorKind::Diffusion => OperatorConfig::Diffusion {
                iterations: IntRange::parse(&need(take("iterations"), "iterations")?)?,
                sigma_step: FloatRange::parse(&need(take("sigma_step"), "sigma_step")?)?,
            },
            OperatorKind::ContentAware => OperatorConfig::ContentAware {
                sigma_min: FloatRange::parse(&need(take("sigma_min"), "sigma_min")?)?,
                sigma_max: FloatRange::parse(&need(take("sigma_max"), "sigma_max")?)?,
            },
            OperatorKind::Adaptive => OperatorConfig::Adaptive {
                sigma_min: FloatRange::parse(&need(take("sigma_min"), "sigma_min")?)?,
                sigma_max: FloatRange::parse(&need(take("sigma_max"), "sigma_max")?)?,
                iterations: IntRange::parse(&need(take("iterations"), "iterations")?)?,
            },
            OperatorKind::Jpeg => OperatorConfig::Jpeg {
                quality: IntRange::parse(&need(take("quality"), "quality")?)?,
            },
        };
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(config_err!("{name}: unknown parameter `{}`", params[i].0));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SampledOp {
    pub fn apply(&self, seq: &FrameSequence) -> Result<FrameSequence> {
        match *self {
            SampledOp::GaussianBlur { kernel_size, sigma } => gaussian_blur(seq, kernel_size, sigma),
            SampledOp::GaussianNoise { sigma, seed } => gaussian_noise(seq, sigma, seed),
            SampledOp::ContrastBrightness { contrast, brightness } => {
                contrast_brightness(seq, contrast, brightness)
            }
            SampledOp::FrequencyGuided {
                detail_scale,
                zero_details,
            } => frequency_guided(seq, detail_scale, zero_details),
            SampledOp::Cutblur {
                mask_fraction,
                factor,
                seed,
            } => cutblur(seq, mask_fraction, factor, seed),
            SampledOp::Diffusion { iterations, sigma_step } => diffusion(seq, iterations, sigma_step),
            SampledOp::ContentAware { sigma_min, sigma_max } => content_aware(seq, sigma_min, sigma_max),
            SampledOp::Adaptive {
                sigma_min,
                sigma_max,
                iterations,
            } => adaptive(seq, sigma_min, sigma_max, iterations),
            SampledOp::Jpeg { quality } => jpeg_degrade(seq, quality),
        }
    }
}

/// One operator with the probability that it fires.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub probability: f64,
    pub op: OperatorConfig,
}

impl PlanStep {
    pub fn always(op: OperatorConfig) -> Self {
        PlanStep { probability: 1.0, op }
    }

    /// Text form: `<kind> p=<prob> key=value ...`
    pub fn to_text(&self) -> String {
        let mut s = format!("{} p={}", self.op.kind().name(), self.probability);
        for (k, v) in self.op.params_text() {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let kind_name = tokens.next().ok_or_else(|| config_err!("empty degradation step"))?;
        let kind = OperatorKind::from_name(kind_name)
            .ok_or_else(|| config_err!("unknown degradation operator `{kind_name}`"))?;
        let mut probability = 1.0;
        let mut params = Vec::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| config_err!("{kind_name}: expected key=value, got `{tok}`"))?;
            if k == "p" {
                probability = v.parse().map_err(|_| config_err!("{kind_name}: bad probability {v:?}"))?;
            } else if params.iter().any(|(pk, _): &(String, String)| pk == k) {
                return Err(config_err!("{kind_name}: duplicate parameter `{k}`"));
            } else {
                params.push((k.to_string(), v.to_string()));
            }
        }
        if !(0.0..=1.0).contains(&probability) {
            return Err(config_err!("{kind_name}: probability must be in [0, 1]"));
        }
        Ok(PlanStep {
            probability,
            op: OperatorConfig::from_params(kind, &params)?,
        })
    }
}

/// Ordered, seeded chain of degradation operators.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DegradationPlan {
    pub steps: Vec<PlanStep>,
    pub seed: u64,
}

/// What one step did during [`apply_plan`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub fired: bool,
    pub params: SampledOp,
}

impl DegradationPlan {
    pub fn new(steps: Vec<PlanStep>, seed: u64) -> Result<Self> {
        let plan = DegradationPlan { steps, seed };
        plan.validate()?;
        Ok(plan)
    }

    pub fn empty(seed: u64) -> Self {
        DegradationPlan { steps: vec![], seed }
    }

    /// blur(p=0.5, σ∈[0.2,2]) → noise(p=0.5, σ∈[0,0.05]) →
    /// contrast/brightness(p=0.3, c∈[0.8,1.2], b∈[−0.1,0.1]) → jpeg(p=0.3, q∈[50,95]).
    pub fn default_plan(seed: u64) -> Self {
        DegradationPlan {
            steps: vec![
                PlanStep {
                    probability: 0.5,
                    op: OperatorConfig::GaussianBlur {
                        kernel_size: None,
                        sigma: FloatRange { lo: 0.2, hi: 2.0 },
                    },
                },
                PlanStep {
                    probability: 0.5,
                    op: OperatorConfig::GaussianNoise {
                        sigma: FloatRange { lo: 0.0, hi: 0.05 },
                    },
                },
                PlanStep {
                    probability: 0.3,
                    op: OperatorConfig::ContrastBrightness {
                        contrast: FloatRange { lo: 0.8, hi: 1.2 },
                        brightness: FloatRange { lo: -0.1, hi: 0.1 },
                    },
                },
                PlanStep {
                    probability: 0.3,
                    op: OperatorConfig::Jpeg {
                        quality: IntRange { lo: 50, hi: 95 },
                    },
                },
            ],
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DegradationPlan {
            steps: self.steps.clone(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.probability) {
                return Err(config_err!("step {i}: probability must be in [0, 1]"));
            }
            s.op.validate().map_err(|e| config_err!("step {i}: {e}"))?;
        }
        Ok(())
    }

    pub fn step_lines(&self) -> Vec<String> {
        self.steps.iter().map(PlanStep::to_text).collect()
    }

    pub fn from_step_lines<S: AsRef<str>>(lines: &[S], seed: u64) -> Result<Self> {
        let steps = lines
            .iter()
            .map(|l| PlanStep::parse(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(steps, seed)
    }
}

/// Runs every step in order. For each step the firing decision and the
/// parameter draw both come from the plan's seeded stream, so the same
/// `(input, plan)` always produces the same output and record.
pub fn apply_plan(seq: &FrameSequence, plan: &DegradationPlan) -> Result<(FrameSequence, Vec<StepRecord>)> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut cur = seq.clone();
    let mut records = Vec::with_capacity(plan.steps.len());
    for (index, step) in plan.steps.iter().enumerate() {
        let fired = rng.gen::<f64>() < step.probability;
        let params = step.op.sample(&mut rng);
        if fired {
            cur = params.apply(&cur)?;
        }
        records.push(StepRecord { index, fired, params });
    }
    Ok((cur, records))
}
