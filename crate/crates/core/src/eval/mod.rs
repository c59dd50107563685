//! Full-frame evaluation of upscalers over clip sets: PSNR, SSIM and an
//! LPIPS-style feature distance, per clip and averaged per
//! `(model, method, scale)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::gen::{upscale_sequence, Upscaler};
use crate::loss::metrics::{psnr_seq, ssim_seq};
use crate::loss::FeatureExtractor;
use crate::nn::scalar;
use crate::resample::Interpolation;
use crate::seqcore::{downsample, FrameSequence};

pub const CSV_HEADER: [&str; 7] = ["clip_id", "method", "scale", "psnr", "ssim", "lpips", "model"];
const NOT_AVAILABLE: &str = "n/a";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub clip_id: String,
    pub method: Interpolation,
    pub scale: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub model: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub method: Interpolation,
    pub scale: usize,
    pub clips: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub aggregates: Vec<Aggregate>,
}

/// Feature distance: channel-normalised features, squared difference summed
/// over channels and averaged over positions and frames.
pub fn feature_distance(ex: &dyn FeatureExtractor, a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    let dev = Device::Cpu;
    let norm = |s: &FrameSequence| -> Result<Tensor> {
        let f = ex.features(&s.to_tensor(&dev, DType::F32)?)?;
        let n = f.sqr()?.sum_keepdim(1)?.sqrt()?.affine(1.0, 1e-10)?;
        Ok(f.broadcast_div(&n)?)
    };
    let d = (norm(a)? - norm(b)?)?.sqr()?.sum(1)?;
    scalar(&d.mean(D::Minus1)?.mean(D::Minus1)?.mean_all()?)
}

/// Downsamples `hr` by `scale` with `method`, upscales it back full-frame
/// (twice for ×4) and scores the result against `hr`.
pub fn evaluate_clip(
    model: &dyn Upscaler,
    clip_id: &str,
    hr: &FrameSequence,
    scale: usize,
    method: Interpolation,
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<MetricsRow> {
    let lr = downsample(hr, scale, method)?;
    let pred = upscale_sequence(model, &lr, scale)?;
    let lpips = extractor.map(|ex| feature_distance(ex, hr, &pred)).transpose()?;
    Ok(MetricsRow {
        clip_id: clip_id.to_string(),
        method,
        scale,
        psnr: psnr_seq(hr, &pred, 1.0)?,
        ssim: ssim_seq(hr, &pred)?,
        lpips,
        model: String::new(),
    })
}

/// Every model × clip × scale × method combination.
pub fn compare_models(
    models: &[(&str, &dyn Upscaler)],
    clips: &[(String, FrameSequence)],
    scales: &[usize],
    methods: &[Interpolation],
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<MetricsReport> {
    if models.is_empty() {
        return Err(config_err!("evaluation needs at least one model"));
    }
    if clips.is_empty() {
        return Err(config_err!("evaluation clip set is empty"));
    }
    let mut rows = Vec::new();
    for (name, model) in models {
        for (id, hr) in clips {
            for &scale in scales {
                for &method in methods {
                    let mut row = evaluate_clip(*model, id, hr, scale, method, extractor)?;
                    row.model = name.to_string();
                    rows.push(row);
                }
            }
        }
    }
    Ok(MetricsReport::from_rows(rows))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<MetricsRow>) -> Self {
        let mut groups: BTreeMap<(String, &'static str, usize), Vec<&MetricsRow>> = BTreeMap::new();
        for r in &rows {
            groups
                .entry((r.model.clone(), r.method.as_str(), r.scale))
                .or_default()
                .push(r);
        }
        let aggregates = groups
            .into_values()
            .map(|g| Aggregate {
                model: g[0].model.clone(),
                method: g[0].method,
                scale: g[0].scale,
                clips: g.len(),
                psnr: mean(g.iter().map(|r| r.psnr)),
                ssim: mean(g.iter().map(|r| r.ssim)),
                lpips: g
                    .iter()
                    .map(|r| r.lpips)
                    .collect::<Option<Vec<_>>>()
                    .map(|v| mean(v.into_iter())),
            })
            .collect();
        MetricsReport { rows, aggregates }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Codec(format!("csv: {e}"));
        w.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            let lpips = r.lpips.map_or(NOT_AVAILABLE.to_string(), |v| v.to_string());
            w.write_record([
                r.clip_id.as_str(),
                r.method.as_str(),
                &r.scale.to_string(),
                &r.psnr.to_string(),
                &r.ssim.to_string(),
                &lpips,
                &r.model,
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Codec(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Codec(e.to_string()))
    }

    /// Parses rows written by [`MetricsReport::to_csv`] and recomputes the aggregates.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let bad = |what: String| Error::Codec(format!("metrics csv: {what}"));
        let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("{}: {e}", &rec[i])));
            rows.push(MetricsRow {
                clip_id: rec[0].to_string(),
                method: Interpolation::parse(&rec[1]).ok_or_else(|| bad(format!("method `{}`", &rec[1])))?,
                scale: rec[2].parse().map_err(|e| bad(format!("scale: {e}")))?,
                psnr: num(3)?,
                ssim: num(4)?,
                lpips: if &rec[5] == NOT_AVAILABLE { None } else { Some(num(5)?) },
                model: rec[6].to_string(),
            });
        }
        Ok(Self::from_rows(rows))
    }

    pub fn aggregates_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::json!({ "aggregates": self.aggregates }))?)
    }

    /// Writes `metrics.csv` and `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("metrics.csv");
        std::fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join("metrics.json");
        std::fs::write(&json_path, self.aggregates_json()?).map_err(|e| Error::io(&json_path, e))?;
        Ok(())
    }

    /// Plain-text table of the aggregates.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:<9} {:>5} {:>6} {:>9} {:>8} {:>8}", "model", "method", "scale", "clips", "psnr", "ssim", "lpips");
        for a in &self.aggregates {
            let lpips = a.lpips.map_or(NOT_AVAILABLE.to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                "{:<20} {:<9} {:>5} {:>6} {:>9.3} {:>8.4} {:>8}",
                a.model,
                a.method.as_str(),
                a.scale,
                a.clips,
                a.psnr,
                a.ssim,
                lpips
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{InterpolationUpscaler, LookupOracle};
    use crate::loss::{ConvFeatureExtractor, ExtractorSpec, PSNR_CAP_DB};

    fn clip(seed: f32) -> FrameSequence {
        FrameSequence::from_fn(2, 32, 32, |f, c, y, x| {
            0.5 + 0.4 * ((x as f32 * 0.4 + seed).sin() * (y as f32 * 0.3 + c as f32 + f as f32).cos())
        })
        .unwrap()
    }

    #[test]
    fn oracle_scores_at_the_cap() {
        let hr = clip(0.0);
        for method in [Interpolation::Bicubic, Interpolation::Bilinear] {
            let oracle = LookupOracle::new(&hr, method, &[2, 4]).unwrap();
            for scale in [2, 4] {
                let row = evaluate_clip(&oracle, "a", &hr, scale, method, None).unwrap();
                assert_eq!(row.psnr, PSNR_CAP_DB);
                assert!((row.ssim - 1.0).abs() < 1e-6);
                assert_eq!(row.lpips, None);
            }
        }
    }

    #[test]
    fn bicubic_baseline_is_finite_and_repeatable() {
        let hr = clip(1.0);
        let bic = InterpolationUpscaler(Interpolation::Bicubic);
        let a = evaluate_clip(&bic, "a", &hr, 2, Interpolation::Bicubic, None).unwrap();
        let b = evaluate_clip(&bic, "a", &hr, 2, Interpolation::Bicubic, None).unwrap();
        assert!(a.psnr.is_finite() && a.psnr > 0.0 && a.psnr < PSNR_CAP_DB);
        assert_eq!(a, b);
    }

    #[test]
    fn cross_product_and_aggregates() {
        let bic = InterpolationUpscaler(Interpolation::Bicubic);
        let bil = InterpolationUpscaler(Interpolation::Bilinear);
        let models: Vec<(&str, &dyn Upscaler)> = vec![("bicubic", &bic), ("bilinear", &bil)];
        let clips = vec![("c0".to_string(), clip(2.0))];
        let methods = [Interpolation::Bicubic, Interpolation::Bilinear];
        let rep = compare_models(&models, &clips, &[2], &methods, None).unwrap();
        assert_eq!(rep.rows.len(), 4);
        assert_eq!(rep.aggregates.len(), 4);
        for a in &rep.aggregates {
            let row = rep
                .rows
                .iter()
                .find(|r| r.model == a.model && r.method == a.method)
                .unwrap();
            assert_eq!((a.psnr, a.ssim), (row.psnr, row.ssim));
        }
        assert!(compare_models(&models, &[], &[2], &methods, None).is_err());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let bic = InterpolationUpscaler(Interpolation::Bicubic);
        let ex = ConvFeatureExtractor::seeded(ExtractorSpec::tiny(), 1, &Device::Cpu).unwrap();
        let clips = vec![("c,0".to_string(), clip(3.0)), ("c1".to_string(), clip(4.0))];
        let models: Vec<(&str, &dyn Upscaler)> = vec![("bicubic", &bic)];
        let with = compare_models(&models, &clips, &[2, 4], &[Interpolation::Bicubic], Some(&ex)).unwrap();
        assert!(with.rows.iter().all(|r| r.lpips.unwrap() >= 0.0));
        assert_eq!(MetricsReport::from_csv(&with.to_csv().unwrap()).unwrap(), with);
        let without = compare_models(&models, &clips, &[2], &[Interpolation::Bilinear], None).unwrap();
        let text = without.to_csv().unwrap();
        assert!(text.starts_with("clip_id,method,scale,psnr,ssim,lpips,model\n"));
        assert!(text.contains(",n/a,"));
        assert_eq!(MetricsReport::from_csv(&text).unwrap(), without);
        let agg = without.aggregates_json().unwrap();
        assert!(agg.contains("\"aggregates\""));
    }

    #[test]
    fn identical_sequences_have_zero_feature_distance() {
        let ex = ConvFeatureExtractor::seeded(ExtractorSpec::tiny(), 2, &Device::Cpu).unwrap();
        let a = clip(5.0);
        assert_eq!(feature_distance(&ex, &a, &a).unwrap(), 0.0);
        assert!(feature_distance(&ex, &a, &clip(6.0)).unwrap() > 0.0);
    }
}
