//! Feature extractors for the perceptual term and the LPIPS column.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{Checkpoint, CheckpointKind};
use crate::nn::{conv2d_same, max_pool2x, Initializer, ParamStore};

/// Maps a `(B, 3, H, W)` batch to a feature tensor `(B, C_l, H_l, W_l)`.
/// Must be deterministic.
pub trait FeatureExtractor {
    fn features(&self, x: &Tensor) -> Result<Tensor>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorLayer {
    /// 3×3 convolution followed by ReLU.
    Conv(usize),
    /// 2×2 max pooling.
    Pool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub layers: Vec<ExtractorLayer>,
    /// Standardise inputs with the usual ImageNet channel statistics.
    pub imagenet_normalize: bool,
}

impl ExtractorSpec {
    /// Small seeded network for tests and as a training fallback.
    pub fn tiny() -> Self {
        ExtractorSpec {
            layers: vec![ExtractorLayer::Conv(8), ExtractorLayer::Pool, ExtractorLayer::Conv(16)],
            imagenet_normalize: false,
        }
    }

    /// VGG19 feature stack up to and including the ReLU after conv5_4.
    pub fn vgg19_36() -> Self {
        use ExtractorLayer::{Conv, Pool};
        let mut layers = Vec::new();
        for (i, (c, n)) in [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)].into_iter().enumerate() {
            if i > 0 {
                layers.push(Pool);
            }
            layers.extend(std::iter::repeat(Conv(c)).take(n));
        }
        ExtractorSpec {
            layers,
            imagenet_normalize: true,
        }
    }

    /// Parameter prefix per layer, numbered like a sequential feature stack
    /// in which every convolution is followed by its own activation entry.
    fn conv_names(&self) -> Vec<Option<String>> {
        let mut idx = 0;
        self.layers
            .iter()
            .map(|l| match l {
                ExtractorLayer::Conv(_) => {
                    let name = format!("features.{idx}");
                    idx += 2;
                    Some(name)
                }
                ExtractorLayer::Pool => {
                    idx += 1;
                    None
                }
            })
            .collect()
    }
}

pub struct ConvFeatureExtractor {
    spec: ExtractorSpec,
    params: ParamStore,
}

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

impl ConvFeatureExtractor {
    pub fn seeded(spec: ExtractorSpec, seed: u64, device: &Device) -> Result<Self> {
        let mut params = ParamStore::new(device);
        let mut init = Initializer::new(seed);
        let mut cin = 3;
        for (layer, name) in spec.layers.iter().zip(spec.conv_names()) {
            if let (ExtractorLayer::Conv(cout), Some(name)) = (layer, name) {
                let w = init.kaiming(&[*cout, cin, 3, 3], cin * 9, 1.0, device)?;
                params.insert(format!("{name}.weight"), w)?;
                params.insert(format!("{name}.bias"), Tensor::zeros(*cout, DType::F32, device)?)?;
                cin = *cout;
            }
        }
        Ok(ConvFeatureExtractor { spec, params })
    }

    pub fn from_checkpoint(ck: &Checkpoint, device: &Device) -> Result<Self> {
        ck.expect_kind(CheckpointKind::FeatureExtractor)?;
        let spec: ExtractorSpec = serde_json::from_value(ck.spec.clone())?;
        let ex = Self::seeded(spec, 0, device)?;
        ex.params.load(&ck.tensors)?;
        Ok(ex)
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, device)?, device)
            .map_err(|e| Error::Dependency(format!("feature extractor {}: {e}", path.display())))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            CheckpointKind::FeatureExtractor,
            serde_json::to_value(&self.spec)?,
            self.params.tensors(),
        ))
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }
}

impl FeatureExtractor for ConvFeatureExtractor {
    fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        if self.spec.imagenet_normalize {
            let mean = Tensor::from_vec(IMAGENET_MEAN.to_vec(), (1, 3, 1, 1), x.device())?.to_dtype(x.dtype())?;
            let std = Tensor::from_vec(IMAGENET_STD.to_vec(), (1, 3, 1, 1), x.device())?.to_dtype(x.dtype())?;
            h = h.broadcast_sub(&mean)?.broadcast_div(&std)?;
        }
        for (layer, name) in self.spec.layers.iter().zip(self.spec.conv_names()) {
            h = match (layer, name) {
                (ExtractorLayer::Conv(_), Some(name)) => {
                    let w = self.params.get(&format!("{name}.weight"), false)?;
                    let b = self.params.get(&format!("{name}.bias"), false)?;
                    conv2d_same(&h, &w, &b, 1)?.relu()?
                }
                _ => max_pool2x(&h)?,
            };
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg_layout_has_sixteen_convolutions() {
        let spec = ExtractorSpec::vgg19_36();
        let convs = spec.layers.iter().filter(|l| matches!(l, ExtractorLayer::Conv(_))).count();
        assert_eq!(convs, 16);
        let names: Vec<_> = spec.conv_names().into_iter().flatten().collect();
        assert_eq!(names.first().unwrap(), "features.0");
        assert_eq!(names.last().unwrap(), "features.34");
    }

    #[test]
    fn checkpoint_round_trip_gives_same_features() {
        let dev = Device::Cpu;
        let ex = ConvFeatureExtractor::seeded(ExtractorSpec::tiny(), 5, &dev).unwrap();
        let x = Tensor::rand(0f32, 1f32, (1, 3, 8, 8), &dev).unwrap();
        let back = ConvFeatureExtractor::from_checkpoint(&ex.to_checkpoint().unwrap(), &dev).unwrap();
        let a = ex.features(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = back.features(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
        assert_eq!(ex.features(&x).unwrap().dims(), &[1, 16, 4, 4]);
    }
}
