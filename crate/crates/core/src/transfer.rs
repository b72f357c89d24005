//! Pseudo-target sample generation.
//!
//! A [`DomainTransfer`] maps source-domain features into the target domain's
//! style while the sample keeps its label. [`StyleTransform`] is the reference
//! implementation: a per-dimension affine map fitted by moment matching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::column_moments;
use crate::synthgen::{Dataset, Domain, Sample};

/// A label-preserving feature map between domains.
pub trait DomainTransfer {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleTransform {
    #[serde(rename = "scale")]
    pub forward_scale: Vec<f64>,
    #[serde(rename = "offset")]
    pub forward_offset: Vec<f64>,
}

impl StyleTransform {
    pub fn new(scale: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if scale.len() != offset.len() {
            return Err(Error::DimensionMismatch {
                expected: scale.len(),
                found: offset.len(),
            });
        }
        if let Some(dim) = scale.iter().position(|s| !s.is_finite() || *s == 0.0) {
            return Err(Error::DegenerateDimension { dim });
        }
        if offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::Invalid("transform offsets must be finite".into()));
        }
        Ok(Self {
            forward_scale: scale,
            forward_offset: offset,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            forward_scale: vec![1.0; dim],
            forward_offset: vec![0.0; dim],
        }
    }

    /// The reverse map: `x = (y - offset) / scale`.
    pub fn invert(&self) -> Self {
        let scale = self.forward_scale.iter().map(|s| 1.0 / s).collect();
        let offset = self
            .forward_offset
            .iter()
            .zip(&self.forward_scale)
            .map(|(o, s)| -o / s)
            .collect();
        Self {
            forward_scale: scale,
            forward_offset: offset,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: StyleTransform = serde_json::from_str(s)?;
        Self::new(raw.forward_scale, raw.forward_offset)
    }
}

impl DomainTransfer for StyleTransform {
    fn dim(&self) -> usize {
        self.forward_scale.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.forward_scale.iter().zip(&self.forward_offset))
            .map(|(x, (s, o))| s * x + o)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoTargetSet {
    pub samples: Vec<Sample>,
}

impl PseudoTargetSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Fits `scale = std_t / std_s`, `offset = mean_t − scale·mean_s` per dimension.
///
/// Only target features are read; target identities and labels are ignored.
pub fn fit_transfer(source: &Dataset, target: &Dataset) -> Result<StyleTransform> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("transfer fitting needs nonempty source and target"));
    }
    let dim = source.feature_dim();
    if target.feature_dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: target.feature_dim(),
        });
    }
    let (mean_s, std_s) = column_moments(source.rows(), dim)?;
    let (mean_t, std_t) = column_moments(target.rows(), dim)?;
    if let Some(dim) = std_s.iter().position(|s| *s == 0.0) {
        return Err(Error::DegenerateDimension { dim });
    }
    let scale: Vec<f64> = std_t.iter().zip(&std_s).map(|(t, s)| t / s).collect();
    let offset = mean_t
        .iter()
        .zip(scale.iter().zip(&mean_s))
        .map(|(mt, (k, ms))| mt - k * ms)
        .collect();
    StyleTransform::new(scale, offset)
}

pub fn transfer_dataset(source: &Dataset, t: &impl DomainTransfer) -> Result<PseudoTargetSet> {
    let samples = source
        .samples
        .iter()
        .map(|s| {
            if s.features.len() != t.dim() {
                return Err(Error::DimensionMismatch {
                    expected: t.dim(),
                    found: s.features.len(),
                });
            }
            Ok(Sample {
                features: t.apply(&s.features),
                domain: Domain::PseudoTarget,
                ..s.clone()
            })
        })
        .collect::<Result<_>>()?;
    Ok(PseudoTargetSet { samples })
}

/// Identity content loss `E_y‖F(y) − y‖₁ + E_x‖G(x) − x‖₁`, with `g` the
/// source→target map applied to `x_batch` and `f` the reverse map applied to
/// `y_batch`.
pub fn identity_content_loss(
    g: &dyn DomainTransfer,
    f: &dyn DomainTransfer,
    x_batch: &[Vec<f64>],
    y_batch: &[Vec<f64>],
) -> Result<f64> {
    if x_batch.is_empty() || y_batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    fn mean_residual(map: &dyn DomainTransfer, batch: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for x in batch {
            if x.len() != map.dim() {
                return Err(Error::DimensionMismatch {
                    expected: map.dim(),
                    found: x.len(),
                });
            }
            total += map
                .apply(x)
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }
    Ok(mean_residual(f, y_batch)? + mean_residual(g, x_batch)?)
}
