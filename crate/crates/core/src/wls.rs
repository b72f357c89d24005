//! Weighted label smoothing.
//!
//! An unlabeled sample's target distribution is built from its distances to the
//! cluster centroids: distances are ranked in descending order, each cluster gets
//! `α_k = (1 − d_k / max d) · rank_k` (1-based rank, so the farthest cluster gets
//! zero), `w = α / K`, and only the `m` largest weights survive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Rescale kept weights to sum to one.
    Normalize,
    /// Keep the raw `α / K` values.
    #[serde(alias = "RawPaper")]
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WlsConfig {
    /// Number of weights kept per sample; clamped to `K`.
    pub m: usize,
    pub sigma: f64,
    pub normalization: Normalization,
    /// Absolute threshold on raw weights. When set it replaces top-`m` selection.
    pub theta: Option<f64>,
}

impl Default for WlsConfig {
    fn default() -> Self {
        Self {
            m: 2,
            sigma: 0.5,
            normalization: Normalization::Normalize,
            theta: None,
        }
    }
}

impl WlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::config("wls.m", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::config("wls.sigma", "must lie in [0, 1]"));
        }
        if let Some(theta) = self.theta {
            if !(theta.is_finite() && theta >= 0.0) {
                return Err(Error::config("wls.theta", "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Distances from one embedding to each centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceVector(pub Vec<f64>);

impl DistanceVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Nearest cluster, lowest index on ties.
    pub fn nearest(&self) -> usize {
        let mut best = 0;
        for (k, d) in self.0.iter().enumerate() {
            if *d < self.0[best] {
                best = k;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alpha {
    pub values: Vec<f64>,
    /// Every α is zero; weights fall back to one-hot on the nearest cluster.
    pub degenerate: bool,
    pub nearest: usize,
}

/// One sample's row of the weight table.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    /// Nearest cluster by distance.
    pub y: usize,
    pub weights: Vec<f64>,
}

pub fn compute_distances(embedding: &[f64], centroids: &[Vec<f64>]) -> Result<DistanceVector> {
    if centroids.is_empty() {
        return Err(Error::EmptyInput("distance to an empty centroid set"));
    }
    centroids
        .iter()
        .map(|c| {
            if c.len() != embedding.len() {
                return Err(Error::DimensionMismatch {
                    expected: embedding.len(),
                    found: c.len(),
                });
            }
            Ok(crate::stats::euclidean(embedding, c))
        })
        .collect::<Result<_>>()
        .map(DistanceVector)
}

pub fn compute_alpha(d: &DistanceVector) -> Result<Alpha> {
    let k = d.len();
    if k == 0 {
        return Err(Error::EmptyInput("alpha of an empty distance vector"));
    }
    if d.0.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Invalid("distances must be finite and non-negative".into()));
    }
    let nearest = d.nearest();
    let max = d.0.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(Alpha {
            values: vec![0.0; k],
            degenerate: true,
            nearest,
        });
    }
    // Descending by distance; equal distances keep ascending cluster order.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| d.0[b].total_cmp(&d.0[a]));
    let mut rank = vec![0usize; k];
    for (position, &cluster) in order.iter().enumerate() {
        rank[cluster] = position + 1;
    }
    let values: Vec<f64> = d
        .0
        .iter()
        .zip(&rank)
        .map(|(dk, r)| (1.0 - dk / max) * *r as f64)
        .collect();
    let degenerate = values.iter().all(|a| *a == 0.0);
    Ok(Alpha {
        values,
        degenerate,
        nearest,
    })
}

pub fn compute_weights(alpha: &Alpha, cfg: &WlsConfig) -> WeightRow {
    let k = alpha.values.len();
    let y = alpha.nearest;
    if alpha.degenerate {
        let mut weights = vec![0.0; k];
        weights[y] = 1.0;
        return WeightRow { y, weights };
    }
    let raw: Vec<f64> = alpha.values.iter().map(|a| a / k as f64).collect();
    let keep: Vec<bool> = match cfg.theta {
        Some(theta) => raw.iter().map(|w| *w >= theta && *w > 0.0).collect(),
        None => {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));
            let mut keep = vec![false; k];
            for &i in order.iter().take(cfg.m.min(k)) {
                keep[i] = raw[i] > 0.0;
            }
            keep
        }
    };
    let mut weights: Vec<f64> = raw
        .iter()
        .zip(&keep)
        .map(|(w, kept)| if *kept { *w } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        // A threshold above every weight leaves nothing; use the nearest cluster.
        weights = vec![0.0; k];
        weights[y] = 1.0;
    } else if cfg.normalization == Normalization::Normalize {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    WeightRow { y, weights }
}

/// `−Σ_k w_k ln p(k)`. Returns the loss and how many probabilities were floored.
pub fn wls_loss(weights: &[f64], probs: &[f64]) -> Result<(f64, usize)> {
    if weights.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            found: weights.len(),
        });
    }
    let mut clamped = 0;
    let mut loss = 0.0;
    for (w, p) in weights.iter().zip(probs) {
        if *w == 0.0 {
            continue;
        }
        let p = if *p < PROB_FLOOR {
            clamped += 1;
            PROB_FLOOR
        } else {
            *p
        };
        loss -= w * p.ln();
    }
    Ok((loss, clamped))
}

/// `−(1−σ) ln p(y) − σ·λ·Σ_k w_k ln p(k)`.
pub fn combined_loss(
    probs: &[f64],
    y: usize,
    weights: Option<&[f64]>,
    unlabeled: bool,
    sigma: f64,
) -> Result<f64> {
    if y >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: probs.len(),
        });
    }
    let ce = -probs[y].max(PROB_FLOOR).ln();
    let smooth = if unlabeled {
        let w = weights.ok_or(Error::MissingWeights { index: 0 })?;
        wls_loss(w, probs)?.0
    } else {
        0.0
    };
    let lambda = if unlabeled { 1.0 } else { 0.0 };
    Ok((1.0 - sigma) * ce + sigma * lambda * smooth)
}
