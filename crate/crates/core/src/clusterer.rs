//! Density clustering of target embeddings and reliable-sample selection.
//!
//! Embeddings are projected onto their leading principal directions, a DBSCAN
//! radius is derived from k-th nearest-neighbour distances, and only samples
//! close to their own cluster centroid are handed back for training.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::encoder::FeatureMatrix;
use crate::error::{Error, Result};
use crate::stats::euclidean;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RadiusStatistic {
    Mean,
    Quantile(f64),
    /// Elbow of the sorted k-distance curve: the point farthest from the chord
    /// joining its endpoints.
    Knee,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaMode {
    Absolute(f64),
    WithinClusterQuantile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub reduce_dim: usize,
    pub knn_k: usize,
    pub radius_statistic: RadiusStatistic,
    pub min_pts: usize,
    pub gamma: GammaMode,
    /// Per-iteration override of `gamma`; iteration `i` (1-based) uses entry
    /// `i - 1`, and the last entry repeats once the list runs out.
    pub gamma_schedule: Vec<GammaMode>,
    /// Times the radius is doubled when every sample comes back as noise.
    pub radius_retries: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            reduce_dim: 8,
            knn_k: 2,
            radius_statistic: RadiusStatistic::Quantile(0.3),
            min_pts: 2,
            gamma: GammaMode::WithinClusterQuantile(0.8),
            gamma_schedule: Vec::new(),
            radius_retries: 3,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reduce_dim == 0 {
            return Err(Error::config("cluster.reduce_dim", "must be at least 1"));
        }
        if self.knn_k == 0 {
            return Err(Error::config("cluster.knn_k", "must be at least 1"));
        }
        if self.min_pts == 0 {
            return Err(Error::config("cluster.min_pts", "must be at least 1"));
        }
        if let RadiusStatistic::Quantile(q) = self.radius_statistic {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::config("cluster.radius_statistic", "quantile must lie in [0, 1]"));
            }
        }
        for mode in std::iter::once(&self.gamma).chain(&self.gamma_schedule) {
            match *mode {
                GammaMode::Absolute(g) if g.is_nan() || g < 0.0 => {
                    return Err(Error::config("cluster.gamma", "must be non-negative"));
                }
                GammaMode::WithinClusterQuantile(q) if !(0.0..=1.0).contains(&q) => {
                    return Err(Error::config("cluster.gamma", "quantile must lie in [0, 1]"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn gamma_for_iteration(&self, iteration: usize) -> GammaMode {
        match self.gamma_schedule.len() {
            0 => self.gamma,
            n => self.gamma_schedule[iteration.saturating_sub(1).min(n - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Cluster per sample, `None` for noise.
    pub assignment: Vec<Option<usize>>,
    pub k: usize,
    pub members: Vec<Vec<usize>>,
}

impl ClusterResult {
    pub fn noise_count(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub centroids: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selected {
    pub index: usize,
    pub cluster: usize,
    pub distance: f64,
}

/// Projects centered rows onto the top-`d` principal directions.
///
/// Directions are ordered by decreasing variance and signed so that each
/// direction's largest-magnitude component is positive.
pub fn reduce_dim(features: &FeatureMatrix, d: usize) -> Result<FeatureMatrix> {
    let n = features.len();
    let dim = features.dim();
    if n < 2 {
        return Err(Error::EmptyInput("dimension reduction needs at least two rows"));
    }
    if d == 0 || d > dim {
        return Err(Error::config(
            "cluster.reduce_dim",
            format!("must lie in [1, {dim}], got {d}"),
        ));
    }
    let x = DMatrix::from_fn(n, dim, |i, j| features.rows[i][j]);
    let mean = x.row_mean();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut basis = DMatrix::zeros(dim, d);
    for (out, &src) in order.iter().take(d).enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        let mut pivot = 0;
        for i in 1..dim {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        basis.set_column(out, &v);
    }
    let projected = centered * basis;
    let rows = projected
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    Ok(FeatureMatrix { rows })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn knee(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n < 3 {
        return sorted[n - 1];
    }
    let (x0, y0) = (0.0, sorted[0]);
    let (x1, y1) = ((n - 1) as f64, sorted[n - 1]);
    let (dx, dy) = (x1 - x0, y1 - y0);
    let norm = (dx * dx + dy * dy).sqrt();
    let mut best = (0, f64::NEG_INFINITY);
    for (i, y) in sorted.iter().enumerate() {
        let dist = (dy * i as f64 - dx * y + x1 * y0 - y1 * x0).abs() / norm;
        if dist > best.1 {
            best = (i, dist);
        }
    }
    sorted[best.0]
}

/// Distance from each row to its `knn_k`-th nearest other row.
pub fn knn_distances(features: &FeatureMatrix, knn_k: usize) -> Result<Vec<f64>> {
    let n = features.len();
    if knn_k == 0 {
        return Err(Error::config("cluster.knn_k", "must be at least 1"));
    }
    if n <= knn_k {
        return Err(Error::Invalid(format!(
            "knn radius needs more than {knn_k} points, got {n}"
        )));
    }
    Ok((0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| euclidean(&features.rows[i], &features.rows[j]))
                .collect();
            d.select_nth_unstable_by(knn_k - 1, f64::total_cmp);
            d[knn_k - 1]
        })
        .collect())
}

pub fn knn_radius(features: &FeatureMatrix, knn_k: usize, statistic: RadiusStatistic) -> Result<f64> {
    let mut kd = knn_distances(features, knn_k)?;
    kd.sort_by(f64::total_cmp);
    Ok(match statistic {
        RadiusStatistic::Mean => kd.iter().sum::<f64>() / kd.len() as f64,
        RadiusStatistic::Quantile(q) => quantile(&kd, q),
        RadiusStatistic::Knee => knee(&kd),
    })
}

/// DBSCAN with inclusive radius and self-counting neighbourhoods.
///
/// Border points join the cluster of their nearest core neighbour (lowest index
/// on ties), which keeps the result independent of row order. Clusters are
/// numbered by their smallest member index.
pub fn dbscan(features: &FeatureMatrix, rad: f64, min_pts: usize) -> ClusterResult {
    let n = features.len();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| euclidean(&features.rows[i], &features.rows[j]) <= rad)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();

    // Connected components over core points.
    let mut component = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || component[start] != usize::MAX {
            continue;
        }
        component[start] = next;
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            for &q in &neighbours[p] {
                if core[q] && component[q] == usize::MAX {
                    component[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }

    let mut raw: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        if core[i] {
            raw[i] = Some(component[i]);
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &j in &neighbours[i] {
            if !core[j] {
                continue;
            }
            let d = euclidean(&features.rows[i], &features.rows[j]);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        raw[i] = best.map(|(_, j)| component[j]);
    }
    canonicalize(&raw)
}

/// Renumbers clusters in order of their smallest member index.
pub fn canonicalize(raw: &[Option<usize>]) -> ClusterResult {
    let mut remap: Vec<Option<usize>> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut assignment = vec![None; raw.len()];
    for (i, label) in raw.iter().enumerate() {
        let Some(label) = *label else { continue };
        if remap.len() <= label {
            remap.resize(label + 1, None);
        }
        let id = *remap[label].get_or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        assignment[i] = Some(id);
        members[id].push(i);
    }
    ClusterResult {
        assignment,
        k: members.len(),
        members,
    }
}

/// Runs DBSCAN, doubling the radius while every sample is noise.
/// Returns the clustering and the radius that produced it.
pub fn cluster_with_retry(
    features: &FeatureMatrix,
    rad: f64,
    min_pts: usize,
    retries: usize,
) -> Result<(ClusterResult, f64)> {
    let mut rad = rad;
    for attempt in 0..=retries {
        let result = dbscan(features, rad, min_pts);
        if result.k > 0 {
            return Ok((result, rad));
        }
        if attempt < retries {
            rad *= 2.0;
        }
    }
    Err(Error::EmptyClustering)
}

pub fn centroids(result: &ClusterResult, features: &FeatureMatrix) -> Result<CentroidSet> {
    if result.k == 0 {
        return Err(Error::EmptyClustering);
    }
    let dim = features.dim();
    let centroids = result
        .members
        .iter()
        .map(|members| {
            let mut c = vec![0.0; dim];
            for &i in members {
                for (acc, v) in c.iter_mut().zip(&features.rows[i]) {
                    *acc += v;
                }
            }
            c.iter_mut().for_each(|v| *v /= members.len() as f64);
            c
        })
        .collect();
    Ok(CentroidSet { centroids })
}

/// Distance from every non-noise sample to its own centroid.
pub fn centroid_distances(
    features: &FeatureMatrix,
    result: &ClusterResult,
    cents: &CentroidSet,
) -> Vec<Option<f64>> {
    result
        .assignment
        .iter()
        .zip(&features.rows)
        .map(|(a, row)| a.map(|k| euclidean(row, &cents.centroids[k])))
        .collect()
}

/// Keeps non-noise samples strictly closer than `γ` to their own centroid.
pub fn dynamic_sample(
    features: &FeatureMatrix,
    result: &ClusterResult,
    cents: &CentroidSet,
    mode: GammaMode,
) -> Vec<Selected> {
    let distances = centroid_distances(features, result, cents);
    let gamma = match mode {
        GammaMode::Absolute(g) => g,
        GammaMode::WithinClusterQuantile(q) => {
            let mut within: Vec<f64> = distances.iter().flatten().copied().collect();
            if within.is_empty() {
                return Vec::new();
            }
            within.sort_by(f64::total_cmp);
            quantile(&within, q)
        }
    };
    distances
        .iter()
        .zip(&result.assignment)
        .enumerate()
        .filter_map(|(index, (d, a))| match (d, a) {
            (Some(d), Some(cluster)) if *d < gamma => Some(Selected {
                index,
                cluster: *cluster,
                distance: *d,
            }),
            _ => None,
        })
        .collect()
}
