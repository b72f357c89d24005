//! Seeded synthetic two-domain re-identification benchmarks.
//!
//! Every identity is a Gaussian blob around a latent center. A sample is rendered
//! into feature space by its domain's style map: `scale ⊙ (mixing · z) + offset`.
//! Source and target domains use different style maps, which is the domain shift
//! the rest of the pipeline has to overcome.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{column_moments, l2_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
    PseudoTarget,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "Source",
            Domain::Target => "Target",
            Domain::PseudoTarget => "PseudoTarget",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Source" => Some(Domain::Source),
            "Target" => Some(Domain::Target),
            "PseudoTarget" => Some(Domain::PseudoTarget),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    SourceTrain,
    TargetTrain,
    Query,
    Gallery,
}

impl Role {
    pub fn file_stem(self) -> &'static str {
        match self {
            Role::SourceTrain => "source_train",
            Role::TargetTrain => "target_train",
            Role::Query => "query",
            Role::Gallery => "gallery",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: u64,
    pub features: Vec<f64>,
    /// `None` for unlabeled target-train samples.
    pub identity: Option<u64>,
    pub camera_id: u32,
    pub domain: Domain,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub role: Role,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(role: Role, samples: Vec<Sample>) -> Self {
        Self { role, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature dimension of the first sample, or 0 when empty.
    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + Clone {
        self.samples.iter().map(|s| s.features.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentitySpec {
    pub identity_id: u64,
    pub latent_center: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleMapParams {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    /// `feature_dim` rows of `latent_dim` entries.
    pub mixing: Vec<Vec<f64>>,
}

impl StyleMapParams {
    pub fn render(&self, latent: &[f64]) -> Vec<f64> {
        self.mixing
            .iter()
            .zip(self.scale.iter().zip(&self.offset))
            .map(|(row, (s, o))| {
                let mixed: f64 = row.iter().zip(latent).map(|(m, z)| m * z).sum();
                s * mixed + o
            })
            .collect()
    }

    fn validate(&self, name: &str, feature_dim: usize, latent_dim: usize) -> Result<()> {
        if self.scale.len() != feature_dim {
            return Err(Error::config(
                format!("{name}.scale"),
                format!("expected {feature_dim} entries, found {}", self.scale.len()),
            ));
        }
        if self.offset.len() != feature_dim {
            return Err(Error::config(
                format!("{name}.offset"),
                format!("expected {feature_dim} entries, found {}", self.offset.len()),
            ));
        }
        if self.scale.iter().any(|s| !s.is_finite() || *s == 0.0) {
            return Err(Error::config(
                format!("{name}.scale"),
                "entries must be finite and nonzero",
            ));
        }
        if self.offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::config(format!("{name}.offset"), "entries must be finite"));
        }
        if self.mixing.len() != feature_dim
            || self.mixing.iter().any(|row| row.len() != latent_dim)
        {
            return Err(Error::config(
                format!("{name}.mixing"),
                format!("expected a {feature_dim}x{latent_dim} matrix"),
            ));
        }
        if self.mixing.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::config(format!("{name}.mixing"), "entries must be finite"));
        }
        let m = DMatrix::from_fn(feature_dim, latent_dim, |i, j| self.mixing[i][j]);
        if m.rank(1e-10) < latent_dim {
            return Err(Error::config(
                format!("{name}.mixing"),
                "matrix must have full column rank",
            ));
        }
        Ok(())
    }
}

/// Style maps drawn from `style_seed` when a config leaves them unset.
///
/// Both domains share a random mixing matrix; the target mixing is perturbed and
/// its per-dimension gains and offsets are drawn far from the source's.
pub fn default_styles(
    feature_dim: usize,
    latent_dim: usize,
    style_seed: u64,
) -> (StyleMapParams, StyleMapParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(style_seed);
    let norm = (latent_dim as f64).sqrt();
    let mixing: Vec<Vec<f64>> = (0..feature_dim)
        .map(|_| {
            (0..latent_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal) / norm)
                .collect()
        })
        .collect();
    let target_mixing = mixing
        .iter()
        .map(|row| {
            row.iter()
                .map(|m| m + 0.25 * rng.sample::<f64, _>(StandardNormal) / norm)
                .collect()
        })
        .collect();
    let gain = Uniform::new(0.4, 2.5).expect("valid range");
    let shift = Uniform::new(-3.0, 3.0).expect("valid range");
    let source = StyleMapParams {
        scale: vec![1.0; feature_dim],
        offset: vec![0.0; feature_dim],
        mixing,
    };
    let target = StyleMapParams {
        scale: (0..feature_dim).map(|_| gain.sample(&mut rng)).collect(),
        offset: (0..feature_dim).map(|_| shift.sample(&mut rng)).collect(),
        mixing: target_mixing,
    };
    (source, target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub n_identities: usize,
    pub samples_per_identity_source: usize,
    pub samples_per_identity_target: usize,
    pub n_cameras: u32,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub intra_identity_noise_sigma: f64,
    /// Explicit style maps; when absent they are drawn from `style_seed`.
    pub source_style: Option<StyleMapParams>,
    pub target_style: Option<StyleMapParams>,
    pub style_seed: u64,
    pub query_fraction: f64,
    pub seed: u64,
}

pub const DEFAULT_STYLE_SEED: u64 = 0x5eed_57e1;

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_identities: 30,
            samples_per_identity_source: 12,
            samples_per_identity_target: 16,
            n_cameras: 4,
            latent_dim: 8,
            feature_dim: 12,
            intra_identity_noise_sigma: 0.4,
            source_style: None,
            target_style: None,
            style_seed: DEFAULT_STYLE_SEED,
            query_fraction: 0.25,
            seed: 7,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_identities", self.n_identities),
            ("samples_per_identity_source", self.samples_per_identity_source),
            ("samples_per_identity_target", self.samples_per_identity_target),
            ("latent_dim", self.latent_dim),
            ("feature_dim", self.feature_dim),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.samples_per_identity_target < 2 {
            return Err(Error::config(
                "samples_per_identity_target",
                "must be at least 2 so every identity has a query and a gallery sample",
            ));
        }
        if self.n_cameras < 2 {
            return Err(Error::config(
                "n_cameras",
                "must be at least 2 for cross-camera evaluation",
            ));
        }
        if self.feature_dim < self.latent_dim {
            return Err(Error::config(
                "feature_dim",
                "must be at least latent_dim for a full-rank mixing matrix",
            ));
        }
        if !(self.intra_identity_noise_sigma > 0.0 && self.intra_identity_noise_sigma.is_finite())
        {
            return Err(Error::config(
                "intra_identity_noise_sigma",
                "must be positive and finite",
            ));
        }
        if !(self.query_fraction > 0.0 && self.query_fraction < 1.0) {
            return Err(Error::config("query_fraction", "must lie strictly between 0 and 1"));
        }
        let (source, target) = self.styles();
        source.validate("source_style", self.feature_dim, self.latent_dim)?;
        target.validate("target_style", self.feature_dim, self.latent_dim)?;
        Ok(())
    }

    /// The configured style maps, falling back to [`default_styles`].
    pub fn styles(&self) -> (StyleMapParams, StyleMapParams) {
        let (source, target) = match (&self.source_style, &self.target_style) {
            (Some(s), Some(t)) => return (s.clone(), t.clone()),
            _ => default_styles(self.feature_dim, self.latent_dim, self.style_seed),
        };
        (
            self.source_style.clone().unwrap_or(source),
            self.target_style.clone().unwrap_or(target),
        )
    }

    /// Query samples drawn per target identity.
    pub fn queries_per_identity(&self) -> usize {
        let per = self.samples_per_identity_target;
        ((per as f64 * self.query_fraction).round() as usize).clamp(1, per - 1)
    }
}

/// Ground-truth identities of the unlabeled target-train split.
///
/// Every lookup is counted so a run can prove it never consulted the map.
#[derive(Debug, Default)]
pub struct GroundTruth {
    identities: BTreeMap<u64, u64>,
    reads: AtomicUsize,
}

impl Clone for GroundTruth {
    fn clone(&self) -> Self {
        Self {
            identities: self.identities.clone(),
            reads: AtomicUsize::new(self.reads()),
        }
    }
}

impl GroundTruth {
    pub fn identity(&self, sample_id: u64) -> Option<u64> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.identities.get(&sample_id).copied()
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub source_train: Dataset,
    pub target_train: Dataset,
    pub query: Dataset,
    pub gallery: Dataset,
    pub ground_truth: GroundTruth,
    pub source_identities: Vec<IdentitySpec>,
    pub target_identities: Vec<IdentitySpec>,
}

impl Benchmark {
    pub fn datasets(&self) -> [&Dataset; 4] {
        [&self.source_train, &self.target_train, &self.query, &self.gallery]
    }
}

struct Drawer<'a> {
    rng: ChaCha8Rng,
    cfg: &'a BenchmarkConfig,
}

impl Drawer<'_> {
    fn latent(&mut self, center: &[f64]) -> Vec<f64> {
        let sigma = self.cfg.intra_identity_noise_sigma;
        center
            .iter()
            .map(|c| c + sigma * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn camera(&mut self) -> u32 {
        self.rng.random_range(0..self.cfg.n_cameras)
    }
}

pub fn generate_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let (source_style, target_style) = cfg.styles();
    let n = cfg.n_identities;
    let mut drawer = Drawer {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        cfg,
    };

    let mut centers: Vec<IdentitySpec> = Vec::with_capacity(2 * n);
    for identity_id in 0..(2 * n) as u64 {
        let latent_center = (0..cfg.latent_dim)
            .map(|_| drawer.rng.sample::<f64, _>(StandardNormal))
            .collect();
        centers.push(IdentitySpec {
            identity_id,
            latent_center,
        });
    }
    let target_identities = centers.split_off(n);
    let source_identities = centers;

    let mut source = Vec::with_capacity(n * cfg.samples_per_identity_source);
    for (class, spec) in source_identities.iter().enumerate() {
        for _ in 0..cfg.samples_per_identity_source {
            let z = drawer.latent(&spec.latent_center);
            let camera_id = drawer.camera();
            source.push(Sample {
                sample_id: 0,
                features: source_style.render(&z),
                identity: Some(spec.identity_id),
                camera_id,
                domain: Domain::Source,
                label: Some(class),
            });
        }
    }

    let per_query = cfg.queries_per_identity();
    let per_gallery = cfg.samples_per_identity_target - per_query;
    let mut train = Vec::new();
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    for spec in &target_identities {
        let draw = |drawer: &mut Drawer| {
            let z = drawer.latent(&spec.latent_center);
            let camera_id = drawer.camera();
            Sample {
                sample_id: 0,
                features: target_style.render(&z),
                identity: Some(spec.identity_id),
                camera_id,
                domain: Domain::Target,
                label: None,
            }
        };
        let mut own: Vec<Sample> = (0..cfg.samples_per_identity_target)
            .map(|_| draw(&mut drawer))
            .collect();
        let own_train = own.split_off(per_query);
        let mut own_gallery: Vec<Sample> = (0..per_gallery).map(|_| draw(&mut drawer)).collect();
        ensure_cross_camera_match(&own, &mut own_gallery, cfg.n_cameras);
        query.extend(own);
        train.extend(own_train);
        gallery.extend(own_gallery);
    }
    train.shuffle(&mut drawer.rng);

    let mut ground_truth = GroundTruth::default();
    let mut next_id = 0u64;
    let mut assign = |samples: &mut [Sample]| {
        for s in samples {
            s.sample_id = next_id;
            next_id += 1;
        }
    };
    assign(&mut source);
    assign(&mut train);
    assign(&mut query);
    assign(&mut gallery);
    for s in &mut train {
        if let Some(identity) = s.identity.take() {
            ground_truth.identities.insert(s.sample_id, identity);
        }
    }

    Ok(Benchmark {
        source_train: Dataset::new(Role::SourceTrain, source),
        target_train: Dataset::new(Role::TargetTrain, train),
        query: Dataset::new(Role::Query, query),
        gallery: Dataset::new(Role::Gallery, gallery),
        ground_truth,
        source_identities,
        target_identities,
    })
}

/// Guarantees every query camera has a gallery match from some other camera.
fn ensure_cross_camera_match(queries: &[Sample], gallery: &mut [Sample], n_cameras: u32) {
    let Some(first) = gallery.first().map(|g| g.camera_id) else {
        return;
    };
    let single_camera = gallery.iter().all(|g| g.camera_id == first);
    if single_camera && queries.iter().any(|q| q.camera_id == first) {
        gallery[0].camera_id = (first + 1) % n_cameras;
    }
}

/// Symmetric moment discrepancy `‖mean_s − mean_t‖₂ + ‖std_s − std_t‖₂`.
pub fn domain_gap(source: &Dataset, target: &Dataset) -> Result<f64> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("domain gap needs two nonempty datasets"));
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
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    Ok(l2_norm(&diff(&mean_s, &mean_t)) + l2_norm(&diff(&std_s, &std_t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::euclidean;

    fn small(seed: u64) -> BenchmarkConfig {
        BenchmarkConfig {
            n_identities: 10,
            samples_per_identity_target: 20,
            query_fraction: 0.2,
            seed,
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn split_counts_follow_config() {
        let b = generate_benchmark(&small(1)).unwrap();
        assert_eq!(b.target_train.len(), 160);
        assert_eq!(b.query.len(), 40);
        assert_eq!(b.gallery.len(), 160);
        assert_eq!(b.source_train.len(), 10 * 12);
        assert_eq!(b.ground_truth.len(), 160);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_benchmark(&small(3)).unwrap();
        let b = generate_benchmark(&small(3)).unwrap();
        for (x, y) in a.datasets().iter().zip(b.datasets()) {
            assert_eq!(x.samples.len(), y.samples.len());
            for (s, t) in x.samples.iter().zip(&y.samples) {
                let sb: Vec<u64> = s.features.iter().map(|f| f.to_bits()).collect();
                let tb: Vec<u64> = t.features.iter().map(|f| f.to_bits()).collect();
                assert_eq!(sb, tb);
                assert_eq!(s, t);
            }
        }
        let c = generate_benchmark(&small(4)).unwrap();
        assert_ne!(a.source_train.samples[0].features, c.source_train.samples[0].features);
    }

    #[test]
    fn target_train_hides_identities() {
        let b = generate_benchmark(&small(5)).unwrap();
        assert!(b.target_train.samples.iter().all(|s| s.identity.is_none() && s.label.is_none()));
        assert_eq!(b.ground_truth.reads(), 0);
    }

    #[test]
    fn identities_disjoint_and_queries_have_cross_camera_matches() {
        let b = generate_benchmark(&small(6)).unwrap();
        let source_ids: std::collections::BTreeSet<_> =
            b.source_train.samples.iter().filter_map(|s| s.identity).collect();
        for s in b.query.samples.iter().chain(&b.gallery.samples) {
            assert!(!source_ids.contains(&s.identity.unwrap()));
        }
        for q in &b.query.samples {
            assert!(b
                .gallery
                .samples
                .iter()
                .any(|g| g.identity == q.identity && g.camera_id != q.camera_id));
        }
        let q_ids: std::collections::BTreeSet<_> = b.query.samples.iter().map(|s| s.sample_id).collect();
        assert!(b.gallery.samples.iter().all(|g| !q_ids.contains(&g.sample_id)));
    }

    #[test]
    fn within_identity_latent_spread_below_between_identity() {
        // Brute force over every pair of latent draws.
        let cfg = BenchmarkConfig {
            intra_identity_noise_sigma: 0.1,
            ..small(8)
        };
        let b = generate_benchmark(&cfg).unwrap();
        let mut drawer = Drawer {
            rng: ChaCha8Rng::seed_from_u64(99),
            cfg: &cfg,
        };
        let points: Vec<(u64, Vec<f64>)> = b
            .target_identities
            .iter()
            .flat_map(|spec| {
                (0..10)
                    .map(|_| (spec.identity_id, drawer.latent(&spec.latent_center)))
                    .collect::<Vec<_>>()
            })
            .collect();
        let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let d = euclidean(&points[i].1, &points[j].1);
                if points[i].0 == points[j].0 {
                    within += d;
                    nw += 1;
                } else {
                    between += d;
                    nb += 1;
                }
            }
        }
        assert!(within / (nw as f64) < between / (nb as f64));
    }

    #[test]
    fn invalid_config_names_the_field() {
        let cfg = BenchmarkConfig {
            query_fraction: 1.0,
            ..BenchmarkConfig::default()
        };
        match generate_benchmark(&cfg) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "query_fraction"),
            other => panic!("unexpected {other:?}"),
        }
        let mut cfg = BenchmarkConfig::default();
        let (source, mut target) = cfg.styles();
        target.mixing[0].pop();
        cfg.target_style = Some(target);
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "target_style.mixing"),
            other => panic!("unexpected {other:?}"),
        }
        let mut cfg = BenchmarkConfig::default();
        let mut degenerate = source.clone();
        for row in &mut degenerate.mixing {
            row[1] = row[0];
        }
        cfg.source_style = Some(degenerate);
        assert!(cfg.validate().unwrap_err().is_config());
    }

    fn dataset(rows: Vec<Vec<f64>>) -> Dataset {
        Dataset::new(
            Role::SourceTrain,
            rows.into_iter()
                .enumerate()
                .map(|(i, features)| Sample {
                    sample_id: i as u64,
                    features,
                    identity: None,
                    camera_id: 0,
                    domain: Domain::Source,
                    label: None,
                })
                .collect(),
        )
    }

    #[test]
    fn domain_gap_hand_cases() {
        let rows = vec![
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1.0, -1.0, 0.5, 2.0],
            vec![4.0, 0.0, 0.0, 1.0],
        ];
        let a = dataset(rows.clone());
        assert_eq!(domain_gap(&a, &a).unwrap(), 0.0);
        let shifted = dataset(rows.iter().map(|r| r.iter().map(|x| x + 1.0).collect()).collect());
        assert!((domain_gap(&a, &shifted).unwrap() - 2.0).abs() < 1e-12);
        let narrow = dataset(vec![vec![0.0, 1.0, 2.0]]);
        assert!(matches!(
            domain_gap(&a, &narrow),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
