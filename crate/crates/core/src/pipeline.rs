//! The progressive adaptation loop and its ablation variants.
//!
//! Labeled source samples are mapped into the target style (the pseudo-target
//! set), an encoder is trained on them, and then each iteration
//!
//! 1. trains on the fusion set (pseudo-target samples plus the unlabeled target
//!    samples selected in the previous iteration),
//! 2. embeds the target-train split, projects it and clusters it with DBSCAN,
//! 3. resets the fusion set to the pseudo-target samples and adds back the
//!    target samples close to their cluster centroid, each with a weighted
//!    soft label over the clusters,
//! 4. evaluates retrieval on the query/gallery splits.
//!
//! The head covers the source classes followed by the current clusters, so a
//! selected sample in cluster `k` is trained against class `n_source + k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clusterer::{
    centroid_distances, centroids, cluster_with_retry, dynamic_sample, knn_radius, reduce_dim,
    ClusterConfig,
};
use crate::encoder::{embed, init_encoder, train_epochs, Encoder, Supervision, TrainConfig};
use crate::error::{Error, Result};
use crate::io::{benchmark_hash, ClusterDumpRow, ReportRow, WeightDumpRow};
use crate::metrics::{evaluate, EvalReport, Probe};
use crate::synthgen::{generate_benchmark, Benchmark, BenchmarkConfig, Dataset, Sample};
use crate::transfer::{fit_transfer, transfer_dataset};
use crate::wls::{compute_alpha, compute_distances, compute_weights, wls_loss, WlsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Pseudo-target samples + weighted label smoothing.
    #[serde(rename = "PAL")]
    Pal,
    /// Original source samples + cross-entropy on cluster labels.
    #[serde(rename = "BS")]
    Bs,
    /// Pseudo-target samples + cross-entropy on cluster labels.
    #[serde(rename = "CEL")]
    Cel,
    /// Original source samples + weighted label smoothing.
    #[serde(rename = "OIMG")]
    Oimg,
    /// Source-only training, no adaptation.
    DirectTransfer,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Pal,
        Variant::Bs,
        Variant::Cel,
        Variant::Oimg,
        Variant::DirectTransfer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pal => "PAL",
            Variant::Bs => "BS",
            Variant::Cel => "CEL",
            Variant::Oimg => "OIMG",
            Variant::DirectTransfer => "DirectTransfer",
        }
    }

    pub fn settings(self, wls: &WlsConfig) -> EffectiveSettings {
        let (transferred, soft, adapt) = match self {
            Variant::Pal => (true, true, true),
            Variant::Bs => (false, false, true),
            Variant::Cel => (true, false, true),
            Variant::Oimg => (false, true, true),
            Variant::DirectTransfer => (false, false, false),
        };
        EffectiveSettings {
            pseudo_target_samples: transferred,
            adaptation_loop: adapt,
            unlabeled_sigma: if soft { wls.sigma } else { 0.0 },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(
                    "variant",
                    format!("unknown variant `{s}`; expected PAL, BS, CEL, OIMG or DirectTransfer"),
                )
            })
    }
}

/// What a variant actually changes, echoed into every report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSettings {
    /// Train on style-transferred source samples instead of the originals.
    pub pseudo_target_samples: bool,
    /// Run the cluster/select loop on target-train.
    pub adaptation_loop: bool,
    /// Smoothing factor applied to selected unlabeled samples; 0 is plain
    /// cross-entropy on the cluster label.
    pub unlabeled_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![32, 32],
            embed_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub cross_camera_exclusion: bool,
    pub max_rank: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cross_camera_exclusion: true,
            max_rank: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub iterations: usize,
    pub variant: Variant,
    /// Seeds encoder initialization, head rebuilds and batch shuffling.
    pub seed: u64,
    /// Cap on the number of pseudo-target samples; `None` keeps them all.
    pub max_pseudo_target: Option<usize>,
    pub wls: WlsConfig,
    pub cluster: ClusterConfig,
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub eval: EvalConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            iterations: 6,
            variant: Variant::Pal,
            seed: 1,
            max_pseudo_target: None,
            wls: WlsConfig::default(),
            cluster: ClusterConfig::default(),
            train: TrainConfig::default(),
            encoder: EncoderConfig::default(),
            eval: EvalConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        if self.max_pseudo_target == Some(0) {
            return Err(Error::config("max_pseudo_target", "must be at least 1 when set"));
        }
        if self.encoder.embed_dim == 0 {
            return Err(Error::config("encoder.embed_dim", "must be at least 1"));
        }
        if self.encoder.hidden_dims.contains(&0) {
            return Err(Error::config("encoder.hidden_dims", "widths must be at least 1"));
        }
        if self.cluster.reduce_dim > self.encoder.embed_dim {
            return Err(Error::config(
                "cluster.reduce_dim",
                "must not exceed encoder.embed_dim",
            ));
        }
        if self.eval.max_rank == 0 {
            return Err(Error::config("eval.max_rank", "must be at least 1"));
        }
        self.wls.validate()?;
        self.cluster.validate()?;
        self.train.validate()?;
        self.benchmark.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// Mean training loss over this iteration's epochs.
    pub mean_loss: f64,
    pub k: usize,
    pub noise: usize,
    pub radius: Option<f64>,
    pub selected: usize,
    /// Fusion-set size used for training in this iteration.
    pub trained_on: usize,
    /// Mean soft-label loss, after training, of the target samples this
    /// iteration trained on.
    pub selected_wls_loss: Option<f64>,
    /// Probabilities floored while computing `selected_wls_loss`.
    pub clamped_probs: usize,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub variant: Variant,
    pub effective: EffectiveSettings,
    pub benchmark_hash: String,
    /// Style-transferred samples in the training set (0 when originals are used).
    pub generated_count: usize,
    pub source_classes: usize,
    pub init_loss: Option<f64>,
    pub iterations: Vec<IterationReport>,
    pub final_eval: Option<EvalReport>,
    /// Lookups of hidden target-train identities during the run.
    pub ground_truth_reads: usize,
    pub aborted: Option<String>,
    pub config: PipelineConfig,
}

impl PipelineReport {
    pub fn final_map(&self) -> Option<f64> {
        self.final_eval.as_ref().map(|e| e.map)
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.iterations
            .iter()
            .map(|it| ReportRow {
                iteration: it.iteration,
                variant: self.variant.name().to_string(),
                k: it.k,
                selected: it.selected,
                map: it.eval.map,
                rank1: it.eval.rank(1),
                rank5: it.eval.rank(5),
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug)]
pub enum RunError {
    /// The run never started.
    Invalid(Error),
    /// The run stopped part way; `partial` holds every finished iteration.
    Aborted {
        error: Error,
        partial: Box<PipelineReport>,
    },
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Invalid(e) => write!(f, "{e}"),
            RunError::Aborted { error, partial } => write!(
                f,
                "{} run aborted after {} iteration(s): {error}",
                partial.variant,
                partial.iterations.len()
            ),
        }
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Invalid(e)
    }
}

/// Per-iteration debug output handed to an observer.
#[derive(Debug, Clone)]
pub struct IterationArtifacts {
    pub iteration: usize,
    pub k: usize,
    pub clusters: Vec<ClusterDumpRow>,
    pub weights: Vec<WeightDumpRow>,
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

const INIT_STREAM: u64 = 0;
const HEAD_STREAM: u64 = 1 << 32;
const SHUFFLE_STREAM: u64 = 2 << 32;

/// Generates the configured benchmark and runs the configured variant on it.
pub fn run_pal(cfg: &PipelineConfig) -> Result<PipelineReport, RunError> {
    cfg.validate()?;
    let bench = generate_benchmark(&cfg.benchmark)?;
    run_on_benchmark(cfg, &bench, |_| {})
}

/// Runs `variant` on the configured benchmark, overriding `cfg.variant`.
pub fn run_variant(cfg: &PipelineConfig, variant: Variant) -> Result<PipelineReport, RunError> {
    run_pal(&PipelineConfig {
        variant,
        ..cfg.clone()
    })
}

fn probes(encoder: &Encoder, d: &Dataset) -> Result<Vec<Probe>> {
    d.samples
        .iter()
        .map(|s| {
            Ok(Probe {
                sample_id: s.sample_id,
                identity: s.identity.ok_or_else(|| {
                    Error::Invalid(format!("evaluation sample {} has no identity", s.sample_id))
                })?,
                camera: s.camera_id,
                embedding: encoder.embedding(&s.features)?,
            })
        })
        .collect()
}

fn evaluate_encoder(encoder: &Encoder, bench: &Benchmark, cfg: &PipelineConfig) -> Result<EvalReport> {
    let q = probes(encoder, &bench.query)?;
    let g = probes(encoder, &bench.gallery)?;
    evaluate(&q, &g, cfg.eval.cross_camera_exclusion, cfg.eval.max_rank)
}

/// Training set of pseudo-target (or original source) samples with hard labels.
fn base_training_set(cfg: &PipelineConfig, bench: &Benchmark, settings: &EffectiveSettings) -> Result<Vec<Sample>> {
    let mut samples = if settings.pseudo_target_samples {
        let t = fit_transfer(&bench.source_train, &bench.target_train)?;
        transfer_dataset(&bench.source_train, &t)?.samples
    } else {
        bench.source_train.samples.clone()
    };
    if let Some(cap) = cfg.max_pseudo_target {
        if cap < samples.len() {
            // Evenly strided subset keeps every identity represented.
            let stride = samples.len() as f64 / cap as f64;
            samples = (0..cap)
                .map(|i| samples[(i as f64 * stride) as usize].clone())
                .collect();
        }
    }
    Ok(samples)
}

/// Runs the configured variant on an existing benchmark.
///
/// The run only sees target-train features; it fails with [`Error::LabelLeak`]
/// if any target-train sample carries an identity.
pub fn run_on_benchmark<F>(cfg: &PipelineConfig, bench: &Benchmark, mut observe: F) -> Result<PipelineReport, RunError>
where
    F: FnMut(&IterationArtifacts),
{
    cfg.validate()?;
    if let Some(s) = bench.target_train.samples.iter().find(|s| s.identity.is_some()) {
        return Err(Error::LabelLeak { sample_id: s.sample_id }.into());
    }
    let settings = cfg.variant.settings(&cfg.wls);
    let base = base_training_set(cfg, bench, &settings)?;
    let source_classes = base
        .iter()
        .map(|s| s.label.map(|l| l + 1).unwrap_or(0))
        .max()
        .unwrap_or(0);
    if source_classes == 0 {
        return Err(Error::EmptyInput("source training set carries no labels").into());
    }
    let base_sups: Vec<Supervision> = base
        .iter()
        .map(|s| Supervision::hard(s.label.expect("source samples are labeled")))
        .collect();

    let mut encoder = init_encoder(
        bench.source_train.feature_dim(),
        &cfg.encoder.hidden_dims,
        cfg.encoder.embed_dim,
        source_classes,
        derive_seed(cfg.seed, INIT_STREAM),
    )?;

    let mut report = PipelineReport {
        variant: cfg.variant,
        effective: settings,
        benchmark_hash: benchmark_hash(bench)?,
        generated_count: if settings.pseudo_target_samples { base.len() } else { 0 },
        source_classes,
        init_loss: None,
        iterations: Vec::with_capacity(cfg.iterations),
        final_eval: None,
        ground_truth_reads: 0,
        aborted: None,
        config: cfg.clone(),
    };

    let abort = |mut report: PipelineReport, error: Error| {
        report.aborted = Some(error.to_string());
        report.final_eval = report.iterations.last().map(|it| it.eval.clone());
        report.ground_truth_reads = bench.ground_truth.reads();
        RunError::Aborted {
            error,
            partial: Box::new(report),
        }
    };

    let init_data: Vec<(&[f64], &Supervision)> = base
        .iter()
        .map(|s| s.features.as_slice())
        .zip(&base_sups)
        .collect();
    match train_epochs(&mut encoder, &init_data, &cfg.train, 0.0, derive_seed(cfg.train.seed, SHUFFLE_STREAM)) {
        Ok(losses) => report.init_loss = Some(mean(&losses)),
        Err(e) => return Err(abort(report, e)),
    }

    // Selected target samples from the previous iteration, with their supervision.
    let mut selected: Vec<(usize, Supervision)> = Vec::new();
    let mut k_prev = 0usize;
    for iteration in 1..=cfg.iterations {
        match run_iteration(cfg, bench, &settings, &base, &base_sups, source_classes, &mut encoder, &mut selected, &mut k_prev, iteration, &mut observe) {
            Ok(it) => report.iterations.push(it),
            Err(e) => return Err(abort(report, e)),
        }
    }
    report.final_eval = report.iterations.last().map(|it| it.eval.clone());
    report.ground_truth_reads = bench.ground_truth.reads();
    Ok(report)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[allow(clippy::too_many_arguments)]
fn run_iteration<F>(
    cfg: &PipelineConfig,
    bench: &Benchmark,
    settings: &EffectiveSettings,
    base: &[Sample],
    base_sups: &[Supervision],
    source_classes: usize,
    encoder: &mut Encoder,
    selected: &mut Vec<(usize, Supervision)>,
    k_prev: &mut usize,
    iteration: usize,
    observe: &mut F,
) -> Result<IterationReport>
where
    F: FnMut(&IterationArtifacts),
{
    let target = &bench.target_train;

    // Train on the fusion set built at the end of the previous iteration.
    if iteration > 1 && settings.adaptation_loop {
        *encoder = encoder.rebuild_head(
            source_classes + *k_prev,
            derive_seed(cfg.seed, HEAD_STREAM + iteration as u64),
        )?;
    }
    let mut data: Vec<(&[f64], &Supervision)> = base
        .iter()
        .map(|s| s.features.as_slice())
        .zip(base_sups)
        .collect();
    data.extend(
        selected
            .iter()
            .map(|(i, sup)| (target.samples[*i].features.as_slice(), sup)),
    );
    let trained_on = data.len();
    let losses = train_epochs(
        encoder,
        &data,
        &cfg.train,
        settings.unlabeled_sigma,
        derive_seed(cfg.train.seed, SHUFFLE_STREAM + iteration as u64),
    )?;

    let mut it = IterationReport {
        iteration,
        mean_loss: mean(&losses),
        k: 0,
        noise: 0,
        radius: None,
        selected: 0,
        trained_on,
        selected_wls_loss: None,
        clamped_probs: 0,
        eval: EvalReport {
            map: 0.0,
            cmc: Vec::new(),
            per_query_ap: Vec::new(),
            skipped_empty_gallery: 0,
            skipped_no_relevant: 0,
        },
    };

    if !selected.is_empty() {
        let mut total = 0.0;
        for (i, sup) in selected.iter() {
            let probs = encoder.forward(&target.samples[*i].features)?.probs;
            let (l, clamped) = wls_loss(sup.weights.as_deref().expect("selected samples carry weights"), &probs)?;
            total += l;
            it.clamped_probs += clamped;
        }
        it.selected_wls_loss = Some(total / selected.len() as f64);
    }

    if settings.adaptation_loop {
        let ft = embed(encoder, target)?;
        let f = reduce_dim(&ft, cfg.cluster.reduce_dim)?;
        let rad = knn_radius(&f, cfg.cluster.knn_k, cfg.cluster.radius_statistic)?;
        let (clusters, rad) = cluster_with_retry(&f, rad, cfg.cluster.min_pts, cfg.cluster.radius_retries)?;
        let cents = centroids(&clusters, &f)?;
        let k = clusters.k;

        // The fusion set restarts from the base samples every iteration.
        selected.clear();
        let picks = dynamic_sample(&f, &clusters, &cents, cfg.cluster.gamma_for_iteration(iteration));
        let mut weight_rows = Vec::with_capacity(picks.len());
        for pick in &picks {
            let d = compute_distances(&f.rows[pick.index], &cents.centroids)?;
            let row = compute_weights(&compute_alpha(&d)?, &cfg.wls);
            let mut full = vec![0.0; source_classes + k];
            full[source_classes..].copy_from_slice(&row.weights);
            selected.push((
                pick.index,
                Supervision {
                    label: source_classes + pick.cluster,
                    unlabeled: true,
                    weights: Some(full),
                },
            ));
            weight_rows.push(WeightDumpRow {
                sample_id: target.samples[pick.index].sample_id,
                y: pick.cluster,
                weights: row.weights,
            });
        }
        *k_prev = k;

        let dists = centroid_distances(&f, &clusters, &cents);
        observe(&IterationArtifacts {
            iteration,
            k,
            clusters: target
                .samples
                .iter()
                .zip(clusters.assignment.iter().zip(&dists))
                .map(|(s, (c, d))| ClusterDumpRow {
                    sample_id: s.sample_id,
                    cluster: *c,
                    dist_to_centroid: *d,
                })
                .collect(),
            weights: weight_rows,
        });

        it.k = k;
        it.noise = clusters.noise_count();
        it.radius = Some(rad);
        it.selected = selected.len();
    }

    it.eval = evaluate_encoder(encoder, bench, cfg)?;
    Ok(it)
}

/// Outcome of one variant inside an ablation sweep.
#[derive(Debug)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub report: PipelineReport,
    /// Abort reason when the variant did not finish.
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct AblationReport {
    pub benchmark_hash: String,
    pub outcomes: Vec<VariantOutcome>,
}

impl AblationReport {
    pub fn get(&self, variant: Variant) -> Option<&PipelineReport> {
        self.outcomes
            .iter()
            .find(|o| o.variant == variant)
            .map(|o| &o.report)
    }

    /// Rows for every variant and iteration with a trailing status column.
    pub fn rows(&self) -> Vec<(ReportRow, String)> {
        self.outcomes
            .iter()
            .flat_map(|o| {
                let status = o.error.clone().unwrap_or_else(|| "ok".into());
                o.report
                    .rows()
                    .into_iter()
                    .map(move |r| (r, status.clone()))
            })
            .collect()
    }
}

/// Runs all five variants on one shared benchmark, concurrently.
pub fn run_ablation(cfg: &PipelineConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let bench = generate_benchmark(&cfg.benchmark)?;
    let benchmark_hash = benchmark_hash(&bench)?;
    let results: Vec<(Variant, Result<PipelineReport, RunError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = Variant::ALL
            .into_iter()
            .map(|variant| {
                let bench = &bench;
                let cfg = PipelineConfig {
                    variant,
                    ..cfg.clone()
                };
                scope.spawn(move || (variant, run_on_benchmark(&cfg, bench, |_| {})))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("variant thread panicked"))
            .collect()
    });
    let mut outcomes = Vec::with_capacity(results.len());
    for (variant, result) in results {
        match result {
            Ok(report) => outcomes.push(VariantOutcome {
                variant,
                report,
                error: None,
            }),
            Err(RunError::Aborted { error, partial }) => outcomes.push(VariantOutcome {
                variant,
                report: *partial,
                error: Some(error.to_string()),
            }),
            Err(RunError::Invalid(e)) => return Err(e),
        }
    }
    Ok(AblationReport {
        benchmark_hash,
        outcomes,
    })
}
