//! Writes the on-disk artifacts of each command into an output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::io::{
    benchmark_hash, write_ablation_csv, write_cluster_dump, write_cmc_csv, write_dataset_csv,
    write_report_csv, write_summary_csv, write_weight_dump, CmcPoint, Manifest, ManifestEntry,
    SummaryRow,
};
use crate::pipeline::{AblationReport, IterationArtifacts, PipelineReport};
use crate::synthgen::Benchmark;

pub const MANIFEST: &str = "manifest.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const CMC_CSV: &str = "cmc.csv";
pub const ABLATION_CSV: &str = "ablation.csv";

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

/// Writes the four dataset snapshots and a manifest. Returns the written paths.
pub fn write_benchmark(dir: &Path, bench: &Benchmark, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut paths = Vec::new();
    for d in bench.datasets() {
        let name = format!("{}.csv", d.role.file_stem());
        write_dataset_csv(d, create(dir, &name)?)?;
        files.push(ManifestEntry {
            file: name.clone(),
            role: d.role,
            samples: d.len(),
        });
        paths.push(dir.join(name));
    }
    let manifest = Manifest {
        seed,
        benchmark_hash: benchmark_hash(bench)?,
        files,
    };
    write_text(dir, MANIFEST, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    paths.push(dir.join(MANIFEST));
    Ok(paths)
}

fn summary_rows(report: &PipelineReport) -> Vec<SummaryRow> {
    report
        .rows()
        .into_iter()
        .map(|r| SummaryRow {
            iteration: r.iteration,
            variant: r.variant,
            map: r.map,
            rank1: r.rank1,
            rank5: r.rank5,
        })
        .collect()
}

fn cmc_points(report: &PipelineReport) -> Vec<CmcPoint> {
    report
        .final_eval
        .iter()
        .flat_map(|e| {
            e.cmc.iter().enumerate().map(|(i, c)| CmcPoint {
                rank: i + 1,
                variant: report.variant.name().to_string(),
                cmc: *c,
            })
        })
        .collect()
}

/// `report.json`, `report.csv`, `summary.csv` and `cmc.csv` for one run.
pub fn write_run(dir: &Path, report: &PipelineReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_text(dir, REPORT_JSON, &(report.to_json()? + "\n"))?;
    write_report_csv(&report.rows(), create(dir, REPORT_CSV)?)?;
    write_summary_csv(&summary_rows(report), create(dir, SUMMARY_CSV)?)?;
    write_cmc_csv(&cmc_points(report), create(dir, CMC_CSV)?)?;
    Ok(())
}

/// Per-iteration `weights_iter{i}.csv` / `clusters_iter{i}.csv` debug dumps.
pub fn write_iteration_dumps(
    dir: &Path,
    artifacts: &IterationArtifacts,
    weights: bool,
    clusters: bool,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    if weights {
        let name = format!("weights_iter{}.csv", artifacts.iteration);
        write_weight_dump(artifacts.k, &artifacts.weights, create(dir, &name)?)?;
    }
    if clusters {
        let name = format!("clusters_iter{}.csv", artifacts.iteration);
        write_cluster_dump(&artifacts.clusters, create(dir, &name)?)?;
    }
    Ok(())
}

/// Combined CSV, CMC plot data, summary, manifest and one JSON report per variant.
pub fn write_ablation(dir: &Path, ablation: &AblationReport, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_ablation_csv(&ablation.rows(), create(dir, ABLATION_CSV)?)?;
    let mut cmc = Vec::new();
    let mut summary = Vec::new();
    for o in &ablation.outcomes {
        cmc.extend(cmc_points(&o.report));
        summary.extend(summary_rows(&o.report));
        let name = format!("report_{}.json", o.variant.name());
        write_text(dir, &name, &(o.report.to_json()? + "\n"))?;
    }
    write_cmc_csv(&cmc, create(dir, CMC_CSV)?)?;
    write_summary_csv(&summary, create(dir, SUMMARY_CSV)?)?;
    let manifest = Manifest {
        seed,
        benchmark_hash: ablation.benchmark_hash.clone(),
        files: Vec::new(),
    };
    write_text(dir, MANIFEST, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(())
}
