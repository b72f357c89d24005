//! CSV and JSON file formats: dataset snapshots, run reports and debug dumps.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every file
//! read back through its reader here reproduces the written values exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::synthgen::{Benchmark, Dataset, Domain, Role, Sample};

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Invalid(format!("cannot parse {what} from `{field}`")))
}

fn parse_opt_f64(field: &str, what: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse(field, what).map(Some)
    }
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------- datasets

pub fn write_dataset_csv<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = dataset.feature_dim();
    let mut header: Vec<String> = ["sample_id", "domain", "camera_id", "identity_id", "label"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dim).map(|i| format!("f_{i}")));
    w.write_record(&header)?;
    for s in &dataset.samples {
        // Target-train identities are never exported.
        let identity = match (dataset.role, s.identity) {
            (Role::TargetTrain, _) | (_, None) => "-1".to_string(),
            (_, Some(id)) => id.to_string(),
        };
        let mut record = vec![
            s.sample_id.to_string(),
            s.domain.as_str().to_string(),
            s.camera_id.to_string(),
            identity,
            fmt_opt(s.label),
        ];
        record.extend(s.features.iter().map(|f| f.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn dataset_csv_bytes(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_dataset_csv(dataset, &mut buf)?;
    Ok(buf)
}

pub fn read_dataset_csv<R: Read>(role: Role, input: R) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let dim = headers.len().saturating_sub(5);
    let expected = ["sample_id", "domain", "camera_id", "identity_id", "label"];
    if headers.len() < 5 || headers.iter().take(5).ne(expected.iter().copied()) {
        return Err(Error::Invalid("dataset CSV header is malformed".into()));
    }
    let mut samples = Vec::new();
    for record in r.records() {
        let record = record?;
        let identity: i64 = parse(&record[3], "identity_id")?;
        samples.push(Sample {
            sample_id: parse(&record[0], "sample_id")?,
            domain: Domain::parse(&record[1])
                .ok_or_else(|| Error::Invalid(format!("unknown domain `{}`", &record[1])))?,
            camera_id: parse(&record[2], "camera_id")?,
            identity: (identity >= 0).then_some(identity as u64),
            label: if record[4].is_empty() {
                None
            } else {
                Some(parse(&record[4], "label")?)
            },
            features: (0..dim)
                .map(|i| parse(&record[5 + i], "feature"))
                .collect::<Result<_>>()?,
        });
    }
    Ok(Dataset::new(role, samples))
}

/// SHA-256 over the four exported dataset files, in split order.
pub fn benchmark_hash(b: &Benchmark) -> Result<String> {
    let mut h = Sha256::new();
    for d in b.datasets() {
        h.update(dataset_csv_bytes(d)?);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub benchmark_hash: String,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub role: Role,
    pub samples: usize,
}

// ---------------------------------------------------------------- reports

/// One row of `iteration,variant,K,selected,map,rank1,rank5`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub iteration: usize,
    pub variant: String,
    pub k: usize,
    pub selected: usize,
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
}

const REPORT_HEADER: [&str; 7] = ["iteration", "variant", "K", "selected", "map", "rank1", "rank5"];

fn report_record(row: &ReportRow) -> Vec<String> {
    vec![
        row.iteration.to_string(),
        row.variant.clone(),
        row.k.to_string(),
        row.selected.to_string(),
        row.map.to_string(),
        row.rank1.to_string(),
        row.rank5.to_string(),
    ]
}

fn parse_report_record(record: &csv::StringRecord) -> Result<ReportRow> {
    Ok(ReportRow {
        iteration: parse(&record[0], "iteration")?,
        variant: record[1].to_string(),
        k: parse(&record[2], "K")?,
        selected: parse(&record[3], "selected")?,
        map: parse(&record[4], "map")?,
        rank1: parse(&record[5], "rank1")?,
        rank5: parse(&record[6], "rank5")?,
    })
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for row in rows {
        w.write_record(report_record(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.records().map(|rec| parse_report_record(&rec?)).collect()
}

/// Ablation rows carry a trailing `status` column (`ok` or the abort reason).
pub fn write_ablation_csv<W: Write>(rows: &[(ReportRow, String)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = REPORT_HEADER.to_vec();
    header.push("status");
    w.write_record(header)?;
    for (row, status) in rows {
        let mut record = report_record(row);
        record.push(status.clone());
        w.write_record(record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ablation_csv<R: Read>(input: R) -> Result<Vec<(ReportRow, String)>> {
    let mut r = csv::Reader::from_reader(input);
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok((parse_report_record(&rec)?, rec[7].to_string()))
        })
        .collect()
}

/// One row of `iteration,variant,map,rank1,rank5`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub iteration: usize,
    pub variant: String,
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "variant", "map", "rank1", "rank5"])?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.variant.clone(),
            r.map.to_string(),
            r.rank1.to_string(),
            r.rank5.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(SummaryRow {
                iteration: parse(&rec[0], "iteration")?,
                variant: rec[1].to_string(),
                map: parse(&rec[2], "map")?,
                rank1: parse(&rec[3], "rank1")?,
                rank5: parse(&rec[4], "rank5")?,
            })
        })
        .collect()
}

/// One point of a CMC curve: `rank,variant,cmc`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmcPoint {
    pub rank: usize,
    pub variant: String,
    pub cmc: f64,
}

pub fn write_cmc_csv<W: Write>(points: &[CmcPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "variant", "cmc"])?;
    for p in points {
        w.write_record([p.rank.to_string(), p.variant.clone(), p.cmc.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cmc_csv<R: Read>(input: R) -> Result<Vec<CmcPoint>> {
    let mut r = csv::Reader::from_reader(input);
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(CmcPoint {
                rank: parse(&rec[0], "rank")?,
                variant: rec[1].to_string(),
                cmc: parse(&rec[2], "cmc")?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- debug dumps

/// `sample_id,cluster,is_noise,dist_to_centroid`; noise has cluster -1 and no distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDumpRow {
    pub sample_id: u64,
    pub cluster: Option<usize>,
    pub dist_to_centroid: Option<f64>,
}

pub fn write_cluster_dump<W: Write>(rows: &[ClusterDumpRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", "cluster", "is_noise", "dist_to_centroid"])?;
    for r in rows {
        w.write_record([
            r.sample_id.to_string(),
            r.cluster.map_or("-1".to_string(), |c| c.to_string()),
            r.cluster.is_none().to_string(),
            fmt_opt(r.dist_to_centroid),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cluster_dump<R: Read>(input: R) -> Result<Vec<ClusterDumpRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.records()
        .map(|rec| {
            let rec = rec?;
            let cluster: i64 = parse(&rec[1], "cluster")?;
            let is_noise: bool = parse(&rec[2], "is_noise")?;
            if is_noise != (cluster < 0) {
                return Err(Error::Invalid("cluster dump noise flag disagrees with cluster".into()));
            }
            Ok(ClusterDumpRow {
                sample_id: parse(&rec[0], "sample_id")?,
                cluster: (cluster >= 0).then_some(cluster as usize),
                dist_to_centroid: parse_opt_f64(&rec[3], "dist_to_centroid")?,
            })
        })
        .collect()
}

/// `sample_id,y,w_0..w_{K-1}` for one iteration's selected samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDumpRow {
    pub sample_id: u64,
    pub y: usize,
    pub weights: Vec<f64>,
}

pub fn write_weight_dump<W: Write>(k: usize, rows: &[WeightDumpRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string(), "y".to_string()];
    header.extend((0..k).map(|i| format!("w_{i}")));
    w.write_record(&header)?;
    for r in rows {
        if r.weights.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: r.weights.len(),
            });
        }
        let mut record = vec![r.sample_id.to_string(), r.y.to_string()];
        record.extend(r.weights.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weight_dump<R: Read>(input: R) -> Result<Vec<WeightDumpRow>> {
    let mut r = csv::Reader::from_reader(input);
    let k = r.headers()?.len().saturating_sub(2);
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(WeightDumpRow {
                sample_id: parse(&rec[0], "sample_id")?,
                y: parse(&rec[1], "y")?,
                weights: (0..k)
                    .map(|i| parse(&rec[2 + i], "weight"))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}
