//! Independent reference implementations shared by the oracle and acceptance suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use pal_core::encoder::{init_encoder, Encoder, Supervision};
use pal_core::metrics::Probe;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
// Gradient entries smaller than this are compared in absolute terms.
const FLOOR: f64 = 1e-6;

pub struct Case {
    pub encoder: Encoder,
    pub inputs: Vec<Vec<f64>>,
    pub sups: Vec<Supervision>,
    pub sigma: f64,
}

pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feature_dim = rng.random_range(1..=6);
    let hidden: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(2..=6)).collect();
    let embed_dim = rng.random_range(2..=5);
    let k = rng.random_range(2..=6);
    let mut encoder = init_encoder(feature_dim, &hidden, embed_dim, k, seed).unwrap();
    // Non-zero biases so every term of the backward pass is exercised.
    for v in encoder.parameters_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    let batch = rng.random_range(1..=5);
    let inputs = (0..batch)
        .map(|_| (0..feature_dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let sups = (0..batch)
        .map(|_| {
            let label = rng.random_range(0..k);
            if rng.random_bool(0.5) {
                return Supervision::hard(label);
            }
            // Random support, optionally unnormalized.
            let mut w: Vec<f64> = (0..k)
                .map(|_| if rng.random_bool(0.6) { rng.random_range(0.0..1.0) } else { 0.0 })
                .collect();
            if rng.random_bool(0.7) {
                let s: f64 = w.iter().sum();
                if s > 0.0 {
                    w.iter_mut().for_each(|x| *x /= s);
                }
            }
            Supervision {
                label,
                unlabeled: true,
                weights: Some(w),
            }
        })
        .collect();
    Case {
        encoder,
        inputs,
        sups,
        sigma: rng.random_range(0.0..=1.0),
    }
}

fn loss_at(case: &Case, e: &Encoder) -> f64 {
    let batch: Vec<(&[f64], &Supervision)> = case.inputs.iter().map(|x| x.as_slice()).zip(&case.sups).collect();
    e.loss(&batch, case.sigma).unwrap()
}

pub fn max_relative_error(case: &Case) -> f64 {
    let batch: Vec<(&[f64], &Supervision)> = case.inputs.iter().map(|x| x.as_slice()).zip(&case.sups).collect();
    let (_, grad) = case.encoder.loss_and_gradient(&batch, case.sigma).unwrap();
    let analytic = grad.parameters();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut plus = case.encoder.clone();
        *plus.parameters_mut().nth(i).unwrap() += H;
        let mut minus = case.encoder.clone();
        *minus.parameters_mut().nth(i).unwrap() -= H;
        let numeric = (loss_at(case, &plus) - loss_at(case, &minus)) / (2.0 * H);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(err);
    }
    worst
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Core points within `rad` are merged; a border point joins its nearest core.
pub fn reference(points: &[Vec<f64>], rad: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let within = |i: usize, j: usize| dist(&points[i], &points[j]) <= rad;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| within(i, j)).count() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && within(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                return Some(find(&mut parent, i));
            }
            let mut best: Option<usize> = None;
            for j in 0..n {
                if core[j] && within(i, j) && best.is_none_or(|b| dist(&points[i], &points[j]) < dist(&points[i], &points[b])) {
                    best = Some(j);
                }
            }
            best.map(|j| find(&mut parent, j))
        })
        .collect()
}

/// Equal up to a bijective relabeling, with noise matched to noise.
pub fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    let mut fwd = BTreeMap::new();
    let mut back = BTreeMap::new();
    a.iter().zip(b).all(|(x, y)| match (x, y) {
        (None, None) => true,
        (Some(x), Some(y)) => *fwd.entry(*x).or_insert(*y) == *y && *back.entry(*y).or_insert(*x) == *x,
        _ => false,
    })
}

pub fn blobs(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let centers: Vec<Vec<f64>> = (0..rng.random_range(1..=6))
        .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    (0..n)
        .map(|_| {
            let c = &centers[rng.random_range(0..centers.len())];
            c.iter().map(|v| v + rng.random_range(-1.5..1.5)).collect()
        })
        .collect()
}

/// AP as the area under the precision/recall step curve.
pub fn ap_area(rel: &[bool]) -> Option<f64> {
    let total = rel.iter().filter(|r| **r).count();
    if total == 0 {
        return None;
    }
    let mut area = 0.0;
    for k in 1..=rel.len() {
        if rel[k - 1] {
            let precision = rel[..k].iter().filter(|r| **r).count() as f64 / k as f64;
            area += precision / total as f64;
        }
    }
    Some(area)
}

pub fn random_probes(rng: &mut ChaCha8Rng, n: usize, ids: u64, id_base: u64) -> Vec<Probe> {
    (0..n)
        .map(|i| Probe {
            sample_id: id_base + i as u64,
            identity: rng.random_range(0..ids),
            camera: rng.random_range(0..3),
            embedding: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect()
}

fn d(a: &Probe, b: &Probe) -> f64 {
    a.embedding.iter().zip(&b.embedding).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Rank of each admissible entry counted directly, without sorting.
pub fn brute_force(queries: &[Probe], gallery: &[Probe], max_rank: usize) -> (f64, Vec<f64>) {
    let mut aps = Vec::new();
    let mut firsts = Vec::new();
    for q in queries {
        let admissible: Vec<&Probe> = gallery.iter().filter(|g| !(g.identity == q.identity && g.camera == q.camera)).collect();
        let key = |g: &Probe| (d(q, g), g.sample_id);
        let before = |a: &Probe, b: &Probe| {
            let (ka, kb) = (key(a), key(b));
            ka.0 < kb.0 || (ka.0 == kb.0 && ka.1 < kb.1)
        };
        let relevant: Vec<&&Probe> = admissible.iter().filter(|g| g.identity == q.identity).collect();
        if relevant.is_empty() {
            continue;
        }
        let mut ap = 0.0;
        let mut first = usize::MAX;
        for g in &relevant {
            let rank = 1 + admissible.iter().filter(|o| before(o, g)).count();
            let hits = 1 + relevant.iter().filter(|o| before(o, g)).count();
            ap += hits as f64 / rank as f64;
            first = first.min(rank);
        }
        aps.push(ap / relevant.len() as f64);
        firsts.push(first);
    }
    let map = aps.iter().sum::<f64>() / aps.len() as f64;
    let curve = (1..=max_rank)
        .map(|r| firsts.iter().filter(|f| **f <= r).count() as f64 / firsts.len() as f64)
        .collect();
    (map, curve)
}
