//! Retrieval evaluation: gallery ranking, average precision, mAP and CMC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::euclidean;

/// An embedded query or gallery entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub sample_id: u64,
    pub identity: u64,
    pub camera: u32,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    /// Gallery indices, nearest first.
    pub order: Vec<usize>,
    /// `relevant[r]` is true when `order[r]` shares the query identity.
    pub relevant: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub cmc: Vec<f64>,
    pub per_query_ap: Vec<f64>,
    /// Queries whose admissible gallery was empty.
    pub skipped_empty_gallery: usize,
    /// Queries with no relevant gallery entry.
    pub skipped_no_relevant: usize,
}

impl EvalReport {
    /// CMC value at 1-based `rank`, saturating at the last entry.
    pub fn rank(&self, rank: usize) -> f64 {
        match self.cmc.len() {
            0 => 0.0,
            n => self.cmc[rank.clamp(1, n) - 1],
        }
    }
}

/// Ranks the gallery by ascending distance to the query, ties by sample id.
///
/// With `exclusion`, entries sharing both identity and camera with the query are
/// dropped first. Returns `None` when nothing admissible remains.
pub fn rank_gallery(query: &Probe, gallery: &[Probe], exclusion: bool) -> Option<RankingResult> {
    let mut scored: Vec<(f64, u64, usize)> = gallery
        .iter()
        .enumerate()
        .filter(|(_, g)| !(exclusion && g.identity == query.identity && g.camera == query.camera))
        .map(|(i, g)| (euclidean(&query.embedding, &g.embedding), g.sample_id, i))
        .collect();
    if scored.is_empty() {
        return None;
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = scored.iter().map(|s| s.2).collect();
    let relevant = order
        .iter()
        .map(|&i| gallery[i].identity == query.identity)
        .collect();
    Some(RankingResult { order, relevant })
}

/// Mean of precision@r over the ranks `r` of relevant entries.
/// `None` when nothing is relevant.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, rel) in relevant.iter().enumerate() {
        if *rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

pub fn mean_ap(per_query: &[f64]) -> Result<f64> {
    if per_query.is_empty() {
        return Err(Error::EmptyInput("mAP over zero valid queries"));
    }
    Ok(per_query.iter().sum::<f64>() / per_query.len() as f64)
}

/// `cmc[r - 1]` is the fraction of queries whose first hit is at rank ≤ `r`.
pub fn cmc(first_hit_ranks: &[usize], max_rank: usize) -> Vec<f64> {
    let mut counts = vec![0usize; max_rank];
    for &r in first_hit_ranks {
        if r >= 1 && r <= max_rank {
            counts[r - 1] += 1;
        }
    }
    let n = first_hit_ranks.len().max(1) as f64;
    let mut acc = 0;
    counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect()
}

pub fn evaluate(queries: &[Probe], gallery: &[Probe], exclusion: bool, max_rank: usize) -> Result<EvalReport> {
    let mut per_query_ap = Vec::with_capacity(queries.len());
    let mut first_hits = Vec::with_capacity(queries.len());
    let mut skipped_empty_gallery = 0;
    let mut skipped_no_relevant = 0;
    for q in queries {
        let Some(ranking) = rank_gallery(q, gallery, exclusion) else {
            skipped_empty_gallery += 1;
            continue;
        };
        match average_precision(&ranking.relevant) {
            Some(ap) => {
                per_query_ap.push(ap);
                let first = ranking.relevant.iter().position(|r| *r).expect("has a hit");
                first_hits.push(first + 1);
            }
            None => skipped_no_relevant += 1,
        }
    }
    Ok(EvalReport {
        map: mean_ap(&per_query_ap)?,
        cmc: cmc(&first_hits, max_rank),
        per_query_ap,
        skipped_empty_gallery,
        skipped_no_relevant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe(sample_id: u64, identity: u64, camera: u32, x: f64) -> Probe {
        Probe {
            sample_id,
            identity,
            camera,
            embedding: vec![x],
        }
    }

    #[test]
    fn ranking_sorts_by_distance_then_sample_id() {
        let q = probe(100, 1, 0, 0.0);
        let g = vec![probe(5, 1, 1, 3.0), probe(6, 2, 1, 1.0), probe(7, 1, 2, 2.0)];
        assert_eq!(rank_gallery(&q, &g, true).unwrap().order, vec![1, 2, 0]);
        let tied = vec![probe(9, 2, 1, 1.0), probe(3, 2, 1, -1.0), probe(4, 2, 1, 1.0)];
        assert_eq!(rank_gallery(&q, &tied, true).unwrap().order, vec![1, 2, 0]);
    }

    #[test]
    fn exclusion_drops_same_identity_same_camera_only() {
        let q = probe(100, 1, 0, 0.0);
        let g = vec![
            probe(0, 1, 0, 0.1),
            probe(1, 1, 1, 0.2),
            probe(2, 2, 0, 0.3),
            probe(3, 1, 0, 0.4),
        ];
        let r = rank_gallery(&q, &g, true).unwrap();
        assert_eq!(r.order, vec![1, 2]);
        assert_eq!(r.relevant, vec![true, false]);
        let all = rank_gallery(&q, &g, false).unwrap();
        assert_eq!(all.order, vec![0, 1, 2, 3]);
        assert!(rank_gallery(&q, &g[..1], true).is_none());
    }

    #[test]
    fn average_precision_hand_cases() {
        let ap = average_precision(&[true, false, true]).unwrap();
        assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-12);
        assert!((ap - 0.833333).abs() < 1e-6);
        assert_eq!(average_precision(&[true, true, false, false]), Some(1.0));
        assert_eq!(average_precision(&[false, true]), Some(0.5));
        assert_eq!(average_precision(&[false, false]), None);
    }

    #[test]
    fn mean_ap_and_cmc_hand_cases() {
        assert_eq!(mean_ap(&[1.0, 0.5]).unwrap(), 0.75);
        assert_eq!(mean_ap(&[0.3]).unwrap(), 0.3);
        assert!(mean_ap(&[]).is_err());
        assert_eq!(cmc(&[3], 5), vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(cmc(&[1, 3], 4), vec![0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn evaluate_counts_skipped_queries() {
        let queries = vec![probe(10, 1, 0, 0.0), probe(11, 9, 0, 0.0), probe(12, 1, 0, 5.0)];
        let gallery = vec![probe(0, 1, 1, 0.5), probe(1, 2, 1, 0.2)];
        let r = evaluate(&queries, &gallery, true, 2).unwrap();
        assert_eq!(r.skipped_no_relevant, 1);
        assert_eq!(r.per_query_ap, vec![0.5, 1.0]);
        assert_eq!(r.map, 0.75);
        assert_eq!(r.cmc, vec![0.5, 1.0]);
        assert_eq!(r.rank(1), 0.5);
        assert_eq!(r.rank(5), 1.0);
    }
}
