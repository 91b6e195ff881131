//! Retrieval metrics, reports and the local-count ablation.

mod report;

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::descriptor::{grid_dedup_count, ImageRecord};
use crate::retrieval::{NeighborList, RecordSet, RetrievalError};

pub use report::{config_digest, read_report_json, write_report_csv, write_report_json, EvalReport, QueryResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("neighbor list references unknown image id {0}")]
    UnknownId(u32),
    #[error("no ground truth for query {0}")]
    UnknownQuery(u32),
    #[error("query {0} appears in more than one neighbor list")]
    DuplicateQuery(u32),
    #[error("query {query}: neighbor {id} listed twice")]
    DuplicateNeighbor { query: u32, id: u32 },
    #[error("no query has a relevant gallery image")]
    NoEvaluableQueries,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Relevance by shared instance label.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    query_labels: HashMap<u32, u32>,
    gallery_labels: HashMap<u32, u32>,
    by_label: HashMap<u32, HashSet<u32>>,
}

impl GroundTruth {
    pub fn from_records(queries: &[ImageRecord], gallery: &[ImageRecord]) -> Self {
        Self::from_labels(
            queries.iter().map(|r| (r.id, r.label)),
            gallery.iter().map(|r| (r.id, r.label)),
        )
    }

    pub fn from_labels(
        queries: impl IntoIterator<Item = (u32, u32)>,
        gallery: impl IntoIterator<Item = (u32, u32)>,
    ) -> Self {
        let gallery_labels: HashMap<u32, u32> = gallery.into_iter().collect();
        let mut by_label: HashMap<u32, HashSet<u32>> = HashMap::new();
        for (&id, &label) in &gallery_labels {
            by_label.entry(label).or_default().insert(id);
        }
        Self {
            query_labels: queries.into_iter().collect(),
            gallery_labels,
            by_label,
        }
    }

    /// Gallery images sharing the query's label, the query itself excluded.
    pub fn relevant(&self, query: u32) -> Result<HashSet<u32>> {
        let label = self
            .query_labels
            .get(&query)
            .ok_or(EvalError::UnknownQuery(query))?;
        let mut set = self.by_label.get(label).cloned().unwrap_or_default();
        set.remove(&query);
        Ok(set)
    }

    pub fn is_gallery(&self, id: u32) -> bool {
        self.gallery_labels.contains_key(&id)
    }

    pub fn n_queries(&self) -> usize {
        self.query_labels.len()
    }

    /// Rejects lists naming ids outside the gallery or repeating an id.
    pub fn check(&self, lists: &[NeighborList]) -> Result<()> {
        let mut queries = HashSet::new();
        for l in lists {
            if !self.query_labels.contains_key(&l.query) {
                return Err(EvalError::UnknownQuery(l.query));
            }
            if !queries.insert(l.query) {
                return Err(EvalError::DuplicateQuery(l.query));
            }
            let mut seen = HashSet::new();
            for n in &l.neighbors {
                if !self.is_gallery(n.id) {
                    return Err(EvalError::UnknownId(n.id));
                }
                if !seen.insert(n.id) {
                    return Err(EvalError::DuplicateNeighbor { query: l.query, id: n.id });
                }
            }
        }
        Ok(())
    }
}

/// Mean of precision at each relevant hit over `|relevant|`; relevant items
/// missing from the ranking count as zero. `None` for an empty relevant set.
pub fn average_precision(ranked: &[u32], relevant: &HashSet<u32>) -> Option<f64> {
    ap_with_normalizer(ranked, relevant, relevant.len())
}

/// AP of the first `k` entries with the `min(|relevant|, k)` normalizer.
pub fn ap_at_k(ranked: &[u32], relevant: &HashSet<u32>, k: usize) -> Option<f64> {
    let cut = &ranked[..k.min(ranked.len())];
    ap_with_normalizer(cut, relevant, relevant.len().min(k))
}

fn ap_with_normalizer(ranked: &[u32], relevant: &HashSet<u32>, norm: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    if norm == 0 {
        return Some(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / norm as f64)
}

/// 1-based rank of the first relevant entry.
pub fn first_relevant_rank(ranked: &[u32], relevant: &HashSet<u32>) -> Option<usize> {
    ranked.iter().position(|id| relevant.contains(id)).map(|p| p + 1)
}

fn per_query<T: Send>(
    lists: &[NeighborList],
    gt: &GroundTruth,
    f: impl Fn(&[u32], &HashSet<u32>) -> Option<T> + Sync,
) -> Result<Vec<Option<T>>> {
    gt.check(lists)?;
    lists
        .par_iter()
        .map(|l| Ok(f(&l.ids(), &gt.relevant(l.query)?)))
        .collect()
}

fn mean_of(values: &[Option<f64>]) -> Result<f64> {
    let kept: Vec<f64> = values.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(EvalError::NoEvaluableQueries);
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Mean AP over queries with a non-empty relevant set, and how many were
/// left out.
pub fn mean_average_precision(lists: &[NeighborList], gt: &GroundTruth) -> Result<(f64, usize)> {
    let aps = per_query(lists, gt, average_precision)?;
    let excluded = aps.iter().filter(|a| a.is_none()).count();
    Ok((mean_of(&aps)?, excluded))
}

pub fn map_at_k(lists: &[NeighborList], gt: &GroundTruth, k: usize) -> Result<f64> {
    mean_of(&per_query(lists, gt, |r, rel| ap_at_k(r, rel, k))?)
}

/// Fraction of evaluable queries with a relevant item in the top `k`.
pub fn recall_at_k(lists: &[NeighborList], gt: &GroundTruth, ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let firsts = per_query(lists, gt, |r, rel| {
        (!rel.is_empty()).then(|| first_relevant_rank(r, rel))
    })?;
    let evaluable: Vec<Option<usize>> = firsts.into_iter().flatten().collect();
    if evaluable.is_empty() {
        return Err(EvalError::NoEvaluableQueries);
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = evaluable.iter().filter(|f| f.is_some_and(|r| r <= k)).count();
            (k, hits as f64 / evaluable.len() as f64)
        })
        .collect())
}

/// Every metric for one set of lists.
pub fn evaluate(
    lists: &[NeighborList],
    gt: &GroundTruth,
    method: &str,
    map_ks: &[usize],
    recall_ks: &[usize],
    config_digest: String,
) -> Result<EvalReport> {
    gt.check(lists)?;
    let per = per_query(lists, gt, |r, rel| {
        Some((average_precision(r, rel), first_relevant_rank(r, rel)))
    })?;
    let per_query: Vec<QueryResult> = lists
        .iter()
        .zip(per)
        .map(|(l, p)| {
            let (ap, first_rank) = p.expect("always some");
            QueryResult { id: l.query, ap, first_rank }
        })
        .collect();
    let aps: Vec<Option<f64>> = per_query.iter().map(|q| q.ap).collect();
    let excluded = aps.iter().filter(|a| a.is_none()).count();
    if excluded > 0 {
        log::warn!("{excluded} queries have no relevant gallery image and are left out");
    }
    Ok(EvalReport {
        method: method.to_string(),
        config_digest,
        map: mean_of(&aps)?,
        map_at: map_ks
            .iter()
            .map(|&k| Ok((k, map_at_k(lists, gt, k)?)))
            .collect::<Result<_>>()?,
        recall_at: recall_at_k(lists, gt, recall_ks)?,
        per_query,
        excluded_queries: excluded,
        wallclock_s: None,
    })
}

/// One line of the local-count ablation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AblationRow {
    pub locals: usize,
    pub map: f64,
    /// Mean locals per image after truncation, over queries and gallery.
    pub mean_locals: f64,
    /// Mean distinct grid cells per image at the configured stride.
    pub mean_distinct_cells: f64,
}

/// Truncates every image to its first `c` locals for each `c` in `counts`,
/// reranks the fixed global lists with `rerank` and evaluates mAP.
pub fn ablation_locals_sweep<F>(
    queries: &[ImageRecord],
    gallery: &[ImageRecord],
    global_lists: &[NeighborList],
    gt: &GroundTruth,
    counts: &[usize],
    grid_stride: u32,
    rerank: F,
) -> Result<Vec<AblationRow>>
where
    F: Fn(&NeighborList, &ImageRecord, &RecordSet) -> std::result::Result<NeighborList, RetrievalError> + Sync,
{
    counts
        .iter()
        .map(|&c| {
            let qs: Vec<ImageRecord> = queries.iter().map(|r| r.truncated(c)).collect();
            let gs = RecordSet::new(gallery.iter().map(|r| r.truncated(c)));
            let by_id: HashMap<u32, &ImageRecord> = qs.iter().map(|q| (q.id, q)).collect();
            let lists = global_lists
                .par_iter()
                .map(|l| {
                    let q = by_id.get(&l.query).ok_or(EvalError::UnknownQuery(l.query))?;
                    Ok(rerank(l, q, &gs)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let (map, _) = mean_average_precision(&lists, gt)?;
            let all: Vec<&ImageRecord> = qs.iter().chain(gs.records()).collect();
            let n = all.len().max(1) as f64;
            Ok(AblationRow {
                locals: c,
                map,
                mean_locals: all.iter().map(|r| r.locals.len()).sum::<usize>() as f64 / n,
                mean_distinct_cells: all
                    .iter()
                    .map(|r| grid_dedup_count(r, grid_stride))
                    .sum::<usize>() as f64
                    / n,
            })
        })
        .collect()
}
