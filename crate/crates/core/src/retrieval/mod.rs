//! Exact global k-NN search and top-K reranking.

mod index;
mod jsonl;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::aqe::{aqe_search, AqeConfig};
use crate::descriptor::{l2_normalize, DescriptorError, ImageRecord};
use crate::model::{score_pair, ModelError, ModelParams};

pub use index::{decode_index, encode_index, load_index, save_index};
pub use jsonl::{read_neighbors, write_neighbors};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid index: {0}")]
    Index(String),
    #[error("unknown image id {0}")]
    UnknownId(u32),
    #[error("neighbor file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RetrievalError>;

/// Which ranking produced a neighbor list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Global,
    Rrt,
    Gv,
    Aqe,
    AqeRrt,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Global,
        Method::Rrt,
        Method::Gv,
        Method::Aqe,
        Method::AqeRrt,
        Method::Oracle,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Global => "global",
            Method::Rrt => "rrt",
            Method::Gv => "gv",
            Method::Aqe => "aqe",
            Method::AqeRrt => "aqe+rrt",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub query: u32,
    pub method: Method,
    pub neighbors: Vec<Neighbor>,
    /// Set when fewer neighbors exist than were asked for.
    pub truncated: bool,
}

impl NeighborList {
    pub fn ids(&self) -> Vec<u32> {
        self.neighbors.iter().map(|n| n.id).collect()
    }
}

/// Unit-norm global vectors, one row per gallery image.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalIndex {
    dim: usize,
    ids: Vec<u32>,
    data: Vec<f32>,
    /// Built from model-projected globals rather than raw ones.
    pub projected: bool,
}

impl GlobalIndex {
    /// Rows are normalized on the way in.
    pub fn from_vectors(ids: Vec<u32>, vectors: &[Vec<f32>], projected: bool) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(RetrievalError::Index(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(dim * vectors.len());
        let mut seen = std::collections::HashSet::new();
        for (id, v) in ids.iter().zip(vectors) {
            if !seen.insert(*id) {
                return Err(RetrievalError::Index(format!("duplicate id {id}")));
            }
            if v.len() != dim {
                return Err(RetrievalError::Index(format!(
                    "id {id}: {} dims, expected {dim}",
                    v.len()
                )));
            }
            data.extend(l2_normalize(v)?);
        }
        Ok(Self {
            dim,
            ids,
            data,
            projected,
        })
    }

    /// Index over the raw global descriptors of `records`.
    pub fn build(records: &[ImageRecord]) -> Result<Self> {
        let vectors: Vec<Vec<f32>> = records.iter().map(|r| r.global.clone()).collect();
        Self::from_vectors(records.iter().map(|r| r.id).collect(), &vectors, false)
    }

    /// Index over `P_g(global)` of a model that has a global projection.
    pub fn build_projected(records: &[ImageRecord], params: &ModelParams<f32>) -> Result<Self> {
        let vectors = records
            .iter()
            .map(|r| project_global(params, &r.global))
            .collect::<Result<Vec<_>>>()?;
        Self::from_vectors(records.iter().map(|r| r.id).collect(), &vectors, true)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Row of gallery image `id`, by linear scan.
    pub fn vector(&self, id: u32) -> Option<&[f32]> {
        self.ids.iter().position(|&x| x == id).map(|i| self.row(i))
    }
}

/// `x · W + b` with the model's global projection, as a plain vector.
pub fn project_global(params: &ModelParams<f32>, global: &[f32]) -> Result<Vec<f32>> {
    let proj = params.weights.global_proj.as_ref().ok_or_else(|| {
        RetrievalError::Index("model has no global projection".into())
    })?;
    let (inp, out) = (proj.weight.shape()[0], proj.weight.shape()[1]);
    if global.len() != inp {
        return Err(RetrievalError::Index(format!(
            "global has {} dims, projection expects {inp}",
            global.len()
        )));
    }
    let w = proj.weight.data();
    Ok((0..out)
        .map(|c| {
            let dot: f64 = (0..inp).map(|k| global[k] as f64 * w[k * out + c] as f64).sum();
            (dot + proj.bias.data()[c] as f64) as f32
        })
        .collect())
}

fn by_score_then_id(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Exact top-`k` by inner product; ties go to the smaller id. The entry whose
/// id equals `query_id` is skipped.
pub fn knn_search(index: &GlobalIndex, query_id: u32, query: &[f32], k: usize) -> Result<NeighborList> {
    if query.len() != index.dim {
        return Err(RetrievalError::Index(format!(
            "query has {} dims, index has {}",
            query.len(),
            index.dim
        )));
    }
    let mut all: Vec<Neighbor> = index
        .ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| id != query_id)
        .map(|(i, &id)| Neighbor {
            id,
            score: index
                .row(i)
                .iter()
                .zip(query)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum(),
        })
        .collect();
    let truncated = k > all.len();
    if k < all.len() {
        all.select_nth_unstable_by(k, by_score_then_id);
        all.truncate(k);
    }
    all.sort_unstable_by(by_score_then_id);
    if truncated {
        log::warn!(
            "query {query_id}: asked for {k} neighbors, gallery has {}",
            all.len()
        );
    }
    Ok(NeighborList {
        query: query_id,
        method: Method::Global,
        neighbors: all,
        truncated,
    })
}

/// Global search for every query in parallel; output order follows `queries`.
pub fn search_all(index: &GlobalIndex, queries: &[ImageRecord], k: usize) -> Result<Vec<NeighborList>> {
    if index.projected {
        return Err(RetrievalError::Index(
            "projected index needs projected queries".into(),
        ));
    }
    queries
        .par_iter()
        .map(|q| knn_search(index, q.id, &l2_normalize(&q.global)?, k))
        .collect()
}

pub fn search_all_projected(
    index: &GlobalIndex,
    queries: &[ImageRecord],
    params: &ModelParams<f32>,
    k: usize,
) -> Result<Vec<NeighborList>> {
    queries
        .par_iter()
        .map(|q| knn_search(index, q.id, &l2_normalize(&project_global(params, &q.global)?)?, k))
        .collect()
}

/// Reorders the first `k` entries by `scorer` (descending, ties keep their
/// prior order) and leaves the rest untouched.
pub fn rerank_topk<E, S>(list: &NeighborList, k: usize, method: Method, scorer: S) -> std::result::Result<NeighborList, E>
where
    E: Send,
    S: Fn(u32) -> std::result::Result<f64, E> + Sync,
{
    let k = k.min(list.neighbors.len());
    let (head, tail) = list.neighbors.split_at(k);
    let mut scored: Vec<Neighbor> = head
        .par_iter()
        .map(|n| scorer(n.id).map(|score| Neighbor { id: n.id, score }))
        .collect::<std::result::Result<_, E>>()?;
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored.extend_from_slice(tail);
    Ok(NeighborList {
        query: list.query,
        method: if k == 0 { list.method } else { method },
        neighbors: scored,
        truncated: list.truncated,
    })
}

/// Images by id.
#[derive(Debug, Clone, Default)]
pub struct RecordSet {
    records: Vec<ImageRecord>,
    pos: HashMap<u32, usize>,
}

impl RecordSet {
    pub fn new(records: impl IntoIterator<Item = ImageRecord>) -> Self {
        let records: Vec<ImageRecord> = records.into_iter().collect();
        let pos = records.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        Self { records, pos }
    }

    pub fn get(&self, id: u32) -> Result<&ImageRecord> {
        self.pos
            .get(&id)
            .map(|&i| &self.records[i])
            .ok_or(RetrievalError::UnknownId(id))
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Reranks with the transformer's pair similarity; both images are cut to
/// the model's local capacity.
pub fn rrt_rerank(
    list: &NeighborList,
    query: &ImageRecord,
    gallery: &RecordSet,
    params: &ModelParams<f32>,
    k: usize,
    method: Method,
) -> Result<NeighborList> {
    let cap = params.config.max_locals;
    let q = query.truncated(cap);
    rerank_topk(list, k, method, |id| {
        let g = gallery.get(id)?.truncated(cap);
        Ok(score_pair(params, &q, &g)?.similarity)
    })
}

/// α-QE over the whole gallery, then transformer reranking of its top `k`.
pub fn aqe_then_rrt(
    index: &GlobalIndex,
    query: &ImageRecord,
    gallery: &RecordSet,
    params: &ModelParams<f32>,
    aqe: &AqeConfig,
    k: usize,
) -> Result<NeighborList> {
    let expanded = aqe_search(index, query.id, &l2_normalize(&query.global)?, aqe)?;
    rrt_rerank(&expanded, query, gallery, params, k, Method::AqeRrt)
}
