use serde::{Deserialize, Serialize};

use crate::descriptor::l2_normalize;
use crate::retrieval::{knn_search, GlobalIndex, Method, NeighborList, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AqeConfig {
    /// Number of top neighbors folded into the query.
    pub nqe: usize,
    pub alpha: f64,
}

impl Default for AqeConfig {
    fn default() -> Self {
        Self { nqe: 2, alpha: 0.3 }
    }
}

/// Weight `max(sim, 0)^alpha` of each of the first `nqe` neighbors.
pub fn aqe_weights(sims: &[f64], nqe: usize, alpha: f64) -> Vec<f64> {
    sims.iter().take(nqe).map(|&s| s.max(0.0).powf(alpha)).collect()
}

/// `normalize(q + Σ w_i · d_i)` over the first `nqe` neighbors, which must be
/// sorted by similarity, highest first.
pub fn alpha_qe_expand(
    query: &[f32],
    neighbors: &[(&[f32], f64)],
    nqe: usize,
    alpha: f64,
) -> crate::descriptor::Result<Vec<f32>> {
    let sims: Vec<f64> = neighbors.iter().map(|n| n.1).collect();
    let mut acc: Vec<f64> = query.iter().map(|&x| x as f64).collect();
    for ((vec, _), w) in neighbors.iter().zip(aqe_weights(&sims, nqe, alpha)) {
        for (a, &x) in acc.iter_mut().zip(vec.iter()) {
            *a += w * x as f64;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(crate::descriptor::DescriptorError::ZeroVector);
    }
    Ok(acc.iter().map(|x| (x / norm) as f32).collect())
}

/// Expands `query` with its top neighbors and ranks the whole gallery again.
pub fn aqe_search(index: &GlobalIndex, query_id: u32, query: &[f32], cfg: &AqeConfig) -> Result<NeighborList> {
    let query = l2_normalize(query)?;
    let first = knn_search(index, query_id, &query, cfg.nqe)?;
    let neighbors: Vec<(&[f32], f64)> = first
        .neighbors
        .iter()
        .map(|n| (index.vector(n.id).expect("id from index"), n.score))
        .collect();
    let expanded = alpha_qe_expand(&query, &neighbors, cfg.nqe, cfg.alpha)?;
    let mut out = knn_search(index, query_id, &expanded, index.len())?;
    out.method = Method::Aqe;
    out.truncated = false;
    Ok(out)
}
