use rayon::prelude::*;
use rrt_core::baselines::{aqe_search, gv_score, AqeConfig, GvConfig};
use rrt_core::descriptor::synth::PartOracle;
use rrt_core::model::score_pair;
use rrt_core::retrieval::{aqe_then_rrt, rerank_topk, rrt_rerank, RetrievalError};
use rrt_core::{GlobalIndex, ImageRecord, Method, ModelParams, NeighborList, RecordSet};
use serde_json::json;

use super::by_id;
use crate::files::{load_lists, load_params, load_records, save_lists, write_meta};
use crate::{CliError, RerankArgs, Scorer, ScorerArgs};

impl ScorerArgs {
    pub(crate) fn gv(&self) -> GvConfig {
        GvConfig {
            iterations: self.ransac_iters,
            threshold: self.ransac_thresh,
            ratio: self.ratio,
            seed: self.seed,
        }
    }

    pub(crate) fn aqe(&self) -> AqeConfig {
        AqeConfig {
            nqe: self.nqe,
            alpha: self.alpha,
        }
    }
}

pub(crate) fn require_checkpoint(
    path: Option<&std::path::Path>,
    scorer: &str,
) -> Result<ModelParams<f32>, CliError> {
    match path {
        Some(p) => load_params(p),
        None => Err(CliError::Config(format!("the {scorer} scorer needs --checkpoint"))),
    }
}

pub(crate) fn oracle(a: &crate::DataArgs, min_cos: f32) -> Result<PartOracle, CliError> {
    let (_, parts) = load_records(&a.parts_path())?;
    Ok(PartOracle::new(&parts, min_cos)?)
}

fn cut(records: Vec<ImageRecord>, cap: Option<usize>) -> Vec<ImageRecord> {
    match cap {
        Some(c) => records.iter().map(|r| r.truncated(c)).collect(),
        None => records,
    }
}

/// Keeps the leading entries so the output is as long as the input.
fn same_length(mut out: NeighborList, input: &NeighborList) -> NeighborList {
    out.neighbors.truncate(input.neighbors.len());
    out.truncated = input.truncated;
    out
}

pub fn rerank(a: &RerankArgs) -> Result<(), CliError> {
    let lists = load_lists(&a.neighbors)?;
    let (_, queries) = load_records(&a.data.queries_path())?;
    let (_, gallery) = load_records(&a.data.gallery_path())?;
    let needs_model = matches!(a.scorer, Scorer::Rrt | Scorer::AqeRrt);
    let params = if needs_model && a.k > 0 {
        let name = serde_json::to_value(a.scorer)?;
        Some(require_checkpoint(a.checkpoint.as_deref(), name.as_str().unwrap_or("rrt"))?)
    } else {
        None
    };
    let queries = cut(queries, a.locals_max);
    let gallery = RecordSet::new(cut(gallery, a.locals_max));
    let by_id = by_id(&queries);
    let oracle = match a.scorer {
        Scorer::Oracle if a.k > 0 => Some(oracle(&a.data, a.scorers.min_cos)?),
        _ => None,
    };
    let index = match a.scorer {
        Scorer::Aqe | Scorer::AqeRrt if a.k > 0 => Some(GlobalIndex::build(gallery.records())?),
        _ => None,
    };
    let gv = a.scorers.gv();
    let aqe = a.scorers.aqe();

    let out = lists
        .par_iter()
        .map(|list| -> Result<NeighborList, CliError> {
            let q = *by_id
                .get(&list.query)
                .ok_or_else(|| CliError::Data(format!("query {} is not in the query file", list.query)))?;
            if a.k == 0 {
                return Ok(list.clone());
            }
            let reranked = match a.scorer {
                Scorer::Rrt => rrt_rerank(list, q, &gallery, params.as_ref().expect("loaded"), a.k, Method::Rrt)?,
                Scorer::Gv => rerank_topk(list, a.k, Method::Gv, |id| -> Result<f64, RetrievalError> {
                    Ok(gv_score(q, gallery.get(id)?, &gv) as f64)
                })?,
                Scorer::Oracle => {
                    let oracle = oracle.as_ref().expect("loaded");
                    rerank_topk(list, a.k, Method::Oracle, |id| -> Result<f64, RetrievalError> {
                        Ok(oracle.score(q, gallery.get(id)?) as f64)
                    })?
                }
                Scorer::Aqe => {
                    let index = index.as_ref().expect("built");
                    same_length(aqe_search(index, q.id, &q.global, &aqe)?, list)
                }
                Scorer::AqeRrt => {
                    let index = index.as_ref().expect("built");
                    let params = params.as_ref().expect("loaded");
                    same_length(aqe_then_rrt(index, q, &gallery, params, &aqe, a.k)?, list)
                }
            };
            Ok(reranked)
        })
        .collect::<Result<Vec<_>, _>>()?;

    save_lists(&a.out, &out)?;
    write_meta(
        &a.out,
        "rerank",
        &json!({
            "scorer": a.scorer,
            "k": a.k,
            "locals_max": a.locals_max,
            "scorers": a.scorers,
            "model": params.as_ref().map(|p| &p.config),
        }),
    )?;
    Ok(())
}

/// Similarity of one pair under the model, both sides cut to its capacity.
pub(crate) fn model_similarity(
    params: &ModelParams<f32>,
    q: &ImageRecord,
    g: &ImageRecord,
) -> Result<f64, CliError> {
    let cap = params.config.max_locals;
    Ok(score_pair(params, &q.truncated(cap), &g.truncated(cap))?.similarity)
}
