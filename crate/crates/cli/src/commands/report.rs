use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rrt_core::baselines::gv_score;
use rrt_core::eval::{ablation_locals_sweep, evaluate, write_report_csv, write_report_json, EvalReport};
use rrt_core::retrieval::{rerank_topk, rrt_rerank, RetrievalError};
use rrt_core::{Method, NeighborList};
use serde_json::{json, Value};

use super::ground_truth;
use super::rerank::{oracle, require_checkpoint};
use crate::files::{self, create, load_lists, load_records, meta_path};
use crate::{AblateArgs, AblationScorer, CliError, CompareArgs, EvalArgs, MetricArgs, ReportFormat};

/// Method tag shared by every list of a file.
fn method_of(lists: &[NeighborList]) -> String {
    let mut tags = lists.iter().map(|l| l.method);
    match tags.next() {
        Some(first) if tags.all(|m| m == first) => first.to_string(),
        Some(_) => "mixed".into(),
        None => "empty".into(),
    }
}

/// Digest recorded next to a neighbor file, if any.
fn source_digest(neighbors: &Path) -> Option<Value> {
    let text = std::fs::read_to_string(meta_path(neighbors)).ok()?;
    let meta: Value = serde_json::from_str(&text).ok()?;
    meta.get("config_digest").cloned()
}

fn score(
    neighbors: &Path,
    gt: &rrt_core::eval::GroundTruth,
    metrics: &MetricArgs,
) -> Result<(EvalReport, Value), CliError> {
    let lists = load_lists(neighbors)?;
    let config = json!({ "metrics": metrics, "source": source_digest(neighbors) });
    let report = evaluate(
        &lists,
        gt,
        &method_of(&lists),
        &metrics.map_k,
        &metrics.recall_k,
        files::digest("eval", &config),
    )?;
    Ok((report, config))
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let gt = ground_truth(&a.data)?;
    let (mut report, config) = score(&a.neighbors, &gt, &a.metrics)?;
    if a.timing {
        report.wallclock_s = Some(start.elapsed().as_secs_f64());
    }
    let format = a.format.unwrap_or_else(|| {
        match a.out.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    });
    let mut out = create(&a.out)?;
    match format {
        ReportFormat::Json => write_report_json(&report, &mut out)?,
        ReportFormat::Csv => write_report_csv(&report, &mut out)?,
    }
    out.flush()?;
    files::write_meta(&a.out, "eval", &config)?;
    log::info!("{}: mAP {:.4}", report.method, report.map);
    Ok(())
}

pub fn compare(a: &CompareArgs) -> Result<(), CliError> {
    let gt = ground_truth(&a.data)?;
    let mut header = vec!["method".to_string(), "mAP".to_string()];
    header.extend(a.metrics.map_k.iter().map(|k| format!("mAP@{k}")));
    header.extend(a.metrics.recall_k.iter().map(|k| format!("R@{k}")));
    header.push("file".into());
    let mut rows = vec![header];
    let mut sources = Vec::new();
    for path in &a.neighbors {
        let (r, config) = score(path, &gt, &a.metrics)?;
        let mut row = vec![r.method.clone(), format!("{:.4}", r.map)];
        row.extend(r.map_at.values().map(|v| format!("{v:.4}")));
        row.extend(r.recall_at.values().map(|v| format!("{v:.4}")));
        row.push(path.display().to_string());
        rows.push(row);
        sources.push(config["source"].clone());
    }
    let digest = files::digest("compare", &json!({ "metrics": a.metrics, "sources": sources }));

    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut text = format!("# config_digest {digest}\n");
    for row in &rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        text.push_str(cells.join("  ").trim_end());
        text.push('\n');
    }
    match &a.out {
        Some(path) => {
            let mut out = create(path)?;
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn default_counts(cap: usize) -> Vec<usize> {
    let mut c = vec![0, cap / 8, cap / 4, cap / 2, cap];
    c.dedup();
    c
}

pub fn ablate(a: &AblateArgs) -> Result<(), CliError> {
    let lists = load_lists(&a.neighbors)?;
    let (_, queries) = load_records(&a.data.queries_path())?;
    let (_, gallery) = load_records(&a.data.gallery_path())?;
    let gt = ground_truth(&a.data)?;
    if a.grid_stride == 0 {
        return Err(CliError::Config("--grid-stride must be positive".into()));
    }
    let params = match a.scorer {
        AblationScorer::Rrt => Some(require_checkpoint(a.checkpoint.as_deref(), "rrt")?),
        _ => None,
    };
    let oracle = match a.scorer {
        AblationScorer::Oracle => Some(oracle(&a.data, a.scorers.min_cos)?),
        _ => None,
    };
    let cap = match &params {
        Some(p) => p.config.max_locals,
        None => queries.iter().chain(&gallery).map(|r| r.locals.len()).max().unwrap_or(0),
    };
    let counts = a.counts.clone().unwrap_or_else(|| default_counts(cap));
    let gv = a.scorers.gv();
    let k = a.k;

    let rows = ablation_locals_sweep(&queries, &gallery, &lists, &gt, &counts, a.grid_stride, |list, q, gs| {
        match a.scorer {
            AblationScorer::Rrt => rrt_rerank(list, q, gs, params.as_ref().expect("loaded"), k, Method::Rrt),
            AblationScorer::Gv => rerank_topk(list, k, Method::Gv, |id| -> Result<f64, RetrievalError> {
                Ok(gv_score(q, gs.get(id)?, &gv) as f64)
            }),
            AblationScorer::Oracle => {
                let oracle = oracle.as_ref().expect("loaded");
                rerank_topk(list, k, Method::Oracle, |id| -> Result<f64, RetrievalError> {
                    Ok(oracle.score(q, gs.get(id)?) as f64)
                })
            }
        }
    })?;

    let config = json!({
        "scorer": a.scorer,
        "counts": counts,
        "grid_stride": a.grid_stride,
        "k": k,
        "scorers": a.scorers,
        "model": params.as_ref().map(|p| &p.config),
        "source": source_digest(&a.neighbors),
    });
    files::write_json(
        &a.out,
        &json!({
            "config_digest": files::digest("ablate", &config),
            "scorer": a.scorer,
            "grid_stride": a.grid_stride,
            "k": k,
            "rows": rows,
        }),
    )?;
    for r in &rows {
        log::info!(
            "locals {}: mAP {:.4}, mean locals {:.2}, mean cells {:.2}",
            r.locals, r.map, r.mean_locals, r.mean_distinct_cells
        );
    }
    Ok(())
}
