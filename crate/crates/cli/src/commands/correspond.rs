use std::io::Write;

use rrt_core::model::attention_correspondences;
use rrt_core::ImageRecord;
use serde_json::json;

use super::rerank::model_similarity;
use crate::files::{digest, load_params, load_records, write_json};
use crate::{CliError, CorrespondArgs};

fn find(id: u32, first: &[ImageRecord], second: &[ImageRecord]) -> Result<ImageRecord, CliError> {
    first
        .iter()
        .chain(second)
        .find(|r| r.id == id)
        .cloned()
        .ok_or_else(|| CliError::Data(format!("image {id} is in neither descriptor file")))
}

pub fn correspond(a: &CorrespondArgs) -> Result<(), CliError> {
    let params = load_params(&a.checkpoint)?;
    let (_, queries) = load_records(&a.data.queries_path())?;
    let (_, gallery) = load_records(&a.data.gallery_path())?;
    let cap = params.config.max_locals;
    let q = find(a.query_id, &queries, &gallery)?.truncated(cap);
    let g = find(a.gallery_id, &gallery, &queries)?.truncated(cap);
    let similarity = model_similarity(&params, &q, &g)?;
    let matches: Vec<_> = attention_correspondences(&params, &q, &g)?
        .into_iter()
        .map(|c| {
            let (lq, lg) = (&q.locals[c.a], &g.locals[c.b]);
            json!({
                "query_local": c.a,
                "gallery_local": c.b,
                "weight": c.weight,
                "query_pos": [lq.u, lq.v],
                "gallery_pos": [lg.u, lg.v],
                "query_scale": lq.scale_index,
                "gallery_scale": lg.scale_index,
            })
        })
        .collect();
    let config = json!({ "query_id": a.query_id, "gallery_id": a.gallery_id, "model": params.config });
    let value = json!({
        "config_digest": digest("correspond", &config),
        "query_id": a.query_id,
        "gallery_id": a.gallery_id,
        "similarity": similarity,
        "matches": matches,
    });
    match &a.out {
        Some(path) => write_json(path, &value)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, &value)?;
            writeln!(stdout)?;
        }
    }
    Ok(())
}
