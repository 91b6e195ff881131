use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub id: u32,
    /// `None` when the query has no relevant gallery image.
    pub ap: Option<f64>,
    pub first_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub config_digest: String,
    pub map: f64,
    pub map_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub per_query: Vec<QueryResult>,
    pub excluded_queries: usize,
    /// Left empty unless timing was requested, so reports stay reproducible.
    pub wallclock_s: Option<f64>,
}

/// sha256 over the compact JSON of `config` with object keys sorted.
pub fn config_digest(config: &impl Serialize) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    let text = serde_json::to_string(&value).expect("value serializes");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_report_json(report: &EvalReport, mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_report_json(input: impl Read) -> Result<EvalReport> {
    Ok(serde_json::from_reader(input)?)
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Columns `query,ap,first_rank`; the last row is `mean,<mAP>,` over the
/// evaluated queries.
pub fn write_report_csv(report: &EvalReport, mut out: impl Write) -> Result<()> {
    writeln!(out, "query,ap,first_rank")?;
    for q in &report.per_query {
        writeln!(out, "{},{},{}", q.id, opt(q.ap), opt(q.first_rank))?;
    }
    writeln!(out, "mean,{},", report.map)?;
    Ok(())
}
