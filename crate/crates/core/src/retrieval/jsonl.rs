use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::Deserialize;

use super::{Method, Neighbor, NeighborList, Result, RetrievalError};

/// One list per line: `{"query": id, "method": tag, "neighbors": [[id, score], ...]}`.
/// Scores use the shortest exponent form that parses back to the same bits.
pub fn write_neighbors(lists: &[NeighborList], mut out: impl Write) -> std::io::Result<()> {
    let mut line = String::new();
    for l in lists {
        line.clear();
        write!(line, "{{\"query\": {}, \"method\": \"{}\", \"neighbors\": [", l.query, l.method).unwrap();
        for (i, n) in l.neighbors.iter().enumerate() {
            if i > 0 {
                line.push_str(", ");
            }
            write!(line, "[{}, {:e}]", n.id, n.score).unwrap();
        }
        line.push_str("]}\n");
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawList {
    query: u32,
    method: String,
    neighbors: Vec<(u32, f64)>,
}

pub fn read_neighbors(input: impl BufRead) -> Result<Vec<NeighborList>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| RetrievalError::Parse { line: i + 1, reason };
        let raw: RawList = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let method: Method = raw.method.parse().map_err(err)?;
        let mut seen = std::collections::HashSet::new();
        if let Some((id, _)) = raw.neighbors.iter().find(|(id, _)| !seen.insert(*id)) {
            return Err(err(format!("duplicate neighbor id {id}")));
        }
        out.push(NeighborList {
            query: raw.query,
            method,
            neighbors: raw
                .neighbors
                .into_iter()
                .map(|(id, score)| Neighbor { id, score })
                .collect(),
            truncated: false,
        });
    }
    Ok(out)
}
