use std::path::Path;

use super::{GlobalIndex, Result, RetrievalError};

pub const MAGIC: &[u8; 4] = b"RRTI";
pub const VERSION: u32 = 1;

/// Little-endian: magic, u32 version, u32 rows, u32 dim, u8 projected,
/// then per row a u32 id and `dim` f32 values.
pub fn encode_index(index: &GlobalIndex) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + index.len() * (4 + 4 * index.dim));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(index.len() as u32).to_le_bytes());
    out.extend_from_slice(&(index.dim as u32).to_le_bytes());
    out.push(index.projected as u8);
    for (i, id) in index.ids.iter().enumerate() {
        out.extend_from_slice(&id.to_le_bytes());
        for x in index.row(i) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_index(buf: &[u8]) -> Result<GlobalIndex> {
    let bad = |m: String| RetrievalError::Index(m);
    if buf.len() < 17 || &buf[..4] != MAGIC {
        return Err(bad("not an index file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(bad(format!("unsupported index version {}", u32_at(4))));
    }
    let (n, dim) = (u32_at(8) as usize, u32_at(12) as usize);
    let projected = match buf[16] {
        0 => false,
        1 => true,
        f => return Err(bad(format!("bad projected flag {f}"))),
    };
    let row = 4 + 4 * dim;
    if buf.len() != 17 + n * row {
        return Err(bad(format!(
            "expected {} bytes for {n} rows of {dim} dims, found {}",
            17 + n * row,
            buf.len()
        )));
    }
    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    for r in 0..n {
        let o = 17 + r * row;
        ids.push(u32_at(o));
        data.extend(
            buf[o + 4..o + row]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
        );
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(id) = ids.iter().find(|id| !seen.insert(**id)) {
        return Err(bad(format!("duplicate id {id}")));
    }
    Ok(GlobalIndex {
        dim,
        ids,
        data,
        projected,
    })
}

pub fn save_index(index: &GlobalIndex, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_index(index))?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<GlobalIndex> {
    decode_index(&std::fs::read(path)?)
}
