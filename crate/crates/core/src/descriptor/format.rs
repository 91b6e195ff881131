//! Little-endian descriptor file:
//!
//! ```text
//! "RRTD" | u32 version
//! u32 d_g_raw | u16 d_l | u8 n_scales | n_scales × f32 scale | u32 n_images
//! per image: u32 id | u32 label | d_g_raw × f32 global | u16 n_locals
//!   per local: d_l × f32 vec | f32 u | f32 v | u8 scale_index
//! ```

use std::path::Path;

use super::{Dataset, DescriptorError, DescriptorSpace, ImageRecord, LocalDescriptor, Result};

pub const MAGIC: &[u8; 4] = b"RRTD";
pub const VERSION: u32 = 1;

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    dataset.validate()?;
    let space = &dataset.space;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&space.d_g_raw.to_le_bytes());
    out.extend_from_slice(&space.d_l.to_le_bytes());
    out.push(space.n_scales() as u8);
    for s in &space.scale_values {
        out.extend_from_slice(&s.to_le_bytes());
    }
    let n = u32::try_from(dataset.records.len())
        .map_err(|_| DescriptorError::Invalid("too many images".into()))?;
    out.extend_from_slice(&n.to_le_bytes());
    for r in &dataset.records {
        out.extend_from_slice(&r.id.to_le_bytes());
        out.extend_from_slice(&r.label.to_le_bytes());
        for x in &r.global {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&(r.locals.len() as u16).to_le_bytes());
        for l in &r.locals {
            for x in &l.vec {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.extend_from_slice(&l.u.to_le_bytes());
            out.extend_from_slice(&l.v.to_le_bytes());
            out.push(l.scale_index);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(DescriptorError::Format {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(DescriptorError::Format {
            offset: 0,
            reason: "bad magic, expected RRTD".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(DescriptorError::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let d_g_raw = r.u32("d_g_raw")?;
    let d_l = r.u16("d_l")?;
    let n_scales = r.u8("n_scales")? as usize;
    let scale_values = r.f32s(n_scales, "scale values")?;
    let n_images = r.u32("image count")? as usize;
    let space = DescriptorSpace {
        d_g_raw,
        d_l,
        scale_values,
    };

    let mut records = Vec::with_capacity(n_images.min(1 << 20));
    for _ in 0..n_images {
        let id = r.u32("image id")?;
        let label = r.u32("label")?;
        let global = r.f32s(d_g_raw as usize, "global descriptor")?;
        let n_locals = r.u16("local count")? as usize;
        let mut locals = Vec::with_capacity(n_locals);
        for _ in 0..n_locals {
            let vec = r.f32s(d_l as usize, "local descriptor")?;
            let u = f32::from_le_bytes(r.take(4, "u")?.try_into().unwrap());
            let v = f32::from_le_bytes(r.take(4, "v")?.try_into().unwrap());
            let at = r.pos;
            let scale_index = r.u8("scale index")?;
            if scale_index as usize >= n_scales {
                return Err(DescriptorError::Format {
                    offset: at,
                    reason: format!("scale index {scale_index} out of {n_scales} scales"),
                });
            }
            locals.push(LocalDescriptor {
                vec,
                u,
                v,
                scale_index,
            });
        }
        records.push(ImageRecord {
            id,
            label,
            global,
            locals,
        });
    }
    if r.pos != buf.len() {
        return Err(DescriptorError::Format {
            offset: r.pos,
            reason: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    let dataset = Dataset { space, records };
    dataset.validate()?;
    Ok(dataset)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(dataset)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}
