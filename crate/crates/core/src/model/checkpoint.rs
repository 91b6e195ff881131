use std::collections::HashMap;
use std::path::Path;

use rrt_autograd::{Scalar, Tensor};

use super::{ModelConfig, ModelError, ModelParams, Result, Weights};

pub const MAGIC: &[u8; 4] = b"RRTM";
pub const VERSION: u32 = 1;

const FLAG_POS_EMBED: u8 = 1;
const FLAG_GLOBAL_TOKEN: u8 = 1 << 1;
const FLAG_SCALE_EMBED: u8 = 1 << 2;
const FLAG_MLP_RESIDUAL: u8 = 1 << 3;

fn integrity(msg: impl Into<String>) -> ModelError {
    ModelError::Integrity(msg.into())
}

/// Serializes config and every tensor (as f32) in canonical order.
pub fn encode_checkpoint<F: Scalar>(params: &ModelParams<F>) -> Result<Vec<u8>> {
    let c = &params.config;
    c.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(c.max_locals as u32).to_le_bytes());
    out.extend_from_slice(&(c.dim as u16).to_le_bytes());
    out.push(c.heads as u8);
    out.push(c.head_dim as u8);
    out.push(c.layers as u8);
    out.extend_from_slice(&(c.mlp_dim as u16).to_le_bytes());
    out.push(c.n_scales as u8);
    out.extend_from_slice(&(c.global_dim as u32).to_le_bytes());
    let mut flags = 0u8;
    for (on, bit) in [
        (c.use_pos_embed, FLAG_POS_EMBED),
        (c.use_global_token, FLAG_GLOBAL_TOKEN),
        (c.use_scale_embed, FLAG_SCALE_EMBED),
        (c.mlp_residual, FLAG_MLP_RESIDUAL),
    ] {
        if on {
            flags |= bit;
        }
    }
    out.push(flags);
    let named = params.weights.named();
    out.extend_from_slice(&(named.len() as u16).to_le_bytes());
    for (name, t) in named {
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(integrity(format!(
                "truncated at byte {}: need {n} more bytes",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint<F: Scalar>(buf: &[u8]) -> Result<ModelParams<F>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(integrity("bad magic, not a model checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(integrity(format!("unsupported checkpoint version {version}")));
    }
    let max_locals = r.u32()? as usize;
    let dim = r.u16()? as usize;
    let heads = r.u8()? as usize;
    let head_dim = r.u8()? as usize;
    let layers = r.u8()? as usize;
    let mlp_dim = r.u16()? as usize;
    let n_scales = r.u8()? as usize;
    let global_dim = r.u32()? as usize;
    let flags = r.u8()?;
    let config = ModelConfig {
        max_locals,
        dim,
        heads,
        head_dim,
        layers,
        mlp_dim,
        n_scales,
        global_dim,
        use_pos_embed: flags & FLAG_POS_EMBED != 0,
        use_global_token: flags & FLAG_GLOBAL_TOKEN != 0,
        use_scale_embed: flags & FLAG_SCALE_EMBED != 0,
        mlp_residual: flags & FLAG_MLP_RESIDUAL != 0,
    };
    config
        .validate()
        .map_err(|e| integrity(format!("stored config rejected: {e}")))?;

    let count = r.u16()? as usize;
    let mut table: HashMap<String, (Vec<usize>, Vec<F>)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let len = r.u8()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| integrity("tensor name is not ASCII"))?
            .to_string();
        let ndim = r.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel.checked_mul(4).ok_or_else(|| integrity("tensor too large"))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| F::of_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        if table.insert(name.clone(), (shape, data)).is_some() {
            return Err(integrity(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(integrity(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let expected = Weights::shapes(&config);
    if expected.named().len() != table.len() {
        return Err(integrity(format!(
            "config needs {} tensors, file has {}",
            expected.named().len(),
            table.len()
        )));
    }
    let weights = expected.try_map(&mut |name, shape: &Vec<usize>| {
        let (stored, data) = table
            .remove(name)
            .ok_or_else(|| integrity(format!("missing tensor {name}")))?;
        if &stored != shape {
            return Err(integrity(format!(
                "tensor {name} has shape {stored:?}, config implies {shape:?}"
            )));
        }
        Ok(Tensor::param(stored, data)?)
    })?;
    Ok(ModelParams { config, weights })
}

pub fn save_checkpoint<F: Scalar>(params: &ModelParams<F>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)?)?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<ModelParams<F>> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{param_count, score_pair};
    use crate::descriptor::synth::{synth_generate, SynthConfig};

    fn tiny_params() -> ModelParams<f32> {
        ModelParams::init(&ModelConfig::tiny(), 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = tiny_params();
        let back: ModelParams<f32> = decode_checkpoint(&encode_checkpoint(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(param_count(&back.config), p.num_params());
    }

    #[test]
    fn round_trip_preserves_scores() {
        let cfg = SynthConfig {
            d_l: 8,
            ..SynthConfig::small_test()
        };
        let data = synth_generate(&cfg).unwrap();
        let mut mc = ModelConfig::tiny();
        mc.global_dim = cfg.d_g_raw as usize;
        mc.max_locals = cfg.locals_per_image;
        let p = ModelParams::<f32>::init(&mc, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rrtm");
        save_checkpoint(&p, &path).unwrap();
        let back: ModelParams<f32> = load_checkpoint(&path).unwrap();
        let (a, b) = (&data.queries[0], &data.gallery[0]);
        let s0 = score_pair(&p, a, b).unwrap();
        let s1 = score_pair(&back, a, b).unwrap();
        assert_eq!(s0.logit.to_bits(), s1.logit.to_bits());
    }

    #[test]
    fn flags_survive() {
        let cfg = ModelConfig {
            use_pos_embed: true,
            use_global_token: false,
            use_scale_embed: false,
            mlp_residual: true,
            ..ModelConfig::tiny()
        };
        let p = ModelParams::<f32>::init(&cfg, 1).unwrap();
        let back: ModelParams<f32> = decode_checkpoint(&encode_checkpoint(&p).unwrap()).unwrap();
        assert_eq!(back.config, cfg);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = encode_checkpoint(&tiny_params()).unwrap();
        for cut in [0, 3, 10, 30, bytes.len() - 1] {
            assert!(matches!(
                decode_checkpoint::<f32>(&bytes[..cut]),
                Err(ModelError::Integrity(_))
            ));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint::<f32>(&bad), Err(ModelError::Integrity(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_checkpoint::<f32>(&extra), Err(ModelError::Integrity(_))));
        // shrink the stored mlp width: every mlp tensor now disagrees with the config
        let mut shape_clash = bytes;
        shape_clash[17] = 15;
        assert!(matches!(
            decode_checkpoint::<f32>(&shape_clash),
            Err(ModelError::Integrity(_))
        ));
    }
}
