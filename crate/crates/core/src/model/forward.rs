use rayon::prelude::*;
use rrt_autograd::{Scalar, Tape, Tensor, Var};

use super::{LayerWeights, ModelConfig, ModelError, ModelParams, Result, Weights, LAYER_NORM_EPS};
use crate::descriptor::ImageRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    A,
    B,
}

/// What a row of the token sequence holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Cls,
    Sep,
    Global(Side),
    /// Local `i` of the given image, in stored order.
    Local(Side, usize),
    Pad,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<F: Scalar> {
    /// `[T, d]`
    pub tokens: Tensor<F>,
    pub valid_mask: Vec<bool>,
    pub kinds: Vec<TokenKind>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub logit: f64,
    pub similarity: f64,
}

/// Registers every parameter of `params` as a leaf of `tape`.
pub fn bind<'a, F: Scalar>(tape: &mut Tape<'a, F>, params: &'a ModelParams<F>) -> Weights<Var> {
    params
        .weights
        .try_map(&mut |_, t| Ok::<_, std::convert::Infallible>(tape.leaf(t)))
        .unwrap_or_else(|e| match e {})
}

fn check_record(cfg: &ModelConfig, r: &ImageRecord) -> Result<()> {
    if r.locals.len() > cfg.max_locals {
        return Err(ModelError::Input(format!(
            "image {} has {} locals, model takes at most {}",
            r.id,
            r.locals.len(),
            cfg.max_locals
        )));
    }
    if cfg.use_global_token && r.global.len() != cfg.global_dim {
        return Err(ModelError::Input(format!(
            "image {}: global has {} dims, model expects {}",
            r.id,
            r.global.len(),
            cfg.global_dim
        )));
    }
    for l in &r.locals {
        if l.vec.len() != cfg.dim {
            return Err(ModelError::Input(format!(
                "image {}: local has {} dims, model expects {}",
                r.id,
                l.vec.len(),
                cfg.dim
            )));
        }
        if l.scale_index as usize >= cfg.n_scales {
            return Err(ModelError::Input(format!(
                "image {}: scale index {} out of {} scales",
                r.id, l.scale_index, cfg.n_scales
            )));
        }
    }
    Ok(())
}

/// Fixed 2-D sinusoidal code of a pixel position, `d / 4` frequencies per axis.
fn position_code<F: Scalar>(d: usize, u: f32, v: f32) -> Vec<F> {
    let n = d / 4;
    let mut out = Vec::with_capacity(d);
    for k in 0..n {
        let w = 1.0 / 10000f64.powf(k as f64 / n as f64);
        let (u, v) = (u as f64 * w, v as f64 * w);
        out.extend([u.sin(), u.cos(), v.sin(), v.cos()].map(F::of_f64));
    }
    out
}

fn cast_slice<F: Scalar>(x: &[f32]) -> impl Iterator<Item = F> + '_ {
    x.iter().map(|&v| F::of_f64(v as f64))
}

/// Token rows for one image: optional global token then its locals, followed
/// by zero padding when `padded`.
fn image_tokens<F: Scalar>(
    tape: &mut Tape<'_, F>,
    w: &Weights<Var>,
    cfg: &ModelConfig,
    r: &ImageRecord,
    side: Side,
    padded: bool,
    parts: &mut Vec<Var>,
    kinds: &mut Vec<TokenKind>,
) -> Result<()> {
    let d = cfg.dim;
    let (seg_g, seg_l) = match side {
        Side::A => (w.seg_global_a, w.seg_local_a),
        Side::B => (w.seg_global_b, w.seg_local_b),
    };
    if let (Some(proj), Some(seg)) = (&w.global_proj, seg_g) {
        let g = tape.constant(vec![1, cfg.global_dim], cast_slice(&r.global).collect())?;
        let g = tape.linear(g, proj.weight, proj.bias)?;
        parts.push(tape.add_row(g, seg)?);
        kinds.push(TokenKind::Global(side));
    }
    let n = r.locals.len();
    if n > 0 {
        let mut data: Vec<F> = r.locals.iter().flat_map(|l| cast_slice(&l.vec)).collect();
        if cfg.use_pos_embed {
            for (row, l) in data.chunks_mut(d).zip(&r.locals) {
                for (x, p) in row.iter_mut().zip(position_code::<F>(d, l.u, l.v)) {
                    *x = *x + p;
                }
            }
        }
        let mut x = tape.constant(vec![n, d], data)?;
        if let Some(table) = w.scale_embed {
            let idx: Vec<usize> = r.locals.iter().map(|l| l.scale_index as usize).collect();
            let s = tape.gather(table, &idx)?;
            x = tape.add(x, s)?;
        }
        parts.push(tape.add_row(x, seg_l)?);
        kinds.extend((0..n).map(|i| TokenKind::Local(side, i)));
    }
    if padded && n < cfg.max_locals {
        let pad = cfg.max_locals - n;
        parts.push(tape.constant(vec![pad, d], vec![F::zero(); pad * d])?);
        kinds.extend(std::iter::repeat_n(TokenKind::Pad, pad));
    }
    Ok(())
}

/// Builds the pair sequence on `tape`. With `padded` false only valid tokens
/// are emitted, which yields identical valid-row outputs at lower cost.
fn assemble_vars<F: Scalar>(
    tape: &mut Tape<'_, F>,
    w: &Weights<Var>,
    cfg: &ModelConfig,
    a: &ImageRecord,
    b: &ImageRecord,
    padded: bool,
) -> Result<(Var, Vec<TokenKind>)> {
    check_record(cfg, a)?;
    check_record(cfg, b)?;
    let mut parts = vec![w.cls];
    let mut kinds = vec![TokenKind::Cls];
    image_tokens(tape, w, cfg, a, Side::A, padded, &mut parts, &mut kinds)?;
    parts.push(w.sep);
    kinds.push(TokenKind::Sep);
    image_tokens(tape, w, cfg, b, Side::B, padded, &mut parts, &mut kinds)?;
    Ok((tape.concat(&parts, 0)?, kinds))
}

/// The full fixed-length input sequence for the pair `(a, b)`.
pub fn assemble_input<F: Scalar>(
    params: &ModelParams<F>,
    a: &ImageRecord,
    b: &ImageRecord,
) -> Result<TokenSequence<F>> {
    let mut tape = Tape::new();
    let w = bind(&mut tape, params);
    let (z, kinds) = assemble_vars(&mut tape, &w, &params.config, a, b, true)?;
    let mut tokens = tape.to_tensor(z);
    tokens.set_requires_grad(false);
    Ok(TokenSequence {
        tokens,
        valid_mask: kinds.iter().map(|k| *k != TokenKind::Pad).collect(),
        kinds,
    })
}

fn mha_inner<F: Scalar>(
    tape: &mut Tape<'_, F>,
    lw: &LayerWeights<Var>,
    cfg: &ModelConfig,
    z: Var,
    mask: &[bool],
    mut capture: Option<&mut Vec<F>>,
) -> Result<Var> {
    let q = tape.linear(z, lw.query.weight, lw.query.bias)?;
    let k = tape.linear(z, lw.key.weight, lw.key.bias)?;
    let v = tape.linear(z, lw.value.weight, lw.value.bias)?;
    let scale = F::one() / F::of_f64(cfg.head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let start = h * cfg.head_dim;
        let qh = tape.slice_cols(q, start, cfg.head_dim)?;
        let kh = tape.slice_cols(k, start, cfg.head_dim)?;
        let vh = tape.slice_cols(v, start, cfg.head_dim)?;
        let kt = tape.transpose(kh)?;
        let s = tape.matmul(qh, kt)?;
        let s = tape.scale(s, scale);
        let attn = tape.masked_softmax(s, mask)?;
        if let Some(acc) = capture.as_deref_mut() {
            let vals = tape.value(attn);
            if acc.is_empty() {
                acc.resize(vals.len(), F::zero());
            }
            let inv = F::one() / F::of_f64(cfg.heads as f64);
            acc.iter_mut().zip(vals).for_each(|(a, &x)| *a = *a + x * inv);
        }
        heads.push(tape.matmul(attn, vh)?);
    }
    let cat = tape.concat(&heads, 1)?;
    Ok(tape.linear(cat, lw.output.weight, lw.output.bias)?)
}

/// Multi-head self-attention over `z[T, d]`; keys with `mask[j] == false`
/// receive zero weight.
pub fn mha_forward<F: Scalar>(
    tape: &mut Tape<'_, F>,
    lw: &LayerWeights<Var>,
    cfg: &ModelConfig,
    z: Var,
    mask: &[bool],
) -> Result<Var> {
    mha_inner(tape, lw, cfg, z, mask, None)
}

fn layer_inner<F: Scalar>(
    tape: &mut Tape<'_, F>,
    lw: &LayerWeights<Var>,
    cfg: &ModelConfig,
    z: Var,
    mask: &[bool],
    capture: Option<&mut Vec<F>>,
) -> Result<Var> {
    let eps = F::of_f64(LAYER_NORM_EPS);
    let att = mha_inner(tape, lw, cfg, z, mask, capture)?;
    let res = tape.add(z, att)?;
    let zbar = tape.layer_norm(res, lw.norm1_gain, lw.norm1_bias, eps)?;
    let hidden = tape.linear(zbar, lw.mlp_in.weight, lw.mlp_in.bias)?;
    let hidden = tape.relu(hidden);
    let mut out = tape.linear(hidden, lw.mlp_out.weight, lw.mlp_out.bias)?;
    if cfg.mlp_residual {
        out = tape.add(zbar, out)?;
    }
    Ok(tape.layer_norm(out, lw.norm2_gain, lw.norm2_bias, eps)?)
}

/// One encoder layer: `Z̄ = LN(Z + MHA(Z))`, then `LN(MLP(Z̄))`, or
/// `LN(Z̄ + MLP(Z̄))` with `mlp_residual`.
pub fn transformer_layer<F: Scalar>(
    tape: &mut Tape<'_, F>,
    lw: &LayerWeights<Var>,
    cfg: &ModelConfig,
    z: Var,
    mask: &[bool],
) -> Result<Var> {
    layer_inner(tape, lw, cfg, z, mask, None)
}

pub(super) struct Encoded<F> {
    pub z: Var,
    pub kinds: Vec<TokenKind>,
    /// Head-averaged last-layer attention, row-major `[T, T]`.
    pub last_attention: Option<Vec<F>>,
}

pub(super) fn encode_inner<F: Scalar>(
    tape: &mut Tape<'_, F>,
    w: &Weights<Var>,
    cfg: &ModelConfig,
    a: &ImageRecord,
    b: &ImageRecord,
    padded: bool,
    capture: bool,
) -> Result<Encoded<F>> {
    let (mut z, kinds) = assemble_vars(tape, w, cfg, a, b, padded)?;
    let mask: Vec<bool> = kinds.iter().map(|k| *k != TokenKind::Pad).collect();
    let mut attn = Vec::new();
    let last = w.layers.len() - 1;
    for (i, lw) in w.layers.iter().enumerate() {
        let cap = (capture && i == last).then_some(&mut attn);
        z = layer_inner(tape, lw, cfg, z, &mask, cap)?;
    }
    Ok(Encoded {
        z,
        kinds,
        last_attention: capture.then_some(attn),
    })
}

/// Output `Z_C` of the last layer for the pair. Rows follow the compact
/// layout (no padding) unless `padded`.
pub fn encode<F: Scalar>(
    tape: &mut Tape<'_, F>,
    w: &Weights<Var>,
    cfg: &ModelConfig,
    a: &ImageRecord,
    b: &ImageRecord,
    padded: bool,
) -> Result<(Var, Vec<TokenKind>)> {
    let e = encode_inner(tape, w, cfg, a, b, padded, false)?;
    Ok((e.z, e.kinds))
}

/// Logit read from the CLS row (row 0) of an encoded sequence.
pub fn cls_logit<F: Scalar>(tape: &mut Tape<'_, F>, w: &Weights<Var>, z: Var) -> Result<Var> {
    let cls = tape.gather(z, &[0])?;
    Ok(tape.linear(cls, w.head.weight, w.head.bias)?)
}

/// The `[1, 1]` logit of the pair, differentiable through `w`.
pub fn pair_logit<F: Scalar>(
    tape: &mut Tape<'_, F>,
    w: &Weights<Var>,
    cfg: &ModelConfig,
    a: &ImageRecord,
    b: &ImageRecord,
) -> Result<Var> {
    let (z, _) = encode(tape, w, cfg, a, b, false)?;
    cls_logit(tape, w, z)
}

pub fn score_pair<F: Scalar>(
    params: &ModelParams<F>,
    a: &ImageRecord,
    b: &ImageRecord,
) -> Result<PairScore> {
    let mut tape = Tape::new();
    let w = bind(&mut tape, params);
    let logit = pair_logit(&mut tape, &w, &params.config, a, b)?;
    let logit = tape.value(logit)[0].as_f64();
    Ok(PairScore {
        logit,
        similarity: rrt_autograd::sigmoid(logit),
    })
}

/// Scores `query` against every candidate; pairs run in parallel.
pub fn score_batch<F: Scalar>(
    params: &ModelParams<F>,
    query: &ImageRecord,
    candidates: &[ImageRecord],
) -> Result<Vec<PairScore>> {
    candidates
        .par_iter()
        .map(|c| score_pair(params, query, c))
        .collect()
}
