use rrt_autograd::{Scalar, Tape};

use super::forward::{bind, encode_inner, Side, TokenKind};
use super::{ModelParams, Result};
use crate::assignment::max_weight_assignment;
use crate::descriptor::ImageRecord;

/// A matched local pair with its attention affinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// One-to-one local matches read from the last layer's attention.
///
/// The affinity of `(i, j)` is the head-averaged post-softmax weight with
/// which local `i` of `a` attends to local `j` of `b`; the matching maximises
/// the summed affinity.
pub fn attention_correspondences<F: Scalar>(
    params: &ModelParams<F>,
    a: &ImageRecord,
    b: &ImageRecord,
) -> Result<Vec<Correspondence>> {
    if a.locals.is_empty() || b.locals.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let w = bind(&mut tape, params);
    let enc = encode_inner(&mut tape, &w, &params.config, a, b, false, true)?;
    let attn = enc.last_attention.expect("attention captured");
    let t = enc.kinds.len();
    let rows: Vec<usize> = position_of(&enc.kinds, Side::A, a.locals.len());
    let cols: Vec<usize> = position_of(&enc.kinds, Side::B, b.locals.len());
    let affinity: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| attn[r * t + c].as_f64()).collect())
        .collect();
    Ok(max_weight_assignment(&affinity)
        .into_iter()
        .map(|(i, j)| Correspondence {
            a: i,
            b: j,
            weight: affinity[i][j],
        })
        .collect())
}

fn position_of(kinds: &[TokenKind], side: Side, n: usize) -> Vec<usize> {
    let mut pos = vec![0; n];
    for (p, k) in kinds.iter().enumerate() {
        if let TokenKind::Local(s, i) = *k {
            if s == side {
                pos[i] = p;
            }
        }
    }
    pos
}
