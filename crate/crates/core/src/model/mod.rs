//! The reranking transformer.
//!
//! A pair of images becomes one token sequence
//! `[CLS; g(A); locals(A); SEP; g(B); locals(B)]`, padded to a fixed length.
//! Global tokens are the projected global descriptor plus a segment vector,
//! local tokens are the descriptor plus a scale embedding and a segment
//! vector. A stack of post-norm self-attention layers follows and the CLS row
//! of the last layer is mapped to a single logit.

mod checkpoint;
mod correspond;
mod forward;
mod weights;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rrt_autograd::{AutogradError, Scalar, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use correspond::{attention_correspondences, Correspondence};
pub use forward::{
    assemble_input, bind, cls_logit, encode, mha_forward, pair_logit, score_batch, score_pair,
    transformer_layer, PairScore, Side, TokenKind, TokenSequence,
};
pub use weights::{LayerWeights, Linear, Weights};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Local token slots per image (L).
    pub max_locals: usize,
    /// Token width; local descriptors must have exactly this many dims.
    pub dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub layers: usize,
    /// Hidden width of the per-layer MLP.
    pub mlp_dim: usize,
    pub n_scales: usize,
    /// Width of the raw global descriptor before projection.
    pub global_dim: usize,
    pub use_pos_embed: bool,
    pub use_global_token: bool,
    pub use_scale_embed: bool,
    /// Adds `Z̄` back after the MLP. Off by default: the layer output is
    /// `LN(MLP(Z̄))` with no skip connection around the MLP.
    pub mlp_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            max_locals: 500,
            dim: 128,
            heads: 4,
            head_dim: 32,
            layers: 6,
            mlp_dim: 1024,
            n_scales: 7,
            global_dim: 2048,
            use_pos_embed: false,
            use_global_token: true,
            use_scale_embed: true,
            mlp_residual: false,
        }
    }
}

impl ModelConfig {
    /// The smallest configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            max_locals: 4,
            dim: 8,
            heads: 2,
            head_dim: 4,
            layers: 2,
            mlp_dim: 16,
            n_scales: 7,
            global_dim: 12,
            ..Self::default()
        }
    }

    /// The model trained on the frozen synthetic benchmark.
    pub fn benchmark() -> Self {
        Self {
            max_locals: 8,
            dim: 32,
            heads: 4,
            head_dim: 8,
            layers: 2,
            mlp_dim: 64,
            n_scales: 7,
            global_dim: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        let dims = [
            ("max_locals", self.max_locals),
            ("dim", self.dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("layers", self.layers),
            ("mlp_dim", self.mlp_dim),
            ("n_scales", self.n_scales),
            ("global_dim", self.global_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.heads * self.head_dim != self.dim {
            return bad(format!(
                "heads × head_dim = {} × {} must equal dim {}",
                self.heads, self.head_dim, self.dim
            ));
        }
        if self.use_pos_embed && !self.dim.is_multiple_of(4) {
            return bad(format!("position embedding needs dim divisible by 4, got {}", self.dim));
        }
        // Field widths of the checkpoint header.
        let limits = [
            ("max_locals", self.max_locals, u32::MAX as usize),
            ("dim", self.dim, u16::MAX as usize),
            ("heads", self.heads, u8::MAX as usize),
            ("head_dim", self.head_dim, u8::MAX as usize),
            ("layers", self.layers, u8::MAX as usize),
            ("mlp_dim", self.mlp_dim, u16::MAX as usize),
            ("n_scales", self.n_scales, u8::MAX as usize),
            ("global_dim", self.global_dim, u32::MAX as usize),
        ];
        if let Some((name, v, max)) = limits.iter().find(|(_, v, max)| v > max) {
            return bad(format!("{name} = {v} exceeds {max}"));
        }
        Ok(())
    }

    /// Tokens per pair sequence, padding included.
    pub fn seq_len(&self) -> usize {
        2 + 2 * (self.max_locals + usize::from(self.use_global_token))
    }
}

/// Number of learnable scalars for `cfg`.
pub fn param_count(cfg: &ModelConfig) -> usize {
    Weights::shapes(cfg)
        .named()
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Scalar> {
    pub config: ModelConfig,
    pub weights: Weights<Tensor<F>>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let weights = Weights::shapes(config).try_map(&mut |_, shape: &Vec<usize>| {
            Tensor::param(shape.clone(), vec![F::zero(); shape.iter().product()])
        })?;
        Ok(Self {
            config: config.clone(),
            weights,
        })
    }

    /// Random initialisation: linear weights uniform in ±1/√fan_in, biases
    /// zero, norm gains one, token/segment/scale embeddings N(0, 0.02²).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = Normal::new(0.0f32, 0.02).expect("valid normal");
        let weights = Weights::shapes(config).try_map(&mut |name, shape: &Vec<usize>| {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = if name.ends_with(".weight") {
                let bound = 1.0 / (shape[0] as f32).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            } else if name.ends_with(".bias") {
                vec![0.0; n]
            } else if name.ends_with(".gain") {
                vec![1.0; n]
            } else {
                (0..n).map(|_| embed.sample(&mut rng)).collect()
            };
            Tensor::param(shape.clone(), data.into_iter().map(|x| F::of_f64(x as f64)).collect())
        })?;
        Ok(Self {
            config: config.clone(),
            weights,
        })
    }

    pub fn num_params(&self) -> usize {
        self.weights.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            weights: self
                .weights
                .try_map(&mut |_, t: &Tensor<F>| Ok::<_, std::convert::Infallible>(t.cast()))
                .unwrap_or_else(|e| match e {}),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<F>> {
        self.weights.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.weights.values_mut()
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}
