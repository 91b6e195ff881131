use crate::error::{AutogradError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW with bias correction and decoupled weight decay.
///
/// Moment buffers are zero-initialised at construction, one per parameter,
/// in the order the parameters are later passed to [`AdamW::step`].
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(config: AdamWConfig, params: &[&Tensor<F>]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update using each parameter's accumulated gradient.
    ///
    /// Fails without touching anything if a parameter has no gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<F>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(AutogradError::Invalid(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(AutogradError::MissingGrad(i));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = F::of_f64(1.0 - c.beta1.powi(t));
        let bc2 = F::of_f64(1.0 - c.beta2.powi(t));
        let (b1, b2) = (F::of_f64(c.beta1), F::of_f64(c.beta2));
        let lr = F::of_f64(c.lr);
        let decay = F::one() - F::of_f64(c.lr * c.weight_decay);
        let eps = F::of_f64(c.eps);

        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad().expect("checked above").to_vec();
            let data = p.data_mut();
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (F::one() - b1) * g[i];
                v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] = data[i] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// L2 norm of all gradients taken together; missing gradients count as zero.
pub fn global_grad_norm<F: Scalar>(params: &[&Tensor<F>]) -> f64 {
    params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_grad_norm<F: Scalar>(params: &mut [&mut Tensor<F>], max_norm: f64) -> f64 {
    let norm = {
        let view: Vec<&Tensor<F>> = params.iter().map(|p| &**p).collect();
        global_grad_norm(&view)
    };
    if norm > max_norm {
        let s = F::of_f64(max_norm / (norm + 1e-6));
        for p in params.iter_mut() {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|x| *x = *x * s);
            }
        }
    }
    norm
}
