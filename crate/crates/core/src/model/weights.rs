use super::ModelConfig;

/// Affine map `x · weight + bias` with `weight` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub norm1_gain: T,
    pub norm1_bias: T,
    pub mlp_in: Linear<T>,
    pub mlp_out: Linear<T>,
    pub norm2_gain: T,
    pub norm2_bias: T,
}

/// Every learnable tensor of the model, generic over what is stored per slot
/// (shapes, tensors, tape variables).
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub layers: Vec<LayerWeights<T>>,
    /// Projection of the raw global descriptor; absent without global tokens.
    pub global_proj: Option<Linear<T>>,
    pub head: Linear<T>,
    pub cls: T,
    pub sep: T,
    pub seg_global_a: Option<T>,
    pub seg_global_b: Option<T>,
    pub seg_local_a: T,
    pub seg_local_b: T,
    pub scale_embed: Option<T>,
}

fn map_linear<'s, T, U, E>(
    name: &str,
    l: &'s Linear<T>,
    f: &mut impl FnMut(&str, &'s T) -> Result<U, E>,
) -> Result<Linear<U>, E> {
    Ok(Linear {
        weight: f(&format!("{name}.weight"), &l.weight)?,
        bias: f(&format!("{name}.bias"), &l.bias)?,
    })
}

fn map_opt<'s, T, U, E>(
    name: &str,
    t: &'s Option<T>,
    f: &mut impl FnMut(&str, &'s T) -> Result<U, E>,
) -> Result<Option<U>, E> {
    t.as_ref().map(|t| f(name, t)).transpose()
}

fn linear_shape(inp: usize, out: usize) -> Linear<Vec<usize>> {
    Linear {
        weight: vec![inp, out],
        bias: vec![out],
    }
}

impl Weights<Vec<usize>> {
    /// Tensor shapes for `cfg`; the single source of the parameter layout.
    pub fn shapes(cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        let layer = LayerWeights {
            query: linear_shape(d, d),
            key: linear_shape(d, d),
            value: linear_shape(d, d),
            output: linear_shape(d, d),
            norm1_gain: vec![d],
            norm1_bias: vec![d],
            mlp_in: linear_shape(d, cfg.mlp_dim),
            mlp_out: linear_shape(cfg.mlp_dim, d),
            norm2_gain: vec![d],
            norm2_bias: vec![d],
        };
        let g = cfg.use_global_token;
        Self {
            layers: vec![layer; cfg.layers],
            global_proj: g.then(|| linear_shape(cfg.global_dim, d)),
            head: linear_shape(d, 1),
            cls: vec![1, d],
            sep: vec![1, d],
            seg_global_a: g.then(|| vec![d]),
            seg_global_b: g.then(|| vec![d]),
            seg_local_a: vec![d],
            seg_local_b: vec![d],
            scale_embed: cfg.use_scale_embed.then(|| vec![cfg.n_scales, d]),
        }
    }
}

impl<T> Weights<T> {
    /// Maps every slot in canonical order, passing its canonical name.
    pub fn try_map<'s, U, E>(
        &'s self,
        f: &mut impl FnMut(&str, &'s T) -> Result<U, E>,
    ) -> Result<Weights<U>, E> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            layers.push(LayerWeights {
                query: map_linear(&format!("{p}.attn.query"), &l.query, f)?,
                key: map_linear(&format!("{p}.attn.key"), &l.key, f)?,
                value: map_linear(&format!("{p}.attn.value"), &l.value, f)?,
                output: map_linear(&format!("{p}.attn.output"), &l.output, f)?,
                norm1_gain: f(&format!("{p}.norm1.gain"), &l.norm1_gain)?,
                norm1_bias: f(&format!("{p}.norm1.bias"), &l.norm1_bias)?,
                mlp_in: map_linear(&format!("{p}.mlp.in"), &l.mlp_in, f)?,
                mlp_out: map_linear(&format!("{p}.mlp.out"), &l.mlp_out, f)?,
                norm2_gain: f(&format!("{p}.norm2.gain"), &l.norm2_gain)?,
                norm2_bias: f(&format!("{p}.norm2.bias"), &l.norm2_bias)?,
            });
        }
        let global_proj = match &self.global_proj {
            Some(l) => Some(map_linear("global_proj", l, f)?),
            None => None,
        };
        let head = map_linear("head", &self.head, f)?;
        let cls = f("token.cls", &self.cls)?;
        let sep = f("token.sep", &self.sep)?;
        let seg_global_a = map_opt("segment.global_a", &self.seg_global_a, f)?;
        let seg_global_b = map_opt("segment.global_b", &self.seg_global_b, f)?;
        let seg_local_a = f("segment.local_a", &self.seg_local_a)?;
        let seg_local_b = f("segment.local_b", &self.seg_local_b)?;
        let scale_embed = map_opt("scale_embed", &self.scale_embed, f)?;
        Ok(Weights {
            layers,
            global_proj,
            head,
            cls,
            sep,
            seg_global_a,
            seg_global_b,
            seg_local_a,
            seg_local_b,
            scale_embed,
        })
    }

    /// `(name, slot)` pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.try_map(&mut |name, t| {
            out.push((name.to_string(), t));
            Ok::<_, std::convert::Infallible>(())
        })
        .unwrap_or_else(|e| match e {});
        out
    }

    /// Mutable slots in the same order as [`Weights::named`].
    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            let LayerWeights {
                query,
                key,
                value,
                output,
                norm1_gain,
                norm1_bias,
                mlp_in,
                mlp_out,
                norm2_gain,
                norm2_bias,
            } = l;
            for lin in [query, key, value, output] {
                out.push(&mut lin.weight);
                out.push(&mut lin.bias);
            }
            out.push(norm1_gain);
            out.push(norm1_bias);
            for lin in [mlp_in, mlp_out] {
                out.push(&mut lin.weight);
                out.push(&mut lin.bias);
            }
            out.push(norm2_gain);
            out.push(norm2_bias);
        }
        if let Some(l) = &mut self.global_proj {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out.push(&mut self.cls);
        out.push(&mut self.sep);
        out.extend(self.seg_global_a.as_mut());
        out.extend(self.seg_global_b.as_mut());
        out.push(&mut self.seg_local_a);
        out.push(&mut self.seg_local_b);
        out.extend(self.scale_embed.as_mut());
        out
    }
}
