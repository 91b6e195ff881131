//! Planted-part synthetic descriptor datasets.
//!
//! Every instance owns `parts_per_instance` unit "part prototypes" with fixed
//! canonical positions and one global prototype. An image of the instance
//! shows `parts_per_image` of its parts (noisy copies, positions moved by a
//! random similarity transform) plus random distractor locals. Instances in a
//! confusion pair share the same global prototype but not their parts, so
//! global retrieval cannot tell them apart while local matching can.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    l2_normalize, DatasetManifest, DescriptorError, DescriptorSpace, ImageRecord,
    LocalDescriptor, Result, DEFAULT_SCALES,
};

pub const CANVAS: f32 = 1024.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub n_instances: usize,
    pub gallery_per_instance: usize,
    pub queries_per_instance: usize,
    pub parts_per_instance: usize,
    pub parts_per_image: usize,
    pub locals_per_image: usize,
    pub d_l: u16,
    pub d_g_raw: u32,
    pub scale_values: Vec<f32>,
    /// Instances `2i` and `2i+1` share a global prototype for `i < confusion_pairs`.
    pub confusion_pairs: usize,
    /// Total norm of the Gaussian perturbation added to a unit global prototype.
    pub global_noise: f32,
    /// Same for local part descriptors.
    pub local_noise: f32,
    /// Standard deviation in pixels added to transformed part positions.
    pub position_jitter: f32,
    pub seed: u64,
}

impl SynthConfig {
    /// Evaluation split of the frozen benchmark.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            name: format!("benchmark-test-{seed}"),
            n_instances: 40,
            gallery_per_instance: 5,
            queries_per_instance: 1,
            parts_per_instance: 8,
            parts_per_image: 8,
            locals_per_image: 8,
            d_l: 32,
            d_g_raw: 64,
            scale_values: DEFAULT_SCALES.to_vec(),
            confusion_pairs: 20,
            global_noise: 0.2,
            local_noise: 0.3,
            position_jitter: 1.0,
            seed,
        }
    }

    /// Training split of the frozen benchmark: same distribution, disjoint
    /// instances (different seed stream), no queries.
    pub fn benchmark_train(seed: u64) -> Self {
        Self {
            name: format!("benchmark-train-{seed}"),
            n_instances: 2000,
            gallery_per_instance: 2,
            queries_per_instance: 0,
            confusion_pairs: 1000,
            seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x7472_6169_6E00_0000,
            ..Self::benchmark(seed)
        }
    }

    /// A few small images for unit tests.
    pub fn small_test() -> Self {
        Self {
            name: "small".into(),
            n_instances: 4,
            gallery_per_instance: 3,
            queries_per_instance: 1,
            parts_per_instance: 4,
            parts_per_image: 3,
            locals_per_image: 6,
            d_l: 8,
            d_g_raw: 12,
            scale_values: DEFAULT_SCALES.to_vec(),
            confusion_pairs: 1,
            global_noise: 0.2,
            local_noise: 0.2,
            position_jitter: 1.0,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(DescriptorError::Config(m));
        if self.parts_per_image > self.parts_per_instance {
            return err(format!(
                "parts per image {} exceeds parts per instance {}",
                self.parts_per_image, self.parts_per_instance
            ));
        }
        if self.locals_per_image < self.parts_per_image {
            return err(format!(
                "locals per image {} is below parts per image {}",
                self.locals_per_image, self.parts_per_image
            ));
        }
        if self.locals_per_image > u16::MAX as usize {
            return err("locals per image exceeds 65535".into());
        }
        if 2 * self.confusion_pairs > self.n_instances {
            return err(format!(
                "{} confusion pairs need {} instances, have {}",
                self.confusion_pairs,
                2 * self.confusion_pairs,
                self.n_instances
            ));
        }
        if self.d_l == 0 || self.d_g_raw == 0 {
            return err("descriptor dimensions must be positive".into());
        }
        if self.scale_values.is_empty() || self.scale_values.len() > u8::MAX as usize {
            return err("need between 1 and 255 scales".into());
        }
        if self.global_noise < 0.0 || self.local_noise < 0.0 || self.position_jitter < 0.0 {
            return err("noise levels must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub space: DescriptorSpace,
    pub queries: Vec<ImageRecord>,
    pub gallery: Vec<ImageRecord>,
    /// One pseudo-record per instance: the global prototype and the part
    /// prototypes at their canonical positions. Input to [`PartOracle`].
    pub parts: Vec<ImageRecord>,
    pub manifest: DatasetManifest,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

/// `normalize(base + noise · g/√d)` with `g ~ N(0, I)`.
fn perturb(rng: &mut ChaCha8Rng, base: &[f32], noise: f32) -> Vec<f32> {
    let scale = noise / (base.len() as f32).sqrt();
    let v: Vec<f32> = base
        .iter()
        .map(|&b| {
            let g: f32 = StandardNormal.sample(rng);
            b + scale * g
        })
        .collect();
    l2_normalize(&v).unwrap_or_else(|_| base.to_vec())
}

struct Instance {
    global: Vec<f32>,
    parts: Vec<Vec<f32>>,
    positions: Vec<(f32, f32)>,
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d_l = cfg.d_l as usize;
    let d_g = cfg.d_g_raw as usize;

    let mut instances: Vec<Instance> = Vec::with_capacity(cfg.n_instances);
    for k in 0..cfg.n_instances {
        let own_global = unit_gaussian(&mut rng, d_g);
        let global = if k % 2 == 1 && k / 2 < cfg.confusion_pairs {
            instances[k - 1].global.clone()
        } else {
            own_global
        };
        let parts = (0..cfg.parts_per_instance)
            .map(|_| unit_gaussian(&mut rng, d_l))
            .collect();
        let positions = (0..cfg.parts_per_instance)
            .map(|_| (rng.random_range(312.0..712.0), rng.random_range(312.0..712.0)))
            .collect();
        instances.push(Instance {
            global,
            parts,
            positions,
        });
    }

    let n_scales = cfg.scale_values.len();
    let make_image = |rng: &mut ChaCha8Rng, inst: &Instance, id: u32, label: u32| {
        let theta: f32 = rng.random_range(-0.3..0.3);
        let s: f32 = rng.random_range(0.8..1.2);
        let (tx, ty): (f32, f32) = (rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        let (sin, cos) = theta.sin_cos();
        let mut chosen: Vec<usize> = (0..cfg.parts_per_instance).collect();
        chosen.shuffle(rng);
        chosen.truncate(cfg.parts_per_image);
        chosen.sort_unstable();

        let mut locals = Vec::with_capacity(cfg.locals_per_image);
        for &p in &chosen {
            let (x, y) = (inst.positions[p].0 - 512.0, inst.positions[p].1 - 512.0);
            let jx: f32 = cfg.position_jitter * rng.sample::<f32, _>(StandardNormal);
            let jy: f32 = cfg.position_jitter * rng.sample::<f32, _>(StandardNormal);
            let u = (s * (cos * x - sin * y) + 512.0 + tx + jx).clamp(0.0, CANVAS - 1.0);
            let v = (s * (sin * x + cos * y) + 512.0 + ty + jy).clamp(0.0, CANVAS - 1.0);
            locals.push(LocalDescriptor {
                vec: perturb(rng, &inst.parts[p], cfg.local_noise),
                u,
                v,
                scale_index: rng.random_range(0..n_scales) as u8,
            });
        }
        for _ in cfg.parts_per_image..cfg.locals_per_image {
            locals.push(LocalDescriptor {
                vec: unit_gaussian(rng, d_l),
                u: rng.random_range(0.0..CANVAS),
                v: rng.random_range(0.0..CANVAS),
                scale_index: rng.random_range(0..n_scales) as u8,
            });
        }
        locals.shuffle(rng);
        ImageRecord {
            id,
            label,
            global: perturb(rng, &inst.global, cfg.global_noise),
            locals,
        }
    };

    let mut next_id = 0u32;
    let mut queries = Vec::new();
    for (k, inst) in instances.iter().enumerate() {
        for _ in 0..cfg.queries_per_instance {
            queries.push(make_image(&mut rng, inst, next_id, k as u32));
            next_id += 1;
        }
    }
    let mut gallery = Vec::new();
    for (k, inst) in instances.iter().enumerate() {
        for _ in 0..cfg.gallery_per_instance {
            gallery.push(make_image(&mut rng, inst, next_id, k as u32));
            next_id += 1;
        }
    }

    let parts = instances
        .iter()
        .enumerate()
        .map(|(k, inst)| ImageRecord {
            id: k as u32,
            label: k as u32,
            global: inst.global.clone(),
            locals: inst
                .parts
                .iter()
                .zip(&inst.positions)
                .map(|(vec, &(u, v))| LocalDescriptor {
                    vec: vec.clone(),
                    u,
                    v,
                    scale_index: 0,
                })
                .collect(),
        })
        .collect();

    let space = DescriptorSpace {
        d_g_raw: cfg.d_g_raw,
        d_l: cfg.d_l,
        scale_values: cfg.scale_values.clone(),
    };
    let manifest = DatasetManifest {
        name: cfg.name.clone(),
        d_g_raw: cfg.d_g_raw,
        d_l: cfg.d_l,
        n_scales: n_scales as u8,
        scale_values: cfg.scale_values.clone(),
        n_queries: queries.len(),
        n_gallery: gallery.len(),
        seed: Some(cfg.seed),
    };
    Ok(SynthDataset {
        space,
        queries,
        gallery,
        parts,
        manifest,
    })
}

/// Reranker that knows the generator's part prototypes: each local is
/// assigned to its nearest prototype (if the cosine clears `min_cos`) and a
/// pair scores the number of part ids both images contain.
#[derive(Debug, Clone)]
pub struct PartOracle {
    prototypes: Vec<Vec<f32>>,
    min_cos: f32,
}

impl PartOracle {
    pub const DEFAULT_MIN_COS: f32 = 0.75;

    pub fn new(parts: &[ImageRecord], min_cos: f32) -> Result<Self> {
        let prototypes = parts
            .iter()
            .flat_map(|r| r.locals.iter().map(|l| l2_normalize(&l.vec)))
            .collect::<Result<_>>()?;
        Ok(Self {
            prototypes,
            min_cos,
        })
    }

    pub fn assign(&self, vec: &[f32]) -> Option<u32> {
        let mut best: Option<(u32, f32)> = None;
        for (i, p) in self.prototypes.iter().enumerate() {
            let c: f32 = p.iter().zip(vec).map(|(a, b)| a * b).sum();
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((i as u32, c));
            }
        }
        best.filter(|&(_, c)| c >= self.min_cos).map(|(i, _)| i)
    }

    pub fn part_ids(&self, record: &ImageRecord) -> BTreeSet<u32> {
        record
            .locals
            .iter()
            .filter_map(|l| self.assign(&l.vec))
            .collect()
    }

    pub fn score(&self, a: &ImageRecord, b: &ImageRecord) -> f32 {
        let pa = self.part_ids(a);
        self.part_ids(b).intersection(&pa).count() as f32
    }
}
