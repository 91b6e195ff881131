//! Image descriptor data model: one global vector plus a set of local
//! descriptors with pixel positions and scale indices per image.

mod format;
pub mod synth;

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{decode_dataset, encode_dataset, load_dataset, save_dataset, MAGIC, VERSION};

/// Scale factors of the multi-scale local feature pyramid, smallest first.
pub const DEFAULT_SCALES: [f32; 7] = [
    0.25,
    std::f32::consts::FRAC_1_SQRT_2 / 2.0,
    0.5,
    std::f32::consts::FRAC_1_SQRT_2,
    1.0,
    std::f32::consts::SQRT_2,
    2.0,
];

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DescriptorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalDescriptor {
    pub vec: Vec<f32>,
    pub u: f32,
    pub v: f32,
    pub scale_index: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u32,
    /// Instance identity; images with equal labels show the same object.
    pub label: u32,
    pub global: Vec<f32>,
    pub locals: Vec<LocalDescriptor>,
}

impl ImageRecord {
    /// Copy with the global and every local vector scaled to unit L2 norm.
    pub fn normalized(&self) -> Result<Self> {
        Ok(Self {
            id: self.id,
            label: self.label,
            global: l2_normalize(&self.global)?,
            locals: self
                .locals
                .iter()
                .map(|l| {
                    Ok(LocalDescriptor {
                        vec: l2_normalize(&l.vec)?,
                        ..l.clone()
                    })
                })
                .collect::<Result<_>>()?,
        })
    }

    /// Copy keeping only the first `n` locals in stored order.
    pub fn truncated(&self, n: usize) -> Self {
        let mut r = self.clone();
        r.locals.truncate(n);
        r
    }
}

/// Dimensions and scale set shared by every record of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSpace {
    pub d_g_raw: u32,
    pub d_l: u16,
    pub scale_values: Vec<f32>,
}

impl DescriptorSpace {
    pub fn n_scales(&self) -> usize {
        self.scale_values.len()
    }
}

impl Default for DescriptorSpace {
    fn default() -> Self {
        Self {
            d_g_raw: 2048,
            d_l: 128,
            scale_values: DEFAULT_SCALES.to_vec(),
        }
    }
}

/// Contents of one descriptor file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub space: DescriptorSpace,
    pub records: Vec<ImageRecord>,
}

impl Dataset {
    /// Checks dimensions, scale indices and id uniqueness.
    pub fn validate(&self) -> Result<()> {
        if self.space.scale_values.len() > u8::MAX as usize {
            return Err(DescriptorError::Invalid("more than 255 scales".into()));
        }
        let mut ids = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !ids.insert(r.id) {
                return Err(DescriptorError::Invalid(format!("duplicate image id {}", r.id)));
            }
            if r.global.len() != self.space.d_g_raw as usize {
                return Err(DescriptorError::Invalid(format!(
                    "image {}: global has {} dims, expected {}",
                    r.id,
                    r.global.len(),
                    self.space.d_g_raw
                )));
            }
            if r.locals.len() > u16::MAX as usize {
                return Err(DescriptorError::Invalid(format!(
                    "image {}: {} locals exceed the format limit",
                    r.id,
                    r.locals.len()
                )));
            }
            for l in &r.locals {
                if l.vec.len() != self.space.d_l as usize {
                    return Err(DescriptorError::Invalid(format!(
                        "image {}: local has {} dims, expected {}",
                        r.id,
                        l.vec.len(),
                        self.space.d_l
                    )));
                }
                if l.scale_index as usize >= self.space.n_scales() {
                    return Err(DescriptorError::Invalid(format!(
                        "image {}: scale index {} out of {} scales",
                        r.id,
                        l.scale_index,
                        self.space.n_scales()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every record normalized, the form used for indexing and scoring.
    pub fn normalized_records(&self) -> Result<Vec<ImageRecord>> {
        self.records.iter().map(ImageRecord::normalized).collect()
    }
}

/// Human-readable description of a generated or imported dataset; stored as
/// JSON next to the descriptor files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub d_g_raw: u32,
    pub d_l: u16,
    pub n_scales: u8,
    pub scale_values: Vec<f32>,
    pub n_queries: usize,
    pub n_gallery: usize,
    pub seed: Option<u64>,
}

/// Unit-norm copy of `vec`; accumulation is done in f64.
pub fn l2_normalize(vec: &[f32]) -> Result<Vec<f32>> {
    let norm = vec.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(DescriptorError::ZeroVector);
    }
    Ok(vec.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

/// Number of distinct `(⌊u/stride⌋, ⌊v/stride⌋)` cells occupied by the
/// record's locals, ignoring scale.
pub fn grid_dedup_count(record: &ImageRecord, stride: u32) -> usize {
    assert!(stride > 0, "grid stride must be positive");
    let s = stride as f64;
    record
        .locals
        .iter()
        .map(|l| ((l.u as f64 / s).floor() as i64, (l.v as f64 / s).floor() as i64))
        .collect::<HashSet<_>>()
        .len()
}

/// Writes `id<TAB>label` lines.
pub fn write_labels_tsv(records: &[ImageRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}\t{}", r.id, r.label)?;
    }
    Ok(())
}

pub fn save_labels_tsv(records: &[ImageRecord], path: impl AsRef<Path>) -> std::io::Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_labels_tsv(records, file)
}
