use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rrt_core::descriptor::{load_dataset, DescriptorSpace};
use rrt_core::eval::config_digest;
use rrt_core::model::load_checkpoint;
use rrt_core::retrieval::{read_neighbors, write_neighbors};
use rrt_core::{ImageRecord, ModelParams, NeighborList};
use serde_json::{json, Value};

use crate::{CliError, DataArgs};

pub const QUERIES_FILE: &str = "queries.rrtd";
pub const GALLERY_FILE: &str = "gallery.rrtd";
pub const PARTS_FILE: &str = "parts.rrtd";
pub const MANIFEST_FILE: &str = "manifest.json";

impl DataArgs {
    pub fn queries_path(&self) -> PathBuf {
        self.queries.clone().unwrap_or_else(|| self.data.join(QUERIES_FILE))
    }

    pub fn gallery_path(&self) -> PathBuf {
        self.gallery.clone().unwrap_or_else(|| self.data.join(GALLERY_FILE))
    }

    pub fn parts_path(&self) -> PathBuf {
        self.parts.clone().unwrap_or_else(|| self.data.join(PARTS_FILE))
    }
}

/// Records of a descriptor file, unit-normalized.
pub fn load_records(path: &Path) -> Result<(DescriptorSpace, Vec<ImageRecord>), CliError> {
    let ds = load_dataset(path).map_err(|e| CliError::data(path.display(), e))?;
    let records = ds.normalized_records().map_err(|e| CliError::data(path.display(), e))?;
    Ok((ds.space, records))
}

pub fn load_params(path: &Path) -> Result<ModelParams<f32>, CliError> {
    load_checkpoint(path).map_err(|e| CliError::data(path.display(), e))
}

pub fn load_lists(path: &Path) -> Result<Vec<NeighborList>, CliError> {
    let file = File::open(path).map_err(|e| CliError::data(path.display(), e))?;
    read_neighbors(BufReader::new(file)).map_err(|e| CliError::data(path.display(), e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = File::create(path).map_err(|e| CliError::data(path.display(), e))?;
    Ok(BufWriter::new(file))
}

pub fn save_lists(path: &Path, lists: &[NeighborList]) -> Result<(), CliError> {
    let mut out = create(path)?;
    write_neighbors(lists, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// `<path>.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Records the command and its effective settings next to an output file.
pub fn write_meta(path: &Path, command: &str, config: &Value) -> Result<String, CliError> {
    let digest = digest(command, config);
    write_json(
        &meta_path(path),
        &json!({
            "command": command,
            "config": config,
            "config_digest": digest,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    Ok(digest)
}

pub fn digest(command: &str, config: &Value) -> String {
    config_digest(&json!({ "command": command, "config": config }))
}
