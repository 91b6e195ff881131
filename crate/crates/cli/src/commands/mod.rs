mod correspond;
mod data;
mod report;
mod rerank;
mod train;

use std::collections::HashMap;

use rrt_core::descriptor::load_dataset;
use rrt_core::eval::GroundTruth;
use rrt_core::ImageRecord;

use crate::{CliError, Command, DataArgs};

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => data::synth(&a),
        Command::Index(a) => data::index(&a),
        Command::Retrieve(a) => data::retrieve(&a),
        Command::Train(a) => train::train(&a),
        Command::Rerank(a) => rerank::rerank(&a),
        Command::Eval(a) => report::eval(&a),
        Command::Compare(a) => report::compare(&a),
        Command::Ablate(a) => report::ablate(&a),
        Command::Correspond(a) => correspond::correspond(&a),
    }
}

/// Relevance from the labels stored in the query and gallery files.
fn ground_truth(data: &DataArgs) -> Result<GroundTruth, CliError> {
    let labels = |path: std::path::PathBuf| -> Result<Vec<(u32, u32)>, CliError> {
        let ds = load_dataset(&path).map_err(|e| CliError::data(path.display(), e))?;
        Ok(ds.records.iter().map(|r| (r.id, r.label)).collect())
    };
    Ok(GroundTruth::from_labels(
        labels(data.queries_path())?,
        labels(data.gallery_path())?,
    ))
}

fn by_id(records: &[ImageRecord]) -> HashMap<u32, &ImageRecord> {
    records.iter().map(|r| (r.id, r)).collect()
}
