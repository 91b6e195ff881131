use rrt_core::descriptor::save_dataset;
use rrt_core::descriptor::synth::{synth_generate, SynthConfig};
use rrt_core::descriptor::Dataset;
use rrt_core::retrieval::{load_index, save_index, search_all, search_all_projected};
use rrt_core::GlobalIndex;
use serde_json::json;

use crate::files::{self, load_params, load_records, save_lists, write_meta};
use crate::{CliError, IndexArgs, RetrieveArgs, SynthArgs, SynthPreset, GALLERY_FILE, MANIFEST_FILE, PARTS_FILE, QUERIES_FILE};

fn synth_config(a: &SynthArgs) -> SynthConfig {
    let base = match a.preset {
        SynthPreset::Benchmark => SynthConfig::benchmark(a.seed),
        SynthPreset::BenchmarkTrain => SynthConfig::benchmark_train(a.seed),
        SynthPreset::Small => SynthConfig {
            seed: a.seed,
            ..SynthConfig::small_test()
        },
    };
    SynthConfig {
        n_instances: a.instances.unwrap_or(base.n_instances),
        gallery_per_instance: a.gallery_per_instance.unwrap_or(base.gallery_per_instance),
        queries_per_instance: a.queries_per_instance.unwrap_or(base.queries_per_instance),
        parts_per_instance: a.parts_per_instance.unwrap_or(base.parts_per_instance),
        parts_per_image: a.parts_per_image.unwrap_or(base.parts_per_image),
        locals_per_image: a.locals_per_image.unwrap_or(base.locals_per_image),
        d_l: a.local_dim.unwrap_or(base.d_l),
        d_g_raw: a.global_dim.unwrap_or(base.d_g_raw),
        confusion_pairs: a.confusion_pairs.unwrap_or(base.confusion_pairs),
        global_noise: a.global_noise.unwrap_or(base.global_noise),
        local_noise: a.local_noise.unwrap_or(base.local_noise),
        position_jitter: a.position_jitter.unwrap_or(base.position_jitter),
        ..base
    }
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let cfg = synth_config(a);
    let out = synth_generate(&cfg)?;
    std::fs::create_dir_all(&a.out)?;
    for (name, records) in [
        (QUERIES_FILE, out.queries),
        (GALLERY_FILE, out.gallery),
        (PARTS_FILE, out.parts),
    ] {
        let path = a.out.join(name);
        let dataset = Dataset {
            space: out.space.clone(),
            records,
        };
        save_dataset(&dataset, &path).map_err(|e| CliError::data(path.display(), e))?;
    }
    let config = serde_json::to_value(&cfg)?;
    files::write_json(
        &a.out.join(MANIFEST_FILE),
        &json!({
            "dataset": out.manifest,
            "generator": config,
            "config_digest": files::digest("synth", &config),
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    log::info!("wrote {} to {}", cfg.name, a.out.display());
    Ok(())
}

pub fn index(a: &IndexArgs) -> Result<(), CliError> {
    let (_, gallery) = load_records(&a.data.gallery_path())?;
    let (index, config) = match &a.checkpoint {
        Some(path) => {
            let params = load_params(path)?;
            let index = GlobalIndex::build_projected(&gallery, &params)?;
            (index, json!({ "projected": true, "model": params.config }))
        }
        None => (GlobalIndex::build(&gallery)?, json!({ "projected": false })),
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_index(&index, &a.out).map_err(|e| CliError::data(a.out.display(), e))?;
    write_meta(&a.out, "index", &config)?;
    Ok(())
}

pub fn retrieve(a: &RetrieveArgs) -> Result<(), CliError> {
    let (_, queries) = load_records(&a.data.queries_path())?;
    let params = a.checkpoint.as_deref().map(load_params).transpose()?;
    let index = match &a.index {
        Some(path) => load_index(path).map_err(|e| CliError::data(path.display(), e))?,
        None => {
            let (_, gallery) = load_records(&a.data.gallery_path())?;
            match &params {
                Some(p) => GlobalIndex::build_projected(&gallery, p)?,
                None => GlobalIndex::build(&gallery)?,
            }
        }
    };
    if index.projected != params.is_some() {
        return Err(CliError::Config(
            "a projected index needs --checkpoint and a raw one must not have it".into(),
        ));
    }
    let lists = match &params {
        Some(p) => search_all_projected(&index, &queries, p, a.k)?,
        None => search_all(&index, &queries, a.k)?,
    };
    save_lists(&a.out, &lists)?;
    let model = params.as_ref().map(|p| &p.config);
    write_meta(&a.out, "retrieve", &json!({ "k": a.k, "projected": index.projected, "model": model }))?;
    Ok(())
}
