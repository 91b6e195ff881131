use rrt_core::model::save_checkpoint;
use rrt_core::trainer::{train as fit, write_loss_csv, LrSchedule, TrainConfig, TrainSet};
use rrt_core::{ModelConfig, ModelParams};
use serde_json::json;
use std::io::Write;

use crate::files::{create, load_records, write_meta};
use crate::{CliError, ModelPreset, Schedule, TrainArgs};

/// Preset, then flags, then the dimensions fixed by the data.
fn resolve(a: &TrainArgs, d_l: usize, d_g: usize, n_scales: usize) -> Result<(ModelConfig, TrainConfig), CliError> {
    let (m, t) = match a.preset {
        ModelPreset::Benchmark => (ModelConfig::benchmark(), TrainConfig::benchmark(a.seed)),
        ModelPreset::Full => (ModelConfig::default(), TrainConfig { seed: a.seed, ..TrainConfig::default() }),
        ModelPreset::Tiny => (ModelConfig::tiny(), TrainConfig { seed: a.seed, ..TrainConfig::default() }),
    };
    let dim = a.dim.unwrap_or(d_l);
    let heads = a.heads.unwrap_or(m.heads);
    let head_dim = match a.head_dim {
        Some(h) => h,
        None if dim == m.dim && heads == m.heads => m.head_dim,
        None => dim / heads.max(1),
    };
    let model = ModelConfig {
        max_locals: a.locals_max.unwrap_or(m.max_locals),
        dim,
        heads,
        head_dim,
        layers: a.layers.unwrap_or(m.layers),
        mlp_dim: a.mlp_dim.unwrap_or(m.mlp_dim),
        n_scales,
        global_dim: d_g,
        use_pos_embed: m.use_pos_embed || a.pos_embed,
        use_global_token: m.use_global_token && !a.no_global_token,
        use_scale_embed: m.use_scale_embed && !a.no_scale_embed,
        mlp_residual: m.mlp_residual || a.mlp_residual,
    };
    model.validate()?;
    if model.dim != d_l {
        return Err(CliError::Config(format!(
            "model width {} differs from the local descriptor dimension {d_l}",
            model.dim
        )));
    }
    let train = TrainConfig {
        lr: a.lr.unwrap_or(t.lr),
        weight_decay: a.weight_decay.unwrap_or(t.weight_decay),
        epochs: a.epochs.unwrap_or(t.epochs),
        batch_size: a.batch_size.unwrap_or(t.batch_size),
        seed: a.seed,
        grad_clip_norm: match a.grad_clip {
            Some(0.0) => None,
            Some(g) => Some(g),
            None => t.grad_clip_norm,
        },
        neg_pool_size: a.neg_pool.unwrap_or(t.neg_pool_size),
        steps_per_epoch: a.steps_per_epoch.or(t.steps_per_epoch),
        schedule: match a.schedule {
            Some(Schedule::Constant) => LrSchedule::Constant,
            Some(Schedule::Step) => LrSchedule::Step,
            None => t.schedule,
        },
    };
    train.validate()?;
    Ok((model, train))
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let (space, records) = load_records(&a.data.gallery_path())?;
    let (model, cfg) = resolve(a, space.d_l as usize, space.d_g_raw as usize, space.n_scales())?;
    let records = records.iter().map(|r| r.truncated(model.max_locals)).collect();
    let set = TrainSet::new(records, cfg.neg_pool_size)?;
    let mut params = ModelParams::<f32>::init(&model, a.seed)?;
    log::info!("training {} parameters on {} images", params.num_params(), set.len());
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let history = fit(&mut params, &set, &cfg, |epoch, p| {
        save_checkpoint(p, &a.out)?;
        log::info!("epoch {epoch} done");
        Ok(())
    })?;

    let loss_path = a.loss_csv.clone().unwrap_or_else(|| {
        let mut name = a.out.file_name().unwrap_or_default().to_os_string();
        name.push(".loss.csv");
        a.out.with_file_name(name)
    });
    let mut out = create(&loss_path)?;
    write_loss_csv(&history, &mut out)?;
    out.flush()?;
    if let Some(last) = history.last() {
        log::info!("{} steps, last loss {:.4}", history.len(), last.loss);
    }
    write_meta(&a.out, "train", &json!({ "model": model, "train": cfg }))?;
    Ok(())
}
