//! Trained models in checkpoint files.
//!
//! Each model contributes its parameters, `swd.directions` and the training
//! configuration (UTF-8 JSON stored one byte per entry in a 1×L tensor named
//! `cfg.train_json`), all under a common name prefix. Activity-level runs use
//! the empty prefix; video-level runs store one model per video under
//! `<video>/`.

use std::path::Path;

use super::{TrainConfig, TrainedModel};
use crate::error::{ClotError, Result};
use crate::model::Checkpoint;
use crate::numeric::DenseMatrix;
use crate::swd::ProjectionSet;

const CONFIG_KEY: &str = "cfg.train_json";

pub fn put_trained(ck: &mut Checkpoint, prefix: &str, model: &TrainedModel) -> Result<()> {
    if prefix.contains(CONFIG_KEY) {
        return Err(ClotError::Parameter(format!("model prefix {prefix:?} is reserved")));
    }
    ck.put_model_prefixed(prefix, &model.params);
    ck.insert(format!("{prefix}swd.directions"), model.projections.directions().clone());
    let json = serde_json::to_vec(&model.config)?;
    let bytes = json.iter().map(|&b| f64::from(b)).collect();
    ck.insert(format!("{prefix}{CONFIG_KEY}"), DenseMatrix::from_vec(1, json.len(), bytes)?);
    Ok(())
}

pub fn get_trained(ck: &Checkpoint, prefix: &str) -> Result<TrainedModel> {
    let params = ck.model_prefixed(prefix)?;
    let projections = ProjectionSet::from_saved(ck.require(&format!("{prefix}swd.directions"))?.clone())
        .map_err(|e| ClotError::State(format!("bad projection set: {e}")))?;
    let raw = ck.require(&format!("{prefix}{CONFIG_KEY}"))?;
    let bytes = raw
        .as_slice()
        .iter()
        .map(|&v| if (0.0..=255.0).contains(&v) && v.fract() == 0.0 { Ok(v as u8) } else { Err(()) })
        .collect::<std::result::Result<Vec<u8>, ()>>()
        .map_err(|_| ClotError::State(format!("{prefix}{CONFIG_KEY} does not hold bytes")))?;
    let config: TrainConfig = serde_json::from_slice(&bytes)?;
    if projections.dim() != params.config.embed_dim {
        return Err(ClotError::State(format!(
            "projection dimension {} does not match embedding dimension {}",
            projections.dim(),
            params.config.embed_dim
        )));
    }
    Ok(TrainedModel { params, projections, config })
}

/// Prefixes of every model stored in `ck`, in file order.
pub fn model_prefixes(ck: &Checkpoint) -> Vec<String> {
    ck.entries().iter().filter_map(|(n, _)| n.strip_suffix(CONFIG_KEY).map(str::to_string)).collect()
}

pub fn models_to_checkpoint(models: &[(String, TrainedModel)]) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new();
    for (prefix, m) in models {
        put_trained(&mut ck, prefix, m)?;
    }
    Ok(ck)
}

pub fn models_from_checkpoint(ck: &Checkpoint) -> Result<Vec<(String, TrainedModel)>> {
    let prefixes = model_prefixes(ck);
    if prefixes.is_empty() {
        return Err(ClotError::State("checkpoint holds no trained model".into()));
    }
    prefixes.into_iter().map(|p| Ok((p.clone(), get_trained(ck, &p)?))).collect()
}

pub fn save_models(path: &Path, models: &[(String, TrainedModel)]) -> Result<()> {
    models_to_checkpoint(models)?.save(path)
}

pub fn load_models(path: &Path) -> Result<Vec<(String, TrainedModel)>> {
    models_from_checkpoint(&Checkpoint::load(path)?)
}
