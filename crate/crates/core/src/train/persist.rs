use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::diffcore::{AdamConfig, AdamState, ParamSet};
use crate::error::{Error, Result};

pub(crate) fn save_adam(stem: &Path, s: &AdamState) -> Result<()> {
    s.to_params()?.save(stem, json!({"config": s.config, "t": s.t}))
}

pub(crate) fn load_adam(stem: &Path) -> Result<AdamState> {
    let (p, meta) = ParamSet::load(stem)?;
    let config: AdamConfig = serde_json::from_value(meta["config"].clone())?;
    let t = meta["t"]
        .as_u64()
        .ok_or_else(|| Error::Format(format!("{}: missing step count", stem.display())))?;
    Ok(AdamState::from_params(config, t, &p))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
