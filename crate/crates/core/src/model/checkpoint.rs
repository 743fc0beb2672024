//! Checkpoint = tensor archive holding every named parameter, with the
//! [`ModelSpec`] stored as JSON in the archive metadata.

use std::path::Path;

use serde_json::json;

use super::{ModelParams, ModelSpec};
use crate::autodiff::io;
use crate::error::{Error, Result};

const FORMAT: &str = "cmlrain-checkpoint";

pub fn to_bytes(spec: &ModelSpec, params: &ModelParams) -> Vec<u8> {
    let named: Vec<(&str, &_)> = params.iter().collect();
    io::encode(&named, json!({ "format": FORMAT, "spec": spec }))
}

pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<(ModelSpec, ModelParams)> {
    let (tensors, meta) = io::decode(bytes, origin)?;
    if meta.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
        return Err(Error::Corrupt { file: origin.into(), message: "not a model checkpoint".into() });
    }
    let spec: ModelSpec = serde_json::from_value(meta["spec"].clone())?;
    let params = ModelParams::from_named(&spec, tensors)?;
    Ok((spec, params))
}

pub fn save(path: &Path, spec: &ModelSpec, params: &ModelParams) -> Result<()> {
    std::fs::write(path, to_bytes(spec, params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ModelSpec, ModelParams)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, &path.display().to_string())
}
