//! Versioned JSON model files.
//!
//! A file holds `version`, `loss`, `config`, `scaler`, `gam`, `boost`,
//! `meta` and a `checksum`, the SHA-256 of the compact JSON of the other
//! keys. Floats are written with round-trip precision, so a loaded model
//! predicts bit-identically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::boost::BoostModel;
use crate::dataio::Preprocessing;
use crate::error::{PieError, Result};
use crate::gam::GamModel;
use crate::loss::LossKind;
use crate::trainer::{PieConfig, PieModel, TrainingMeta};

pub const FORMAT_VERSION: &str = "1";
pub const SUPPORTED_VERSIONS: &[&str] = &["1"];

#[derive(Serialize, Deserialize)]
struct Body {
    version: String,
    loss: LossKind,
    config: PieConfig,
    scaler: Option<Preprocessing>,
    gam: GamModel,
    boost: BoostModel,
    meta: TrainingMeta,
}

#[derive(Serialize)]
struct File<'a> {
    #[serde(flatten)]
    body: &'a Body,
    checksum: String,
}

fn checksum(body: &Body) -> Result<String> {
    let compact = serde_json::to_string(body).map_err(|e| PieError::ModelParse(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(compact.as_bytes())))
}

pub fn to_json_string(model: &PieModel) -> Result<String> {
    let body = Body {
        version: FORMAT_VERSION.to_string(),
        loss: model.loss(),
        config: model.config.clone(),
        scaler: model.preprocessing.clone(),
        gam: model.gam.clone(),
        boost: model.boost.clone(),
        meta: model.meta.clone(),
    };
    let file = File {
        checksum: checksum(&body)?,
        body: &body,
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| PieError::ModelParse(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn from_json_str(text: &str) -> Result<PieModel> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| PieError::ModelParse(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| PieError::ModelParse("model file is not a JSON object".into()))?;
    let version = match obj.get("version") {
        Some(Value::String(v)) => v.clone(),
        Some(other) => other.to_string(),
        None => return Err(PieError::ModelParse("missing version".into())),
    };
    if !SUPPORTED_VERSIONS.contains(&version.as_str()) {
        return Err(PieError::VersionMismatch {
            found: version,
            supported: SUPPORTED_VERSIONS.iter().map(|s| s.to_string()).collect(),
        });
    }
    let stored = match obj.remove("checksum") {
        Some(Value::String(s)) => Some(s),
        None => None,
        Some(_) => return Err(PieError::ModelParse("checksum must be a string".into())),
    };
    let body: Body = serde_json::from_value(value).map_err(|e| PieError::ModelParse(e.to_string()))?;
    if let Some(stored) = stored {
        let computed = checksum(&body)?;
        if stored != computed {
            return Err(PieError::Checksum { stored, computed });
        }
    }
    if body.loss != body.config.loss {
        return Err(PieError::ModelParse("loss disagrees with config".into()));
    }
    for spec in &body.gam.specs {
        spec.validate().map_err(|e| PieError::ModelParse(e.to_string()))?;
    }
    if body.gam.specs.len() != body.gam.coefficients.len()
        || body
            .gam
            .specs
            .iter()
            .zip(&body.gam.coefficients)
            .any(|(s, c)| s.n_basis() != c.len())
    {
        return Err(PieError::ModelParse("coefficient shapes disagree with the basis".into()));
    }
    Ok(PieModel {
        gam: body.gam,
        boost: body.boost,
        config: body.config,
        meta: body.meta,
        preprocessing: body.scaler,
    })
}

pub fn save_model(model: &PieModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json_string(model)?).map_err(|e| PieError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PieModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| PieError::io(path, e))?;
    from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use crate::trainer::fit_pie;

    fn model() -> (PieModel, crate::dataio::Dataset) {
        let ds = synthetic::standardized(&synthetic::interaction(200, 2, 0.1, 11));
        let cfg = PieConfig { lambda2: 1e-3, max_iter: 30, ..Default::default() };
        (fit_pie(&ds, &cfg).unwrap(), ds)
    }

    #[test]
    fn round_trip_is_exact() {
        let (m, ds) = model();
        let text = to_json_string(&m).unwrap();
        let back = from_json_str(&text).unwrap();
        assert_eq!(back, m);
        let a = m.predict_dataset(&ds).unwrap();
        let b = back.predict_dataset(&ds).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.score.to_bits(), q.score.to_bits());
        }
        assert_eq!(to_json_string(&back).unwrap(), text);
    }

    #[test]
    fn infinite_penalty_round_trips() {
        let ds = synthetic::standardized(&synthetic::interaction(100, 0, 0.1, 12));
        let cfg = PieConfig { lambda2: f64::INFINITY, max_iter: 10, ..Default::default() };
        let m = fit_pie(&ds, &cfg).unwrap();
        let text = to_json_string(&m).unwrap();
        assert!(text.contains("\"inf\""));
        assert!(from_json_str(&text).unwrap().config.lambda2.is_infinite());
    }

    #[test]
    fn file_errors() {
        let (m, _) = model();
        let text = to_json_string(&m).unwrap();
        let truncated = &text[..text.len() / 2];
        assert!(matches!(from_json_str(truncated), Err(PieError::ModelParse(_))));

        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["version"] = Value::String("2".into());
        match from_json_str(&v.to_string()) {
            Err(PieError::VersionMismatch { found, supported }) => {
                assert_eq!(found, "2");
                assert_eq!(supported, vec!["1".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["gam"]["intercept"] = serde_json::json!(123.0);
        assert!(matches!(from_json_str(&v.to_string()), Err(PieError::Checksum { .. })));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pie.json");
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
        assert!(matches!(load_model(dir.path().join("missing")), Err(PieError::Io { .. })));
    }
}
