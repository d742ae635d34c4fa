//! Name-based construction of the built-in models from a JSON configuration
//! object. Each model documents its own schema; unknown fields are rejected.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::LogJointModel;
use crate::models::{Fig2Model, GaussConjugateModel, MiniElgmConfig, MiniElgmModel};

pub const MODEL_NAMES: &[&str] = &["fig2", "gauss_conjugate", "mini_elgm"];

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GaussConjugateConfig {
    #[serde(default)]
    data: Option<Vec<f64>>,
}

/// Build a registered model.
///
/// Config schemas:
/// - `fig2`: `{}`
/// - `gauss_conjugate`: `{"data": [..]}` (optional; a fixed default set otherwise)
/// - `mini_elgm`: `{"age_effect": bool, "data_path": str, "adjacency_path": str}`
///   (all optional; built-in fixtures otherwise)
pub fn build_model(name: &str, config: &serde_json::Value) -> Result<Box<dyn LogJointModel>> {
    let ensure_empty = |value: &serde_json::Value| -> Result<()> {
        match value {
            serde_json::Value::Null => Ok(()),
            serde_json::Value::Object(map) if map.is_empty() => Ok(()),
            other => Err(Error::Config(format!(
                "model {name} takes no configuration, got {other}"
            ))),
        }
    };
    match name {
        "fig2" => {
            ensure_empty(config)?;
            Ok(Box::new(Fig2Model::new()))
        }
        "gauss_conjugate" => {
            let cfg: GaussConjugateConfig = from_value(name, config)?;
            Ok(match cfg.data {
                Some(data) if data.is_empty() => {
                    return Err(Error::Config("gauss_conjugate needs at least one datum".into()))
                }
                Some(data) => Box::new(GaussConjugateModel::new(data)),
                None => Box::new(GaussConjugateModel::with_default_data()),
            })
        }
        "mini_elgm" => {
            let cfg: MiniElgmConfig = from_value(name, config)?;
            Ok(Box::new(MiniElgmModel::from_config(&cfg)?))
        }
        other => Err(Error::Config(format!(
            "unknown model {other:?}; available: {}",
            MODEL_NAMES.join(", ")
        ))),
    }
}

fn from_value<T: for<'de> Deserialize<'de> + Default>(
    name: &str,
    value: &serde_json::Value,
) -> Result<T> {
    if value.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(value.clone())
        .map_err(|e| Error::Config(format!("bad configuration for model {name}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_all_registered_models() {
        for name in MODEL_NAMES {
            let model = build_model(name, &serde_json::Value::Null).unwrap();
            assert!(model.space().hyper_dim() >= 1);
        }
    }

    #[test]
    fn unknown_name_and_bad_config_rejected() {
        assert!(build_model("nope", &serde_json::Value::Null).is_err());
        let bad = serde_json::json!({"definitely_not_a_field": 1});
        assert!(build_model("mini_elgm", &bad).is_err());
        assert!(build_model("fig2", &bad).is_err());
    }

    #[test]
    fn age_variant_from_config() {
        let cfg = serde_json::json!({"age_effect": true});
        let model = build_model("mini_elgm", &cfg).unwrap();
        assert_eq!(model.space().hyper_dim(), 4);
    }
}
