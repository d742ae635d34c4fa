//! Run configuration: a JSON file plus flag overrides, with flags winning.
//! The merged effective configuration is validated and stored alongside the
//! outputs as `config.lock.json`, so every artifact can be reproduced.

use std::path::Path;

use aghq::adapt::Decomposition;
use aghq::pipeline::{Method, RankChoice};
use aghq::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub model_config: serde_json::Value,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub s: Option<usize>,
    #[serde(default)]
    pub pca_threshold: Option<f64>,
    #[serde(default)]
    pub decomposition: Option<String>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub n_chains: Option<usize>,
    #[serde(default)]
    pub n_iter: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub max_log_joint_calls: Option<u64>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Overlay flag values on top of the file values.
    pub fn merge(mut self, overrides: RunConfig) -> Self {
        if overrides.model.is_some() {
            self.model = overrides.model;
        }
        if !overrides.model_config.is_null() {
            self.model_config = overrides.model_config;
        }
        if overrides.method.is_some() {
            self.method = overrides.method;
        }
        if overrides.k.is_some() {
            self.k = overrides.k;
        }
        if overrides.s.is_some() {
            self.s = overrides.s;
        }
        if overrides.pca_threshold.is_some() {
            self.pca_threshold = overrides.pca_threshold;
        }
        if overrides.decomposition.is_some() {
            self.decomposition = overrides.decomposition;
        }
        if overrides.n_samples.is_some() {
            self.n_samples = overrides.n_samples;
        }
        if overrides.n_chains.is_some() {
            self.n_chains = overrides.n_chains;
        }
        if overrides.n_iter.is_some() {
            self.n_iter = overrides.n_iter;
        }
        if overrides.seed.is_some() {
            self.seed = overrides.seed;
        }
        if overrides.output.is_some() {
            self.output = overrides.output;
        }
        if overrides.threads.is_some() {
            self.threads = overrides.threads;
        }
        if overrides.max_log_joint_calls.is_some() {
            self.max_log_joint_calls = overrides.max_log_joint_calls;
        }
        self
    }

    pub fn validate(self) -> Result<EffectiveConfig> {
        let model =
            self.model.clone().ok_or_else(|| Error::Config("a model name is required".into()))?;
        let method_name = self
            .method
            .clone()
            .ok_or_else(|| Error::Config("a method is required (eb, aghq, pca-aghq, mcmc)".into()))?;
        let seed = self.seed.ok_or_else(|| Error::Config("a seed is mandatory".into()))?;

        let decomposition = match self.decomposition.as_deref().unwrap_or("spectral") {
            "spectral" => Decomposition::Spectral,
            "cholesky" => Decomposition::Cholesky,
            other => {
                return Err(Error::Config(format!(
                    "unknown decomposition {other:?}; use cholesky or spectral"
                )))
            }
        };

        let k = self.k.unwrap_or(3);
        let kind = match method_name.as_str() {
            "eb" => MethodKind::Quadrature(Method::Eb),
            "aghq" => MethodKind::Quadrature(Method::Aghq { k }),
            "pca-aghq" => {
                if decomposition != Decomposition::Spectral {
                    return Err(Error::Config("pca-aghq requires the spectral decomposition".into()));
                }
                let rank = match (self.s, self.pca_threshold) {
                    (Some(s), None) => RankChoice::Fixed(s),
                    (None, Some(t)) => RankChoice::Threshold(t),
                    _ => {
                        return Err(Error::Config(
                            "pca-aghq needs exactly one of `s` or `pca_threshold`".into(),
                        ))
                    }
                };
                MethodKind::Quadrature(Method::PcaAghq { k, rank })
            }
            "mcmc" => MethodKind::Mcmc,
            other => {
                return Err(Error::Config(format!(
                    "unknown method {other:?}; use eb, aghq, pca-aghq, or mcmc"
                )))
            }
        };
        if method_name != "pca-aghq" && (self.s.is_some() || self.pca_threshold.is_some()) {
            return Err(Error::Config(
                "`s` and `pca_threshold` apply to the pca-aghq method only".into(),
            ));
        }

        let locked = RunConfig {
            model: Some(model.clone()),
            model_config: self.model_config.clone(),
            method: Some(method_name),
            k: Some(k),
            s: self.s,
            pca_threshold: self.pca_threshold,
            decomposition: Some(decomposition.to_string()),
            n_samples: Some(self.n_samples.unwrap_or(1000)),
            n_chains: Some(self.n_chains.unwrap_or(4)),
            n_iter: Some(self.n_iter.unwrap_or(10_000)),
            seed: Some(seed),
            output: self.output.clone(),
            threads: Some(self.threads.unwrap_or(1)),
            max_log_joint_calls: self.max_log_joint_calls,
        };

        Ok(EffectiveConfig { kind, decomposition, locked })
    }
}

pub enum MethodKind {
    Quadrature(Method),
    Mcmc,
}

pub struct EffectiveConfig {
    pub kind: MethodKind,
    pub decomposition: Decomposition,
    /// Fully resolved configuration, serialised as `config.lock.json`.
    pub locked: RunConfig,
}

impl EffectiveConfig {
    pub fn model_name(&self) -> &str {
        self.locked.model.as_deref().expect("validated")
    }

    pub fn seed(&self) -> u64 {
        self.locked.seed.expect("validated")
    }

    pub fn lock_text(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(&self.locked).expect("config serialises");
        text.push('\n');
        text
    }
}

/// Grid point budget, overridable through the environment.
pub fn point_budget_from_env() -> Result<u64> {
    match std::env::var("AGHQ_POINT_BUDGET") {
        Ok(text) => text
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("bad AGHQ_POINT_BUDGET value {text:?}"))),
        Err(_) => Ok(aghq::ghq::DEFAULT_POINT_BUDGET),
    }
}
