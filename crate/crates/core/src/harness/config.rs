//! Experiment configuration files.
//!
//! ```toml
//! kind = "weak-error"
//! seed = 0
//! horizon = 1.0
//! functional = "second-moment"
//! grid = [8, 16, 32, 64, 128, 256]
//! samples = 50
//!
//! [model]
//! name = "mean-field-ou"
//! alpha = 1.0
//! sigma = 1.4142135623730951
//! init_mean = 0.0
//! init_var = 1.0
//!
//! [options]
//! max_samples = 500000
//! ```
//!
//! `grid` holds particle counts, step counts or tolerances depending on the
//! kind; `samples` is the number of clouds per grid point (the pilot size for
//! `weak-error`, the number of seeds for `complexity`). Unknown keys are
//! rejected.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::measure::Functional;
use crate::models::{self, InitialLaw, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    IidVariance,
    ParticleVariance,
    WeakError,
    StrongPoc,
    EulerStrong,
    Complexity,
    Estimate,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::IidVariance,
        ExperimentKind::ParticleVariance,
        ExperimentKind::WeakError,
        ExperimentKind::StrongPoc,
        ExperimentKind::EulerStrong,
        ExperimentKind::Complexity,
        ExperimentKind::Estimate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::IidVariance => "iid-variance",
            ExperimentKind::ParticleVariance => "particle-variance",
            ExperimentKind::WeakError => "weak-error",
            ExperimentKind::StrongPoc => "strong-poc",
            ExperimentKind::EulerStrong => "euler-strong",
            ExperimentKind::Complexity => "complexity",
            ExperimentKind::Estimate => "estimate",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::config(format!("unknown experiment kind '{name}' (expected one of {names:?})"))
            })
    }

    /// Whether grid entries are integer sizes (particles or steps).
    fn integer_grid(self) -> bool {
        !matches!(self, ExperimentKind::Complexity)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_one() -> f64 {
    1.0
}

fn default_unit_var() -> f64 {
    1.0
}

fn default_functional() -> String {
    "mean".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    MeanFieldOu {
        alpha: f64,
        sigma: f64,
        #[serde(default)]
        init_mean: f64,
        #[serde(default = "default_unit_var")]
        init_var: f64,
    },
    Kuramoto {
        coupling: f64,
        sigma: f64,
        #[serde(default)]
        init_mean: f64,
        #[serde(default = "default_unit_var")]
        init_var: f64,
    },
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        match *self {
            ModelConfig::MeanFieldOu {
                alpha,
                sigma,
                init_mean,
                init_var,
            } => models::mean_field_ou(alpha, sigma, init_mean, init_var),
            ModelConfig::Kuramoto {
                coupling,
                sigma,
                init_mean,
                init_var,
            } => models::kuramoto(coupling, sigma)?.with_initial_law(InitialLaw::gaussian(init_mean, init_var)?),
        }
    }
}

/// A grid entry written either as an integer or a float.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Int(u64),
    Float(f64),
}

impl GridValue {
    pub fn as_f64(self) -> f64 {
        match self {
            GridValue::Int(i) => i as f64,
            GridValue::Float(f) => f,
        }
    }
}

/// Kind-specific settings; each kind reads the fields it needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// `euler` or `exact` for particle-variance; an estimator name for estimate.
    pub estimator: Option<String>,
    /// Fixed step count (strong-poc; weak-error along the steps axis).
    pub steps: Option<usize>,
    /// Fixed particle count (euler-strong; weak-error along the steps axis).
    pub particles: Option<usize>,
    /// Whether the weak-error grid lists particle counts or step counts.
    pub axis: Option<String>,
    /// Reference resolution for euler-strong.
    pub reference_steps: Option<usize>,
    /// `exact` or `euler` reference for euler-strong.
    pub reference: Option<String>,
    /// Upper bound on auto-scaled cloud counts in weak-error.
    pub max_samples: Option<u64>,
    /// Level-0 particle count for epsilon schedules.
    pub base_n: Option<usize>,
    /// Target RMSE for estimate.
    pub epsilon: Option<f64>,
    /// Manual per-level cloud counts for estimate.
    pub counts: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub horizon: f64,
    #[serde(default = "default_functional")]
    pub functional: String,
    #[serde(default)]
    pub grid: Vec<GridValue>,
    pub samples: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub options: Options,
}

const PRESETS: [(&str, &str); 8] = [
    ("iid-variance", include_str!("../../presets/iid-variance.toml")),
    ("particle-variance", include_str!("../../presets/particle-variance.toml")),
    ("weak-error", include_str!("../../presets/weak-error.toml")),
    ("strong-poc", include_str!("../../presets/strong-poc.toml")),
    ("euler-strong", include_str!("../../presets/euler-strong.toml")),
    ("euler-strong-kuramoto", include_str!("../../presets/euler-strong-kuramoto.toml")),
    ("complexity", include_str!("../../presets/complexity.toml")),
    ("estimate", include_str!("../../presets/estimate.toml")),
];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// A shipped preset by name; see [`ExperimentConfig::preset_names`].
    pub fn preset(name: &str) -> Result<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml(text))
            .unwrap_or_else(|| Err(Error::config(format!("no preset named '{name}'"))))
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the normalized config (defaults filled in).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.samples == 0 {
            return Err(Error::config("samples must be positive"));
        }
        let needs_grid = self.kind != ExperimentKind::Estimate;
        if needs_grid && self.grid.len() < 3 {
            return Err(Error::config(format!("{} needs at least 3 grid points for a rate fit", self.kind)));
        }
        let values: Vec<f64> = self.grid.iter().map(|g| g.as_f64()).collect();
        if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::config("grid values must be positive"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) && self.kind != ExperimentKind::Complexity {
            return Err(Error::config("grid must be strictly increasing"));
        }
        if self.kind == ExperimentKind::Complexity && values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("epsilon grid must be strictly decreasing"));
        }
        if self.kind.integer_grid() && self.grid.iter().any(|g| matches!(g, GridValue::Float(_))) {
            return Err(Error::config(format!("{} grid entries must be integers", self.kind)));
        }
        self.model.build()?;
        self.functional_spec()?;
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.model.build()
    }

    pub fn functional_spec(&self) -> Result<Functional> {
        Functional::by_name(&self.functional, 1)
    }

    /// Grid as integer sizes.
    pub fn sizes(&self) -> Vec<usize> {
        self.grid.iter().map(|g| g.as_f64() as usize).collect()
    }

    pub fn grid_values(&self) -> Vec<f64> {
        self.grid.iter().map(|g| g.as_f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for name in ExperimentConfig::preset_names() {
            let cfg = ExperimentConfig::preset(name).unwrap();
            let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(cfg, again, "{name}");
        }
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let base = ExperimentConfig::preset("strong-poc").unwrap().to_toml();
        assert!(ExperimentConfig::from_toml(&format!("bogus = 1\n{base}")).is_err());
        let nested = base.replace("[model]", "[model]\nextra = 2.0");
        assert!(matches!(ExperimentConfig::from_toml(&nested), Err(Error::Parse(_))));
        let opt = format!("{base}\n[options]\nwhatever = 3\n");
        assert!(ExperimentConfig::from_toml(&opt).is_err());
    }

    #[test]
    fn grid_validation() {
        let text = r#"
            kind = "iid-variance"
            functional = "cos-mean"
            grid = [16, 8]
            samples = 10
            [model]
            name = "mean-field-ou"
            alpha = 1.0
            sigma = 1.0
        "#;
        assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))));
        let ok = text.replace("[16, 8]", "[8, 16, 32]");
        let cfg = ExperimentConfig::from_toml(&ok).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.horizon, 1.0);
        assert_eq!(cfg.sizes(), vec![8, 16, 32]);
        assert!(ExperimentConfig::from_toml(&ok.replace("[8, 16, 32]", "[8, 16.5, 32]")).is_err());
        assert!(ExperimentConfig::from_toml(&ok.replace("cos-mean", "sin-mean")).is_err());
        assert!(ExperimentConfig::from_toml(&ok.replace("alpha = 1.0", "alpha = -1.0")).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::preset("complexity").unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
