//! Run configuration: one JSON document, every field optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{ContrastBackend, FileBackend, SaliencyBackend, UniformBackend};
use crate::error::{Error, Result};
use crate::learning::TrainConfig;
use crate::multiscale::Arch;
use crate::patching::generate_view_directions;

/// How patch saliency is reweighted before fusion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    None,
    /// Average ERP prior sampled into each patch.
    #[serde(alias = "constant-average")]
    Constant,
    /// One learned grid shared by all elevations.
    Single,
    /// One learned grid per direction elevation.
    #[default]
    Multi,
}

impl std::str::FromStr for BiasMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BiasMode::None),
            "constant" | "constant-average" => Ok(BiasMode::Constant),
            "single" => Ok(BiasMode::Single),
            "multi" => Ok(BiasMode::Multi),
            other => Err(Error::invalid(format!(
                "bias mode must be none, constant, single or multi, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendChoice {
    Contrast {
        #[serde(default = "default_sigma_pairs")]
        sigma_pairs: Vec<(f64, f64)>,
    },
    /// Precomputed `d{idx}_a{aov}.pfm` maps.
    Files { dir: PathBuf },
    Uniform {
        #[serde(default = "one")]
        value: f64,
    },
}

fn default_sigma_pairs() -> Vec<(f64, f64)> {
    ContrastBackend::default().sigma_pairs
}

fn one() -> f64 {
    1.0
}

impl Default for BackendChoice {
    fn default() -> Self {
        BackendChoice::Contrast {
            sigma_pairs: default_sigma_pairs(),
        }
    }
}

impl BackendChoice {
    pub fn build(&self) -> Box<dyn SaliencyBackend<f64>> {
        match self {
            BackendChoice::Contrast { sigma_pairs } => Box::new(ContrastBackend {
                sigma_pairs: sigma_pairs.clone(),
            }),
            BackendChoice::Files { dir } => Box::new(FileBackend::new(dir)),
            BackendChoice::Uniform { value } => Box::new(UniformBackend { value: *value }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub erp_height: usize,
    pub erp_width: usize,
    pub patch_height: usize,
    pub patch_width: usize,
    pub interval_deg: f64,
    /// Strictly increasing.
    pub aovs_deg: Vec<f64>,
    pub arch: Arch,
    /// Intermediate attention channels C.
    pub attention_hidden: usize,
    pub bias: BiasMode,
    /// Bias grid rows and columns.
    pub bias_grid: [usize; 2],
    /// L1-normalize with solid-angle weights instead of plain sums.
    pub sphere_weighted_l1: bool,
    pub backend: BackendChoice,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            erp_height: 800,
            erp_width: 1600,
            patch_height: 500,
            patch_width: 500,
            interval_deg: 45.0,
            aovs_deg: vec![100.0, 110.0, 120.0],
            arch: Arch::FeatureDeep,
            attention_hidden: 8,
            bias: BiasMode::Multi,
            bias_grid: [20, 20],
            sphere_weighted_l1: false,
            backend: BackendChoice::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            format: "config JSON",
            reason: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.erp_height == 0 || self.erp_width != 2 * self.erp_height {
            return Err(Error::invalid(format!(
                "ERP size {}x{} must be positive with width = 2 x height",
                self.erp_height, self.erp_width
            )));
        }
        if self.patch_height == 0 || self.patch_width == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        generate_view_directions(self.interval_deg.to_radians())?;
        if self.aovs_deg.is_empty() {
            return Err(Error::invalid("at least one angle of view is required"));
        }
        for &a in &self.aovs_deg {
            if !(a > 0.0 && a < 180.0) {
                return Err(Error::invalid(format!("angle of view {a} outside (0, 180)")));
            }
        }
        if self.aovs_deg.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("angles of view must be strictly increasing"));
        }
        if self.attention_hidden == 0 {
            return Err(Error::invalid("attention_hidden must be positive"));
        }
        if self.bias_grid[0] == 0 || self.bias_grid[1] == 0 {
            return Err(Error::invalid("bias grid must be at least 1x1"));
        }
        if let BackendChoice::Contrast { sigma_pairs } = &self.backend {
            if sigma_pairs.is_empty() || sigma_pairs.iter().any(|&(c, s)| !(c > 0.0 && s > c)) {
                return Err(Error::invalid("contrast sigma pairs need 0 < center < surround"));
            }
        }
        if self.arch.uses_features() && self.aovs_deg.len() > 1 {
            let has_features = self.backend.build().feature_channels().is_some();
            if !has_features {
                return Err(Error::MissingFeatures(self.arch.number()));
            }
        }
        self.train.validate()
    }

    pub fn aovs_rad(&self) -> Vec<f64> {
        self.aovs_deg.iter().map(|a| a.to_radians()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_json() {
        let c = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!((c.erp_height, c.erp_width), (800, 1600));
        assert_eq!(c.aovs_deg, vec![100.0, 110.0, 120.0]);
        assert_eq!(c.arch, Arch::FeatureDeep);
        c.validate().unwrap();

        let c = PipelineConfig::from_json(
            r#"{"arch": 1, "bias": "constant-average", "backend": {"kind": "files", "dir": "x"}, "train": {"epochs": 2}}"#,
        )
        .unwrap();
        assert_eq!(c.arch, Arch::Shallow);
        assert_eq!(c.bias, BiasMode::Constant);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.lr_bias, 1e-4);
    }

    #[test]
    fn round_trip_json() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_json(r#"{"nope": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"arch": 5}"#).is_err());
        let bad = |f: &dyn Fn(&mut PipelineConfig)| {
            let mut c = PipelineConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(&|c| c.interval_deg = 50.0));
        assert!(bad(&|c| c.erp_width = 1000));
        assert!(bad(&|c| c.aovs_deg = vec![120.0, 100.0]));
        assert!(bad(&|c| c.aovs_deg.clear()));
        assert!(bad(&|c| c.aovs_deg = vec![180.0]));
        assert!(bad(&|c| c.backend = BackendChoice::Uniform { value: 1.0 }));
        assert!(bad(&|c| c.train.rho = 1.0));
    }

    #[test]
    fn bias_mode_parse() {
        assert_eq!("multi".parse::<BiasMode>().unwrap(), BiasMode::Multi);
        assert_eq!("constant".parse::<BiasMode>().unwrap(), BiasMode::Constant);
        assert!("x".parse::<BiasMode>().is_err());
    }
}
