use std::path::Path;

use alertlab::ingest::AlertFormat;
use alertlab::learn::gbt::GbtParams;
use alertlab::learn::lasso::LassoParams;
use alertlab::learn::split::{SpeculativeConfig, THRESHOLD_GRID};
use alertlab::learn::{ModelKind, TrainConfig};
use alertlab::mapping::Direction;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Workspace configuration. Paths are relative to the workspace root.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub inputs: Inputs,
    pub mapping: MappingSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub alerts: Vec<AlertInput>,
    pub manifest: Option<String>,
    /// Directory scanned recursively for C/C++ sources.
    pub sources: Option<String>,
    pub metrics: Vec<MetricsInput>,
    pub known_mappings: Vec<String>,
    /// Completed review CSVs whose confirmed rows become known mappings.
    pub reviewed: Vec<String>,
    pub cert_map: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertInput {
    pub path: String,
    pub format: AlertFormat,
    /// Tool name for JSONL records that omit it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsInput {
    pub path: String,
    /// Metric namespace for rows with an empty source cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingSection {
    /// Tools to speculate for; unset means every tool without known rules.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speculate_tools: Option<Vec<String>>,
    pub thresholds: Vec<f64>,
    pub directions: Vec<Direction>,
}

impl Default for MappingSection {
    fn default() -> Self {
        MappingSection {
            speculate_tools: None,
            thresholds: THRESHOLD_GRID.to_vec(),
            directions: vec![Direction::Forward, Direction::Backward],
        }
    }
}

impl MappingSection {
    pub fn grid(&self) -> Vec<SpeculativeConfig> {
        self.directions
            .iter()
            .flat_map(|&direction| {
                self.thresholds
                    .iter()
                    .map(move |&threshold| SpeculativeConfig { threshold, direction })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { test_fraction: 0.30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub kind: ModelKind,
    pub gbt: GbtParams,
    pub lasso: LassoParams,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            kind: ModelKind::Gbt,
            gbt: GbtParams::default(),
            lasso: LassoParams::default(),
        }
    }
}

impl TrainSection {
    pub fn config(&self, kind: Option<ModelKind>, seed: u64) -> TrainConfig {
        TrainConfig {
            kind: kind.unwrap_or(self.kind),
            seed,
            gbt: self.gbt,
            lasso: self.lasso,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub decision_threshold: f64,
    pub top_k: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            decision_threshold: 0.5,
            top_k: 10,
        }
    }
}

impl Config {
    /// Parses TOML, or JSON when the file name ends in `.json`.
    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        let is_json = path.extension().is_some_and(|e| e == "json");
        let parsed = if is_json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let toml = r#"
seed = 3
[inputs]
alerts = [{ path = "a.sarif", format = "sarif" }, { path = "b.jsonl", format = "normalized-jsonl", tool = "B" }]
manifest = "manifest.xml"
[mapping]
thresholds = [10.0]
directions = ["combined"]
[train]
kind = "lasso-logit"
[train.lasso]
penalty = 0.05
"#;
        let a = Config::parse(Path::new("x.toml"), toml).unwrap();
        let b = Config::parse(Path::new("x.json"), &serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.kind, ModelKind::LassoLogit);
        assert_eq!(a.train.lasso.penalty, 0.05);
        assert_eq!(a.train.lasso.max_sweeps, LassoParams::default().max_sweeps);
        assert_eq!(a.mapping.grid(), vec![SpeculativeConfig { threshold: 10.0, direction: Direction::Combined }]);
        assert_eq!(Config::parse(Path::new("x.toml"), &a.to_toml()).unwrap(), a);
    }

    #[test]
    fn defaults_cover_the_full_grid() {
        let c = Config::default();
        assert_eq!(c.mapping.grid(), alertlab::learn::split::default_grid());
        assert_eq!(c.split.test_fraction, 0.30);
        assert!(Config::parse(Path::new("x.toml"), "[split]\nfraction = 0.2\n").is_err());
    }
}
