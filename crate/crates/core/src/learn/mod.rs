//! Train/test splits, classifiers, evaluation and the speculative sweep.

pub mod encode;
pub mod gbt;
pub mod lasso;
pub mod metrics;
pub mod split;
pub mod sweep;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use encode::{label_counts, targets, ColumnKind, Encoding};
use gbt::{GbtModel, GbtParams};
use lasso::{LassoModel, LassoParams};

pub use metrics::{auroc, evaluate, roc_curve, CertMap, EvalReport, GroupMetrics};
pub use split::{build_splits, DatasetBundle, SpeculativeConfig, SplitSpec};
pub use sweep::{sweep, SweepRow};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Probabilities stay this far from 0 and 1.
const PROB_MARGIN: f64 = 1e-15;

pub(crate) fn sigmoid(s: f64) -> f64 {
    let p = if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_MARGIN, 1.0 - PROB_MARGIN)
}

/// Logistic loss of score `s` against target `y`.
pub(crate) fn log_loss(s: f64, y: f64) -> f64 {
    let softplus = if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    };
    softplus - y * s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "gbt")]
    Gbt,
    #[serde(rename = "lasso-logit")]
    LassoLogit,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gbt => "gbt",
            ModelKind::LassoLogit => "lasso-logit",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gbt" => Ok(ModelKind::Gbt),
            "lasso-logit" | "lasso" => Ok(ModelKind::LassoLogit),
            other => Err(Error::validation(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub seed: u64,
    #[serde(default)]
    pub gbt: GbtParams,
    #[serde(default)]
    pub lasso: LassoParams,
}

impl TrainConfig {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        TrainConfig {
            kind,
            seed,
            gbt: GbtParams::default(),
            lasso: LassoParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameters {
    Gbt(GbtModel),
    LassoLogit(LassoModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub schema_version: u32,
    pub kind: ModelKind,
    /// Column names in the order the parameters index them.
    pub feature_schema: Vec<String>,
    pub encoding: Encoding,
    pub parameters: Parameters,
    pub training_config: TrainConfig,
}

pub fn train(examples: &[&FeatureVector], config: &TrainConfig) -> Result<TrainedModel> {
    let encoding = Encoding::fit(examples)?;
    let y = targets(examples);
    let (feature_schema, parameters) = match config.kind {
        ModelKind::Gbt => {
            let counts = label_counts(examples);
            for (label, name) in [(1u8, "True"), (0u8, "False")] {
                if !counts.contains_key(&label) {
                    return Err(Error::SingleLabel { missing: name });
                }
            }
            let schema = encoding.tree_schema();
            let kinds: Vec<ColumnKind> = schema.iter().map(|(_, k)| *k).collect();
            let rows = examples
                .iter()
                .map(|fv| encoding.tree_row(fv))
                .collect::<Result<Vec<_>>>()?;
            let (model, _) = gbt::fit(&kinds, &rows, &y, &config.gbt);
            (
                schema.into_iter().map(|(n, _)| n).collect(),
                Parameters::Gbt(model),
            )
        }
        ModelKind::LassoLogit => {
            let rows = examples
                .iter()
                .map(|fv| encoding.linear_row(fv))
                .collect::<Result<Vec<_>>>()?;
            let (model, _) = lasso::fit(&rows, &y, &config.lasso);
            (encoding.linear_schema(), Parameters::LassoLogit(model))
        }
    };
    Ok(TrainedModel {
        schema_version: MODEL_SCHEMA_VERSION,
        kind: config.kind,
        feature_schema,
        encoding,
        parameters,
        training_config: *config,
    })
}

pub fn predict(model: &TrainedModel, fv: &FeatureVector) -> Result<f64> {
    Ok(match &model.parameters {
        Parameters::Gbt(m) => m.predict(&model.encoding.tree_row(fv)?),
        Parameters::LassoLogit(m) => m.predict(&model.encoding.linear_row(fv)?),
    })
}

impl TrainedModel {
    pub fn predict_many(&self, vectors: &[&FeatureVector]) -> Result<Vec<f64>> {
        vectors.iter().map(|fv| predict(self, fv)).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(document: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(document).map_err(|e| Error::from_json(document, &e))?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Structure {
                field: "schema_version".into(),
            })?;
        if found != u64::from(MODEL_SCHEMA_VERSION) {
            return Err(Error::SchemaVersion {
                found: found as u32,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        serde_json::from_str(document).map_err(|e| Error::from_json(document, &e))
    }
}

fn ranked(mut scores: Vec<(String, f64)>, top_k: usize) -> Vec<(String, f64)> {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scores.truncate(top_k);
    scores
}

/// Total split gain per feature, descending, features without splits omitted.
pub fn feature_importance(model: &TrainedModel, top_k: usize) -> Result<Vec<(String, f64)>> {
    let Parameters::Gbt(m) = &model.parameters else {
        return Err(Error::UnsupportedKind(model.kind.to_string()));
    };
    let p = model.feature_schema.len();
    let gains = m.gain_by_feature(p);
    let used = m.split_count_by_feature(p);
    let scores = model
        .feature_schema
        .iter()
        .zip(gains)
        .zip(used)
        .filter(|(_, n)| *n > 0)
        .map(|((name, g), _)| (name.clone(), g))
        .collect();
    Ok(ranked(scores, top_k))
}

/// Standardized |weight| per feature, descending, zero weights omitted.
pub fn weight_ranking(model: &TrainedModel, top_k: usize) -> Result<Vec<(String, f64)>> {
    let Parameters::LassoLogit(m) = &model.parameters else {
        return Err(Error::UnsupportedKind(model.kind.to_string()));
    };
    let scores = model
        .feature_schema
        .iter()
        .zip(m.standardized_weights())
        .filter(|(_, w)| *w != 0.0)
        .map(|(name, w)| (name.clone(), w.abs()))
        .collect();
    Ok(ranked(scores, top_k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn fv(id: u64, x1: f64, x2: f64, label: u8) -> FeatureVector {
        FeatureVector {
            fused_id: id,
            cwe: 121,
            variant_id: None,
            tool_flags: BTreeMap::from([("A".to_string(), true)]),
            n_tools: 1,
            metrics: BTreeMap::from([("m.x1".to_string(), Some(x1)), ("m.x2".to_string(), Some(x2))]),
            label,
        }
    }

    fn xor() -> Vec<FeatureVector> {
        vec![fv(0, 0.0, 0.0, 0), fv(1, 0.0, 1.0, 1), fv(2, 1.0, 0.0, 1), fv(3, 1.0, 1.0, 0)]
    }

    fn refs(v: &[FeatureVector]) -> Vec<&FeatureVector> {
        v.iter().collect()
    }

    #[test]
    fn sigmoid_stays_inside_unit_interval() {
        for s in [-1e308, -800.0, -40.0, 0.0, 40.0, 800.0, 1e308] {
            let p = sigmoid(s);
            assert!(p > 0.0 && p < 1.0, "{s} -> {p}");
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn gbt_needs_both_labels() {
        let data = vec![fv(0, 0.0, 0.0, 1), fv(1, 1.0, 0.0, 1)];
        match train(&refs(&data), &TrainConfig::new(ModelKind::Gbt, 1)) {
            Err(Error::SingleLabel { missing }) => assert_eq!(missing, "False"),
            other => panic!("{other:?}"),
        }
        assert!(train(&refs(&data), &TrainConfig::new(ModelKind::LassoLogit, 1)).is_ok());
    }

    #[test]
    fn non_finite_metric_is_rejected() {
        let mut data = xor();
        data[0].metrics.insert("m.x1".into(), Some(f64::INFINITY));
        for kind in [ModelKind::Gbt, ModelKind::LassoLogit] {
            assert!(matches!(
                train(&refs(&data), &TrainConfig::new(kind, 1)),
                Err(Error::NonFinite { .. })
            ));
        }
    }

    #[test]
    fn schema_mismatch_lists_features() {
        let data = xor();
        let model = train(&refs(&data), &TrainConfig::new(ModelKind::LassoLogit, 1)).unwrap();
        let mut bad = data[0].clone();
        bad.metrics.remove("m.x2");
        bad.metrics.insert("m.x3".into(), Some(0.0));
        match predict(&model, &bad) {
            Err(Error::SchemaMismatch { missing, extra }) => {
                assert_eq!(missing, vec!["m.x2".to_string()]);
                assert_eq!(extra, vec!["m.x3".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn model_json_round_trip_and_version_check() {
        let data = xor();
        let mut cfg = TrainConfig::new(ModelKind::Gbt, 7);
        cfg.gbt.min_samples_leaf = 1;
        let model = train(&refs(&data), &cfg).unwrap();
        let json = model.to_json();
        assert_eq!(TrainedModel::from_json(&json).unwrap(), model);
        let bumped = json.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
        assert!(matches!(
            TrainedModel::from_json(&bumped),
            Err(Error::SchemaVersion { found: 99, .. })
        ));
    }

    #[test]
    fn importance_is_gbt_only() {
        let data = xor();
        let model = train(&refs(&data), &TrainConfig::new(ModelKind::LassoLogit, 1)).unwrap();
        assert!(matches!(feature_importance(&model, 10), Err(Error::UnsupportedKind(_))));
        assert!(weight_ranking(&model, 10).is_ok());
    }

    #[test]
    fn zero_round_gbt_has_empty_ranking() {
        let data = xor();
        let mut cfg = TrainConfig::new(ModelKind::Gbt, 1);
        cfg.gbt.rounds = 0;
        let model = train(&refs(&data), &cfg).unwrap();
        assert!(feature_importance(&model, 10).unwrap().is_empty());
        assert!((predict(&model, &data[0]).unwrap() - 0.5).abs() < 1e-12);
    }
}
