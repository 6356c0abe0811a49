//! Retrains on every speculative training set and scores each on the
//! shared test set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::{fmt_num, fmt_opt, group_metrics, GroupMetrics};
use super::split::{DatasetBundle, SpeculativeConfig};
use super::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::mapping::Direction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `None` for the non-speculative baseline.
    pub config: Option<SpeculativeConfig>,
    pub n_train: usize,
    pub n_cwes_in_train: usize,
    pub auroc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: f64,
}

impl SweepRow {
    pub fn threshold(&self) -> Option<f64> {
        self.config.map(|c| c.threshold)
    }

    pub fn direction(&self) -> Option<Direction> {
        self.config.map(|c| c.direction)
    }
}

fn lookup<'a>(ids: &BTreeSet<u64>, features: &'a BTreeMap<u64, FeatureVector>) -> Result<Vec<&'a FeatureVector>> {
    ids.iter()
        .map(|id| {
            features
                .get(id)
                .ok_or_else(|| Error::validation(format!("no feature vector for fused alert {id}")))
        })
        .collect()
}

/// One row per configuration in bundle order, then the baseline row.
/// Identical training sets are trained once.
pub fn sweep(
    bundle: &DatasetBundle,
    features: &BTreeMap<u64, FeatureVector>,
    config: &TrainConfig,
    threshold: f64,
) -> Result<Vec<SweepRow>> {
    bundle.check_hygiene()?;
    let test = lookup(&bundle.af_test, features)?;
    if test.is_empty() {
        return Err(Error::validation("test set is empty"));
    }
    let labels: Vec<u8> = test.iter().map(|fv| fv.label).collect();

    let runs: Vec<(Option<SpeculativeConfig>, &BTreeSet<u64>)> = bundle
        .af_speculative
        .iter()
        .map(|s| (Some(s.config), &s.ids))
        .chain(std::iter::once((None, &bundle.af_non_speculative)))
        .collect();

    let mut cache: BTreeMap<&BTreeSet<u64>, GroupMetrics> = BTreeMap::new();
    let mut rows = Vec::with_capacity(runs.len());
    for (cfg, ids) in runs {
        let label = cfg.map_or_else(|| "baseline".to_string(), |c| c.to_string());
        let wrap = |e: Error| Error::Sweep {
            config: label.clone(),
            source: Box::new(e),
        };
        let train_set = lookup(ids, features).map_err(wrap)?;
        let metrics = match cache.get(ids) {
            Some(m) => m.clone(),
            None => {
                let model = train(&train_set, config).map_err(wrap)?;
                let preds = model.predict_many(&test).map_err(wrap)?;
                let m = group_metrics(&preds, &labels, threshold);
                cache.insert(ids, m.clone());
                m
            }
        };
        let cwes: BTreeSet<u32> = train_set.iter().map(|fv| fv.cwe).collect();
        rows.push(SweepRow {
            config: cfg,
            n_train: train_set.len(),
            n_cwes_in_train: cwes.len(),
            auroc: metrics.auroc,
            precision: metrics.precision,
            recall: metrics.recall,
            accuracy: metrics.accuracy,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "threshold",
        "direction",
        "n_train",
        "n_cwes_in_train",
        "auroc",
        "precision",
        "recall",
        "accuracy",
    ])
    .unwrap();
    for r in rows {
        let (t, d) = match r.config {
            Some(c) => (c.threshold.to_string(), c.direction.to_string()),
            None => ("none".to_string(), "none".to_string()),
        };
        w.write_record([
            t,
            d,
            r.n_train.to_string(),
            r.n_cwes_in_train.to_string(),
            fmt_opt(r.auroc),
            fmt_opt(r.precision),
            fmt_opt(r.recall),
            fmt_num(r.accuracy),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}
