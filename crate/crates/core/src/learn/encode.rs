//! Turns feature vectors into numeric rows.
//!
//! Trees see categorical codes and `NaN` for missing values. The linear
//! model sees one-hot categories, mean-imputed metrics and missing flags.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Vocabulary fixed at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub cwe_categories: Vec<u32>,
    pub variant_categories: Vec<String>,
    pub tools: Vec<String>,
    pub metrics: Vec<String>,
    /// Training mean per metric, 0 when never observed.
    pub metric_means: Vec<f64>,
}

impl Encoding {
    pub fn fit(examples: &[&FeatureVector]) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::validation("training set is empty"))?;
        let tools: Vec<String> = first.tool_flags.keys().cloned().collect();
        let metrics: Vec<String> = first.metrics.keys().cloned().collect();
        let mut cwes = BTreeSet::new();
        let mut variants = BTreeSet::new();
        let mut sums = vec![(0.0f64, 0usize); metrics.len()];
        for fv in examples {
            check_schema(fv, &tools, &metrics)?;
            cwes.insert(fv.cwe);
            if let Some(v) = &fv.variant_id {
                variants.insert(v.clone());
            }
            for (slot, v) in sums.iter_mut().zip(fv.metrics.values()) {
                if let Some(v) = v {
                    slot.0 += v;
                    slot.1 += 1;
                }
            }
        }
        let metric_means = sums
            .iter()
            .map(|&(s, n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect();
        Ok(Encoding {
            cwe_categories: cwes.into_iter().collect(),
            variant_categories: variants.into_iter().collect(),
            tools,
            metrics,
            metric_means,
        })
    }

    pub fn check(&self, fv: &FeatureVector) -> Result<()> {
        check_schema(fv, &self.tools, &self.metrics)
    }

    pub fn tree_schema(&self) -> Vec<(String, ColumnKind)> {
        let mut cols = vec![
            ("cwe".to_string(), ColumnKind::Categorical),
            ("variant".to_string(), ColumnKind::Categorical),
            ("n_tools".to_string(), ColumnKind::Numeric),
        ];
        cols.extend(
            self.tools
                .iter()
                .map(|t| (format!("tool.{t}"), ColumnKind::Numeric)),
        );
        cols.extend(self.metrics.iter().map(|m| (m.clone(), ColumnKind::Numeric)));
        cols
    }

    pub fn tree_row(&self, fv: &FeatureVector) -> Result<Vec<f64>> {
        self.check(fv)?;
        let code = |found: Option<usize>| found.map_or(f64::NAN, |i| i as f64);
        let mut row = vec![
            code(self.cwe_categories.binary_search(&fv.cwe).ok()),
            code(
                fv.variant_id
                    .as_ref()
                    .and_then(|v| self.variant_categories.binary_search(v).ok()),
            ),
            f64::from(fv.n_tools),
        ];
        row.extend(fv.tool_flags.values().map(|&b| f64::from(u8::from(b))));
        for (name, v) in &fv.metrics {
            match v {
                Some(x) if !x.is_finite() => {
                    return Err(Error::NonFinite {
                        feature: name.clone(),
                    })
                }
                Some(x) => row.push(*x),
                None => row.push(f64::NAN),
            }
        }
        Ok(row)
    }

    pub fn linear_schema(&self) -> Vec<String> {
        let mut cols: Vec<String> = self
            .cwe_categories
            .iter()
            .map(|c| format!("cwe={c}"))
            .collect();
        cols.extend(self.variant_categories.iter().map(|v| format!("variant={v}")));
        cols.push("n_tools".into());
        cols.extend(self.tools.iter().map(|t| format!("tool.{t}")));
        cols.extend(self.metrics.iter().cloned());
        cols.extend(self.metrics.iter().map(|m| format!("missing.{m}")));
        cols
    }

    pub fn linear_row(&self, fv: &FeatureVector) -> Result<Vec<f64>> {
        self.check(fv)?;
        let mut row: Vec<f64> = self
            .cwe_categories
            .iter()
            .map(|&c| f64::from(u8::from(c == fv.cwe)))
            .collect();
        row.extend(
            self.variant_categories
                .iter()
                .map(|v| f64::from(u8::from(fv.variant_id.as_ref() == Some(v)))),
        );
        row.push(f64::from(fv.n_tools));
        row.extend(fv.tool_flags.values().map(|&b| f64::from(u8::from(b))));
        let mut flags = Vec::with_capacity(self.metrics.len());
        for ((name, v), mean) in fv.metrics.iter().zip(&self.metric_means) {
            let x = v.unwrap_or(*mean);
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    feature: name.clone(),
                });
            }
            row.push(x);
            flags.push(f64::from(u8::from(v.is_none())));
        }
        row.extend(flags);
        Ok(row)
    }
}

fn check_schema(fv: &FeatureVector, tools: &[String], metrics: &[String]) -> Result<()> {
    let expected: BTreeSet<String> = tools
        .iter()
        .map(|t| format!("tool.{t}"))
        .chain(metrics.iter().cloned())
        .collect();
    let found: BTreeSet<String> = fv
        .tool_flags
        .keys()
        .map(|t| format!("tool.{t}"))
        .chain(fv.metrics.keys().cloned())
        .collect();
    if expected == found {
        return Ok(());
    }
    Err(Error::SchemaMismatch {
        missing: expected.difference(&found).cloned().collect(),
        extra: found.difference(&expected).cloned().collect(),
    })
}

/// Labels as 0/1 floats.
pub(crate) fn targets(examples: &[&FeatureVector]) -> Vec<f64> {
    examples.iter().map(|fv| f64::from(fv.label)).collect()
}

pub(crate) fn label_counts(examples: &[&FeatureVector]) -> BTreeMap<u8, usize> {
    let mut counts = BTreeMap::new();
    for fv in examples {
        *counts.entry(fv.label).or_insert(0) += 1;
    }
    counts
}
