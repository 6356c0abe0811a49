//! Classification metrics, ROC/AUROC and evaluation reports.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{feature_importance, weight_ranking, ModelKind, TrainedModel};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::mapping::{csv_error, parse_cwe_cell};

/// Mann-Whitney AUROC via average ranks. `None` unless both labels occur.
///
/// Ranks are kept doubled so the statistic is an exact integer ratio.
pub fn auroc(predictions: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(predictions.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));

    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && predictions[order[end]] == predictions[order[start]] {
            end += 1;
        }
        // Positions start..end share the 1-based average rank (start+1+end)/2.
        let doubled = (start + 1 + end) as u128;
        let positives = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        doubled_rank_sum += doubled * positives;
        start = end;
    }
    let doubled_u = doubled_rank_sum - pos * (pos + 1);
    Some(doubled_u as f64 / (2 * pos * neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points from the strictest threshold down, one per distinct score.
pub fn roc_curve(predictions: &[f64], labels: &[u8]) -> Vec<RocPoint> {
    let pos = labels.iter().filter(|&&l| l == 1).count().max(1) as f64;
    let neg = labels.iter().filter(|&&l| l != 1).count().max(1) as f64;
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = predictions[order[k]];
        while k < order.len() && predictions[order[k]] == t {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg,
            tpr: tp as f64 / pos,
        });
    }
    points
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub count: usize,
    /// Fraction of actual positives in the group.
    pub tp_rate: f64,
    pub auroc: Option<f64>,
    /// Absent when nothing is predicted positive.
    pub precision: Option<f64>,
    /// Absent when the group has no actual positives.
    pub recall: Option<f64>,
    pub accuracy: f64,
}

/// Metrics for a non-empty group; predicted positive iff `p >= threshold`.
pub fn group_metrics(predictions: &[f64], labels: &[u8], threshold: f64) -> GroupMetrics {
    let n = labels.len();
    assert!(n > 0 && predictions.len() == n);
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    GroupMetrics {
        count: n,
        tp_rate: (tp + fneg) as f64 / n as f64,
        auroc: auroc(predictions, labels),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        accuracy: (tp + tn) as f64 / n as f64,
    }
}

/// Many-to-many CERT rule ↔ CWE table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CertMap {
    pub rules: BTreeMap<String, BTreeSet<u32>>,
}

impl CertMap {
    /// Parses `cert_rule,cwe`.
    pub fn parse_csv(document: &str) -> Result<Self> {
        let mut map = CertMap::default();
        if document.trim().is_empty() {
            return Ok(map);
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(document.as_bytes());
        let headers = rdr.headers().map_err(|e| csv_error(1, "", e))?.clone();
        if headers.iter().ne(["cert_rule", "cwe"]) {
            return Err(Error::Csv {
                row: 1,
                column: String::new(),
                message: "expected header `cert_rule,cwe`".into(),
            });
        }
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| csv_error(row, "", e))?;
            if rec[0].is_empty() {
                return Err(Error::Csv {
                    row,
                    column: "cert_rule".into(),
                    message: "empty rule".into(),
                });
            }
            let cwe = parse_cwe_cell(&rec[1], row, "cwe")?;
            map.rules.entry(rec[0].to_string()).or_default().insert(cwe);
        }
        Ok(map)
    }

    pub fn rules_for(&self, cwe: u32) -> impl Iterator<Item = &str> {
        self.rules
            .iter()
            .filter(move |(_, cwes)| cwes.contains(&cwe))
            .map(|(r, _)| r.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CweRow {
    pub cwe: u32,
    /// Training examples with this CWE, when known.
    pub train_count: Option<usize>,
    pub metrics: GroupMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRow {
    pub cert_rule: String,
    pub metrics: GroupMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub overall: GroupMetrics,
    pub per_cwe: Vec<CweRow>,
    pub per_cert_rule: Vec<RuleRow>,
    /// `gain` for trees, `abs_weight` for the linear model.
    pub importance_kind: String,
    pub feature_importance: Vec<Importance>,
}

pub const DEFAULT_TOP_K: usize = 10;

/// Scores `test` and groups metrics overall, per CWE and per CERT rule.
pub fn evaluate(
    model: &TrainedModel,
    test: &[&FeatureVector],
    cert_map: &CertMap,
    train_counts: &BTreeMap<u32, usize>,
    threshold: f64,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::validation("test set is empty"));
    }
    let preds = model.predict_many(test)?;
    let labels: Vec<u8> = test.iter().map(|fv| fv.label).collect();

    let mut by_cwe: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    let mut by_rule: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, fv) in test.iter().enumerate() {
        by_cwe.entry(fv.cwe).or_default().push(i);
        for rule in cert_map.rules_for(fv.cwe) {
            by_rule.entry(rule).or_default().push(i);
        }
    }
    let subset = |idx: &[usize]| {
        let p: Vec<f64> = idx.iter().map(|&i| preds[i]).collect();
        let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        group_metrics(&p, &l, threshold)
    };

    let (importance_kind, ranking) = match model.kind {
        ModelKind::Gbt => ("gain", feature_importance(model, DEFAULT_TOP_K)?),
        ModelKind::LassoLogit => ("abs_weight", weight_ranking(model, DEFAULT_TOP_K)?),
    };

    Ok(EvalReport {
        threshold,
        overall: group_metrics(&preds, &labels, threshold),
        per_cwe: by_cwe
            .iter()
            .map(|(&cwe, idx)| CweRow {
                cwe,
                train_count: train_counts.get(&cwe).copied(),
                metrics: subset(idx),
            })
            .collect(),
        per_cert_rule: by_rule
            .iter()
            .map(|(&rule, idx)| RuleRow {
                cert_rule: rule.to_string(),
                metrics: subset(idx),
            })
            .collect(),
        importance_kind: importance_kind.into(),
        feature_importance: ranking
            .into_iter()
            .map(|(feature, score)| Importance { feature, score })
            .collect(),
    })
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:.6}")
}

fn metric_cells(m: &GroupMetrics) -> [String; 6] {
    [
        m.count.to_string(),
        fmt_num(m.tp_rate),
        fmt_opt(m.auroc),
        fmt_opt(m.precision),
        fmt_opt(m.recall),
        fmt_num(m.accuracy),
    ]
}

const METRIC_COLUMNS: [&str; 6] = ["test_count", "tp_rate", "auroc", "precision", "recall", "accuracy"];

fn write_csv(header: Vec<&str>, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).unwrap();
    for r in rows {
        w.write_record(&r).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

pub fn overall_csv(report: &EvalReport) -> String {
    write_csv(METRIC_COLUMNS.to_vec(), [metric_cells(&report.overall).to_vec()])
}

pub fn per_cwe_csv(report: &EvalReport) -> String {
    let mut header = vec!["cwe", "train_count"];
    header.extend(METRIC_COLUMNS);
    write_csv(
        header,
        report.per_cwe.iter().map(|r| {
            let mut row = vec![r.cwe.to_string(), r.train_count.map(|c| c.to_string()).unwrap_or_default()];
            row.extend(metric_cells(&r.metrics));
            row
        }),
    )
}

pub fn per_cert_rule_csv(report: &EvalReport) -> String {
    let mut header = vec!["cert_rule"];
    header.extend(METRIC_COLUMNS);
    write_csv(
        header,
        report.per_cert_rule.iter().map(|r| {
            let mut row = vec![r.cert_rule.clone()];
            row.extend(metric_cells(&r.metrics));
            row
        }),
    )
}

pub fn importance_csv(report: &EvalReport) -> String {
    write_csv(
        vec!["rank", "feature", "kind", "score"],
        report.feature_importance.iter().enumerate().map(|(i, imp)| {
            vec![
                (i + 1).to_string(),
                imp.feature.clone(),
                report.importance_kind.clone(),
                fmt_num(imp.score),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(preds: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut pairs) = (0u64, 0u64);
        for (i, &l) in labels.iter().enumerate() {
            if l != 1 {
                continue;
            }
            for (j, &m) in labels.iter().enumerate() {
                if m == 1 {
                    continue;
                }
                pairs += 1;
                num += if preds[i] > preds[j] {
                    2
                } else if preds[i] == preds[j] {
                    1
                } else {
                    0
                };
            }
        }
        num as f64 / (2 * pairs) as f64
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.3], &[1, 0, 0]), Some(1.0));
        assert_eq!(auroc(&[0.5; 6], &[1, 0, 1, 0, 0, 1]), Some(0.5));
        assert_eq!(auroc(&[0.2, 0.8], &[1, 0]), Some(0.0));
        assert_eq!(auroc(&[0.2, 0.8], &[1, 1]), None);
        assert_eq!(auroc(&[], &[]), None);
    }

    #[test]
    fn auroc_with_ties_matches_pairs() {
        let preds = [0.1, 0.4, 0.4, 0.4, 0.7, 0.9, 0.1];
        let labels = [0, 1, 0, 1, 0, 1, 1];
        assert_eq!(auroc(&preds, &labels), Some(brute(&preds, &labels)));
    }

    #[test]
    fn roc_ends_at_corner() {
        let pts = roc_curve(&[0.9, 0.8, 0.3, 0.3], &[1, 0, 1, 0]);
        assert_eq!(pts.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(pts.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        assert_eq!(pts.len(), 4);
    }

    #[test]
    fn all_fp_group_has_no_precision_or_recall() {
        let m = group_metrics(&[0.1, 0.2, 0.3, 0.4], &[0, 0, 0, 0], 0.5);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, None);
        assert_eq!(m.auroc, None);
        assert_eq!(m.tp_rate, 0.0);
    }

    #[test]
    fn perfect_predictor() {
        let m = group_metrics(&[0.9, 0.1, 0.7, 0.2], &[1, 0, 1, 0], 0.5);
        assert_eq!((m.precision, m.recall, m.accuracy), (Some(1.0), Some(1.0), 1.0));
        assert_eq!(m.auroc, Some(1.0));
    }

    #[test]
    fn cert_map_is_many_to_many() {
        let map = CertMap::parse_csv("cert_rule,cwe\nARR30-C,121\nARR38-C,121\nEXP33-C,457\n").unwrap();
        let rules: Vec<&str> = map.rules_for(121).collect();
        assert_eq!(rules, vec!["ARR30-C", "ARR38-C"]);
        assert_eq!(map.rules_for(999).count(), 0);
        assert!(CertMap::parse_csv("rule,cwe\nx,1\n").is_err());
        assert!(CertMap::parse_csv("cert_rule,cwe\nx,abc\n").is_err());
    }
}
