//! Browser bindings for the alertlab demo page.
//!
//! Every export takes and returns JSON strings. The `*_json` functions hold
//! the logic and run natively; the `#[wasm_bindgen]` wrappers only convert
//! errors.

use std::collections::BTreeSet;

use alertlab::learn::metrics::{group_metrics, RocPoint};
use alertlab::learn::{feature_importance, roc_curve, train, ModelKind, TrainConfig};
use alertlab::mapping::{backward_pct, forward_pct, speculate, Direction, MatchCountTable};
use alertlab::pipeline::{run_synthetic, PipelineConfig};
use alertlab::suite::{scan_function_spans, FunctionSpan};
use alertlab::synth::{SynthConfig, PLANTED_METRIC};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
pub struct CountCell {
    pub checker: String,
    pub cwe: u32,
    pub count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairRow {
    pub checker: String,
    pub cwe: u32,
    pub count: u64,
    pub forward_pct: f64,
    pub backward_pct: f64,
    pub selected: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExplorerView {
    pub rows: Vec<PairRow>,
    pub selected: usize,
}

/// Percentages for every non-zero cell and which pairs `speculate` keeps.
pub fn explore_mappings_json(counts: &str, direction: &str, threshold: f64) -> Result<String, String> {
    let cells: Vec<CountCell> = serde_json::from_str(counts).map_err(|e| e.to_string())?;
    let direction: Direction = direction.parse().map_err(|e: alertlab::Error| e.to_string())?;
    let table = MatchCountTable::from_counts(
        "demo",
        cells.iter().map(|c| ((c.checker.clone(), c.cwe), c.count)),
    );
    let chosen: BTreeSet<(String, u32)> = speculate(&table, direction, threshold)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|m| (m.checker, m.cwe))
        .collect();
    let mut rows = Vec::new();
    for ((checker, cwe), &count) in &table.counts {
        rows.push(PairRow {
            checker: checker.clone(),
            cwe: *cwe,
            count,
            forward_pct: forward_pct(&table, checker, *cwe).map_err(|e| e.to_string())?,
            backward_pct: backward_pct(&table, checker, *cwe).map_err(|e| e.to_string())?,
            selected: chosen.contains(&(checker.clone(), *cwe)),
        });
    }
    let view = ExplorerView {
        selected: chosen.len(),
        rows,
    };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpanView {
    pub spans: Vec<FunctionSpan>,
    pub warnings: Vec<String>,
}

pub fn scan_spans_json(source: &str, filepath: &str) -> String {
    let scan = scan_function_spans(source, filepath);
    serde_json::to_string(&SpanView {
        spans: scan.spans,
        warnings: scan.warnings,
    })
    .expect("spans serialize")
}

#[derive(Debug, Serialize)]
pub struct PlantedView {
    pub n_train: usize,
    pub n_test: usize,
    pub auroc: Option<f64>,
    pub accuracy: f64,
    pub roc: Vec<RocPoint>,
    pub importance: Vec<(String, f64)>,
    pub planted_rank: Option<usize>,
}

/// Generates a corpus, trains on the baseline set and scores the test set.
/// With `shuffle` the training labels are permuted first.
pub fn planted_demo_json(
    seed: u64,
    testcases: usize,
    strength: f64,
    kind: &str,
    shuffle: bool,
) -> Result<String, String> {
    let kind: ModelKind = kind.parse().map_err(|e: alertlab::Error| e.to_string())?;
    let mut synth = SynthConfig::standard(seed, testcases);
    synth.planted_feature_strength = strength;
    let run = run_synthetic(&synth, &PipelineConfig::new(TrainConfig::new(kind, seed)))
        .map_err(|e| e.to_string())?;
    let mut train_set: Vec<_> = run.vectors(&run.bundle.af_non_speculative).into_iter().cloned().collect();
    if shuffle {
        // Reversed label order keeps the class balance.
        let labels: Vec<u8> = train_set.iter().rev().map(|fv| fv.label).collect();
        for (fv, l) in train_set.iter_mut().zip(labels) {
            fv.label = l;
        }
    }
    let refs: Vec<_> = train_set.iter().collect();
    let model = train(&refs, &TrainConfig::new(kind, seed)).map_err(|e| e.to_string())?;
    let test = run.vectors(&run.bundle.af_test);
    let preds = model.predict_many(&test).map_err(|e| e.to_string())?;
    let labels: Vec<u8> = test.iter().map(|fv| fv.label).collect();
    let metrics = group_metrics(&preds, &labels, 0.5);
    let importance = match kind {
        ModelKind::Gbt => feature_importance(&model, 10).map_err(|e| e.to_string())?,
        ModelKind::LassoLogit => alertlab::learn::weight_ranking(&model, 10).map_err(|e| e.to_string())?,
    };
    let planted = format!("{}.{PLANTED_METRIC}", alertlab::synth::METRICS_SOURCE);
    let view = PlantedView {
        n_train: refs.len(),
        n_test: test.len(),
        auroc: metrics.auroc,
        accuracy: metrics.accuracy,
        roc: roc_curve(&preds, &labels),
        planted_rank: importance.iter().position(|(f, _)| *f == planted).map(|i| i + 1),
        importance,
    };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[wasm_bindgen]
pub fn explore_mappings(counts: &str, direction: &str, threshold: f64) -> Result<String, JsError> {
    explore_mappings_json(counts, direction, threshold).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn scan_spans(source: &str, filepath: &str) -> String {
    scan_spans_json(source, filepath)
}

#[wasm_bindgen]
pub fn planted_demo(seed: u64, testcases: usize, strength: f64, kind: &str, shuffle: bool) -> Result<String, JsError> {
    planted_demo_json(seed, testcases, strength, kind, shuffle).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explorer_marks_speculated_pairs() {
        let counts = r#"[{"checker":"a","cwe":121,"count":9},{"checker":"a","cwe":122,"count":1},
                         {"checker":"b","cwe":122,"count":4}]"#;
        let view: ExplorerView = serde_json::from_str(&explore_mappings_json(counts, "forward", 50.0).unwrap()).unwrap();
        assert_eq!(view.rows.len(), 3);
        let a121 = view.rows.iter().find(|r| r.checker == "a" && r.cwe == 121).unwrap();
        assert!((a121.forward_pct - 90.0).abs() < 1e-9);
        assert!(a121.selected);
        assert!(!view.rows.iter().find(|r| r.checker == "a" && r.cwe == 122).unwrap().selected);
        assert!(explore_mappings_json(counts, "up", 5.0).is_err());
        assert!(explore_mappings_json("not json", "forward", 5.0).is_err());
    }

    #[test]
    fn span_scan_round_trips() {
        let src = "void CWE121_x_01_bad() {\n  int a;\n}\nstatic void goodG2B() { }\n";
        let view: SpanView = serde_json::from_str(&scan_spans_json(src, "CWE121_x_01.c")).unwrap();
        assert_eq!(view.spans.len(), 2);
        assert_eq!((view.spans[0].start_line, view.spans[0].end_line), (1, 3));
    }

    #[test]
    fn planted_demo_ranks_planted_metric() {
        // The first ROC point has an infinite threshold, written as null.
        let view: serde_json::Value =
            serde_json::from_str(&planted_demo_json(3, 300, 0.9, "gbt", false).unwrap()).unwrap();
        assert!(view["auroc"].as_f64().unwrap() > 0.8);
        assert_eq!(view["planted_rank"], 1);
        assert!(view["roc"][0]["threshold"].is_null());
        assert!(view["roc"].as_array().unwrap().len() > 2);
        assert!(planted_demo_json(3, 50, 0.9, "svm", false).is_err());
    }
}
