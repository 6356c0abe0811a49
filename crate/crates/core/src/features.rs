//! Code-metrics ingestion and per-alert feature vectors.
//!
//! Metrics arrive as long-form CSV, one metric value per row, at file or
//! function scope. A labeled fused alert picks up its file's metrics and
//! the metrics of the innermost function enclosing its line. Nothing here
//! looks at flaw records or span polarity, so labels cannot leak into
//! features.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuse::FusedAlert;
use crate::ingest::normalize_path;
use crate::suite::{parse_identity, FunctionSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricScope {
    File,
    Function,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub source: String,
    pub scope: MetricScope,
    pub filepath: String,
    pub function_name: Option<String>,
    pub start_line: Option<u32>,
    pub end_line: Option<u32>,
    /// Namespaced `source.NAME`; `None` for a blank cell.
    pub metrics: BTreeMap<String, Option<f64>>,
}

const METRICS_HEADER: [&str; 8] = [
    "source",
    "scope",
    "file",
    "function",
    "start_line",
    "end_line",
    "metric",
    "value",
];

/// Parses `source,scope,file,function,start_line,end_line,metric,value`.
/// A non-empty `source` cell overrides the `source` argument.
pub fn parse_metrics_csv(document: &str, source: &str) -> Result<Vec<MetricsRecord>> {
    if document.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(document.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| crate::mapping::csv_error(1, "", e))?
        .clone();
    if headers.iter().ne(METRICS_HEADER) {
        return Err(Error::Csv {
            row: 1,
            column: String::new(),
            message: format!("expected header `{}`", METRICS_HEADER.join(",")),
        });
    }

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| crate::mapping::csv_error(row, "", e))?;
        let cell_err = |col: usize, message: String| Error::Csv {
            row,
            column: METRICS_HEADER[col].to_string(),
            message,
        };
        let src = if rec[0].is_empty() { source } else { &rec[0] };
        let scope = match &rec[1] {
            "file" => MetricScope::File,
            "function" => MetricScope::Function,
            other => return Err(cell_err(1, format!("unknown scope `{other}`"))),
        };
        let filepath = normalize_path(&rec[2]).map_err(|e| cell_err(2, e.to_string()))?;
        let line_cell = |col: usize| -> Result<Option<u32>> {
            if rec[col].is_empty() {
                return Ok(None);
            }
            rec[col]
                .parse::<u32>()
                .ok()
                .filter(|&l| l >= 1)
                .map(Some)
                .ok_or_else(|| cell_err(col, format!("`{}` is not a line number", &rec[col])))
        };
        let (start_line, end_line) = (line_cell(4)?, line_cell(5)?);
        let function_name = (!rec[3].is_empty()).then(|| rec[3].to_string());
        if scope == MetricScope::Function {
            match (start_line, end_line) {
                (Some(s), Some(e)) if s <= e => {}
                _ => {
                    return Err(cell_err(
                        4,
                        "function-scope rows need start_line <= end_line".into(),
                    ))
                }
            }
        }
        if rec[6].is_empty() {
            return Err(cell_err(6, "metric name is empty".into()));
        }
        let value = if rec[7].is_empty() {
            None
        } else {
            Some(
                rec[7]
                    .parse::<f64>()
                    .map_err(|_| cell_err(7, format!("`{}` is not numeric", &rec[7])))?,
            )
        };
        let name = if rec[6].starts_with(&format!("{src}.")) {
            rec[6].to_string()
        } else {
            format!("{src}.{}", &rec[6])
        };
        out.push(MetricsRecord {
            source: src.to_string(),
            scope,
            filepath,
            function_name,
            start_line,
            end_line,
            metrics: BTreeMap::from([(name, value)]),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
struct FunctionMetrics {
    name: Option<String>,
    start: u32,
    end: u32,
    values: BTreeMap<String, f64>,
}

/// Read-only lookup over metrics records, built once.
#[derive(Debug, Clone, Default)]
pub struct MetricsIndex {
    names: BTreeSet<String>,
    files: HashMap<String, BTreeMap<String, f64>>,
    functions: HashMap<String, Vec<FunctionMetrics>>,
}

impl MetricsIndex {
    pub fn new(records: &[MetricsRecord]) -> Self {
        let mut index = MetricsIndex::default();
        let mut grouped: BTreeMap<(String, u32, u32, Option<String>), BTreeMap<String, f64>> =
            BTreeMap::new();
        for r in records {
            index.names.extend(r.metrics.keys().cloned());
            let present = r
                .metrics
                .iter()
                .filter_map(|(k, v)| v.map(|v| (k.clone(), v)));
            match (r.scope, r.start_line, r.end_line) {
                (MetricScope::Function, Some(s), Some(e)) => grouped
                    .entry((r.filepath.clone(), s, e, r.function_name.clone()))
                    .or_default()
                    .extend(present),
                _ => index
                    .files
                    .entry(r.filepath.clone())
                    .or_default()
                    .extend(present),
            }
        }
        for ((file, start, end, name), values) in grouped {
            index.functions.entry(file).or_default().push(FunctionMetrics {
                name,
                start,
                end,
                values,
            });
        }
        index
    }

    /// All metric feature names, sorted.
    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.names.iter()
    }

    fn function_for(
        &self,
        file: &str,
        line: u32,
        enclosing: Option<&FunctionSpan>,
    ) -> Option<&FunctionMetrics> {
        let candidates = self.functions.get(file)?;
        let containing = || {
            candidates
                .iter()
                .filter(move |f| f.start <= line && line <= f.end)
        };
        if let Some(span) = enclosing {
            let by_name = containing()
                .filter(|f| f.name.as_deref() == Some(span.function_name.as_str()))
                .min_by_key(|f| (f.end - f.start, f.start));
            if by_name.is_some() {
                return by_name;
            }
        }
        containing().min_by_key(|f| (f.end - f.start, f.start))
    }
}

/// Innermost span of `file` containing `line`.
pub fn enclosing_span<'a>(
    spans: &'a [FunctionSpan],
    file: &str,
    line: u32,
) -> Option<&'a FunctionSpan> {
    spans
        .iter()
        .filter(|s| s.filepath == file && s.contains(line))
        .min_by_key(|s| (s.len(), s.start_line))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub fused_id: u64,
    pub cwe: u32,
    pub variant_id: Option<String>,
    /// Contributor presence per tool of the tool universe.
    pub tool_flags: BTreeMap<String, bool>,
    pub n_tools: u32,
    /// Every metric name known to the index; `None` when missing.
    pub metrics: BTreeMap<String, Option<f64>>,
    /// 1 for a `True` verdict, 0 for `False`.
    pub label: u8,
}

impl FeatureVector {
    pub fn missing_flags(&self) -> BTreeMap<&str, bool> {
        self.metrics
            .iter()
            .map(|(k, v)| (k.as_str(), v.is_none()))
            .collect()
    }
}

/// One vector per fused alert with a `True`/`False` verdict. Function-scope
/// values override file-scope values of the same name.
pub fn build_features(
    labeled: &[FusedAlert],
    metrics: &MetricsIndex,
    spans: &[FunctionSpan],
    tools: &[String],
) -> Vec<FeatureVector> {
    let mut spans_by_file: HashMap<&str, Vec<FunctionSpan>> = HashMap::new();
    for s in spans {
        spans_by_file
            .entry(s.filepath.as_str())
            .or_default()
            .push(s.clone());
    }

    labeled
        .iter()
        .filter_map(|fa| {
            let label = fa.verdict.label()?;
            let identity = parse_identity(&fa.filepath);
            let present: BTreeSet<&str> = fa.tools().into_iter().collect();
            let tool_flags: BTreeMap<String, bool> = tools
                .iter()
                .map(|t| (t.clone(), present.contains(t.as_str())))
                .collect();
            let n_tools = tool_flags.values().filter(|&&b| b).count() as u32;

            let file_spans = spans_by_file
                .get(fa.filepath.as_str())
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let enclosing = enclosing_span(file_spans, &fa.filepath, fa.line);
            let file_values = metrics.files.get(&fa.filepath);
            let func_values = metrics
                .function_for(&fa.filepath, fa.line, enclosing)
                .map(|f| &f.values);

            let values = metrics
                .names()
                .map(|name| {
                    let v = func_values
                        .and_then(|m| m.get(name))
                        .or_else(|| file_values.and_then(|m| m.get(name)))
                        .copied();
                    (name.clone(), v)
                })
                .collect();

            Some(FeatureVector {
                fused_id: fa.fused_id,
                cwe: fa.cwe,
                variant_id: identity.variant_id,
                tool_flags,
                n_tools,
                metrics: values,
                label,
            })
        })
        .collect()
}

/// Wide feature table with columns sorted by name after `fused_id,label`.
pub fn feature_table_csv(vectors: &[FeatureVector]) -> String {
    let mut columns: BTreeSet<String> = ["cwe", "variant", "n_tools"]
        .into_iter()
        .map(String::from)
        .collect();
    for v in vectors {
        columns.extend(v.tool_flags.keys().map(|t| format!("tool.{t}")));
        for m in v.metrics.keys() {
            columns.insert(m.clone());
            columns.insert(format!("missing.{m}"));
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = ["fused_id", "label"]
        .into_iter()
        .chain(columns.iter().map(String::as_str))
        .collect();
    w.write_record(&header).unwrap();
    for v in vectors {
        let mut row = vec![v.fused_id.to_string(), v.label.to_string()];
        for col in &columns {
            let cell = match col.as_str() {
                "cwe" => v.cwe.to_string(),
                "variant" => v.variant_id.clone().unwrap_or_default(),
                "n_tools" => v.n_tools.to_string(),
                c => {
                    if let Some(t) = c.strip_prefix("tool.") {
                        flag(v.tool_flags.get(t).copied())
                    } else if let Some(m) = c.strip_prefix("missing.") {
                        flag(v.metrics.get(m).map(Option::is_none))
                    } else {
                        v.metrics
                            .get(c)
                            .copied()
                            .flatten()
                            .map(|x| x.to_string())
                            .unwrap_or_default()
                    }
                }
            };
            row.push(cell);
        }
        w.write_record(&row).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

fn flag(b: Option<bool>) -> String {
    match b {
        Some(true) => "1".into(),
        Some(false) => "0".into(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuse::{Contributor, Verdict};
    use crate::mapping::Provenance;
    use crate::suite::Polarity;

    const HEADER: &str = "source,scope,file,function,start_line,end_line,metric,value\n";

    fn fused(id: u64, file: &str, line: u32, tools: &[&str], verdict: Verdict) -> FusedAlert {
        FusedAlert {
            fused_id: id,
            cwe: 121,
            filepath: file.into(),
            line,
            contributors: tools
                .iter()
                .enumerate()
                .map(|(i, t)| Contributor {
                    tool: t.to_string(),
                    checker: "c".into(),
                    alert_id: i as u64,
                    provenance: Provenance::Known,
                })
                .collect(),
            verdict,
        }
    }

    fn span(file: &str, name: &str, s: u32, e: u32) -> FunctionSpan {
        FunctionSpan {
            filepath: file.into(),
            function_name: name.into(),
            start_line: s,
            end_line: e,
            polarity: Polarity::Good,
            cwe: Some(121),
        }
    }

    #[test]
    fn parse_single_function_row() {
        let doc = format!("{HEADER}src,function,f.c,goodG2B,12,20,sloc,12\n");
        let recs = parse_metrics_csv(&doc, "src").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].scope, MetricScope::Function);
        assert_eq!(recs[0].metrics, BTreeMap::from([("src.sloc".into(), Some(12.0))]));
    }

    #[test]
    fn parse_header_only_and_scopes() {
        assert!(parse_metrics_csv(HEADER, "src").unwrap().is_empty());
        let doc = format!(
            "{HEADER}src,file,f.c,,,,lines,40\nsrc,file,g.c,,,,lines,\nsrc,function,f.c,bad,3,9,cc,2\n"
        );
        let recs = parse_metrics_csv(&doc, "src").unwrap();
        let scopes: Vec<_> = recs.iter().map(|r| r.scope).collect();
        assert_eq!(
            scopes,
            vec![MetricScope::File, MetricScope::File, MetricScope::Function]
        );
        assert_eq!(recs[1].metrics["src.lines"], None);
    }

    #[test]
    fn parse_rejects_non_numeric_with_location() {
        let doc = format!("{HEADER}src,file,f.c,,,,lines,forty\n");
        match parse_metrics_csv(&doc, "src") {
            Err(Error::Csv { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "value");
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_metrics_csv("a,b\n1,2\n", "src").is_err());
    }

    #[test]
    fn function_metric_joins_by_enclosing_span() {
        let doc = format!(
            "{HEADER}src,function,f.c,goodG2B,12,20,FUNC_CALLED_BY_LOCAL,2\nsrc,file,f.c,,,,lines,40\n"
        );
        let index = MetricsIndex::new(&parse_metrics_csv(&doc, "src").unwrap());
        let fv = build_features(
            &[fused(0, "f.c", 15, &["A"], Verdict::False)],
            &index,
            &[span("f.c", "goodG2B", 12, 20)],
            &["A".into()],
        );
        assert_eq!(fv.len(), 1);
        assert_eq!(fv[0].metrics["src.FUNC_CALLED_BY_LOCAL"], Some(2.0));
        assert!(!fv[0].missing_flags()["src.FUNC_CALLED_BY_LOCAL"]);
        assert_eq!(fv[0].metrics["src.lines"], Some(40.0));
        assert_eq!(fv[0].label, 0);
    }

    #[test]
    fn file_without_metrics_is_all_missing() {
        let doc = format!("{HEADER}src,file,f.c,,,,lines,40\n");
        let index = MetricsIndex::new(&parse_metrics_csv(&doc, "src").unwrap());
        let fv = build_features(
            &[fused(0, "other.c", 3, &["A"], Verdict::True)],
            &index,
            &[],
            &["A".into()],
        );
        assert_eq!(fv[0].metrics["src.lines"], None);
        assert!(fv[0].missing_flags().values().all(|&m| m));
    }

    #[test]
    fn tool_flags_and_count() {
        let fv = build_features(
            &[fused(0, "f.c", 3, &["A", "B"], Verdict::True)],
            &MetricsIndex::default(),
            &[],
            &["A".into(), "B".into(), "C".into()],
        );
        let flags: Vec<bool> = fv[0].tool_flags.values().copied().collect();
        assert_eq!(flags, vec![true, true, false]);
        assert_eq!(fv[0].n_tools, 2);
    }

    #[test]
    fn unknown_verdicts_are_skipped_and_labeled_kept() {
        let alerts = [
            fused(0, "f.c", 1, &["A"], Verdict::True),
            fused(1, "f.c", 2, &["A"], Verdict::Unknown),
            fused(2, "f.c", 3, &["A"], Verdict::False),
        ];
        let fv = build_features(&alerts, &MetricsIndex::default(), &[], &["A".into()]);
        let ids: Vec<u64> = fv.iter().map(|v| v.fused_id).collect();
        assert_eq!(ids, vec![0, 2]);
    }

    #[test]
    fn nested_function_metrics_use_innermost() {
        let doc = format!(
            "{HEADER}src,function,f.c,outer,1,30,depth,1\nsrc,function,f.c,inner,10,15,depth,2\n"
        );
        let index = MetricsIndex::new(&parse_metrics_csv(&doc, "src").unwrap());
        let fv = build_features(
            &[
                fused(0, "f.c", 12, &["A"], Verdict::True),
                fused(1, "f.c", 20, &["A"], Verdict::True),
            ],
            &index,
            &[],
            &[],
        );
        assert_eq!(fv[0].metrics["src.depth"], Some(2.0));
        assert_eq!(fv[1].metrics["src.depth"], Some(1.0));
    }

    #[test]
    fn table_columns_are_sorted() {
        let doc = format!("{HEADER}src,file,f.c,,,,zeta,1\nsrc,file,f.c,,,,alpha,2\n");
        let index = MetricsIndex::new(&parse_metrics_csv(&doc, "src").unwrap());
        let fv = build_features(
            &[fused(7, "CWE121_x_01.c", 3, &["A"], Verdict::True)],
            &index,
            &[],
            &["A".into()],
        );
        let csv = feature_table_csv(&fv);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "fused_id,label,cwe,missing.src.alpha,missing.src.zeta,n_tools,src.alpha,src.zeta,tool.A,variant"
        );
        assert_eq!(lines.next().unwrap(), "7,1,121,1,1,1,,,1,01");
    }
}
