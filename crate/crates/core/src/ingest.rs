//! Tool-output ingestion.
//!
//! Two input formats are understood: a subset of SARIF 2.1.0 and a flat
//! "normalized" JSONL stream for tools whose native format has been
//! converted by an external adapter. Both produce [`RawAlert`]s keyed by
//! checker, normalized file path and 1-based line. Column information is
//! dropped because fusion works at line granularity.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// One finding reported by one tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAlert {
    pub alert_id: u64,
    pub tool: String,
    pub checker: String,
    #[serde(rename = "file")]
    pub filepath: String,
    pub line: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl RawAlert {
    pub fn new(tool: &str, checker: &str, filepath: &str, line: u32) -> Self {
        RawAlert {
            alert_id: 0,
            tool: tool.to_string(),
            checker: checker.to_string(),
            filepath: filepath.to_string(),
            line,
            message: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlertFormat {
    #[serde(rename = "sarif")]
    Sarif,
    #[serde(rename = "normalized-jsonl")]
    NormalizedJsonl,
}

impl AlertFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            AlertFormat::Sarif => "sarif",
            AlertFormat::NormalizedJsonl => "normalized-jsonl",
        }
    }
}

impl std::str::FromStr for AlertFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sarif" => Ok(AlertFormat::Sarif),
            "normalized-jsonl" | "jsonl" => Ok(AlertFormat::NormalizedJsonl),
            other => Err(Error::validation(format!("unknown alert format `{other}`"))),
        }
    }
}

/// Bookkeeping for one tool's contribution from one ingested artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolRun {
    pub tool: String,
    pub format: AlertFormat,
    pub source_path: String,
    pub alert_count: usize,
}

/// Result of parsing a SARIF document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SarifParse {
    pub alerts: Vec<RawAlert>,
    /// Number of `results[]` entries across all runs.
    pub total_results: usize,
    /// Results dropped for lacking a `ruleId`, a location, or a `startLine`.
    pub skipped: usize,
    /// Locations beyond the first, ignored.
    pub extra_locations: usize,
}

/// Normalizes a file path so that joins across tools, manifests and metrics
/// are plain string comparisons.
///
/// Backslashes become slashes, repeated separators and `.` segments are
/// removed. A leading `/` is kept. The result is idempotent.
pub fn normalize_path(raw: &str) -> Result<String> {
    let replaced = raw.trim().replace('\\', "/");
    let absolute = replaced.starts_with('/');
    let joined = replaced
        .split('/')
        .filter(|seg| !seg.is_empty() && *seg != ".")
        .collect::<Vec<_>>()
        .join("/");
    if joined.is_empty() {
        return Err(Error::validation(format!(
            "path `{raw}` is empty after normalization"
        )));
    }
    Ok(if absolute { format!("/{joined}") } else { joined })
}

fn strip_file_scheme(uri: &str) -> &str {
    uri.strip_prefix("file://").unwrap_or(uri)
}

/// Parses the SARIF 2.1.0 subset: `runs[].tool.driver.name`,
/// `runs[].results[].ruleId` and the first location's
/// `physicalLocation.artifactLocation.uri` / `region.startLine`.
///
/// Alert ids are assigned sequentially from 0 in document order.
pub fn parse_sarif(document: &str) -> Result<SarifParse> {
    let doc: Value = serde_json::from_str(document).map_err(|e| Error::from_json(document, &e))?;
    let runs = doc
        .get("runs")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Structure {
            field: "runs".into(),
        })?;

    let mut out = SarifParse::default();
    for (ri, run) in runs.iter().enumerate() {
        let tool = run
            .pointer("/tool/driver/name")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Structure {
                field: format!("runs[{ri}].tool.driver.name"),
            })?;
        let results = run
            .get("results")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Structure {
                field: format!("runs[{ri}].results"),
            })?;

        for (xi, result) in results.iter().enumerate() {
            out.total_results += 1;
            let Some(rule) = result.get("ruleId").and_then(Value::as_str) else {
                out.skipped += 1;
                continue;
            };
            let locations = result
                .get("locations")
                .and_then(Value::as_array)
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let Some(first) = locations.first() else {
                out.skipped += 1;
                continue;
            };
            out.extra_locations += locations.len() - 1;

            let phys = first.get("physicalLocation");
            let uri = phys
                .and_then(|p| p.pointer("/artifactLocation/uri"))
                .and_then(Value::as_str);
            let start = phys
                .and_then(|p| p.pointer("/region/startLine"))
                .and_then(Value::as_u64);
            let (Some(uri), Some(start)) = (uri, start) else {
                out.skipped += 1;
                continue;
            };
            if start == 0 || start > u64::from(u32::MAX) {
                return Err(Error::validation(format!(
                    "runs[{ri}].results[{xi}]: startLine {start} out of range"
                )));
            }
            let filepath = normalize_path(strip_file_scheme(uri)).map_err(|_| {
                Error::validation(format!("runs[{ri}].results[{xi}]: empty artifact uri"))
            })?;
            let message = result
                .pointer("/message/text")
                .and_then(Value::as_str)
                .map(str::to_string);

            out.alerts.push(RawAlert {
                alert_id: out.alerts.len() as u64,
                tool: tool.to_string(),
                checker: rule.to_string(),
                filepath,
                line: start as u32,
                message,
            });
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct JsonlRecord {
    #[serde(default)]
    tool: Option<String>,
    checker: String,
    file: String,
    line: i64,
    #[serde(default)]
    message: Option<String>,
}

/// Parses normalized alert JSONL. Blank lines are ignored. A record's own
/// `tool` field takes precedence over `tool`.
pub fn parse_normalized_jsonl(document: &str, tool: &str) -> Result<Vec<RawAlert>> {
    let mut alerts = Vec::new();
    for (idx, line) in document.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(line).map_err(|e| Error::Record {
            line: lineno,
            message: e.to_string(),
        })?;
        if rec.line < 1 || rec.line > i64::from(u32::MAX) {
            return Err(Error::Record {
                line: lineno,
                message: format!("line number {} must be a positive integer", rec.line),
            });
        }
        let filepath = normalize_path(&rec.file).map_err(|e| Error::Record {
            line: lineno,
            message: e.to_string(),
        })?;
        alerts.push(RawAlert {
            alert_id: alerts.len() as u64,
            tool: rec.tool.unwrap_or_else(|| tool.to_string()),
            checker: rec.checker,
            filepath,
            line: rec.line as u32,
            message: rec.message,
        });
    }
    Ok(alerts)
}

#[derive(Serialize)]
struct JsonlOut<'a> {
    tool: &'a str,
    checker: &'a str,
    file: &'a str,
    line: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<&'a str>,
}

/// Writes alerts in the normalized JSONL format, one object per line.
pub fn to_normalized_jsonl(alerts: &[RawAlert]) -> String {
    let mut out = String::new();
    for a in alerts {
        let rec = JsonlOut {
            tool: &a.tool,
            checker: &a.checker,
            file: &a.filepath,
            line: a.line,
            message: a.message.as_deref(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("alert record serializes"));
        out.push('\n');
    }
    out
}

/// Merged alert stream over several artifacts.
///
/// Ids are reassigned in (artifact order, record order) so the merged
/// stream is deterministic regardless of how artifacts were parsed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlertStream {
    pub runs: Vec<ToolRun>,
    pub alerts: Vec<RawAlert>,
}

impl AlertStream {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one artifact's alerts. One [`ToolRun`] is recorded per tool
    /// present in the artifact, in first-seen order.
    pub fn push(&mut self, format: AlertFormat, source_path: &str, alerts: Vec<RawAlert>) {
        let mut runs: Vec<ToolRun> = Vec::new();
        for mut alert in alerts {
            match runs.iter_mut().find(|r| r.tool == alert.tool) {
                Some(run) => run.alert_count += 1,
                None => runs.push(ToolRun {
                    tool: alert.tool.clone(),
                    format,
                    source_path: source_path.to_string(),
                    alert_count: 1,
                }),
            }
            alert.alert_id = self.alerts.len() as u64;
            self.alerts.push(alert);
        }
        self.runs.extend(runs);
    }

    /// Sorted, de-duplicated tool names.
    pub fn tools(&self) -> Vec<String> {
        let mut tools: Vec<String> = self.alerts.iter().map(|a| a.tool.clone()).collect();
        tools.sort();
        tools.dedup();
        tools
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn sarif(results: Value) -> String {
        json!({
            "version": "2.1.0",
            "runs": [{ "tool": { "driver": { "name": "T" } }, "results": results }]
        })
        .to_string()
    }

    fn result(rule: &str, uri: &str, line: u64) -> Value {
        json!({
            "ruleId": rule,
            "message": { "text": "m" },
            "locations": [{ "physicalLocation": {
                "artifactLocation": { "uri": uri },
                "region": { "startLine": line, "startColumn": 5 }
            }}]
        })
    }

    #[test]
    fn sarif_single_result() {
        let parsed = parse_sarif(&sarif(json!([result("CK1", "a/f.c", 42)]))).unwrap();
        assert_eq!(parsed.alerts.len(), 1);
        let a = &parsed.alerts[0];
        assert_eq!(
            (a.tool.as_str(), a.checker.as_str(), a.filepath.as_str(), a.line),
            ("T", "CK1", "a/f.c", 42)
        );
        assert_eq!(a.message.as_deref(), Some("m"));
    }

    #[test]
    fn sarif_zero_results() {
        let parsed = parse_sarif(&sarif(json!([]))).unwrap();
        assert!(parsed.alerts.is_empty());
        assert_eq!(parsed.total_results, 0);
    }

    #[test]
    fn sarif_two_results_same_line() {
        let doc = sarif(json!([result("CK1", "f.c", 7), result("CK2", "f.c", 7)]));
        // Independent walk over the JSON tree.
        let v: Value = serde_json::from_str(&doc).unwrap();
        let expected: Vec<(String, String, u64)> = v["runs"][0]["results"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| {
                let loc = &r["locations"][0]["physicalLocation"];
                (
                    r["ruleId"].as_str().unwrap().to_string(),
                    loc["artifactLocation"]["uri"].as_str().unwrap().to_string(),
                    loc["region"]["startLine"].as_u64().unwrap(),
                )
            })
            .collect();
        let parsed = parse_sarif(&doc).unwrap();
        let got: Vec<(String, String, u64)> = parsed
            .alerts
            .iter()
            .map(|a| (a.checker.clone(), a.filepath.clone(), u64::from(a.line)))
            .collect();
        assert_eq!(got, expected);
        assert_eq!(got[0].1, got[1].1);
        assert_eq!(got[0].2, got[1].2);
    }

    #[test]
    fn sarif_skips_and_counts() {
        let no_line = json!({
            "ruleId": "CK",
            "locations": [{ "physicalLocation": { "artifactLocation": { "uri": "f.c" } } }]
        });
        let no_loc = json!({ "ruleId": "CK" });
        let mut multi = result("CK3", "g.c", 3);
        multi["locations"]
            .as_array_mut()
            .unwrap()
            .push(json!({ "physicalLocation": { "artifactLocation": { "uri": "h.c" } } }));
        let parsed =
            parse_sarif(&sarif(json!([result("CK1", "f.c", 1), no_line, no_loc, multi]))).unwrap();
        assert_eq!(parsed.total_results, 4);
        assert_eq!(parsed.skipped, 2);
        assert_eq!(parsed.alerts.len() + parsed.skipped, parsed.total_results);
        assert_eq!(parsed.extra_locations, 1);
        assert_eq!(parsed.alerts[1].filepath, "g.c");
    }

    #[test]
    fn sarif_malformed_reports_offset() {
        let doc = "{\"runs\": [\n  {\"tool\": }\n]}";
        match parse_sarif(doc) {
            Err(Error::Json { offset, .. }) => {
                assert_eq!(&doc[offset..offset + 1], "}");
            }
            other => panic!("expected JSON error, got {other:?}"),
        }
    }

    #[test]
    fn sarif_missing_arrays_named() {
        match parse_sarif("{}") {
            Err(Error::Structure { field }) => assert_eq!(field, "runs"),
            other => panic!("{other:?}"),
        }
        let doc = json!({ "runs": [{ "tool": { "driver": { "name": "T" } } }] }).to_string();
        match parse_sarif(&doc) {
            Err(Error::Structure { field }) => assert_eq!(field, "runs[0].results"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn jsonl_single_record() {
        let alerts = parse_normalized_jsonl(r#"{"checker":"X","file":"f.c","line":3}"#, "T").unwrap();
        assert_eq!(alerts, vec![RawAlert::new("T", "X", "f.c", 3)]);
    }

    #[test]
    fn jsonl_empty_and_order() {
        assert!(parse_normalized_jsonl("", "T").unwrap().is_empty());
        let doc = (1..=3)
            .map(|i| format!(r#"{{"checker":"C{i}","file":"f.c","line":{}}}"#, i * 10))
            .collect::<Vec<_>>()
            .join("\n");
        let alerts = parse_normalized_jsonl(&doc, "T").unwrap();
        for (i, a) in alerts.iter().enumerate() {
            assert_eq!(a.alert_id, i as u64);
            assert_eq!(a.line, (i as u32 + 1) * 10);
            assert_eq!(a.checker, format!("C{}", i + 1));
        }
    }

    #[test]
    fn jsonl_tool_override_and_errors() {
        let a = parse_normalized_jsonl(r#"{"tool":"U","checker":"X","file":"f.c","line":3}"#, "T")
            .unwrap();
        assert_eq!(a[0].tool, "U");

        let doc = "{\"checker\":\"X\",\"file\":\"f.c\",\"line\":3}\n\nnot json";
        match parse_normalized_jsonl(doc, "T") {
            Err(Error::Record { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_normalized_jsonl(r#"{"checker":"X","file":"f.c","line":0}"#, "T") {
            Err(Error::Record { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_path(".\\a\\f.c").unwrap(), "a/f.c");
        assert_eq!(normalize_path("a//b/f.c").unwrap(), "a/b/f.c");
        assert_eq!(normalize_path("././a/./b").unwrap(), "a/b");
        assert_eq!(normalize_path("/abs//x.c").unwrap(), "/abs/x.c");
        assert!(normalize_path("./").is_err());
        assert!(normalize_path("").is_err());
    }

    #[test]
    fn stream_assigns_ids_across_artifacts() {
        let mut stream = AlertStream::new();
        stream.push(
            AlertFormat::Sarif,
            "a.sarif",
            vec![RawAlert::new("A", "x", "f.c", 1), RawAlert::new("A", "y", "f.c", 2)],
        );
        stream.push(
            AlertFormat::NormalizedJsonl,
            "b.jsonl",
            vec![RawAlert::new("B", "z", "f.c", 1)],
        );
        let ids: Vec<u64> = stream.alerts.iter().map(|a| a.alert_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(stream.runs.len(), 2);
        assert_eq!(stream.runs[0].alert_count, 2);
        assert_eq!(stream.tools(), vec!["A", "B"]);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in "[a-z./\\\\]{0,24}") {
            if let Ok(once) = normalize_path(&raw) {
                prop_assert_eq!(normalize_path(&once).unwrap(), once);
            }
        }

        #[test]
        fn jsonl_round_trip(
            recs in proptest::collection::vec(
                ("[A-Z]{1,3}", "[a-z_]{1,8}", "[a-z]{1,4}(/[a-z]{1,4}){0,2}\\.c", 1u32..5000,
                 proptest::option::of("[ -~]{0,12}")),
                0..20)
        ) {
            let alerts: Vec<RawAlert> = recs
                .into_iter()
                .enumerate()
                .map(|(i, (tool, checker, file, line, message))| RawAlert {
                    alert_id: i as u64, tool, checker, filepath: file, line, message,
                })
                .collect();
            let back = parse_normalized_jsonl(&to_normalized_jsonl(&alerts), "ignored").unwrap();
            prop_assert_eq!(back, alerts);
        }
    }
}
