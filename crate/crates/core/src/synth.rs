//! Synthetic test-suite corpora and multi-tool alert streams with a
//! ground-truth ledger.
//!
//! Each testcase is a small C file with one bad and one good function.
//! The single flaw sits inside the bad function. Tools report flaw lines
//! with their detection rate and good-function lines with their false
//! alarm rate, so every ledger tag agrees with the labeling rules.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::ingest::{to_normalized_jsonl, AlertFormat, RawAlert};
use crate::suite::FlawRecord;

/// Function-scope metric correlated with the verdict.
pub const PLANTED_METRIC: &str = "FUNC_CALLED_BY_LOCAL";
pub const METRICS_SOURCE: &str = "synth";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappedKind {
    Known,
    SpeculativeCandidate,
    Unmapped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CweOverride {
    pub cwe: u32,
    pub detection_rate: f64,
    pub false_alarm_rate: f64,
}

fn default_format() -> AlertFormat {
    AlertFormat::Sarif
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolProfile {
    pub name: String,
    pub detection_rate: f64,
    pub false_alarm_rate: f64,
    pub mapped: MappedKind,
    #[serde(default = "default_format")]
    pub format: AlertFormat,
    /// Chance that a checker also fires on another CWE's flaw line.
    /// Ignored for known-mapped tools.
    #[serde(default)]
    pub confusion_rate: f64,
    #[serde(default)]
    pub per_cwe: Vec<CweOverride>,
}

impl ToolProfile {
    pub fn new(name: &str, detection_rate: f64, false_alarm_rate: f64, mapped: MappedKind) -> Self {
        ToolProfile {
            name: name.into(),
            detection_rate,
            false_alarm_rate,
            mapped,
            format: AlertFormat::Sarif,
            confusion_rate: 0.0,
            per_cwe: Vec::new(),
        }
    }

    fn rates(&self, cwe: u32) -> (f64, f64) {
        self.per_cwe
            .iter()
            .find(|o| o.cwe == cwe)
            .map_or((self.detection_rate, self.false_alarm_rate), |o| {
                (o.detection_rate, o.false_alarm_rate)
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_testcases: usize,
    pub cwe_pool: Vec<u32>,
    pub tools: Vec<ToolProfile>,
    /// Chance in [0, 1] that a function's planted metric follows its polarity.
    pub planted_feature_strength: f64,
    pub variant_grid: usize,
}

/// CWE whose alerts are nearly all false alarms in [`SynthConfig::standard`].
pub const LOW_TP_CWE: u32 = 457;

impl SynthConfig {
    /// Two known-mapped tools, one speculative candidate, one unmapped.
    pub fn standard(seed: u64, n_testcases: usize) -> Self {
        let low_tp = CweOverride {
            cwe: LOW_TP_CWE,
            detection_rate: 0.02,
            false_alarm_rate: 1.0,
        };
        let mut alpha = ToolProfile::new("alpha", 0.6, 0.5, MappedKind::Known);
        alpha.per_cwe.push(low_tp.clone());
        let mut beta = ToolProfile::new("beta", 0.5, 0.4, MappedKind::Known);
        beta.format = AlertFormat::NormalizedJsonl;
        beta.per_cwe.push(low_tp);
        let mut gamma = ToolProfile::new("gamma", 0.5, 0.3, MappedKind::SpeculativeCandidate);
        gamma.confusion_rate = 0.3;
        let mut delta = ToolProfile::new("delta", 0.3, 0.3, MappedKind::Unmapped);
        delta.format = AlertFormat::NormalizedJsonl;
        SynthConfig {
            seed,
            n_testcases,
            cwe_pool: vec![78, 121, 122, 190, 401, 415, LOW_TP_CWE, 476],
            tools: vec![alpha, beta, gamma, delta],
            planted_feature_strength: 0.9,
            variant_grid: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        if self.n_testcases == 0 {
            return bad("n_testcases must be at least 1".into());
        }
        if self.cwe_pool.is_empty() || self.cwe_pool.contains(&0) {
            return bad("cwe_pool must list positive CWE numbers".into());
        }
        if self.variant_grid == 0 {
            return bad("variant_grid must be at least 1".into());
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.planted_feature_strength) {
            return bad("planted_feature_strength must lie in [0, 1]".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for t in &self.tools {
            if t.name.is_empty() || !names.insert(t.name.as_str()) {
                return bad(format!("tool name `{}` is empty or repeated", t.name));
            }
            let rates = [t.detection_rate, t.false_alarm_rate, t.confusion_rate];
            let overrides = t.per_cwe.iter().flat_map(|o| [o.detection_rate, o.false_alarm_rate]);
            if !rates.into_iter().chain(overrides).all(unit) {
                return bad(format!("tool `{}` has a rate outside [0, 1]", t.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub text: String,
}

/// Where things landed in one generated testcase (1-based lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCaseLayout {
    pub path: String,
    pub cwe: u32,
    pub variant: String,
    pub bad_function: String,
    pub bad_span: (u32, u32),
    pub good_function: String,
    pub good_span: (u32, u32),
    pub flaw_line: u32,
    /// Lines strictly inside the good function's braces.
    pub good_body: Vec<u32>,
    pub planted_bad: f64,
    pub planted_good: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlertTruth {
    TP,
    FP,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerAlert {
    pub tool: String,
    pub checker: String,
    pub file: String,
    pub line: u32,
    /// CWE the checker is meant to detect.
    pub intended_cwe: u32,
    pub truth: AlertTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedValue {
    pub file: String,
    pub function: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub flaws: Vec<FlawRecord>,
    pub alerts: Vec<LedgerAlert>,
    pub planted: Vec<PlantedValue>,
}

impl SynthTruth {
    /// One tagged JSON object per line: flaws, planted values, alerts.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |v: serde_json::Value| {
            out.push_str(&v.to_string());
            out.push('\n');
        };
        for f in &self.flaws {
            push(json!({"record": "flaw", "file": f.filepath, "line": f.line, "cwe": f.cwe}));
        }
        for p in &self.planted {
            push(json!({"record": "planted", "file": p.file, "function": p.function, "value": p.value}));
        }
        for a in &self.alerts {
            push(json!({
                "record": "alert",
                "tool": a.tool,
                "checker": a.checker,
                "file": a.file,
                "line": a.line,
                "intended_cwe": a.intended_cwe,
                "truth": a.truth,
            }));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub sources: Vec<SourceFile>,
    pub manifest_xml: String,
    pub metrics_csv: String,
    /// Known mappings for every tool profiled as known.
    pub known_mappings_csv: String,
    /// `cert_rule,cwe` rows for pool CWEs with a CERT C counterpart.
    pub cert_map_csv: String,
    pub layout: Vec<TestCaseLayout>,
    pub truth: SynthTruth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolArtifact {
    pub tool: String,
    pub format: AlertFormat,
    pub filename: String,
    pub content: String,
}

struct Lines(Vec<String>);

impl Lines {
    fn push(&mut self, s: impl Into<String>) -> u32 {
        self.0.push(s.into());
        self.0.len() as u32
    }
}

/// Appends a random filler block; returns its lines.
fn filler(rng: &mut ChaCha8Rng, out: &mut Lines, k: usize) -> Vec<u32> {
    let v: u32 = rng.random_range(1..100);
    match rng.random_range(0..6) {
        0 => vec![out.push(format!("    int data{k} = {v};"))],
        1 => vec![out.push(format!("    printLine(\"}} stray brace {v} {{\");"))],
        2 => vec![out.push(format!("    char c{k} = '{{'; /* }} */"))],
        3 => vec![out.push(format!("    // {{ comment {v}"))],
        4 => vec![
            out.push(format!("    if (data{k} > {v})")),
            out.push("    {"),
            out.push(format!("        data{k}--;")),
            out.push("    }"),
        ],
        _ => vec![
            out.push(format!("    while (count{k} < {v}) {{")),
            out.push(format!("        count{k}++; /* }} */")),
            out.push("    }"),
        ],
    }
}

/// Writes one function; returns (name line, body lines, closing line, marker line).
fn function(
    rng: &mut ChaCha8Rng,
    out: &mut Lines,
    signature: &str,
    marker: &str,
) -> (u32, Vec<u32>, u32, u32) {
    let start = out.push(signature);
    out.push("{");
    let blocks = rng.random_range(3..8);
    let marker_at = rng.random_range(0..=blocks);
    let mut body = Vec::new();
    let mut marker_line = 0;
    for b in 0..=blocks {
        if b == marker_at {
            marker_line = out.push(marker);
            body.push(marker_line);
        }
        if b < blocks {
            body.extend(filler(rng, out, b));
        }
    }
    let end = out.push("}");
    (start, body, end, marker_line)
}

fn planted_value(rng: &mut ChaCha8Rng, strength: f64, bad: bool) -> f64 {
    if rng.random_bool(strength) {
        if bad {
            f64::from(rng.random_range(1..4u8))
        } else {
            0.0
        }
    } else {
        f64::from(rng.random_range(0..4u8))
    }
}

const GOOD_NAMES: [&str; 3] = ["goodG2B", "goodB2G", "good1"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn generate_corpus(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sources = Vec::new();
    let mut layout = Vec::new();
    let mut truth = SynthTruth::default();
    let mut metrics = csv::Writer::from_writer(Vec::new());
    metrics
        .write_record(["source", "scope", "file", "function", "start_line", "end_line", "metric", "value"])
        .unwrap();
    let mut manifest = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<container>\n");

    for case in 0..config.n_testcases {
        let cwe = config.cwe_pool[rng.random_range(0..config.cwe_pool.len())];
        let variant = format!("{:02}", rng.random_range(1..=config.variant_grid));
        let stem = format!("CWE{cwe}_Synthetic__case{case:05}_{variant}");
        let path = format!("testcases/CWE{cwe}/{stem}.c");

        let mut lines = Lines(Vec::new());
        lines.push(format!("/* {stem}.c: synthetic testcase for CWE-{cwe} */"));
        lines.push("#include \"std_testcase.h\"");
        lines.push("");
        lines.push("#ifndef OMITBAD");
        lines.push("");
        let bad_name = format!("{stem}_bad");
        let (bad_start, _, bad_end, flaw_line) = function(
            &mut rng,
            &mut lines,
            &format!("void {bad_name}()"),
            &format!("    buffer[data] = source[{cwe}]; /* FLAW */"),
        );
        lines.push("");
        lines.push("#endif /* OMITBAD */");
        lines.push("");
        lines.push("#ifndef OMITGOOD");
        lines.push("");
        let good_name = GOOD_NAMES[rng.random_range(0..GOOD_NAMES.len())].to_string();
        let (good_start, good_body, good_end, _) = function(
            &mut rng,
            &mut lines,
            &format!("static void {good_name}()"),
            "    buffer[0] = source[0]; /* FIX */",
        );
        lines.push("");
        lines.push("#endif /* OMITGOOD */");
        let mut text = lines.0.join("\n");
        text.push('\n');
        let total_lines = lines.0.len();

        let planted_bad = planted_value(&mut rng, config.planted_feature_strength, true);
        let planted_good = planted_value(&mut rng, config.planted_feature_strength, false);

        let file_row = |metric: &str, value: String| {
            [METRICS_SOURCE, "file", &path, "", "", "", metric, &value].map(String::from)
        };
        metrics.write_record(file_row("FILE_LINES", total_lines.to_string())).unwrap();
        for (name, (s, e), planted) in [
            (&bad_name, (bad_start, bad_end), planted_bad),
            (&good_name, (good_start, good_end), planted_good),
        ] {
            let cyclomatic: u32 = rng.random_range(1..7);
            for (metric, value) in [
                ("SLOC", (e - s + 1).to_string()),
                ("CYCLOMATIC", cyclomatic.to_string()),
                (PLANTED_METRIC, planted.to_string()),
            ] {
                metrics
                    .write_record([
                        METRICS_SOURCE,
                        "function",
                        &path,
                        name,
                        &s.to_string(),
                        &e.to_string(),
                        metric,
                        &value,
                    ])
                    .unwrap();
            }
            truth.planted.push(PlantedValue {
                file: path.clone(),
                function: name.clone(),
                value: planted,
            });
        }

        manifest.push_str(&format!(
            "  <testcase id=\"{}\">\n    <file path=\"{}\">\n      <flaw line=\"{flaw_line}\" name=\"CWE-{cwe}: Synthetic weakness\"/>\n    </file>\n  </testcase>\n",
            case + 1,
            xml_escape(&path)
        ));
        truth.flaws.push(FlawRecord {
            filepath: path.clone(),
            line: flaw_line,
            cwe,
        });
        layout.push(TestCaseLayout {
            path: path.clone(),
            cwe,
            variant,
            bad_function: bad_name,
            bad_span: (bad_start, bad_end),
            good_function: good_name,
            good_span: (good_start, good_end),
            flaw_line,
            good_body,
            planted_bad,
            planted_good,
        });
        sources.push(SourceFile { path, text });
    }
    manifest.push_str("</container>\n");

    let mut known = String::from("tool,checker_pattern,is_regex,cwe\n");
    let mut first_known = true;
    for t in config.tools.iter().filter(|t| t.mapped == MappedKind::Known) {
        let mut pool = config.cwe_pool.clone();
        pool.sort_unstable();
        pool.dedup();
        for &cwe in &pool {
            if first_known {
                known.push_str(&format!("{},{},0,CWE-{cwe}\n", t.name, checker_name(t, cwe, 0, &config.cwe_pool)));
            } else {
                known.push_str(&format!("{},{}-CWE{cwe}-[a-z]+,1,{cwe}\n", t.name, regex::escape(&t.name)));
            }
        }
        first_known = false;
    }

    Ok(Corpus {
        sources,
        manifest_xml: manifest,
        metrics_csv: String::from_utf8(metrics.into_inner().unwrap()).unwrap(),
        known_mappings_csv: known,
        cert_map_csv: cert_map_csv(&config.cwe_pool),
        layout,
        truth,
    })
}

const CERT_RULES: [(u32, &[&str]); 8] = [
    (78, &["ENV33-C"]),
    (121, &["ARR30-C", "ARR38-C"]),
    (122, &["ARR30-C", "ARR38-C"]),
    (190, &["INT30-C", "INT32-C"]),
    (401, &["MEM31-C"]),
    (415, &["MEM30-C"]),
    (457, &["EXP33-C"]),
    (476, &["EXP34-C"]),
];

pub fn cert_map_csv(pool: &[u32]) -> String {
    let mut rows: Vec<(&str, u32)> = CERT_RULES
        .iter()
        .filter(|(cwe, _)| pool.contains(cwe))
        .flat_map(|&(cwe, rules)| rules.iter().map(move |&r| (r, cwe)))
        .collect();
    rows.sort_unstable();
    let mut out = String::from("cert_rule,cwe\n");
    for (rule, cwe) in rows {
        out.push_str(&format!("{rule},{cwe}\n"));
    }
    out
}

const FLAVORS: [&str; 3] = ["overrun", "underrun", "misuse"];

// The first known tool uses exact checker ids, later known tools use
// flavored ids matched by a regex. Other tools use opaque ids.
fn checker_name(tool: &ToolProfile, cwe: u32, flavor: usize, pool: &[u32]) -> String {
    match tool.mapped {
        MappedKind::Known if flavor == 0 => format!("{}.cwe{cwe}", tool.name),
        MappedKind::Known => format!("{}-CWE{cwe}-{}", tool.name, FLAVORS[flavor - 1]),
        _ => {
            let idx = pool.iter().position(|&c| c == cwe).unwrap_or(0);
            format!("{}.K{idx:02}", tool.name)
        }
    }
}

/// Emits one artifact per tool and appends every alert to the ledger.
pub fn generate_alerts(corpus: &mut Corpus, config: &SynthConfig) -> Result<Vec<ToolArtifact>> {
    config.validate()?;
    let first_known = config
        .tools
        .iter()
        .position(|t| t.mapped == MappedKind::Known);
    let mut artifacts = Vec::new();
    for (ti, tool) in config.tools.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + ti as u64);
        let exact = first_known == Some(ti);
        let pick_checker = |rng: &mut ChaCha8Rng, cwe: u32| {
            let flavor = if tool.mapped != MappedKind::Known || exact {
                0
            } else {
                rng.random_range(1..=FLAVORS.len())
            };
            checker_name(tool, cwe, flavor, &config.cwe_pool)
        };

        let mut emitted: Vec<LedgerAlert> = Vec::new();
        for case in &corpus.layout {
            let (p_d, p_f) = tool.rates(case.cwe);
            if rng.random_bool(p_d) {
                emitted.push(LedgerAlert {
                    tool: tool.name.clone(),
                    checker: pick_checker(&mut rng, case.cwe),
                    file: case.path.clone(),
                    line: case.flaw_line,
                    intended_cwe: case.cwe,
                    truth: AlertTruth::TP,
                });
            }
            if tool.mapped != MappedKind::Known && rng.random_bool(tool.confusion_rate) {
                let others: Vec<u32> = config.cwe_pool.iter().copied().filter(|&c| c != case.cwe).collect();
                if !others.is_empty() {
                    let other = others[rng.random_range(0..others.len())];
                    emitted.push(LedgerAlert {
                        tool: tool.name.clone(),
                        checker: pick_checker(&mut rng, other),
                        file: case.path.clone(),
                        line: case.flaw_line,
                        intended_cwe: other,
                        truth: AlertTruth::FP,
                    });
                }
            }
            if rng.random_bool(p_f) && !case.good_body.is_empty() {
                let line = case.good_body[rng.random_range(0..case.good_body.len())];
                emitted.push(LedgerAlert {
                    tool: tool.name.clone(),
                    checker: pick_checker(&mut rng, case.cwe),
                    file: case.path.clone(),
                    line,
                    intended_cwe: case.cwe,
                    truth: AlertTruth::FP,
                });
            }
        }

        let raw: Vec<RawAlert> = emitted
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut r = RawAlert::new(&a.tool, &a.checker, &a.file, a.line);
                r.alert_id = i as u64;
                r
            })
            .collect();
        let (filename, content) = match tool.format {
            AlertFormat::Sarif => (format!("{}.sarif", tool.name), sarif_document(&tool.name, &raw)),
            AlertFormat::NormalizedJsonl => (format!("{}.jsonl", tool.name), to_normalized_jsonl(&raw)),
        };
        artifacts.push(ToolArtifact {
            tool: tool.name.clone(),
            format: tool.format,
            filename,
            content,
        });
        corpus.truth.alerts.extend(emitted);
    }
    Ok(artifacts)
}

fn sarif_document(tool: &str, alerts: &[RawAlert]) -> String {
    let results: Vec<serde_json::Value> = alerts
        .iter()
        .map(|a| {
            json!({
                "ruleId": a.checker,
                "message": {"text": format!("{} reported by {}", a.checker, tool)},
                "locations": [{
                    "physicalLocation": {
                        "artifactLocation": {"uri": a.filepath},
                        "region": {"startLine": a.line}
                    }
                }]
            })
        })
        .collect();
    let doc = json!({
        "version": "2.1.0",
        "runs": [{
            "tool": {"driver": {"name": tool}},
            "results": results
        }]
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("json value serializes");
    s.push('\n');
    s
}

/// Ledger lookup by (tool, checker, file, line).
pub fn ledger_index(truth: &SynthTruth) -> BTreeMap<(&str, &str, &str, u32), AlertTruth> {
    truth
        .alerts
        .iter()
        .map(|a| ((a.tool.as_str(), a.checker.as_str(), a.file.as_str(), a.line), a.truth))
        .collect()
}
