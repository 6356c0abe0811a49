use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use alertlab::features::{feature_table_csv, parse_metrics_csv, FeatureVector, MetricsIndex};
use alertlab::fuse::{estimate_manual_cost, fused_csv, FusedAlert, LabelStats, SECONDS_PER_MANUAL_VERDICT};
use alertlab::ingest::{parse_sarif, AlertFormat, AlertStream, RawAlert, ToolRun};
use alertlab::learn::metrics::{importance_csv, overall_csv, per_cert_rule_csv, per_cwe_csv, Importance};
use alertlab::learn::split::SpeculativeConfig;
use alertlab::learn::sweep::sweep_csv;
use alertlab::learn::{
    build_splits, evaluate, feature_importance, sweep, train, weight_ranking, CertMap, DatasetBundle, ModelKind,
    SplitSpec, TrainedModel,
};
use alertlab::mapping::{
    count_matches, mapping_review_report, parse_speculative_csv, promote_reviewed, review_report_csv,
    speculative_csv, CheckerMapping, KnownRegistry, ReviewReport,
};
use alertlab::pipeline::{build_mappings, cwe_counts, features_by_id, MappingStage};
use alertlab::suite::{parse_manifest, scan_function_spans, FlawRecord, FunctionSpan};
use alertlab::synth::{generate_alerts, generate_corpus, SynthConfig, METRICS_SOURCE};
use alertlab::Error;
use serde::{Deserialize, Serialize};

use crate::config::{AlertInput, Config, MetricsInput};
use crate::error::CliError;
use crate::workspace::{Session, Workspace};

const ALERTS: &str = "alerts/alerts.jsonl";
const FLAWS: &str = "suite/flaws.jsonl";
const SPANS: &str = "suite/spans.jsonl";
const KNOWN: &str = "mappings/known.json";
const SPECULATIVE: &str = "mappings/speculative.csv";
const FUSED: &str = "fused/fused.jsonl";
const LABELED: &str = "fused/labeled.jsonl";
const LABEL_STATS: &str = "fused/label_stats.json";
const FEATURES: &str = "features/features.jsonl";
const BUNDLE: &str = "splits/bundle.json";
const MODEL: &str = "models/model.json";
const TRAIN_COUNTS: &str = "models/train_counts.json";

type Outcome = Result<Vec<String>, CliError>;

#[derive(Debug, Serialize, Deserialize)]
struct IngestSummary {
    runs: Vec<ToolRun>,
    total_alerts: usize,
    sarif_skipped_results: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct KnownStage {
    /// Tools covered by at least one known-mapping rule.
    tools_with_rules: Vec<String>,
    mappings: Vec<CheckerMapping>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReviewSummary {
    candidate_count: usize,
    all_pairs: usize,
    /// Share of pairs a reviewer no longer needs to inspect.
    effort_reduction: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FuseSummary {
    fused_count: usize,
    excluded_raw_alerts: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelSummary {
    #[serde(flatten)]
    stats: LabelStats,
    labeled: usize,
    seconds_per_manual_verdict: f64,
    manual_cost_hours: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainSummary {
    training_set: String,
    n_train: usize,
    per_cwe: BTreeMap<u32, usize>,
}

/// Which training set `train` uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainingSet {
    Baseline,
    Speculative(SpeculativeConfig),
}

impl std::str::FromStr for TrainingSet {
    type Err = String;

    /// `baseline` or `DIRECTION:T`, e.g. `forward:25`.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "baseline" {
            return Ok(TrainingSet::Baseline);
        }
        let (dir, t) = s
            .split_once(':')
            .ok_or_else(|| format!("expected `baseline` or DIRECTION:T, got `{s}`"))?;
        let direction = dir.parse().map_err(|e: Error| e.to_string())?;
        let threshold: f64 = t.parse().map_err(|_| format!("`{t}` is not a number"))?;
        Ok(TrainingSet::Speculative(SpeculativeConfig { threshold, direction }))
    }
}

impl std::fmt::Display for TrainingSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainingSet::Baseline => f.write_str("baseline"),
            TrainingSet::Speculative(c) => write!(f, "{}:{}", c.direction, c.threshold),
        }
    }
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Core(Error::Validation(msg.into()))
}

fn read_alerts(s: &mut Session) -> Result<Vec<RawAlert>, CliError> {
    s.artifact_jsonl("ingest", ALERTS)
}

fn read_flaws(s: &mut Session) -> Result<Vec<FlawRecord>, CliError> {
    s.artifact_jsonl("suite-scan", FLAWS)
}

fn read_spans(s: &mut Session) -> Result<Vec<FunctionSpan>, CliError> {
    s.artifact_jsonl("suite-scan", SPANS)
}

fn read_features(s: &mut Session) -> Result<BTreeMap<u64, FeatureVector>, CliError> {
    let vs: Vec<FeatureVector> = s.artifact_jsonl("features", FEATURES)?;
    Ok(vs.into_iter().map(|fv| (fv.fused_id, fv)).collect())
}

/// Speculative mappings grouped by the configured grid, in grid order.
fn read_speculative(
    s: &mut Session,
    config: &Config,
) -> Result<Vec<(SpeculativeConfig, Vec<CheckerMapping>)>, CliError> {
    let all = parse_speculative_csv(&s.artifact("map-speculate", SPECULATIVE)?)?;
    Ok(config
        .mapping
        .grid()
        .into_iter()
        .map(|cfg| {
            let ms = all
                .iter()
                .filter(|m| m.direction == Some(cfg.direction) && m.threshold == Some(cfg.threshold))
                .cloned()
                .collect();
            (cfg, ms)
        })
        .collect())
}

fn lookup<'a>(ids: &BTreeSet<u64>, features: &'a BTreeMap<u64, FeatureVector>) -> Result<Vec<&'a FeatureVector>, CliError> {
    ids.iter()
        .map(|id| {
            features
                .get(id)
                .ok_or_else(|| validation(format!("fused alert {id} has no feature vector; rerun `features`")))
        })
        .collect()
}

pub fn ingest(ws: &Workspace) -> Outcome {
    let inputs: &[AlertInput] = &ws.config.inputs.alerts;
    if inputs.is_empty() {
        return Err(CliError::Config("inputs.alerts lists no alert files".into()));
    }
    let mut s = ws.session("ingest", "alerts");
    let mut stream = AlertStream::new();
    let mut skipped = 0;
    for input in inputs {
        let text = s.input(&input.path)?;
        let alerts = match input.format {
            AlertFormat::Sarif => {
                let parsed = parse_sarif(&text)?;
                skipped += parsed.skipped;
                parsed.alerts
            }
            AlertFormat::NormalizedJsonl => {
                let fallback = input.tool.as_deref().unwrap_or("unknown");
                alertlab::ingest::parse_normalized_jsonl(&text, fallback)?
            }
        };
        stream.push(input.format, &input.path, alerts);
    }
    s.write_jsonl("alerts.jsonl", &stream.alerts)?;
    s.write_json(
        "runs.json",
        &IngestSummary {
            total_alerts: stream.alerts.len(),
            runs: stream.runs,
            sarif_skipped_results: skipped,
        },
    )?;
    s.finish()
}

pub fn suite_scan(ws: &Workspace) -> Outcome {
    let inputs = &ws.config.inputs;
    let manifest = inputs
        .manifest
        .as_deref()
        .ok_or_else(|| CliError::Config("inputs.manifest is not set".into()))?;
    let mut s = ws.session("suite-scan", "suite");
    let parsed = parse_manifest(&s.input(manifest)?)?;
    let mut spans = Vec::new();
    let mut warnings = Vec::new();
    if let Some(dir) = inputs.sources.as_deref() {
        for (path, text) in s.input_dir(dir)? {
            if !is_c_source(&path) {
                continue;
            }
            let scan = scan_function_spans(&text, &path);
            spans.extend(scan.spans);
            warnings.extend(scan.warnings.into_iter().map(|w| format!("{path}: {w}")));
        }
    }
    if parsed.skipped_missing_line > 0 {
        warnings.push(format!("manifest: {} flaws without a line", parsed.skipped_missing_line));
    }
    if parsed.skipped_no_cwe > 0 {
        warnings.push(format!("manifest: {} flaws without a CWE", parsed.skipped_no_cwe));
    }
    s.write_jsonl("flaws.jsonl", &parsed.flaws)?;
    s.write_jsonl("spans.jsonl", &spans)?;
    s.write("warnings.txt", &warnings.iter().map(|w| format!("{w}\n")).collect::<String>())?;
    s.finish()
}

fn is_c_source(path: &str) -> bool {
    let ext = path.rsplit('.').next().unwrap_or("");
    ["c", "h", "cc", "cpp", "cxx", "hpp", "hh"].contains(&ext.to_ascii_lowercase().as_str())
}

pub fn map_known(ws: &Workspace) -> Outcome {
    let mut s = ws.session("map-known", "mappings");
    let alerts = read_alerts(&mut s)?;
    let mut registries = Vec::new();
    for path in &ws.config.inputs.known_mappings {
        registries.push(KnownRegistry::parse_csv(&s.input(path)?)?);
    }
    let mut promoted = KnownRegistry::default();
    for path in &ws.config.inputs.reviewed {
        promoted.extend(promote_reviewed(&s.input(path)?)?);
    }
    registries.push(promoted);

    let tools: BTreeSet<&str> = alerts.iter().map(|a| a.tool.as_str()).collect();
    let tools_with_rules = tools
        .into_iter()
        .filter(|t| registries.iter().any(|r| r.has_tool(t)))
        .map(String::from)
        .collect();
    let mut seen = BTreeSet::new();
    let mappings = registries
        .iter()
        .flat_map(|r| r.mappings_for(&alerts))
        .filter(|m| seen.insert((m.tool.clone(), m.checker.clone(), m.cwe)))
        .collect::<Vec<_>>();
    let mut mappings = mappings;
    mappings.sort_by(|a, b| (&a.tool, &a.checker, a.cwe).cmp(&(&b.tool, &b.checker, b.cwe)));
    s.write_json("known.json", &KnownStage { tools_with_rules, mappings })?;
    s.finish()
}

fn speculate_tools(ws: &Workspace, alerts: &[RawAlert], known: &KnownStage) -> Vec<String> {
    ws.config.mapping.speculate_tools.clone().unwrap_or_else(|| {
        let tools: BTreeSet<&str> = alerts.iter().map(|a| a.tool.as_str()).collect();
        tools
            .into_iter()
            .filter(|t| !known.tools_with_rules.iter().any(|k| k == t))
            .map(String::from)
            .collect()
    })
}

pub fn map_speculate(ws: &Workspace) -> Outcome {
    let mut s = ws.session("map-speculate", "mappings");
    let alerts = read_alerts(&mut s)?;
    let flaws = read_flaws(&mut s)?;
    let known: KnownStage = s.artifact_json("map-known", KNOWN)?;
    let tools = speculate_tools(ws, &alerts, &known);
    let stage = build_mappings(&alerts, &flaws, &KnownRegistry::default(), &tools, &ws.config.mapping.grid())?;
    let all: Vec<CheckerMapping> = stage.speculative.iter().flat_map(|(_, ms)| ms.iter().cloned()).collect();
    s.write("speculative.csv", &speculative_csv(&all, &stage.tables))?;
    s.finish()
}

pub fn map_review(ws: &Workspace) -> Outcome {
    let mut s = ws.session("map-review", "mappings");
    let alerts = read_alerts(&mut s)?;
    let flaws = read_flaws(&mut s)?;
    let all = parse_speculative_csv(&s.artifact("map-speculate", SPECULATIVE)?)?;
    let mut merged = ReviewReport::default();
    let by_tool: BTreeMap<&str, Vec<&CheckerMapping>> = all.iter().fold(BTreeMap::new(), |mut acc, m| {
        acc.entry(m.tool.as_str()).or_insert_with(Vec::new).push(m);
        acc
    });
    for (tool, ms) in by_tool {
        let own: Vec<RawAlert> = alerts.iter().filter(|a| a.tool == tool).cloned().collect();
        let table = count_matches(&own, &flaws)?;
        let mut seen = BTreeSet::new();
        let candidates: Vec<CheckerMapping> = ms
            .into_iter()
            .filter(|m| seen.insert((m.checker.clone(), m.cwe)))
            .cloned()
            .collect();
        let report = mapping_review_report(&candidates, &table);
        merged.candidate_count += report.candidate_count;
        merged.all_pairs += report.all_pairs;
        merged.rows.extend(report.rows);
    }
    s.write("review.csv", &review_report_csv(&merged))?;
    s.write_json(
        "review_summary.json",
        &ReviewSummary {
            candidate_count: merged.candidate_count,
            all_pairs: merged.all_pairs,
            effort_reduction: (merged.all_pairs > 0)
                .then(|| 1.0 - merged.candidate_count as f64 / merged.all_pairs as f64),
        },
    )?;
    s.finish()
}

pub fn fuse(ws: &Workspace) -> Outcome {
    let mut s = ws.session("fuse", "fused");
    let alerts = read_alerts(&mut s)?;
    let known: KnownStage = s.artifact_json("map-known", KNOWN)?;
    let speculative = read_speculative(&mut s, &ws.config)?;
    let stage = MappingStage {
        known: known.mappings,
        tables: Vec::new(),
        speculative,
    };
    let outcome = alertlab::fuse::fuse(&alerts, &stage.union());
    s.write_jsonl("fused.jsonl", &outcome.fused)?;
    s.write("fused.csv", &fused_csv(&outcome.fused))?;
    s.write_json(
        "fuse_summary.json",
        &FuseSummary {
            fused_count: outcome.fused.len(),
            excluded_raw_alerts: outcome.excluded,
        },
    )?;
    s.finish()
}

pub fn label(ws: &Workspace) -> Outcome {
    let mut s = ws.session("label", "fused");
    let fused: Vec<FusedAlert> = s.artifact_jsonl("fuse", FUSED)?;
    let flaws = read_flaws(&mut s)?;
    let spans = read_spans(&mut s)?;
    let truth = alertlab::fuse::GroundTruth::new(&flaws, &spans);
    let (labeled, stats) = alertlab::fuse::label_all(fused, &truth);
    s.write_jsonl("labeled.jsonl", &labeled)?;
    s.write("labeled.csv", &fused_csv(&labeled))?;
    s.write_json(
        "label_stats.json",
        &LabelSummary {
            stats,
            labeled: stats.labeled(),
            seconds_per_manual_verdict: SECONDS_PER_MANUAL_VERDICT,
            manual_cost_hours: estimate_manual_cost(stats.labeled() as i64, SECONDS_PER_MANUAL_VERDICT)?,
        },
    )?;
    s.finish()
}

pub fn features(ws: &Workspace) -> Outcome {
    let mut s = ws.session("features", "features");
    let labeled: Vec<FusedAlert> = s.artifact_jsonl("label", LABELED)?;
    let spans = read_spans(&mut s)?;
    let alerts = read_alerts(&mut s)?;
    let mut records = Vec::new();
    for MetricsInput { path, source } in &ws.config.inputs.metrics {
        let text = s.input(path)?;
        records.extend(parse_metrics_csv(&text, source.as_deref().unwrap_or("metrics"))?);
    }
    let index = MetricsIndex::new(&records);
    let tools: Vec<String> = alerts
        .iter()
        .map(|a| a.tool.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let vectors: Vec<FeatureVector> = features_by_id(&labeled, &index, &spans, &tools).into_values().collect();
    s.write_jsonl("features.jsonl", &vectors)?;
    s.write("features.csv", &feature_table_csv(&vectors))?;
    s.finish()
}

pub fn split(ws: &Workspace) -> Outcome {
    let mut s = ws.session("split", "splits");
    let labeled: Vec<FusedAlert> = s.artifact_jsonl("label", LABELED)?;
    let speculative = read_speculative(&mut s, &ws.config)?;
    let spec = SplitSpec {
        test_fraction: ws.config.split.test_fraction,
        seed: ws.seed,
    };
    let bundle = build_splits(&labeled, &speculative, &spec)?;
    bundle.check_hygiene()?;
    for w in &bundle.warnings {
        eprintln!("warning: {w}");
    }
    let mut text = serde_json::to_string(&bundle).expect("bundle serializes");
    text.push('\n');
    s.write("bundle.json", &text)?;
    s.finish()
}

pub fn train_model(ws: &Workspace, kind: Option<ModelKind>, set: TrainingSet) -> Outcome {
    let mut s = ws.session("train", "models");
    let bundle: DatasetBundle = s.artifact_json("split", BUNDLE)?;
    let features = read_features(&mut s)?;
    let ids = match set {
        TrainingSet::Baseline => &bundle.af_non_speculative,
        TrainingSet::Speculative(cfg) => bundle
            .training_set(&cfg)
            .ok_or_else(|| validation(format!("no training set for {cfg}; check mapping.thresholds/directions")))?,
    };
    let vectors = lookup(ids, &features)?;
    let config = ws.config.train.config(kind, ws.seed);
    let model = train(&vectors, &config)?;
    s.write("model.json", &model.to_json())?;
    s.write_json(
        "train_counts.json",
        &TrainSummary {
            training_set: set.to_string(),
            n_train: vectors.len(),
            per_cwe: cwe_counts(ids, &features),
        },
    )?;
    s.finish()
}

pub fn evaluate_model(ws: &Workspace) -> Outcome {
    let mut s = ws.session("evaluate", "reports");
    let model = TrainedModel::from_json(&s.artifact("train", MODEL)?)?;
    let counts: TrainSummary = s.artifact_json("train", TRAIN_COUNTS)?;
    let bundle: DatasetBundle = s.artifact_json("split", BUNDLE)?;
    let features = read_features(&mut s)?;
    let cert_map = match ws.config.inputs.cert_map.as_deref() {
        Some(path) => CertMap::parse_csv(&s.input(path)?)?,
        None => CertMap::default(),
    };
    let test = lookup(&bundle.af_test, &features)?;
    let mut report = evaluate(&model, &test, &cert_map, &counts.per_cwe, ws.config.evaluate.decision_threshold)?;
    let top_k = ws.config.evaluate.top_k;
    let ranking = match model.kind {
        ModelKind::Gbt => feature_importance(&model, top_k)?,
        ModelKind::LassoLogit => weight_ranking(&model, top_k)?,
    };
    report.feature_importance = ranking
        .into_iter()
        .map(|(feature, score)| Importance { feature, score })
        .collect();
    s.write("overall.csv", &overall_csv(&report))?;
    s.write("per_cwe.csv", &per_cwe_csv(&report))?;
    s.write("per_cert_rule.csv", &per_cert_rule_csv(&report))?;
    s.write("importance.csv", &importance_csv(&report))?;
    s.write_json("evaluation.json", &report)?;
    s.finish()
}

pub fn sweep_grid(ws: &Workspace, kind: Option<ModelKind>) -> Outcome {
    let mut s = ws.session("sweep", "reports");
    let bundle: DatasetBundle = s.artifact_json("split", BUNDLE)?;
    let features = read_features(&mut s)?;
    let config = ws.config.train.config(kind, ws.seed);
    let rows = sweep(&bundle, &features, &config, ws.config.evaluate.decision_threshold)?;
    s.write("sweep.csv", &sweep_csv(&rows))?;
    s.write_json("sweep.json", &rows)?;
    s.finish()
}

pub struct SynthArgs {
    pub testcases: Option<usize>,
    pub strength: Option<f64>,
    /// Full generator profile (JSON) overriding the standard one.
    pub profile: Option<String>,
}

pub fn synth(ws: &Workspace, args: &SynthArgs) -> Outcome {
    let mut s = ws.session("synth", "synth");
    let mut cfg = match &args.profile {
        Some(path) => {
            let text = s.input(path)?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| CliError::Config(format!("{path}: {e}")))?
        }
        None => SynthConfig::standard(ws.seed, DEFAULT_TESTCASES),
    };
    cfg.seed = ws.seed;
    if let Some(n) = args.testcases {
        cfg.n_testcases = n;
    }
    if let Some(strength) = args.strength {
        cfg.planted_feature_strength = strength;
    }
    cfg.validate()?;
    let mut corpus = generate_corpus(&cfg)?;
    let artifacts = generate_alerts(&mut corpus, &cfg)?;
    for src in &corpus.sources {
        s.write(&format!("sources/{}", src.path), &src.text)?;
    }
    s.write("manifest.xml", &corpus.manifest_xml)?;
    s.write("metrics.csv", &corpus.metrics_csv)?;
    s.write("known_mappings.csv", &corpus.known_mappings_csv)?;
    s.write("cert_map.csv", &corpus.cert_map_csv)?;
    for a in &artifacts {
        s.write(&format!("alerts/{}", a.filename), &a.content)?;
    }
    s.write("truth.jsonl", &corpus.truth.to_jsonl())?;
    s.write_json("synth_config.json", &cfg)?;
    s.write("alertlab.toml", &template_config(ws, &artifacts).to_toml())?;
    s.finish()
}

pub const DEFAULT_TESTCASES: usize = 1000;

/// A workspace config that runs the pipeline over the generated corpus.
fn template_config(ws: &Workspace, artifacts: &[alertlab::synth::ToolArtifact]) -> Config {
    let mut config = ws.config.clone();
    config.seed = Some(ws.seed);
    config.inputs.alerts = artifacts
        .iter()
        .map(|a| AlertInput {
            path: format!("synth/alerts/{}", a.filename),
            format: a.format,
            tool: Some(a.tool.clone()),
        })
        .collect();
    config.inputs.manifest = Some("synth/manifest.xml".into());
    config.inputs.sources = Some("synth/sources".into());
    config.inputs.metrics = vec![MetricsInput {
        path: "synth/metrics.csv".into(),
        source: Some(METRICS_SOURCE.into()),
    }];
    config.inputs.known_mappings = vec!["synth/known_mappings.csv".into()];
    config.inputs.reviewed = Vec::new();
    config.inputs.cert_map = Some("synth/cert_map.csv".into());
    config
}

fn csv_as_markdown(text: &str) -> String {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut out = String::new();
    for (i, rec) in rdr.records().flatten().enumerate() {
        let cells: Vec<&str> = rec.iter().map(|c| if c.is_empty() { "n/a" } else { c }).collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i == 0 {
            let _ = writeln!(out, "|{}", "---|".repeat(cells.len()));
        }
    }
    out
}

pub fn report(ws: &Workspace) -> Outcome {
    let stale: Vec<String> = ws
        .stale_commands()?
        .into_iter()
        .filter(|c| c != "report")
        .collect();
    let mut s = ws.session("report", "reports");
    let stats: LabelSummary = s.artifact_json("label", LABEL_STATS)?;
    let counts: TrainSummary = s.artifact_json("train", TRAIN_COUNTS)?;
    let overall = s.artifact("evaluate", "reports/overall.csv")?;
    let per_cwe = s.artifact("evaluate", "reports/per_cwe.csv")?;
    let per_rule = s.artifact("evaluate", "reports/per_cert_rule.csv")?;
    let importance = s.artifact("evaluate", "reports/importance.csv")?;
    let sweep = if ws.path("reports/sweep.csv").is_file() {
        Some(s.artifact("sweep", "reports/sweep.csv")?)
    } else {
        None
    };

    let mut md = String::from("# Alert classification summary\n\n");
    let _ = writeln!(
        md,
        "Labeled fused alerts: {} ({} true, {} false), {} left unknown.",
        stats.labeled, stats.stats.tp_count, stats.stats.fp_count, stats.stats.unknown_count
    );
    let _ = writeln!(
        md,
        "Manual verdicts at {} s each would take {:.1} h.\n",
        stats.seconds_per_manual_verdict, stats.manual_cost_hours
    );
    let _ = writeln!(md, "Training set `{}` with {} alerts, seed {}.\n", counts.training_set, counts.n_train, ws.seed);
    for (title, table) in [
        ("Overall", Some(&overall)),
        ("Per CWE", Some(&per_cwe)),
        ("Per CERT rule", Some(&per_rule)),
        ("Feature importance", Some(&importance)),
        ("Threshold sweep", sweep.as_ref()),
    ] {
        if let Some(table) = table {
            let _ = writeln!(md, "## {title}\n\n{}", csv_as_markdown(table));
        }
    }
    md.push_str("## Staleness\n\n");
    if stale.is_empty() {
        md.push_str("All stage outputs match their recorded inputs.\n");
    } else {
        for c in &stale {
            let _ = writeln!(md, "- `{c}` is stale: its inputs or outputs changed since it ran");
        }
    }
    s.write("summary.md", &md)?;
    let out = s.finish()?;
    for c in &stale {
        eprintln!("warning: stage `{c}` is stale");
    }
    Ok(out)
}
