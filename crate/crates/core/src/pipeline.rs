//! In-memory stage chaining shared by the command line, the web demo and
//! the end-to-end tests.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{build_features, parse_metrics_csv, FeatureVector, MetricsIndex};
use crate::fuse::{fuse, label_all, FusedAlert, GroundTruth, LabelStats};
use crate::ingest::{parse_normalized_jsonl, parse_sarif, AlertFormat, AlertStream, RawAlert};
use crate::learn::split::{build_splits, default_grid, DatasetBundle, SpeculativeConfig, SplitSpec};
use crate::learn::TrainConfig;
use crate::mapping::{count_matches, speculate, CheckerMapping, KnownRegistry, MatchCountTable};
use crate::suite::{parse_manifest, scan_function_spans, FlawRecord, FunctionSpan};
use crate::synth::{generate_alerts, generate_corpus, Corpus, MappedKind, SourceFile, SynthConfig, ToolArtifact};

/// Settings for the stages after ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Tools whose checkers get speculative mappings. `None` picks every
    /// tool without a known-mapping rule.
    pub speculate_tools: Option<Vec<String>>,
    pub grid: Vec<SpeculativeConfig>,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub decision_threshold: f64,
}

impl PipelineConfig {
    pub fn new(train: TrainConfig) -> Self {
        PipelineConfig {
            speculate_tools: None,
            grid: default_grid(),
            split: SplitSpec::new(train.seed),
            train,
            decision_threshold: 0.5,
        }
    }
}

/// Parses one alert artifact; `tool` names JSONL records without a tool field.
pub fn parse_artifact(format: AlertFormat, content: &str, tool: &str) -> Result<Vec<RawAlert>> {
    match format {
        AlertFormat::Sarif => Ok(parse_sarif(content)?.alerts),
        AlertFormat::NormalizedJsonl => parse_normalized_jsonl(content, tool),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteData {
    pub flaws: Vec<FlawRecord>,
    pub spans: Vec<FunctionSpan>,
    pub warnings: Vec<String>,
}

pub fn scan_suite(manifest_xml: &str, sources: &[SourceFile]) -> Result<SuiteData> {
    let manifest = parse_manifest(manifest_xml)?;
    let mut data = SuiteData {
        flaws: manifest.flaws,
        ..SuiteData::default()
    };
    for src in sources {
        let scan = scan_function_spans(&src.text, &src.path);
        data.spans.extend(scan.spans);
        data.warnings
            .extend(scan.warnings.into_iter().map(|w| format!("{}: {w}", src.path)));
    }
    Ok(data)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MappingStage {
    pub known: Vec<CheckerMapping>,
    pub tables: Vec<MatchCountTable>,
    pub speculative: Vec<(SpeculativeConfig, Vec<CheckerMapping>)>,
}

impl MappingStage {
    /// Known mappings plus every speculative mapping of any configuration.
    pub fn union(&self) -> Vec<CheckerMapping> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for m in self
            .known
            .iter()
            .chain(self.speculative.iter().flat_map(|(_, ms)| ms.iter()))
        {
            if seen.insert((m.tool.clone(), m.checker.clone(), m.cwe, m.provenance)) {
                out.push(CheckerMapping {
                    direction: None,
                    threshold: None,
                    match_pct: None,
                    ..m.clone()
                });
            }
        }
        out
    }
}

/// Tools in `alerts` without a known-mapping rule.
pub fn unmapped_tools(alerts: &[RawAlert], registry: &KnownRegistry) -> Vec<String> {
    let tools: BTreeSet<&str> = alerts.iter().map(|a| a.tool.as_str()).collect();
    tools
        .into_iter()
        .filter(|t| !registry.has_tool(t))
        .map(String::from)
        .collect()
}

/// Count tables and speculative mappings for `speculate_tools` under
/// every grid configuration.
pub fn build_mappings(
    alerts: &[RawAlert],
    flaws: &[FlawRecord],
    registry: &KnownRegistry,
    speculate_tools: &[String],
    grid: &[SpeculativeConfig],
) -> Result<MappingStage> {
    let mut tables = Vec::new();
    for tool in speculate_tools {
        let own: Vec<RawAlert> = alerts.iter().filter(|a| &a.tool == tool).cloned().collect();
        if !own.is_empty() {
            tables.push(count_matches(&own, flaws)?);
        }
    }
    let mut speculative = Vec::new();
    for cfg in grid {
        let mut ms = Vec::new();
        for t in &tables {
            ms.extend(speculate(t, cfg.direction, cfg.threshold)?);
        }
        speculative.push((*cfg, ms));
    }
    Ok(MappingStage {
        known: registry.mappings_for(alerts),
        tables,
        speculative,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub fused: Vec<FusedAlert>,
    pub stats: LabelStats,
    pub excluded: usize,
}

pub fn fuse_and_label(
    alerts: &[RawAlert],
    mappings: &[CheckerMapping],
    flaws: &[FlawRecord],
    spans: &[FunctionSpan],
) -> Labeled {
    let outcome = fuse(alerts, mappings);
    let truth = GroundTruth::new(flaws, spans);
    let (fused, stats) = label_all(outcome.fused, &truth);
    Labeled {
        fused,
        stats,
        excluded: outcome.excluded,
    }
}

/// Feature vectors keyed by fused id.
pub fn features_by_id(
    fused: &[FusedAlert],
    metrics: &MetricsIndex,
    spans: &[FunctionSpan],
    tools: &[String],
) -> BTreeMap<u64, FeatureVector> {
    build_features(fused, metrics, spans, tools)
        .into_iter()
        .map(|fv| (fv.fused_id, fv))
        .collect()
}

pub fn cwe_counts<'a>(ids: impl IntoIterator<Item = &'a u64>, features: &BTreeMap<u64, FeatureVector>) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for id in ids {
        if let Some(fv) = features.get(id) {
            *counts.entry(fv.cwe).or_insert(0) += 1;
        }
    }
    counts
}

/// Everything produced from one synthetic corpus up to the dataset bundle.
#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub corpus: Corpus,
    pub artifacts: Vec<ToolArtifact>,
    pub alerts: AlertStream,
    pub suite: SuiteData,
    pub mappings: MappingStage,
    pub labeled: Labeled,
    pub features: BTreeMap<u64, FeatureVector>,
    pub bundle: DatasetBundle,
}

impl SyntheticRun {
    pub fn vectors(&self, ids: &BTreeSet<u64>) -> Vec<&FeatureVector> {
        ids.iter().filter_map(|id| self.features.get(id)).collect()
    }
}

pub fn run_synthetic(synth: &SynthConfig, config: &PipelineConfig) -> Result<SyntheticRun> {
    let mut corpus = generate_corpus(synth)?;
    let artifacts = generate_alerts(&mut corpus, synth)?;

    let mut alerts = AlertStream::new();
    for a in &artifacts {
        alerts.push(a.format, &a.filename, parse_artifact(a.format, &a.content, &a.tool)?);
    }
    let suite = scan_suite(&corpus.manifest_xml, &corpus.sources)?;
    let registry = KnownRegistry::parse_csv(&corpus.known_mappings_csv)?;
    let speculate_tools = config.speculate_tools.clone().unwrap_or_else(|| {
        synth
            .tools
            .iter()
            .filter(|t| t.mapped == MappedKind::SpeculativeCandidate)
            .map(|t| t.name.clone())
            .collect()
    });
    let mappings = build_mappings(&alerts.alerts, &suite.flaws, &registry, &speculate_tools, &config.grid)?;
    let labeled = fuse_and_label(&alerts.alerts, &mappings.union(), &suite.flaws, &suite.spans);

    let metrics = MetricsIndex::new(&parse_metrics_csv(&corpus.metrics_csv, crate::synth::METRICS_SOURCE)?);
    let features = features_by_id(&labeled.fused, &metrics, &suite.spans, &alerts.tools());
    let bundle = build_splits(&labeled.fused, &mappings.speculative, &config.split)?;
    Ok(SyntheticRun {
        corpus,
        artifacts,
        alerts,
        suite,
        mappings,
        labeled,
        features,
        bundle,
    })
}
