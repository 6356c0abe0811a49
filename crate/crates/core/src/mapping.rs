//! Checker-to-CWE mappings.
//!
//! Known mappings come from a registry CSV. For tools without one, alerts
//! landing on manifest flaw lines are treated as evidence: `m_ij` counts
//! how often checker `i` fired on a line carrying a flaw of CWE `j`. The
//! forward rate `100·m_ij/m_i` normalizes by the checker, the backward rate
//! `100·m_ij/m_j` by the CWE. Each checker's best-rated CWE becomes a
//! speculative mapping when its rate clears a threshold.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RawAlert;
use crate::suite::FlawRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Known,
    Speculative,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Known => "known",
            Provenance::Speculative => "speculative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
    Combined,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
            Direction::Combined => "combined",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            "combined" => Ok(Direction::Combined),
            other => Err(Error::validation(format!("unknown direction `{other}`"))),
        }
    }
}

/// A checker→CWE association.
///
/// Known mappings leave `direction`, `threshold` and `match_pct` empty;
/// speculative ones carry all three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckerMapping {
    pub tool: String,
    pub checker: String,
    pub cwe: u32,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_pct: Option<f64>,
}

impl CheckerMapping {
    pub fn known(tool: &str, checker: &str, cwe: u32) -> Self {
        CheckerMapping {
            tool: tool.to_string(),
            checker: checker.to_string(),
            cwe,
            provenance: Provenance::Known,
            direction: None,
            threshold: None,
            match_pct: None,
        }
    }
}

/// Checker–CWE match counts for one tool.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchCountTable {
    pub tool: String,
    /// `m_ij`, only non-zero entries are stored.
    pub counts: BTreeMap<(String, u32), u64>,
    /// `m_i` for every checker seen in the alerts, including zero rows.
    pub row_totals: BTreeMap<String, u64>,
    /// `m_j` for every CWE with at least one match.
    pub col_totals: BTreeMap<u32, u64>,
}

impl MatchCountTable {
    /// Builds a table from explicit counts; totals are derived.
    pub fn from_counts(
        tool: &str,
        counts: impl IntoIterator<Item = ((String, u32), u64)>,
    ) -> MatchCountTable {
        let mut table = MatchCountTable {
            tool: tool.to_string(),
            ..Default::default()
        };
        for ((checker, cwe), m) in counts {
            table.row_totals.entry(checker.clone()).or_insert(0);
            if m > 0 {
                table.add(&checker, cwe, m);
            }
        }
        table
    }

    fn add(&mut self, checker: &str, cwe: u32, m: u64) {
        *self.counts.entry((checker.to_string(), cwe)).or_insert(0) += m;
        *self.row_totals.entry(checker.to_string()).or_insert(0) += m;
        *self.col_totals.entry(cwe).or_insert(0) += m;
    }

    pub fn count(&self, checker: &str, cwe: u32) -> u64 {
        self.counts
            .get(&(checker.to_string(), cwe))
            .copied()
            .unwrap_or(0)
    }

    pub fn row_total(&self, checker: &str) -> u64 {
        self.row_totals.get(checker).copied().unwrap_or(0)
    }

    pub fn col_total(&self, cwe: u32) -> u64 {
        self.col_totals.get(&cwe).copied().unwrap_or(0)
    }

    /// Non-zero `(cwe, m_ij)` entries of one checker's row.
    pub fn row(&self, checker: &str) -> impl Iterator<Item = (u32, u64)> + '_ {
        let lo = (checker.to_string(), 0u32);
        let hi = (checker.to_string(), u32::MAX);
        self.counts.range(lo..=hi).map(|((_, cwe), &m)| (*cwe, m))
    }
}

/// Counts checker–CWE matches: every (alert, flaw) pair sharing a file and
/// line adds one to `m[alert.checker][flaw.cwe]`. Repeated alerts each count.
pub fn count_matches(alerts: &[RawAlert], flaws: &[FlawRecord]) -> Result<MatchCountTable> {
    let tool = alerts.first().map(|a| a.tool.clone()).unwrap_or_default();
    if let Some(other) = alerts.iter().find(|a| a.tool != tool) {
        return Err(Error::MixedTools {
            expected: tool,
            found: other.tool.clone(),
        });
    }

    let mut by_line: HashMap<(&str, u32), BTreeSet<u32>> = HashMap::new();
    for f in flaws {
        by_line
            .entry((f.filepath.as_str(), f.line))
            .or_default()
            .insert(f.cwe);
    }

    let mut table = MatchCountTable {
        tool,
        ..Default::default()
    };
    for a in alerts {
        table.row_totals.entry(a.checker.clone()).or_insert(0);
        if let Some(cwes) = by_line.get(&(a.filepath.as_str(), a.line)) {
            for &cwe in cwes {
                table.add(&a.checker, cwe, 1);
            }
        }
    }
    Ok(table)
}

/// `100·m_ij/m_i`.
pub fn forward_pct(table: &MatchCountTable, checker: &str, cwe: u32) -> Result<f64> {
    let m_i = table.row_total(checker);
    if m_i == 0 {
        return Err(Error::UndefinedRate(format!(
            "checker `{checker}` has no CWE matches"
        )));
    }
    Ok(100.0 * table.count(checker, cwe) as f64 / m_i as f64)
}

/// `100·m_ij/m_j`.
pub fn backward_pct(table: &MatchCountTable, checker: &str, cwe: u32) -> Result<f64> {
    let m_j = table.col_total(cwe);
    if m_j == 0 {
        return Err(Error::UndefinedRate(format!("CWE-{cwe} has no checker matches")));
    }
    Ok(100.0 * table.count(checker, cwe) as f64 / m_j as f64)
}

/// Mean of the forward and backward rates. Experimental.
pub fn combined_pct(table: &MatchCountTable, checker: &str, cwe: u32) -> Result<f64> {
    let f = forward_pct(table, checker, cwe)?;
    let b = backward_pct(table, checker, cwe)?;
    Ok(0.5 * f + 0.5 * b)
}

pub fn match_pct(
    table: &MatchCountTable,
    direction: Direction,
    checker: &str,
    cwe: u32,
) -> Result<f64> {
    match direction {
        Direction::Forward => forward_pct(table, checker, cwe),
        Direction::Backward => backward_pct(table, checker, cwe),
        Direction::Combined => combined_pct(table, checker, cwe),
    }
}

/// Assigns each checker with evidence to its best-rated CWE (ties go to the
/// smaller CWE number) and admits the assignment when the rate is at least
/// `threshold`, or strictly positive when `threshold` is 0.
pub fn speculate(
    table: &MatchCountTable,
    direction: Direction,
    threshold: f64,
) -> Result<Vec<CheckerMapping>> {
    if !(0.0..=100.0).contains(&threshold) {
        return Err(Error::validation(format!(
            "threshold {threshold} is outside [0, 100]"
        )));
    }
    let mut out = Vec::new();
    for (checker, &m_i) in &table.row_totals {
        if m_i == 0 {
            continue;
        }
        let mut best: Option<(u32, f64)> = None;
        for (cwe, _) in table.row(checker) {
            let rate = match_pct(table, direction, checker, cwe)?;
            // Row iteration is in ascending CWE order, so `>` keeps the smallest on ties.
            if best.is_none_or(|(_, r)| rate > r) {
                best = Some((cwe, rate));
            }
        }
        let Some((cwe, rate)) = best else { continue };
        let admitted = if threshold > 0.0 {
            rate >= threshold
        } else {
            rate > 0.0
        };
        if admitted {
            out.push(CheckerMapping {
                tool: table.tool.clone(),
                checker: checker.clone(),
                cwe,
                provenance: Provenance::Speculative,
                direction: Some(direction),
                threshold: Some(threshold),
                match_pct: Some(rate),
            });
        }
    }
    Ok(out)
}

/// Relationship between a checker and a CWE as judged by a reviewer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Relationship {
    Unreviewed,
    Equals,
    SubsetOf,
    SupersetOf,
    PartiallyOverlapping,
    Wrong,
}

impl Relationship {
    pub fn as_str(self) -> &'static str {
        match self {
            Relationship::Unreviewed => "UNREVIEWED",
            Relationship::Equals => "EQUALS",
            Relationship::SubsetOf => "SUBSET_OF",
            Relationship::SupersetOf => "SUPERSET_OF",
            Relationship::PartiallyOverlapping => "PARTIALLY_OVERLAPPING",
            Relationship::Wrong => "WRONG",
        }
    }

    /// Whether a reviewed row describes a real (possibly partial) mapping.
    pub fn is_mapping(self) -> bool {
        !matches!(self, Relationship::Unreviewed | Relationship::Wrong)
    }
}

impl FromStr for Relationship {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "" | "UNREVIEWED" => Relationship::Unreviewed,
            "EQUALS" => Relationship::Equals,
            "SUBSET_OF" => Relationship::SubsetOf,
            "SUPERSET_OF" => Relationship::SupersetOf,
            "PARTIALLY_OVERLAPPING" => Relationship::PartiallyOverlapping,
            "WRONG" => Relationship::Wrong,
            other => return Err(Error::validation(format!("unknown relationship `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRow {
    pub tool: String,
    pub checker: String,
    pub cwe: u32,
    pub m_ij: u64,
    pub m_i: u64,
    pub m_j: u64,
    pub forward_pct: f64,
    pub backward_pct: f64,
    pub relationship: Relationship,
}

/// Candidate list for manual verification, with the effort-reduction
/// statistic: `candidate_count` against every checker paired with every
/// CWE that has evidence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub rows: Vec<ReviewRow>,
    pub candidate_count: usize,
    pub all_pairs: usize,
}

pub fn mapping_review_report(
    candidates: &[CheckerMapping],
    table: &MatchCountTable,
) -> ReviewReport {
    let rows: Vec<ReviewRow> = candidates
        .iter()
        .map(|c| ReviewRow {
            tool: c.tool.clone(),
            checker: c.checker.clone(),
            cwe: c.cwe,
            m_ij: table.count(&c.checker, c.cwe),
            m_i: table.row_total(&c.checker),
            m_j: table.col_total(c.cwe),
            forward_pct: forward_pct(table, &c.checker, c.cwe).unwrap_or(0.0),
            backward_pct: backward_pct(table, &c.checker, c.cwe).unwrap_or(0.0),
            relationship: Relationship::Unreviewed,
        })
        .collect();
    ReviewReport {
        candidate_count: rows.len(),
        all_pairs: table.row_totals.len() * table.col_totals.len(),
        rows,
    }
}

const REVIEW_HEADER: [&str; 9] = [
    "tool",
    "checker",
    "cwe",
    "m_ij",
    "m_i",
    "m_j",
    "forward_pct",
    "backward_pct",
    "relationship",
];

pub fn review_report_csv(report: &ReviewReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REVIEW_HEADER).unwrap();
    for r in &report.rows {
        w.write_record([
            r.tool.clone(),
            r.checker.clone(),
            r.cwe.to_string(),
            r.m_ij.to_string(),
            r.m_i.to_string(),
            r.m_j.to_string(),
            r.forward_pct.to_string(),
            r.backward_pct.to_string(),
            r.relationship.as_str().to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Reads a completed review CSV and returns the rows a reviewer marked as
/// a real relationship, promoted to known mappings.
pub fn promote_reviewed(document: &str) -> Result<Vec<CheckerMapping>> {
    let mut rdr = csv::Reader::from_reader(document.as_bytes());
    let headers = rdr.headers().map_err(|e| csv_error(0, "header", e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Structure {
                field: name.to_string(),
            })
    };
    let (tool_c, checker_c, cwe_c, rel_c) =
        (col("tool")?, col("checker")?, col("cwe")?, col("relationship")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_error(row, "", e))?;
        let rel: Relationship = rec[rel_c].parse().map_err(|e: Error| Error::Csv {
            row,
            column: "relationship".into(),
            message: e.to_string(),
        })?;
        if !rel.is_mapping() {
            continue;
        }
        let cwe = parse_cwe_cell(&rec[cwe_c], row, "cwe")?;
        out.push(CheckerMapping::known(&rec[tool_c], &rec[checker_c], cwe));
    }
    Ok(out)
}

pub(crate) fn csv_error(row: usize, column: &str, e: csv::Error) -> Error {
    Error::Csv {
        row,
        column: column.to_string(),
        message: e.to_string(),
    }
}

pub(crate) fn parse_cwe_cell(cell: &str, row: usize, column: &str) -> Result<u32> {
    let digits = cell
        .trim()
        .trim_start_matches("CWE-")
        .trim_start_matches("CWE");
    digits
        .parse::<u32>()
        .ok()
        .filter(|&c| c >= 1)
        .ok_or_else(|| Error::Csv {
            row,
            column: column.to_string(),
            message: format!("`{cell}` is not a CWE number"),
        })
}

const SPECULATIVE_HEADER: [&str; 9] = [
    "tool",
    "checker",
    "cwe",
    "direction",
    "threshold",
    "match_pct",
    "m_ij",
    "m_i",
    "m_j",
];

/// Writes speculative mappings with their evidence. `tables` is looked up
/// by tool name.
pub fn speculative_csv(mappings: &[CheckerMapping], tables: &[MatchCountTable]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SPECULATIVE_HEADER).unwrap();
    for m in mappings {
        let table = tables.iter().find(|t| t.tool == m.tool);
        let (m_ij, m_i, m_j) = table.map_or((0, 0, 0), |t| {
            (t.count(&m.checker, m.cwe), t.row_total(&m.checker), t.col_total(m.cwe))
        });
        w.write_record([
            m.tool.clone(),
            m.checker.clone(),
            m.cwe.to_string(),
            m.direction.map(Direction::as_str).unwrap_or("").to_string(),
            m.threshold.map(|t| t.to_string()).unwrap_or_default(),
            m.match_pct.map(|p| p.to_string()).unwrap_or_default(),
            m_ij.to_string(),
            m_i.to_string(),
            m_j.to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

pub fn parse_speculative_csv(document: &str) -> Result<Vec<CheckerMapping>> {
    let mut rdr = csv::Reader::from_reader(document.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_error(row, "", e))?;
        if rec.len() < 6 {
            return Err(Error::Csv {
                row,
                column: String::new(),
                message: format!("expected 9 columns, found {}", rec.len()),
            });
        }
        let num = |idx: usize, name: &str| -> Result<f64> {
            rec[idx].trim().parse::<f64>().map_err(|_| Error::Csv {
                row,
                column: name.to_string(),
                message: format!("`{}` is not a number", &rec[idx]),
            })
        };
        out.push(CheckerMapping {
            tool: rec[0].to_string(),
            checker: rec[1].to_string(),
            cwe: parse_cwe_cell(&rec[2], row, "cwe")?,
            provenance: Provenance::Speculative,
            direction: Some(rec[3].parse().map_err(|e: Error| Error::Csv {
                row,
                column: "direction".into(),
                message: e.to_string(),
            })?),
            threshold: Some(num(4, "threshold")?),
            match_pct: Some(num(5, "match_pct")?),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum CheckerPattern {
    Exact(String),
    Regex(Regex),
}

#[derive(Debug, Clone)]
struct KnownRule {
    tool: String,
    pattern: CheckerPattern,
    cwe: u32,
}

/// Known checker→CWE mappings: `tool,checker_pattern,is_regex(0|1),cwe`.
/// Regex patterns must match the whole checker id.
#[derive(Debug, Clone, Default)]
pub struct KnownRegistry {
    rules: Vec<KnownRule>,
    extra: Vec<CheckerMapping>,
}

impl KnownRegistry {
    pub fn parse_csv(document: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(document.as_bytes());
        let mut rules = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| csv_error(row, "", e))?;
            if rec.len() != 4 {
                return Err(Error::Csv {
                    row,
                    column: String::new(),
                    message: format!("expected 4 columns, found {}", rec.len()),
                });
            }
            let pattern = match &rec[2] {
                "0" => CheckerPattern::Exact(rec[1].to_string()),
                "1" => CheckerPattern::Regex(Regex::new(&format!("^(?:{})$", &rec[1])).map_err(
                    |e| Error::Csv {
                        row,
                        column: "checker_pattern".into(),
                        message: e.to_string(),
                    },
                )?),
                other => {
                    return Err(Error::Csv {
                        row,
                        column: "is_regex".into(),
                        message: format!("expected 0 or 1, found `{other}`"),
                    })
                }
            };
            rules.push(KnownRule {
                tool: rec[0].to_string(),
                pattern,
                cwe: parse_cwe_cell(&rec[3], row, "cwe")?,
            });
        }
        Ok(KnownRegistry {
            rules,
            extra: Vec::new(),
        })
    }

    /// Adds concrete known mappings, e.g. promoted review rows.
    pub fn extend(&mut self, mappings: impl IntoIterator<Item = CheckerMapping>) {
        self.extra.extend(mappings);
    }

    pub fn has_tool(&self, tool: &str) -> bool {
        self.rules.iter().any(|r| r.tool == tool) || self.extra.iter().any(|m| m.tool == tool)
    }

    /// All CWEs a checker maps to, ascending.
    pub fn resolve(&self, tool: &str, checker: &str) -> Vec<u32> {
        let mut cwes: BTreeSet<u32> = self
            .rules
            .iter()
            .filter(|r| r.tool == tool)
            .filter(|r| match &r.pattern {
                CheckerPattern::Exact(s) => s == checker,
                CheckerPattern::Regex(re) => re.is_match(checker),
            })
            .map(|r| r.cwe)
            .collect();
        cwes.extend(
            self.extra
                .iter()
                .filter(|m| m.tool == tool && m.checker == checker)
                .map(|m| m.cwe),
        );
        cwes.into_iter().collect()
    }

    /// Concrete known mappings for every distinct (tool, checker) in `alerts`.
    pub fn mappings_for(&self, alerts: &[RawAlert]) -> Vec<CheckerMapping> {
        let pairs: BTreeSet<(&str, &str)> = alerts
            .iter()
            .map(|a| (a.tool.as_str(), a.checker.as_str()))
            .collect();
        pairs
            .into_iter()
            .flat_map(|(tool, checker)| {
                self.resolve(tool, checker)
                    .into_iter()
                    .map(move |cwe| CheckerMapping::known(tool, checker, cwe))
            })
            .collect()
    }
}
