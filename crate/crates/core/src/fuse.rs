//! Alert fusion and ground-truth verdicts.
//!
//! Raw alerts whose checker maps to a CWE are unified per
//! `(cwe, file, line)`. Verdicts come from test-suite metadata only:
//! a manifest flaw with the same file, line and CWE makes the fused alert
//! `True`; otherwise a GOOD function of the same CWE enclosing the line
//! makes it `False`; anything else stays `Unknown`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RawAlert;
use crate::mapping::{CheckerMapping, Provenance};
use crate::suite::{FlawRecord, FunctionSpan, Polarity};

/// Mean manual review time per alert, in seconds.
pub const SECONDS_PER_MANUAL_VERDICT: f64 = 117.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    True,
    False,
    Unknown,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::True => "True",
            Verdict::False => "False",
            Verdict::Unknown => "Unknown",
        }
    }

    /// 1 for `True`, 0 for `False`, `None` for `Unknown`.
    pub fn label(self) -> Option<u8> {
        match self {
            Verdict::True => Some(1),
            Verdict::False => Some(0),
            Verdict::Unknown => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Contributor {
    pub tool: String,
    pub checker: String,
    pub alert_id: u64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedAlert {
    pub fused_id: u64,
    pub cwe: u32,
    #[serde(rename = "file")]
    pub filepath: String,
    pub line: u32,
    /// Sorted by (tool, checker, alert_id); never empty.
    pub contributors: Vec<Contributor>,
    pub verdict: Verdict,
}

impl FusedAlert {
    /// Distinct contributing tools, sorted.
    pub fn tools(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.contributors.iter().map(|c| c.tool.as_str()).collect();
        set.into_iter().collect()
    }

    /// `known`, `speculative` or `mixed`.
    pub fn provenance_summary(&self) -> &'static str {
        let known = self
            .contributors
            .iter()
            .any(|c| c.provenance == Provenance::Known);
        let spec = self
            .contributors
            .iter()
            .any(|c| c.provenance == Provenance::Speculative);
        match (known, spec) {
            (true, true) => "mixed",
            (false, true) => "speculative",
            _ => "known",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FuseOutcome {
    /// Ordered by (file, line, cwe); `fused_id` follows that order from 0.
    pub fused: Vec<FusedAlert>,
    /// Raw alerts without any mapping.
    pub excluded: usize,
}

/// Fuses mapped alerts. An alert whose checker maps to several CWEs
/// contributes to one fused alert per CWE. If the same (tool, checker, cwe)
/// appears with both provenances, `known` wins.
pub fn fuse(alerts: &[RawAlert], mappings: &[CheckerMapping]) -> FuseOutcome {
    let mut lookup: HashMap<(&str, &str), BTreeMap<u32, Provenance>> = HashMap::new();
    for m in mappings {
        let slot = lookup
            .entry((m.tool.as_str(), m.checker.as_str()))
            .or_default()
            .entry(m.cwe)
            .or_insert(m.provenance);
        *slot = (*slot).min(m.provenance);
    }

    let mut groups: BTreeMap<(&str, u32, u32), BTreeSet<Contributor>> = BTreeMap::new();
    let mut excluded = 0;
    for a in alerts {
        let Some(cwes) = lookup.get(&(a.tool.as_str(), a.checker.as_str())) else {
            excluded += 1;
            continue;
        };
        for (&cwe, &provenance) in cwes {
            groups
                .entry((a.filepath.as_str(), a.line, cwe))
                .or_default()
                .insert(Contributor {
                    tool: a.tool.clone(),
                    checker: a.checker.clone(),
                    alert_id: a.alert_id,
                    provenance,
                });
        }
    }

    let fused = groups
        .into_iter()
        .enumerate()
        .map(|(i, ((file, line, cwe), contributors))| FusedAlert {
            fused_id: i as u64,
            cwe,
            filepath: file.to_string(),
            line,
            contributors: contributors.into_iter().collect(),
            verdict: Verdict::Unknown,
        })
        .collect();
    FuseOutcome { fused, excluded }
}

/// Indexed test-suite metadata for verdict derivation.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    flaws: HashSet<(String, u32, u32)>,
    good_spans: HashMap<String, Vec<(u32, u32, u32)>>,
}

impl GroundTruth {
    pub fn new(flaws: &[FlawRecord], spans: &[FunctionSpan]) -> Self {
        let flaws = flaws
            .iter()
            .map(|f| (f.filepath.clone(), f.line, f.cwe))
            .collect();
        let mut good_spans: HashMap<String, Vec<(u32, u32, u32)>> = HashMap::new();
        for s in spans {
            if let (Polarity::Good, Some(cwe)) = (s.polarity, s.cwe) {
                good_spans
                    .entry(s.filepath.clone())
                    .or_default()
                    .push((s.start_line, s.end_line, cwe));
            }
        }
        GroundTruth { flaws, good_spans }
    }

    fn has_flaw(&self, file: &str, line: u32, cwe: u32) -> bool {
        // HashSet<(String, ..)> cannot be probed with &str without allocating.
        self.flaws.contains(&(file.to_string(), line, cwe))
    }

    fn in_good_span(&self, file: &str, line: u32, cwe: u32) -> bool {
        self.good_spans.get(file).is_some_and(|spans| {
            spans
                .iter()
                .any(|&(s, e, c)| c == cwe && s <= line && line <= e)
        })
    }
}

pub fn derive_verdict(fa: &FusedAlert, truth: &GroundTruth) -> Verdict {
    if truth.has_flaw(&fa.filepath, fa.line, fa.cwe) {
        Verdict::True
    } else if truth.in_good_span(&fa.filepath, fa.line, fa.cwe) {
        Verdict::False
    } else {
        Verdict::Unknown
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    pub tp_count: usize,
    pub fp_count: usize,
    pub unknown_count: usize,
}

impl LabelStats {
    pub fn labeled(&self) -> usize {
        self.tp_count + self.fp_count
    }

    pub fn total(&self) -> usize {
        self.labeled() + self.unknown_count
    }
}

pub fn label_all(
    mut fused: Vec<FusedAlert>,
    truth: &GroundTruth,
) -> (Vec<FusedAlert>, LabelStats) {
    let mut stats = LabelStats::default();
    for fa in &mut fused {
        fa.verdict = derive_verdict(fa, truth);
        match fa.verdict {
            Verdict::True => stats.tp_count += 1,
            Verdict::False => stats.fp_count += 1,
            Verdict::Unknown => stats.unknown_count += 1,
        }
    }
    (fused, stats)
}

/// Hours a human would need to produce `n_labeled` verdicts, rounded to 0.1 h.
pub fn estimate_manual_cost(n_labeled: i64, seconds_per_alert: f64) -> Result<f64> {
    if n_labeled < 0 {
        return Err(Error::validation(format!(
            "alert count {n_labeled} is negative"
        )));
    }
    if !(seconds_per_alert.is_finite() && seconds_per_alert >= 0.0) {
        return Err(Error::validation(format!(
            "seconds per alert {seconds_per_alert} must be a non-negative number"
        )));
    }
    let hours = n_labeled as f64 * seconds_per_alert / 3600.0;
    Ok((hours * 10.0).round() / 10.0)
}

/// `fused_id,cwe,file,line,verdict,n_tools,tools,provenance`
pub fn fused_csv(fused: &[FusedAlert]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "fused_id", "cwe", "file", "line", "verdict", "n_tools", "tools", "provenance",
    ])
    .unwrap();
    for fa in fused {
        let tools = fa.tools();
        w.write_record([
            fa.fused_id.to_string(),
            fa.cwe.to_string(),
            fa.filepath.clone(),
            fa.line.to_string(),
            fa.verdict.to_string(),
            tools.len().to_string(),
            tools.join(";"),
            fa.provenance_summary().to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn alert(id: u64, tool: &str, checker: &str, file: &str, line: u32) -> RawAlert {
        RawAlert {
            alert_id: id,
            ..RawAlert::new(tool, checker, file, line)
        }
    }

    fn fa(cwe: u32, file: &str, line: u32) -> FusedAlert {
        FusedAlert {
            fused_id: 0,
            cwe,
            filepath: file.into(),
            line,
            contributors: vec![Contributor {
                tool: "A".into(),
                checker: "x".into(),
                alert_id: 0,
                provenance: Provenance::Known,
            }],
            verdict: Verdict::Unknown,
        }
    }

    fn span(file: &str, name: &str, s: u32, e: u32, pol: Polarity, cwe: u32) -> FunctionSpan {
        FunctionSpan {
            filepath: file.into(),
            function_name: name.into(),
            start_line: s,
            end_line: e,
            polarity: pol,
            cwe: Some(cwe),
        }
    }

    fn flaw(file: &str, line: u32, cwe: u32) -> FlawRecord {
        FlawRecord {
            filepath: file.into(),
            line,
            cwe,
        }
    }

    #[test]
    fn two_tools_same_line_fuse() {
        let alerts = [alert(0, "A", "a1", "f.c", 10), alert(1, "B", "b1", "f.c", 10)];
        let maps = [CheckerMapping::known("A", "a1", 121), CheckerMapping::known("B", "b1", 121)];
        let out = fuse(&alerts, &maps);
        assert_eq!(out.fused.len(), 1);
        assert_eq!(out.fused[0].contributors.len(), 2);
        assert_eq!(out.fused[0].tools(), vec!["A", "B"]);
        assert_eq!(out.excluded, 0);
    }

    #[test]
    fn unmapped_alert_excluded() {
        let out = fuse(&[alert(0, "A", "zz", "f.c", 1)], &[]);
        assert!(out.fused.is_empty());
        assert_eq!(out.excluded, 1);
    }

    #[test]
    fn multi_cwe_checker_expands() {
        let alerts = [alert(0, "A", "a1", "f.c", 10)];
        let maps = [CheckerMapping::known("A", "a1", 121), CheckerMapping::known("A", "a1", 122)];
        let out = fuse(&alerts, &maps);
        // Brute-force expansion over alert × mapping pairs.
        let mut expected: BTreeSet<(u32, String, u32)> = BTreeSet::new();
        for a in &alerts {
            for m in &maps {
                if m.tool == a.tool && m.checker == a.checker {
                    expected.insert((m.cwe, a.filepath.clone(), a.line));
                }
            }
        }
        let got: BTreeSet<_> = out
            .fused
            .iter()
            .map(|f| (f.cwe, f.filepath.clone(), f.line))
            .collect();
        assert_eq!(got, expected);
        assert_eq!(out.fused.len(), 2);
    }

    #[test]
    fn known_provenance_wins() {
        let mut spec = CheckerMapping::known("A", "a1", 121);
        spec.provenance = Provenance::Speculative;
        let out = fuse(
            &[alert(0, "A", "a1", "f.c", 1)],
            &[spec, CheckerMapping::known("A", "a1", 121)],
        );
        assert_eq!(out.fused[0].contributors[0].provenance, Provenance::Known);
        assert_eq!(out.fused[0].provenance_summary(), "known");
    }

    fn truth() -> GroundTruth {
        GroundTruth::new(
            &[flaw("f.c", 42, 121), flaw("f.c", 8, 121)],
            &[
                span("f.c", "goodG2B", 12, 20, Polarity::Good, 121),
                span("f.c", "CWE121_bad", 3, 9, Polarity::Bad, 121),
            ],
        )
    }

    #[test]
    fn verdict_rules() {
        let t = truth();
        assert_eq!(derive_verdict(&fa(121, "f.c", 42), &t), Verdict::True);
        assert_eq!(derive_verdict(&fa(121, "f.c", 15), &t), Verdict::False);
        assert_eq!(derive_verdict(&fa(121, "f.c", 7), &t), Verdict::Unknown);
        // Other CWE inside a GOOD span: no determination.
        assert_eq!(derive_verdict(&fa(122, "f.c", 15), &t), Verdict::Unknown);
    }

    #[test]
    fn flaw_rule_takes_precedence() {
        let t = GroundTruth::new(
            &[flaw("f.c", 15, 121)],
            &[span("f.c", "good", 12, 20, Polarity::Good, 121)],
        );
        assert_eq!(derive_verdict(&fa(121, "f.c", 15), &t), Verdict::True);
    }

    #[test]
    fn label_all_tallies() {
        let (_, stats) = label_all(Vec::new(), &truth());
        assert_eq!(stats, LabelStats::default());
        let (labeled, stats) = label_all(
            vec![fa(121, "f.c", 42), fa(121, "f.c", 15), fa(121, "f.c", 7)],
            &truth(),
        );
        assert_eq!((stats.tp_count, stats.fp_count, stats.unknown_count), (1, 1, 1));
        assert_eq!(stats.total(), labeled.len());
    }

    #[test]
    fn manual_cost() {
        assert_eq!(estimate_manual_cost(0, SECONDS_PER_MANUAL_VERDICT).unwrap(), 0.0);
        assert_eq!(estimate_manual_cost(1000, SECONDS_PER_MANUAL_VERDICT).unwrap(), 32.5);
        assert_eq!(estimate_manual_cost(10_000, SECONDS_PER_MANUAL_VERDICT).unwrap(), 325.0);
        assert!(estimate_manual_cost(-1, SECONDS_PER_MANUAL_VERDICT).is_err());
    }

    #[test]
    fn csv_export_columns() {
        let alerts = [alert(0, "A", "a1", "f.c", 10), alert(1, "B", "b1", "f.c", 10)];
        let mut spec = CheckerMapping::known("B", "b1", 121);
        spec.provenance = Provenance::Speculative;
        let out = fuse(&alerts, &[CheckerMapping::known("A", "a1", 121), spec]);
        let csv = fused_csv(&out.fused);
        assert_eq!(
            csv,
            "fused_id,cwe,file,line,verdict,n_tools,tools,provenance\n0,121,f.c,10,Unknown,2,A;B,mixed\n"
        );
    }

    fn arb_alerts() -> impl Strategy<Value = Vec<RawAlert>> {
        proptest::collection::vec((0u8..3, 0u8..4, 0u8..3, 1u32..6), 0..40).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (t, c, f, l))| {
                    alert(i as u64, &format!("T{t}"), &format!("c{c}"), &format!("f{f}.c"), l)
                })
                .collect()
        })
    }

    fn test_mappings() -> Vec<CheckerMapping> {
        let mut maps = Vec::new();
        for t in 0..3 {
            for c in 0..3 {
                maps.push(CheckerMapping::known(&format!("T{t}"), &format!("c{c}"), 100 + c));
            }
        }
        maps.push(CheckerMapping::known("T0", "c0", 101));
        maps
    }

    proptest! {
        #[test]
        fn fuse_is_permutation_invariant(alerts in arb_alerts(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let maps = test_mappings();
            let mut shuffled = alerts.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(fuse(&alerts, &maps), fuse(&shuffled, &maps));
        }

        #[test]
        fn fuse_is_idempotent_on_keys(alerts in arb_alerts()) {
            let first = fuse(&alerts, &test_mappings()).fused;
            let raw: Vec<RawAlert> = first.iter().enumerate()
                .map(|(i, f)| alert(i as u64, "fused", &format!("CWE-{}", f.cwe), &f.filepath, f.line))
                .collect();
            let maps: Vec<CheckerMapping> = first.iter()
                .map(|f| CheckerMapping::known("fused", &format!("CWE-{}", f.cwe), f.cwe))
                .collect();
            let second = fuse(&raw, &maps).fused;
            let k1: Vec<_> = first.iter().map(|f| (f.cwe, &f.filepath, f.line)).collect();
            let k2: Vec<_> = second.iter().map(|f| (f.cwe, &f.filepath, f.line)).collect();
            prop_assert_eq!(k1, k2);
        }

        #[test]
        fn fused_keys_unique_and_verdicts_partition(alerts in arb_alerts()) {
            let out = fuse(&alerts, &test_mappings());
            let keys: BTreeSet<_> = out.fused.iter().map(|f| (f.cwe, &f.filepath, f.line)).collect();
            prop_assert_eq!(keys.len(), out.fused.len());
            prop_assert!(out.fused.iter().all(|f| !f.contributors.is_empty()));
            let t = GroundTruth::new(
                &[flaw("f0.c", 1, 100), flaw("f1.c", 2, 101)],
                &[span("f2.c", "good", 1, 3, Polarity::Good, 102)],
            );
            let n = out.fused.len();
            let (_, stats) = label_all(out.fused, &t);
            prop_assert_eq!(stats.total(), n);
        }
    }
}
