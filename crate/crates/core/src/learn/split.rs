//! Fused-alert sets for training and testing.
//!
//! `af_mapped` holds labeled fused alerts with a known-mapped contributor.
//! `af_pure` drops those sharing a line with any alert whose checker is
//! speculatively mapped under some configuration. The test set is a
//! stratified sample of `af_pure`; every training set excludes it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuse::FusedAlert;
use crate::mapping::{CheckerMapping, Direction, Provenance};

pub const THRESHOLD_GRID: [f64; 6] = [0.0, 5.0, 25.0, 50.0, 75.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeculativeConfig {
    pub threshold: f64,
    pub direction: Direction,
}

impl fmt::Display for SpeculativeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T={} {}", self.threshold, self.direction)
    }
}

/// Every threshold of [`THRESHOLD_GRID`] for forward, then backward.
pub fn default_grid() -> Vec<SpeculativeConfig> {
    [Direction::Forward, Direction::Backward]
        .into_iter()
        .flat_map(|direction| {
            THRESHOLD_GRID
                .into_iter()
                .map(move |threshold| SpeculativeConfig { threshold, direction })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            test_fraction: 0.30,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeculativeSet {
    pub config: SpeculativeConfig,
    pub ids: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub af_mapped: BTreeSet<u64>,
    pub af_pure: BTreeSet<u64>,
    pub af_test: BTreeSet<u64>,
    pub af_non_speculative: BTreeSet<u64>,
    pub af_speculative: Vec<SpeculativeSet>,
    /// Fused alerts left out of every set for lack of a verdict.
    pub unknown_count: usize,
    pub target_test_count: usize,
    pub achieved_fraction: f64,
    pub warnings: Vec<String>,
}

impl DatasetBundle {
    /// Checks the set relations every consumer relies on.
    pub fn check_hygiene(&self) -> Result<()> {
        let fail = |what: String| Err(Error::validation(format!("split hygiene: {what}")));
        if !self.af_test.is_subset(&self.af_pure) {
            return fail("test set is not drawn from af_pure".into());
        }
        if !self.af_pure.is_subset(&self.af_mapped) {
            return fail("af_pure is not inside af_mapped".into());
        }
        let expected: BTreeSet<u64> = self.af_mapped.difference(&self.af_test).copied().collect();
        if expected != self.af_non_speculative {
            return fail("af_non_speculative differs from af_mapped minus af_test".into());
        }
        for set in &self.af_speculative {
            if !set.ids.is_disjoint(&self.af_test) {
                return fail(format!("training set {} overlaps the test set", set.config));
            }
            if !self.af_non_speculative.is_subset(&set.ids) {
                return fail(format!("training set {} misses non-speculative alerts", set.config));
            }
        }
        Ok(())
    }

    pub fn training_set(&self, config: &SpeculativeConfig) -> Option<&BTreeSet<u64>> {
        self.af_speculative
            .iter()
            .find(|s| s.config == *config)
            .map(|s| &s.ids)
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor() as usize
}

/// Builds all sets from fused alerts carrying verdicts and contributor
/// provenance. `configs` pairs each (T, d) with its speculative mappings.
pub fn build_splits(
    fused: &[FusedAlert],
    configs: &[(SpeculativeConfig, Vec<CheckerMapping>)],
    spec: &SplitSpec,
) -> Result<DatasetBundle> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::validation(format!(
            "test_fraction {} is outside (0, 1)",
            spec.test_fraction
        )));
    }
    let ever_speculative: BTreeSet<(&str, &str)> = configs
        .iter()
        .flat_map(|(_, ms)| ms.iter())
        .filter(|m| m.provenance == Provenance::Speculative)
        .map(|m| (m.tool.as_str(), m.checker.as_str()))
        .collect();
    let tainted_lines: BTreeSet<(&str, u32)> = fused
        .iter()
        .filter(|fa| {
            fa.contributors
                .iter()
                .any(|c| ever_speculative.contains(&(c.tool.as_str(), c.checker.as_str())))
        })
        .map(|fa| (fa.filepath.as_str(), fa.line))
        .collect();

    let mut af_mapped = BTreeSet::new();
    let mut af_pure = BTreeSet::new();
    let mut strata: BTreeMap<(u8, u32), (usize, Vec<u64>)> = BTreeMap::new();
    let mut unknown_count = 0;
    for fa in fused {
        let Some(label) = fa.verdict.label() else {
            unknown_count += 1;
            continue;
        };
        if !fa.contributors.iter().any(|c| c.provenance == Provenance::Known) {
            continue;
        }
        af_mapped.insert(fa.fused_id);
        let stratum = strata.entry((label, fa.cwe)).or_default();
        stratum.0 += 1;
        if !tainted_lines.contains(&(fa.filepath.as_str(), fa.line)) {
            af_pure.insert(fa.fused_id);
            stratum.1.push(fa.fused_id);
        }
    }

    let target = round_half_up(spec.test_fraction * af_mapped.len() as f64);
    if target > af_pure.len() {
        return Err(Error::validation(format!(
            "test target of {target} alerts exceeds the {} labeled alerts in af_pure",
            af_pure.len()
        )));
    }

    let mut warnings = Vec::new();
    let mut quotas: Vec<((u8, u32), usize, f64, usize)> = Vec::new();
    for (&key, (size, pure)) in &strata {
        let exact = spec.test_fraction * *size as f64;
        let want = round_half_up(exact);
        let quota = want.min(pure.len());
        if quota < want {
            warnings.push(format!(
                "stratum (verdict={}, cwe={}) wants {want} test alerts but only {} are pure",
                if key.0 == 1 { "True" } else { "False" },
                key.1,
                pure.len()
            ));
        }
        quotas.push((key, quota, exact - exact.floor(), pure.len()));
    }

    let mut assigned: usize = quotas.iter().map(|q| q.1).sum();
    if assigned < target {
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(quotas[a].0.cmp(&quotas[b].0)));
        while assigned < target {
            for &k in &order {
                if assigned == target {
                    break;
                }
                if quotas[k].1 < quotas[k].3 {
                    quotas[k].1 += 1;
                    assigned += 1;
                }
            }
        }
    } else if assigned > target {
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| quotas[a].2.total_cmp(&quotas[b].2).then(quotas[a].0.cmp(&quotas[b].0)));
        while assigned > target {
            for &k in &order {
                if assigned == target {
                    break;
                }
                if quotas[k].1 > 0 {
                    quotas[k].1 -= 1;
                    assigned -= 1;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut af_test = BTreeSet::new();
    for (key, quota, _, _) in &quotas {
        let mut pool = strata[key].1.clone();
        pool.sort_unstable();
        pool.shuffle(&mut rng);
        af_test.extend(pool.into_iter().take(*quota));
    }

    let af_non_speculative: BTreeSet<u64> = af_mapped.difference(&af_test).copied().collect();
    let af_speculative = configs
        .iter()
        .map(|(config, mappings)| {
            let admitted: BTreeSet<(&str, &str, u32)> = mappings
                .iter()
                .filter(|m| m.provenance == Provenance::Speculative)
                .map(|m| (m.tool.as_str(), m.checker.as_str(), m.cwe))
                .collect();
            let mut ids = af_non_speculative.clone();
            ids.extend(
                fused
                    .iter()
                    .filter(|fa| fa.verdict.label().is_some() && !af_test.contains(&fa.fused_id))
                    .filter(|fa| {
                        fa.contributors.iter().any(|c| {
                            c.provenance == Provenance::Speculative
                                && admitted.contains(&(c.tool.as_str(), c.checker.as_str(), fa.cwe))
                        })
                    })
                    .map(|fa| fa.fused_id),
            );
            SpeculativeSet {
                config: *config,
                ids,
            }
        })
        .collect();

    let achieved_fraction = if af_mapped.is_empty() {
        0.0
    } else {
        af_test.len() as f64 / af_mapped.len() as f64
    };
    let bundle = DatasetBundle {
        af_mapped,
        af_pure,
        af_test,
        af_non_speculative,
        af_speculative,
        unknown_count,
        target_test_count: target,
        achieved_fraction,
        warnings,
    };
    bundle.check_hygiene()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuse::{Contributor, Verdict};

    fn alert(id: u64, cwe: u32, line: u32, contributors: &[(&str, &str, Provenance)], verdict: Verdict) -> FusedAlert {
        FusedAlert {
            fused_id: id,
            cwe,
            filepath: "f.c".into(),
            line,
            contributors: contributors
                .iter()
                .enumerate()
                .map(|(i, (t, c, p))| Contributor {
                    tool: t.to_string(),
                    checker: c.to_string(),
                    alert_id: id * 10 + i as u64,
                    provenance: *p,
                })
                .collect(),
            verdict,
        }
    }

    fn known(id: u64, line: u32, verdict: Verdict) -> FusedAlert {
        alert(id, 121, line, &[("A", "a1", Provenance::Known)], verdict)
    }

    fn spec_mapping(tool: &str, checker: &str, cwe: u32) -> CheckerMapping {
        CheckerMapping {
            provenance: Provenance::Speculative,
            ..CheckerMapping::known(tool, checker, cwe)
        }
    }

    #[test]
    fn rounding_by_stratum() {
        let fused: Vec<FusedAlert> = (0..10)
            .map(|i| known(i, i as u32 + 1, if i < 4 { Verdict::True } else { Verdict::False }))
            .collect();
        let b = build_splits(&fused, &[], &SplitSpec::new(3)).unwrap();
        let trues = b.af_test.iter().filter(|&&id| id < 4).count();
        assert_eq!(trues, 1);
        assert_eq!(b.af_test.len() - trues, 2);
        assert_eq!(b.af_pure, b.af_mapped);
        assert!(b.warnings.is_empty());
    }

    #[test]
    fn no_speculation_means_identical_training_sets() {
        let fused: Vec<FusedAlert> = (0..20).map(|i| known(i, i as u32 + 1, Verdict::False)).collect();
        let configs: Vec<_> = default_grid().into_iter().map(|c| (c, Vec::new())).collect();
        let b = build_splits(&fused, &configs, &SplitSpec::new(1)).unwrap();
        assert_eq!(b.af_speculative.len(), 12);
        assert!(b.af_speculative.iter().all(|s| s.ids == b.af_non_speculative));
    }

    #[test]
    fn speculative_line_taints_known_alert() {
        let fused = vec![
            known(0, 5, Verdict::True),
            alert(1, 457, 5, &[("B", "b1", Provenance::Speculative)], Verdict::False),
            known(2, 9, Verdict::True),
            known(3, 11, Verdict::False),
        ];
        let cfg = SpeculativeConfig {
            threshold: 50.0,
            direction: Direction::Forward,
        };
        let b = build_splits(&fused, &[(cfg, vec![spec_mapping("B", "b1", 457)])], &SplitSpec::new(1)).unwrap();
        assert!(b.af_mapped.contains(&0));
        assert!(!b.af_pure.contains(&0));
        assert!(!b.af_mapped.contains(&1));
        assert!(b.training_set(&cfg).unwrap().contains(&1));
    }

    #[test]
    fn unknown_verdicts_are_counted_not_used() {
        let mut fused: Vec<FusedAlert> = (0..10).map(|i| known(i, i as u32 + 1, Verdict::True)).collect();
        fused.push(known(10, 50, Verdict::Unknown));
        let b = build_splits(&fused, &[], &SplitSpec::new(1)).unwrap();
        assert_eq!(b.unknown_count, 1);
        assert!(!b.af_mapped.contains(&10));
    }

    #[test]
    fn unreachable_fraction_fails() {
        // Every known alert shares a line with a speculative alert.
        let mut fused = Vec::new();
        for i in 0..5u64 {
            fused.push(known(2 * i, i as u32, Verdict::True));
            fused.push(alert(2 * i + 1, 457, i as u32, &[("B", "b1", Provenance::Speculative)], Verdict::False));
        }
        let cfg = SpeculativeConfig {
            threshold: 0.0,
            direction: Direction::Backward,
        };
        let err = build_splits(&fused, &[(cfg, vec![spec_mapping("B", "b1", 457)])], &SplitSpec::new(1));
        assert!(err.is_err());
    }

    #[test]
    fn capped_stratum_warns_and_adjusts() {
        // cwe 121: 10 known alerts, only 1 pure; cwe 190: 10 pure.
        let mut fused = Vec::new();
        for i in 0..10u64 {
            fused.push(known(i, i as u32 + 1, Verdict::True));
        }
        for i in 1..10u64 {
            fused.push(alert(100 + i, 457, i as u32 + 1, &[("B", "b1", Provenance::Speculative)], Verdict::False));
        }
        for i in 0..10u64 {
            fused.push(alert(200 + i, 190, 100 + i as u32, &[("A", "a2", Provenance::Known)], Verdict::False));
        }
        let cfg = SpeculativeConfig {
            threshold: 0.0,
            direction: Direction::Forward,
        };
        let b = build_splits(&fused, &[(cfg, vec![spec_mapping("B", "b1", 457)])], &SplitSpec::new(1)).unwrap();
        assert_eq!(b.warnings.len(), 1);
        assert_eq!(b.af_test.len(), 6);
        assert_eq!(b.target_test_count, 6);
        assert!((b.achieved_fraction - 0.3).abs() < 1e-12);
    }
}
