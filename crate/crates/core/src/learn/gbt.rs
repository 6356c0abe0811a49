//! Gradient-boosted regression trees with logistic loss.
//!
//! Trees grow level by level with exact greedy splits over presorted
//! feature orders. Missing values (`NaN`) follow a learned default
//! direction. Categorical columns split one category against the rest.

use serde::{Deserialize, Serialize};

use super::encode::ColumnKind;
use super::{log_loss, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_samples_leaf: usize,
    /// Subtrees whose summed gain does not exceed this are pruned.
    pub min_split_gain: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            rounds: 200,
            max_depth: 4,
            learning_rate: 0.1,
            lambda: 1.0,
            min_samples_leaf: 5,
            min_split_gain: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    /// `x <= t` goes left.
    Threshold(f64),
    /// `x == code` goes left.
    Category(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        rule: SplitRule,
        default_left: bool,
        gain: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

fn goes_left(rule: SplitRule, default_left: bool, v: f64) -> bool {
    if v.is_nan() {
        return default_left;
    }
    match rule {
        SplitRule::Threshold(t) => v <= t,
        SplitRule::Category(c) => v == c,
    }
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    rule,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    i = if goes_left(*rule, *default_left, row[*feature]) {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl GbtModel {
    pub fn score(&self, row: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.score(row))
    }

    /// Summed split gain per feature index.
    pub fn gain_by_feature(&self, n_features: usize) -> Vec<f64> {
        let mut gains = vec![0.0; n_features];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, gain, .. } = n {
                    gains[*feature] += gain;
                }
            }
        }
        gains
    }

    pub fn split_count_by_feature(&self, n_features: usize) -> Vec<usize> {
        let mut counts = vec![0; n_features];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, .. } = n {
                    counts[*feature] += 1;
                }
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Stat {
    g: f64,
    h: f64,
    n: usize,
}

impl Stat {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn plus(self, o: Stat) -> Stat {
        Stat {
            g: self.g + o.g,
            h: self.h + o.h,
            n: self.n + o.n,
        }
    }

    fn minus(self, o: Stat) -> Stat {
        Stat {
            g: self.g - o.g,
            h: self.h - o.h,
            n: self.n - o.n,
        }
    }

    fn score(self, lambda: f64) -> f64 {
        self.g * self.g / (self.h + lambda)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    rule: SplitRule,
    default_left: bool,
    gain: f64,
    left: Stat,
    right: Stat,
}

#[derive(Debug, Clone)]
struct BuildNode {
    stat: Stat,
    depth: usize,
    split: Option<(Candidate, usize, usize)>,
}

struct Data<'a> {
    kinds: &'a [ColumnKind],
    /// Column-major values.
    x: Vec<Vec<f64>>,
    /// Per column, non-missing rows ordered by value then row index.
    sorted: Vec<Vec<usize>>,
    missing: Vec<Vec<usize>>,
    n_codes: Vec<usize>,
}

impl<'a> Data<'a> {
    fn new(kinds: &'a [ColumnKind], rows: &[Vec<f64>]) -> Self {
        let p = kinds.len();
        let mut x = vec![Vec::with_capacity(rows.len()); p];
        for r in rows {
            for (col, v) in x.iter_mut().zip(r) {
                col.push(*v);
            }
        }
        let mut sorted = Vec::with_capacity(p);
        let mut missing = Vec::with_capacity(p);
        let mut n_codes = Vec::with_capacity(p);
        for col in &x {
            let (mut present, absent): (Vec<usize>, Vec<usize>) =
                (0..col.len()).partition(|&i| !col[i].is_nan());
            present.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            let max_code = present.last().map_or(0.0, |&i| col[i].max(0.0));
            n_codes.push(max_code as usize + 1);
            sorted.push(present);
            missing.push(absent);
        }
        Data {
            kinds,
            x,
            sorted,
            missing,
            n_codes,
        }
    }
}

struct Grower<'a> {
    data: &'a Data<'a>,
    params: &'a GbtParams,
    g: &'a [f64],
    h: &'a [f64],
}

impl Grower<'_> {
    fn consider(&self, best: &mut Option<Candidate>, feature: usize, rule: SplitRule, left_present: Stat, miss: Stat, total: Stat) {
        let options: &[(bool, Stat)] = if miss.n == 0 {
            &[(true, left_present)]
        } else {
            &[(true, left_present.plus(miss)), (false, left_present)]
        };
        let lambda = self.params.lambda;
        for &(default_left, left) in options {
            let right = total.minus(left);
            if left.n < self.params.min_samples_leaf || right.n < self.params.min_samples_leaf {
                continue;
            }
            let gain = 0.5 * (left.score(lambda) + right.score(lambda) - total.score(lambda));
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                *best = Some(Candidate {
                    feature,
                    rule,
                    default_left,
                    gain,
                    left,
                    right,
                });
            }
        }
    }

    fn grow(&self) -> Tree {
        let n = self.g.len();
        let mut root = Stat::default();
        for i in 0..n {
            root.add(self.g[i], self.h[i]);
        }
        let mut nodes = vec![BuildNode {
            stat: root,
            depth: 0,
            split: None,
        }];
        let mut assign = vec![0usize; n];
        let mut frontier = vec![0usize];

        while !frontier.is_empty() {
            frontier.retain(|&nd| {
                nodes[nd].depth < self.params.max_depth
                    && nodes[nd].stat.n >= 2 * self.params.min_samples_leaf.max(1)
            });
            if frontier.is_empty() {
                break;
            }
            let mut slot = vec![usize::MAX; nodes.len()];
            for (k, &nd) in frontier.iter().enumerate() {
                slot[nd] = k;
            }
            let totals: Vec<Stat> = frontier.iter().map(|&nd| nodes[nd].stat).collect();
            let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];

            for f in 0..self.data.kinds.len() {
                let col = &self.data.x[f];
                let mut miss = vec![Stat::default(); frontier.len()];
                for &i in &self.data.missing[f] {
                    let s = slot[assign[i]];
                    if s != usize::MAX {
                        miss[s].add(self.g[i], self.h[i]);
                    }
                }
                match self.data.kinds[f] {
                    ColumnKind::Numeric => {
                        let mut acc = vec![(Stat::default(), 0.0f64); frontier.len()];
                        for &i in &self.data.sorted[f] {
                            let s = slot[assign[i]];
                            if s == usize::MAX {
                                continue;
                            }
                            let v = col[i];
                            let (left, last) = acc[s];
                            if left.n > 0 && v > last {
                                let mid = last / 2.0 + v / 2.0;
                                let t = if mid < v { mid } else { last };
                                self.consider(&mut best[s], f, SplitRule::Threshold(t), left, miss[s], totals[s]);
                            }
                            acc[s].0.add(self.g[i], self.h[i]);
                            acc[s].1 = v;
                        }
                        // Present values against missing ones.
                        for (s, &(present, last)) in acc.iter().enumerate() {
                            if present.n > 0 && miss[s].n > 0 {
                                self.consider(&mut best[s], f, SplitRule::Threshold(last), present, miss[s], totals[s]);
                            }
                        }
                    }
                    ColumnKind::Categorical => {
                        let codes = self.data.n_codes[f];
                        let mut acc = vec![vec![Stat::default(); codes]; frontier.len()];
                        for &i in &self.data.sorted[f] {
                            let s = slot[assign[i]];
                            if s != usize::MAX {
                                acc[s][col[i] as usize].add(self.g[i], self.h[i]);
                            }
                        }
                        for (s, per_code) in acc.iter().enumerate() {
                            for (c, st) in per_code.iter().enumerate() {
                                if st.n > 0 {
                                    self.consider(&mut best[s], f, SplitRule::Category(c as f64), *st, miss[s], totals[s]);
                                }
                            }
                        }
                    }
                }
            }

            let mut next = Vec::new();
            for (k, &nd) in frontier.iter().enumerate() {
                let Some(c) = best[k] else { continue };
                let depth = nodes[nd].depth + 1;
                let l = nodes.len();
                nodes.push(BuildNode {
                    stat: c.left,
                    depth,
                    split: None,
                });
                nodes.push(BuildNode {
                    stat: c.right,
                    depth,
                    split: None,
                });
                nodes[nd].split = Some((c, l, l + 1));
                next.push(l);
                next.push(l + 1);
            }
            for (i, a) in assign.iter_mut().enumerate() {
                if let Some((c, l, r)) = nodes[*a].split {
                    if slot.get(*a).is_some_and(|&s| s != usize::MAX) {
                        *a = if goes_left(c.rule, c.default_left, self.data.x[c.feature][i]) {
                            l
                        } else {
                            r
                        };
                    }
                }
            }
            frontier = next;
        }

        prune(&mut nodes, 0, self.params.min_split_gain);
        let mut out = Vec::new();
        emit(&nodes, 0, self.params.lambda, &mut out);
        Tree { nodes: out }
    }
}

// Post-order: a subtree whose total gain does not exceed `min_gain` collapses.
fn prune(nodes: &mut [BuildNode], idx: usize, min_gain: f64) -> f64 {
    let Some((c, l, r)) = nodes[idx].split else {
        return 0.0;
    };
    let total = c.gain + prune(nodes, l, min_gain) + prune(nodes, r, min_gain);
    if total <= min_gain {
        nodes[idx].split = None;
        return 0.0;
    }
    total
}

fn emit(nodes: &[BuildNode], idx: usize, lambda: f64, out: &mut Vec<Node>) -> usize {
    let at = out.len();
    match nodes[idx].split {
        None => {
            let s = nodes[idx].stat;
            out.push(Node::Leaf {
                value: -s.g / (s.h + lambda),
            });
        }
        Some((c, l, r)) => {
            out.push(Node::Leaf { value: 0.0 });
            let left = emit(nodes, l, lambda, out);
            let right = emit(nodes, r, lambda, out);
            out[at] = Node::Split {
                feature: c.feature,
                rule: c.rule,
                default_left: c.default_left,
                gain: c.gain,
                left,
                right,
            };
        }
    }
    at
}

fn mean_loss(scores: &[f64], y: &[f64]) -> f64 {
    scores.iter().zip(y).map(|(&s, &t)| log_loss(s, t)).sum::<f64>() / y.len() as f64
}

/// Fits on row-major `rows` with 0/1 targets `y` holding both labels.
/// Returns the model and the training loss before and after each round.
pub fn fit(kinds: &[ColumnKind], rows: &[Vec<f64>], y: &[f64], params: &GbtParams) -> (GbtModel, Vec<f64>) {
    let n = y.len();
    let rate = y.iter().sum::<f64>() / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();
    let data = Data::new(kinds, rows);
    let mut scores = vec![base_score; n];
    let mut loss = mean_loss(&scores, y);
    let mut history = vec![loss];
    let mut trees = Vec::new();
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut trial = vec![0.0; n];

    for _ in 0..params.rounds {
        for i in 0..n {
            let p = sigmoid(scores[i]);
            g[i] = p - y[i];
            h[i] = p * (1.0 - p);
        }
        let mut tree = Grower {
            data: &data,
            params,
            g: &g,
            h: &h,
        }
        .grow();
        let step: Vec<f64> = rows.iter().map(|r| tree.predict(r)).collect();

        let mut factor = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            for i in 0..n {
                trial[i] = scores[i] + params.learning_rate * factor * step[i];
            }
            let l = mean_loss(&trial, y);
            if l <= loss {
                accepted = Some(l);
                break;
            }
            factor *= 0.5;
        }
        let Some(l) = accepted else { break };
        if factor != 1.0 {
            tree.scale_leaves(factor);
        }
        std::mem::swap(&mut scores, &mut trial);
        loss = l;
        history.push(loss);
        trees.push(tree);
    }

    (
        GbtModel {
            base_score,
            learning_rate: params.learning_rate,
            trees,
        },
        history,
    )
}
