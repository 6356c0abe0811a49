//! L1-penalized logistic regression by cyclic coordinate descent.
//!
//! Columns are standardized before fitting and the weights are mapped back
//! to the original scale afterwards. The intercept is not penalized.

use serde::{Deserialize, Serialize};

use super::{log_loss, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoParams {
    pub penalty: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for LassoParams {
    fn default() -> Self {
        LassoParams {
            penalty: 0.01,
            tolerance: 1e-7,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub intercept: f64,
    /// Original-scale weights.
    pub weights: Vec<f64>,
    /// Population standard deviation per column; 0 for constant columns.
    pub scales: Vec<f64>,
}

impl LassoModel {
    pub fn score(&self, row: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.score(row))
    }

    /// Weights on the standardized scale.
    pub fn standardized_weights(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.scales).map(|(w, s)| w * s).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoTrace {
    pub sweeps: usize,
    pub converged: bool,
}

const RATE_FLOOR: f64 = 1e-6;

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

struct State<'a> {
    y: &'a [f64],
    scores: Vec<f64>,
    penalty: f64,
}

impl State<'_> {
    /// Newton step on one coordinate with an Armijo backtracking guard.
    /// `z == None` updates the intercept. Returns the applied change.
    fn step(&mut self, z: Option<&[f64]>, w: f64, penalty: f64) -> f64 {
        let n = self.y.len() as f64;
        let col = |i: usize| z.map_or(1.0, |c| c[i]);
        let (mut g, mut h) = (0.0, 0.0);
        for i in 0..self.y.len() {
            let p = sigmoid(self.scores[i]);
            let zi = col(i);
            g += (p - self.y[i]) * zi;
            h += p * (1.0 - p) * zi * zi;
        }
        g /= n;
        h = (h / n).max(1e-12);
        let target = soft_threshold(w - g / h, penalty / h);
        let d = target - w;
        if d == 0.0 {
            return 0.0;
        }
        let decrease = g * d + penalty * ((w + d).abs() - w.abs());
        let mut t = 1.0;
        for _ in 0..50 {
            let mut change = 0.0;
            for i in 0..self.y.len() {
                let s = self.scores[i];
                change += log_loss(s + t * d * col(i), self.y[i]) - log_loss(s, self.y[i]);
            }
            change = change / n + penalty * ((w + t * d).abs() - w.abs());
            if change <= 0.01 * t * decrease {
                for i in 0..self.y.len() {
                    self.scores[i] += t * d * col(i);
                }
                return t * d;
            }
            t *= 0.5;
        }
        0.0
    }
}

/// Fits on row-major `rows` with 0/1 targets `y`.
pub fn fit(rows: &[Vec<f64>], y: &[f64], params: &LassoParams) -> (LassoModel, LassoTrace) {
    let n = y.len();
    let p = rows.first().map_or(0, Vec::len);
    let nf = n as f64;

    let mut means = vec![0.0; p];
    let mut scales = vec![0.0; p];
    for j in 0..p {
        means[j] = rows.iter().map(|r| r[j]).sum::<f64>() / nf;
        let var = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / nf;
        scales[j] = var.sqrt();
    }
    let z: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            rows.iter()
                .map(|r| {
                    if scales[j] > 0.0 {
                        (r[j] - means[j]) / scales[j]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let rate = (y.iter().sum::<f64>() / nf).clamp(RATE_FLOOR, 1.0 - RATE_FLOOR);
    let mut b = (rate / (1.0 - rate)).ln();
    let mut w = vec![0.0; p];
    let single_label = y.iter().all(|&t| t == y[0]);
    let mut trace = LassoTrace {
        sweeps: 0,
        converged: true,
    };

    if !single_label {
        let mut state = State {
            y,
            scores: vec![b; n],
            penalty: params.penalty,
        };
        trace.converged = false;
        while trace.sweeps < params.max_sweeps {
            trace.sweeps += 1;
            let mut biggest = 0.0f64;
            let d = state.step(None, b, 0.0);
            b += d;
            biggest = biggest.max(d.abs());
            for j in 0..p {
                if scales[j] == 0.0 {
                    continue;
                }
                let d = state.step(Some(&z[j]), w[j], state.penalty);
                w[j] += d;
                biggest = biggest.max(d.abs());
            }
            if biggest < params.tolerance {
                trace.converged = true;
                break;
            }
        }
    }

    let mut weights = vec![0.0; p];
    let mut intercept = b;
    for j in 0..p {
        if scales[j] > 0.0 {
            weights[j] = w[j] / scales[j];
            intercept -= weights[j] * means[j];
        }
    }
    (
        LassoModel {
            intercept,
            weights,
            scales,
        },
        trace,
    )
}
