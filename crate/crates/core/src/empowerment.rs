//! Delay-aware empowerment: conditional mutual information between a unit's
//! option choice and its effect variable, averaged over lags with the learned
//! delay distribution as weights.
//!
//! Outcome tables are indexed `outcomes[l][o][y]`: lag slot `l`, option `o`,
//! outcome `y`. Values are in nats.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{Command, Direction};
use crate::rng::Rng;
use crate::scm::{cause_bits, ScmTau};
use crate::world::FactoredState;

const TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpowermentEstimate {
    pub value: f64,
    pub per_lag: Vec<f64>,
    pub variance: f64,
}

fn check_dist(p: &[f64], what: &str) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > TOL {
        return Err(Error::Invariant(format!("{what} does not sum to 1 (sum = {s})")));
    }
    Ok(())
}

fn check_inputs(policy: &[f64], outcomes: &[Vec<Vec<f64>>], weights: &[f64]) -> Result<()> {
    check_dist(policy, "policy")?;
    if weights.len() != outcomes.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} lags",
            weights.len(),
            outcomes.len()
        )));
    }
    check_dist(weights, "delay weights")?;
    for lag in outcomes {
        if lag.len() != policy.len() {
            return Err(Error::Dimension(format!(
                "{} option rows for {} options",
                lag.len(),
                policy.len()
            )));
        }
        for row in lag {
            check_dist(row, "outcome distribution")?;
        }
    }
    Ok(())
}

fn marginal(policy: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows.first().map_or(0, |r| r.len())];
    for (p, row) in policy.iter().zip(rows) {
        for (mi, &f) in m.iter_mut().zip(row) {
            *mi += p * f;
        }
    }
    m
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

/// Exact delay-weighted conditional mutual information.
pub fn empowerment_exact(policy: &[f64], outcomes: &[Vec<Vec<f64>>], weights: &[f64]) -> Result<EmpowermentEstimate> {
    check_inputs(policy, outcomes, weights)?;
    let per_lag: Vec<f64> = outcomes
        .iter()
        .map(|rows| {
            let m = marginal(policy, rows);
            let cond: f64 = policy.iter().zip(rows).map(|(p, r)| p * entropy(r)).sum();
            (entropy(&m) - cond).max(0.0)
        })
        .collect();
    let value = per_lag.iter().zip(weights).map(|(v, w)| v * w).sum();
    Ok(EmpowermentEstimate {
        value,
        per_lag,
        variance: 0.0,
    })
}

/// Per-option gain: delay-weighted KL between the option's outcome
/// distribution and the policy marginal. Its policy expectation is the
/// exact empowerment.
pub fn pointwise_gain(policy: &[f64], outcomes: &[Vec<Vec<f64>>], weights: &[f64]) -> Result<Vec<f64>> {
    check_inputs(policy, outcomes, weights)?;
    let mut gain = vec![0.0; policy.len()];
    for (rows, &w) in outcomes.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let m = marginal(policy, rows);
        for (g, row) in gain.iter_mut().zip(rows) {
            *g += w * kl(row, &m);
        }
    }
    Ok(gain)
}

fn sample(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &x) in p.iter().enumerate() {
        if x > 0.0 {
            acc += x;
            last = k;
            if u < acc {
                return k;
            }
        }
    }
    last
}

/// Monte-Carlo estimate with `samples` draws per lag. The marginal is
/// evaluated with log-sum-exp over options.
pub fn empowerment_mc(
    policy: &[f64],
    outcomes: &[Vec<Vec<f64>>],
    weights: &[f64],
    samples: usize,
    rng: &mut Rng,
) -> Result<EmpowermentEstimate> {
    check_inputs(policy, outcomes, weights)?;
    if samples == 0 {
        return Err(Error::Config("samples must be >= 1".into()));
    }
    let log_pi: Vec<f64> = policy.iter().map(|p| p.ln()).collect();
    let mut per_lag = Vec::with_capacity(outcomes.len());
    let mut variance = 0.0;
    for (rows, &w) in outcomes.iter().zip(weights) {
        if w == 0.0 {
            per_lag.push(0.0);
            continue;
        }
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..samples {
            let o = sample(policy, rng);
            let y = sample(&rows[o], rng);
            let terms: Vec<f64> = log_pi
                .iter()
                .zip(rows)
                .map(|(lp, r)| lp + r[y].ln())
                .filter(|x| x.is_finite())
                .collect();
            let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_marg = mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
            let x = rows[o][y].ln() - log_marg;
            sum += x;
            sq += x * x;
        }
        let n = samples as f64;
        let mean = sum / n;
        let var = if samples > 1 {
            ((sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        variance += w * w * var / n;
        per_lag.push(mean);
    }
    let value = per_lag.iter().zip(weights).map(|(v, w)| v * w).sum();
    Ok(EmpowermentEstimate {
        value,
        per_lag,
        variance,
    })
}

/// Cause vector seen by the structural models when `option` is chosen in `state`.
pub fn option_causes(state: &FactoredState, option: Command) -> u64 {
    match option {
        Command::Act(a) => cause_bits(state, Some(a)),
        Command::Achieve(g) => {
            let base = state.presence_mask();
            match g.dir {
                Direction::Up => base | 1 << g.var,
                Direction::Down => base & !(1 << g.var),
            }
        }
    }
}

/// Binary outcome tables (`[no increase, increase]`) of `effect` for each
/// option at each lag in `lags`.
pub fn option_outcomes(
    state: &FactoredState,
    effect: usize,
    options: &[Command],
    scms: &[ScmTau],
    lags: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let causes: Vec<u64> = options.iter().map(|&o| option_causes(state, o)).collect();
    lags.iter()
        .map(|&lag| {
            let scm = scms.iter().find(|s| s.lag == lag).ok_or(Error::MissingLag(lag))?;
            Ok(causes
                .iter()
                .map(|&x| {
                    let p = scm.prob_increase(effect, x);
                    vec![1.0 - p, p]
                })
                .collect())
        })
        .collect()
}

/// Scale `a` to zero mean and unit spread in place.
pub fn normalize_advantages(a: &mut [f64]) {
    if a.is_empty() {
        return;
    }
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let sd = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    a.iter_mut().for_each(|x| *x = (*x - mean) / (sd + 1e-6));
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `d log softmax(theta)[option] / d theta`.
pub fn grad_log_prob(theta: &[f64], option: usize) -> Vec<f64> {
    softmax(theta)
        .iter()
        .enumerate()
        .map(|(k, p)| if k == option { 1.0 - p } else { -p })
        .collect()
}

/// `theta += step * advantage * grad log pi(option)`.
pub fn advantage_update(theta: &mut [f64], option: usize, advantage: f64, step: f64) -> Result<()> {
    if option >= theta.len() {
        return Err(Error::Dimension(format!("option {option} of {}", theta.len())));
    }
    let grad = grad_log_prob(theta, option);
    for (t, g) in theta.iter_mut().zip(grad) {
        *t += step * advantage * g;
    }
    Ok(())
}

/// Softmax policy logits per abstract state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SoftmaxTable {
    n: usize,
    logits: HashMap<u64, Vec<f64>>,
}

impl SoftmaxTable {
    pub fn new(n: usize) -> Self {
        SoftmaxTable {
            n,
            logits: HashMap::new(),
        }
    }

    pub fn num_options(&self) -> usize {
        self.n
    }

    pub fn logits(&self, key: u64) -> Vec<f64> {
        self.logits.get(&key).cloned().unwrap_or_else(|| vec![0.0; self.n])
    }

    pub fn probs(&self, key: u64) -> Vec<f64> {
        match self.logits.get(&key) {
            Some(t) => softmax(t),
            None => vec![1.0 / self.n as f64; self.n],
        }
    }

    pub fn update(&mut self, key: u64, option: usize, advantage: f64, step: f64) -> Result<()> {
        let n = self.n;
        advantage_update(
            self.logits.entry(key).or_insert_with(|| vec![0.0; n]),
            option,
            advantage,
            step,
        )
    }

    /// Re-index columns after the option set changes. `map[new] = Some(old)`.
    pub fn remap(&mut self, map: &[Option<usize>]) {
        for row in self.logits.values_mut() {
            *row = map.iter().map(|o| o.map_or(0.0, |k| row[k])).collect();
        }
        self.n = map.len();
    }
}
