//! Per-effect categorical delay distributions learned from the per-lag
//! structural models.
//!
//! Each effect `i` has logits `beta[i][tau - 1]`; the delay distribution is
//! their softmax over the supported lags. Training samples joint delay
//! hypotheses, weights them by how strongly each hypothesised lag's model
//! believes in a causal edge, and follows the resulting score-function
//! gradient.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scm::{sigmoid, Edge, ScmTau};
use crate::world::TaskSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayLogits {
    /// `beta[i][tau - 1]`.
    pub beta: Vec<Vec<f64>>,
    /// `support[tau - 1]`: whether lag `tau` can carry mass.
    pub support: Vec<bool>,
}

/// One sampled lag per effect variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelayHypothesis(pub Vec<usize>);

fn softmax_masked(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let mx = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { (x - mx).exp() } else { 0.0 })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

impl DelayLogits {
    /// Uniform over `1..=tau_max`.
    pub fn uniform(num_vars: usize, tau_max: usize) -> DelayLogits {
        DelayLogits {
            beta: vec![vec![0.0; tau_max]; num_vars],
            support: vec![true; tau_max],
        }
    }

    /// Near-deterministic logits putting (almost) all mass on `lags[i]`.
    pub fn point_mass(lags: &[usize], tau_max: usize, logit: f64) -> Result<DelayLogits> {
        let mut d = DelayLogits::uniform(lags.len(), tau_max);
        for (row, &lag) in d.beta.iter_mut().zip(lags) {
            if lag == 0 || lag > tau_max {
                return Err(Error::Config(format!("lag {lag} outside 1..={tau_max}")));
            }
            row.iter_mut().for_each(|x| *x = -logit);
            row[lag - 1] = logit;
        }
        Ok(d)
    }

    /// Keep only lags that are multiples of `kappa`.
    pub fn restrict_support(&self, kappa: usize) -> Result<DelayLogits> {
        let tau_max = self.tau_max();
        if kappa == 0 || kappa > tau_max {
            return Err(Error::Config(format!("kappa {kappa} must be in 1..={tau_max}")));
        }
        let mut out = self.clone();
        for (k, s) in out.support.iter_mut().enumerate() {
            *s = *s && (k + 1) % kappa == 0;
        }
        if !out.support.iter().any(|&s| s) {
            return Err(Error::Config(format!("kappa {kappa} leaves no supported lag")));
        }
        Ok(out)
    }

    pub fn tau_max(&self) -> usize {
        self.support.len()
    }

    pub fn num_vars(&self) -> usize {
        self.beta.len()
    }

    pub fn support_lags(&self) -> Vec<usize> {
        (1..=self.tau_max()).filter(|&t| self.support[t - 1]).collect()
    }

    /// Probability of each lag `1..=tau_max` for effect `i`.
    pub fn distribution(&self, i: usize) -> Vec<f64> {
        softmax_masked(&self.beta[i], &self.support)
    }

    pub fn distributions(&self) -> Vec<Vec<f64>> {
        (0..self.num_vars()).map(|i| self.distribution(i)).collect()
    }

    /// Draw a lag for effect `i`.
    pub fn sample(&self, i: usize, rng: &mut Rng) -> usize {
        sample_index(&self.distribution(i), rng) + 1
    }

    pub fn sample_hypothesis(&self, rng: &mut Rng) -> DelayHypothesis {
        DelayHypothesis((0..self.num_vars()).map(|i| self.sample(i, rng)).collect())
    }
}

fn sample_index(p: &[f64], rng: &mut Rng) -> usize {
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

/// Per effect, the union of accepted causes across lags; effects with none
/// fall back to every cause except themselves.
pub fn candidate_causes(edges: &[Edge], num_vars: usize, num_causes: usize) -> Vec<u64> {
    let mut c = vec![0u64; num_vars];
    for e in edges {
        c[e.effect] |= 1 << e.cause;
    }
    let all = if num_causes >= 64 { u64::MAX } else { (1u64 << num_causes) - 1 };
    c.iter()
        .enumerate()
        .map(|(i, &m)| if m == 0 { all & !(1 << i) } else { m })
        .collect()
}

/// `log_ev[i][tau - 1]`: best log edge probability into effect `i` at lag `tau`
/// among its candidate causes. Unsupported lags hold `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayEvidence {
    pub log_ev: Vec<Vec<f64>>,
}

impl DelayEvidence {
    pub fn from_scms(scms: &[ScmTau], candidates: &[u64], support: &[usize], tau_max: usize) -> Result<Self> {
        let m = candidates.len();
        let mut log_ev = vec![vec![f64::NEG_INFINITY; tau_max]; m];
        for &lag in support {
            let scm = scms
                .iter()
                .find(|s| s.lag == lag)
                .ok_or(Error::MissingLag(lag))?;
            if scm.num_vars != m {
                return Err(Error::Dimension(format!(
                    "model has {} effects, expected {m}",
                    scm.num_vars
                )));
            }
            for (i, &cand) in candidates.iter().enumerate() {
                let best = (0..scm.num_causes)
                    .filter(|&j| cand >> j & 1 == 1)
                    .map(|j| sigmoid(scm.eta[i][j]))
                    .fold(0.0, f64::max);
                log_ev[i][lag - 1] = best.max(1e-300).ln();
            }
        }
        Ok(DelayEvidence { log_ev })
    }
}

/// Per-effect log-likelihood of a joint delay hypothesis.
pub fn hypothesis_loglik(h: &DelayHypothesis, ev: &DelayEvidence) -> Result<Vec<f64>> {
    if h.0.len() != ev.log_ev.len() {
        return Err(Error::Dimension(format!(
            "hypothesis has {} lags for {} effects",
            h.0.len(),
            ev.log_ev.len()
        )));
    }
    h.0.iter()
        .zip(&ev.log_ev)
        .map(|(&lag, row)| {
            if lag == 0 || lag > row.len() || row[lag - 1] == f64::NEG_INFINITY {
                Err(Error::MissingLag(lag))
            } else {
                Ok(row[lag - 1])
            }
        })
        .collect()
}

/// Gradient of `-l1 * sum s(1-s) + l2 * sum s`, `s = sigmoid(beta)`.
pub fn regularizer_grad(beta: &[Vec<f64>], l1: f64, l2: f64) -> Vec<Vec<f64>> {
    beta.iter()
        .map(|row| {
            row.iter()
                .map(|&b| {
                    let s = sigmoid(b);
                    let ds = s * (1.0 - s);
                    -l1 * ds * (1.0 - 2.0 * s) + l2 * ds
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayConfig {
    /// Hypotheses sampled per iteration.
    pub k: usize,
    pub iterations: usize,
    pub lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub logit_clip: f64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        DelayConfig {
            k: 16,
            iterations: 300,
            lr: 0.05,
            lambda1: 0.05,
            lambda2: 0.05,
            logit_clip: 10.0,
        }
    }
}

/// Mean of `weights[k] * (onehot(lags[k]) - probs)`: the score-function
/// estimate of the gradient of `sum_t probs[t] * w(t)` wrt the softmax logits.
pub fn score_grad(probs: &[f64], lags: &[usize], weights: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; probs.len()];
    if lags.is_empty() {
        return grad;
    }
    for (&h, &w) in lags.iter().zip(weights) {
        for (t, g) in grad.iter_mut().enumerate() {
            let hit = if h == t + 1 { 1.0 } else { 0.0 };
            *g += w * (hit - probs[t]);
        }
    }
    let k = lags.len() as f64;
    grad.iter_mut().for_each(|g| *g /= k);
    grad
}

/// One gradient-ascent step on `logits`.
pub fn delay_step(logits: &mut DelayLogits, ev: &DelayEvidence, cfg: &DelayConfig, rng: &mut Rng) -> Result<()> {
    let m = logits.num_vars();
    if cfg.k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let probs = logits.distributions();
    let hyps: Vec<DelayHypothesis> = (0..cfg.k).map(|_| logits.sample_hypothesis(rng)).collect();
    let lls = hyps
        .iter()
        .map(|h| hypothesis_loglik(h, ev))
        .collect::<Result<Vec<_>>>()?;
    let reg = regularizer_grad(&logits.beta, cfg.lambda1, cfg.lambda2);
    for i in 0..m {
        let mx = lls.iter().map(|l| l[i]).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lls.iter().map(|l| (l[i] - mx).exp()).collect();
        let z: f64 = w.iter().sum();
        let lags: Vec<usize> = hyps.iter().map(|h| h.0[i]).collect();
        let weights: Vec<f64> = w.iter().map(|x| x * cfg.k as f64 / z).collect();
        let grad = score_grad(&probs[i], &lags, &weights);
        for t in 0..logits.tau_max() {
            if logits.support[t] {
                let b = &mut logits.beta[i][t];
                *b = (*b + cfg.lr * (grad[t] - reg[i][t])).clamp(-cfg.logit_clip, cfg.logit_clip);
            }
        }
    }
    Ok(())
}

pub fn train_delay(logits: &mut DelayLogits, ev: &DelayEvidence, cfg: &DelayConfig, rng: &mut Rng) -> Result<()> {
    for _ in 0..cfg.iterations {
        delay_step(logits, ev, cfg, rng)?;
    }
    Ok(())
}

/// Write the distributions as CSV with columns `effect,tau,probability`.
pub fn write_beta_csv<W: Write>(mut w: W, spec: &TaskSpec, logits: &DelayLogits) -> Result<()> {
    writeln!(w, "effect,tau,probability")?;
    for (i, p) in logits.distributions().iter().enumerate() {
        for (t, x) in p.iter().enumerate() {
            writeln!(w, "{},{},{:.6}", spec.variables[i], t + 1, x)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn flat_evidence(m: usize, rows: &[Vec<f64>]) -> DelayEvidence {
        assert_eq!(rows.len(), m);
        DelayEvidence {
            log_ev: rows.iter().map(|r| r.iter().map(|p: &f64| p.ln()).collect()).collect(),
        }
    }

    #[test]
    fn identical_evidence_keeps_uniform() {
        let ev = flat_evidence(1, &[vec![0.7; 4]]);
        let mut d = DelayLogits::uniform(1, 4);
        train_delay(&mut d, &ev, &DelayConfig::default(), &mut seeded(5)).unwrap();
        for p in d.distribution(0) {
            assert!((p - 0.25).abs() < 0.05, "{p}");
        }
    }

    #[test]
    fn mass_moves_towards_strong_lag() {
        let ev = flat_evidence(1, &[vec![0.05, 0.99, 0.05, 0.05]]);
        let mut d = DelayLogits::uniform(1, 4);
        train_delay(&mut d, &ev, &DelayConfig::default(), &mut seeded(5)).unwrap();
        let p = d.distribution(0);
        assert!(p[1] > 0.5, "{p:?}");
    }

    #[test]
    fn restricted_support_has_zero_mass_off_grid() {
        let d = DelayLogits::uniform(2, 8).restrict_support(4).unwrap();
        assert_eq!(d.support_lags(), vec![4, 8]);
        let p = d.distribution(1);
        assert_eq!(p[0], 0.0);
        assert!((p[3] - 0.5).abs() < 1e-12 && (p[7] - 0.5).abs() < 1e-12);
        assert!(DelayLogits::uniform(1, 4).restrict_support(5).is_err());
        assert!(DelayLogits::uniform(1, 4).restrict_support(0).is_err());
    }

    #[test]
    fn missing_lag_is_an_error() {
        let ev = DelayEvidence {
            log_ev: vec![vec![0.0, f64::NEG_INFINITY]],
        };
        assert!(matches!(
            hypothesis_loglik(&DelayHypothesis(vec![2]), &ev),
            Err(Error::MissingLag(2))
        ));
        assert!(DelayEvidence::from_scms(&[], &[1], &[1], 2).is_err());
    }

    #[test]
    fn candidates_fall_back_to_all_but_self() {
        let e = Edge {
            cause: 2,
            effect: 0,
            lag: 1,
            prob: 0.9,
        };
        assert_eq!(candidate_causes(&[e], 2, 3), vec![0b100, 0b101]);
    }
}
