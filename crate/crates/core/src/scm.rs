//! Lag-indexed structural causal models over binarized causes.
//!
//! Causes are the presence bits of every variable plus a one-hot of the action
//! taken, packed into a `u64`. For each lag there is one [`ScmTau`] holding
//! Bernoulli edge logits and Laplace-smoothed generating tables.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::Command;
use crate::rng::Rng;
use crate::world::{ActionId, FactoredState, TaskSpec};

/// Score-function gradient for one effect row of logits.
///
/// `rows[k]` is the parent mask of sample `k` and `scores[k]` its score. Each
/// sample is baselined by the mean score of the other samples, which keeps the
/// estimate unbiased. Masked (`-inf`) columns get a zero gradient.
pub fn reinforce_grad(eta_row: &[f64], rows: &[u64], scores: &[f64]) -> Vec<f64> {
    let n = rows.len();
    if n < 2 {
        return vec![0.0; eta_row.len()];
    }
    let total: f64 = scores.iter().sum();
    let adv: Vec<f64> = scores
        .iter()
        .map(|&s| s - (total - s) / (n - 1) as f64)
        .collect();
    eta_row
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            if e == f64::NEG_INFINITY {
                return 0.0;
            }
            let p = sigmoid(e);
            rows.iter()
                .zip(&adv)
                .map(|(r, a)| a * ((r >> j & 1) as f64 - p))
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// One row per effect variable; bit `j` set means cause `j` is a parent.
pub type Graph = Vec<u64>;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Pack presence bits and the action one-hot into one cause vector.
pub fn cause_bits(state: &FactoredState, action: Option<ActionId>) -> u64 {
    let m = state.len();
    state.presence_mask() | action.map_or(0, |a| 1u64 << (m + a))
}

/// Human-readable name of cause feature `j`.
pub fn cause_name(spec: &TaskSpec, j: usize) -> String {
    let m = spec.num_vars();
    if j < m {
        spec.variables[j].clone()
    } else {
        format!("do:{}", spec.actions[j - m])
    }
}

/// What happened at the intervention point and the states that followed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub target: Command,
    pub cause_state: FactoredState,
    pub action: ActionId,
    /// `trace[u - 1]` is the state `u` steps after `action`.
    pub trace: Vec<FactoredState>,
}

impl InterventionRecord {
    pub fn causes(&self) -> u64 {
        cause_bits(&self.cause_state, Some(self.action))
    }

    /// Variables that increased somewhere in steps `(lag - stride, lag]`, or
    /// `None` when the trace is too short to tell.
    pub fn increased(&self, lag: usize, stride: usize) -> Option<u64> {
        if lag == 0 || self.trace.len() < lag {
            return None;
        }
        let lo = lag.saturating_sub(stride) + 1;
        let mut bits = 0u64;
        for u in lo..=lag {
            let prev = if u == 1 { &self.cause_state } else { &self.trace[u - 2] };
            let cur = &self.trace[u - 1];
            for i in 0..cur.len() {
                if cur.get(i) > prev.get(i) {
                    bits |= 1 << i;
                }
            }
        }
        Some(bits)
    }
}

/// Deduplicated `(causes, effects)` pairs observed at one lag.
#[derive(Clone, Debug, PartialEq)]
pub struct LagData {
    pub lag: usize,
    pub patterns: Vec<(u64, u64, u32)>,
    pub n: u32,
}

impl LagData {
    pub fn from_pairs(lag: usize, pairs: impl IntoIterator<Item = (u64, u64)>) -> LagData {
        let mut agg: BTreeMap<(u64, u64), u32> = BTreeMap::new();
        for p in pairs {
            *agg.entry(p).or_insert(0) += 1;
        }
        let n = agg.values().sum();
        LagData {
            lag,
            patterns: agg.into_iter().map(|((x, y), c)| (x, y, c)).collect(),
            n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Training data for every supported lag.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_vars: usize,
    pub num_actions: usize,
    pub stride: usize,
    pub lags: Vec<LagData>,
    /// Per effect: records in which it increased at any supported lag.
    pub events: Vec<f64>,
}

impl Dataset {
    pub fn build(
        records: &[InterventionRecord],
        num_vars: usize,
        num_actions: usize,
        support: &[usize],
        stride: usize,
    ) -> Dataset {
        let mut events = vec![0.0; num_vars];
        let lags = support
            .iter()
            .map(|&lag| {
                LagData::from_pairs(
                    lag,
                    records
                        .iter()
                        .filter_map(|r| r.increased(lag, stride).map(|y| (r.causes(), y))),
                )
            })
            .collect();
        for r in records {
            let any = support
                .iter()
                .filter_map(|&lag| r.increased(lag, stride))
                .fold(0, |a, b| a | b);
            for (i, e) in events.iter_mut().enumerate() {
                if any >> i & 1 == 1 {
                    *e += 1.0;
                }
            }
        }
        Dataset {
            num_vars,
            num_actions,
            stride,
            lags,
            events,
        }
    }

    pub fn lag(&self, lag: usize) -> Option<&LagData> {
        self.lags.iter().find(|d| d.lag == lag)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScmConfig {
    /// Graphs sampled per gradient step.
    pub n_graphs: usize,
    pub lr: f64,
    pub updates: usize,
    /// Laplace pseudo-count.
    pub alpha: f64,
    /// Edges with probability strictly above this are accepted.
    pub threshold: f64,
    /// Score cost per parent, in nats per effect event.
    pub edge_penalty: f64,
    pub logit_clip: f64,
}

impl Default for ScmConfig {
    fn default() -> Self {
        ScmConfig {
            n_graphs: 8,
            lr: 0.1,
            updates: 200,
            alpha: 1.0,
            threshold: 0.5,
            edge_penalty: 0.3,
            logit_clip: 10.0,
        }
    }
}

/// Conditional probability table of "effect increased" given its parents.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratingTable {
    pub parents: u64,
    pub alpha: f64,
    counts: HashMap<u64, [u32; 2]>,
}

impl GeneratingTable {
    pub fn fit(data: &LagData, effect: usize, parents: u64, alpha: f64) -> Self {
        GeneratingTable {
            parents,
            alpha,
            counts: group_counts(data, effect, parents),
        }
    }

    /// P(effect increases | causes).
    pub fn prob(&self, causes: u64) -> f64 {
        let [n0, n1] = self
            .counts
            .get(&(causes & self.parents))
            .copied()
            .unwrap_or([0, 0]);
        (n1 as f64 + self.alpha) / ((n0 + n1) as f64 + 2.0 * self.alpha)
    }
}

fn group_counts(data: &LagData, effect: usize, parents: u64) -> HashMap<u64, [u32; 2]> {
    let mut counts: HashMap<u64, [u32; 2]> = HashMap::new();
    for &(x, y, c) in &data.patterns {
        counts.entry(x & parents).or_insert([0, 0])[(y >> effect & 1) as usize] += c;
    }
    counts
}

/// Total in-sample negative log-likelihood of one effect under a parent set.
fn nll_total(data: &LagData, effect: usize, parents: u64, alpha: f64) -> f64 {
    group_counts(data, effect, parents)
        .values()
        .map(|&[n0, n1]| {
            let n = (n0 + n1) as f64;
            let p1 = (n1 as f64 + alpha) / (n + 2.0 * alpha);
            -(n1 as f64 * p1.ln() + n0 as f64 * (1.0 - p1).ln())
        })
        .sum()
}

/// Mean per-record NLL of each effect under `graph`, with tables fitted on `data`.
pub fn nll(graph: &[u64], data: &LagData, alpha: f64) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyData(format!("no records at lag {}", data.lag)));
    }
    Ok(graph
        .iter()
        .enumerate()
        .map(|(i, &p)| nll_total(data, i, p, alpha) / data.n as f64)
        .collect())
}

pub fn fit_generating(data: &LagData, graph: &[u64], alpha: f64) -> Vec<GeneratingTable> {
    graph
        .iter()
        .enumerate()
        .map(|(i, &p)| GeneratingTable::fit(data, i, p, alpha))
        .collect()
}

/// Draw each edge independently with probability `sigmoid(eta)`.
pub fn sample_graph(eta: &[Vec<f64>], rng: &mut Rng) -> Graph {
    eta.iter()
        .map(|row| {
            row.iter().enumerate().fold(0u64, |g, (j, &e)| {
                if rng.gen::<f64>() < sigmoid(e) {
                    g | 1 << j
                } else {
                    g
                }
            })
        })
        .collect()
}

/// An accepted (or candidate) causal edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub cause: usize,
    pub effect: usize,
    pub lag: usize,
    pub prob: f64,
}

/// Structural model for one lag.
#[derive(Clone, Debug)]
pub struct ScmTau {
    pub lag: usize,
    pub num_vars: usize,
    pub num_causes: usize,
    /// `eta[i][j]`: logit that cause `j` drives effect `i` at this lag.
    pub eta: Vec<Vec<f64>>,
    tables: Vec<GeneratingTable>,
    cache: HashMap<(usize, u64), f64>,
}

impl ScmTau {
    pub fn new(lag: usize, num_vars: usize, num_actions: usize) -> ScmTau {
        let num_causes = num_vars + num_actions;
        let eta = (0..num_vars)
            .map(|i| {
                let mut row = vec![0.0; num_causes];
                // a variable is never its own parent
                row[i] = f64::NEG_INFINITY;
                row
            })
            .collect();
        let tables = (0..num_vars)
            .map(|_| GeneratingTable {
                parents: 0,
                alpha: 1.0,
                counts: HashMap::new(),
            })
            .collect();
        ScmTau {
            lag,
            num_vars,
            num_causes,
            eta,
            tables,
            cache: HashMap::new(),
        }
    }

    /// One score-function step on `eta` using `cfg.n_graphs` sampled graphs.
    ///
    /// Each effect row is scored by its in-sample NLL per observed event of
    /// that effect plus `edge_penalty` per parent; the batch mean score is the
    /// baseline. Empty data leaves `eta` untouched.
    pub fn update_eta(
        &mut self,
        data: &LagData,
        events: &[f64],
        cfg: &ScmConfig,
        rng: &mut Rng,
    ) -> Result<()> {
        if cfg.n_graphs < 2 {
            return Err(Error::Config("n_graphs must be >= 2".into()));
        }
        if events.len() != self.num_vars {
            return Err(Error::Dimension(format!(
                "{} event counts for {} variables",
                events.len(),
                self.num_vars
            )));
        }
        if data.is_empty() {
            return Ok(());
        }
        let graphs: Vec<Graph> = (0..cfg.n_graphs).map(|_| sample_graph(&self.eta, rng)).collect();
        for i in 0..self.num_vars {
            let norm = events[i].max(1.0);
            let scores: Vec<f64> = graphs
                .iter()
                .map(|g| {
                    let p = g[i];
                    let nll = *self
                        .cache
                        .entry((i, p))
                        .or_insert_with(|| nll_total(data, i, p, cfg.alpha));
                    -nll / norm - cfg.edge_penalty * p.count_ones() as f64
                })
                .collect();
            let rows: Vec<u64> = graphs.iter().map(|g| g[i]).collect();
            let grad = reinforce_grad(&self.eta[i], &rows, &scores);
            let row = &mut self.eta[i];
            for j in 0..self.num_causes {
                if j != i {
                    row[j] = (row[j] + cfg.lr * grad[j]).clamp(-cfg.logit_clip, cfg.logit_clip);
                }
            }
        }
        Ok(())
    }

    /// Run `cfg.updates` steps then refit the tables on the accepted graph.
    pub fn train(&mut self, data: &LagData, events: &[f64], cfg: &ScmConfig, rng: &mut Rng) -> Result<()> {
        if data.lag != self.lag {
            return Err(Error::MissingLag(data.lag));
        }
        self.cache.clear();
        for _ in 0..cfg.updates {
            self.update_eta(data, events, cfg, rng)?;
        }
        self.cache.clear();
        let g = self.map_graph(cfg.threshold);
        self.tables = fit_generating(data, &g, cfg.alpha);
        Ok(())
    }

    pub fn edge_prob(&self, effect: usize, cause: usize) -> f64 {
        sigmoid(self.eta[effect][cause])
    }

    /// Thresholded graph: edges with probability strictly above `threshold`.
    pub fn map_graph(&self, threshold: f64) -> Graph {
        (0..self.num_vars)
            .map(|i| {
                (0..self.num_causes).fold(0u64, |g, j| {
                    if self.edge_prob(i, j) > threshold {
                        g | 1 << j
                    } else {
                        g
                    }
                })
            })
            .collect()
    }

    pub fn accepted_edges(&self, threshold: f64) -> Vec<Edge> {
        let mut out = Vec::new();
        for i in 0..self.num_vars {
            for j in 0..self.num_causes {
                let prob = self.edge_prob(i, j);
                if prob > threshold {
                    out.push(Edge {
                        cause: j,
                        effect: i,
                        lag: self.lag,
                        prob,
                    });
                }
            }
        }
        out
    }

    /// P(effect increases at this lag | causes), from the fitted table.
    pub fn prob_increase(&self, effect: usize, causes: u64) -> f64 {
        self.tables[effect].prob(causes)
    }

    pub fn table(&self, effect: usize) -> &GeneratingTable {
        &self.tables[effect]
    }
}

/// Write edges as CSV with columns `cause,effect,lag,probability`.
pub fn write_edges_csv<W: Write>(mut w: W, spec: &TaskSpec, edges: &[Edge]) -> Result<()> {
    writeln!(w, "cause,effect,lag,probability")?;
    for e in edges {
        writeln!(
            w,
            "{},{},{},{:.6}",
            cause_name(spec, e.cause),
            spec.variables[e.effect],
            e.lag,
            e.prob
        )?;
    }
    Ok(())
}
