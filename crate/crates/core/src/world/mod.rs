//! Factored crafting world whose effects land after a stochastic delay.
//!
//! State is a vector of item counts. A [`CausalRule`] fires when its action
//! is taken and its state preconditions hold; resources are consumed at once
//! and the effect is scheduled `tau` steps later, with `tau` drawn from a
//! Gaussian discretized onto `1..=tau_max`.

mod taskfile;
mod tasks;

pub use taskfile::{Requirement, RuleEntry, TaskFile};
pub use tasks::{builtin_task, BUILTIN_TASKS};

use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

pub type ActionId = usize;

/// Largest number of cause features (variables + actions) a task may have.
pub const MAX_FEATURES: usize = 64;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactoredState(Vec<u8>);

impl FactoredState {
    pub fn zeros(m: usize) -> Self {
        FactoredState(vec![0; m])
    }

    pub fn from_counts(counts: Vec<u8>) -> Self {
        FactoredState(counts)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> u8 {
        self.0[i]
    }

    pub fn counts(&self) -> &[u8] {
        &self.0
    }

    pub fn present(&self, i: usize) -> bool {
        self.0[i] >= 1
    }

    /// Bit `i` set iff variable `i` has count >= 1.
    pub fn presence_mask(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |m, (i, &c)| if c >= 1 { m | (1 << i) } else { m })
    }

    fn add(&mut self, i: usize, delta: u8) {
        self.0[i] = self.0[i].saturating_add(delta);
    }

    fn sub(&mut self, i: usize, delta: u8) {
        self.0[i] = self.0[i].saturating_sub(delta);
    }
}

/// A precondition of a rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cause {
    Var { var: usize, min: u8 },
    Action(ActionId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalRule {
    pub effect: usize,
    pub parents: Vec<Cause>,
    /// Per-parent decrement applied when the rule triggers. Aligned with `parents`.
    pub consume: Vec<u8>,
    pub delta: u8,
    pub delay_mean: f64,
    pub delay_sigma: f64,
}

impl CausalRule {
    pub fn triggered(&self, state: &FactoredState, action: Option<ActionId>) -> bool {
        self.parents.iter().all(|p| match *p {
            Cause::Var { var, min } => state.get(var) >= min,
            Cause::Action(a) => action == Some(a),
        })
    }

    /// State variables among the parents.
    pub fn state_parents(&self) -> impl Iterator<Item = usize> + '_ {
        self.parents.iter().filter_map(|p| match *p {
            Cause::Var { var, .. } => Some(var),
            Cause::Action(_) => None,
        })
    }
}

/// Static description of a task: variables, actions, rules and the goal variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub variables: Vec<String>,
    pub actions: Vec<String>,
    pub rules: Vec<CausalRule>,
    pub goal: usize,
}

impl TaskSpec {
    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn action_index(&self, name: &str) -> Option<ActionId> {
        self.actions.iter().position(|a| a == name)
    }

    /// Replace every rule's delay spread.
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        for r in &mut self.rules {
            r.delay_sigma = sigma;
        }
        self
    }

    /// Variables that some rule produces, in index order.
    pub fn effect_vars(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.rules.iter().map(|r| r.effect).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// `(mean, sigma)` of the delay for `var`, if any rule produces it.
    pub fn delay_params(&self, var: usize) -> Option<(f64, f64)> {
        self.rules
            .iter()
            .find(|r| r.effect == var)
            .map(|r| (r.delay_mean, r.delay_sigma))
    }

    /// Ground-truth delay distribution per variable (`None` for variables no rule produces).
    pub fn true_delays(&self, tau_max: usize) -> Result<Vec<Option<Vec<f64>>>> {
        (0..self.num_vars())
            .map(|v| {
                self.delay_params(v)
                    .map(|(mu, s)| discretize_delay(mu, s, tau_max))
                    .transpose()
            })
            .collect()
    }

    /// Longest chain of rules needed to produce each variable (1 for raw resources).
    pub fn rule_depths(&self) -> Vec<usize> {
        let m = self.num_vars();
        let mut depth = vec![0usize; m];
        for _ in 0..m {
            for r in &self.rules {
                let d = 1 + r.state_parents().map(|p| depth[p]).max().unwrap_or(0);
                if d > depth[r.effect] {
                    depth[r.effect] = d;
                }
            }
        }
        depth
    }

    pub fn validate(&self, tau_max: usize) -> Result<()> {
        let (m, n) = (self.num_vars(), self.num_actions());
        if tau_max == 0 {
            return Err(Error::Config("tau_max must be >= 1".into()));
        }
        if m == 0 || n == 0 {
            return Err(Error::Config("task needs at least one variable and one action".into()));
        }
        if m + n > MAX_FEATURES {
            return Err(Error::Config(format!(
                "{} variables + {} actions exceeds {MAX_FEATURES} cause features",
                m, n
            )));
        }
        if self.goal >= m {
            return Err(Error::Config(format!("goal index {} out of range", self.goal)));
        }
        for (k, r) in self.rules.iter().enumerate() {
            if r.effect >= m {
                return Err(Error::Config(format!("rule {k}: effect {} out of range", r.effect)));
            }
            if r.consume.len() != r.parents.len() {
                return Err(Error::Config(format!("rule {k}: consume/parents length mismatch")));
            }
            if r.delta == 0 {
                return Err(Error::Config(format!("rule {k}: delta must be >= 1")));
            }
            for (p, &c) in r.parents.iter().zip(&r.consume) {
                match *p {
                    Cause::Var { var, .. } if var >= m => {
                        return Err(Error::Config(format!("rule {k}: parent variable {var} out of range")))
                    }
                    Cause::Action(a) if a >= n => {
                        return Err(Error::Config(format!("rule {k}: parent action {a} out of range")))
                    }
                    Cause::Action(_) if c != 0 => {
                        return Err(Error::Config(format!("rule {k}: cannot consume an action")))
                    }
                    _ => {}
                }
            }
            if !r.delay_mean.is_finite() || !r.delay_sigma.is_finite() || r.delay_sigma < 0.0 {
                return Err(Error::Config(format!("rule {k}: bad delay parameters")));
            }
            let rounded = r.delay_mean.round();
            if rounded < 1.0 || rounded > tau_max as f64 {
                return Err(Error::Config(format!(
                    "rule {k}: delay mean {} outside 1..={tau_max}",
                    r.delay_mean
                )));
            }
            if let Some((mu, s)) = self.delay_params(r.effect) {
                if mu != r.delay_mean || s != r.delay_sigma {
                    return Err(Error::Config(format!(
                        "rules producing `{}` disagree on delay parameters",
                        self.variables[r.effect]
                    )));
                }
            }
        }
        self.check_acyclic()
    }

    fn check_acyclic(&self) -> Result<()> {
        let m = self.num_vars();
        let mut children = vec![Vec::new(); m];
        for r in &self.rules {
            for p in r.state_parents() {
                children[p].push(r.effect);
            }
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut mark = vec![0u8; m];
        fn visit(v: usize, ch: &[Vec<usize>], mark: &mut [u8]) -> Option<usize> {
            mark[v] = 1;
            for &c in &ch[v] {
                if mark[c] == 1 {
                    return Some(c);
                }
                if mark[c] == 0 {
                    if let Some(x) = visit(c, ch, mark) {
                        return Some(x);
                    }
                }
            }
            mark[v] = 2;
            None
        }
        for v in 0..m {
            if mark[v] == 0 {
                if let Some(c) = visit(v, &children, &mut mark) {
                    return Err(Error::CyclicRules(self.variables[c].clone()));
                }
            }
        }
        Ok(())
    }
}

/// Probability mass of a Gaussian delay on each integer lag `1..=tau_max`.
///
/// Lag `t` receives the mass of `[t - 0.5, t + 0.5]`; the result is
/// renormalized over the truncated range. `sigma == 0` gives a point mass
/// at the rounded mean.
pub fn discretize_delay(mu: f64, sigma: f64, tau_max: usize) -> Result<Vec<f64>> {
    if tau_max == 0 {
        return Err(Error::Config("tau_max must be >= 1".into()));
    }
    if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::Config(format!("bad delay parameters mu={mu} sigma={sigma}")));
    }
    let point = || {
        let k = (mu.round().max(1.0) as usize).min(tau_max);
        let mut p = vec![0.0; tau_max];
        p[k - 1] = 1.0;
        p
    };
    if sigma == 0.0 {
        return Ok(point());
    }
    let cdf = |x: f64| 0.5 * statrs::function::erf::erfc(-(x - mu) / (sigma * std::f64::consts::SQRT_2));
    let mut p: Vec<f64> = (1..=tau_max)
        .map(|t| (cdf(t as f64 + 0.5) - cdf(t as f64 - 0.5)).max(0.0))
        .collect();
    let z: f64 = p.iter().sum();
    if z <= 0.0 || !z.is_finite() {
        return Ok(point());
    }
    p.iter_mut().for_each(|x| *x /= z);
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PendingEffect {
    pub fire_step: usize,
    pub var: usize,
    pub delta: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Built-in task name, ignored when `task_file` is set.
    pub task: String,
    #[serde(default)]
    pub task_file: Option<PathBuf>,
    pub tau_max: usize,
    pub sigma_delay: f64,
    /// Steps per episode. Defaults to `50 * tau_max`.
    #[serde(default)]
    pub horizon: Option<usize>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            task: "GetSilverore".into(),
            task_file: None,
            tau_max: 4,
            sigma_delay: 0.4,
            horizon: None,
        }
    }
}

impl WorldConfig {
    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(50 * self.tau_max)
    }
}

/// Resolve and validate the task described by `cfg`. `sigma_delay` overrides
/// the spread of every built-in rule; task files keep their own unless unset.
pub fn make_task(cfg: &WorldConfig) -> Result<TaskSpec> {
    let spec = match &cfg.task_file {
        Some(path) => TaskFile::load(path)?.into_spec(cfg.sigma_delay)?,
        None => builtin_task(&cfg.task)?.with_sigma(cfg.sigma_delay),
    };
    if cfg.horizon() == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    spec.validate(cfg.tau_max)?;
    Ok(spec)
}

/// One episode's worth of simulation state. Call [`World::reset`] to start
/// a new episode with a fresh seed.
#[derive(Clone, Debug)]
pub struct World {
    spec: Arc<TaskSpec>,
    tau_max: usize,
    horizon: usize,
    /// Cumulative delay distribution per rule.
    delay_cdf: Vec<Vec<f64>>,
    state: FactoredState,
    t: usize,
    pending: Vec<PendingEffect>,
    rng: Rng,
}

impl World {
    pub fn new(spec: Arc<TaskSpec>, tau_max: usize, horizon: usize, seed: u64) -> Result<World> {
        spec.validate(tau_max)?;
        if horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        let delay_cdf = spec
            .rules
            .iter()
            .map(|r| {
                let p = discretize_delay(r.delay_mean, r.delay_sigma, tau_max)?;
                Ok(p.iter()
                    .scan(0.0, |acc, x| {
                        *acc += x;
                        Some(*acc)
                    })
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let m = spec.num_vars();
        Ok(World {
            spec,
            tau_max,
            horizon,
            delay_cdf,
            state: FactoredState::zeros(m),
            t: 0,
            pending: Vec::new(),
            rng: seeded(seed),
        })
    }

    pub fn from_config(cfg: &WorldConfig, seed: u64) -> Result<World> {
        let spec = make_task(cfg)?;
        World::new(Arc::new(spec), cfg.tau_max, cfg.horizon(), seed)
    }

    /// Empty inventory, nothing pending, step 0.
    pub fn reset(&mut self, seed: u64) {
        self.state = FactoredState::zeros(self.spec.num_vars());
        self.t = 0;
        self.pending.clear();
        self.rng = seeded(seed);
    }

    pub fn spec(&self) -> &Arc<TaskSpec> {
        &self.spec
    }

    pub fn state(&self) -> &FactoredState {
        &self.state
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn tau_max(&self) -> usize {
        self.tau_max
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn remaining(&self) -> usize {
        self.horizon - self.t
    }

    pub fn finished(&self) -> bool {
        self.t >= self.horizon
    }

    pub fn pending(&self) -> &[PendingEffect] {
        &self.pending
    }

    pub fn num_actions(&self) -> usize {
        self.spec.num_actions()
    }

    /// Take `action` and advance one step.
    pub fn step(&mut self, action: ActionId) -> Result<(&FactoredState, usize)> {
        if action >= self.spec.num_actions() {
            return Err(Error::InvalidAction {
                action,
                available: self.spec.num_actions(),
            });
        }
        self.advance(Some(action))
    }

    /// Advance one step without acting. Only action-free rules can trigger.
    pub fn idle(&mut self) -> Result<(&FactoredState, usize)> {
        self.advance(None)
    }

    fn advance(&mut self, action: Option<ActionId>) -> Result<(&FactoredState, usize)> {
        if self.t >= self.horizon {
            return Err(Error::HorizonExceeded(self.horizon));
        }
        let spec = Arc::clone(&self.spec);
        let fired: Vec<usize> = spec
            .rules
            .iter()
            .enumerate()
            .filter(|(_, r)| r.triggered(&self.state, action))
            .map(|(k, _)| k)
            .collect();
        for &k in &fired {
            let r = &spec.rules[k];
            for (p, &c) in r.parents.iter().zip(&r.consume) {
                if let Cause::Var { var, .. } = *p {
                    self.state.sub(var, c);
                }
            }
            let u: f64 = self.rng.gen();
            let cdf = &self.delay_cdf[k];
            let tau = 1 + cdf.iter().position(|&c| u < c).unwrap_or(self.tau_max - 1);
            self.pending.push(PendingEffect {
                fire_step: self.t + tau,
                var: r.effect,
                delta: r.delta,
            });
        }
        self.t += 1;
        let now = self.t;
        let state = &mut self.state;
        self.pending.retain(|e| {
            if e.fire_step == now {
                state.add(e.var, e.delta);
                false
            } else {
                true
            }
        });
        Ok((&self.state, self.t))
    }
}
