//! Subgoal-indexed option hierarchy.
//!
//! Every discovered effect variable `v` gets two units, one for making `v`
//! increase and one for making it decrease. A unit's options are the
//! primitive actions plus the promoted subgoals of `v`'s causal parents.
//! Units learn tabular Q-values with hindsight relabelling and, when enabled,
//! keep softmax exploration preferences shaped by empowerment.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::delaydist::DelayLogits;
use crate::empowerment::{normalize_advantages, option_outcomes, pointwise_gain, SoftmaxTable};
use crate::error::{Error, Result};
use crate::rng::{mix, Rng};
use crate::scm::{Edge, ScmTau};
use crate::world::{ActionId, FactoredState, TaskSpec, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubGoal {
    pub var: usize,
    pub dir: Direction,
}

impl SubGoal {
    pub fn up(var: usize) -> SubGoal {
        SubGoal { var, dir: Direction::Up }
    }

    pub fn down(var: usize) -> SubGoal {
        SubGoal {
            var,
            dir: Direction::Down,
        }
    }

    pub fn achieved(&self, start: &FactoredState, now: &FactoredState) -> bool {
        match self.dir {
            Direction::Up => now.get(self.var) > start.get(self.var),
            Direction::Down => now.get(self.var) < start.get(self.var),
        }
    }

    pub fn name(&self, spec: &TaskSpec) -> String {
        let arrow = match self.dir {
            Direction::Up => "up",
            Direction::Down => "down",
        };
        format!("{}:{arrow}", spec.variables[self.var])
    }
}

/// An option: a primitive action or a request to achieve a subgoal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Command {
    Act(ActionId),
    Achieve(SubGoal),
}

impl Command {
    pub fn name(&self, spec: &TaskSpec) -> String {
        match *self {
            Command::Act(a) => spec.actions[a].clone(),
            Command::Achieve(g) => g.name(spec),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitStatus {
    Training,
    Promoted,
}

/// How long to idle after a primitive action before deciding again.
#[derive(Clone, Debug, PartialEq)]
pub enum WaitPolicy {
    /// Draw from the learned delay distribution of the unit's variable.
    Learned(DelayLogits),
    /// Always wait this many steps, per variable.
    Fixed(Vec<usize>),
    /// Never wait.
    Zero,
}

impl WaitPolicy {
    pub fn draw(&self, var: usize, rng: &mut Rng) -> usize {
        match self {
            WaitPolicy::Learned(d) => d.sample(var, rng),
            WaitPolicy::Fixed(w) => w[var],
            WaitPolicy::Zero => 0,
        }
    }
}

/// Structural models used to score options by empowerment.
#[derive(Clone, Copy, Debug)]
pub struct EffectModels<'a> {
    pub scms: &'a [ScmTau],
    pub lags: &'a [usize],
    pub delays: &'a DelayLogits,
}

impl EffectModels<'_> {
    fn weights(&self, var: usize) -> Vec<f64> {
        let p = self.delays.distribution(var);
        let w: Vec<f64> = self.lags.iter().map(|&l| p[l - 1]).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HerTransition {
    pub goal: SubGoal,
    pub state: FactoredState,
    pub option: Command,
    pub reward: f64,
    pub next_state: FactoredState,
    /// Primitive steps the option took, waiting included.
    pub steps: usize,
    /// Recent options, only kept when states are history-augmented.
    pub history: Vec<Command>,
    pub next_history: Vec<Command>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    pub gamma: f64,
    pub q_lr: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of `max_round_episodes` over which epsilon anneals.
    pub eps_fraction: f64,
    /// Unit budget is `budget_factor * tau_max * level` primitive steps.
    pub budget_factor: usize,
    pub promotion_threshold: f64,
    /// Stop training a unit early once its window reaches this ratio.
    pub target_success: f64,
    pub window: usize,
    pub eval_every: usize,
    pub max_round_episodes: usize,
    pub replay_capacity: usize,
    pub replay_batch: usize,
    pub lambda_emp: f64,
    pub policy_lr: f64,
    /// Augment abstract states with the last `tau_max` options.
    pub augment_history: bool,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            gamma: 0.95,
            q_lr: 0.1,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.3,
            budget_factor: 4,
            promotion_threshold: 0.5,
            target_success: 0.95,
            window: 100,
            eval_every: 10,
            max_round_episodes: 2000,
            replay_capacity: 10_000,
            replay_batch: 32,
            lambda_emp: 0.1,
            policy_lr: 1.0,
            augment_history: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PolicyUnit {
    pub goal: SubGoal,
    pub options: Vec<Command>,
    pub parents: Vec<usize>,
    pub level: usize,
    pub status: UnitStatus,
    pub episodes: usize,
    pub round_episodes: usize,
    pub window: VecDeque<bool>,
    q: HashMap<u64, Vec<f64>>,
    pub prefs: SoftmaxTable,
    replay: Vec<HerTransition>,
    replay_pos: usize,
}

impl PolicyUnit {
    fn new(goal: SubGoal) -> PolicyUnit {
        PolicyUnit {
            goal,
            options: Vec::new(),
            parents: Vec::new(),
            level: 1,
            status: UnitStatus::Training,
            episodes: 0,
            round_episodes: 0,
            window: VecDeque::new(),
            q: HashMap::new(),
            prefs: SoftmaxTable::new(0),
            replay: Vec::new(),
            replay_pos: 0,
        }
    }

    pub fn success_ratio(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().filter(|&&s| s).count() as f64 / self.window.len() as f64
        }
    }

    pub fn option_index(&self, c: Command) -> Option<usize> {
        self.options.iter().position(|&o| o == c)
    }

    pub fn q_values(&self, key: u64) -> Vec<f64> {
        self.q.get(&key).cloned().unwrap_or_else(|| vec![0.0; self.options.len()])
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    /// Abstract state: presence of each parent and of the unit's own
    /// variable, optionally mixed with recent options.
    pub fn key(&self, state: &FactoredState, history: &[Command], augment: bool) -> u64 {
        let mut k = 0u64;
        for (b, &v) in self.parents.iter().chain(std::iter::once(&self.goal.var)).enumerate() {
            if state.present(v) {
                k |= 1 << b;
            }
        }
        if augment {
            let base = self.options.len() as u64 + 1;
            let h = history.iter().fold(0u64, |h, c| {
                let idx = self.option_index(*c).map_or(0, |i| i as u64 + 1);
                h.wrapping_mul(base).wrapping_add(idx)
            });
            k |= mix(h ^ history.len() as u64) << 16;
        }
        k
    }

    fn set_options(&mut self, options: Vec<Command>) {
        if options == self.options {
            return;
        }
        let map: Vec<Option<usize>> = options.iter().map(|&c| self.option_index(c)).collect();
        for row in self.q.values_mut() {
            *row = map.iter().map(|o| o.map_or(0.0, |k| row[k])).collect();
        }
        self.prefs.remap(&map);
        self.options = options;
    }

    fn push_replay(&mut self, t: HerTransition, capacity: usize) {
        if self.replay.len() < capacity {
            self.replay.push(t);
        } else if capacity > 0 {
            self.replay[self.replay_pos] = t;
            self.replay_pos = (self.replay_pos + 1) % capacity;
        }
    }

    fn q_update(&mut self, t: &HerTransition, cfg: &HierarchyConfig) {
        let Some(o) = self.option_index(t.option) else {
            return;
        };
        let k = self.key(&t.state, &t.history, cfg.augment_history);
        let target = if t.reward > 0.0 {
            t.reward
        } else {
            let k2 = self.key(&t.next_state, &t.next_history, cfg.augment_history);
            let next = self
                .q
                .get(&k2)
                .map_or(0.0, |r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            t.reward + cfg.gamma.powi(t.steps.max(1) as i32) * next
        };
        let n = self.options.len();
        let row = self.q.entry(k).or_insert_with(|| vec![0.0; n]);
        row[o] += cfg.q_lr * (target - row[o]);
    }
}

/// Result of running one unit to completion.
#[derive(Clone, Debug, Default)]
pub struct UnitRun {
    pub achieved: bool,
    pub steps: usize,
}

/// Data gathered while a unit trains for one episode.
#[derive(Debug, Default)]
struct EpisodeLog {
    transitions: Vec<HerTransition>,
    gains: Vec<(u64, usize, f64)>,
}

struct Ctx<'w, 'r, 'm> {
    world: &'w mut World,
    rng: &'r mut Rng,
    waits: &'m WaitPolicy,
    models: Option<EffectModels<'m>>,
}

#[derive(Clone, Debug)]
pub struct Hierarchy {
    pub num_vars: usize,
    pub num_actions: usize,
    pub tau_max: usize,
    pub cfg: HierarchyConfig,
    pub units: BTreeMap<SubGoal, PolicyUnit>,
    pub list_do: BTreeSet<Command>,
    /// Current state parents of every variable.
    pub parents: Vec<Vec<usize>>,
    /// Options available to the top-level dispatcher.
    pub top: Vec<Command>,
}

/// Drop the weakest state-to-state edge of each cycle until the accepted
/// graph is acyclic. Edges into or out of the same pair at other lags go too.
pub fn prune_cycles(edges: &[Edge], num_vars: usize) -> Vec<Edge> {
    let mut edges = edges.to_vec();
    loop {
        let parents = state_parents(&edges, num_vars);
        let Some(cycle) = find_cycle(&parents) else {
            return edges;
        };
        let weakest = cycle
            .iter()
            .flat_map(|&(p, c)| edges.iter().filter(move |e| e.cause == p && e.effect == c))
            .min_by(|a, b| a.prob.total_cmp(&b.prob).then(a.lag.cmp(&b.lag)))
            .copied()
            .expect("cycle has edges");
        edges.retain(|e| !(e.cause == weakest.cause && e.effect == weakest.effect));
    }
}

fn state_parents(edges: &[Edge], num_vars: usize) -> Vec<Vec<usize>> {
    let mut p = vec![BTreeSet::new(); num_vars];
    for e in edges {
        if e.cause < num_vars && e.cause != e.effect {
            p[e.effect].insert(e.cause);
        }
    }
    p.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Some cycle as `(parent, child)` pairs.
fn find_cycle(parents: &[Vec<usize>]) -> Option<Vec<(usize, usize)>> {
    let m = parents.len();
    let mut mark = vec![0u8; m];
    let mut stack = Vec::new();
    fn dfs(v: usize, ps: &[Vec<usize>], mark: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<(usize, usize)>> {
        mark[v] = 1;
        stack.push(v);
        for &p in &ps[v] {
            if mark[p] == 1 {
                let pos = stack.iter().position(|&x| x == p).unwrap();
                let cyc = &stack[pos..];
                let mut out = Vec::new();
                for w in 0..cyc.len() {
                    // stack runs child -> parent
                    let child = cyc[w];
                    let parent = if w + 1 < cyc.len() { cyc[w + 1] } else { p };
                    out.push((parent, child));
                }
                return Some(out);
            }
            if mark[p] == 0 {
                if let Some(c) = dfs(p, ps, mark, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        mark[v] = 2;
        None
    }
    for v in 0..m {
        if mark[v] == 0 {
            if let Some(c) = dfs(v, parents, &mut mark, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

fn argmax_random(values: &[f64], rng: &mut Rng) -> usize {
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..values.len()).filter(|&k| values[k] >= best - 1e-12).collect();
    *ties.choose(rng).expect("non-empty option set")
}

fn masked_softmax(logits: &[f64], avail: &[bool]) -> Vec<f64> {
    let m = logits
        .iter()
        .zip(avail)
        .filter(|(_, &a)| a)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits
        .iter()
        .zip(avail)
        .map(|(&x, &a)| if a { (x - m).exp() } else { 0.0 })
        .collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn sample_probs(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

impl Hierarchy {
    pub fn new(num_vars: usize, num_actions: usize, tau_max: usize, cfg: HierarchyConfig) -> Hierarchy {
        let list_do: BTreeSet<Command> = (0..num_actions).map(Command::Act).collect();
        Hierarchy {
            num_vars,
            num_actions,
            tau_max,
            cfg,
            top: list_do.iter().copied().collect(),
            list_do,
            units: BTreeMap::new(),
            parents: vec![Vec::new(); num_vars],
        }
    }

    /// Create or extend units from the accepted edges. Errors on an empty
    /// edge set or a cyclic state graph.
    pub fn build_round(&mut self, edges: &[Edge]) -> Result<()> {
        if edges.is_empty() {
            return Err(Error::EmptyData("no accepted edges".into()));
        }
        let parents = state_parents(edges, self.num_vars);
        if let Some(c) = find_cycle(&parents) {
            return Err(Error::CyclicGraph(c[0].1));
        }
        let mut levels = vec![0usize; self.num_vars];
        for _ in 0..self.num_vars {
            for v in 0..self.num_vars {
                levels[v] = 1 + parents[v].iter().map(|&p| levels[p]).max().unwrap_or(0);
            }
        }
        let effects: BTreeSet<usize> = edges.iter().map(|e| e.effect).collect();
        self.parents = parents;
        for &v in &effects {
            for goal in [SubGoal::up(v), SubGoal::down(v)] {
                let options = self.options_for(v);
                let unit = self.units.entry(goal).or_insert_with(|| PolicyUnit::new(goal));
                unit.parents = self.parents[v].clone();
                unit.level = levels[v];
                unit.set_options(options);
            }
        }
        self.refresh_top();
        Ok(())
    }

    fn options_for(&self, v: usize) -> Vec<Command> {
        let mut o: Vec<Command> = (0..self.num_actions).map(Command::Act).collect();
        for &p in &self.parents[v] {
            o.push(Command::Achieve(SubGoal::up(p)));
            o.push(Command::Achieve(SubGoal::down(p)));
        }
        o
    }

    fn refresh_top(&mut self) {
        let mut top: BTreeSet<Command> = self.list_do.clone();
        top.extend(self.units.keys().map(|&g| Command::Achieve(g)));
        self.top = top.into_iter().collect();
    }

    /// Promote every training unit whose full window clears the threshold.
    /// Newly promoted subgoals join the intervention list.
    pub fn promote(&mut self) -> Vec<SubGoal> {
        let mut newly = Vec::new();
        for (g, u) in self.units.iter_mut() {
            if u.status == UnitStatus::Training
                && u.window.len() >= self.cfg.window
                && u.success_ratio() > self.cfg.promotion_threshold
            {
                u.status = UnitStatus::Promoted;
                newly.push(*g);
            }
        }
        for g in &newly {
            self.list_do.insert(Command::Achieve(*g));
        }
        self.refresh_top();
        newly
    }

    pub fn budget(&self, goal: SubGoal) -> usize {
        let level = self.units.get(&goal).map_or(1, |u| u.level);
        self.cfg.budget_factor * self.tau_max * level
    }

    pub fn is_promoted(&self, goal: SubGoal) -> bool {
        self.units.get(&goal).is_some_and(|u| u.status == UnitStatus::Promoted)
    }

    pub fn training_goals(&self) -> Vec<SubGoal> {
        let mut g: Vec<(usize, SubGoal)> = self
            .units
            .iter()
            .filter(|(_, u)| u.status == UnitStatus::Training)
            .map(|(g, u)| (u.level, *g))
            .collect();
        g.sort();
        g.into_iter().map(|(_, g)| g).collect()
    }

    /// Primitive actions are always available; subgoal options only once
    /// their unit has been promoted.
    pub fn available(&self, unit: &PolicyUnit) -> Vec<bool> {
        unit.options
            .iter()
            .map(|c| match c {
                Command::Act(_) => true,
                Command::Achieve(g) => self.is_promoted(*g),
            })
            .collect()
    }

    fn epsilon(&self, unit: &PolicyUnit) -> f64 {
        let span = (self.cfg.eps_fraction * self.cfg.max_round_episodes as f64).max(1.0);
        let frac = (unit.episodes as f64 / span).min(1.0);
        self.cfg.eps_start + (self.cfg.eps_end - self.cfg.eps_start) * frac
    }

    /// Execute one option of a unit. Primitive actions take exactly one world step.
    fn execute_option(&self, ctx: &mut Ctx, option: Command, budget: usize) -> Result<UnitRun> {
        if budget == 0 || ctx.world.finished() {
            return Ok(UnitRun::default());
        }
        match option {
            Command::Act(a) => {
                ctx.world.step(a)?;
                Ok(UnitRun {
                    achieved: false,
                    steps: 1,
                })
            }
            Command::Achieve(g) => {
                if !self.units.contains_key(&g) {
                    ctx.world.idle()?;
                    return Ok(UnitRun {
                        achieved: false,
                        steps: 1,
                    });
                }
                let b = self.budget(g).min(budget);
                self.run_unit(ctx, g, b, None)
            }
        }
    }

    fn run_unit(&self, ctx: &mut Ctx, goal: SubGoal, budget: usize, mut log: Option<&mut EpisodeLog>) -> Result<UnitRun> {
        let unit = &self.units[&goal];
        let augment = self.cfg.augment_history;
        let t0 = ctx.world.t();
        let start = ctx.world.state().clone();
        let reserve = self.tau_max.min(budget / 2);
        let eps = if log.is_some() { self.epsilon(unit) } else { 0.0 };
        let mut history: Vec<Command> = Vec::new();
        let used = |w: &World| w.t() - t0;
        loop {
            if goal.achieved(&start, ctx.world.state()) {
                return Ok(UnitRun {
                    achieved: true,
                    steps: used(ctx.world),
                });
            }
            if used(ctx.world) >= budget || ctx.world.finished() {
                break;
            }
            if used(ctx.world) + reserve >= budget {
                ctx.world.idle()?;
                continue;
            }
            let s = ctx.world.state().clone();
            let key = unit.key(&s, &history, augment);
            let avail = self.available(unit);
            let pi = masked_softmax(&unit.prefs.logits(key), &avail);
            let o = if log.is_some() && ctx.rng.gen::<f64>() < eps {
                sample_probs(&pi, ctx.rng)
            } else {
                let q = unit.q_values(key);
                let masked: Vec<f64> = q
                    .iter()
                    .zip(&avail)
                    .map(|(&v, &a)| if a { v } else { f64::NEG_INFINITY })
                    .collect();
                argmax_random(&masked, ctx.rng)
            };
            if let (Some(log), Some(models)) = (log.as_deref_mut(), ctx.models) {
                if self.cfg.lambda_emp > 0.0 {
                    let out = option_outcomes(&s, goal.var, &unit.options, models.scms, models.lags)?;
                    let gain = pointwise_gain(&pi, &out, &models.weights(goal.var))?;
                    log.gains.push((key, o, gain[o]));
                }
            }
            let option = unit.options[o];
            let t_opt = ctx.world.t();
            let left = budget - used(ctx.world) - reserve;
            self.execute_option(ctx, option, left)?;
            if let Command::Act(_) = option {
                let w = ctx.waits.draw(goal.var, ctx.rng);
                for _ in 0..w {
                    if goal.achieved(&start, ctx.world.state())
                        || used(ctx.world) + reserve >= budget
                        || ctx.world.finished()
                    {
                        break;
                    }
                    ctx.world.idle()?;
                }
            }
            let prev_history = history.clone();
            if augment {
                history.push(option);
                if history.len() > self.tau_max {
                    history.remove(0);
                }
            }
            if let Some(log) = log.as_deref_mut() {
                let next = ctx.world.state().clone();
                let reward = if goal.achieved(&start, &next) { 1.0 } else { 0.0 };
                log.transitions.push(HerTransition {
                    goal,
                    state: s,
                    option,
                    reward,
                    next_state: next,
                    steps: ctx.world.t() - t_opt,
                    history: if augment { prev_history } else { Vec::new() },
                    next_history: if augment { history.clone() } else { Vec::new() },
                });
            }
        }
        Ok(UnitRun {
            achieved: false,
            steps: used(ctx.world),
        })
    }

    /// For decrease goals, first make the variable present with its
    /// increase unit. Returns false when that fails.
    fn prepare(&self, ctx: &mut Ctx, goal: SubGoal) -> Result<bool> {
        if goal.dir == Direction::Up || ctx.world.state().present(goal.var) {
            return Ok(true);
        }
        let up = SubGoal::up(goal.var);
        if self.units.contains_key(&up) {
            self.run_unit(ctx, up, self.budget(up), None)?;
        }
        Ok(ctx.world.state().present(goal.var))
    }

    /// Carry out one command greedily in the current world. Returns whether
    /// the action was taken or the subgoal reached.
    pub fn execute(&self, cmd: Command, world: &mut World, rng: &mut Rng, waits: &WaitPolicy) -> Result<bool> {
        if world.finished() {
            return Ok(false);
        }
        match cmd {
            Command::Act(a) => {
                world.step(a)?;
                Ok(true)
            }
            Command::Achieve(g) => {
                if !self.units.contains_key(&g) {
                    return Ok(false);
                }
                let b = self.budget(g).min(world.remaining());
                let mut ctx = Ctx {
                    world,
                    rng,
                    waits,
                    models: None,
                };
                Ok(self.run_unit(&mut ctx, g, b, None)?.achieved)
            }
        }
    }

    /// One greedy attempt at `goal` from a reset world.
    pub fn evaluate_unit(&self, goal: SubGoal, world: &mut World, rng: &mut Rng, waits: &WaitPolicy) -> Result<bool> {
        if !self.units.contains_key(&goal) {
            return Ok(false);
        }
        let mut ctx = Ctx {
            world,
            rng,
            waits,
            models: None,
        };
        if !self.prepare(&mut ctx, goal)? {
            return Ok(false);
        }
        Ok(self.run_unit(&mut ctx, goal, self.budget(goal), None)?.achieved)
    }

    /// One training episode for `goal` in a reset world. Updates the unit's
    /// values, relabels for other units, replays, and applies empowerment
    /// preference updates. Returns whether the goal was reached.
    pub fn train_episode(
        &mut self,
        goal: SubGoal,
        world: &mut World,
        rng: &mut Rng,
        waits: &WaitPolicy,
        models: Option<EffectModels>,
    ) -> Result<bool> {
        if !self.units.contains_key(&goal) {
            return Err(Error::Config(format!("no unit for {goal:?}")));
        }
        let mut log = EpisodeLog::default();
        let achieved = {
            let mut ctx = Ctx {
                world,
                rng,
                waits,
                models,
            };
            if self.prepare(&mut ctx, goal)? {
                self.run_unit(&mut ctx, goal, self.budget(goal), Some(&mut log))?.achieved
            } else {
                false
            }
        };
        let cfg = self.cfg.clone();
        let relabeled = her_relabel(&log.transitions);
        {
            let unit = self.units.get_mut(&goal).unwrap();
            unit.episodes += 1;
            unit.round_episodes += 1;
            for t in log.transitions.iter().rev() {
                unit.q_update(t, &cfg);
            }
            for t in &log.transitions {
                unit.push_replay(t.clone(), cfg.replay_capacity);
            }
        }
        for t in relabeled {
            if t.goal == goal {
                continue;
            }
            if let Some(u) = self.units.get_mut(&t.goal) {
                // promoted units are frozen
                if u.status == UnitStatus::Training && u.option_index(t.option).is_some() {
                    u.q_update(&t, &cfg);
                    u.push_replay(t, cfg.replay_capacity);
                }
            }
        }
        let unit = self.units.get_mut(&goal).unwrap();
        if !unit.replay.is_empty() {
            for _ in 0..cfg.replay_batch {
                let k = rng.gen_range(0..unit.replay.len());
                let t = unit.replay[k].clone();
                unit.q_update(&t, &cfg);
            }
        }
        if cfg.lambda_emp > 0.0 && !log.gains.is_empty() {
            let mut adv: Vec<f64> = log.gains.iter().map(|g| g.2).collect();
            normalize_advantages(&mut adv);
            for ((key, o, _), a) in log.gains.iter().zip(adv) {
                unit.prefs.update(*key, *o, a, cfg.policy_lr * cfg.lambda_emp)?;
            }
        }
        Ok(achieved)
    }

    /// Record an evaluation outcome in the unit's rolling window.
    pub fn record_eval(&mut self, goal: SubGoal, success: bool) {
        let w = self.cfg.window;
        if let Some(u) = self.units.get_mut(&goal) {
            u.window.push_back(success);
            while u.window.len() > w {
                u.window.pop_front();
            }
        }
    }

    /// Top-level rollout towards `task_var` increasing. Uses the task unit
    /// if it exists, otherwise the deepest promoted increase unit once.
    pub fn run_task(&self, task_var: usize, world: &mut World, rng: &mut Rng, waits: &WaitPolicy) -> Result<bool> {
        let goal = SubGoal::up(task_var);
        let start = world.state().clone();
        let mut ctx = Ctx {
            world,
            rng,
            waits,
            models: None,
        };
        if self.units.contains_key(&goal) {
            while !ctx.world.finished() && !goal.achieved(&start, ctx.world.state()) {
                let b = self.budget(goal).min(ctx.world.remaining());
                self.run_unit(&mut ctx, goal, b, None)?;
            }
        } else if let Some(g) = self
            .units
            .iter()
            .filter(|(g, u)| g.dir == Direction::Up && u.status == UnitStatus::Promoted)
            .max_by_key(|(g, u)| (u.level, std::cmp::Reverse(g.var)))
            .map(|(g, _)| *g)
        {
            let b = self.budget(g).min(ctx.world.remaining());
            self.run_unit(&mut ctx, g, b, None)?;
        }
        Ok(goal.achieved(&start, ctx.world.state()))
    }

    pub fn snapshot(&self, spec: &TaskSpec) -> HierarchySnapshot {
        HierarchySnapshot {
            list_do: self.list_do.iter().map(|c| c.name(spec)).collect(),
            top: self.top.iter().map(|c| c.name(spec)).collect(),
            units: self
                .units
                .values()
                .map(|u| {
                    let mut q: Vec<(String, Vec<f64>)> =
                        u.q.iter().map(|(k, v)| (format!("{k:x}"), v.clone())).collect();
                    q.sort_by(|a, b| a.0.cmp(&b.0));
                    UnitSnapshot {
                        goal: u.goal.name(spec),
                        level: u.level,
                        status: u.status,
                        parents: u.parents.iter().map(|&p| spec.variables[p].clone()).collect(),
                        options: u.options.iter().map(|c| c.name(spec)).collect(),
                        success_ratio: u.success_ratio(),
                        episodes: u.episodes,
                        replay: u.replay.len(),
                        q: q.into_iter().collect(),
                    }
                })
                .collect(),
        }
    }
}

/// For every transition that changed some variable, emit a copy that treats
/// that change as the goal, with reward 1. The original transitions are
/// returned first.
pub fn her_relabel(episode: &[HerTransition]) -> Vec<HerTransition> {
    let mut out: Vec<HerTransition> = episode.to_vec();
    for t in episode {
        for v in 0..t.state.len() {
            let g = match t.next_state.get(v).cmp(&t.state.get(v)) {
                std::cmp::Ordering::Greater => SubGoal::up(v),
                std::cmp::Ordering::Less => SubGoal::down(v),
                std::cmp::Ordering::Equal => continue,
            };
            if g == t.goal {
                continue;
            }
            out.push(HerTransition {
                goal: g,
                reward: 1.0,
                ..t.clone()
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitSnapshot {
    pub goal: String,
    pub level: usize,
    pub status: UnitStatus,
    pub parents: Vec<String>,
    pub options: Vec<String>,
    pub success_ratio: f64,
    pub episodes: usize,
    pub replay: usize,
    pub q: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchySnapshot {
    pub list_do: Vec<String>,
    pub top: Vec<String>,
    pub units: Vec<UnitSnapshot>,
}
