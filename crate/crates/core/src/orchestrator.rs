//! Round-based driver: intervene, fit per-lag structural models, learn delay
//! distributions, grow the hierarchy, train and promote units. Repeats until
//! the task's goal subgoal is promoted or the episode budget runs out.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bench::{adc, kl_per_effect, MetricsRow, Variant, METRICS_SCHEMA};
use crate::delaydist::{candidate_causes, train_delay, write_beta_csv, DelayConfig, DelayEvidence, DelayLogits};
use crate::error::{Error, Result};
use crate::hierarchy::{prune_cycles, Command, EffectModels, Hierarchy, HierarchyConfig, SubGoal, WaitPolicy};
use crate::rng::{derive, seeded, stream, Rng};
use crate::scm::{write_edges_csv, Dataset, Edge, InterventionRecord, ScmConfig, ScmTau};
use crate::world::{make_task, TaskSpec, World, WorldConfig};

/// Logit gap used for point-mass delay beliefs.
const PRIOR_LOGIT: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub variant: Variant,
    /// Lag stride; only valid with the simplified variant.
    pub kappa: Option<usize>,
    pub seed: u64,
    /// Intervention plus training episodes allowed in total.
    pub episode_budget: usize,
    pub max_rounds: usize,
    /// Intervention episodes per entry of the intervention list.
    pub interventions_per_target: usize,
    /// Greedy task rollouts after the last round.
    pub final_rollouts: usize,
    /// Training episodes between task-level evaluation rollouts.
    pub task_eval_every: usize,
    pub scm: ScmConfig,
    pub delay: DelayConfig,
    pub hierarchy: HierarchyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: WorldConfig::default(),
            variant: Variant::Dechrl,
            kappa: None,
            seed: 0,
            episode_budget: 50_000,
            max_rounds: 6,
            interventions_per_target: 200,
            final_rollouts: 100,
            task_eval_every: 10,
            scm: ScmConfig::default(),
            delay: DelayConfig::default(),
            hierarchy: HierarchyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let tau = self.world.tau_max;
        match (self.variant, self.kappa) {
            (Variant::Simplified, None) => {
                return Err(Error::Config("the simplified variant needs kappa".into()))
            }
            (Variant::Simplified, Some(k)) if k == 0 || k > tau => {
                return Err(Error::Config(format!("kappa {k} must be in 1..={tau}")))
            }
            (v, Some(_)) if v != Variant::Simplified => {
                return Err(Error::Config(format!("kappa is only valid for the simplified variant, not {v}")))
            }
            _ => {}
        }
        if self.scm.threshold <= 0.0 || self.scm.threshold >= 1.0 {
            return Err(Error::Config("scm.threshold must be in (0, 1)".into()));
        }
        if self.hierarchy.window == 0 || self.hierarchy.eval_every == 0 || self.task_eval_every == 0 {
            return Err(Error::Config("window and evaluation intervals must be >= 1".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.kappa.unwrap_or(1)
    }

    /// Lags with a structural model.
    pub fn support(&self) -> Vec<usize> {
        let k = self.stride();
        (1..=self.world.tau_max).filter(|t| t % k == 0).collect()
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        Ok(toml::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTimings {
    pub interventions: f64,
    pub scm: f64,
    pub delay: f64,
    pub training: f64,
}

impl RoundTimings {
    pub fn total(&self) -> f64 {
        self.interventions + self.scm + self.delay + self.training
    }
}

/// Everything decided in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundState {
    pub round: usize,
    pub list_do: Vec<Command>,
    pub records: usize,
    pub edges: Vec<Edge>,
    pub delays: DelayLogits,
    pub success: BTreeMap<SubGoal, f64>,
    pub promoted: Vec<SubGoal>,
    pub episodes_used: usize,
    pub timings: RoundTimings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    /// The task subgoal was promoted.
    Completed,
    /// Stopped by the episode budget; results are partial.
    BudgetExhausted,
    /// Stopped by the round limit; results are partial.
    RoundLimit,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub rounds: Vec<RoundState>,
    pub metrics: Vec<MetricsRow>,
    /// Success of the final greedy task rollouts.
    pub asr: f64,
    pub adc: f64,
    /// Per effect variable `(index, KL)` of true vs learned delays.
    pub kl: Vec<(usize, f64)>,
    /// Final greedy success per unit.
    pub unit_success: BTreeMap<SubGoal, f64>,
    pub delays: DelayLogits,
    pub edges: Vec<Edge>,
    pub episodes_used: usize,
}

/// Mutable state of one run.
pub struct Orchestrator {
    pub cfg: RunConfig,
    pub spec: Arc<TaskSpec>,
    pub hierarchy: Hierarchy,
    pub records: Vec<InterventionRecord>,
    pub scms: Vec<ScmTau>,
    pub delays: DelayLogits,
    pub edges: Vec<Edge>,
    pub metrics: Vec<MetricsRow>,
    world: World,
    agent_rng: Rng,
    world_seed: u64,
    world_episodes: u64,
    eval_seed: u64,
    eval_episodes: u64,
    episodes_used: usize,
    train_episodes: usize,
    true_delays: Vec<Option<Vec<f64>>>,
    out: Option<PathBuf>,
    stagnant: usize,
    boosted: bool,
    flushed: usize,
}

impl Orchestrator {
    /// `out`, when given, is this run's own directory.
    pub fn new(cfg: RunConfig, out: Option<PathBuf>) -> Result<Orchestrator> {
        cfg.validate()?;
        let spec = Arc::new(make_task(&cfg.world)?);
        let tau = cfg.world.tau_max;
        let mut hcfg = cfg.hierarchy.clone();
        hcfg.augment_history = cfg.variant == Variant::StateAugmentation;
        if !cfg.variant.uses_empowerment() {
            hcfg.lambda_emp = 0.0;
        }
        let (m, n) = (spec.num_vars(), spec.num_actions());
        let mut delays = DelayLogits::uniform(m, tau);
        if let Some(k) = cfg.kappa {
            delays = delays.restrict_support(k)?;
        }
        let world = World::new(Arc::clone(&spec), tau, cfg.world.horizon(), 0)?;
        if let Some(dir) = &out {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
            let mut f = File::create(dir.join("metrics.csv"))?;
            writeln!(f, "{METRICS_SCHEMA}")?;
            writeln!(f, "{}", MetricsRow::header(&spec))?;
        }
        Ok(Orchestrator {
            true_delays: spec.true_delays(tau)?,
            hierarchy: Hierarchy::new(m, n, tau, hcfg),
            records: Vec::new(),
            scms: Vec::new(),
            delays,
            edges: Vec::new(),
            metrics: Vec::new(),
            world,
            agent_rng: seeded(derive(cfg.seed, stream::AGENT)),
            world_seed: derive(cfg.seed, stream::WORLD),
            world_episodes: 0,
            eval_seed: derive(cfg.seed, stream::EVAL),
            eval_episodes: 0,
            episodes_used: 0,
            train_episodes: 0,
            out,
            stagnant: 0,
            boosted: false,
            flushed: 0,
            spec,
            cfg,
        })
    }

    pub fn episodes_used(&self) -> usize {
        self.episodes_used
    }

    fn budget_left(&self) -> bool {
        self.episodes_used < self.cfg.episode_budget
    }

    fn reset_world(&mut self) {
        let s = derive(self.world_seed, self.world_episodes);
        self.world_episodes += 1;
        self.world.reset(s);
    }

    fn eval_world(&self, k: u64) -> Result<World> {
        let mut w = self.world.clone();
        w.reset(derive(self.eval_seed, k));
        Ok(w)
    }

    pub fn waits(&self) -> WaitPolicy {
        match self.cfg.variant {
            Variant::StateAugmentation => WaitPolicy::Zero,
            _ => WaitPolicy::Learned(self.delays.clone()),
        }
    }

    /// Delay beliefs imposed by the prior variants, if any.
    fn prior_delays(&self) -> Result<Option<DelayLogits>> {
        let tau = self.cfg.world.tau_max;
        let m = self.spec.num_vars();
        let lags: Vec<usize> = match self.cfg.variant {
            Variant::PriorFixed => (0..m)
                .map(|v| self.spec.delay_params(v).map_or(1, |(mu, _)| (mu.round() as usize).clamp(1, tau)))
                .collect(),
            Variant::PriorUniform => vec![tau; m],
            _ => return Ok(None),
        };
        Ok(Some(DelayLogits::point_mass(&lags, tau, PRIOR_LOGIT)?))
    }

    /// Run intervention episodes for every entry of the intervention list.
    pub fn collect_interventions(&mut self, per_target: usize) -> Result<usize> {
        let targets: Vec<Command> = self.hierarchy.list_do.iter().copied().collect();
        let warmups: Vec<SubGoal> = targets
            .iter()
            .filter_map(|c| match c {
                Command::Achieve(g) => Some(*g),
                Command::Act(_) => None,
            })
            .collect();
        let waits = self.waits();
        let tau = self.cfg.world.tau_max;
        let n_actions = self.spec.num_actions();
        let mut kept = 0;
        for &target in &targets {
            for _ in 0..per_target {
                if !self.budget_left() {
                    return Ok(kept);
                }
                self.episodes_used += 1;
                self.reset_world();
                let rng = &mut self.agent_rng;
                let k = if warmups.is_empty() { 0 } else { rng.gen_range(0..=2) };
                for _ in 0..k {
                    let g = *warmups.choose(rng).unwrap();
                    self.hierarchy.execute(Command::Achieve(g), &mut self.world, rng, &waits)?;
                }
                if k > 0 {
                    settle(&mut self.world, tau)?;
                }
                let action = match target {
                    Command::Act(a) => a,
                    Command::Achieve(_) => {
                        if !self.hierarchy.execute(target, &mut self.world, rng, &waits)? {
                            continue;
                        }
                        settle(&mut self.world, tau)?;
                        rng.gen_range(0..n_actions)
                    }
                };
                if self.world.finished() {
                    continue;
                }
                let cause_state = self.world.state().clone();
                let mut trace = Vec::with_capacity(tau);
                self.world.step(action)?;
                trace.push(self.world.state().clone());
                while trace.len() < tau && !self.world.finished() {
                    self.world.idle()?;
                    trace.push(self.world.state().clone());
                }
                self.records.push(InterventionRecord {
                    target,
                    cause_state,
                    action,
                    trace,
                });
                kept += 1;
            }
        }
        Ok(kept)
    }

    /// Refit every per-lag model on all records so far and return the
    /// accepted, acyclic edge set.
    pub fn fit_structure(&mut self, round: usize) -> Result<Vec<Edge>> {
        let support = self.cfg.support();
        let (m, n) = (self.spec.num_vars(), self.spec.num_actions());
        let data = Dataset::build(&self.records, m, n, &support, self.cfg.stride());
        let scm_seed = derive(self.cfg.seed, stream::SCM);
        let mut scms = Vec::with_capacity(support.len());
        for lag_data in &data.lags {
            let mut scm = ScmTau::new(lag_data.lag, m, n);
            let mut rng = seeded(derive(scm_seed, (round * 1024 + lag_data.lag) as u64));
            scm.train(lag_data, &data.events, &self.cfg.scm, &mut rng)?;
            scms.push(scm);
        }
        let edges: Vec<Edge> = scms
            .iter()
            .flat_map(|s| s.accepted_edges(self.cfg.scm.threshold))
            .collect();
        self.scms = scms;
        Ok(prune_cycles(&edges, m))
    }

    /// Learn delay distributions from the current per-lag models.
    pub fn fit_delays(&mut self, round: usize) -> Result<()> {
        let tau = self.cfg.world.tau_max;
        let (m, n) = (self.spec.num_vars(), self.spec.num_actions());
        let cand = candidate_causes(&self.edges, m, m + n);
        let ev = DelayEvidence::from_scms(&self.scms, &cand, &self.cfg.support(), tau)?;
        let mut d = DelayLogits::uniform(m, tau);
        if let Some(k) = self.cfg.kappa {
            d = d.restrict_support(k)?;
        }
        let mut rng = seeded(derive(derive(self.cfg.seed, stream::DELAY), round as u64));
        train_delay(&mut d, &ev, &self.cfg.delay, &mut rng)?;
        self.delays = match self.prior_delays()? {
            Some(p) => p,
            None => d,
        };
        Ok(())
    }

    fn task_rollout(&mut self) -> Result<(bool, f64)> {
        let k = self.eval_episodes;
        self.eval_episodes += 1;
        let mut w = self.eval_world(k)?;
        let mut rng = seeded(derive(self.eval_seed ^ 0x5A5A, k));
        let ok = self.hierarchy.run_task(self.spec.goal, &mut w, &mut rng, &self.waits())?;
        Ok((ok, adc(&self.spec, w.state())))
    }

    fn push_metrics(&mut self, episode: usize) -> Result<()> {
        let (success, d) = self.task_rollout()?;
        let kl = self.current_kl()?;
        self.metrics.push(MetricsRow {
            episode,
            variant: self.cfg.variant.label(self.cfg.kappa),
            seed: self.cfg.seed,
            success,
            adc: d,
            kl,
        });
        Ok(())
    }

    /// Empty for variants without a delay belief.
    pub fn current_kl(&self) -> Result<Vec<(usize, f64)>> {
        if self.cfg.variant == Variant::StateAugmentation {
            return Ok(Vec::new());
        }
        kl_per_effect(&self.true_delays, &self.delays)
    }

    /// Train every training unit in level order, promoting after each.
    pub fn train_units(&mut self) -> Result<BTreeMap<SubGoal, f64>> {
        let waits = self.waits();
        let scms = std::mem::take(&mut self.scms);
        let support = self.cfg.support();
        let delays = self.delays.clone();
        let models = EffectModels {
            scms: &scms,
            lags: &support,
            delays: &delays,
        };
        let hc = self.hierarchy.cfg.clone();
        let result = (|| -> Result<()> {
            for goal in self.hierarchy.training_goals() {
                if let Some(u) = self.hierarchy.units.get_mut(&goal) {
                    u.round_episodes = 0;
                }
                loop {
                    let u = &self.hierarchy.units[&goal];
                    let converged = u.window.len() >= hc.window && u.success_ratio() >= hc.target_success;
                    if converged || u.round_episodes >= hc.max_round_episodes || !self.budget_left() {
                        break;
                    }
                    self.episodes_used += 1;
                    self.train_episodes += 1;
                    self.reset_world();
                    self.hierarchy.train_episode(
                        goal,
                        &mut self.world,
                        &mut self.agent_rng,
                        &waits,
                        Some(models),
                    )?;
                    if self.hierarchy.units[&goal].round_episodes % hc.eval_every == 0 {
                        let k = self.eval_episodes;
                        self.eval_episodes += 1;
                        let mut w = self.eval_world(k)?;
                        let mut rng = seeded(derive(self.eval_seed ^ 0xA5A5, k));
                        let ok = self.hierarchy.evaluate_unit(goal, &mut w, &mut rng, &waits)?;
                        self.hierarchy.record_eval(goal, ok);
                    }
                    if self.train_episodes % self.cfg.task_eval_every == 0 {
                        self.push_metrics(self.episodes_used)?;
                    }
                }
                self.hierarchy.promote();
            }
            Ok(())
        })();
        self.scms = scms;
        result?;
        Ok(self
            .hierarchy
            .units
            .iter()
            .map(|(g, u)| (*g, u.success_ratio()))
            .collect())
    }

    /// One full round.
    pub fn run_round(&mut self, round: usize) -> Result<RoundState> {
        let mut timings = RoundTimings::default();
        let clock = Instant::now();
        let boost = if self.boosted { 2 } else { 1 };
        self.collect_interventions(self.cfg.interventions_per_target * boost)?;
        timings.interventions = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let known_effects = effect_set(&self.edges);
        self.edges = self.fit_structure(round)?;
        timings.scm = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        self.fit_delays(round)?;
        timings.delay = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let before: Vec<SubGoal> = self
            .hierarchy
            .units
            .iter()
            .filter(|(g, _)| self.hierarchy.is_promoted(**g))
            .map(|(g, _)| *g)
            .collect();
        let mut success = BTreeMap::new();
        if !self.edges.is_empty() {
            self.hierarchy.build_round(&self.edges)?;
            success = self.train_units()?;
        }
        timings.training = clock.elapsed().as_secs_f64();
        let promoted: Vec<SubGoal> = self
            .hierarchy
            .units
            .keys()
            .filter(|g| self.hierarchy.is_promoted(**g) && !before.contains(g))
            .copied()
            .collect();

        let new_effects = effect_set(&self.edges).difference(&known_effects).count();
        if new_effects == 0 && promoted.is_empty() {
            self.stagnant += 1;
            if !self.boosted {
                self.boosted = true;
            }
            if self.stagnant >= 3 {
                log::warn!("no new edges or promotions for {} rounds", self.stagnant);
            }
        } else {
            self.stagnant = 0;
        }

        let state = RoundState {
            round,
            list_do: self.hierarchy.list_do.iter().copied().collect(),
            records: self.records.len(),
            edges: self.edges.clone(),
            delays: self.delays.clone(),
            success,
            promoted,
            episodes_used: self.episodes_used,
            timings,
        };
        self.write_round(&state)?;
        Ok(state)
    }

    fn write_round(&mut self, st: &RoundState) -> Result<()> {
        let Some(dir) = self.out.clone() else {
            self.flushed = self.metrics.len();
            return Ok(());
        };
        let r = st.round;
        write_edges_csv(
            BufWriter::new(File::create(dir.join(format!("round_{r}_edges.csv")))?),
            &self.spec,
            &st.edges,
        )?;
        write_beta_csv(
            BufWriter::new(File::create(dir.join(format!("round_{r}_beta.csv")))?),
            &self.spec,
            &st.delays,
        )?;
        fs::write(
            dir.join(format!("round_{r}_hierarchy.json")),
            serde_json::to_string_pretty(&self.hierarchy.snapshot(&self.spec))?,
        )?;
        self.flush_metrics()
    }

    fn flush_metrics(&mut self) -> Result<()> {
        if let Some(dir) = &self.out {
            let mut f = BufWriter::new(OpenOptions::new().append(true).open(dir.join("metrics.csv"))?);
            for row in &self.metrics[self.flushed..] {
                writeln!(f, "{}", row.to_csv())?;
            }
            f.flush()?;
        }
        self.flushed = self.metrics.len();
        Ok(())
    }

    /// Rounds until completion or budget, then final evaluation.
    pub fn run(mut self) -> Result<RunOutcome> {
        let goal = SubGoal::up(self.spec.goal);
        let mut rounds = Vec::new();
        let mut status = RunStatus::RoundLimit;
        for r in 0..self.cfg.max_rounds {
            rounds.push(self.run_round(r)?);
            if self.hierarchy.is_promoted(goal) {
                status = RunStatus::Completed;
                break;
            }
            if !self.budget_left() {
                status = RunStatus::BudgetExhausted;
                break;
            }
            if self.stagnant >= 3 {
                break;
            }
        }
        let first = self.metrics.len();
        for _ in 0..self.cfg.final_rollouts {
            self.push_metrics(self.episodes_used)?;
        }
        let last = &self.metrics[first..];
        let n = last.len().max(1) as f64;
        let asr = last.iter().filter(|m| m.success).count() as f64 / n;
        let adc_mean = last.iter().map(|m| m.adc).sum::<f64>() / n;
        self.flush_metrics()?;

        let waits = self.waits();
        let goals: Vec<SubGoal> = self.hierarchy.units.keys().copied().collect();
        let mut unit_success = BTreeMap::new();
        for g in goals {
            let mut ok = 0;
            for _ in 0..self.cfg.final_rollouts {
                let k = self.eval_episodes;
                self.eval_episodes += 1;
                let mut w = self.eval_world(k)?;
                let mut rng = seeded(derive(self.eval_seed ^ 0x3C3C, k));
                if self.hierarchy.evaluate_unit(g, &mut w, &mut rng, &waits)? {
                    ok += 1;
                }
            }
            unit_success.insert(g, ok as f64 / self.cfg.final_rollouts.max(1) as f64);
        }
        if status != RunStatus::Completed {
            log::warn!("run ended without promoting the task goal ({status:?})");
        }
        Ok(RunOutcome {
            status,
            kl: self.current_kl()?,
            rounds,
            metrics: self.metrics,
            asr,
            adc: adc_mean,
            unit_success,
            delays: self.delays,
            edges: self.edges,
            episodes_used: self.episodes_used,
        })
    }
}

fn effect_set(edges: &[Edge]) -> std::collections::BTreeSet<usize> {
    edges.iter().map(|e| e.effect).collect()
}

fn settle(world: &mut World, steps: usize) -> Result<()> {
    for _ in 0..steps {
        if world.finished() {
            break;
        }
        world.idle()?;
    }
    Ok(())
}

/// Convenience: build and run one configuration.
pub fn run(cfg: RunConfig, out: Option<PathBuf>) -> Result<RunOutcome> {
    Orchestrator::new(cfg, out)?.run()
}
