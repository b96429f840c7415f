//! Variants, metrics and the multi-seed experiment runner.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::delaydist::DelayLogits;
use crate::error::{Error, Result};
use crate::hierarchy::SubGoal;
use crate::orchestrator::{run, RunConfig, RunStatus};
use crate::world::{make_task, Cause, FactoredState, TaskSpec};

pub const METRICS_SCHEMA: &str = "# schema: causal-delay-hrl metrics v1";

/// Lower bound on learned probabilities inside KL.
pub const KL_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Learned delays, empowerment-shaped exploration.
    #[default]
    Dechrl,
    /// Learned delays, no empowerment.
    DechrlNoEmp,
    /// Learned delays used for waiting; no empowerment.
    PriorDelayDistribution,
    /// Delay belief is a point mass at each rule's mean.
    PriorFixed,
    /// Delay belief is a point mass at `tau_max`.
    PriorUniform,
    /// No delay belief and no waiting; abstract states carry recent options.
    StateAugmentation,
    /// Lags restricted to multiples of `kappa`.
    Simplified,
}

pub const ALL_VARIANTS: [Variant; 7] = [
    Variant::Dechrl,
    Variant::DechrlNoEmp,
    Variant::PriorDelayDistribution,
    Variant::PriorFixed,
    Variant::PriorUniform,
    Variant::StateAugmentation,
    Variant::Simplified,
];

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Dechrl => "dechrl",
            Variant::DechrlNoEmp => "dechrl-noemp",
            Variant::PriorDelayDistribution => "prior-delay-distribution",
            Variant::PriorFixed => "prior-fixed",
            Variant::PriorUniform => "prior-uniform",
            Variant::StateAugmentation => "state-augmentation",
            Variant::Simplified => "simplified",
        }
    }

    pub fn label(&self, kappa: Option<usize>) -> String {
        match (self, kappa) {
            (Variant::Simplified, Some(k)) => format!("simplified-k{k}"),
            _ => self.name().to_string(),
        }
    }

    pub fn uses_empowerment(&self) -> bool {
        matches!(
            self,
            Variant::Dechrl | Variant::Simplified | Variant::PriorFixed | Variant::PriorUniform
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        ALL_VARIANTS
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// One evaluation rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub variant: String,
    pub seed: u64,
    pub success: bool,
    pub adc: f64,
    /// `(effect variable, KL)` in variable order.
    pub kl: Vec<(usize, f64)>,
}

impl MetricsRow {
    pub fn header(spec: &TaskSpec) -> String {
        let mut h = String::from("episode,variant,seed,success,adc");
        for v in spec.effect_vars() {
            h.push_str(",kl_");
            h.push_str(&spec.variables[v]);
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{:.6}",
            self.episode, self.variant, self.seed, self.success as u8, self.adc
        );
        for (_, k) in &self.kl {
            s.push_str(&format!(",{k:.6}"));
        }
        s
    }
}

/// Success ratio over the last 100 rows. The flag is set when fewer than
/// 100 rows exist.
pub fn asr(rows: &[MetricsRow]) -> (f64, bool) {
    let tail = &rows[rows.len().saturating_sub(100)..];
    if tail.is_empty() {
        return (0.0, true);
    }
    let ok = tail.iter().filter(|r| r.success).count() as f64;
    (ok / tail.len() as f64, tail.len() < 100)
}

/// Mean distance-to-completion over the last 100 rows.
pub fn adc_mean(rows: &[MetricsRow]) -> f64 {
    let tail = &rows[rows.len().saturating_sub(100)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|r| r.adc).sum::<f64>() / tail.len() as f64
}

/// Ground-truth number of rule firings still needed to obtain the goal.
pub fn adc(spec: &TaskSpec, state: &FactoredState) -> f64 {
    fn need(spec: &TaskSpec, state: &FactoredState, v: usize, depth: usize) -> f64 {
        if state.present(v) {
            return 0.0;
        }
        if depth > spec.num_vars() {
            return f64::INFINITY;
        }
        spec.rules
            .iter()
            .filter(|r| r.effect == v)
            .map(|r| {
                1.0 + r
                    .parents
                    .iter()
                    .filter_map(|p| match *p {
                        Cause::Var { var, .. } => Some(need(spec, state, var, depth + 1)),
                        Cause::Action(_) => None,
                    })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }
    need(spec, state, spec.goal, 0)
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "distributions over {} and {} lags",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b.max(KL_FLOOR)).ln())
        .sum())
}

/// `KL(true || learned)` for every variable that has a true delay.
pub fn kl_per_effect(truth: &[Option<Vec<f64>>], learned: &DelayLogits) -> Result<Vec<(usize, f64)>> {
    if truth.len() != learned.num_vars() {
        return Err(Error::Dimension(format!(
            "{} true rows for {} learned",
            truth.len(),
            learned.num_vars()
        )));
    }
    truth
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.as_ref().map(|p| (i, p)))
        .map(|(i, p)| Ok((i, kl_divergence(p, &learned.distribution(i))?)))
        .collect()
}

/// Result of one (variant, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub variant: String,
    pub seed: u64,
    pub status: RunStatus,
    pub asr: f64,
    pub adc: f64,
    pub kl: Vec<(usize, f64)>,
    pub unit_success: Vec<(SubGoal, f64)>,
    pub episodes: usize,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    /// Base configuration; variant, kappa and seed are overwritten per run.
    pub base: RunConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

impl Experiment {
    pub fn configs(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &v in &self.variants {
            for &s in &self.seeds {
                let mut c = self.base.clone();
                c.variant = v;
                if v != Variant::Simplified {
                    c.kappa = None;
                }
                c.seed = s;
                out.push(c);
            }
        }
        out
    }

    pub fn run(&self) -> Result<Vec<SeedResult>> {
        let spec = make_task(&self.base.world)?;
        let mut results = Vec::new();
        for cfg in self.configs() {
            let label = cfg.variant.label(cfg.kappa);
            let dir = self
                .out
                .as_ref()
                .map(|o| o.join(&label).join(format!("seed_{}", cfg.seed)));
            log::info!("running {label} seed {}", cfg.seed);
            let seed = cfg.seed;
            let o = run(cfg, dir)?;
            results.push(SeedResult {
                variant: label,
                seed,
                status: o.status,
                asr: o.asr,
                adc: o.adc,
                kl: o.kl,
                unit_success: o.unit_success.into_iter().collect(),
                episodes: o.episodes_used,
            });
        }
        if let Some(out) = &self.out {
            write_summary(out, &spec, &results)?;
        }
        Ok(results)
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Write `summary.csv` and a plain-text table into `out`.
pub fn write_summary(out: &Path, spec: &TaskSpec, results: &[SeedResult]) -> Result<()> {
    fs::create_dir_all(out)?;
    let effects = spec.effect_vars();
    let mut labels: Vec<&str> = Vec::new();
    for r in results {
        if !labels.contains(&r.variant.as_str()) {
            labels.push(&r.variant);
        }
    }
    let mut csv = BufWriter::new(File::create(out.join("summary.csv"))?);
    let mut head = String::from("variant,seeds,asr_mean,asr_median,adc_mean,adc_median");
    for &e in &effects {
        head.push_str(&format!(",kl_{}_median", spec.variables[e]));
    }
    writeln!(csv, "{head}")?;
    let mut txt = BufWriter::new(File::create(out.join("summary.txt"))?);
    writeln!(txt, "{:<28} {:>5} {:>8} {:>8} {:>8}", "variant", "seeds", "ASR mean", "ADC mean", "KL median")?;
    for label in labels {
        let rs: Vec<&SeedResult> = results.iter().filter(|r| r.variant == label).collect();
        let asrs: Vec<f64> = rs.iter().map(|r| r.asr).collect();
        let adcs: Vec<f64> = rs.iter().map(|r| r.adc).collect();
        let mut line = format!(
            "{label},{},{:.4},{:.4},{:.4},{:.4}",
            rs.len(),
            mean(&asrs),
            median(&asrs),
            mean(&adcs),
            median(&adcs)
        );
        let mut kls = Vec::new();
        for &e in &effects {
            let k: Vec<f64> = rs
                .iter()
                .filter_map(|r| r.kl.iter().find(|(v, _)| *v == e).map(|x| x.1))
                .collect();
            let m = median(&k);
            if m.is_nan() {
                kls.push("-".to_string());
                line.push(',');
            } else {
                kls.push(format!("{m:.3}"));
                line.push_str(&format!(",{m:.6}"));
            }
        }
        writeln!(csv, "{line}")?;
        writeln!(
            txt,
            "{:<28} {:>5} {:>8.3} {:>8.3} {:>8}",
            label,
            rs.len(),
            mean(&asrs),
            mean(&adcs),
            kls.join("/")
        )?;
    }
    csv.flush()?;
    txt.flush()?;
    Ok(())
}
