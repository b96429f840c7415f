//! TOML task descriptions.
//!
//! ```toml
//! name = "Toy"
//! goal = "plank"
//! variables = ["log", "plank"]
//! actions = ["chop", "saw", "wait"]
//!
//! [[rules]]
//! effect = "log"
//! action = "chop"
//! mu = 2.0
//!
//! [[rules]]
//! effect = "plank"
//! action = "saw"
//! requires = [{ var = "log", min = 1, consume = 1 }]
//! mu = 3.0
//! sigma = 0.8
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CausalRule, Cause, TaskSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub name: String,
    pub goal: String,
    pub variables: Vec<String>,
    pub actions: Vec<String>,
    #[serde(default)]
    pub rules: Vec<RuleEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleEntry {
    pub effect: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requires: Vec<Requirement>,
    #[serde(default = "one")]
    pub delta: u8,
    pub mu: f64,
    /// Falls back to the world's `sigma_delay` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Requirement {
    pub var: String,
    #[serde(default = "one")]
    pub min: u8,
    #[serde(default)]
    pub consume: u8,
}

fn one() -> u8 {
    1
}

impl TaskFile {
    pub fn load(path: &Path) -> Result<TaskFile> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<TaskFile> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn into_spec(self, default_sigma: f64) -> Result<TaskSpec> {
        let lookup = |names: &[String], n: &str, what: &str| {
            names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| Error::Config(format!("unknown {what} `{n}`")))
        };
        let mut rules = Vec::with_capacity(self.rules.len());
        for r in &self.rules {
            let mut parents = Vec::new();
            let mut consume = Vec::new();
            if let Some(a) = &r.action {
                parents.push(Cause::Action(lookup(&self.actions, a, "action")?));
                consume.push(0);
            }
            for q in &r.requires {
                parents.push(Cause::Var {
                    var: lookup(&self.variables, &q.var, "variable")?,
                    min: q.min,
                });
                consume.push(q.consume);
            }
            rules.push(CausalRule {
                effect: lookup(&self.variables, &r.effect, "variable")?,
                parents,
                consume,
                delta: r.delta,
                delay_mean: r.mu,
                delay_sigma: r.sigma.unwrap_or(default_sigma),
            });
        }
        Ok(TaskSpec {
            goal: lookup(&self.variables, &self.goal, "variable")?,
            name: self.name,
            variables: self.variables,
            actions: self.actions,
            rules,
        })
    }

    pub fn from_spec(spec: &TaskSpec) -> TaskFile {
        let rules = spec
            .rules
            .iter()
            .map(|r| {
                let mut action = None;
                let mut requires = Vec::new();
                for (p, &c) in r.parents.iter().zip(&r.consume) {
                    match *p {
                        Cause::Action(a) => action = Some(spec.actions[a].clone()),
                        Cause::Var { var, min } => requires.push(Requirement {
                            var: spec.variables[var].clone(),
                            min,
                            consume: c,
                        }),
                    }
                }
                RuleEntry {
                    effect: spec.variables[r.effect].clone(),
                    action,
                    requires,
                    delta: r.delta,
                    mu: r.delay_mean,
                    sigma: Some(r.delay_sigma),
                }
            })
            .collect();
        TaskFile {
            name: spec.name.clone(),
            goal: spec.variables[spec.goal].clone(),
            variables: spec.variables.clone(),
            actions: spec.actions.clone(),
            rules,
        }
    }
}
