//! Describe a task in TOML, load it and run the pipeline on it.
//!
//! ```text
//! cargo run --release --example custom_task
//! ```

use causal_delay_hrl::orchestrator::{run, RunConfig};
use causal_delay_hrl::world::TaskFile;

const TASK: &str = r#"
name = "Bread"
goal = "bread"
variables = ["wheat", "flour", "bread"]
actions = ["harvest", "mill", "bake", "rest"]

[[rules]]
effect = "wheat"
action = "harvest"
mu = 1.0

[[rules]]
effect = "flour"
action = "mill"
requires = [{ var = "wheat", consume = 1 }]
mu = 3.0

[[rules]]
effect = "bread"
action = "bake"
requires = [{ var = "flour", consume = 1 }]
mu = 4.0
sigma = 0.8
"#;

fn main() -> causal_delay_hrl::Result<()> {
    let dir = std::env::temp_dir().join("custom_task_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("bread.toml");
    std::fs::write(&path, TASK)?;
    let spec = TaskFile::load(&path)?.into_spec(0.4)?;
    println!("{} rules, goal {}", spec.rules.len(), spec.variables[spec.goal]);

    let mut cfg = RunConfig::default();
    cfg.world.task_file = Some(path);
    cfg.world.tau_max = 5;
    let out = run(cfg, Some(dir.join("run")))?;
    println!("status {:?}  ASR {:.2}  ADC {:.2}", out.status, out.asr, out.adc);
    for (v, kl) in &out.kl {
        println!("  {:<6} delay KL {kl:.3}", spec.variables[*v]);
    }
    println!("logs in {}", dir.join("run").display());
    Ok(())
}
