//! Run discovery rounds and compare the learned per-effect delay
//! distributions with the world's true discretized delays.
//!
//! ```text
//! cargo run --release --example delay_learning -- [seed] [tau_max] [sigma]
//! ```

use causal_delay_hrl::delaydist::write_beta_csv;
use causal_delay_hrl::orchestrator::{Orchestrator, RunConfig};

fn bar(p: f64) -> String {
    "#".repeat((p * 30.0).round() as usize)
}

fn main() -> causal_delay_hrl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = RunConfig::default();
    cfg.seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    cfg.world.tau_max = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6);
    cfg.world.sigma_delay = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.4);

    let mut orch = Orchestrator::new(cfg, None)?;
    let spec = orch.spec.clone();
    let truth = spec.true_delays(orch.cfg.world.tau_max)?;
    // each round can only see effects reachable with what is already promoted
    for round in 0..orch.cfg.max_rounds {
        let state = orch.run_round(round)?;
        let kl: Vec<String> = orch
            .current_kl()?
            .iter()
            .map(|(v, k)| format!("{}={k:.2}", spec.variables[*v]))
            .collect();
        println!("round {round}: {} edges, KL {}", state.edges.len(), kl.join(" "));
        if orch.hierarchy.is_promoted(causal_delay_hrl::hierarchy::SubGoal::up(spec.goal)) {
            break;
        }
    }

    for v in spec.effect_vars() {
        println!("\n{}", spec.variables[v]);
        let learned = orch.delays.distribution(v);
        let want = truth[v].as_ref().expect("effect variable");
        for (t, (p, q)) in learned.iter().zip(want).enumerate() {
            println!("  {:>2}  true {q:.2} {:<31} learned {p:.2} {}", t + 1, bar(*q), bar(*p));
        }
    }
    println!();
    write_beta_csv(std::io::stdout().lock(), &spec, &orch.delays)?;
    Ok(())
}
