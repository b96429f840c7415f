//! Collect interventional data on GetSilverore, fit one model per lag and
//! print the accepted edges as CSV.
//!
//! ```text
//! cargo run --release --example causal_discovery -- [seed] [tau_max]
//! ```

use causal_delay_hrl::orchestrator::{Orchestrator, RunConfig};
use causal_delay_hrl::scm::write_edges_csv;

fn main() -> causal_delay_hrl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = RunConfig::default();
    cfg.seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    if let Some(t) = args.get(2).and_then(|s| s.parse().ok()) {
        cfg.world.tau_max = t;
    }
    let mut orch = Orchestrator::new(cfg, None)?;
    // round 0: only primitive actions can be intervened on
    let n = orch.collect_interventions(400)?;
    println!("# {n} intervention records");
    let edges = orch.fit_structure(0)?;
    for scm in &orch.scms {
        println!("# lag {}: {} accepted", scm.lag, scm.accepted_edges(0.5).len());
    }
    write_edges_csv(std::io::stdout().lock(), &orch.spec, &edges)?;

    let truth: Vec<String> = orch
        .spec
        .rules
        .iter()
        .map(|r| format!("{} (mu {})", orch.spec.variables[r.effect], r.delay_mean))
        .collect();
    println!("# hidden rules: {}", truth.join(", "));
    Ok(())
}
