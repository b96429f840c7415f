//! Run the whole pipeline once and print what each round found.
//!
//! ```text
//! cargo run --release --example full_run -- [variant] [seed] [tau_max] [sigma]
//! ```

use causal_delay_hrl::bench::Variant;
use causal_delay_hrl::orchestrator::{Orchestrator, RunConfig};
use causal_delay_hrl::scm::cause_name;

fn main() -> causal_delay_hrl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = RunConfig::default();
    if let Some(v) = args.get(1) {
        cfg.variant = v.parse::<Variant>()?;
        if cfg.variant == Variant::Simplified {
            cfg.kappa = Some(4);
        }
    }
    cfg.seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    if let Some(t) = args.get(3).and_then(|s| s.parse().ok()) {
        cfg.world.tau_max = t;
    }
    if let Some(s) = args.get(4).and_then(|s| s.parse().ok()) {
        cfg.world.sigma_delay = s;
    }

    let orch = Orchestrator::new(cfg, None)?;
    let spec = orch.spec.clone();
    let out = orch.run()?;
    for r in &out.rounds {
        println!(
            "round {} | records {} | episodes {} | promoted {:?}",
            r.round,
            r.records,
            r.episodes_used,
            r.promoted.iter().map(|g| g.name(&spec)).collect::<Vec<_>>()
        );
        for (g, s) in &r.success {
            print!(" {}={:.2}", g.name(&spec), s);
        }
        println!();
        println!(
            "  time: interventions {:.2}s scm {:.2}s delay {:.2}s training {:.2}s",
            r.timings.interventions, r.timings.scm, r.timings.delay, r.timings.training
        );
        for e in &r.edges {
            println!(
                "  {:>18} -> {:<13} lag {} p={:.3}",
                cause_name(&spec, e.cause),
                spec.variables[e.effect],
                e.lag,
                e.prob
            );
        }
    }
    println!("status {:?}", out.status);
    println!("ASR {:.3}  ADC {:.3}", out.asr, out.adc);
    for (v, k) in &out.kl {
        let p: Vec<String> = out.delays.distribution(*v).iter().map(|x| format!("{x:.2}")).collect();
        println!("  KL {:<13} {:.4}  learned [{}]", spec.variables[*v], k, p.join(" "));
    }
    for (g, s) in &out.unit_success {
        println!("  unit {:<20} {:.2}", g.name(&spec), s);
    }
    Ok(())
}
