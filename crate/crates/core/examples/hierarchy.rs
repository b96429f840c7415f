//! Build the subgoal hierarchy from known GetSilverore edges and train it
//! level by level with delay-aware waiting, printing each unit's progress.
//!
//! ```text
//! cargo run --release --example hierarchy -- [tau_max]
//! ```

use std::sync::Arc;

use causal_delay_hrl::delaydist::DelayLogits;
use causal_delay_hrl::hierarchy::{Hierarchy, HierarchyConfig, WaitPolicy};
use causal_delay_hrl::rng::{derive, seeded};
use causal_delay_hrl::scm::Edge;
use causal_delay_hrl::world::{builtin_task, Cause, World};

fn main() -> causal_delay_hrl::Result<()> {
    let tau: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let spec = Arc::new(builtin_task("GetSilverore")?.with_sigma(0.4));
    let m = spec.num_vars();

    // the true rule graph, as discovery would report it
    let mut edges = Vec::new();
    for r in &spec.rules {
        for p in &r.parents {
            let cause = match *p {
                Cause::Var { var, .. } => var,
                Cause::Action(a) => m + a,
            };
            edges.push(Edge { cause, effect: r.effect, lag: r.delay_mean as usize, prob: 0.99 });
        }
    }
    let lags: Vec<usize> = (0..m).map(|v| spec.delay_params(v).map_or(1, |d| d.0.round() as usize)).collect();
    let waits = WaitPolicy::Learned(DelayLogits::point_mass(&lags, tau, 10.0)?);

    let cfg = HierarchyConfig { max_round_episodes: 600, ..HierarchyConfig::default() };
    let mut h = Hierarchy::new(m, spec.num_actions(), tau, cfg);
    h.build_round(&edges)?;
    let mut world = World::new(spec.clone(), tau, 50 * tau, 0)?;
    let mut rng = seeded(7);
    let mut k = 0u64;

    for goal in h.training_goals() {
        for ep in 0..600 {
            world.reset(derive(1, k));
            k += 1;
            h.train_episode(goal, &mut world, &mut rng, &waits, None)?;
            if ep % 5 == 0 {
                world.reset(derive(2, k));
                let ok = h.evaluate_unit(goal, &mut world, &mut rng, &waits)?;
                h.record_eval(goal, ok);
            }
        }
        let promoted = h.promote();
        let u = &h.units[&goal];
        println!(
            "{:<20} level {} options {:>2}  window success {:.2}{}",
            goal.name(&spec),
            u.level,
            u.options.len(),
            u.success_ratio(),
            if promoted.contains(&goal) { "  promoted" } else { "" }
        );
    }

    let task = spec.goal;
    let mut wins = 0;
    for i in 0..100 {
        world.reset(derive(3, i));
        wins += h.run_task(task, &mut world, &mut rng, &waits)? as usize;
    }
    println!("task {} success {wins}/100", spec.variables[task]);
    Ok(())
}
