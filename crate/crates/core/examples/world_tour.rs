//! Walk through GetSilverore by hand and watch delayed effects land.
//!
//! ```text
//! cargo run --example world_tour -- [tau_max] [sigma]
//! ```

use std::sync::Arc;

use causal_delay_hrl::world::{builtin_task, discretize_delay, World};

fn main() -> causal_delay_hrl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let tau: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let sigma: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.8);
    let spec = Arc::new(builtin_task("GetSilverore")?.with_sigma(sigma));
    spec.validate(tau)?;

    println!("delay tables (tau_max {tau}, sigma {sigma})");
    for r in &spec.rules {
        let p = discretize_delay(r.delay_mean, r.delay_sigma, tau)?;
        let cells: Vec<String> = p.iter().map(|x| format!("{x:.2}")).collect();
        println!("  {:<13} mu {:.0}  [{}]", spec.variables[r.effect], r.delay_mean, cells.join(" "));
    }

    let mut world = World::new(spec.clone(), tau, 200, 42)?;
    let plan = [
        "collect_wood",
        "collect_stone",
        "craft_stick",
        "craft_stonepickaxe",
        "mine_silverore",
    ];
    println!("\n  t  action               state {:?}", spec.variables);
    for name in plan {
        let a = spec.action_index(name).expect("built-in action");
        // retry until the action has an effect in flight
        loop {
            let (s, t) = world.step(a)?;
            println!("{t:>3}  {name:<20} {:?}", s.counts());
            if !world.pending().is_empty() {
                break;
            }
        }
        while !world.pending().is_empty() {
            let (s, t) = world.idle()?;
            println!("{t:>3}  {:<20} {:?}", "(idle)", s.counts());
        }
    }
    println!("\nsilverore reached at t = {}", world.t());
    Ok(())
}
