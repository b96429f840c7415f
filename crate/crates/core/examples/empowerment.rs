//! Delay-weighted empowerment on small hand-made channels, and how the
//! advantage update shifts a softmax policy toward the option that matters.

use causal_delay_hrl::empowerment::{
    empowerment_exact, empowerment_mc, normalize_advantages, pointwise_gain, SoftmaxTable,
};
use causal_delay_hrl::rng::seeded;
use rand::Rng as _;

fn main() -> causal_delay_hrl::Result<()> {
    // outcome tables: [lag][option][no increase, increase]
    let lag1 = vec![vec![0.9, 0.1], vec![0.9, 0.1], vec![0.9, 0.1]];
    let lag3 = vec![vec![0.05, 0.95], vec![0.9, 0.1], vec![0.9, 0.1]];
    let tables = vec![lag1, lag3];
    let pi = [1.0 / 3.0; 3];
    let mut rng = seeded(1);

    for w in [[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]] {
        let exact = empowerment_exact(&pi, &tables, &w)?;
        let mc = empowerment_mc(&pi, &tables, &w, 20_000, &mut rng)?;
        println!(
            "delay weights {w:?}: exact {:.4} nats, MC {:.4} (+/- {:.4})",
            exact.value,
            mc.value,
            mc.variance.sqrt()
        );
    }

    // only the lag-3 model matters once the delay is known
    let w = [0.0, 1.0];
    let mut table = SoftmaxTable::new(3);
    for step in 0..=300 {
        let p = table.probs(0);
        if step % 50 == 0 {
            let e = empowerment_exact(&p, &tables, &w)?.value;
            println!("step {step:>3}: pi = [{:.3} {:.3} {:.3}]  empowerment {e:.4}", p[0], p[1], p[2]);
        }
        let gains = pointwise_gain(&p, &tables, &w)?;
        let picks: Vec<usize> = (0..8)
            .map(|_| {
                let u: f64 = rng.gen();
                if u < p[0] {
                    0
                } else if u < p[0] + p[1] {
                    1
                } else {
                    2
                }
            })
            .collect();
        let mut adv: Vec<f64> = picks.iter().map(|&o| gains[o]).collect();
        normalize_advantages(&mut adv);
        for (&o, a) in picks.iter().zip(adv) {
            table.update(0, o, a, 0.02)?;
        }
    }
    Ok(())
}
