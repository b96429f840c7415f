//! Compare every variant on one setting. Columns are medians over seeds.
//!
//! ```text
//! cargo run --release --example variant_sweep -- [tau_max] [sigma] [seeds]
//! ```

use causal_delay_hrl::bench::{median, Experiment, Variant, ALL_VARIANTS};
use causal_delay_hrl::orchestrator::RunConfig;

fn main() -> causal_delay_hrl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut base = RunConfig::default();
    base.world.tau_max = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    base.world.sigma_delay = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.4);
    let seeds: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    base.kappa = Some(4.min(base.world.tau_max));

    let exp = Experiment {
        base,
        variants: ALL_VARIANTS.to_vec(),
        seeds: (0..seeds).collect(),
        out: None,
    };
    let results = exp.run()?;
    println!("{:<26} {:>8} {:>8} {:>10}", "variant", "ASR", "ADC", "KL");
    for v in ALL_VARIANTS {
        let label = v.label(if v == Variant::Simplified { exp.base.kappa } else { None });
        let rs: Vec<_> = results.iter().filter(|r| r.variant == label).collect();
        let asr = median(&rs.iter().map(|r| r.asr).collect::<Vec<_>>());
        let adc = median(&rs.iter().map(|r| r.adc).collect::<Vec<_>>());
        let kl = median(&rs.iter().flat_map(|r| r.kl.iter().map(|k| k.1)).collect::<Vec<_>>());
        let kl = if kl.is_nan() { "-".to_string() } else { format!("{kl:.3}") };
        println!("{label:<26} {asr:>8.3} {adc:>8.3} {kl:>10}");
    }
    Ok(())
}
