use std::fs;
use std::path::Path;
use std::process::Command;

use causal_delay_hrl::bench::{Experiment, Variant};
use causal_delay_hrl::hierarchy::SubGoal;
use causal_delay_hrl::orchestrator::{run, RunConfig, RunStatus};

fn quick(variant: Variant, kappa: Option<usize>, seed: u64) -> RunConfig {
    let mut c = RunConfig {
        variant,
        kappa,
        seed,
        final_rollouts: 30,
        ..RunConfig::default()
    };
    c.world.tau_max = 4;
    c
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let ra = run(quick(Variant::Dechrl, None, 4), Some(a.clone())).unwrap();
    let rb = run(quick(Variant::Dechrl, None, 4), Some(b.clone())).unwrap();
    assert_eq!(ra.asr, rb.asr);
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.iter().any(|(n, _)| n == "metrics.csv"));
    assert!(fa.iter().any(|(n, _)| n == "round_0_edges.csv"));
    assert_eq!(fa, fb);
}

#[test]
fn getsilverore_completes_at_tau_four() {
    let out = run(quick(Variant::Dechrl, None, 1), None).unwrap();
    assert_eq!(out.status, RunStatus::Completed);
    assert!(out.asr >= 0.9);
    let mut effects: Vec<usize> = out.edges.iter().map(|e| e.effect).collect();
    effects.sort();
    effects.dedup();
    assert_eq!(effects, vec![0, 1, 2, 3, 4]);
    assert!(out.unit_success[&SubGoal::up(4)] >= 0.9);
}

fn drop_variant_column(csv: &[u8]) -> String {
    String::from_utf8(csv.to_vec())
        .unwrap()
        .lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            if cols.len() > 1 {
                cols.remove(1);
            }
            cols.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn stride_one_simplified_matches_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let simple = tmp.path().join("simple");
    run(quick(Variant::Dechrl, None, 2), Some(full.clone())).unwrap();
    run(quick(Variant::Simplified, Some(1), 2), Some(simple.clone())).unwrap();
    let (ff, fs_) = (files(&full), files(&simple));
    assert_eq!(ff.len(), fs_.len());
    for ((na, a), (nb, b)) in ff.iter().zip(&fs_) {
        assert_eq!(na, nb);
        match na.as_str() {
            "config.toml" => {}
            "metrics.csv" => assert_eq!(drop_variant_column(a), drop_variant_column(b)),
            _ => assert_eq!(a, b, "{na}"),
        }
    }
}

#[test]
fn tiny_budget_returns_partial_results() {
    let mut c = quick(Variant::Dechrl, None, 0);
    c.episode_budget = 50;
    c.final_rollouts = 5;
    let out = run(c, None).unwrap();
    assert_eq!(out.status, RunStatus::BudgetExhausted);
    assert_eq!(out.rounds.len(), 1);
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let c = quick(Variant::Simplified, Some(2), 9);
    let text = c.to_toml().unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("run.toml");
    fs::write(&p, &text).unwrap();
    assert_eq!(RunConfig::load(&p).unwrap(), c);

    fs::write(&p, "seed = 3\n[world]\ntau_max = 6\n").unwrap();
    let partial = RunConfig::load(&p).unwrap();
    assert_eq!((partial.seed, partial.world.tau_max), (3, 6));
    assert_eq!(partial.scm, RunConfig::default().scm);

    fs::write(&p, "seeed = 3\n").unwrap();
    assert!(RunConfig::load(&p).is_err());
}

#[test]
fn kappa_rules() {
    assert!(quick(Variant::Dechrl, Some(2), 0).validate().is_err());
    assert!(quick(Variant::Simplified, None, 0).validate().is_err());
    assert!(quick(Variant::Simplified, Some(5), 0).validate().is_err());
    assert!(quick(Variant::Simplified, Some(2), 0).validate().is_ok());
    assert_eq!(quick(Variant::Simplified, Some(2), 0).support(), vec![2, 4]);
}

#[test]
fn experiment_writes_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = Experiment {
        base: quick(Variant::Dechrl, None, 0),
        variants: vec![Variant::Dechrl, Variant::StateAugmentation],
        seeds: vec![0],
        out: Some(tmp.path().to_path_buf()),
    };
    let results = exp.run().unwrap();
    assert_eq!(results.len(), 2);
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("variant,seeds,asr_mean"));
    assert!(summary.contains("\nstate-augmentation,1,"));
    assert!(tmp.path().join("dechrl/seed_0/metrics.csv").exists());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_delay-hrl"))
}

#[test]
fn cli_rejects_kappa_without_simplified() {
    let tmp = tempfile::tempdir().unwrap();
    let st = cli()
        .args(["--kappa", "2", "--variant", "dechrl", "--seeds", "1", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("--kappa"));
    let bad = cli().args(["--variant", "nonsense"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn cli_runs_one_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("base.toml");
    fs::write(&cfg, "final_rollouts = 10\n").unwrap();
    let st = cli()
        .args(["--task", "GetSilverore", "--tau-max", "4", "--sigma-delay", "0.4", "--variant", "simplified"])
        .args(["--kappa", "2", "--seeds", "1", "--episodes", "30000", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let run_cfg = fs::read_to_string(tmp.path().join("simplified-k2/seed_0/config.toml")).unwrap();
    assert!(run_cfg.contains("kappa = 2"));
    assert!(run_cfg.contains("episode_budget = 30000"));
    assert!(tmp.path().join("summary.txt").exists());
}
