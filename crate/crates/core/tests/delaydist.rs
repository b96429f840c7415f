use causal_delay_hrl::bench::kl_divergence;
use causal_delay_hrl::delaydist::{
    delay_step, hypothesis_loglik, regularizer_grad, score_grad, train_delay, write_beta_csv, DelayConfig,
    DelayEvidence, DelayHypothesis, DelayLogits,
};
use causal_delay_hrl::rng::seeded;
use causal_delay_hrl::scm::ScmTau;
use causal_delay_hrl::world::builtin_task;
use proptest::prelude::*;
use rand::Rng as _;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn softmax_rows() {
    let mut d = DelayLogits::uniform(1, 4);
    assert!(close(&d.distribution(0), &[0.25; 4], 1e-12));
    d.beta[0][1] = 2f64.ln();
    assert!(close(&d.distribution(0), &[0.2, 0.4, 0.2, 0.2], 1e-12));
}

#[test]
fn stride_supports() {
    let d = DelayLogits::uniform(2, 8);
    assert_eq!(d.restrict_support(1).unwrap(), d);
    let k4 = d.restrict_support(4).unwrap();
    assert_eq!(k4.support_lags(), vec![4, 8]);
    assert!(close(&k4.distribution(1), &[0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5], 1e-12));
    let long = DelayLogits::uniform(1, 30).restrict_support(4).unwrap();
    assert_eq!(long.support_lags(), (1..=7).map(|k| 4 * k).collect::<Vec<_>>());
    assert!(d.restrict_support(9).is_err());
    assert!(d.restrict_support(0).is_err());
}

fn scm_with(lag: usize, probs: &[f64]) -> ScmTau {
    // one effect (variable 0), causes: itself plus one action per entry of `probs`
    let mut s = ScmTau::new(lag, 1, probs.len());
    for (j, &p) in probs.iter().enumerate() {
        s.eta[0][1 + j] = (p / (1.0 - p)).ln();
    }
    s
}

#[test]
fn evidence_and_loglik_reference_values() {
    let scms = vec![scm_with(1, &[0.5, 0.5]), scm_with(2, &[0.3, 0.9])];
    let ev = DelayEvidence::from_scms(&scms, &[0b110], &[1, 2], 2).unwrap();
    let l1 = hypothesis_loglik(&DelayHypothesis(vec![1]), &ev).unwrap();
    let l2 = hypothesis_loglik(&DelayHypothesis(vec![2]), &ev).unwrap();
    assert!((l1[0] - 0.5f64.ln()).abs() < 1e-12);
    assert!((l2[0] - 0.9f64.ln()).abs() < 1e-12);
    let certain = DelayEvidence { log_ev: vec![vec![0.0, -1.0]] };
    assert_eq!(hypothesis_loglik(&DelayHypothesis(vec![1]), &certain).unwrap(), vec![0.0]);
    // no model at lag 3
    assert!(DelayEvidence::from_scms(&scms, &[0b110], &[1, 3], 3).is_err());
}

#[test]
fn regularizer_matches_finite_differences() {
    let mut rng = seeded(17);
    let beta: Vec<Vec<f64>> = (0..2).map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let (l1, l2) = (0.05, 0.05);
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let reg = |b: &[Vec<f64>]| -> f64 {
        b.iter()
            .flatten()
            .map(|&x| -l1 * sig(x) * (1.0 - sig(x)) + l2 * sig(x))
            .sum()
    };
    let g = regularizer_grad(&beta, l1, l2);
    let h = 1e-5;
    for i in 0..2 {
        for t in 0..4 {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[i][t] += h;
            dn[i][t] -= h;
            let fd = (reg(&up) - reg(&dn)) / (2.0 * h);
            assert!((fd - g[i][t]).abs() < 1e-6, "{fd} vs {}", g[i][t]);
        }
    }
    assert!(regularizer_grad(&beta, 0.0, 0.0).iter().flatten().all(|&x| x == 0.0));
    assert_eq!(regularizer_grad(&[vec![0.0]], 1.0, 0.0)[0][0], 0.0);
}

#[test]
fn score_gradient_is_unbiased() {
    let d = DelayLogits {
        beta: vec![vec![0.4, -0.3, 0.1]],
        support: vec![true; 3],
    };
    let p = d.distribution(0);
    let w = [0.2, 1.5, -0.7];
    let mean_w: f64 = p.iter().zip(&w).map(|(a, b)| a * b).sum();
    let exact: Vec<f64> = (0..3).map(|t| p[t] * (w[t] - mean_w)).collect();

    let mut rng = seeded(23);
    let k = 100_000;
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..k {
        let h = d.sample(0, &mut rng);
        let g = score_grad(&p, &[h], &[w[h - 1]]);
        for t in 0..3 {
            sum[t] += g[t];
            sq[t] += g[t] * g[t];
        }
    }
    for t in 0..3 {
        let n = k as f64;
        let mean = sum[t] / n;
        let se = ((sq[t] / n - mean * mean) / n).sqrt();
        assert!((mean - exact[t]).abs() <= 2.0 * se, "lag {}: {mean} vs {} (se {se})", t + 1, exact[t]);
    }
}

fn evidence(rows: Vec<Vec<f64>>) -> DelayEvidence {
    DelayEvidence {
        log_ev: rows.into_iter().map(|r| r.into_iter().map(f64::ln).collect()).collect(),
    }
}

#[test]
fn flat_evidence_keeps_rows_near_uniform() {
    let ev = evidence(vec![vec![0.7; 4]]);
    let mut d = DelayLogits::uniform(1, 4);
    train_delay(&mut d, &ev, &DelayConfig::default(), &mut seeded(3)).unwrap();
    let p = d.distribution(0);
    assert!(p.iter().all(|&x| (x - 0.25).abs() < 0.08), "{p:?}");
}

#[test]
fn dominant_lag_wins() {
    let ev = evidence(vec![vec![0.05, 0.05, 0.95, 0.05]]);
    let mut d = DelayLogits::uniform(1, 4);
    train_delay(&mut d, &ev, &DelayConfig::default(), &mut seeded(4)).unwrap();
    let p = d.distribution(0);
    let best = (0..4).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap() + 1;
    assert_eq!(best, 3, "{p:?}");
}

#[test]
fn kl_of_identical_rows_is_zero() {
    let p = DelayLogits::uniform(1, 5).distribution(0);
    assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
}

#[test]
fn beta_csv_golden() {
    let spec = builtin_task("Wood2Wet").unwrap();
    let mut d = DelayLogits::uniform(spec.num_vars(), 2);
    d.beta[0][1] = 2f64.ln();
    let mut out = Vec::new();
    write_beta_csv(&mut out, &spec, &d).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("effect,tau,probability"));
    assert_eq!(lines.next(), Some(format!("{},1,0.333333", spec.variables[0]).as_str()));
    assert_eq!(lines.next(), Some(format!("{},2,0.666667", spec.variables[0]).as_str()));
    assert_eq!(text.lines().count(), 1 + 2 * spec.num_vars());
}

proptest! {
    #[test]
    fn rows_stay_stochastic_and_clamped(
        seed in 0u64..500,
        tau in 2usize..9,
        kappa in 1usize..4,
        ev in proptest::collection::vec(0.01f64..1.0, 16),
    ) {
        prop_assume!(kappa <= tau);
        let rows: Vec<Vec<f64>> = (0..2).map(|i| (0..tau).map(|t| ev[(i * 8 + t) % 16]).collect()).collect();
        let ev = evidence(rows);
        let mut d = DelayLogits::uniform(2, tau).restrict_support(kappa).unwrap();
        let cfg = DelayConfig { lr: 5.0, ..DelayConfig::default() };
        let mut ev = ev;
        for (t, s) in d.support.iter().enumerate() {
            if !s {
                ev.log_ev.iter_mut().for_each(|r| r[t] = f64::NEG_INFINITY);
            }
        }
        let mut rng = seeded(seed);
        for _ in 0..20 {
            delay_step(&mut d, &ev, &cfg, &mut rng).unwrap();
            for i in 0..2 {
                let p = d.distribution(i);
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for (t, &x) in p.iter().enumerate() {
                    if !d.support[t] {
                        prop_assert_eq!(x, 0.0);
                    }
                }
                prop_assert!(d.beta[i].iter().all(|b| b.abs() <= cfg.logit_clip));
            }
            for _ in 0..5 {
                let h = d.sample_hypothesis(&mut rng);
                prop_assert!(h.0.iter().all(|&l| l >= 1 && l <= tau && l % kappa == 0));
            }
        }
    }
}
