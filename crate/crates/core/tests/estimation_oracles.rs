//! Estimators checked against hand recounts and scalar formula evaluation.

use std::collections::HashMap;

use fairstep_core::datagen::random_spec;
use fairstep_core::estimation::{
    bonus, build_model, compat_c, compat_d, epsilon, eta, CountTable, RelaxationSchedule, ScheduleInputs,
};
use fairstep_core::sim::sample_episode;
use fairstep_core::Policy;

#[test]
fn counts_match_histogram_recount() {
    let spec = random_spec(3, 2, 3, 5).unwrap();
    let policy = Policy::constant(2, spec.space(), 0.4).unwrap();
    let mut counts = CountTable::new(spec.space(), 2);
    let mut visits: HashMap<(usize, usize, usize), u64> = HashMap::new();
    let mut moves: HashMap<(usize, usize, usize, usize), u64> = HashMap::new();
    let mut rewards: HashMap<(usize, usize, usize), f64> = HashMap::new();
    for episode in 1..=30 {
        let batch = sample_episode(&spec, &policy, &[7, 5], Some(0.9), 8, episode).unwrap();
        counts.update(&batch).unwrap();
        for (g, ts) in batch.groups.iter().enumerate() {
            for t in ts {
                for w in t.steps.windows(2) {
                    *moves.entry((g, w[0].state, w[0].action, w[1].state)).or_default() += 1;
                }
                for s in &t.steps {
                    *visits.entry((g, s.state, s.action)).or_default() += 1;
                    *rewards.entry((g, s.state, s.action)).or_default() += s.reward;
                }
            }
        }
    }
    let model = build_model(&counts, 31, 0.1).unwrap();
    let states = spec.space().states();
    for g in 0..2 {
        for s in 0..states {
            for a in 0..2 {
                let v = visits.get(&(g, s, a)).copied().unwrap_or(0);
                assert_eq!(counts.raw_visits(g, s, a), v);
                let total: u64 = (0..states).map(|n| moves.get(&(g, s, a, n)).copied().unwrap_or(0)).sum();
                for n in 0..states {
                    let c = moves.get(&(g, s, a, n)).copied().unwrap_or(0);
                    assert_eq!(counts.transitions(g, s, a, n), c);
                    let want = if total == 0 { 1.0 / states as f64 } else { c as f64 / total as f64 };
                    assert!((model.groups[g].kernel.prob(s, a, n) - want).abs() < 1e-12);
                }
                let r = rewards.get(&(g, s, a)).copied().unwrap_or(0.0) / v.max(1) as f64;
                assert!((model.groups[g].reward_hat[s * 2 + a] - r).abs() < 1e-12);
            }
        }
    }
}

fn ln(x: f64) -> f64 {
    x.ln()
}

#[test]
fn schedules_match_scalar_formulas() {
    let tuples = [(1u64, 8usize, 10usize, 0.1f64, 5u64), (8, 8, 10, 0.05, 40), (1000, 2, 4, 0.2, 100_000)];
    for &(k, h, s, delta, n) in &tuples {
        let inputs = ScheduleInputs::new(k, h, s, 2, delta);
        let (kf, hf, sf, nf) = (k as f64, h as f64, s as f64, n as f64);
        let eps = 1.0 / (kf * hf * sf);
        assert_eq!(epsilon(k, h, s), eps);
        let b = (2.0 * hf * (2.0 * ln(16.0 * sf * 2.0 * hf * kf * kf / delta) / nf).sqrt()).min(2.0 * hf);
        assert!((bonus(n, &inputs) - b).abs() <= 1e-12 * b);
        let one = hf * (2.0 * sf * ln(16.0 * sf * 2.0 * hf * kf * kf / (eps * delta)) / nf).sqrt() + 2.0 * eps * hf * sf;
        assert!((compat_c(&[n, n], &inputs) - (2.0 * one).min(1.0)).abs() <= 1e-12);
        let gate = ((4.0 * 2f64.ln() + 2.0 * ln(4.0 * sf * 2.0 * kf * kf / delta)) / nf).sqrt();
        let p = 0.9;
        let d = if p > gate {
            let num = 3.0 * hf * (2.0 * sf * ln(32.0 * sf * 2.0 * kf * kf / (eps * delta)) / nf).sqrt() + 3.0 * eps * hf * sf;
            (2.0 * num / (p * (p - gate))).min(1.0)
        } else {
            1.0
        };
        assert!((compat_d(&[(n, p), (n, p)], &inputs) - d).abs() <= 1e-12);
        assert!((eta(k) - (kf.powf(-1.0 / 3.0)).min(0.4)).abs() < 1e-15);
    }
}

#[test]
fn estimates_converge_and_relaxations_shrink() {
    let spec = random_spec(19, 2, 2, 3).unwrap();
    let policy = Policy::constant(2, spec.space(), 0.5).unwrap();
    let mut counts = CountTable::new(spec.space(), 2);
    let mut errors = Vec::new();
    let mut c_hats = Vec::new();
    let mut episode = 0;
    for target in [10u64, 100, 1000] {
        while episode < target {
            episode += 1;
            counts.update(&sample_episode(&spec, &policy, &[50, 50], None, 1, episode).unwrap()).unwrap();
        }
        let model = build_model(&counts, episode + 1, 0.1).unwrap();
        let truth = &spec.groups()[0].kernel;
        let err = truth
            .table()
            .iter()
            .zip(model.groups[0].kernel.table())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        errors.push(err);
        c_hats.push(RelaxationSchedule::from_model(&model).c_hat);
    }
    assert!(errors[2] < errors[1] && errors[1] < errors[0], "{errors:?}");
    assert!(c_hats[2] <= c_hats[1] && c_hats[1] <= c_hats[0]);
}

#[test]
fn bonus_covers_estimation_error() {
    // with exact counts N, |r_hat - r| + |(p_hat - p) . V| <= bonus must hold
    // for every (s, a) on all but a delta fraction of runs
    let spec = random_spec(23, 1, 2, 4).unwrap();
    let policy = Policy::constant(1, spec.space(), 0.5).unwrap();
    let model_true = spec.planning_model();
    let values = model_true.values(&policy).unwrap();
    let mut failures = 0;
    let runs = 20;
    for run in 0..runs {
        let mut counts = CountTable::new(spec.space(), 1);
        for episode in 1..=20 {
            counts.update(&sample_episode(&spec, &policy, &[5], None, 100 + run, episode).unwrap()).unwrap();
        }
        let est = build_model(&counts, 21, 0.1).unwrap();
        let states = spec.space().states();
        let mut ok = true;
        for s in 0..states {
            for a in 0..2 {
                if counts.raw_visits(0, s, a) == 0 {
                    continue;
                }
                let dr = (est.groups[0].reward_hat[s * 2 + a] - model_true.rewards[0][s * 2 + a]).abs();
                for h in 1..4 {
                    let dv: f64 = (0..states)
                        .map(|n| (est.groups[0].kernel.prob(s, a, n) - spec.groups()[0].kernel.prob(s, a, n)) * values.v(0, n, h))
                        .sum();
                    ok &= dr + dv.abs() <= est.groups[0].bonus[s * 2 + a];
                }
            }
        }
        failures += usize::from(!ok);
    }
    assert!(failures as f64 <= 0.1 * runs as f64);
}
