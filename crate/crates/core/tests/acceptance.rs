//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use stagewise_bandit::env::{Environment, LinearEnvironment, ToyEnvironment};
use stagewise_bandit::harness::{RunConfig, RunOutput, Simulation};
use stagewise_bandit::metrics::RunLog;
use stagewise_bandit::model::{OutputLink, ParamVector, RewardModel};
use stagewise_bandit::optimizer::ips_gradient;
use stagewise_bandit::policy::{
    action_distribution, argmax, exploitation_scores, exploration_floor, visit_threshold, weight_vector, PolicyParams,
    VisitTable,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let families = [
        ("toy-trig", RewardModel::toy_trig()),
        (
            "linear-logistic",
            RewardModel::linear(3, 5, OutputLink::Logistic).unwrap(),
        ),
        (
            "linear-identity",
            RewardModel::linear(3, 5, OutputLink::Identity).unwrap(),
        ),
        ("mlp", RewardModel::mlp(3, 5, vec![16, 8]).unwrap()),
    ];
    let h = 1e-5;
    let mut worst = Vec::new();
    let mut pass = true;
    for (name, model) in &families {
        let mut max_rel: f64 = 0.0;
        for _ in 0..100 {
            let (x, d): (Vec<f64>, Vec<f64>) = if model.n_params() == 1 {
                (
                    vec![rng.random_range(-3.0..3.0)],
                    vec![[2.0, 5.0][rng.random_range(0..2)]],
                )
            } else {
                (
                    (0..model.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    (0..model.context_dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            };
            let a = rng.random_range(0..model.actions());
            let r: f64 = rng.random();
            let xv = ParamVector::new(x.clone()).unwrap();
            let analytic = model.loss_gradient(&xv, &d, a, r).unwrap();
            let fd: Vec<f64> = (0..x.len())
                .map(|i| {
                    let mut plus = x.clone();
                    let mut minus = x.clone();
                    plus[i] += h;
                    minus[i] -= h;
                    let lp = model.loss(&ParamVector::new(plus).unwrap(), &d, a, r).unwrap();
                    let lm = model.loss(&ParamVector::new(minus).unwrap(), &d, a, r).unwrap();
                    (lp - lm) / (2.0 * h)
                })
                .collect();
            let diff = analytic
                .iter()
                .zip(&fd)
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm = fd.iter().map(|q| q * q).sum::<f64>().sqrt();
            max_rel = max_rel.max(diff / (norm + 1e-12));
        }
        pass &= max_rel < 1e-4;
        worst.push(format!("{name} {max_rel:.1e}"));
    }
    outcome(pass, format!("max relative error per family: {}", worst.join(", ")))
}

/// Fixed policy used to generate propensities in the Monte Carlo checks.
fn toy_policy(c: f64) -> PolicyParams {
    PolicyParams::new(2, 0.5, 1.0, c, 11.0 / 24.0, 1.0).unwrap()
}

fn ips_unbiasedness() -> Outcome {
    let env = ToyEnvironment::new();
    let model = RewardModel::toy_trig();
    let params = toy_policy(0.1);
    let visits = VisitTable::from_rows(&[vec![7, 2], vec![3, 9]]).unwrap();
    let s = 3;
    let n = 100_000;
    let mut pass = true;
    let mut parts = Vec::new();
    for (j, &x) in [-0.8, 0.05, 0.3, 0.9, 1.7].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + j as u64);
        let xv = ParamVector::new(vec![x]).unwrap();
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let id = env.sample_context_id(&mut rng);
                let d = env.context(id).unwrap();
                let f = model.predict(&xv, d).unwrap();
                let cluster = argmax(&f).unwrap();
                let scores = exploitation_scores(&f, &visits, cluster, &params).unwrap();
                let dist = action_distribution(&weight_vector(&scores, s, params.omega), s, &params).unwrap();
                let a = stagewise_bandit::policy::sample_action(&dist, &mut rng);
                let r = env.sample_reward(id, a, &mut rng);
                let g = model.loss_gradient(&xv, d, a, r).unwrap();
                ips_gradient(&g, dist.propensity(a)).unwrap()[0]
            })
            .collect();
        let (mean, se) = common::mean_and_se(&samples);
        let truth = common::toy_objective_gradient(x);
        let z = (mean - truth) / se;
        pass &= z.abs() <= 3.0;
        parts.push(format!("x={x}: z={z:+.2}"));
    }
    outcome(pass, parts.join(", "))
}

/// Samples of the IPS gradient for the action held at the exploration floor.
fn floor_pinned_samples(s: u64, n: usize, seed: u64) -> Vec<f64> {
    let env = ToyEnvironment::new();
    let model = RewardModel::toy_trig();
    let params = toy_policy(0.0);
    let x = ParamVector::new(vec![0.3]).unwrap();
    let dist = action_distribution(&[0.0, 1.0], s, &params).unwrap();
    assert_eq!(dist.propensity(0), exploration_floor(2, s, params.kappa));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let id = env.sample_context_id(&mut rng);
            let d = env.context(id).unwrap();
            let r = env.sample_reward(id, 0, &mut rng);
            let g = model.loss_gradient(&x, d, 0, r).unwrap();
            ips_gradient(&g, dist.propensity(0)).unwrap()[0]
        })
        .collect()
}

/// Samples of the IPS gradient with actions drawn from the floor-pinned distribution.
fn policy_sampled(s: u64, n: usize, seed: u64) -> Vec<f64> {
    let env = ToyEnvironment::new();
    let model = RewardModel::toy_trig();
    let params = toy_policy(0.0);
    let x = ParamVector::new(vec![0.3]).unwrap();
    let dist = action_distribution(&[0.0, 1.0], s, &params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let id = env.sample_context_id(&mut rng);
            let d = env.context(id).unwrap();
            let a = stagewise_bandit::policy::sample_action(&dist, &mut rng);
            let r = env.sample_reward(id, a, &mut rng);
            let g = model.loss_gradient(&x, d, a, r).unwrap();
            ips_gradient(&g, dist.propensity(a)).unwrap()[0]
        })
        .collect()
}

fn variance_growth() -> Outcome {
    let n = 100_000;
    let ratio = common::sample_variance(&floor_pinned_samples(16, n, 31))
        / common::sample_variance(&floor_pinned_samples(1, n, 32));
    let target = 16f64.powf(0.5);
    let mixed =
        common::sample_variance(&policy_sampled(16, n, 33)) / common::sample_variance(&policy_sampled(1, n, 34));
    outcome(
        (0.5 * target..=2.0 * target).contains(&ratio),
        format!(
            "var ratio s=16/s=1 at the floor {ratio:.3} (target {target}, band [{}, {}]); with actions drawn from the policy {mixed:.3}",
            0.5 * target,
            2.0 * target
        ),
    )
}

fn distribution_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst_sum: f64 = 0.0;
    let mut worst_floor = f64::INFINITY;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=10);
        let kappa = rng.random_range(0.01..0.99);
        let omega = rng.random_range(kappa / 2.0 + 1e-6..3.0);
        let params = PolicyParams::new(
            k,
            kappa,
            omega,
            rng.random_range(0.0..1.0),
            rng.random_range(0.01..0.49),
            1.0,
        )
        .unwrap();
        let s = rng.random_range(1..=1_000_000u64);
        let u: Vec<f64> = (0..k)
            .map(|_| {
                if rng.random_bool(0.1) {
                    0.0
                } else {
                    rng.random_range(0.0..3.0)
                }
            })
            .collect();
        let dist = action_distribution(&weight_vector(&u, s, omega), s, &params).unwrap();
        let sum: f64 = dist.probs().iter().sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
        let floor = exploration_floor(k, s, kappa);
        for &p in dist.probs() {
            worst_floor = worst_floor.min(p - floor);
        }
    }
    outcome(
        worst_sum <= 1e-9 && worst_floor >= -1e-12,
        format!("max |sum - 1| = {worst_sum:.1e}, min (p - floor) = {worst_floor:.1e}"),
    )
}

fn visit_threshold_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut built = 0;
    let mut violations = 0;
    while built < 1000 {
        let k = rng.random_range(2..=6);
        let kappa = rng.random_range(0.05..0.95);
        let omega = rng.random_range(kappa / 2.0 + 1e-3..2.0);
        let params = PolicyParams::new(
            k,
            kappa,
            omega,
            rng.random_range(0.05..1.0),
            rng.random_range(0.3..0.49),
            1.0,
        )
        .unwrap();
        let s = rng.random_range(1..=10_000u64);
        let c = rng.random_range(0..k);
        let under = rng.random_range(0..k);
        let mut rows = vec![vec![1u64; k]; k];
        for (a, row) in rows.iter_mut().enumerate() {
            if a != under {
                row[c] = rng.random_range(1_000..10_000_000);
            }
        }
        let others: u64 = rows.iter().map(|r| r[c]).sum::<u64>() - 1;
        let bound = visit_threshold(others, &params);
        if bound <= 2.0 {
            continue;
        }
        rows[under][c] = rng.random_range(1..bound.floor() as u64);
        let visits = VisitTable::from_rows(&rows).unwrap();
        if visits.get(under, c) as f64 >= visit_threshold(visits.column_total(c), &params) {
            continue;
        }
        let estimates: Vec<f64> = (0..k).map(|_| rng.random()).collect();
        let scores = exploitation_scores(&estimates, &visits, c, &params).unwrap();
        let dist = action_distribution(&weight_vector(&scores, s, omega), s, &params).unwrap();
        let sf = s as f64;
        let top = argmax(&scores).unwrap();
        let most_visited = argmax(&visits.column(c).iter().map(|&v| v as f64).collect::<Vec<_>>()).unwrap();
        let lower = (1.0 - 0.05 * sf.powf(-kappa / 2.0)) * sf.powf(omega) / (sf.powf(omega) + (k - 1) as f64);
        let upper = 0.05 / (k as f64 * sf.powf(kappa / 2.0)) + sf.powf(-omega);
        if dist.propensity(top) < lower || dist.propensity(most_visited) > upper {
            violations += 1;
        }
        built += 1;
    }
    outcome(violations == 0, format!("{built} tables, {violations} violations"))
}

fn toy_config(eta0: f64, seed: u64) -> RunConfig {
    RunConfig::from_text(&common::toy_config_text(eta0, seed)).unwrap()
}

struct ToyRuns {
    eta0: f64,
    runs: Vec<RunOutput>,
}

fn toy_convergence() -> (Outcome, Option<ToyRuns>) {
    let etas = [0.1, 0.05, 0.01];
    let jobs: Vec<(f64, u64)> = etas.iter().flat_map(|&e| (0..6).map(move |s| (e, s))).collect();
    let outputs: Vec<RunOutput> = jobs
        .par_iter()
        .map(|&(e, s)| Simulation::new(toy_config(e, s)).unwrap().finish().unwrap())
        .collect();
    let mut groups: Vec<ToyRuns> = etas.iter().map(|&eta0| ToyRuns { eta0, runs: Vec::new() }).collect();
    for ((e, _), out) in jobs.iter().zip(outputs) {
        groups.iter_mut().find(|g| g.eta0 == *e).unwrap().runs.push(out);
    }
    let final_mismatch = |g: &ToyRuns| -> Vec<f64> {
        g.runs
            .iter()
            .map(|r| r.stages.last().unwrap().mismatch.unwrap())
            .collect()
    };
    let mean_final = |g: &ToyRuns| final_mismatch(g).iter().sum::<f64>() / 6.0;
    let scores: Vec<String> = groups
        .iter()
        .map(|g| format!("{}: {:.4}", g.eta0, mean_final(g)))
        .collect();
    let best = groups
        .into_iter()
        .min_by(|a, b| mean_final(a).total_cmp(&mean_final(b)))
        .unwrap();
    let finals = final_mismatch(&best);
    let below = finals.iter().filter(|&&m| m < 0.05).count();
    let stages: Vec<f64> = (31..=50).map(|s| s as f64).collect();
    let curve: Vec<f64> = (30..50)
        .map(|i| best.runs.iter().map(|r| r.stages[i].mismatch.unwrap()).sum::<f64>() / 6.0)
        .collect();
    let slope = common::ls_slope(&stages, &curve);
    let detail = format!(
        "eta0 tuned to {} (mean final mismatch {}); final-stage mismatch per seed {:?}; {below}/6 below 0.05; slope over stages 31-50 {slope:.2e}",
        best.eta0,
        scores.join(", "),
        finals.iter().map(|m| (m * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
    (outcome(below >= 5 && slope < 0.0, detail), Some(best))
}

fn objective_descent(runs: &ToyRuns) -> Outcome {
    let floor = common::variance_floor();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut min_seen = f64::INFINITY;
    for out in &runs.runs {
        for s in &out.stages {
            let f = common::toy_objective(s.x[0]);
            min_seen = min_seen.min(f);
            pass &= f >= floor - 1e-9;
        }
        let x_final = out.final_x.as_slice()[0];
        let lo = (-3.0f64).min(x_final - 1.0);
        let hi = 3.0f64.max(x_final + 1.0);
        let minima = common::toy_minima(lo, hi, 1e-4);
        let (x_min, f_min) = *minima
            .iter()
            .min_by(|a, b| (a.0 - x_final).abs().total_cmp(&(b.0 - x_final).abs()))
            .unwrap();
        let ratio = common::toy_objective(x_final) / f_min;
        pass &= ratio <= 1.2;
        parts.push(format!("x={x_final:.3}->{x_min:.4} ratio {ratio:.4}"));
    }
    outcome(
        pass,
        format!(
            "{}; lowest stage-end F {min_seen:.5} vs floor {floor:.5}",
            parts.join(", ")
        ),
    )
}

/// Ridge solution per action: `(E[d d^T] + λ I) w_a = E[d μ_a(d)]` with `d` augmented by 1.
fn ridge_optimum(env: &LinearEnvironment, l2: f64) -> Vec<f64> {
    let n = env.context_dim() + 1;
    let m = env.n_contexts() as f64;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for c in env.contexts() {
        let v = DVector::from_iterator(n, c.iter().copied().chain([1.0]));
        gram += &v * v.transpose() / m;
    }
    gram += DMatrix::<f64>::identity(n, n) * l2;
    let chol = gram.cholesky().expect("ridge Gram matrix is positive definite");
    let mut out = Vec::new();
    for a in 0..env.actions() {
        let mut rhs = DVector::<f64>::zeros(n);
        for (id, c) in env.contexts().iter().enumerate() {
            let mu = env.mean_reward(id, a).unwrap();
            let v = DVector::from_iterator(n, c.iter().copied().chain([1.0]));
            rhs += v * (mu / m);
        }
        out.extend(chol.solve(&rhs).iter());
    }
    out
}

const LINEAR_CONFIG: &str = "env = linear\nenv.actions = 3\nenv.dim = 4\nenv.contexts = 50\nenv.seed = 7\n\
    model = linear\nmodel.link = identity\nalgorithm = sgd-scb\n\
    schedule.upsilon = 0.4\nschedule.stages = 100000\nschedule.eta0 = 0.1\n\
    policy.kappa = 0.2\npolicy.beta = 0.45\npolicy.omega = 0.2\npolicy.c = 0.05\n\
    gradient.l2 = 0.05\nlog.rounds = false\n";

fn strongly_convex_decay() -> Outcome {
    let base = RunConfig::from_text(LINEAR_CONFIG).unwrap();
    let env = Arc::new(LinearEnvironment::generate(3, 4, 50, 7).unwrap());
    let x_star = ridge_optimum(&env, base.l2);
    let checkpoints: Vec<u64> = (0..=20)
        .map(|i| (1e3 * 100f64.powf(i as f64 / 20.0)).round() as u64)
        .collect();
    let seeds = 10;
    let errors: Vec<Vec<f64>> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let mut sim = Simulation::with_environment(base.with_seed(seed).unwrap(), env.clone()).unwrap();
            checkpoints
                .iter()
                .map(|&t| {
                    sim.run_until(t, |_| Ok(())).unwrap();
                    sim.x().iter().zip(&x_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                })
                .collect()
        })
        .collect();
    let mean: Vec<f64> = (0..checkpoints.len())
        .map(|i| errors.iter().map(|e| e[i]).sum::<f64>() / seeds as f64)
        .collect();
    let lx: Vec<f64> = checkpoints.iter().map(|&t| (t as f64).ln()).collect();
    let ly: Vec<f64> = mean.iter().map(|e| e.ln()).collect();
    let slope = common::ls_slope(&lx, &ly);
    let target = -(base.upsilon - base.kappa);
    outcome(
        (slope - target).abs() <= 0.15,
        format!(
            "log-log slope {slope:.3} (target {target:.1} +/- 0.15); E|x-x*|^2 {:.2e} at t=1e3, {:.2e} at t=1e5",
            mean[0],
            mean[mean.len() - 1]
        ),
    )
}

fn baseline_ordering(eta0: f64) -> Outcome {
    let acr = |alg: &str| -> f64 {
        let total: f64 = (0..6u64)
            .into_par_iter()
            .map(|seed| {
                let c = toy_config(eta0, seed)
                    .with_override("algorithm", alg)
                    .unwrap()
                    .with_override("epsilon", "0.1")
                    .unwrap()
                    .with_override("max_rounds", "100000")
                    .unwrap();
                Simulation::new(c).unwrap().finish().unwrap().acr.unwrap()
            })
            .sum();
        total / 6.0
    };
    let ssgd = acr("ssgd-scb");
    let eps = acr("epsilon-greedy");
    outcome(
        ssgd <= eps + 0.01,
        format!("mean ACR over 6 seeds at 1e5 rounds: ssgd-scb {ssgd:.4}, epsilon-greedy(0.1) {eps:.4}"),
    )
}

fn determinism_and_resume() -> Outcome {
    let config = RunConfig::from_text(
        "schedule.t0 = 20\nschedule.stages = 6\nschedule.eta0 = 0.05\nschedule.noise0 = 1e-3\n\
         policy.omega = 1\npolicy.c = 0.1\nmax_rounds = 1000\nseed = 42\n",
    )
    .unwrap();
    let a = Simulation::new(config.clone()).unwrap().finish().unwrap();
    let b = Simulation::new(config.clone()).unwrap().finish().unwrap();
    let identical = a.log == b.log && a.final_x.as_slice() == b.final_x.as_slice();

    let mut sim = Simulation::new(config.clone()).unwrap();
    let mut log = RunLog::new();
    sim.run_until(500, |o| log.push(o.record)).unwrap();
    let text = serde_json::to_string(&sim.checkpoint()).unwrap();
    drop(sim);
    let cp = serde_json::from_str(&text).unwrap();
    let rest = Simulation::from_checkpoint(&cp, Some(&config))
        .unwrap()
        .finish()
        .unwrap();
    log.extend(rest.log).unwrap();
    let resumed = log.records() == a.log.records() && rest.final_x.as_slice() == a.final_x.as_slice();

    let altered = config.with_override("policy.c", "0.2").unwrap();
    let rejected = Simulation::from_checkpoint(&cp, Some(&altered)).is_err();

    let mut done = Simulation::new(config.clone()).unwrap();
    done.run_until(u64::MAX, |_| Ok(())).unwrap();
    let end_cp = done.checkpoint();
    let after = Simulation::from_checkpoint(&end_cp, Some(&config))
        .unwrap()
        .finish()
        .unwrap();
    let noop = after.log.is_empty() && after.final_x.as_slice() == a.final_x.as_slice();

    outcome(
        identical && resumed && rejected && noop && a.log.len() == 1000,
        format!(
            "repeat identical: {identical}; resume at 500 of 1000 identical: {resumed}; altered config rejected: {rejected}; resume after final round is a no-op: {noop}"
        ),
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn main() {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, (o, took): (Outcome, Duration), budget: Option<Duration>| {
        let in_time = budget.is_none_or(|b| took <= b);
        let pass = o.pass && in_time;
        if !pass {
            failures += 1;
        }
        let budget_note = budget.map_or(String::new(), |b| format!(", budget {}s", b.as_secs()));
        println!(
            "criterion {id:>2} [{}] {name}: {} ({:.1}s{budget_note})",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
    };
    let secs = |s| Some(Duration::from_secs(s));
    report(1, "gradient correctness", timed(gradient_correctness), secs(10));
    report(2, "IPS unbiasedness", timed(ips_unbiasedness), secs(60));
    report(3, "variance growth", timed(variance_growth), secs(60));
    report(4, "distribution validity", timed(distribution_validity), secs(5));
    report(
        5,
        "visit-threshold probability bounds",
        timed(visit_threshold_bounds),
        secs(5),
    );
    let ((conv, runs), took) = timed(toy_convergence);
    report(6, "toy convergence", (conv, took), secs(300));
    let tuned = runs.as_ref().map_or(0.01, |r| r.eta0);
    match &runs {
        Some(r) => report(7, "objective descent", timed(|| objective_descent(r)), None),
        None => report(
            7,
            "objective descent",
            (outcome(false, "no runs".into()), Duration::ZERO),
            None,
        ),
    }
    report(8, "strongly convex decay", timed(strongly_convex_decay), secs(300));
    report(9, "baseline ordering", timed(|| baseline_ordering(tuned)), None);
    report(10, "determinism and resume", timed(determinism_and_resume), None);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
