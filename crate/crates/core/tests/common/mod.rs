//! Closed-form oracles for the two-context toy problem, written
//! independently of the library so tests can check it against them.

#![allow(dead_code)]

pub const CONTEXTS: [f64; 2] = [2.0, 5.0];
pub const MEANS: [[f64; 2]; 2] = [[0.5, 0.7], [0.6, 0.1]];
pub const VARIANCES: [[f64; 2]; 2] = [[0.03, 0.0075], [0.03, 1.0 / 300.0]];

pub fn toy_predict(x: f64, d: f64) -> [f64; 2] {
    let u = d * x;
    let s = u.sin() * u.sin();
    let e = (-u * u).exp();
    [0.2 * s + 0.8 * e, 0.8 * s + 0.2 * e]
}

/// Expected squared loss over both contexts (probability 1/2 each) and both actions.
pub fn toy_objective(x: f64) -> f64 {
    let mut total = 0.0;
    for (i, &d) in CONTEXTS.iter().enumerate() {
        let f = toy_predict(x, d);
        for a in 0..2 {
            total += 0.5 * ((f[a] - MEANS[i][a]).powi(2) + VARIANCES[i][a]);
        }
    }
    total
}

pub fn toy_objective_gradient(x: f64) -> f64 {
    let h = 1e-6;
    (toy_objective(x + h) - toy_objective(x - h)) / (2.0 * h)
}

pub fn variance_floor() -> f64 {
    0.5 * (VARIANCES[0][0] + VARIANCES[0][1] + VARIANCES[1][0] + VARIANCES[1][1])
}

/// Interior local minima of the toy objective on a uniform grid.
pub fn toy_minima(lo: f64, hi: f64, step: f64) -> Vec<(f64, f64)> {
    let n = ((hi - lo) / step).round() as usize + 1;
    let v: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = lo + i as f64 * step;
            (x, toy_objective(x))
        })
        .collect();
    v.windows(3)
        .filter(|w| w[1].1 < w[0].1 && w[1].1 <= w[2].1)
        .map(|w| w[1])
        .collect()
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// Toy config with every schedule and policy key spelled out.
pub fn toy_config_text(eta0: f64, seed: u64) -> String {
    format!(
        "env = toy\nmodel = toy-trig\nalgorithm = ssgd-scb\n\
         schedule.t0 = 200\nschedule.stages = 50\nschedule.upsilon = 1\n\
         schedule.eta0 = {eta0}\nschedule.noise0 = 1e-4\n\
         policy.kappa = 0.5\npolicy.beta = 11/24\npolicy.omega = 1\npolicy.c = 0\n\
         reference = grid\nlog.rounds = false\nseed = {seed}\n"
    )
}
