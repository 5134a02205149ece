//! Randomized invariants of the policy, model, optimizer, environment and
//! metric layers.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stagewise_bandit::env::{Environment, LinearEnvironment, ToyEnvironment};
use stagewise_bandit::metrics::{average_cumulative_regret, mismatching_rate, RoundRecord, RunLog};
use stagewise_bandit::model::{OutputLink, ParamVector, RewardModel};
use stagewise_bandit::optimizer::{ips_gradient, sample_noise, RoundCursor, StageSchedule};
use stagewise_bandit::policy::{
    action_distribution, argmax, assign_cluster, exploitation_scores, exploration_floor, visit_threshold,
    weight_vector, PolicyParams, VisitTable,
};

fn params(k: usize, kappa: f64, omega: f64) -> PolicyParams {
    PolicyParams::new(k, kappa, omega, 0.1, 0.45, 1.0).unwrap()
}

fn weights_strategy() -> impl Strategy<Value = Vec<f64>> {
    (2usize..8).prop_flat_map(|k| prop::collection::vec(0.0f64..10.0, k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn distribution_is_normalized_and_floored(
        w in weights_strategy(),
        s in 1u64..100_000,
        kappa in 0.01f64..0.99,
    ) {
        let p = params(w.len(), kappa, 1.0);
        let dist = action_distribution(&w, s, &p).unwrap();
        let sum: f64 = dist.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        let floor = exploration_floor(w.len(), s, kappa);
        prop_assert!(dist.probs().iter().all(|&q| q >= floor - 1e-15 && q <= 1.0 + 1e-15));
    }

    #[test]
    fn distribution_ignores_weight_scale(
        w in weights_strategy(),
        scale in 0.01f64..100.0,
        s in 1u64..1000,
    ) {
        let p = params(w.len(), 0.5, 1.0);
        let a = action_distribution(&w, s, &p).unwrap();
        let scaled: Vec<f64> = w.iter().map(|v| v * scale).collect();
        let b = action_distribution(&scaled, s, &p).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_mass_grows_with_stage(
        scores in weights_strategy(),
        s in 1u64..10_000,
        step in 1u64..10_000,
        kappa in 0.05f64..0.95,
        extra in 0.0f64..2.0,
    ) {
        prop_assume!(scores.iter().sum::<f64>() > 0.0);
        let omega = kappa / 2.0 + 0.01 + extra;
        let p = params(scores.len(), kappa, omega);
        let best = argmax(&scores).unwrap();
        let at = |stage: u64| {
            action_distribution(&weight_vector(&scores, stage, omega), stage, &p)
                .unwrap()
                .propensity(best)
        };
        prop_assert!(at(s + step) >= at(s) - 1e-12);
    }

    #[test]
    fn cluster_survives_increasing_maps(raw in prop::collection::vec(0u32..64, 1..8)) {
        let estimates: Vec<f64> = raw.iter().map(|&v| v as f64 / 64.0).collect();
        let mapped: Vec<f64> = estimates.iter().map(|v| 4.0 * v + 0.5).collect();
        let cubed: Vec<f64> = estimates.iter().map(|v| v * v * v).collect();
        let c = assign_cluster(&estimates).unwrap();
        prop_assert_eq!(assign_cluster(&mapped).unwrap(), c);
        prop_assert_eq!(assign_cluster(&cubed).unwrap(), c);
    }

    #[test]
    fn bonus_is_zero_without_exploration_weight(
        estimates in prop::collection::vec(0.0f64..1.0, 3),
        visits in prop::collection::vec(1u64..1000, 9),
        c in 0usize..3,
    ) {
        let rows: Vec<Vec<u64>> = visits.chunks(3).map(|r| r.to_vec()).collect();
        let table = VisitTable::from_rows(&rows).unwrap();
        let p = params(3, 0.5, 1.0).with_c(0.0);
        prop_assert_eq!(exploitation_scores(&estimates, &table, c, &p).unwrap(), estimates);
    }

    #[test]
    fn visit_threshold_is_monotone(total in 1u64..1_000_000, more in 1u64..1_000_000, c in 0.01f64..2.0) {
        let p = PolicyParams::new(4, 0.5, 1.0, c, 0.4, 1.0).unwrap();
        let lo = visit_threshold(total, &p);
        prop_assert!(lo > 0.0);
        prop_assert!(visit_threshold(total + more, &p) >= lo);
    }

    #[test]
    fn toy_predictions_match_oracle(x in -3.0f64..3.0, id in 0usize..2) {
        let model = RewardModel::toy_trig();
        let d = common::CONTEXTS[id];
        let f = model.predict(&ParamVector::new(vec![x]).unwrap(), &[d]).unwrap();
        let oracle = common::toy_predict(x, d);
        prop_assert!((f[0] - oracle[0]).abs() < 1e-14 && (f[1] - oracle[1]).abs() < 1e-14);
        let u = d * x;
        prop_assert!((f[0] + f[1] - (u.sin().powi(2) + (-u * u).exp())).abs() < 1e-14);
        prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn bounded_families_stay_in_unit_interval(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let models = [
            RewardModel::linear(3, 4, OutputLink::Logistic).unwrap(),
            RewardModel::mlp(3, 4, vec![8]).unwrap(),
        ];
        for model in &models {
            prop_assert!(model.bounded_output());
            let x: Vec<f64> = model.init_params(&mut rng).as_slice().iter().map(|v| v * scale).collect();
            let x = ParamVector::new(x).unwrap();
            let d: Vec<f64> = (0..4).map(|i| (seed.rotate_left(i * 7) % 2001) as f64 / 100.0 - 10.0).collect();
            let f = model.predict(&x, &d).unwrap();
            prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn param_text_round_trips(values in prop::collection::vec(-1e300f64..1e300, 1..20)) {
        let x = ParamVector::new(values).unwrap();
        prop_assert_eq!(ParamVector::from_text(&x.to_text()).unwrap(), x);
    }

    #[test]
    fn noise_has_prescribed_norm(
        dim in 1usize..50,
        s in 1u64..10_000,
        kappa in 0.01f64..0.99,
        noise0 in 1e-6f64..10.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = sample_noise(dim, s, kappa, noise0, &mut rng);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected = (s as f64).powf(kappa / 2.0) * noise0;
        prop_assert!((norm - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn ips_enumeration_recovers_gradient_sum(
        w in weights_strategy(),
        s in 1u64..1000,
        grad_seed in any::<u64>(),
    ) {
        let k = w.len();
        let p = params(k, 0.5, 1.0);
        let dist = action_distribution(&w, s, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(grad_seed);
        let grads: Vec<Vec<f64>> = (0..k).map(|_| (0..3).map(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)).collect()).collect();
        let mut weighted = [0.0; 3];
        let mut plain = [0.0; 3];
        for (a, grad) in grads.iter().enumerate() {
            let g = ips_gradient(grad, dist.propensity(a)).unwrap();
            for i in 0..3 {
                weighted[i] += dist.propensity(a) * g[i];
                plain[i] += grad[i];
            }
        }
        for i in 0..3 {
            prop_assert!((weighted[i] - plain[i]).abs() < 1e-9 * (1.0 + plain[i].abs()));
        }
    }

    #[test]
    fn rewards_lie_in_unit_interval(seed in any::<u64>(), env_seed in 0u64..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let toy = ToyEnvironment::new();
        let linear = LinearEnvironment::generate(3, 4, 10, env_seed).unwrap();
        let envs: [&dyn Environment; 2] = [&toy, &linear];
        for env in envs {
            for _ in 0..20 {
                let id = env.sample_context_id(&mut rng);
                for a in 0..env.actions() {
                    let r = env.sample_reward(id, a, &mut rng);
                    prop_assert!((0.0..=1.0).contains(&r));
                    let mu = env.mean_reward(id, a).unwrap();
                    prop_assert!((0.0..=1.0).contains(&mu));
                }
            }
        }
    }

    #[test]
    fn acr_lies_in_unit_interval(rewards in prop::collection::vec(0.0f64..=1.0, 1..200)) {
        let records = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| RoundRecord {
                t: i as u64 + 1,
                stage: 1,
                context: 0,
                action: 0,
                propensity: 1.0,
                reward: r,
                greedy: 0,
            })
            .collect();
        let log = RunLog::from_records(records).unwrap();
        for t in 1..=log.len() {
            let acr = average_cumulative_regret(&log, t).unwrap();
            prop_assert!((0.0..=1.0).contains(&acr));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cursor_walks_the_whole_schedule(t0 in 1u64..5, stages in 1u64..8, upsilon in 0.3f64..1.2) {
        let schedule = StageSchedule::new(t0, upsilon, stages, 0.1, 0.0, 0.2).unwrap();
        let mut cursor = RoundCursor::start();
        let mut per_stage = vec![0u64; stages as usize];
        for _ in 0..schedule.total_rounds() {
            per_stage[cursor.stage as usize - 1] += 1;
            cursor.advance(schedule.stage_length(cursor.stage));
        }
        prop_assert_eq!(cursor, RoundCursor { stage: stages + 1, n: 1, global: schedule.total_rounds() + 1 });
        for (i, &n) in per_stage.iter().enumerate() {
            prop_assert_eq!(n, schedule.stage_length(i as u64 + 1));
        }
    }

    #[test]
    fn greedy_replay_has_zero_mismatch(x in -2.0f64..2.0, contexts in prop::collection::vec(0usize..2, 1..100)) {
        let env = ToyEnvironment::new();
        let model = RewardModel::toy_trig();
        let reference = ParamVector::new(vec![x]).unwrap();
        let records = contexts
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let f = common::toy_predict(x, common::CONTEXTS[id]);
                let a = if f[1] > f[0] { 1 } else { 0 };
                RoundRecord { t: i as u64 + 1, stage: 1, context: id, action: a, propensity: 1.0, reward: 0.5, greedy: a }
            })
            .collect();
        let log = RunLog::from_records(records).unwrap();
        prop_assert_eq!(mismatching_rate(&log, &model, &[reference], &env).unwrap(), 0.0);
    }
}
