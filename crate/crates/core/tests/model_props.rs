use covsched::decoder::Chooser;
use covsched::encoder::NormUse;
use covsched::geometry::validate_schedule;
use covsched::mapgen::{generate_map_seeded, generate_maps, RadiusRange};
use covsched::training::{
    read_metrics, reinforce_loss, train, BaselineKind, Critic, MapSource, TrainConfig, Trainer,
    FINAL_CHECKPOINT, METRICS_FILE, METRICS_HEADER,
};
use covsched::{CostModel, Policy, PolicyConfig};
use gradtape::{AdamConfig, AdamState, Grads, Tape};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny() -> PolicyConfig {
    PolicyConfig {
        d1: 16,
        d2: 16,
        d3: 16,
        layers: 2,
        heads: 4,
        clip: 10.0,
    }
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        steps_per_epoch: 3,
        batch_size: 4,
        n_areas: 5,
        policy: tiny(),
        seed,
        strict: true,
        ..TrainConfig::default()
    }
}

fn grads_of_log_prob(policy: &Policy, seed: u64, scale: Option<(f64, f64)>) -> Grads {
    let map = generate_map_seeded(5, RadiusRange::default(), seed).unwrap();
    let cm = CostModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let (r, _) = policy
        .rollout(&mut tape, &map, &cm, Chooser::Sample(&mut rng), NormUse::Batch)
        .unwrap();
    let loss = match scale {
        Some((cost, base)) => reinforce_loss(&mut tape, &[(r.log_prob, cost, base)]).unwrap(),
        None => r.log_prob,
    };
    tape.backward(loss).unwrap();
    tape.param_grads(&policy.store)
}

fn max_abs_diff(a: &Grads, b: &Grads, k: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(move |(p, q)| (p - k * q).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn reinforce_gradient_is_advantage_times_score() {
    let policy = Policy::new(tiny(), 4);
    let score = grads_of_log_prob(&policy, 10, None);
    for (cost, base) in [(3.0, 0.0), (3.0, 1.0), (2.0, 2.5), (1.5, 1.5)] {
        let g = grads_of_log_prob(&policy, 10, Some((cost, base)));
        let tol = 1e-12 * score.global_norm().max(1.0);
        assert!(max_abs_diff(&g, &score, cost - base) <= tol, "advantage {}", cost - base);
    }
    // Zero advantage gives no gradient; the baseline itself is never differentiated.
    let zero = grads_of_log_prob(&policy, 10, Some((2.0, 2.0)));
    assert_eq!(zero.global_norm(), 0.0);
}

#[test]
fn reinforce_loss_averages_over_the_batch() {
    let mut tape = Tape::new();
    let a = tape.input(gradtape::Tensor::scalar(-1.0));
    let b = tape.input(gradtape::Tensor::scalar(-2.0));
    let loss = reinforce_loss(&mut tape, &[(a, 3.0, 1.0), (b, 1.0, 2.0)]).unwrap();
    assert!((tape.value(loss).item() - 0.0).abs() < 1e-15);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(a).unwrap().item(), 1.0);
    assert_eq!(tape.grad(b).unwrap().item(), -0.5);
}

#[test]
fn encoder_is_permutation_equivariant() {
    let policy = Policy::new(tiny(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let map = generate_map_seeded(7, RadiusRange::default(), seed).unwrap();
        let mut perm: Vec<usize> = (0..7).collect();
        perm.shuffle(&mut rng);
        let shuffled = map.permuted(&perm).unwrap();
        let mut t1 = Tape::new();
        let e1 = policy.encode(&mut t1, &map, NormUse::Batch).unwrap();
        let mut t2 = Tape::new();
        let e2 = policy.encode(&mut t2, &shuffled, NormUse::Batch).unwrap();
        let (h1, h2) = (t1.value(e1.nodes), t2.value(e2.nodes));
        for (k, &src) in perm.iter().enumerate() {
            for c in 0..16 {
                let (x, y) = (h2.get(k, c), h1.get(src, c));
                assert!((x - y).abs() < 1e-10, "seed {seed} row {k}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn critic_is_permutation_invariant() {
    let critic = Critic::new(16, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..10 {
        let map = generate_map_seeded(6, RadiusRange::default(), seed).unwrap();
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng);
        let a = critic.predict(&map).unwrap();
        let b = critic.predict(&map.permuted(&perm).unwrap()).unwrap();
        assert!(a.is_finite() && (a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn critic_fits_costs() {
    let mut critic = Critic::new(16, 2, 1);
    let maps = generate_maps(16, 6, RadiusRange::default(), 123).unwrap();
    let cm = CostModel::default();
    let targets: Vec<f64> = maps
        .iter()
        .map(|m| covsched::solvers::nearest_neighbor_best(m, &cm).unwrap().total_cost)
        .collect();
    let mut adam = AdamState::new(&critic.store, AdamConfig { lr: 1e-2, ..AdamConfig::default() });
    let mut losses = Vec::new();
    for _ in 0..100 {
        let mut total = Grads::zeros_like(&critic.store);
        let mut loss = 0.0;
        for (m, &t) in maps.iter().zip(&targets) {
            let (_, sq, g) = critic.squared_error_grads(m, t).unwrap();
            total.add_assign(&g).unwrap();
            loss += sq;
        }
        total.scale(1.0 / maps.len() as f64);
        adam.step(&mut critic.store, &total).unwrap();
        losses.push(loss / maps.len() as f64);
    }
    let early: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let late: f64 = losses[90..].iter().sum::<f64>() / 10.0;
    assert!(late < 0.5 * early, "mse {early} -> {late}");
}

#[test]
fn checkpoint_round_trip_keeps_greedy_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(quick_config(3), &MapSource::Generated, Some(dir.path())).unwrap();
    let path = out.final_checkpoint.clone().unwrap();
    assert_eq!(path, dir.path().join(FINAL_CHECKPOINT));
    let (loaded, header) = Policy::load_file(&path).unwrap();
    assert_eq!(header.step, 3);
    assert_eq!(header.seed, 3);
    assert_eq!(header.hyperparameters["train"]["batch_size"], 4);
    let cm = CostModel::default();
    for m in generate_maps(100, 7, RadiusRange::default(), 900).unwrap() {
        assert_eq!(out.policy.greedy(&m, &cm).unwrap(), loaded.greedy(&m, &cm).unwrap(), "map {}", m.id);
    }
    let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert!(text.starts_with(METRICS_HEADER));
    let rows = read_metrics(&text).unwrap();
    assert_eq!(rows, out.metrics);
    assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(rows.iter().all(|r| r.wall_ms == 0 && r.mean_cost > 0.0 && r.grad_norm.is_finite()));
}

#[test]
fn zero_epochs_writes_the_initial_policy() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        epochs: 0,
        ..quick_config(8)
    };
    let out = train(config, &MapSource::Generated, Some(dir.path())).unwrap();
    assert!(out.metrics.is_empty());
    let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(text.trim_end(), METRICS_HEADER);
    let (loaded, header) = Policy::load_file(&out.final_checkpoint.unwrap()).unwrap();
    assert_eq!(header.step, 0);
    let mut fresh = Policy::new(tiny(), 8);
    fresh.store.round_to_f32();
    let cm = CostModel::default();
    for m in generate_maps(10, 6, RadiusRange::default(), 1).unwrap() {
        assert_eq!(fresh.greedy(&m, &cm).unwrap(), loaded.greedy(&m, &cm).unwrap());
    }
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        steps_per_epoch: 4,
        checkpoint_every: 2,
        ..quick_config(1)
    };
    train(config, &MapSource::Generated, Some(dir.path())).unwrap();
    for name in ["step-000002.ckpt", "step-000004.ckpt", FINAL_CHECKPOINT] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn critic_baseline_trains() {
    let config = TrainConfig {
        baseline: BaselineKind::Critic,
        ..quick_config(2)
    };
    let out = train(config, &MapSource::Generated, None).unwrap();
    assert_eq!(out.metrics.len(), 3);
    assert!(out.metrics.iter().all(|r| r.mean_advantage.is_finite()));
}

#[test]
fn dataset_source_and_parallel_mode_agree_with_strict() {
    let maps = generate_maps(6, 5, RadiusRange::default(), 40).unwrap();
    let source = MapSource::Dataset(maps);
    let strict = train(quick_config(5), &source, None).unwrap();
    let parallel = train(TrainConfig { strict: false, ..quick_config(5) }, &source, None).unwrap();
    let costs = |m: &[covsched::training::MetricsRow]| m.iter().map(|r| r.mean_cost).collect::<Vec<_>>();
    assert_eq!(costs(&strict.metrics), costs(&parallel.metrics));
}

#[test]
fn empty_batches_and_bad_configs_fail() {
    let mut trainer = Trainer::new(quick_config(1)).unwrap();
    assert!(trainer.train_step(&[]).is_err());
    assert!(Trainer::new(TrainConfig { n_areas: 0, ..quick_config(1) }).is_err());
    let bad_heads = TrainConfig {
        policy: PolicyConfig { heads: 3, ..tiny() },
        ..quick_config(1)
    };
    assert!(Trainer::new(bad_heads).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_and_greedy_schedules_are_valid(seed in 0u64..100_000, n in 1usize..15) {
        let policy = Policy::new(tiny(), seed % 7);
        let map = generate_map_seeded(n, RadiusRange::default(), seed).unwrap();
        let cm = CostModel::default();
        let (d, lp) = policy.greedy(&map, &cm).unwrap();
        prop_assert!(validate_schedule(&map, &d).is_empty());
        prop_assert!(lp <= 0.0 && lp.is_finite());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let (r, _) = policy.rollout(&mut tape, &map, &cm, Chooser::Sample(&mut rng), NormUse::Batch).unwrap();
        prop_assert!(validate_schedule(&map, &r.decisions).is_empty());
        let mut replay = Tape::new();
        let (again, _) = policy
            .rollout::<ChaCha8Rng>(&mut replay, &map, &cm, Chooser::Replay(&r.decisions), NormUse::Batch)
            .unwrap();
        prop_assert_eq!(again.log_prob_value, r.log_prob_value);
    }
}
