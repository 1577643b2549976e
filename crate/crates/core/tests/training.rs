use hgan::config::RunConfig;
use hgan::dataio::{make_synthetic, SyntheticKind};
use hgan::generator::sample_latents;
use hgan::nn::Params;
use hgan::training::{build_d_loss, run_benchmark, train_step, RunRecord, TrainConfig, TrainState, BENCHMARK_VARIANTS};
use hgan::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(steps: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.train.total_steps = steps;
    cfg.train.batch_size = 8;
    cfg.run.eval_every = 0;
    cfg.run.eval_samples = 64;
    cfg.run.data_n = 256;
    cfg
}

fn fresh(cfg: &RunConfig) -> TrainState<f32> {
    TrainState::new(&cfg.generator, &cfg.discriminator, cfg.train.seed).unwrap()
}

fn real_batch(n: usize) -> Tensor<f32> {
    make_synthetic(SyntheticKind::TwoMode, n, 8, 3).unwrap().images
}

#[test]
fn discriminator_loss_leaves_generator_untouched() {
    let cfg = small_config(1);
    let state = fresh(&cfg);
    let z = sample_latents::<f32, _>(&mut ChaCha8Rng::seed_from_u64(1), 8, cfg.generator.latent_dim);
    let (mut g, loss) = build_d_loss(&state.generator, &state.discriminator, &real_batch(8), &z).unwrap();
    g.backward(loss).unwrap();
    for (name, t) in state.generator.named() {
        let grad = g.grad_of(t).unwrap_or_default();
        assert!(grad.iter().all(|&v| v == 0.0), "{name} received gradient");
    }
    let any_d = state.discriminator.named().iter().any(|(_, t)| g.grad_of(t).unwrap().iter().any(|&v| v != 0.0));
    assert!(any_d);
}

#[test]
fn one_step_updates_both_networks() {
    let cfg = small_config(1);
    let before = fresh(&cfg);
    let mut after = before.clone();
    let rec = train_step(&mut after, &real_batch(8), &cfg.train).unwrap();
    assert_eq!(rec.step, 1);
    assert!(!rec.collapsed && rec.loss_d.is_finite() && rec.loss_g.is_finite());
    let changed = |a: Vec<(String, &Tensor<f32>)>, b: Vec<(String, &Tensor<f32>)>| {
        a.iter().zip(&b).any(|((_, x), (_, y))| x.data() != y.data())
    };
    assert!(changed(before.generator.named(), after.generator.named()));
    assert!(changed(before.discriminator.named(), after.discriminator.named()));
    assert_eq!(after.opt_d.t, cfg.train.d_steps_per_g_step as u64);
    assert_eq!(after.opt_g.t, 1);
}

#[test]
fn several_discriminator_steps_per_generator_step() {
    let mut cfg = small_config(1);
    cfg.train.d_steps_per_g_step = 3;
    let mut state = fresh(&cfg);
    train_step(&mut state, &real_batch(8), &cfg.train).unwrap();
    assert_eq!((state.opt_d.t, state.opt_g.t, state.step), (3, 1, 1));
}

fn run(cfg: &RunConfig, steps: usize) -> (Vec<RunRecord>, TrainState<f32>) {
    let mut state = fresh(cfg);
    let batch = real_batch(8);
    let recs = (0..steps).map(|_| train_step(&mut state, &batch, &cfg.train).unwrap().without_timing()).collect();
    (recs, state)
}

#[test]
fn identical_seed_gives_identical_records() {
    let cfg = small_config(5);
    let (a, sa) = run(&cfg, 5);
    let (b, sb) = run(&cfg, 5);
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    let mut other = cfg.clone();
    other.train.seed = 99;
    assert_ne!(run(&other, 5).0, a);
}

#[test]
fn non_finite_forward_freezes_the_run() {
    let cfg = small_config(1);
    let mut state = fresh(&cfg);
    state.discriminator.visit_mut("", &mut |name, t| {
        if name.ends_with("bias") {
            t.data_mut().fill(f32::INFINITY);
        }
    });
    let before = state.clone();
    let rec = train_step(&mut state, &real_batch(8), &cfg.train).unwrap();
    assert!(rec.collapsed && state.collapsed);
    let mut expected = before.clone();
    expected.collapsed = true;
    assert_eq!(state, expected);
    let rec = train_step(&mut state, &real_batch(8), &cfg.train).unwrap();
    assert!(rec.collapsed);
    assert_eq!(state, expected);
}

#[test]
fn train_config_validation() {
    let ok = TrainConfig::default();
    ok.validate().unwrap();
    for bad in [
        TrainConfig { lr_g: 0.0, ..ok.clone() },
        TrainConfig { lr_d: -1.0, ..ok.clone() },
        TrainConfig { adam_beta1: 1.0, ..ok.clone() },
        TrainConfig { adam_beta2: -0.1, ..ok.clone() },
        TrainConfig { batch_size: 1, ..ok.clone() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn two_hundred_step_smoke_run() {
    let cfg = small_config(200);
    let data = make_synthetic(SyntheticKind::TwoMode, cfg.run.data_n, 8, 0).unwrap();
    let summary = hgan::training::run_training(&cfg, &data, None).unwrap();
    assert_eq!(summary.records.len(), 200);
    assert!(!summary.collapsed);
    for r in &summary.records {
        assert!(r.loss_d.is_finite() && r.loss_g.is_finite() && !r.collapsed);
    }
}

#[test]
fn benchmark_rows_and_determinism() {
    let mut cfg = small_config(10);
    cfg.run.eval_samples = 32;
    let data = make_synthetic(SyntheticKind::TwoMode, 128, 8, 0).unwrap();
    let rows = run_benchmark(&BENCHMARK_VARIANTS, &cfg, &data).unwrap();
    assert_eq!(rows.len(), 3);
    for (row, name) in rows.iter().zip(BENCHMARK_VARIANTS) {
        assert_eq!(row.discriminator, name);
        assert!(row.collapsed || row.fid_proxy.is_some());
    }
    assert!(rows[2].params * 10 < rows[0].params);
    assert_eq!(rows, run_benchmark(&BENCHMARK_VARIANTS, &cfg, &data).unwrap());
    assert!(run_benchmark(&[], &cfg, &data).is_err());
}
