use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmwrelay::a3c::{advantage, run_eval, run_learning, EnvConfig, LearnerConfig, NetLayers, ParameterServer, Policy, Seeds};
use mmwrelay::baselines::VfaParams;
use mmwrelay::encoder::{EncoderConfig, StateDesign};
use mmwrelay::modelfile;
use mmwrelay::policy::{Gradients, ModelParams, NetShape};
use mmwrelay::world::{MobilityMode, RoadConfig};

fn small_env() -> EnvConfig {
    EnvConfig {
        road: RoadConfig {
            n_cells_x: 60,
            roi_length_m: 300.0,
            ..RoadConfig::default()
        },
        density: 0.03,
        r_mm: 0.5,
        r_ctrl: 0.5,
        mobility: MobilityMode::ConstantVelocity,
    }
}

fn small_cfg() -> LearnerConfig {
    LearnerConfig {
        max_steps: 6,
        episodes_learn: 3,
        episodes_test: 3,
        encoder: EncoderConfig {
            half_x: 6,
            ..EncoderConfig::default()
        },
        layers: NetLayers {
            conv1: 2,
            conv2: 2,
            hidden: 4,
        },
        serial: true,
        ..LearnerConfig::default()
    }
}

#[test]
fn advantage_matches_discounted_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let n = rng.gen_range(1..8);
        let gamma = rng.gen_range(0.0..0.99);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..100.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..100.0)).collect();
        let bootstrap = rng.gen_range(-10.0..100.0);
        let out = advantage(&rewards, &values, bootstrap, gamma).unwrap();
        for tau in 0..n {
            let mut r = gamma.powi((n - tau) as i32) * bootstrap;
            for u in 0..n - tau {
                r += gamma.powi(u as i32) * rewards[tau + u];
            }
            assert!((out[tau].0 - r).abs() < 1e-9 * r.abs().max(1.0));
            assert!((out[tau].1 - (r - values[tau])).abs() < 1e-9 * r.abs().max(1.0));
        }
    }
}

#[test]
fn rmsprop_step_by_hand() {
    let shape = NetShape::new(3, 3, 3);
    let params = ModelParams::init(shape, 0).unwrap();
    let cfg = LearnerConfig::default();
    let mut server = ParameterServer::new(params.clone());
    let mut g = Gradients::zeros(&shape);
    g.data[0] = 2.0;
    g.data[1] = -0.5;
    server.apply(&g, &cfg).unwrap();
    // m = 0.01 g², step = 7e-4 g / sqrt(m + 0.1)
    let m0 = 0.01 * 4.0;
    let m1 = 0.01 * 0.25;
    assert!((server.mean_square()[0] - m0).abs() < 1e-15);
    assert!((server.params().as_slice()[0] - (params.as_slice()[0] - 7e-4 * 2.0 / (m0 + 0.1f64).sqrt())).abs() < 1e-15);
    assert!((server.params().as_slice()[1] - (params.as_slice()[1] + 7e-4 * 0.5 / (m1 + 0.1f64).sqrt())).abs() < 1e-15);
    assert_eq!(server.params().as_slice()[2..], params.as_slice()[2..]);
    server.apply(&g, &cfg).unwrap();
    let m0b = 0.99 * m0 + 0.01 * 4.0;
    assert!((server.mean_square()[0] - m0b).abs() < 1e-15);
    assert_eq!(server.updates(), 2);
}

#[test]
fn serial_learning_is_bitwise_reproducible() {
    let env = small_env();
    let cfg = small_cfg();
    let a = run_learning(&env, &cfg, Seeds::default()).unwrap();
    let b = run_learning(&env, &cfg, Seeds::default()).unwrap();
    assert_eq!(modelfile::to_bytes(&a.model), modelfile::to_bytes(&b.model));
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.metrics.write_episodes_csv(&mut ca).unwrap();
    b.metrics.write_episodes_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a.metrics.episodes.len(), 3);
    assert_eq!(a.metrics.steps.len(), 18);
}

#[test]
fn each_window_takes_t_max_steps() {
    let env = small_env();
    for (t_max, steps) in [(2, 6), (3, 6), (4, 6)] {
        let cfg = LearnerConfig {
            t_max,
            max_steps: steps,
            ..small_cfg()
        };
        let run = run_learning(&env, &cfg, Seeds::default()).unwrap();
        let windows = steps.div_ceil(t_max);
        let agents: usize = run.metrics.episodes.iter().map(|e| e.n_agents).sum();
        assert_eq!(run.updates as usize, agents * windows);
    }
}

#[test]
fn eval_leaves_model_untouched_and_transfers() {
    let env = small_env();
    let cfg = small_cfg();
    let run = run_learning(&env, &cfg, Seeds::default()).unwrap();
    let before = modelfile::to_bytes(&run.model);
    let transfer = EnvConfig {
        density: 0.01,
        r_mm: 1.0,
        ..small_env()
    };
    for e in [&env, &transfer] {
        let m = run_eval(&Policy::Rl(&run.model), e, &cfg, Seeds::default()).unwrap();
        assert_eq!(m.episodes.len(), 3);
        assert_eq!(m.steps.len(), 18);
    }
    assert_eq!(modelfile::to_bytes(&run.model), before);
}

#[test]
fn baselines_share_initial_layouts() {
    let env = small_env();
    let cfg = small_cfg();
    let stay = run_eval(&Policy::Stay, &env, &cfg, Seeds::default()).unwrap();
    let vfa = run_eval(&Policy::Vfa(VfaParams::default()), &env, &cfg, Seeds::default()).unwrap();
    let random = run_eval(
        &Policy::Stay,
        &EnvConfig {
            mobility: MobilityMode::RandomWalk,
            ..small_env()
        },
        &cfg,
        Seeds::default(),
    )
    .unwrap();
    for ((a, b), c) in stay.episodes.iter().zip(&vfa.episodes).zip(&random.episodes) {
        assert_eq!(a.initial_coverage, b.initial_coverage);
        assert_eq!(a.initial_coverage, c.initial_coverage);
    }
    for e in &stay.episodes {
        assert_eq!(e.final_coverage, e.initial_coverage);
    }
}

#[test]
fn ptdl_learning_runs() {
    let env = small_env();
    let cfg = LearnerConfig {
        encoder: EncoderConfig {
            design: StateDesign::Ptdl,
            ..small_cfg().encoder
        },
        ..small_cfg()
    };
    let run = run_learning(&env, &cfg, Seeds::default()).unwrap();
    assert_eq!(run.model.shape().planes, 9);
}
