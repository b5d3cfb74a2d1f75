use mmwrelay::a3c::{run_learning, EnvConfig, LearnerConfig, NetLayers, Seeds};
use mmwrelay::encoder::{EncoderConfig, StateDesign};
use mmwrelay::modelfile;
use mmwrelay::policy::{ModelParams, NetShape};
use mmwrelay::Error;

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let m = ModelParams::init(NetShape::new(4, 41, 7), 17).unwrap();
    let p1 = dir.path().join("a.bin");
    let p2 = dir.path().join("b.bin");
    modelfile::save(&m, &p1).unwrap();
    let back = modelfile::load(&p1).unwrap();
    assert_eq!(back, m);
    modelfile::save(&back, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn truncated_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = ModelParams::init(NetShape::new(3, 41, 7), 1).unwrap();
    let p = dir.path().join("m.bin");
    let bytes = modelfile::to_bytes(&m);
    std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(modelfile::load(&p), Err(Error::Truncated { .. })));
}

#[test]
fn ptcl_model_rejected_for_ptdl() {
    let dir = tempfile::tempdir().unwrap();
    let m = ModelParams::init(NetShape::new(4, 41, 7), 1).unwrap();
    let p = dir.path().join("m.bin");
    modelfile::save(&m, &p).unwrap();
    let ptdl = EncoderConfig::with_design(StateDesign::Ptdl);
    let (k, x, y) = ptdl.dims(4);
    let err = modelfile::load_for(&p, &NetShape::new(k, x, y)).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    assert!(err.to_string().contains("9x41x7"), "{err}");
    assert!(err.to_string().contains("4x41x7"), "{err}");
}

#[test]
fn trained_model_round_trips() {
    let env = EnvConfig {
        road: mmwrelay::world::RoadConfig {
            n_cells_x: 40,
            roi_length_m: 200.0,
            ..Default::default()
        },
        ..EnvConfig::default()
    };
    let cfg = LearnerConfig {
        max_steps: 4,
        episodes_learn: 1,
        encoder: EncoderConfig {
            half_x: 4,
            ..EncoderConfig::default()
        },
        layers: NetLayers {
            conv1: 2,
            conv2: 2,
            hidden: 3,
        },
        serial: true,
        ..LearnerConfig::default()
    };
    let run = run_learning(&env, &cfg, Seeds::default()).unwrap();
    let bytes = modelfile::to_bytes(&run.model);
    assert_eq!(modelfile::from_bytes(&bytes).unwrap(), run.model);
}
