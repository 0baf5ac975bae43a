use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempcredit::config::{desk_experiment, WidthChoice, WidthPreset};
use tempcredit::decomposer::Decomposer;
use tempcredit::envs::EnvSpec;
use tempcredit::io::{read_jsonl, write_jsonl, TrajectoryRecord};
use tempcredit::trainer::{train, Trainer};
use tempcredit::trajectory::Trajectory;

#[test]
fn trajectory_files_round_trip_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records: Vec<TrajectoryRecord> = (0..20)
        .map(|i| {
            let len = rng.random_range(1..8);
            let states = (0..len).map(|_| (0..3).map(|_| rng.random::<f64>() * 1e3 - 5e2).collect()).collect();
            let actions = (0..len).map(|_| vec![rng.random::<f64>(), f64::MIN_POSITIVE]).collect();
            let t = Trajectory::new(states, actions, rng.random::<f64>() / 3.0).unwrap();
            TrajectoryRecord::new(&t, 9, i)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    write_jsonl(&path, &records).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), records);
}

#[test]
fn trained_models_survive_a_checkpoint() {
    let mut cfg = desk_experiment("ckpt", EnvSpec::ChainMdp { n_states: 4, horizon: 6 }, 3);
    cfg.overrides.batch_steps = Some(64);
    cfg.overrides.widths = Some(WidthChoice::Preset(WidthPreset::Tiny));
    let (trainer, _) = train(cfg.train_config(0).unwrap(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    trainer.save(dir.path()).unwrap();
    let restored = Trainer::load(dir.path()).unwrap();
    assert_eq!(restored.iteration(), 3);
    assert_eq!(restored.env_steps(), trainer.env_steps());

    let probe: Vec<&Trajectory> = trainer.buffer.online().map(|t| t.as_ref()).take(5).collect();
    let kind = trainer.decomposer.as_ref().unwrap().intervals();
    let before = trainer.decomposer.as_ref().unwrap().predict_batch(&probe, kind).unwrap();
    let standalone = Decomposer::load(&dir.path().join("decomposer.json")).unwrap();
    for model in [restored.decomposer.as_ref().unwrap(), &standalone] {
        let after = model.predict_batch(&probe, kind).unwrap();
        for (a, b) in before.iter().zip(&after) {
            for (x, y) in a.per_interval.iter().zip(&b.per_interval) {
                // parameters are stored in single precision
                assert!((x - y).abs() <= 1e-4 * (1.0 + x.abs()), "{x} vs {y}");
            }
        }
    }
}
