use gamechurn::synth::{generate, SynthConfig};
use gamechurn::train::{train, TrainConfig, TrainMode};

fn fixture() -> gamechurn::graph::TemporalBipartiteGraph {
    generate(&SynthConfig { num_players: 80, num_games: 10, num_days: 16, seed: 2, ..SynthConfig::default() }).unwrap().graph
}

#[test]
fn co_training_descends() {
    let out = train(&fixture(), &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap();
    assert!(out.failure.is_none());
    let last = out.log.last().unwrap();
    assert!(last.train_loss <= out.initial_loss, "{} > {}", last.train_loss, out.initial_loss);
}

#[test]
fn serial_runs_give_identical_checkpoints() {
    let g = fixture();
    for mode in [TrainMode::CoTrain, TrainMode::Alternating] {
        let cfg = TrainConfig { epochs: 2, mode, seed: 9, ..TrainConfig::default() };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = pool.install(|| train(&g, &cfg)).unwrap();
        let b = pool.install(|| train(&g, &cfg)).unwrap();
        assert_eq!(a.checkpoint.to_json(), b.checkpoint.to_json());
        assert_eq!(a.log, b.log);
    }
}

#[test]
fn seeds_change_the_model() {
    let g = fixture();
    let a = train(&g, &TrainConfig { epochs: 1, seed: 1, ..TrainConfig::default() }).unwrap();
    let b = train(&g, &TrainConfig { epochs: 1, seed: 2, ..TrainConfig::default() }).unwrap();
    assert_ne!(a.checkpoint.params, b.checkpoint.params);
}
