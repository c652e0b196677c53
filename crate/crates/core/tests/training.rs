use sstrack::config::RunConfig;
use sstrack::model::ModelConfig;
use sstrack::pipeline::{log_path, read_log, sibling, train};
use sstrack::synth::{generate_dataset, Preset};

fn tiny(epochs: usize) -> RunConfig {
    let mut r = RunConfig {
        model: ModelConfig {
            patch_size: 8,
            embed_dim: 16,
            depth: 1,
            num_heads: 2,
            ref_size: 16,
            search_size: 32,
            ..Default::default()
        },
        ..Default::default()
    };
    r.train.epochs = epochs;
    r.train.steps_per_epoch = 2;
    r.train.batch_size = 2;
    r.train.lr_drop_epoch = 1;
    r
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = generate_dataset(Preset::Ci, 4, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full.ckpt");
    let part = dir.path().join("part.ckpt");
    let log_full = train(&tiny(2), &data, &full, false).unwrap();
    train(&tiny(1), &data, &part, false).unwrap();
    let log_part = train(&tiny(2), &data, &part, true).unwrap();
    assert_eq!(log_full, log_part);
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&part).unwrap());
    assert_eq!(read_log(&log_path(&part)).unwrap(), log_full);
}

#[test]
fn epoch_and_best_checkpoints_are_written() {
    let data = generate_dataset(Preset::Ci, 4, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ckpt");
    let log = train(&tiny(2), &data, &out, false).unwrap();
    assert_eq!(log.len(), 4);
    assert_eq!(log.iter().map(|e| e.step).collect::<Vec<_>>(), [0, 1, 2, 3]);
    assert!(log[2].lr < log[0].lr, "step drop after epoch 1");
    for tag in ["epoch001", "epoch002", "best"] {
        assert!(sibling(&out, tag).exists(), "{tag}");
    }
}

#[test]
fn zero_steps_writes_initial_checkpoint() {
    let data = generate_dataset(Preset::Ci, 4, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ckpt");
    assert!(train(&tiny(0), &data, &out, false).unwrap().is_empty());
    let (model, ckpt) = sstrack::pipeline::load_tracker(&out).unwrap();
    assert_eq!(ckpt.meta["step"], 0);
    let fresh = sstrack::model::Tracker::<f32>::new(tiny(0).model).unwrap();
    for (a, b) in model.params.iter().zip(fresh.params.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}
