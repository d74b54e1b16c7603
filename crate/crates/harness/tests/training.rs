mod common;

use common::{samples, tiny_config};
use vsod_core::FusionMode;
use vsod_harness::{train, Checkpoint, HarnessError, Trainer};

#[test]
fn checkpoint_bytes_are_stable_across_save_and_load() {
    let mut t = Trainer::new(tiny_config(3), samples(1, 2, 32)).unwrap();
    train(&mut t, None, &mut std::io::sink()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    t.checkpoint().save(&a).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    assert_eq!(loaded, t.checkpoint());
    loaded.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn resumed_training_matches_uninterrupted_training_bitwise() {
    let data = samples(2, 2, 32);
    let mut straight = Trainer::new(tiny_config(6), data.clone()).unwrap();
    let full = train(&mut straight, None, &mut std::io::sink()).unwrap();

    let mut first = Trainer::new(tiny_config(3), data.clone()).unwrap();
    train(&mut first, None, &mut std::io::sink()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    first.checkpoint().save(&path).unwrap();
    let mut ckpt = Checkpoint::load(&path).unwrap();
    ckpt.config.max_steps = 6;
    let mut resumed = Trainer::resume(ckpt, data).unwrap();
    let rest = train(&mut resumed, None, &mut std::io::sink()).unwrap();

    let tail: Vec<_> = full.log[3..].iter().map(|l| (l.step, l.total.to_bits())).collect();
    let again: Vec<_> = rest.log.iter().map(|l| (l.step, l.total.to_bits())).collect();
    assert_eq!(tail, again);
    assert_eq!(full.checkpoint.params, rest.checkpoint.params);
}

#[test]
fn zero_steps_yields_the_initial_checkpoint_and_no_log() {
    let data = samples(3, 1, 32);
    let mut t = Trainer::new(tiny_config(0), data.clone()).unwrap();
    let fresh = t.checkpoint();
    let mut log = Vec::new();
    let out = train(&mut t, None, &mut log).unwrap();
    assert!(out.log.is_empty());
    assert!(log.is_empty());
    assert_eq!(out.checkpoint, fresh);
    assert_eq!(out.checkpoint.step, 0);
    assert_eq!(out.checkpoint.adam.t, 0);
}

#[test]
fn same_seed_gives_identical_loss_curves() {
    let data = samples(4, 2, 32);
    let run = |seed| {
        let cfg = vsod_harness::TrainConfig {
            seed,
            ..tiny_config(4)
        };
        let mut t = Trainer::new(cfg, data.clone()).unwrap();
        let out = train(&mut t, None, &mut std::io::sink()).unwrap();
        out.log.iter().map(|l| l.total.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn every_fusion_mode_trains() {
    let data = samples(5, 1, 32);
    for mode in FusionMode::ALL {
        let cfg = vsod_harness::TrainConfig {
            fusion_mode: mode,
            ..tiny_config(2)
        };
        let mut t = Trainer::new(cfg, data.clone()).unwrap();
        let out = train(&mut t, None, &mut std::io::sink()).unwrap();
        assert_eq!(out.log.len(), 2);
        if !mode.uses_gates() {
            assert_eq!(out.log[0].gate_loss, 0.0, "{mode}");
        }
    }
}

#[test]
fn log_has_one_record_per_step() {
    let mut t = Trainer::new(tiny_config(3), samples(6, 1, 32)).unwrap();
    let mut log = Vec::new();
    train(&mut t, None, &mut log).unwrap();
    let text = String::from_utf8(log).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<_> = line.split_whitespace().collect();
        assert_eq!(fields[..2], ["step".to_string(), (i + 1).to_string()]);
        assert_eq!([fields[2], fields[4], fields[6], fields[8]], ["l_f", "l_cag", "total", "wall"]);
    }
}

#[test]
fn periodic_checkpoints_leave_no_temporary_files() {
    let cfg = vsod_harness::TrainConfig {
        checkpoint_interval: 2,
        ..tiny_config(5)
    };
    let mut t = Trainer::new(cfg, samples(7, 1, 32)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    train(&mut t, Some(dir.path()), &mut std::io::sink()).unwrap();
    let names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names, ["checkpoint.bin"]);
    let ckpt = Checkpoint::load(&dir.path().join("checkpoint.bin")).unwrap();
    assert_eq!(ckpt.step, 5);
}

#[test]
fn divergence_aborts_with_a_report() {
    let cfg = vsod_harness::TrainConfig {
        learning_rate: 1e300,
        ..tiny_config(20)
    };
    let mut t = Trainer::new(cfg, samples(8, 1, 32)).unwrap();
    let err = train(&mut t, None, &mut std::io::sink()).unwrap_err();
    assert!(matches!(err, HarnessError::Diverged { .. }), "{err}");
}

#[test]
fn rejects_empty_data_and_corrupt_checkpoints() {
    assert!(matches!(
        Trainer::new(tiny_config(1), Vec::new()),
        Err(HarnessError::Input(_))
    ));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    let t = Trainer::new(tiny_config(1), samples(9, 1, 32)).unwrap();
    let bytes = t.checkpoint().to_bytes();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(HarnessError::Checkpoint { .. })));
    std::fs::write(&path, b"garbage").unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(HarnessError::Checkpoint { .. })));
}
