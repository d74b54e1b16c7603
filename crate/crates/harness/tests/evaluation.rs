mod common;

use common::{samples, tiny_config};
use vsod_core::{Model, Tensor};
use vsod_harness::data::resize_sample;
use vsod_harness::evaluate::{predict_saliency, score_maps};
use vsod_harness::{ablate, evaluate, infer, model_from_checkpoint, Trainer};

fn tiny_model() -> Model {
    Model::new(&tiny_config(0).model(), 3).unwrap()
}

#[test]
fn ground_truth_as_prediction_is_perfect() {
    let data = samples(11, 2, 32);
    let maps: Vec<Tensor> = data.iter().map(|s| s.mask.clone()).collect();
    let r = score_maps(&maps, &data).unwrap();
    assert_eq!((r.max_f_beta, r.mae), (1.0, 0.0));
    // The structure measure's stabilizing epsilons keep it a hair below 1.
    assert!((r.s_measure - 1.0).abs() < 1e-9, "{}", r.s_measure);
}

#[test]
fn constant_half_has_mae_one_half() {
    let data = samples(12, 2, 32);
    let maps: Vec<Tensor> = data.iter().map(|s| Tensor::full(s.mask.shape(), 0.5)).collect();
    let r = score_maps(&maps, &data).unwrap();
    assert!((r.mae - 0.5).abs() < 1e-15);
}

#[test]
fn report_fields_are_bounded() {
    let data = samples(13, 1, 32);
    let e = evaluate(&tiny_model(), &data, None).unwrap();
    let r = &e.report;
    assert_eq!(r.frame_count, data.len());
    for v in [r.max_f_beta, r.s_measure, r.mae, e.confidence_error.unwrap()] {
        assert!((0.0..=1.0).contains(&v), "{v}");
    }
    assert_eq!(e.resized_frames, 0);
}

#[test]
fn odd_sizes_are_resized_and_scored_at_input_resolution() {
    let data: Vec<_> = samples(14, 1, 32)
        .iter()
        .map(|s| resize_sample(s, 40, 50).unwrap())
        .collect();
    let model = tiny_model();
    let (map, pred, resized) = predict_saliency(&model, &data[0].rgb, &data[0].flow_image).unwrap();
    assert!(resized);
    assert_eq!((map.shape().h, map.shape().w), (40, 50));
    assert_eq!((pred.saliency.shape().h, pred.saliency.shape().w), (32, 64));
    let e = evaluate(&model, &data, None).unwrap();
    assert_eq!(e.resized_frames, data.len());
}

#[test]
fn saves_one_map_per_frame() {
    let data = samples(15, 2, 32);
    let dir = tempfile::tempdir().unwrap();
    evaluate(&tiny_model(), &data, Some(dir.path())).unwrap();
    for s in &data {
        assert!(dir.path().join(&s.sequence).join(format!("{:05}.png", s.index)).is_file());
    }
}

#[test]
fn infer_writes_one_identical_map_per_frame() {
    let data = samples(16, 1, 32);
    let root = tempfile::tempdir().unwrap();
    vsod_core::syndata::write_dataset(root.path(), &vsod_core::syndata::generate_dataset(&Default::default()).unwrap()[..1], false).unwrap();
    let seq = std::fs::read_dir(root.path()).unwrap().next().unwrap().unwrap().path();
    let mut t = Trainer::new(tiny_config(2), data).unwrap();
    vsod_harness::train(&mut t, None, &mut std::io::sink()).unwrap();
    let model = model_from_checkpoint(&t.checkpoint()).unwrap();
    let out = root.path().join("maps");
    let first = infer(&model, &seq.join("rgb"), &seq.join("flow"), &out).unwrap();
    let frames = std::fs::read_dir(seq.join("rgb")).unwrap().count();
    assert_eq!(first.len(), frames);
    let bytes: Vec<_> = first.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let second = infer(&model, &seq.join("rgb"), &seq.join("flow"), &out).unwrap();
    assert_eq!(first, second);
    assert_eq!(bytes, second.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>());
    let gray = vsod_core::syndata::io::read_gray_png(&first[0]).unwrap();
    assert_eq!(gray.shape(), vsod_core::Shape::new(1, 1, 64, 64));
}

#[test]
fn infer_rejects_mismatched_frame_counts() {
    let root = tempfile::tempdir().unwrap();
    vsod_core::syndata::write_dataset(root.path(), &vsod_core::syndata::generate_dataset(&Default::default()).unwrap()[..1], false).unwrap();
    let seq = std::fs::read_dir(root.path()).unwrap().next().unwrap().unwrap().path();
    std::fs::remove_file(seq.join("flow").join("00000.png")).unwrap();
    let err = infer(&tiny_model(), &seq.join("rgb"), &seq.join("flow"), &root.path().join("o")).unwrap_err();
    assert!(err.to_string().contains("flow frames"), "{err}");
}

#[test]
fn single_mode_single_seed_ablation_is_train_then_evaluate() {
    let (train_set, eval_set) = (samples(17, 1, 32), samples(18, 1, 32));
    let cfg = tiny_config(3);
    let table = ablate(&cfg, &[cfg.fusion_mode], &[5], &train_set, &eval_set, &mut std::io::sink()).unwrap();
    let mut t = Trainer::new(vsod_harness::TrainConfig { seed: 5, ..cfg.clone() }, train_set.clone()).unwrap();
    vsod_harness::train(&mut t, None, &mut std::io::sink()).unwrap();
    let direct = evaluate(t.model(), &eval_set, None).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].max_f_mean, direct.report.max_f_beta);
    assert_eq!(table.rows[0].mae_mean, direct.report.mae);
    assert_eq!(table.rows[0].max_f_spread, 0.0);
    assert!(ablate(&cfg, &[cfg.fusion_mode], &[], &train_set, &eval_set, &mut std::io::sink()).is_err());
}
