use vsod_core::syndata::{
    self, augment, augment_with, generate_dataset, generate_sequence, load_dataset, render_flow_color, wheel_position,
    write_dataset, AugmentParams, Corruption, DatasetConfig, FlowField, SceneConfig, Sequence, ShapeKind,
};
use vsod_core::{Error, Shape, Tensor};

fn eroded_mask(mask: &Tensor, y: usize, x: usize) -> bool {
    let s = mask.shape();
    if y == 0 || x == 0 || y + 1 >= s.h || x + 1 >= s.w {
        return false;
    }
    (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| mask.at(0, 0, yy, xx) == 1.0))
}

/// Mean absolute difference between frame t and frame t+1 sampled at the
/// flow-displaced position, over interior pixels of the salient object.
fn warp_error(seq: &Sequence, t: usize) -> (f64, usize) {
    let a = &seq.samples[t];
    let b = &seq.samples[t + 1];
    let flow = a.flow.as_ref().unwrap();
    let s = a.rgb.shape();
    let (mut err, mut count) = (0.0, 0usize);
    for y in 0..s.h {
        for x in 0..s.w {
            if !eroded_mask(&a.mask, y, x) {
                continue;
            }
            let (dx, dy) = flow.at(y, x);
            let (ty, tx) = (y as f64 + dy, x as f64 + dx);
            if ty < 0.0 || tx < 0.0 || ty >= s.h as f64 || tx >= s.w as f64 {
                continue;
            }
            for c in 0..3 {
                err += (a.rgb.at(0, c, y, x) - b.rgb.at(0, c, ty as usize, tx as usize)).abs();
            }
            count += 3;
        }
    }
    (err / count.max(1) as f64, count)
}

#[test]
fn same_seed_is_bitwise_identical() {
    let cfg = SceneConfig::default();
    assert_eq!(generate_sequence(&cfg, 11).unwrap(), generate_sequence(&cfg, 11).unwrap());
}

#[test]
fn flow_warps_object_interiors_exactly() {
    for cfg in [SceneConfig::default(), SceneConfig::fast_motion(), SceneConfig::multiple_objects()] {
        for seed in 0..3 {
            let seq = generate_sequence(&cfg, seed).unwrap();
            for t in 0..cfg.frames - 1 {
                let (err, count) = warp_error(&seq, t);
                assert!(count > 0);
                assert!(err <= 2.0 / 255.0, "seed {seed} frame {t}: {err}");
            }
        }
    }
}

#[test]
fn disk_flow_equals_its_displacement() {
    let cfg = SceneConfig {
        kinds: vec![ShapeKind::Disk],
        min_speed: 2.0,
        max_speed: 2.0,
        ..SceneConfig::default()
    };
    let seq = generate_sequence(&cfg, 4).unwrap();
    let centroid = |m: &Tensor| {
        let s = m.shape();
        let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
        for y in 0..s.h {
            for x in 0..s.w {
                if m.at(0, 0, y, x) == 1.0 {
                    sy += y as f64;
                    sx += x as f64;
                    n += 1.0;
                }
            }
        }
        (sx / n, sy / n)
    };
    for t in 0..cfg.frames - 1 {
        let a = &seq.samples[t];
        let (cx0, cy0) = centroid(&a.mask);
        let (cx1, cy1) = centroid(&seq.samples[t + 1].mask);
        let flow = a.flow.as_ref().unwrap();
        let s = a.mask.shape();
        for y in 0..s.h {
            for x in 0..s.w {
                if a.mask.at(0, 0, y, x) == 1.0 {
                    assert_eq!(flow.at(y, x), (cx1 - cx0, cy1 - cy0));
                }
            }
        }
        let (dx, dy) = flow.at(cy0.round() as usize, cx0.round() as usize);
        assert!(dx.hypot(dy) <= 2.0 + 1e-12);
    }
}

#[test]
fn camera_motion_moves_the_background() {
    let cfg = SceneConfig {
        camera_speed: 2.0,
        ..SceneConfig::default()
    };
    let seq = generate_sequence(&cfg, 5).unwrap();
    let a = &seq.samples[0];
    let flow = a.flow.as_ref().unwrap();
    let bg = (0..64 * 64).find(|&i| a.mask.data()[i] == 0.0).unwrap();
    let (dx, dy) = flow.at(bg / 64, bg % 64);
    assert_eq!(dx.hypot(dy), 2.0);
    assert!(flow.max_magnitude() <= cfg.max_displacement());
}

#[test]
fn challenge_presets() {
    let low = SceneConfig::low_contrast();
    assert!(low.contrast < 0.1);
    let seq = generate_sequence(&low, 1).unwrap();
    let s = &seq.samples[0];
    let (mut fg, mut bg, mut nf, mut nb) = ([0.0; 3], [0.0; 3], 0.0, 0.0);
    for i in 0..64 * 64 {
        let inside = s.mask.data()[i] == 1.0;
        for c in 0..3 {
            let v = s.rgb.data()[c * 64 * 64 + i];
            if inside {
                fg[c] += v;
            } else {
                bg[c] += v;
            }
        }
        if inside {
            nf += 1.0;
        } else {
            nb += 1.0;
        }
    }
    let dist = (0..3).map(|c| (fg[c] / nf - bg[c] / nb).powi(2)).sum::<f64>().sqrt();
    assert!(dist < 0.15, "mean color distance {dist}");

    let multi = generate_sequence(&SceneConfig::multiple_objects(), 2).unwrap();
    let s = &multi.samples[0];
    let flow = s.flow.as_ref().unwrap();
    let moving = (0..64 * 64).filter(|&i| flow.at(i / 64, i % 64) != (0.0, 0.0)).count();
    let labeled = s.mask.data().iter().filter(|&&v| v == 1.0).count();
    assert!(moving > labeled, "distractors should move without being labeled");
}

#[test]
fn flow_rendering_properties() {
    let zero = render_flow_color(&FlowField::zeros(8, 8), 1.0).unwrap();
    assert!(zero.data().iter().all(|&v| v == 1.0));
    let d = wheel_position(1.0, 2.0) - wheel_position(-1.0, -2.0);
    assert!((d.abs() - 27.0).abs() < 1e-12);
    let bad = Tensor::full(Shape::new(1, 2, 2, 2), f64::NAN);
    assert!(FlowField::new(bad).is_err());
}

#[test]
fn augmentation_invariants() {
    let seq = generate_sequence(&SceneConfig::default(), 3).unwrap();
    let s = &seq.samples[2];
    let flip = AugmentParams {
        flip: true,
        ..AugmentParams::IDENTITY
    };
    let twice = augment_with(&augment_with(s, &flip), &flip);
    assert_eq!(twice.rgb, s.rgb);
    assert_eq!(twice.mask, s.mask);
    assert_eq!(twice.flow, s.flow);
    for (a, b) in twice.flow_image.data().iter().zip(s.flow_image.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(&augment_with(s, &AugmentParams::IDENTITY), s);

    // Flipping a raw field negates dx.
    let flipped = augment_with(s, &flip);
    let (f0, f1) = (s.flow.as_ref().unwrap(), flipped.flow.as_ref().unwrap());
    assert_eq!(f1.at(5, 63 - 7).0, -f0.at(5, 7).0);

    for seed in 0..40 {
        let a = augment(s, seed);
        assert_eq!(a.rgb.shape(), s.rgb.shape());
        assert!(a.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(a.flow_image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    for scale in syndata::SCALES {
        let p = AugmentParams {
            scale,
            ..AugmentParams::IDENTITY
        };
        let a = augment_with(s, &p);
        assert_eq!(a.mask.shape(), s.mask.shape());
    }
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        sequences: 2,
        scene: SceneConfig {
            frames: 3,
            ..SceneConfig::default()
        },
        ..DatasetConfig::default()
    };
    let seqs = generate_dataset(&cfg).unwrap();
    write_dataset(dir.path(), &seqs, true).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.len(), 2);
    for (a, b) in seqs.iter().zip(&loaded) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.samples.len(), b.samples.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.mask, y.mask);
            assert!(x.rgb.zip_map(&y.rgb, |p, q| (p - q).abs()).unwrap().max_abs() <= 1.0 / 255.0);
            assert!(x.flow_image.zip_map(&y.flow_image, |p, q| (p - q).abs()).unwrap().max_abs() <= 1.0 / 255.0);
            assert_eq!(x.flow, y.flow);
            assert_eq!(x.flow_norm, y.flow_norm);
        }
    }
}

#[test]
fn loading_reports_empty_and_broken_datasets() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::EmptyDataset(_))));

    let seqs = generate_dataset(&DatasetConfig {
        sequences: 1,
        ..DatasetConfig::default()
    })
    .unwrap();
    write_dataset(dir.path(), &seqs, false).unwrap();
    let mask = dir.path().join(&seqs[0].name).join("mask").join("00002.png");
    std::fs::remove_file(&mask).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Frame { sequence, frame, .. }) => {
            assert_eq!(sequence, seqs[0].name);
            assert_eq!(frame, 2);
        }
        other => panic!("expected a frame error, got {other:?}"),
    }
    std::fs::write(&mask, b"not a png").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Frame { frame: 2, .. })));
}

#[test]
fn corruption_damages_flow_only() {
    let cfg = DatasetConfig {
        sequences: 4,
        corrupt_fraction: 0.5,
        corruption: Corruption::Zero,
        ..DatasetConfig::default()
    };
    let clean = generate_dataset(&DatasetConfig {
        corrupt_fraction: 0.0,
        ..cfg.clone()
    })
    .unwrap();
    let dirty = generate_dataset(&cfg).unwrap();
    let mut damaged = 0;
    for (a, b) in clean.iter().zip(&dirty) {
        assert_eq!(a.samples[0].rgb, b.samples[0].rgb);
        assert_eq!(a.samples[0].mask, b.samples[0].mask);
        if b.samples[0].flow.is_none() {
            damaged += 1;
            assert!(b.samples[0].flow_image.data().iter().all(|&v| v == 0.0));
        }
    }
    assert_eq!(damaged, 2);
}
