use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vsod_core::cag::gate_tensor;
use vsod_core::dde::{differential_enhance, Dde};
use vsod_core::encoder::{EncoderConfig, ImageTensor};
use vsod_core::{FusionMode, Graph, Model, ModelConfig, ParamStore, Shape, Tensor};

fn image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rng.random::<f64>())
}

#[test]
fn unit_confidence_gate_is_identity() {
    let e = image(8, 8, 1).map(|v| v - 0.5);
    let e = Tensor::stack(&[&e, &e.map(|v| v * 3.0)]).unwrap();
    assert_eq!(gate_tensor(&e, &[1.0, 1.0]).unwrap(), e);
}

#[test]
fn zero_difference_transform_is_identity() {
    let mut store = ParamStore::new();
    let dde = Dde::new(&mut store, &mut ChaCha8Rng::seed_from_u64(2), "dde", 3);
    store.zero_prefix("dde.diff");
    let (x, y) = (image(8, 8, 3), image(8, 8, 4));
    let mut g = Graph::new(&store);
    let (xv, yv) = (g.input(x.clone()), g.input(y));
    for conv in [&dde.diff_rgb, &dde.diff_flow] {
        let out = differential_enhance(&mut g, conv, xv, yv).unwrap();
        assert_eq!(g.value(out), &x);
    }
}

#[test]
fn identical_inputs_give_identical_pyramids() {
    let model = Model::new(&ModelConfig::default(), 5).unwrap();
    let x = ImageTensor::new(image(64, 64, 6)).unwrap();
    let (a, b) = model.encoder().encode_pair(model.params(), &x, &x).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.levels.len(), 5);
}

#[test]
fn prediction_matches_input_resolution() {
    let config = ModelConfig {
        encoder: EncoderConfig::tiny(4),
        fusion_mode: FusionMode::CagDde,
        detach_aux: false,
    };
    let model = Model::new(&config, 7).unwrap();
    let mut sizes: Vec<(usize, usize)> = (32..=448).step_by(32).map(|s| (s, s)).collect();
    sizes.extend([(32, 96), (160, 64)]);
    for (h, w) in sizes {
        let rgb = ImageTensor::new(image(h, w, h as u64)).unwrap();
        let flow = ImageTensor::new(image(h, w, w as u64 + 1)).unwrap();
        let p = model.predict(&rgb, &flow).unwrap();
        assert_eq!(p.saliency.shape(), Shape::new(1, 1, h, w), "input {h}x{w}");
        assert!(p.saliency.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn invalid_resolutions_are_rejected() {
    for (h, w) in [(50, 64), (64, 40), (0, 32), (16, 16)] {
        assert!(ImageTensor::new(Tensor::zeros(Shape::new(1, 3, h, w))).is_err(), "{h}x{w}");
    }
}
