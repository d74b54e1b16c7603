use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vsod_core::cag::{self, Cag};
use vsod_core::dde::{differential_enhance, Dde};
use vsod_core::decoder::{Aspp, Decoder};
use vsod_core::encoder::EncoderConfig;
use vsod_core::gradcheck::{check_gradients, FdConfig, FdReport};
use vsod_core::losses;
use vsod_core::{FusionMode, Model, ModelConfig, ParamStore, Shape, Tensor};

const TOL: f64 = 1e-5;

fn uniform(shape: Shape, lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

fn binary(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_bool(0.4) as u8 as f64)
}

fn assert_close(what: &str, r: FdReport) {
    assert!(r.analytic_norm > 0.0, "{what}: gradient is identically zero");
    assert!(r.relative_error <= TOL, "{what}: relative error {:.3e} over {} coords", r.relative_error, r.coords);
}

/// Biases start at zero, which puts ReLU inputs fed by dead units exactly on
/// the kink; random biases move every probe point off it.
fn jitter_biases(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().filter(|&id| store.name(id).ends_with(".bias")).collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
    }
}

fn fd(coords: usize) -> FdConfig {
    FdConfig {
        coords_per_tensor: coords,
        ..FdConfig::default()
    }
}

#[test]
fn gate_forward() {
    let mut store = ParamStore::new();
    let gate = Cag::new(&mut store, &mut ChaCha8Rng::seed_from_u64(1), "cag", 8);
    jitter_biases(&mut store, 1);
    let e = uniform(Shape::new(2, 8, 6, 6), -1.0, 1.0, 2);
    {
        let r = check_gradients(&store, &[e.clone()], &fd(12), |g, v| {
            let o = gate.forward(g, v[0], false)?;
            // Probe all three outputs at once.
            let a = g.sum(o.saliency);
            let b = g.sum(o.confidence);
            let ab = g.add(a, b)?;
            let c = g.scale(o.gated, 0.1);
            let c = g.sum(c);
            g.add(ab, c)
        })
        .unwrap();
        assert_close("gate forward", r);
    }
}

#[test]
fn detached_gate_passes_only_the_gated_path() {
    let mut store = ParamStore::new();
    let gate = Cag::new(&mut store, &mut ChaCha8Rng::seed_from_u64(1), "cag", 8);
    let e = uniform(Shape::new(2, 8, 4, 4), -1.0, 1.0, 2);
    let mut g = vsod_core::Graph::new(&store);
    let v = g.input_with_grad(e);
    let o = gate.forward(&mut g, v, true).unwrap();
    let a = g.sum(o.saliency);
    let b = g.sum(o.gated);
    let loss = g.add(a, b).unwrap();
    let grads = g.backward(loss).unwrap();
    let de = grads.wrt(v).unwrap();
    let s = g.value(o.confidence).data().to_vec();
    for n in 0..2 {
        assert!(de.sample(n).iter().all(|&d| d == s[n]));
    }
}

#[test]
fn gate_loss() {
    let mut store = ParamStore::new();
    let gate = Cag::new(&mut store, &mut ChaCha8Rng::seed_from_u64(3), "cag", 4);
    jitter_biases(&mut store, 3);
    let e = uniform(Shape::new(2, 4, 8, 8), -1.0, 1.0, 4);
    let mask = binary(Shape::new(2, 1, 8, 8), 5);
    let r = check_gradients(&store, &[e], &fd(12), |g, v| {
        let o = gate.forward(g, v[0], false)?;
        cag::cag_loss(g, o.saliency, o.confidence, &mask)
    })
    .unwrap();
    assert_close("gate loss", r);
}

#[test]
fn gate_loss_on_direct_inputs() {
    let store = ParamStore::new();
    let p = uniform(Shape::new(3, 1, 6, 6), 0.05, 0.95, 6);
    let s = uniform(Shape::new(3, 1, 1, 1), 0.1, 0.9, 7);
    let mask = binary(Shape::new(3, 1, 6, 6), 8);
    let r = check_gradients(&store, &[p, s], &fd(40), |g, v| cag::cag_loss(g, v[0], v[1], &mask)).unwrap();
    assert_close("gate loss inputs", r);
}

#[test]
fn differential_enhancement() {
    let mut store = ParamStore::new();
    let dde = Dde::new(&mut store, &mut ChaCha8Rng::seed_from_u64(9), "dde", 4);
    jitter_biases(&mut store, 9);
    let x = uniform(Shape::new(1, 4, 6, 6), -1.0, 1.0, 10);
    let y = uniform(Shape::new(1, 4, 6, 6), -1.0, 1.0, 11);
    let r = check_gradients(&store, &[x.clone(), y.clone()], &fd(16), |g, v| {
        differential_enhance(g, &dde.diff_rgb, v[0], v[1])
    })
    .unwrap();
    assert_close("differential enhancement", r);
    let r = check_gradients(&store, &[x, y], &fd(16), |g, v| dde.forward(g, v[0], v[1])).unwrap();
    assert_close("dde fuse", r);
}

#[test]
fn aspp() {
    let mut store = ParamStore::new();
    let aspp = Aspp::new(&mut store, &mut ChaCha8Rng::seed_from_u64(12), "aspp", 4);
    jitter_biases(&mut store, 12);
    for side in [2, 8] {
        let x = uniform(Shape::new(1, 4, side, side), -1.0, 1.0, 13);
        let r = check_gradients(&store, &[x], &fd(10), |g, v| aspp.forward(g, v[0])).unwrap();
        assert_close("aspp", r);
    }
}

#[test]
fn decode_chain() {
    let widths = [2, 2, 4, 4, 4];
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, &mut ChaCha8Rng::seed_from_u64(14), widths);
    jitter_biases(&mut store, 14);
    let fused: Vec<Tensor> = (0..5)
        .map(|i| uniform(Shape::new(1, widths[i], 16 >> i, 16 >> i), 0.0, 1.0, 20 + i as u64))
        .collect();
    let r = check_gradients(&store, &fused, &fd(6), |g, v| {
        let d1 = dec.decode(g, v)?;
        dec.predict_final(g, d1)
    })
    .unwrap();
    assert_close("decode chain", r);
}

#[test]
fn final_losses() {
    let store = ParamStore::new();
    let shape = Shape::new(2, 1, 12, 12);
    let p = uniform(shape, 0.02, 0.98, 30);
    let mask = binary(shape, 31);
    type LossFn = fn(&mut vsod_core::Graph, vsod_core::Var, &Tensor) -> vsod_core::Result<vsod_core::Var>;
    let cases: [(&str, LossFn); 3] = [("bce", losses::bce), ("ssim", losses::ssim), ("iou", losses::iou)];
    for (name, loss) in cases {
        let r = check_gradients(&store, &[p.clone()], &fd(64), |g, v| loss(g, v[0], &mask)).unwrap();
        assert_close(name, r);
    }
}

#[test]
fn full_model() {
    for mode in [FusionMode::CagDde, FusionMode::Concat] {
        let config = ModelConfig {
            encoder: EncoderConfig::tiny(4),
            fusion_mode: mode,
            detach_aux: false,
        };
        let mut model = Model::new(&config, 40).unwrap();
        jitter_biases(model.params_mut(), 40);
        let rgb = uniform(Shape::new(1, 3, 32, 32), 0.0, 1.0, 41);
        let flow = uniform(Shape::new(1, 3, 32, 32), 0.0, 1.0, 42);
        let mask = binary(Shape::new(1, 1, 32, 32), 43);
        let r = check_gradients(model.params(), &[rgb, flow], &fd(2), |g, v| {
            let out = model.forward(g, v[0], v[1])?;
            Ok(losses::total_loss(g, out.prediction, &out.aux, &mask)?.total)
        })
        .unwrap();
        assert_close(mode.as_str(), r);
    }
}
