//! Hybrid segmentation loss (BCE + SSIM + IoU) and the full training objective.
//!
//! Every loss has a value-only entry point working on plain tensors and a
//! graph entry point that records the loss with its analytic gradient with
//! respect to the prediction. Ground-truth masks are always constants.

use crate::cag::{self, AuxOutput};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::tensor::{Shape, Tensor};

/// Probability clipping applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;
/// Stabiliser in the soft IoU denominator.
pub const IOU_EPS: f64 = 1e-7;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(p: &Tensor, g: &Tensor, what: &str) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(Error::Shape(format!(
            "{what}: prediction {} and target {} differ in shape",
            p.shape(),
            g.shape()
        )));
    }
    if p.is_empty() {
        return Err(Error::Shape(format!("{what}: empty input")));
    }
    Ok(())
}

/// Mean binary cross entropy with clipped probabilities; returns value and
/// gradient with respect to `p`.
pub fn bce_with_grad(p: &Tensor, g: &Tensor) -> Result<(f64, Tensor)> {
    check_pair(p, g, "bce")?;
    let inv_n = 1.0 / p.len() as f64;
    let mut grad = Tensor::zeros(p.shape());
    let mut total = 0.0;
    for ((&pv, &gv), d) in p.data().iter().zip(g.data()).zip(grad.data_mut()) {
        let pc = pv.clamp(PROB_EPS, 1.0 - PROB_EPS);
        total -= gv * pc.ln() + (1.0 - gv) * (1.0 - pc).ln();
        if pv > PROB_EPS && pv < 1.0 - PROB_EPS {
            *d = (-gv / pc + (1.0 - gv) / (1.0 - pc)) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

pub fn bce_loss(p: &Tensor, g: &Tensor) -> Result<f64> {
    bce_with_grad(p, g).map(|(v, _)| v)
}

/// Normalised 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter over one `h x w` plane with zero padding.
fn filter_plane(x: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW], tmp: &mut [f64], out: &mut [f64]) {
    let r = (SSIM_WINDOW / 2) as isize;
    for y in 0..h {
        let row = &x[y * w..(y + 1) * w];
        for xo in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xi = xo as isize + k as isize - r;
                if xi >= 0 && (xi as usize) < w {
                    acc += t * row[xi as usize];
                }
            }
            tmp[y * w + xo] = acc;
        }
    }
    for y in 0..h {
        for xo in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yi = y as isize + k as isize - r;
                if yi >= 0 && (yi as usize) < h {
                    acc += t * tmp[yi as usize * w + xo];
                }
            }
            out[y * w + xo] = acc;
        }
    }
}

/// `1 - mean(SSIM map)` over Gaussian windows (11x11, sigma 1.5, zero padded
/// at the borders) and its gradient with respect to `p`.
pub fn ssim_with_grad(p: &Tensor, g: &Tensor) -> Result<(f64, Tensor)> {
    check_pair(p, g, "ssim")?;
    let s = p.shape();
    let (h, w) = (s.h, s.w);
    let m = h * w;
    let taps = gaussian_window();
    let inv_n = 1.0 / p.len() as f64;
    let mut grad = Tensor::zeros(s);
    let mut tmp = vec![0.0; m];
    let mut buf = vec![vec![0.0; m]; 5];
    let mut dmu = vec![0.0; m];
    let mut dpp = vec![0.0; m];
    let mut dpg = vec![0.0; m];
    let mut prod = vec![0.0; m];
    let mut total = 0.0;
    for plane in 0..s.n * s.c {
        let pp = &p.data()[plane * m..(plane + 1) * m];
        let gg = &g.data()[plane * m..(plane + 1) * m];
        let [mu_p, mu_g, e_pp, e_gg, e_pg] = &mut buf[..] else {
            unreachable!()
        };
        filter_plane(pp, h, w, &taps, &mut tmp, mu_p);
        filter_plane(gg, h, w, &taps, &mut tmp, mu_g);
        for i in 0..m {
            prod[i] = pp[i] * pp[i];
        }
        filter_plane(&prod, h, w, &taps, &mut tmp, e_pp);
        for i in 0..m {
            prod[i] = gg[i] * gg[i];
        }
        filter_plane(&prod, h, w, &taps, &mut tmp, e_gg);
        for i in 0..m {
            prod[i] = pp[i] * gg[i];
        }
        filter_plane(&prod, h, w, &taps, &mut tmp, e_pg);
        for i in 0..m {
            let (mp, mg) = (mu_p[i], mu_g[i]);
            let var_p = e_pp[i] - mp * mp;
            let var_g = e_gg[i] - mg * mg;
            let cov = e_pg[i] - mp * mg;
            let a1 = 2.0 * mp * mg + SSIM_C1;
            let a2 = 2.0 * cov + SSIM_C2;
            let b1 = mp * mp + mg * mg + SSIM_C1;
            let b2 = var_p + var_g + SSIM_C2;
            let ssim = (a1 * a2) / (b1 * b2);
            total += ssim;
            // Partials of the SSIM value at i with respect to the windowed
            // statistics mu_p, E[p^2] and E[pg].
            dmu[i] = 2.0 * mg * (a2 - a1) / (b1 * b2) - ssim * 2.0 * mp * (1.0 / b1 - 1.0 / b2);
            dpp[i] = -ssim / b2;
            dpg[i] = 2.0 * a1 / (b1 * b2);
        }
        // The zero-padded symmetric filter is its own adjoint.
        let [fa, fb, fc, _, _] = &mut buf[..] else {
            unreachable!()
        };
        filter_plane(&dmu, h, w, &taps, &mut tmp, fa);
        filter_plane(&dpp, h, w, &taps, &mut tmp, fb);
        filter_plane(&dpg, h, w, &taps, &mut tmp, fc);
        let out = &mut grad.data_mut()[plane * m..(plane + 1) * m];
        for i in 0..m {
            out[i] = -inv_n * (fa[i] + 2.0 * pp[i] * fb[i] + gg[i] * fc[i]);
        }
    }
    Ok((1.0 - total * inv_n, grad))
}

pub fn ssim_loss(p: &Tensor, g: &Tensor) -> Result<f64> {
    ssim_with_grad(p, g).map(|(v, _)| v)
}

/// Soft IoU loss `1 - sum(P G) / (sum(P + G - P G) + eps)`, averaged over the batch.
pub fn iou_with_grad(p: &Tensor, g: &Tensor) -> Result<(f64, Tensor)> {
    check_pair(p, g, "iou")?;
    let n = p.shape().n;
    let mut grad = Tensor::zeros(p.shape());
    let mut total = 0.0;
    for b in 0..n {
        let (ps, gs) = (p.sample(b), g.sample(b));
        let inter: f64 = ps.iter().zip(gs).map(|(a, b)| a * b).sum();
        let union: f64 = ps.iter().zip(gs).map(|(a, b)| a + b - a * b).sum::<f64>() + IOU_EPS;
        total += 1.0 - inter / union;
        let d = grad.sample_mut(b);
        for ((dv, &gv), _) in d.iter_mut().zip(gs).zip(ps) {
            *dv = -(gv / union - inter * (1.0 - gv) / (union * union)) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

pub fn iou_loss(p: &Tensor, g: &Tensor) -> Result<f64> {
    iou_with_grad(p, g).map(|(v, _)| v)
}

/// IoU loss with the denominator written as `TN + TP + FP` (soft counts).
///
/// Not a union, and not used in training; kept for side-by-side comparison
/// with [`iou_loss`].
pub fn iou_loss_tn_denominator(p: &Tensor, g: &Tensor) -> Result<f64> {
    check_pair(p, g, "iou")?;
    let n = p.shape().n;
    let mut total = 0.0;
    for b in 0..n {
        let (mut tp, mut tn, mut fp) = (0.0, 0.0, 0.0);
        for (&pv, &gv) in p.sample(b).iter().zip(g.sample(b)) {
            tp += pv * gv;
            tn += (1.0 - pv) * (1.0 - gv);
            fp += pv * (1.0 - gv);
        }
        total += 1.0 - tp / (tn + tp + fp + IOU_EPS);
    }
    Ok(total / n as f64)
}

/// Mean absolute difference between per-sample scalars and constant targets.
pub fn l1_with_grad(s: &Tensor, target: &[f64]) -> Result<(f64, Tensor)> {
    if s.len() != target.len() {
        return Err(Error::Shape(format!(
            "l1: {} values against {} targets",
            s.len(),
            target.len()
        )));
    }
    let inv = 1.0 / s.len() as f64;
    let mut grad = Tensor::zeros(s.shape());
    let mut total = 0.0;
    for ((&v, &t), d) in s.data().iter().zip(target).zip(grad.data_mut()) {
        total += (v - t).abs();
        *d = if v > t {
            inv
        } else if v < t {
            -inv
        } else {
            0.0
        };
    }
    Ok((total * inv, grad))
}

pub fn bce(graph: &mut Graph, p: Var, g: &Tensor) -> Result<Var> {
    let (v, grad) = bce_with_grad(graph.value(p), g)?;
    graph.scalar_fn(p, v, grad)
}

pub fn ssim(graph: &mut Graph, p: Var, g: &Tensor) -> Result<Var> {
    let (v, grad) = ssim_with_grad(graph.value(p), g)?;
    graph.scalar_fn(p, v, grad)
}

pub fn iou(graph: &mut Graph, p: Var, g: &Tensor) -> Result<Var> {
    let (v, grad) = iou_with_grad(graph.value(p), g)?;
    graph.scalar_fn(p, v, grad)
}

pub fn l1(graph: &mut Graph, s: Var, target: &[f64]) -> Result<Var> {
    let (v, grad) = l1_with_grad(graph.value(s), target)?;
    graph.scalar_fn(s, v, grad)
}

/// The three terms of the final-prediction loss and their sum.
#[derive(Clone, Copy, Debug)]
pub struct FinalLoss {
    pub bce: Var,
    pub ssim: Var,
    pub iou: Var,
    pub total: Var,
}

pub fn final_loss(graph: &mut Graph, p: Var, g: &Tensor) -> Result<FinalLoss> {
    let b = bce(graph, p, g)?;
    let s = ssim(graph, p, g)?;
    let i = iou(graph, p, g)?;
    let bs = graph.add(b, s)?;
    let total = graph.add(bs, i)?;
    Ok(FinalLoss {
        bce: b,
        ssim: s,
        iou: i,
        total,
    })
}

pub fn final_loss_value(p: &Tensor, g: &Tensor) -> Result<f64> {
    Ok(bce_loss(p, g)? + ssim_loss(p, g)? + iou_loss(p, g)?)
}

#[derive(Clone, Copy, Debug)]
pub struct TotalLoss {
    pub final_loss: FinalLoss,
    /// Sum of all auxiliary gate losses; `None` when the model has no gates.
    pub cag: Option<Var>,
    pub total: Var,
}

/// Number of auxiliary gate outputs a gated model must provide.
pub const AUX_OUTPUTS: usize = 2 * crate::encoder::LEVELS;

/// Final loss plus one gate loss per (stream, level), each against the
/// full-resolution `mask` area-averaged down to the auxiliary map's size.
pub fn total_loss(graph: &mut Graph, prediction: Var, aux: &[AuxOutput], mask: &Tensor) -> Result<TotalLoss> {
    let fl = final_loss(graph, prediction, mask)?;
    if aux.is_empty() {
        return Ok(TotalLoss {
            final_loss: fl,
            cag: None,
            total: fl.total,
        });
    }
    if aux.len() != AUX_OUTPUTS {
        return Err(Error::Shape(format!(
            "expected {AUX_OUTPUTS} auxiliary outputs, got {}",
            aux.len()
        )));
    }
    let mut sum: Option<Var> = None;
    for a in aux {
        let level_mask = downsample_mask(mask, graph.shape(a.saliency))?;
        let term = cag::cag_loss(graph, a.saliency, a.confidence, &level_mask)?;
        sum = Some(match sum {
            Some(s) => graph.add(s, term)?,
            None => term,
        });
    }
    let cag = sum.expect("aux is non-empty");
    let total = graph.add(fl.total, cag)?;
    Ok(TotalLoss {
        final_loss: fl,
        cag: Some(cag),
        total,
    })
}

/// Area-averages a full-resolution mask to `target`'s spatial size.
pub fn downsample_mask(mask: &Tensor, target: Shape) -> Result<Tensor> {
    let s = mask.shape();
    if s.h == target.h && s.w == target.w {
        return Ok(mask.clone());
    }
    if target.h == 0 || s.h % target.h != 0 || s.h / target.h != s.w / target.w.max(1) {
        return Err(Error::Shape(format!(
            "cannot area-downsample mask {s} to {}x{}",
            target.h, target.w
        )));
    }
    kernels::area_downsample(mask, s.h / target.h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: usize, w: usize, data: &[f64]) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, h, w), data.to_vec()).unwrap()
    }

    #[test]
    fn bce_of_half_is_ln2() {
        let p = Tensor::full(Shape::new(2, 1, 4, 4), 0.5);
        let g = Tensor::from_fn(p.shape(), |_, _, y, x| ((x + y) % 2) as f64);
        assert!((bce_loss(&p, &g).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_of_inverted_mask_is_minus_ln_eps() {
        let g = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, _| (y < 2) as u8 as f64);
        let p = g.map(|v| 1.0 - v);
        let want = -(PROB_EPS.ln());
        let got = bce_loss(&p, &g).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        assert!((got - 16.118).abs() < 1e-3);
    }

    #[test]
    fn iou_of_half_prediction() {
        let g = t(4, 4, &[1., 1., 0., 0., 1., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.]);
        let p = g.map(|v| 0.5 * v);
        // inter = 0.5 * 4, union = sum(p + g - p g) = 4 * (0.5 + 1 - 0.5) = 4
        let got = iou_loss(&p, &g).unwrap();
        assert!((got - (1.0 - 2.0 / (4.0 + IOU_EPS))).abs() < 1e-15);
        assert!((got - 0.5).abs() < 1e-7);
    }

    #[test]
    fn iou_disjoint_and_equal() {
        let g = t(2, 2, &[1., 0., 0., 0.]);
        let p = t(2, 2, &[0., 1., 0., 0.]);
        assert!((iou_loss(&p, &g).unwrap() - 1.0).abs() < 1e-12);
        assert!(iou_loss(&g, &g).unwrap() < 1e-6);
    }

    #[test]
    fn tn_denominator_differs_from_union() {
        let g = t(2, 2, &[1., 0., 0., 0.]);
        let p = t(2, 2, &[1., 1., 0., 0.]);
        let union = iou_loss(&p, &g).unwrap();
        let printed = iou_loss_tn_denominator(&p, &g).unwrap();
        assert!((union - 0.5).abs() < 1e-6);
        // tp = 1, tn = 2, fp = 1
        assert!((printed - 0.75).abs() < 1e-6);
    }

    #[test]
    fn ssim_of_identical_and_constant_maps_is_zero() {
        let g = Tensor::from_fn(Shape::new(1, 1, 16, 16), |_, _, y, x| ((x / 4 + y / 4) % 2) as f64);
        assert!(ssim_loss(&g, &g).unwrap().abs() < 1e-12);
        let c = Tensor::full(Shape::new(1, 1, 12, 12), 0.3);
        assert!(ssim_loss(&c, &c).unwrap().abs() < 1e-12);
    }

    #[test]
    fn l1_sign_gradient() {
        let s = Tensor::from_vec(Shape::new(2, 1, 1, 1), vec![0.2, 0.9]).unwrap();
        let (v, g) = l1_with_grad(&s, &[0.5, 0.5]).unwrap();
        assert!((v - 0.35).abs() < 1e-12);
        assert_eq!(g.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let a = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let b = Tensor::zeros(Shape::new(1, 1, 4, 5));
        assert!(bce_loss(&a, &b).is_err());
        assert!(ssim_loss(&a, &b).is_err());
        assert!(iou_loss(&a, &b).is_err());
    }

    #[test]
    fn mask_downsampling_keeps_mass() {
        let m = Tensor::from_fn(Shape::new(1, 1, 8, 8), |_, _, y, x| (x < 3 && y < 5) as u8 as f64);
        let d = downsample_mask(&m, Shape::new(1, 1, 2, 2)).unwrap();
        assert!((d.sum() * 16.0 - m.sum()).abs() < 1e-12);
        assert!(downsample_mask(&m, Shape::new(1, 1, 3, 3)).is_err());
    }
}
