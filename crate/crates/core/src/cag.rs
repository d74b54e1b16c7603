//! Confidence-guided adaptive gate.
//!
//! For one pyramid level of one stream the gate
//!
//! 1. predicts an auxiliary saliency map `P` from the features `E`
//!    (three 3x3 convolutions, sigmoid),
//! 2. predicts a per-sample confidence `s = sigmoid(proj(GAP(convs([P, E]))))`,
//! 3. returns the re-calibrated features `R = s * E`.
//!
//! During training `s` is regressed (L1) toward the IoU of the binarized `P`
//! with the level's ground truth, and `P` is supervised with BCE.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses;
use crate::nn::Conv2d;
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

/// Threshold used to turn soft maps into sets for the IoU target.
pub const BINARIZE_AT: f64 = 0.5;

/// Single-channel probability map, `(batch, 1, h, w)` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap(Tensor);

impl SaliencyMap {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().c != 1 {
            return Err(Error::Shape(format!(
                "saliency map must have one channel, got {}",
                t.shape()
            )));
        }
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("saliency value {v} outside [0, 1]")));
        }
        Ok(SaliencyMap(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Ground-truth mask: binary at full resolution, soft after area downsampling.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask(Tensor);

impl Mask {
    pub fn binary(t: Tensor) -> Result<Self> {
        if let Some(&v) = t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryMask(v));
        }
        Self::soft(t)
    }

    pub fn soft(t: Tensor) -> Result<Self> {
        if t.shape().c != 1 {
            return Err(Error::Shape(format!("mask must have one channel, got {}", t.shape())));
        }
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Mask(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Rgb,
    Flow,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Rgb => "rgb",
            Stream::Flow => "flow",
        }
    }
}

/// Auxiliary outputs of one gate, kept on the graph for the loss.
#[derive(Clone, Copy, Debug)]
pub struct AuxOutput {
    pub stream: Stream,
    /// 1-based pyramid level.
    pub level: usize,
    pub saliency: Var,
    pub confidence: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct CagOutput {
    pub gated: Var,
    pub saliency: Var,
    pub confidence: Var,
}

#[derive(Clone, Debug)]
pub struct Cag {
    channels: usize,
    seg: [Conv2d; 3],
    conf: [Conv2d; 3],
    proj: Conv2d,
}

fn reduced(c: usize, by: usize) -> usize {
    (c / by).max(1)
}

impl Cag {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        let (half, quarter) = (reduced(channels, 2), reduced(channels, 4));
        let mut conv = |part: &str, cin, cout, k| {
            Conv2d::new(store, rng, &format!("{name}.{part}"), cin, cout, k, true)
        };
        let seg = [
            conv("seg0", channels, half, 3),
            conv("seg1", half, quarter, 3),
            conv("seg2", quarter, 1, 3),
        ];
        let conf = [
            conv("conf0", channels + 1, half, 3),
            conv("conf1", half, quarter, 3),
            conv("conf2", quarter, quarter, 3),
        ];
        let proj = conv("proj", quarter, 1, 1);
        Cag {
            channels,
            seg,
            conf,
            proj,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn check_features(&self, g: &Graph, e: Var) -> Result<Shape> {
        let s = g.shape(e);
        if s.c != self.channels {
            return Err(Error::Shape(format!(
                "gate built for {} channels received {s}",
                self.channels
            )));
        }
        Ok(s)
    }

    /// Auxiliary saliency map `P`, same spatial size as `e`.
    pub fn segment(&self, g: &mut Graph, e: Var) -> Result<Var> {
        self.check_features(g, e)?;
        let mut x = self.seg[0].forward(g, e)?;
        x = g.relu(x);
        x = self.seg[1].forward(g, x)?;
        x = g.relu(x);
        x = self.seg[2].forward(g, x)?;
        Ok(g.sigmoid(x))
    }

    /// Per-sample confidence of shape `(batch, 1, 1, 1)`.
    pub fn predict_confidence(&self, g: &mut Graph, e: Var, p: Var) -> Result<Var> {
        let es = self.check_features(g, e)?;
        let ps = g.shape(p);
        if (ps.n, ps.c, ps.h, ps.w) != (es.n, 1, es.h, es.w) {
            return Err(Error::Shape(format!(
                "saliency map {ps} does not match features {es}"
            )));
        }
        let mut x = g.concat(&[p, e])?;
        for conv in &self.conf {
            x = conv.forward(g, x)?;
            x = g.relu(x);
        }
        let pooled = g.global_avg_pool(x);
        let logit = self.proj.forward(g, pooled)?;
        Ok(g.sigmoid(logit))
    }

    /// Runs the gate. With `detach_aux`, the auxiliary branches see a copy of
    /// `e` that does not pass gradients back into the encoder; the gated
    /// output always does.
    pub fn forward(&self, g: &mut Graph, e: Var, detach_aux: bool) -> Result<CagOutput> {
        let aux_in = if detach_aux { g.detach(e) } else { e };
        let saliency = self.segment(g, aux_in)?;
        let confidence = self.predict_confidence(g, aux_in, saliency)?;
        let gated = gate(g, e, confidence)?;
        Ok(CagOutput {
            gated,
            saliency,
            confidence,
        })
    }

    /// Tensor-level convenience returning `(R, P, s)`.
    pub fn run(&self, params: &ParamStore, e: &Tensor) -> Result<(Tensor, SaliencyMap, Vec<f64>)> {
        let mut g = Graph::new(params);
        let x = g.input(e.clone());
        let out = self.forward(&mut g, x, false)?;
        Ok((
            g.value(out.gated).clone(),
            SaliencyMap(g.value(out.saliency).clone()),
            g.value(out.confidence).data().to_vec(),
        ))
    }
}

/// `R[b, ...] = E[b, ...] * s[b]`.
pub fn gate(g: &mut Graph, e: Var, s: Var) -> Result<Var> {
    g.scale_batch(e, s)
}

/// Plain-tensor gate.
pub fn gate_tensor(e: &Tensor, s: &[f64]) -> Result<Tensor> {
    let n = e.shape().n;
    if s.len() != n {
        return Err(Error::Shape(format!(
            "{} confidences for a batch of {n}",
            s.len()
        )));
    }
    let mut out = e.clone();
    for (b, &k) in s.iter().enumerate() {
        out.sample_mut(b).iter_mut().for_each(|v| *v *= k);
    }
    Ok(out)
}

/// Per-sample IoU of `p` and `g`, both binarized at 0.5. Two empty sets score 1.
pub fn iou_target(p: &Tensor, g: &Tensor) -> Result<Vec<f64>> {
    if p.shape() != g.shape() {
        return Err(Error::Shape(format!(
            "iou target: {} vs {}",
            p.shape(),
            g.shape()
        )));
    }
    Ok((0..p.shape().n)
        .map(|b| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&pv, &gv) in p.sample(b).iter().zip(g.sample(b)) {
                let (a, t) = (pv >= BINARIZE_AT, gv >= BINARIZE_AT);
                inter += (a && t) as usize;
                union += (a || t) as usize;
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect())
}

/// `BCE(P, G_i) + mean_b |s_b - IoU(P_b, G_b)|` with the IoU held constant.
pub fn cag_loss(graph: &mut Graph, p: Var, s: Var, g_level: &Tensor) -> Result<Var> {
    let target = iou_target(graph.value(p), g_level)?;
    let seg = losses::bce(graph, p, g_level)?;
    let reg = losses::l1(graph, s, &target)?;
    graph.add(seg, reg)
}

pub fn cag_loss_value(p: &Tensor, s: &[f64], g_level: &Tensor) -> Result<f64> {
    let target = iou_target(p, g_level)?;
    let st = Tensor::from_vec(Shape::new(s.len(), 1, 1, 1), s.to_vec())?;
    Ok(losses::bce_loss(p, g_level)? + losses::l1_with_grad(&st, &target)?.0)
}
