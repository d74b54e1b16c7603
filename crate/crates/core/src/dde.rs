//! Dual differential enhancement.
//!
//! Each stream is enhanced with a convolution of the other stream's
//! difference from it, `F_e(X, Y) = conv(Y - X) + X`, and the two enhanced
//! streams are fused by concatenation and a 3x3 convolution with ReLU:
//!
//! ```text
//! D = relu(conv_fuse([F_e(R_rgb, R_of), F_e(R_of, R_rgb)]))
//! ```
//!
//! The difference convolutions are 3x3, bias-free and not shared between
//! the two branches.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Conv2d;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Dde {
    channels: usize,
    /// Difference transform of the RGB branch, applied to `R_of - R_rgb`.
    pub diff_rgb: Conv2d,
    /// Difference transform of the flow branch, applied to `R_rgb - R_of`.
    pub diff_flow: Conv2d,
    pub fuse: Conv2d,
}

impl Dde {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        Dde {
            channels,
            diff_rgb: Conv2d::new(store, rng, &format!("{name}.diff_rgb"), channels, channels, 3, false),
            diff_flow: Conv2d::new(store, rng, &format!("{name}.diff_flow"), channels, channels, 3, false),
            fuse: Conv2d::new(store, rng, &format!("{name}.fuse"), 2 * channels, channels, 3, true),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward(&self, g: &mut Graph, r_rgb: Var, r_flow: Var) -> Result<Var> {
        let (a, b) = (g.shape(r_rgb), g.shape(r_flow));
        if a != b {
            return Err(Error::Shape(format!(
                "fusion inputs differ in shape: {a} vs {b}"
            )));
        }
        let e_rgb = differential_enhance(g, &self.diff_rgb, r_rgb, r_flow)?;
        let e_flow = differential_enhance(g, &self.diff_flow, r_flow, r_rgb)?;
        let cat = g.concat(&[e_rgb, e_flow])?;
        let fused = self.fuse.forward(g, cat)?;
        Ok(g.relu(fused))
    }

    pub fn run(&self, params: &ParamStore, r_rgb: &Tensor, r_flow: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(params);
        let a = g.input(r_rgb.clone());
        let b = g.input(r_flow.clone());
        let d = self.forward(&mut g, a, b)?;
        Ok(g.value(d).clone())
    }
}

/// `conv(y - x) + x`.
pub fn differential_enhance(g: &mut Graph, conv: &Conv2d, x: Var, y: Var) -> Result<Var> {
    let (a, b) = (g.shape(x), g.shape(y));
    if a != b {
        return Err(Error::Shape(format!(
            "differential enhancement inputs differ in shape: {a} vs {b}"
        )));
    }
    let diff = g.sub(y, x)?;
    let t = conv.forward(g, diff)?;
    g.add(t, x)
}
