//! Middlebury color-wheel rendering of flow fields.
//!
//! Hue encodes direction on a 55-color wheel, saturation encodes magnitude
//! relative to a normalization radius. Zero flow is white; vectors beyond the
//! radius are darkened.

use crate::error::{Error, Result};
use crate::syndata::FlowField;
use crate::tensor::{Shape, Tensor};

const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];
pub const WHEEL_SIZE: usize = 55;

/// The 55 wheel colors in `[0, 1]`, red through yellow, green, cyan, blue and
/// magenta.
pub fn color_wheel() -> Vec<[f64; 3]> {
    let ramp = |i: usize, n: usize| (255 * i / n) as f64;
    let mut wheel = Vec::with_capacity(WHEEL_SIZE);
    let [ry, yg, gc, cb, bm, mr] = SEGMENTS;
    for i in 0..ry {
        wheel.push([255.0, ramp(i, ry), 0.0]);
    }
    for i in 0..yg {
        wheel.push([255.0 - ramp(i, yg), 255.0, 0.0]);
    }
    for i in 0..gc {
        wheel.push([0.0, 255.0, ramp(i, gc)]);
    }
    for i in 0..cb {
        wheel.push([0.0, 255.0 - ramp(i, cb), 255.0]);
    }
    for i in 0..bm {
        wheel.push([ramp(i, bm), 0.0, 255.0]);
    }
    for i in 0..mr {
        wheel.push([255.0, 0.0, 255.0 - ramp(i, mr)]);
    }
    wheel.into_iter().map(|c| c.map(|v| v / 255.0)).collect()
}

/// Fractional wheel index in `[0, 54]` for direction `(dx, dy)`. Opposite
/// directions are 27 apart.
pub fn wheel_position(dx: f64, dy: f64) -> f64 {
    let a = (-dy).atan2(-dx) / std::f64::consts::PI;
    (a + 1.0) / 2.0 * (WHEEL_SIZE - 1) as f64
}

fn encode(wheel: &[[f64; 3]], dx: f64, dy: f64) -> [f64; 3] {
    let rad = dx.hypot(dy);
    let fk = wheel_position(dx, dy);
    let k0 = fk.floor() as usize % WHEEL_SIZE;
    let k1 = (k0 + 1) % WHEEL_SIZE;
    let f = fk - fk.floor();
    let mut out = [0.0; 3];
    for c in 0..3 {
        let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        out[c] = if rad <= 1.0 {
            1.0 - rad * (1.0 - col)
        } else {
            col * 0.75
        };
    }
    out
}

/// Renders `flow` as a `(1, 3, H, W)` image, dividing displacements by
/// `norm` (non-positive `norm` renders everything as zero flow).
pub fn render_flow_color(flow: &FlowField, norm: f64) -> Result<Tensor> {
    if !flow.tensor().is_finite() {
        return Err(Error::NonFinite("flow field"));
    }
    if !norm.is_finite() {
        return Err(Error::NonFinite("flow normalization"));
    }
    let wheel = color_wheel();
    let (h, w) = (flow.height(), flow.width());
    let plane = h * w;
    let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    let src = flow.tensor().data();
    let mut out = vec![0.0; 3 * plane];
    for i in 0..plane {
        let rgb = encode(&wheel, src[i] * scale, src[plane + i] * scale);
        for c in 0..3 {
            out[c * plane + i] = rgb[c];
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), out)
}
