//! Joint horizontal flip and rescale of a training sample.
//!
//! The RGB frame, flow rendering and mask are transformed together. When the
//! raw flow field is available it is transformed instead of the rendering
//! (flipping negates `dx`, scaling multiplies displacements) and the image is
//! re-rendered. After scaling, the result is cropped or padded back to the
//! original size; padding is black for RGB, neutral for flow and background
//! for the mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernels::resize_bilinear;
use crate::syndata::{render_flow_color, FlowField, Sample};
use crate::tensor::Tensor;

pub const SCALES: [f64; 3] = [0.75, 1.0, 1.25];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub scale: f64,
    /// Position of the crop or pad window as a fraction of the slack.
    pub offset_y: f64,
    pub offset_x: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        scale: 1.0,
        offset_y: 0.5,
        offset_x: 0.5,
    };

    pub fn random(rng: &mut impl Rng) -> Self {
        AugmentParams {
            flip: rng.random_bool(0.5),
            scale: SCALES[rng.random_range(0..SCALES.len())],
            offset_y: rng.random(),
            offset_x: rng.random(),
        }
    }
}

/// Augments with parameters drawn from `seed`.
pub fn augment(sample: &Sample, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment_with(sample, &AugmentParams::random(&mut rng))
}

fn flip_horizontal(t: &Tensor) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(s, |n, c, y, x| t.at(n, c, y, s.w - 1 - x))
}

/// Nearest-neighbour resize with half-pixel centers; keeps binary masks binary.
pub fn resize_nearest(t: &Tensor, h: usize, w: usize) -> Tensor {
    let s = t.shape();
    let src = |out: usize, len: usize, len_in: usize| ((out * 2 + 1) * len_in / (2 * len)).min(len_in - 1);
    Tensor::from_fn(s.with_spatial(h, w), |n, c, y, x| {
        t.at(n, c, src(y, h, s.h), src(x, w, s.w))
    })
}

/// Crops or pads `t` to `h x w`, placing the window by the offset fractions.
fn fit(t: &Tensor, h: usize, w: usize, oy: f64, ox: f64, fill: f64) -> Tensor {
    let s = t.shape();
    // Source offset: positive when cropping, negative when padding.
    let shift = |have: usize, want: usize, frac: f64| -> i64 {
        let off = (frac.clamp(0.0, 1.0) * have.abs_diff(want) as f64).round() as i64;
        if have >= want {
            off
        } else {
            -off
        }
    };
    let (dy, dx) = (shift(s.h, h, oy), shift(s.w, w, ox));
    Tensor::from_fn(s.with_spatial(h, w), |n, c, y, x| {
        let (sy, sx) = (y as i64 + dy, x as i64 + dx);
        if sy < 0 || sx < 0 || sy >= s.h as i64 || sx >= s.w as i64 {
            fill
        } else {
            t.at(n, c, sy as usize, sx as usize)
        }
    })
}

pub fn augment_with(sample: &Sample, p: &AugmentParams) -> Sample {
    if !p.flip && p.scale == 1.0 {
        return sample.clone();
    }
    let s = sample.rgb.shape();
    let (h, w) = (s.h, s.w);
    let sh = ((h as f64 * p.scale).round() as usize).max(1);
    let sw = ((w as f64 * p.scale).round() as usize).max(1);

    let transform = |t: &Tensor, fill: f64, nearest: bool| {
        let t = if p.flip { flip_horizontal(t) } else { t.clone() };
        let t = if (sh, sw) == (h, w) {
            t
        } else if nearest {
            resize_nearest(&t, sh, sw)
        } else {
            resize_bilinear(&t, sh, sw).expect("positive sizes")
        };
        fit(&t, h, w, p.offset_y, p.offset_x, fill)
    };

    let rgb = transform(&sample.rgb, 0.0, false);
    let mask = transform(&sample.mask, 0.0, true);
    let (flow, flow_image, flow_norm) = match &sample.flow {
        Some(field) => {
            let mut raw = field.tensor().clone();
            if p.flip {
                for v in &mut raw.data_mut()[..h * w] {
                    *v = -*v;
                }
            }
            let mut raw = transform(&raw, 0.0, false);
            raw.scale(p.scale);
            let field = FlowField::new(raw).expect("finite flow stays finite");
            let norm = sample.flow_norm * p.scale;
            let image = render_flow_color(&field, norm).expect("finite flow renders");
            (Some(field), image, norm)
        }
        None => (None, transform(&sample.flow_image, 1.0, false), sample.flow_norm),
    };
    Sample {
        sequence: sample.sequence.clone(),
        index: sample.index,
        rgb,
        flow_image,
        mask,
        flow,
        flow_norm,
    }
}
