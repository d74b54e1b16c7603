//! Top-down output decoder.
//!
//! ```text
//! D5' = relu(conv([D5, ASPP(D5)]))
//! Di' = relu(conv([Di, up2(D(i+1)')]))      i = 4..1
//! P   = sigmoid(up2(conv1x1(D1')))
//! ```

use rand::Rng;

use crate::encoder::LEVELS;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::nn::Conv2d;
use crate::params::ParamStore;

/// Dilation rates for maps whose smaller side is at least 7 pixels.
pub const ATROUS_RATES: [usize; 3] = [6, 12, 18];
/// Rates used on the tiny level-5 maps of desk-scale inputs.
pub const SMALL_ATROUS_RATES: [usize; 3] = [1, 2, 3];

pub fn atrous_rates(h: usize, w: usize) -> [usize; 3] {
    if h.min(w) < 7 {
        SMALL_ATROUS_RATES
    } else {
        ATROUS_RATES
    }
}

/// Atrous spatial pyramid pooling: a 1x1 branch, three dilated 3x3 branches
/// and an image-pooling branch, concatenated and projected back to `C`.
#[derive(Clone, Debug)]
pub struct Aspp {
    channels: usize,
    point: Conv2d,
    dilated: [Conv2d; 3],
    pool: Conv2d,
    project: Conv2d,
}

impl Aspp {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        let c = channels;
        let mut conv = |part: &str, cin, k| Conv2d::new(store, rng, &format!("{name}.{part}"), cin, c, k, true);
        Aspp {
            channels,
            point: conv("point", c, 1),
            dilated: [conv("atrous0", c, 3), conv("atrous1", c, 3), conv("atrous2", c, 3)],
            pool: conv("pool", c, 1),
            project: conv("project", 5 * c, 1),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.c != self.channels {
            return Err(Error::Shape(format!(
                "ASPP built for {} channels received {s}",
                self.channels
            )));
        }
        let mut branches = Vec::with_capacity(5);
        let b = self.point.forward(g, x)?;
        branches.push(g.relu(b));
        for (conv, rate) in self.dilated.iter().zip(atrous_rates(s.h, s.w)) {
            let geom = ConvGeom {
                stride: 1,
                padding: rate,
                dilation: rate,
            };
            let b = conv.forward_with(g, x, geom)?;
            branches.push(g.relu(b));
        }
        let pooled = g.global_avg_pool(x);
        let pooled = self.pool.forward(g, pooled)?;
        let pooled = g.relu(pooled);
        branches.push(g.resize(pooled, s.h, s.w)?);
        let cat = g.concat(&branches)?;
        let y = self.project.forward(g, cat)?;
        Ok(g.relu(y))
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    channels: [usize; LEVELS],
    pub aspp: Aspp,
    levels: Vec<Conv2d>,
    head: Conv2d,
}

impl Decoder {
    /// `channels[i]` is the width of fused feature `D(i+1)`; decoded features
    /// keep the same widths.
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, channels: [usize; LEVELS]) -> Self {
        let aspp = Aspp::new(store, rng, "decoder.aspp", channels[LEVELS - 1]);
        let levels = (0..LEVELS)
            .map(|i| {
                let cin = if i == LEVELS - 1 {
                    2 * channels[i]
                } else {
                    channels[i] + channels[i + 1]
                };
                Conv2d::new(store, rng, &format!("decoder.level{}", i + 1), cin, channels[i], 3, true)
            })
            .collect();
        let head = Conv2d::new(store, rng, "decoder.head", channels[0], 1, 1, true);
        Decoder {
            channels,
            aspp,
            levels,
            head,
        }
    }

    /// One step of the top-down chain. `level` is 1-based. For level 5,
    /// `next` is `ASPP(D5)` at the same size; otherwise it is the decoded
    /// level `level + 1` at half the size of `d`.
    pub fn decode_level(&self, g: &mut Graph, level: usize, d: Var, next: Var) -> Result<Var> {
        if !(1..=LEVELS).contains(&level) {
            return Err(Error::Shape(format!("decoder level {level} out of range")));
        }
        let (ds, ns) = (g.shape(d), g.shape(next));
        let next = if level == LEVELS {
            next
        } else {
            if (ns.h * 2, ns.w * 2) != (ds.h, ds.w) {
                return Err(Error::Shape(format!(
                    "level {level}: upsampled {ns} does not match {ds}"
                )));
            }
            g.upsample2(next)?
        };
        let cat = g.concat(&[d, next])?;
        let y = self.levels[level - 1].forward(g, cat)?;
        Ok(g.relu(y))
    }

    /// Runs the full chain on the five fused features (finest first) and
    /// returns `D1'`.
    pub fn decode(&self, g: &mut Graph, fused: &[Var]) -> Result<Var> {
        if fused.len() != LEVELS {
            return Err(Error::Shape(format!(
                "decoder needs {LEVELS} fused levels, got {}",
                fused.len()
            )));
        }
        for (i, (&f, &c)) in fused.iter().zip(&self.channels).enumerate() {
            if g.shape(f).c != c {
                return Err(Error::Shape(format!(
                    "fused level {} has {} channels, decoder expects {c}",
                    i + 1,
                    g.shape(f).c
                )));
            }
        }
        let d5 = fused[LEVELS - 1];
        let context = self.aspp.forward(g, d5)?;
        let mut current = self.decode_level(g, LEVELS, d5, context)?;
        for level in (1..LEVELS).rev() {
            current = self.decode_level(g, level, fused[level - 1], current)?;
        }
        Ok(current)
    }

    /// Projects `D1'` to one channel, upsamples x2 and applies the sigmoid.
    pub fn predict_final(&self, g: &mut Graph, d1: Var) -> Result<Var> {
        let logits = self.head.forward(g, d1)?;
        let up = g.upsample2(logits)?;
        Ok(g.sigmoid(up))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn random(shape: Shape, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.random::<f64>())
    }

    #[test]
    fn aspp_preserves_spatial_size_and_zero_weights_give_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let aspp = Aspp::new(&mut store, &mut rng, "aspp", 4);
        for (h, w) in [(2, 2), (8, 8), (14, 14)] {
            let mut g = Graph::new(&store);
            let x = g.input(random(Shape::new(1, 4, h, w), 2));
            let y = aspp.forward(&mut g, x).unwrap();
            assert_eq!(g.shape(y), Shape::new(1, 4, h, w));
        }
        store.zero_prefix("aspp");
        let mut g = Graph::new(&store);
        let x = g.input(random(Shape::new(1, 4, 2, 2), 3));
        let y = aspp.forward(&mut g, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rates_fall_back_on_small_maps() {
        assert_eq!(atrous_rates(2, 2), SMALL_ATROUS_RATES);
        assert_eq!(atrous_rates(14, 14), ATROUS_RATES);
    }

    #[test]
    fn chain_shapes_for_64_input() {
        let widths = [4, 4, 8, 8, 8];
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dec = Decoder::new(&mut store, &mut rng, widths);
        let mut g = Graph::new(&store);
        let fused: Vec<Var> = (0..LEVELS)
            .map(|i| {
                let side = 32 >> i;
                g.input(random(Shape::new(1, widths[i], side, side), i as u64))
            })
            .collect();
        let d1 = dec.decode(&mut g, &fused).unwrap();
        assert_eq!(g.shape(d1), Shape::new(1, 4, 32, 32));
        let p = dec.predict_final(&mut g, d1).unwrap();
        assert_eq!(g.shape(p), Shape::new(1, 1, 64, 64));
    }

    #[test]
    fn level_five_and_level_one_steps() {
        let widths = [3, 3, 3, 3, 5];
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dec = Decoder::new(&mut store, &mut rng, widths);
        let mut g = Graph::new(&store);
        let d5 = g.input(random(Shape::new(1, 5, 2, 2), 1));
        let ctx = dec.aspp.forward(&mut g, d5).unwrap();
        let d5p = dec.decode_level(&mut g, 5, d5, ctx).unwrap();
        assert_eq!(g.shape(d5p), Shape::new(1, 5, 2, 2));

        let d1 = g.input(random(Shape::new(1, 3, 32, 32), 2));
        let d2p = g.input(random(Shape::new(1, 3, 16, 16), 3));
        let d1p = dec.decode_level(&mut g, 1, d1, d2p).unwrap();
        assert_eq!(g.shape(d1p), Shape::new(1, 3, 32, 32));

        let bad = g.input(random(Shape::new(1, 3, 15, 16), 4));
        assert!(dec.decode_level(&mut g, 1, d1, bad).is_err());
    }

    #[test]
    fn zero_head_predicts_half() {
        let widths = [2; LEVELS];
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dec = Decoder::new(&mut store, &mut rng, widths);
        store.zero_prefix("decoder.head");
        let mut g = Graph::new(&store);
        let d1 = g.input(random(Shape::new(1, 2, 16, 16), 1));
        let p = dec.predict_final(&mut g, d1).unwrap();
        assert!(g.value(p).data().iter().all(|&v| v == 0.5));
    }
}
