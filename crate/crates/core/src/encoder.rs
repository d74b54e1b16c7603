//! Shared-weight five-level feature pyramid.
//!
//! Each stage halves the resolution with a stride-2 3x3 convolution followed by
//! group normalization and ReLU, then applies a configurable number of residual
//! blocks. Stage `i` (1-based) therefore produces features at stride `2^i`.
//! The same [`Encoder`] (and the same parameters) processes the RGB frame and
//! the rendered flow image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::nn::{Conv2d, GroupNorm};
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

pub const LEVELS: usize = 5;
/// Total downsampling factor of the deepest level.
pub const MAX_STRIDE: usize = 1 << LEVELS;
const MAX_CHANNELS: usize = 1024;

/// Batched RGB (or rendered flow) image with values in `[0, 1]` and spatial
/// size divisible by 32.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        validate_image_shape(t.shape())?;
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("image value {v} is outside [0, 1]")));
        }
        Ok(ImageTensor(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }
}

pub fn validate_image_shape(s: Shape) -> Result<()> {
    if s.c != 3 {
        return Err(Error::Shape(format!("image must have 3 channels, got {}", s.c)));
    }
    if s.n == 0 {
        return Err(Error::Shape("image batch is empty".into()));
    }
    for (name, len) in [("height", s.h), ("width", s.w)] {
        if len < MAX_STRIDE || len % MAX_STRIDE != 0 {
            return Err(Error::Shape(format!(
                "{name} {len} is not a positive multiple of {MAX_STRIDE}"
            )));
        }
    }
    Ok(())
}

/// Encoder outputs, finest level first. Level `i` (1-based) has spatial size
/// `(H / 2^i, W / 2^i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidFeatures {
    pub levels: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub base_channels: usize,
    pub width_multipliers: [usize; LEVELS],
    pub blocks_per_stage: [usize; LEVELS],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            base_channels: 16,
            width_multipliers: [1, 1, 2, 2, 4],
            blocks_per_stage: [1; LEVELS],
        }
    }
}

impl EncoderConfig {
    pub fn tiny(base_channels: usize) -> Self {
        EncoderConfig {
            base_channels,
            width_multipliers: [1, 1, 2, 2, 2],
            blocks_per_stage: [1; LEVELS],
        }
    }

    pub fn channels(&self) -> [usize; LEVELS] {
        self.width_multipliers.map(|m| m * self.base_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0
            || self.width_multipliers.contains(&0)
            || self.blocks_per_stage.contains(&0)
        {
            return Err(Error::Config(
                "encoder widths, multipliers and block counts must all be >= 1".into(),
            ));
        }
        let c = self.channels();
        if c.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!(
                "encoder channel widths must be non-decreasing, got {c:?}"
            )));
        }
        if c[LEVELS - 1] > MAX_CHANNELS {
            return Err(Error::Config(format!(
                "deepest encoder level has {} channels, limit is {MAX_CHANNELS}",
                c[LEVELS - 1]
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv2d,
    norm1: GroupNorm,
    conv2: Conv2d,
    norm2: GroupNorm,
}

impl ResBlock {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = self.norm1.forward(g, h)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, h)?;
        let h = self.norm2.forward(g, h)?;
        let y = g.add(x, h)?;
        Ok(g.relu(y))
    }
}

#[derive(Clone, Debug)]
struct Stage {
    down: Conv2d,
    norm: GroupNorm,
    blocks: Vec<ResBlock>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    stages: Vec<Stage>,
}

impl Encoder {
    pub fn new(config: &EncoderConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let widths = config.channels();
        let mut stages = Vec::with_capacity(LEVELS);
        let mut in_c = 3;
        for (i, (&c, &blocks)) in widths.iter().zip(&config.blocks_per_stage).enumerate() {
            let name = format!("encoder.stage{}", i + 1);
            let down_geom = ConvGeom {
                stride: 2,
                padding: 1,
                dilation: 1,
            };
            let down = Conv2d::with_geom(store, rng, &format!("{name}.down"), in_c, c, 3, down_geom, true);
            let norm = GroupNorm::new(store, &format!("{name}.down_norm"), c);
            let blocks = (0..blocks)
                .map(|b| {
                    let bn = format!("{name}.block{b}");
                    ResBlock {
                        conv1: Conv2d::new(store, rng, &format!("{bn}.conv1"), c, c, 3, true),
                        norm1: GroupNorm::new(store, &format!("{bn}.norm1"), c),
                        conv2: Conv2d::new(store, rng, &format!("{bn}.conv2"), c, c, 3, true),
                        norm2: GroupNorm::new(store, &format!("{bn}.norm2"), c),
                    }
                })
                .collect();
            stages.push(Stage { down, norm, blocks });
            in_c = c;
        }
        Ok(Encoder {
            config: config.clone(),
            stages,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn channels(&self) -> [usize; LEVELS] {
        self.config.channels()
    }

    /// Records the encoder on `g`; returns the five levels, finest first.
    pub fn forward(&self, g: &mut Graph, image: Var) -> Result<Vec<Var>> {
        validate_image_shape(g.shape(image))?;
        let mut x = image;
        let mut levels = Vec::with_capacity(LEVELS);
        for stage in &self.stages {
            x = stage.down.forward(g, x)?;
            x = stage.norm.forward(g, x)?;
            x = g.relu(x);
            for block in &stage.blocks {
                x = block.forward(g, x)?;
            }
            levels.push(x);
        }
        Ok(levels)
    }

    pub fn forward_pair(&self, g: &mut Graph, rgb: Var, flow: Var) -> Result<(Vec<Var>, Vec<Var>)> {
        let (a, b) = (g.shape(rgb), g.shape(flow));
        if a != b {
            return Err(Error::Shape(format!(
                "rgb {a} and flow image {b} must have identical shapes"
            )));
        }
        Ok((self.forward(g, rgb)?, self.forward(g, flow)?))
    }

    pub fn encode(&self, params: &ParamStore, image: &ImageTensor) -> Result<PyramidFeatures> {
        let mut g = Graph::new(params);
        let x = g.input(image.tensor().clone());
        let levels = self.forward(&mut g, x)?;
        Ok(PyramidFeatures {
            levels: levels.into_iter().map(|v| g.value(v).clone()).collect(),
        })
    }

    pub fn encode_pair(
        &self,
        params: &ParamStore,
        rgb: &ImageTensor,
        flow: &ImageTensor,
    ) -> Result<(PyramidFeatures, PyramidFeatures)> {
        if rgb.shape() != flow.shape() {
            return Err(Error::Shape(format!(
                "rgb {} and flow image {} must have identical shapes",
                rgb.shape(),
                flow.shape()
            )));
        }
        Ok((self.encode(params, rgb)?, self.encode(params, flow)?))
    }
}
