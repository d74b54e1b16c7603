//! Two-stream video salient object detection on the CPU.
//!
//! The network encodes an RGB frame and a rendered optical-flow image with a
//! shared five-level pyramid, re-weights each level of each stream by a
//! learned confidence ([`cag`]), fuses the streams with differential
//! enhancement ([`dde`]) and decodes a full-resolution saliency map
//! ([`decoder`]). Training uses a BCE + SSIM + IoU loss plus deep supervision
//! of every gate ([`losses`]); [`metrics`] implements the max F-measure,
//! S-measure and MAE evaluation protocol and [`syndata`] generates synthetic
//! videos with exact ground-truth flow.
//!
//! Differentiation is handled by a small reverse-mode engine ([`graph`])
//! over `f64` NCHW tensors ([`tensor`]).

pub mod cag;
pub mod dde;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod syndata;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use model::{FusionMode, Model, ModelConfig, ModelOutput, Prediction};
pub use params::{ParamId, ParamStore};
pub use tensor::{Shape, Tensor};

/// Guide chapters, compiled so their snippets stay in sync with the API.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/autodiff.md")]
    struct Autodiff;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Network;
    #[doc = include_str!("../../../book/src/losses.md")]
    struct Losses;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    struct SyntheticData;
    #[doc = include_str!("../../../book/src/gradient-checking.md")]
    struct GradientChecking;
}
