//! End-to-end two-stream network and its fusion variants.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cag::{AuxOutput, Cag, Stream};
use crate::dde::Dde;
use crate::decoder::Decoder;
use crate::encoder::{Encoder, EncoderConfig, ImageTensor, LEVELS};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Conv2d;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// How the RGB and flow pyramids are merged at every level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Confidence gates on both streams, differential-enhancement fusion.
    CagDde,
    /// Confidence gates, concatenation fusion.
    CagOnly,
    /// No gates, differential-enhancement fusion.
    DdeOnly,
    /// Concatenation then 3x3 convolution.
    #[serde(alias = "cat")]
    Concat,
    /// Element-wise sum then 3x3 convolution.
    Add,
    /// Element-wise product then 3x3 convolution.
    Mul,
}

impl FusionMode {
    pub const ALL: [FusionMode; 6] = [
        FusionMode::CagDde,
        FusionMode::CagOnly,
        FusionMode::DdeOnly,
        FusionMode::Concat,
        FusionMode::Add,
        FusionMode::Mul,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::CagDde => "cag_dde",
            FusionMode::CagOnly => "cag_only",
            FusionMode::DdeOnly => "dde_only",
            FusionMode::Concat => "concat",
            FusionMode::Add => "add",
            FusionMode::Mul => "mul",
        }
    }

    pub fn uses_gates(self) -> bool {
        matches!(self, FusionMode::CagDde | FusionMode::CagOnly)
    }

    pub fn uses_dde(self) -> bool {
        matches!(self, FusionMode::CagDde | FusionMode::DdeOnly)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cag_dde" | "ours" => Ok(FusionMode::CagDde),
            "cag_only" => Ok(FusionMode::CagOnly),
            "dde_only" => Ok(FusionMode::DdeOnly),
            "concat" | "cat" => Ok(FusionMode::Concat),
            "add" => Ok(FusionMode::Add),
            "mul" => Ok(FusionMode::Mul),
            other => Err(Error::UnknownFusionMode(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BaselineOp {
    Concat,
    Add,
    Mul,
}

#[derive(Clone, Debug)]
enum LevelFusion {
    Dde(Dde),
    Baseline { op: BaselineOp, conv: Conv2d },
}

impl LevelFusion {
    fn forward(&self, g: &mut Graph, rgb: Var, flow: Var) -> Result<Var> {
        match self {
            LevelFusion::Dde(d) => d.forward(g, rgb, flow),
            LevelFusion::Baseline { op, conv } => {
                let merged = match op {
                    BaselineOp::Concat => g.concat(&[rgb, flow])?,
                    BaselineOp::Add => g.add(rgb, flow)?,
                    BaselineOp::Mul => g.mul(rgb, flow)?,
                };
                let y = conv.forward(g, merged)?;
                Ok(g.relu(y))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub fusion_mode: FusionMode,
    /// Stop auxiliary gate losses from reaching the encoder.
    pub detach_aux: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            fusion_mode: FusionMode::CagDde,
            detach_aux: false,
        }
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Full-resolution saliency map.
    pub prediction: Var,
    /// One entry per (stream, level) when gates are enabled, RGB levels first.
    pub aux: Vec<AuxOutput>,
}

/// Inference results detached from any graph.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub saliency: Tensor,
    pub aux_maps: Vec<Tensor>,
    /// `confidences[k][b]` for auxiliary output `k` and batch entry `b`.
    pub confidences: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    encoder: Encoder,
    /// `[rgb, flow]` gates, one per level.
    gates: Option<[Vec<Cag>; 2]>,
    fusions: Vec<LevelFusion>,
    decoder: Decoder,
    params: ParamStore,
}

impl Model {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&config.encoder, &mut store, &mut rng)?;
        let widths = encoder.channels();
        let mode = config.fusion_mode;
        let gates = mode.uses_gates().then(|| {
            [Stream::Rgb, Stream::Flow].map(|stream| {
                widths
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| {
                        let name = format!("cag.{}.level{}", stream.name(), i + 1);
                        Cag::new(&mut store, &mut rng, &name, c)
                    })
                    .collect()
            })
        });
        let fusions = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let name = format!("fusion.level{}", i + 1);
                if mode.uses_dde() {
                    return LevelFusion::Dde(Dde::new(&mut store, &mut rng, &name, c));
                }
                let (op, cin) = match mode {
                    FusionMode::Add => (BaselineOp::Add, c),
                    FusionMode::Mul => (BaselineOp::Mul, c),
                    _ => (BaselineOp::Concat, 2 * c),
                };
                let conv = Conv2d::new(&mut store, &mut rng, &format!("{name}.conv"), cin, c, 3, true);
                LevelFusion::Baseline { op, conv }
            })
            .collect();
        let decoder = Decoder::new(&mut store, &mut rng, widths);
        Ok(Model {
            config: config.clone(),
            encoder,
            gates,
            fusions,
            decoder,
            params: store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fusion_mode(&self) -> FusionMode {
        self.config.fusion_mode
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// Gate for `stream` at 1-based `level`, if the mode has gates.
    pub fn gate(&self, stream: Stream, level: usize) -> Option<&Cag> {
        let idx = match stream {
            Stream::Rgb => 0,
            Stream::Flow => 1,
        };
        self.gates.as_ref().and_then(|g| g[idx].get(level - 1))
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Replaces all parameter values; names and shapes must match.
    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Config(format!(
                "parameter count mismatch: model has {}, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((_, n1, v1), (_, n2, v2)) in self.params.iter().zip(params.iter()) {
            if n1 != n2 || v1.shape() != v2.shape() {
                return Err(Error::Config(format!(
                    "parameter `{n2}` {} does not match `{n1}` {}",
                    v2.shape(),
                    v1.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, rgb: Var, flow: Var) -> Result<ModelOutput> {
        let (e_rgb, e_flow) = self.encoder.forward_pair(g, rgb, flow)?;
        let mut aux = Vec::new();
        let (r_rgb, r_flow) = match &self.gates {
            None => (e_rgb, e_flow),
            Some(gates) => {
                let mut out = [Vec::with_capacity(LEVELS), Vec::with_capacity(LEVELS)];
                for (si, (stream, feats)) in [(Stream::Rgb, &e_rgb), (Stream::Flow, &e_flow)]
                    .into_iter()
                    .enumerate()
                {
                    for (i, (&e, cag)) in feats.iter().zip(&gates[si]).enumerate() {
                        let o = cag.forward(g, e, self.config.detach_aux)?;
                        aux.push(AuxOutput {
                            stream,
                            level: i + 1,
                            saliency: o.saliency,
                            confidence: o.confidence,
                        });
                        out[si].push(o.gated);
                    }
                }
                let [a, b] = out;
                (a, b)
            }
        };
        let fused = r_rgb
            .iter()
            .zip(&r_flow)
            .zip(&self.fusions)
            .map(|((&a, &b), f)| f.forward(g, a, b))
            .collect::<Result<Vec<_>>>()?;
        let d1 = self.decoder.decode(g, &fused)?;
        let prediction = self.decoder.predict_final(g, d1)?;
        Ok(ModelOutput { prediction, aux })
    }

    pub fn predict(&self, rgb: &ImageTensor, flow: &ImageTensor) -> Result<Prediction> {
        self.predict_tensors(rgb.tensor(), flow.tensor())
    }

    pub(crate) fn predict_tensors(&self, rgb: &Tensor, flow: &Tensor) -> Result<Prediction> {
        let mut g = Graph::new(&self.params);
        let a = g.input(rgb.clone());
        let b = g.input(flow.clone());
        let out = self.forward(&mut g, a, b)?;
        Ok(Prediction {
            saliency: g.value(out.prediction).clone(),
            aux_maps: out.aux.iter().map(|a| g.value(a.saliency).clone()).collect(),
            confidences: out
                .aux
                .iter()
                .map(|a| g.value(a.confidence).data().to_vec())
                .collect(),
        })
    }
}
