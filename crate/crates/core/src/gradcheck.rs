//! Central finite-difference gradient checking.
//!
//! A probe function builds a graph from input variables. Non-scalar outputs
//! are projected onto fixed random weights so every output element
//! contributes. Up to `coords_per_tensor` entries of each input and each
//! selected parameter are perturbed by `±step`; the reported error is the
//! relative L2 distance between the analytic and numeric gradient vectors.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct FdConfig {
    pub step: f64,
    pub coords_per_tensor: usize,
    /// Parameters whose names start with any of these are checked; empty
    /// checks every parameter.
    pub param_prefixes: Vec<String>,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step: 1e-6,
            coords_per_tensor: 8,
            param_prefixes: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub relative_error: f64,
    pub max_abs_error: f64,
    pub coords: usize,
    pub analytic_norm: f64,
}

enum Target {
    Input(usize),
    Param(crate::params::ParamId),
}

fn evaluate<F>(params: &ParamStore, inputs: &[Tensor], weights: &mut Option<Tensor>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let y = project(&mut g, out, weights)?;
    Ok(g.value(y).data()[0])
}

fn project(g: &mut Graph, out: Var, weights: &mut Option<Tensor>) -> Result<Var> {
    let s = g.shape(out);
    if s.numel() == 1 {
        return Ok(out);
    }
    let w = weights.get_or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        Tensor::from_fn(s, |_, _, _, _| rng.random_range(-1.0..1.0))
    });
    g.dot_const(out, w)
}

/// Compares analytic and finite-difference gradients of `f`.
pub fn check_gradients<F>(params: &ParamStore, inputs: &[Tensor], cfg: &FdConfig, f: F) -> Result<FdReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut weights = None;
    let mut g = Graph::new(params);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let y = project(&mut g, out, &mut weights)?;
    let grads = g.backward(y)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut targets: Vec<(Target, usize)> = Vec::new();
    let pick = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        if len <= cfg.coords_per_tensor {
            (0..len).collect()
        } else {
            let mut v = sample(rng, len, cfg.coords_per_tensor).into_vec();
            v.sort_unstable();
            v
        }
    };
    for (i, t) in inputs.iter().enumerate() {
        for k in pick(t.len(), &mut rng) {
            targets.push((Target::Input(i), k));
        }
    }
    for (id, name, t) in params.iter() {
        let selected = cfg.param_prefixes.is_empty()
            || cfg.param_prefixes.iter().any(|p| name.starts_with(p.as_str()));
        if selected {
            for k in pick(t.len(), &mut rng) {
                targets.push((Target::Param(id), k));
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::Config("no coordinates to check".into()));
    }

    let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0, 0.0, 0.0, 0.0f64);
    let h = cfg.step;
    for (target, k) in &targets {
        let (analytic, numeric) = match target {
            Target::Input(i) => {
                let a = grads.wrt(vars[*i]).map_or(0.0, |t| t.data()[*k]);
                let mut moved = inputs.to_vec();
                moved[*i].data_mut()[*k] += h;
                let up = evaluate(params, &moved, &mut weights, &f)?;
                moved[*i].data_mut()[*k] -= 2.0 * h;
                let down = evaluate(params, &moved, &mut weights, &f)?;
                (a, (up - down) / (2.0 * h))
            }
            Target::Param(id) => {
                let a = grads.param(*id).map_or(0.0, |t| t.data()[*k]);
                let mut moved = params.clone();
                moved.get_mut(*id).data_mut()[*k] += h;
                let up = evaluate(&moved, inputs, &mut weights, &f)?;
                moved.get_mut(*id).data_mut()[*k] -= 2.0 * h;
                let down = evaluate(&moved, inputs, &mut weights, &f)?;
                (a, (up - down) / (2.0 * h))
            }
        };
        let d = analytic - numeric;
        diff2 += d * d;
        a2 += analytic * analytic;
        n2 += numeric * numeric;
        max_abs = max_abs.max(d.abs());
    }
    let scale = a2.sqrt().max(n2.sqrt());
    Ok(FdReport {
        relative_error: if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale },
        max_abs_error: max_abs,
        coords: targets.len(),
        analytic_norm: a2.sqrt(),
    })
}
