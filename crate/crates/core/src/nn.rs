//! Parameterised layers that record themselves onto a [`Graph`].

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::params::{fan_in_normal, ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub geom: ConvGeom,
}

impl Conv2d {
    /// Square kernel, "same" padding for stride 1.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
    ) -> Self {
        Self::with_geom(
            store,
            rng,
            name,
            in_channels,
            out_channels,
            kernel,
            ConvGeom::same(kernel),
            bias,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_geom(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> Self {
        let shape = Shape::new(out_channels, in_channels, kernel, kernel);
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add(format!("{name}.weight"), fan_in_normal(shape, fan_in, rng));
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Tensor::zeros(Shape::new(1, out_channels, 1, 1)),
            )
        });
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            geom,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.forward_with(g, x, self.geom)
    }

    /// Runs with a different stride/padding/dilation than the layer was built with.
    pub fn forward_with(&self, g: &mut Graph, x: Var, geom: ConvGeom) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, geom)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let shape = Shape::new(1, channels, 1, 1);
        GroupNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(shape, 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(shape)),
            groups: default_groups(channels),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.group_norm(x, gamma, beta, self.groups)
    }
}

/// Largest of 8, 4, 2, 1 that divides `channels` and leaves at least two
/// channels per group.
pub fn default_groups(channels: usize) -> usize {
    [8, 4, 2]
        .into_iter()
        .find(|&g| channels % g == 0 && channels / g >= 2)
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_choice() {
        assert_eq!(default_groups(16), 8);
        assert_eq!(default_groups(8), 4);
        assert_eq!(default_groups(6), 2);
        assert_eq!(default_groups(3), 1);
        assert_eq!(default_groups(1), 1);
    }
}
