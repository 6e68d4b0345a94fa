use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{Bound, ParamId, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Identity => x,
        }
    }
}

/// Fully connected network on `[N, widths[0]]` rows. Hidden layers use
/// `activation`; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        widths: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "{prefix}: MLP widths {widths:?} need at least two positive entries"
            )));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight =
                    store.add_uniform(format!("{prefix}.{i}.weight"), &[w[0], w[1]], w[0], rng);
                let bias = store.add_uniform(format!("{prefix}.{i}.bias"), &[w[1]], w[0], rng);
                (weight, bias)
            })
            .collect();
        Ok(Mlp {
            widths: widths.to_vec(),
            activation,
            layers,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.matmul(h, p.var(w))?;
            h = g.add_row(h, p.var(b))?;
            if i != last {
                h = self.activation.apply(g, h);
            }
        }
        Ok(h)
    }
}

/// Square-kernel convolution with per-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add_uniform(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
            rng,
        );
        let bias = store.add_uniform(format!("{name}.bias"), &[out_channels], fan_in, rng);
        Conv2d {
            weight,
            bias,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.conv2d(x, p.var(self.weight), self.stride, self.pad)?;
        g.add_channel(y, p.var(self.bias))
    }
}

/// Non-overlapping transposed convolution (kernel = stride) with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
}

impl ConvTranspose2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_uniform(
            format!("{name}.weight"),
            &[in_channels, out_channels, stride, stride],
            in_channels,
            rng,
        );
        let bias = store.add_uniform(format!("{name}.bias"), &[out_channels], in_channels, rng);
        ConvTranspose2d {
            weight,
            bias,
            stride,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.conv_transpose2d(x, p.var(self.weight), self.stride)?;
        g.add_channel(y, p.var(self.bias))
    }
}
