//! Parameterized layers over the [`Graph`](crate::numerics::Graph) ops.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

fn kaiming<T: Scalar, R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

/// Construction arguments for [`Conv2d`].
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
    /// Multiplier on the He-normal weight scale.
    pub gain: f64,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: 0,
            groups: 1,
            bias: true,
            gain: 1.0,
        }
    }

    /// 3x3, stride 1, padding 1.
    pub fn same3(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec::new(in_channels, out_channels, 3).padding(1)
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec::new(in_channels, out_channels, 1)
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }
}

impl Conv2d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Self {
        let cin = spec.in_channels / spec.groups;
        let fan_in = cin * spec.kernel * spec.kernel;
        let weight = store.register(
            format!("{name}.weight"),
            kaiming(
                vec![spec.out_channels, cin, spec.kernel, spec.kernel],
                fan_in,
                rng,
            )
            .map(|v| v * T::of(spec.gain)),
        );
        let bias = spec
            .bias
            .then(|| store.register(format!("{name}.bias"), Tensor::zeros(vec![spec.out_channels])));
        Conv2d {
            weight,
            bias,
            stride: spec.stride,
            padding: spec.padding,
            groups: spec.groups,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.conv2d(x, w, self.stride, self.padding, self.groups)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_channel_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Transposed convolution with kernel `in x out x k x k`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
}

impl ConvTranspose2d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        // Each output pixel receives in_channels * (kernel/stride)^2 taps.
        let taps = (kernel / stride).max(1);
        let weight = store.register(
            format!("{name}.weight"),
            kaiming(
                vec![in_channels, out_channels, kernel, kernel],
                in_channels * taps * taps,
                rng,
            ),
        );
        let bias = Some(store.register(format!("{name}.bias"), Tensor::zeros(vec![out_channels])));
        ConvTranspose2d {
            weight,
            bias,
            stride,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.conv_transpose2d(x, w, self.stride, 0)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_channel_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Fully-connected layer, weight stored `out x in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        Linear {
            weight: store.register(
                format!("{name}.weight"),
                kaiming(vec![out_features, in_features], in_features, rng),
            ),
            bias: store.register(format!("{name}.bias"), Tensor::zeros(vec![out_features])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    /// Starts as the identity in eval mode up to the variance epsilon.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.register(format!("{name}.gamma"), Tensor::ones(vec![channels])),
            beta: store.register(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            running_mean: store
                .register_buffer(format!("{name}.running_mean"), Tensor::zeros(vec![channels])),
            running_var: store
                .register_buffer(format!("{name}.running_var"), Tensor::ones(vec![channels])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.batch_norm(x, gamma, beta, store, self.running_mean, self.running_var)
    }
}
