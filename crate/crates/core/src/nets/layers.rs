use autograd::{conv2d, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::rng;

pub const LRELU_SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

/// Parameters are stored as f32 values (held in f64) so that packages are
/// lossless.
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// He gain for a leaky-rectifier layer.
pub fn lrelu_gain() -> f64 {
    (2.0 / (1.0 + LRELU_SLOPE * LRELU_SLOPE)).sqrt()
}

/// A named trainable tensor. Cloning gives an independent leaf.
pub struct Param {
    name: String,
    var: Var,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            var: Var::leaf(value),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn var(&self) -> &Var {
        &self.var
    }

    pub fn value(&self) -> &Tensor {
        self.var.value()
    }

    pub fn set(&mut self, value: Tensor) {
        assert_eq!(value.shape(), self.value().shape(), "shape change for {}", self.name);
        self.var = Var::leaf(value);
    }
}

impl Clone for Param {
    fn clone(&self) -> Self {
        Self::new(self.name.clone(), self.value().clone())
    }
}

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Param({}, {:?})", self.name, self.value().shape())
    }
}

/// Seeded normal initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64, label: &str) -> Self {
        Self {
            rng: rng::stream(seed, label, 0),
        }
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            round_f32(z * std)
        })
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        gain: f64,
    ) -> Self {
        let std = gain / ((cin * kernel * kernel) as f64).sqrt();
        Self {
            weight: Param::new(format!("{name}.weight"), init.normal(&[cout, cin, kernel, kernel], std)),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[1, cout, 1, 1]))),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        let y = conv2d(x, self.weight.var(), self.stride, self.pad);
        match &self.bias {
            Some(b) => y.add(b.var()),
            None => y,
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

/// `y = x·W + b` with `W: in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, fan_in: usize, fan_out: usize, bias: bool, gain: f64) -> Self {
        let std = gain / (fan_in as f64).sqrt();
        Self {
            weight: Param::new(format!("{name}.weight"), init.normal(&[fan_in, fan_out], std)),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[fan_out]))),
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        let y = x.matmul(self.weight.var());
        match &self.bias {
            Some(b) => y.add(b.var()),
            None => y,
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

/// Per-sample, per-channel normalization over the spatial axes.
pub fn instance_norm(x: &Var) -> Var {
    let centered = x.sub(&x.mean_keepdim(&[2, 3]));
    let var = centered.square().mean_keepdim(&[2, 3]);
    centered.div(&var.add_scalar(NORM_EPS).sqrt())
}

/// Adaptive instance normalization driven by one latent row.
#[derive(Clone, Debug)]
pub struct AdaIn {
    pub affine: Linear,
    channels: usize,
}

impl AdaIn {
    pub fn new(init: &mut Init, name: &str, latent_dim: usize, channels: usize) -> Self {
        Self {
            affine: Linear::new(init, &format!("{name}.affine"), latent_dim, 2 * channels, true, 0.5),
            channels,
        }
    }

    /// `x: N×C×H×W`, `style: N×D`.
    pub fn forward(&self, x: &Var, style: &Var) -> Var {
        let n = x.shape()[0];
        let c = self.channels;
        let s = self.affine.forward(style);
        let gamma = s.narrow(1, 0, c).reshape(&[n, c, 1, 1]);
        let beta = s.narrow(1, c, c).reshape(&[n, c, 1, 1]);
        instance_norm(x).mul(&gamma.add_scalar(1.0)).add(&beta)
    }

    pub fn num_parameters(latent_dim: usize, channels: usize) -> usize {
        latent_dim * 2 * channels + 2 * channels
    }
}
