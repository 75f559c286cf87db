use autograd::Var;

use super::layers::{lrelu_gain, Init, Linear, Param, LRELU_SLOPE};
use super::spec::RemapperSpec;
use super::Module;
use crate::error::{Error, Result};

/// Fully connected cascade from Gaussian noise to the `ξ` style rows.
#[derive(Clone, Debug)]
pub struct Remapper {
    spec: RemapperSpec,
    layers: Vec<Linear>,
}

impl Remapper {
    pub fn new(spec: &RemapperSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut init = Init::new(seed, "remapper");
        let widths = spec.widths();
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { 1.0 } else { lrelu_gain() };
                Linear::new(&mut init, &format!("fc.{i}"), w[0], w[1], true, gain)
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &RemapperSpec {
        &self.spec
    }

    /// `N×d_z` noise to `N×ξ×D` style rows.
    pub fn forward(&self, z: &Var) -> Result<Var> {
        let n = match z.shape() {
            [n, d] if *d == self.spec.noise_dim => *n,
            s => {
                return Err(Error::Shape(format!(
                    "remapper expects N×{} noise, got {s:?}",
                    self.spec.noise_dim
                )))
            }
        };
        if !z.value().is_finite() {
            return Err(Error::NonFinite("remapper noise".into()));
        }
        let mut h = z.clone();
        for (i, fc) in self.layers.iter().enumerate() {
            h = fc.forward(&h);
            if i + 1 < self.layers.len() {
                h = h.leaky_relu(LRELU_SLOPE);
            }
        }
        Ok(h.reshape(&[n, self.spec.style_rows, self.spec.layer_dim]))
    }
}

impl Module for Remapper {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Linear::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Linear::params_mut).collect()
    }
}
