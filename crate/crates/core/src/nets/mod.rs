//! The networks: encoder `E`, decoder `D`, remapper `M`, critic `Dis`, and the
//! fixed perceptual/identity embedders used by the losses.

mod critic;
mod decoder;
mod embedders;
mod encoder;
mod layers;
mod remapper;
mod spec;

pub use critic::Critic;
pub use decoder::Decoder;
pub use embedders::{IdentityEmbedder, PerceptualEmbedder, IDENTITY_ANCHOR};
pub use encoder::Encoder;
pub use layers::{instance_norm, round_f32, Conv2d, Init, Linear, Param, LRELU_SLOPE};
pub use remapper::Remapper;
pub use spec::{
    ArchOptions, ArchSpec, CriticSpec, DecoderSpec, EmbedderRole, EmbedderSpec, EncoderSpec, PyramidLevel,
    RemapperSpec,
};

use autograd::{Tensor, Var};
use sha2::{Digest, Sha256};

/// Anything that owns named parameters in a fixed canonical order.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value().numel()).sum()
    }

    fn param_vars(&self) -> Vec<Var> {
        self.params().iter().map(|p| p.var().clone()).collect()
    }

    /// SHA-256 over parameter names, shapes and exact values.
    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            h.update(p.name().as_bytes());
            for d in p.value().shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value().data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Overwrites every parameter from `values`, matched by name.
    fn load_values(&mut self, mut lookup: impl FnMut(&str) -> Option<Tensor>) -> crate::Result<()> {
        for p in self.params_mut() {
            let t = lookup(p.name()).ok_or_else(|| crate::Error::MissingParameter(p.name().to_string()))?;
            if t.shape() != p.value().shape() {
                return Err(crate::Error::ParameterShape {
                    name: p.name().to_string(),
                    expected: p.value().shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            p.set(t);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
