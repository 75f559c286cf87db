//! The trained networks as one unit, plus the fixed loss embedders.

use autograd::{no_grad, Tensor, Var};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::latent::{fuse_batch, split_batch};
use crate::nets::{ArchSpec, Critic, Decoder, Encoder, IdentityEmbedder, Module, Param, PerceptualEmbedder, Remapper};

#[derive(Clone, Debug)]
pub struct StyleModel {
    pub spec: ArchSpec,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub remapper: Remapper,
    pub critic: Option<Critic>,
}

impl StyleModel {
    /// Fresh seeded networks, critic included.
    pub fn new(spec: &ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            encoder: Encoder::new(&spec.encoder, seed)?,
            decoder: Decoder::new(&spec.decoder, seed)?,
            remapper: Remapper::new(&spec.remapper, seed)?,
            critic: Some(Critic::new(&spec.critic, seed)?),
        })
    }

    /// Parameters of the generator side (E, D, M) in canonical order.
    pub fn generator_params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v.extend(self.remapper.params());
        v
    }

    pub fn generator_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v.extend(self.remapper.params_mut());
        v
    }

    /// `D(E(x))`.
    pub fn reconstruct(&self, x: &ImageBatch) -> Result<ImageBatch> {
        let out = no_grad(|| self.decoder.forward(&self.encoder.forward(&x.to_var())?))?;
        ImageBatch::new(out.value().clone())
    }

    /// `D(fuse(E(x)_content, M(z)))` for an `N×d_z` noise batch.
    pub fn fused_forward(&self, encoder: &Encoder, x: &Var, z: &Tensor) -> Result<Var> {
        let lat = &self.spec.latent;
        let (content, _) = split_batch(&encoder.forward(x)?, lat)?;
        let w_z = self.remapper.forward(&Var::constant(z.clone()))?;
        if w_z.shape()[0] != content.shape()[0] {
            return Err(Error::Shape(format!(
                "noise batch {} vs image batch {}",
                w_z.shape()[0],
                content.shape()[0]
            )));
        }
        self.decoder.forward(&fuse_batch(&content, &w_z, lat)?)
    }
}

/// The fixed perceptual and identity embedders for an architecture.
#[derive(Clone, Debug)]
pub struct Embedders {
    pub perceptual: PerceptualEmbedder,
    pub identity: IdentityEmbedder,
}

impl Embedders {
    pub fn new(spec: &ArchSpec) -> Result<Self> {
        Ok(Self {
            perceptual: PerceptualEmbedder::new(&spec.perceptual)?,
            identity: IdentityEmbedder::new(&spec.identity)?,
        })
    }
}
