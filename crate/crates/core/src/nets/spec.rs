//! Architecture contracts. Every network is a pure function of its spec and
//! a seed; these types are what the package manifest records.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{layers_for_resolution, LatentConfig, DEFAULT_LAYER_DIM};

/// Number of resolutions from `resolution` down to 4×4, inclusive.
pub(crate) fn num_scales(resolution: usize) -> Result<usize> {
    Ok(layers_for_resolution(resolution)? / 2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PyramidLevel {
    Coarse,
    Medium,
    Fine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub resolution: usize,
    /// Backbone widths, one per stage from full resolution down to 4×4.
    pub channels: Vec<usize>,
    pub fpn_channels: usize,
    pub latent: LatentConfig,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        check_widths("encoder", self.resolution, &self.channels)?;
        check_latent(self.resolution, &self.latent)?;
        if self.fpn_channels == 0 {
            return Err(Error::Config("encoder fpn_channels must be positive".into()));
        }
        Ok(())
    }

    /// Latent rows fed by each pyramid level: coarse `[0, L/3)`, medium
    /// `[L/3, 2L/3)`, fine `[2L/3, L)`.
    pub fn level_rows(&self) -> [(PyramidLevel, Range<usize>); 3] {
        let l = self.latent.num_layers;
        let (a, b) = (l / 3, 2 * l / 3);
        [
            (PyramidLevel::Coarse, 0..a),
            (PyramidLevel::Medium, a..b),
            (PyramidLevel::Fine, b..l),
        ]
    }

    pub fn level_of_row(&self, row: usize) -> PyramidLevel {
        self.level_rows()
            .into_iter()
            .find(|(_, r)| r.contains(&row))
            .map(|(lvl, _)| lvl)
            .expect("row within latent")
    }

    /// Backbone stage feeding each pyramid level.
    pub fn level_stage(&self, level: PyramidLevel) -> usize {
        let last = self.channels.len() - 1;
        match level {
            PyramidLevel::Coarse => last,
            PyramidLevel::Medium => last.saturating_sub(1),
            PyramidLevel::Fine => last.saturating_sub(2),
        }
    }

    pub fn stage_resolution(&self, stage: usize) -> usize {
        self.resolution >> stage
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub resolution: usize,
    /// Widths per synthesis level from 4×4 up to full resolution; the first is
    /// also the constant input's channel count.
    pub channels: Vec<usize>,
    pub latent: LatentConfig,
}

impl DecoderSpec {
    pub fn validate(&self) -> Result<()> {
        check_widths("decoder", self.resolution, &self.channels)?;
        check_latent(self.resolution, &self.latent)
    }

    pub fn const_shape(&self) -> [usize; 4] {
        [1, self.channels[0], 4, 4]
    }

    /// Output width of the `i`-th modulated layer (two per level).
    pub fn layer_channels(&self, layer: usize) -> usize {
        self.channels[layer / 2]
    }

    pub fn adain_param_counts(&self) -> Vec<usize> {
        (0..self.latent.num_layers)
            .map(|i| super::layers::AdaIn::num_parameters(self.latent.layer_dim, self.layer_channels(i)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemapperSpec {
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
    pub style_rows: usize,
    pub layer_dim: usize,
}

impl RemapperSpec {
    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 || self.style_rows == 0 || self.layer_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("remapper dims must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.noise_dim];
        w.extend(&self.hidden);
        w.push(self.style_rows * self.layer_dim);
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticSpec {
    pub resolution: usize,
    /// Widths per stage from full resolution down to 4×4.
    pub channels: Vec<usize>,
}

impl CriticSpec {
    pub fn validate(&self) -> Result<()> {
        check_widths("critic", self.resolution, &self.channels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderRole {
    Perceptual,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub role: EmbedderRole,
    pub resolution: usize,
    pub channels: Vec<usize>,
    /// Identity: projection width before the anchor entry. Perceptual: unused.
    pub embedding_dim: usize,
    pub seed: u64,
}

impl EmbedderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(format!("embedder channels must be positive: {self:?}")));
        }
        match self.role {
            EmbedderRole::Perceptual if self.channels.len() < 2 => {
                Err(Error::Config("perceptual embedder needs at least two scales".into()))
            }
            EmbedderRole::Perceptual if self.resolution >> (self.channels.len() - 1) == 0 => Err(Error::Config(
                format!("{} perceptual scales do not fit {}px", self.channels.len(), self.resolution),
            )),
            EmbedderRole::Identity if self.embedding_dim == 0 => {
                Err(Error::Config("identity embedding_dim must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Knobs that derive a full [`ArchSpec`] from a resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchOptions {
    pub layer_dim: usize,
    pub fusion_index: Option<usize>,
    /// Encoder/decoder width at resolution `r` is `clamp(width_budget / r, min_width, max_width)`.
    pub width_budget: usize,
    pub min_width: usize,
    pub max_width: usize,
    pub fpn_channels: usize,
    pub critic_min_width: usize,
    pub critic_max_width: usize,
    pub noise_dim: usize,
    pub remap_hidden: usize,
    /// Total fully connected layers in the remapper.
    pub remap_depth: usize,
    pub perceptual_channels: Vec<usize>,
    pub identity_channels: usize,
    pub identity_dim: usize,
    pub embedder_seed: u64,
}

impl Default for ArchOptions {
    fn default() -> Self {
        Self {
            layer_dim: DEFAULT_LAYER_DIM,
            fusion_index: None,
            width_budget: 512,
            min_width: 16,
            max_width: 32,
            fpn_channels: 32,
            critic_min_width: 8,
            critic_max_width: 32,
            noise_dim: DEFAULT_LAYER_DIM,
            remap_hidden: 512,
            remap_depth: 4,
            perceptual_channels: vec![8, 16, 16],
            identity_channels: 16,
            identity_dim: 64,
            embedder_seed: 0x5EED_F00D,
        }
    }
}

impl ArchOptions {
    /// Very small widths, used for gradient checks and fast tests.
    pub fn tiny(layer_dim: usize) -> Self {
        Self {
            layer_dim,
            fusion_index: None,
            width_budget: 0,
            min_width: 4,
            max_width: 4,
            fpn_channels: 4,
            critic_min_width: 4,
            critic_max_width: 4,
            noise_dim: layer_dim,
            remap_hidden: 8,
            remap_depth: 2,
            perceptual_channels: vec![4, 4],
            identity_channels: 4,
            identity_dim: 8,
            embedder_seed: 0x5EED_F00D,
        }
    }

    fn width(&self, res: usize) -> usize {
        (self.width_budget / res).clamp(self.min_width, self.max_width)
    }

    fn critic_width(&self, res: usize) -> usize {
        (self.width_budget / res).clamp(self.critic_min_width, self.critic_max_width)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub resolution: usize,
    pub latent: LatentConfig,
    pub encoder: EncoderSpec,
    pub decoder: DecoderSpec,
    pub remapper: RemapperSpec,
    pub critic: CriticSpec,
    pub perceptual: EmbedderSpec,
    pub identity: EmbedderSpec,
}

impl ArchSpec {
    pub fn new(resolution: usize, opts: &ArchOptions) -> Result<Self> {
        let latent = LatentConfig::for_resolution(resolution, opts.layer_dim, opts.fusion_index)?;
        let scales = num_scales(resolution)?;
        if opts.remap_depth < 1 {
            return Err(Error::Config("remapper needs at least one layer".into()));
        }
        let spec = Self {
            resolution,
            latent,
            encoder: EncoderSpec {
                resolution,
                channels: (0..scales).map(|s| opts.width(resolution >> s)).collect(),
                fpn_channels: opts.fpn_channels,
                latent,
            },
            decoder: DecoderSpec {
                resolution,
                channels: (0..scales).map(|s| opts.width(4 << s)).collect(),
                latent,
            },
            remapper: RemapperSpec {
                noise_dim: opts.noise_dim,
                hidden: vec![opts.remap_hidden; opts.remap_depth - 1],
                style_rows: latent.style_rows(),
                layer_dim: latent.layer_dim,
            },
            critic: CriticSpec {
                resolution,
                channels: (0..scales).map(|s| opts.critic_width(resolution >> s)).collect(),
            },
            perceptual: EmbedderSpec {
                role: EmbedderRole::Perceptual,
                resolution,
                channels: opts.perceptual_channels.clone(),
                embedding_dim: 0,
                seed: opts.embedder_seed,
            },
            identity: EmbedderSpec {
                role: EmbedderRole::Identity,
                resolution,
                channels: vec![opts.identity_channels],
                embedding_dim: opts.identity_dim,
                seed: opts.embedder_seed.wrapping_add(1),
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.latent.validate()?;
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.remapper.validate()?;
        self.critic.validate()?;
        self.perceptual.validate()?;
        self.identity.validate()?;
        let consistent = self.encoder.latent == self.latent
            && self.decoder.latent == self.latent
            && self.remapper.style_rows == self.latent.style_rows()
            && self.remapper.layer_dim == self.latent.layer_dim
            && [
                self.encoder.resolution,
                self.decoder.resolution,
                self.critic.resolution,
                self.perceptual.resolution,
                self.identity.resolution,
            ]
            .iter()
            .all(|&r| r == self.resolution);
        if !consistent {
            return Err(Error::Config("architecture specs disagree on resolution or latent layout".into()));
        }
        Ok(())
    }
}

fn check_widths(what: &str, resolution: usize, widths: &[usize]) -> Result<()> {
    let scales = num_scales(resolution)?;
    if widths.len() != scales || widths.contains(&0) {
        return Err(Error::Config(format!(
            "{what} needs {scales} positive widths for {resolution}px, got {widths:?}"
        )));
    }
    Ok(())
}

fn check_latent(resolution: usize, latent: &LatentConfig) -> Result<()> {
    latent.validate()?;
    let expected = layers_for_resolution(resolution)?;
    if latent.num_layers != expected {
        return Err(Error::Config(format!(
            "{resolution}px needs {expected} latent rows, config has {}",
            latent.num_layers
        )));
    }
    Ok(())
}
