//! Layered latent codes and their content/style split.
//!
//! A code has one `D`-wide row per decoder modulation site, coarsest first.
//! The first `L − ξ` rows carry content (`w_l`), the last `ξ` rows carry
//! style (`w_h`).

use autograd::{concat, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAYER_DIM: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentConfig {
    pub num_layers: usize,
    pub layer_dim: usize,
    pub fusion_index: usize,
}

impl LatentConfig {
    pub fn new(num_layers: usize, layer_dim: usize, fusion_index: usize) -> Result<Self> {
        let cfg = Self {
            num_layers,
            layer_dim,
            fusion_index,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config for a decoder at `resolution`, with `L = 2·log2(res) − 2` and
    /// `ξ` defaulting to `round(L/3)`.
    pub fn for_resolution(resolution: usize, layer_dim: usize, fusion_index: Option<usize>) -> Result<Self> {
        let layers = layers_for_resolution(resolution)?;
        Self::new(layers, layer_dim, fusion_index.unwrap_or_else(|| default_fusion_index(layers)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 2 {
            return Err(Error::InvalidLatent(format!(
                "need at least 2 layers to split, got {}",
                self.num_layers
            )));
        }
        if self.layer_dim == 0 {
            return Err(Error::InvalidLatent("layer_dim must be positive".into()));
        }
        if self.fusion_index < 1 || self.fusion_index >= self.num_layers {
            return Err(Error::InvalidLatent(format!(
                "fusion index {} outside [1, {}]",
                self.fusion_index,
                self.num_layers - 1
            )));
        }
        Ok(())
    }

    pub fn content_rows(&self) -> usize {
        self.num_layers - self.fusion_index
    }

    pub fn style_rows(&self) -> usize {
        self.fusion_index
    }
}

pub fn layers_for_resolution(resolution: usize) -> Result<usize> {
    if resolution < 4 || !resolution.is_power_of_two() {
        return Err(Error::Config(format!(
            "resolution must be a power of two >= 4, got {resolution}"
        )));
    }
    Ok(2 * resolution.trailing_zeros() as usize - 2)
}

pub fn default_fusion_index(num_layers: usize) -> usize {
    ((num_layers as f64 / 3.0).round() as usize).clamp(1, num_layers.saturating_sub(1).max(1))
}

/// A single `L×D` code.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    values: Tensor,
    config: LatentConfig,
}

impl LatentCode {
    pub fn new(values: Tensor, config: LatentConfig) -> Result<Self> {
        config.validate()?;
        if values.shape() != [config.num_layers, config.layer_dim] {
            return Err(Error::Shape(format!(
                "code of shape {:?} does not match {}x{}",
                values.shape(),
                config.num_layers,
                config.layer_dim
            )));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("latent code".into()));
        }
        Ok(Self { values, config })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn config(&self) -> &LatentConfig {
        &self.config
    }

    /// `(content, style)`: the first `L − ξ` rows and the last `ξ` rows.
    pub fn split(&self) -> (Tensor, Tensor) {
        let d = self.config.layer_dim;
        let cut = self.config.content_rows() * d;
        let data = self.values.data();
        (
            Tensor::new(&[self.config.content_rows(), d], data[..cut].to_vec()),
            Tensor::new(&[self.config.style_rows(), d], data[cut..].to_vec()),
        )
    }

    pub fn fuse(content: &Tensor, style: &Tensor) -> Result<Self> {
        let (cr, cd) = rows_cols(content, "content")?;
        let (sr, sd) = rows_cols(style, "style")?;
        if cd != sd {
            return Err(Error::Shape(format!("content rows are {cd} wide, style rows {sd}")));
        }
        let config = LatentConfig::new(cr + sr, cd, sr)?;
        let mut data = Vec::with_capacity((cr + sr) * cd);
        data.extend_from_slice(content.data());
        data.extend_from_slice(style.data());
        Self::new(Tensor::new(&[cr + sr, cd], data), config)
    }

    /// Like [`LatentCode::fuse`] but also checks the result against `config`.
    pub fn fuse_with(content: &Tensor, style: &Tensor, config: &LatentConfig) -> Result<Self> {
        let code = Self::fuse(content, style)?;
        if code.config != *config {
            return Err(Error::Shape(format!(
                "fused code has {} rows (ξ={}), config expects {} (ξ={})",
                code.config.num_layers, code.config.fusion_index, config.num_layers, config.fusion_index
            )));
        }
        Ok(code)
    }
}

fn rows_cols(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] if *r > 0 && *c > 0 => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{what} must be a non-empty matrix, got {s:?}"))),
    }
}

/// Batched split of an `N×L×D` code variable.
pub fn split_batch(codes: &Var, config: &LatentConfig) -> Result<(Var, Var)> {
    check_batch(codes, config.num_layers, config.layer_dim)?;
    Ok((
        codes.narrow(1, 0, config.content_rows()),
        codes.narrow(1, config.content_rows(), config.style_rows()),
    ))
}

/// Batched fuse of `N×(L−ξ)×D` content with `N×ξ×D` style rows.
pub fn fuse_batch(content: &Var, style: &Var, config: &LatentConfig) -> Result<Var> {
    check_batch(content, config.content_rows(), config.layer_dim)?;
    check_batch(style, config.style_rows(), config.layer_dim)?;
    if content.shape()[0] != style.shape()[0] {
        return Err(Error::Shape(format!(
            "content batch {} vs style batch {}",
            content.shape()[0],
            style.shape()[0]
        )));
    }
    Ok(concat(&[content.clone(), style.clone()], 1))
}

fn check_batch(v: &Var, rows: usize, dim: usize) -> Result<()> {
    match v.shape() {
        [_, r, d] if *r == rows && *d == dim => Ok(()),
        s => Err(Error::Shape(format!("expected N×{rows}×{dim}, got {s:?}"))),
    }
}

/// Splits an `N×L×D` tensor into per-sample codes.
pub fn codes_from_batch(batch: &Tensor, config: &LatentConfig) -> Result<Vec<LatentCode>> {
    if batch.ndim() != 3 {
        return Err(Error::Shape(format!("expected N×L×D, got {:?}", batch.shape())));
    }
    (0..batch.shape()[0])
        .map(|i| LatentCode::new(batch.index_outer(i), *config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_size_split() {
        let cfg = LatentConfig::new(18, 512, 6).unwrap();
        let code = LatentCode::new(Tensor::from_fn(&[18, 512], |i| i as f64), cfg).unwrap();
        let (c, s) = code.split();
        assert_eq!(c.shape(), &[12, 512]);
        assert_eq!(s.shape(), &[6, 512]);
    }

    #[test]
    fn smallest_legal_split() {
        let cfg = LatentConfig::new(2, 2, 1).unwrap();
        let code = LatentCode::new(Tensor::new(&[2, 2], vec![1., 2., 3., 4.]), cfg).unwrap();
        let (c, s) = code.split();
        assert_eq!(c.data(), &[1., 2.]);
        assert_eq!(s.data(), &[3., 4.]);
    }

    #[test]
    fn fuse_zero_parts() {
        let z = Tensor::zeros(&[1, 2]);
        let code = LatentCode::fuse(&z, &z).unwrap();
        assert_eq!(code.values(), &Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn fuse_rejects_width_mismatch_and_wrong_total() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[1, 4]);
        assert!(matches!(LatentCode::fuse(&a, &b), Err(Error::Shape(_))));
        let cfg = LatentConfig::new(4, 3, 1).unwrap();
        let b = Tensor::zeros(&[1, 3]);
        assert!(matches!(LatentCode::fuse_with(&a, &b, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn config_bounds() {
        assert!(LatentConfig::new(10, 8, 0).is_err());
        assert!(LatentConfig::new(10, 8, 10).is_err());
        assert!(LatentConfig::new(1, 8, 1).is_err());
        assert!(LatentConfig::new(10, 0, 3).is_err());
        assert!(LatentConfig::new(10, 8, 9).is_ok());
    }

    #[test]
    fn resolution_defaults() {
        let c = LatentConfig::for_resolution(1024, 512, None).unwrap();
        assert_eq!((c.num_layers, c.fusion_index), (18, 6));
        let c = LatentConfig::for_resolution(64, 512, None).unwrap();
        assert_eq!((c.num_layers, c.fusion_index), (10, 3));
        let c = LatentConfig::for_resolution(4, 8, None).unwrap();
        assert_eq!((c.num_layers, c.fusion_index), (2, 1));
        assert!(LatentConfig::for_resolution(48, 8, None).is_err());
    }

    #[test]
    fn rejects_non_finite_code() {
        let cfg = LatentConfig::new(2, 1, 1).unwrap();
        assert!(LatentCode::new(Tensor::new(&[2, 1], vec![0.0, f64::NAN]), cfg).is_err());
    }

    #[test]
    fn batch_split_fuse_round_trip() {
        let cfg = LatentConfig::new(4, 3, 1).unwrap();
        let codes = Var::constant(Tensor::from_fn(&[2, 4, 3], |i| i as f64 * 0.5));
        let (c, s) = split_batch(&codes, &cfg).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(s.shape(), &[2, 1, 3]);
        let back = fuse_batch(&c, &s, &cfg).unwrap();
        assert_eq!(back.value(), codes.value());
    }

    fn arb_code() -> impl Strategy<Value = LatentCode> {
        (2usize..20, 1usize..16)
            .prop_flat_map(|(l, d)| (Just(l), Just(d), 1..l, prop::collection::vec(-1e6f64..1e6, l * d)))
            .prop_map(|(l, d, xi, v)| {
                LatentCode::new(Tensor::new(&[l, d], v), LatentConfig::new(l, d, xi).unwrap()).unwrap()
            })
    }

    proptest! {
        #[test]
        fn fuse_of_split_is_identity(code in arb_code()) {
            let (c, s) = code.split();
            let back = LatentCode::fuse_with(&c, &s, code.config()).unwrap();
            prop_assert_eq!(back, code);
        }

        #[test]
        fn split_of_fuse_is_identity(code in arb_code()) {
            let (c, s) = code.split();
            let (c2, s2) = LatentCode::fuse(&c, &s).unwrap().split();
            prop_assert_eq!(c2, c);
            prop_assert_eq!(s2, s);
        }
    }
}
