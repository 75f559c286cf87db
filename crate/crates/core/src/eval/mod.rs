//! Fréchet distance over surrogate perceptual features, multimodal diversity,
//! and the swap/`ξ` ablation harness.
//!
//! The feature network is the fixed perceptual embedder, not Inception, so
//! absolute distances are only comparable between reports that print the same
//! embedder fingerprint.

mod ablation;
mod frechet;

pub use ablation::{
    ablate_swap, ablate_xi, consistency_error, AblationSettings, SwapReport, SwapRun, XiReport, XiRun,
};
pub use frechet::{frechet_distance, sqrtm_psd, GaussianStats, PSD_TOL, SYMMETRY_TOL};

use std::fmt::Write as _;

use autograd::{no_grad, Tensor};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::losses::loss_lpips;
use crate::nets::PerceptualEmbedder;
use crate::persist::StyleModelPackage;
use crate::stage2::{sample_multimodal, stylize_forward};

/// Images per embedder call.
const CHUNK: usize = 16;
/// Diagonal loading added when a side has no more samples than feature dims.
pub const DIAGONAL_LOADING: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FidReport {
    pub fid: f64,
    pub count_a: usize,
    pub count_b: usize,
    pub feature_dim: usize,
    /// Loading applied to both covariances, if any.
    pub diagonal_loading: Option<f64>,
    pub embedder: String,
}

impl FidReport {
    /// `key=value` lines.
    pub fn to_summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fid={:.9e}", self.fid);
        let _ = writeln!(s, "count_a={}", self.count_a);
        let _ = writeln!(s, "count_b={}", self.count_b);
        let _ = writeln!(s, "feature_dim={}", self.feature_dim);
        let _ = writeln!(s, "diagonal_loading={}", self.diagonal_loading.unwrap_or(0.0));
        let _ = writeln!(s, "embedder={}", self.embedder);
        s
    }
}

/// Pooled perceptual features of every image, `N×E`.
pub fn features(embedder: &PerceptualEmbedder, images: &ImageBatch) -> Result<Tensor> {
    let idx: Vec<usize> = (0..images.len()).collect();
    let mut rows = Vec::with_capacity(images.len());
    for chunk in idx.chunks(CHUNK) {
        let f = embedder.pooled_features(&images.select(chunk)?)?;
        rows.extend((0..chunk.len()).map(|i| f.index_outer(i)));
    }
    Ok(Tensor::stack(&rows))
}

/// Fréchet distance between the feature Gaussians of two image sets.
pub fn fid_between(embedder: &PerceptualEmbedder, a: &ImageBatch, b: &ImageBatch) -> Result<FidReport> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 images per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (fa, fb) = (features(embedder, a)?, features(embedder, b)?);
    let mut sa = GaussianStats::from_features(&fa)?;
    let mut sb = GaussianStats::from_features(&fb)?;
    let e = sa.dim();
    let loading = (sa.count <= e || sb.count <= e).then_some(DIAGONAL_LOADING);
    if let Some(eps) = loading {
        log::warn!(
            "{} / {} samples for {e}-dim features: adding {eps:e} diagonal loading",
            sa.count,
            sb.count
        );
        sa = sa.with_diagonal_loading(eps);
        sb = sb.with_diagonal_loading(eps);
    }
    Ok(FidReport {
        fid: frechet_distance(&sa, &sb)?,
        count_a: sa.count,
        count_b: sb.count,
        feature_dim: e,
        diagonal_loading: loading,
        embedder: embedder.fingerprint(),
    })
}

/// FID between the package's stylized `source` images and `reference`.
pub fn eval_fid(
    pkg: &StyleModelPackage,
    source: &ImageBatch,
    reference: &ImageBatch,
    embedder: &PerceptualEmbedder,
) -> Result<FidReport> {
    let mut outputs = Vec::with_capacity(source.len());
    let idx: Vec<usize> = (0..source.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let out = stylize_forward(pkg, &source.select(chunk)?)?;
        outputs.extend((0..chunk.len()).map(|i| out.image(i)));
    }
    fid_between(embedder, &ImageBatch::from_images(&outputs)?, reference)
}

/// Mean perceptual distance over all pairs of equally sized batches,
/// compared image by image.
pub fn pairwise_diversity(embedder: &PerceptualEmbedder, outputs: &[ImageBatch]) -> Result<f64> {
    if outputs.len() < 2 {
        return Err(Error::Config(format!("need at least 2 outputs, got {}", outputs.len())));
    }
    let n = outputs[0].len();
    if outputs.iter().any(|o| o.len() != n) {
        return Err(Error::Shape("outputs differ in batch size".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..outputs.len() {
        for j in i + 1..outputs.len() {
            for k in 0..n {
                let a = ImageBatch::from_images(&[outputs[i].image(k)])?.to_var();
                let b = ImageBatch::from_images(&[outputs[j].image(k)])?.to_var();
                total += no_grad(|| loss_lpips(embedder, &a, &b))?.value().item();
                pairs += 1;
            }
        }
    }
    Ok(total / pairs as f64)
}

/// Mean pairwise perceptual distance of [`sample_multimodal`] outputs.
pub fn diversity_score(
    pkg: &StyleModelPackage,
    x: &ImageBatch,
    noise_seeds: &[u64],
    embedder: &PerceptualEmbedder,
) -> Result<f64> {
    if noise_seeds.len() < 2 {
        return Err(Error::Config(format!("need at least 2 noise seeds, got {}", noise_seeds.len())));
    }
    pairwise_diversity(embedder, &sample_multimodal(pkg, x, noise_seeds)?)
}
