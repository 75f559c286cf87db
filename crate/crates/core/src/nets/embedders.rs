//! Fixed random-feature surrogates for the perceptual extractor `F` and the
//! identity network `R`. Weights are drawn once from the embedder seed and never
//! trained.

use autograd::{concat, no_grad, Tensor, Var};

use super::layers::{lrelu_gain, Conv2d, Init, Param, LRELU_SLOPE};
use super::spec::{EmbedderRole, EmbedderSpec};
use super::Module;
use crate::error::{Error, Result};
use crate::image::ImageBatch;

/// Constant final entry of every identity embedding, so the norm is never zero.
pub const IDENTITY_ANCHOR: f64 = 1e-3;

fn check_image(x: &Var, resolution: usize, what: &str) -> Result<usize> {
    match x.shape() {
        [n, 3, h, w] if *h == resolution && *w == resolution => Ok(*n),
        [_, 3, h, _] => Err(Error::Resolution {
            expected: resolution,
            got: *h,
        }),
        s => Err(Error::Shape(format!("{what} input must be N×3×R×R, got {s:?}"))),
    }
}

fn check_role(spec: &EmbedderSpec, role: EmbedderRole) -> Result<()> {
    spec.validate()?;
    if spec.role != role {
        return Err(Error::Config(format!("expected a {role:?} embedder spec, got {:?}", spec.role)));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PerceptualEmbedder {
    spec: EmbedderSpec,
    convs: Vec<Conv2d>,
}

impl PerceptualEmbedder {
    pub fn new(spec: &EmbedderSpec) -> Result<Self> {
        check_role(spec, EmbedderRole::Perceptual)?;
        let mut init = Init::new(spec.seed, "perceptual");
        let mut cin = 3;
        let convs = spec
            .channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv2d::new(&mut init, &format!("scale.{i}"), cin, c, 3, 1, false, lrelu_gain());
                cin = c;
                conv
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            convs,
        })
    }

    pub fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    /// Activation maps, one per scale, finest first.
    pub fn features(&self, x: &Var) -> Result<Vec<Var>> {
        check_image(x, self.spec.resolution, "perceptual embedder")?;
        let mut out = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            if i > 0 {
                h = h.avg_pool2x();
            }
            h = conv.forward(&h).leaky_relu(LRELU_SLOPE);
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Spatially averaged activations of every scale, concatenated: `N×ΣC`.
    pub fn pooled(&self, x: &Var) -> Result<Var> {
        let n = x.shape().first().copied().unwrap_or(0);
        let pooled: Vec<Var> = self
            .features(x)?
            .iter()
            .map(|f| f.mean_keepdim(&[2, 3]).reshape(&[n, f.shape()[1]]))
            .collect();
        Ok(concat(&pooled, 1))
    }

    pub fn pooled_features(&self, images: &ImageBatch) -> Result<Tensor> {
        no_grad(|| self.pooled(&images.to_var())).map(|v| v.value().clone())
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.channels.iter().sum()
    }

    /// Identifies the exact embedder used for a metric.
    pub fn fingerprint(&self) -> String {
        self.checksum()[..16].to_string()
    }
}

impl Module for PerceptualEmbedder {
    fn params(&self) -> Vec<&Param> {
        self.convs.iter().flat_map(Conv2d::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs.iter_mut().flat_map(Conv2d::params_mut).collect()
    }
}

#[derive(Clone, Debug)]
pub struct IdentityEmbedder {
    spec: EmbedderSpec,
    convs: Vec<Conv2d>,
    head: Conv2d,
    projection: Param,
}

impl IdentityEmbedder {
    pub fn new(spec: &EmbedderSpec) -> Result<Self> {
        check_role(spec, EmbedderRole::Identity)?;
        let mut init = Init::new(spec.seed, "identity");
        let c = spec.channels[0];
        let g = lrelu_gain();
        let mut convs = vec![Conv2d::new(&mut init, "stem", 3, c, 3, 1, false, g)];
        let mut size = spec.resolution;
        while size > 4 {
            convs.push(Conv2d::new(&mut init, &format!("down.{}", convs.len()), c, c, 3, 2, false, g));
            size /= 2;
        }
        let head = Conv2d::new(&mut init, "head", c, c, 1, 1, false, 1.0);
        let flat = c * size * size;
        let projection = Param::new(
            "projection",
            init.normal(&[flat, spec.embedding_dim], 1.0 / (flat as f64).sqrt()),
        );
        Ok(Self {
            spec: spec.clone(),
            convs,
            head,
            projection,
        })
    }

    pub fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    /// `N×(dim+1)` embeddings; the last entry is [`IDENTITY_ANCHOR`].
    pub fn embed(&self, x: &Var) -> Result<Var> {
        let n = check_image(x, self.spec.resolution, "identity embedder")?;
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h).leaky_relu(LRELU_SLOPE);
        }
        h = self.head.forward(&h);
        let flat = h.reshape(&[n, h.numel() / n]);
        let e = flat.matmul(self.projection.var());
        let anchor = Var::constant(Tensor::full(&[n, 1], IDENTITY_ANCHOR));
        Ok(concat(&[e, anchor], 1))
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim + 1
    }
}

impl Module for IdentityEmbedder {
    fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.convs.iter().flat_map(Conv2d::params).collect();
        v.extend(self.head.params());
        v.push(&self.projection);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.convs.iter_mut().flat_map(Conv2d::params_mut).collect();
        v.extend(self.head.params_mut());
        v.push(&mut self.projection);
        v
    }
}
