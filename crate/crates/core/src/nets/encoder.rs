use autograd::{concat, no_grad, Var};

use super::layers::{lrelu_gain, Conv2d, Init, Linear, Param, LRELU_SLOPE};
use super::spec::{EncoderSpec, PyramidLevel};
use super::Module;
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::latent::{codes_from_batch, LatentCode};

#[derive(Clone, Debug)]
struct ResBlock {
    down: Conv2d,
    conv: Conv2d,
    skip: Conv2d,
}

impl ResBlock {
    fn forward(&self, x: &Var) -> Var {
        let h = self.down.forward(x).leaky_relu(LRELU_SLOPE);
        let h = self.conv.forward(&h);
        h.add(&self.skip.forward(x)).leaky_relu(LRELU_SLOPE)
    }

    fn params(&self) -> Vec<&Param> {
        [&self.down, &self.conv, &self.skip].into_iter().flat_map(Conv2d::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let Self { down, conv, skip } = self;
        [down, conv, skip].into_iter().flat_map(Conv2d::params_mut).collect()
    }
}

/// Maps one pyramid level to one latent row: strided convolutions down to
/// at most 4×4, then a linear layer.
#[derive(Clone, Debug)]
struct StyleHead {
    convs: Vec<Conv2d>,
    linear: Linear,
}

impl StyleHead {
    fn forward(&self, x: &Var) -> Var {
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(&h).leaky_relu(LRELU_SLOPE);
        }
        let n = h.shape()[0];
        let flat = h.reshape(&[n, h.numel() / n]);
        self.linear.forward(&flat)
    }
}

/// Feature-pyramid encoder over a small residual backbone.
#[derive(Clone, Debug)]
pub struct Encoder {
    spec: EncoderSpec,
    stem: Conv2d,
    blocks: Vec<ResBlock>,
    lateral: Vec<Conv2d>,
    heads: Vec<StyleHead>,
}

const LEVELS: [PyramidLevel; 3] = [PyramidLevel::Coarse, PyramidLevel::Medium, PyramidLevel::Fine];

impl Encoder {
    pub fn new(spec: &EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut init = Init::new(seed, "encoder");
        let g = lrelu_gain();
        let ch = &spec.channels;
        let stem = Conv2d::new(&mut init, "stem", 3, ch[0], 3, 1, true, g);
        let blocks = (1..ch.len())
            .map(|i| ResBlock {
                down: Conv2d::new(&mut init, &format!("blocks.{i}.down"), ch[i - 1], ch[i], 3, 2, true, g),
                conv: Conv2d::new(&mut init, &format!("blocks.{i}.conv"), ch[i], ch[i], 3, 1, true, 1.0),
                skip: Conv2d::new(&mut init, &format!("blocks.{i}.skip"), ch[i - 1], ch[i], 1, 2, false, 1.0),
            })
            .collect();
        let f = spec.fpn_channels;
        let lateral = LEVELS
            .iter()
            .enumerate()
            .map(|(i, &lvl)| Conv2d::new(&mut init, &format!("lateral.{i}"), ch[spec.level_stage(lvl)], f, 1, 1, true, 1.0))
            .collect();
        let d = spec.latent.layer_dim;
        let heads = (0..spec.latent.num_layers)
            .map(|r| {
                let mut size = spec.stage_resolution(spec.level_stage(spec.level_of_row(r)));
                let mut convs = Vec::new();
                loop {
                    let stride = if size > 4 { 2 } else { 1 };
                    convs.push(Conv2d::new(&mut init, &format!("heads.{r}.conv{}", convs.len()), f, f, 3, stride, true, g));
                    size /= stride;
                    if size <= 4 {
                        break;
                    }
                }
                let linear = Linear::new(&mut init, &format!("heads.{r}.linear"), f * size * size, d, true, 1.0);
                StyleHead { convs, linear }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            stem,
            blocks,
            lateral,
            heads,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn check_input(&self, x: &Var) -> Result<()> {
        match x.shape() {
            [_, 3, h, w] if *h == self.spec.resolution && *w == self.spec.resolution => {}
            [_, 3, h, _] => {
                return Err(Error::Resolution {
                    expected: self.spec.resolution,
                    got: *h,
                })
            }
            s => return Err(Error::Shape(format!("encoder input must be N×3×R×R, got {s:?}"))),
        }
        if !x.value().is_finite() {
            return Err(Error::NonFinite("encoder input".into()));
        }
        Ok(())
    }

    /// `N×3×R×R` images to `N×L×D` codes.
    pub fn forward(&self, x: &Var) -> Result<Var> {
        self.check_input(x)?;
        let mut feats = Vec::with_capacity(self.blocks.len() + 1);
        let mut h = self.stem.forward(x).leaky_relu(LRELU_SLOPE);
        feats.push(h.clone());
        for b in &self.blocks {
            h = b.forward(&h);
            feats.push(h.clone());
        }

        let mut pyramid: Vec<Var> = Vec::with_capacity(3);
        for (i, &lvl) in LEVELS.iter().enumerate() {
            let lat = self.lateral[i].forward(&feats[self.spec.level_stage(lvl)]);
            let p = match pyramid.last() {
                Some(above) => lat.add(&upsample_to(above, lat.shape()[2])),
                None => lat,
            };
            pyramid.push(p);
        }

        let n = x.shape()[0];
        let d = self.spec.latent.layer_dim;
        let rows: Vec<Var> = self
            .heads
            .iter()
            .enumerate()
            .map(|(r, head)| {
                let level = match self.spec.level_of_row(r) {
                    PyramidLevel::Coarse => 0,
                    PyramidLevel::Medium => 1,
                    PyramidLevel::Fine => 2,
                };
                head.forward(&pyramid[level]).reshape(&[n, 1, d])
            })
            .collect();
        Ok(concat(&rows, 1))
    }

    pub fn encode(&self, images: &ImageBatch) -> Result<Vec<LatentCode>> {
        let codes = no_grad(|| self.forward(&images.to_var()))?;
        codes_from_batch(codes.value(), &self.spec.latent)
    }
}

fn upsample_to(x: &Var, size: usize) -> Var {
    let mut y = x.clone();
    while y.shape()[2] < size {
        y = y.upsample2x();
    }
    y
}

impl Module for Encoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.stem.params();
        v.extend(self.blocks.iter().flat_map(ResBlock::params));
        v.extend(self.lateral.iter().flat_map(Conv2d::params));
        for h in &self.heads {
            v.extend(h.convs.iter().flat_map(Conv2d::params));
            v.extend(h.linear.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.stem.params_mut();
        v.extend(self.blocks.iter_mut().flat_map(ResBlock::params_mut));
        v.extend(self.lateral.iter_mut().flat_map(Conv2d::params_mut));
        for h in &mut self.heads {
            v.extend(h.convs.iter_mut().flat_map(Conv2d::params_mut));
            v.extend(h.linear.params_mut());
        }
        v
    }
}
