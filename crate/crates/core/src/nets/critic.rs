use autograd::Var;

use super::layers::{lrelu_gain, Conv2d, Init, Linear, Param, LRELU_SLOPE};
use super::spec::CriticSpec;
use super::Module;
use crate::error::{Error, Result};

/// Wasserstein critic: strided conv stack down to 4×4, then two dense layers.
/// No output nonlinearity.
#[derive(Clone, Debug)]
pub struct Critic {
    spec: CriticSpec,
    from_rgb: Conv2d,
    blocks: Vec<Conv2d>,
    last_conv: Conv2d,
    fc: Linear,
    out: Linear,
}

impl Critic {
    pub fn new(spec: &CriticSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut init = Init::new(seed, "critic");
        let g = lrelu_gain();
        let ch = &spec.channels;
        let from_rgb = Conv2d::new(&mut init, "from_rgb", 3, ch[0], 1, 1, true, g);
        let blocks = (1..ch.len())
            .map(|i| Conv2d::new(&mut init, &format!("blocks.{i}"), ch[i - 1], ch[i], 3, 1, true, g))
            .collect();
        let c = *ch.last().expect("validated widths");
        let last_conv = Conv2d::new(&mut init, "last_conv", c, c, 3, 1, true, g);
        let fc = Linear::new(&mut init, "fc", c * 16, c, true, g);
        let out = Linear::new(&mut init, "out", c, 1, true, 1.0);
        Ok(Self {
            spec: spec.clone(),
            from_rgb,
            blocks,
            last_conv,
            fc,
            out,
        })
    }

    pub fn spec(&self) -> &CriticSpec {
        &self.spec
    }

    /// `N×3×R×R` images to `N` scores.
    pub fn forward(&self, x: &Var) -> Result<Var> {
        let n = match x.shape() {
            [n, 3, h, w] if *h == self.spec.resolution && *w == *h => *n,
            [_, 3, h, _] => {
                return Err(Error::Resolution {
                    expected: self.spec.resolution,
                    got: *h,
                })
            }
            s => return Err(Error::Shape(format!("critic input must be N×3×R×R, got {s:?}"))),
        };
        let mut h = self.from_rgb.forward(x).leaky_relu(LRELU_SLOPE);
        for b in &self.blocks {
            h = b.forward(&h).leaky_relu(LRELU_SLOPE).avg_pool2x();
        }
        h = self.last_conv.forward(&h).leaky_relu(LRELU_SLOPE);
        let flat = h.reshape(&[n, h.numel() / n]);
        let h = self.fc.forward(&flat).leaky_relu(LRELU_SLOPE);
        Ok(self.out.forward(&h).reshape(&[n]))
    }
}

impl Module for Critic {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.from_rgb.params();
        v.extend(self.blocks.iter().flat_map(Conv2d::params));
        v.extend(self.last_conv.params());
        v.extend(self.fc.params());
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.from_rgb.params_mut();
        v.extend(self.blocks.iter_mut().flat_map(Conv2d::params_mut));
        v.extend(self.last_conv.params_mut());
        v.extend(self.fc.params_mut());
        v.extend(self.out.params_mut());
        v
    }
}
