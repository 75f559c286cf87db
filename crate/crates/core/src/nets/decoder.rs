use autograd::{no_grad, Tensor, Var};

use super::layers::{lrelu_gain, AdaIn, Conv2d, Init, Param, LRELU_SLOPE};
use super::spec::DecoderSpec;
use super::Module;
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::latent::LatentCode;

#[derive(Clone, Debug)]
struct StyledConv {
    conv: Conv2d,
    adain: AdaIn,
    upsample: bool,
}

/// Style-based synthesis network: a learned 4×4 constant, two AdaIN-modulated
/// convolutions per resolution, one latent row per modulation site.
#[derive(Clone, Debug)]
pub struct Decoder {
    spec: DecoderSpec,
    constant: Param,
    layers: Vec<StyledConv>,
    to_rgb: Conv2d,
}

impl Decoder {
    pub fn new(spec: &DecoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut init = Init::new(seed, "decoder");
        let constant = Param::new("const", init.normal(&spec.const_shape(), 1.0));
        let d = spec.latent.layer_dim;
        let g = lrelu_gain();
        let layers = (0..spec.latent.num_layers)
            .map(|i| {
                let cout = spec.layer_channels(i);
                let cin = if i == 0 { spec.channels[0] } else { spec.layer_channels(i - 1) };
                StyledConv {
                    conv: Conv2d::new(&mut init, &format!("layers.{i}.conv"), cin, cout, 3, 1, true, g),
                    adain: AdaIn::new(&mut init, &format!("layers.{i}.adain"), d, cout),
                    upsample: i >= 2 && i % 2 == 0,
                }
            })
            .collect();
        let last = *spec.channels.last().expect("validated widths");
        let to_rgb = Conv2d::new(&mut init, "to_rgb", last, 3, 1, 1, true, 1.0);
        Ok(Self {
            spec: spec.clone(),
            constant,
            layers,
            to_rgb,
        })
    }

    pub fn spec(&self) -> &DecoderSpec {
        &self.spec
    }

    /// `N×L×D` codes to `N×3×R×R` images in `[-1, 1]`.
    pub fn forward(&self, codes: &Var) -> Result<Var> {
        let lat = &self.spec.latent;
        let n = match codes.shape() {
            [n, l, d] if *l == lat.num_layers && *d == lat.layer_dim => *n,
            s => {
                return Err(Error::Shape(format!(
                    "decoder expects N×{}×{} codes, got {s:?}",
                    lat.num_layers, lat.layer_dim
                )))
            }
        };
        let [_, c, h, w] = self.spec.const_shape();
        let mut x = self.constant.var().broadcast_to(&[n, c, h, w]);
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.upsample {
                x = x.upsample2x();
            }
            x = layer.conv.forward(&x).leaky_relu(LRELU_SLOPE);
            let row = codes.narrow(1, i, 1).reshape(&[n, lat.layer_dim]);
            x = layer.adain.forward(&x, &row);
        }
        Ok(self.to_rgb.forward(&x).tanh())
    }

    pub fn decode(&self, codes: &[LatentCode]) -> Result<ImageBatch> {
        if codes.is_empty() {
            return Err(Error::Shape("no codes to decode".into()));
        }
        let values: Vec<Tensor> = codes.iter().map(|c| c.values().clone()).collect();
        let out = no_grad(|| self.forward(&Var::constant(Tensor::stack(&values))))?;
        ImageBatch::new(out.value().clone())
    }
}

impl Module for Decoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.constant];
        for l in &self.layers {
            v.extend(l.conv.params());
            v.extend(l.adain.affine.params());
        }
        v.extend(self.to_rgb.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.constant];
        for l in &mut self.layers {
            v.extend(l.conv.params_mut());
            v.extend(l.adain.affine.params_mut());
        }
        v.extend(self.to_rgb.params_mut());
        v
    }
}
