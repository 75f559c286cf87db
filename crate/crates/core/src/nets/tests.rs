use autograd::{no_grad, Tensor, Var};

use super::*;
use crate::image::ImageBatch;

fn toy_spec() -> ArchSpec {
    ArchSpec::new(16, &ArchOptions { layer_dim: 16, noise_dim: 8, remap_hidden: 12, ..ArchOptions::default() }).unwrap()
}

fn conv(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
    cin * cout * k * k + if bias { cout } else { 0 }
}

fn encoder_oracle(s: &EncoderSpec) -> usize {
    let ch = &s.channels;
    let f = s.fpn_channels;
    let d = s.latent.layer_dim;
    let mut n = conv(3, ch[0], 3, true);
    for i in 1..ch.len() {
        n += conv(ch[i - 1], ch[i], 3, true) + conv(ch[i], ch[i], 3, true) + conv(ch[i - 1], ch[i], 1, false);
    }
    for lvl in [PyramidLevel::Coarse, PyramidLevel::Medium, PyramidLevel::Fine] {
        n += conv(ch[s.level_stage(lvl)], f, 1, true);
    }
    for r in 0..s.latent.num_layers {
        let size = s.stage_resolution(s.level_stage(s.level_of_row(r)));
        let (convs, out) = if size <= 4 { (1, size) } else { ((size / 4).trailing_zeros() as usize, 4) };
        n += convs * conv(f, f, 3, true) + f * out * out * d + d;
    }
    n
}

fn decoder_oracle(s: &DecoderSpec) -> usize {
    let [_, c0, h, w] = s.const_shape();
    let mut n = c0 * h * w;
    for i in 0..s.latent.num_layers {
        let cin = if i == 0 { c0 } else { s.layer_channels(i - 1) };
        n += conv(cin, s.layer_channels(i), 3, true);
    }
    n += s.adain_param_counts().iter().sum::<usize>();
    n + conv(*s.channels.last().unwrap(), 3, 1, true)
}

fn critic_oracle(s: &CriticSpec) -> usize {
    let ch = &s.channels;
    let c = *ch.last().unwrap();
    let mut n = conv(3, ch[0], 1, true);
    for i in 1..ch.len() {
        n += conv(ch[i - 1], ch[i], 3, true);
    }
    n + conv(c, c, 3, true) + 16 * c * c + c + c + 1
}

#[test]
fn parameter_counts_match_oracle() {
    for res in [8, 16, 64] {
        let spec = ArchSpec::new(res, &ArchOptions { layer_dim: 16, ..ArchOptions::default() }).unwrap();
        assert_eq!(Encoder::new(&spec.encoder, 1).unwrap().num_parameters(), encoder_oracle(&spec.encoder), "{res}");
        assert_eq!(Decoder::new(&spec.decoder, 1).unwrap().num_parameters(), decoder_oracle(&spec.decoder), "{res}");
        assert_eq!(Critic::new(&spec.critic, 1).unwrap().num_parameters(), critic_oracle(&spec.critic), "{res}");
        let widths = spec.remapper.widths();
        let remap: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        assert_eq!(Remapper::new(&spec.remapper, 1).unwrap().num_parameters(), remap);
    }
}

#[test]
fn encode_shapes_and_determinism() {
    let spec = toy_spec();
    let enc = Encoder::new(&spec.encoder, 3).unwrap();
    let img = Tensor::from_fn(&[3, 16, 16], |i| ((i as f64) * 0.37).sin());
    let batch = ImageBatch::from_images(&[img.clone(), img, Tensor::zeros(&[3, 16, 16])]).unwrap();
    let codes = enc.encode(&batch).unwrap();
    assert_eq!(codes.len(), 3);
    assert_eq!(codes[0].values().shape(), [spec.latent.num_layers, 16]);
    assert_eq!(codes[0].values().data(), codes[1].values().data());
    assert!(codes[2].values().is_finite());
    let again = Encoder::new(&spec.encoder, 3).unwrap().encode(&batch).unwrap();
    assert_eq!(codes, again);
}

#[test]
fn encoder_rejects_wrong_resolution_and_non_finite() {
    let spec = toy_spec();
    let enc = Encoder::new(&spec.encoder, 3).unwrap();
    assert!(matches!(
        enc.forward(&Var::constant(Tensor::zeros(&[1, 3, 8, 8]))),
        Err(crate::Error::Resolution { expected: 16, got: 8 })
    ));
    assert!(enc.forward(&Var::constant(Tensor::full(&[1, 3, 16, 16], f64::NAN))).is_err());
}

#[test]
fn decode_of_zero_code_is_in_range() {
    let spec = toy_spec();
    let dec = Decoder::new(&spec.decoder, 4).unwrap();
    let z = Var::constant(Tensor::zeros(&[2, spec.latent.num_layers, 16]));
    let out = no_grad(|| dec.forward(&z)).unwrap();
    assert_eq!(out.shape(), [2, 3, 16, 16]);
    assert!(out.value().is_finite() && out.value().max_abs() <= 1.0);
    assert!(dec.forward(&Var::constant(Tensor::zeros(&[2, 3, 16]))).is_err());
}

#[test]
fn remapper_is_pure_and_handles_zero_noise() {
    let spec = toy_spec();
    let m = Remapper::new(&spec.remapper, 5).unwrap();
    let z = Tensor::from_fn(&[1, 8], |i| i as f64 * 0.1 - 0.3);
    let a = m.forward(&Var::constant(Tensor::stack(&[z.index_outer(0), z.index_outer(0)]))).unwrap();
    assert_eq!(a.shape(), [2, spec.latent.style_rows(), 16]);
    let d = a.value().data();
    let half = d.len() / 2;
    assert_eq!(d[..half], d[half..]);
    let zero = m.forward(&Var::constant(Tensor::zeros(&[1, 8]))).unwrap();
    assert!(zero.value().is_finite());
    assert!(m.forward(&Var::constant(Tensor::zeros(&[1, 7]))).is_err());
}

#[test]
fn critic_scores_duplicates_equally() {
    let spec = toy_spec();
    let dis = Critic::new(&spec.critic, 6).unwrap();
    let img = Tensor::from_fn(&[3, 16, 16], |i| ((i as f64) * 0.11).cos());
    let x = Var::constant(Tensor::stack(&[img.clone(), img]));
    let s = dis.forward(&x).unwrap();
    assert_eq!(s.shape(), [2]);
    assert_eq!(s.value().data()[0], s.value().data()[1]);
    assert!(dis.forward(&Var::constant(Tensor::zeros(&[1, 3, 8, 8]))).is_err());
}

#[test]
fn embedders_contracts() {
    let spec = toy_spec();
    let f = PerceptualEmbedder::new(&spec.perceptual).unwrap();
    let r = IdentityEmbedder::new(&spec.identity).unwrap();
    let x = Var::constant(Tensor::zeros(&[1, 3, 16, 16]));
    let feats = f.features(&x).unwrap();
    assert!(feats.len() >= 2);
    let e = r.embed(&x).unwrap();
    assert_eq!(e.shape(), [1, r.embedding_dim()]);
    let norm: f64 = e.value().data().iter().map(|v| v * v).sum();
    assert!(norm > 0.0);
    assert_eq!(*e.value().data().last().unwrap(), IDENTITY_ANCHOR);
    assert!(PerceptualEmbedder::new(&spec.identity).is_err());
}

#[test]
fn same_seed_same_weights_different_seed_differs() {
    let spec = toy_spec();
    let a = Encoder::new(&spec.encoder, 1).unwrap();
    let b = Encoder::new(&spec.encoder, 1).unwrap();
    let c = Encoder::new(&spec.encoder, 2).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    assert_ne!(a.checksum(), c.checksum());
    let values_are_f32 = a.params().iter().all(|p| p.value().data().iter().all(|v| round_f32(*v) == *v));
    assert!(values_are_f32);
}
