//! Face stylization: adapts a clone of the stage-1 encoder to source images
//! while the decoder and remapper stay frozen.

use std::ops::Deref;
use std::str::FromStr;

use autograd::{grad, no_grad, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{batch_indices, InMemoryDataset};
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::latent::{fuse_batch, split_batch};
use crate::losses::{
    loss_adv_critic, loss_adv_gen, loss_id, loss_lpips, loss_recon, objective_stage2, penalty_mix, LossReport,
    Stage2Terms, Stage2Weights, DEFAULT_GP_WEIGHT,
};
use crate::model::Embedders;
use crate::nets::{Critic, Decoder, Encoder, Module, Remapper};
use crate::optim::{Adam, AdamConfig};
use crate::persist::{PackageInfo, StyleModelPackage};
use crate::rng;

pub const FULL_STEPS: u64 = 20_000;
pub const TEST_TIME_STEPS: u64 = 50;
pub const DEFAULT_OFFLINE_BATCH: usize = 4;
/// What the stage-2 critic treats as real: `D(E_frozen(x))`.
pub const PSEUDO_REAL: &str = "frozen_pipeline_output";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StylizeMode {
    Offline,
    Online,
    TestTime,
}

impl FromStr for StylizeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(Self::Offline),
            "online" => Ok(Self::Online),
            "test-time" | "test_time" => Ok(Self::TestTime),
            _ => Err(Error::Config(format!("unknown mode `{s}` (offline, online, test-time)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticInit {
    WarmStart,
    Fresh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizeConfig {
    pub mode: StylizeMode,
    pub steps: u64,
    pub batch_size: usize,
    pub weights: Stage2Weights,
    pub optimizer: AdamConfig,
    pub gp_weight: f64,
    /// Test-time only: keep adapting across inputs instead of resetting.
    pub cumulative: bool,
}

impl StylizeConfig {
    pub fn new(mode: StylizeMode) -> Self {
        let (steps, batch_size) = match mode {
            StylizeMode::Offline => (FULL_STEPS, DEFAULT_OFFLINE_BATCH),
            StylizeMode::Online => (FULL_STEPS, 1),
            StylizeMode::TestTime => (TEST_TIME_STEPS, 1),
        };
        Self {
            mode,
            steps,
            batch_size,
            weights: Stage2Weights::DEFAULT,
            optimizer: AdamConfig::default(),
            gp_weight: DEFAULT_GP_WEIGHT,
            cumulative: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.mode != StylizeMode::Offline && self.batch_size != 1 {
            return Err(Error::Config(format!("{:?} mode requires batch size 1", self.mode)));
        }
        if !(self.gp_weight.is_finite() && self.gp_weight >= 0.0) {
            return Err(Error::Config("gradient penalty weight must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Decisions in force for an adapted package; stored in its manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Record {
    pub mode: StylizeMode,
    pub steps: u64,
    pub batch_size: usize,
    pub weights: Stage2Weights,
    pub pseudo_real: String,
    pub critic_init: CriticInit,
}

/// Read-only access to a network that must never be updated.
#[derive(Clone, Debug)]
pub struct Frozen<T>(T);

impl<T> Deref for Frozen<T> {
    type Target = T;
    fn deref(&self) -> &T {
        &self.0
    }
}

/// `(E_frozen, E_trainable)`: two independent, weight-identical copies.
pub fn clone_encoder(pkg: &StyleModelPackage) -> (Frozen<Encoder>, Encoder) {
    (Frozen(pkg.model.encoder.clone()), pkg.model.encoder.clone())
}

pub struct Stage2Session {
    info: PackageInfo,
    frozen: Frozen<Encoder>,
    trainable: Encoder,
    decoder: Frozen<Decoder>,
    remapper: Frozen<Remapper>,
    critic: Critic,
    critic_init: CriticInit,
    embedders: Embedders,
    cfg: StylizeConfig,
    seed: u64,
    steps: u64,
    encoder_opt: Adam,
    critic_opt: Adam,
}

impl Stage2Session {
    pub fn new(pkg: &StyleModelPackage, cfg: &StylizeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let spec = &pkg.model.spec;
        let (frozen, trainable) = clone_encoder(pkg);
        let (critic, critic_init) = match &pkg.model.critic {
            Some(c) => (c.clone(), CriticInit::WarmStart),
            None => (Critic::new(&spec.critic, seed)?, CriticInit::Fresh),
        };
        let encoder_opt = Adam::new(cfg.optimizer, &trainable.params());
        let critic_opt = Adam::new(cfg.optimizer, &critic.params());
        Ok(Self {
            info: pkg.info.clone(),
            frozen,
            trainable,
            decoder: Frozen(pkg.model.decoder.clone()),
            remapper: Frozen(pkg.model.remapper.clone()),
            critic,
            critic_init,
            embedders: Embedders::new(spec)?,
            cfg: cfg.clone(),
            seed,
            steps: 0,
            encoder_opt,
            critic_opt,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> &StylizeConfig {
        &self.cfg
    }

    pub fn frozen_encoder(&self) -> &Encoder {
        &self.frozen
    }

    pub fn trainable_encoder(&self) -> &Encoder {
        &self.trainable
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn remapper(&self) -> &Remapper {
        &self.remapper
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    /// Restores `E′` to the package weights and clears its optimizer state.
    pub fn reset_encoder(&mut self) {
        self.trainable = (*self.frozen).clone();
        self.encoder_opt = Adam::new(self.cfg.optimizer, &self.trainable.params());
    }

    /// One critic update and one update of `E′` on a source batch.
    pub fn step(&mut self, x: &ImageBatch) -> Result<LossReport> {
        let it = self.steps;
        let w = self.cfg.weights;
        let xv = x.to_var();
        let real = no_grad(|| self.decoder.forward(&self.frozen.forward(&xv)?))?;
        let x_prime = self.decoder.forward(&self.trainable.forward(&xv)?)?;

        let mut critic_loss = None;
        if w.adv_x > 0.0 {
            let alpha = penalty_mix(&mut rng::stream(self.seed, "stage2/gp", it), x.len());
            let loss = loss_adv_critic(&self.critic, &real, &x_prime.detach(), self.cfg.gp_weight, &alpha)?;
            if !loss.value().is_finite() {
                return Err(Error::NonFiniteLoss {
                    term: "critic".into(),
                    iteration: it,
                });
            }
            critic_loss = Some(loss.value().item());
            let g = grad(&loss, &self.critic.param_vars(), false);
            self.critic_opt.step(self.critic.params_mut(), &g);
        }

        let (f, r, critic) = (&self.embedders.perceptual, &self.embedders.identity, &self.critic);
        let (xp, xv) = (&x_prime, &xv);
        let terms = Stage2Terms {
            recon: Box::new(move || loss_recon(xp, xv)),
            lpips: Box::new(move || loss_lpips(f, xp, xv)),
            id: Box::new(move || loss_id(r, xv, xp)),
            adv_x: Box::new(move || loss_adv_gen(critic, xp)),
        };
        let eval = objective_stage2(&w, terms, it)?;
        let vars = self.trainable.param_vars();
        let grads = if eval.total.requires_grad() {
            grad(&eval.total, &vars, false)
        } else {
            vec![None; vars.len()]
        };
        self.encoder_opt.step(self.trainable.params_mut(), &grads);
        self.steps += 1;
        Ok(LossReport {
            iteration: it,
            terms: eval.values,
            total: eval.total.value().item(),
            critic: critic_loss,
        })
    }

    /// `D(E′(x))`.
    pub fn stylize(&self, x: &ImageBatch) -> Result<ImageBatch> {
        let out = no_grad(|| self.decoder.forward(&self.trainable.forward(&x.to_var())?))?;
        ImageBatch::new(out.value().clone())
    }

    /// The adapted model: `E_frozen` stays as the package encoder, `E′` is
    /// stored alongside it.
    pub fn to_package(&self) -> StyleModelPackage {
        let mut info = self.info.clone();
        info.stage2 = Some(Stage2Record {
            mode: self.cfg.mode,
            steps: self.steps,
            batch_size: self.cfg.batch_size,
            weights: self.cfg.weights,
            pseudo_real: PSEUDO_REAL.into(),
            critic_init: self.critic_init,
        });
        StyleModelPackage {
            info,
            model: crate::model::StyleModel {
                spec: self.info.arch.clone(),
                encoder: (*self.frozen).clone(),
                decoder: (*self.decoder).clone(),
                remapper: (*self.remapper).clone(),
                critic: Some(self.critic.clone()),
            },
            adapted_encoder: Some(self.trainable.clone()),
        }
    }
}

fn require_mode(cfg: &StylizeConfig, mode: StylizeMode) -> Result<()> {
    if cfg.mode != mode {
        return Err(Error::Config(format!("expected a {mode:?} config, got {:?}", cfg.mode)));
    }
    Ok(())
}

fn check_resolution(pkg: &StyleModelPackage, res: usize) -> Result<()> {
    if res != pkg.model.spec.resolution {
        return Err(Error::Resolution {
            expected: pkg.model.spec.resolution,
            got: res,
        });
    }
    Ok(())
}

/// Shuffled-batch loop over a source dataset for `cfg.steps` steps.
pub fn stylize_offline(
    pkg: &StyleModelPackage,
    data: &InMemoryDataset,
    cfg: &StylizeConfig,
    seed: u64,
    mut on_step: impl FnMut(&LossReport),
) -> Result<Stage2Session> {
    require_mode(cfg, StylizeMode::Offline)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("source dataset".into()));
    }
    check_resolution(pkg, data.resolution())?;
    let mut session = Stage2Session::new(pkg, cfg, seed)?;
    for s in 0..cfg.steps {
        let x = data.batch(&batch_indices(data.len(), cfg.batch_size, seed, "stage2/x", s)?)?;
        on_step(&session.step(&x)?);
    }
    Ok(session)
}

/// One batch-1 step per arriving image, in arrival order, for at most
/// `cfg.steps` images.
pub fn stylize_online(
    pkg: &StyleModelPackage,
    stream: impl IntoIterator<Item = Tensor>,
    cfg: &StylizeConfig,
    seed: u64,
    mut on_step: impl FnMut(&Stage2Session, &LossReport),
) -> Result<Stage2Session> {
    require_mode(cfg, StylizeMode::Online)?;
    let mut session = Stage2Session::new(pkg, cfg, seed)?;
    for img in stream.into_iter().take(cfg.steps as usize) {
        let x = ImageBatch::from_images(&[img])?;
        check_resolution(pkg, x.resolution())?;
        let r = session.step(&x)?;
        on_step(&session, &r);
    }
    if session.steps_taken() == 0 {
        return Err(Error::EmptyDataset("source stream".into()));
    }
    Ok(session)
}

/// Exactly `cfg.steps` updates on one `3×R×R` image, then one forward pass.
pub fn stylize_test_time(
    pkg: &StyleModelPackage,
    image: &Tensor,
    cfg: &StylizeConfig,
    seed: u64,
) -> Result<(Stage2Session, Tensor)> {
    require_mode(cfg, StylizeMode::TestTime)?;
    let x = ImageBatch::from_images(std::slice::from_ref(image))?;
    check_resolution(pkg, x.resolution())?;
    let mut session = Stage2Session::new(pkg, cfg, seed)?;
    for _ in 0..cfg.steps {
        session.step(&x)?;
    }
    let out = session.stylize(&x)?.image(0);
    Ok((session, out))
}

/// Test-time stylization of a sequence of inputs. Each input starts from the
/// package encoder unless the config is cumulative.
pub struct TestTimeStylizer {
    session: Stage2Session,
}

impl TestTimeStylizer {
    pub fn new(pkg: &StyleModelPackage, cfg: &StylizeConfig, seed: u64) -> Result<Self> {
        require_mode(cfg, StylizeMode::TestTime)?;
        Ok(Self {
            session: Stage2Session::new(pkg, cfg, seed)?,
        })
    }

    pub fn stylize(&mut self, image: &Tensor) -> Result<Tensor> {
        if !self.session.cfg.cumulative {
            self.session.reset_encoder();
        }
        let x = ImageBatch::from_images(std::slice::from_ref(image))?;
        for _ in 0..self.session.cfg.steps {
            self.session.step(&x)?;
        }
        Ok(self.session.stylize(&x)?.image(0))
    }

    pub fn session(&self) -> &Stage2Session {
        &self.session
    }
}

/// `D(E′(x))` with the package's stylizing encoder.
pub fn stylize_forward(pkg: &StyleModelPackage, x: &ImageBatch) -> Result<ImageBatch> {
    let out = no_grad(|| pkg.model.decoder.forward(&pkg.stylizing_encoder().forward(&x.to_var())?))?;
    ImageBatch::new(out.value().clone())
}

/// The `1×d_z` noise vector of a sampling seed.
pub fn sample_noise(seed: u64, dim: usize) -> Tensor {
    rng::noise(seed, "sample", 0, 1, dim)
}

/// `D(fuse(E′(x)_content, style))` with `style` of shape `N×ξ×D`.
pub fn decode_with_style(pkg: &StyleModelPackage, x: &ImageBatch, style: &Var) -> Result<ImageBatch> {
    let lat = &pkg.model.spec.latent;
    let out = no_grad(|| -> Result<Var> {
        let (content, _) = split_batch(&pkg.stylizing_encoder().forward(&x.to_var())?, lat)?;
        pkg.model.decoder.forward(&fuse_batch(&content, style, lat)?)
    })?;
    ImageBatch::new(out.value().clone())
}

/// One output batch per seed; every row of an output shares the seed's
/// noise, and every output shares the content rows of `E′(x)`.
pub fn sample_multimodal(pkg: &StyleModelPackage, x: &ImageBatch, seeds: &[u64]) -> Result<Vec<ImageBatch>> {
    let n = x.len();
    let dz = pkg.model.spec.remapper.noise_dim;
    seeds
        .iter()
        .map(|&s| {
            let z = sample_noise(s, dz);
            let z = Tensor::stack(&vec![z.index_outer(0); n]);
            let w_z = no_grad(|| pkg.model.remapper.forward(&Var::constant(z)))?;
            decode_with_style(pkg, x, &w_z)
        })
        .collect()
}
