//! Style encapsulation: trains E, D and M (against a critic) on the style
//! dataset alone.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::path::PathBuf;

use autograd::{grad, no_grad, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{batch_indices, InMemoryDataset};
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::latent::{fuse_batch, split_batch, LatentConfig};
use crate::losses::{
    loss_adv_critic, loss_adv_gen, loss_id, loss_lpips, loss_recon, loss_swap, objective_stage1, penalty_mix,
    LossReport, Stage1Terms, Stage1Weights, DEFAULT_GP_WEIGHT,
};
use crate::model::{Embedders, StyleModel};
use crate::nets::{ArchOptions, ArchSpec, Critic, Decoder, Encoder, Module, Remapper};
use crate::optim::{Adam, AdamConfig};
use crate::persist::{save_checkpoint, Checkpoint, PackageInfo, StyleModelPackage};
use crate::rng;

pub const FULL_BOUNDARY: u64 = 150_000;
pub const FULL_TOTAL: u64 = 170_000;
pub const TOY_BOUNDARY: u64 = 150;
pub const TOY_TOTAL: u64 = 200;
pub const DEFAULT_BATCH: usize = 4;

const GEN_OPT: &str = "generator";
const CRITIC_OPT: &str = "critic";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Schedule {
    pub phase1_weights: Stage1Weights,
    pub phase2_weights: Stage1Weights,
    pub phase_boundary: u64,
    pub total_iterations: u64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub gp_weight: f64,
    pub phase2_freeze_decoder: bool,
}

impl Stage1Schedule {
    /// The full-scale schedule: 150k phase-1 iterations of 170k.
    pub fn full() -> Self {
        Self {
            phase1_weights: Stage1Weights::PHASE1,
            phase2_weights: Stage1Weights::PHASE2,
            phase_boundary: FULL_BOUNDARY,
            total_iterations: FULL_TOTAL,
            batch_size: DEFAULT_BATCH,
            optimizer: AdamConfig::default(),
            gp_weight: DEFAULT_GP_WEIGHT,
            phase2_freeze_decoder: false,
        }
    }

    pub fn toy() -> Self {
        Self {
            phase_boundary: TOY_BOUNDARY,
            total_iterations: TOY_TOTAL,
            ..Self::full()
        }
    }

    /// Toy settings over `total` iterations with the toy phase-1 fraction,
    /// so `scaled(200)` is the toy schedule.
    pub fn scaled(total: u64) -> Self {
        Self {
            phase_boundary: (total * TOY_BOUNDARY + TOY_TOTAL / 2) / TOY_TOTAL,
            total_iterations: total,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.phase1_weights.validate()?;
        self.phase2_weights.validate()?;
        self.optimizer.validate()?;
        if self.total_iterations == 0 || self.phase_boundary > self.total_iterations {
            return Err(Error::Config(format!(
                "need 0 < total ({}) and boundary ({}) ≤ total",
                self.total_iterations, self.phase_boundary
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.gp_weight.is_finite() && self.gp_weight >= 0.0) {
            return Err(Error::Config("gradient penalty weight must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    pub fn weights_at(&self, iteration: u64) -> Result<Stage1Weights> {
        if iteration >= self.total_iterations {
            return Err(Error::IterationOutOfRange {
                iteration,
                total: self.total_iterations,
            });
        }
        Ok(if iteration < self.phase_boundary {
            self.phase1_weights
        } else {
            self.phase2_weights
        })
    }

    pub fn checkpoint_interval(&self) -> u64 {
        (self.total_iterations / 10).max(1)
    }
}

/// Lazily built forward graph of one generator step.
struct Forward<'a> {
    encoder: &'a Encoder,
    decoder: &'a Decoder,
    remapper: &'a Remapper,
    latent: LatentConfig,
    y: Var,
    z: Var,
    codes: OnceCell<Var>,
    y_r: OnceCell<Var>,
    w_z: OnceCell<Var>,
    y_z: OnceCell<Var>,
}

fn cached(cell: &OnceCell<Var>, f: impl FnOnce() -> Result<Var>) -> Result<Var> {
    if let Some(v) = cell.get() {
        return Ok(v.clone());
    }
    let v = f()?;
    Ok(cell.get_or_init(|| v).clone())
}

impl Forward<'_> {
    fn codes(&self) -> Result<Var> {
        cached(&self.codes, || self.encoder.forward(&self.y))
    }

    fn y_r(&self) -> Result<Var> {
        cached(&self.y_r, || self.decoder.forward(&self.codes()?))
    }

    fn w_z(&self) -> Result<Var> {
        cached(&self.w_z, || self.remapper.forward(&self.z))
    }

    fn y_z(&self) -> Result<Var> {
        cached(&self.y_z, || {
            let (content, _) = split_batch(&self.codes()?, &self.latent)?;
            self.decoder.forward(&fuse_batch(&content, &self.w_z()?, &self.latent)?)
        })
    }
}

fn check_finite(v: &Var, term: &str, iteration: u64) -> Result<()> {
    if v.value().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            term: term.into(),
            iteration,
        })
    }
}

pub struct Stage1Trainer {
    model: StyleModel,
    embedders: Embedders,
    schedule: Stage1Schedule,
    seed: u64,
    data: InMemoryDataset,
    iteration: u64,
    gen_opt: Adam,
    critic_opt: Adam,
}

impl Stage1Trainer {
    pub fn new(spec: &ArchSpec, data: InMemoryDataset, schedule: Stage1Schedule, seed: u64) -> Result<Self> {
        let model = StyleModel::new(spec, seed)?;
        let gen_opt = Adam::new(schedule.optimizer, &model.generator_params());
        let critic_opt = Adam::new(schedule.optimizer, &model.critic.as_ref().expect("fresh model").params());
        Self::assemble(model, data, schedule, seed, 0, gen_opt, critic_opt)
    }

    fn assemble(
        model: StyleModel,
        data: InMemoryDataset,
        schedule: Stage1Schedule,
        seed: u64,
        iteration: u64,
        gen_opt: Adam,
        critic_opt: Adam,
    ) -> Result<Self> {
        schedule.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset("style dataset".into()));
        }
        if data.resolution() != model.spec.resolution {
            return Err(Error::Resolution {
                expected: model.spec.resolution,
                got: data.resolution(),
            });
        }
        if schedule.batch_size > data.len() {
            return Err(Error::BatchTooLarge {
                batch_size: schedule.batch_size,
                len: data.len(),
            });
        }
        if model.critic.is_none() {
            return Err(Error::Package("stage-1 training needs critic weights".into()));
        }
        Ok(Self {
            embedders: Embedders::new(&model.spec)?,
            model,
            schedule,
            seed,
            data,
            iteration,
            gen_opt,
            critic_opt,
        })
    }

    /// Continues a run from a checkpoint written by [`Stage1Trainer::checkpoint`].
    pub fn resume(ckpt: Checkpoint, data: InMemoryDataset) -> Result<Self> {
        let Checkpoint {
            package,
            mut optimizers,
        } = ckpt;
        let schedule = package
            .info
            .schedule
            .clone()
            .ok_or_else(|| Error::Package("checkpoint has no stage-1 schedule".into()))?;
        let mut take = |k: &str| {
            optimizers
                .remove(k)
                .ok_or_else(|| Error::Package(format!("checkpoint lacks `{k}` optimizer state")))
        };
        let (gen_opt, critic_opt) = (take(GEN_OPT)?, take(CRITIC_OPT)?);
        let expected: Vec<String> = package.model.generator_params().iter().map(|p| p.name().to_string()).collect();
        let found: Vec<String> = gen_opt.moments.iter().map(|m| m.name.clone()).collect();
        if expected != found {
            return Err(Error::Package("generator optimizer state does not match the networks".into()));
        }
        Self::assemble(
            package.model,
            data,
            schedule,
            package.info.seed,
            package.info.iteration,
            gen_opt,
            critic_opt,
        )
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.schedule.total_iterations
    }

    pub fn model(&self) -> &StyleModel {
        &self.model
    }

    pub fn schedule(&self) -> &Stage1Schedule {
        &self.schedule
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embedders(&self) -> &Embedders {
        &self.embedders
    }

    /// The batch `y`, noise `z` and re-sampled real batch `y′` of an iteration.
    pub fn draw(&self, iteration: u64) -> Result<(ImageBatch, Tensor, ImageBatch)> {
        let (n, len) = (self.schedule.batch_size, self.data.len());
        let y = self.data.batch(&batch_indices(len, n, self.seed, "stage1/y", iteration)?)?;
        let y_prime = self.data.batch(&batch_indices(len, n, self.seed, "stage1/y_prime", iteration)?)?;
        let z = rng::noise(self.seed, "stage1/z", iteration, n, self.model.spec.remapper.noise_dim);
        Ok((y, z, y_prime))
    }

    pub fn step(&mut self) -> Result<LossReport> {
        let (y, z, y_prime) = self.draw(self.iteration)?;
        self.step_with(&y, &z, &y_prime)
    }

    /// One critic update followed by one joint update of E, D and M.
    pub fn step_with(&mut self, y: &ImageBatch, z: &Tensor, y_prime: &ImageBatch) -> Result<LossReport> {
        let it = self.iteration;
        let w = self.schedule.weights_at(it)?;
        let gp_weight = self.schedule.gp_weight;
        let freeze_decoder = self.schedule.phase2_freeze_decoder && it >= self.schedule.phase_boundary;
        let StyleModel {
            spec,
            encoder,
            decoder,
            remapper,
            critic,
        } = &mut self.model;
        let critic: &mut Critic = critic.as_mut().expect("checked at construction");

        let (grads, total, values, critic_loss) = {
            let fwd = Forward {
                encoder,
                decoder,
                remapper,
                latent: spec.latent,
                y: y.to_var(),
                z: Var::constant(z.clone()),
                codes: OnceCell::new(),
                y_r: OnceCell::new(),
                w_z: OnceCell::new(),
                y_z: OnceCell::new(),
            };
            let real = y_prime.to_var();

            let mut critic_loss = None;
            if w.adversarial() {
                let mut gp_rng = rng::stream(self.seed, "stage1/gp", it);
                let mut fakes = Vec::new();
                if w.adv_r > 0.0 {
                    fakes.push(fwd.y_r()?.detach());
                }
                if w.adv_z > 0.0 {
                    fakes.push(fwd.y_z()?.detach());
                }
                let mut loss: Option<Var> = None;
                for fake in &fakes {
                    let alpha = penalty_mix(&mut gp_rng, fake.shape()[0]);
                    let l = loss_adv_critic(critic, &real, fake, gp_weight, &alpha)?;
                    loss = Some(match loss {
                        Some(acc) => acc.add(&l),
                        None => l,
                    });
                }
                let loss = loss.expect("at least one adversarial term");
                check_finite(&loss, "critic", it)?;
                critic_loss = Some(loss.value().item());
                let g = grad(&loss, &critic.param_vars(), false);
                self.critic_opt.step(critic.params_mut(), &g);
            }

            let critic: &Critic = critic;
            let (f, r) = (&self.embedders.perceptual, &self.embedders.identity);
            let fwd = &fwd;
            let terms = Stage1Terms {
                recon: Box::new(move || loss_recon(&fwd.y_r()?, &fwd.y)),
                lpips: Box::new(move || loss_lpips(f, &fwd.y_r()?, &fwd.y)),
                id: Box::new(move || loss_id(r, &fwd.y, &fwd.y_r()?)),
                adv_r: Box::new(move || loss_adv_gen(critic, &fwd.y_r()?)),
                adv_z: Box::new(move || loss_adv_gen(critic, &fwd.y_z()?)),
                swap: Box::new(move || loss_swap(fwd.encoder, &fwd.y_z()?, &fwd.w_z()?, &fwd.latent)),
            };
            let eval = objective_stage1(&w, terms, it)?;
            check_finite(&eval.total, "total", it)?;
            let mut vars = fwd.encoder.param_vars();
            vars.extend(fwd.decoder.param_vars());
            vars.extend(fwd.remapper.param_vars());
            let mut grads = if eval.total.requires_grad() {
                grad(&eval.total, &vars, false)
            } else {
                vec![None; vars.len()]
            };
            if freeze_decoder {
                let start = fwd.encoder.params().len();
                for g in &mut grads[start..start + fwd.decoder.params().len()] {
                    *g = None;
                }
            }
            (grads, eval.total.value().item(), eval.values, critic_loss)
        };

        self.gen_opt.step(self.model.generator_params_mut(), &grads);
        self.iteration += 1;
        Ok(LossReport {
            iteration: it,
            terms: values,
            total,
            critic: critic_loss,
        })
    }

    /// Runs to the end of the schedule, calling `on_step` after every step.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &LossReport) -> Result<()>) -> Result<Vec<LossReport>> {
        let mut reports = Vec::new();
        while !self.is_done() {
            let r = self.step()?;
            on_step(self, &r)?;
            reports.push(r);
        }
        Ok(reports)
    }

    fn info(&self) -> PackageInfo {
        let mut info = PackageInfo::new(&self.model.spec, self.seed, self.iteration);
        info.schedule = Some(self.schedule.clone());
        info
    }

    pub fn package(&self, include_critic: bool) -> StyleModelPackage {
        let mut model = self.model.clone();
        if !include_critic {
            model.critic = None;
        }
        StyleModelPackage {
            info: self.info(),
            model,
            adapted_encoder: None,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut optimizers = BTreeMap::new();
        optimizers.insert(GEN_OPT.to_string(), self.gen_opt.clone());
        optimizers.insert(CRITIC_OPT.to_string(), self.critic_opt.clone());
        Checkpoint {
            package: self.package(true),
            optimizers,
        }
    }

    /// Mean reconstruction loss `‖D(E(y)) − y‖` over a dataset.
    pub fn recon_error(&self, data: &InMemoryDataset) -> Result<f64> {
        recon_error(&self.model, data)
    }
}

pub fn recon_error(model: &StyleModel, data: &InMemoryDataset) -> Result<f64> {
    let mut total = 0.0;
    for img in data.images() {
        let x = Var::constant(Tensor::stack(std::slice::from_ref(img)));
        let l = no_grad(|| -> Result<f64> {
            let y_r = model.decoder.forward(&model.encoder.forward(&x)?)?;
            Ok(loss_recon(&y_r, &x)?.value().item())
        })?;
        total += l;
    }
    Ok(total / data.len() as f64)
}

#[derive(Clone, Debug, Default)]
pub struct EncapsulateOptions {
    pub arch: ArchOptions,
    /// Latest checkpoint is kept here, refreshed every
    /// [`Stage1Schedule::checkpoint_interval`] iterations and at the end.
    pub checkpoint_dir: Option<PathBuf>,
    pub include_critic: bool,
}

/// Trains a style model from scratch on `data`.
pub fn encapsulate(
    data: &InMemoryDataset,
    schedule: &Stage1Schedule,
    seed: u64,
    opts: &EncapsulateOptions,
    mut on_step: impl FnMut(&LossReport),
) -> Result<StyleModelPackage> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("style dataset".into()));
    }
    let spec = ArchSpec::new(data.resolution(), &opts.arch)?;
    let mut trainer = Stage1Trainer::new(&spec, data.clone(), schedule.clone(), seed)?;
    let interval = schedule.checkpoint_interval();
    trainer.run(|t, r| {
        on_step(r);
        if let Some(dir) = &opts.checkpoint_dir {
            if t.iteration() % interval == 0 || t.is_done() {
                save_checkpoint(&t.checkpoint(), dir)?;
            }
        }
        Ok(())
    })?;
    Ok(trainer.package(opts.include_critic))
}
