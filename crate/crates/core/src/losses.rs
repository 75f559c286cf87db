//! Loss terms and the weighted stage objectives.
//!
//! Distances use the mean-square convention: `‖a − b‖²` is the mean of the
//! squared elementwise differences.

use std::collections::BTreeMap;
use std::fmt;

use autograd::{enable_grad, grad, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{split_batch, LatentConfig};
use crate::nets::{Critic, Encoder, IdentityEmbedder, PerceptualEmbedder};

pub const DEFAULT_GP_WEIGHT: f64 = 10.0;

/// Stage-1 weights `{λ_swap, λ_lp, λ_adv_r, λ_adv_z, λ_r, λ_id}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Weights {
    pub swap: f64,
    pub lp: f64,
    pub adv_r: f64,
    pub adv_z: f64,
    pub r: f64,
    pub id: f64,
}

impl Stage1Weights {
    pub const PHASE1: Self = Self::from_array([0.0, 0.8, 0.1, 0.0, 0.8, 1.0]);
    pub const PHASE2: Self = Self::from_array([1.0, 0.0, 0.0, 0.1, 0.0, 0.0]);
    pub const ZERO: Self = Self::from_array([0.0; 6]);

    /// From `[swap, lp, adv_r, adv_z, r, id]`.
    pub const fn from_array(a: [f64; 6]) -> Self {
        Self {
            swap: a[0],
            lp: a[1],
            adv_r: a[2],
            adv_z: a[3],
            r: a[4],
            id: a[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.swap, self.lp, self.adv_r, self.adv_z, self.r, self.id]
    }

    pub fn validate(&self) -> Result<()> {
        check_weights(&self.to_array())
    }

    pub fn adversarial(&self) -> bool {
        self.adv_r > 0.0 || self.adv_z > 0.0
    }
}

/// Stage-2 weights `{λ_r, λ_lp, λ_id, λ_adv_x}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Weights {
    pub r: f64,
    pub lp: f64,
    pub id: f64,
    pub adv_x: f64,
}

impl Stage2Weights {
    pub const DEFAULT: Self = Self {
        r: 0.5,
        lp: 0.8,
        id: 1.0,
        adv_x: 0.01,
    };

    pub fn to_array(&self) -> [f64; 4] {
        [self.r, self.lp, self.id, self.adv_x]
    }

    pub fn validate(&self) -> Result<()> {
        check_weights(&self.to_array())
    }
}

impl Default for Stage2Weights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.iter().all(|v| v.is_finite() && *v >= 0.0) {
        Ok(())
    } else {
        Err(Error::Config(format!("loss weights must be finite and non-negative: {w:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Recon,
    Lpips,
    Identity,
    AdvR,
    AdvZ,
    Swap,
    AdvX,
}

impl Term {
    pub fn name(self) -> &'static str {
        match self {
            Term::Recon => "loss_recon",
            Term::Lpips => "loss_lpips",
            Term::Identity => "loss_id",
            Term::AdvR => "loss_adv_r",
            Term::AdvZ => "loss_adv_z",
            Term::Swap => "loss_swap",
            Term::AdvX => "loss_adv_x",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Values of one training step. Terms with zero weight are absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: u64,
    pub terms: BTreeMap<Term, f64>,
    pub total: f64,
    pub critic: Option<f64>,
}

impl LossReport {
    pub fn get(&self, term: Term) -> Option<f64> {
        self.terms.get(&term).copied()
    }

    /// One `key=value` line.
    pub fn to_line(&self) -> String {
        let mut s = format!("iteration={} total={:.6e}", self.iteration, self.total);
        for (t, v) in &self.terms {
            s.push_str(&format!(" {t}={v:.6e}"));
        }
        if let Some(c) = self.critic {
            s.push_str(&format!(" critic={c:.6e}"));
        }
        s
    }
}

fn same_shape(a: &Var, b: &Var, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared difference.
pub fn mse(a: &Var, b: &Var) -> Result<Var> {
    same_shape(a, b, "mse")?;
    Ok(a.sub(b).square().mean_all())
}

pub fn loss_recon(a: &Var, b: &Var) -> Result<Var> {
    mse(a, b)
}

/// Mean over scales of the per-scale activation MSE.
pub fn loss_lpips(f: &PerceptualEmbedder, a: &Var, b: &Var) -> Result<Var> {
    same_shape(a, b, "loss_lpips")?;
    let fa = f.features(a)?;
    let fb = f.features(b)?;
    let k = fa.len() as f64;
    let mut total: Option<Var> = None;
    for (x, y) in fa.iter().zip(&fb) {
        let d = mse(x, y)?;
        total = Some(match total {
            Some(t) => t.add(&d),
            None => d,
        });
    }
    Ok(total.expect("at least two scales").scale(1.0 / k))
}

/// Mean over rows of `1 − cos(a_i, b_i)` for `N×E` embeddings.
pub fn cosine_distance(a: &Var, b: &Var) -> Result<Var> {
    same_shape(a, b, "cosine_distance")?;
    if a.value().ndim() != 2 {
        return Err(Error::Shape(format!("embeddings must be N×E, got {:?}", a.shape())));
    }
    let na = a.square().sum_keepdim(&[1]);
    let nb = b.square().sum_keepdim(&[1]);
    for (i, (x, y)) in na.value().data().iter().zip(nb.value().data()).enumerate() {
        if !(*x > 0.0 && *y > 0.0) {
            return Err(Error::UndefinedCosine(format!("embedding {i} has zero norm")));
        }
    }
    let cos = a.mul(b).sum_keepdim(&[1]).div(&na.mul(&nb).sqrt());
    Ok(cos.neg().add_scalar(1.0).mean_all())
}

pub fn loss_id(r: &IdentityEmbedder, a: &Var, b: &Var) -> Result<Var> {
    same_shape(a, b, "loss_id")?;
    cosine_distance(&r.embed(a)?, &r.embed(b)?)
}

/// `E[Dis(fake)] − E[Dis(real)]`.
pub fn wasserstein_gap(real_scores: &Var, fake_scores: &Var) -> Var {
    fake_scores.mean_all().sub(&real_scores.mean_all())
}

/// One interpolation coefficient per sample.
pub fn penalty_mix(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::from_fn(&[n, 1, 1, 1], |_| rng.random::<f64>())
}

/// `E[(‖∇Dis(x̂)‖ − 1)²]` at `x̂ = α·real + (1 − α)·fake`. The input
/// gradient is recorded even when called under `no_grad`.
pub fn gradient_penalty(dis: &Critic, real: &Var, fake: &Var, alpha: &Tensor) -> Result<Var> {
    same_shape(real, fake, "gradient_penalty")?;
    enable_grad(|| {
        let a = Var::constant(alpha.clone());
        let mut x_hat = real.mul(&a).add(&fake.mul(&a.neg().add_scalar(1.0)));
        if !x_hat.requires_grad() {
            x_hat = Var::leaf(x_hat.value().clone());
        }
        let scores = dis.forward(&x_hat)?;
        let g = grad(&scores.sum_all(), std::slice::from_ref(&x_hat), true)
            .pop()
            .flatten()
            .ok_or_else(|| Error::Shape("critic output does not depend on its input".into()))?;
        let n = g.shape()[0];
        let norm = g.square().sum_keepdim(&[1, 2, 3]).add_scalar(1e-12).sqrt();
        Ok(norm.add_scalar(-1.0).square().reshape(&[n]).mean_all())
    })
}

/// `E[Dis(fake)] − E[Dis(real)] + gp_weight · GP`.
pub fn loss_adv_critic(dis: &Critic, real: &Var, fake: &Var, gp_weight: f64, alpha: &Tensor) -> Result<Var> {
    same_shape(real, fake, "loss_adv_critic")?;
    let gap = wasserstein_gap(&dis.forward(real)?, &dis.forward(fake)?);
    if gp_weight == 0.0 {
        return Ok(gap);
    }
    Ok(gap.add(&gradient_penalty(dis, real, fake, alpha)?.scale(gp_weight)))
}

/// `−E[Dis(fake)]`.
pub fn loss_adv_gen(dis: &Critic, fake: &Var) -> Result<Var> {
    Ok(dis.forward(fake)?.mean_all().neg())
}

/// Style-code consistency `‖w_z − w′_z‖`.
pub fn style_consistency(w_z: &Var, w_z_prime: &Var) -> Result<Var> {
    same_shape(w_z, w_z_prime, "style rows")?;
    mse(w_z, w_z_prime)
}

/// Re-encodes `y_z` and compares its style rows against the injected `w_z`.
pub fn loss_swap(enc: &Encoder, y_z: &Var, w_z: &Var, config: &LatentConfig) -> Result<Var> {
    let (_, w_z_prime) = split_batch(&enc.forward(y_z)?, config)?;
    style_consistency(w_z, &w_z_prime)
}

type Thunk<'a> = Box<dyn FnOnce() -> Result<Var> + 'a>;

/// A weighted sum whose terms are evaluated only when their weight is
/// positive.
#[derive(Default)]
pub struct Objective<'a> {
    terms: Vec<(Term, f64, Thunk<'a>)>,
}

/// Result of evaluating an [`Objective`].
pub struct Evaluated {
    pub total: Var,
    pub values: BTreeMap<Term, f64>,
}

impl<'a> Objective<'a> {
    pub fn new() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn term(mut self, term: Term, weight: f64, f: impl FnOnce() -> Result<Var> + 'a) -> Self {
        self.terms.push((term, weight, Box::new(f)));
        self
    }

    /// `Σ λ_i · L_i` over terms with `λ_i > 0`.
    pub fn evaluate(self, iteration: u64) -> Result<Evaluated> {
        let mut total: Option<Var> = None;
        let mut values = BTreeMap::new();
        for (term, weight, f) in self.terms {
            if weight <= 0.0 {
                continue;
            }
            let v = f()?;
            let x = v.value().item();
            if !x.is_finite() {
                return Err(Error::NonFiniteLoss {
                    term: term.name().into(),
                    iteration,
                });
            }
            values.insert(term, x);
            let weighted = v.scale(weight);
            total = Some(match total {
                Some(t) => t.add(&weighted),
                None => weighted,
            });
        }
        Ok(Evaluated {
            total: total.unwrap_or_else(|| Var::constant(Tensor::scalar(0.0))),
            values,
        })
    }
}

/// Lazily evaluated stage-1 terms.
pub struct Stage1Terms<'a> {
    pub recon: Thunk<'a>,
    pub lpips: Thunk<'a>,
    pub id: Thunk<'a>,
    pub adv_r: Thunk<'a>,
    pub adv_z: Thunk<'a>,
    pub swap: Thunk<'a>,
}

pub fn objective_stage1(w: &Stage1Weights, t: Stage1Terms<'_>, iteration: u64) -> Result<Evaluated> {
    Objective::new()
        .term(Term::Recon, w.r, t.recon)
        .term(Term::Lpips, w.lp, t.lpips)
        .term(Term::Identity, w.id, t.id)
        .term(Term::AdvR, w.adv_r, t.adv_r)
        .term(Term::AdvZ, w.adv_z, t.adv_z)
        .term(Term::Swap, w.swap, t.swap)
        .evaluate(iteration)
}

/// Lazily evaluated stage-2 terms.
pub struct Stage2Terms<'a> {
    pub recon: Thunk<'a>,
    pub lpips: Thunk<'a>,
    pub id: Thunk<'a>,
    pub adv_x: Thunk<'a>,
}

pub fn objective_stage2(w: &Stage2Weights, t: Stage2Terms<'_>, iteration: u64) -> Result<Evaluated> {
    Objective::new()
        .term(Term::Recon, w.r, t.recon)
        .term(Term::Lpips, w.lp, t.lpips)
        .term(Term::Identity, w.id, t.id)
        .term(Term::AdvX, w.adv_x, t.adv_x)
        .evaluate(iteration)
}
