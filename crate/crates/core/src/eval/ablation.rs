use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use autograd::{no_grad, Tensor, Var};

use crate::data::InMemoryDataset;
use crate::error::{Error, Result};
use crate::image::{save_grid, ImageBatch};
use crate::latent::{fuse_batch, layers_for_resolution, split_batch};
use crate::losses::loss_id;
use crate::model::{Embedders, StyleModel};
use crate::nets::ArchOptions;
use crate::persist::StyleModelPackage;
use crate::rng;
use crate::stage1::{encapsulate, recon_error, EncapsulateOptions, Stage1Schedule};
use crate::stage2::stylize_forward;

/// Source images shown per grid.
const GRID_ROWS: usize = 4;

#[derive(Clone, Debug)]
pub struct AblationSettings {
    pub arch: ArchOptions,
    pub schedule: Stage1Schedule,
    pub seed: u64,
    /// Style images (and noise draws) used for the consistency metric.
    pub probe_count: usize,
}

impl AblationSettings {
    pub fn new(arch: ArchOptions, schedule: Stage1Schedule, seed: u64) -> Self {
        Self {
            arch,
            schedule,
            seed,
            probe_count: 8,
        }
    }
}

/// Mean over samples of `‖w_z − w′_z‖₂`, where `w′_z` is re-encoded from
/// `D(fuse(E(y)_content, w_z))`.
pub fn consistency_error(model: &StyleModel, y: &ImageBatch, z: &Tensor) -> Result<f64> {
    let lat = &model.spec.latent;
    let (w_z, w_z_prime) = no_grad(|| -> Result<(Var, Var)> {
        let (content, _) = split_batch(&model.encoder.forward(&y.to_var())?, lat)?;
        let w_z = model.remapper.forward(&Var::constant(z.clone()))?;
        let y_z = model.decoder.forward(&fuse_batch(&content, &w_z, lat)?)?;
        let (_, w_z_prime) = split_batch(&model.encoder.forward(&y_z)?, lat)?;
        Ok((w_z, w_z_prime))
    })?;
    let (a, b) = (w_z.value(), w_z_prime.value());
    let n = a.shape()[0];
    let per = a.numel() / n;
    let total: f64 = (0..n)
        .map(|i| {
            let s = i * per;
            a.data()[s..s + per]
                .iter()
                .zip(&b.data()[s..s + per])
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / n as f64)
}

/// `D(fuse(E′(x)_content, M(z)))` with one noise row per image.
fn fused_output(pkg: &StyleModelPackage, x: &ImageBatch, z: &Tensor) -> Result<ImageBatch> {
    let out = no_grad(|| pkg.model.fused_forward(pkg.stylizing_encoder(), &x.to_var(), z))?;
    ImageBatch::new(out.value().clone())
}

fn train(style: &InMemoryDataset, arch: &ArchOptions, schedule: &Stage1Schedule, seed: u64) -> Result<StyleModelPackage> {
    let opts = EncapsulateOptions {
        arch: arch.clone(),
        ..Default::default()
    };
    encapsulate(style, schedule, seed, &opts, |r| log::debug!("{}", r.to_line()))
}

fn probe(style: &InMemoryDataset, settings: &AblationSettings, noise_dim: usize) -> Result<(ImageBatch, Tensor)> {
    let n = settings.probe_count.clamp(1, style.len());
    let y = style.batch(&(0..n).collect::<Vec<_>>())?;
    let z = rng::noise(settings.seed, "ablation/probe", 0, n, noise_dim);
    Ok((y, z))
}

fn grid_source(source: &InMemoryDataset) -> Result<ImageBatch> {
    source.batch(&(0..source.len().min(GRID_ROWS)).collect::<Vec<_>>())
}

fn grid_rows(x: &ImageBatch, columns: &[ImageBatch]) -> Vec<Vec<Tensor>> {
    (0..x.len())
        .map(|i| std::iter::once(x.image(i)).chain(columns.iter().map(|c| c.image(i))).collect())
        .collect()
}

fn write_outputs(dir: &Path, summary: &str, rows: &[Vec<Tensor>]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.txt"), summary)?;
    save_grid(rows, &dir.join("grid.png"))
}

#[derive(Clone, Debug)]
pub struct SwapRun {
    pub lambda_swap: f64,
    pub consistency: f64,
    pub recon: f64,
}

/// Paired runs with and without the swapping loss.
#[derive(Clone, Debug)]
pub struct SwapReport {
    pub seed: u64,
    pub on: SwapRun,
    pub off: SwapRun,
    /// Source image, then the noise-fused output of each run.
    pub grid: Vec<Vec<Tensor>>,
}

impl SwapReport {
    pub fn swap_helps(&self) -> bool {
        self.on.consistency < self.off.consistency
    }

    pub fn to_summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        for (tag, r) in [("on", &self.on), ("off", &self.off)] {
            let _ = writeln!(s, "swap_{tag}.lambda_swap={}", r.lambda_swap);
            let _ = writeln!(s, "swap_{tag}.consistency={:.9e}", r.consistency);
            let _ = writeln!(s, "swap_{tag}.recon={:.9e}", r.recon);
        }
        let _ = writeln!(s, "swap_helps={}", self.swap_helps());
        s
    }

    /// Writes `summary.txt` and `grid.png` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_outputs(dir, &self.to_summary(), &self.grid)
    }
}

/// Trains the schedule as given and again with `λ_swap = 0`, then compares
/// style-code consistency on the same probe batch.
pub fn ablate_swap(
    style: &InMemoryDataset,
    source: &InMemoryDataset,
    settings: &AblationSettings,
) -> Result<SwapReport> {
    let on_schedule = settings.schedule.clone();
    let mut off_schedule = on_schedule.clone();
    off_schedule.phase1_weights.swap = 0.0;
    off_schedule.phase2_weights.swap = 0.0;
    let x = grid_source(source)?;
    let mut runs = Vec::with_capacity(2);
    let mut columns = Vec::with_capacity(2);
    for schedule in [&on_schedule, &off_schedule] {
        let pkg = train(style, &settings.arch, schedule, settings.seed)?;
        let (y, z) = probe(style, settings, pkg.model.spec.remapper.noise_dim)?;
        runs.push(SwapRun {
            lambda_swap: schedule.phase2_weights.swap,
            consistency: consistency_error(&pkg.model, &y, &z)?,
            recon: recon_error(&pkg.model, style)?,
        });
        let gz = rng::noise(settings.seed, "ablation/grid", 0, x.len(), pkg.model.spec.remapper.noise_dim);
        columns.push(fused_output(&pkg, &x, &gz)?);
    }
    let off = runs.pop().expect("two runs");
    let on = runs.pop().expect("two runs");
    Ok(SwapReport {
        seed: settings.seed,
        on,
        off,
        grid: grid_rows(&x, &columns),
    })
}

#[derive(Clone, Debug)]
pub struct XiRun {
    pub xi: usize,
    /// `loss_id(x, x′)` with `x′` the noise-fused output.
    pub loss_id: f64,
    /// `loss_id(x, D(E(x)))`.
    pub loss_id_forward: f64,
}

#[derive(Clone, Debug)]
pub struct XiReport {
    pub seed: u64,
    pub runs: Vec<XiRun>,
    /// Source image, then the noise-fused output of each `ξ`.
    pub grid: Vec<Vec<Tensor>>,
}

impl XiReport {
    /// Whether identity loss at the largest `ξ` exceeds that at the smallest.
    pub fn extremes_increase(&self) -> bool {
        let lo = self.runs.iter().min_by_key(|r| r.xi);
        let hi = self.runs.iter().max_by_key(|r| r.xi);
        match (lo, hi) {
            (Some(lo), Some(hi)) => hi.xi > lo.xi && hi.loss_id > lo.loss_id,
            _ => false,
        }
    }

    pub fn to_summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        for r in &self.runs {
            let _ = writeln!(s, "xi.{}.loss_id={:.9e}", r.xi, r.loss_id);
            let _ = writeln!(s, "xi.{}.loss_id_forward={:.9e}", r.xi, r.loss_id_forward);
        }
        let _ = writeln!(s, "extremes_increase={}", self.extremes_increase());
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_outputs(dir, &self.to_summary(), &self.grid)
    }
}

/// One stage-1 run per fusion index, each scored by identity loss between
/// source images and their noise-fused outputs.
pub fn ablate_xi(
    style: &InMemoryDataset,
    source: &InMemoryDataset,
    xi_list: &[usize],
    settings: &AblationSettings,
) -> Result<XiReport> {
    if xi_list.is_empty() {
        return Err(Error::Config("empty ξ list".into()));
    }
    if source.resolution() != style.resolution() {
        return Err(Error::Resolution {
            expected: style.resolution(),
            got: source.resolution(),
        });
    }
    let l = layers_for_resolution(style.resolution())?;
    if let Some(bad) = xi_list.iter().find(|&&xi| xi < 1 || xi >= l) {
        return Err(Error::Config(format!("ξ = {bad} outside [1, {}]", l - 1)));
    }
    let x = source.all();
    let shown = grid_source(source)?;
    let mut runs = Vec::with_capacity(xi_list.len());
    let mut columns = Vec::with_capacity(xi_list.len());
    for &xi in xi_list {
        let arch = ArchOptions {
            fusion_index: Some(xi),
            ..settings.arch.clone()
        };
        let pkg = train(style, &arch, &settings.schedule, settings.seed)?;
        let ident = &Embedders::new(&pkg.model.spec)?.identity;
        let dz = pkg.model.spec.remapper.noise_dim;
        let z = rng::noise(settings.seed, "ablation/xi", 0, x.len(), dz);
        let fused = fused_output(&pkg, &x, &z)?;
        let forward = stylize_forward(&pkg, &x)?;
        let id = |b: &ImageBatch| -> Result<f64> {
            Ok(no_grad(|| loss_id(ident, &x.to_var(), &b.to_var()))?.value().item())
        };
        runs.push(XiRun {
            xi,
            loss_id: id(&fused)?,
            loss_id_forward: id(&forward)?,
        });
        columns.push(fused.select(&(0..shown.len()).collect::<Vec<_>>())?);
    }
    Ok(XiReport {
        seed: settings.seed,
        runs,
        grid: grid_rows(&shown, &columns),
    })
}
