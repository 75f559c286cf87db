use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use modify::data::{load_folder, load_image, synth_generate, InMemoryDataset, StyleProfile, SyntheticFaceDataset};
use modify::eval::{ablate_swap, ablate_xi, eval_fid, fid_between, AblationSettings};
use modify::image::{save_grid, save_png, ImageBatch};
use modify::latent::{default_fusion_index, layers_for_resolution};
use modify::losses::LossReport;
use modify::model::Embedders;
use modify::nets::{ArchOptions, ArchSpec};
use modify::persist::{load_package, read_manifest, save_package, StyleModelPackage};
use modify::stage1::{encapsulate as run_encapsulate, EncapsulateOptions, Stage1Schedule};
use modify::stage2::{sample_multimodal, stylize_offline, stylize_online, stylize_test_time, StylizeConfig, StylizeMode};

use crate::{
    AblateArgs, Ablation, Arch, EncapsulateArgs, EvalArgs, SampleArgs, StylizeArgs, StylizeTrainArgs, SynthArgs,
    UsageError,
};

fn arch_options(arch: Arch, layer_dim: usize) -> ArchOptions {
    match arch {
        Arch::Default => ArchOptions {
            layer_dim,
            noise_dim: layer_dim,
            ..ArchOptions::default()
        },
        Arch::Tiny => ArchOptions::tiny(layer_dim),
    }
}

fn arch_name(arch: Arch) -> &'static str {
    match arch {
        Arch::Default => "default",
        Arch::Tiny => "tiny",
    }
}

/// `<out>.metrics.log` next to `out`.
fn metrics_path(out: &Path) -> PathBuf {
    let mut s = out.components().collect::<PathBuf>().into_os_string();
    s.push(".metrics.log");
    PathBuf::from(s)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
        }
        _ => Ok(()),
    }
}

/// Loss lines to the metrics log, with a progress line on standard error
/// every `every` iterations.
struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
    every: u64,
    total: u64,
    error: Option<io::Error>,
}

impl MetricsLog {
    fn create(out: &Path, every: u64, total: u64) -> Result<Self> {
        let path = metrics_path(out);
        create_parent(&path)?;
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
            every: every.max(1),
            total,
            error: None,
        })
    }

    fn record(&mut self, r: &LossReport) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.out, "{}", r.to_line()) {
                self.error = Some(e);
            }
        }
        let done = r.iteration + 1;
        if done % self.every == 0 || done == self.total {
            info!("{done}/{} total={:.4e}", self.total, r.total);
        }
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e).with_context(|| format!("writing {}", self.path.display()));
        }
        self.out.flush().with_context(|| format!("writing {}", self.path.display()))
    }
}

/// Effective flags of `command`, keyed `command.flag`.
fn effective(command: &str, pairs: Vec<(&str, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (format!("{command}.{k}"), v)).collect()
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn print_fingerprint(pkg: &Path) -> Result<()> {
    eprintln!("fingerprint={}", read_manifest(pkg)?.fingerprint());
    Ok(())
}

fn load_pkg(path: &Path) -> Result<StyleModelPackage> {
    let pkg = load_package(path).with_context(|| format!("loading package {}", path.display()))?;
    print_fingerprint(path)?;
    Ok(pkg)
}

fn load_dir(dir: &Path, resolution: usize) -> Result<InMemoryDataset> {
    Ok(load_folder(dir, resolution)
        .with_context(|| format!("loading images from {}", dir.display()))?
        .data)
}

fn emit(path: &Path) -> Result<()> {
    println!("{}", path.display());
    Ok(())
}

pub fn encapsulate(a: &EncapsulateArgs) -> Result<()> {
    let style = load_dir(&a.style_dir, a.resolution)?;
    let arch = ArchOptions {
        fusion_index: a.xi,
        ..arch_options(a.arch, a.layer_dim)
    };
    let spec = ArchSpec::new(a.resolution, &arch)?;
    let mut schedule = Stage1Schedule::scaled(a.iterations);
    if let Some(b) = a.boundary {
        schedule.phase_boundary = b;
    }
    schedule.batch_size = a.batch_size;
    if let Some(lr) = a.learning_rate {
        schedule.optimizer.learning_rate = lr;
    }
    schedule.validate()?;
    info!(
        "encapsulating {} style images at {}px, L={} xi={}",
        style.len(),
        a.resolution,
        spec.latent.num_layers,
        spec.latent.fusion_index
    );
    let opts = EncapsulateOptions {
        arch,
        checkpoint_dir: a.checkpoint_dir.clone(),
        include_critic: !a.no_critic,
    };
    let mut log = MetricsLog::create(&a.out, a.common.log_every, schedule.total_iterations)?;
    let mut pkg = run_encapsulate(&style, &schedule, a.common.seed, &opts, |r| log.record(r))?;
    log.finish()?;
    pkg.info.config.extend(effective(
        "encapsulate",
        vec![
            ("style-dir", show(&a.style_dir)),
            ("resolution", a.resolution.to_string()),
            ("xi", spec.latent.fusion_index.to_string()),
            ("iterations", schedule.total_iterations.to_string()),
            ("boundary", schedule.phase_boundary.to_string()),
            ("batch-size", schedule.batch_size.to_string()),
            ("learning-rate", schedule.optimizer.learning_rate.to_string()),
            ("layer-dim", a.layer_dim.to_string()),
            ("arch", arch_name(a.arch).into()),
            ("no-critic", a.no_critic.to_string()),
            ("seed", a.common.seed.to_string()),
        ],
    ));
    save_package(&pkg, &a.out)?;
    print_fingerprint(&a.out)?;
    emit(&a.out)
}

pub fn stylize_train(a: &StylizeTrainArgs) -> Result<()> {
    let mode: StylizeMode = a.mode.parse().map_err(|e: modify::Error| UsageError(e.to_string()))?;
    if mode == StylizeMode::TestTime {
        return Err(UsageError(
            "test-time mode adapts to a single image; use `modify stylize --pkg <pkg> --input <image>`".into(),
        )
        .into());
    }
    let pkg = load_pkg(&a.pkg)?;
    let source = load_dir(&a.source_dir, pkg.model.spec.resolution)?;
    let mut cfg = StylizeConfig::new(mode);
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(lr) = a.learning_rate {
        cfg.optimizer.learning_rate = lr;
    }
    match (mode, a.batch_size) {
        (StylizeMode::Offline, Some(b)) => cfg.batch_size = b,
        (StylizeMode::Online, Some(b)) if b != 1 => warn!("online mode trains with batch 1; ignoring --batch-size {b}"),
        _ => {}
    }
    cfg.validate()?;
    info!("{} adaptation on {} source images for {} steps", a.mode, source.len(), cfg.steps);
    let seed = a.common.seed;
    let mut log = MetricsLog::create(&a.out, a.common.log_every, cfg.steps)?;
    let session = match mode {
        StylizeMode::Offline => stylize_offline(&pkg, &source, &cfg, seed, |r| log.record(r))?,
        _ => stylize_online(&pkg, source.images().iter().cycle().cloned(), &cfg, seed, |_, r| log.record(r))?,
    };
    log.finish()?;
    let mut out = session.to_package();
    out.info.config.extend(effective(
        "stylize-train",
        vec![
            ("pkg", show(&a.pkg)),
            ("source-dir", show(&a.source_dir)),
            ("mode", a.mode.clone()),
            ("steps", cfg.steps.to_string()),
            ("batch-size", cfg.batch_size.to_string()),
            ("learning-rate", cfg.optimizer.learning_rate.to_string()),
            ("seed", seed.to_string()),
        ],
    ));
    save_package(&out, &a.out)?;
    print_fingerprint(&a.out)?;
    emit(&a.out)
}

pub fn stylize(a: &StylizeArgs) -> Result<()> {
    let pkg = load_pkg(&a.pkg)?;
    let x = load_image(&a.input, pkg.model.spec.resolution)?;
    let mut cfg = StylizeConfig::new(StylizeMode::TestTime);
    cfg.steps = a.steps;
    if let Some(lr) = a.learning_rate {
        cfg.optimizer.learning_rate = lr;
    }
    info!("test-time adaptation for {} steps", cfg.steps);
    let (_, out) = stylize_test_time(&pkg, &x, &cfg, a.common.seed)?;
    create_parent(&a.out)?;
    save_png(&out, &a.out)?;
    emit(&a.out)
}

fn load_inputs(paths: &[PathBuf], resolution: usize) -> Result<ImageBatch> {
    let mut images = Vec::new();
    for p in paths {
        if p.is_dir() {
            images.extend(load_dir(p, resolution)?.images().iter().cloned());
        } else {
            images.push(load_image(p, resolution)?);
        }
    }
    Ok(ImageBatch::from_images(&images)?)
}

pub fn sample(a: &SampleArgs) -> Result<()> {
    if a.noise_seeds.is_empty() {
        return Err(UsageError("--noise-seeds needs at least one seed".into()).into());
    }
    let pkg = load_pkg(&a.pkg)?;
    let x = load_inputs(&a.input, pkg.model.spec.resolution)?;
    let outs = sample_multimodal(&pkg, &x, &a.noise_seeds)?;
    let rows: Vec<Vec<_>> = (0..x.len())
        .map(|i| std::iter::once(x.image(i)).chain(outs.iter().map(|o| o.image(i))).collect())
        .collect();
    create_parent(&a.out_grid)?;
    save_grid(&rows, &a.out_grid)?;
    emit(&a.out_grid)
}

/// Maps each fusion index from a model with `reference` layers onto one with
/// `layers`, clamped to `[1, layers - 1]`, keeping first occurrences.
pub fn rescale_xi(list: &[usize], reference: usize, layers: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for &xi in list {
        let scaled = ((2 * xi * layers + reference) / (2 * reference)).clamp(1, layers - 1);
        if !out.contains(&scaled) {
            out.push(scaled);
        }
    }
    out
}

fn xi_list(a: &AblateArgs, layers: usize) -> Result<Vec<usize>> {
    let list = if a.xi_list.is_empty() {
        vec![1, default_fusion_index(layers), layers - 1]
    } else {
        a.xi_list.clone()
    };
    let list = match a.xi_reference_layers {
        Some(0) => return Err(UsageError("--xi-reference-layers must be positive".into()).into()),
        Some(r) => {
            let scaled = rescale_xi(&list, r, layers);
            info!("xi {list:?} at L={r} maps to {scaled:?} at L={layers}");
            scaled
        }
        None => {
            let mut seen = Vec::new();
            for xi in list {
                if !seen.contains(&xi) {
                    seen.push(xi);
                }
            }
            seen
        }
    };
    Ok(list)
}

fn dataset(dir: &Option<PathBuf>, profile: StyleProfile, a: &AblateArgs, seed: u64) -> Result<InMemoryDataset> {
    match dir {
        Some(d) => load_dir(d, a.resolution),
        None => Ok(synth_generate(&SyntheticFaceDataset {
            seed,
            count: a.count,
            resolution: a.resolution,
            profile,
        })?),
    }
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let seed = a.common.seed;
    let style = dataset(&a.style_dir, StyleProfile::Painterly, a, seed)?;
    let source = dataset(&a.source_dir, StyleProfile::Photo, a, seed.wrapping_add(1))?;
    let mut schedule = Stage1Schedule::scaled(a.iterations);
    schedule.batch_size = a.batch_size;
    let settings = AblationSettings::new(arch_options(a.arch, a.layer_dim), schedule, seed);
    match a.which {
        Ablation::Swap => {
            let r = ablate_swap(&style, &source, &settings)?;
            info!(
                "consistency with swap {:.4e}, without {:.4e}",
                r.on.consistency, r.off.consistency
            );
            r.write(&a.out)?;
        }
        Ablation::Xi => {
            let layers = layers_for_resolution(a.resolution)?;
            let list = xi_list(a, layers)?;
            let r = ablate_xi(&style, &source, &list, &settings)?;
            for run in &r.runs {
                info!("xi={} loss_id={:.4e}", run.xi, run.loss_id);
            }
            r.write(&a.out)?;
        }
    }
    emit(&a.out)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let pkg = a.pkg.as_deref().map(load_pkg).transpose()?;
    let spec = match (&pkg, a.resolution) {
        (Some(p), Some(r)) if r != p.model.spec.resolution => {
            return Err(UsageError(format!(
                "--resolution {r} does not match the package resolution {}",
                p.model.spec.resolution
            ))
            .into())
        }
        (Some(p), _) => p.model.spec.clone(),
        (None, Some(r)) => ArchSpec::new(r, &ArchOptions::default())?,
        (None, None) => return Err(UsageError("--resolution is required without --pkg".into()).into()),
    };
    let embedder = Embedders::new(&spec)?.perceptual;
    let source = load_dir(&a.source_dir, spec.resolution)?.all();
    let reference = load_dir(&a.reference_dir, spec.resolution)?.all();
    let report = match &pkg {
        Some(p) => eval_fid(p, &source, &reference, &embedder)?,
        None => fid_between(&embedder, &source, &reference)?,
    };
    info!("fid={:.6e}", report.fid);
    match &a.out {
        Some(out) => {
            create_parent(out)?;
            fs::write(out, report.to_summary()).with_context(|| format!("writing {}", out.display()))?;
            emit(out)
        }
        None => {
            print!("{}", report.to_summary());
            Ok(())
        }
    }
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let profile: StyleProfile = a.profile.parse()?;
    let data = synth_generate(&SyntheticFaceDataset {
        seed: a.common.seed,
        count: a.count,
        resolution: a.resolution,
        profile,
    })?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (i, img) in data.images().iter().enumerate() {
        save_png(img, &a.out.join(format!("{i:04}.png")))?;
    }
    emit(&a.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xi_rescaling_rounds_clamps_and_dedupes() {
        assert_eq!(rescale_xi(&[3, 6, 9], 18, 6), [1, 2, 3]);
        assert_eq!(rescale_xi(&[1, 2, 17], 18, 6), [1, 5]);
        assert_eq!(rescale_xi(&[3, 6], 6, 6), [3, 5]);
    }

    #[test]
    fn metrics_log_sits_beside_the_output() {
        assert_eq!(metrics_path(Path::new("runs/pkg/")), Path::new("runs/pkg.metrics.log"));
        assert_eq!(metrics_path(Path::new("out.png")), Path::new("out.png.metrics.log"));
    }
}
