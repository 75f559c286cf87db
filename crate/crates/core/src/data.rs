//! Image datasets, deterministic batching and a procedural face generator.

use std::path::{Path, PathBuf};

use autograd::Tensor;
use image::imageops::{self, FilterType};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{rgb8_to_tensor, ImageBatch};
use crate::rng;

/// Decoded images, all `3×R×R` in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InMemoryDataset {
    images: Vec<Tensor>,
    resolution: usize,
}

impl InMemoryDataset {
    pub fn new(images: Vec<Tensor>) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::EmptyDataset("no images".into()))?;
        let resolution = first.shape().get(1).copied().unwrap_or(0);
        // Validates shape and range of every image.
        ImageBatch::from_images(&images)?;
        Ok(Self { images, resolution })
    }

    pub fn from_batch(batch: &ImageBatch) -> Self {
        Self {
            images: (0..batch.len()).map(|i| batch.image(i)).collect(),
            resolution: batch.resolution(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn batch(&self, indices: &[usize]) -> Result<ImageBatch> {
        let imgs: Vec<Tensor> = indices.iter().map(|&i| self.images[i].clone()).collect();
        ImageBatch::from_images(&imgs)
    }

    pub fn all(&self) -> ImageBatch {
        ImageBatch::from_images(&self.images).expect("validated at construction")
    }
}

/// A flat folder of PNG/JPEG files, decoded eagerly in sorted path order.
#[derive(Clone, Debug)]
pub struct ImageFolderDataset {
    pub root: PathBuf,
    pub files: Vec<PathBuf>,
    pub data: InMemoryDataset,
}

fn is_image_path(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Center-crops to a square, then resizes bilinearly.
pub fn load_image(path: &Path, resolution: usize) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let side = w.min(h);
    let cropped = imageops::crop_imm(&rgb, (w - side) / 2, (h - side) / 2, side, side).to_image();
    let r = resolution as u32;
    let resized = if side == r {
        cropped
    } else {
        imageops::resize(&cropped, r, r, FilterType::Triangle)
    };
    Ok(rgb8_to_tensor(&resized))
}

pub fn load_folder(root: &Path, resolution: usize) -> Result<ImageFolderDataset> {
    if resolution == 0 {
        return Err(Error::Config("resolution must be positive".into()));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    paths.sort();
    let mut files = Vec::new();
    let mut images = Vec::new();
    for p in paths {
        match load_image(&p, resolution) {
            Ok(t) => {
                files.push(p);
                images.push(t);
            }
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyDataset(format!("no decodable images in {}", root.display())));
    }
    Ok(ImageFolderDataset {
        root: root.to_path_buf(),
        files,
        data: InMemoryDataset::new(images)?,
    })
}

/// Shuffled index order for one epoch.
pub fn epoch_order(len: usize, seed: u64, label: &str, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng::stream(seed, label, epoch));
    idx
}

/// Indices of the `step`-th batch of an endless drop-last stream.
pub fn batch_indices(len: usize, batch_size: usize, seed: u64, label: &str, step: u64) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if batch_size > len {
        return Err(Error::BatchTooLarge { batch_size, len });
    }
    let per_epoch = (len / batch_size) as u64;
    let (epoch, pos) = (step / per_epoch, (step % per_epoch) as usize);
    let order = epoch_order(len, seed, label, epoch);
    Ok(order[pos * batch_size..(pos + 1) * batch_size].to_vec())
}

/// Seeded per-epoch shuffle; the final partial batch of each epoch is dropped.
pub fn batches(
    dataset: &InMemoryDataset,
    batch_size: usize,
    seed: u64,
    epochs: u64,
) -> Result<impl Iterator<Item = ImageBatch> + '_> {
    let len = dataset.len();
    batch_indices(len, batch_size, seed, "batches", 0)?;
    let per_epoch = (len / batch_size) as u64;
    Ok((0..epochs * per_epoch).map(move |s| {
        let idx = batch_indices(len, batch_size, seed, "batches", s).expect("checked above");
        dataset.batch(&idx).expect("validated images")
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleProfile {
    Photo,
    Painterly,
    Sketch,
}

impl std::str::FromStr for StyleProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "photo" => Ok(Self::Photo),
            "painterly" => Ok(Self::Painterly),
            "sketch" => Ok(Self::Sketch),
            _ => Err(Error::Config(format!("unknown style profile `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticFaceDataset {
    pub seed: u64,
    pub count: usize,
    pub resolution: usize,
    pub profile: StyleProfile,
}

struct Palette {
    background: [f64; 3],
    skin: [f64; 3],
    hair: [f64; 3],
    features: [f64; 3],
    /// Amplitude of the diagonal stroke texture.
    strokes: f64,
    /// Amount of radial shading on the face.
    shading: f64,
    grayscale: bool,
}

fn palette(profile: StyleProfile, rng: &mut impl Rng) -> Palette {
    let mut j = |base: [f64; 3], amt: f64| base.map(|c: f64| (c + rng.random_range(-amt..amt)).clamp(0.0, 1.0));
    match profile {
        StyleProfile::Photo => Palette {
            background: j([0.55, 0.6, 0.65], 0.15),
            skin: j([0.85, 0.68, 0.58], 0.08),
            hair: j([0.25, 0.18, 0.12], 0.1),
            features: j([0.2, 0.12, 0.1], 0.05),
            strokes: 0.0,
            shading: 0.25,
            grayscale: false,
        },
        StyleProfile::Painterly => Palette {
            background: j([0.35, 0.22, 0.12], 0.08),
            skin: j([0.95, 0.75, 0.4], 0.06),
            hair: j([0.45, 0.15, 0.08], 0.08),
            features: j([0.5, 0.1, 0.05], 0.05),
            strokes: 0.12,
            shading: 0.4,
            grayscale: false,
        },
        StyleProfile::Sketch => Palette {
            background: j([0.95, 0.95, 0.92], 0.03),
            skin: j([0.88, 0.88, 0.86], 0.03),
            hair: j([0.3, 0.3, 0.3], 0.1),
            features: j([0.1, 0.1, 0.1], 0.05),
            strokes: 0.06,
            shading: 0.1,
            grayscale: true,
        },
    }
}

/// One face: background, hair ellipse, face ellipse, eyes, nose and mouth,
/// with per-sample geometry jitter.
fn synth_face(profile: StyleProfile, res: usize, rng: &mut impl Rng) -> Tensor {
    let p = palette(profile, rng);
    let cx = 0.5 + rng.random_range(-0.05..0.05);
    let cy = 0.52 + rng.random_range(-0.05..0.05);
    let rx = rng.random_range(0.24..0.32);
    let ry = rng.random_range(0.3..0.38);
    let eye_dx = rng.random_range(0.09..0.13);
    let eye_y = cy - ry * rng.random_range(0.15..0.3);
    let eye_r = rng.random_range(0.03..0.05);
    let mouth_y = cy + ry * rng.random_range(0.45..0.6);
    let mouth_w = rng.random_range(0.07..0.13);
    let stroke_freq = rng.random_range(20.0..30.0);
    let mut out = Tensor::zeros(&[3, res, res]);
    let plane = res * res;
    let d = out.data_mut();
    for yi in 0..res {
        for xi in 0..res {
            let x = (xi as f64 + 0.5) / res as f64;
            let y = (yi as f64 + 0.5) / res as f64;
            let face = ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2);
            let hair = ((x - cx) / (rx * 1.2)).powi(2) + ((y - cy + 0.08) / (ry * 1.1)).powi(2);
            let mut c = p.background;
            if hair < 1.0 && y < cy + 0.05 {
                c = p.hair;
            }
            if face < 1.0 {
                let shade = 1.0 - p.shading * face;
                c = p.skin.map(|v| v * shade);
                let eye = |ex: f64| ((x - ex).powi(2) + (y - eye_y).powi(2)).sqrt() < eye_r;
                let nose = (x - cx).abs() < 0.012 && y > eye_y && y < mouth_y - 0.06;
                let mouth = (x - cx).abs() < mouth_w && (y - mouth_y).abs() < 0.018;
                if eye(cx - eye_dx) || eye(cx + eye_dx) || mouth || nose {
                    c = p.features;
                }
            }
            if p.strokes > 0.0 {
                let s = p.strokes * ((x + y) * stroke_freq).sin();
                c = c.map(|v| v + s);
            }
            if p.grayscale {
                let g = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
                c = [g; 3];
            }
            for (ch, v) in c.iter().enumerate() {
                d[ch * plane + yi * res + xi] = (v.clamp(0.0, 1.0) * 2.0 - 1.0).clamp(-1.0, 1.0);
            }
        }
    }
    out
}

pub fn synth_generate(spec: &SyntheticFaceDataset) -> Result<InMemoryDataset> {
    if spec.count == 0 {
        return Err(Error::EmptyDataset("synthetic count must be at least 1".into()));
    }
    if spec.resolution == 0 {
        return Err(Error::Config("resolution must be positive".into()));
    }
    let label = format!("synth/{:?}", spec.profile);
    let images = (0..spec.count)
        .map(|i| synth_face(spec.profile, spec.resolution, &mut rng::stream(spec.seed, &label, i as u64)))
        .collect();
    InMemoryDataset::new(images)
}

/// Per-channel means over every pixel of every image.
pub fn channel_means(data: &InMemoryDataset) -> [f64; 3] {
    let mut sums = [0.0; 3];
    let mut count = 0usize;
    for img in data.images() {
        let plane = img.numel() / 3;
        for (c, s) in sums.iter_mut().enumerate() {
            *s += img.data()[c * plane..(c + 1) * plane].iter().sum::<f64>();
        }
        count += plane;
    }
    sums.map(|s| s / count as f64)
}
