//! Image batches (`N×3×H×W`, values in `[-1, 1]`) and PNG conversion.

use std::path::Path;

use autograd::{Tensor, Var};
use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

/// Slack allowed on the `[-1, 1]` range check.
const RANGE_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch(Tensor);

impl ImageBatch {
    pub fn new(t: Tensor) -> Result<Self> {
        match t.shape() {
            [n, 3, h, w] if *n > 0 && h == w && *h > 0 => {}
            s => return Err(Error::Shape(format!("image batch must be N×3×R×R, got {s:?}"))),
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("image batch".into()));
        }
        if t.max_abs() > 1.0 + RANGE_EPS {
            return Err(Error::Shape(format!(
                "image values must lie in [-1, 1], max |v| = {}",
                t.max_abs()
            )));
        }
        Ok(Self(t))
    }

    /// Stacks single `3×R×R` images.
    pub fn from_images(images: &[Tensor]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyDataset("no images to batch".into()));
        }
        Self::new(Tensor::stack(images))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn to_var(&self) -> Var {
        Var::constant(self.0.clone())
    }

    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resolution(&self) -> usize {
        self.0.shape()[2]
    }

    /// The `i`-th image as a `3×R×R` tensor.
    pub fn image(&self, i: usize) -> Tensor {
        self.0.index_outer(i)
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let imgs: Vec<Tensor> = indices.iter().map(|&i| self.image(i)).collect();
        Self::from_images(&imgs)
    }

    pub fn to_rgb8(&self, i: usize) -> RgbImage {
        tensor_to_rgb8(&self.image(i))
    }
}

pub fn tensor_to_rgb8(img: &Tensor) -> RgbImage {
    let r = img.shape()[1];
    let plane = r * r;
    let d = img.data();
    RgbImage::from_fn(r as u32, r as u32, |x, y| {
        let p = y as usize * r + x as usize;
        let q = |c: usize| (((d[c * plane + p].clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8;
        Rgb([q(0), q(1), q(2)])
    })
}

pub fn rgb8_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0; 3 * w * h];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * w * h + y as usize * w + x as usize] = px[c] as f64 / 127.5 - 1.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn save_png(img: &Tensor, path: &Path) -> Result<()> {
    write_png(&tensor_to_rgb8(img), path)
}

/// Writes [`grid`] of `rows` as a PNG.
pub fn save_grid(rows: &[Vec<Tensor>], path: &Path) -> Result<()> {
    write_png(&grid(rows)?, path)
}

fn write_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Lays out `rows[r][c]` (`3×R×R` each) as one image with a 2-pixel gutter.
pub fn grid(rows: &[Vec<Tensor>]) -> Result<RgbImage> {
    const GAP: usize = 2;
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::Shape("empty grid".into()))?;
    let res = first.shape()[1];
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width = ncols * res + (ncols.saturating_sub(1)) * GAP;
    let height = rows.len() * res + (rows.len().saturating_sub(1)) * GAP;
    let mut canvas = RgbImage::from_pixel(width as u32, height as u32, Rgb([255, 255, 255]));
    for (ri, row) in rows.iter().enumerate() {
        for (ci, cell) in row.iter().enumerate() {
            if cell.shape() != first.shape() {
                return Err(Error::Shape(format!(
                    "grid cell ({ri},{ci}) has shape {:?}, expected {:?}",
                    cell.shape(),
                    first.shape()
                )));
            }
            let tile = tensor_to_rgb8(cell);
            let (ox, oy) = (ci * (res + GAP), ri * (res + GAP));
            for (x, y, px) in tile.enumerate_pixels() {
                canvas.put_pixel(ox as u32 + x, oy as u32 + y, *px);
            }
        }
    }
    Ok(canvas)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_shape_and_range() {
        assert!(ImageBatch::new(Tensor::zeros(&[1, 3, 4, 4])).is_ok());
        assert!(ImageBatch::new(Tensor::zeros(&[1, 1, 4, 4])).is_err());
        assert!(ImageBatch::new(Tensor::zeros(&[1, 3, 4, 2])).is_err());
        assert!(ImageBatch::new(Tensor::full(&[1, 3, 4, 4], 1.5)).is_err());
        assert!(ImageBatch::new(Tensor::full(&[1, 3, 4, 4], f64::NAN)).is_err());
    }

    #[test]
    fn rgb8_round_trip_is_exact_on_quantized_values() {
        let t = Tensor::from_fn(&[3, 4, 4], |i| (i * 17 % 256) as f64 / 127.5 - 1.0);
        let back = rgb8_to_tensor(&tensor_to_rgb8(&t));
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_dimensions() {
        let cell = Tensor::zeros(&[3, 8, 8]);
        let g = grid(&[vec![cell.clone(); 4], vec![cell; 4]]).unwrap();
        assert_eq!(g.dimensions(), (4 * 8 + 3 * 2, 2 * 8 + 2));
    }
}
