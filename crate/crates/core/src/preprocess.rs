use std::borrow::Cow;

use image::imageops::{self, FilterType};
use image::RgbImage;
use ndarray::{Array3, Array4, ArrayViewMut3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How raw RGB crops become network input.
///
/// A crop is bilinearly resized to `source` size if it differs, reflect-padded
/// at the bottom and right to `target` size, scaled to `[0, 1]` and then
/// standardised per channel with `mean` / `std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessContract {
    pub source_height: u32,
    pub source_width: u32,
    pub target_height: u32,
    pub target_width: u32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessContract {
    fn default() -> Self {
        Self {
            source_height: 95,
            source_width: 175,
            target_height: 96,
            target_width: 176,
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

/// Index into `0..n` for position `i` of a reflect-padded axis (edge not repeated).
fn reflect(i: u32, n: u32) -> u32 {
    if i < n {
        i
    } else {
        2 * (n - 1) - i
    }
}

impl PreprocessContract {
    pub fn validate(&self) -> Result<()> {
        let ok_axis = |s: u32, t: u32| s > 1 && t >= s && t - s < s;
        if !ok_axis(self.source_height, self.target_height) || !ok_axis(self.source_width, self.target_width) {
            return Err(Error::Config(format!(
                "preprocess: cannot reflect-pad {}x{} to {}x{}",
                self.source_height, self.source_width, self.target_height, self.target_width
            )));
        }
        if self.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("preprocess: mean must be finite and std positive".into()));
        }
        Ok(())
    }

    fn normalized_source<'a>(&self, img: &'a RgbImage) -> Result<Cow<'a, RgbImage>> {
        if img.width() == 0 || img.height() == 0 {
            return Err(Error::Preprocess("image has zero width or height".into()));
        }
        if img.dimensions() == (self.source_width, self.source_height) {
            Ok(Cow::Borrowed(img))
        } else {
            Ok(Cow::Owned(imageops::resize(img, self.source_width, self.source_height, FilterType::Triangle)))
        }
    }

    /// Sets `mean` / `std` from the `[0, 1]`-scaled pixels of `images`.
    pub fn fit<'a>(&mut self, images: impl IntoIterator<Item = &'a RgbImage>) -> Result<()> {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let mut n = 0f64;
        for img in images {
            let src = self.normalized_source(img)?;
            for p in src.pixels() {
                for c in 0..3 {
                    let v = p[c] as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += (src.width() * src.height()) as f64;
        }
        if n == 0.0 {
            return Err(Error::EmptyCorpus);
        }
        for c in 0..3 {
            let mean = sum[c] / n;
            let var = (sq[c] / n - mean * mean).max(0.0);
            self.mean[c] = mean as f32;
            self.std[c] = (var.sqrt() as f32).max(1e-3);
        }
        Ok(())
    }

    fn write_into(&self, img: &RgbImage, mut out: ArrayViewMut3<'_, f32>) -> Result<()> {
        let src = self.normalized_source(img)?;
        let (sw, sh) = (self.source_width, self.source_height);
        for y in 0..self.target_height {
            let sy = reflect(y, sh);
            for x in 0..self.target_width {
                let p = src.get_pixel(reflect(x, sw), sy);
                for c in 0..3 {
                    out[[c, y as usize, x as usize]] = (p[c] as f32 / 255.0 - self.mean[c]) / self.std[c];
                }
            }
        }
        Ok(())
    }

    /// `(3, target_height, target_width)` network input for one image.
    pub fn apply(&self, img: &RgbImage) -> Result<Array3<f32>> {
        let mut out = Array3::zeros((3, self.target_height as usize, self.target_width as usize));
        self.write_into(img, out.view_mut())?;
        Ok(out)
    }

    /// Stacks images into an `(N, 3, H, W)` batch.
    pub fn batch(&self, images: &[&RgbImage]) -> Result<Array4<f32>> {
        let mut out = Array4::zeros((images.len(), 3, self.target_height as usize, self.target_width as usize));
        for (img, slot) in images.iter().zip(out.axis_iter_mut(Axis(0))) {
            self.write_into(img, slot)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn pads_by_reflection_without_repeating_the_edge() {
        let img = RgbImage::from_fn(175, 95, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 0]));
        let p = PreprocessContract::default();
        let t = p.apply(&img).unwrap();
        assert_eq!(t.dim(), (3, 96, 176));
        // column 175 mirrors column 173, row 95 mirrors row 93
        assert_eq!(t[[0, 10, 175]], 173.0 / 255.0);
        assert_eq!(t[[1, 95, 10]], 93.0 / 255.0);
    }

    #[test]
    fn fitted_statistics_standardise_the_data() {
        let imgs: Vec<RgbImage> =
            (0..4).map(|k| RgbImage::from_fn(175, 95, |x, y| Rgb([((x + y + k) % 200) as u8, 40, 200]))).collect();
        let mut p = PreprocessContract::default();
        p.fit(imgs.iter()).unwrap();
        let t = p.apply(&imgs[0]).unwrap();
        let red = t.index_axis(Axis(0), 0);
        assert!(red.mean().unwrap().abs() < 0.05);
        assert!(p.std[1] > 0.0, "constant channels keep a positive std");
    }

    #[test]
    fn other_sizes_are_resized_first() {
        let img = RgbImage::from_pixel(300, 120, Rgb([255, 0, 0]));
        let t = PreprocessContract::default().apply(&img).unwrap();
        assert_eq!(t.dim(), (3, 96, 176));
        assert!((t[[0, 50, 50]] - 1.0).abs() < 1e-6);
        assert!(PreprocessContract::default().apply(&RgbImage::new(0, 5)).is_err());
    }
}
