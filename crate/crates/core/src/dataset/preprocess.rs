//! Image decoding, resizing and per-channel standardization.

use std::path::Path;

use image::imageops::FilterType;
use image::{ColorType, DynamicImage, RgbImage};
use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::labels::ViewKey;
use super::manifest::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Side length of the square network input.
pub const IMAGE_SIZE: usize = 128;
pub const CHANNELS: usize = 3;

/// A standardized `3 × 128 × 128` image.
pub type ImageTensor<T> = Array3<T>;

/// Per-channel mean and standard deviation of `[0, 1]`-scaled pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for NormStats {
    /// Identity statistics: only the `[0, 1]` scaling is applied.
    fn default() -> Self {
        NormStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl NormStats {
    /// Population statistics over every pixel of the given resized images.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a RgbImage>) -> Self {
        let mut sum = [0f64; 3];
        let mut sum_sq = [0f64; 3];
        let mut count = 0usize;
        for img in images {
            for px in img.pixels() {
                for c in 0..3 {
                    let v = px[c] as f64 / 255.0;
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
            count += (img.width() * img.height()) as usize;
        }
        if count == 0 {
            return NormStats::default();
        }
        let n = count as f64;
        let mean = sum.map(|s| s / n);
        let mut std = [1.0; 3];
        for c in 0..3 {
            let var = (sum_sq[c] / n - mean[c] * mean[c]).max(0.0);
            // a constant channel keeps unit scale rather than dividing by zero
            std[c] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        NormStats { mean, std }
    }
}

pub fn decode_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn channel_count(color: ColorType) -> usize {
    color.channel_count() as usize
}

/// Bilinear resize of a 3-channel image to `128 × 128`.
pub fn resize_rgb(raw: &DynamicImage) -> Result<RgbImage> {
    let channels = channel_count(raw.color());
    if channels != CHANNELS {
        return Err(Error::ChannelCount {
            channels,
            path: None,
        });
    }
    let rgb = match raw {
        DynamicImage::ImageRgb8(img) => img.clone(),
        other => other.to_rgb8(),
    };
    if rgb.width() as usize == IMAGE_SIZE && rgb.height() as usize == IMAGE_SIZE {
        return Ok(rgb);
    }
    Ok(image::imageops::resize(
        &rgb,
        IMAGE_SIZE as u32,
        IMAGE_SIZE as u32,
        FilterType::Triangle,
    ))
}

/// Scales a resized image to `[0, 1]` and standardizes each channel.
pub fn standardize<T: Scalar>(rgb: &RgbImage, stats: &NormStats) -> ImageTensor<T> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = Array3::<T>::zeros((CHANNELS, h, w));
    let scale: [f64; 3] = std::array::from_fn(|c| 1.0 / (255.0 * stats.std[c]));
    let shift: [f64; 3] = std::array::from_fn(|c| stats.mean[c] / stats.std[c]);
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..CHANNELS {
            out[[c, y as usize, x as usize]] = T::from_f64_lossy(px[c] as f64 * scale[c] - shift[c]);
        }
    }
    out
}

/// Full pipeline for one image: resize, scale, standardize.
pub fn preprocess_image<T: Scalar>(raw: &DynamicImage, stats: &NormStats) -> Result<ImageTensor<T>> {
    Ok(standardize(&resize_rgb(raw)?, stats))
}

/// Decodes and resizes one image file.
pub fn load_resized(path: &Path) -> Result<RgbImage> {
    resize_rgb(&decode_image(path)?).map_err(|e| match e {
        Error::ChannelCount { channels, .. } => Error::ChannelCount {
            channels,
            path: Some(path.to_path_buf()),
        },
        other => other,
    })
}

/// Resized images of selected views for every sample of a dataset, kept as
/// 8-bit pixels so that standardization happens per batch.
#[derive(Clone, Debug)]
pub struct ImageCache {
    views: Vec<ViewKey>,
    /// `images[sample][view_pos]`
    images: Vec<Vec<RgbImage>>,
}

impl ImageCache {
    pub fn load(dataset: &Dataset, views: &[ViewKey]) -> Result<Self> {
        let images = dataset
            .samples()
            .par_iter()
            .map(|s| {
                views
                    .iter()
                    .map(|v| load_resized(&dataset.image_path(s, *v)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageCache {
            views: views.to_vec(),
            images,
        })
    }

    pub fn views(&self) -> &[ViewKey] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, sample: usize, view: ViewKey) -> Option<&RgbImage> {
        let pos = self.views.iter().position(|v| *v == view)?;
        self.images.get(sample).map(|imgs| &imgs[pos])
    }

    /// Statistics over every cached image.
    pub fn stats(&self) -> NormStats {
        NormStats::from_images(self.images.iter().flatten())
    }

    /// Statistics over the cached images of the given views only.
    pub fn stats_for(&self, views: &[ViewKey]) -> NormStats {
        let pos: Vec<usize> = (0..self.views.len()).filter(|&i| views.contains(&self.views[i])).collect();
        NormStats::from_images(self.images.iter().flat_map(|imgs| pos.iter().map(move |&i| &imgs[i])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Rgb, RgbaImage};

    #[test]
    fn native_frame_becomes_model_input() {
        let mut img = RgbImage::new(640, 480);
        for (x, y, px) in img.enumerate_pixels_mut() {
            *px = Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]);
        }
        let t: ImageTensor<f32> =
            preprocess_image(&DynamicImage::ImageRgb8(img), &NormStats::default()).unwrap();
        assert_eq!(t.shape(), &[3, 128, 128]);
        assert!(t.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn constant_gray_standardizes_to_zero() {
        let img = RgbImage::from_pixel(640, 480, Rgb([128, 128, 128]));
        let v = 128.0 / 255.0;
        let stats = NormStats {
            mean: [v; 3],
            std: [1.0; 3],
        };
        let t: ImageTensor<f64> = preprocess_image(&DynamicImage::ImageRgb8(img), &stats).unwrap();
        assert!(t.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn wrong_channel_counts_are_rejected() {
        let gray = DynamicImage::ImageLuma8(GrayImage::new(64, 48));
        let rgba = DynamicImage::ImageRgba8(RgbaImage::new(64, 48));
        for raw in [gray, rgba] {
            assert!(matches!(
                preprocess_image::<f32>(&raw, &NormStats::default()),
                Err(Error::ChannelCount { .. })
            ));
        }
    }

    #[test]
    fn undecodable_file_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not a png").unwrap();
        assert!(matches!(load_resized(&path), Err(Error::Decode { .. })));
    }

    #[test]
    fn stats_standardize_their_own_images() {
        let imgs: Vec<RgbImage> = (0..4u8)
            .map(|k| {
                RgbImage::from_fn(128, 128, |x, y| {
                    Rgb([(x as u8).wrapping_mul(k + 1), y as u8, 200 - 10 * k])
                })
            })
            .collect();
        let stats = NormStats::from_images(&imgs);
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut n = 0.0;
        for img in &imgs {
            let t: ImageTensor<f64> = standardize(img, &stats);
            for c in 0..3 {
                let ch = t.index_axis(ndarray::Axis(0), c);
                sum[c] += ch.sum();
                sq[c] += ch.mapv(|v| v * v).sum();
            }
            n += 128.0 * 128.0;
        }
        for c in 0..3 {
            let mean = sum[c] / n;
            let std = (sq[c] / n - mean * mean).sqrt();
            assert!(mean.abs() < 1e-9);
            assert!((std - 1.0).abs() < 1e-9);
        }
    }
}
