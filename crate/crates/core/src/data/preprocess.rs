//! Resizing and intensity normalization of raw grayscale stimuli.

use crate::error::{Error, Result};
use crate::models::INPUT_SIZE;
use crate::tensor::Tensor;

/// One single-channel image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Data {
                array: "image".into(),
                reason: format!("{height}x{width} image with {} pixels", pixels.len()),
            });
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

/// Source coordinate and blend weight for one output index under
/// half-pixel-centre alignment.
fn sample_point(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resize with half-pixel-centre alignment and edge clamping.
pub fn resize_bilinear(img: &GrayImage, height: usize, width: usize) -> GrayImage {
    let cols: Vec<_> = (0..width)
        .map(|x| sample_point(x, img.width, width))
        .collect();
    let mut pixels = Vec::with_capacity(height * width);
    for y in 0..height {
        let (y0, y1, wy) = sample_point(y, img.height, height);
        for &(x0, x1, wx) in &cols {
            let top = img.at(y0, x0) * (1.0 - wx) + img.at(y0, x1) * wx;
            let bottom = img.at(y1, x0) * (1.0 - wx) + img.at(y1, x1) * wx;
            pixels.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    GrayImage {
        height,
        width,
        pixels,
    }
}

/// Resizes every image to 32×32 and maps the dataset's global intensity range
/// linearly onto `[-1, 1]`.
pub fn preprocess(images: &[GrayImage]) -> Result<Tensor<f32>> {
    let resized: Vec<GrayImage> = images
        .iter()
        .map(|im| resize_bilinear(im, INPUT_SIZE, INPUT_SIZE))
        .collect();
    let (lo, hi) = resized
        .iter()
        .flat_map(|im| im.pixels.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return Err(Error::Data {
            array: "stimuli".into(),
            reason: "constant dataset: intensity range is empty".into(),
        });
    }
    let data = resized
        .iter()
        .flat_map(|im| im.pixels.iter())
        .map(|&v| (2.0 * (v - lo) / (hi - lo) - 1.0) as f32)
        .collect();
    Tensor::new(vec![images.len(), INPUT_SIZE, INPUT_SIZE, 1], data)
}
