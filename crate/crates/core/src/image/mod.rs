//! Images, colour conversion, bicubic degradation and training patches.
//!
//! Pixels are stored planar (`channel, row, column`) as `f64` in `[0, 1]`,
//! which is also the layout of one sample of a [`Tensor`].

mod io;
mod patch;
mod resize;
mod synthetic;

pub use io::{load_image, save_image, ImageFormat};
pub use patch::{augment, augment_image, augment_inverse, sample_patch, PatchPair, TrainingPair, AUGMENTATIONS};
pub use resize::{bicubic_resize, cubic, downscale, modcrop, upscale};
pub use synthetic::synthetic_scene;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from planar data, clamping every value into `[0, 1]`.
    /// NaN becomes 0.
    pub fn new(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract("Image::new", format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::contract(
                "Image::new",
                format!("{channels} channels, expected 1 or 3"),
            ));
        }
        if data.len() != height * width * channels {
            return Err(Error::contract(
                "Image::new",
                format!("{} values for {channels}x{height}x{width}", data.len()),
            ));
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Sub-window `[top, top+h) x [left, left+w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::contract(
                "Image::crop",
                format!(
                    "window {h}x{w} at ({top},{left}) outside {}x{}",
                    self.height, self.width
                ),
            ));
        }
        Self::from_fn(h, w, self.channels, |c, y, x| self.get(c, top + y, left + x))
    }

    /// Drops `border` pixels from every edge.
    pub fn shave(&self, border: usize) -> Result<Self> {
        if 2 * border >= self.height || 2 * border >= self.width {
            return Err(Error::contract(
                "Image::shave",
                format!("border {border} leaves nothing of {}x{}", self.height, self.width),
            ));
        }
        self.crop(border, border, self.height - 2 * border, self.width - 2 * border)
    }

    /// Quantises to 8 bits and back, as saving and reloading would.
    pub fn quantize(&self) -> Self {
        let data = self.data.iter().map(|&v| to_u8(v) as f64 / 255.0).collect();
        Image { data, ..self.clone() }
    }

    /// One-sample tensor of shape `(1, c, h, w)`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self.data.iter().map(|&v| v as f32).collect();
        Tensor::from_vec(Shape::new(1, self.channels, self.height, self.width), data).expect("length matches shape")
    }

    /// Sample `n` of a batch, clamped into `[0, 1]`.
    pub fn from_tensor(t: &Tensor<f32>, n: usize) -> Result<Self> {
        let s = t.shape();
        if n >= s.n {
            return Err(Error::contract("Image::from_tensor", format!("sample {n} of {}", s.n)));
        }
        let len = s.c * s.h * s.w;
        Self::new(
            s.h,
            s.w,
            s.c,
            t.data()[n * len..(n + 1) * len].iter().map(|&v| v as f64).collect(),
        )
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Luma with the studio-swing BT.601 weights used throughout SR benchmarks,
/// on `[0, 1]` RGB: `(65.481 R + 128.553 G + 24.966 B + 16) / 255`.
pub fn rgb_to_y(img: &Image) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::contract(
            "rgb_to_y",
            format!("{} channels, expected 3", img.channels),
        ));
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = (0..r.len())
        .map(|i| {
            let y = 65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i] + 16.0;
            y / 255.0
        })
        .collect();
    Image::new(img.height, img.width, 1, data)
}

/// Luma for colour images, the image itself for grayscale.
pub fn luma(img: &Image) -> Result<Image> {
    match img.channels {
        3 => rgb_to_y(img),
        _ => Ok(img.clone()),
    }
}

/// Replicates a grayscale image into three channels; colour images pass through.
pub fn to_rgb(img: &Image) -> Image {
    if img.channels == 3 {
        return img.clone();
    }
    let mut data = Vec::with_capacity(img.data.len() * 3);
    for _ in 0..3 {
        data.extend_from_slice(&img.data);
    }
    Image {
        channels: 3,
        data,
        ..img.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn studio_swing_endpoints() {
        let white = rgb_to_y(&Image::filled(1, 1, 3, 1.0).unwrap()).unwrap();
        let black = rgb_to_y(&Image::filled(1, 1, 3, 0.0).unwrap()).unwrap();
        assert!((white.get(0, 0, 0) - 235.0 / 255.0).abs() < 1e-12);
        assert!((black.get(0, 0, 0) - 16.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn y_needs_colour() {
        let gray = Image::filled(2, 2, 1, 0.5).unwrap();
        assert!(matches!(rgb_to_y(&gray), Err(Error::Contract { .. })));
    }

    #[test]
    fn values_are_clamped() {
        let img = Image::new(1, 3, 1, vec![-1.0, 2.0, f64::NAN]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn tensor_round_trip() {
        let img = Image::from_fn(3, 4, 3, |c, y, x| (c * 12 + y * 4 + x) as f64 / 32.0).unwrap();
        assert_eq!(Image::from_tensor(&img.to_tensor(), 0).unwrap(), img);
    }

    #[test]
    fn crop_and_shave() {
        let img = Image::from_fn(5, 6, 1, |_, y, x| (y * 6 + x) as f64 / 30.0).unwrap();
        let s = img.shave(1).unwrap();
        assert_eq!((s.height(), s.width()), (3, 4));
        assert_eq!(s.get(0, 0, 0), img.get(0, 1, 1));
        assert!(img.shave(3).is_err());
    }
}
