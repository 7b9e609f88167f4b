use super::Image;
use crate::error::{Error, Result};

const A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps for one output position: clamped indices and normalised weights.
struct Taps {
    index: Vec<usize>,
    weight: Vec<f64>,
}

fn axis_taps(in_len: usize, out_len: usize, antialias: bool) -> Vec<Taps> {
    let scale = out_len as f64 / in_len as f64;
    // When shrinking, stretch the kernel so it also low-passes.
    let stretch = if antialias && scale < 1.0 { 1.0 / scale } else { 1.0 };
    let support = 2.0 * stretch;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as i64;
            let hi = (center + support).ceil() as i64;
            let mut index = Vec::new();
            let mut weight = Vec::new();
            for j in lo..=hi {
                let w = cubic((center - j as f64) / stretch);
                if w != 0.0 {
                    index.push(j.clamp(0, in_len as i64 - 1) as usize);
                    weight.push(w);
                }
            }
            let total: f64 = weight.iter().sum();
            for w in &mut weight {
                *w /= total;
            }
            Taps { index, weight }
        })
        .collect()
}

/// Separable bicubic resampling with border clamping. With `antialias`,
/// downscaling widens the kernel by the scale factor.
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize, antialias: bool) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::contract("bicubic_resize", format!("output {out_h}x{out_w}")));
    }
    let (h, w) = (img.height(), img.width());
    let rows = axis_taps(h, out_h, antialias);
    let cols = axis_taps(w, out_w, antialias);
    let mut out = Vec::with_capacity(img.channels() * out_h * out_w);
    let mut tmp = vec![0f64; h * out_w];
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for (x, t) in cols.iter().enumerate() {
                tmp[y * out_w + x] = t.index.iter().zip(&t.weight).map(|(&j, &k)| row[j] * k).sum();
            }
        }
        for t in &rows {
            for x in 0..out_w {
                let v: f64 = t
                    .index
                    .iter()
                    .zip(&t.weight)
                    .map(|(&j, &k)| tmp[j * out_w + x] * k)
                    .sum();
                out.push(v);
            }
        }
    }
    Image::new(out_h, out_w, img.channels(), out)
}

/// Crops the bottom and right edges so both dimensions divide by `s`.
pub fn modcrop(img: &Image, s: usize) -> Result<Image> {
    let (h, w) = (img.height() / s * s, img.width() / s * s);
    if h == 0 || w == 0 {
        return Err(Error::contract(
            "modcrop",
            format!("{}x{} is smaller than scale {s}", img.height(), img.width()),
        ));
    }
    img.crop(0, 0, h, w)
}

/// The standard degradation: modcrop, then antialiased bicubic by `1/s`.
pub fn downscale(hr: &Image, s: usize) -> Result<Image> {
    let hr = modcrop(hr, s)?;
    bicubic_resize(&hr, hr.height() / s, hr.width() / s, true)
}

pub fn upscale(lr: &Image, s: usize) -> Result<Image> {
    bicubic_resize(lr, lr.height() * s, lr.width() * s, true)
}
