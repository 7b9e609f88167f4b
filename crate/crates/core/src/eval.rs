//! PSNR and SSIM on the Y channel, and a benchmark runner.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{self, downscale, load_image, luma, modcrop, to_rgb, Image};
use crate::model::Model;

/// Reported instead of infinity when the compared images are identical.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn compare_planes(op: &'static str, a: &Image, b: &Image, crop: usize) -> Result<(Image, Image)> {
    if a.channels() != 1 || b.channels() != 1 {
        return Err(Error::contract(op, "inputs must be single-channel (Y)"));
    }
    let shave = |img: &Image| if crop == 0 { Ok(img.clone()) } else { img.shave(crop) };
    let (a, b) = (shave(a)?, shave(b)?);
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::contract(
            op,
            format!("{}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    Ok((a, b))
}

/// `10 log10(1 / MSE)` on `[0, 1]` data after removing `crop` border pixels,
/// capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image, crop: usize) -> Result<f64> {
    let (a, b) = compare_planes("psnr", a, b, crop)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Valid-region separable filtering of an `h x w` plane.
fn filter_valid(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows (σ = 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1).
pub fn ssim(a: &Image, b: &Image, crop: usize) -> Result<f64> {
    let (a, b) = compare_planes("ssim", a, b, crop)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract(
            "ssim",
            format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<f64>>();
    let mu_x = filter_valid(x, h, w, &taps);
    let mu_y = filter_valid(y, h, w, &taps);
    let xx = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &taps);
    let yy = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &taps);
    let xy = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &taps);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = xx[i] - mx * mx;
        let vy = yy[i] - my * my;
        let cov = xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

/// Anything that maps an LR image to an SR image `scale` times larger.
pub trait Upscaler {
    fn name(&self) -> String;
    fn upscale(&self, lr: &Image, scale: usize) -> Result<Image>;
}

impl Upscaler for Model<f32> {
    fn name(&self) -> String {
        let c = self.config();
        format!("drsan-c{}-K{}-N{}-x{}", c.channels, c.groups, c.blocks, c.scale)
    }

    fn upscale(&self, lr: &Image, scale: usize) -> Result<Image> {
        if scale != self.config().scale {
            return Err(Error::contract(
                "upscale",
                format!("model is x{}, asked for x{scale}", self.config().scale),
            ));
        }
        let out = self.infer(&to_rgb(lr).to_tensor())?;
        Image::from_tensor(&out, 0)
    }
}

/// The bicubic baseline.
pub struct Bicubic;

impl Upscaler for Bicubic {
    fn name(&self) -> String {
        "bicubic".into()
    }

    fn upscale(&self, lr: &Image, scale: usize) -> Result<Image> {
        image::upscale(lr, scale)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub scale: usize,
    pub crop: usize,
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6},{:.6}", r.name, r.psnr, r.ssim);
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "model={} scale={} crop={} images={} psnr={:.4} ssim={:.6}",
            self.model,
            self.scale,
            self.crop,
            self.rows.len(),
            self.mean_psnr,
            self.mean_ssim
        )
    }
}

/// Scores one HR image: degrade, upscale, compare on luma.
pub fn evaluate_image(model: &dyn Upscaler, hr: &Image, scale: usize, crop: usize) -> Result<(f64, f64)> {
    let hr = modcrop(hr, scale)?;
    let lr = downscale(&hr, scale)?;
    let sr = model.upscale(&lr, scale)?;
    if (sr.height(), sr.width()) != (hr.height(), hr.width()) {
        return Err(Error::contract(
            "evaluate",
            format!(
                "SR is {}x{}, HR is {}x{}",
                sr.height(),
                sr.width(),
                hr.height(),
                hr.width()
            ),
        ));
    }
    let (ys, yh) = (luma(&to_rgb(&sr))?, luma(&to_rgb(&hr))?);
    Ok((psnr(&ys, &yh, crop)?, ssim(&ys, &yh, crop)?))
}

/// Scores named images in the given order. `crop` defaults to `scale`.
pub fn evaluate_images(
    model: &dyn Upscaler,
    images: &[(String, Image)],
    scale: usize,
    crop: Option<usize>,
) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::EmptyDataset("no images to evaluate".into()));
    }
    let crop = crop.unwrap_or(scale);
    let rows = images
        .iter()
        .map(|(name, hr)| {
            let (p, s) = evaluate_image(model, hr, scale, crop)?;
            Ok(EvalRow {
                name: name.clone(),
                psnr: p,
                ssim: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    Ok(EvalReport {
        model: model.name(),
        scale,
        crop,
        mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        rows,
    })
}

/// HR images of a directory in file-name order. Cached LR files named
/// `<stem>_x<s>.<ext>` are skipped.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, Image)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || image::ImageFormat::from_path(&path).is_err() {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let cached = stem
            .rsplit_once("_x")
            .is_some_and(|(_, s)| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()));
        if !cached {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no PNG/PPM/PGM images in {}",
            dir.display()
        )));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok((name, load_image(&p)?))
        })
        .collect()
}

/// Loads every HR image in `dir` and evaluates it.
pub fn evaluate(model: &dyn Upscaler, dir: &Path, scale: usize, crop: Option<usize>) -> Result<EvalReport> {
    evaluate_images(model, &load_dataset(dir)?, scale, crop)
}
