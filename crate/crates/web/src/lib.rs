//! Browser bindings: model accounting, bicubic degradation with metrics,
//! and attention maps of a (random or uploaded) model.

use drsan::analysis::{attention_spatial_map, extract_trace};
use drsan::eval::{psnr, ssim, Bicubic, Upscaler};
use drsan::image::{downscale, luma, modcrop, Image};
use drsan::model::{count_multi_adds, count_params, hd_frame, read_checkpoint};
use drsan::{Model, NetworkConfig, Result};
use rand::SeedableRng;
use wasm_bindgen::prelude::*;

/// Converts canvas RGBA bytes to an RGB image, dropping alpha.
pub fn image_from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<Image> {
    if rgba.len() != width * height * 4 {
        return Err(drsan::Error::Decode(format!(
            "expected {} RGBA bytes for {width}x{height}, got {}",
            width * height * 4,
            rgba.len()
        )));
    }
    Image::from_fn(height, width, 3, |c, y, x| rgba[(y * width + x) * 4 + c] as f64 / 255.0)
}

/// Opaque RGBA bytes; grey images are replicated into all three colours.
pub fn image_to_rgba(img: &Image) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(h * w * 4);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = img.get(c.min(img.channels() - 1), y, x);
                out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
            out.push(255);
        }
    }
    out
}

/// `{"params": .., "multi_adds": ..}` for a network config JSON, with
/// multiply-adds for one 720p output frame.
pub fn count_json(config_json: &str) -> Result<String> {
    let cfg = NetworkConfig::from_json(config_json)?;
    let (h, w) = hd_frame(cfg.scale);
    Ok(serde_json::json!({
        "params": count_params(&cfg),
        "multi_adds": count_multi_adds(&cfg, h, w)?,
        "frame": [w, h],
        "coefficients_per_group": cfg.coefficient_count(),
    })
    .to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Degraded {
    pub lr: Image,
    pub upscaled: Image,
    /// Y-channel scores of `upscaled` against the (mod-cropped) original.
    pub psnr: f64,
    pub ssim: Option<f64>,
}

/// Downscales by `scale`, upscales back with bicubic interpolation and scores
/// the round trip.
pub fn degrade(img: &Image, scale: usize) -> Result<Degraded> {
    let hr = modcrop(img, scale)?;
    let lr = downscale(&hr, scale)?;
    let upscaled = Bicubic.upscale(&lr, scale)?;
    let (yu, yh) = (luma(&upscaled)?, luma(&hr)?);
    Ok(Degraded {
        psnr: psnr(&yu, &yh, scale)?,
        // Small images have no complete SSIM window.
        ssim: ssim(&yu, &yh, scale).ok(),
        lr,
        upscaled,
    })
}

/// A checkpoint from its bytes, or a seeded random tiny model when empty.
pub fn demo_model(checkpoint: &[u8], seed: u64) -> Result<Model<f32>> {
    if checkpoint.is_empty() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Model::new(NetworkConfig::tiny(2), &mut rng)
    } else {
        Ok(read_checkpoint(checkpoint)?.model)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub map: Image,
    pub blocks: usize,
    pub coefficients: Vec<Vec<f32>>,
    pub sr: Image,
}

pub fn attention(model: &Model<f32>, img: &Image, block: usize) -> Result<Attention> {
    let trace = extract_trace(model, img, "canvas")?;
    let map = attention_spatial_map(&trace, block)?.normalized;
    Ok(Attention {
        map,
        blocks: trace.attention.len(),
        sr: Image::from_tensor(&trace.output, 0)?,
        coefficients: trace.coefficients,
    })
}

fn js(e: drsan::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = countModel)]
pub fn count_model(config_json: &str) -> std::result::Result<String, JsError> {
    count_json(config_json).map_err(js)
}

/// Pixels plus the size of the image they describe.
#[wasm_bindgen]
pub struct Picture {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl Picture {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

impl From<&Image> for Picture {
    fn from(img: &Image) -> Self {
        Picture {
            width: img.width(),
            height: img.height(),
            rgba: image_to_rgba(img),
        }
    }
}

#[wasm_bindgen]
pub struct DegradeResult {
    inner: Degraded,
}

#[wasm_bindgen]
impl DegradeResult {
    pub fn lr(&self) -> Picture {
        (&self.inner.lr).into()
    }

    pub fn upscaled(&self) -> Picture {
        (&self.inner.upscaled).into()
    }

    #[wasm_bindgen(getter)]
    pub fn psnr(&self) -> f64 {
        self.inner.psnr
    }

    /// NaN when the image is too small for an SSIM window.
    #[wasm_bindgen(getter)]
    pub fn ssim(&self) -> f64 {
        self.inner.ssim.unwrap_or(f64::NAN)
    }
}

#[wasm_bindgen(js_name = bicubicRoundTrip)]
pub fn bicubic_round_trip(
    rgba: &[u8],
    width: usize,
    height: usize,
    scale: usize,
) -> std::result::Result<DegradeResult, JsError> {
    let img = image_from_rgba(rgba, width, height).map_err(js)?;
    Ok(DegradeResult {
        inner: degrade(&img, scale).map_err(js)?,
    })
}

#[wasm_bindgen]
pub struct AttentionResult {
    inner: Attention,
}

#[wasm_bindgen]
impl AttentionResult {
    pub fn map(&self) -> Picture {
        (&self.inner.map).into()
    }

    pub fn sr(&self) -> Picture {
        (&self.inner.sr).into()
    }

    #[wasm_bindgen(getter)]
    pub fn blocks(&self) -> usize {
        self.inner.blocks
    }

    /// Per-group coefficient vectors as JSON.
    #[wasm_bindgen(js_name = coefficientsJson)]
    pub fn coefficients_json(&self) -> String {
        serde_json::to_string(&self.inner.coefficients).expect("finite floats serialize")
    }
}

/// Attention map of residual block `block`. An empty `checkpoint` selects a
/// random tiny model seeded by `seed`.
#[wasm_bindgen(js_name = attentionMap)]
pub fn attention_map(
    rgba: &[u8],
    width: usize,
    height: usize,
    block: usize,
    checkpoint: &[u8],
    seed: u64,
) -> std::result::Result<AttentionResult, JsError> {
    let img = image_from_rgba(rgba, width, height).map_err(js)?;
    let model = demo_model(checkpoint, seed).map_err(js)?;
    Ok(AttentionResult {
        inner: attention(&model, &img, block).map_err(js)?,
    })
}
