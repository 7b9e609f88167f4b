//! Inspection of the learned attention: per-group residual coefficients,
//! per-block attention maps, and coefficient transplants between images.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::{rgb_to_y, to_rgb, Image};
use crate::model::{ForwardProbe, Model};
use crate::tensor::Tensor;

/// Everything the attention modules produced for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub source: String,
    pub blocks: usize,
    /// One coefficient vector of length `N(N+1)/2` per group; empty when the
    /// model has no DRM.
    pub coefficients: Vec<Vec<f32>>,
    /// `(1, c, h, w)` attention of every residual block, group-major; empty
    /// when residual self-attention is disabled.
    pub attention: Vec<Tensor<f32>>,
    /// Raw (unclamped) network output of the traced pass.
    pub output: Tensor<f32>,
}

/// One instrumented forward pass.
pub fn extract_trace(model: &Model<f32>, image: &Image, source: &str) -> Result<AttentionTrace> {
    let mut probe = ForwardProbe::recording();
    let output = model.infer_with(&to_rgb(image).to_tensor(), &mut probe)?;
    Ok(AttentionTrace {
        source: source.to_string(),
        blocks: model.config().blocks,
        coefficients: probe.coefficients.iter().map(|t| t.data().to_vec()).collect(),
        attention: probe.attention,
        output,
    })
}

impl AttentionTrace {
    fn block(&self, block: usize) -> Result<&Tensor<f32>> {
        self.attention.get(block).ok_or_else(|| {
            Error::contract(
                "attention",
                format!("block {block} out of range ({} attention maps)", self.attention.len()),
            )
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub block: usize,
    /// `bins + 1` equally spaced edges over `[0, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Counts attention values of one block into `bins` equal bins over `[0, 1]`.
/// Bins are half-open except the last, which includes 1.
pub fn attention_histogram(trace: &AttentionTrace, block: usize, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::contract(
            "attention_histogram",
            format!("{bins} bins, need at least 2"),
        ));
    }
    let alpha = trace.block(block)?;
    let mut counts = vec![0u64; bins];
    for &v in alpha.data() {
        let i = ((v as f64 * bins as f64).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram {
        block,
        edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
        counts,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialMap {
    pub height: usize,
    pub width: usize,
    /// Channel mean of the attention, row-major.
    pub raw: Vec<f64>,
    /// `raw` min-max rescaled to `[0, 1]` (all zero for a flat map).
    pub normalized: Image,
}

/// Channel-averaged attention of one block.
pub fn attention_spatial_map(trace: &AttentionTrace, block: usize) -> Result<SpatialMap> {
    let alpha = trace.block(block)?;
    let s = alpha.shape();
    let mut raw = vec![0.0; s.h * s.w];
    for c in 0..s.c {
        for (r, &v) in raw.iter_mut().zip(alpha.plane(0, c)) {
            *r += v as f64;
        }
    }
    for r in &mut raw {
        *r /= s.c as f64;
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let scaled = raw
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect();
    Ok(SpatialMap {
        height: s.h,
        width: s.w,
        normalized: Image::new(s.h, s.w, 1, scaled)?,
        raw,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transplant {
    /// Target reconstructed with the donor's coefficients.
    pub sr: Image,
    /// Target reconstructed normally.
    pub original: Image,
    /// `|Y(sr) - Y(original)|` per pixel.
    pub diff: Image,
}

/// Runs `target` with every group's coefficients taken from a full forward
/// pass over `donor`.
pub fn transplant_dra(model: &Model<f32>, target: &Image, donor: &Image) -> Result<Transplant> {
    if !model.config().has_drm() {
        return Err(Error::contract(
            "transplant_dra",
            "model has no dynamic residual module",
        ));
    }
    let mut donor_probe = ForwardProbe::recording();
    model.infer_with(&to_rgb(donor).to_tensor(), &mut donor_probe)?;
    let input = to_rgb(target).to_tensor();
    let original = Image::from_tensor(&model.infer(&input)?, 0)?;
    let mut swap = ForwardProbe::with_coefficients(donor_probe.coefficients);
    let sr = Image::from_tensor(&model.infer_with(&input, &mut swap)?, 0)?;
    let (ys, yo) = (rgb_to_y(&sr)?, rgb_to_y(&original)?);
    let diff = ys.data().iter().zip(yo.data()).map(|(a, b)| (a - b).abs()).collect();
    Ok(Transplant {
        diff: Image::new(sr.height(), sr.width(), 1, diff)?,
        sr,
        original,
    })
}

fn finite(op: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::contract(op, "refusing to export a non-finite value"))
    }
}

/// `image,drag,index,value` rows for every coefficient of every trace.
pub fn coefficients_csv(traces: &[AttentionTrace]) -> Result<String> {
    let mut out = String::from("image,drag,index,value\n");
    for t in traces {
        for (k, coeffs) in t.coefficients.iter().enumerate() {
            for (i, &v) in coeffs.iter().enumerate() {
                let v = finite("coefficients_csv", v as f64)?;
                let _ = writeln!(out, "{},{k},{i},{v}", t.source);
            }
        }
    }
    Ok(out)
}

/// `block,bin_lo,bin_hi,count` rows.
pub fn histogram_csv(hists: &[Histogram]) -> String {
    let mut out = String::from("block,bin_lo,bin_hi,count\n");
    for h in hists {
        for (i, c) in h.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{c}", h.block, h.edges[i], h.edges[i + 1]);
        }
    }
    out
}
