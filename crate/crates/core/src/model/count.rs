//! Closed-form parameter and multiply-accumulate accounting.
//!
//! These formulas are written independently of [`super::network::param_specs`]
//! so the two can be checked against each other.

use crate::error::{Error, Result};
use crate::model::config::NetworkConfig;

/// Weights plus biases of a `k x k` conv.
fn conv(in_c: usize, out_c: usize, k: usize) -> u64 {
    (out_c * in_c * k * k + out_c) as u64
}

/// Number of trainable scalars (conv weights, biases and PReLU slopes).
pub fn count_params(cfg: &NetworkConfig) -> u64 {
    let c = cfg.channels;
    let n = cfg.blocks;
    let block = 2 * c as u64 + 2 * conv(c, c, 3);
    let drm = if cfg.has_drm() {
        conv(c, cfg.drm_hidden, 1) + cfg.drm_hidden as u64 + conv(cfg.drm_hidden, n * (n + 1) / 2, 1)
    } else {
        0
    };
    let fuse = if cfg.concat_enabled { conv(c * (n + 1), c, 1) } else { 0 };
    let group = n as u64 * block + drm + fuse;
    let up = match cfg.scale {
        4 => 2 * conv(c, 4 * c, 3),
        s => conv(c, c * s * s, 3),
    };
    conv(3, c, 3) + cfg.groups as u64 * group + conv(c, c, 3) + up + conv(c, 3, 3)
}

/// The 1280x720 reference frame, cropped to a multiple of `scale`
/// (1278x720 at x3). Returns `(height, width)`.
pub fn hd_frame(scale: usize) -> (usize, usize) {
    let s = scale.max(1);
    (720 - 720 % s, 1280 - 1280 % s)
}

/// Multiply-accumulates of every conv layer to produce one `hr_h x hr_w`
/// output. Pooling, activations and elementwise ops are not counted.
pub fn count_multi_adds(cfg: &NetworkConfig, hr_h: usize, hr_w: usize) -> Result<u64> {
    let s = cfg.scale;
    if !hr_h.is_multiple_of(s) || !hr_w.is_multiple_of(s) {
        return Err(Error::Config(format!("{hr_w}x{hr_h} is not divisible by scale {s}")));
    }
    let lr = ((hr_h / s) * (hr_w / s)) as u64;
    let macs = |in_c: usize, out_c: usize, k: usize, pixels: u64| (in_c * out_c * k * k) as u64 * pixels;
    let c = cfg.channels;
    let n = cfg.blocks;

    let mut group = n as u64 * 2 * macs(c, c, 3, lr);
    if cfg.has_drm() {
        group += macs(c, cfg.drm_hidden, 1, lr) + macs(cfg.drm_hidden, n * (n + 1) / 2, 1, lr);
    }
    if cfg.concat_enabled {
        group += macs(c * (n + 1), c, 1, lr);
    }
    let up = match s {
        4 => macs(c, 4 * c, 3, lr) + macs(c, 4 * c, 3, 4 * lr),
        _ => macs(c, c * s * s, 3, lr),
    };
    Ok(macs(3, c, 3, lr) + cfg.groups as u64 * group + macs(c, c, 3, lr) + up + macs(c, 3, 3, (hr_h * hr_w) as u64))
}
