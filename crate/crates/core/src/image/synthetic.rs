use rand::Rng;

use super::Image;

/// A random RGB test scene: a smooth colour gradient overlaid with
/// hard-edged rectangles, disks and stripe panels. Sharp edges are what
/// bicubic interpolation blurs, so such scenes make SR gains visible.
pub fn synthetic_scene(height: usize, width: usize, rng: &mut impl Rng) -> Image {
    let (h, w) = (height as f64, width as f64);
    let mut data = vec![0f64; 3 * height * width];
    let base: [f64; 3] = rng.random();
    let tilt: [f64; 3] = rng.random();
    for c in 0..3 {
        for y in 0..height {
            for x in 0..width {
                let g = (y as f64 / h + tilt[c] * x as f64 / w) * 0.3;
                data[(c * height + y) * width + x] = 0.2 + 0.4 * base[c] + g;
            }
        }
    }
    let shapes = rng.random_range(6..=10);
    for _ in 0..shapes {
        let colour: [f64; 3] = rng.random();
        let cy = rng.random_range(0.0..h);
        let cx = rng.random_range(0.0..w);
        let ry = rng.random_range(0.06..0.3) * h;
        let rx = rng.random_range(0.06..0.3) * w;
        let kind = rng.random_range(0..3);
        let period = rng.random_range(2.0..6.0);
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let inside = match kind {
                    0 => dy.abs() < ry && dx.abs() < rx,
                    1 => (dy / ry).powi(2) + (dx / rx).powi(2) < 1.0,
                    _ => dy.abs() < ry && dx.abs() < rx && ((dx + dy) / period).rem_euclid(2.0) < 1.0,
                };
                if inside {
                    for (c, &v) in colour.iter().enumerate() {
                        data[(c * height + y) * width + x] = v;
                    }
                }
            }
        }
    }
    Image::new(height, width, 3, data).expect("sized by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn seeded_scenes_repeat() {
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (x, y) = (synthetic_scene(20, 30, &mut a), synthetic_scene(20, 30, &mut b));
        assert_eq!(x, y);
        assert_eq!((x.height(), x.width(), x.channels()), (20, 30, 3));
        assert_ne!(x, synthetic_scene(20, 30, &mut a));
    }
}
