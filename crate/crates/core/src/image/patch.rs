use rand::Rng;

use super::{downscale, modcrop, Image};
use crate::error::{Error, Result};

/// Number of dihedral transforms: four rotations, each optionally flipped.
pub const AUGMENTATIONS: usize = 8;

/// Aligned low/high resolution windows. `top`/`left` are on the LR grid; the
/// HR window starts at `scale * top`, `scale * left`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub lr: Image,
    pub hr: Image,
    pub source: usize,
    pub top: usize,
    pub left: usize,
}

/// A training image with its LR counterpart computed once.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub id: usize,
    pub scale: usize,
    pub hr: Image,
    pub lr: Image,
}

impl TrainingPair {
    pub fn new(id: usize, hr: &Image, scale: usize) -> Result<Self> {
        let hr = modcrop(hr, scale)?;
        let lr = downscale(&hr, scale)?;
        Ok(TrainingPair { id, scale, hr, lr })
    }

    /// Draws a uniformly placed `p x p` LR window. A too-small image yields
    /// [`Error::ImageTooSmall`]; callers skip it and draw another image.
    pub fn sample(&self, p: usize, rng: &mut impl Rng) -> Result<PatchPair> {
        let (h, w) = (self.lr.height(), self.lr.width());
        if p == 0 || h < p || w < p {
            return Err(Error::ImageTooSmall {
                height: h,
                width: w,
                needed: p,
            });
        }
        let top = rng.random_range(0..=h - p);
        let left = rng.random_range(0..=w - p);
        self.patch_at(p, top, left)
    }

    pub fn patch_at(&self, p: usize, top: usize, left: usize) -> Result<PatchPair> {
        let s = self.scale;
        Ok(PatchPair {
            lr: self.lr.crop(top, left, p, p)?,
            hr: self.hr.crop(s * top, s * left, s * p, s * p)?,
            source: self.id,
            top,
            left,
        })
    }
}

/// One random aligned patch pair from a single HR image.
pub fn sample_patch(hr: &Image, p: usize, s: usize, rng: &mut impl Rng) -> Result<PatchPair> {
    TrainingPair::new(0, hr, s)?.sample(p, rng)
}

fn rot90(img: &Image) -> Image {
    // Counter-clockwise: out(y, x) = in(x, w - 1 - y).
    let w = img.width();
    Image::from_fn(w, img.height(), img.channels(), |c, y, x| img.get(c, x, w - 1 - y)).expect("same size")
}

fn flip(img: &Image) -> Image {
    let w = img.width();
    Image::from_fn(img.height(), w, img.channels(), |c, y, x| img.get(c, y, w - 1 - x)).expect("same size")
}

/// Dihedral transform `d`: horizontal flip when `d >= 4`, then `d % 4`
/// counter-clockwise quarter turns.
pub fn augment_image(img: &Image, d: usize) -> Result<Image> {
    if d >= AUGMENTATIONS {
        return Err(Error::contract("augment", format!("index {d} outside 0..8")));
    }
    let mut out = if d >= 4 { flip(img) } else { img.clone() };
    for _ in 0..d % 4 {
        out = rot90(&out);
    }
    Ok(out)
}

/// Applies the same transform to both halves of a pair.
pub fn augment(pair: &PatchPair, d: usize) -> Result<PatchPair> {
    Ok(PatchPair {
        lr: augment_image(&pair.lr, d)?,
        hr: augment_image(&pair.hr, d)?,
        ..pair.clone()
    })
}

/// The index undoing `d`. Flipped transforms are involutions.
pub fn augment_inverse(d: usize) -> usize {
    if d >= 4 {
        d
    } else {
        (4 - d) % 4
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::bicubic_resize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize, c: usize) -> Image {
        Image::from_fn(h, w, c, |c, y, x| ((c * 31 + y * 7 + x * 3) % 17) as f64 / 16.0).unwrap()
    }

    #[test]
    fn exact_size_gives_the_unique_pair() {
        let hr = ramp(12, 12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = sample_patch(&hr, 6, 2, &mut rng).unwrap();
        let b = sample_patch(&hr, 6, 2, &mut rng).unwrap();
        assert_eq!((a.top, a.left), (0, 0));
        assert_eq!(a, b);
        assert_eq!(a.hr, hr);
    }

    #[test]
    fn too_small_is_a_skip_signal() {
        let hr = ramp(10, 20, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_patch(&hr, 6, 2, &mut rng),
            Err(Error::ImageTooSmall {
                height: 5,
                width: 10,
                needed: 6
            })
        ));
    }

    #[test]
    fn windows_stay_aligned() {
        let pair = TrainingPair::new(3, &ramp(41, 37, 3), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = pair.sample(4, &mut rng).unwrap();
            assert_eq!(p.source, 3);
            assert_eq!(p.lr, pair.lr.crop(p.top, p.left, 4, 4).unwrap());
            assert_eq!(p.hr, pair.hr.crop(3 * p.top, 3 * p.left, 12, 12).unwrap());
        }
    }

    #[test]
    fn group_laws() {
        let img = ramp(3, 5, 3);
        assert_eq!(augment_image(&img, 0).unwrap(), img);
        let mut r = img.clone();
        for _ in 0..4 {
            r = augment_image(&r, 1).unwrap();
        }
        assert_eq!(r, img);
        for d in 0..AUGMENTATIONS {
            let t = augment_image(&img, d).unwrap();
            assert_eq!(augment_image(&t, augment_inverse(d)).unwrap(), img, "d={d}");
        }
        assert!(augment_image(&img, 8).is_err());
    }

    #[test]
    fn all_transforms_are_distinct() {
        let img = ramp(4, 4, 1);
        let all: Vec<Image> = (0..AUGMENTATIONS).map(|d| augment_image(&img, d).unwrap()).collect();
        for i in 0..AUGMENTATIONS {
            for j in i + 1..AUGMENTATIONS {
                assert_ne!(all[i], all[j], "{i} vs {j}");
            }
        }
    }

    #[test]
    fn rotation_direction() {
        let img = Image::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        // The right-hand pixel ends up on top after a counter-clockwise turn.
        assert_eq!(augment_image(&img, 1).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(bicubic_resize(&img, 1, 2, false).unwrap(), img);
    }
}
