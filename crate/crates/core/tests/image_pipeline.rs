use drsan::image::{
    augment, augment_image, augment_inverse, bicubic_resize, downscale, rgb_to_y, sample_patch, Image, TrainingPair,
    AUGMENTATIONS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, c, |_, _, _| rng.random::<f64>()).unwrap()
}

#[test]
fn luma_matches_formula() {
    let img = random(9, 7, 3, 1);
    let y = rgb_to_y(&img).unwrap();
    for r in 0..9 {
        for c in 0..7 {
            let (rr, gg, bb) = (img.get(0, r, c), img.get(1, r, c), img.get(2, r, c));
            let expect = (65.481 * rr + 128.553 * gg + 24.966 * bb + 16.0) / 255.0;
            assert!((y.get(0, r, c) - expect).abs() < 1e-12);
            assert!(y.get(0, r, c) >= 16.0 / 255.0 - 1e-12 && y.get(0, r, c) <= 235.0 / 255.0 + 1e-12);
        }
    }
}

/// Keys kernel, a = -0.5, written out from its piecewise definition.
fn keys(t: f64) -> f64 {
    let t = t.abs();
    let (t2, t3) = (t * t, t * t * t);
    if t <= 1.0 {
        1.5 * t3 - 2.5 * t2 + 1.0
    } else if t < 2.0 {
        -0.5 * t3 + 2.5 * t2 - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Direct 2-D summation over every source pixel inside the widened support,
/// with edge replication and one joint normalisation.
fn direct_downscale(img: &Image, s: usize) -> Image {
    let (oh, ow) = (img.height() / s, img.width() / s);
    let r = s as f64;
    let clampi = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    Image::from_fn(oh, ow, img.channels(), |c, y, x| {
        let cy = (y as f64 + 0.5) * r - 0.5;
        let cx = (x as f64 + 0.5) * r - 0.5;
        let (mut acc, mut total) = (0.0, 0.0);
        for i in -3 * s as i64..(img.height() + 3 * s) as i64 {
            for j in -3 * s as i64..(img.width() + 3 * s) as i64 {
                let w = keys((cy - i as f64) / r) * keys((cx - j as f64) / r);
                acc += w * img.get(c, clampi(i, img.height()), clampi(j, img.width()));
                total += w;
            }
        }
        acc / total
    })
    .unwrap()
}

#[test]
fn downscale_matches_direct_summation() {
    for (s, seed) in [(2, 2), (3, 3), (4, 4)] {
        // Smooth content keeps the result inside [0, 1], so clamping is inert.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase: f64 = rng.random();
        let img = Image::from_fn(12 * s, 10 * s, 3, |c, y, x| {
            0.5 + 0.3 * ((0.21 * y as f64 + 0.13 * x as f64 + phase + c as f64).sin())
        })
        .unwrap();
        let fast = downscale(&img, s).unwrap();
        let slow = direct_downscale(&img, s);
        let diff = fast
            .data()
            .iter()
            .zip(slow.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "x{s}: {diff}");
    }
    // Random noise as well, clamping the oracle the way images are clamped.
    let img = random(24, 18, 1, 5);
    let fast = downscale(&img, 2).unwrap();
    let slow = direct_downscale(&img, 2);
    for (a, b) in fast.data().iter().zip(slow.data()) {
        assert!((a - b.clamp(0.0, 1.0)).abs() < 1e-6);
    }
}

#[test]
fn patch_positions_are_uniform() {
    let (p, s) = (4, 2);
    let pair = TrainingPair::new(0, &random(2 * p * s, 2 * p * s, 1, 6), s).unwrap();
    assert_eq!(pair.lr.height(), 2 * p);
    let side = 2 * p - p + 1;
    let mut counts = vec![0u32; side * side];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let draws = 10_000;
    for _ in 0..draws {
        let pp = pair.sample(p, &mut rng).unwrap();
        counts[pp.top * side + pp.left] += 1;
    }
    let k = counts.len() as f64;
    let expect = draws as f64 / k;
    let sigma = (draws as f64 * (1.0 / k) * (1.0 - 1.0 / k)).sqrt();
    let mut chi2 = 0.0;
    for &n in &counts {
        assert!((n as f64 - expect).abs() < 5.0 * sigma, "count {n} vs {expect}");
        chi2 += (n as f64 - expect).powi(2) / expect;
    }
    // 24 degrees of freedom; 99.9th percentile is about 51.2.
    assert!(chi2 < 51.2, "chi2 {chi2}");
}

#[test]
fn sample_patch_from_image() {
    let hr = random(40, 30, 3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pp = sample_patch(&hr, 8, 3, &mut rng).unwrap();
    assert_eq!((pp.lr.height(), pp.hr.height()), (8, 24));
    assert_eq!(pp.hr, hr.crop(3 * pp.top, 3 * pp.left, 24, 24).unwrap());
}

#[test]
fn augmentation_commutes_with_downscaling() {
    let hr = random(24, 30, 3, 10);
    for d in 0..AUGMENTATIONS {
        let a = downscale(&augment_image(&hr, d).unwrap(), 2).unwrap();
        let b = augment_image(&downscale(&hr, 2).unwrap(), d).unwrap();
        assert_eq!((a.height(), a.width()), (b.height(), b.width()));
        let inner_a = a.shave(4).unwrap();
        let inner_b = b.shave(4).unwrap();
        for (x, y) in inner_a.data().iter().zip(inner_b.data()) {
            assert!((x - y).abs() < 1e-6, "d={d}");
        }
    }
}

#[test]
fn augment_is_a_group_action_on_pairs() {
    let pair = TrainingPair::new(1, &random(20, 16, 3, 11), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pp = pair.sample(5, &mut rng).unwrap();
    for d in 0..AUGMENTATIONS {
        let there = augment(&pp, d).unwrap();
        assert_eq!(augment(&there, augment_inverse(d)).unwrap(), pp);
    }
}

#[test]
fn upscale_by_resize_keeps_constants() {
    let img = Image::filled(5, 7, 1, 0.625).unwrap();
    let out = bicubic_resize(&img, 15, 21, true).unwrap();
    assert!(out.data().iter().all(|&v| (v - 0.625).abs() < 1e-12));
}
