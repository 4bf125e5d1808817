mod common;

use rand::Rng;
use wildsplat::imaging::Image;
use wildsplat::metrics::{evaluate, gaussian_window, psnr, ssim, PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW};
use wildsplat::occlusion::TransientMask;

fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut r = common::rng(seed);
    Image::new(w, h, (0..w * h * 3).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
}

fn noisy(img: &Image, sigma: f64, seed: u64) -> Image {
    let mut r = common::rng(seed);
    let data = img.data().iter().map(|v| (v + sigma * r.gen_range(-1.0..1.0)).clamp(0.0, 1.0)).collect();
    Image::new(img.width(), img.height(), data).unwrap()
}

#[test]
fn identical_images_hit_the_cap() {
    let a = random_image(16, 16, 1);
    assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_CAP);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn psnr_known_values() {
    let black = Image::filled(8, 8, [0.0; 3]);
    let half = Image::filled(8, 8, [0.5; 3]);
    let white = Image::filled(8, 8, [1.0; 3]);
    assert!((psnr(&black, &half, None).unwrap() - 20.0 * 2f64.log10()).abs() < 1e-12);
    assert!((psnr(&black, &half, None).unwrap() - 6.0206).abs() < 1e-4);
    assert!(psnr(&black, &white, None).unwrap().abs() < 1e-12);
}

#[test]
fn psnr_falls_as_noise_grows() {
    let a = random_image(24, 24, 2);
    let mut prev = f64::INFINITY;
    for (k, sigma) in [0.01, 0.03, 0.1, 0.3].into_iter().enumerate() {
        let p = psnr(&a, &noisy(&a, sigma, 3 + k as u64), None).unwrap();
        assert!(p < prev);
        prev = p;
    }
}

#[test]
fn masked_psnr_uses_only_static_pixels() {
    let a = Image::filled(12, 12, [0.0; 3]);
    let mut b = Image::filled(12, 12, [0.5; 3]);
    // Large errors everywhere except the unmasked corner pixel.
    b.set_pixel(0, 0, [0.1, 0.1, 0.1]);
    let mask = TransientMask::new(12, 12, (0..144).map(|i| i != 0).collect()).unwrap();
    assert!((psnr(&a, &b, Some(&mask)).unwrap() - 20.0).abs() < 1e-12);
    let report = evaluate(&a, &b, Some(&mask)).unwrap();
    assert_eq!(report.n_pixels_evaluated, 144 - mask.popcount());
    assert!(report.mask_applied);
    let report = evaluate(&a, &b, None).unwrap();
    assert_eq!(report.n_pixels_evaluated, 144);
    assert!(!report.mask_applied);
}

#[test]
fn empty_evaluation_set_is_an_error() {
    let a = random_image(4, 4, 4);
    let all = TransientMask::new(4, 4, vec![true; 16]).unwrap();
    assert!(psnr(&a, &a, Some(&all)).is_err());
    assert!(psnr(&a, &random_image(5, 4, 5), None).is_err());
}

#[test]
fn ssim_is_symmetric_and_flip_invariant() {
    let a = random_image(20, 18, 6);
    let b = noisy(&a, 0.2, 7);
    let ab = ssim(&a, &b).unwrap();
    assert_eq!(ab, ssim(&b, &a).unwrap());
    assert!(ab < 1.0 && ab > 0.0);
    let flipped = ssim(&a.flip_horizontal(), &b.flip_horizontal()).unwrap();
    assert!((flipped - ab).abs() < 1e-12);
}

#[test]
fn ssim_rejects_small_images() {
    let a = random_image(10, 30, 8);
    assert!(ssim(&a, &a).is_err());
    let ok = random_image(11, 11, 9);
    assert!(ssim(&ok, &ok).is_ok());
}

/// Direct windowed SSIM: full 2D window at each valid position.
fn ssim_direct(a: &Image, b: &Image) -> f64 {
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    let mut count = 0.0;
    for c in 0..3 {
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let wt = g[dy] * g[dx];
                        let va = a.pixel(x0 + dx, y0 + dy)[c];
                        let vb = b.pixel(x0 + dx, y0 + dy)[c];
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
    }
    total / count
}

#[test]
fn ssim_matches_a_direct_windowed_oracle() {
    for seed in 0..4 {
        let a = random_image(17, 14, 10 + seed);
        let b = noisy(&a, 0.15, 20 + seed);
        let fast = ssim(&a, &b).unwrap();
        assert!((fast - ssim_direct(&a, &b)).abs() < 1e-10, "seed {seed}");
    }
}

#[test]
fn gaussian_window_is_normalized_and_symmetric() {
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    assert_eq!(g.len(), 11);
    assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    for i in 0..11 {
        assert_eq!(g[i], g[10 - i]);
    }
}
