//! PSNR, SSIM, and the geometric-average error aggregate.

use crate::imgio::ImageF;
use crate::{Error, Result};

/// PSNR outcome; identical images are flagged rather than reported as
/// infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsnrResult {
    Db(f64),
    Identical,
}

impl PsnrResult {
    /// The corresponding MSE transform `10^(-psnr/10)`; 0 for identical.
    pub fn mse_term(self) -> f64 {
        match self {
            PsnrResult::Db(db) => 10f64.powf(-db / 10.0),
            PsnrResult::Identical => 0.0,
        }
    }
}

impl std::fmt::Display for PsnrResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PsnrResult::Db(db) => write!(f, "{db:.4}"),
            PsnrResult::Identical => f.write_str("identical"),
        }
    }
}

fn check_dims(img: &ImageF, gt: &ImageF) -> Result<()> {
    if img.width != gt.width || img.height != gt.height {
        return Err(Error::Domain(format!(
            "image dimensions disagree: {}x{} vs {}x{}",
            img.width, img.height, gt.width, gt.height
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio over all pixels and channels, in dB.
pub fn psnr(img: &ImageF, gt: &ImageF) -> Result<PsnrResult> {
    check_dims(img, gt)?;
    let mut mse = 0.0;
    for (a, b) in img.pixels.iter().zip(&gt.pixels) {
        for ch in 0..3 {
            let d = a[ch] - b[ch];
            mse += d * d;
        }
    }
    mse /= (img.pixels.len() * 3) as f64;
    if mse == 0.0 {
        Ok(PsnrResult::Identical)
    } else {
        Ok(PsnrResult::Db(-10.0 * mse.log10()))
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn to_gray(img: &ImageF) -> Vec<f64> {
    img.pixels
        .iter()
        .map(|p| (p[0] + p[1] + p[2]) / 3.0)
        .collect()
}

/// Horizontal then vertical convolution with the 1-D Gaussian kernel,
/// valid region only.
fn conv_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * src[y * w + x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let oh = h - SSIM_WINDOW + 1;
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * horiz[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity over an 11x11 Gaussian window (sigma 1.5) on
/// the channel-mean grayscale images, unit dynamic range.
pub fn ssim(img: &ImageF, gt: &ImageF) -> Result<f64> {
    check_dims(img, gt)?;
    let (w, h) = (img.width as usize, img.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Domain(format!(
            "image {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let x = to_gray(img);
    let y = to_gray(gt);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let k = gaussian_kernel();
    let (mu_x, ow, oh) = conv_valid(&x, w, h, &k);
    let (mu_y, _, _) = conv_valid(&y, w, h, &k);
    let (e_xx, _, _) = conv_valid(&xx, w, h, &k);
    let (e_yy, _, _) = conv_valid(&yy, w, h, &k);
    let (e_xy, _, _) = conv_valid(&xy, w, h, &k);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cxy = e_xy[i] - mx * my;
        let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        total += s;
    }
    Ok(total / (ow * oh) as f64)
}

/// Geometric mean of the transformed errors `10^(-psnr/10)` and
/// `sqrt(1 - ssim)`. The perceptual term is deliberately omitted, making
/// this a 2-term aggregate.
pub fn geometric_average(psnr_db: f64, ssim: f64) -> Result<f64> {
    if ssim > 1.0 {
        return Err(Error::Domain(format!("ssim {ssim} exceeds 1")));
    }
    let mse_term = 10f64.powf(-psnr_db / 10.0);
    let ssim_term = (1.0 - ssim).max(0.0).sqrt();
    Ok((mse_term * ssim_term).sqrt())
}

/// Per-view evaluation record.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub psnr: PsnrResult,
    pub ssim: f64,
    /// 2-term geometric average (no perceptual metric).
    pub avg_err: f64,
}

impl MetricReport {
    pub fn compute(img: &ImageF, gt: &ImageF) -> Result<Self> {
        let p = psnr(img, gt)?;
        let s = ssim(img, gt)?;
        if s > 1.0 + 1e-12 {
            return Err(Error::Numeric(format!("ssim {s} exceeds 1")));
        }
        let avg_err = (p.mse_term() * (1.0 - s).max(0.0).sqrt()).sqrt();
        Ok(MetricReport {
            psnr: p,
            ssim: s,
            avg_err,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: u32, h: u32, phase: f64) -> ImageF {
        let mut img = ImageF::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let t = (x as f64 + phase) / w as f64;
                let s = y as f64 / h as f64;
                img.set_pixel(x, y, [t, s, (t * s).fract()]);
            }
        }
        img
    }

    #[test]
    fn psnr_20db_case() {
        // uniform squared error of 0.01
        let mut a = ImageF::new(10, 10);
        let b = ImageF::new(10, 10);
        for p in &mut a.pixels {
            *p = [0.1, 0.1, 0.1];
        }
        match psnr(&a, &b).unwrap() {
            PsnrResult::Db(db) => assert!((db - 20.0).abs() < 1e-12),
            PsnrResult::Identical => panic!("not identical"),
        }
    }

    #[test]
    fn psnr_identical_sentinel() {
        let a = gradient_image(12, 12, 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), PsnrResult::Identical);
    }

    #[test]
    fn psnr_black_vs_white_is_zero() {
        let black = ImageF::new(8, 8);
        let mut white = ImageF::new(8, 8);
        for p in &mut white.pixels {
            *p = [1.0; 3];
        }
        match psnr(&black, &white).unwrap() {
            PsnrResult::Db(db) => assert!(db.abs() < 1e-12),
            PsnrResult::Identical => panic!("not identical"),
        }
    }

    #[test]
    fn psnr_is_symmetric_and_decreases_with_noise() {
        let base = gradient_image(16, 16, 0.0);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.05, 0.1] {
            let mut noisy = base.clone();
            for (i, p) in noisy.pixels.iter_mut().enumerate() {
                let n = amp * if i % 2 == 0 { 1.0 } else { -1.0 };
                for c in p.iter_mut() {
                    *c = (*c + n).clamp(0.0, 1.0);
                }
            }
            let ab = match psnr(&noisy, &base).unwrap() {
                PsnrResult::Db(db) => db,
                _ => panic!(),
            };
            let ba = match psnr(&base, &noisy).unwrap() {
                PsnrResult::Db(db) => db,
                _ => panic!(),
            };
            assert_eq!(ab, ba);
            assert!(ab < last);
            last = ab;
        }
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = gradient_image(16, 16, 0.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_drops_under_constant_offset() {
        let a = gradient_image(16, 16, 0.0);
        let mut b = a.clone();
        for p in &mut b.pixels {
            for c in p.iter_mut() {
                *c = (*c + 0.1).min(1.0);
            }
        }
        let s = ssim(&b, &a).unwrap();
        assert!(s < 1.0);
        assert!(s > 0.3, "offset should mostly hurt luminance, got {s}");
    }

    #[test]
    fn ssim_rejects_images_smaller_than_the_window() {
        let a = ImageF::new(10, 16);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = gradient_image(20, 14, 0.0);
        let b = gradient_image(20, 14, 3.0);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    /// Direct per-window re-implementation of the SSIM definition, kept
    /// independent of the separable-convolution path.
    fn ssim_direct(img: &ImageF, gt: &ImageF) -> f64 {
        let (w, h) = (img.width as usize, img.height as usize);
        let x = to_gray(img);
        let y = to_gray(gt);
        let k = gaussian_kernel();
        let mut total = 0.0;
        let mut count = 0usize;
        for wy in 0..=(h - SSIM_WINDOW) {
            for wx in 0..=(w - SSIM_WINDOW) {
                let (mut mx, mut my) = (0.0, 0.0);
                let (mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let wgt = k[dy] * k[dx];
                        let xv = x[(wy + dy) * w + wx + dx];
                        let yv = y[(wy + dy) * w + wx + dx];
                        mx += wgt * xv;
                        my += wgt * yv;
                        exx += wgt * xv * xv;
                        eyy += wgt * yv * yv;
                        exy += wgt * xv * yv;
                    }
                }
                let vx = exx - mx * mx;
                let vy = eyy - my * my;
                let cxy = exy - mx * my;
                total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_checkerboard_matches_direct_implementation() {
        let mut a = ImageF::new(16, 16);
        let mut b = ImageF::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                let v = ((x + y) % 2) as f64;
                a.set_pixel(x, y, [v; 3]);
                b.set_pixel(x, y, [1.0 - v; 3]);
            }
        }
        let fast = ssim(&a, &b).unwrap();
        let direct = ssim_direct(&a, &b);
        assert!((fast - direct).abs() < 1e-6, "{fast} vs {direct}");
        assert!(fast < 0.0, "inverted checkerboard should anticorrelate");
    }

    #[test]
    fn ssim_random_pairs_match_direct_implementation() {
        for phase in [0.5, 2.0, 7.5] {
            let a = gradient_image(24, 18, 0.0);
            let b = gradient_image(24, 18, phase);
            let fast = ssim(&a, &b).unwrap();
            let direct = ssim_direct(&a, &b);
            assert!((fast - direct).abs() < 1e-6, "{fast} vs {direct}");
        }
    }

    #[test]
    fn geometric_average_hand_case() {
        let g = geometric_average(20.0, 0.75).unwrap();
        assert!((g - (0.01f64 * 0.5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn geometric_average_perfect_reconstruction() {
        assert_eq!(geometric_average(f64::INFINITY, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn geometric_average_is_monotone_in_both_inputs() {
        let base = geometric_average(25.0, 0.9).unwrap();
        assert!(geometric_average(24.0, 0.9).unwrap() > base);
        assert!(geometric_average(25.0, 0.85).unwrap() > base);
    }

    #[test]
    fn geometric_average_rejects_invalid_ssim() {
        assert!(geometric_average(20.0, 1.1).is_err());
    }
}
