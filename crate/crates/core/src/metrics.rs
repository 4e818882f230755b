//! Image fidelity metrics on `[0, 1]` RGB images.

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidArgument(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean squared error over all pixel-channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Peak signal-to-noise ratio in dB for unit peak. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Mean local SSIM split into its luminance and contrast-structure factors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimReport {
    pub ssim: f64,
    pub luminance: f64,
    pub structure: f64,
}

/// Rec.601 luma.
pub fn grayscale(img: &Image) -> Vec<f64> {
    img.data
        .chunks_exact(3)
        .map(|c| 0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64)
        .collect()
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter keeping only windows fully inside the image.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5), unit
/// data range, on Rec.601 luma.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_report(a, b)?.ssim)
}

pub fn ssim_report(a: &Image, b: &Image) -> Result<SsimReport> {
    check_shapes(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let (w, h) = (a.width, a.height);
    let x = grayscale(a);
    let y = grayscale(b);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let k = gaussian_window();
    let mx = filter_valid(&x, w, h, &k);
    let my = filter_valid(&y, w, h, &k);
    let sxx = filter_valid(&xx, w, h, &k);
    let syy = filter_valid(&yy, w, h, &k);
    let sxy = filter_valid(&xy, w, h, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (mut total, mut lum, mut st) = (0.0, 0.0, 0.0);
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        let l = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        let s = (2.0 * cov + c2) / (vx + vy + c2);
        lum += l;
        st += s;
        total += l * s;
    }
    let n = mx.len() as f64;
    Ok(SsimReport {
        ssim: total / n,
        luminance: lum / n,
        structure: st / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(w: usize, h: usize, v: f32) -> Image {
        Image::from_fn(w, h, |_, _| [v; 3])
    }

    fn checkerboard(n: usize, invert: bool) -> Image {
        Image::from_fn(n, n, |x, y| {
            let on = ((x + y) % 2 == 0) != invert;
            [if on { 1.0 } else { 0.0 }; 3]
        })
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = constant(4, 4, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_uniform_offset_is_20_db() {
        let a = constant(4, 4, 0.2);
        let b = constant(4, 4, 0.3);
        // f32 storage of 0.2 and 0.3 bounds the achievable agreement
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-7);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
    }

    #[test]
    fn psnr_of_reported_table_mse() {
        let p = psnr_from_mse(0.0030);
        assert!((p - 25.2288).abs() < 1e-3, "{p}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(psnr(&constant(4, 4, 0.0), &constant(4, 5, 0.0)).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = checkerboard(16, false);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_inverted_checkerboard_has_negative_structure() {
        let a = checkerboard(16, false);
        let b = checkerboard(16, true);
        let r = ssim_report(&a, &b).unwrap();
        assert!(r.structure < 0.0, "{r:?}");
        assert!(r.ssim < 0.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let a = constant(16, 16, 0.5);
        let b = constant(16, 16, 0.6);
        let r = ssim_report(&a, &b).unwrap();
        let c1 = 1e-4;
        let (u, v) = (0.5f64, 0.6f32 as f64);
        let want = (2.0 * u * v + c1) / (u * u + v * v + c1);
        assert!((r.luminance - want).abs() < 1e-6, "{r:?}");
        assert!(r.luminance < 1.0);
        assert!((r.structure - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = constant(10, 16, 0.5);
        assert!(ssim(&a, &a).is_err());
    }
}
