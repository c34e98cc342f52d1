//! Full-reference scores.

use super::MetricsConfig;
use crate::error::{Error, Result};
use crate::image::Image;

fn same_size(op: &'static str, x: &Image, y: &Image) -> Result<()> {
    if !x.same_size(y) {
        return Err(Error::shape(op, format!("{}x{} vs {}x{}", x.width(), x.height(), y.width(), y.height())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all samples. Identical inputs score
/// `config.psnr_identical_db`.
pub fn psnr(x: &Image, y: &Image, peak: f64, config: &MetricsConfig) -> Result<f64> {
    same_size("psnr", x, y)?;
    let n = x.data().len();
    if n == 0 {
        return Err(Error::invalid("psnr", "empty image"));
    }
    let mse = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
    if mse == 0.0 {
        return Ok(config.psnr_identical_db);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// 601 luma.
pub fn luma(img: &Image) -> Vec<f64> {
    let (r, g, b) = (img.channel(0), img.channel(1), img.channel(2));
    (0..img.pixels()).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect()
}

pub(crate) fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable filtering keeping only fully covered positions.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Structural similarity of the luma planes, averaged over every window that
/// fits entirely inside the image.
pub fn ssim(x: &Image, y: &Image, peak: f64, config: &MetricsConfig) -> Result<f64> {
    same_size("ssim", x, y)?;
    let (w, h) = (x.width(), x.height());
    let n = config.ssim_window;
    if w < n || h < n {
        return Err(Error::invalid("ssim", format!("{w}x{h} image is smaller than the {n}x{n} window")));
    }
    let (lx, ly) = (luma(x), luma(y));
    let k = gaussian_window(n, config.ssim_sigma);
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    let (mx, _, _) = filter_valid(&lx, w, h, &k);
    let (my, _, _) = filter_valid(&ly, w, h, &k);
    let (exx, _, _) = filter_valid(&prod(&lx, &lx), w, h, &k);
    let (eyy, _, _) = filter_valid(&prod(&ly, &ly), w, h, &k);
    let (exy, _, _) = filter_valid(&prod(&lx, &ly), w, h, &k);
    let c1 = (config.ssim_k1 * peak).powi(2);
    let c2 = (config.ssim_k2 * peak).powi(2);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = exx[i] - ux * ux;
        let vy = eyy[i] - uy * uy;
        let cxy = exy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}
