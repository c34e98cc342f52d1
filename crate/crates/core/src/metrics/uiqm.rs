//! Underwater image quality measure: colourfulness, sharpness and contrast
//! terms computed on the 0-255 scale.

use super::MetricsConfig;
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UiqmComponents {
    pub uicm: f64,
    pub uism: f64,
    pub uiconm: f64,
    pub uiqm: f64,
}

/// Mean after dropping `ceil(alpha_l K)` smallest and `floor(alpha_r K)`
/// largest samples.
pub(crate) fn trimmed_mean(values: &[f64], alpha_l: f64, alpha_r: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let lo = (alpha_l * k as f64).ceil() as usize;
    let hi = (alpha_r * k as f64).floor() as usize;
    if lo + hi >= k {
        return 0.0;
    }
    v[lo..k - hi].iter().sum::<f64>() / (k - lo - hi) as f64
}

fn uicm(img: &Image, cfg: &MetricsConfig) -> f64 {
    let (r, g, b) = (img.channel(0), img.channel(1), img.channel(2));
    let n = img.pixels();
    let rg: Vec<f64> = (0..n).map(|i| 255.0 * (r[i] - g[i])).collect();
    let yb: Vec<f64> = (0..n).map(|i| 255.0 * ((r[i] + g[i]) / 2.0 - b[i])).collect();
    let stats = |v: &[f64]| {
        let mu = trimmed_mean(v, cfg.uicm_alpha, cfg.uicm_alpha);
        let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64;
        (mu, var)
    };
    let (mrg, vrg) = stats(&rg);
    let (myb, vyb) = stats(&yb);
    cfg.uicm_mean_weight * (mrg * mrg + myb * myb).sqrt() + cfg.uicm_var_weight * (vrg + vyb).sqrt()
}

/// Sobel gradient magnitude with edge replication, rescaled so its maximum
/// is 255 (an all-zero gradient stays zero).
pub(crate) fn sobel_magnitude(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| plane[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize];
    let mut mag = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)) - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)) - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            mag[y as usize * w + x as usize] = gx.hypot(gy);
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        mag.iter_mut().for_each(|m| *m *= 255.0 / max);
    }
    mag
}

/// Blocks of `block x block` pixels that fit entirely, row-major.
fn blocks(w: usize, h: usize, block: usize) -> impl Iterator<Item = (usize, usize)> {
    let (bx, by) = (w / block, h / block);
    (0..by).flat_map(move |j| (0..bx).map(move |i| (j * block, i * block)))
}

/// Measure of enhancement: `2 / (k1 k2) * sum ln(max / min)` over blocks,
/// skipping blocks whose extreme is zero.
pub(crate) fn eme(plane: &[f64], w: usize, h: usize, block: usize) -> f64 {
    let count = (w / block) * (h / block);
    if count == 0 {
        return 0.0;
    }
    let mut val = 0.0;
    for (y0, x0) in blocks(w, h, block) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for y in y0..y0 + block {
            for &v in &plane[y * w + x0..y * w + x0 + block] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if lo != 0.0 && hi != 0.0 {
            val += (hi / lo).ln();
        }
    }
    2.0 / count as f64 * val
}

fn uism(img: &Image, cfg: &MetricsConfig) -> f64 {
    let (w, h) = (img.width(), img.height());
    (0..3)
        .map(|c| {
            let ch: Vec<f64> = img.channel(c).iter().map(|v| v * 255.0).collect();
            let edges: Vec<f64> = sobel_magnitude(&ch, w, h).iter().zip(&ch).map(|(m, v)| m * v).collect();
            cfg.uism_channel_weights[c] * eme(&edges, w, h, cfg.block_size)
        })
        .sum()
}

/// Block contrast `-1 / (k1 k2) * sum (d/s) ln(d/s)` with `d = max - min`,
/// `s = max + min` over all three channels of the block.
fn uiconm(img: &Image, cfg: &MetricsConfig) -> f64 {
    let (w, h, block) = (img.width(), img.height(), cfg.block_size);
    let count = (w / block) * (h / block);
    if count == 0 {
        return 0.0;
    }
    let mut val = 0.0;
    for (y0, x0) in blocks(w, h, block) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in 0..3 {
            let ch = img.channel(c);
            for y in y0..y0 + block {
                for &v in &ch[y * w + x0..y * w + x0 + block] {
                    lo = lo.min(v * 255.0);
                    hi = hi.max(v * 255.0);
                }
            }
        }
        let (top, bot) = (hi - lo, hi + lo);
        if top != 0.0 && bot != 0.0 && top.is_finite() && bot.is_finite() {
            val += (top / bot) * (top / bot).ln();
        }
    }
    -val / count as f64
}

pub fn uiqm_components(img: &Image, cfg: &MetricsConfig) -> UiqmComponents {
    let uicm = uicm(img, cfg);
    let uism = uism(img, cfg);
    let uiconm = uiconm(img, cfg);
    let [c1, c2, c3] = cfg.uiqm_weights;
    UiqmComponents { uicm, uism, uiconm, uiqm: c1 * uicm + c2 * uism + c3 * uiconm }
}
