//! Underwater colour image quality evaluation in CIELab.

use super::MetricsConfig;
use crate::image::Image;

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn linearize(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    let d = 6.0 / 29.0;
    if t > d * d * d {
        t.cbrt()
    } else {
        t / (3.0 * d * d) + 4.0 / 29.0
    }
}

/// sRGB in `[0, 1]` to CIELab under D65, with `L` in `[0, 100]`. The white
/// point is the image of sRGB white, so neutral greys have `a = b = 0`.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(linearize);
    let xyz: Vec<f64> = SRGB_TO_XYZ.iter().map(|row| row.iter().zip(&lin).map(|(m, v)| m * v).sum()).collect();
    let white: Vec<f64> = SRGB_TO_XYZ.iter().map(|row| row.iter().sum()).collect();
    let f: Vec<f64> = xyz.iter().zip(&white).map(|(v, n)| lab_f(v / n)).collect();
    [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

/// Nearest-rank percentile of sorted data.
pub(crate) fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// `w1 * std(chroma) + w2 * (P99(L) - P1(L)) + w3 * mean(saturation)` with
/// `L`, `a`, `b` scaled by 1/100.
pub fn uciqe(img: &Image, cfg: &MetricsConfig) -> f64 {
    let n = img.pixels();
    if n == 0 {
        return 0.0;
    }
    let mut l = Vec::with_capacity(n);
    let mut chroma = Vec::with_capacity(n);
    let mut sat = 0.0;
    let w = img.width();
    for i in 0..n {
        let [lv, a, b] = srgb_to_lab(img.rgb(i / w, i % w));
        let (lv, a, b) = (lv / 100.0, a / 100.0, b / 100.0);
        let c = a.hypot(b);
        let denom = c.hypot(lv);
        sat += if denom > 0.0 { c / denom } else { 0.0 };
        l.push(lv);
        chroma.push(c);
    }
    let mean_c = chroma.iter().sum::<f64>() / n as f64;
    let std_c = (chroma.iter().map(|c| (c - mean_c).powi(2)).sum::<f64>() / n as f64).sqrt();
    l.sort_by(f64::total_cmp);
    let contrast = percentile(&l, cfg.uciqe_high_percentile) - percentile(&l, cfg.uciqe_low_percentile);
    let [w1, w2, w3] = cfg.uciqe_weights;
    w1 * std_c + w2 * contrast + w3 * sat / n as f64
}
