//! Independent reference implementations shared by integration tests.
//!
//! Everything here is written straight from the textbook formulas with plain
//! loops and no shared code with the library.

#![allow(dead_code)]

use lsnet_core::tensor::Tensor;
use lsnet_core::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain softmax attention over every pixel of a `(1, c, h, w)` image.
pub fn dense_attention(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>) -> Tensor<f64> {
    let [_, c, h, w] = q.shape();
    let n = h * w;
    let at = |t: &Tensor<f64>, ch: usize, p: usize| t.data()[ch * n + p];
    let mut out = Tensor::zeros([1, c, h, w]);
    for i in 0..n {
        let logits: Vec<f64> = (0..n).map(|j| (0..c).map(|ch| at(q, ch, i) * at(k, ch, j)).sum::<f64>() / (c as f64).sqrt()).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for ch in 0..c {
            out.data_mut()[ch * n + i] = (0..n).map(|j| e[j] / z * at(v, ch, j)).sum();
        }
    }
    out
}

pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Fixed test patterns: smooth gradients, a colour checkerboard and noise.
pub fn patterns() -> Vec<(&'static str, Image)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let noise = Image::from_fn(37, 29, |_, _, _| rng.random_range(0.0..1.0));
    vec![
        ("gradient", Image::from_fn(40, 30, |c, y, x| (0.2 + 0.6 * x as f64 / 39.0 * (c as f64 + 1.0) / 3.0 + 0.1 * y as f64 / 29.0).min(1.0))),
        ("checker16", Image::from_fn(16, 16, |c, y, x| if (x / 2 + y / 2) % 2 == 0 { [0.95, 0.85, 0.2][c] } else { [0.1, 0.3, 0.45][c] })),
        ("checker", Image::from_fn(32, 32, |c, y, x| if (x / 4 + y / 4) % 2 == 0 { [0.9, 0.3, 0.1][c] } else { [0.05, 0.6, 0.8][c] })),
        ("noise", noise),
        ("underwater", Image::from_fn(50, 40, |c, y, x| [0.08, 0.55, 0.62][c] + 0.25 * ((x as f64 * 0.3).sin() * (y as f64 * 0.2).cos()).abs() * [0.3, 1.0, 0.8][c])),
    ]
}

fn plane(img: &Image, c: usize) -> Vec<Vec<f64>> {
    (0..img.height()).map(|y| (0..img.width()).map(|x| 255.0 * img.get(c, y, x)).collect()).collect()
}

fn sort(v: &mut [f64]) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
}

/// Asymmetric alpha-trimmed mean: drop `ceil(aL*K)` smallest and
/// `floor(aR*K)` largest values.
fn trimmed(values: &[f64], al: f64, ar: f64) -> f64 {
    let mut v = values.to_vec();
    sort(&mut v);
    let k = v.len() as f64;
    let tl = (al * k).ceil() as usize;
    let tr = (ar * k).floor() as usize;
    let kept = &v[tl..v.len() - tr];
    kept.iter().sum::<f64>() / kept.len() as f64
}

pub fn uicm(img: &Image) -> f64 {
    let (r, g, b) = (plane(img, 0), plane(img, 1), plane(img, 2));
    let mut rg = Vec::new();
    let mut yb = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            rg.push(r[y][x] - g[y][x]);
            yb.push((r[y][x] + g[y][x]) / 2.0 - b[y][x]);
        }
    }
    let mu_rg = trimmed(&rg, 0.1, 0.1);
    let mu_yb = trimmed(&yb, 0.1, 0.1);
    let s2_rg = rg.iter().map(|v| (v - mu_rg) * (v - mu_rg)).sum::<f64>() / rg.len() as f64;
    let s2_yb = yb.iter().map(|v| (v - mu_yb) * (v - mu_yb)).sum::<f64>() / yb.len() as f64;
    -0.0268 * (mu_rg * mu_rg + mu_yb * mu_yb).sqrt() + 0.1586 * (s2_rg + s2_yb).sqrt()
}

/// Sobel gradient magnitude on an edge-replicated copy, scaled so the
/// maximum is 255.
fn sobel(p: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (h, w) = (p.len(), p[0].len());
    let mut pad = vec![vec![0.0; w + 2]; h + 2];
    for (y, row) in pad.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = p[y.saturating_sub(1).min(h - 1)][x.saturating_sub(1).min(w - 1)];
        }
    }
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut m = vec![vec![0.0; w]; h];
    let mut peak = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    gx += kx[i][j] * pad[y + i][x + j];
                    gy += ky[i][j] * pad[y + i][x + j];
                }
            }
            m[y][x] = (gx * gx + gy * gy).sqrt();
            peak = peak.max(m[y][x]);
        }
    }
    if peak > 0.0 {
        for row in &mut m {
            for v in row {
                *v = *v / peak * 255.0;
            }
        }
    }
    m
}

/// Enhancement measure over non-overlapping `b x b` blocks; partial blocks
/// at the right and bottom edges are dropped.
fn eme(p: &[Vec<f64>], b: usize) -> f64 {
    let (k1, k2) = (p[0].len() / b, p.len() / b);
    let mut s = 0.0;
    for l in 0..k2 {
        for k in 0..k1 {
            let cells: Vec<f64> = (0..b).flat_map(|y| (0..b).map(move |x| (y, x))).map(|(y, x)| p[l * b + y][k * b + x]).collect();
            let mx = cells.iter().cloned().fold(f64::MIN, f64::max);
            let mn = cells.iter().cloned().fold(f64::MAX, f64::min);
            if mx != 0.0 && mn != 0.0 {
                s += (mx / mn).ln();
            }
        }
    }
    2.0 / (k1 * k2) as f64 * s
}

pub fn uism(img: &Image) -> f64 {
    let lambda = [0.299, 0.587, 0.114];
    (0..3)
        .map(|c| {
            let p = plane(img, c);
            let s = sobel(&p);
            let edge: Vec<Vec<f64>> = s.iter().zip(&p).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u * v).collect()).collect();
            lambda[c] * eme(&edge, 10)
        })
        .sum()
}

pub fn uiconm(img: &Image) -> f64 {
    let ps = [plane(img, 0), plane(img, 1), plane(img, 2)];
    let b = 10;
    let (k1, k2) = (img.width() / b, img.height() / b);
    let mut s = 0.0;
    for l in 0..k2 {
        for k in 0..k1 {
            let mut mx = f64::MIN;
            let mut mn = f64::MAX;
            for p in &ps {
                for y in 0..b {
                    for x in 0..b {
                        mx = mx.max(p[l * b + y][k * b + x]);
                        mn = mn.min(p[l * b + y][k * b + x]);
                    }
                }
            }
            let (d, t) = (mx - mn, mx + mn);
            if d != 0.0 && t != 0.0 {
                s += (d / t) * (d / t).ln();
            }
        }
    }
    -s / (k1 * k2) as f64
}

pub fn uiqm(img: &Image) -> f64 {
    0.0282 * uicm(img) + 0.2953 * uism(img) + 3.5753 * uiconm(img)
}

/// sRGB (D65) to CIELAB.
fn lab(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let lin = |u: f64| if u > 0.04045 { ((u + 0.055) / 1.055).powf(2.4) } else { u / 12.92 };
    let (r, g, b) = (lin(r), lin(g), lin(b));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let f = |t: f64| if t > 216.0 / 24389.0 { t.powf(1.0 / 3.0) } else { (24389.0 / 27.0 * t + 16.0) / 116.0 };
    let (fx, fy, fz) = (f(x / 0.95047), f(y / 1.0), f(z / 1.08883));
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

pub fn uciqe(img: &Image) -> f64 {
    let mut ls = Vec::new();
    let mut cs = Vec::new();
    let mut ss = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (l, a, b) = lab(img.get(0, y, x), img.get(1, y, x), img.get(2, y, x));
            let (l, a, b) = (l / 100.0, a / 100.0, b / 100.0);
            let c = (a * a + b * b).sqrt();
            ls.push(l);
            cs.push(c);
            let norm = (c * c + l * l).sqrt();
            ss.push(if norm == 0.0 { 0.0 } else { c / norm });
        }
    }
    let n = cs.len() as f64;
    let mean = cs.iter().sum::<f64>() / n;
    let sd = (cs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n).sqrt();
    sort(&mut ls);
    // nearest-rank percentile
    let pct = |p: f64| ls[((p / 100.0 * n).ceil() as usize).max(1) - 1];
    let con = pct(99.0) - pct(1.0);
    0.4680 * sd + 0.2745 * con + 0.2576 * ss.iter().sum::<f64>() / n
}

/// Gaussian-window SSIM on 601 luma with a valid-only 11x11 window.
pub fn ssim(x: &Image, y: &Image, peak: f64) -> f64 {
    let luma = |im: &Image| -> Vec<Vec<f64>> {
        (0..im.height()).map(|r| (0..im.width()).map(|c| 0.299 * im.get(0, r, c) + 0.587 * im.get(1, r, c) + 0.114 * im.get(2, r, c)).collect()).collect()
    };
    let (a, b) = (luma(x), luma(y));
    let mut win = [[0.0; 11]; 11];
    let mut tot = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            tot += *v;
        }
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let (h, w) = (a.len(), a[0].len());
    let mut acc = 0.0;
    let mut count = 0;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = win[i][j] / tot;
                    let (u, v) = (a[r + i][c + j], b[r + i][c + j]);
                    ma += wt * u;
                    mb += wt * v;
                    saa += wt * u * u;
                    sbb += wt * v * v;
                    sab += wt * u * v;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}
