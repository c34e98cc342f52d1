//! Underwater image formation and the dark-channel-prior restorer.
//!
//! A scene of clean radiance `J` at depth `d` reaches the camera as
//! `I = J t + fs + A (1 - t)` with per-channel transmission `t = exp(-eta d)`,
//! ambient light `A`, and an optional forward-scatter term `fs`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// Constants of the dark-channel-prior restorer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcpConfig {
    /// Half-width of the square minimum filter.
    pub patch_radius: usize,
    /// Fraction of haze removed.
    pub omega: f64,
    /// Lower bound on transmission during recovery.
    pub t0: f64,
    /// Brightest fraction of the dark channel searched for the ambient light.
    pub airlight_fraction: f64,
}

impl Default for DcpConfig {
    fn default() -> Self {
        Self { patch_radius: 7, omega: 0.95, t0: 0.1, airlight_fraction: 0.001 }
    }
}

/// Gaussian blur width per metre of mean depth, in pixels.
pub const FS_SIGMA_PER_METRE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub clean: Image,
    /// Metres, row-major `H x W`.
    pub depth: Vec<f64>,
    /// Attenuation per metre for R, G, B.
    pub eta: [f64; 3],
    pub ambient: [f64; 3],
    /// Strength of forward scatter; zero disables it.
    pub fs_gain: f64,
}

impl SceneModel {
    pub fn new(clean: Image, depth: Vec<f64>, eta: [f64; 3], ambient: [f64; 3]) -> Result<Self> {
        let s = Self { clean, depth, eta, ambient, fs_gain: 0.0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth.len() != self.clean.pixels() {
            return Err(Error::shape("scene", format!("depth has {} values for {} pixels", self.depth.len(), self.clean.pixels())));
        }
        if let Some(e) = self.eta.iter().find(|e| !e.is_finite() || **e < 0.0) {
            return Err(Error::invalid("degrade", format!("attenuation must be finite and non-negative, got {e}")));
        }
        if let Some(d) = self.depth.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::invalid("degrade", format!("depth must be finite and non-negative, got {d}")));
        }
        if self.ambient.iter().any(|a| !a.is_finite()) || !self.fs_gain.is_finite() || self.fs_gain < 0.0 {
            return Err(Error::invalid("degrade", "ambient light and forward-scatter gain must be finite"));
        }
        if self.clean.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("degrade", "clean image has non-finite values"));
        }
        Ok(())
    }

    /// Per-channel transmission `exp(-eta d)`.
    pub fn transmission(&self) -> TransmissionMap {
        let (w, h) = (self.clean.width(), self.clean.height());
        let planes = (0..3).map(|c| self.depth.iter().map(|d| (-self.eta[c] * d).exp()).collect()).collect();
        TransmissionMap { width: w, height: h, planes, patch_radius: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationComponents {
    pub direct: Image,
    pub forward_scatter: Image,
    pub backscatter: Image,
    pub total: Image,
}

/// Either one transmission plane shared by all channels or one per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMap {
    pub width: usize,
    pub height: usize,
    /// One or three row-major planes.
    pub planes: Vec<Vec<f64>>,
    /// Radius of the minimum filter that produced the estimate (0 if exact).
    pub patch_radius: usize,
}

impl TransmissionMap {
    pub fn uniform(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, planes: vec![vec![value; width * height]], patch_radius: 0 }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        if self.planes.len() == 1 {
            &self.planes[0]
        } else {
            &self.planes[c]
        }
    }
}

pub fn degrade(scene: &SceneModel) -> Result<DegradationComponents> {
    scene.validate()?;
    let img = &scene.clean;
    let t = scene.transmission();
    let n = img.pixels();
    let direct = Image::from_planar(img.width(), img.height(), (0..3 * n).map(|i| img.data()[i] * t.plane(i / n)[i % n]).collect())?;
    let backscatter =
        Image::from_planar(img.width(), img.height(), (0..3 * n).map(|i| scene.ambient[i / n] * (1.0 - t.plane(i / n)[i % n])).collect())?;
    let forward_scatter = if scene.fs_gain > 0.0 {
        let mean_d = scene.depth.iter().sum::<f64>() / n.max(1) as f64;
        gaussian_blur(&direct, FS_SIGMA_PER_METRE * mean_d).map(|v| v * scene.fs_gain)
    } else {
        Image::new(img.width(), img.height())
    };
    let total = Image::from_planar(
        img.width(),
        img.height(),
        (0..3 * n).map(|i| direct.data()[i] + forward_scatter.data()[i] + backscatter.data()[i]).collect(),
    )?;
    Ok(DegradationComponents { direct, forward_scatter, backscatter, total })
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut tmp = img.clone();
    for c in 0..3 {
        let src = img.channel(c);
        let dst = tmp.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[(y * w + x) as usize] = (-r..=r).map(|i| k[(i + r) as usize] * src[(y * w + (x + i).clamp(0, w - 1)) as usize]).sum();
            }
        }
    }
    let mut out = tmp.clone();
    for c in 0..3 {
        let src = tmp.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[(y * w + x) as usize] = (-r..=r).map(|i| k[(i + r) as usize] * src[((y + i).clamp(0, h - 1) * w + x) as usize]).sum();
            }
        }
    }
    out
}

/// Sliding minimum over a `(2r+1)^2` window with edge replication, done as a
/// row pass then a column pass.
fn min_filter(plane: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return plane.to_vec();
    }
    let mut rows = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            rows[y * w + x] = plane[y * w + lo..=y * w + hi].iter().copied().fold(f64::INFINITY, f64::min);
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).fold(f64::INFINITY, f64::min);
        }
    }
    out
}

/// Channel minimum followed by a windowed minimum.
pub fn dark_channel(img: &Image, patch_radius: usize) -> Vec<f64> {
    let n = img.pixels();
    let cmin: Vec<f64> = (0..n).map(|i| img.channel(0)[i].min(img.channel(1)[i]).min(img.channel(2)[i])).collect();
    min_filter(&cmin, img.width(), img.height(), patch_radius)
}

/// Ambient light: the brightest (by RGB sum) of the pixels whose dark-channel
/// value is in the top `fraction`. Pixels tied with the cutoff value are
/// included, so the candidate set does not depend on scan order.
pub fn estimate_airlight(img: &Image, config: &DcpConfig) -> Result<[f64; 3]> {
    let n = img.pixels();
    if n == 0 {
        return Err(Error::invalid("estimate_airlight", "empty image"));
    }
    let dark = dark_channel(img, config.patch_radius);
    let count = ((n as f64 * config.airlight_fraction).floor() as usize).clamp(1, n);
    let mut sorted = dark.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let cutoff = sorted[count - 1];
    let (w, mut best, mut best_sum) = (img.width(), 0, f64::NEG_INFINITY);
    for i in (0..n).filter(|&i| dark[i] >= cutoff) {
        let s: f64 = img.rgb(i / w, i % w).iter().sum();
        if s > best_sum {
            best_sum = s;
            best = i;
        }
    }
    Ok(img.rgb(best / w, best % w))
}

/// `t = 1 - omega * dark_channel(I / A)`, clipped to `[0, 1]`.
pub fn estimate_transmission(img: &Image, ambient: [f64; 3], patch_radius: usize, omega: f64) -> Result<TransmissionMap> {
    if let Some(a) = ambient.iter().find(|a| **a <= 0.0 || !a.is_finite()) {
        return Err(Error::invalid("estimate_transmission", format!("ambient light channel must be positive, got {a}")));
    }
    let normalized = Image::from_fn(img.width(), img.height(), |c, y, x| img.get(c, y, x) / ambient[c]);
    let dark = dark_channel(&normalized, patch_radius);
    let plane = dark.iter().map(|d| (1.0 - omega * d).clamp(0.0, 1.0)).collect();
    Ok(TransmissionMap { width: img.width(), height: img.height(), planes: vec![plane], patch_radius })
}

/// `J = (I - A) / max(t, t0) + A`. Not clipped; clamp before export.
pub fn dcp_recover(img: &Image, ambient: [f64; 3], t: &TransmissionMap, t0: f64) -> Result<Image> {
    if t.width != img.width() || t.height != img.height() || !(t.planes.len() == 1 || t.planes.len() == 3) {
        return Err(Error::shape("dcp_recover", format!("transmission {}x{} for image {}x{}", t.width, t.height, img.width(), img.height())));
    }
    Ok(Image::from_fn(img.width(), img.height(), |c, y, x| {
        let tv = t.plane(c)[y * img.width() + x].max(t0);
        (img.get(c, y, x) - ambient[c]) / tv + ambient[c]
    }))
}

/// Full restorer: estimate the ambient light and transmission, then invert.
pub fn dcp_restore(img: &Image, config: &DcpConfig) -> Result<Image> {
    let a = estimate_airlight(img, config)?;
    let t = estimate_transmission(img, a, config.patch_radius, config.omega)?;
    dcp_recover(img, a, &t, config.t0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DepthKind {
    /// Linear ramp along a seed-chosen direction.
    Ramp,
    /// Distance from a seed-chosen centre.
    Radial,
}

/// Depth map in `[near, far]` metres.
pub fn synthetic_depth(width: usize, height: usize, kind: DepthKind, near: f64, far: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD3E7);
    let (w, h) = (width.max(2) as f64 - 1.0, height.max(2) as f64 - 1.0);
    let raw: Vec<f64> = match kind {
        DepthKind::Ramp => {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            (0..width * height).map(|i| ((i % width) as f64 / w - 0.5) * dx + ((i / width) as f64 / h - 0.5) * dy).collect()
        }
        DepthKind::Radial => {
            let (cx, cy): (f64, f64) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
            (0..width * height).map(|i| ((i % width) as f64 / w - cx).hypot((i / width) as f64 / h - cy)).collect()
        }
    };
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    raw.iter().map(|v| near + (far - near) * (v - lo) / span).collect()
}

/// Vertical ramp: `far` on the top row, `near` on the bottom row.
pub fn vertical_ramp(width: usize, height: usize, near: f64, far: f64) -> Vec<f64> {
    let h = height.max(2) as f64 - 1.0;
    (0..width * height).map(|i| far + (near - far) * (i / width) as f64 / h).collect()
}

/// Seeded clean scene: coloured blobs over a gradient with fine texture and
/// scattered dark specks (shadows), so every neighbourhood has a dark pixel.
pub fn synthetic_clean(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let color = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        let mut c = [rng.random_range(0.25..0.95), rng.random_range(0.25..0.95), rng.random_range(0.25..0.95)];
        c[rng.random_range(0..3)] = rng.random_range(0.0..0.15);
        c
    };
    let top = color(&mut rng);
    let bottom = color(&mut rng);
    let blobs: Vec<([f64; 3], f64, f64, f64)> = (0..6)
        .map(|_| {
            let c = color(&mut rng);
            (c, rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.08..0.3))
        })
        .collect();
    let freq: f64 = rng.random_range(0.3..0.9);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let speck_period = 6;
    let offsets: Vec<(usize, usize)> =
        (0..width.div_ceil(speck_period) * height.div_ceil(speck_period)).map(|_| (rng.random_range(0..speck_period), rng.random_range(0..speck_period))).collect();
    let cols = width.div_ceil(speck_period);
    let (w, h) = (width.max(1) as f64, height.max(1) as f64);
    Image::from_fn(width, height, |c, y, x| {
        let (u, v) = (x as f64 / w, y as f64 / h);
        let (by, bx) = (y / speck_period, x / speck_period);
        let (oy, ox) = offsets[by * cols + bx];
        if y % speck_period == oy && x % speck_period == ox {
            return 0.02;
        }
        let mut val = top[c] * (1.0 - v) + bottom[c] * v;
        for (bc, cx, cy, r) in &blobs {
            let wgt = (-((u - cx).powi(2) + (v - cy).powi(2)) / (2.0 * r * r)).exp();
            val = val * (1.0 - wgt) + bc[c] * wgt;
        }
        val += 0.05 * ((x as f64 * freq + phase).sin() * (y as f64 * freq * 0.7).cos());
        val.clamp(0.0, 1.0)
    })
}
