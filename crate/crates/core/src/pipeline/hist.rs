//! Per-channel histograms of raw, enhanced and `dx - ox` images.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::image::Image;

pub const BINS: usize = 256;

pub type ChannelHistogram = [[u64; BINS]; 3];

/// Counts of values in `[lo, hi]` split into 256 equal bins; values outside
/// fall into the end bins.
pub fn histogram(img: &Image, lo: f64, hi: f64) -> ChannelHistogram {
    let mut h = [[0u64; BINS]; 3];
    let scale = BINS as f64 / (hi - lo);
    for (c, counts) in h.iter_mut().enumerate() {
        for &v in img.channel(c) {
            let b = ((v - lo) * scale).floor();
            let b = if b.is_nan() { 0 } else { (b.max(0.0) as usize).min(BINS - 1) };
            counts[b] += 1;
        }
    }
    h
}

/// Histograms summed over images.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramReport {
    pub raw: ChannelHistogram,
    pub enhanced: Option<ChannelHistogram>,
    /// `dx - ox` over `[-1, 1]`.
    pub change: Option<ChannelHistogram>,
}

fn accumulate(into: &mut ChannelHistogram, h: &ChannelHistogram) {
    for (a, b) in into.iter_mut().zip(h) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

impl HistogramReport {
    pub fn new(raw: &[&Image], enhanced: Option<(&[&Image], &[&Image])>) -> Self {
        let mut r = [[0; BINS]; 3];
        raw.iter().for_each(|im| accumulate(&mut r, &histogram(im, 0.0, 1.0)));
        let (enhanced, change) = match enhanced {
            Some((outs, changes)) => {
                let mut e = [[0; BINS]; 3];
                let mut c = [[0; BINS]; 3];
                outs.iter().for_each(|im| accumulate(&mut e, &histogram(im, 0.0, 1.0)));
                changes.iter().for_each(|im| accumulate(&mut c, &histogram(im, -1.0, 1.0)));
                (Some(e), Some(c))
            }
            None => (None, None),
        };
        Self { raw: r, enhanced, change }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,raw_r,raw_g,raw_b");
        if self.enhanced.is_some() {
            out.push_str(",enh_r,enh_g,enh_b,change_r,change_g,change_b");
        }
        out.push('\n');
        for b in 0..BINS {
            let _ = write!(out, "{b},{},{},{}", self.raw[0][b], self.raw[1][b], self.raw[2][b]);
            if let (Some(e), Some(c)) = (&self.enhanced, &self.change) {
                let _ = write!(out, ",{},{},{},{},{},{}", e[0][b], e[1][b], e[2][b], c[0][b], c[1][b], c[2][b]);
            }
            out.push('\n');
        }
        out
    }

    /// One panel per histogram, stacked vertically, channels drawn as
    /// overlaid red/green/blue bars.
    pub fn render(&self) -> RgbImage {
        let panels: Vec<&ChannelHistogram> = [Some(&self.raw), self.enhanced.as_ref(), self.change.as_ref()].into_iter().flatten().collect();
        let (pw, ph, gap) = (BINS as u32 * 2, 120u32, 10u32);
        let height = panels.len() as u32 * (ph + gap) + gap;
        let mut img = RgbImage::from_pixel(pw + 2 * gap, height, Rgb([255, 255, 255]));
        for (i, h) in panels.iter().enumerate() {
            let top = gap + i as u32 * (ph + gap);
            let peak = h.iter().flat_map(|c| c.iter()).copied().max().unwrap_or(0).max(1);
            for x in 0..pw {
                img.put_pixel(gap + x, top + ph, Rgb([0, 0, 0]));
            }
            for (c, counts) in h.iter().enumerate() {
                for (b, &n) in counts.iter().enumerate() {
                    let bar = (n as f64 / peak as f64 * (ph - 1) as f64).round() as u32;
                    for dy in 0..bar {
                        for dx in 0..2 {
                            let p = img.get_pixel_mut(gap + b as u32 * 2 + dx, top + ph - 1 - dy);
                            // channels blend by taking the channel's component down
                            p.0.iter_mut().enumerate().filter(|(k, _)| *k != c).for_each(|(_, v)| *v = v.saturating_sub(85));
                        }
                    }
                }
            }
        }
        img
    }

    pub fn save_plot(&self, path: &Path) -> Result<()> {
        self.render().save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Write { path: path.to_path_buf(), reason: e.to_string() })
    }
}
