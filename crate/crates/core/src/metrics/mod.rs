//! Image quality scores and the per-image report.

mod fullref;
mod uciqe;
mod uiqm;

pub use fullref::{luma, psnr, ssim};
pub use uciqe::{srgb_to_lab, uciqe};
pub use uiqm::{uiqm_components, UiqmComponents};

use std::fmt::Write as _;

use crate::error::Result;
use crate::image::Image;

/// Every constant the metrics depend on.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsConfig {
    pub psnr_identical_db: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    /// Trim fraction on each tail of the opponent-colour distributions.
    pub uicm_alpha: f64,
    pub uicm_mean_weight: f64,
    pub uicm_var_weight: f64,
    pub uism_channel_weights: [f64; 3],
    pub block_size: usize,
    pub uiqm_weights: [f64; 3],
    pub uciqe_weights: [f64; 3],
    pub uciqe_low_percentile: f64,
    pub uciqe_high_percentile: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            psnr_identical_db: 100.0,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            uicm_alpha: 0.1,
            uicm_mean_weight: -0.0268,
            uicm_var_weight: 0.1586,
            uism_channel_weights: [0.299, 0.587, 0.114],
            block_size: 10,
            uiqm_weights: [0.0282, 0.2953, 3.5753],
            uciqe_weights: [0.4680, 0.2745, 0.2576],
            uciqe_low_percentile: 1.0,
            uciqe_high_percentile: 99.0,
        }
    }
}

/// Scores of one image. Full-reference fields are `None` without a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub image: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub uiqm: f64,
    pub uicm: f64,
    pub uism: f64,
    pub uciqe: f64,
    pub uiconm: f64,
}

impl MetricsRecord {
    /// Score `img` on `[0, 1]`; `reference` enables PSNR and SSIM.
    pub fn score(name: impl Into<String>, img: &Image, reference: Option<&Image>, cfg: &MetricsConfig) -> Result<Self> {
        let (psnr, ssim) = match reference {
            Some(r) => (Some(psnr(img, r, 1.0, cfg)?), Some(ssim(img, r, 1.0, cfg)?)),
            None => (None, None),
        };
        let u = uiqm_components(img, cfg);
        Ok(Self { image: name.into(), psnr, ssim, uiqm: u.uiqm, uicm: u.uicm, uism: u.uism, uciqe: uciqe(img, cfg), uiconm: u.uiconm })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<MetricsRecord>,
}

/// Column means; full-reference means cover only records that have them.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsMeans {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub uiqm: f64,
    pub uicm: f64,
    pub uism: f64,
    pub uciqe: f64,
    pub uiconm: f64,
}

pub const CSV_HEADER: &str = "image,psnr,ssim,uiqm,uicm,uism,uciqe,uiconm";

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl MetricsReport {
    pub fn push(&mut self, r: MetricsRecord) {
        self.records.push(r);
    }

    /// True when some but not all records have a reference.
    pub fn is_mixed(&self) -> bool {
        let paired = self.records.iter().filter(|r| r.psnr.is_some()).count();
        paired > 0 && paired < self.records.len()
    }

    pub fn means(&self) -> MetricsMeans {
        let r = &self.records;
        MetricsMeans {
            psnr: mean(r.iter().filter_map(|x| x.psnr)),
            ssim: mean(r.iter().filter_map(|x| x.ssim)),
            uiqm: mean(r.iter().map(|x| x.uiqm)).unwrap_or(0.0),
            uicm: mean(r.iter().map(|x| x.uicm)).unwrap_or(0.0),
            uism: mean(r.iter().map(|x| x.uism)).unwrap_or(0.0),
            uciqe: mean(r.iter().map(|x| x.uciqe)).unwrap_or(0.0),
            uiconm: mean(r.iter().map(|x| x.uiconm)).unwrap_or(0.0),
        }
    }

    /// One row per image then a `mean` row. Absent scores are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.image,
                opt(r.psnr),
                opt(r.ssim),
                r.uiqm,
                r.uicm,
                r.uism,
                r.uciqe,
                r.uiconm
            );
        }
        let m = self.means();
        let _ = writeln!(
            out,
            "mean,{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            opt(m.psnr),
            opt(m.ssim),
            m.uiqm,
            m.uicm,
            m.uism,
            m.uciqe,
            m.uiconm
        );
        out
    }
}
