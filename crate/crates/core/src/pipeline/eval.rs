//! Inference outputs, metric reports and the ablation harness.

use std::fmt::Write as _;

use super::config::TrainConfig;
use super::data::Sample;
use super::train::{train, CurvePoint, TrainOutcome};
use crate::error::Result;
use crate::image::Image;
use crate::metrics::{MetricsConfig, MetricsRecord, MetricsReport};
use crate::model::{Ablation, LsNet};

/// Enhanced image and its two residual maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Enhanced {
    /// `I + dx - ox`, clamped to `[0, 1]`.
    pub output: Image,
    pub dx: Image,
    pub ox: Image,
}

impl Enhanced {
    /// Signed map shown as `0.5 + v / 2`, so zero is mid-grey.
    pub fn visualize(map: &Image) -> Image {
        map.map(|v| (0.5 + v / 2.0).clamp(0.0, 1.0))
    }

    /// `dx - ox`.
    pub fn net_change(&self) -> Image {
        let mut d = self.dx.clone();
        d.data_mut().iter_mut().zip(self.ox.data()).for_each(|(a, b)| *a -= b);
        d
    }
}

pub fn enhance(model: &mut LsNet<f32>, img: &Image) -> Result<Enhanced> {
    let d = model.enhance(&img.to_tensor())?;
    Ok(Enhanced { output: Image::from_tensor(&d.output, 0)?.clamp01(), dx: Image::from_tensor(&d.dx, 0)?, ox: Image::from_tensor(&d.ox, 0)? })
}

/// Score each sample, enhanced by `model` when given, otherwise as is.
/// Samples without a reference get no-reference columns only.
pub fn evaluate(mut model: Option<&mut LsNet<f32>>, samples: &[Sample]) -> Result<MetricsReport> {
    let cfg = MetricsConfig::default();
    let mut report = MetricsReport::default();
    for s in samples {
        let img = match model.as_deref_mut() {
            Some(m) => enhance(m, &s.raw)?.output,
            None => s.raw.clone(),
        };
        report.push(MetricsRecord::score(&s.name, &img, s.reference.as_ref(), &cfg)?);
    }
    Ok(report)
}

pub struct AblationRun {
    pub name: &'static str,
    pub ablation: Ablation,
    pub params: usize,
    pub outcome: TrainOutcome,
    /// Validation report of the final model.
    pub report: MetricsReport,
}

impl AblationRun {
    pub fn final_val_psnr(&self) -> Option<f64> {
        self.report.means().psnr
    }

    pub fn curve(&self) -> &[CurvePoint] {
        &self.outcome.curve
    }
}

/// Train and score each variant in `variants` under the same seed and data.
pub fn ablate_variants(base: &TrainConfig, variants: &[(&'static str, Ablation)], train_set: &[Sample], val: &[Sample], mut progress: impl FnMut(&str, &CurvePoint)) -> Result<Vec<AblationRun>> {
    let mut runs = Vec::new();
    for &(name, ablation) in variants {
        let mut cfg = base.clone();
        cfg.model.ablation = ablation;
        let mut outcome = train(&cfg, train_set, val, |p| progress(name, p))?;
        let params = outcome.model.params.count();
        let report = evaluate(Some(&mut outcome.model), val)?;
        runs.push(AblationRun { name, ablation, params, outcome, report });
    }
    Ok(runs)
}

/// All five variants of the ablation table.
pub fn ablate(base: &TrainConfig, train_set: &[Sample], val: &[Sample], progress: impl FnMut(&str, &CurvePoint)) -> Result<Vec<AblationRun>> {
    ablate_variants(base, &Ablation::table(), train_set, val, progress)
}

/// Comparison table: one row per variant, then the validation curves side by
/// side.
pub fn ablation_table(runs: &[AblationRun]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    let mut out = String::from("variant,params,val_psnr,val_ssim,uiqm,uciqe\n");
    for r in runs {
        let m = r.report.means();
        let _ = writeln!(out, "{},{},{},{},{:.4},{:.4}", r.name, r.params, opt(m.psnr), opt(m.ssim), m.uiqm, m.uciqe);
    }
    out.push_str("\nepoch");
    for r in runs {
        let _ = write!(out, ",{}", r.name);
    }
    out.push('\n');
    if let Some(first) = runs.first() {
        for (i, p) in first.outcome.curve.iter().enumerate() {
            if p.val_psnr.is_none() {
                continue;
            }
            let _ = write!(out, "{}", p.epoch);
            for r in runs {
                let _ = write!(out, ",{}", opt(r.outcome.curve.get(i).and_then(|q| q.val_psnr)));
            }
            out.push('\n');
        }
    }
    out
}
