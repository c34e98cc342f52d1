//! Training with L1 loss and Adam, with periodic validation.

use super::config::TrainConfig;
use super::data::{epoch_batches, stack, Sample};
use crate::autodiff::{BnMode, Graph};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{psnr, MetricsConfig};
use crate::model::LsNet;
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    /// Mean L1 over the epoch's batches, weighted by batch size.
    pub train_loss: f64,
    /// Mean validation PSNR, on validation epochs only.
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: LsNet<f32>,
    pub optimizer: AdamState<f32>,
    /// Model with the highest validation PSNR (the final model if there is
    /// no validation data).
    pub best: LsNet<f32>,
    pub best_val_psnr: Option<f64>,
    pub curve: Vec<CurvePoint>,
    /// L1 over the training set before the first update.
    pub initial_loss: f64,
    /// L1 over the training set after the last update.
    pub final_loss: f64,
    pub steps: u64,
}

/// Mean L1 over `samples` using batch statistics, without touching the
/// model's running statistics.
pub fn dataset_l1(model: &LsNet<f32>, samples: &[Sample], batch_size: usize) -> Result<f64> {
    let mut probe = model.clone();
    let (mut total, mut count) = (0.0, 0usize);
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y): (Tensor<f32>, Tensor<f32>) = stack(samples, chunk)?;
        let d = probe.run(&x, BnMode::Train)?;
        let l1: f64 = d.output.data().iter().zip(y.data()).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum();
        total += l1;
        count += y.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Enhanced output clamped to `[0, 1]`.
pub fn enhance_clamped(model: &mut LsNet<f32>, img: &Image) -> Result<Image> {
    let d = model.enhance(&img.to_tensor())?;
    Ok(Image::from_tensor(&d.output, 0)?.clamp01())
}

/// Mean PSNR of clamped outputs against references.
pub fn validation_psnr(model: &mut LsNet<f32>, val: &[Sample]) -> Result<Option<f64>> {
    let cfg = MetricsConfig::default();
    let mut scores = Vec::new();
    for s in val {
        if let Some(r) = &s.reference {
            let out = enhance_clamped(model, &s.raw)?;
            scores.push(psnr(&out, r, 1.0, &cfg)?);
        }
    }
    Ok((!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
}

/// Train from a fresh seeded initialisation. `progress` sees every curve
/// point as it is produced.
pub fn train(config: &TrainConfig, train: &[Sample], val: &[Sample], mut progress: impl FnMut(&CurvePoint)) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training images".into()));
    }
    let mut model = LsNet::<f32>::new(config.model.clone(), config.seed)?;
    let mut adam = AdamState::new(AdamConfig { lr: config.lr, ..Default::default() }, model.params.tensors());
    let initial_loss = dataset_l1(&model, train, config.batch_size)?;
    let mut curve = Vec::new();
    let mut best = model.clone();
    let mut best_val: Option<f64> = None;
    let mut step = 0u64;

    for epoch in 1..=config.epochs {
        let (mut total, mut count) = (0.0, 0usize);
        for batch in epoch_batches(train.len(), config.batch_size, config.seed, epoch as u64)? {
            let (x, y): (Tensor<f32>, Tensor<f32>) = stack(train, &batch)?;
            let mut g = Graph::new();
            let fv = model.forward_graph(&mut g, &x, BnMode::Train)?;
            let target = g.constant(y);
            let loss = g.l1_loss(fv.output, target)?;
            let lv = g.value(loss).data()[0];
            if !lv.is_finite() {
                let culprit = g.first_non_finite().map(|v| g.describe(v)).unwrap_or_else(|| "loss".into());
                return Err(Error::NonFinite { tensor: culprit, step });
            }
            let mut grads = g.backward(loss)?;
            let gs = fv
                .bound
                .vars()
                .iter()
                .zip(model.params.names())
                .map(|(&v, name)| {
                    let t = grads.take(v).unwrap_or_else(|| Tensor::zeros(g.shape(v)));
                    if t.is_finite() {
                        Ok(t)
                    } else {
                        Err(Error::NonFinite { tensor: format!("gradient of {name}"), step })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Tensor<f32>> = gs.iter().collect();
            adam.step(&mut model.params.tensors_mut(), &refs)?;
            step += 1;
            total += lv as f64 * batch.len() as f64;
            count += batch.len();
        }
        let val_psnr = if epoch % config.val_interval == 0 || epoch == config.epochs { validation_psnr(&mut model, val)? } else { None };
        if let Some(p) = val_psnr {
            if best_val.is_none_or(|b| p > b) {
                best_val = Some(p);
                best = model.clone();
            }
        }
        let point = CurvePoint { epoch, train_loss: total / count as f64, val_psnr };
        progress(&point);
        curve.push(point);
    }
    if best_val.is_none() {
        best = model.clone();
    }
    let final_loss = dataset_l1(&model, train, config.batch_size)?;
    Ok(TrainOutcome { model, optimizer: adam, best, best_val_psnr: best_val, curve, initial_loss, final_loss, steps: step })
}

/// Curve as CSV: `epoch,train_loss,val_psnr`.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("epoch,train_loss,val_psnr\n");
    for p in curve {
        out.push_str(&format!("{},{:.8},{}\n", p.epoch, p.train_loss, p.val_psnr.map(|v| format!("{v:.6}")).unwrap_or_default()));
    }
    out
}
