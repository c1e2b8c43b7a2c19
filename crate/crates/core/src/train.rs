//! Mini-batch training with Adam, flip augmentation and evaluation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Adam, Matrix, Tape};
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::io::dataset::PoseSample;
use crate::model::{loss_mpjpe, PoseGrafModel};
use crate::skeleton::horizontal_flip;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub flip_augment: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            lr: 0.001,
            gamma: 0.96,
            epochs: 40,
            batch_size: 32,
            seed: 0,
            flip_augment: true,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.gamma > 0.0) {
            return Err(Error::Config("lr must be non-negative and gamma positive".into()));
        }
        Ok(())
    }
}

/// One row of the per-epoch loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss_mm: f64,
    pub eval_mpjpe_mm: Option<f64>,
}

pub const LOSS_LOG_HEADER: &str = "epoch,lr,train_loss_mm,eval_mpjpe_mm";

impl EpochLog {
    pub fn csv_line(&self) -> String {
        let eval = self.eval_mpjpe_mm.map(|v| format!("{v:?}")).unwrap_or_default();
        format!("{},{:?},{:?},{eval}", self.epoch, self.lr, self.train_loss_mm)
    }
}

/// Loss and parameter gradients of one sample, on its own tape.
pub fn sample_gradients(model: &PoseGrafModel, x: &Matrix, y: &Matrix) -> Result<(f64, Vec<Matrix>)> {
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let pred = model.forward(&tape, &p, x)?.pose3d;
    let loss = loss_mpjpe(&tape, &[pred], std::slice::from_ref(y))?;
    loss.backward()?;
    Ok((loss.value().get(0, 0), p.grads()))
}

/// Mean loss and gradient over a batch. Samples run in parallel; gradients
/// are summed in ascending sample order so the result does not depend on
/// thread scheduling.
pub fn batch_gradients(model: &PoseGrafModel, batch: &[(Matrix, Matrix)]) -> Result<(f64, Vec<Matrix>)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let per_sample: Vec<(f64, Vec<Matrix>)> = batch
        .par_iter()
        .map(|(x, y)| sample_gradients(model, x, y))
        .collect::<Result<_>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut iter = per_sample.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.axpy(1.0, gi);
        }
    }
    for g in &mut grads {
        *g = g.scale(inv);
    }
    Ok((loss * inv, grads))
}

/// One pass over `data` in a seeded random order. With `flip_augment`, each
/// sample is mirrored (2D input and 3D target together) with probability 0.5.
/// Applies the learning-rate decay at the end and returns the mean batch loss.
pub fn train_epoch(
    model: &mut PoseGrafModel,
    data: &[PoseSample],
    adam: &mut Adam,
    batch_size: usize,
    flip_augment: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let flips: Vec<bool> = order
        .iter()
        .map(|_| flip_augment && rng.random_bool(0.5))
        .collect();

    let mut total = 0.0;
    let mut batches = 0usize;
    for (idx, flip) in order.chunks(batch_size).zip(flips.chunks(batch_size)) {
        let batch = idx
            .iter()
            .zip(flip)
            .map(|(&i, &f)| {
                let (x, y) = (data[i].pose2d(), data[i].pose3d());
                if f {
                    let topo = model.topology();
                    Ok((horizontal_flip(&x, topo)?, horizontal_flip(&y, topo)?))
                } else {
                    Ok((x, y))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = batch_gradients(model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0 });
        }
        adam.step(model.params_mut().values_mut(), &grads)?;
        total += loss;
        batches += 1;
    }
    adam.epoch_decay();
    Ok(total / batches as f64)
}

/// Runs `settings.epochs` epochs, evaluating on `eval_data` after each one
/// when it is non-empty. `on_epoch` sees each log row as it is produced.
pub fn train(
    model: &mut PoseGrafModel,
    train_data: &[PoseSample],
    eval_data: &[PoseSample],
    settings: &TrainSettings,
    mut on_epoch: impl FnMut(&EpochLog, &PoseGrafModel) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    use rand::SeedableRng;
    settings.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut adam = Adam::new(settings.lr, settings.gamma);
    let mut logs = Vec::with_capacity(settings.epochs);
    for epoch in 1..=settings.epochs {
        let lr = adam.lr;
        let loss = train_epoch(
            model,
            train_data,
            &mut adam,
            settings.batch_size,
            settings.flip_augment,
            &mut rng,
        )
        .map_err(|e| match e {
            Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch },
            other => other,
        })?;
        let eval_mpjpe_mm = if eval_data.is_empty() {
            None
        } else {
            Some(evaluate(model, eval_data, false)?.overall.mpjpe_mm)
        };
        let row = EpochLog {
            epoch,
            lr,
            train_loss_mm: loss,
            eval_mpjpe_mm,
        };
        on_epoch(&row, model)?;
        logs.push(row);
    }
    Ok(logs)
}

/// Mean of the plain prediction and the un-flipped prediction of the
/// flipped input.
pub fn predict_with_flip_ensemble(model: &PoseGrafModel, pose2d: &Matrix) -> Result<Matrix> {
    let topo = model.topology();
    let plain = model.predict(pose2d)?;
    let mirrored = horizontal_flip(&model.predict(&horizontal_flip(pose2d, topo)?)?, topo)?;
    plain.zip_map(&mirrored, |a, b| 0.5 * (a + b))
}

pub fn predict_all(model: &PoseGrafModel, data: &[PoseSample], flip_ensemble: bool) -> Result<Vec<Matrix>> {
    data.par_iter()
        .map(|s| {
            let x = s.pose2d();
            if flip_ensemble {
                predict_with_flip_ensemble(model, &x)
            } else {
                model.predict(&x)
            }
        })
        .collect()
}

pub fn evaluate(model: &PoseGrafModel, data: &[PoseSample], flip_ensemble: bool) -> Result<MetricReport> {
    let preds = predict_all(model, data, flip_ensemble)?;
    let gts: Vec<Matrix> = data.iter().map(|s| s.pose3d()).collect();
    let actions: Vec<Option<String>> = data.iter().map(|s| s.action.clone()).collect();
    MetricReport::compute(&preds, &gts, &actions)
}
