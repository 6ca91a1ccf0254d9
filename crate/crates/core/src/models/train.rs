use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use crate::error::{Error, Result};
use crate::layers::Parameters;
use crate::pipeline::SupervisedWindow;
use crate::scalar::Scalar;
use crate::tensor::Tape;

use super::config::TrainingConfig;
use super::optim::{clip_grad_norm, Adam};
use super::seq2seq::Seq2SeqModel;

/// Per-epoch training summary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    /// Mean mini-batch loss (normalised MSE) per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainingHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// One forward/backward/update step on a mini-batch. Returns the batch loss.
pub fn train_step<T: Scalar>(
    model: &mut Seq2SeqModel<T>,
    optimizer: &mut Adam<T>,
    batch: &[&SupervisedWindow],
    teacher: &[bool],
    clip_norm: T,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let loss = model.loss(&mut tape, &bound, batch, Some(teacher))?;
    let value = tape.value(loss).item()?.as_f64();
    if !value.is_finite() {
        return Err(Error::numeric(format!("non-finite loss {value}")));
    }
    let grads = tape.backward(loss)?;
    let mut params: Vec<_> = model.parameters_mut().into_iter().map(|(_, t)| t).collect();
    for p in params.iter_mut() {
        p.zero_grad();
    }
    drop(params);
    model.accumulate(&grads, &bound)?;
    let mut params: Vec<_> = model.parameters_mut().into_iter().map(|(_, t)| t).collect();
    clip_grad_norm(&mut params, clip_norm);
    optimizer.step(&mut params);
    Ok(value)
}

/// Mini-batch training with Adam, gradient clipping and scheduled teacher
/// forcing. Shuffling and teacher-forcing draws come from `config.seed`, so a
/// run is reproducible bit for bit.
///
/// `on_epoch` sees `(epoch, mean_loss)` after every epoch.
pub fn train<T: Scalar>(
    model: &mut Seq2SeqModel<T>,
    windows: &[SupervisedWindow],
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainingHistory> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::contract("no training windows"));
    }
    let mut rng = Pcg64::seed_from_u64(config.seed);
    let mut optimizer = Adam::new(T::of(config.learning_rate));
    let clip = T::of(config.clip_norm);
    let tau = model.config.n_look_ahead;
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = TrainingHistory::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&SupervisedWindow> = chunk.iter().map(|&i| &windows[i]).collect();
            let teacher: Vec<bool> = (0..tau).map(|_| rng.random::<f64>() < config.teacher_forcing).collect();
            let loss = match train_step(model, &mut optimizer, &batch, &teacher, clip) {
                Ok(l) => l,
                Err(Error::Numeric(_)) => return Err(Error::Divergence { epoch, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            // weight by batch size so the epoch loss is a per-window mean
            total += loss * batch.len() as f64;
        }
        let mean = total / windows.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        log::debug!("epoch {epoch}: loss {mean:.6}");
        on_epoch(epoch, mean);
        history.epoch_losses.push(mean);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, ModelScalers};
    use crate::pipeline::{make_windows, parse_ts, QuarterHourRecord, SLICE};

    fn records(n: usize, f: impl Fn(usize) -> f64) -> Vec<QuarterHourRecord> {
        let t0 = parse_ts("2019-03-04T00:00:00Z").unwrap();
        (0..n).map(|i| QuarterHourRecord::new(t0 + SLICE * i as i32, f(i), None).unwrap()).collect()
    }

    #[test]
    fn constant_target_loss_falls() {
        let recs = records(80, |i| if i % 2 == 0 { 3.0 } else { 5.0 });
        let cfg = ModelConfig::new(4, 2, 6, false);
        let scalers = ModelScalers::fit(&recs, &cfg).unwrap();
        let mut m = Seq2SeqModel::<f64>::new(cfg, scalers, 1).unwrap();
        let ws = make_windows(&recs, 4, 2).unwrap();
        let tc = TrainingConfig { epochs: 30, batch_size: 8, learning_rate: 1e-2, ..Default::default() };
        let h = train(&mut m, &ws, &tc, |_, _| {}).unwrap();
        assert!(h.final_loss().unwrap() < 0.5 * h.epoch_losses[0]);
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let recs = records(40, |i| (i % 5) as f64);
        let cfg = ModelConfig::new(3, 2, 4, true);
        let scalers = ModelScalers::fit(&recs, &cfg).unwrap();
        let mut m = Seq2SeqModel::<f64>::new(cfg, scalers, 5).unwrap();
        let before = m.clone();
        let ws = make_windows(&recs, 3, 2).unwrap();
        let tc = TrainingConfig { epochs: 2, batch_size: 4, learning_rate: 0.0, ..Default::default() };
        train(&mut m, &ws, &tc, |_, _| {}).unwrap();
        for ((_, a), (_, b)) in m.parameters().into_iter().zip(before.parameters()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let cfg = ModelConfig::new(3, 2, 4, false);
        let mut m = Seq2SeqModel::<f64>::new(cfg, ModelScalers::identity(), 0).unwrap();
        assert!(matches!(train(&mut m, &[], &TrainingConfig::default(), |_, _| {}), Err(Error::Contract(_))));
    }
}
