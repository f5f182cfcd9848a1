//! Mini-batch Adam training with early stopping on validation loss.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{AdamConfig, Architecture, Network, Tape, Tensor};
use crate::error::{Error, Result};
use crate::par;
use crate::sim::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub early_stop_patience: usize,
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            batch_size: 8,
            max_epochs: 50,
            early_stop_patience: 10,
            split_ratio: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!("split_ratio {} not in (0, 1)", self.split_ratio)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Deterministic shuffled split of `n` indices into (train, test).
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Config("cannot split an empty dataset".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * ratio).round() as usize;
    let test = idx.split_off(n_train.min(n));
    Ok((idx, test))
}

pub fn split_dataset(samples: &[Sample], ratio: f64, seed: u64) -> Result<(Vec<&Sample>, Vec<&Sample>)> {
    let (a, b) = split_indices(samples.len(), ratio, seed)?;
    Ok((a.into_iter().map(|i| &samples[i]).collect(), b.into_iter().map(|i| &samples[i]).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub network: Network<f32>,
    /// Row 0 holds the losses of the untrained network.
    pub curve: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

pub fn loss_curve_csv(curve: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for e in curve {
        s.push_str(&format!("{},{:.8},{:.8}\n", e.epoch, e.train_loss, e.val_loss));
    }
    s
}

/// Network input batch of the listed samples.
pub fn image_batch(samples: &[&Sample]) -> Result<Tensor<f32>> {
    let imgs: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    Tensor::stack(&imgs)
}

/// Training target of the listed samples for `arch`.
pub fn target_batch(arch: &Architecture, samples: &[&Sample]) -> Result<Tensor<f32>> {
    match arch {
        Architecture::Unet(_) => {
            let hms: Vec<Tensor<f32>> = samples.iter().map(|s| s.heatmap.to_tensor()).collect();
            let refs: Vec<&Tensor<f32>> = hms.iter().collect();
            Tensor::stack(&refs)
        }
        Architecture::Cnn(_) => {
            let mut data = Vec::with_capacity(3 * samples.len());
            for s in samples {
                match s.contacts.as_slice() {
                    [c] => data.extend([c.x_mm as f32, c.y_mm as f32, c.depth_mm as f32]),
                    other => {
                        return Err(Error::Schema(format!(
                            "regression baseline needs single-contact samples, sample {} has {}",
                            s.index,
                            other.len()
                        )))
                    }
                }
            }
            Tensor::from_vec(&[samples.len(), 3], data)
        }
    }
}

fn batch_loss(net: &Network<f32>, tape: &mut Tape<f32>, pred: crate::engine::Var, target: &Tensor<f32>) -> Result<crate::engine::Var> {
    match net.arch {
        Architecture::Unet(_) => tape.bce_loss(pred, target),
        Architecture::Cnn(_) => tape.mse_loss(pred, target),
    }
}

/// Mean per-sample loss of `net` over `samples`, forward only.
pub fn evaluate_loss(net: &Network<f32>, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("cannot evaluate loss on an empty set".into()));
    }
    const CHUNK: usize = 8;
    let chunks: Vec<&[&Sample]> = samples.chunks(CHUNK).collect();
    let sums = par::map_slice(&chunks, |chunk| -> Result<f64> {
        let x = image_batch(chunk)?;
        let t = target_batch(&net.arch, chunk)?;
        let mut tape = Tape::new();
        let vars: Vec<_> = net.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let xv = tape.constant(x);
        let y = net.forward(&mut tape, &vars, xv)?;
        let l = batch_loss(net, &mut tape, y, &t)?;
        Ok(tape.value(l).data()[0] as f64 * chunk.len() as f64)
    });
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok(total / samples.len() as f64)
}

/// One forward/backward/Adam step on a batch; returns the batch loss.
pub fn train_step(net: &mut Network<f32>, batch: &[&Sample], adam: &AdamConfig) -> Result<f64> {
    let x = image_batch(batch)?;
    let t = target_batch(&net.arch, batch)?;
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let xv = tape.constant(x);
    let y = net.forward(&mut tape, &vars, xv)?;
    let l = batch_loss(net, &mut tape, y, &t)?;
    let loss = tape.value(l).data()[0] as f64;
    if !loss.is_finite() {
        return Ok(loss);
    }
    let mut grads = tape.backward(l)?;
    for (p, &v) in net.params.iter_mut().zip(&vars) {
        match grads.take(v) {
            Some(g) => p.grad = g,
            None => p.zero_grad(),
        }
    }
    net.params.adam_step(adam)?;
    Ok(loss)
}

/// Trains `net` on `train` with early stopping on `val`.
pub fn train(mut net: Network<f32>, train: &[&Sample], val: &[&Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let adam = cfg.adam();
    let initial = EpochLoss {
        epoch: 0,
        train_loss: evaluate_loss(&net, train)?,
        val_loss: evaluate_loss(&net, val)?,
    };
    info!(
        "epoch 0: train {:.6} val {:.6}",
        initial.train_loss, initial.val_loss
    );
    let mut curve = vec![initial];
    let mut best = (net.clone(), 0usize, initial.val_loss);
    let mut wait = 0usize;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| train[i]).collect();
            let loss = train_step(&mut net, &batch, &adam).map_err(|e| match e {
                Error::NonFiniteGradient { .. } => Error::Diverged { epoch, batch: bi },
                e => e,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: bi });
            }
            sum += loss * batch.len() as f64;
        }
        let row = EpochLoss {
            epoch,
            train_loss: sum / train.len() as f64,
            val_loss: evaluate_loss(&net, val)?,
        };
        info!("epoch {epoch}: train {:.6} val {:.6}", row.train_loss, row.val_loss);
        curve.push(row);
        if row.val_loss < best.2 {
            best = (net.clone(), epoch, row.val_loss);
            wait = 0;
        } else {
            wait += 1;
            if wait > cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        network: best.0,
        curve,
        best_epoch: best.1,
        best_val_loss: best.2,
        stopped_early,
    })
}
