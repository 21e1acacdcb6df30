use std::io::Write;
use std::path::Path;

use log::debug;

use super::{loss_and_grad, Adapter, NoiseDraw, Objective, ToyDataset, ToyModel};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::{ParamSet, Rng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl Optimizer {
    pub fn adamw() -> Self {
        Optimizer::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_videos: usize,
    pub frames_per_video: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda_l1: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub exec: Exec,
}

/// Rate at which plain SGD makes visible progress within a few hundred steps.
pub const DEFAULT_SGD_RATE: f64 = 2e-3;
/// Rate used with AdamW.
pub const DEFAULT_ADAMW_RATE: f64 = 1e-5;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_videos: 8,
            frames_per_video: 24,
            steps: 200,
            learning_rate: DEFAULT_SGD_RATE,
            lambda_l1: 1e-3,
            seed: 0,
            optimizer: Optimizer::Sgd,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_videos == 0 || self.frames_per_video == 0 {
            return Err(Error::validation("batch size and frames per video must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return Err(Error::validation("lambda_l1 must be non-negative"));
        }
        Ok(())
    }
}

/// Parameter hashes of the frozen backbone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrozenHashes {
    pub denoiser: String,
    pub codec: String,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub adapter: Adapter,
    /// Total loss of each step, evaluated before that step's update.
    pub history: Vec<f64>,
    pub frozen_before: FrozenHashes,
    pub frozen_after: FrozenHashes,
}

impl TrainOutcome {
    /// Mean of the first and last `window` losses.
    pub fn window_means(&self, window: usize) -> Option<(f64, f64)> {
        let n = self.history.len();
        if window == 0 || n < window {
            return None;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.history[..window]), mean(&self.history[n - window..])))
    }
}

/// Gradient descent on the adapter only. Batches and noise come from
/// sub-stream 1 of `config.seed`; the backbone is borrowed immutably.
pub fn train(model: &ToyModel, adapter: Adapter, dataset: &ToyDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let frozen_before = model.frozen_hashes();
    let obj = Objective::new(model, config.lambda_l1);
    let mut rng = Rng::stream(config.seed, 1);
    let mut adapter = adapter;
    let mut params = adapter.flatten();
    let mut moments = match config.optimizer {
        Optimizer::Sgd => None,
        Optimizer::AdamW { .. } => Some((vec![0.0; params.len()], vec![0.0; params.len()])),
    };
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let batch = dataset.sample_batch(config.batch_videos, config.frames_per_video, &mut rng)?;
        let draws = NoiseDraw::sample_batch(&batch, &model.schedule, &mut rng);
        let (parts, grad) = loss_and_grad(&batch, &draws, &adapter, &obj, config.exec)?;
        if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {step} (cldm {}, reg {})",
                parts.cldm, parts.reg
            )));
        }
        history.push(parts.total);
        debug!("step {step}: loss {:.6}", parts.total);

        let lr = config.learning_rate;
        match (config.optimizer, moments.as_mut()) {
            (
                Optimizer::AdamW {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                },
                Some((m, v)),
            ) => {
                let k = (step + 1) as i32;
                let (c1, c2) = (1.0 - beta1.powi(k), 1.0 - beta2.powi(k));
                for i in 0..params.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let update = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    params[i] -= lr * (update + weight_decay * params[i]);
                }
            }
            _ => {
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
        }
        adapter.assign_flat(&params);
    }

    Ok(TrainOutcome {
        adapter,
        history,
        frozen_before,
        frozen_after: model.frozen_hashes(),
    })
}

/// One loss value per line.
pub fn write_loss_history(history: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in history {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}
