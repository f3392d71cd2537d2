use std::io::Write;

use thiserror::Error;

use crate::config::{ConfigError, TrainConfig};
use crate::optim::Adam;
use crate::transformer::{Example, Model, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training order is empty")]
    EmptyOrder,
    #[error("training order refers to example {index} but only {len} exist")]
    BadIndex { index: u32, len: usize },
    #[error(
        "non-finite loss at step {step} (lr {lr:e}, loss {loss}, grad norm {grad_norm}, first bad gradient in {tensor})"
    )]
    NonFinite { step: u64, lr: f64, loss: f64, grad_norm: f64, tensor: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

pub fn write_log_csv<W: Write>(mut w: W, rows: &[LogRow]) -> std::io::Result<()> {
    writeln!(w, "step,lr,loss")?;
    for r in rows {
        writeln!(w, "{},{:e},{}", r.step, r.lr, r.loss)?;
    }
    Ok(())
}

/// Model plus optimizer state; `step` counts completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub adam: Adam,
    pub step: u64,
    pub last_loss: f64,
}

impl TrainState {
    pub fn new(model: Model, cfg: &TrainConfig) -> Self {
        let adam = Adam::new(model.params().len(), cfg.beta1, cfg.beta2, cfg.eps);
        Self { model, adam, step: 0, last_loss: f64::NAN }
    }
}

/// Example indices of the batch at `step`: a sliding window over `order`
/// that wraps around, so any step can be reproduced without replay.
pub fn batch_indices(order: &[u32], batch_size: usize, step: u64) -> Vec<u32> {
    let start = step as usize * batch_size;
    (0..batch_size).map(|i| order[(start + i) % order.len()]).collect()
}

/// Runs updates until `state.step == until` (capped at `cfg.steps`), calling
/// `log` after each.
pub fn train(
    state: &mut TrainState,
    cfg: &TrainConfig,
    data: &[Example],
    order: &[u32],
    until: u64,
    mut log: impl FnMut(LogRow),
) -> Result<(), TrainError> {
    cfg.validate()?;
    if order.is_empty() {
        return Err(TrainError::EmptyOrder);
    }
    if let Some(&index) = order.iter().find(|&&i| i as usize >= data.len()) {
        return Err(TrainError::BadIndex { index, len: data.len() });
    }
    while state.step < until.min(cfg.steps) {
        let batch: Vec<Example> =
            batch_indices(order, cfg.batch_size, state.step).into_iter().map(|i| data[i as usize]).collect();
        let lr = cfg.lr_at(state.step);
        let (loss, grad) = state.model.loss_and_grad(&batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let tensor = grad
                .iter()
                .position(|g| !g.is_finite())
                .map_or_else(|| "none".to_string(), |i| state.model.layout().name_of(i).to_string());
            return Err(TrainError::NonFinite {
                step: state.step,
                lr,
                loss,
                grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
                tensor,
            });
        }
        state.adam.step(state.model.params_mut(), &grad, lr);
        state.step += 1;
        state.last_loss = loss;
        log(LogRow { step: state.step, lr, loss });
    }
    Ok(())
}
