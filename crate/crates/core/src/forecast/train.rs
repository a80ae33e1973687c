use serde::{Deserialize, Serialize};

use super::lstm::{backward, LstmParams};
use super::ForecastError;
use crate::data::WindowedSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub gradient_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 8,
            learning_rate: 0.5,
            epochs: 600,
            seed: 0,
            gradient_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ForecastError::Config(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if self.epochs == 0 || self.hidden_dim == 0 {
            return Err(ForecastError::Config(
                "epochs and hidden_dim must be >= 1".into(),
            ));
        }
        if matches!(self.gradient_clip, Some(c) if c <= 0.0) {
            return Err(ForecastError::Config(
                "gradient_clip must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: LstmParams,
    /// Mean per-window loss before each epoch's update, then once more after
    /// the final update.
    pub loss_history: Vec<f64>,
}

impl TrainOutcome {
    /// `epoch,loss` rows.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (e, l) in self.loss_history.iter().enumerate() {
            out.push_str(&format!("{e},{l}\n"));
        }
        out
    }
}

/// Mean loss and mean gradient over a batch of windows.
pub fn batch_gradient(
    params: &LstmParams,
    windows: &[WindowedSeries],
) -> Result<(f64, LstmParams), ForecastError> {
    let mut total = LstmParams::zeros(params.input_dim, params.hidden_dim, params.output_dim);
    let mut loss = 0.0;
    for w in windows {
        let (l, g) = backward(params, &w.inputs, &w.target)?;
        loss += l;
        total.axpy(1.0, &g);
    }
    let n = windows.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

/// Full-batch gradient descent from a seeded initialization.
pub fn train(windows: &[WindowedSeries], cfg: &TrainConfig) -> Result<TrainOutcome, ForecastError> {
    cfg.validate()?;
    let first = windows
        .first()
        .ok_or_else(|| ForecastError::Insufficient("no training windows".into()))?;
    let input_dim = first.inputs.first().map(Vec::len).unwrap_or(0);
    let params = LstmParams::init(input_dim, cfg.hidden_dim, first.target.len(), cfg.seed);
    train_from(params, windows, cfg)
}

pub fn train_from(
    mut params: LstmParams,
    windows: &[WindowedSeries],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ForecastError> {
    let mut loss_history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, mut grad) = batch_gradient(&params, windows)?;
        if !loss.is_finite() {
            return Err(ForecastError::Diverged { epoch });
        }
        loss_history.push(loss);
        if let Some(clip) = cfg.gradient_clip {
            let norm = grad.norm();
            if norm > clip {
                grad.scale(clip / norm);
            }
        }
        params.axpy(-cfg.learning_rate, &grad);
        if !params.is_finite() {
            return Err(ForecastError::Diverged { epoch });
        }
    }
    let (final_loss, _) = batch_gradient(&params, windows)?;
    if !final_loss.is_finite() {
        return Err(ForecastError::Diverged { epoch: cfg.epochs });
    }
    loss_history.push(final_loss);
    Ok(TrainOutcome {
        params,
        loss_history,
    })
}
