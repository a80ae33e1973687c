//! Attention-pooled LSTM forecaster for per-category volume, price and
//! spoilage.
//!
//! One model is trained per category. Each model reads a window of daily
//! feature vectors and predicts the next day's normalized
//! `(volume, price, spoilage)`; a week ahead is produced by feeding each
//! prediction back as the newest input.

mod attention;
mod lstm;
mod metrics;
mod train;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use attention::{attention_pool, softmax};
pub use lstm::{
    backward, forward, forward_trace, loss, lstm_step, sigmoid, ForwardTrace, GateActivations,
    LstmParams, LstmState,
};
pub use metrics::{metrics, Metrics};
pub use train::{batch_gradient, train, train_from, TrainConfig, TrainOutcome};

use crate::data::{make_windows, raw_targets, DataError, Dataset, FeatureSet, Scaling, TARGET_DIM};
use crate::SCHEMA_VERSION;

/// Forecast horizon in days.
pub const HORIZON: usize = 7;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Windowing and architecture choices shared by training and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    /// When disabled the pipeline skips training and scores plans with
    /// historical spoilage.
    pub enabled: bool,
    pub window_len: usize,
    pub split_frac: f64,
    pub features: FeatureSet,
    pub train: TrainConfig,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window_len: 7,
            split_frac: 0.6,
            features: FeatureSet::default(),
            train: TrainConfig::default(),
        }
    }
}

/// A trained per-category forecaster plus the scaling it was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryModel {
    pub schema_version: u32,
    pub category: String,
    pub window_len: usize,
    pub split_frac: f64,
    pub features: FeatureSet,
    pub scaling: Scaling,
    pub params: LstmParams,
    pub loss_history: Vec<f64>,
}

/// Windows one category, trains on the training split and packages the
/// result.
pub fn fit_category(
    ds: &Dataset,
    category: &str,
    cfg: &ForecastConfig,
) -> Result<CategoryModel, ForecastError> {
    let w = make_windows(ds, category, cfg.window_len, cfg.split_frac, cfg.features)?;
    let out = train(&w.train, &cfg.train)?;
    Ok(CategoryModel {
        schema_version: SCHEMA_VERSION,
        category: category.to_string(),
        window_len: cfg.window_len,
        split_frac: cfg.split_frac,
        features: cfg.features,
        scaling: w.scaling,
        params: out.params,
        loss_history: out.loss_history,
    })
}

/// Per-variable held-out metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleMetrics {
    pub volume: Metrics,
    pub price: Metrics,
    pub spoilage: Metrics,
}

/// A prediction that was clipped into its valid range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub day: usize,
    pub variable: String,
    pub raw: f64,
    pub clamped: f64,
}

/// Seven-day forecast for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastBundle {
    pub schema_version: u32,
    pub category: String,
    pub horizon: usize,
    pub dates: Vec<NaiveDate>,
    pub volumes: Vec<f64>,
    pub prices: Vec<f64>,
    pub spoilage: Vec<f64>,
    /// Attention weights of each forecast step's window, oldest day first.
    pub attention: Vec<Vec<f64>>,
    pub metrics: BundleMetrics,
    pub clamped: Vec<ClampEvent>,
}

const VARIABLES: [&str; TARGET_DIM] = ["volume", "price", "spoilage"];

/// Maps a normalized prediction to original units and clips it into range.
fn to_units(scaling: &Scaling, z: &[f64]) -> ([f64; TARGET_DIM], Vec<(usize, f64, f64)>) {
    let mut out = [0.0; TARGET_DIM];
    let mut clips = Vec::new();
    for k in 0..TARGET_DIM {
        let raw = scaling.denormalize(k, z[k]);
        let v = match k {
            0 => raw.max(0.0),
            1 => raw.max(f64::MIN_POSITIVE),
            _ => raw.clamp(0.0, 1.0),
        };
        if v != raw {
            clips.push((k, raw, v));
        }
        out[k] = v;
    }
    (out, clips)
}

fn held_out_metrics(model: &CategoryModel, ds: &Dataset) -> Result<BundleMetrics, ForecastError> {
    let w = make_windows(
        ds,
        &model.category,
        model.window_len,
        model.split_frac,
        model.features,
    )?;
    if w.scaling != model.scaling {
        return Err(ForecastError::Insufficient(format!(
            "model for `{}` was fitted on different history; retrain first",
            model.category
        )));
    }
    if w.test.len() < 2 {
        return Err(ForecastError::Insufficient(
            "held-out split has fewer than 2 windows".into(),
        ));
    }
    // actuals come from the raw series: the test split may exceed the
    // training range that normalization clips to
    let series = ds.series(&model.category)?;
    let rows = raw_targets(series);
    let mut pred = vec![Vec::new(); TARGET_DIM];
    let mut actual = vec![Vec::new(); TARGET_DIM];
    for win in &w.test {
        let p = forward(&model.params, &win.inputs)?;
        let (units, _) = to_units(&model.scaling, &p);
        let t = series
            .iter()
            .position(|r| r.date == win.target_date)
            .expect("target date lies in series");
        for k in 0..TARGET_DIM {
            pred[k].push(units[k]);
            actual[k].push(rows[t][k]);
        }
    }
    Ok(BundleMetrics {
        volume: metrics(&pred[0], &actual[0])?,
        price: metrics(&pred[1], &actual[1])?,
        spoilage: metrics(&pred[2], &actual[2])?,
    })
}

/// Recursive seven-day forecast from the end of the category's history,
/// with metrics on the model's held-out split.
pub fn forecast_week(model: &CategoryModel, ds: &Dataset) -> Result<ForecastBundle, ForecastError> {
    let series = ds.series(&model.category)?;
    if series.len() < model.window_len {
        return Err(ForecastError::Insufficient(format!(
            "{} days of history, window needs {}",
            series.len(),
            model.window_len
        )));
    }
    let metrics = held_out_metrics(model, ds)?;
    let tail = &series[series.len() - model.window_len..];
    let mut window: Vec<Vec<f64>> = tail
        .iter()
        .map(|r| {
            let mut z = [0.0; TARGET_DIM];
            let raw = [r.volume, r.unit_price, r.spoilage_rate];
            for k in 0..TARGET_DIM {
                z[k] = model.scaling.normalize(k, raw[k]);
            }
            model.features.encode(&z, r.date)
        })
        .collect();

    let last = tail.last().expect("nonempty").date;
    let mut bundle = ForecastBundle {
        schema_version: SCHEMA_VERSION,
        category: model.category.clone(),
        horizon: HORIZON,
        dates: Vec::with_capacity(HORIZON),
        volumes: Vec::with_capacity(HORIZON),
        prices: Vec::with_capacity(HORIZON),
        spoilage: Vec::with_capacity(HORIZON),
        attention: Vec::with_capacity(HORIZON),
        metrics,
        clamped: Vec::new(),
    };
    for day in 0..HORIZON {
        let tr = forward_trace(&model.params, &window)?;
        let date = last + Duration::days(day as i64 + 1);
        let (units, clips) = to_units(&model.scaling, &tr.prediction);
        for (k, raw, v) in clips {
            bundle.clamped.push(ClampEvent {
                day: day + 1,
                variable: VARIABLES[k].to_string(),
                raw,
                clamped: v,
            });
        }
        bundle.dates.push(date);
        bundle.volumes.push(units[0]);
        bundle.prices.push(units[1]);
        bundle.spoilage.push(units[2]);
        bundle.attention.push(tr.attention);

        let mut z = [0.0; TARGET_DIM];
        for k in 0..TARGET_DIM {
            z[k] = model.scaling.normalize(k, units[k]);
        }
        window.remove(0);
        window.push(model.features.encode(&z, date));
    }
    Ok(bundle)
}

/// Mean spoilage per forecast day, used as the default when forecasting is
/// disabled.
pub fn historical_spoilage(ds: &Dataset, category: &str) -> Result<Vec<f64>, ForecastError> {
    let series = ds.series(category)?;
    let pairs: Vec<(f64, f64)> = series.iter().map(|r| (r.volume, r.spoilage_rate)).collect();
    let rate = crate::pricing::weighted_loss_rate(&pairs)
        .map_err(|e| ForecastError::Insufficient(e.to_string()))?;
    Ok(vec![rate; HORIZON])
}
