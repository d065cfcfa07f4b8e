//! Model-ready instances: context/prediction windows with lag features,
//! calendar features, static sensor ids, past-only covariate channels and
//! per-window scaling.
//!
//! An instance covers `context_length + prediction_length` consecutive grid
//! positions. Lag and calendar features exist for the full window; covariate
//! channels carry raw values on the context portion and are zeroed (with a
//! false availability indicator) on the prediction portion, because future
//! covariate values are unknown at forecast time. No feature value may
//! derive from dataset positions at or beyond the prediction portion — the
//! future target values travel only in `target_future` as labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mi::CovariateSelection;
use crate::timeseries::{SensorDataset, SensorId};

/// Calendar features, each scaled to [-0.5, 0.5] except `Age`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeFeature {
    MinuteOfHour,
    HourOfDay,
    DayOfWeek,
    /// log(1 + position index from series start); grows without bound.
    Age,
}

pub const DEFAULT_TIME_FEATURES: [TimeFeature; 4] = [
    TimeFeature::MinuteOfHour,
    TimeFeature::HourOfDay,
    TimeFeature::DayOfWeek,
    TimeFeature::Age,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub context_length: usize,
    pub prediction_length: usize,
    /// Positive step offsets, e.g. recent steps plus daily/weekly neighbors.
    pub lags: Vec<usize>,
    pub time_features: Vec<TimeFeature>,
    /// Covariate sensors for the (single) target; empty for no-covariate
    /// training.
    pub covariates: Option<CovariateSelection>,
    /// Restrict instance targets to these sensors; `None` means every sensor
    /// in the dataset.
    pub targets: Option<Vec<SensorId>>,
}

impl FeatureConfig {
    pub fn new(context_length: usize, prediction_length: usize, lags: Vec<usize>) -> Self {
        FeatureConfig {
            context_length,
            prediction_length,
            lags,
            time_features: DEFAULT_TIME_FEATURES.to_vec(),
            covariates: None,
            targets: None,
        }
    }

    pub fn window_len(&self) -> usize {
        self.context_length + self.prediction_length
    }

    pub fn max_lag(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(0)
    }

    pub fn num_covariates(&self) -> usize {
        self.covariates.as_ref().map_or(0, |c| c.covariates.len())
    }

    fn validate(&self) -> Result<()> {
        if self.prediction_length == 0 || self.context_length == 0 {
            return Err(Error::Validation("window lengths must be positive".into()));
        }
        if self.lags.iter().any(|&l| l == 0) {
            return Err(Error::Validation("lag offsets must be positive".into()));
        }
        Ok(())
    }
}

/// One (context, prediction) window of one target sensor.
///
/// All stored values are raw (unscaled); the model divides by `scale`.
/// Unobserved target slots hold 0.0 so downstream arithmetic never sees
/// sentinels; the observation masks say which slots are real.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub sensor: SensorId,
    /// Dataset position of the first context step.
    pub window_start: usize,
    pub target_context: Vec<f64>,
    pub target_future: Vec<f64>,
    pub observed_context: Vec<bool>,
    pub observed_future: Vec<bool>,
    /// Row-major `[window_len × lags]`, filled only from positions before
    /// the prediction portion; later-than-context references are zero.
    pub lag_features: Vec<f64>,
    /// Row-major `[window_len × time_features]`.
    pub time_features: Vec<f64>,
    /// Index of the target sensor in the dataset id order.
    pub static_id: usize,
    /// Row-major `[window_len × covariates]`; zero wherever the indicator
    /// is false.
    pub covariate_channels: Vec<f64>,
    /// True exactly on the context portion of every covariate channel.
    pub covariate_indicator: Vec<bool>,
    /// Mean absolute observed context value, floored at 1.0.
    pub scale: f64,
}

/// Calendar feature vector for one grid position.
///
/// `start` and `step` are epoch seconds; `position` indexes from the series
/// start (it feeds the age feature).
pub fn time_features(start: i64, step: i64, position: usize, set: &[TimeFeature]) -> Vec<f64> {
    let ts = start + position as i64 * step;
    // days since 1970-01-01 (a Thursday); Monday-based weekday index
    let days = ts.div_euclid(86_400);
    let weekday = (days + 3).rem_euclid(7);
    let secs_of_day = ts.rem_euclid(86_400);
    let hour = secs_of_day / 3600;
    let minute = (secs_of_day % 3600) / 60;
    set.iter()
        .map(|f| match f {
            TimeFeature::MinuteOfHour => minute as f64 / 59.0 - 0.5,
            TimeFeature::HourOfDay => hour as f64 / 23.0 - 0.5,
            TimeFeature::DayOfWeek => weekday as f64 / 6.0 - 0.5,
            TimeFeature::Age => (1.0 + position as f64).ln(),
        })
        .collect()
}

/// Default lag set for a sampling step: recent steps plus neighborhoods of
/// the daily, two-day and weekly seasonalities. Daily-or-coarser data gets
/// the short set {1, 2, 3, 7}.
pub fn default_lags(step_secs: i64) -> Vec<usize> {
    let day = 86_400 / step_secs.max(1);
    if day <= 1 {
        return vec![1, 2, 3, 7];
    }
    let day = day as usize;
    let mut lags = vec![1, 2, 3, 4, 5, 6, 7];
    for anchor in [day, 2 * day, 7 * day] {
        lags.extend_from_slice(&[anchor - 1, anchor, anchor + 1]);
    }
    lags
}

/// Drop lags that cannot be served by the available history; warns when it
/// removes anything.
pub fn admissible_lags(lags: &[usize], context_length: usize, history_len: usize) -> Vec<usize> {
    let keep: Vec<usize> = lags
        .iter()
        .copied()
        .filter(|&l| l + context_length + 1 <= history_len)
        .collect();
    if keep.len() != lags.len() {
        log::warn!(
            "dropped {} lag(s) not servable by a history of {} steps",
            lags.len() - keep.len(),
            history_len
        );
    }
    keep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Uniformly sampled window starts, seeded; an infinite stream.
    Train { seed: u64 },
    /// The last admissible window of each target sensor.
    Validate,
    /// Same window arithmetic as validate, used for test-time forecasting.
    Forecast,
}

/// Build instances for the dataset under the config.
///
/// Train mode returns an endless seeded sampler via [`InstanceStream`];
/// validate/forecast modes yield exactly one instance per target sensor.
pub fn make_instances(
    dataset: &SensorDataset,
    config: &FeatureConfig,
    mode: Mode,
) -> Result<InstanceStream> {
    config.validate()?;
    let targets: Vec<usize> = match (&config.covariates, &config.targets) {
        (Some(sel), _) => vec![dataset
            .index_of(&sel.target)
            .ok_or_else(|| Error::Validation(format!("target {} not in dataset", sel.target)))?],
        (None, Some(ids)) => ids
            .iter()
            .map(|id| {
                dataset
                    .index_of(id)
                    .ok_or_else(|| Error::Validation(format!("target {id} not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?,
        (None, None) => (0..dataset.num_sensors()).collect(),
    };
    let covariate_indices: Vec<usize> = match &config.covariates {
        Some(sel) => sel
            .covariates
            .iter()
            .map(|id| {
                dataset
                    .index_of(id)
                    .ok_or_else(|| Error::Validation(format!("covariate {id} not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };

    let min_start = config.max_lag();
    let window = config.window_len();
    if min_start + window > dataset.len() {
        return Err(Error::InsufficientData(format!(
            "no admissible window: need {} steps (max lag {} + window {}), have {}",
            min_start + window,
            min_start,
            window,
            dataset.len()
        )));
    }
    let last_start = dataset.len() - window;

    Ok(InstanceStream {
        dataset: dataset.clone(),
        config: config.clone(),
        covariate_indices,
        targets,
        min_start,
        last_start,
        state: match mode {
            Mode::Train { seed } => StreamState::Random(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Validate | Mode::Forecast => StreamState::LastWindow { next: 0 },
        },
    })
}

enum StreamState {
    Random(ChaCha8Rng),
    LastWindow { next: usize },
}

/// Deterministic instance source; see [`make_instances`].
pub struct InstanceStream {
    dataset: SensorDataset,
    config: FeatureConfig,
    covariate_indices: Vec<usize>,
    targets: Vec<usize>,
    min_start: usize,
    last_start: usize,
    state: StreamState,
}

impl InstanceStream {
    fn build(&self, sensor_idx: usize, start: usize) -> TrainingInstance {
        let cfg = &self.config;
        let series = &self.dataset.series()[sensor_idx];
        let window = cfg.window_len();
        let ctx = cfg.context_length;
        let horizon = cfg.prediction_length;
        let ctx_end = start + ctx;

        let mut target_context = Vec::with_capacity(ctx);
        let mut observed_context = Vec::with_capacity(ctx);
        for p in start..ctx_end {
            let obs = series.observed[p];
            observed_context.push(obs);
            target_context.push(if obs { series.values[p] } else { 0.0 });
        }
        let mut target_future = Vec::with_capacity(horizon);
        let mut observed_future = Vec::with_capacity(horizon);
        for p in ctx_end..start + window {
            let obs = series.observed[p];
            observed_future.push(obs);
            target_future.push(if obs { series.values[p] } else { 0.0 });
        }

        let mut lag_features = Vec::with_capacity(window * cfg.lags.len());
        for u in 0..window {
            let pos = start + u;
            for &lag in &cfg.lags {
                // past-only: a lagged reference may never reach into the
                // prediction portion
                let v = match pos.checked_sub(lag) {
                    Some(p) if p < ctx_end && series.observed[p] => series.values[p],
                    _ => 0.0,
                };
                lag_features.push(v);
            }
        }

        let mut tf = Vec::with_capacity(window * cfg.time_features.len());
        for u in 0..window {
            tf.extend(time_features(series.start, series.step, start + u, &cfg.time_features));
        }

        let ncov = self.covariate_indices.len();
        let mut covariate_channels = vec![0.0; window * ncov];
        let mut covariate_indicator = vec![false; window * ncov];
        for u in 0..ctx {
            for (c, &ci) in self.covariate_indices.iter().enumerate() {
                let cs = &self.dataset.series()[ci];
                let p = start + u;
                covariate_indicator[u * ncov + c] = true;
                if cs.observed[p] {
                    covariate_channels[u * ncov + c] = cs.values[p];
                }
            }
        }

        let observed_abs: Vec<f64> = target_context
            .iter()
            .zip(&observed_context)
            .filter_map(|(&v, &o)| o.then_some(v.abs()))
            .collect();
        let scale = if observed_abs.is_empty() {
            1.0
        } else {
            (observed_abs.iter().sum::<f64>() / observed_abs.len() as f64).max(1.0)
        };

        TrainingInstance {
            sensor: series.id.clone(),
            window_start: start,
            target_context,
            target_future,
            observed_context,
            observed_future,
            lag_features,
            time_features: tf,
            static_id: sensor_idx,
            covariate_channels,
            covariate_indicator,
            scale,
        }
    }
}

impl Iterator for InstanceStream {
    type Item = TrainingInstance;

    fn next(&mut self) -> Option<TrainingInstance> {
        match &mut self.state {
            StreamState::Random(rng) => {
                let sensor = self.targets[rng.gen_range(0..self.targets.len())];
                let start = rng.gen_range(self.min_start..=self.last_start);
                Some(self.build(sensor, start))
            }
            StreamState::LastWindow { next } => {
                if *next >= self.targets.len() {
                    return None;
                }
                let sensor = self.targets[*next];
                *next += 1;
                Some(self.build(sensor, self.last_start))
            }
        }
    }
}
