//! Pipeline configuration: one JSON document that every command snapshots
//! into its run manifest. All sections are optional and default to the
//! values below; command-line flags override individual fields.

use std::path::Path;

use gattf::featurize::TimeFeature;
use gattf::model::HeadKind;
use gattf::timeseries::SplitSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Aggregation factor applied right after parsing (1 = native step).
    pub resample_factor: usize,
    /// Cumulative prefix lengths; `None` derives the split from the data
    /// length and the prediction length (test = full, val = test − horizon,
    /// train = test − 2·horizon).
    pub split: Option<SplitLengths>,
    pub features: FeatureSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub mi: MiSection,
    pub synth: SynthSection,
    pub forecast: ForecastSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            resample_factor: 1,
            split: None,
            features: FeatureSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            mi: MiSection::default(),
            synth: SynthSection::default(),
            forecast: ForecastSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitLengths {
    pub train_len: usize,
    pub val_len: usize,
    pub test_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    pub context_length: usize,
    pub prediction_length: usize,
    /// `None` uses the frequency-derived default lag set, filtered to the
    /// available history.
    pub lags: Option<Vec<usize>>,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection { context_length: 576, prediction_length: 288, lags: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub head: HeadKind,
    pub static_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d_model: 256,
            encoder_layers: 4,
            decoder_layers: 2,
            heads: 8,
            ff_dim: 1024,
            dropout: 0.1,
            head: HeadKind::StudentT,
            static_dim: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub early_stop_patience: usize,
    pub grad_clip_norm: f64,
    pub val_samples: usize,
    pub mase_season: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            max_steps: 1000,
            eval_every: 100,
            early_stop_patience: 5,
            grad_clip_norm: 1.0,
            val_samples: 16,
            mase_season: 288,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiSection {
    /// Shift applied to the second series of each pair; 0 reproduces the
    /// plain pairwise table.
    pub lag: i64,
    /// Score on the full series instead of the training prefix.
    pub use_full_series: bool,
    pub top_k: usize,
    /// Auto-target threshold: sensors whose evaluated MASE exceeds this are
    /// selected as low-predictability targets.
    pub mase_threshold: f64,
}

impl Default for MiSection {
    fn default() -> Self {
        MiSection { lag: 0, use_full_series: false, top_k: 6, mase_threshold: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub length: usize,
    pub seasonal_amplitude: f64,
    pub noise_std: f64,
    pub demand_log_std: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            length: 5472,
            seasonal_amplitude: 1000.0,
            noise_std: 200.0,
            demand_log_std: 0.4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    pub num_samples: usize,
    pub quantiles: (f64, f64),
}

impl Default for ForecastSection {
    fn default() -> Self {
        ForecastSection { num_samples: 100, quantiles: (0.1, 0.9) }
    }
}

impl PipelineConfig {
    /// Load from `--config`, else from `$GATTF_CONFIG`, else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<PipelineConfig, CliError> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os("GATTF_CONFIG").map(Into::into),
        };
        let Some(path) = path else {
            return Ok(PipelineConfig::default());
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.resample_factor == 0 {
            return Err(CliError::validation("resample_factor must be at least 1"));
        }
        if self.features.context_length == 0 || self.features.prediction_length == 0 {
            return Err(CliError::validation("feature window lengths must be positive"));
        }
        if let Some(s) = &self.split {
            SplitSpec::new(s.train_len, s.val_len, s.test_len)
                .map_err(|e| CliError::validation(e.to_string()))?;
        }
        if self.mi.top_k == 0 {
            return Err(CliError::validation("mi.top_k must be at least 1"));
        }
        let (lo, hi) = self.forecast.quantiles;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(CliError::validation("forecast.quantiles must satisfy 0 ≤ lo < hi ≤ 1"));
        }
        Ok(())
    }

    /// Concrete split for a dataset of `len` steps.
    pub fn split_for(&self, len: usize) -> Result<SplitSpec, CliError> {
        match &self.split {
            Some(s) => SplitSpec::new(s.train_len, s.val_len, s.test_len)
                .map_err(|e| CliError::validation(e.to_string())),
            None => {
                let h = self.features.prediction_length;
                if len <= 2 * h {
                    return Err(CliError::validation(format!(
                        "dataset of {len} steps cannot hold two horizons of {h}"
                    )));
                }
                SplitSpec::new(len - 2 * h, len - h, len)
                    .map_err(|e| CliError::validation(e.to_string()))
            }
        }
    }

    pub fn time_features(&self) -> Vec<TimeFeature> {
        gattf::featurize::DEFAULT_TIME_FEATURES.to_vec()
    }
}
