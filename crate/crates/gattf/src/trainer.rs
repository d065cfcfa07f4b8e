//! Optimization loop and the four-way covariate ablation driver.
//!
//! Training uses Adam with bias correction, global-norm gradient clipping
//! and early stopping on validation MASE evaluated every `eval_every` steps;
//! the parameters returned always correspond to the best recorded validation
//! score. Batches fan out across threads, one tape per instance, and
//! gradients are averaged in instance order, so a run is bit-reproducible
//! regardless of the thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::featurize::{make_instances, FeatureConfig, Mode};
use crate::metrics::{self, MetricReport};
use crate::mi::{
    select_informative_covariates, select_least_informative_covariates, CovariateSelection,
    MiMatrix,
};
use crate::model::{Model, ModelConfig};
use crate::timeseries::{SensorDataset, SensorId, SplitSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Steps between validation evaluations.
    pub eval_every: usize,
    /// Validation evaluations without improvement before stopping.
    pub early_stop_patience: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Trajectories drawn per validation forecast.
    pub val_samples: usize,
    /// Seasonal period for MASE (one day of steps).
    pub mase_season: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            max_steps: 1000,
            eval_every: 100,
            early_stop_patience: 5,
            grad_clip_norm: 1.0,
            seed: 0,
            val_samples: 16,
            mase_season: metrics::DEFAULT_SEASON,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0
            || self.batch_size == 0
            || self.eval_every == 0
            || self.early_stop_patience == 0
            || self.grad_clip_norm <= 0.0
            || self.val_samples == 0
        {
            return Err(Error::Validation("train config fields must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction; moment state is allocated on first use.
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam { learning_rate, beta1, beta2, eps, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn from_config(config: &TrainConfig) -> Adam {
        Adam::new(config.learning_rate, config.beta1, config.beta2, config.eps)
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let grad = g.data()[i];
                let md = &mut m.data_mut()[i];
                let vd = &mut v.data_mut()[i];
                *md = self.beta1 * *md + (1.0 - self.beta1) * grad;
                *vd = self.beta2 * *vd + (1.0 - self.beta2) * grad * grad;
                let m_hat = *md / correction1;
                let v_hat = *vd / correction2;
                pd[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub train_loss: f64,
    pub val_mase: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<HistoryEntry>,
    /// Best validation MASE seen, if any evaluation ran.
    pub best_val_mase: Option<f64>,
}

/// History CSV: `step,train_loss,val_mase` with an empty third field on
/// non-evaluation steps.
pub fn history_to_csv(history: &[HistoryEntry]) -> String {
    let mut out = String::from("step,train_loss,val_mase\n");
    for h in history {
        match h.val_mase {
            Some(v) => out.push_str(&format!("{},{:.6},{v:.6}\n", h.step, h.train_loss)),
            None => out.push_str(&format!("{},{:.6},\n", h.step, h.train_loss)),
        }
    }
    out
}

/// Nested train/validation prefixes plus the feature recipe for a run.
pub struct TrainSetup<'a> {
    pub features: &'a FeatureConfig,
    pub train: &'a SensorDataset,
    pub val: &'a SensorDataset,
}

/// Train a model: Adam updates from masked NLL, periodic validation MASE,
/// early stopping, best-checkpoint restore.
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    setup: &TrainSetup<'_>,
) -> Result<TrainOutcome> {
    train_config.validate()?;
    let mut stream =
        make_instances(setup.train, setup.features, Mode::Train { seed: train_config.seed })?;
    let mut model = Model::new(model_config.clone(), train_config.seed)?;
    let mut optimizer = Adam::from_config(train_config);
    let mut history = Vec::new();
    let mut best: Option<(f64, crate::model::ModelParams)> = None;
    let mut evals_since_best = 0usize;
    // validation sampling reuses one seed so scores are comparable across
    // evaluations
    let eval_seed = train_config.seed ^ 0x5eed_0711u64;

    for step in 1..=train_config.max_steps {
        let batch: Vec<_> = stream.by_ref().take(train_config.batch_size).collect();
        let results: Vec<(f64, Vec<Tensor>)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, instance)| {
                let mut dropout_rng = ChaCha8Rng::seed_from_u64(
                    train_config
                        .seed
                        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                        .wrapping_add((step * train_config.batch_size + i) as u64),
                );
                model.loss_and_grads(instance, Some(&mut dropout_rng))
            })
            .collect::<Result<_>>()?;

        let batch_loss =
            results.iter().map(|(l, _)| l).sum::<f64>() / results.len() as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Diverged { step, batch: step });
        }
        // average gradients in instance order
        let mut grads: Vec<Tensor> = results[0].1.clone();
        for (_, g) in &results[1..] {
            for (acc, add) in grads.iter_mut().zip(g) {
                for (a, b) in acc.data_mut().iter_mut().zip(add.data()) {
                    *a += b;
                }
            }
        }
        let inv = 1.0 / results.len() as f64;
        for g in &mut grads {
            for v in g.data_mut() {
                *v *= inv;
            }
        }
        clip_global_norm(&mut grads, train_config.grad_clip_norm);
        optimizer.step(model.params.tensors_mut(), &grads);

        let val_mase = if step % train_config.eval_every == 0 {
            let score = validation_mase(&model, setup, train_config, eval_seed)?;
            match &best {
                Some((b, _)) if *b <= score => evals_since_best += 1,
                _ => {
                    best = Some((score, model.params.clone()));
                    evals_since_best = 0;
                }
            }
            Some(score)
        } else {
            None
        };
        history.push(HistoryEntry { step, train_loss: batch_loss, val_mase });
        if evals_since_best >= train_config.early_stop_patience {
            break;
        }
    }

    let best_val_mase = best.as_ref().map(|(s, _)| *s);
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome { model, history, best_val_mase })
}

/// Mean MASE over the last admissible validation window of every target.
fn validation_mase(
    model: &Model,
    setup: &TrainSetup<'_>,
    train_config: &TrainConfig,
    eval_seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for instance in make_instances(setup.val, setup.features, Mode::Validate)? {
        let forecast = model.sample_forecast(&instance, train_config.val_samples, eval_seed)?;
        let point = forecast.point_forecast();
        let insample = setup
            .train
            .get(&instance.sensor)
            .ok_or_else(|| Error::Validation(format!("{} missing from train data", instance.sensor)))?;
        total += metrics::mase(
            &point,
            &instance.target_future,
            &instance.observed_future,
            insample,
            train_config.mase_season,
        )?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InsufficientData("no validation instances".into()));
    }
    Ok(total / count as f64)
}

/// Score a trained model on the last admissible window of each configured
/// target in `eval_data`; the seasonal-naive denominator comes from
/// `insample_data`.
pub fn evaluate_on_last_window(
    model: &Model,
    features: &FeatureConfig,
    eval_data: &SensorDataset,
    insample_data: &SensorDataset,
    season: usize,
    num_samples: usize,
    seed: u64,
) -> Result<Vec<MetricReport>> {
    let mut reports = Vec::new();
    for instance in make_instances(eval_data, features, Mode::Forecast)? {
        let forecast = model.sample_forecast(&instance, num_samples, seed)?;
        let point = forecast.point_forecast();
        let insample = insample_data
            .get(&instance.sensor)
            .ok_or_else(|| Error::Validation(format!("{} missing from in-sample data", instance.sensor)))?;
        reports.push(metrics::report(
            &instance.sensor,
            &point,
            &instance.target_future,
            &instance.observed_future,
            insample,
            season,
        )?);
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmKind {
    AllSensorsNoCov,
    SingleSensorNoCov,
    InformativeCov,
    LessInformativeCov,
}

impl ArmKind {
    pub fn name(self) -> &'static str {
        match self {
            ArmKind::AllSensorsNoCov => "all_sensors_no_cov",
            ArmKind::SingleSensorNoCov => "single_sensor_no_cov",
            ArmKind::InformativeCov => "informative_cov",
            ArmKind::LessInformativeCov => "less_informative_cov",
        }
    }
}

/// One input setting of the ablation: which sensors are predicted and which
/// covariates (per target) feed the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationArm {
    pub kind: ArmKind,
    pub targets: Vec<SensorId>,
    /// Per-target covariate selections; empty for covariate-free arms.
    pub covariates: Vec<CovariateSelection>,
}

impl AblationArm {
    /// The four standard arms: most informative covariates, least
    /// informative (non-zero MI) covariates, no covariates trained on all
    /// sensors, and no covariates trained per single sensor.
    pub fn standard_four(
        matrix: &MiMatrix,
        targets: &[SensorId],
        top_k: usize,
    ) -> Result<Vec<AblationArm>> {
        let informative = select_informative_covariates(matrix, targets, top_k)?;
        let least = select_least_informative_covariates(matrix, targets, top_k)?;
        Ok(vec![
            AblationArm {
                kind: ArmKind::AllSensorsNoCov,
                targets: targets.to_vec(),
                covariates: Vec::new(),
            },
            AblationArm {
                kind: ArmKind::SingleSensorNoCov,
                targets: targets.to_vec(),
                covariates: Vec::new(),
            },
            AblationArm {
                kind: ArmKind::InformativeCov,
                targets: targets.to_vec(),
                covariates: informative,
            },
            AblationArm {
                kind: ArmKind::LessInformativeCov,
                targets: targets.to_vec(),
                covariates: least,
            },
        ])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmReport {
    pub kind: ArmKind,
    pub results: Vec<MetricReport>,
    /// Set when the arm failed; other arms keep running.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: Vec<ArmReport>,
}

impl AblationReport {
    pub fn metric_for(&self, kind: ArmKind, target: &SensorId) -> Option<&MetricReport> {
        self.arms
            .iter()
            .find(|a| a.kind == kind)
            .and_then(|a| a.results.iter().find(|r| &r.target == target))
    }

    /// Long-format CSV: one row per (target, metric), one column per arm.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target,metric");
        for arm in &self.arms {
            out.push(',');
            out.push_str(arm.kind.name());
        }
        out.push('\n');
        let mut targets: Vec<SensorId> = Vec::new();
        for arm in &self.arms {
            for r in &arm.results {
                if !targets.contains(&r.target) {
                    targets.push(r.target.clone());
                }
            }
        }
        for target in &targets {
            for (metric, pick) in [
                ("mase", 0usize),
                ("smape", 1),
                ("mae", 2),
                ("rmse", 3),
            ] {
                out.push_str(&format!("{target},{metric}"));
                for arm in &self.arms {
                    out.push(',');
                    if let Some(r) = arm.results.iter().find(|r| &r.target == target) {
                        let v = match pick {
                            0 => r.mase,
                            1 => r.smape,
                            2 => r.mae,
                            _ => r.rmse,
                        };
                        out.push_str(&format!("{v:.6}"));
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// Human-readable per-target tables, metrics as rows and arms as columns.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut targets: Vec<SensorId> = Vec::new();
        for arm in &self.arms {
            for r in &arm.results {
                if !targets.contains(&r.target) {
                    targets.push(r.target.clone());
                }
            }
        }
        for target in &targets {
            out.push_str(&format!("24h-ahead forecast metrics for {target}\n"));
            out.push_str(&format!("{:<8}", "metric"));
            for arm in &self.arms {
                out.push_str(&format!("{:>22}", arm.kind.name()));
            }
            out.push('\n');
            for (label, pick) in [("MASE", 0usize), ("sMAPE", 1), ("MAE", 2), ("RMSE", 3)] {
                out.push_str(&format!("{label:<8}"));
                for arm in &self.arms {
                    match arm.results.iter().find(|r| &r.target == target) {
                        Some(r) => {
                            let v = match pick {
                                0 => r.mase,
                                1 => r.smape,
                                2 => r.mae,
                                _ => r.rmse,
                            };
                            out.push_str(&format!("{v:>22.3}"));
                        }
                        None => out.push_str(&format!("{:>22}", "-")),
                    }
                }
                out.push('\n');
            }
            for arm in &self.arms {
                if let Some(err) = &arm.error {
                    out.push_str(&format!("  [{} failed: {err}]\n", arm.kind.name()));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Shared inputs for one ablation run.
pub struct AblationSetup<'a> {
    pub dataset: &'a SensorDataset,
    pub split: SplitSpec,
    /// Base feature recipe; targets and covariates are filled per arm.
    pub features: &'a FeatureConfig,
    /// Base model dimensions; covariate count and cardinality are filled
    /// per arm.
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    /// Trajectories per test forecast.
    pub test_samples: usize,
}

/// Train and evaluate every arm with identical seeds and budgets; a failing
/// arm is reported without stopping the others.
pub fn run_ablation(setup: &AblationSetup<'_>, arms: &[AblationArm]) -> Result<AblationReport> {
    let (train_data, val_data, test_data) = crate::timeseries::split(setup.dataset, setup.split)?;
    let mut reports = Vec::with_capacity(arms.len());
    for arm in arms {
        let outcome = run_arm(setup, arm, &train_data, &val_data, &test_data);
        reports.push(match outcome {
            Ok(results) => ArmReport { kind: arm.kind, results, error: None },
            Err(e) => {
                log::warn!("ablation arm {} failed: {e}", arm.kind.name());
                ArmReport { kind: arm.kind, results: Vec::new(), error: Some(e.to_string()) }
            }
        });
    }
    Ok(AblationReport { arms: reports })
}

fn run_arm(
    setup: &AblationSetup<'_>,
    arm: &AblationArm,
    train_data: &SensorDataset,
    val_data: &SensorDataset,
    test_data: &SensorDataset,
) -> Result<Vec<MetricReport>> {
    let eval_seed = setup.train.seed ^ 0x7e57_0e1au64;
    let mut results = Vec::new();
    match arm.kind {
        ArmKind::AllSensorsNoCov => {
            let mut features = setup.features.clone();
            features.covariates = None;
            features.targets = None;
            let mut model_config = setup.model.clone();
            model_config.num_covariates = 0;
            model_config.static_cardinality = setup.dataset.num_sensors();
            let outcome = train(
                &model_config,
                setup.train,
                &TrainSetup { features: &features, train: train_data, val: val_data },
            )?;
            // score only the requested targets
            let mut eval_features = features.clone();
            eval_features.targets = Some(arm.targets.clone());
            results.extend(evaluate_on_last_window(
                &outcome.model,
                &eval_features,
                test_data,
                train_data,
                setup.train.mase_season,
                setup.test_samples,
                eval_seed,
            )?);
        }
        ArmKind::SingleSensorNoCov | ArmKind::InformativeCov | ArmKind::LessInformativeCov => {
            for target in &arm.targets {
                let selection = arm.covariates.iter().find(|s| &s.target == target);
                let mut features = setup.features.clone();
                features.covariates = selection.cloned();
                features.targets = Some(vec![target.clone()]);
                let mut model_config = setup.model.clone();
                model_config.num_covariates = selection.map_or(0, |s| s.covariates.len());
                model_config.static_cardinality = setup.dataset.num_sensors();
                let outcome = train(
                    &model_config,
                    setup.train,
                    &TrainSetup { features: &features, train: train_data, val: val_data },
                )?;
                results.extend(evaluate_on_last_window(
                    &outcome.model,
                    &features,
                    test_data,
                    train_data,
                    setup.train.mase_season,
                    setup.test_samples,
                    eval_seed,
                )?);
            }
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::synthgen::{generate, SynthNetworkSpec};
    use approx::assert_relative_eq;

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(x) = mean((x - target)^2) has its minimum at x = target
        let target = Tensor::new(1, 3, vec![1.5, -2.0, 0.25]).unwrap();
        let mut params = vec![Tensor::zeros(1, 3)];
        let mut adam = Adam::new(0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let mut tape = Tape::new();
            let x = tape.leaf(params[0].clone(), true);
            let t = tape.constant(target.clone());
            let diff = tape.sub(x, t).unwrap();
            let sq = tape.mul(diff, diff).unwrap();
            let loss = tape.mean_all(sq);
            let grads = tape.backward(loss).unwrap();
            let g = vec![grads.get(x).unwrap().clone()];
            adam.step(&mut params, &g);
        }
        for (a, b) in params[0].data().iter().zip(target.data()) {
            assert_relative_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut params = vec![Tensor::new(1, 2, vec![3.0, -4.0]).unwrap()];
        let before = params.clone();
        let mut adam = Adam::new(0.0, 0.9, 0.999, 1e-8);
        let grads = vec![Tensor::new(1, 2, vec![1.0, 1.0]).unwrap()];
        for _ in 0..10 {
            adam.step(&mut params, &grads);
        }
        assert_eq!(params[0], before[0]);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut grads = vec![Tensor::new(1, 2, vec![3.0, 4.0]).unwrap()];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert_relative_eq!(norm, 5.0, epsilon = 1e-12);
        let new_norm = grads[0].data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_relative_eq!(new_norm, 1.0, epsilon = 1e-12);
        // under the cap nothing changes
        let mut small = vec![Tensor::new(1, 2, vec![0.3, 0.4]).unwrap()];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.3, 0.4]);
    }

    fn tiny_setup() -> (SensorDataset, FeatureConfig, ModelConfig, TrainConfig) {
        let mut spec = SynthNetworkSpec::motorway_template(3);
        spec.length = 1200;
        let ds = generate(&spec).unwrap();
        let features = FeatureConfig::new(48, 12, vec![1, 2, 3]);
        let model = ModelConfig {
            d_model: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 1,
            ff_dim: 16,
            context_length: 48,
            prediction_length: 12,
            dropout: 0.1,
            head: crate::model::HeadKind::StudentT,
            num_lags: 3,
            num_time_features: 4,
            num_covariates: 0,
            static_cardinality: ds.num_sensors(),
            static_dim: 2,
            num_samples: 4,
        };
        let train_config = TrainConfig {
            batch_size: 2,
            max_steps: 6,
            eval_every: 3,
            val_samples: 2,
            mase_season: 288,
            seed: 11,
            ..TrainConfig::default()
        };
        (ds, features, model, train_config)
    }

    #[test]
    fn fixed_seed_reproduces_history_bitwise() {
        let (ds, mut features, model, train_config) = tiny_setup();
        features.targets = Some(vec![SensorId::new("C3").unwrap()]);
        let train_ds = ds.prefix(1000).unwrap();
        let val_ds = ds.prefix(1100).unwrap();
        let run = || {
            train(
                &model,
                &train_config,
                &TrainSetup { features: &features, train: &train_ds, val: &val_ds },
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        for (x, y) in a.model.params.tensors().iter().zip(b.model.params.tensors()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn best_checkpoint_is_restored() {
        let (ds, mut features, model, train_config) = tiny_setup();
        features.targets = Some(vec![SensorId::new("C3").unwrap()]);
        let train_ds = ds.prefix(1000).unwrap();
        let val_ds = ds.prefix(1100).unwrap();
        let outcome = train(
            &model,
            &train_config,
            &TrainSetup { features: &features, train: &train_ds, val: &val_ds },
        )
        .unwrap();
        let best = outcome.best_val_mase.unwrap();
        let recorded: Vec<f64> = outcome.history.iter().filter_map(|h| h.val_mase).collect();
        assert!(!recorded.is_empty());
        assert_relative_eq!(
            best,
            recorded.iter().copied().fold(f64::INFINITY, f64::min),
            epsilon = 1e-12
        );
    }

    #[test]
    fn history_csv_shape() {
        let history = vec![
            HistoryEntry { step: 1, train_loss: 2.5, val_mase: None },
            HistoryEntry { step: 2, train_loss: 2.25, val_mase: Some(1.75) },
        ];
        let csv = history_to_csv(&history);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("step,train_loss,val_mase"));
        assert_eq!(lines.next(), Some("1,2.500000,"));
        assert_eq!(lines.next(), Some("2,2.250000,1.750000"));
    }

    #[test]
    fn standard_arms_mirror_the_four_settings() {
        let ds = generate(&SynthNetworkSpec::motorway_template(1)).unwrap();
        let matrix = MiMatrix::compute(&ds.prefix(4896).unwrap()).unwrap();
        let target = SensorId::new("C3").unwrap();
        let arms = AblationArm::standard_four(&matrix, std::slice::from_ref(&target), 2).unwrap();
        assert_eq!(arms.len(), 4);
        assert_eq!(arms[0].kind, ArmKind::AllSensorsNoCov);
        assert!(arms[0].covariates.is_empty());
        assert_eq!(arms[2].kind, ArmKind::InformativeCov);
        assert_eq!(arms[2].covariates[0].covariates.len(), 2);
        assert_eq!(arms[3].kind, ArmKind::LessInformativeCov);
        // least-informative scores are weaker than informative ones
        assert!(arms[3].covariates[0].scores[0] <= arms[2].covariates[0].scores[1]);
        // disjointness: the target never appears among its covariates
        for arm in &arms[2..] {
            assert!(!arm.covariates[0].covariates.contains(&target));
        }
    }

    #[test]
    fn report_csv_has_one_row_per_metric_and_arm_columns() {
        let target = SensorId::new("C3").unwrap();
        let mk = |m: f64| MetricReport {
            target: target.clone(),
            horizon: 12,
            mase: m,
            smape: m / 2.0,
            mae: m * 10.0,
            rmse: m * 12.0,
        };
        let report = AblationReport {
            arms: vec![
                ArmReport { kind: ArmKind::AllSensorsNoCov, results: vec![mk(1.4)], error: None },
                ArmReport { kind: ArmKind::SingleSensorNoCov, results: vec![mk(1.2)], error: None },
                ArmReport { kind: ArmKind::InformativeCov, results: vec![mk(0.8)], error: None },
                ArmReport { kind: ArmKind::LessInformativeCov, results: vec![mk(1.0)], error: None },
            ],
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "target,metric,all_sensors_no_cov,single_sensor_no_cov,informative_cov,less_informative_cov"
        );
        assert_eq!(lines.len(), 1 + 4); // header + four metric rows
        assert!(lines[1].starts_with("C3,mase,1.400000,1.200000,0.800000,1.000000"));
        let table = report.to_table();
        assert!(table.contains("MASE"));
        assert!(table.contains("informative_cov"));
    }

    #[test]
    fn failing_arm_does_not_abort_others() {
        let (ds, features, model, train_config) = tiny_setup();
        let split = SplitSpec::new(1000, 1100, 1200).unwrap();
        let target = SensorId::new("C3").unwrap();
        // informative arm references a sensor that does not exist
        let arms = vec![
            AblationArm {
                kind: ArmKind::SingleSensorNoCov,
                targets: vec![target.clone()],
                covariates: Vec::new(),
            },
            AblationArm {
                kind: ArmKind::InformativeCov,
                targets: vec![target.clone()],
                covariates: vec![CovariateSelection {
                    target: target.clone(),
                    covariates: vec![SensorId::new("ZZ").unwrap()],
                    scores: vec![1.0],
                }],
            },
        ];
        let setup = AblationSetup {
            dataset: &ds,
            split,
            features: &features,
            model: &model,
            train: &train_config,
            test_samples: 2,
        };
        let report = run_ablation(&setup, &arms).unwrap();
        assert!(report.arms[0].error.is_none());
        assert_eq!(report.arms[0].results.len(), 1);
        assert!(report.arms[1].error.is_some());
    }
}
