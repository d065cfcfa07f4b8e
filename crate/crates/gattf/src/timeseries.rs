//! Canonical data model for regularly sampled multivariate sensor series.
//!
//! All series in a [`SensorDataset`] share one grid (start, step, length);
//! missing measurements are carried as an explicit boolean mask rather than
//! sentinel values. Splits follow a cumulative-prefix convention: train,
//! validation and test are nested prefixes of the same grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Short sensor label such as `A6` or `C3`; unique within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorId(pub String);

impl SensorId {
    pub fn new(label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if label.is_empty() {
            return Err(Error::Validation("sensor label must be non-empty".into()));
        }
        Ok(SensorId(label))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for SensorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One sensor's flow series (veh/h) on a regular grid.
///
/// `values[i]` is meaningful only where `observed[i]` is true; unobserved
/// slots hold 0.0 so arithmetic never touches sentinels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSeries {
    pub id: SensorId,
    /// Epoch seconds (UTC) of the first sample.
    pub start: i64,
    /// Sampling step in seconds.
    pub step: i64,
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

impl SensorSeries {
    pub fn new(
        id: SensorId,
        start: i64,
        step: i64,
        values: Vec<f64>,
        observed: Vec<bool>,
    ) -> Result<Self> {
        if step <= 0 {
            return Err(Error::Validation(format!("step must be positive, got {step}")));
        }
        if values.len() != observed.len() {
            return Err(Error::Shape(format!(
                "values length {} != observed length {}",
                values.len(),
                observed.len()
            )));
        }
        for (i, (&v, &obs)) in values.iter().zip(&observed).enumerate() {
            if obs && !v.is_finite() {
                return Err(Error::Validation(format!(
                    "series {id}: observed value at index {i} is not finite"
                )));
            }
        }
        Ok(SensorSeries { id, start, step, values, observed })
    }

    /// Fully observed series, a common case in tests and synthetic data.
    pub fn fully_observed(id: SensorId, start: i64, step: i64, values: Vec<f64>) -> Result<Self> {
        let observed = vec![true; values.len()];
        SensorSeries::new(id, start, step, values, observed)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp_at(&self, index: usize) -> i64 {
        self.start + index as i64 * self.step
    }

    /// Observed values only, in time order.
    pub fn observed_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.observed)
            .filter_map(|(&v, &o)| o.then_some(v))
            .collect()
    }

    /// Half-open window `[from, to)` of this series, start shifted accordingly.
    pub fn slice(&self, from: usize, to: usize) -> Result<SensorSeries> {
        if from >= to || to > self.len() {
            return Err(Error::Range(format!(
                "slice [{from}, {to}) invalid for series of length {}",
                self.len()
            )));
        }
        Ok(SensorSeries {
            id: self.id.clone(),
            start: self.start + from as i64 * self.step,
            step: self.step,
            values: self.values[from..to].to_vec(),
            observed: self.observed[from..to].to_vec(),
        })
    }
}

/// A collection of series sharing one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorDataset {
    series: Vec<SensorSeries>,
    step: i64,
}

impl SensorDataset {
    pub fn new(series: Vec<SensorSeries>) -> Result<Self> {
        let first = series
            .first()
            .ok_or_else(|| Error::Validation("dataset must contain at least one series".into()))?;
        let (start, step, len) = (first.start, first.step, first.len());
        for s in &series {
            if s.start != start || s.step != step || s.len() != len {
                return Err(Error::Format(format!(
                    "series {} off-grid: start/step/len ({}, {}, {}) expected ({start}, {step}, {len})",
                    s.id,
                    s.start,
                    s.step,
                    s.len()
                )));
            }
        }
        let mut ids: Vec<&SensorId> = series.iter().map(|s| &s.id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("duplicate sensor ids in dataset".into()));
        }
        Ok(SensorDataset { series, step })
    }

    pub fn step(&self) -> i64 {
        self.step
    }

    pub fn start(&self) -> i64 {
        self.series[0].start
    }

    pub fn len(&self) -> usize {
        self.series[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_sensors(&self) -> usize {
        self.series.len()
    }

    pub fn series(&self) -> &[SensorSeries] {
        &self.series
    }

    pub fn ids(&self) -> Vec<SensorId> {
        self.series.iter().map(|s| s.id.clone()).collect()
    }

    pub fn get(&self, id: &SensorId) -> Option<&SensorSeries> {
        self.series.iter().find(|s| &s.id == id)
    }

    pub fn index_of(&self, id: &SensorId) -> Option<usize> {
        self.series.iter().position(|s| &s.id == id)
    }

    /// Prefix of the first `len` steps of every series.
    pub fn prefix(&self, len: usize) -> Result<SensorDataset> {
        let series = self
            .series
            .iter()
            .map(|s| s.slice(0, len))
            .collect::<Result<Vec<_>>>()?;
        SensorDataset::new(series)
    }
}

/// Cumulative-prefix split lengths: train ⊂ val ⊂ test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_len: usize,
    pub val_len: usize,
    pub test_len: usize,
}

impl SplitSpec {
    pub fn new(train_len: usize, val_len: usize, test_len: usize) -> Result<Self> {
        if train_len == 0 || train_len > val_len || val_len > test_len {
            return Err(Error::Validation(format!(
                "split lengths must satisfy 0 < train ≤ val ≤ test, got ({train_len}, {val_len}, {test_len})"
            )));
        }
        Ok(SplitSpec { train_len, val_len, test_len })
    }
}

/// Split a dataset into nested train/validation/test prefixes.
pub fn split(
    dataset: &SensorDataset,
    spec: SplitSpec,
) -> Result<(SensorDataset, SensorDataset, SensorDataset)> {
    if spec.test_len > dataset.len() {
        return Err(Error::Range(format!(
            "test prefix {} exceeds dataset length {}",
            spec.test_len,
            dataset.len()
        )));
    }
    Ok((
        dataset.prefix(spec.train_len)?,
        dataset.prefix(spec.val_len)?,
        dataset.prefix(spec.test_len)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(len: usize) -> SensorSeries {
        let values: Vec<f64> = (0..len).map(|i| i as f64).collect();
        SensorSeries::fully_observed(SensorId::new("A1").unwrap(), 1000, 300, values).unwrap()
    }

    #[test]
    fn slice_identity() {
        let s = series(100);
        assert_eq!(s.slice(0, 100).unwrap(), s);
    }

    #[test]
    fn slice_shifts_start() {
        let s = series(30);
        let sub = s.slice(10, 20).unwrap();
        assert_eq!(sub.len(), 10);
        assert_eq!(sub.start, s.start + 10 * s.step);
        assert_eq!(sub.values, (10..20).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn slice_rejects_empty_interval() {
        let s = series(10);
        assert!(matches!(s.slice(5, 5), Err(Error::Range(_))));
        assert!(matches!(s.slice(3, 12), Err(Error::Range(_))));
    }

    #[test]
    fn split_paper_lengths() {
        let all: Vec<SensorSeries> = ["A1", "A2"]
            .iter()
            .map(|id| {
                SensorSeries::fully_observed(
                    SensorId::new(*id).unwrap(),
                    0,
                    300,
                    (0..5472).map(|i| i as f64).collect(),
                )
                .unwrap()
            })
            .collect();
        let ds = SensorDataset::new(all).unwrap();
        let spec = SplitSpec::new(4896, 5184, 5472).unwrap();
        let (train, val, test) = split(&ds, spec).unwrap();
        assert_eq!(train.len(), 4896);
        assert_eq!(val.len(), 5184);
        assert_eq!(test.len(), 5472);
        // prefixes: test restricted to train_len equals train
        assert_eq!(test.prefix(4896).unwrap(), train);
        assert_eq!(test.prefix(5184).unwrap(), val);
    }

    #[test]
    fn split_degenerate_equal() {
        let ds = SensorDataset::new(vec![series(10)]).unwrap();
        let (train, val, test) = split(&ds, SplitSpec::new(10, 10, 10).unwrap()).unwrap();
        assert_eq!(train, val);
        assert_eq!(val, test);
    }

    #[test]
    fn split_overflow_rejected() {
        let ds = SensorDataset::new(vec![series(25)]).unwrap();
        let spec = SplitSpec::new(10, 20, 30).unwrap();
        assert!(matches!(split(&ds, spec), Err(Error::Range(_))));
    }

    #[test]
    fn dataset_rejects_mismatched_grids() {
        let a = series(10);
        let mut b = series(10);
        b.id = SensorId::new("B1").unwrap();
        b.start += 300;
        assert!(SensorDataset::new(vec![a, b]).is_err());
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        assert!(SensorDataset::new(vec![series(10), series(10)]).is_err());
    }

    #[test]
    fn observed_value_must_be_finite() {
        let r = SensorSeries::new(
            SensorId::new("A1").unwrap(),
            0,
            300,
            vec![1.0, f64::NAN],
            vec![true, true],
        );
        assert!(r.is_err());
        // NaN allowed while masked out
        let r = SensorSeries::new(
            SensorId::new("A1").unwrap(),
            0,
            300,
            vec![1.0, f64::NAN],
            vec![true, false],
        );
        assert!(r.is_ok());
    }

    proptest! {
        #[test]
        fn slice_concat_round_trip(len in 2usize..200, cut in 1usize..199) {
            prop_assume!(cut < len);
            let s = series(len);
            let left = s.slice(0, cut).unwrap();
            let right = s.slice(cut, len).unwrap();
            let mut values = left.values.clone();
            values.extend_from_slice(&right.values);
            let mut observed = left.observed.clone();
            observed.extend_from_slice(&right.observed);
            prop_assert_eq!(values, s.values);
            prop_assert_eq!(observed, s.observed);
            prop_assert_eq!(right.start, s.start + cut as i64 * s.step);
        }
    }
}
