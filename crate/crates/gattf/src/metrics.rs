//! Forecast accuracy metrics: MAE, RMSE, sMAPE and MASE.
//!
//! All metrics skip positions where the actuals are unobserved. sMAPE uses
//! the `2|f−a| / (|f|+|a|)` convention and is reported as a fraction in
//! [0, 2]. MASE scales the forecast MAE by the in-sample seasonal-naive MAE
//! of the same sensor, so values below 1 beat the seasonal-naive baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{SensorId, SensorSeries};

/// One day of 5-minute steps, the default MASE seasonal period.
pub const DEFAULT_SEASON: usize = 288;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub target: SensorId,
    pub horizon: usize,
    pub mase: f64,
    pub smape: f64,
    pub mae: f64,
    pub rmse: f64,
}

fn check_lengths(forecast: &[f64], actual: &[f64], mask: &[bool]) -> Result<()> {
    if forecast.len() != actual.len() || actual.len() != mask.len() {
        return Err(Error::Shape(format!(
            "forecast/actual/mask lengths differ: {}/{}/{}",
            forecast.len(),
            actual.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InsufficientData("no observed positions to score".into()));
    }
    Ok(())
}

pub fn mae(forecast: &[f64], actual: &[f64], mask: &[bool]) -> Result<f64> {
    check_lengths(forecast, actual, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..forecast.len() {
        if mask[i] {
            sum += (forecast[i] - actual[i]).abs();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

pub fn rmse(forecast: &[f64], actual: &[f64], mask: &[bool]) -> Result<f64> {
    check_lengths(forecast, actual, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..forecast.len() {
        if mask[i] {
            let e = forecast[i] - actual[i];
            sum += e * e;
            n += 1;
        }
    }
    Ok((sum / n as f64).sqrt())
}

/// Symmetric MAPE as a fraction in [0, 2]; terms with `|f| + |a| = 0`
/// contribute zero.
pub fn smape(forecast: &[f64], actual: &[f64], mask: &[bool]) -> Result<f64> {
    check_lengths(forecast, actual, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..forecast.len() {
        if mask[i] {
            let denom = forecast[i].abs() + actual[i].abs();
            if denom > 0.0 {
                sum += 2.0 * (forecast[i] - actual[i]).abs() / denom;
            }
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// MAE scaled by the in-sample seasonal-naive MAE.
///
/// The denominator is `mean |insample[t] − insample[t−season]|` over in-sample
/// positions where both sides are observed; it comes from the training prefix
/// of the same sensor. A constant (or too short) in-sample series makes the
/// metric undefined.
pub fn mase(
    forecast: &[f64],
    actual: &[f64],
    mask: &[bool],
    insample: &SensorSeries,
    season: usize,
) -> Result<f64> {
    if season == 0 || insample.len() <= season {
        return Err(Error::InsufficientData(format!(
            "in-sample length {} must exceed season {season}",
            insample.len()
        )));
    }
    let numerator = mae(forecast, actual, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in season..insample.len() {
        if insample.observed[t] && insample.observed[t - season] {
            sum += (insample.values[t] - insample.values[t - season]).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData(
            "no jointly observed seasonal pairs in the in-sample series".into(),
        ));
    }
    let denominator = sum / n as f64;
    if denominator == 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "seasonal-naive in-sample MAE is zero for {}",
            insample.id
        )));
    }
    Ok(numerator / denominator)
}

/// All four metrics for one target over one evaluation window.
pub fn report(
    target: &SensorId,
    forecast: &[f64],
    actual: &[f64],
    mask: &[bool],
    insample: &SensorSeries,
    season: usize,
) -> Result<MetricReport> {
    Ok(MetricReport {
        target: target.clone(),
        horizon: forecast.len(),
        mase: mase(forecast, actual, mask, insample, season)?,
        smape: smape(forecast, actual, mask)?,
        mae: mae(forecast, actual, mask)?,
        rmse: rmse(forecast, actual, mask)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::SensorId;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sid() -> SensorId {
        SensorId::new("T").unwrap()
    }

    #[test]
    fn perfect_forecast_is_zero() {
        let a = vec![1.0, 2.0, 3.0];
        let m = vec![true; 3];
        assert_eq!(mae(&a, &a, &m).unwrap(), 0.0);
        assert_eq!(rmse(&a, &a, &m).unwrap(), 0.0);
        assert_eq!(smape(&a, &a, &m).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_mae_rmse() {
        // errors {3, -4}
        let f = vec![13.0, 6.0];
        let a = vec![10.0, 10.0];
        let m = vec![true, true];
        assert_relative_eq!(mae(&f, &a, &m).unwrap(), 3.5, max_relative = 1e-12);
        assert_relative_eq!(rmse(&f, &a, &m).unwrap(), 12.5f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn smape_one_sided_extreme() {
        let f = vec![100.0];
        let a = vec![0.0];
        let m = vec![true];
        assert_relative_eq!(smape(&f, &a, &m).unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn smape_hand_example() {
        let f = vec![110.0];
        let a = vec![100.0];
        let m = vec![true];
        assert_relative_eq!(smape(&f, &a, &m).unwrap(), 20.0 / 210.0, max_relative = 1e-12);
    }

    #[test]
    fn smape_zero_denominator_term_skipped() {
        let f = vec![0.0, 110.0];
        let a = vec![0.0, 100.0];
        let m = vec![true, true];
        assert_relative_eq!(smape(&f, &a, &m).unwrap(), 0.5 * 20.0 / 210.0, max_relative = 1e-12);
    }

    #[test]
    fn mase_constant_insample_undefined() {
        let ins = SensorSeries::fully_observed(sid(), 0, 300, vec![5.0; 20]).unwrap();
        let f = vec![5.0; 4];
        let m = vec![true; 4];
        let r = mase(&f, &f, &m, &ins, 4);
        assert!(matches!(r, Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn mase_perfect_forecast_zero() {
        let values: Vec<f64> = (0..40).map(|i| (i % 7) as f64 + i as f64 * 0.1).collect();
        let ins = SensorSeries::fully_observed(sid(), 0, 300, values).unwrap();
        let a = vec![1.0, 2.0, 3.0];
        let m = vec![true; 3];
        assert_eq!(mase(&a, &a, &m, &ins, 7).unwrap(), 0.0);
    }

    #[test]
    fn mase_respects_insample_masks() {
        let values = vec![0.0, 0.0, 1.0, 3.0, 1.0, 9.0];
        let observed = vec![true, true, true, false, true, true];
        let ins = SensorSeries::new(sid(), 0, 300, values, observed).unwrap();
        // season 2: pairs (2,0)=1, (3,1) skipped, (4,2)=0, (5,3) skipped -> denom 0.5
        let f = vec![2.0];
        let a = vec![1.0];
        let m = vec![true];
        assert_relative_eq!(mase(&f, &a, &m, &ins, 2).unwrap(), 1.0 / 0.5, max_relative = 1e-12);
    }

    #[test]
    fn no_observed_positions_is_error() {
        let f = vec![1.0];
        let a = vec![1.0];
        let m = vec![false];
        assert!(matches!(mae(&f, &a, &m), Err(Error::InsufficientData(_))));
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(values in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50)) {
            let f: Vec<f64> = values.iter().map(|v| v.0).collect();
            let a: Vec<f64> = values.iter().map(|v| v.1).collect();
            let m = vec![true; f.len()];
            prop_assert!(rmse(&f, &a, &m).unwrap() >= mae(&f, &a, &m).unwrap() - 1e-12);
        }

        #[test]
        fn smape_symmetric_and_bounded(values in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50)) {
            let f: Vec<f64> = values.iter().map(|v| v.0).collect();
            let a: Vec<f64> = values.iter().map(|v| v.1).collect();
            let m = vec![true; f.len()];
            let s1 = smape(&f, &a, &m).unwrap();
            let s2 = smape(&a, &f, &m).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((0.0..=2.0 + 1e-12).contains(&s1));
        }

        #[test]
        fn scale_invariance(c in 0.01f64..100.0, values in proptest::collection::vec((0.1f64..1e3, 0.1f64..1e3), 2..40)) {
            let f: Vec<f64> = values.iter().map(|v| v.0).collect();
            let a: Vec<f64> = values.iter().map(|v| v.1).collect();
            let m = vec![true; f.len()];
            let ins_vals: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin() * 10.0 + 20.0).collect();
            let ins = SensorSeries::fully_observed(sid(), 0, 300, ins_vals.clone()).unwrap();
            let ins_c = SensorSeries::fully_observed(
                sid(), 0, 300, ins_vals.iter().map(|v| v * c).collect()).unwrap();
            let fc: Vec<f64> = f.iter().map(|v| v * c).collect();
            let ac: Vec<f64> = a.iter().map(|v| v * c).collect();

            // MASE and sMAPE unchanged; MAE/RMSE scale by c.
            let season = 7;
            prop_assert!((mase(&fc, &ac, &m, &ins_c, season).unwrap()
                - mase(&f, &a, &m, &ins, season).unwrap()).abs() < 1e-9);
            prop_assert!((smape(&fc, &ac, &m).unwrap() - smape(&f, &a, &m).unwrap()).abs() < 1e-9);
            prop_assert!((mae(&fc, &ac, &m).unwrap() - c * mae(&f, &a, &m).unwrap()).abs()
                < 1e-9 * c.max(1.0) * 1e3);
            prop_assert!((rmse(&fc, &ac, &m).unwrap() - c * rmse(&f, &a, &m).unwrap()).abs()
                < 1e-9 * c.max(1.0) * 1e3);
        }
    }
}
