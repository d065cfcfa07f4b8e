//! Histogram-based mutual information between sensor series and the
//! covariate ranking built on it.
//!
//! Each series is discretized on its own Freedman–Diaconis grid
//! (`h = 2·IQR/n^(1/3)`, `k = ⌈(max−min)/h⌉`), MI is the plug-in estimate
//! from the joint histogram of pairwise-complete observations, in nats.
//! Degenerate IQR falls back to a Sturges-style bin count so spiky but
//! mostly constant series stay discretizable.
//!
//! Scores are exactly symmetric: a pair is evaluated once on a canonical
//! argument order, so `I(X,Y)` and `I(Y,X)` run the identical floating-point
//! reduction.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::timeseries::{SensorDataset, SensorId, SensorSeries};

/// Per-series histogram grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    /// Bin width in value units (veh/h); 0 only for the degenerate
    /// constant-series case.
    pub width: f64,
    pub bins: usize,
    pub min: f64,
    pub max: f64,
}

/// Freedman–Diaconis bin width `2·IQR/n^(1/3)` with type-7 quartiles.
///
/// Callers pass observed values only. A zero IQR yields width 0; see
/// [`binning_for`] for the fallback used in that case.
pub fn fd_bin_width(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 observed values for bin width, got {}",
            values.len()
        )));
    }
    Ok(2.0 * stats::iqr(values) / (values.len() as f64).cbrt())
}

/// Bin count `⌈(max−min)/h⌉`, at least 1; a zero width or zero range
/// collapses to a single bin.
pub fn fd_bin_count(values: &[f64], width: f64) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::InsufficientData("empty input for bin count".into()));
    }
    let (min, max) = min_max(values);
    if width <= 0.0 || max == min {
        return Ok(1);
    }
    Ok((((max - min) / width).ceil() as usize).max(1))
}

fn min_max(values: &[f64]) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
    }
    (min, max)
}

/// Full binning decision for one series' observed values.
///
/// When the FD width degenerates (IQR = 0) but the data still has spread,
/// falls back to `⌈log2 n⌉ + 1` equal-width bins.
pub fn binning_for(values: &[f64]) -> Result<BinningSpec> {
    let width = fd_bin_width(values)?;
    let (min, max) = min_max(values);
    if max == min {
        return Ok(BinningSpec { width: 0.0, bins: 1, min, max });
    }
    if width > 0.0 {
        let bins = fd_bin_count(values, width)?;
        Ok(BinningSpec { width, bins, min, max })
    } else {
        let bins = ((values.len() as f64).log2().ceil() as usize) + 1;
        Ok(BinningSpec { width: (max - min) / bins as f64, bins, min, max })
    }
}

/// Map each value to its bin index `⌊(v − min)/h⌋`, clamped to `[0, k−1]`.
///
/// Unobserved steps receive index 0 here; downstream counting must apply the
/// observation mask.
pub fn discretize(series: &SensorSeries, spec: &BinningSpec) -> Vec<usize> {
    series
        .values
        .iter()
        .map(|&v| {
            if spec.bins == 1 || spec.width <= 0.0 {
                0
            } else {
                let idx = ((v - spec.min) / spec.width).floor();
                (idx.max(0.0) as usize).min(spec.bins - 1)
            }
        })
        .collect()
}

/// Plug-in mutual information (nats) of two aligned bin sequences.
///
/// Only pass time steps observed in both series. Empty joint cells
/// contribute zero; the result is clamped to be non-negative.
pub fn mutual_information(x: &[usize], y: &[usize], kx: usize, ky: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "bin sequences differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 joint observations, got {}",
            x.len()
        )));
    }
    // Canonical argument order makes I(X,Y) and I(Y,X) run the exact same
    // floating-point reduction.
    if y < x {
        return mutual_information(y, x, ky, kx);
    }
    let n = x.len() as f64;
    let mut joint = vec![0u32; kx * ky];
    let mut mx = vec![0u32; kx];
    let mut my = vec![0u32; ky];
    for (&a, &b) in x.iter().zip(y) {
        debug_assert!(a < kx && b < ky, "bin index out of range");
        joint[a * ky + b] += 1;
        mx[a] += 1;
        my[b] += 1;
    }
    let mut total = 0.0;
    for a in 0..kx {
        for b in 0..ky {
            let c = joint[a * ky + b];
            if c > 0 {
                let pxy = c as f64 / n;
                let px = mx[a] as f64 / n;
                let py = my[b] as f64 / n;
                total += pxy * (pxy / (px * py)).ln();
            }
        }
    }
    Ok(total.max(0.0))
}

/// Pairwise MI scores with the binning that produced them.
///
/// `lag = 0` gives the symmetric zero-lag table; a non-zero lag shifts the
/// column series back by `lag` steps (entry `(r, c)` pairs `r[t]` with
/// `c[t − lag]`) and the matrix is no longer symmetric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiMatrix {
    pub ids: Vec<SensorId>,
    /// Row-major `ids.len()²` scores in nats; `None` marks pairs without
    /// enough jointly observed data.
    pub scores: Vec<Option<f64>>,
    pub binning: BTreeMap<SensorId, BinningSpec>,
    pub lag: i64,
}

impl MiMatrix {
    pub fn compute(dataset: &SensorDataset) -> Result<MiMatrix> {
        MiMatrix::compute_lagged(dataset, 0)
    }

    pub fn compute_lagged(dataset: &SensorDataset, lag: i64) -> Result<MiMatrix> {
        let m = dataset.num_sensors();
        if m < 2 {
            return Err(Error::InsufficientData(
                "mutual information needs at least 2 series".into(),
            ));
        }
        let ids = dataset.ids();
        let mut binning = BTreeMap::new();
        let mut bins: Vec<Option<(Vec<usize>, usize)>> = Vec::with_capacity(m);
        for s in dataset.series() {
            let observed = s.observed_values();
            match binning_for(&observed) {
                Ok(spec) => {
                    bins.push(Some((discretize(s, &spec), spec.bins)));
                    binning.insert(s.id.clone(), spec);
                }
                Err(Error::InsufficientData(_)) => bins.push(None),
                Err(e) => return Err(e),
            }
        }

        let pairs: Vec<(usize, usize)> = if lag == 0 {
            (0..m).flat_map(|r| (r..m).map(move |c| (r, c))).collect()
        } else {
            (0..m).flat_map(|r| (0..m).map(move |c| (r, c))).collect()
        };
        let computed: Vec<((usize, usize), Option<f64>)> = pairs
            .par_iter()
            .map(|&(r, c)| {
                let score = match (&bins[r], &bins[c]) {
                    (Some((bx, kx)), Some((by, ky))) => {
                        pair_mi(dataset, r, c, bx, *kx, by, *ky, lag)
                    }
                    _ => None,
                };
                ((r, c), score)
            })
            .collect();

        let mut scores = vec![None; m * m];
        for ((r, c), score) in computed {
            scores[r * m + c] = score;
            if lag == 0 {
                scores[c * m + r] = score;
            }
        }
        Ok(MiMatrix { ids, scores, binning, lag })
    }

    pub fn get(&self, a: &SensorId, b: &SensorId) -> Option<f64> {
        let r = self.ids.iter().position(|id| id == a)?;
        let c = self.ids.iter().position(|id| id == b)?;
        self.scores[r * self.ids.len() + c]
    }

    /// Table-style CSV: id header row/column, scores with 4 decimal places,
    /// absent pairs left empty.
    pub fn to_csv(&self) -> String {
        let m = self.ids.len();
        let mut out = String::new();
        out.push_str("sensor");
        for id in &self.ids {
            out.push(',');
            out.push_str(id.as_str());
        }
        out.push('\n');
        for r in 0..m {
            out.push_str(self.ids[r].as_str());
            for c in 0..m {
                out.push(',');
                if let Some(v) = self.scores[r * m + c] {
                    out.push_str(&format!("{v:.4}"));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn pair_mi(
    dataset: &SensorDataset,
    r: usize,
    c: usize,
    bx: &[usize],
    kx: usize,
    by: &[usize],
    ky: usize,
    lag: i64,
) -> Option<f64> {
    let sx = &dataset.series()[r];
    let sy = &dataset.series()[c];
    let n = sx.len() as i64;
    let mut jx = Vec::new();
    let mut jy = Vec::new();
    for t in 0..n {
        let u = t - lag;
        if u < 0 || u >= n {
            continue;
        }
        let (t, u) = (t as usize, u as usize);
        if sx.observed[t] && sy.observed[u] {
            jx.push(bx[t]);
            jy.push(by[u]);
        }
    }
    match mutual_information(&jx, &jy, kx, ky) {
        Ok(v) => Some(v),
        Err(Error::InsufficientData(_)) => None,
        Err(_) => None,
    }
}

/// Covariates for one target, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSelection {
    pub target: SensorId,
    pub covariates: Vec<SensorId>,
    pub scores: Vec<f64>,
}

/// Rank non-target sensors by MI with each target and keep the top `top_k`.
///
/// Every sensor in `targets` is excluded from every selection, so targets and
/// covariates stay disjoint. Ties break lexicographically on the sensor id;
/// pairs with no score rank last. `top_k` larger than the candidate pool is
/// clamped with a warning.
pub fn select_informative_covariates(
    matrix: &MiMatrix,
    targets: &[SensorId],
    top_k: usize,
) -> Result<Vec<CovariateSelection>> {
    if top_k == 0 {
        return Err(Error::Validation("top_k must be at least 1".into()));
    }
    for t in targets {
        if !matrix.ids.contains(t) {
            return Err(Error::Validation(format!("target {t} not present in MI matrix")));
        }
    }
    let mut out = Vec::with_capacity(targets.len());
    for target in targets {
        let mut ranked: Vec<(SensorId, f64)> = matrix
            .ids
            .iter()
            .filter(|id| !targets.contains(id))
            .filter_map(|id| matrix.get(target, id).map(|s| (id.clone(), s)))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0))
        });
        let k = if top_k > ranked.len() {
            log::warn!(
                "top_k {} exceeds the {} available covariates for {}; clamping",
                top_k,
                ranked.len(),
                target
            );
            ranked.len()
        } else {
            top_k
        };
        ranked.truncate(k);
        out.push(CovariateSelection {
            target: target.clone(),
            covariates: ranked.iter().map(|r| r.0.clone()).collect(),
            scores: ranked.iter().map(|r| r.1).collect(),
        });
    }
    Ok(out)
}

/// Bottom-`k` covariates among sensors with a strictly positive score,
/// the "less informative" arm of the ablation. Weakest first.
pub fn select_least_informative_covariates(
    matrix: &MiMatrix,
    targets: &[SensorId],
    k: usize,
) -> Result<Vec<CovariateSelection>> {
    let mut selections = select_informative_covariates(matrix, targets, matrix.ids.len())?;
    for sel in &mut selections {
        let mut pairs: Vec<(SensorId, f64)> = sel
            .covariates
            .iter()
            .cloned()
            .zip(sel.scores.iter().copied())
            .filter(|(_, s)| *s > 0.0)
            .collect();
        pairs.reverse();
        pairs.truncate(k);
        sel.covariates = pairs.iter().map(|p| p.0.clone()).collect();
        sel.scores = pairs.iter().map(|p| p.1).collect();
    }
    Ok(selections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{SensorDataset, SensorId, SensorSeries};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::SliceRandom;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    fn sid(s: &str) -> SensorId {
        SensorId::new(s).unwrap()
    }

    #[test]
    fn fd_width_ramp() {
        let values: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(fd_bin_width(&values).unwrap(), 99.9);
    }

    #[test]
    fn fd_width_constant_is_zero() {
        assert_eq!(fd_bin_width(&[5.0; 100]).unwrap(), 0.0);
    }

    #[test]
    fn fd_width_two_level() {
        let mut values = vec![0.0; 500];
        values.extend(vec![10.0; 500]);
        assert_eq!(fd_bin_width(&values).unwrap(), 2.0);
    }

    #[test]
    fn fd_width_needs_two_values() {
        assert!(matches!(fd_bin_width(&[1.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn fd_count_examples() {
        let ramp: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(fd_bin_count(&ramp, 99.9).unwrap(), 10);
        assert_eq!(fd_bin_count(&[5.0; 10], 0.0).unwrap(), 1);
        assert_eq!(fd_bin_count(&[0.0, 10.0], 3.0).unwrap(), 4);
        assert!(matches!(fd_bin_count(&[], 1.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn sturges_fallback_for_zero_iqr_with_spread() {
        // 1000 samples, almost all zero with a few spikes: IQR = 0, range > 0.
        let mut values = vec![0.0; 995];
        values.extend([50.0, 60.0, 70.0, 80.0, 90.0]);
        let spec = binning_for(&values).unwrap();
        assert_eq!(spec.bins, (1000f64.log2().ceil() as usize) + 1);
        assert!(spec.width > 0.0);
    }

    #[test]
    fn discretize_boundaries_and_floor() {
        let spec = BinningSpec { width: 10.0, bins: 10, min: 0.0, max: 100.0 };
        let s = SensorSeries::fully_observed(sid("X"), 0, 300, vec![0.0, 100.0, 37.2]).unwrap();
        assert_eq!(discretize(&s, &spec), vec![0, 9, 3]);

        let one = BinningSpec { width: 0.0, bins: 1, min: 5.0, max: 5.0 };
        let s = SensorSeries::fully_observed(sid("X"), 0, 300, vec![5.0, 5.0]).unwrap();
        assert_eq!(discretize(&s, &one), vec![0, 0]);
    }

    /// Direct evaluation of the MI definition over an explicit joint table,
    /// kept independent of the production reduction order.
    fn brute_force_mi(x: &[usize], y: &[usize], kx: usize, ky: usize) -> f64 {
        let n = x.len() as f64;
        let mut joint = std::collections::HashMap::new();
        let mut mx = std::collections::HashMap::new();
        let mut my = std::collections::HashMap::new();
        for (&a, &b) in x.iter().zip(y) {
            *joint.entry((a, b)).or_insert(0usize) += 1;
            *mx.entry(a).or_insert(0usize) += 1;
            *my.entry(b).or_insert(0usize) += 1;
        }
        let mut total = 0.0;
        for a in 0..kx {
            for b in 0..ky {
                if let Some(&c) = joint.get(&(a, b)) {
                    let pxy = c as f64 / n;
                    let px = *mx.get(&a).unwrap() as f64 / n;
                    let py = *my.get(&b).unwrap() as f64 / n;
                    total += pxy * (pxy / (px * py)).ln();
                }
            }
        }
        total
    }

    #[test]
    fn self_information_is_entropy() {
        // uniform over 8 bins with exact counts
        let x: Vec<usize> = (0..800).map(|i| i % 8).collect();
        let mi = mutual_information(&x, &x, 8, 8).unwrap();
        assert_relative_eq!(mi, 8f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn constant_marginal_gives_zero() {
        let x = vec![0usize; 100];
        let y: Vec<usize> = (0..100).map(|i| i % 4).collect();
        assert_eq!(mutual_information(&x, &y, 1, 4).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(matches!(
            mutual_information(&[0, 1], &[0], 2, 2),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            mutual_information(&[0], &[0], 2, 2),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn independent_uniform_pairs_stay_below_floor() {
        let mut below = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 10_000;
            let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let bx = binning_for(&xs).unwrap();
            let by = binning_for(&ys).unwrap();
            let sx = SensorSeries::fully_observed(sid("X"), 0, 300, xs).unwrap();
            let sy = SensorSeries::fully_observed(sid("Y"), 0, 300, ys).unwrap();
            let mi = mutual_information(
                &discretize(&sx, &bx),
                &discretize(&sy, &by),
                bx.bins,
                by.bins,
            )
            .unwrap();
            if mi < 0.05 {
                below += 1;
            }
        }
        assert!(below >= 19, "only {below}/20 independent pairs under 0.05 nats");
    }

    #[test]
    fn matrix_of_identical_series_is_flat() {
        let values: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64).collect();
        let a = SensorSeries::fully_observed(sid("A"), 0, 300, values.clone()).unwrap();
        let b = SensorSeries::fully_observed(sid("B"), 0, 300, values).unwrap();
        let ds = SensorDataset::new(vec![a, b]).unwrap();
        let m = MiMatrix::compute(&ds).unwrap();
        let aa = m.get(&sid("A"), &sid("A")).unwrap();
        let ab = m.get(&sid("A"), &sid("B")).unwrap();
        assert_eq!(aa, ab);
        assert!(aa > 0.0);
    }

    #[test]
    fn matrix_flags_insufficient_pairs_as_absent() {
        let a = SensorSeries::new(
            sid("A"),
            0,
            300,
            vec![1.0, 2.0, 3.0, 4.0],
            vec![true, true, false, false],
        )
        .unwrap();
        let b = SensorSeries::new(
            sid("B"),
            0,
            300,
            vec![1.0, 2.0, 3.0, 4.0],
            vec![false, false, true, true],
        )
        .unwrap();
        let ds = SensorDataset::new(vec![a, b]).unwrap();
        let m = MiMatrix::compute(&ds).unwrap();
        assert_eq!(m.get(&sid("A"), &sid("B")), None);
        assert!(m.get(&sid("A"), &sid("A")).is_some());
        // CSV leaves the absent cell empty
        let csv = m.to_csv();
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn independent_noise_matrix_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mk = |label: &str| {
            let values: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>() * 100.0).collect();
            SensorSeries::fully_observed(sid(label), 0, 300, values).unwrap()
        };
        let ds = SensorDataset::new(vec![mk("A"), mk("B"), mk("C")]).unwrap();
        let m = MiMatrix::compute(&ds).unwrap();
        for (i, a) in m.ids.iter().enumerate() {
            for b in &m.ids[i + 1..] {
                assert!(m.get(a, b).unwrap() < 0.05);
            }
        }
    }

    /// Table-style selection example: ranked covariates for a target with
    /// known pairwise scores.
    #[test]
    fn selection_ranks_reference_scores() {
        let ids: Vec<SensorId> =
            ["A1", "A2", "A3", "A4", "A5", "A6", "B1", "B2", "B3", "B4", "C1", "C2", "C3", "C4"]
                .iter()
                .map(|s| sid(s))
                .collect();
        let row: &[(&str, f64)] = &[
            ("B1", 1.5237),
            ("B2", 1.3214),
            ("B3", 0.9101),
            ("B4", 0.9349),
            ("A1", 0.7067),
            ("A2", 0.7898),
            ("A3", 0.5563),
            ("A4", 1.4278),
            ("A5", 1.3563),
            ("C1", 0.9052),
            ("C2", 1.0606),
            ("C3", 1.6071),
            ("C4", 1.5833),
        ];
        let m = ids.len();
        let mut scores = vec![Some(0.0); m * m];
        let a6 = ids.iter().position(|id| id.as_str() == "A6").unwrap();
        for (label, v) in row {
            let j = ids.iter().position(|id| id.as_str() == *label).unwrap();
            scores[a6 * m + j] = Some(*v);
            scores[j * m + a6] = Some(*v);
        }
        let matrix = MiMatrix { ids, scores, binning: BTreeMap::new(), lag: 0 };
        let sel = select_informative_covariates(&matrix, &[sid("A6")], 6).unwrap();
        let want: Vec<&str> = vec!["C3", "C4", "B1", "A4", "A5", "B2"];
        assert_eq!(
            sel[0].covariates.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
            want
        );
        assert_eq!(sel[0].scores, vec![1.6071, 1.5833, 1.5237, 1.4278, 1.3563, 1.3214]);

        let one = select_informative_covariates(&matrix, &[sid("A6")], 1).unwrap();
        assert_eq!(one[0].covariates[0].as_str(), "C3");

        let least = select_least_informative_covariates(&matrix, &[sid("A6")], 2).unwrap();
        assert_eq!(
            least[0].covariates.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
            vec!["A3", "A1"]
        );
    }

    #[test]
    fn selection_excludes_all_targets_and_clamps() {
        let ids: Vec<SensorId> = ["A", "B", "C"].iter().map(|s| sid(s)).collect();
        let mut scores = vec![Some(0.5); 9];
        scores[0] = Some(1.0);
        scores[4] = Some(1.0);
        scores[8] = Some(1.0);
        let matrix = MiMatrix { ids, scores, binning: BTreeMap::new(), lag: 0 };
        let sel = select_informative_covariates(&matrix, &[sid("A"), sid("B")], 5).unwrap();
        assert_eq!(sel[0].covariates, vec![sid("C")]);
        assert_eq!(sel[1].covariates, vec![sid("C")]);
    }

    #[test]
    fn lagged_pairing_detects_shifted_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base: Vec<f64> = (0..4000).map(|_| rng.gen::<f64>() * 100.0).collect();
        let shifted: Vec<f64> = (0..4000)
            .map(|t| if t >= 5 { base[t - 5] } else { rng.gen::<f64>() * 100.0 })
            .collect();
        let ds = SensorDataset::new(vec![
            SensorSeries::fully_observed(sid("X"), 0, 300, shifted).unwrap(),
            SensorSeries::fully_observed(sid("Y"), 0, 300, base).unwrap(),
        ])
        .unwrap();
        let zero = MiMatrix::compute(&ds).unwrap().get(&sid("X"), &sid("Y")).unwrap();
        let lagged = MiMatrix::compute_lagged(&ds, 5)
            .unwrap()
            .get(&sid("X"), &sid("Y"))
            .unwrap();
        assert!(lagged > 10.0 * zero.max(0.01), "lagged {lagged} vs zero-lag {zero}");
    }

    #[test]
    fn permuting_one_side_destroys_information() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 4000;
            let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 100.0).collect();
            let y: Vec<f64> = x.iter().map(|v| v * 0.8 + rng.gen::<f64>() * 5.0).collect();
            let bx = binning_for(&x).unwrap();
            let by = binning_for(&y).unwrap();
            let dx = discretize(
                &SensorSeries::fully_observed(sid("X"), 0, 300, x).unwrap(),
                &bx,
            );
            let mut dy = discretize(
                &SensorSeries::fully_observed(sid("Y"), 0, 300, y).unwrap(),
                &by,
            );
            let dependent = mutual_information(&dx, &dy, bx.bins, by.bins).unwrap();
            dy.shuffle(&mut rng);
            let permuted = mutual_information(&dx, &dy, bx.bins, by.bins).unwrap();
            assert!(
                permuted < 0.1 * dependent,
                "seed {seed}: permuted {permuted} vs dependent {dependent}"
            );
        }
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_symmetric(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 2..50)
        ) {
            let x: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let ours = mutual_information(&x, &y, 4, 4).unwrap();
            let brute = brute_force_mi(&x, &y, 4, 4);
            prop_assert!((ours - brute).abs() < 1e-12);
            prop_assert!(brute >= -1e-12);
            // exact symmetry, bit for bit
            let swapped = mutual_information(&y, &x, 4, 4).unwrap();
            prop_assert_eq!(ours.to_bits(), swapped.to_bits());
            // self-information dominates cross-information on the same binning
            let self_mi = mutual_information(&x, &x, 4, 4).unwrap();
            prop_assert!(self_mi >= ours - 1e-12);
        }
    }
}
