//! Small order-statistics helpers shared by binning and forecast summaries.

/// Linear-interpolation quantile (the "type 7" convention) of unsorted data.
///
/// `p` must lie in [0, 1]; the slice must be non-empty.
pub(crate) fn quantile(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in quantile input"));
    quantile_sorted(&sorted, p)
}

pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = lo.min(n - 2) + 1;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Interquartile range with type-7 quartiles.
pub(crate) fn iqr(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in iqr input"));
    quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)
}

pub(crate) fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}
