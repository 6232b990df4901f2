//! Order-independent summary statistics.
//!
//! Inputs are sorted before accumulation, so any permutation of the same
//! values yields bit-identical results.

/// Population mean and standard deviation.
///
/// The mean lies within `[min, max]` and the deviation is exactly zero iff
/// all values are equal. Returns `None` for an empty slice.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (&min, &max) = (sorted.first()?, sorted.last()?);
    if min == max {
        return Some((min, 0.0));
    }
    let n = sorted.len() as f64;
    let offset: f64 = sorted.iter().map(|x| x - min).sum();
    let mean = (min + offset / n).clamp(min, max);
    let var: f64 = sorted.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Sum in ascending order.
pub fn ordered_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}
