use crate::error::DataError;

/// Percentile `pct` in [0, 100] of already sorted data, linear
/// interpolation between order statistics.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Clip at the given percentiles, then map affinely onto [0, 255] with
/// round-half-up. A constant input maps to all zeros.
pub fn quantize_to_u8(values: &[f64], lo_pct: f64, hi_pct: f64) -> Result<Vec<u8>, DataError> {
    if values.is_empty() {
        return Err(DataError::Invalid("quantize_to_u8: empty input".into()));
    }
    if !(0.0..100.0).contains(&lo_pct) || !(lo_pct < hi_pct && hi_pct <= 100.0) {
        return Err(DataError::Invalid(format!(
            "quantize_to_u8: need 0 <= lo_pct < hi_pct <= 100, got {lo_pct}, {hi_pct}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, lo_pct);
    let hi = percentile(&sorted, hi_pct);
    if !(hi > lo) {
        return Ok(vec![0; values.len()]);
    }
    let scale = 255.0 / (hi - lo);
    Ok(values
        .iter()
        .map(|&v| ((v.clamp(lo, hi) - lo) * scale + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect())
}
