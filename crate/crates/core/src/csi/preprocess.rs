use num_complex::Complex;

use crate::scalar::Real;

use super::{CsiCapture, CsiError, LabelSpan, Window, WindowLabel};

fn row_is_usable<T: Real>(row: &[Complex<T>], valid: bool) -> bool {
    valid
        && row.iter().all(|c| c.re.is_finite() && c.im.is_finite())
        && row.iter().any(|c| c.re != T::zero() || c.im != T::zero())
}

/// Drops rows that are flagged invalid, contain NaN/Inf, or are identically
/// zero. Surviving rows keep their order and timestamps.
pub fn align<T: Real>(raw: &CsiCapture<T>) -> Result<CsiCapture<T>, CsiError> {
    let keep: Vec<usize> = (0..raw.rows()).filter(|&i| row_is_usable(raw.row(i), raw.valid()[i])).collect();
    if keep.is_empty() {
        return Err(CsiError::AllRowsCorrupted);
    }
    let mut samples = Vec::with_capacity(keep.len() * raw.subcarriers());
    for &i in &keep {
        samples.extend_from_slice(raw.row(i));
    }
    let ts = keep.iter().map(|&i| raw.timestamps()[i]).collect();
    CsiCapture::new(samples, raw.subcarriers(), ts, raw.monitor_id(), raw.sample_rate_hz(), vec![true; keep.len()])
}

/// Mean of `|h|` over every entry, accumulated in `f64` with Neumaier
/// compensation.
pub fn mean_amplitude<T: Real>(capture: &CsiCapture<T>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for c in capture.samples() {
        let v = c.norm().as_f64();
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    (sum + comp) / capture.samples().len() as f64
}

/// Divides every entry by the capture's mean amplitude. Phases are untouched.
///
/// A capture whose mean amplitude is already 1 to within rounding noise
/// (16 ε of `T`) is returned unchanged, which makes the operation idempotent.
pub fn normalize<T: Real>(capture: &CsiCapture<T>) -> Result<CsiCapture<T>, CsiError> {
    let mean = mean_amplitude(capture);
    if !(mean.is_finite() && mean > 0.0) {
        return Err(CsiError::ZeroMeanAmplitude);
    }
    if (mean - 1.0).abs() <= 16.0 * T::epsilon().as_f64() {
        return Ok(capture.clone());
    }
    let inv = T::lit(mean);
    let samples = capture.samples().iter().map(|c| c.unscale(inv)).collect();
    CsiCapture::new(
        samples,
        capture.subcarriers(),
        capture.timestamps().to_vec(),
        capture.monitor_id(),
        capture.sample_rate_hz(),
        capture.valid().to_vec(),
    )
}

/// Splits a capture into non-overlapping windows of `window_samples` rows.
/// Trailing rows that do not fill a window are dropped.
pub fn segment<T: Real>(capture: &CsiCapture<T>, window_samples: usize) -> Vec<Window<T>> {
    if window_samples == 0 {
        return Vec::new();
    }
    let k = capture.subcarriers();
    (0..capture.rows() / window_samples)
        .map(|p| {
            let first = p * window_samples;
            let mut tensor = Vec::with_capacity(window_samples * k * 2);
            for c in &capture.samples()[first * k..(first + window_samples) * k] {
                tensor.push(c.re);
                tensor.push(c.im);
            }
            Window::new(tensor, window_samples, k, capture.timestamps()[first])
                .expect("aligned captures are finite")
        })
        .collect()
}

/// Labels each window with the span (of `subject_id`) containing its start
/// time. Spans are row ranges of the capture before alignment, whose
/// timestamps are `raw_timestamps`. Windows whose start falls in no span are
/// left unlabelled.
pub fn assign_labels<T: Real>(
    windows: &mut [Window<T>],
    raw_timestamps: &[f64],
    sample_rate_hz: f64,
    spans: &[LabelSpan],
    subject_id: u32,
) {
    let ts = raw_timestamps;
    let period = 1.0 / sample_rate_hz;
    let intervals: Vec<(f64, f64, WindowLabel)> = spans
        .iter()
        .filter(|s| s.subject_id == subject_id && s.start_row < s.end_row && s.start_row < ts.len())
        .map(|s| {
            let end = if s.end_row < ts.len() { ts[s.end_row] } else { ts[ts.len() - 1] + period };
            (ts[s.start_row], end, WindowLabel { subject_id: s.subject_id, activity_id: s.activity_id })
        })
        .collect();
    for w in windows.iter_mut() {
        let t = w.start_time();
        w.set_label(intervals.iter().find(|(a, b, _)| *a <= t && t < *b).map(|(_, _, l)| *l));
    }
}
