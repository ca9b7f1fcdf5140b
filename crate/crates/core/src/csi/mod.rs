//! CSI data model and the preprocessing chain: align → normalize → segment,
//! plus subcarrier selection/truncation and the on-disk capture format.

mod format;
mod preprocess;
mod subcarrier;

pub use format::{read_csb1, read_labels, write_csb1, write_labels, CSB1_MAGIC, CSB1_VERSION};
pub use preprocess::{align, assign_labels, mean_amplitude, normalize, segment};
pub use subcarrier::{select_data_subcarriers, truncate_subcarriers, SubcarrierPlan, VHT80_DATA_SUBCARRIERS, VHT80_FFT_SIZE};

use num_complex::Complex;
use thiserror::Error;

use crate::scalar::Real;

/// Default CSI sampling rate (50 samples per 0.1 s window).
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 500.0;
/// Default window length in samples.
pub const DEFAULT_WINDOW_SAMPLES: usize = 50;

#[derive(Debug, Error)]
pub enum CsiError {
    #[error("invalid capture: {0}")]
    InvalidCapture(String),
    #[error("no valid rows left after discarding corrupted measurements")]
    AllRowsCorrupted,
    #[error("mean CSI amplitude is zero")]
    ZeroMeanAmplitude,
    #[error("capture has {actual} columns but the plan expects {expected}")]
    PlanMismatch { expected: usize, actual: usize },
    #[error("cannot keep {k} subcarriers out of {available}")]
    OutOfRange { k: usize, available: usize },
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-monitor CSI matrix: `S` time samples × `K` subcarriers of complex
/// channel estimates, with timestamps and per-row validity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiCapture<T> {
    samples: Vec<Complex<T>>,
    rows: usize,
    cols: usize,
    timestamps: Vec<f64>,
    monitor_id: u32,
    sample_rate_hz: f64,
    valid: Vec<bool>,
}

impl<T: Real> CsiCapture<T> {
    pub fn new(
        samples: Vec<Complex<T>>,
        cols: usize,
        timestamps: Vec<f64>,
        monitor_id: u32,
        sample_rate_hz: f64,
        valid: Vec<bool>,
    ) -> Result<Self, CsiError> {
        let rows = timestamps.len();
        if rows == 0 || cols == 0 {
            return Err(CsiError::InvalidCapture(format!("empty capture ({rows}×{cols})")));
        }
        if samples.len() != rows * cols {
            return Err(CsiError::InvalidCapture(format!(
                "{} samples for {rows} rows × {cols} subcarriers",
                samples.len()
            )));
        }
        if valid.len() != rows {
            return Err(CsiError::InvalidCapture(format!("{} validity flags for {rows} rows", valid.len())));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(CsiError::InvalidCapture(format!("sample rate {sample_rate_hz}")));
        }
        if timestamps.iter().any(|t| !t.is_finite()) || timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CsiError::InvalidCapture("timestamps must be finite and strictly increasing".into()));
        }
        Ok(Self { samples, rows, cols, timestamps, monitor_id, sample_rate_hz, valid })
    }

    /// Capture with every row flagged valid and timestamps `i / sample_rate`.
    pub fn uniform(samples: Vec<Complex<T>>, cols: usize, monitor_id: u32, sample_rate_hz: f64) -> Result<Self, CsiError> {
        let rows = samples.len().checked_div(cols).unwrap_or(0);
        let ts = (0..rows).map(|i| i as f64 / sample_rate_hz).collect();
        Self::new(samples, cols, ts, monitor_id, sample_rate_hz, vec![true; rows])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn subcarriers(&self) -> usize {
        self.cols
    }

    pub fn samples(&self) -> &[Complex<T>] {
        &self.samples
    }

    pub fn row(&self, i: usize) -> &[Complex<T>] {
        &self.samples[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.samples[row * self.cols + col]
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn monitor_id(&self) -> u32 {
        self.monitor_id
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }
}

/// Ground truth attached to a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowLabel {
    pub subject_id: u32,
    pub activity_id: u32,
}

/// One labelled row range of a capture (`end_row` exclusive), as stored in the
/// CSV label sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelSpan {
    pub start_row: usize,
    pub end_row: usize,
    pub subject_id: u32,
    pub activity_id: u32,
}

/// Fixed-size segment of a capture: an `S_p × K × 2` real tensor holding the
/// real (channel 0) and imaginary (channel 1) parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<T> {
    tensor: Vec<T>,
    rows: usize,
    subcarriers: usize,
    start_time: f64,
    label: Option<WindowLabel>,
}

impl<T: Real> Window<T> {
    /// `tensor` is laid out `[(s·K + k)·2 + c]`.
    pub fn new(tensor: Vec<T>, rows: usize, subcarriers: usize, start_time: f64) -> Result<Self, CsiError> {
        if tensor.len() != rows * subcarriers * 2 {
            return Err(CsiError::InvalidCapture(format!(
                "window tensor of {} elements for {rows}×{subcarriers}×2",
                tensor.len()
            )));
        }
        if tensor.iter().any(|v| !v.is_finite()) {
            return Err(CsiError::InvalidCapture("non-finite window entry".into()));
        }
        Ok(Self { tensor, rows, subcarriers, start_time, label: None })
    }

    pub fn with_label(mut self, label: WindowLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn set_label(&mut self, label: Option<WindowLabel>) {
        self.label = label;
    }

    pub fn label(&self) -> Option<WindowLabel> {
        self.label
    }

    pub fn tensor(&self) -> &[T] {
        &self.tensor
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn element_count(&self) -> usize {
        self.tensor.len()
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.rows, self.subcarriers, 2]
    }

    pub fn get(&self, s: usize, k: usize, c: usize) -> T {
        self.tensor[(s * self.subcarriers + k) * 2 + c]
    }

    /// Appends the window as a channels-first `2 × S_p × K` block.
    pub fn extend_channels_first(&self, out: &mut Vec<T>) {
        for c in 0..2 {
            out.extend(self.tensor.iter().skip(c).step_by(2).copied());
        }
    }

    pub fn cast<U: Real>(&self) -> Window<U> {
        Window {
            tensor: self.tensor.iter().map(|v| U::lit(v.as_f64())).collect(),
            rows: self.rows,
            subcarriers: self.subcarriers,
            start_time: self.start_time,
            label: self.label,
        }
    }
}
