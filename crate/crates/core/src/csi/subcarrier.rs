use crate::scalar::Real;

use super::{CsiCapture, CsiError, Window};

pub const VHT80_FFT_SIZE: usize = 256;
pub const VHT80_DATA_SUBCARRIERS: usize = 242;

/// Which columns of a raw FFT-grid capture carry data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubcarrierPlan {
    channel_width_mhz: u32,
    fft_size: usize,
    occupied: Vec<i32>,
}

impl SubcarrierPlan {
    /// 80 MHz VHT tones: −122..=−2 and 2..=122.
    pub fn vht80() -> Self {
        let occupied = (-122..=-2).chain(2..=122).collect();
        Self { channel_width_mhz: 80, fft_size: VHT80_FFT_SIZE, occupied }
    }

    pub fn channel_width_mhz(&self) -> u32 {
        self.channel_width_mhz
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn occupied_indices(&self) -> &[i32] {
        &self.occupied
    }

    /// Raw column holding subcarrier `index`; column 0 is index `−fft_size/2`.
    pub fn column_of(&self, index: i32) -> usize {
        (index + (self.fft_size / 2) as i32) as usize
    }
}

/// Keeps the plan's occupied columns of a raw `S × fft_size` capture, in
/// ascending subcarrier order.
pub fn select_data_subcarriers<T: Real>(raw: &CsiCapture<T>, plan: &SubcarrierPlan) -> Result<CsiCapture<T>, CsiError> {
    if raw.subcarriers() != plan.fft_size() {
        return Err(CsiError::PlanMismatch { expected: plan.fft_size(), actual: raw.subcarriers() });
    }
    let cols: Vec<usize> = plan.occupied_indices().iter().map(|&i| plan.column_of(i)).collect();
    let mut samples = Vec::with_capacity(raw.rows() * cols.len());
    for r in 0..raw.rows() {
        let row = raw.row(r);
        samples.extend(cols.iter().map(|&c| row[c]));
    }
    CsiCapture::new(
        samples,
        cols.len(),
        raw.timestamps().to_vec(),
        raw.monitor_id(),
        raw.sample_rate_hz(),
        raw.valid().to_vec(),
    )
}

/// Keeps the first `k` subcarrier columns of a window.
pub fn truncate_subcarriers<T: Real>(window: &Window<T>, k: usize) -> Result<Window<T>, CsiError> {
    let available = window.subcarriers();
    if k == 0 || k > available {
        return Err(CsiError::OutOfRange { k, available });
    }
    let mut tensor = Vec::with_capacity(window.rows() * k * 2);
    for row in window.tensor().chunks_exact(available * 2) {
        tensor.extend_from_slice(&row[..k * 2]);
    }
    let mut out = Window::new(tensor, window.rows(), k, window.start_time())?;
    out.set_label(window.label());
    Ok(out)
}
