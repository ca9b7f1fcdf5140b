//! Synthetic multi-monitor CSI: a static multipath baseline per monitor plus
//! distance-weighted activity perturbations from every subject.

mod benchmark;
mod model;

pub use benchmark::{
    make_benchmark, make_idle_windows, make_subject_benchmark, monitor_split, simulate_recording, target_split, train_split,
    Benchmark, BenchmarkConfig, MonitorSplit, Phase, SceneConfig, Shift, TargetSplit,
};
pub use model::{ActivitySignature, ChannelModel, ModelConfig, SubjectWarp};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csi::{CsiCapture, CsiError, LabelSpan};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("schedule entry [{start_s}, {end_s}) s of subject {subject_id} lies outside the {duration_s} s capture")]
    ScheduleOutOfRange { subject_id: u32, start_s: f64, end_s: f64, duration_s: f64 },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot fill the {split} split: {detail}")]
    InsufficientDuration { split: &'static str, detail: String },
    #[error(transparent)]
    Csi(#[from] CsiError),
}

/// Planar position in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, o: &Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub start_s: f64,
    pub end_s: f64,
    pub activity_id: u32,
}

/// Ordered, non-overlapping activity bouts. Time outside every bout is idle.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivitySchedule {
    entries: Vec<ScheduleEntry>,
}

impl ActivitySchedule {
    pub fn new(entries: Vec<ScheduleEntry>, activities: u32) -> Result<Self, SynthError> {
        for e in &entries {
            if !(e.start_s.is_finite() && e.end_s.is_finite() && e.start_s >= 0.0 && e.start_s < e.end_s) {
                return Err(SynthError::InvalidScene(format!("bad bout [{}, {})", e.start_s, e.end_s)));
            }
            if e.activity_id >= activities {
                return Err(SynthError::InvalidScene(format!("activity {} ≥ {activities}", e.activity_id)));
            }
        }
        if entries.windows(2).any(|w| w[1].start_s < w[0].end_s) {
            return Err(SynthError::InvalidScene("bouts overlap or are out of order".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    /// Index of the bout covering `t`, if any.
    pub fn entry_at(&self, t: f64) -> Option<usize> {
        let i = self.entries.partition_point(|e| e.start_s <= t);
        (i > 0 && t < self.entries[i - 1].end_s).then(|| i - 1)
    }

    pub fn end_s(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.end_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    pub monitor_id: u32,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub subject_id: u32,
    pub position: Point,
    pub schedule: ActivitySchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub ap_position: Point,
    pub monitors: Vec<Monitor>,
    pub subjects: Vec<Subject>,
    pub noise_std: f64,
    pub rng_seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.monitors.is_empty() {
            return Err(SynthError::InvalidScene("no monitors".into()));
        }
        let finite = self.ap_position.is_finite()
            && self.monitors.iter().all(|m| m.position.is_finite())
            && self.subjects.iter().all(|s| s.position.is_finite());
        if !finite {
            return Err(SynthError::InvalidScene("non-finite position".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(SynthError::InvalidScene(format!("noise_std {}", self.noise_std)));
        }
        Ok(())
    }

    /// Cascade experiments need at least one monitor per subject.
    pub fn validate_for_cascade(&self) -> Result<(), SynthError> {
        self.validate()?;
        if self.subjects.is_empty() || self.monitors.len() < self.subjects.len() {
            return Err(SynthError::InvalidScene(format!(
                "{} monitors for {} subjects",
                self.monitors.len(),
                self.subjects.len()
            )));
        }
        Ok(())
    }
}

/// One monitor's capture and the row-range labels of every subject.
#[derive(Debug, Clone)]
pub struct SimulatedCapture<T> {
    pub capture: CsiCapture<T>,
    pub labels: Vec<LabelSpan>,
}

/// Row-range labels for a schedule sampled at `sample_rate_hz`.
pub fn schedule_spans(subject_id: u32, schedule: &ActivitySchedule, sample_rate_hz: f64, rows: usize) -> Vec<LabelSpan> {
    let row_of = |t: f64| (((t * sample_rate_hz) - 1e-9).ceil().max(0.0) as usize).min(rows);
    schedule
        .entries()
        .iter()
        .map(|e| LabelSpan { start_row: row_of(e.start_s), end_row: row_of(e.end_s), subject_id, activity_id: e.activity_id })
        .filter(|s| s.start_row < s.end_row)
        .collect()
}

/// Simulates every monitor of `scene` for `duration_s` seconds.
pub fn simulate<T: Real>(
    scene: &Scene,
    model: &ChannelModel,
    duration_s: f64,
    sample_rate_hz: f64,
) -> Result<Vec<SimulatedCapture<T>>, SynthError> {
    model::simulate(scene, model, duration_s, sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bout(a: f64, b: f64, act: u32) -> ScheduleEntry {
        ScheduleEntry { start_s: a, end_s: b, activity_id: act }
    }

    #[test]
    fn schedule_lookup_and_validation() {
        let s = ActivitySchedule::new(vec![bout(0.0, 1.0, 2), bout(1.5, 2.0, 0)], 3).unwrap();
        assert_eq!(s.entry_at(0.0), Some(0));
        assert_eq!(s.entry_at(0.999), Some(0));
        assert_eq!(s.entry_at(1.2), None);
        assert_eq!(s.entry_at(1.5), Some(1));
        assert_eq!(s.entry_at(2.0), None);
        assert!(ActivitySchedule::new(vec![bout(0.0, 1.0, 0), bout(0.5, 2.0, 1)], 3).is_err());
        assert!(ActivitySchedule::new(vec![bout(0.0, 1.0, 3)], 3).is_err());
    }

    #[test]
    fn spans_follow_sample_grid() {
        let s = ActivitySchedule::new(vec![bout(0.0, 0.1, 1), bout(0.1, 0.3, 4)], 5).unwrap();
        let spans = schedule_spans(7, &s, 500.0, 1000);
        assert_eq!((spans[0].start_row, spans[0].end_row), (0, 50));
        assert_eq!((spans[1].start_row, spans[1].end_row), (50, 150));
        assert_eq!(spans[1].subject_id, 7);
    }
}
