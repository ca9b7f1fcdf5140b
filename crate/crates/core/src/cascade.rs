//! Two-stage detection: a per-monitor subject stage with `P + 1` classes
//! (subjects plus "no activity") gates an activity stage with `Q` classes.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::csi::Window;
use crate::frel::{argmax, FrelError, Predictor};
use crate::nn::{Classifier, EmbeddingNet, Mode, NnError};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("no model for monitor {0}")]
    UnknownMonitor(u32),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("invalid cascade: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Frel(#[from] FrelError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// A classifier stage: one logit vector per window.
pub trait StageModel<T> {
    fn class_count(&self) -> usize;
    fn logits(&self, window: &Window<T>) -> Result<Vec<T>, CascadeError>;
}

/// Frozen embedding network plus linear head.
#[derive(Debug, Clone)]
pub struct CnnStage<T> {
    pub net: EmbeddingNet<T>,
    pub head: Classifier<T>,
}

impl<T: Real> CnnStage<T> {
    pub fn new(net: EmbeddingNet<T>, head: Classifier<T>) -> Result<Self, CascadeError> {
        if net.mode() != Mode::Inference {
            return Err(FrelError::NotFrozen.into());
        }
        Ok(Self { net, head })
    }
}

impl<T: Real> StageModel<T> for CnnStage<T> {
    fn class_count(&self) -> usize {
        self.head.classes
    }

    fn logits(&self, window: &Window<T>) -> Result<Vec<T>, CascadeError> {
        let x = crate::frel::stack_windows(&[window])?;
        let z = self.net.embed(&x)?;
        Ok(self.head.forward(z.data(), 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubjectDecision {
    Subject(u32),
    NoActivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CascadeOutput {
    pub subject: SubjectDecision,
    /// `None` when the activity stage was skipped.
    pub activity: Option<usize>,
}

/// Where the activity stage lives.
#[derive(Debug, Clone)]
pub enum ActivityStage<M> {
    /// One model per monitor (default).
    PerMonitor(BTreeMap<u32, M>),
    /// One model shared by every monitor.
    Shared(M),
}

/// `P` subjects, `Q` activities, a subject model per monitor and the
/// activity stage. Subject class `s < P` is subject id `s`; class `P` is
/// "no activity".
#[derive(Debug, Clone)]
pub struct Cascade<M> {
    subjects: usize,
    activities: usize,
    subject_models: BTreeMap<u32, M>,
    activity: ActivityStage<M>,
}

impl<M> Cascade<M> {
    pub fn new<T>(
        subjects: usize,
        activities: usize,
        subject_models: BTreeMap<u32, M>,
        activity: ActivityStage<M>,
    ) -> Result<Self, CascadeError>
    where
        M: StageModel<T>,
    {
        if subjects == 0 || activities == 0 {
            return Err(CascadeError::InvalidConfig("need at least one subject and one activity".into()));
        }
        if subject_models.len() < subjects {
            return Err(CascadeError::InvalidConfig(format!(
                "{} monitors for {subjects} subjects",
                subject_models.len()
            )));
        }
        if let Some((id, m)) = subject_models.iter().find(|(_, m)| m.class_count() != subjects + 1) {
            return Err(CascadeError::SizeMismatch(format!(
                "subject model of monitor {id} has {} classes, expected {}",
                m.class_count(),
                subjects + 1
            )));
        }
        let activity_models: Vec<(Option<u32>, &M)> = match &activity {
            ActivityStage::Shared(m) => vec![(None, m)],
            ActivityStage::PerMonitor(ms) => {
                if let Some(id) = subject_models.keys().find(|id| !ms.contains_key(id)) {
                    return Err(CascadeError::UnknownMonitor(*id));
                }
                ms.iter().map(|(id, m)| (Some(*id), m)).collect()
            }
        };
        if let Some((id, m)) = activity_models.iter().find(|(_, m)| m.class_count() != activities) {
            return Err(CascadeError::SizeMismatch(format!(
                "activity model {id:?} has {} classes, expected {activities}",
                m.class_count()
            )));
        }
        Ok(Self { subjects, activities, subject_models, activity })
    }

    pub fn subjects(&self) -> usize {
        self.subjects
    }

    pub fn activities(&self) -> usize {
        self.activities
    }

    pub fn monitor_ids(&self) -> Vec<u32> {
        self.subject_models.keys().copied().collect()
    }

    /// Output neurons across both stages: `(P + 1) + Q`.
    pub fn total_output_classes(&self) -> usize {
        cascade_output_classes(self.subjects, self.activities)
    }

    pub fn detect_subject<T>(&self, monitor_id: u32, window: &Window<T>) -> Result<SubjectDecision, CascadeError>
    where
        T: PartialOrd + Copy,
        M: StageModel<T>,
    {
        let model = self.subject_models.get(&monitor_id).ok_or(CascadeError::UnknownMonitor(monitor_id))?;
        let logits = model.logits(window)?;
        if logits.len() != self.subjects + 1 {
            return Err(CascadeError::SizeMismatch(format!("{} subject logits, expected {}", logits.len(), self.subjects + 1)));
        }
        let c = argmax(&logits);
        Ok(if c == self.subjects { SubjectDecision::NoActivity } else { SubjectDecision::Subject(c as u32) })
    }

    pub fn classify_activity<T>(&self, monitor_id: u32, window: &Window<T>) -> Result<usize, CascadeError>
    where
        T: PartialOrd + Copy,
        M: StageModel<T>,
    {
        let model = match &self.activity {
            ActivityStage::Shared(m) => m,
            ActivityStage::PerMonitor(ms) => ms.get(&monitor_id).ok_or(CascadeError::UnknownMonitor(monitor_id))?,
        };
        let logits = model.logits(window)?;
        if logits.len() != self.activities {
            return Err(CascadeError::SizeMismatch(format!("{} activity logits, expected {}", logits.len(), self.activities)));
        }
        Ok(argmax(&logits))
    }

    /// Subject stage, then the activity stage unless the subject stage says
    /// "no activity".
    pub fn run<T>(&self, monitor_id: u32, window: &Window<T>) -> Result<CascadeOutput, CascadeError>
    where
        T: PartialOrd + Copy,
        M: StageModel<T>,
    {
        let subject = self.detect_subject(monitor_id, window)?;
        let activity = match subject {
            SubjectDecision::NoActivity => None,
            SubjectDecision::Subject(_) => Some(self.classify_activity(monitor_id, window)?),
        };
        Ok(CascadeOutput { subject, activity })
    }
}

/// `(P + 1) + Q`.
pub fn cascade_output_classes(subjects: usize, activities: usize) -> usize {
    subjects + 1 + activities
}

/// `Q^P` joint labels of a flat classifier; `None` on overflow.
pub fn flat_output_classes(subjects: usize, activities: usize) -> Option<u128> {
    (activities as u128).checked_pow(u32::try_from(subjects).ok()?)
}

/// Test windows seen by one monitor, with every subject's activity label
/// (`None` where that subject is idle).
#[derive(Debug, Clone)]
pub struct MonitorTest<X> {
    pub monitor_id: u32,
    pub inputs: Vec<X>,
    pub labels_by_subject: Vec<(u32, Vec<Option<usize>>)>,
}

/// Accuracy grid: `accuracy[i][j]` is monitor `i`'s model scored against
/// subject `j`'s activities, over the windows where subject `j` is active.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityMatrix {
    pub monitor_ids: Vec<u32>,
    pub subject_ids: Vec<u32>,
    pub accuracy: Vec<Vec<f64>>,
}

impl ProximityMatrix {
    /// Smallest `own − cross` gap over every row, in accuracy units. Monitor
    /// `i`'s own subject is the subject with the same id.
    pub fn min_dominance_margin(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, &m) in self.monitor_ids.iter().enumerate() {
            let own = self.subject_ids.iter().position(|&s| s == m)?;
            for j in (0..self.subject_ids.len()).filter(|&j| j != own) {
                let gap = self.accuracy[i][own] - self.accuracy[i][j];
                best = Some(best.map_or(gap, |b| b.min(gap)));
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("monitor\\subject");
        for j in &self.subject_ids {
            s.push_str(&format!(",{j}"));
        }
        s.push('\n');
        for (m, row) in self.monitor_ids.iter().zip(&self.accuracy) {
            s.push_str(&m.to_string());
            for v in row {
                s.push_str(&format!(",{v:.6}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Runs each monitor's model once over its test windows and scores the
/// predictions against every subject's labels.
pub fn proximity_matrix<X, P: Predictor<X>>(
    models: &[(u32, P)],
    tests: &[MonitorTest<X>],
) -> Result<ProximityMatrix, CascadeError> {
    if models.len() != tests.len() {
        return Err(CascadeError::SizeMismatch(format!("{} models for {} test sets", models.len(), tests.len())));
    }
    let subject_ids: Vec<u32> = tests.first().map(|t| t.labels_by_subject.iter().map(|p| p.0).collect()).unwrap_or_default();
    let mut accuracy = Vec::with_capacity(tests.len());
    for ((mid, model), test) in models.iter().zip(tests) {
        if *mid != test.monitor_id {
            return Err(CascadeError::SizeMismatch(format!("model of monitor {mid} paired with test set of {}", test.monitor_id)));
        }
        let ids: Vec<u32> = test.labels_by_subject.iter().map(|p| p.0).collect();
        if ids != subject_ids {
            return Err(CascadeError::SizeMismatch(format!("monitor {mid} lists subjects {ids:?}, expected {subject_ids:?}")));
        }
        if let Some((s, l)) = test.labels_by_subject.iter().find(|(_, l)| l.len() != test.inputs.len()) {
            return Err(CascadeError::SizeMismatch(format!(
                "subject {s} has {} labels for {} windows",
                l.len(),
                test.inputs.len()
            )));
        }
        let xs: Vec<&X> = test.inputs.iter().collect();
        let predicted = model.predict_batch(&xs)?;
        let row = test
            .labels_by_subject
            .iter()
            .map(|(_, labels)| {
                let (hits, n) = labels
                    .iter()
                    .zip(&predicted)
                    .filter_map(|(l, p)| l.map(|l| l == *p))
                    .fold((0usize, 0usize), |(h, n), hit| (h + usize::from(hit), n + 1));
                if n == 0 { 0.0 } else { hits as f64 / n as f64 }
            })
            .collect();
        accuracy.push(row);
    }
    Ok(ProximityMatrix { monitor_ids: models.iter().map(|m| m.0).collect(), subject_ids, accuracy })
}
