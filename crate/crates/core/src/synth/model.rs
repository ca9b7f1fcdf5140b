use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::csi::{CsiCapture, SubcarrierPlan};
use crate::scalar::Real;

use super::{schedule_spans, Monitor, Scene, SimulatedCapture, Subject, SynthError};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Channel 42 centre frequency.
const CENTER_FREQ_HZ: f64 = 5.21e9;
const SUBCARRIER_SPACING_HZ: f64 = 312.5e3;
const RAMP_LEVELS: [f64; 4] = [-0.6, -0.2, 0.2, 0.6];

/// Knobs of the channel model and of the domain shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Distance-decay power `γ` in `(1 + d)^-γ`.
    pub gain_exponent: f64,
    pub signature_amplitude: f64,
    /// Non line-of-sight paths per monitor.
    pub scatter_paths: usize,
    /// Upper bound on the summed scatter-path amplitude (line of sight is 1).
    pub scatter_budget: f64,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    /// Gaussian support width as a fraction of the band.
    pub support_width: f64,
    /// Relative signature jitter of an environment shift.
    pub environment_jitter: f64,
    /// Relative spread of the per-subject style warps.
    pub subject_warp: f64,
    /// Relative amplitude and tempo jitter of each bout.
    pub bout_jitter: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gain_exponent: 3.0,
            signature_amplitude: 6.0,
            scatter_paths: 5,
            scatter_budget: 0.7,
            min_freq_hz: 20.0,
            max_freq_hz: 160.0,
            support_width: 0.08,
            environment_jitter: 0.2,
            subject_warp: 0.15,
            bout_jitter: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if !(self.gain_exponent > 0.0 && self.gain_exponent.is_finite()) {
            return bad(format!("gain_exponent {} must be positive", self.gain_exponent));
        }
        if !(self.scatter_budget >= 0.0 && self.scatter_budget < 1.0) {
            return bad(format!("scatter_budget {} must lie in [0, 1)", self.scatter_budget));
        }
        if !(self.min_freq_hz > 0.0 && self.min_freq_hz <= self.max_freq_hz) {
            return bad("need 0 < min_freq_hz ≤ max_freq_hz".into());
        }
        if !(self.support_width > 0.0) || !(self.signature_amplitude >= 0.0) {
            return bad("support_width must be positive and signature_amplitude non-negative".into());
        }
        for (name, v) in [
            ("environment_jitter", self.environment_jitter),
            ("subject_warp", self.subject_warp),
            ("bout_jitter", self.bout_jitter),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} {v} must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Band-limited sinusoidal burst: a plane wave in (time, subcarrier) under a
/// Gaussian subcarrier envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivitySignature {
    pub freq_hz: f64,
    /// Phase advance per subcarrier, radians.
    pub ramp: f64,
    /// Envelope centre as a fraction of the band.
    pub center: f64,
    /// Envelope standard deviation as a fraction of the band.
    pub width: f64,
    pub amplitude: f64,
}

/// Multiplicative style of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectWarp {
    pub freq_scale: f64,
    pub ramp_scale: f64,
    pub amplitude_scale: f64,
}

impl Default for SubjectWarp {
    fn default() -> Self {
        Self { freq_scale: 1.0, ramp_scale: 1.0, amplitude_scale: 1.0 }
    }
}

impl SubjectWarp {
    fn random(rng: &mut impl Rng, spread: f64) -> Self {
        let mut f = || 1.0 + rng.random_range(-1.0..=1.0) * spread;
        Self { freq_scale: f(), ramp_scale: f(), amplitude_scale: f() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Occupied subcarrier indices, in column order.
    pub subcarrier_indices: Vec<i32>,
    /// Static complex baseline per monitor, one value per subcarrier.
    pub static_paths: BTreeMap<u32, Vec<Complex<f64>>>,
    pub subject_gain_exponent: f64,
    pub activity_signatures: Vec<ActivitySignature>,
    pub subject_warps: BTreeMap<u32, SubjectWarp>,
    pub bout_jitter: f64,
}

fn baseline(indices: &[i32], ap: &super::Point, monitor: &Monitor, cfg: &ModelConfig, rng: &mut impl Rng) -> Vec<Complex<f64>> {
    let los_delay = ap.distance(&monitor.position) / SPEED_OF_LIGHT;
    let mut paths = vec![(1.0, los_delay, 0.0)];
    if cfg.scatter_paths > 0 {
        let raw: Vec<f64> = (0..cfg.scatter_paths).map(|_| rng.random_range(0.2..1.0)).collect();
        let scale = cfg.scatter_budget / raw.iter().sum::<f64>();
        for a in raw {
            paths.push((a * scale, los_delay + rng.random_range(5e-9..80e-9), rng.random_range(0.0..TAU)));
        }
    }
    indices
        .iter()
        .map(|&k| {
            let f = CENTER_FREQ_HZ + k as f64 * SUBCARRIER_SPACING_HZ;
            paths.iter().map(|&(a, tau, phi)| Complex::from_polar(a, phi - TAU * f * tau)).sum()
        })
        .collect()
}

impl ChannelModel {
    /// Random baselines for every monitor of `scene`, `activities` signatures
    /// on a frequency × ramp grid with stratified envelope centres, and one
    /// style warp per subject.
    pub fn generate(cfg: &ModelConfig, scene: &Scene, activities: usize, seed: u64) -> Result<Self, SynthError> {
        cfg.validate()?;
        if activities < 2 {
            return Err(SynthError::InvalidConfig(format!("need at least 2 activities, got {activities}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let indices = SubcarrierPlan::vht80().occupied_indices().to_vec();
        let static_paths =
            scene.monitors.iter().map(|m| (m.monitor_id, baseline(&indices, &scene.ap_position, m, cfg, &mut rng))).collect();

        let levels = activities.div_ceil(RAMP_LEVELS.len());
        let ratio = if levels > 1 { (cfg.max_freq_hz / cfg.min_freq_hz).powf(1.0 / (levels - 1) as f64) } else { 1.0 };
        let mut slots: Vec<usize> = (0..activities).collect();
        for i in (1..slots.len()).rev() {
            slots.swap(i, rng.random_range(0..=i));
        }
        let activity_signatures = (0..activities)
            .map(|a| ActivitySignature {
                freq_hz: cfg.min_freq_hz * ratio.powi((a / RAMP_LEVELS.len()) as i32),
                ramp: RAMP_LEVELS[a % RAMP_LEVELS.len()],
                center: (slots[a] as f64 + 0.5) / activities as f64,
                width: cfg.support_width,
                amplitude: cfg.signature_amplitude,
            })
            .collect();
        let subject_warps =
            scene.subjects.iter().map(|s| (s.subject_id, SubjectWarp::random(&mut rng, cfg.subject_warp))).collect();
        Ok(Self {
            subcarrier_indices: indices,
            static_paths,
            subject_gain_exponent: cfg.gain_exponent,
            activity_signatures,
            subject_warps,
            bout_jitter: cfg.bout_jitter,
        })
    }

    /// `w(d) = (1 + d)^-γ`.
    pub fn gain(&self, distance_m: f64) -> f64 {
        (1.0 + distance_m).powf(-self.subject_gain_exponent)
    }

    /// New environment: fresh static paths for every monitor and each
    /// signature parameter jittered by up to `jitter` (relative).
    pub fn environment_shift(&self, cfg: &ModelConfig, scene: &Scene, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = cfg.environment_jitter;
        let static_paths = scene
            .monitors
            .iter()
            .map(|m| (m.monitor_id, baseline(&self.subcarrier_indices, &scene.ap_position, m, cfg, &mut rng)))
            .collect();
        let mut jit = |v: f64| v * (1.0 + rng.random_range(-j..=j));
        let activity_signatures = self
            .activity_signatures
            .iter()
            .map(|s| ActivitySignature {
                freq_hz: jit(s.freq_hz),
                ramp: jit(s.ramp),
                center: jit(s.center).clamp(0.0, 1.0),
                width: jit(s.width),
                amplitude: jit(s.amplitude),
            })
            .collect();
        Self { static_paths, activity_signatures, ..self.clone() }
    }

    /// New people: every subject gets a freshly drawn style warp.
    pub fn subject_shift(&self, cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let subject_warps =
            self.subject_warps.keys().map(|&id| (id, SubjectWarp::random(&mut rng, cfg.subject_warp))).collect();
        Self { subject_warps, ..self.clone() }
    }

    fn warp(&self, subject_id: u32) -> SubjectWarp {
        self.subject_warps.get(&subject_id).copied().unwrap_or_default()
    }

    /// Spatial part of a signature as worn by `subject_id`: envelope times the
    /// per-subcarrier phase ramp, scaled by the subject's amplitude.
    fn spatial_profile(&self, activity: usize, subject_id: u32) -> (f64, Vec<Complex<f64>>) {
        let s = &self.activity_signatures[activity];
        let w = self.warp(subject_id);
        let k_total = self.subcarrier_indices.len() as f64;
        let profile = (0..self.subcarrier_indices.len())
            .map(|k| {
                let x = (k as f64 + 0.5) / k_total - s.center;
                let env = (-0.5 * (x / s.width).powi(2)).exp();
                Complex::from_polar(s.amplitude * w.amplitude_scale * env, s.ramp * w.ramp_scale * k as f64)
            })
            .collect();
        (s.freq_hz * w.freq_scale, profile)
    }

    /// Per-bout random phase, amplitude factor and tempo factor, shared by
    /// every monitor.
    fn bout_draws(&self, scene: &Scene, subject: &Subject) -> Vec<(f64, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed);
        rng.set_stream(1 + subject.subject_id as u64);
        subject
            .schedule
            .entries()
            .iter()
            .map(|_| {
                let phase = rng.random_range(0.0..TAU);
                let amp = 1.0 + rng.random_range(-1.0..=1.0) * self.bout_jitter;
                (phase, amp, 1.0 + rng.random_range(-1.0..=1.0) * self.bout_jitter)
            })
            .collect()
    }

    /// Noise-free perturbation caused by `subject` at `monitor` at time `t`,
    /// or `None` when the subject is idle.
    pub fn subject_perturbation(&self, scene: &Scene, subject: &Subject, monitor: &Monitor, t: f64) -> Option<Vec<Complex<f64>>> {
        let i = subject.schedule.entry_at(t)?;
        let e = subject.schedule.entries()[i];
        let (phase0, amp, tempo) = self.bout_draws(scene, subject)[i];
        let (freq, profile) = self.spatial_profile(e.activity_id as usize, subject.subject_id);
        let g = self.gain(subject.position.distance(&monitor.position)) * amp;
        let rot = Complex::from_polar(g, TAU * freq * tempo * t + phase0);
        Some(profile.into_iter().map(|p| p * rot).collect())
    }
}

pub(super) fn simulate<T: Real>(
    scene: &Scene,
    model: &ChannelModel,
    duration_s: f64,
    sample_rate_hz: f64,
) -> Result<Vec<SimulatedCapture<T>>, SynthError> {
    scene.validate()?;
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(SynthError::InvalidConfig(format!("sample rate {sample_rate_hz}")));
    }
    for s in &scene.subjects {
        if let Some(e) = s.schedule.entries().iter().find(|e| e.end_s > duration_s + 1e-9) {
            return Err(SynthError::ScheduleOutOfRange {
                subject_id: s.subject_id,
                start_s: e.start_s,
                end_s: e.end_s,
                duration_s,
            });
        }
        if let Some(e) = s.schedule.entries().iter().find(|e| e.activity_id as usize >= model.activity_signatures.len()) {
            return Err(SynthError::InvalidScene(format!("activity {} has no signature", e.activity_id)));
        }
    }
    let rows = (duration_s * sample_rate_hz + 1e-9).floor() as usize;
    let k = model.subcarrier_indices.len();
    let noise = Normal::new(0.0, scene.noise_std / std::f64::consts::SQRT_2)
        .map_err(|e| SynthError::InvalidScene(format!("noise: {e}")))?;

    // per subject: bout draws and spatial profiles of every scheduled activity
    struct Prepared<'a> {
        subject: &'a Subject,
        bouts: Vec<(f64, f64, f64)>,
        profiles: BTreeMap<u32, (f64, Vec<Complex<f64>>)>,
    }
    let prepared: Vec<Prepared> = scene
        .subjects
        .iter()
        .map(|s| Prepared {
            subject: s,
            bouts: model.bout_draws(scene, s),
            profiles: s
                .schedule
                .entries()
                .iter()
                .map(|e| (e.activity_id, model.spatial_profile(e.activity_id as usize, s.subject_id)))
                .collect(),
        })
        .collect();

    let mut out = Vec::with_capacity(scene.monitors.len());
    for monitor in &scene.monitors {
        let base = model
            .static_paths
            .get(&monitor.monitor_id)
            .ok_or_else(|| SynthError::InvalidScene(format!("no static paths for monitor {}", monitor.monitor_id)))?;
        let gains: Vec<f64> = prepared.iter().map(|p| model.gain(p.subject.position.distance(&monitor.position))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed ^ monitor.monitor_id as u64);
        let mut samples = Vec::with_capacity(rows * k);
        let mut row = vec![Complex::new(0.0, 0.0); k];
        for i in 0..rows {
            let t = i as f64 / sample_rate_hz;
            row.copy_from_slice(base);
            for (p, &g) in prepared.iter().zip(&gains) {
                let Some(b) = p.subject.schedule.entry_at(t) else { continue };
                let e = p.subject.schedule.entries()[b];
                let (phase0, amp, tempo) = p.bouts[b];
                let (freq, profile) = &p.profiles[&e.activity_id];
                let rot = Complex::from_polar(g * amp, TAU * freq * tempo * t + phase0);
                for (r, q) in row.iter_mut().zip(profile) {
                    *r += q * rot;
                }
            }
            if scene.noise_std > 0.0 {
                for r in row.iter_mut() {
                    r.re += noise.sample(&mut rng);
                    r.im += noise.sample(&mut rng);
                }
            }
            samples.extend(row.iter().map(|c| Complex::new(T::lit(c.re), T::lit(c.im))));
        }
        let capture = CsiCapture::uniform(samples, k, monitor.monitor_id, sample_rate_hz)?;
        let labels = scene
            .subjects
            .iter()
            .flat_map(|s| schedule_spans(s.subject_id, &s.schedule, sample_rate_hz, rows))
            .collect();
        out.push(SimulatedCapture { capture, labels });
    }
    Ok(out)
}
