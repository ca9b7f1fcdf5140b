use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csi::{align, assign_labels, normalize, segment, Window};
use crate::frel::{FrelError, Labeled, MiniDataset};
use crate::scalar::Real;

use super::model::{ChannelModel, ModelConfig};
use super::{simulate, ActivitySchedule, Monitor, Point, Scene, ScheduleEntry, SimulatedCapture, Subject, SynthError};

/// How the target domain differs from the home domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Shift {
    /// Same environment and people, fresh recording.
    #[default]
    None,
    Environment,
    Subject,
}

/// Geometry: monitors on a line, each subject in front of its own monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub monitors: usize,
    pub subjects: usize,
    pub monitor_spacing_m: f64,
    pub subject_distance_m: f64,
    pub ap_distance_m: f64,
    pub noise_std: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            monitors: 3,
            subjects: 3,
            monitor_spacing_m: 3.0,
            subject_distance_m: 1.5,
            ap_distance_m: 4.0,
            noise_std: 0.05,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.monitors == 0 || self.subjects == 0 {
            return Err(SynthError::InvalidConfig("scene needs at least one monitor and one subject".into()));
        }
        if self.subjects > self.monitors {
            return Err(SynthError::InvalidConfig(format!(
                "{} subjects need at least as many monitors, got {}",
                self.subjects, self.monitors
            )));
        }
        for (name, v) in [
            ("monitor_spacing_m", self.monitor_spacing_m),
            ("subject_distance_m", self.subject_distance_m),
            ("ap_distance_m", self.ap_distance_m),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SynthError::InvalidConfig(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    pub fn monitors(&self) -> Vec<Monitor> {
        let mid = (self.monitors as f64 - 1.0) / 2.0;
        (0..self.monitors)
            .map(|i| Monitor { monitor_id: i as u32, position: Point::new((i as f64 - mid) * self.monitor_spacing_m, 0.0) })
            .collect()
    }

    /// Spot in front of monitor `i` where its own subject stands.
    pub fn spot(&self, i: usize) -> Point {
        let m = &self.monitors()[i];
        Point::new(m.position.x, self.subject_distance_m)
    }

    pub fn ap(&self) -> Point {
        Point::new(0.0, -self.ap_distance_m)
    }
}

/// Everything `make_benchmark` needs. Durations are expressed in windows per
/// class; the tune split is given in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub activities: usize,
    pub sample_rate_hz: f64,
    pub window_samples: usize,
    /// Length of one activity bout, in windows.
    pub bout_windows: usize,
    pub train_windows_per_class: usize,
    pub tune_seconds: f64,
    pub test_windows_per_class: usize,
    pub shift: Shift,
    /// Add a "no activity" class made of idle bouts.
    pub include_no_activity: bool,
    /// Monitors to emit; empty means all.
    pub monitor_ids: Vec<u32>,
    pub scene: SceneConfig,
    pub model: ModelConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            activities: 20,
            sample_rate_hz: crate::csi::DEFAULT_SAMPLE_RATE_HZ,
            window_samples: crate::csi::DEFAULT_WINDOW_SAMPLES,
            bout_windows: 5,
            train_windows_per_class: 30,
            tune_seconds: 15.0,
            test_windows_per_class: 30,
            shift: Shift::None,
            include_no_activity: false,
            monitor_ids: Vec::new(),
            scene: SceneConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

mod stream {
    pub const MODEL: u64 = 1;
    pub const TRAIN_SCHEDULE: u64 = 2;
    pub const TRAIN_NOISE: u64 = 3;
    pub const TARGET_SCHEDULE: u64 = 4;
    pub const TARGET_NOISE: u64 = 5;
    pub const SHIFT: u64 = 6;
    pub const IDLE_NOISE: u64 = 7;
}

fn derived(seed: u64, stream: u64) -> u64 {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.scene.validate()?;
        self.model.validate()?;
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.activities < 2 {
            return bad(format!("activities = {}, need at least 2", self.activities));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad(format!("sample_rate_hz = {}", self.sample_rate_hz));
        }
        if self.window_samples < 8 || self.bout_windows == 0 {
            return bad("window_samples must be ≥ 8 and bout_windows ≥ 1".into());
        }
        if !(self.tune_seconds.is_finite() && self.tune_seconds >= 0.0) {
            return bad(format!("tune_seconds = {}", self.tune_seconds));
        }
        if let Some(id) = self.monitor_ids.iter().find(|&&id| id as usize >= self.scene.subjects) {
            return bad(format!("monitor {id} has no own subject"));
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.activities + usize::from(self.include_no_activity)
    }

    pub fn window_seconds(&self) -> f64 {
        self.window_samples as f64 / self.sample_rate_hz
    }

    /// `ceil(tune_seconds · sample_rate / window_samples)`.
    pub fn tune_per_class(&self) -> usize {
        ((self.tune_seconds * self.sample_rate_hz / self.window_samples as f64) - 1e-9).ceil().max(0.0) as usize
    }

    fn emitted_monitors(&self) -> Vec<u32> {
        if self.monitor_ids.is_empty() {
            (0..self.scene.subjects as u32).collect()
        } else {
            self.monitor_ids.clone()
        }
    }
}

/// One monitor's splits; the monitor's own subject provides the labels.
#[derive(Debug, Clone)]
pub struct MonitorSplit<T> {
    pub monitor_id: u32,
    pub subject_id: u32,
    pub train: Vec<Labeled<Window<T>>>,
    pub tune: Vec<Labeled<Window<T>>>,
    pub test: Vec<Labeled<Window<T>>>,
    /// For every subject, its activity at the start of each test window
    /// (`None` when idle).
    pub test_activities_by_subject: Vec<(u32, Vec<Option<u32>>)>,
}

impl<T> MonitorSplit<T> {
    pub fn into_mini_dataset(self, class_count: usize) -> Result<MiniDataset<Window<T>>, FrelError> {
        MiniDataset::new(self.train, self.tune, self.test, class_count)
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark<T> {
    pub class_count: usize,
    pub tune_per_class: usize,
    pub monitors: Vec<MonitorSplit<T>>,
}

/// Rounds of shuffled bouts, one per class per round; the idle class (index
/// `activities`) leaves a gap.
fn balanced_schedule(cfg: &BenchmarkConfig, rounds: usize, rng: &mut ChaCha8Rng) -> Result<ActivitySchedule, SynthError> {
    let bout_s = cfg.bout_windows as f64 * cfg.window_seconds();
    let mut entries = Vec::new();
    let mut slot = 0usize;
    for _ in 0..rounds {
        let mut order: Vec<usize> = (0..cfg.class_count()).collect();
        order.shuffle(rng);
        for class in order {
            if class < cfg.activities {
                entries.push(ScheduleEntry {
                    start_s: slot as f64 * bout_s,
                    end_s: (slot + 1) as f64 * bout_s,
                    activity_id: class as u32,
                });
            }
            slot += 1;
        }
    }
    ActivitySchedule::new(entries, cfg.activities as u32)
}

fn schedule_duration(cfg: &BenchmarkConfig, rounds: usize) -> f64 {
    (rounds * cfg.class_count() * cfg.bout_windows) as f64 * cfg.window_seconds()
}

/// Class index of an activity label; idle maps to the no-activity class when
/// there is one and to `None` otherwise.
fn class_of(cfg: &BenchmarkConfig, activity: Option<u32>) -> Option<usize> {
    match activity {
        Some(a) => Some(a as usize),
        None => cfg.include_no_activity.then_some(cfg.activities),
    }
}

struct Recording<T> {
    windows: Vec<Window<T>>,
    /// `labels[s][i]`: activity of subject `s` at window `i`.
    labels: Vec<Vec<Option<u32>>>,
}

/// align → normalize → segment, then labels every window once per subject.
/// Windows keep the monitor's own subject label.
fn process<T: Real>(cfg: &BenchmarkConfig, sim: SimulatedCapture<T>, subjects: usize) -> Result<Recording<T>, SynthError> {
    let monitor_id = sim.capture.monitor_id();
    let timestamps = sim.capture.timestamps().to_vec();
    let aligned = align(&sim.capture)?;
    drop(sim.capture);
    let normalized = normalize(&aligned)?;
    drop(aligned);
    let mut windows = segment(&normalized, cfg.window_samples);
    drop(normalized);
    let mut labels = Vec::with_capacity(subjects);
    for s in 0..subjects as u32 {
        assign_labels(&mut windows, &timestamps, cfg.sample_rate_hz, &sim.labels, s);
        labels.push(windows.iter().map(|w| w.label().map(|l| l.activity_id)).collect());
    }
    assign_labels(&mut windows, &timestamps, cfg.sample_rate_hz, &sim.labels, monitor_id);
    Ok(Recording { windows, labels })
}

fn record<T: Real>(cfg: &BenchmarkConfig, scene: &Scene, model: &ChannelModel, duration_s: f64) -> Result<Vec<Recording<T>>, SynthError> {
    simulate::<T>(scene, model, duration_s, cfg.sample_rate_hz)?
        .into_iter()
        .map(|sim| process(cfg, sim, scene.subjects.len()))
        .collect()
}

fn scene_for(cfg: &BenchmarkConfig, schedules: Vec<ActivitySchedule>, noise_seed: u64) -> Scene {
    let monitors = cfg.scene.monitors();
    let emitted = cfg.emitted_monitors();
    Scene {
        ap_position: cfg.scene.ap(),
        monitors: monitors.into_iter().filter(|m| emitted.contains(&m.monitor_id)).collect(),
        subjects: schedules
            .into_iter()
            .enumerate()
            .map(|(i, schedule)| Subject { subject_id: i as u32, position: cfg.scene.spot(i), schedule })
            .collect(),
        noise_std: cfg.scene.noise_std,
        rng_seed: noise_seed,
    }
}

/// Full layout (every monitor), used to build the channel model so that
/// baselines do not depend on which monitors are emitted.
fn full_scene(cfg: &BenchmarkConfig) -> Scene {
    Scene {
        ap_position: cfg.scene.ap(),
        monitors: cfg.scene.monitors(),
        subjects: (0..cfg.scene.subjects)
            .map(|i| Subject { subject_id: i as u32, position: cfg.scene.spot(i), schedule: ActivitySchedule::default() })
            .collect(),
        noise_std: cfg.scene.noise_std,
        rng_seed: cfg.seed,
    }
}

fn schedules(cfg: &BenchmarkConfig, rounds: usize, stream_id: u64) -> Result<Vec<ActivitySchedule>, SynthError> {
    (0..cfg.scene.subjects)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(stream_id * 1000 + s as u64);
            balanced_schedule(cfg, rounds, &mut rng)
        })
        .collect()
}

/// Picks, per class and in time order, the first `counts[0]` windows for the
/// first split, the next `counts[1]` for the second, and so on.
fn take_per_class(cfg: &BenchmarkConfig, activities: &[Option<u32>], counts: &[usize], split_names: &[&'static str]) -> Result<Vec<Vec<usize>>, SynthError> {
    let c = cfg.class_count();
    let mut seen = vec![0usize; c];
    let mut out = vec![Vec::new(); counts.len()];
    for (i, &a) in activities.iter().enumerate() {
        let Some(class) = class_of(cfg, a) else { continue };
        let mut offset = seen[class];
        seen[class] += 1;
        for (split, &n) in counts.iter().enumerate() {
            if offset < n {
                out[split].push(i);
                break;
            }
            offset -= n;
        }
    }
    for (split, &n) in counts.iter().enumerate() {
        for (class, &have) in seen.iter().enumerate() {
            let before: usize = counts[..split].iter().sum();
            if have < before + n {
                return Err(SynthError::InsufficientDuration {
                    split: split_names[split],
                    detail: format!("class {class} has {have} windows, {} needed", before + n),
                });
            }
        }
    }
    Ok(out)
}

fn labeled<T: Real>(cfg: &BenchmarkConfig, windows: &[Window<T>], activities: &[Option<u32>], idx: &[usize]) -> Vec<Labeled<Window<T>>> {
    idx.iter().filter_map(|&i| Some(Labeled::new(windows[i].clone(), class_of(cfg, activities[i])?))).collect()
}

/// Home recordings feed `D^train`; target recordings feed `D^tune` and
/// `D^test`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Home,
    Target,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Home => "home",
            Phase::Target => "target",
        }
    }
}

fn home_model(cfg: &BenchmarkConfig) -> Result<ChannelModel, SynthError> {
    ChannelModel::generate(&cfg.model, &full_scene(cfg), cfg.activities, derived(cfg.seed, stream::MODEL))
}

fn target_model(cfg: &BenchmarkConfig, home: ChannelModel) -> ChannelModel {
    match cfg.shift {
        Shift::None => home,
        Shift::Environment => home.environment_shift(&cfg.model, &full_scene(cfg), derived(cfg.seed, stream::SHIFT)),
        Shift::Subject => home.subject_shift(&cfg.model, derived(cfg.seed, stream::SHIFT)),
    }
}

/// Raw capture of one monitor in one phase, with the label spans of every
/// subject. All subjects act simultaneously on independent balanced
/// schedules.
pub fn simulate_recording<T: Real>(cfg: &BenchmarkConfig, phase: Phase, monitor_id: u32) -> Result<SimulatedCapture<T>, SynthError> {
    cfg.validate()?;
    if monitor_id as usize >= cfg.scene.monitors {
        return Err(SynthError::InvalidConfig(format!("no monitor {monitor_id}")));
    }
    let home = home_model(cfg)?;
    let (model, per_class, sched_stream, noise_stream) = match phase {
        Phase::Home => (home, cfg.train_windows_per_class, stream::TRAIN_SCHEDULE, stream::TRAIN_NOISE),
        Phase::Target => (
            target_model(cfg, home),
            cfg.tune_per_class() + cfg.test_windows_per_class,
            stream::TARGET_SCHEDULE,
            stream::TARGET_NOISE,
        ),
    };
    let rounds = per_class.div_ceil(cfg.bout_windows);
    let mut scene = scene_for(cfg, schedules(cfg, rounds, sched_stream)?, derived(cfg.seed, noise_stream));
    scene.monitors.retain(|m| m.monitor_id == monitor_id);
    let mut sims = simulate::<T>(&scene, &model, schedule_duration(cfg, rounds), cfg.sample_rate_hz)?;
    Ok(sims.remove(0))
}

fn own_monitor<T: Real>(cfg: &BenchmarkConfig, sim: &SimulatedCapture<T>) -> Result<usize, SynthError> {
    let own = sim.capture.monitor_id() as usize;
    if own >= cfg.scene.subjects {
        return Err(SynthError::InvalidConfig(format!("monitor {own} has no own subject")));
    }
    Ok(own)
}

/// `D^train` of one monitor from its home recording.
pub fn train_split<T: Real>(cfg: &BenchmarkConfig, home: SimulatedCapture<T>) -> Result<Vec<Labeled<Window<T>>>, SynthError> {
    cfg.validate()?;
    let own = own_monitor(cfg, &home)?;
    let tr = process(cfg, home, cfg.scene.subjects)?;
    let idx = take_per_class(cfg, &tr.labels[own], &[cfg.train_windows_per_class], &["train"])?;
    Ok(labeled(cfg, &tr.windows, &tr.labels[own], &idx[0]))
}

/// `D^tune` and `D^test` of one monitor from its target recording.
#[derive(Debug, Clone)]
pub struct TargetSplit<T> {
    pub tune: Vec<Labeled<Window<T>>>,
    pub test: Vec<Labeled<Window<T>>>,
    pub test_activities_by_subject: Vec<(u32, Vec<Option<u32>>)>,
}

pub fn target_split<T: Real>(cfg: &BenchmarkConfig, target: SimulatedCapture<T>) -> Result<TargetSplit<T>, SynthError> {
    cfg.validate()?;
    let own = own_monitor(cfg, &target)?;
    let tg = process(cfg, target, cfg.scene.subjects)?;
    let split = take_per_class(cfg, &tg.labels[own], &[cfg.tune_per_class(), cfg.test_windows_per_class], &["tune", "test"])?;
    Ok(TargetSplit {
        tune: labeled(cfg, &tg.windows, &tg.labels[own], &split[0]),
        test: labeled(cfg, &tg.windows, &tg.labels[own], &split[1]),
        test_activities_by_subject: tg
            .labels
            .iter()
            .enumerate()
            .map(|(s, l)| (s as u32, split[1].iter().map(|&i| l[i]).collect()))
            .collect(),
    })
}

/// Splits of one monitor from its home and target recordings.
pub fn monitor_split<T: Real>(
    cfg: &BenchmarkConfig,
    home: SimulatedCapture<T>,
    target: SimulatedCapture<T>,
) -> Result<MonitorSplit<T>, SynthError> {
    let own = home.capture.monitor_id();
    if target.capture.monitor_id() != own {
        return Err(SynthError::InvalidConfig(format!(
            "recordings of monitors {own} and {} cannot form one split",
            target.capture.monitor_id()
        )));
    }
    let train = train_split(cfg, home)?;
    let t = target_split(cfg, target)?;
    Ok(MonitorSplit {
        monitor_id: own,
        subject_id: own,
        train,
        tune: t.tune,
        test: t.test,
        test_activities_by_subject: t.test_activities_by_subject,
    })
}

/// Home-domain `D^train` and target-domain `D^tune`/`D^test` for every
/// emitted monitor, labelled by that monitor's own subject.
pub fn make_benchmark<T: Real>(cfg: &BenchmarkConfig) -> Result<Benchmark<T>, SynthError> {
    cfg.validate()?;
    let mut monitors = Vec::new();
    for m in cfg.emitted_monitors() {
        let home = simulate_recording::<T>(cfg, Phase::Home, m)?;
        let target = simulate_recording::<T>(cfg, Phase::Target, m)?;
        monitors.push(monitor_split(cfg, home, target)?);
    }
    Ok(Benchmark { class_count: cfg.class_count(), tune_per_class: cfg.tune_per_class(), monitors })
}

/// Coarse subject identification data for each emitted monitor: class `s`
/// when subject `s` stands at the monitor's spot (swapping places with the
/// monitor's own subject), class `P` when the monitor's own subject is idle.
/// Everyone else keeps acting at their own spots.
pub fn make_subject_benchmark<T: Real>(cfg: &BenchmarkConfig) -> Result<Benchmark<T>, SynthError> {
    cfg.validate()?;
    let p = cfg.scene.subjects;
    let home = home_model(cfg)?;
    let target = target_model(cfg, home.clone());
    let tune_n = cfg.tune_per_class();
    let activity_cfg = BenchmarkConfig { include_no_activity: false, ..cfg.clone() };

    let mut monitors = Vec::new();
    for m in cfg.emitted_monitors() {
        let own = m as usize;
        let mut split = MonitorSplit {
            monitor_id: m,
            subject_id: m,
            train: Vec::new(),
            tune: Vec::new(),
            test: Vec::new(),
            test_activities_by_subject: Vec::new(),
        };
        for class in 0..=p {
            for (phase, model, want) in [(0u64, &home, cfg.train_windows_per_class), (1, &target, tune_n + cfg.test_windows_per_class)] {
                let rounds = want.div_ceil(cfg.bout_windows * cfg.activities).max(1);
                let sched_stream = 100 + phase * 100 + class as u64 * 10 + m as u64;
                let mut sched = schedules(&activity_cfg, rounds, sched_stream)?;
                let mut positions: Vec<Point> = (0..p).map(|i| cfg.scene.spot(i)).collect();
                if class < p {
                    positions.swap(class, own);
                } else {
                    sched[own] = ActivitySchedule::default();
                }
                let scene = Scene {
                    ap_position: cfg.scene.ap(),
                    monitors: vec![cfg.scene.monitors()[own].clone()],
                    subjects: sched
                        .into_iter()
                        .zip(positions)
                        .enumerate()
                        .map(|(i, (schedule, position))| Subject { subject_id: i as u32, position, schedule })
                        .collect(),
                    noise_std: cfg.scene.noise_std,
                    rng_seed: derived(cfg.seed, sched_stream),
                };
                let rec = record::<T>(&activity_cfg, &scene, model, schedule_duration(&activity_cfg, rounds))?.remove(0);
                if rec.windows.len() < want {
                    return Err(SynthError::InsufficientDuration {
                        split: if phase == 0 { "train" } else { "tune" },
                        detail: format!("{} windows for subject class {class}, {want} needed", rec.windows.len()),
                    });
                }
                let mut windows = rec.windows.into_iter();
                let mut take = |n: usize| -> Vec<Labeled<Window<T>>> {
                    windows.by_ref().take(n).map(|w| Labeled::new(w, class)).collect()
                };
                if phase == 0 {
                    split.train.extend(take(want));
                } else {
                    split.tune.extend(take(tune_n));
                    split.test.extend(take(cfg.test_windows_per_class));
                }
            }
        }
        monitors.push(split);
    }
    Ok(Benchmark { class_count: p + 1, tune_per_class: tune_n, monitors })
}

/// `count` target-domain windows at `monitor_id` with every subject idle.
pub fn make_idle_windows<T: Real>(cfg: &BenchmarkConfig, monitor_id: u32, count: usize) -> Result<Vec<Window<T>>, SynthError> {
    cfg.validate()?;
    let monitor = cfg
        .scene
        .monitors()
        .into_iter()
        .find(|m| m.monitor_id == monitor_id)
        .ok_or_else(|| SynthError::InvalidConfig(format!("no monitor {monitor_id}")))?;
    let model = target_model(cfg, home_model(cfg)?);
    let scene = Scene {
        ap_position: cfg.scene.ap(),
        monitors: vec![monitor],
        subjects: Vec::new(),
        noise_std: cfg.scene.noise_std,
        rng_seed: derived(cfg.seed, stream::IDLE_NOISE),
    };
    let duration = count as f64 * cfg.window_seconds();
    let mut rec = record::<T>(cfg, &scene, &model, duration)?;
    let windows = rec.pop().map(|r| r.windows).unwrap_or_default();
    if windows.len() < count {
        return Err(SynthError::InsufficientDuration { split: "idle", detail: format!("{} of {count} windows", windows.len()) });
    }
    Ok(windows)
}
