//! One function per subcommand. Each writes its outputs under `out_dir` and
//! returns what it wrote.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use simwise_core::cascade::{proximity_matrix, MonitorTest, ProximityMatrix};
use simwise_core::csi::{truncate_subcarriers, Window};
use simwise_core::frel::{
    embed_windows, evaluate, fine_tune_embedded, meta_train, sample_episode_indices, stream_rng, streams, CnnPredictor,
    EpochMetrics, Evaluation, FrelHyper, KnnPredictor, Labeled, LinearPredictor, TestSet,
};
use simwise_core::nn::{read_checkpoint, write_checkpoint, Checkpoint, Classifier, EmbeddingNet, EMBEDDING_DIM};
use simwise_core::synth::{target_split, train_split, Phase, TargetSplit};

use crate::config::{Baseline, RunConfig};
use crate::dataset::{scene_hash, write_dataset, Manifest};
use crate::{svg, CliError};

pub const META_TRAIN_CSV: &str = "meta_train.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_SVG: &str = "ablation.svg";
pub const PROXIMITY_CSV: &str = "proximity.csv";
pub const PROXIMITY_SVG: &str = "proximity.svg";
pub const TUNE_CURVE_CSV: &str = "tune_curve_frel.csv";

pub fn tune_eval_csv(b: Baseline) -> String {
    format!("tune_eval_{}.csv", b.name())
}

pub fn confusion_csv(b: Baseline) -> String {
    format!("confusion_{}.csv", b.name())
}

type Split = Vec<Labeled<Window<f32>>>;

/// Logs the resolved config and stores it next to the outputs as
/// `<command>.config.toml`.
pub fn log_config(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    let text = cfg.to_toml();
    info!("{command}: resolved config\n{text}");
    fs::create_dir_all(cfg.out_dir())?;
    fs::write(cfg.out_dir().join(format!("{command}.config.toml")), text)?;
    Ok(())
}

/// Seed of grid cell `tag` under `base`.
pub fn cell_seed(base: u64, tag: u64) -> u64 {
    base.wrapping_add(tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs `f` over `items` on up to `jobs` threads; results keep input order.
pub fn run_cells<I: Sync, O: Send>(
    jobs: usize,
    items: &[I],
    f: impl Fn(&I) -> Result<O, CliError> + Sync,
) -> Result<Vec<O>, CliError> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<O, CliError>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("threads joined").into_iter().map(|r| r.expect("every cell ran")).collect()
}

fn write_text(path: &Path, text: &str) -> Result<PathBuf, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    info!("wrote {}", path.display());
    Ok(path.to_path_buf())
}

fn open_dataset(cfg: &RunConfig) -> Result<(PathBuf, Manifest), CliError> {
    let dir = cfg.dataset_dir();
    let manifest = Manifest::load(&dir)?;
    if manifest.scene_hash != scene_hash(&cfg.benchmark) {
        warn!("dataset {} was made with a different [benchmark] section; its manifest copy is used", dir.display());
    }
    Ok((dir, manifest))
}

fn load_train(dir: &Path, m: &Manifest, monitor: u32) -> Result<Split, CliError> {
    Ok(train_split(&m.benchmark, m.read_recording(dir, Phase::Home, monitor)?)?)
}

fn load_target(dir: &Path, m: &Manifest, monitor: u32) -> Result<TargetSplit<f32>, CliError> {
    Ok(target_split(&m.benchmark, m.read_recording(dir, Phase::Target, monitor)?)?)
}

/// Fresh network and head initialized from `hp.seed`, meta-trained on `train`.
pub fn train_model(
    train: &[Labeled<Window<f32>>],
    class_count: usize,
    hp: &FrelHyper,
) -> Result<(EmbeddingNet<f32>, Classifier<f32>, Vec<EpochMetrics>), CliError> {
    let first = train.first().ok_or_else(|| CliError::Data("training split is empty".into()))?;
    let mut net = EmbeddingNet::new(first.x.rows(), first.x.subcarriers(), &mut stream_rng(hp.seed, streams::NET_INIT))?;
    let mut head = Classifier::new(EMBEDDING_DIM, class_count, &mut stream_rng(hp.seed, streams::HEAD_INIT))?;
    let curve = meta_train(&mut net, &mut head, train, hp)?;
    Ok((net, head, curve))
}

fn truncate(data: &[Labeled<Window<f32>>], k: usize) -> Result<Split, CliError> {
    data.iter().map(|l| Ok(Labeled::new(truncate_subcarriers(&l.x, k)?, l.label))).collect()
}

fn curve_csv(header: &str, rows: impl IntoIterator<Item = (String, EpochMetrics)>) -> String {
    let mut s = format!("{header}\n");
    for (prefix, m) in rows {
        writeln!(s, "{prefix},{},{:.6},{:.6}", m.epoch, m.loss, m.accuracy).unwrap();
    }
    s
}

/// Simulates the dataset into `dataset_dir`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Manifest, CliError> {
    log_config(cfg, "synth")?;
    let dir = cfg.dataset_dir();
    let manifest = write_dataset(&cfg.benchmark, &dir)?;
    info!("dataset with monitors {:?} written to {}", manifest.monitors, dir.display());
    Ok(manifest)
}

/// Meta-trains on the home split of `experiment.monitor`; writes the
/// checkpoint and the per-epoch curve.
pub fn cmd_meta_train(cfg: &RunConfig) -> Result<Vec<EpochMetrics>, CliError> {
    log_config(cfg, "meta-train")?;
    let (dir, manifest) = open_dataset(cfg)?;
    let train = load_train(&dir, &manifest, cfg.experiment.monitor)?;
    let (net, head, curve) = train_model(&train, manifest.benchmark.class_count(), &cfg.frel)?;
    if let Some(last) = curve.last() {
        info!("meta-training done: loss {:.4}, accuracy {:.4}", last.loss, last.accuracy);
    }
    let path = cfg.checkpoint_path();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(&path)?);
    write_checkpoint(&mut w, &net, &head)?;
    w.flush()?;
    info!("wrote {}", path.display());
    write_text(&cfg.out_dir().join(META_TRAIN_CSV), &curve_csv("phase,epoch,loss,accuracy", curve.iter().map(|m| ("meta".into(), *m))))?;
    Ok(curve)
}

/// Accuracy of one baseline under one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub baseline: Baseline,
    pub seed: u64,
    pub accuracy: f64,
}

pub fn read_model(path: &Path) -> Result<Checkpoint<f32>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_checkpoint(&mut BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn sum_confusion(evals: &[Evaluation], class_count: usize) -> Evaluation {
    let mut confusion = vec![vec![0; class_count]; class_count];
    for e in evals {
        for (row, add) in confusion.iter_mut().zip(&e.confusion) {
            for (c, a) in row.iter_mut().zip(add) {
                *c += a;
            }
        }
    }
    let total: usize = confusion.iter().flatten().sum();
    let hits: usize = (0..class_count).map(|i| confusion[i][i]).sum();
    Evaluation { accuracy: if total == 0 { 0.0 } else { hits as f64 / total as f64 }, confusion }
}

/// Evaluates the selected baselines on the target split of
/// `experiment.monitor`, sweeping `experiment.seeds` seeds from `frel.seed`.
/// The frozen baseline has no seed dependence and runs once.
pub fn cmd_tune_eval(cfg: &RunConfig) -> Result<Vec<SeedResult>, CliError> {
    log_config(cfg, "tune-eval")?;
    let ckpt = read_model(&cfg.checkpoint_path())?;
    let (dir, manifest) = open_dataset(cfg)?;
    let class_count = manifest.benchmark.class_count();
    if ckpt.head.classes != class_count {
        return Err(CliError::Data(format!("checkpoint head has {} classes, dataset {class_count}", ckpt.head.classes)));
    }
    let split = load_target(&dir, &manifest, cfg.experiment.monitor)?;
    if let Some(w) = split.tune.first().or(split.test.first()) {
        if (w.x.rows(), w.x.subcarriers()) != ckpt.net.input_shape() {
            return Err(CliError::Data(format!(
                "checkpoint expects {:?} windows, dataset has {:?}",
                ckpt.net.input_shape(),
                (w.x.rows(), w.x.subcarriers())
            )));
        }
    }

    let embed = |xs: &[Labeled<Window<f32>>]| -> Result<Vec<Vec<f32>>, CliError> {
        let ws: Vec<&Window<f32>> = xs.iter().map(|l| &l.x).collect();
        Ok(embed_windows(&ckpt.net, &ws)?)
    };
    let test = TestSet::new(split.test).map(embed)?;
    let baselines = cfg.baseline.expand();
    let needs_tune = baselines.iter().any(|b| *b != Baseline::FrozenCnn);
    let tune: Vec<Labeled<Vec<f32>>> = if needs_tune {
        embed(&split.tune)?.into_iter().zip(&split.tune).map(|(z, l)| Labeled::new(z, l.label)).collect()
    } else {
        Vec::new()
    };
    let seeds: Vec<u64> = (0..cfg.experiment.seeds as u64).map(|i| cfg.frel.seed.wrapping_add(i)).collect();

    let mut results = Vec::new();
    for b in baselines {
        let (rows, evals, curves): (Vec<SeedResult>, Vec<Evaluation>, Vec<(u64, Vec<EpochMetrics>)>) = match b {
            Baseline::FrozenCnn => {
                let e = evaluate(&LinearPredictor { head: &ckpt.head }, &test, class_count)?;
                (vec![SeedResult { baseline: b, seed: cfg.frel.seed, accuracy: e.accuracy }], vec![e], Vec::new())
            }
            Baseline::Frel => {
                let cells = run_cells(cfg.jobs, &seeds, |&s| {
                    let hp = FrelHyper { seed: s, ..cfg.frel.clone() };
                    let rep = fine_tune_embedded(&tune, class_count, &hp, Some(&ckpt.head))?;
                    let e = evaluate(&LinearPredictor { head: &rep.head }, &test, class_count)?;
                    Ok((s, e, rep.curve))
                })?;
                let mut out = (Vec::new(), Vec::new(), Vec::new());
                for (s, e, curve) in cells {
                    out.0.push(SeedResult { baseline: b, seed: s, accuracy: e.accuracy });
                    out.1.push(e);
                    out.2.push((s, curve));
                }
                out
            }
            Baseline::FselKnn => {
                let labels: Vec<usize> = tune.iter().map(|l| l.label).collect();
                let classes: Vec<usize> = (0..class_count).collect();
                let cells = run_cells(cfg.jobs, &seeds, |&s| {
                    let idx = sample_episode_indices(&labels, &classes, cfg.frel.k_shots, &mut stream_rng(s, streams::KNN))?;
                    let support: Vec<Labeled<Vec<f32>>> = idx.iter().map(|&i| tune[i].clone()).collect();
                    let e = evaluate(&KnnPredictor { support: &support, k: cfg.frel.knn_neighbors }, &test, class_count)?;
                    Ok((s, e))
                })?;
                let (rows, evals) =
                    cells.into_iter().map(|(s, e)| (SeedResult { baseline: b, seed: s, accuracy: e.accuracy }, e)).unzip();
                (rows, evals, Vec::new())
            }
            Baseline::All => unreachable!("expanded above"),
        };
        let mut csv = String::from("baseline,seed,accuracy\n");
        for r in &rows {
            writeln!(csv, "{},{},{:.6}", b.name(), r.seed, r.accuracy).unwrap();
            info!("{} seed {}: accuracy {:.4}", b.name(), r.seed, r.accuracy);
        }
        write_text(&cfg.out_dir().join(tune_eval_csv(b)), &csv)?;
        write_text(&cfg.out_dir().join(confusion_csv(b)), &sum_confusion(&evals, class_count).confusion_csv())?;
        if b == Baseline::Frel {
            let rows = curves.into_iter().flat_map(|(s, c)| c.into_iter().map(move |m| (s.to_string(), m)));
            write_text(&cfg.out_dir().join(TUNE_CURVE_CSV), &curve_csv("seed,epoch,loss,accuracy", rows))?;
        }
        results.extend(rows);
    }
    Ok(results)
}

/// One row of the subcarrier ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub k: usize,
    pub accuracy: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
}

/// Trains and evaluates one model per subcarrier count on the first `k`
/// columns of `experiment.monitor`'s windows.
pub fn cmd_ablate_subcarriers(cfg: &RunConfig) -> Result<Vec<AblationRow>, CliError> {
    log_config(cfg, "ablate-subcarriers")?;
    let (dir, manifest) = open_dataset(cfg)?;
    let class_count = manifest.benchmark.class_count();
    let train = load_train(&dir, &manifest, cfg.experiment.monitor)?;
    let test = load_target(&dir, &manifest, cfg.experiment.monitor)?.test;
    let rows = run_cells(cfg.jobs, &cfg.experiment.subcarriers, |&k| {
        let hp = FrelHyper { seed: cell_seed(cfg.frel.seed, k as u64), ..cfg.frel.clone() };
        let (net, head, curve) = train_model(&truncate(&train, k)?, class_count, &hp)?;
        let e = evaluate(&CnnPredictor { net: &net, head: &head }, &TestSet::new(truncate(&test, k)?), class_count)?;
        let last = curve.last().copied().unwrap_or(EpochMetrics { epoch: 0, loss: f64::NAN, accuracy: 0.0 });
        info!("k={k}: accuracy {:.4}", e.accuracy);
        Ok(AblationRow { k, accuracy: e.accuracy, train_loss: last.loss, train_accuracy: last.accuracy })
    })?;
    let mut csv = String::from("k,accuracy,train_loss,train_accuracy\n");
    for r in &rows {
        writeln!(csv, "{},{:.6},{:.6},{:.6}", r.k, r.accuracy, r.train_loss, r.train_accuracy).unwrap();
    }
    write_text(&cfg.out_dir().join(ABLATION_CSV), &csv)?;
    let points: Vec<(usize, f64)> = rows.iter().map(|r| (r.k, r.accuracy)).collect();
    write_text(&cfg.out_dir().join(ABLATION_SVG), &svg::ablation_chart(&points))?;
    Ok(rows)
}

/// Trains one model per monitor on its own subject's home activities and
/// scores it against every subject's activities in the target recording.
/// With the gate enabled, fails after writing when the smallest
/// own-minus-cross gap is below `experiment.proximity_margin`.
pub fn cmd_proximity(cfg: &RunConfig) -> Result<ProximityMatrix, CliError> {
    log_config(cfg, "proximity")?;
    let (dir, manifest) = open_dataset(cfg)?;
    let class_count = manifest.benchmark.class_count();
    let rows = run_cells(cfg.jobs, &manifest.monitors, |&m| {
        let train = load_train(&dir, &manifest, m)?;
        let hp = FrelHyper { seed: cell_seed(cfg.frel.seed, m as u64), ..cfg.frel.clone() };
        let (net, head, _) = train_model(&train, class_count, &hp)?;
        drop(train);
        let split = load_target(&dir, &manifest, m)?;
        let test = MonitorTest {
            monitor_id: m,
            inputs: split.test.into_iter().map(|l| l.x).collect(),
            labels_by_subject: split
                .test_activities_by_subject
                .into_iter()
                .map(|(s, l)| (s, l.into_iter().map(|a| a.map(|a| a as usize)).collect()))
                .collect(),
        };
        let row = proximity_matrix(&[(m, CnnPredictor { net: &net, head: &head })], &[test])?;
        info!("monitor {m}: {:?}", row.accuracy[0]);
        Ok(row)
    })?;
    let matrix = ProximityMatrix {
        monitor_ids: rows.iter().flat_map(|r| r.monitor_ids.clone()).collect(),
        subject_ids: rows.first().map(|r| r.subject_ids.clone()).unwrap_or_default(),
        accuracy: rows.into_iter().flat_map(|r| r.accuracy).collect(),
    };
    write_text(&cfg.out_dir().join(PROXIMITY_CSV), &matrix.to_csv())?;
    write_text(&cfg.out_dir().join(PROXIMITY_SVG), &svg::proximity_chart(&matrix))?;
    if cfg.experiment.gate {
        match matrix.min_dominance_margin() {
            Some(gap) if gap >= cfg.experiment.proximity_margin => info!("gate passed: smallest gap {gap:.4}"),
            Some(gap) => {
                return Err(CliError::Gate(format!(
                    "smallest own-minus-cross gap {gap:.4} is below {:.4}",
                    cfg.experiment.proximity_margin
                )))
            }
            None => return Err(CliError::Gate("no monitor has an own subject to compare against".into())),
        }
    }
    Ok(matrix)
}
