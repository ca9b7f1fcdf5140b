//! Acceptance criteria 1 to 10, run in order inside one test so the timed
//! experiments do not compete for CPU. Each criterion prints one line.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use simwise_cli::commands::{cmd_ablate_subcarriers, cmd_meta_train, cmd_proximity, cmd_synth, cmd_tune_eval};
use simwise_cli::config::{Baseline, RunConfig};
use simwise_core::cascade::{
    cascade_output_classes, flat_output_classes, ActivityStage, Cascade, CascadeError, StageModel, SubjectDecision,
};
use simwise_core::csi::{normalize, segment, select_data_subcarriers, truncate_subcarriers, CsiCapture, SubcarrierPlan, Window};
use simwise_core::frel::{
    fine_tune, knn_classify, mean_loss, merge_tasks, sample_episode, Episode, FrelHyper, Labeled,
};
use simwise_core::nn::{
    backward, build_embedding, cross_entropy, forward, global_avg_pool, global_avg_pool_backward, max_pool_2x2,
    max_pool_2x2_backward, BatchNorm, Classifier, Conv3x3, EmbeddingNet, Mode, ParamSet, Tensor, EMBEDDING_DIM,
};

const FD_STEP: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn central_diff(params: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6)).fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

type Check = Result<String, String>;

struct Line {
    id: u8,
    pass: bool,
}

fn criterion(id: u8, name: &str, budget_s: f64, f: impl FnOnce() -> Check) -> Line {
    let t = Instant::now();
    let result = f();
    let secs = t.elapsed().as_secs_f64();
    let (pass, detail) = match result {
        Ok(d) if secs <= budget_s => (true, d),
        Ok(d) => (false, format!("{d}; over the {budget_s:.0} s budget")),
        Err(d) => (false, d),
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id:>2} [{tag}] {name}: {detail} ({secs:.1} s of {budget_s:.0} s)");
    Line { id, pass }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradients() -> Check {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut r = rng(1);

    let (b, h, w) = (2, 5, 6);
    let conv = Conv3x3::<f64>::new(2, 3, &mut r);
    let x = uniform(&mut r, b * 2 * h * w);
    let probe = uniform(&mut r, b * 3 * h * w);
    let (dw, dx) = conv.backward(&x, &probe, b, h, w, true);
    let num_w = central_diff(&conv.weight, |wt| {
        let c = Conv3x3::from_weight(2, 3, wt.to_vec()).unwrap();
        dot(&c.forward(&x, b, h, w), &probe)
    });
    let num_x = central_diff(&x, |xv| dot(&conv.forward(xv, b, h, w), &probe));
    worst.push(("conv", max_rel_err(&dw, &num_w).max(max_rel_err(&dx.unwrap(), &num_x))));

    let (c, hw) = (3, 10);
    let mut bn = BatchNorm::<f64>::new(c);
    bn.gamma = uniform(&mut r, c).iter().map(|v| 1.0 + 0.5 * v).collect();
    bn.beta = uniform(&mut r, c);
    bn.running_mean = uniform(&mut r, c);
    bn.running_var = uniform(&mut r, c).iter().map(|v| 1.5 + v).collect();
    let x = uniform(&mut r, b * c * hw);
    let probe = uniform(&mut r, b * c * hw);
    for mode in [Mode::Train, Mode::Inference] {
        let run = |bn: &BatchNorm<f64>, xv: &[f64]| match mode {
            Mode::Train => bn.clone().forward_train(xv, b, hw),
            Mode::Inference => bn.forward_inference(xv, b, hw),
        };
        let (_, cache) = run(&bn, &x);
        let (dx, dg, db) = bn.backward(&probe, &cache, b, hw);
        let num_x = central_diff(&x, |xv| dot(&run(&bn, xv).0, &probe));
        let num_g = central_diff(&bn.gamma, |g| dot(&run(&BatchNorm { gamma: g.to_vec(), ..bn.clone() }, &x).0, &probe));
        let num_b = central_diff(&bn.beta, |be| dot(&run(&BatchNorm { beta: be.to_vec(), ..bn.clone() }, &x).0, &probe));
        let e = max_rel_err(&dx, &num_x).max(max_rel_err(&dg, &num_g)).max(max_rel_err(&db, &num_b));
        worst.push((if mode == Mode::Train { "batchnorm/train" } else { "batchnorm/inference" }, e));
    }

    let (planes, ph, pw) = (4, 6, 8);
    let x = uniform(&mut r, planes * ph * pw);
    let probe = uniform(&mut r, planes * (ph / 2) * (pw / 2));
    let (_, arg) = max_pool_2x2(&x, planes, ph, pw);
    let ana = max_pool_2x2_backward(&probe, &arg, planes, ph, pw);
    let num = central_diff(&x, |xv| dot(&max_pool_2x2(xv, planes, ph, pw).0, &probe));
    worst.push(("max-pool", max_rel_err(&ana, &num)));

    let probe = uniform(&mut r, planes);
    let ana = global_avg_pool_backward(&probe, ph * pw);
    let num = central_diff(&x, |xv| dot(&global_avg_pool(xv, planes, ph * pw), &probe));
    worst.push(("global-avg-pool", max_rel_err(&ana, &num)));

    let head = Classifier::<f64>::new(EMBEDDING_DIM, 4, &mut r).unwrap();
    let head = Classifier { bias: uniform(&mut r, 4), ..head };
    let z = uniform(&mut r, 3 * EMBEDDING_DIM);
    let probe = uniform(&mut r, 3 * 4);
    let (g, dz) = head.backward(&z, &probe, 3);
    let num_w = central_diff(&head.weight, |wt| dot(&Classifier { weight: wt.to_vec(), ..head.clone() }.forward(&z, 3), &probe));
    let num_b = central_diff(&head.bias, |bi| dot(&Classifier { bias: bi.to_vec(), ..head.clone() }.forward(&z, 3), &probe));
    let num_z = central_diff(&z, |zv| dot(&head.forward(zv, 3), &probe));
    worst.push(("classifier", max_rel_err(&g.weight, &num_w).max(max_rel_err(&g.bias, &num_b)).max(max_rel_err(&dz, &num_z))));

    let logits = Tensor::from_vec(&[3, 5], uniform(&mut r, 15).iter().map(|v| 3.0 * v).collect()).unwrap();
    let labels = [4, 0, 2];
    let (_, dl) = cross_entropy(&logits, &labels).unwrap();
    let num = central_diff(logits.data(), |l| cross_entropy(&Tensor::from_vec(&[3, 5], l.to_vec()).unwrap(), &labels).unwrap().0);
    worst.push(("cross-entropy", max_rel_err(dl.data(), &num)));

    worst.push(("composed network", composed_network_error(&mut r)));

    let bad: Vec<String> = worst.iter().filter(|p| !(p.1 < 1e-4)).map(|(n, e)| format!("{n} {e:.2e}")).collect();
    let max = worst.iter().map(|p| p.1).fold(0.0, f64::max);
    ensure(bad.is_empty(), || format!("relative error too large: {}", bad.join(", ")))?;
    Ok(format!("{} checks, max relative error {max:.2e}", worst.len()))
}

/// Train-mode network plus head: sampled conv weights and every BN and head
/// parameter against finite differences of the cross-entropy loss.
fn composed_network_error(r: &mut ChaCha8Rng) -> f64 {
    let net0 = build_embedding::<f64>(16, 16, 7).unwrap();
    let head0 = Classifier::new(EMBEDDING_DIM, 3, r).unwrap();
    let batch = Tensor::from_vec(&[2, 2, 16, 16], uniform(r, 2 * 2 * 16 * 16)).unwrap();
    let labels = [0, 2];
    let loss = |net: &EmbeddingNet<f64>, head: &Classifier<f64>| {
        let mut n = net.clone();
        let (logits, _) = forward(&mut n, head, &batch).unwrap();
        cross_entropy(&logits, &labels).unwrap().0
    };
    let mut net = net0.clone();
    let (logits, tape) = forward(&mut net, &head0, &batch).unwrap();
    let (_, dlogits) = cross_entropy(&logits, &labels).unwrap();
    let grads = backward(&net0, &head0, &tape, &dlogits).unwrap();
    let analytic = grads.blobs();
    let n_emb = net0.blobs().len();
    let mut worst: f64 = 0.0;
    for (idx, blob) in net0.blobs().iter().enumerate() {
        let stride = if blob.len() > 200 { blob.len() / 61 } else { 1 };
        let picks: Vec<usize> = (0..blob.len()).step_by(stride).collect();
        let sub: Vec<f64> = picks.iter().map(|&i| blob[i]).collect();
        let num = central_diff(&sub, |vals| {
            let mut n = net0.clone();
            let dst = &mut n.blobs_mut()[idx];
            for (&i, &v) in picks.iter().zip(vals) {
                dst[i] = v;
            }
            loss(&n, &head0)
        });
        let ana: Vec<f64> = picks.iter().map(|&i| analytic[idx][i]).collect();
        worst = worst.max(max_rel_err(&ana, &num));
    }
    for (j, blob) in head0.blobs().iter().enumerate() {
        let num = central_diff(blob, |vals| {
            let mut h = head0.clone();
            h.blobs_mut()[j].copy_from_slice(vals);
            loss(&net0, &h)
        });
        worst = worst.max(max_rel_err(analytic[n_emb + j], &num));
    }
    worst
}

fn random_capture(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> CsiCapture<f64> {
    let s = (0..rows * cols).map(|_| Complex::new(scale * r.random_range(-1.0..1.0), scale * r.random_range(-1.0..1.0))).collect();
    CsiCapture::uniform(s, cols, 0, 500.0).unwrap()
}

fn preprocessing() -> Check {
    let mut r = rng(2);
    let mut worst_mean: f64 = 0.0;
    for i in 0..50 {
        let scale = 10f64.powf(r.random_range(-3.0..3.0));
        let c = normalize(&random_capture(&mut r, 1 + i, 1 + (i * 7) % 40, scale)).map_err(|e| e.to_string())?;
        let mean = c.samples().iter().map(|v| v.re.hypot(v.im)).sum::<f64>() / c.samples().len() as f64;
        worst_mean = worst_mean.max((mean - 1.0).abs());
    }
    ensure(worst_mean <= 1e-9, || format!("normalized mean amplitude off by {worst_mean:e}"))?;

    for _ in 0..100 {
        let (rows, cols, ws) = (r.random_range(1..120), r.random_range(1..6), r.random_range(1..25));
        let c = random_capture(&mut r, rows, cols, 1.0);
        let windows = segment(&c, ws);
        ensure(windows.len() == rows / ws, || format!("{rows} rows / {ws}: {} windows", windows.len()))?;
        let flat: Vec<f64> = windows.iter().flat_map(|w| w.tensor().iter().copied()).collect();
        let prefix: Vec<f64> = c.samples()[..windows.len() * ws * cols].iter().flat_map(|v| [v.re, v.im]).collect();
        ensure(flat == prefix, || "windows are not the row-major prefix of the capture".into())?;
        for (p, w) in windows.iter().enumerate() {
            ensure(w.start_time() == c.timestamps()[p * ws], || format!("window {p} start time"))?;
        }
    }

    let plan = SubcarrierPlan::vht80();
    for _ in 0..100 {
        let rows = r.random_range(1..8);
        let tag: f64 = r.random_range(0.0..1000.0);
        let raw: Vec<Complex<f64>> = (0..rows * 256).map(|i| Complex::new((i / 256) as f64 + tag, (i % 256) as f64)).collect();
        let out = select_data_subcarriers(&CsiCapture::uniform(raw, 256, 0, 500.0).unwrap(), &plan).map_err(|e| e.to_string())?;
        // tone index of raw column c is c − 128; data tones satisfy 2 ≤ |index| ≤ 122
        let expected_cols: Vec<f64> = (0..256i32).filter(|c| (2..=122).contains(&(*c - 128).abs())).map(|c| c as f64).collect();
        ensure(out.subcarriers() == 242 && out.rows() == rows, || "selected shape".into())?;
        for row in 0..rows {
            let got: Vec<(f64, f64)> = out.row(row).iter().map(|v| (v.re, v.im)).collect();
            let want: Vec<(f64, f64)> = expected_cols.iter().map(|&c| (row as f64 + tag, c)).collect();
            ensure(got == want, || format!("row {row} picked the wrong columns"))?;
        }
    }

    let window = segment(&random_capture(&mut r, 50, 242, 1.0), 50).remove(0);
    let narrow = truncate_subcarriers(&window, 20).map_err(|e| e.to_string())?;
    let counts = (window.tensor().len(), narrow.tensor().len());
    ensure(counts == (24200, 2000), || format!("element counts {counts:?}"))?;
    Ok(format!("mean error {worst_mean:.1e}; 100 segmentations; 100 marker matrices; counts {} and {}", counts.0, counts.1))
}

fn state_hash(net: &EmbeddingNet<f32>) -> String {
    let mut h = Sha256::new();
    for blob in net.state_blobs() {
        for v in blob {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn freeze() -> Check {
    let mut net = build_embedding::<f32>(50, 242, 3).map_err(|e| e.to_string())?;
    net.set_mode(Mode::Inference);
    let mut r = rng(3);
    let tune: Vec<Labeled<Window<f32>>> = (0..24)
        .map(|i| {
            let t: Vec<f32> = (0..24200).map(|_| r.random_range(-1.0f32..1.0) + (i % 4) as f32).collect();
            Labeled::new(Window::new(t, 50, 242, 0.0).unwrap(), i % 4)
        })
        .collect();
    let (before, fp, copy) = (state_hash(&net), net.fingerprint(), net.clone());
    let hp = FrelHyper { k_shots: 3, tune_epochs: 5, ..FrelHyper::default() };
    let rep = fine_tune(&net, &tune, 4, &hp, None).map_err(|e| e.to_string())?;
    ensure(state_hash(&net) == before && net.fingerprint() == fp && net == copy, || "embedding network changed".into())?;
    ensure(rep.curve.len() == 5, || "fine-tuning did not run".into())?;
    Ok(format!("state hash {} unchanged after {} tuning epochs", &before[..16], rep.curve.len()))
}

fn merge_equivalence() -> Check {
    let mut net = build_embedding::<f64>(8, 10, 4).map_err(|e| e.to_string())?;
    net.set_mode(Mode::Inference);
    let mut r = rng(4);
    let head = Classifier::new(EMBEDDING_DIM, 4, &mut r).map_err(|e| e.to_string())?;
    let data: Vec<Labeled<Window<f64>>> =
        (0..40).map(|i| Labeled::new(Window::new(uniform(&mut r, 160), 8, 10, 0.0).unwrap(), i % 4)).collect();
    let mut worst: f64 = 0.0;
    for trial in 0..5 {
        let tasks: Vec<Episode<Window<f64>>> =
            (0..2 + trial).map(|_| sample_episode(&data, &[0, 1, 2, 3], 3, 4, &mut r).unwrap()).collect();
        let per_task = tasks.iter().map(|t| mean_loss(&net, &head, t.examples()).unwrap()).sum::<f64>() / tasks.len() as f64;
        let merged = mean_loss(&net, &head, &merge_tasks(tasks).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        worst = worst.max((merged - per_task).abs() / merged.abs());
    }
    ensure(worst <= 1e-12, || format!("relative gap {worst:e}"))?;
    Ok(format!("5 task sets, max relative gap {worst:.1e}"))
}

/// Exhaustive vote: every support sorted by (distance, label), first `k`
/// tallied; most votes, then smaller summed distance, then smaller label.
fn knn_oracle(support: &[Labeled<Vec<f64>>], q: &[f64], k: usize) -> usize {
    let mut all: Vec<(f64, usize)> =
        support.iter().map(|s| (s.x.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), s.label)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut tally: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for &(d, l) in &all[..k] {
        let e = tally.entry(l).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d;
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for (l, (n, d)) in tally {
        let wins = match best {
            None => true,
            Some((_, bn, bd)) => n > bn || (n == bn && d < bd),
        };
        if wins {
            best = Some((l, n, d));
        }
    }
    best.unwrap().0
}

fn knn() -> Check {
    let mut r = rng(5);
    let mut agree = 0;
    for _ in 0..1000 {
        let (classes, shots, dim) = (r.random_range(2..6), r.random_range(1..7), r.random_range(1..5));
        let support: Vec<Labeled<Vec<f64>>> = (0..classes * shots)
            .map(|i| Labeled::new((0..dim).map(|_| r.random_range(-2..3) as f64).collect(), i % classes))
            .collect();
        let q: Vec<f64> = (0..dim).map(|_| r.random_range(-2..3) as f64).collect();
        let k = r.random_range(1..=support.len());
        if knn_classify(&support, &q, k).map_err(|e| e.to_string())? == knn_oracle(&support, &q, k) {
            agree += 1;
        }
    }
    ensure(agree == 1000, || format!("{agree}/1000 agree"))?;
    Ok("1000/1000 instances agree".into())
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config_in(name: &str, out: &Path) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::load(&configs_dir().join(name)).map_err(|e| e.to_string())?;
    cfg.out_dir = Some(out.to_path_buf());
    cfg.finish().map_err(|e| e.to_string())
}

fn proximity(out: &Path) -> Check {
    let cfg = config_in("proximity.toml", out)?;
    cmd_synth(&cfg).map_err(|e| e.to_string())?;
    let m = cmd_proximity(&cfg).map_err(|e| e.to_string())?;
    ensure(m.accuracy.len() == 3 && m.accuracy.iter().all(|r| r.len() == 3), || "grid is not 3×3".into())?;
    let gap = m.min_dominance_margin().ok_or("no own subjects")?;
    let own: Vec<String> = (0..3).map(|i| format!("{:.3}", m.accuracy[i][i])).collect();
    let cross = m.accuracy.iter().enumerate().flat_map(|(i, r)| r.iter().enumerate().filter(move |p| p.0 != i).map(|p| *p.1)).fold(0.0, f64::max);
    let detail = format!("own [{}], worst cross {cross:.3}, smallest gap {:.1} points", own.join(", "), 100.0 * gap);
    ensure(gap >= 0.10, || detail.clone())?;
    Ok(detail)
}

fn ablation(out: &Path) -> Check {
    let cfg = config_in("ablation.toml", out)?;
    cmd_synth(&cfg).map_err(|e| e.to_string())?;
    let rows = cmd_ablate_subcarriers(&cfg).map_err(|e| e.to_string())?;
    let acc = |k: usize| rows.iter().find(|r| r.k == k).map(|r| r.accuracy).ok_or(format!("no row for k={k}"));
    let listing: Vec<String> = rows.iter().map(|r| format!("k{}={:.3}", r.k, r.accuracy)).collect();
    let detail = listing.join(" ");
    ensure(rows.len() == 5, || format!("{} rows", rows.len()))?;
    ensure(acc(242)? >= acc(20)? + 0.15, || format!("k242 not 15 points above k20: {detail}"))?;
    // accuracy may not rise by more than 3 points as k shrinks
    let dips: Vec<String> = rows.windows(2).filter(|w| w[0].accuracy > w[1].accuracy + 0.03).map(|w| format!("k{}>k{}", w[0].k, w[1].k)).collect();
    ensure(dips.is_empty(), || format!("not monotone within 3 points ({}): {detail}", dips.join(", ")))?;
    Ok(detail)
}

fn adaptation(out: &Path) -> Check {
    let cfg = config_in("adaptation.toml", out)?;
    ensure(cfg.baseline == Baseline::All && cfg.experiment.seeds == 10, || "adaptation config must run all baselines on 10 seeds".into())?;
    cmd_synth(&cfg).map_err(|e| e.to_string())?;
    cmd_meta_train(&cfg).map_err(|e| e.to_string())?;
    let results = cmd_tune_eval(&cfg).map_err(|e| e.to_string())?;
    let of = |b: Baseline| results.iter().filter(|r| r.baseline == b).map(|r| r.accuracy).collect::<Vec<f64>>();
    let (frozen, knn, frel) = (of(Baseline::FrozenCnn), of(Baseline::FselKnn), of(Baseline::Frel));
    ensure(frozen.len() == 1 && knn.len() == 10 && frel.len() == 10, || "unexpected result counts".into())?;
    let frel_min = frel.iter().copied().fold(f64::INFINITY, f64::min);
    let wins = frel.iter().zip(&knn).filter(|(f, k)| f > k).count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let detail = format!(
        "frozen {:.3}, FREL mean {:.3} (min {frel_min:.3}), kNN mean {:.3}, FREL wins {wins}/10",
        frozen[0],
        mean(&frel),
        mean(&knn)
    );
    ensure(frel_min >= frozen[0] + 0.20, || format!("FREL not 20 points above frozen on every seed: {detail}"))?;
    ensure(wins >= 9, || format!("too few wins over kNN: {detail}"))?;
    Ok(detail)
}

/// Stage double whose logits are one-hot at the class stored in one input
/// cell, counting its calls.
struct Probe {
    classes: usize,
    cell: usize,
    calls: Rc<Cell<usize>>,
}

impl StageModel<f64> for Probe {
    fn class_count(&self) -> usize {
        self.classes
    }

    fn logits(&self, window: &Window<f64>) -> Result<Vec<f64>, CascadeError> {
        self.calls.set(self.calls.get() + 1);
        let c = window.get(0, self.cell, 0) as usize;
        Ok((0..self.classes).map(|i| if i == c { 1.0 } else { 0.0 }).collect())
    }
}

fn cascade() -> Check {
    let (p, q) = (3, 20);
    ensure(cascade_output_classes(p, q) == 24, || "(P+1)+Q is not 24".into())?;
    ensure(flat_output_classes(p, q) == Some(8000), || "Q^P is not 8000".into())?;
    let (subject_calls, activity_calls) = (Rc::new(Cell::new(0)), Rc::new(Cell::new(0)));
    let probe = |classes, cell, calls: &Rc<Cell<usize>>| Probe { classes, cell, calls: calls.clone() };
    let subjects: BTreeMap<u32, Probe> = (0..3).map(|m| (m, probe(p + 1, 0, &subject_calls))).collect();
    let activities: BTreeMap<u32, Probe> = (0..3).map(|m| (m, probe(q, 1, &activity_calls))).collect();
    let c = Cascade::new::<f64>(p, q, subjects, ActivityStage::PerMonitor(activities)).map_err(|e| e.to_string())?;
    ensure(c.total_output_classes() == 24, || "cascade reports the wrong class total".into())?;
    let mut gated = 0;
    for s in 0..=p {
        for a in [0, 7, 19] {
            let mut t = vec![0.0; 8 * 8 * 2];
            t[0] = s as f64;
            t[2] = a as f64;
            let w = Window::new(t, 8, 8, 0.0).unwrap();
            let before = activity_calls.get();
            let out = c.run((s % 3) as u32, &w).map_err(|e| e.to_string())?;
            let ran = activity_calls.get() - before;
            if s == p {
                ensure(out.subject == SubjectDecision::NoActivity && out.activity.is_none() && ran == 0, || "stage 2 ran on no activity".into())?;
                gated += 1;
            } else {
                ensure(out.subject == SubjectDecision::Subject(s as u32) && out.activity == Some(a) && ran == 1, || format!("wrong output {out:?}"))?;
            }
        }
    }
    ensure(subject_calls.get() == 12 && activity_calls.get() == 9, || "unexpected call counts".into())?;
    Ok(format!("24 vs 8000 outputs; stage 2 skipped on {gated}/{gated} no-activity windows, run once on 9/9 others"))
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn determinism(a: &Path, b: &Path) -> Check {
    for out in [a, b] {
        let cfg = config_in("smoke.toml", out)?;
        cmd_synth(&cfg).map_err(|e| e.to_string())?;
        cmd_meta_train(&cfg).map_err(|e| e.to_string())?;
        cmd_tune_eval(&cfg).map_err(|e| e.to_string())?;
    }
    let (x, y) = (csv_bytes(a), csv_bytes(b));
    ensure(x.len() >= 8, || format!("only {} CSVs written", x.len()))?;
    ensure(x == y, || "CSV outputs differ between runs".into())?;
    let ck = |d: &Path| fs::read(d.join("checkpoint.swnn")).unwrap();
    ensure(ck(a) == ck(b), || "checkpoints differ".into())?;
    Ok(format!("{} CSVs and the checkpoint byte-identical across two runs", x.len()))
}

#[test]
fn acceptance_criteria() {
    let dirs: Vec<tempfile::TempDir> = (0..5).map(|_| tempfile::tempdir().unwrap()).collect();
    let lines = vec![
        criterion(1, "gradient oracle", 60.0, gradients),
        criterion(2, "preprocessing invariants", 60.0, preprocessing),
        criterion(3, "freeze contract", 5.0, freeze),
        criterion(4, "merged loss equals mean task loss", 60.0, merge_equivalence),
        criterion(5, "kNN oracle", 60.0, knn),
        criterion(6, "proximity dominance", 300.0, || proximity(dirs[0].path())),
        criterion(7, "subcarrier ablation", 600.0, || ablation(dirs[1].path())),
        criterion(8, "adaptation under environment shift", 600.0, || adaptation(dirs[2].path())),
        criterion(9, "cascade structure and gating", 60.0, cascade),
        criterion(10, "determinism", 300.0, || determinism(dirs[3].path(), dirs[4].path())),
    ];
    let failed: Vec<u8> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    let _ = writeln!(std::io::stderr(), "acceptance: {}/{} criteria pass", lines.len() - failed.len(), lines.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
