use std::path::Path;
use std::process::Command;
use std::time::Instant;

use simplexae_cli::commands::{evaluate, StoredData};
use simplexae_cli::{cmd_gen_data, cmd_train, Layout, RunConfig};
use simplexae_core::autoencoder::{encode, load_checkpoint, Checkpoint};
use simplexae_core::data::csv_import;
use tempfile::TempDir;

use crate::Verdict;

const KNN_MIN: f64 = 0.90;
const KNN_BUDGET_S: f64 = 120.0;
const LOSS_RATIO_MIN: f64 = 1.5;
const LOSS_BUDGET_S: f64 = 900.0;
const SPARSE_MAX_COORD: f64 = 0.9;
const SPARSE_FRACTION_MIN: f64 = 0.60;
const DENSE_FRACTION_MAX: f64 = 0.05;
const ALPHA_BUDGET_S: f64 = 240.0;
const SAMPLER_MARGIN_MIN: f64 = 0.20;
const SAMPLER_BUDGET_S: f64 = 180.0;
const HEURISTIC_GAP_MAX: f64 = 0.25;
const HEURISTIC_BUDGET_S: f64 = 300.0;
const DETERMINISM_BUDGET_S: f64 = 300.0;

struct Trained {
    _dir: TempDir,
    cfg: RunConfig,
    ckpt: Checkpoint,
    data: StoredData,
    final_total: f64,
}

/// gen-data then train with the synthetic defaults (lambda 100, 20 epochs,
/// batch 64, lr 1e-3).
fn train_run(n_classes: usize, dim: usize, alpha: f64, seed: u64) -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&format!("n_classes = {n_classes}\ndim = {dim}\nalpha = {alpha}\nseed = {seed}\n"))
        .unwrap();
    let layout = Layout::new(&cfg, dir.path());
    cmd_gen_data(&cfg, &layout).unwrap();
    cmd_train(&cfg, &layout).unwrap();
    let (_, trace) = csv_import(dir.path().join("trace.csv")).unwrap();
    Trained {
        cfg,
        ckpt: load_checkpoint(&layout.checkpoint).unwrap(),
        data: StoredData::load(&layout.data).unwrap(),
        final_total: trace[(trace.nrows() - 1, 3)],
        _dir: dir,
    }
}

fn frechet(run: &Trained, settings: &str) -> f64 {
    let mut cfg = run.cfg.clone();
    cfg.count = 2000;
    for kv in settings.split_whitespace() {
        let (k, v) = kv.split_once('=').unwrap();
        cfg.set(k, v).unwrap();
    }
    evaluate(&cfg, &run.ckpt, &run.data).unwrap().frechet
}

fn sparse_fraction(run: &Trained) -> f64 {
    let (x, _) = run.data.split("test");
    let z = encode(&run.ckpt.spec, &run.ckpt.params, &x).unwrap();
    let hits = z.row_iter().filter(|r| r.max() > SPARSE_MAX_COORD).count();
    hits as f64 / z.nrows() as f64
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

pub fn run_all() -> Vec<Verdict> {
    let mut out = Vec::new();

    // 1: three classes, 2-simplex latent, alpha 0.3
    let t = Instant::now();
    let base = train_run(3, 3, 0.3, 0);
    let report = evaluate(&base.cfg, &base.ckpt, &base.data).unwrap();
    let base_train_s = secs(t);
    out.push(Verdict {
        id: 1,
        pass: report.knn_accuracy >= KNN_MIN && base_train_s <= KNN_BUDGET_S,
        detail: format!(
            "5-NN accuracy {:.4} (>= {KNN_MIN}), {base_train_s:.1}s (<= {KNN_BUDGET_S}s)",
            report.knn_accuracy
        ),
    });

    // 2: loss jump from seven to eight classes, three seeds each
    let t = Instant::now();
    let mean_loss = |classes| (0..3).map(|s| train_run(classes, 3, 0.3, s).final_total).sum::<f64>() / 3.0;
    let (l7, l8) = (mean_loss(7), mean_loss(8));
    let ratio = l8 / l7;
    let elapsed = secs(t);
    out.push(Verdict {
        id: 2,
        pass: ratio >= LOSS_RATIO_MIN && elapsed <= LOSS_BUDGET_S,
        detail: format!(
            "loss(8)/loss(7) = {l8:.4}/{l7:.4} = {ratio:.4} (>= {LOSS_RATIO_MIN}), {elapsed:.1}s (<= {LOSS_BUDGET_S}s)"
        ),
    });

    // 3: concentration of latents for sparse and dense priors
    let t = Instant::now();
    let sparse = sparse_fraction(&base);
    let dense_run = train_run(3, 3, 30.0, 0);
    let dense = sparse_fraction(&dense_run);
    let elapsed = secs(t) + base_train_s;
    out.push(Verdict {
        id: 3,
        pass: sparse >= SPARSE_FRACTION_MIN && dense <= DENSE_FRACTION_MAX && elapsed <= ALPHA_BUDGET_S,
        detail: format!(
            "max coord > {SPARSE_MAX_COORD}: alpha=0.3 {sparse:.4} (>= {SPARSE_FRACTION_MIN}), alpha=30 {dense:.4} \
             (<= {DENSE_FRACTION_MAX}), {elapsed:.1}s (<= {ALPHA_BUDGET_S}s)"
        ),
    });

    // 4: pmf and mixture samplers against uniform on the three-class model
    let t = Instant::now();
    let fd_uniform = frechet(&base, "sampler=uniform");
    let fd_pmf = frechet(&base, "sampler=pmf k=20");
    let fd_mm = frechet(&base, "sampler=mm components=3");
    let margin_pmf = 1.0 - fd_pmf / fd_uniform;
    let margin_mm = 1.0 - fd_mm / fd_uniform;
    let elapsed = secs(t);
    out.push(Verdict {
        id: 4,
        pass: margin_pmf >= SAMPLER_MARGIN_MIN && margin_mm >= SAMPLER_MARGIN_MIN && elapsed <= SAMPLER_BUDGET_S,
        detail: format!(
            "FD uniform {fd_uniform:.4}, pmf {fd_pmf:.4} (margin {margin_pmf:.4}), mm {fd_mm:.4} (margin \
             {margin_mm:.4}), need margins >= {SAMPLER_MARGIN_MIN}, {elapsed:.1}s (<= {SAMPLER_BUDGET_S}s)"
        ),
    });

    // 5: components = class count versus components = latent dimension
    let t = Instant::now();
    let four = train_run(4, 4, 0.3, 0);
    let mut gaps = Vec::new();
    for (run, classes) in [(&base, 3usize), (&four, 4)] {
        let dim = run.ckpt.spec.latent_dim();
        let a = frechet(run, &format!("sampler=mm components={classes}"));
        let b = frechet(run, &format!("sampler=mm components={dim}"));
        gaps.push((classes, dim, a, b, (a - b).abs() / a.min(b)));
    }
    let elapsed = secs(t);
    let detail = gaps
        .iter()
        .map(|(c, d, a, b, g)| format!("{c} classes/dim {d}: K=classes {a:.4} vs K=dim {b:.4}, gap {g:.4}"))
        .collect::<Vec<_>>()
        .join("; ");
    out.push(Verdict {
        id: 5,
        pass: gaps.iter().all(|g| g.4 <= HEURISTIC_GAP_MAX) && elapsed <= HEURISTIC_BUDGET_S,
        detail: format!("{detail} (<= {HEURISTIC_GAP_MAX}), {elapsed:.1}s (<= {HEURISTIC_BUDGET_S}s)"),
    });

    out
}

fn pipeline(root: &Path, out: &str) {
    let cfg = root.join("run.cfg");
    for cmd in ["gen-data", "train", "sample", "eval"] {
        let status = Command::new(env!("CARGO_BIN_EXE_simplexae"))
            .args(["--config", cfg.to_str().unwrap(), "--seed", "11", "--out"])
            .arg(root.join(out))
            .arg(cmd)
            .output()
            .unwrap();
        assert!(status.status.success(), "{cmd}: {}", String::from_utf8_lossy(&status.stderr));
    }
}

/// Full binary pipeline twice with one seed.
pub fn criterion_7() -> Verdict {
    let t = Instant::now();
    let root = tempfile::tempdir().unwrap();
    std::fs::write(
        root.path().join("run.cfg"),
        "n_samples = 2000\nalpha = 0.3\nepochs = 3\nsampler = pmf\nk = 10\ncount = 500\n",
    )
    .unwrap();
    pipeline(root.path(), "a");
    pipeline(root.path(), "b");
    let files = [
        "features.sxtn",
        "labels.sxtn",
        "splits.json",
        "model.sxae",
        "trace.csv",
        "samples.sxtn",
        "latents.csv",
        "metrics.json",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(root.path().join("a").join(f)).unwrap() != std::fs::read(root.path().join("b").join(f)).unwrap())
        .collect();
    let elapsed = secs(t);
    Verdict {
        id: 7,
        pass: differing.is_empty() && elapsed <= DETERMINISM_BUDGET_S,
        detail: format!(
            "{} pipeline outputs compared, differing: {differing:?}, {elapsed:.1}s (<= {DETERMINISM_BUDGET_S}s)",
            files.len()
        ),
    }
}
