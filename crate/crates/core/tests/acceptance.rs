//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any fails.

#![allow(clippy::needless_range_loop)]

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use pmnn::config::ExperimentConfig;
use pmnn::evaluator::EvalReport;
use pmnn::metriplectic::{matvec, BulkNetConfig, MetriplecticOutput, BULK_OUTPUTS, SKEW_ENTRIES, TRI_ENTRIES};
use pmnn::pipeline::{self, GenerateSummary, ModelSource, TrainSummary, MODEL_DIR, TIMING_FILE};
use pmnn::port::{load_manifest, load_part, BoundaryNetConfig, ModelConfig, Normalization, PortModel};
use pmnn::state::{derivative_labels, Split, StateVector, SystemState};
use pmnn::trainer::{batch_gradient, loss_single};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// A shipped configuration with its outputs redirected under `root`.
fn config(name: &str, root: &Path) -> ExperimentConfig {
    let paths = [
        format!("paths.dataset={}", root.join("dataset").display()),
        format!("paths.run={}", root.join("run").display()),
        format!("paths.eval={}", root.join("eval").display()),
    ];
    ExperimentConfig::load(&configs().join(name), &paths).expect("shipped config loads")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1 ──────────────────────────────────────────────────────────────────────

fn oracle_consistency(root: &Path) -> (Outcome, Option<GenerateSummary>) {
    let cfg = config("default.toml", root);
    let start = Instant::now();
    let s = match pipeline::generate(&cfg) {
        Ok(s) => s,
        Err(e) => return (Err(e.to_string()), None),
    };
    let took = start.elapsed();
    let detail = format!(
        "{} trajectories, max energy drift {:.2e}, min entropy increment {:.2e}, {:.1?}",
        s.n_trajectories, s.max_energy_drift, s.min_entropy_increment, took
    );
    let ok = s.n_trajectories == 50
        && s.max_energy_drift <= 1e-6
        && s.min_entropy_increment >= -1e-9
        && took <= Duration::from_secs(60);
    (check(ok, detail), Some(s))
}

// 2 ──────────────────────────────────────────────────────────────────────

fn is_skew(a: &[[f64; 5]; 5]) -> bool {
    (0..5).all(|i| (0..5).all(|j| a[i][j] == -a[j][i]))
}

fn min_quadratic(a: &[[f64; 5]; 5], rng: &mut ChaCha8Rng) -> f64 {
    (0..100)
        .map(|_| {
            let x: [f64; 5] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            matvec(a, &x).iter().zip(&x).map(|(u, v)| u * v).sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

fn structural_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = ModelConfig {
        bulk: BulkNetConfig { hidden: vec![16, 16] },
        boundary: BoundaryNetConfig { hidden: vec![16, 16] },
    };
    let mut model = PortModel::new(cfg, Normalization::identity(), 0).map_err(|e| e.to_string())?;
    let (mut skew_fail, mut worst) = (0usize, f64::INFINITY);
    for _ in 0..10_000 {
        let w = 10f64.powf(rng.gen_range(-2.0..0.5));
        for v in model.params_mut().flat_mut() {
            *v = w * rng.gen_range(-1.0..1.0);
        }
        let mut sv = || {
            StateVector::new(
                [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)],
                [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
                rng.gen_range(-1.0..1.0),
            )
            .unwrap()
        };
        let z = SystemState::new(sv(), sv()).unwrap();
        let b = model.bundles(&[z]).map_err(|e| e.to_string())?[0];
        for l in [b.bulk[0].l, b.bulk[1].l, b.cons1.op] {
            skew_fail += !is_skew(&l) as usize;
        }
        for m in [b.bulk[0].m, b.bulk[1].m, b.diss[0].op, b.diss[1].op] {
            worst = worst.min(min_quadratic(&m, &mut rng));
        }
    }
    check(
        skew_fail == 0 && worst >= -1e-12,
        format!("10000 draws x 7 operators: {skew_fail} non-skew L, min xᵀMx {worst:.2e}"),
    )
}

// 3 ──────────────────────────────────────────────────────────────────────

fn gradient_correctness(root: &Path) -> Outcome {
    let cfg = config("default.toml", root);
    let ds = pmnn::io::load_dataset(&cfg.paths.dataset).map_err(|e| e.to_string())?;
    let pairs = derivative_labels(&ds.trajectories[0]).map_err(|e| e.to_string())?;
    let norm = Normalization::from_pairs(&pairs).map_err(|e| e.to_string())?;
    let net = ModelConfig {
        bulk: BulkNetConfig { hidden: vec![12, 12] },
        boundary: BoundaryNetConfig { hidden: vec![12, 12] },
    };
    let (lambda, data_norm) = (cfg.train.lambda, cfg.train.data_norm);
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let mut model = PortModel::new(net.clone(), norm, seed).map_err(|e| e.to_string())?;
        let (z, label) = pairs[17 + 50 * seed as usize];
        let (g, _) = batch_gradient(&model, &[z], &[label], lambda, data_norm).map_err(|e| e.to_string())?;
        let mut fd = vec![0.0; g.0.len()];
        let h = 1e-6;
        for (k, slot) in fd.iter_mut().enumerate() {
            let x = model.params().flat()[k];
            let mut at = |v: f64| {
                model.params_mut().flat_mut()[k] = v;
                loss_single(&model, &z, &label, lambda, data_norm).unwrap().0
            };
            *slot = (at(x + h) - at(x - h)) / (2.0 * h);
            model.params_mut().flat_mut()[k] = x;
        }
        let diff = fd.iter().zip(&g.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = g.0.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / norm);
    }
    check(
        worst <= 1e-5,
        format!("3 nets, all parameters: max relative error {worst:.2e}"),
    )
}

// 4 ──────────────────────────────────────────────────────────────────────

fn unit_random(rng: &mut ChaCha8Rng) -> [f64; 5] {
    std::array::from_fn(|_| rng.gen_range(-1.0..1.0))
}

/// Bulk heads whose operators annihilate the opposite gradient: `L̃` from
/// two vectors orthogonal to `g̃S`, and each column of the lower factor
/// `D̃` orthogonal to `g̃E` (solved for its diagonal entry; the last
/// column has only a diagonal entry and is zero).
fn degenerate_heads(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gs = unit_random(rng);
    // Bounded away from zero: the diagonal of `D̃` divides by it.
    let ge: [f64; 5] = std::array::from_fn(|_| rng.gen_range(0.3..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
    let orth = |v: [f64; 5], n: &[f64; 5]| -> [f64; 5] {
        let k = v.iter().zip(n).map(|(a, b)| a * b).sum::<f64>() / n.iter().map(|a| a * a).sum::<f64>();
        std::array::from_fn(|i| v[i] - k * n[i])
    };
    let (a, c) = (orth(unit_random(rng), &gs), orth(unit_random(rng), &gs));
    let mut heads = Vec::with_capacity(BULK_OUTPUTS);
    for i in 1..5 {
        for j in 0..i {
            heads.push(a[i] * c[j] - c[i] * a[j]);
        }
    }
    let mut d = [[0.0; 5]; 5];
    for j in 0..4 {
        for i in j + 1..5 {
            d[i][j] = rng.gen_range(-1.0..1.0);
        }
        d[j][j] = -(j + 1..5).map(|i| d[i][j] * ge[i]).sum::<f64>() / ge[j];
    }
    for i in 0..5 {
        for j in 0..=i {
            heads.push(d[i][j]);
        }
    }
    heads.extend(ge);
    heads.extend(gs);
    debug_assert_eq!(heads.len(), SKEW_ENTRIES + TRI_ENTRIES + 10);
    heads
}

fn exact_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut max_de, mut min_ds, mut max_res) = (0.0f64, f64::INFINITY, 0.0f64);
    for _ in 0..10_000 {
        let heads = degenerate_heads(&mut rng);
        let scale: [f64; 5] = std::array::from_fn(|_| 10f64.powf(rng.gen_range(-1.0..1.0)));
        let out = MetriplecticOutput::from_heads(&heads, &scale).map_err(|e| e.to_string())?;
        let (de, ds) = out.energy_entropy_rates();
        max_de = max_de.max(de.abs());
        min_ds = min_ds.min(ds);
        max_res = max_res.max(out.degeneracy_sq().sqrt());
    }
    check(
        max_de <= 1e-12 && min_ds >= -1e-12,
        format!("10000 constructed heads: max |dE| {max_de:.2e}, min dS {min_ds:.2e}, max residual {max_res:.2e}"),
    )
}

// 5–7 ────────────────────────────────────────────────────────────────────

struct DeskRun {
    summary: TrainSummary,
    model: EvalReport,
    zero: EvalReport,
    took: Duration,
}

fn desk_run(root: &Path) -> Result<DeskRun, String> {
    let cfg = config("desk.toml", root);
    let start = Instant::now();
    pipeline::generate(&cfg).map_err(|e| e.to_string())?;
    let out = pipeline::train(&cfg, false).map_err(|e| e.to_string())?;
    if let Some(msg) = out.divergence {
        return Err(msg);
    }
    let model = pipeline::eval(&cfg, &ModelSource::default_for(&cfg)).map_err(|e| e.to_string())?;
    let mut zero_cfg = cfg.clone();
    zero_cfg.paths.eval = root.join("eval_zero");
    let zero = pipeline::eval(&zero_cfg, &ModelSource::Zero).map_err(|e| e.to_string())?;
    Ok(DeskRun {
        summary: out.summary,
        model,
        zero,
        took: start.elapsed(),
    })
}

fn desk_learning(run: &DeskRun) -> Outcome {
    let s = &run.summary;
    let (m, z) = (
        run.model.split(Split::Test).unwrap(),
        run.zero.split(Split::Test).unwrap(),
    );
    let drop = s.initial_total / s.best_total;
    let medians = [m.q.med, m.p.med, m.s.med];
    let gains = [z.q.med / m.q.med, z.p.med / m.p.med];
    let detail = format!(
        "{} train / {} test pairs, {:?} at epoch {} (best {}); loss drop {drop:.0}x; test medians q {:.3} p {:.3} s {:.3}; vs persistence q {:.1}x p {:.1}x; {:.0?}",
        s.n_train_pairs,
        s.n_test_pairs,
        s.stop,
        s.epochs_run,
        s.best_epoch,
        medians[0],
        medians[1],
        medians[2],
        gains[0],
        gains[1],
        run.took
    );
    let ok = drop >= 100.0
        && medians.iter().all(|&v| v <= 0.2)
        && gains.iter().all(|&g| g >= 2.0)
        && run.took <= Duration::from_secs(30 * 60);
    check(ok, detail)
}

fn port_asymmetry(root: &Path) -> Outcome {
    let dir = root.join("run").join(MODEL_DIR);
    let manifest = load_manifest(&dir).map_err(|e| e.to_string())?;
    let boun2 = load_part(&dir, "boun2").map_err(|e| e.to_string())?;
    let model = PortModel::load(&dir).map_err(|e| e.to_string())?;
    let cons2: Vec<&str> = boun2
        .tensors
        .iter()
        .map(|t| t.name.as_str())
        .filter(|n| n.contains("cons"))
        .collect();
    let ok = cons2.is_empty()
        && !manifest.ports[1].conservative
        && manifest.ports[0].conservative
        && !model.boundary_net(1).has_conservative_port();
    check(
        ok,
        format!(
            "boun2 tensors {:?}, manifest ports {:?}",
            boun2.tensors.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(),
            manifest.ports
        ),
    )
}

fn audit_coherence(run: &DeskRun) -> Outcome {
    let audit = run
        .model
        .split(Split::Test)
        .and_then(|s| s.audit)
        .ok_or("no test audit")?;
    let trainer = run.summary.best_train_deg;
    let ratio = audit.mean_degeneracy / trainer;
    check(
        (0.1..=10.0).contains(&ratio),
        format!(
            "rollout mean degeneracy {:.3e} vs trainer L_deg {trainer:.3e} (ratio {ratio:.2})",
            audit.mean_degeneracy
        ),
    )
}

// 8 ──────────────────────────────────────────────────────────────────────

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != TIMING_FILE {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn same_outputs(a: &Path, b: &Path) -> Result<usize, String> {
    let names = files(a);
    if names != files(b) {
        return Err(format!("file sets differ under {} and {}", a.display(), b.display()));
    }
    for n in &names {
        if fs::read(a.join(n)).unwrap() != fs::read(b.join(n)).unwrap() {
            return Err(format!("{} differs", n.display()));
        }
    }
    Ok(names.len())
}

fn determinism(first: &[&Path; 2], second: &[&Path; 2]) -> Outcome {
    let g = oracle_consistency(second[0]).0;
    let d = desk_run(second[1]).map(|_| ());
    if let (Err(e), _) | (_, Err(e)) = (&g, &d) {
        return Err(format!("repeat failed: {e}"));
    }
    let n1 = same_outputs(first[0], second[0])?;
    let n2 = same_outputs(first[1], second[1])?;
    Ok(format!(
        "{} files identical across repeated runs (timing excluded)",
        n1 + n2
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = |n: &str| tmp.path().join(n);
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        match &o {
            Ok(d) => println!("criterion {n} PASS {name}: {d}"),
            Err(d) => println!("criterion {n} FAIL {name}: {d}"),
        }
        results.push((name, o));
    };

    report(1, "oracle thermodynamic consistency", oracle_consistency(&dir("c1a")).0);
    report(2, "structural invariants", structural_invariants());
    report(3, "gradient correctness", gradient_correctness(&dir("c1a")));
    report(4, "exact degeneracy consequence", exact_degeneracy());
    match desk_run(&dir("c5a")) {
        Ok(run) => {
            report(5, "desk-scale learning", desk_learning(&run));
            report(6, "port asymmetry", port_asymmetry(&dir("c5a")));
            report(7, "audit coherence", audit_coherence(&run));
        }
        Err(e) => {
            for (n, name) in [
                (5, "desk-scale learning"),
                (6, "port asymmetry"),
                (7, "audit coherence"),
            ] {
                report(n, name, Err(format!("desk run failed: {e}")));
            }
        }
    }
    report(
        8,
        "determinism",
        determinism(&[&dir("c1a"), &dir("c5a")], &[&dir("c1b"), &dir("c5b")]),
    );

    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
