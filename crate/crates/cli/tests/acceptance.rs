//! Acceptance suite: one PASS/FAIL line per criterion, each with its time
//! budget. Runs without the libtest harness so the criteria execute one
//! after another and their timings are not skewed by each other.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use expertnet::data::{kfold_partition, split_dataset, synth_dataset, Sample, Split, SynthSpec};
use expertnet::model::{load_model, save_model, ModelConfig, Network};
use expertnet::nn::{elective_fuse, ElectiveMode};
use expertnet::train::{evaluate, moving_average, predict, train_loop, trend_violations, TrainConfig};
use expertnet::{SeededRng, Tensor};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_expertnet")
}

fn repo_path(rel: &str) -> String {
    format!("{}/../../{rel}", env!("CARGO_MANIFEST_DIR"))
}

fn run_cli(args: &[&str]) -> Result<(i32, String, String), String> {
    let out = Command::new(bin())
        .args(args)
        .env_remove("EXPERTNET_SEED")
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    Ok((
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    ))
}

fn run_ok(args: &[&str]) -> Result<String, String> {
    let (code, out, err) = run_cli(args)?;
    ensure!(code == 0, "`{}` exited {code}: {err}", args.join(" "));
    Ok(out)
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn tempdir() -> Result<tempfile::TempDir, String> {
    tempfile::tempdir().map_err(|e| e.to_string())
}

// 1 ------------------------------------------------------------------------

fn parameter_audit() -> Result<String, String> {
    let out = run_ok(&["params"])?;
    let expected = [
        ("Conv1", 2_432, "2K"),
        ("Conv2", 9_248, "9K"),
        ("ExFeat1", 86_144, "86K"),
        ("Conv4", 18_496, "18K"),
        ("Conv5", 55_392, "55K"),
        ("Conv7", 110_720, "111K"),
        ("Conv9", 212_152, "212K"),
        ("Conv10", 424_192, "424K"),
        ("FC1", 524_800, "525K"),
        ("FC2", 525_312, "525K"),
    ];
    // first occurrence of a layer name is the audit row, second the comparison row
    let mut audit: BTreeMap<&str, usize> = BTreeMap::new();
    let mut compare: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for line in out.lines() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        let Some(&name) = cols.first() else { continue };
        if audit.contains_key(name) {
            compare.insert(name, cols);
        } else if let Some(last) = cols.last() {
            if let Ok(v) = last.replace(',', "").parse::<usize>() {
                audit.insert(name, v);
            }
        }
    }
    for (name, count, printed) in expected {
        ensure!(audit.get(name) == Some(&count), "{name}: audit shows {:?}, want {count}", audit.get(name));
        // printed value reproduced at its rounding precision
        let unit = if printed.ends_with('M') { 1_000_000 } else { 1_000 };
        let digits: usize = printed[..printed.len() - 1].parse().unwrap();
        ensure!((count + unit / 2) / unit == digits, "{name}: {count} does not round to {printed}");
        let row = compare.get(name).ok_or(format!("{name}: no comparison row"))?;
        ensure!(row.get(2) == Some(&printed) && row.get(3) == Some(&"match"), "{name}: comparison row {row:?}");
    }
    ensure!(out.contains("total: 4,471,679 (7 classes)"), "total line missing:\n{out}");
    ensure!(4_471_679 / 1_000_000 == 4, "total not ~4M");
    Ok("10 layer counts exact, total 4,471,679".into())
}

// 2 ------------------------------------------------------------------------

const TABLE_OUTPUT: &[(&str, usize, usize, usize)] = &[
    ("Conv1", 128, 128, 32),
    ("Conv2", 64, 64, 32),
    ("ExFeat1", 64, 64, 32),
    ("Add1", 64, 64, 32),
    ("Conv4", 32, 32, 64),
    ("ExFeat2", 32, 32, 64),
    ("Add2", 32, 32, 64),
    ("Conv5", 16, 16, 96),
    ("ExFeat3", 16, 16, 96),
    ("Add3", 16, 16, 96),
    ("Conv7", 8, 8, 128),
    ("ExFeat4", 8, 8, 128),
    ("Add4", 8, 8, 128),
    ("Conv9", 4, 4, 184),
    ("Conv10", 2, 2, 256),
    ("FC1", 1, 1, 512),
    ("FC2", 1, 1, 1024),
];

fn shape_golden() -> Result<String, String> {
    let net = Network::<f32>::build(ModelConfig::canonical(), &mut SeededRng::new(0)).map_err(|e| e.to_string())?;
    let x = Tensor::<f32>::rand_uniform(&[1, 3, 128, 128], 0.0, 1.0, &mut SeededRng::new(1)).unwrap();
    let names: Vec<&str> = TABLE_OUTPUT.iter().map(|r| r.0).collect();
    let (logits, caps) = net.forward(&x, &names).map_err(|e| e.to_string())?;
    for &(name, h, w, c) in TABLE_OUTPUT {
        let got = caps.get(name).ok_or(format!("{name} not captured"))?.dims().to_vec();
        ensure!(got == [1, c, h, w], "{name}: got {got:?}, want (1,{c},{h},{w})");
    }
    ensure!(logits.dims() == [1, 7] && logits.all_finite(), "logits {:?}", logits.dims());
    Ok(format!("{} layer outputs match, logits (1,7)", TABLE_OUTPUT.len()))
}

// 3 ------------------------------------------------------------------------

/// Per-position transcription: midrange, distances, smallest distance with
/// lowest-index ties, capped at the largest branch.
fn elective_scalar(r: [f32; 4]) -> f32 {
    let (mut hi, mut lo) = (r[0], r[0]);
    for &v in &r[1..] {
        if v > hi {
            hi = v;
        }
        if v < lo {
            lo = v;
        }
    }
    let mid = 0.5 * (hi + lo);
    let mut dmin = (mid - r[0]).abs();
    for &v in &r[1..] {
        let d = (mid - v).abs();
        if d < dmin {
            dmin = d;
        }
    }
    let out = mid + dmin;
    if out > hi {
        hi
    } else {
        out
    }
}

fn elective_oracle() -> Result<String, String> {
    let n = 100_000;
    let mut rng = SeededRng::new(77);
    let branches: Vec<Tensor<f32>> = (0..4)
        .map(|_| {
            let v = (0..n)
                .map(|_| {
                    if rng.below(10) == 0 {
                        rng.below(4) as f32
                    } else {
                        (rng.normal() * 2.0) as f32
                    }
                })
                .collect();
            Tensor::from_vec(&[n], v).unwrap()
        })
        .collect();
    let refs: Vec<&Tensor<f32>> = branches.iter().collect();
    let fused = elective_fuse(&refs, ElectiveMode::Literal).map_err(|e| e.to_string())?;
    for i in 0..n {
        let r = [0, 1, 2, 3].map(|b| branches[b].data()[i]);
        let got = fused.data()[i];
        ensure!(got.to_bits() == elective_scalar(r).to_bits(), "position {i}: {r:?} -> {got}");
        let lo = r.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = r.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        ensure!(lo <= got && got <= hi, "bound violated at {i}: {r:?} -> {got}");
    }
    for (vals, want) in [([1.0f32, 2.0, 4.0, 9.0], 6.0f32), ([-2.0, 0.0, 2.0, 6.0], 2.0)] {
        let ts: Vec<Tensor<f32>> = vals.iter().map(|&v| Tensor::new(&[1], v).unwrap()).collect();
        let refs: Vec<&Tensor<f32>> = ts.iter().collect();
        let got = elective_fuse(&refs, ElectiveMode::Literal).unwrap().data()[0];
        ensure!(got == want, "{vals:?} -> {got}, want {want}");
    }
    Ok(format!("{n} positions bit-exact, bounds hold, hand cases 6 and 2"))
}

// 4 ------------------------------------------------------------------------

fn gradient_suite() -> Result<String, String> {
    let out = run_ok(&["gradcheck", "--seed", "3"])?;
    let want = [
        ("conv/stride1", 1e-4),
        ("conv/stride2", 1e-4),
        ("relu", 1e-4),
        ("elective/literal", 1e-4),
        ("elective/nearest", 1e-4),
        ("additive", 1e-4),
        ("fc/relu", 1e-4),
        ("softmax_xent", 1e-4),
        ("network", 1e-3),
    ];
    let mut worst: f64 = 0.0;
    for (op, tol) in want {
        let line = out
            .lines()
            .find(|l| l.split_whitespace().nth(1) == Some(op))
            .ok_or(format!("no report for {op}"))?;
        let err: f64 = line
            .split_whitespace()
            .skip_while(|w| *w != "max_rel_err")
            .nth(1)
            .and_then(|v| v.parse().ok())
            .ok_or(format!("unparsable: {line}"))?;
        ensure!(err < tol, "{op}: max relative error {err:e} >= {tol:e}");
        worst = worst.max(err);
    }
    Ok(format!("9 checks pass, worst relative error {worst:.1e}"))
}

// 5 ------------------------------------------------------------------------

fn overfit_probe() -> Result<String, String> {
    let data = synth_dataset(&SynthSpec::new(4, 9, 32, 3)).map_err(|e| e.to_string())?;
    let train: Vec<&Sample> = data.samples.iter().take(35).collect();
    let mut net = Network::<f32>::build(ModelConfig::desk(), &mut SeededRng::new(3)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 300,
        seed: 3,
        ..TrainConfig::default()
    };
    let m = train_loop(&mut net, &train, &[], &cfg).map_err(|e| e.to_string())?;
    let first = m.epochs.iter().find(|e| e.train_acc == 100.0).map(|e| e.epoch);
    ensure!(first.is_some(), "never reached 100% (last {:.1}%)", m.epochs.last().unwrap().train_acc);
    let ma = moving_average(&m.losses(), 10);
    let violations = trend_violations(&ma[19..]);
    ensure!(
        violations.len() <= 2 && violations.iter().all(|&(_, rel)| rel < 0.05),
        "moving-average increases after epoch 20: {violations:?}"
    );
    Ok(format!(
        "100% train accuracy at epoch {}, {} trend violations",
        first.unwrap(),
        violations.len()
    ))
}

// 6 ------------------------------------------------------------------------

fn desk_generalization() -> Result<String, String> {
    let t = tempdir()?;
    let data = t.path().join("data");
    let model = t.path().join("desk.bin");
    run_ok(&["synth", "--out", s(&data), "--classes", "4", "--per-class", "100", "--size", "32", "--seed", "7"])?;
    run_ok(&[
        "train", "--data", s(&data), "--config", &repo_path("configs/desk.cfg"), "--epochs", "60", "--batch", "16",
        "--lr", "0.001", "--augment", "0", "--seed", "7", "--out", s(&model),
    ])?;
    let out = run_ok(&["eval", "--data", s(&data), "--model", s(&model), "--split", "test"])?;
    let acc: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("accuracy: "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or(format!("no accuracy line:\n{out}"))?;
    let samples = out.lines().find_map(|l| l.strip_prefix("samples: ")).unwrap_or("?");
    ensure!(acc >= 90.0, "test accuracy {acc} < 90");
    Ok(format!("test accuracy {acc:.1}% on {samples} held-out images"))
}

// 7 ------------------------------------------------------------------------

fn protocol_arithmetic() -> Result<String, String> {
    let mut d = synth_dataset(&SynthSpec::new(4, 100, 32, 1)).map_err(|e| e.to_string())?;
    split_dataset(&mut d, 5).map_err(|e| e.to_string())?;
    for c in 0..4 {
        let count = |w: Split| d.split(w).iter().filter(|s| s.label == c).count();
        let got = (count(Split::Test), count(Split::Val), count(Split::Train));
        ensure!(got == (20, 24, 56), "class {c}: test/val/train {got:?}");
    }
    let folds = kfold_partition(&d, 5, 5).map_err(|e| e.to_string())?;
    let mut hits = vec![0u8; d.len()];
    for f in &folds {
        ensure!(f.test.len() == 80, "fold test size {}", f.test.len());
        for &i in &f.test {
            hits[i] += 1;
        }
    }
    ensure!(hits.iter().all(|&h| h == 1), "folds overlap or miss samples");

    let net = Network::<f32>::build(ModelConfig::desk(), &mut SeededRng::new(0)).map_err(|e| e.to_string())?;
    let four: Vec<&Sample> = d.samples.iter().step_by(100).collect();
    let preds = predict(&net, &four).map_err(|e| e.to_string())?;
    let relabelled: Vec<Sample> = four
        .iter()
        .zip(&preds)
        .enumerate()
        .map(|(i, (s, &p))| Sample {
            label: if i == 1 { (p + 1) % 4 } else { p },
            ..(*s).clone()
        })
        .collect();
    let refs: Vec<&Sample> = relabelled.iter().collect();
    let (acc, cm) = evaluate(&net, &refs).map_err(|e| e.to_string())?;
    ensure!(acc == 75.0 && cm.trace() == 3, "3 of 4 correct gave {acc}");
    Ok("20/24/56 per class, 5 disjoint folds of 80, 3/4 -> 75.0".into())
}

// 8 ------------------------------------------------------------------------

fn tree_bytes(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for class in fs::read_dir(root).map_err(|e| e.to_string())? {
        let class = class.map_err(|e| e.to_string())?.path();
        for f in fs::read_dir(&class).map_err(|e| e.to_string())? {
            let f = f.map_err(|e| e.to_string())?.path();
            let rel = f.strip_prefix(root).unwrap().to_path_buf();
            out.insert(rel, fs::read(&f).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn determinism() -> Result<String, String> {
    let t = tempdir()?;
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let dir = t.path().join(name);
        run_ok(&["synth", "--out", s(&dir), "--classes", "4", "--per-class", "100", "--size", "32", "--seed", "7"])?;
        trees.push(tree_bytes(&dir)?);
    }
    ensure!(trees[0].len() == 400 && trees[0] == trees[1], "synthetic trees differ");

    let data = t.path().join("a");
    let mut artefacts = Vec::new();
    for name in ["r1", "r2"] {
        let (model, log) = (t.path().join(format!("{name}.bin")), t.path().join(format!("{name}.log")));
        run_ok(&[
            "train", "--threads", "1", "--data", s(&data), "--config", &repo_path("configs/desk.cfg"), "--epochs",
            "3", "--batch", "16", "--augment", "1", "--seed", "11", "--out", s(&model), "--log", s(&log),
        ])?;
        artefacts.push((fs::read(&model).map_err(|e| e.to_string())?, fs::read(&log).map_err(|e| e.to_string())?));
    }
    ensure!(artefacts[0].1 == artefacts[1].1, "epoch logs differ");
    ensure!(artefacts[0].0 == artefacts[1].0, "model files differ");

    let loaded = load_model::<f32>(&artefacts[0].0).map_err(|e| e.to_string())?;
    ensure!(save_model(&loaded) == artefacts[0].0, "re-saved model differs");
    let fresh = Network::<f32>::build(ModelConfig::desk(), &mut SeededRng::new(21)).map_err(|e| e.to_string())?;
    let back = load_model::<f32>(&save_model(&fresh)).map_err(|e| e.to_string())?;
    let x = Tensor::<f32>::rand_uniform(&[4, 3, 32, 32], 0.0, 1.0, &mut SeededRng::new(22)).unwrap();
    let (y0, _) = fresh.forward(&x, &[]).map_err(|e| e.to_string())?;
    let (y1, _) = back.forward(&x, &[]).map_err(|e| e.to_string())?;
    ensure!(
        y0.data().iter().zip(y1.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
        "forward after reload differs"
    );
    Ok("400-image trees, 3-epoch logs and model files byte-identical; reload bit-exact".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, Check); 8] = [
        ("parameter audit", Duration::from_secs(1), parameter_audit),
        ("shape golden test", Duration::from_secs(30), shape_golden),
        ("elective oracle", Duration::from_secs(5), elective_oracle),
        ("gradient suite", Duration::from_secs(120), gradient_suite),
        ("overfit probe", Duration::from_secs(180), overfit_probe),
        ("desk generalization", Duration::from_secs(600), desk_generalization),
        ("protocol arithmetic", Duration::from_secs(1), protocol_arithmetic),
        ("determinism and persistence", Duration::from_secs(120), determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if took <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget")),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} [{}] {name} ({:.2}s / {}s): {detail}",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} failed", failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
