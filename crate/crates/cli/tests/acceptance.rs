//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line per criterion and exits nonzero if any fail.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use segattn::arch::{
    Discriminator, DiscriminatorDesign, DiscriminatorSpec, GanModel, Generator, GeneratorSpec, Topology,
};
use segattn::data::{generate_synthetic, SyntheticStyle};
use segattn::gradcheck;
use segattn::metrics::{binarize, confusion, iou, mean_iou, pixel_accuracy};
use segattn::nn::ParamStore;
use segattn::train::{
    bce_with_logits, train_adversarial, train_supervised, LossRecord, Phase, RmspropConfig, RmspropState, TrainConfig,
};
use segattn::{Graph, Tensor};

type Outcome = Result<String, String>;
type Criterion = Box<dyn FnOnce() -> Outcome>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradient_oracle() -> Outcome {
    let seeds: Vec<u64> = (0..5).collect();
    let report = gradcheck::run_suite(&[], &seeds).map_err(e2s)?;
    for line in report.lines() {
        if line.starts_with("FAIL") {
            return Err(line);
        }
    }
    ensure(report.passed(), || "suite reported failure".into())?;
    let max = report.max_rel_error();
    ensure(max < gradcheck::TOLERANCE, || format!("max rel err {max:.3e}"))?;
    ensure(report.elapsed < Duration::from_secs(600), || format!("took {:?}", report.elapsed))?;
    Ok(format!(
        "{} components x 5 seeds, max rel err {max:.2e}, {:.1}s",
        report.components.len(),
        report.elapsed.as_secs_f64()
    ))
}

fn mask(rng: &mut impl Rng, p: f64) -> Vec<u8> {
    (0..256).map(|_| rng.gen_bool(p) as u8).collect()
}

fn as_tensor(m: &[u8], h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_vec(&[1, h, w], m.iter().map(|&v| v as f32).collect()).unwrap()
}

/// Per-pixel enumeration, no confusion-matrix shortcut.
fn brute(pred: &[u8], target: &[u8]) -> (f64, f64) {
    let correct = pred.iter().zip(target).filter(|(p, t)| p == t).count();
    let pa = correct as f64 / pred.len() as f64;
    let class_iou = |c: u8| {
        let inter = pred.iter().zip(target).filter(|&(&p, &t)| p == c && t == c).count();
        let union = pred.iter().zip(target).filter(|&(&p, &t)| p == c || t == c).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    };
    (pa, (class_iou(0) + class_iou(1)) / 2.0)
}

fn metric_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2024);
    for i in 0..1000 {
        let (dp, dt) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let (p, t) = (mask(&mut rng, dp), mask(&mut rng, dt));
        let (pa, miou) = brute(&p, &t);
        let (pt, tt) = (as_tensor(&p, 16, 16), as_tensor(&t, 16, 16));
        let got_pa = pixel_accuracy(&confusion(&pt, &tt).map_err(e2s)?).map_err(e2s)?;
        let got_miou = mean_iou(&pt, &tt).map_err(e2s)?;
        ensure(got_pa == pa && got_miou == miou, || {
            format!("pair {i}: PA {got_pa} vs {pa}, mIoU {got_miou} vs {miou}")
        })?;
    }
    let pred = as_tensor(&[1, 0, 1, 1], 2, 2);
    let target = as_tensor(&[1, 0, 0, 1], 2, 2);
    let c = confusion(&pred, &target).map_err(e2s)?;
    ensure((c.tp, c.tn, c.fp, c.fn_) == (2, 1, 1, 0), || format!("counts {c:?}"))?;
    let pa = pixel_accuracy(&c).map_err(e2s)?;
    let iou1 = iou(&pred, &target, 1).map_err(e2s)?;
    ensure(pa == 0.75 && iou1 == 2.0 / 3.0, || format!("worked example PA {pa}, IoU1 {iou1}"))?;
    Ok("1000 random 16x16 pairs exact; worked example PA 0.75, IoU1 2/3".into())
}

fn naive_bce(x: f64, t: f64) -> f64 {
    let p = 1.0 / (1.0 + (-x).exp());
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn loss_oracle() -> Outcome {
    let bce = |x: f64, t: f64| bce_with_logits(&Tensor::scalar(x), &Tensor::scalar(t), None).map_err(e2s);
    let l = bce(0.0, 0.5)?;
    ensure((l - std::f64::consts::LN_2).abs() < 1e-9, || format!("bce(0, 0.5) = {l}"))?;
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (x, t) = (rng.gen_range(-20.0..20.0), rng.gen_range(0.0..=1.0));
        let d = (bce(x, t)? - naive_bce(x, t)).abs();
        worst = worst.max(d);
    }
    ensure(worst < 1e-6, || format!("stable vs naive differ by {worst:.3e}"))?;
    for x in [-100.0, 100.0] {
        for t in [0.0, 0.5, 1.0] {
            let v = bce(x, t)?;
            ensure(v.is_finite(), || format!("bce({x}, {t}) = {v}"))?;
        }
    }
    Ok(format!("ln 2 reproduced; 1e4 samples within {worst:.1e}; finite at |x| = 100"))
}

fn scalar_store(w: f64, grad: f64) -> Result<ParamStore<f64>, String> {
    let mut store = ParamStore::new();
    store.register("w", Tensor::scalar(w));
    let mut g = Graph::new();
    let bound = store.bind(&mut g, true);
    let y = g.mul_scalar(bound.vars()[0], grad).map_err(e2s)?;
    g.backward(y).map_err(e2s)?;
    store.accumulate_grads(&g, &bound);
    Ok(store)
}

fn optimizer_oracle() -> Outcome {
    let config = RmspropConfig {
        learning_rate: 0.1,
        beta2: 0.9,
        ..Default::default()
    };
    let mut store = scalar_store(1.0, 1.0)?;
    RmspropState::new(config, &store).step(&mut store).map_err(e2s)?;
    let w = store.by_name("w").unwrap().value.item().map_err(e2s)?;
    // s = 0.1 g^2 = 0.1, step = 0.1 * g / sqrt(s) = 0.1 / sqrt(0.1).
    let hand = 1.0 - 0.1 / 0.1f64.sqrt();
    ensure((w - hand).abs() < 1e-6, || format!("w = {w}, expected {hand}"))?;
    let mut still = scalar_store(2.5, 0.0)?;
    RmspropState::new(config, &still).step(&mut still).map_err(e2s)?;
    let w0 = still.by_name("w").unwrap().value.item().map_err(e2s)?;
    ensure(w0 == 2.5, || format!("zero gradient moved w to {w0}"))?;
    Ok(format!("w: 1 -> {w:.6}; zero gradient leaves w unchanged"))
}

fn shape_suite() -> Outcome {
    let sizes = [16, 32, 48, 64, 96, 128];
    let expected_gates = [0, 4, 4, 3];
    for (t, gates) in Topology::ALL.into_iter().zip(expected_gates) {
        let gen = Generator::<f32>::build(GeneratorSpec::new(t, 2), 0).map_err(e2s)?;
        ensure(gen.gate_count() == gates, || format!("{t}: {} gates", gen.gate_count()))?;
        for &h in &sizes {
            for &w in &sizes {
                let out = gen.predict(&Tensor::zeros(&[1, h, w]).map_err(e2s)?).map_err(e2s)?;
                ensure(out.shape() == [1, h, w], || format!("{t}: {h}x{w} -> {:?}", out.shape()))?;
            }
        }
    }
    let linear = |d| Discriminator::<f32>::build(DiscriminatorSpec::new(d, 128), 0).map(|x| x.linear_count());
    let (d4, d6) = (linear(DiscriminatorDesign::D4).map_err(e2s)?, linear(DiscriminatorDesign::D6).map_err(e2s)?);
    ensure((d4, d6) == (5, 7), || format!("D-4 {d4} linear layers, D-6 {d6}"))?;
    Ok("4 generators x 36 sizes shape-preserving; gates 0/4/4/3; D-4 5 and D-6 7 linear layers".into())
}

fn overfit() -> Outcome {
    let data = generate_synthetic(4, 64, 64, 0, SyntheticStyle::Blobs).map_err(e2s)?;
    let cfg = TrainConfig {
        epochs: 200,
        ..Default::default()
    };
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for t in Topology::ALL {
        let start = Instant::now();
        let mut gen = Generator::<f32>::build(GeneratorSpec::new(t, 8), 0).map_err(e2s)?;
        train_supervised(&mut gen, &data, &cfg).map_err(e2s)?;
        let mut total = 0.0;
        for s in &data {
            total += mean_iou(&binarize(&gen.predict(&s.image).map_err(e2s)?), &s.mask).map_err(e2s)?;
        }
        let miou = total / data.len() as f64;
        let secs = start.elapsed().as_secs_f64();
        parts.push(format!("{} {miou:.3} ({secs:.0}s)", t.tag()));
        if miou < 0.90 || secs > 900.0 {
            failures.push(format!("{} mIoU {miou:.4} in {secs:.0}s", t.tag()));
        }
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(parts.join(", "))
}

fn gan_contract() -> Outcome {
    let data = generate_synthetic(4, 16, 16, 1, SyntheticStyle::Cells).map_err(e2s)?;
    let build = || {
        GanModel::<f32>::build(GeneratorSpec::new(Topology::Unet, 4), DiscriminatorDesign::D4, 16, 16, 3).map_err(e2s)
    };
    let base = TrainConfig {
        epochs: 5,
        learning_rate: 1e-3,
        seed: 11,
        ..Default::default()
    };
    let silent = TrainConfig {
        lambda_adv: 0.0,
        d_steps: 0,
        ..base
    };
    let mut gan = build()?;
    let mut plain = gan.generator.clone();
    let adv = train_adversarial(&mut gan, &data, &silent).map_err(e2s)?;
    let sup = train_supervised(&mut plain, &data, &silent).map_err(e2s)?;
    let bits = |r: &[LossRecord]| r.iter().map(|x| x.generator_loss.to_bits()).collect::<Vec<_>>();
    ensure(bits(&adv.records) == bits(&sup), || "loss trajectories differ".into())?;

    let mut gan = build()?;
    let run = train_adversarial(&mut gan, &data, &base).map_err(e2s)?;
    ensure(run.trace.len() == 2 * base.epochs, || format!("{} phase events", run.trace.len()))?;
    for (i, ev) in run.trace.iter().enumerate() {
        let phase = if i % 2 == 0 { Phase::Discriminator } else { Phase::Generator };
        ensure(ev.epoch == i / 2 && ev.phase == phase, || format!("event {i} is {ev:?}"))?;
        ensure(ev.frozen_before == ev.frozen_after, || format!("frozen network changed in {ev:?}"))?;
        ensure(ev.trained_before != ev.trained_after, || format!("trained network idle in {ev:?}"))?;
    }
    Ok(format!(
        "lambda=0,d_steps=0 bitwise equal over {} epochs; D-then-G with frozen checksums over {} phases",
        sup.len(),
        run.trace.len()
    ))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

/// Runs the comparison script with `cwd` as working directory and relative
/// output paths, so repeated runs echo identical configurations.
fn run_compare_script(cwd: &Path) -> Result<String, String> {
    let out = Command::new("bash")
        .arg(repo_root().join("scripts/compare.sh"))
        .arg("runs")
        .current_dir(cwd)
        .env("SEGATTN", env!("CARGO_BIN_EXE_segattn"))
        .env("EPOCHS", "4")
        .env("SIZE", "32")
        .output()
        .map_err(e2s)?;
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    ensure(out.status.success(), || {
        format!("script exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(stdout)
}

fn table_rows(path: &Path) -> Result<Vec<Vec<String>>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap_or_default();
    ensure(header == "model,pa,delta_pa,miou,delta_miou", || format!("header `{header}`"))?;
    Ok(lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn comparative_harness(workdir: &Path) -> Outcome {
    run_compare_script(workdir)?;
    let runs = workdir.join("runs");
    let gens = table_rows(&runs.join("table_generators/table.csv"))?;
    let names: Vec<&str> = gens.iter().map(|r| r[0].as_str()).collect();
    ensure(
        names == ["U-net", "Attn. U-net", "Adv. attn. U-net", "Full attn. U-net"],
        || format!("generator rows {names:?}"),
    )?;
    let gans = table_rows(&runs.join("table_gans/table.csv"))?;
    let names: Vec<&str> = gans.iter().map(|r| r[0].as_str()).collect();
    ensure(
        names == ["GAN + D-4", "GAN + D-6", "GAN + D-4V", "GAN + D-5V"],
        || format!("GAN rows {names:?}"),
    )?;
    for rows in [&gens, &gans] {
        ensure(rows[0][2] == "0.0000" && rows[0][4] == "0.0000", || format!("baseline row {:?}", rows[0]))?;
        for r in rows.iter() {
            let v: Vec<f64> = r[1..].iter().map(|x| x.parse().unwrap_or(f64::NAN)).collect();
            ensure(v.iter().all(|x| x.is_finite()), || format!("row {r:?}"))?;
            ensure((0.0..=1.0).contains(&v[0]) && (0.0..=1.0).contains(&v[2]), || format!("row {r:?}"))?;
        }
    }
    Ok("4-generator and 4-GAN tables emitted by scripts/compare.sh; baseline deltas 0.0000".into())
}

fn csv_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).into_iter().flatten().flatten() {
        let p = entry.path();
        if p.is_dir() {
            csv_files(&p, out);
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p);
        }
    }
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    run_compare_script(second)?;
    let mut files = Vec::new();
    csv_files(&first.join("runs"), &mut files);
    files.sort();
    let losses = files.iter().filter(|p| p.ends_with("loss.csv")).count();
    ensure(losses == 8, || format!("expected 8 loss CSVs, found {losses}"))?;
    for a in &files {
        let rel = a.strip_prefix(first).unwrap();
        let b = second.join(rel);
        let (x, y) = (fs::read(a).map_err(e2s)?, fs::read(&b).map_err(|e| format!("{}: {e}", b.display()))?);
        ensure(x == y, || format!("{} differs between runs", rel.display()))?;
    }
    Ok(format!("{} CSVs ({losses} loss, {} metric) byte-identical across two runs", files.len(), files.len() - losses))
}

fn main() {
    let first = tempfile::tempdir().expect("tempdir");
    let second = tempfile::tempdir().expect("tempdir");
    let (a, b) = (first.path().to_path_buf(), second.path().to_path_buf());
    let criteria: Vec<(&str, Criterion)> = vec![
        ("gradient oracle", Box::new(gradient_oracle)),
        ("metric oracle", Box::new(metric_oracle)),
        ("loss oracle", Box::new(loss_oracle)),
        ("optimizer oracle", Box::new(optimizer_oracle)),
        ("shape suite", Box::new(shape_suite)),
        ("overfit smoke test", Box::new(overfit)),
        ("GAN loop contract", Box::new(gan_contract)),
        ("comparative harness", Box::new({
            let a = a.clone();
            move || comparative_harness(&a)
        })),
        ("determinism", Box::new(move || determinism(&a, &b))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name} [{secs:.1}s]: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name} [{secs:.1}s]: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
