//! End-to-end acceptance checks. Runs as a plain binary so that each
//! criterion reports a PASS/FAIL line even when the others succeed.

mod common;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rlae::cli::{cmd_sweep, cmd_synth_check, cmd_train, parse, Command};
use rlae::datasets::ImageShape;
use rlae::linalg::{sym_eigen, Matrix, Rng};
use rlae::losses::{ssim_value, SsimConfig};
use rlae::regularizers::TailDropSchedule;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn eq2_oracle() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("synth");
    let Command::SynthCheck(args) = parse(&[
        "rlae", "synth-check", "--dim", "32", "--samples", "50000", "--tolerance", "0.03",
        "--population-tolerance", "1e-8", "--out", out.to_str().unwrap(),
    ])
    .map_err(|e| e.to_string())?
    else {
        unreachable!()
    };
    let started = Instant::now();
    let report = cmd_synth_check(&args).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    check(report.rows.len() == 32, "expected 32 rows")?;
    let mut worst_rel: f64 = 0.0;
    let mut worst_pop: f64 = 0.0;
    for r in &report.rows {
        // independent tail sum
        let tail: f64 = ((r.l + 1)..=32).map(|n| 1.0 / n as f64).sum();
        check((r.theory - tail).abs() < 1e-12, format!("L={}: theory {} vs {tail}", r.l, r.theory))?;
        if tail > 0.0 {
            worst_rel = worst_rel.max((r.empirical - tail).abs() / tail);
        } else {
            check(r.empirical < 1e-20, format!("L=32 distortion {}", r.empirical))?;
        }
        worst_pop = worst_pop.max((r.population - tail).abs());
    }
    check(worst_rel <= 0.03, format!("max relative error {worst_rel:.4}"))?;
    check(worst_pop <= 1e-8, format!("population error {worst_pop:e}"))?;
    check(report.passed, "synth-check reported failure")?;
    check(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "max rel err {worst_rel:.4} (tol 0.03), population {worst_pop:.1e} (tol 1e-8), {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn eigensolver() -> Outcome {
    let mut worst_rec: f64 = 0.0;
    let mut worst_trace: f64 = 0.0;
    let mut count = 0;
    for n in [1, 2, 3, 5, 8, 13, 21, 32, 48, 64] {
        for seed in 0..3u64 {
            let mut rng = Rng::new(1000 * n as u64 + seed);
            let raw = Matrix::from_fn(n, n, |_, _| rng.normal());
            let c = Matrix::from_fn(n, n, |r, k| 0.5 * (raw.get(r, k) + raw.get(k, r)));
            let eig = sym_eigen(&c).map_err(|e| e.to_string())?;
            let rec = eig.reconstruct().sub(&c).unwrap().max_abs() / c.max_abs();
            let sum: f64 = eig.eigenvalues.iter().sum();
            let scale = c.trace().abs().max(eig.eigenvalues.iter().map(|v| v.abs()).sum::<f64>());
            let tr = (sum - c.trace()).abs() / scale;
            worst_rec = worst_rec.max(rec);
            worst_trace = worst_trace.max(tr);
            count += 1;
        }
    }
    check(worst_rec <= 1e-8, format!("reconstruction {worst_rec:e}"))?;
    check(worst_trace <= 1e-8, format!("trace {worst_trace:e}"))?;
    Ok(format!(
        "{count} matrices up to 64x64: reconstruction {worst_rec:.1e}, trace {worst_trace:.1e} (tol 1e-8)"
    ))
}

fn gradients() -> Outcome {
    let mut worst: (f64, String) = (0.0, String::new());
    for loss in [common::Loss::Mse, common::Loss::NegSsim] {
        for (block, err) in common::gradient_check(loss, 7) {
            if err > worst.0 {
                worst = (err, format!("{loss:?}/{block}"));
            }
        }
    }
    check(worst.0 <= 1e-4, format!("{}: {:e}", worst.1, worst.0))?;
    Ok(format!("max relative error {:.1e} at {} (tol 1e-4)", worst.0, worst.1))
}

fn taildrop_law() -> Outcome {
    const M: usize = 64;
    const DRAWS: usize = 1_000_000;
    let mut worst: f64 = 0.0;
    for beta in [0.67, 1.0, 2.1] {
        let schedule = TailDropSchedule::taildrop(M, beta).map_err(|e| e.to_string())?;
        let mut rng = Rng::new(4);
        let mut counts = [0usize; M];
        let mut drawn = 0;
        while drawn < DRAWS {
            let rows = 20_000.min(DRAWS - drawn);
            let mask = schedule.sample_mask(rows, &mut rng);
            for r in 0..rows {
                let row = mask.row(r);
                let kept = row.iter().take_while(|&&v| v == 1.0).count();
                check(
                    row[kept..].iter().all(|&v| v == 0.0),
                    format!("beta={beta}: row is not a ones-prefix/zeros-suffix mask"),
                )?;
                check(kept >= 1, "mask dropped every latent")?;
                counts[M - kept] += 1;
            }
            drawn += rows;
        }
        let mut cum = 0usize;
        for (d, c) in counts.iter().enumerate() {
            cum += c;
            let exact = if d + 1 >= M { 1.0 } else { ((d + 1) as f64 / M as f64).powf(beta) };
            worst = worst.max((cum as f64 / DRAWS as f64 - exact).abs());
        }
    }
    check(worst <= 0.005, format!("max CDF deviation {worst}"))?;
    Ok(format!("beta in {{0.67, 1, 2.1}}, 1e6 draws each: max CDF deviation {worst:.5} (tol 0.005)"))
}

fn ssim_properties() -> Outcome {
    let cfg = SsimConfig::default();
    let mut rng = Rng::new(8);
    let (mut ident, mut asym, mut lo, mut hi) = (0.0f64, 0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..1000 {
        let shape = if i % 4 == 0 { ImageShape::new(16, 16, 3) } else { ImageShape::new(28, 28, 1) };
        let x: Vec<f64> = (0..shape.len()).map(|_| rng.uniform()).collect();
        let y: Vec<f64> = match i % 5 {
            0 => x.iter().map(|v| 1.0 - v).collect(),
            1 => x.iter().map(|v| (v + 0.1 * rng.normal()).clamp(0.0, 1.0)).collect(),
            2 => vec![rng.uniform(); shape.len()],
            _ => (0..shape.len()).map(|_| rng.uniform()).collect(),
        };
        let s_xx = ssim_value(&x, &x, shape, &cfg).map_err(|e| e.to_string())?;
        let s_xy = ssim_value(&x, &y, shape, &cfg).map_err(|e| e.to_string())?;
        let s_yx = ssim_value(&y, &x, shape, &cfg).map_err(|e| e.to_string())?;
        ident = ident.max((s_xx - 1.0).abs());
        asym = asym.max((s_xy - s_yx).abs());
        lo = lo.min(s_xy);
        hi = hi.max(s_xy);
    }
    check(ident <= 1e-9, format!("ssim(x,x) off by {ident:e}"))?;
    check(asym <= 1e-12, format!("asymmetry {asym:e}"))?;
    check((-1.0..=1.0).contains(&lo) && (-1.0..=1.0).contains(&hi), format!("range [{lo}, {hi}]"))?;
    Ok(format!(
        "1000 pairs: |ssim(x,x)-1| {ident:.1e}, asymmetry {asym:.1e}, range [{lo:.3}, {hi:.3}]"
    ))
}

/// Sweep rows keyed by L: (mse_db, ssim, probe_acc).
type Table = HashMap<usize, (f64, f64, f64)>;

struct DeskRun {
    checkpoint: Vec<u8>,
    sweep_csv: Vec<u8>,
    table: Table,
    seconds: f64,
}

const GRID: &str = "4,14,24,32,34,44,54,64";

fn desk_run(root: &Path, name: &str, schedule: &[&str]) -> Result<DeskRun, String> {
    let data = common::mnist_dir();
    let data = data.to_str().unwrap();
    let out = root.join(name);
    let out_s = out.to_str().unwrap();
    let mut args = vec![
        "rlae", "train", "--dataset", "mnist", "--data-dir", data, "--subset", "10000", "--hidden", "256",
        "--latent", "64", "--epochs", "100", "--seed", "0", "--out", out_s,
    ];
    args.extend_from_slice(schedule);
    let Command::Train(train) = parse(&args).map_err(|e| e.to_string())? else {
        unreachable!()
    };
    let started = Instant::now();
    let trained = cmd_train(&train).map_err(|e| e.to_string())?;
    let seconds = started.elapsed().as_secs_f64();

    let ckpt = trained.checkpoint.to_str().unwrap().to_string();
    let Command::Sweep(sw) = parse(&[
        "rlae", "sweep", "--checkpoint", &ckpt, "--dataset", "mnist", "--data-dir", data, "--subset", "10000",
        "--L-list", GRID, "--metrics", "mse,ssim,probe", "--out", out_s,
    ])
    .map_err(|e| e.to_string())?
    else {
        unreachable!()
    };
    cmd_sweep(&sw).map_err(|e| e.to_string())?;
    let sweep_csv = fs::read(out.join("sweep.csv")).map_err(|e| e.to_string())?;
    let mut table = Table::new();
    for line in String::from_utf8_lossy(&sweep_csv).lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| format!("{line}: {e}"));
        table.insert(f[4].parse().unwrap(), (num(6)?, num(7)?, num(8)?));
    }
    Ok(DeskRun {
        checkpoint: fs::read(&trained.checkpoint).map_err(|e| e.to_string())?,
        sweep_csv,
        table,
        seconds,
    })
}

fn rateless_trend(rl: &DeskRun, sae: &DeskRun) -> Outcome {
    let gap = sae.table[&32].0 - rl.table[&32].0;
    let ls = [4, 14, 24, 34, 44, 54, 64];
    let dbs: Vec<f64> = ls.iter().map(|l| rl.table[l].0).collect();
    let worst_rise = dbs.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let minutes = (rl.seconds + sae.seconds) / 60.0;
    let detail = format!(
        "L=32: RL-AE {:.2} dB vs SAE {:.2} dB (gap {gap:.2} dB, need >= 3); worst rise with L {worst_rise:+.3} dB (slack 0.1); training {minutes:.1} min",
        rl.table[&32].0, sae.table[&32].0
    );
    check(gap >= 3.0, detail.clone())?;
    check(worst_rise <= 0.1, detail.clone())?;
    check(minutes <= 15.0, detail.clone())?;
    Ok(detail)
}

fn ssim_trend(rl: &DeskRun, sae: &DeskRun) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for l in [4, 14, 24, 34, 44, 54] {
        let (a, b) = (rl.table[&l].1, sae.table[&l].1);
        ok &= a >= b;
        parts.push(format!("L={l}: {a:.3}/{b:.3}"));
    }
    let detail = format!("SSIM RL-AE/SAE {}", parts.join(", "));
    check(ok, detail.clone())?;
    Ok(detail)
}

fn probe_trend(rl: &DeskRun, sae: &DeskRun) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for l in [14, 24, 34] {
        let (a, b) = (rl.table[&l].2, sae.table[&l].2);
        ok &= a >= b;
        parts.push(format!("L={l}: {a:.3}/{b:.3}"));
    }
    let detail = format!("probe accuracy RL-AE/SAE {}", parts.join(", "));
    check(ok, detail.clone())?;
    Ok(detail)
}

fn determinism(a: &DeskRun, b: &DeskRun) -> Outcome {
    check(a.checkpoint == b.checkpoint, "checkpoints differ")?;
    check(a.sweep_csv == b.sweep_csv, "sweep CSVs differ")?;
    Ok(format!(
        "checkpoint ({} bytes) and sweep CSV ({} bytes) identical across two runs",
        a.checkpoint.len(),
        a.sweep_csv.len()
    ))
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, started: Instant, outcome: Outcome) {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("criterion {id} ({name}): PASS - {detail} [{secs:.1}s]");
            results.push(true);
        }
        Err(detail) => {
            println!("criterion {id} ({name}): FAIL - {detail} [{secs:.1}s]");
            results.push(false);
        }
    }
}

fn timed(f: impl FnOnce() -> Outcome) -> (Instant, Outcome) {
    let t = Instant::now();
    let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|_| Err("panicked".to_string()));
    (t, out)
}

fn main() -> ExitCode {
    let mut results = Vec::new();

    let (t, o) = timed(eq2_oracle);
    report(&mut results, 1, "PCA tail-sum distortion", t, o);
    let (t, o) = timed(eigensolver);
    report(&mut results, 2, "eigensolver", t, o);
    let (t, o) = timed(gradients);
    report(&mut results, 3, "gradient integrity", t, o);
    let (t, o) = timed(taildrop_law);
    report(&mut results, 4, "TailDrop law", t, o);

    let tmp = tempfile::tempdir().expect("temp dir");
    let root: PathBuf = tmp.path().to_path_buf();
    let started = Instant::now();
    let rl = desk_run(&root, "rl-ae", &["--schedule", "taildrop", "--beta", "0.67"]);
    let sae = desk_run(&root, "sae", &["--schedule", "uniform", "--p", "0.9"]);
    match (&rl, &sae) {
        (Ok(rl), Ok(sae)) => {
            report(&mut results, 5, "rateless MSE trend", started, rateless_trend(rl, sae));
            let t = Instant::now();
            report(&mut results, 6, "SSIM dominance", t, ssim_trend(rl, sae));
            report(&mut results, 7, "linear probe", t, probe_trend(rl, sae));
        }
        (a, b) => {
            let e = a.as_ref().err().or(b.as_ref().err()).cloned().unwrap_or_default();
            for (id, name) in [(5, "rateless MSE trend"), (6, "SSIM dominance"), (7, "linear probe")] {
                report(&mut results, id, name, started, Err(format!("desk run failed: {e}")));
            }
        }
    }

    let (t, o) = timed(ssim_properties);
    report(&mut results, 8, "SSIM properties", t, o);

    let t = Instant::now();
    let outcome = match (&rl, desk_run(&root, "rl-ae-repeat", &["--schedule", "taildrop", "--beta", "0.67"])) {
        (Ok(a), Ok(b)) => determinism(a, &b),
        (Err(e), _) => Err(format!("desk run failed: {e}")),
        (_, Err(e)) => Err(format!("desk run failed: {e}")),
    };
    report(&mut results, 9, "determinism", t, outcome);

    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
