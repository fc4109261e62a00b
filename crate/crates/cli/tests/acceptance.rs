//! End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per criterion
//! and exits non-zero if any criterion fails.
//!
//! Criterion 5 needs a local B100 corpus: set `NODESR_B100_MANIFEST` to a
//! manifest listing its ground-truth images.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nodesr::autodiff::{kernels, Shape, Tape, Tensor};
use nodesr::io::{load_image, quantize, save_checkpoint, save_image, RunConfig};
use nodesr::metrics::{evaluate_corpus, psnr, ssim, ColorMode, EvalProtocol, PSNR_IDENTICAL};
use nodesr::odesolver::{ode_solve, NetworkField, ScalarField, SolverConfig, TapeField};
use nodesr::resample::{make_scale_pair, upscale_to};
use nodesr::training::initial_params;
use nodesr::vectorfield::VectorFieldConfig;
use nodesr::{Image, Image32, Params32, Params64};

type Check = Result<String, String>;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nodesr"))
}

fn run(cmd: &mut Command) -> Result<String, String> {
    let out = cmd.output().map_err(|e| format!("spawn: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "{:?} exited with {}: {}",
            cmd,
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Striped, textured test scene; `k` varies the frequencies.
fn scene(h: usize, w: usize, k: usize) -> Image<f32> {
    Image::from_fn(h, w, 3, |y, x, c| {
        let (xf, yf, kf) = (x as f64, y as f64, k as f64);
        let sign = if (x / 6 + y / 9 + k) % 2 == 1 { 1.0 } else { -1.0 };
        let v = 0.5 + 0.25 * (xf * (0.3 + 0.1 * kf) + c as f64).sin() * (yf * 0.23 + kf).cos() + 0.2 * sign;
        v.clamp(0.0, 1.0) as f32
    })
    .unwrap()
}

fn write_corpus(dir: &Path, images: &[Image<f32>]) -> PathBuf {
    let mut listing = String::new();
    for (i, img) in images.iter().enumerate() {
        let name = format!("img{i}.png");
        save_image(img, dir.join(&name)).unwrap();
        listing.push_str(&name);
        listing.push('\n');
    }
    let manifest = dir.join("manifest.txt");
    std::fs::write(&manifest, listing).unwrap();
    manifest
}

// 1 ----------------------------------------------------------------------

fn solver_order() -> Check {
    let err = |n: usize| {
        let cfg = SolverConfig {
            max_step: 1.0 / n as f64,
            ..SolverConfig::default().over(0.0, 1.0)
        };
        let y = ode_solve(&mut ScalarField(|y: f64, _| y), &1.0, &cfg).unwrap();
        (y - std::f64::consts::E).abs()
    };
    let errs: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| err(n)).collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    ensure(orders.iter().all(|o| (3.8..=4.2).contains(o)), || format!("orders {orders:?}"))?;
    Ok(format!("orders {}", orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>().join(", ")))
}

// 2 ----------------------------------------------------------------------

fn gradient_fidelity() -> Check {
    let cfg = VectorFieldConfig {
        depth: 3,
        hidden_channels: 8,
        kernel_size: 3,
        image_channels: 3,
        init_seed: 21,
    };
    let params = Params64::init(cfg).map_err(|e| e.to_string())?;
    let init = Tensor::from_fn(Shape::new(1, 3, 8, 8), |i| 0.5 + 0.4 * (i as f64 * 0.77).sin());
    let solver = SolverConfig::default().over(2.0, 1.0);
    ensure(solver.grid().unwrap().steps == 4, || "expected 4 steps".into())?;
    let forward = |p: &Params64| ode_solve(&mut NetworkField { params: p }, &init, &solver).unwrap();
    let base = forward(&params);
    // Target well away from the output so |.| has no kink within the probe.
    let target = Tensor::from_fn(base.shape(), |i| base.data()[i] + if i % 2 == 0 { 0.3 } else { -0.3 });

    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);
    let iv = tape.constant(init.clone());
    let out = ode_solve(&mut TapeField { tape: &mut tape, params: &vars }, &iv, &solver).map_err(|e| e.to_string())?;
    let tv = tape.constant(target.clone());
    let loss = tape.l1_loss(out, tv).unwrap();
    let grads = tape.backward(loss).map_err(|e| e.to_string())?;

    let h = 1e-4;
    let (mut diff2, mut norm2, mut probes) = (0.0, 0.0, 0);
    for (k, var) in vars.vars().into_iter().enumerate() {
        let g = grads.get(var).ok_or("missing gradient")?;
        let n = params.tensors()[k].len();
        for i in (0..n).step_by((n / 40).max(1)) {
            let eval = |delta: f64| {
                let mut q = params.clone();
                q.tensors_mut()[k].data_mut()[i] += delta;
                kernels::l1_loss(&forward(&q), &target).unwrap().item()
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            diff2 += (num - g.data()[i]).powi(2);
            norm2 += num.powi(2).max(g.data()[i].powi(2));
            probes += 1;
        }
    }
    let rel = diff2.sqrt() / norm2.sqrt().max(1e-12);
    ensure(rel < 1e-4, || format!("relative error {rel:e} over {probes} probes"))?;
    Ok(format!("relative error {rel:.2e} over {probes} probes"))
}

// 3 ----------------------------------------------------------------------

fn zero_field_baseline(work: &Path) -> Check {
    let dir = work.join("zero");
    std::fs::create_dir_all(&dir).unwrap();
    let field = VectorFieldConfig {
        depth: 4,
        hidden_channels: 16,
        ..VectorFieldConfig::default()
    };
    let params: Params32 = initial_params(&field, &RunConfig::default().train).map_err(|e| e.to_string())?;
    let ckpt = dir.join("zero.nsr");
    save_checkpoint(&params, &ckpt).map_err(|e| e.to_string())?;

    let lr = scene(20, 23, 3);
    let lr_path = dir.join("lr.png");
    save_image(&lr, &lr_path).unwrap();
    let lr: Image32 = load_image(&lr_path).unwrap();
    for t0 in [2.0, 2.5] {
        let out_path = dir.join(format!("sr_{t0}.png"));
        run(bin()
            .args(["sr", "--ckpt"])
            .arg(&ckpt)
            .arg("--in")
            .arg(&lr_path)
            .args(["--t0", &t0.to_string(), "--out"])
            .arg(&out_path))?;
        let got: Image32 = load_image(&out_path).unwrap();
        let want = upscale_to(&lr, t0).unwrap();
        ensure(quantize(&got) == quantize(&want), || format!("sr at t0={t0} differs from bicubic"))?;
    }

    let corpus: Vec<(String, Image32)> =
        (0..3).map(|k| (format!("gt{k}"), scene(40 + 4 * k, 36 + 3 * k, k))).collect();
    let proto = EvalProtocol::default();
    let scales = [2.0, 3.0, 4.0, 2.5];
    let report = evaluate_corpus(&params, &corpus, &scales, &proto, &SolverConfig::default())
        .map_err(|e| e.to_string())?;
    ensure(report.failures.is_empty(), || format!("failures: {:?}", report.failures))?;
    for (row, &t) in report.rows.iter().zip(&scales) {
        let mut sum = 0.0;
        for (_, hr) in &corpus {
            let hr = nodesr::metrics::modcrop(hr, t).unwrap();
            let pair = make_scale_pair(&hr, t).unwrap();
            sum += psnr(&pair.lr_upscaled, &hr, &proto.for_scale(t)).unwrap();
        }
        let bicubic = sum / corpus.len() as f64;
        ensure(row.psnr == bicubic, || format!("t={t}: eval {} vs bicubic {bicubic}", row.psnr))?;
    }
    Ok(format!(
        "sr bitwise bicubic at t0=2,2.5; eval rows {}",
        report.rows.iter().map(|r| format!("{:.2}", r.psnr)).collect::<Vec<_>>().join("/")
    ))
}

// 4 ----------------------------------------------------------------------

fn semigroup() -> Check {
    let mut params = Params32::init(VectorFieldConfig::default()).map_err(|e| e.to_string())?;
    for w in params.layers_mut().last_mut().unwrap().weight.data_mut() {
        *w *= 0.05;
    }
    let init = scene(24, 24, 1).to_tensor();
    let base = SolverConfig::default();
    let mut worst = 0.0f64;
    for (t0, mid) in [(3.0, 2.0), (4.0, 1.5)] {
        let whole = ode_solve(&mut NetworkField { params: &params }, &init, &base.over(t0, 1.0)).unwrap();
        let a = ode_solve(&mut NetworkField { params: &params }, &init, &base.over(t0, mid)).unwrap();
        let b = ode_solve(&mut NetworkField { params: &params }, &a, &base.over(mid, 1.0)).unwrap();
        worst = worst.max(whole.max_abs_diff(&b));
    }
    ensure(worst <= 1e-6, || format!("max difference {worst:e}"))?;
    Ok(format!("max difference {worst:e}"))
}

// 5 ----------------------------------------------------------------------

fn bicubic_b100(work: &Path) -> Outcome {
    let Some(manifest) = std::env::var_os("NODESR_B100_MANIFEST") else {
        return Outcome::Skip("B100 corpus not found; set NODESR_B100_MANIFEST to run".into());
    };
    let check = || -> Check {
        let dir = work.join("b100");
        std::fs::create_dir_all(&dir).unwrap();
        let params = Params32::zeros(VectorFieldConfig::default()).unwrap();
        let ckpt = dir.join("zero.nsr");
        save_checkpoint(&params, &ckpt).map_err(|e| e.to_string())?;
        let csv = dir.join("b100.csv");
        run(bin()
            .args(["eval", "--ckpt"])
            .arg(&ckpt)
            .arg("--manifest")
            .arg(&manifest)
            .args(["--scales", "2,3,4", "--out"])
            .arg(&csv))?;
        let text = std::fs::read_to_string(&csv).unwrap();
        let got: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        let want = [29.55, 27.19, 25.96];
        let ok = got.len() == 3 && got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 0.15);
        let summary = format!("{got:.2?} vs {want:?}");
        ensure(ok, || summary.clone())?;
        Ok(summary)
    };
    match check() {
        Ok(m) => Outcome::Pass(m),
        Err(m) => Outcome::Fail(m),
    }
}

// 6 ----------------------------------------------------------------------

/// Desk-scale overfit run on two images.
const SMOKE_CONFIG: &str = "\
vectorfield.depth = 4
vectorfield.hidden_channels = 16
train.scale_set = 2
train.patch_size = 24
train.batch_size = 4
train.total_steps = 1500
train.lr_initial = 0.001
train.record_every = 10
train.seed = 7
";

fn losses(log: &Path) -> Vec<f64> {
    std::fs::read_to_string(log)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect()
}

fn learning_signal(work: &Path) -> Result<(String, PathBuf), String> {
    let dir = work.join("smoke");
    std::fs::create_dir_all(&dir).unwrap();
    let images = [scene(64, 64, 0), scene(64, 64, 1)];
    let manifest = write_corpus(&dir, &images);
    let cfg_path = dir.join("smoke.cfg");
    std::fs::write(&cfg_path, SMOKE_CONFIG).unwrap();
    let out = dir.join("run");
    run(bin()
        .args(["train", "--manifest"])
        .arg(&manifest)
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out))?;

    let l = losses(&out.join("train_log.csv"));
    ensure(l.len() >= 10, || format!("only {} log records", l.len()))?;
    let head = l[..5].iter().sum::<f64>() / 5.0;
    let tail = l[l.len() - 5..].iter().sum::<f64>() / 5.0;
    ensure(tail < head, || format!("final-window loss {tail:.5} is not below initial {head:.5}"))?;

    let ckpt = out.join("final.nsr");
    let lowres = dir.join("train0_x2.png");
    run(bin()
        .args(["degrade", "--in"])
        .arg(dir.join("img0.png"))
        .args(["--t", "2", "--out"])
        .arg(dir.join("train0_bicubic.png"))
        .arg("--lowres")
        .arg(&lowres))?;
    let sr_path = dir.join("train0_sr.png");
    run(bin()
        .args(["sr", "--ckpt"])
        .arg(&ckpt)
        .arg("--in")
        .arg(&lowres)
        .args(["--t0", "2", "--out"])
        .arg(&sr_path))?;
    let hr: Image32 = load_image(dir.join("img0.png")).unwrap();
    let bic: Image32 = upscale_to(&load_image::<f32>(&lowres).unwrap(), 2.0).unwrap();
    let sr: Image32 = load_image(&sr_path).unwrap();
    let proto = EvalProtocol::default().for_scale(2.0);
    let p_bic = psnr(&bic, &hr, &proto).unwrap();
    let p_sr = psnr(&sr, &hr, &proto).unwrap();
    let gain = p_sr - p_bic;
    let msg = format!("loss {head:.4} -> {tail:.4}; t=2 PSNR {p_sr:.2} vs bicubic {p_bic:.2} ({gain:+.2} dB)");
    ensure(gain >= 0.3, || msg.clone())?;
    Ok((msg, ckpt))
}

// 7 ----------------------------------------------------------------------

fn arbitrary_scale(work: &Path, ckpt: &Path) -> Check {
    let dir = work.join("arb");
    std::fs::create_dir_all(&dir).unwrap();
    let (h, w) = (17, 22);
    let lr_path = dir.join("lr.png");
    save_image(&scene(h, w, 2), &lr_path).unwrap();
    let mut dims = Vec::new();
    for t0 in [1.3, 2.5, 3.7] {
        let out = dir.join(format!("sr_{t0}.png"));
        run(bin()
            .args(["sr", "--ckpt"])
            .arg(ckpt)
            .arg("--in")
            .arg(&lr_path)
            .args(["--t0", &t0.to_string(), "--out"])
            .arg(&out))?;
        let img: Image32 = load_image(&out).unwrap();
        let want = ((h as f64 * t0).round() as usize, (w as f64 * t0).round() as usize);
        ensure((img.height(), img.width()) == want, || {
            format!("t0={t0}: got {}x{}, want {}x{}", img.height(), img.width(), want.0, want.1)
        })?;
        dims.push(format!("{}x{}", img.height(), img.width()));
    }
    Ok(format!("{h}x{w} -> {}", dims.join(", ")))
}

// 8 ----------------------------------------------------------------------

fn metric_oracles() -> Check {
    let a = Image::<f64>::from_fn(16, 16, 1, |y, x, _| 0.3 + 0.4 * ((x * 7 + y * 3) % 5) as f64 / 4.0).unwrap();
    let b = Image::<f64>::from_fn(16, 16, 1, |y, x, _| a.get(y, x, 0) + if (x + y) % 2 == 0 { 0.1 } else { -0.1 })
        .unwrap();
    let proto = EvalProtocol {
        border_shave: Some(0),
        ..EvalProtocol::default()
    };
    let p = psnr(&a, &b, &proto).unwrap();
    ensure((p - 20.0).abs() <= 1e-6, || format!("psnr {p}"))?;
    let rgb = Image::<f64>::from_fn(24, 20, 3, |y, x, c| ((x * 5 + y * 3 + c * 11) % 17) as f64 / 16.0).unwrap();
    let mut worst = 0.0f64;
    for mode in [ColorMode::Rgb, ColorMode::YChannel] {
        let proto = EvalProtocol { color_mode: mode, ..proto };
        worst = worst.max((ssim(&rgb, &rgb, &proto).unwrap() - 1.0).abs());
        ensure(psnr(&rgb, &rgb, &proto).unwrap() == PSNR_IDENTICAL, || "sentinel".into())?;
    }
    ensure(worst <= 1e-9, || format!("ssim(a,a) off by {worst:e}"))?;
    Ok(format!("psnr {p:.9} dB; |ssim(a,a) - 1| = {worst:.1e}"))
}

// 9 ----------------------------------------------------------------------

const DETERMINISM_CONFIG: &str = "\
vectorfield.depth = 3
vectorfield.hidden_channels = 8
train.patch_size = 16
train.batch_size = 3
train.total_steps = 40
train.lr_halve_every = 20
train.record_every = 5
train.lr_initial = 0.001
train.seed = 3
";

fn determinism(work: &Path) -> Check {
    let dir = work.join("det");
    std::fs::create_dir_all(&dir).unwrap();
    let manifest = write_corpus(&dir, &[scene(40, 36, 4), scene(33, 45, 5)]);
    let cfg_path = dir.join("det.cfg");
    std::fs::write(&cfg_path, DETERMINISM_CONFIG).unwrap();
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|r| dir.join(r)).collect();
    for out in &runs {
        run(bin()
            .args(["train", "--manifest"])
            .arg(&manifest)
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(out))?;
    }
    let mut names: Vec<String> = std::fs::read_dir(&runs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let expected = ["ckpt_step20.nsr", "ckpt_step40.nsr", "config.txt", "final.nsr", "train_log.csv"];
    ensure(names == expected, || format!("run directory holds {names:?}"))?;
    for name in &names {
        let a = std::fs::read(runs[0].join(name)).unwrap();
        let b = std::fs::read(runs[1].join(name)).unwrap();
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} files identical across two runs", names.len()))
}

fn timed(limit: Duration, f: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let res = f();
    let took = start.elapsed();
    match res {
        Ok(m) if took <= limit => Outcome::Pass(format!("{m} [{:.1}s]", took.as_secs_f64())),
        Ok(m) => Outcome::Fail(format!("{m}; took {:.1}s, limit {}s", took.as_secs_f64(), limit.as_secs())),
        Err(m) => Outcome::Fail(format!("{m} [{:.1}s]", took.as_secs_f64())),
    }
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let secs = Duration::from_secs;
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        let (tag, msg) = match &o {
            Outcome::Pass(m) => ("PASS", m),
            Outcome::Fail(m) => ("FAIL", m),
            Outcome::Skip(m) => ("SKIP", m),
        };
        println!("[{tag}] {name}: {msg}");
        results.push((name, o));
    };

    report("1 solver order", timed(secs(1), solver_order));
    report("2 gradient fidelity", timed(secs(30), gradient_fidelity));
    report("3 zero-field baseline", timed(secs(10), || zero_field_baseline(w)));
    report("4 semigroup", timed(secs(5), semigroup));
    report("5 bicubic B100 baseline", {
        let start = Instant::now();
        match bicubic_b100(w) {
            Outcome::Pass(m) if start.elapsed() > secs(300) => Outcome::Fail(format!("{m}; over 5 min")),
            o => o,
        }
    });
    let mut trained = None;
    report(
        "6 learning signal",
        timed(secs(1200), || {
            learning_signal(w).map(|(m, ckpt)| {
                trained = Some(ckpt);
                m
            })
        }),
    );
    let ckpt = trained.unwrap_or_else(|| {
        let p = w.join("fallback.nsr");
        save_checkpoint(&Params32::init(VectorFieldConfig::default()).unwrap(), &p).unwrap();
        p
    });
    report("7 arbitrary scale", timed(secs(60), || arbitrary_scale(w, &ckpt)));
    report("8 metric oracles", timed(secs(1), metric_oracles));
    report("9 determinism", timed(secs(600), || determinism(w)));

    let failed = results.iter().filter(|(_, o)| matches!(o, Outcome::Fail(_))).count();
    println!("acceptance: {} of {} criteria failed", failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
