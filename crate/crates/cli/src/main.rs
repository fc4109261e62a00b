use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nodesr::inference::{super_resolve, super_resolve_trajectory};
use nodesr::io::{load_checkpoint, load_image, save_checkpoint, save_image, Manifest, RunConfig};
use nodesr::metrics::{evaluate_corpus, psnr, self_ensemble, ssim, ColorMode, EvalProtocol};
use nodesr::resample::make_scale_pair;
use nodesr::training::{train_with, TrainEvent, LOG_HEADER};
use nodesr::{Image32, Params32};

#[derive(Parser)]
#[command(name = "nodesr", version, about = "Super-resolution by integrating a learned vector field over scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bicubic down/up degradation of a ground-truth image to I(t).
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the shrunk intermediate.
        #[arg(long)]
        lowres: Option<PathBuf>,
    },
    /// Train a vector field on the images listed in a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Super-resolve a low-resolution image by a factor t0 >= 1.
    Sr {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        t0: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Average over the 8 flips and rotations of the input.
        #[arg(long)]
        self_ensemble: bool,
    },
    /// Write intermediate states of one solve as state_t<val>.png.
    Trajectory {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        t0: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Mean PSNR/SSIM per scale over a ground-truth corpus, as CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        scales: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare two images of equal size.
    Psnr {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Score all RGB channels instead of luma.
        #[arg(long)]
        rgb: bool,
        #[arg(long, default_value_t = 0)]
        shave: usize,
    },
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<nodesr::Error> for Failure {
    fn from(e: nodesr::Error) -> Self {
        let mut msg = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            let part = s.to_string();
            if !msg.contains(&part) {
                msg.push_str(&format!(": {part}"));
            }
            src = s.source();
        }
        Failure::Data(msg)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_fail(what: String) -> impl FnOnce(std::io::Error) -> Failure {
    move |e| Failure::Data(format!("{what}: {e}"))
}

fn run_config(path: Option<&Path>) -> CliResult<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    })
}

fn check_scale(name: &str, v: f64) -> CliResult {
    if !(v.is_finite() && v >= 1.0) {
        return Err(Failure::Usage(format!("--{name} must be a real number >= 1, got {v}")));
    }
    Ok(())
}

/// `1.75` -> "1.75", `2.0` -> "2": four decimals, trailing zeros trimmed.
fn time_label(t: f64) -> String {
    let s = format!("{t:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn degrade(input: &Path, t: f64, out: &Path, lowres: Option<&Path>) -> CliResult {
    check_scale("t", t)?;
    let hr: Image32 = load_image(input)?;
    let pair = make_scale_pair(&hr, t)?;
    save_image(&pair.lr_upscaled, out)?;
    if let Some(p) = lowres {
        save_image(&pair.lowres, p)?;
    }
    Ok(())
}

fn train(manifest: &Path, config: Option<&Path>, out: &Path) -> CliResult {
    let cfg = run_config(config)?;
    let corpus = Manifest::read(manifest)?.load_all::<f32>()?;
    fs::create_dir_all(out).map_err(io_fail(format!("creating {}", out.display())))?;
    fs::write(out.join("config.txt"), cfg.to_text()).map_err(io_fail("writing config.txt".into()))?;

    let log_path = out.join("train_log.csv");
    let mut log = fs::File::create(&log_path).map_err(io_fail(format!("creating {}", log_path.display())))?;
    writeln!(log, "{LOG_HEADER}").map_err(io_fail("writing log".into()))?;
    let total = cfg.train.total_steps;
    let outcome = train_with(&corpus, &cfg.field, &cfg.train, |ev| {
        match ev {
            TrainEvent::Record(r) => {
                writeln!(log, "{}", r.csv_line(cfg.train.log_wall_time))
                    .map_err(|e| nodesr::Error::Io { context: "writing log".into(), source: e })?;
                eprintln!("step {}/{total}  t {:.2}  loss {:.6}  lr {}", r.step + 1, r.t_sampled, r.loss, r.lr);
            }
            TrainEvent::Checkpoint { step, params } => {
                save_checkpoint(params, out.join(format!("ckpt_step{step}.nsr")))?;
            }
            TrainEvent::Step { .. } => {}
        }
        Ok(())
    })?;
    save_checkpoint(&outcome.params, out.join("final.nsr"))?;
    Ok(())
}

fn sr(ckpt: &Path, input: &Path, t0: f64, out: &Path, config: Option<&Path>, ensemble: bool) -> CliResult {
    check_scale("t0", t0)?;
    let cfg = run_config(config)?;
    let params: Params32 = load_checkpoint(ckpt)?;
    let lr: Image32 = load_image(input)?;
    let restored = if ensemble {
        self_ensemble(&params, &lr, t0, &cfg.solver)?
    } else {
        super_resolve(&params, &lr, t0, &cfg.solver)?
    };
    save_image(&restored, out)?;
    Ok(())
}

fn trajectory(ckpt: &Path, input: &Path, t0: f64, times: &[f64], out_dir: &Path, config: Option<&Path>) -> CliResult {
    check_scale("t0", t0)?;
    let cfg = run_config(config)?;
    let params: Params32 = load_checkpoint(ckpt)?;
    let lr: Image32 = load_image(input)?;
    let frames = super_resolve_trajectory(&params, &lr, t0, &cfg.solver, times)?;
    fs::create_dir_all(out_dir).map_err(io_fail(format!("creating {}", out_dir.display())))?;
    for (t, img) in &frames {
        let path = out_dir.join(format!("state_t{}.png", time_label(*t)));
        save_image(img, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn eval(ckpt: &Path, manifest: &Path, scales: &[f64], out: &Path, config: Option<&Path>) -> CliResult {
    for &t in scales {
        check_scale("scales", t)?;
    }
    let cfg = run_config(config)?;
    let params: Params32 = load_checkpoint(ckpt)?;
    let corpus = Manifest::read(manifest)?.load_all::<f32>()?;
    let report = evaluate_corpus(&params, &corpus, scales, &cfg.eval, &cfg.solver)?;
    fs::write(out, report.to_csv()).map_err(io_fail(format!("writing {}", out.display())))?;
    print!("{}", report.to_csv());
    if !report.failures.is_empty() {
        eprintln!("{} image evaluation(s) failed:", report.failures.len());
        for f in &report.failures {
            eprintln!("  {f}");
        }
    }
    Ok(())
}

fn compare(a: &Path, b: &Path, rgb: bool, shave: usize) -> CliResult {
    let a: Image32 = load_image(a)?;
    let b: Image32 = load_image(b)?;
    let proto = EvalProtocol {
        color_mode: if rgb { ColorMode::Rgb } else { ColorMode::YChannel },
        border_shave: Some(shave),
        ..EvalProtocol::default()
    };
    let p = psnr(&a, &b, &proto)?;
    let s = ssim(&a, &b, &proto)?;
    println!("psnr {p:.4} dB  ssim {s:.6}");
    Ok(())
}

fn configure_threads() -> CliResult {
    let Ok(v) = std::env::var("NODESR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("NODESR_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Data(format!("thread pool: {e}")))
}

fn dispatch(cmd: Command) -> CliResult {
    configure_threads()?;
    match cmd {
        Command::Degrade { input, t, out, lowres } => degrade(&input, t, &out, lowres.as_deref()),
        Command::Train { manifest, config, out } => train(&manifest, config.as_deref(), &out),
        Command::Sr {
            ckpt,
            input,
            t0,
            out,
            config,
            self_ensemble,
        } => sr(&ckpt, &input, t0, &out, config.as_deref(), self_ensemble),
        Command::Trajectory {
            ckpt,
            input,
            t0,
            times,
            out_dir,
            config,
        } => trajectory(&ckpt, &input, t0, &times, &out_dir, config.as_deref()),
        Command::Eval {
            ckpt,
            manifest,
            scales,
            out,
            config,
        } => eval(&ckpt, &manifest, &scales, &out, config.as_deref()),
        Command::Psnr { a, b, rgb, shave } => compare(&a, &b, rgb, shave),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            // Squash clap's message to one line, dropping the usage block and tips.
            let text = e.to_string();
            let line = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("tip:"))
                .collect::<Vec<_>>()
                .join(" ");
            eprintln!("{line}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
