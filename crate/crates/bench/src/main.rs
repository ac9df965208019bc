use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dpc_bench::error::{BenchError, Result};
use dpc_bench::io::{comparison_to_csv, read_dataset, read_model, read_run_log, write_dataset, write_model, write_run_log};
use dpc_bench::report::{compare_logs, summarize};
use dpc_bench::scenario::{build_deepc, build_kmpc, generate_dataset, identify_model, run_closed_loop, run_header, summarize_dataset};
use dpc_bench::ScenarioConfig;
use dpc_core::dataio::TrajectoryDataset;
use dpc_core::metrics::RunLog;

const EXIT_VIOLATION: u8 = 3;
const EXIT_DEGRADED: u8 = 4;

#[derive(Parser)]
#[command(name = "dpc-bench", version, about = "DeePC versus Koopman MPC on a pasteurizer surrogate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerChoice {
    Deepc,
    Kmpc,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Base {
    A,
    B,
}

#[derive(Subcommand)]
enum Command {
    /// Excite the surrogate and write the dataset CSV.
    GenData {
        /// Scenario file; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the Koopman model to a dataset and write it as JSON.
    Identify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset CSV; falls back to `data.path`, then to a freshly generated dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the closed loop and write the run log.
    ///
    /// With `--controller both`, `--out` is a directory that receives
    /// `deepc.csv` and `kmpc.csv`.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        controller: ControllerChoice,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model JSON; falls back to `kmpc.model_path`, then to identification on the dataset.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Record wall-clock solve times (logs are then not reproducible).
        #[arg(long)]
        timing: bool,
        /// Run both controllers on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Compare two run logs and write the normalized table.
    Compare {
        log_a: PathBuf,
        log_b: PathBuf,
        /// Log that counts as 100 %.
        #[arg(long, value_enum, default_value = "a")]
        base: Base,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &ScenarioConfig, data: Option<&Path>) -> Result<TrajectoryDataset> {
    match data.or(cfg.data.path.as_deref()) {
        Some(p) => {
            let d = read_dataset(p, cfg.shared.ts)?;
            if d.n_u() != cfg.n_u() || d.n_y() != cfg.n_y() {
                return Err(BenchError::Mismatch(format!("{}: channel counts differ from the plant", p.display())));
            }
            Ok(d)
        }
        None => generate_dataset(cfg),
    }
}

fn gen_data(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    let data = generate_dataset(cfg)?;
    let s = summarize_dataset(cfg, &data)?;
    write_dataset(out, &data)?;
    println!("wrote {} samples to {}", s.samples, out.display());
    for r in [s.past, s.full] {
        println!("PE order {}: rank {} / {}", r.required / cfg.n_u(), r.rank, r.required);
    }
    println!("minimum data length {}", s.minimum_length);
    if s.samples < s.minimum_length {
        eprintln!("warning: {} samples is below the minimum length {}", s.samples, s.minimum_length);
    }
    Ok(())
}

fn identify(cfg: &ScenarioConfig, data: Option<&Path>, out: &Path) -> Result<()> {
    let data = load_data(cfg, data)?;
    let (model, scaler, report) = identify_model(cfg, &data)?;
    write_model(out, &model, &scaler)?;
    println!(
        "n_z {} from {} transitions, state residual {:.3e}, output residual {:.3e}",
        model.n_z(),
        report.transitions,
        report.state_residual,
        report.output_residual
    );
    Ok(())
}

fn run_one(cfg: &ScenarioConfig, which: ControllerChoice, data: &TrajectoryDataset, model: Option<&Path>, timing: bool) -> Result<RunLog> {
    match which {
        ControllerChoice::Deepc => {
            let (mut ctrl, scaler) = build_deepc(cfg, data)?;
            run_closed_loop(cfg, &mut ctrl, run_header(cfg, "deepc", &scaler)?, timing)
        }
        ControllerChoice::Kmpc => {
            let (model, scaler) = match model.or(cfg.kmpc.model_path.as_deref()) {
                Some(p) => read_model(p)?,
                None => {
                    let (m, s, _) = identify_model(cfg, data)?;
                    (m, s)
                }
            };
            let mut ctrl = build_kmpc(cfg, &model, scaler.clone())?;
            run_closed_loop(cfg, &mut ctrl, run_header(cfg, "kmpc", &scaler)?, timing)
        }
        ControllerChoice::Both => unreachable!("split by the caller"),
    }
}

/// Writes the log and maps bound violations and excessive holds to exit codes.
fn finish_log(cfg: &ScenarioConfig, log: &RunLog, out: &Path) -> Result<u8> {
    write_run_log(out, log)?;
    let s = summarize(log)?;
    println!(
        "{}: {} steps, e_rms {:.6}, J_du {:.6}, {} bound violations, {} holds -> {}",
        s.controller,
        log.len(),
        s.metrics.e_rms,
        s.metrics.j_du + 0.0,
        s.violations,
        s.holds,
        out.display()
    );
    if s.violations > 0 {
        return Ok(EXIT_VIOLATION);
    }
    if s.holds as f64 > cfg.run.max_hold_fraction * log.len() as f64 {
        eprintln!("{}: hold fraction exceeds {}", s.controller, cfg.run.max_hold_fraction);
        return Ok(EXIT_DEGRADED);
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn run(
    cfg: &ScenarioConfig,
    which: ControllerChoice,
    out: &Path,
    data: Option<&Path>,
    model: Option<&Path>,
    timing: bool,
    parallel: bool,
) -> Result<u8> {
    let data = load_data(cfg, data)?;
    if which != ControllerChoice::Both {
        let log = run_one(cfg, which, &data, model, timing)?;
        return finish_log(cfg, &log, out);
    }
    std::fs::create_dir_all(out).map_err(|e| BenchError::io(out, e))?;
    let (deepc, kmpc) = if parallel {
        std::thread::scope(|s| {
            let d = s.spawn(|| run_one(cfg, ControllerChoice::Deepc, &data, model, timing));
            let k = run_one(cfg, ControllerChoice::Kmpc, &data, model, timing);
            (d.join().expect("deepc thread panicked"), k)
        })
    } else {
        (
            run_one(cfg, ControllerChoice::Deepc, &data, model, timing),
            run_one(cfg, ControllerChoice::Kmpc, &data, model, timing),
        )
    };
    let a = finish_log(cfg, &deepc?, &out.join("deepc.csv"))?;
    let b = finish_log(cfg, &kmpc?, &out.join("kmpc.csv"))?;
    Ok(a.max(b))
}

fn compare(a: &Path, b: &Path, base: Base, out: Option<&Path>) -> Result<()> {
    let (la, lb) = (read_run_log(a)?, read_run_log(b)?);
    let (base_log, other_log) = match base {
        Base::A => (&la, &lb),
        Base::B => (&lb, &la),
    };
    let report = compare_logs(base_log, other_log)?;
    print!("{}", report.render_text());
    if let Some(p) = out {
        std::fs::write(p, comparison_to_csv(&report.entries)).map_err(|e| BenchError::io(p, e))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::GenData { config, seed, out } => gen_data(&load_config(config.as_deref(), seed)?, &out).map(|_| 0),
        Command::Identify { config, seed, data, out } => {
            identify(&load_config(config.as_deref(), seed)?, data.as_deref(), &out).map(|_| 0)
        }
        Command::Run { config, seed, controller, out, data, model, timing, parallel } => run(
            &load_config(config.as_deref(), seed)?,
            controller,
            &out,
            data.as_deref(),
            model.as_deref(),
            timing,
            parallel,
        ),
        Command::Compare { log_a, log_b, base, out } => compare(&log_a, &log_b, base, out.as_deref()).map(|_| 0),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
