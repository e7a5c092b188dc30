use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qdinterf::error::{Error, ErrorClass};
use qdinterf::io::{emit_plotdata, load_bundle, run_scenario, write_bundle, RunConfig};

/// Thread count for the compute pool when --threads is absent.
const THREADS_ENV: &str = "QDINTERF_THREADS";

#[derive(Parser, Debug)]
#[command(name = "qdinterf", version, about = "Photon correlations, fits, holograms and HOM interference of two-level emitters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (overrides QDINTERF_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analytic common-mode g²(τ) of one or more ensembles.
    SimulateG2(RunArgs),
    /// Master-equation g²(τ) compared with the analytic model.
    OracleG2(RunArgs),
    /// Joint fit of several coincidence histograms with a shared dephasing rate.
    Fit(RunArgs),
    /// Single-emitter antibunching fit for γ + γ_p.
    SingleDotFit(RunArgs),
    /// Multiplexed multi-spot phase hologram.
    Hologram(RunArgs),
    /// Wavefront-matched two-port beamsplitter.
    WavefrontMatch(RunArgs),
    /// Pulsed two-emitter HOM coincidences and visibility.
    Hom(RunArgs),
    /// Plot-ready tables from an existing output directory.
    EmitPlotdata(PlotArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Directory holding bundle.json.
    #[arg(long)]
    bundle: PathBuf,
    /// Destination (defaults to the bundle directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail(kind: &str, class: ErrorClass, message: String) -> ExitCode {
    let code = match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    };
    let class = match class {
        ErrorClass::Usage => "usage",
        ErrorClass::Data => "data",
        ErrorClass::Numerical => "numerical",
    };
    let record = json!({ "error": kind, "class": class, "exit_code": code, "message": message });
    eprintln!("{record}");
    ExitCode::from(code as u8)
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Error> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<serde_json::Value, Error> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Error::Config("thread count must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let (name, args) = match cli.command {
        Command::EmitPlotdata(p) => {
            let bundle = load_bundle(&p.bundle)?;
            let files = emit_plotdata(&bundle, p.out.as_deref().unwrap_or(&p.bundle))?;
            return Ok(json!({ "files": files }));
        }
        Command::SimulateG2(a) => ("simulate-g2", a),
        Command::OracleG2(a) => ("oracle-g2", a),
        Command::Fit(a) => ("fit", a),
        Command::SingleDotFit(a) => ("single-dot-fit", a),
        Command::Hologram(a) => ("hologram", a),
        Command::WavefrontMatch(a) => ("wavefront-match", a),
        Command::Hom(a) => ("hom", a),
    };
    let mut config = RunConfig::load(&args.config)?;
    if config.scenario.kind() != name {
        return Err(Error::Config(format!(
            "configuration describes a '{}' scenario, not '{name}'",
            config.scenario.kind()
        )));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args
        .out
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("qdinterf-out"));
    let base = args.config.parent().unwrap_or(Path::new("."));
    let bundle = run_scenario(&config, base)?;
    let files = write_bundle(&bundle, &out)?;
    Ok(json!({ "scenario": name, "seed": config.seed, "elapsed_s": bundle.elapsed_s, "files": files }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail("usage", ErrorClass::Usage, e.to_string());
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.class(), e.to_string()),
    }
}
