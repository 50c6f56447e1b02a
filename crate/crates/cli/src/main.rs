//! `occloc`: run the positioning experiments from a scenario file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use occloc_core::sim::{
    run_experiment, visibility_scan, write_run, ConfigError, Experiment, Manifest, Scenario, SimError,
    MANIFEST_FILE,
};

#[derive(Parser)]
#[command(name = "occloc", version, about = "Camera-based LED positioning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a phone along the scenario trajectory; writes track.csv.
    Track(RunArgs),
    /// OOK bit-error-rate sweep against theory; writes ber.csv.
    Ber(RunArgs),
    /// Pixel area and ranging regime versus distance; writes range.csv.
    Range(RunArgs),
    /// Delivery error with and without the Kalman filter; writes filtercmp.csv.
    Filtercmp(RunArgs),
    /// Check scenario invariants and LED coverage of the floor.
    Validate {
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Re-run a recorded run and compare its outputs byte for byte.
    Replay {
        /// Run directory, or the manifest file inside it.
        run: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON; omitted fields take their defaults.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, env = "OCC_SEED")]
    seed: Option<u64>,
    /// Also write SVG charts.
    #[arg(long)]
    plot: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(path: Option<&Path>) -> Result<Scenario, Failure> {
    match path {
        Some(p) => Ok(Scenario::load(p)?),
        None => Ok(Scenario::default()),
    }
}

fn run(experiment: Experiment, args: &RunArgs) -> Result<(), Failure> {
    let mut scenario = load(args.scenario.as_deref())?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let files = run_experiment(experiment, &scenario, args.plot)?;
    let manifest = Manifest::new(experiment, &scenario, args.plot, &files);
    write_run(&args.out, &manifest, &files)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.out.display())))?;
    for f in &files {
        println!("{}", args.out.join(&f.name).display());
    }
    Ok(())
}

fn validate(path: Option<&Path>) -> Result<(), Failure> {
    let scenario = load(path)?;
    scenario.validate()?;
    let report = visibility_scan(&scenario, 10.0, 75.0)?;
    println!("invariants: ok");
    println!(
        "coverage: {} grid points, at least {} LEDs in view everywhere",
        report.points_checked, report.min_visible
    );
    if let Some(first) = report.gaps.first() {
        return Err(Failure::Config(format!(
            "leds: {} grid points see fewer than 3 LEDs, first at ({}, {})",
            report.gaps.len(),
            first[0],
            first[1]
        )));
    }
    Ok(())
}

fn replay(run: &Path) -> Result<(), Failure> {
    let (dir, manifest_path) = if run.is_dir() {
        (run.to_path_buf(), run.join(MANIFEST_FILE))
    } else {
        (run.parent().unwrap_or(Path::new(".")).to_path_buf(), run.to_path_buf())
    };
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Failure::Config(format!("{}: {e}", manifest_path.display())))?;
    let manifest = Manifest::from_json(&text, &manifest_path.display().to_string())?;
    let mut mismatches = Vec::new();
    for f in manifest.replay()? {
        let path = dir.join(&f.name);
        match std::fs::read(&path) {
            Ok(bytes) if bytes == f.contents.as_bytes() => println!("identical {}", path.display()),
            Ok(_) => mismatches.push(format!("{} differs", path.display())),
            Err(e) => mismatches.push(format!("{}: {e}", path.display())),
        }
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(mismatches.join("\n")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Track(a) => run(Experiment::Track, a),
        Command::Ber(a) => run(Experiment::Ber, a),
        Command::Range(a) => run(Experiment::Range, a),
        Command::Filtercmp(a) => run(Experiment::Filtercmp, a),
        Command::Validate { scenario } => validate(scenario.as_deref()),
        Command::Replay { run } => replay(run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
