use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chiral_floquet::experiments::{run_experiment, ExperimentConfig, ExperimentName, Metadata};
use chiral_floquet::floquet::{bessel_j, coupling_strengths, matched_ga, DEFAULT_SERIES_TOL};
use chiral_floquet::protocol::EvolutionMode;
use chiral_floquet::Error;
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "chiral-floquet", version, about = "Floquet chiral-transfer and NOON-state experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment and write its CSV tables plus manifest.json.
    Run {
        experiment: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; falls back to CHIRAL_FLOQUET_THREADS.
        #[arg(long, env = "CHIRAL_FLOQUET_THREADS")]
        threads: Option<usize>,
        #[arg(long)]
        mode: Option<EvolutionMode>,
    },
    /// Check a config file and print the derived operating-point quantities.
    Validate { path: PathBuf },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            e if e.is_numerical() => (3, "numerical"),
            Error::UnknownExperiment(_) => (2, "unknown_experiment"),
            Error::InvalidConfig(_) => (2, "invalid_config"),
            _ => (2, "invalid_parameter"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 1,
        kind: "io",
        message: format!("{}: {e}", path.display()),
    }
}

#[derive(Serialize)]
struct OutputFile {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: ExperimentName,
    seed: u64,
    threads: usize,
    wall_time_seconds: f64,
    /// Fully resolved config; feeding it back through `--config` reproduces the outputs.
    config: &'a ExperimentConfig,
    resolved: &'a Metadata,
    outputs: Vec<OutputFile>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            experiment,
            config,
            out,
            seed,
            threads,
            mode,
        } => run(&experiment, config.as_deref(), &out, seed, threads, mode),
        Command::Validate { path } => validate(&path),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let line = serde_json::json!({ "error": f.kind, "message": f.message });
            eprintln!("{line}");
            ExitCode::from(f.code)
        }
    }
}

fn run(
    experiment: &str,
    config_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    threads: Option<usize>,
    mode: Option<EvolutionMode>,
) -> Result<(), Failure> {
    let name: ExperimentName = experiment.parse()?;
    let mut config = match config_path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            ExperimentConfig::from_json(&text, Some(name))?
        }
        None => ExperimentConfig::new(name),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(mode) = mode {
        config.mode = mode;
    }
    config.validate()?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::InvalidConfig("threads must be at least 1".into()).into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure {
        code: 1,
        kind: "threads",
        message: e.to_string(),
    })?;

    let start = Instant::now();
    let result = pool.install(|| run_experiment(&config))?;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let mut outputs = Vec::new();
    for table in &result.tables {
        let file = format!("{}.csv", table.stem);
        let path = out.join(&file);
        let csv = table.to_csv();
        fs::write(&path, &csv).map_err(|e| io_failure(&path, e))?;
        outputs.push(OutputFile {
            path: file,
            sha256: hex::encode(Sha256::digest(csv.as_bytes())),
        });
    }
    for w in &result.metadata.warnings {
        eprintln!("warning: {w}");
    }
    let manifest = RunManifest {
        tool: "chiral-floquet",
        version: env!("CARGO_PKG_VERSION"),
        experiment: name,
        seed: config.seed,
        threads: pool.current_num_threads(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        config: &config,
        resolved: &result.metadata,
        outputs,
    };
    let path = out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
    println!("{}", path.display());
    Ok(())
}

fn validate(path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let named = ExperimentConfig::from_json(&text, None);
    let config = match named {
        Err(Error::InvalidConfig(m)) if m == "missing experiment name" => {
            ExperimentConfig::from_json(&text, Some(ExperimentName::Fig2Chirality))?
        }
        other => other?,
    };
    let p = config.params.resolve()?;
    let c = coupling_strengths(&p, DEFAULT_SERIES_TOL);
    println!("experiment = {}", config.name);
    println!("f = {:.6}", p.f());
    println!("g_a/g = {:.6}", p.g_a / p.g);
    println!("g_eff/g = {:.6}", c.g_eff / p.g);
    println!("T*g = {:.4}", p.transfer_time() * p.g);

    let mut warnings = Vec::new();
    if c.g_12.abs() < 1e-12 * p.g {
        warnings.push("g_12 = 0: no chirality".to_string());
    }
    let j0 = bessel_j(0, p.f());
    if j0.abs() > 1e-10 {
        warnings.push(format!(
            "J0(f) = {j0:.3e} != 0: residual H0 magnitude g J0(f) = {:.3e} vs g_eff = {:.3e}",
            p.g * j0.abs(),
            c.g_eff
        ));
    }
    let matched = matched_ga(&p);
    if (p.g_a - matched).abs() > 1e-9 * matched.abs().max(1.0) {
        warnings.push(format!("g_a = {} differs from the matched value {matched:.6}", p.g_a));
    }
    if c.g_12.abs() >= 1e-12 * p.g && c.mismatch() > 1e-6 * c.g_eff {
        warnings.push(format!("effective couplings unequal: spread {:.3e} vs g_eff = {:.3e}", c.mismatch(), c.g_eff));
    }
    if matches!(config.name, ExperimentName::Fig7FockPrep | ExperimentName::Fig8NoonFidelity) {
        warnings.extend(config.protocol.validate(&p)?);
    }
    for w in &warnings {
        println!("warning: {w}");
    }
    Ok(())
}
