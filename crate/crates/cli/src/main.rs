use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ncf_core::artifact::{history_csv, write_atomic, RunArtifact};
use ncf_core::channel::Modulation;
use ncf_core::config::RunConfig;
use ncf_core::evaluation::{
    baselines, baselines_csv, detect_binning, evaluate, extract_lut, tradeoff_csv, TradeoffRow, LUT_POINTS,
};
use ncf_core::parallel::Exec;
use ncf_core::selftest::{self, Faults};
use ncf_core::training::{holdout_seed, sweep_lambda, sweep_seed, train, TrainConfig};
use ncf_core::Error;

const OUT_ENV: &str = "NCF_OUT_DIR";

#[derive(Parser)]
#[command(name = "ncf", version, about = "Neural compress-and-forward relaying experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config and the environment.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps (1 = sequential, 0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Replace the configured epoch count.
    #[arg(long)]
    epochs_override: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its run artifact.
    Train(Common),
    /// Train every configured scheme over the lambda grid.
    Sweep(Common),
    /// Analytic baselines: c_cf, mutual information and SER.
    Baselines {
        #[command(flatten)]
        common: Common,
        /// SNR grid in dB (comma separated).
        #[arg(long, value_delimiter = ',')]
        snr_db: Option<Vec<f64>>,
        /// Relay rates in bits (comma separated).
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        /// Modulations (comma separated).
        #[arg(long, value_delimiter = ',')]
        modulations: Option<Vec<Modulation>>,
    },
    /// Re-evaluate a stored run artifact.
    Evaluate {
        artifact: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        n_test: usize,
        /// Test seed; defaults to the one used at training time.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the look-up table of a stored run and report binning.
    ExportLut {
        artifact: PathBuf,
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = LUT_POINTS)]
        points: usize,
    },
    /// Run the fast invariant suite.
    Selftest {
        /// Corrupt analytic gradients (negative control).
        #[arg(long, hide = true)]
        inject_gradient_fault: bool,
    },
}

/// Process exit status for an error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) | Error::Domain(_) | Error::Usage(_) => 2,
        Error::Divergence { .. } => 3,
        Error::Artifact(_) => 4,
        Error::Shape(_) | Error::Capability(_) | Error::Io(_) => 1,
    }
}

fn load_config(common: &Common) -> ncf_core::Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.train.seed = seed;
    }
    if let Some(epochs) = common.epochs_override {
        config.train.epochs = epochs;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run_stem(config: &TrainConfig) -> String {
    format!("{}-lambda{}-seed{}", config.scheme, config.lambda, config.seed)
}

fn save_run(dir: &Path, report: &ncf_core::training::TrainReport, point: ncf_core::evaluation::TradeoffPoint) -> ncf_core::Result<PathBuf> {
    let stem = run_stem(&report.config);
    let path = dir.join(format!("{stem}.json"));
    write_atomic(&path, RunArtifact::new(report, Some(point)).to_json().as_bytes())?;
    let mut metrics = history_csv(&report.history)?;
    if !report.finetune_history.is_empty() {
        write_atomic(
            &dir.join(format!("{stem}-finetune-metrics.csv")),
            history_csv(&report.finetune_history)?.as_bytes(),
        )?;
    }
    metrics.shrink_to_fit();
    write_atomic(&dir.join(format!("{stem}-metrics.csv")), metrics.as_bytes())?;
    Ok(path)
}

fn cmd_train(common: &Common) -> ncf_core::Result<()> {
    let config = load_config(common)?;
    let report = train(&config.train)?;
    let point = evaluate(&report.bundle, config.n_test, holdout_seed(config.train.seed))?;
    let path = save_run(&config.output_dir, &report, point)?;
    println!(
        "{}: rate {:.4} bits, mi_lb {:.4} bits, ser {:.5}",
        path.display(),
        point.rate_bits,
        point.mi_lb_bits,
        point.ser
    );
    Ok(())
}

fn cmd_sweep(common: &Common) -> ncf_core::Result<()> {
    let config = load_config(common)?;
    let exec = Exec::from_jobs(common.jobs);
    let runs_dir = config.output_dir.join("sweep");
    let mut rows = Vec::new();
    for &scheme in &config.schemes {
        let base = TrainConfig {
            scheme,
            ..config.train.clone()
        };
        for (report, point) in sweep_lambda(&base, &config.lambdas, config.n_test, exec)? {
            save_run(&runs_dir, &report, point)?;
            rows.push(TradeoffRow {
                scheme,
                lambda: point.lambda,
                seed: sweep_seed(config.train.seed, point.lambda),
                snr_db: base.snr_db,
                modulation: base.modulation,
                rate_bits: point.rate_bits,
                mi_lb_bits: point.mi_lb_bits,
                ser: point.ser,
            });
        }
    }
    let path = config.output_dir.join("sweep.csv");
    write_atomic(&path, tradeoff_csv(&rows)?.as_bytes())?;
    println!("{}: {} rows", path.display(), rows.len());
    Ok(())
}

fn cmd_baselines(
    common: &Common,
    snr_db: Option<Vec<f64>>,
    rates: Option<Vec<f64>>,
    modulations: Option<Vec<Modulation>>,
) -> ncf_core::Result<()> {
    let mut config = load_config(common)?;
    if let Some(v) = snr_db {
        config.baselines.snr_db = v;
    }
    if let Some(v) = rates {
        config.baselines.rates = v;
    }
    if let Some(v) = modulations {
        config.baselines.modulations = v;
    }
    config.validate()?;
    let grid = &config.baselines;
    let rows = baselines(&grid.modulations, &grid.snr_db, &grid.rates)?;
    let path = config.output_dir.join("baselines.csv");
    write_atomic(&path, baselines_csv(&rows, &grid.rates)?.as_bytes())?;
    println!("{}: {} rows", path.display(), rows.len());
    Ok(())
}

fn cmd_evaluate(artifact: &Path, n_test: usize, seed: Option<u64>) -> ncf_core::Result<()> {
    let run = RunArtifact::load(artifact)?;
    let bundle = run.bundle()?;
    let seed = seed.unwrap_or_else(|| holdout_seed(run.config.seed));
    let p = evaluate(&bundle, n_test, seed)?;
    println!(
        "scheme {} lambda {} rate_bits {} mi_lb_bits {} ser {}",
        p.scheme, p.lambda, p.rate_bits, p.mi_lb_bits, p.ser
    );
    Ok(())
}

fn cmd_export_lut(artifact: &Path, out: Option<PathBuf>, points: usize) -> ncf_core::Result<()> {
    let run = RunArtifact::load(artifact)?;
    let bundle = run.bundle()?;
    let lut = extract_lut(&bundle, points)?;
    let dir = out.unwrap_or_else(|| artifact.parent().map(Path::to_path_buf).unwrap_or_default());
    let stem = artifact.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    let path = dir.join(format!("{stem}-lut.json"));
    write_atomic(&path, lut.to_json().as_bytes())?;
    let report = detect_binning(&lut);
    println!("{}", path.display());
    println!("binning: {}", report.binning);
    println!("relay intervals: {}", lut.relay_intervals.len());
    for (u, &count) in report.interval_counts.iter().enumerate().filter(|(_, c)| **c > 0) {
        println!("  index {u}: {count} interval(s)");
    }
    println!("dead indices: {}", report.dead_indices.len());
    Ok(())
}

fn cmd_selftest(faults: Faults) -> ExitCode {
    let results = selftest::run(faults);
    let mut failed = 0;
    for r in &results {
        if r.passed {
            println!("ok   {}: {}", r.name, r.detail);
        } else {
            failed += 1;
            eprintln!("FAIL {}: {}", r.name, r.detail);
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{failed} of {} checks failed", results.len());
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(common) => cmd_train(&common),
        Command::Sweep(common) => cmd_sweep(&common),
        Command::Baselines {
            common,
            snr_db,
            rates,
            modulations,
        } => cmd_baselines(&common, snr_db, rates, modulations),
        Command::Evaluate { artifact, n_test, seed } => cmd_evaluate(&artifact, n_test, seed),
        Command::ExportLut { artifact, out, points } => cmd_export_lut(&artifact, out, points),
        Command::Selftest { inject_gradient_fault } => {
            return cmd_selftest(Faults {
                corrupt_gradients: inject_gradient_fault,
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
