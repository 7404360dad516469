//! Command-line interface: `run`, `calibrate`, `oracle-check`, `roc` and
//! `report` subcommands over scenario configuration files.

use crate::config::ScenarioConfig;
use crate::montecarlo;
use crate::scenario;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "qelidar",
    version,
    about = "Simulate and analyse coincidence-based quantum-enhanced lidar scenarios"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the scenario described by a config file and write its artifacts.
    Run {
        config: PathBuf,
        /// Override the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to runs/<config stem>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Table format for the emitted artifacts.
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
    },
    /// Simulate calibration data for a config and estimate its parameters.
    Calibrate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the closed-form click probabilities against the event-level
    /// sampler over a sweep of parameter sets.
    OracleCheck {
        /// Number of parameter sets (bundled presets first, then seeded
        /// random draws).
        #[arg(long, default_value_t = 8)]
        sets: usize,
        /// Windows sampled per hypothesis and parameter set.
        #[arg(long, default_value_t = 1_000_000)]
        windows: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Largest tolerated deviation in binomial standard errors.
        #[arg(long, default_value_t = 3.0)]
        max_sigma: f64,
    },
    /// Write the analytic receiver-operator curve of a config.
    Roc {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute a run directory's summary from its own tables and print it.
    Report { run_dir: PathBuf },
}

/// Entry point shared by the binary and the integration tests.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            format,
        } => cmd_run(&config, seed, out, format),
        Command::Calibrate { config, seed, out } => cmd_calibrate(&config, seed, out),
        Command::OracleCheck {
            sets,
            windows,
            seed,
            max_sigma,
        } => cmd_oracle_check(sets, windows, seed, max_sigma),
        Command::Roc { config, out } => cmd_roc(&config, out),
        Command::Report { run_dir } => cmd_report(&run_dir),
    }
}

fn load_config(path: &Path) -> Result<(ScenarioConfig, String)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file `{}`", path.display()))?;
    let cfg = ScenarioConfig::from_str_named(&text, &path.display().to_string())?;
    Ok((cfg, text))
}

fn default_out_dir(config: &Path) -> PathBuf {
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    PathBuf::from("runs").join(stem)
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: OutputFormat,
) -> Result<()> {
    let (cfg, text) = load_config(config)?;
    let mut output = scenario::run_scenario(&cfg, &text, seed)
        .with_context(|| format!("scenario `{}` failed", config.display()))?;
    if format == OutputFormat::Json {
        output.tables = output
            .tables
            .into_iter()
            .map(|(name, contents)| {
                if name.ends_with(".csv") {
                    (name.replace(".csv", ".json"), csv_to_json(&contents))
                } else {
                    (name, contents)
                }
            })
            .collect();
    }
    let dir = out.unwrap_or_else(|| default_out_dir(config));
    output
        .write_to_dir(&dir)
        .with_context(|| format!("cannot write run artifacts to `{}`", dir.display()))?;
    print!("{}", output.summary.to_text());
    println!("artifacts     : {}", dir.display());
    Ok(())
}

fn cmd_calibrate(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let (cfg, _) = load_config(config)?;
    let result = scenario::run_calibration_scenario(&cfg, seed)?;
    print!("{}", result.report_text);
    println!(
        "ground truth: eta_s={} eta_i={} xi={} beta={} gamma={}",
        result.truth.eta_s,
        result.truth.eta_i,
        result.truth.xi,
        result.truth.beta,
        result.truth.gamma
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create `{}`", dir.display()))?;
        std::fs::write(dir.join("calibration.txt"), &result.report_text)?;
        let json = serde_json::to_string_pretty(&result.estimates)?;
        std::fs::write(dir.join("calibration.json"), json)?;
    }
    Ok(())
}

fn cmd_oracle_check(sets: usize, windows: u64, seed: u64, max_sigma: f64) -> Result<()> {
    let rows = montecarlo::oracle_sweep(sets, windows, seed);
    println!(
        "{:<20} {:>10} {:>10} {:>10} {:>10} {:>9}",
        "parameter set", "p_h0_ci", "p_h1_ci", "p_idler", "p_h1_qi", "max dev"
    );
    let mut worst: f64 = 0.0;
    for row in &rows {
        let dev: Vec<f64> = row.checks.iter().map(|c| c.sigma_deviation).collect();
        println!(
            "{:<20} {:>9.2}s {:>9.2}s {:>9.2}s {:>9.2}s {:>8.2}s",
            row.label,
            dev[0],
            dev[1],
            dev[2],
            dev[3],
            row.max_sigma_deviation()
        );
        worst = worst.max(row.max_sigma_deviation());
    }
    println!("worst deviation: {worst:.2} standard errors over {sets} sets x {windows} windows");
    if worst > max_sigma {
        bail!("oracle check failed: {worst:.2} standard errors exceeds the {max_sigma} limit");
    }
    Ok(())
}

fn cmd_roc(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let (cfg, _) = load_config(config)?;
    let table = scenario::analytic_roc_table(&cfg)?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir)
                .with_context(|| format!("cannot create `{}`", dir.display()))?;
            let path = dir.join("roc.csv");
            std::fs::write(&path, table)?;
            println!("wrote {}", path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_report(run_dir: &Path) -> Result<()> {
    let recomputed = crate::report::verify_run_dir(run_dir)
        .with_context(|| format!("run directory `{}` failed verification", run_dir.display()))?;
    println!("summary matches the measurement table:");
    for (column, single, avg) in recomputed {
        if avg.is_nan() {
            println!("  {column}: phi_single = {single:.6}");
        } else {
            println!("  {column}: phi_single = {single:.6}, phi_avg = {avg:.6}");
        }
    }
    let text = std::fs::read_to_string(run_dir.join("summary.txt"))
        .with_context(|| format!("cannot read `{}`", run_dir.join("summary.txt").display()))?;
    print!("{text}");
    Ok(())
}

/// Convert one of our own CSV tables to a JSON array of row objects,
/// preserving column order. Numeric cells become JSON numbers; everything
/// else stays a string.
fn csv_to_json(csv: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = match lines.next() {
        Some(h) => h.split(',').collect(),
        None => return "[]\n".into(),
    };
    let mut out = String::from("[\n");
    let mut first = true;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        if !first {
            out.push_str(",\n");
        }
        first = false;
        out.push_str("  {");
        for (i, (name, cell)) in header.iter().zip(line.split(',')).enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let value = if cell.is_empty() {
                "null".to_string()
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => cell.to_string(),
                    _ => format!("\"{cell}\""),
                }
            };
            out.push_str(&format!("\"{name}\": {value}"));
        }
        out.push('}');
    }
    out.push_str("\n]\n");
    out
}
