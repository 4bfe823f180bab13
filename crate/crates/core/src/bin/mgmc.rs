//! Command-line front end: run experiments, sweep figure presets, run
//! self-checks, and re-export saved results.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mgmc::checks::run_all_checks;
use mgmc::harness::{
    emit_figure_data, export_results, figure_family_spec, run_experiment, write_figure_csv,
    ExperimentSpec, ExportFormat, FigureFamily, RunResult,
};
use mgmc::types::Algorithm;
use mgmc::{CsiMode, Error};

#[derive(Parser)]
#[command(
    name = "mgmc",
    version,
    about = "Multi-group multicast precoding simulator for cell-free massive MIMO"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment config: a TOML file path, or a preset (`desk`, `paper`).
    #[arg(long, default_value = "desk")]
    config: String,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo drop count override.
    #[arg(long)]
    drops: Option<usize>,
    /// Iteration budget override.
    #[arg(long)]
    iters: Option<usize>,
    /// Comma-separated algorithms (Centralized, CentralizedSumGroup,
    /// LocalMMSE, LocalMF, BR, BR-GS, GB), or `all`.
    #[arg(long)]
    algo: Option<String>,
    /// CSI mode: `perfect` or `pilot`.
    #[arg(long)]
    csi: Option<String>,
    /// Resource block size r_t override.
    #[arg(long)]
    rt: Option<f64>,
    /// Keep per-drop series in the result (JSON only).
    #[arg(long)]
    save_drops: bool,
    /// Worker threads for drop-level parallelism.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write the result table.
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Output format: `csv` or `json`.
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Run a figure-family preset sweep and write plot-ready tables.
    Sweep {
        #[command(flatten)]
        spec: SpecArgs,
        /// Figure family: rate_vs_iter, effrate_vs_iter, effrate_vs_rt,
        /// effrate_vs_groupsize, effrate_vs_M, lowsnr, mse_objective.
        #[arg(long, default_value = "effrate_vs_rt")]
        figure: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Run fast self-checks and report pass/fail per invariant.
    Check,
    /// Re-export a saved JSON result as CSV/JSON or as a figure table.
    Export {
        /// Path to a result `.json` produced by `run` or `sweep`.
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        /// Emit this figure family instead of the flat result table.
        #[arg(long)]
        figure: Option<String>,
    },
}

fn load_spec(args: &SpecArgs) -> Result<ExperimentSpec, Error> {
    let mut spec = match args.config.as_str() {
        "desk" => ExperimentSpec::desk(),
        "paper" | "paper_scale" => ExperimentSpec::paper_scale(),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidConfig(format!("cannot read config '{path}': {e}"))
            })?;
            toml::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("config '{path}': {e}")))?
        }
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(drops) = args.drops {
        spec.drops = drops;
    }
    if let Some(iters) = args.iters {
        spec.iterations = iters;
    }
    if let Some(list) = &args.algo {
        if list.eq_ignore_ascii_case("all") {
            spec.algorithms = Algorithm::ALL.to_vec();
        } else {
            spec.algorithms = list
                .split(',')
                .map(|s| Algorithm::parse(s.trim()))
                .collect::<Result<Vec<_>, _>>()?;
        }
    }
    if let Some(csi) = &args.csi {
        spec.csi = CsiMode::parse(csi)?;
    }
    if let Some(rt) = args.rt {
        spec.rt = rt;
    }
    if args.save_drops {
        spec.save_drops = true;
    }
    if let Some(workers) = args.workers {
        spec.workers = Some(workers);
    }
    spec.validate()?;
    Ok(spec)
}

fn report_warnings(result: &RunResult) {
    for w in &result.meta.warnings {
        eprintln!("warning: {w}");
    }
}

fn write_result(result: &RunResult, format: ExportFormat, out: &Path) -> Result<PathBuf, Error> {
    let path = out.join(match format {
        ExportFormat::Csv => "results.csv",
        ExportFormat::Json => "results.json",
    });
    export_results(result, format, &path)?;
    Ok(path)
}

fn cmd_run(spec_args: &SpecArgs, out: &Path, format: &str) -> Result<(), Error> {
    let format = ExportFormat::parse(format)?;
    let spec = load_spec(spec_args)?;
    let result = run_experiment(&spec)?;
    report_warnings(&result);
    let path = write_result(&result, format, out)?;
    println!(
        "wrote {} ({} series, {} iterations, {} drops)",
        path.display(),
        result.series.len(),
        spec.iterations,
        spec.drops
    );
    Ok(())
}

fn cmd_sweep(spec_args: &SpecArgs, figure: &str, out: &Path, format: &str) -> Result<(), Error> {
    let format = ExportFormat::parse(format)?;
    let family = FigureFamily::parse(figure)?;
    let spec = figure_family_spec(family, &load_spec(spec_args)?);
    spec.validate()?;
    let result = run_experiment(&spec)?;
    report_warnings(&result);
    let raw = write_result(&result, format, out)?;
    let table = emit_figure_data(&result, family)?;
    let fig_path = out.join(format!("figure_{}.csv", family.label()));
    write_figure_csv(&table, &fig_path)?;
    println!("wrote {}", raw.display());
    println!(
        "wrote {} ({} series, x = {})",
        fig_path.display(),
        table.series.len(),
        table.x_label
    );
    Ok(())
}

fn cmd_check() -> Result<(), Error> {
    let reports = run_all_checks();
    let mut failed = 0;
    for r in &reports {
        if r.passed {
            println!("ok   {}: {}", r.name, r.detail);
        } else {
            failed += 1;
            println!("FAIL {}: {}", r.name, r.detail);
        }
    }
    if failed > 0 {
        Err(Error::Numerical(format!("{failed} of {} checks failed", reports.len())))
    } else {
        println!("all {} checks passed", reports.len());
        Ok(())
    }
}

fn cmd_export(input: &Path, out: &Path, format: &str, figure: Option<&str>) -> Result<(), Error> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::InvalidConfig(format!("cannot read '{}': {e}", input.display())))?;
    let result: RunResult = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("'{}' is not a saved result: {e}", input.display())))?;
    match figure {
        Some(name) => {
            let family = FigureFamily::parse(name)?;
            let table = emit_figure_data(&result, family)?;
            let path = out.join(format!("figure_{}.csv", family.label()));
            write_figure_csv(&table, &path)?;
            println!("wrote {}", path.display());
        }
        None => {
            let format = ExportFormat::parse(format)?;
            let path = write_result(&result, format, out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { spec, out, format } => cmd_run(spec, out, format),
        Command::Sweep { spec, figure, out, format } => cmd_sweep(spec, figure, out, format),
        Command::Check => cmd_check(),
        Command::Export { input, out, format, figure } => {
            cmd_export(input, out, format, figure.as_deref())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::InvalidConfig(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
