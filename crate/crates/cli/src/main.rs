use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use freshcast::data::{
    correlation_matrix, ingest_csv, synthesize, DataError, Field, GeneratorProfile, Variable,
};
use freshcast::pipeline::{
    create_run, feedback_update, forecast_stage, latest_run, optimize_stage, train_stage,
    DataSource, PipelineConfig, PipelineError, RunArtifact, RunDir,
};
use freshcast::pricing::Plan;
use freshcast::SCHEMA_VERSION;

const PRECEDENCE: &str = "\
Settings resolve as flag > config file > built-in default: a flag given on the \
command line wins over the same value in --config, which wins over the default.";

/// Forecast-driven pricing and replenishment planning for fresh produce.
#[derive(Debug, Parser)]
#[command(name = "freshcast", version, after_help = PRECEDENCE)]
struct Cli {
    /// JSON pipeline config; unset fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding run directories.
    #[arg(long, global = true, default_value = "runs")]
    run_dir: PathBuf,
    /// Overrides every seed: synthetic data, network init and swarm.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print diagnostics to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic sales history as CSV.
    Synth {
        #[arg(long, default_value_t = 2)]
        categories: usize,
        #[arg(long, default_value_t = 28, value_parser = clap::value_parser!(u64).range(14..=36500))]
        days: u64,
        /// JSON generator profile.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest data into a new run and train one forecaster per category.
    Train(RunFlags),
    /// Produce seven-day forecasts for a trained run.
    Forecast {
        /// Run id; defaults to the latest run.
        #[arg(long)]
        run: Option<String>,
    },
    /// Search for the best plan of a forecast run.
    Optimize {
        #[arg(long)]
        run: Option<String>,
    },
    /// Ingest, train, forecast and optimize in one go.
    Run(RunFlags),
    /// Append new sales to a run and re-plan into a linked run.
    Feedback {
        #[arg(long)]
        run: Option<String>,
        /// CSV of new records, same columns as the history.
        #[arg(long = "new")]
        new_records: PathBuf,
    },
    /// Render a run's plan, swarm history or correlation matrix.
    Report {
        #[arg(long)]
        run: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Best fitness per swarm iteration instead of the plan.
        #[arg(long, conflicts_with = "correlation")]
        history: bool,
        /// Pearson matrix over the run's data instead of the plan.
        #[arg(long)]
        correlation: bool,
        /// Variables for --correlation as category:field; defaults to
        /// every category with volume, price and spoilage.
        #[arg(long = "var", requires = "correlation")]
        vars: Vec<Variable>,
    },
    /// Serve the HTTP API (and optionally the console's static files).
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// Directory of static files served beside the API.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
struct RunFlags {
    /// Sales history CSV; replaces the config's data source.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug)]
enum CliError {
    Pipeline(PipelineError),
    Data(DataError),
    Io(PathBuf, io::Error),
    Invalid(String),
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Pipeline(e) if e.is_internal() => 3,
            CliError::Internal(_) => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Pipeline(e) => write!(f, "[{}] {e}", e.stage()),
            CliError::Data(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Invalid(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Pipeline(e)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth {
            categories,
            days,
            profile,
            out,
        } => synth(cli, *categories, *days as usize, profile.as_deref(), out),
        Command::Train(flags) => {
            let cfg = resolve_config(cli, flags)?;
            let run = create_run(&cfg, &cli.run_dir, None, None, None)?;
            let models = train_stage(&run)?;
            if cli.verbose {
                for m in &models {
                    let last = m.loss_history.last().copied().unwrap_or(f64::NAN);
                    eprintln!("{}: final training loss {last:.6}", m.category);
                }
            }
            println!("{}: trained {} models", run.id(), models.len());
            Ok(())
        }
        Command::Forecast { run } => {
            let run = open_run(cli, run.as_deref())?;
            let bundles = forecast_stage(&run)?;
            println!("{}: forecast {} categories", run.id(), bundles.len());
            Ok(())
        }
        Command::Optimize { run } => {
            let run = open_run(cli, run.as_deref())?;
            let art = optimize_stage(&run, progress(cli.verbose))?;
            summarize(&art);
            Ok(())
        }
        Command::Run(flags) => {
            let cfg = resolve_config(cli, flags)?;
            let run = create_run(&cfg, &cli.run_dir, None, None, None)?;
            train_stage(&run)?;
            forecast_stage(&run)?;
            let art = optimize_stage(&run, progress(cli.verbose))?;
            summarize(&art);
            Ok(())
        }
        Command::Feedback { run, new_records } => {
            let run = open_run(cli, run.as_deref())?;
            let base = RunArtifact::load(&run)?;
            let records = ingest_csv(new_records)?.records().to_vec();
            let art = feedback_update(&base, records)?;
            summarize(&art);
            Ok(())
        }
        Command::Report {
            run,
            format,
            history,
            correlation,
            vars,
        } => {
            let run = open_run(cli, run.as_deref())?;
            let text = if *history {
                history_report(&run, *format)?
            } else if *correlation {
                correlation_report(&run, vars, *format)?
            } else {
                plan_report(&run.plan()?, *format)?
            };
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io("<stdout>".into(), e))
        }
        Command::Serve {
            port,
            bind,
            static_dir,
        } => {
            let addr = SocketAddr::new(*bind, *port);
            let rt =
                tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
            eprintln!("serving {} on http://{addr}", cli.run_dir.display());
            rt.block_on(freshcast_service::serve(
                addr,
                cli.run_dir.clone(),
                static_dir.clone(),
            ))
            .map_err(|e| CliError::Io(cli.run_dir.clone(), e))
        }
    }
}

fn synth(
    cli: &Cli,
    categories: usize,
    days: usize,
    profile: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let profile = match profile {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::Io(p.into(), e))?;
            serde_json::from_reader(f)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?
        }
        None => GeneratorProfile::default(),
    };
    let ds = synthesize(cli.seed.unwrap_or(0), categories, days, &profile)?;
    ds.save_csv(out)
        .map_err(|e| CliError::Invalid(format!("writing {}: {e}", out.display())))?;
    println!("wrote {} records to {}", ds.len(), out.display());
    Ok(())
}

/// Default, then config file, then flags.
fn resolve_config(cli: &Cli, flags: &RunFlags) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(path) = &flags.data {
        cfg.data = DataSource::Csv { path: path.clone() };
    }
    if let Some(seed) = cli.seed {
        if let DataSource::Synth { seed: s, .. } = &mut cfg.data {
            *s = seed;
        }
        cfg.forecast.train.seed = seed;
        cfg.pso.seed = seed;
    }
    if let Some(e) = flags.epochs {
        cfg.forecast.train.epochs = e;
    }
    if let Some(n) = flags.particles {
        cfg.pso.n_particles = n;
    }
    if let Some(n) = flags.max_iters {
        cfg.pso.max_iters = n;
    }
    if let Some(m) = flags.margin {
        cfg.costs.profit_margin = m;
    }
    if cli.verbose {
        eprintln!(
            "config: {}",
            serde_json::to_string(&cfg).map_err(|e| CliError::Internal(e.to_string()))?
        );
    }
    Ok(cfg)
}

fn open_run(cli: &Cli, id: Option<&str>) -> Result<RunDir> {
    match id {
        Some(id) => Ok(RunDir::open(&cli.run_dir, id)?),
        None => latest_run(&cli.run_dir)?
            .ok_or_else(|| CliError::Invalid(format!("no runs under {}", cli.run_dir.display()))),
    }
}

fn progress(verbose: bool) -> impl FnMut(usize, f64) {
    move |iter, best| {
        if verbose && iter % 50 == 0 {
            eprintln!("iteration {iter}: best fitness {best:.4}");
        }
    }
}

fn summarize(art: &RunArtifact) {
    let parent = art
        .meta
        .parent
        .as_deref()
        .map(|p| format!(" (parent {p})"))
        .unwrap_or_default();
    println!(
        "{}{parent}: projected profit {:.2}, baseline {:.2}, {}",
        art.id(),
        art.plan.projected_profit,
        art.baseline.projected_profit,
        if art.plan.feasible {
            "feasible"
        } else {
            "INFEASIBLE"
        }
    );
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn csv_string(write: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| CliError::Internal(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| CliError::Internal(e.to_string()))
}

/// Daily profit per category with a totals row.
fn plan_report(plan: &Plan, format: Format) -> Result<String> {
    match format {
        Format::Json => to_json(plan),
        Format::Csv => csv_string(|buf| plan.write_csv(buf)),
        Format::Table => {
            let days = plan.layout.days;
            let width = plan
                .layout
                .categories
                .iter()
                .map(String::len)
                .max()
                .unwrap_or(0)
                .max(8);
            let mut out = format!("{:<width$}", "category");
            for d in 1..=days {
                let _ = write!(out, " {:>10}", format!("day {d}"));
            }
            out.push('\n');
            let mut totals = vec![0.0; days];
            for (c, cat) in plan.layout.categories.iter().enumerate() {
                let _ = write!(out, "{cat:<width$}");
                for (d, p) in plan.report.daily_profit(c).into_iter().enumerate() {
                    totals[d] += p;
                    let _ = write!(out, " {p:>10.2}");
                }
                out.push('\n');
            }
            let _ = write!(out, "{:<width$}", "total");
            for t in &totals {
                let _ = write!(out, " {t:>10.2}");
            }
            let _ = writeln!(
                out,
                "\n\nprojected profit {:.2} ({})",
                plan.projected_profit,
                if plan.feasible {
                    "feasible"
                } else {
                    "infeasible"
                }
            );
            Ok(out)
        }
    }
}

fn history_report(run: &RunDir, format: Format) -> Result<String> {
    let history = run.swarm_history()?;
    match format {
        Format::Json => to_json(&serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": run.id(),
            "history": history,
        })),
        Format::Csv | Format::Table => {
            let mut out = String::from("iteration,gbest_fit\n");
            for (i, f) in history.iter().enumerate() {
                let _ = writeln!(out, "{i},{f}");
            }
            Ok(out)
        }
    }
}

fn correlation_report(run: &RunDir, vars: &[Variable], format: Format) -> Result<String> {
    let ds = run.dataset()?;
    let vars = if vars.is_empty() {
        ds.categories()
            .iter()
            .flat_map(|c| {
                [Field::Volume, Field::Price, Field::Spoilage].map(|field| Variable {
                    category: c.clone(),
                    field,
                })
            })
            .collect()
    } else {
        vars.to_vec()
    };
    let m = correlation_matrix(&ds, &vars)?;
    match format {
        Format::Json => to_json(&serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": run.id(),
            "labels": m.labels,
            "values": m.values,
        })),
        Format::Csv | Format::Table => {
            let mut buf = Vec::new();
            m.write_csv(&mut buf)?;
            String::from_utf8(buf).map_err(|e| CliError::Internal(e.to_string()))
        }
    }
}
