use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use volvol_core::pricer::vix_scaling_ratio;
use volvol_harness::config::KEYS;
use volvol_harness::ingest::PanelWriter;
use volvol_harness::mc::{write_replications_csv, write_summary_csv};
use volvol_harness::{ingest_panels, run_empirical, run_mc, Scenario, ScenarioConfig, Truncation};

/// Worker count override for the thread pool.
const WORKERS_ENV: &str = "VOLVOL_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "volvol", version, about = "Option-based volatility of volatility and leverage estimation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo study: bias, STD, RMSE and coverage per estimator.
    Mc {
        /// Summary CSV (stdout table is always printed).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-replication estimates CSV.
        #[arg(long)]
        replications_out: Option<PathBuf>,
    },
    /// One replication with its estimates and intervals.
    Replication {
        #[arg(long, default_value_t = 0)]
        rep: usize,
    },
    /// Daily estimates from option panel CSV files.
    Empirical {
        /// CSV file or directory of CSV files.
        input: PathBuf,
        /// Daily estimates CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-estimator `x,date,y,y_ma` series.
        #[arg(long, value_name = "DIR")]
        emit_plot_data: Option<PathBuf>,
        /// Filter audit log CSV.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Ground-truth VV and LV at the configured starting variance.
    Truth,
    /// Simulated option panels in the input CSV schema, one day per replication.
    PricePanel {
        #[arg(long, default_value_t = 0)]
        first_rep: usize,
        #[arg(long, default_value_t = 1)]
        days: usize,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List configuration keys with the effective values.
    Config,
}

/// Failure class reported on stderr and mapped to the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Category {
    Config,
    Input,
    Numerical,
    Io,
}

impl Category {
    fn name(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Input => "input",
            Category::Numerical => "numerical",
            Category::Io => "io",
        }
    }

    fn code(self) -> u8 {
        match self {
            Category::Config => 2,
            Category::Input => 3,
            Category::Numerical => 4,
            Category::Io => 5,
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} error", self.name())
    }
}

fn classify(err: &anyhow::Error) -> Category {
    if let Some(c) = err.downcast_ref::<Category>() {
        return *c;
    }
    for cause in err.chain() {
        if cause.is::<volvol_core::Error>() {
            return Category::Numerical;
        }
        if cause.is::<csv::Error>() {
            return Category::Input;
        }
        if cause.is::<io::Error>() {
            return Category::Io;
        }
    }
    Category::Numerical
}

fn load_config(common: &Common, base: ScenarioConfig) -> Result<ScenarioConfig> {
    let mut cfg = base;
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .context(Category::Io)?;
        cfg.apply_text(&text)
            .with_context(|| format!("in {}", path.display()))
            .context(Category::Config)?;
    }
    cfg.apply_overrides(&common.set).context(Category::Config)?;
    cfg.validate().context(Category::Config)?;
    Ok(cfg)
}

fn configure_workers() -> Result<()> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .with_context(|| format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))
        .context(Category::Config)?;
    if n == 0 {
        return Err(anyhow::anyhow!("{WORKERS_ENV} must be positive")).context(Category::Config);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("starting the worker pool")?;
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p)
                .with_context(|| format!("creating {}", p.display()))
                .context(Category::Io)?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

fn run(cli: Cli) -> Result<()> {
    configure_workers()?;
    let mut base = ScenarioConfig::default();
    if matches!(cli.command, Command::Empirical { .. }) {
        // market data defaults to the data-driven truncation level
        base.truncation = Truncation::Empirical;
    }
    let cfg = load_config(&cli.common, base)?;
    match cli.command {
        Command::Mc { out, replications_out } => {
            let (summary, results) = run_mc(&cfg)?;
            println!(
                "v0 = {:.6}  VV = {:.6}  LV = {:.6}  replications = {}  failed = {}",
                summary.v0, summary.truth.vv, summary.truth.lv, summary.replications, summary.failed
            );
            println!("{:<8} {:>6} {:>8} {:>8} {:>8} {:>9}", "", "n", "bias", "std", "rmse", "coverage");
            for e in &summary.estimators {
                println!(
                    "{:<8} {:>6} {:>8.3} {:>8.3} {:>8.3} {:>9}",
                    e.kind.name(),
                    e.n,
                    e.bias,
                    e.std,
                    e.rmse,
                    fmt_opt(e.coverage)
                );
            }
            if let Some(p) = out {
                write_summary_csv(output(Some(&p))?, &summary)?;
            }
            if let Some(p) = replications_out {
                write_replications_csv(output(Some(&p))?, &results, summary.truth)?;
            }
            for (rep, r) in results.iter().enumerate() {
                if let Err(e) = r {
                    eprintln!("replication {rep} failed: {e}");
                }
            }
        }
        Command::Replication { rep } => {
            let scenario = Scenario::new(&cfg)?;
            let r = scenario.run_replication(rep)?;
            println!(
                "rep = {rep}  v0 = {:.6}  u_short = {:.4}  u_long = {:.4}  u_ret = {:.4}  floored = {}",
                scenario.v0, r.u_short, r.u_long, r.u_ret, r.floored
            );
            println!(
                "{:<8} {:>10} {:>10} {:>10} {:>10} {:>10}  flags",
                "", "estimate", "truth", "avar", "ci_low", "ci_high"
            );
            for rec in &r.records {
                let t = if rec.kind.is_vv() { scenario.truth.vv } else { scenario.truth.lv };
                println!(
                    "{:<8} {:>10} {:>10.4} {:>10} {:>10} {:>10}  {}",
                    rec.kind.name(),
                    fmt_opt(rec.estimate),
                    t,
                    fmt_opt(rec.avar),
                    fmt_opt(rec.ci.map(|c| c.0)),
                    fmt_opt(rec.ci.map(|c| c.1)),
                    rec.flag_string()
                );
            }
        }
        Command::Empirical {
            input,
            out,
            emit_plot_data,
            audit,
        } => {
            let (days, log) = ingest_panels(&input, &cfg).context(Category::Input)?;
            for (rule, n) in log.counts() {
                eprintln!("filter {rule}: {n}");
            }
            if let Some(p) = audit {
                log.write_csv(output(Some(&p))?)?;
            }
            if days.is_empty() {
                return Err(anyhow::anyhow!("no trading day survived the filters")).context(Category::Input);
            }
            let run = run_empirical(&days, &cfg)?;
            for (date, why) in &run.skipped {
                eprintln!("day {date} skipped: {why}");
            }
            run.write_csv(output(out.as_deref())?, cfg.ma_window)?;
            if let Some(dir) = emit_plot_data {
                run.write_plot_data(&dir, cfg.ma_window).context(Category::Io)?;
            }
        }
        Command::Truth => {
            let v0 = cfg.v0().context(Category::Config)?;
            let t = volvol_harness::ground_truth(&cfg.params, v0, cfg.transform);
            println!("v0 = {v0}");
            println!("transform = {}", cfg.transform.name());
            println!("VV = {}", t.vv);
            println!("LV = {}", t.lv);
            println!("vix_scaling = {}", vix_scaling_ratio(&cfg.params, v0));
        }
        Command::PricePanel { first_rep, days, out } => {
            if days == 0 {
                return Err(anyhow::anyhow!("--days must be positive")).context(Category::Config);
            }
            let scenario = Scenario::new(&cfg)?;
            let mut w = PanelWriter::new(output(out.as_deref())?)?;
            for rep in first_rep..first_rep + days {
                let window = scenario.simulate(rep)?;
                let chrono: Vec<_> = window.panels.into_iter().rev().collect();
                w.write_day(&format!("sim-{rep:05}"), &chrono, &cfg)?;
            }
            w.finish()?.flush()?;
        }
        Command::Config => {
            print!("{}", cfg.to_text());
            println!();
            for (k, doc) in KEYS {
                println!("# {k}: {doc}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = classify(&e);
            eprintln!("error[{}]: {e:#}", cat.name());
            ExitCode::from(cat.code())
        }
    }
}
