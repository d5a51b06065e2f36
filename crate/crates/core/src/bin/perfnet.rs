use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

use perfnet::harness::config::SweepAxis;
use perfnet::harness::experiment::{self, fixed_point_report, theory_report};
use perfnet::harness::{exit, exit_code, preset, thread_pool, ExperimentConfig};
use perfnet::metrics::{load_metrics_csv, rate_fit, series, RateWindow};
use perfnet::Result;

/// Decentralized performative prediction experiments.
#[derive(Parser)]
#[command(name = "perfnet", version)]
struct Cli {
    /// Output root for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point and seed of a config file or preset name.
    Run { config: String },
    /// Run a config over explicit values of one axis.
    Sweep {
        config: String,
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Stable point by closed form and repeated deployment.
    FixedPoint { config: String },
    /// Theory constants, step-size checks and bound curves.
    Theory {
        config: String,
        /// Also write the bound curves as CSV here.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Log-log slope of one metric column of a metrics CSV.
    RateCheck {
        csv: PathBuf,
        #[arg(long)]
        metric: String,
        #[arg(long, default_value_t = RateWindow::default().fraction)]
        fraction: f64,
        #[arg(long, default_value_t = RateWindow::default().t_min)]
        t_min: f64,
    },
    /// Baseline comparisons.
    #[command(group(ArgGroup::new("kind").required(true).args(["disconnected", "nonperformative"])))]
    Baseline {
        /// Config file or preset name (default: gaussian_mean for
        /// --disconnected, spam_logistic for --nonperformative).
        #[arg(long)]
        config: Option<String>,
        /// Isolate this agent and run it alone.
        #[arg(long, value_name = "AGENT")]
        disconnected: Option<usize>,
        /// Sensitivity of the isolated agent (default: its own).
        #[arg(long, requires = "disconnected")]
        eps: Option<f64>,
        /// Non-performative optimum versus DSGD-GD on shifted test data.
        #[arg(long)]
        nonperformative: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_axis(s: &str) -> std::result::Result<SweepAxis, String> {
    match s {
        "eps_avg" => Ok(SweepAxis::EpsAvg),
        "homogeneous" => Ok(SweepAxis::Homogeneous),
        other => Err(format!("unknown axis {other:?} (eps_avg | homogeneous)")),
    }
}

/// A path to a TOML file, or the name of a preset.
fn load_config(spec: &str) -> Result<ExperimentConfig> {
    let path = Path::new(spec);
    if path.exists() {
        ExperimentConfig::load(path)
    } else {
        preset::by_name(spec)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run_and_report(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    let summary = experiment::run_experiment(cfg, out)?;
    for p in &summary.manifest.points {
        let diverged = p.runs.iter().filter(|r| r.diverged()).count();
        println!("{:>14}  {:?}  diverged {diverged}/{}", p.label, p.status, p.runs.len());
    }
    println!("artifacts in {}", summary.dir.display());
    Ok(if summary.manifest.diverged_in_convergent_regime() {
        exit::DIVERGED
    } else {
        exit::OK
    })
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config } => run_and_report(&load_config(&config)?, &cli.out),
        Command::Sweep { config, axis, values } => {
            let mut cfg = load_config(&config)?;
            cfg.sweep = Some(perfnet::harness::config::SweepConfig { axis, values });
            cfg.validate()?;
            run_and_report(&cfg, &cli.out)
        }
        Command::FixedPoint { config } => {
            let cfg = load_config(&config)?;
            for (label, point) in cfg.sweep_points() {
                let report = fixed_point_report(&point, &point.instantiate()?)?;
                print_json(&serde_json::json!({ "point": label, "report": report }))?;
            }
            Ok(exit::OK)
        }
        Command::Theory { config, curves } => {
            let cfg = load_config(&config)?;
            let ts: Vec<u64> = (0..=cfg.run.iterations).step_by(cfg.run.record_every.max(1) as usize).collect();
            for (label, point) in cfg.sweep_points() {
                let (report, points) = theory_report(&point, &point.instantiate()?, &ts);
                print_json(&serde_json::json!({ "point": label, "report": report }))?;
                if let Some(dir) = &curves {
                    let path = dir.join(format!("{label}.json"));
                    experiment::save_json(&path, &points)?;
                }
            }
            Ok(exit::OK)
        }
        Command::RateCheck {
            csv,
            metric,
            fraction,
            t_min,
        } => {
            let records = load_metrics_csv(&csv)?;
            let fit = rate_fit(&metric, &series(&records, &metric)?, RateWindow { fraction, t_min })?;
            print_json(&fit)?;
            Ok(exit::OK)
        }
        Command::Baseline {
            config,
            disconnected,
            eps,
            nonperformative,
            seed,
        } => {
            if let Some(agent) = disconnected {
                let mut cfg = load_config(config.as_deref().unwrap_or("gaussian_mean"))?;
                cfg.sweep = None;
                let run = experiment::run_disconnected_baseline(&cfg, agent, eps, seed)?;
                let dir = cli.out.join(&cfg.name).join("baseline_disconnected").join(seed.to_string());
                experiment::save_disconnected(&run, &dir)?;
                println!(
                    "agent {agent} (eps {}): isolated diverged_at {:?}, networked diverged_at {:?}",
                    run.eps, run.isolated.diverged_at, run.networked.diverged_at
                );
                println!("artifacts in {}", dir.display());
            } else if nonperformative {
                let mut cfg = load_config(config.as_deref().unwrap_or("spam_logistic"))?;
                cfg.sweep = None;
                let report = experiment::run_nonperformative_baseline(&cfg)?;
                let path = cli.out.join(&cfg.name).join("baseline_nonperformative.json");
                experiment::save_json(&path, &report)?;
                for r in &report.runs {
                    println!(
                        "seed {}: dsgd-gd {:.4}  non-performative {:.4}",
                        r.seed, r.dsgd_gd_accuracy, r.baseline_accuracy
                    );
                }
                println!("report in {}", path.display());
            }
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = thread_pool().and_then(|pool| pool.install(|| execute(cli)));
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
