use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tpc_harness::commands::{cmd_bench, cmd_bias, cmd_collect, cmd_estimate, cmd_run};
use tpc_harness::config::PRESETS;
use tpc_harness::{ExperimentConfig, HarnessResult};

#[derive(Parser)]
#[command(name = "tpc", version, about = "Data-driven predictive control experiments on a simulated inverter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file, or the name of a built-in preset.
    #[arg(long, default_value = "fig3")]
    config: String,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Record white-noise training data.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Collect while a controller tracks the training schedule.
        #[arg(long)]
        closed_loop: bool,
        /// Predictor artifact driving closed-loop collection.
        #[arg(long)]
        predictor: Option<PathBuf>,
    },
    /// Estimate a predictor artifact from training data.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Training CSV; defaults to `<out>/training.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Closed-loop run of the configured scenario.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Solve-time and memory comparison over training sizes.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-loop estimation bias of both predictors over many seeds.
    Bias {
        #[command(flatten)]
        common: Common,
    },
    /// List the built-in presets, or print one.
    Presets { name: Option<String> },
}

fn resolve(common: &Common) -> HarnessResult<(ExperimentConfig, u64, PathBuf)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    Ok((cfg, seed, out))
}

fn execute(cli: Cli) -> HarnessResult<()> {
    match cli.command {
        Command::Collect { common, closed_loop, predictor } => {
            let (cfg, seed, out) = resolve(&common)?;
            let meta = cmd_collect(&cfg, seed, &out, closed_loop, predictor.as_deref())?;
            println!("wrote {} samples to {}", meta.samples, out.join("training.csv").display());
        }
        Command::Estimate { common, data } => {
            let (cfg, seed, out) = resolve(&common)?;
            let data = data.unwrap_or_else(|| out.join("training.csv"));
            let s = cmd_estimate(&cfg, seed, &data, &out)?;
            println!(
                "H_p {}x{}, H_u {}x{}, causality violation {:.2e}; wrote {}",
                s.hp_shape[0],
                s.hp_shape[1],
                s.hu_shape[0],
                s.hu_shape[1],
                s.causality_violation,
                out.join("predictor.csv").display()
            );
        }
        Command::Run { common, predictor, data } => {
            let (cfg, seed, out) = resolve(&common)?;
            let report = cmd_run(&cfg, seed, &out, predictor.as_deref(), data.as_deref())?;
            for v in &report.variants {
                let m = &v.metrics;
                let fmt = |c: &Option<tpc_harness::metrics::ChannelMetrics>| match c {
                    Some(c) => format!(
                        "steady {:.4}, settling {}",
                        c.steady_value,
                        c.settling_ticks.map(|t| format!("{t} ticks")).unwrap_or_else(|| "never".into())
                    ),
                    None => "-".into(),
                };
                println!("{}: P {}; Q {}; max |i| {:.4}", v.name, fmt(&m.p), fmt(&m.q), m.max_current);
            }
            println!("wrote {}", out.join("report.json").display());
        }
        Command::Bench { common } => {
            let (cfg, seed, out) = resolve(&common)?;
            cmd_bench(&cfg, seed, &out)?;
        }
        Command::Bias { common } => {
            let (cfg, seed, out) = resolve(&common)?;
            cmd_bias(&cfg, seed, &out)?;
        }
        Command::Presets { name: None } => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
        }
        Command::Presets { name: Some(name) } => {
            let (_, text) = PRESETS
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| tpc_harness::HarnessError::Config(format!("unknown preset '{name}'")))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Usage errors count as configuration errors.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
