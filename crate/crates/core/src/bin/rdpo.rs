use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rdpo::pipeline::{run_experiment, ExperimentConfig, Method, ValidatedConfig};
use rdpo::Error;

#[derive(Parser)]
#[command(name = "rdpo", version, about = "Mixed-reward advantage experiments on synthetic batches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method and write CSV/JSON outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Comma-separated method list, e.g. `gdpo,rdpo`.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the default four-task config (or write it to `--output`).
    Demo {
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(Error::Io { path: path.to_path_buf(), source: e }))?;
    ExperimentConfig::from_json(&text).map_err(Failure::Config)
}

fn validated(cfg: &ExperimentConfig) -> Result<ValidatedConfig, Failure> {
    cfg.validate().map_err(Failure::Config)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, seed, steps, methods, out } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = steps {
                cfg.num_steps = n;
            }
            if let Some(m) = methods {
                cfg.methods = m;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let v = validated(&cfg)?;
            let summary = run_experiment(&v).map_err(Failure::Runtime)?;
            for m in &summary.methods {
                let f = &m.mean_over_steps;
                println!(
                    "{:<12} eta_eff={:.4} mean_abs_corr={:.4} domination={:.4} participation={:.4}",
                    m.method.name(),
                    f.eta_eff,
                    f.mean_abs_corr,
                    f.domination,
                    f.participation
                );
            }
            eprintln!(
                "wrote {} ({} steps, {:.2}s)",
                cfg.output_dir.display(),
                summary.num_steps,
                summary.wall_time_secs
            );
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let v = validated(&cfg)?;
            println!(
                "ok: {} task(s), {} method(s), {} step(s)",
                v.mixture.tasks.len(),
                cfg.methods.len(),
                cfg.num_steps
            );
            Ok(())
        }
        Command::Demo { output } => {
            let json = ExperimentConfig::paper_default().to_json_pretty();
            match output {
                None => print!("{json}"),
                Some(p) => std::fs::write(&p, json)
                    .map_err(|e| Failure::Runtime(Error::Io { path: p.clone(), source: e }))?,
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // bad flags count as a config error; help and version are not errors
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
