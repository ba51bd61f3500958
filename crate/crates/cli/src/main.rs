use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsdg::data::save_csv;
use fedsdg::experiment::{compare, gini_scores, run_file, DataSpecFile, ExperimentConfig, Method};
use fedsdg::Error;

#[derive(Parser)]
#[command(name = "fedsdg", version, about = "Vertical federated feature selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Run {
        config: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Run several configurations and tabulate their final metrics.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        over: Overrides,
    },
    /// Generate a synthetic dataset as CSV.
    GenData {
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run only the Gini initialization and dump per-feature scores.
    Gini {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV (default: gini.csv in the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    max_rounds: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    gini_k: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn method(&self) -> Result<Option<Method>, Error> {
        self.method.as_deref().map(str::parse).transpose()
    }

    fn apply(&self, cfg: &mut ExperimentConfig, method: Option<Method>) {
        if let Some(r) = self.max_rounds {
            cfg.train.max_rounds = r;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(m) = method {
            cfg.method = m;
        }
        if let Some(k) = self.gini_k {
            cfg.gini_k = Some(k);
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        e if e.is_protocol() => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, over } => {
            let method = over.method()?;
            let out = run_file(&config, |c| over.apply(c, method))?;
            println!("{}", serde_json::to_string(&out.report.metrics)?);
        }
        Command::Compare { configs, over } => {
            let method = over.method()?;
            let mut loaded = Vec::with_capacity(configs.len());
            for path in &configs {
                let mut cfg = ExperimentConfig::load_unchecked(path)?;
                over.apply(&mut cfg, method);
                cfg.out_dir = None;
                cfg.validate()?;
                loaded.push((cfg, path.parent().map(Path::to_path_buf)));
            }
            let dir = over.out.clone().unwrap_or_else(|| PathBuf::from("runs/compare"));
            let rows = compare(&loaded, &dir)?;
            println!("{}", serde_json::to_string(&rows)?);
        }
        Command::GenData { spec, seed, out } => {
            let spec_file = DataSpecFile::load(&spec)?;
            let seed = seed.unwrap_or(spec_file.seed);
            let out = out
                .or(spec_file.out.clone())
                .ok_or_else(|| Error::Config("out: no output path in the spec or on the command line".into()))?;
            let ds = spec_file.dataset.build(seed, spec.parent())?;
            save_csv(&ds, &out)?;
            println!("wrote {} rows x {} features to {}", ds.n_samples(), ds.n_features(), out.display());
        }
        Command::Gini { config, seed, out } => {
            let mut cfg = ExperimentConfig::load_unchecked(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            let (table, bytes) = gini_scores(&cfg, config.parent())?;
            let path = match out {
                Some(p) => p,
                None => {
                    let dir = fedsdg::experiment::runner::out_dir(&cfg);
                    std::fs::create_dir_all(&dir)?;
                    dir.join("gini.csv")
                }
            };
            table.write_csv(&path)?;
            println!("wrote {} scores to {} ({bytes} bytes exchanged)", table.score.len(), path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedsdg::Party;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        let e = Error::Protocol {
            round: 4,
            party: Party::Server,
            msg: "mask consumed twice".into(),
        };
        assert_eq!(exit_code(&e), 3);
        assert_eq!(exit_code(&Error::Transport("closed".into())), 3);
        assert_eq!(exit_code(&Error::Numeric("nan".into())), 1);
    }
}
