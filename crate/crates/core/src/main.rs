use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use onoma::sim::{presets, run, RunError, RunOptions, ScenarioConfig};

/// Simulator for NOMA in indoor visible light downlinks.
///
/// CONFIG is a TOML scenario file or `preset:NAME` for a bundled preset.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its CSV outputs and manifest.json.
    Run {
        config: String,
        /// Output directory.
        #[arg(long, env = "ONOMA_OUT_DIR", default_value = "out")]
        out: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long, env = "ONOMA_THREADS")]
        threads: Option<usize>,
    },
    /// Check a scenario and list every violation.
    Validate { config: String },
    /// Bundled presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List preset names.
    List,
    /// Print a preset's TOML.
    Show { name: String },
}

/// Loads a config; the second value is the directory for relative paths.
fn load(source: &str) -> Result<(ScenarioConfig, Option<PathBuf>), RunError> {
    let (text, base) = match source.strip_prefix("preset:") {
        Some(name) => {
            let p = presets::find(name).ok_or_else(|| {
                RunError::Invalid(vec![onoma::sim::Violation {
                    key: "<preset>".into(),
                    message: format!("unknown preset `{name}`"),
                }])
            })?;
            (p.toml.to_string(), None)
        }
        None => {
            let path = Path::new(source);
            let text = std::fs::read_to_string(path).map_err(|e| {
                RunError::Invalid(vec![onoma::sim::Violation {
                    key: "<file>".into(),
                    message: format!("cannot read {source}: {e}"),
                }])
            })?;
            (text, path.parent().map(Path::to_path_buf))
        }
    };
    let cfg = ScenarioConfig::from_toml(&text).map_err(RunError::Invalid)?;
    Ok((cfg, base))
}

fn execute(cmd: Command) -> Result<(), RunError> {
    match cmd {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => {
            let (cfg, base_dir) = load(&config)?;
            let manifest = run(
                &cfg,
                &RunOptions {
                    out_dir: out.clone(),
                    seed,
                    threads,
                    base_dir,
                },
            )?;
            let n: usize = manifest.outputs.values().map(Vec::len).sum();
            println!(
                "wrote {n} file(s) and manifest.json to {} (digest {})",
                out.display(),
                &manifest.config_digest[..12]
            );
        }
        Command::Validate { config } => {
            let (cfg, _) = load(&config)?;
            let violations = cfg.validate();
            if !violations.is_empty() {
                return Err(RunError::Invalid(violations));
            }
            println!("ok");
        }
        Command::Presets { action } => match action {
            PresetAction::List => {
                for p in presets::PRESETS {
                    println!("{:<10} {}", p.name, p.description);
                }
            }
            PresetAction::Show { name } => match presets::find(&name) {
                Some(p) => print!("{}", p.toml),
                None => {
                    return Err(RunError::Invalid(vec![onoma::sim::Violation {
                        key: "<preset>".into(),
                        message: format!("unknown preset `{name}`"),
                    }]))
                }
            },
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
