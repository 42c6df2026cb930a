use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use twoscale::app::{exit_code, run};
use twoscale::config::{split_override, RunConfig};

/// Two-scale simulation of diffusion in a deforming perforated medium.
#[derive(Parser, Debug)]
#[command(name = "twoscale", version)]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// cells-only, simulate, convergence or sweep.
    #[arg(long)]
    mode: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<u32>,
    /// `section.key=value`, applied last. May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn load(cli: &Cli) -> twoscale::Result<RunConfig> {
    let quote = |s: &str| toml::Value::String(s.to_string()).to_string();
    let mut overrides = Vec::new();
    if let Some(m) = &cli.mode {
        overrides.push(("mode".to_string(), quote(m)));
    }
    if let Some(o) = &cli.out {
        overrides.push(("output.directory".to_string(), quote(&o.to_string_lossy())));
    }
    if let Some(w) = cli.workers {
        overrides.push(("parallel.workers".to_string(), w.to_string()));
    }
    for s in &cli.set {
        let (k, v) = split_override(s)?;
        overrides.push((k.to_string(), v.to_string()));
    }
    RunConfig::load(cli.config.as_deref(), &overrides)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = load(&cli).and_then(|config| {
        if config.parallel.workers > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.parallel.workers as usize)
                .build_global()
                .map_err(|e| twoscale::Error::Config { key: "parallel.workers".into(), message: e.to_string() })?;
        }
        run(&config)
    });
    match result {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
