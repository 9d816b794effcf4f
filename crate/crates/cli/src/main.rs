use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use simplexae_cli::{
    cmd_deconv, cmd_eval, cmd_gen_data, cmd_latent_export, cmd_sample, cmd_train, CliError, CliResult, Layout,
    RunConfig,
};

/// Simplex-latent autoencoder pipeline.
#[derive(Debug, Parser)]
#[command(name = "simplexae", version)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (also the default data and checkpoint location).
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate (or import) the dataset and its split manifest.
    GenData,
    /// Train the autoencoder on the train split.
    Train,
    /// Draw latents, decode them, write samples and latent CSV.
    Sample,
    /// Write the metric report.
    Eval,
    /// Richardson-Lucy deconvolution of a PGM/PPM/SXTN image.
    Deconv {
        input: Option<PathBuf>,
        output: Option<PathBuf>,
    },
    /// Encode a split and write its latents with labels as CSV.
    LatentExport { output: Option<PathBuf> },
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<String> {
    let cfg = load_config(cli)?;
    let layout = Layout::new(&cfg, &cli.out);
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg, &layout),
        Command::Train => cmd_train(&cfg, &layout),
        Command::Sample => cmd_sample(&cfg, &layout),
        Command::Eval => cmd_eval(&cfg, &layout),
        Command::Deconv { input, output } => cmd_deconv(&cfg, input.as_deref(), output.as_deref()),
        Command::LatentExport { output } => cmd_latent_export(&cfg, &layout, output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments");
            let err = CliError::usage(first.trim_start_matches("error: "));
            eprintln!("error: {err}");
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
