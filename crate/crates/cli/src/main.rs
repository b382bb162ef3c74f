use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use cuebits::dataset::{generate_synthetic, save_dataset, SyntheticConfig};
use cuebits::index::Backend;
use cuebits::sweep::{merge_summaries, run_sweep, write_outputs, DatasetSource, RunConfig};
use cuebits::Error;

#[derive(Parser)]
#[command(name = "cuebits", version, about = "Cue-augmented binary descriptor sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (manifest, descriptor files, ground truth).
    Generate {
        /// Synthetic generator settings; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate every (backend, λ) cell of a run config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `output_dir` from the config, then `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_parser = parse_backend)]
        backend: Vec<Backend>,
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Concatenate sweep summaries.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Written to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse::<Backend>().map_err(|e| e.to_string())
}

fn generate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> anyhow::Result<()> {
    let mut synthetic = match config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SyntheticConfig>(&text)
                .map_err(|e| Error::Config(vec![e.to_string().trim_end().to_string()]))?
        }
        None => SyntheticConfig::default(),
    };
    if let Some(seed) = seed {
        synthetic.seed = seed;
    }
    let dataset = generate_synthetic(&synthetic)?;
    let manifest = save_dataset(&dataset, out)?;
    fs::write(out.join("synthetic.toml"), toml::to_string(&synthetic)?)
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{} images, {} descriptors -> {}",
        dataset.images.len(),
        dataset.descriptor_count(),
        manifest.display()
    );
    Ok(())
}

fn run(
    config: &Path,
    out: Option<PathBuf>,
    backends: Vec<Backend>,
    lambdas: Vec<u32>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let mut config = RunConfig::load(config)?;
    if !backends.is_empty() {
        config.backends = backends;
    }
    if !lambdas.is_empty() {
        config.lambdas = Some(lambdas);
    }
    if seed.is_some() {
        config.seed = seed;
    }
    let out = out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    if let DatasetSource::Manifest { path } = &config.dataset {
        if !path.exists() {
            bail!("dataset manifest {} does not exist", path.display());
        }
    }
    let outcome = run_sweep(&config)?;
    write_outputs(&outcome, &out)?;
    println!("backend\tlambda\ttau\tmAP");
    for r in &outcome.reports {
        println!("{}\t{}\t{}\t{:.4}", r.backend, r.lambda, r.tau, r.map);
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn report(inputs: &[PathBuf], out: Option<&Path>) -> anyhow::Result<()> {
    let merged = merge_summaries(inputs)?;
    match out {
        Some(path) => fs::write(path, merged).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", String::from_utf8(merged)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { config, out, seed } => generate(config.as_deref(), &out, seed),
        Command::Run {
            config,
            out,
            backend,
            lambda,
            seed,
        } => run(&config, out, backend, lambda, seed),
        Command::Report { inputs, out } => report(&inputs, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<Error>() {
                Some(Error::Config(problems)) => {
                    eprintln!("invalid configuration:");
                    for p in problems {
                        eprintln!("  {p}");
                    }
                }
                _ => eprintln!("error: {e:#}"),
            }
            ExitCode::from(2)
        }
    }
}
