use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use echosplit::decomposition::Method;
use echosplit_cli::stages::{self, MetricRow};
use echosplit_cli::{Ctx, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "echosplit", version, about = "Split ultrasound channel data into strong reflectors and background, code and image them")]
struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    /// Use the propagation-aware (modified) decomposition.
    #[arg(long, global = true)]
    modified: bool,
    /// Channel-data frame; defaults to `<out>/frame.usrf`.
    #[arg(long, global = true)]
    frame: Option<PathBuf>,
    /// Dictionary file; defaults to `<out>/dictionary.usdk`.
    #[arg(long, global = true)]
    dictionary: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Stft,
    Iq,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a phantom and write the channel frame plus ground truth.
    Simulate,
    /// Learn the background dictionary from the decomposed background.
    Train,
    /// Separate strong reflectors from the background in every channel.
    Decompose,
    /// Sparse-code the background channels.
    Encode,
    /// Beamform the coded background and place the localized reflectors.
    Beamform,
    /// Write B-mode images of everything available.
    Render,
    /// Image quality and compression metrics.
    Evaluate {
        #[arg(long, requires = "image")]
        reference: Option<PathBuf>,
        #[arg(long, requires = "reference")]
        image: Option<PathBuf>,
    },
    /// Decompose, encode, beamform, render and evaluate an existing frame,
    /// training a dictionary after decomposition if none exists.
    Pipeline,
}

fn context(cli: &Cli) -> Result<Ctx> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(m) = cli.method {
        cfg.decomposition.method = match m {
            MethodArg::Stft => Method::Stft,
            MethodArg::Iq => Method::Iq,
        };
    }
    if cli.modified {
        cfg.decomposition.modified = true;
    }
    cfg.validate()?;
    let mut ctx = Ctx::new(cfg, &cli.out);
    if let Some(f) = &cli.frame {
        ctx.frame = f.clone();
    }
    if let Some(d) = &cli.dictionary {
        ctx.dictionary = d.clone();
    }
    Ok(ctx)
}

fn print_rows(rows: &[MetricRow]) {
    println!("{:<12} {:<12} {:>10} {:>9} {:>7} {:>8}", "tag", "component", "mse", "psnr_db", "ssim", "coeffs%");
    for r in rows {
        let pct = r.percent_coeffs.map_or("-".to_string(), |p| format!("{p:.2}"));
        println!(
            "{:<12} {:<12} {:>10.3} {:>9.2} {:>7.4} {:>8}",
            r.tag, r.component, r.mse, r.psnr_db, r.ssim, pct
        );
    }
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = context(cli)?;
    match &cli.command {
        Command::Simulate => stages::simulate(&ctx),
        Command::Train => stages::train(&ctx),
        Command::Decompose => stages::decompose(&ctx),
        Command::Encode => stages::encode(&ctx),
        Command::Beamform => stages::beamform(&ctx),
        Command::Render => stages::render(&ctx),
        Command::Evaluate { reference, image } => {
            let rows = match (reference, image) {
                (Some(r), Some(i)) => vec![stages::evaluate_pair(&ctx, r, i)?],
                _ => stages::evaluate(&ctx)?,
            };
            print_rows(&rows);
            Ok(())
        }
        Command::Pipeline => {
            print_rows(&stages::pipeline(&ctx)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
