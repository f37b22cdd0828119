use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use unitden::pipeline::{Pipeline, PipelineConfig, Stage, StageStatus};
use unitden::Error;

#[derive(Parser, Debug)]
#[command(name = "unitden", version, about = "Robust discrete speech unit pipeline")]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "configs/toy.conf")]
    config: PathBuf,
    /// Work directory holding every stage output.
    #[arg(long, global = true, default_value = "work")]
    workdir: PathBuf,
    /// Replaces `run.seed` from the config.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes the synthetic clean corpus and its train/valid/test splits.
    Synth,
    /// Builds the noisy and reverberant training, validation and test sets.
    Augment,
    /// Dumps layer-stack features for clean and augmented audio.
    Extract,
    /// Fits the unit codebook on a subset of clean training features.
    TrainKmeans,
    /// Turns features into deduplicated unit sequences.
    Quantize,
    /// Trains the unit denoiser on augmented features against clean units.
    TrainDenoiser,
    /// Beam-decodes the test set with the trained denoiser.
    Decode,
    /// Scores decoded units, or an explicit hypothesis file, against clean units.
    Eval {
        #[arg(long)]
        hyp: Option<PathBuf>,
    },
    /// Fine-tunes the encoder on 1..N recordings of the target environment.
    Adapt,
    /// Collects training, evaluation and adaptation results into report.md.
    Report,
    /// Trains and scores each listed variant (defaults to `ablate.variants`).
    Ablate {
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Every stage from synth to report.
    Run,
    /// Prints the effective configuration.
    ShowConfig,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. } | Error::InvalidConfig(_) | Error::UnknownVariant(_)) => 2,
        Some(Error::StaleInput { .. } | Error::MissingArtifact { .. }) => 3,
        Some(Error::Numerical(_)) => 4,
        _ => 1,
    }
}

fn report(stage: Stage, status: StageStatus) {
    match status {
        StageStatus::Ran => eprintln!("{stage}: done"),
        StageStatus::UpToDate => eprintln!("{stage}: up to date"),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed_override {
        config.seed = seed;
    }
    if let Command::Ablate { variants } = &cli.command {
        if !variants.is_empty() {
            config.ablate_variants = variants.clone();
        }
    }
    if let Command::ShowConfig = cli.command {
        config.validate()?;
        print!("{}", config.to_text());
        return Ok(());
    }
    let pipeline = Pipeline::open(&cli.workdir, config)?;
    let stage = match cli.command {
        Command::Synth => Stage::Synth,
        Command::Augment => Stage::Augment,
        Command::Extract => Stage::Extract,
        Command::TrainKmeans => Stage::TrainKmeans,
        Command::Quantize => Stage::Quantize,
        Command::TrainDenoiser => Stage::TrainDenoiser,
        Command::Decode => Stage::Decode,
        Command::Eval { hyp: Some(hyp) } => {
            let r = pipeline.evaluate_file(&hyp)?;
            print!("{}", r.render_table("hypothesis"));
            return Ok(());
        }
        Command::Eval { hyp: None } => Stage::Eval,
        Command::Adapt => Stage::Adapt,
        Command::Report => Stage::Report,
        Command::Ablate { .. } => Stage::Ablate,
        Command::Run => {
            pipeline.run_all(report)?;
            print!("{}", std::fs::read_to_string(pipeline.path("report.md"))?);
            return Ok(());
        }
        Command::ShowConfig => unreachable!(),
    };
    let status = pipeline.run_stage(stage)?;
    report(stage, status);
    let shown = match stage {
        Stage::Eval => Some("eval/table.txt"),
        Stage::Ablate => Some("ablate/table.txt"),
        Stage::Report => Some("report.md"),
        _ => None,
    };
    if let Some(rel) = shown {
        print!("{}", std::fs::read_to_string(pipeline.path(rel))?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
