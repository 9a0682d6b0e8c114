use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lieconv::autodiff::load_checkpoint;
use lieconv::harness::{
    ablate_samples, equivariance_test, evaluate_checkpoints, gen_dataset, sample_haar, train, ExperimentConfig,
    HarnessError, TrainOptions,
};

#[derive(Parser)]
#[command(name = "lieconv", version, about = "Lie group convolution experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Config file, or a bundled profile name (toy-affine, toy-hom,
    /// paper-affine, paper-hom).
    #[arg(long)]
    config: String,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes checkpoints, metrics.csv and summary.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Start from this checkpoint instead of a fresh initialisation.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate one or more checkpoints on the configured splits.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
    },
    /// Measure lifting and group-convolution equivariance error.
    EquivarianceTest {
        #[command(flatten)]
        common: Common,
        /// Parameters to test; the seeded initialisation when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep convolution and pooling sample counts from a shared initialisation.
    AblateSamples {
        #[command(flatten)]
        common: Common,
    },
    /// Draw Haar samples and write them as CSV with chain diagnostics.
    SampleHaar {
        #[command(flatten)]
        common: Common,
    },
    /// Write a Haar-warped copy of a dataset split as LGWD.
    GenDataset {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let mut cfg = ExperimentConfig::load_or_profile(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    let out = cfg.out_dir.clone();
    Ok((cfg, out))
}

fn run(cmd: Cmd) -> Result<(), HarnessError> {
    match cmd {
        Cmd::Train { common, checkpoint } => {
            let (cfg, out) = load(&common)?;
            let init = checkpoint.map(|p| load_checkpoint(&p)).transpose()?;
            let o = train(&cfg, &out, TrainOptions { init })?;
            for r in &o.final_eval {
                println!("{}\t{:.4}", r.split, r.accuracy);
            }
            println!("checkpoint\t{}", o.last_checkpoint.display());
        }
        Cmd::Eval { common, checkpoint } => {
            let (cfg, out) = load(&common)?;
            let s = evaluate_checkpoints(&cfg, &checkpoint, &out)?;
            for a in &s.aggregate {
                println!("{}\t{:.4}\t±{:.4}\t(n={})", a.split, a.mean_accuracy, a.stderr, a.runs);
            }
        }
        Cmd::EquivarianceTest { common, checkpoint } => {
            let (cfg, out) = load(&common)?;
            let params = checkpoint.map(|p| load_checkpoint(&p)).transpose()?;
            let rows = equivariance_test(&cfg, params.as_ref(), Some(&out))?;
            for r in &rows {
                let n = r.samples.map(|n| format!("N={n}")).unwrap_or_default();
                println!("{}\t{}\t{}px\t{}\t{:.6e}", r.layer, r.group, r.width, n, r.error);
            }
        }
        Cmd::AblateSamples { common } => {
            let (cfg, out) = load(&common)?;
            let r = ablate_samples(&cfg, &out)?;
            println!("conv\tpool\tclean\twarped");
            for row in r.conv.iter().chain(&r.pool) {
                let w = row.warped_accuracy.map(|a| format!("{a:.4}")).unwrap_or_default();
                println!("{}\t{}\t{:.4}\t{w}", row.conv_samples, row.pool_samples, row.clean_accuracy);
            }
        }
        Cmd::SampleHaar { common } => {
            let (cfg, out) = load(&common)?;
            let r = sample_haar(&cfg, &out)?;
            println!("samples\t{}", r.samples.len());
            println!("acceptance_rate\t{:.4}", r.samples.acceptance_rate());
        }
        Cmd::GenDataset { common } => {
            let (cfg, out) = load(&common)?;
            let d = gen_dataset(&cfg, &out)?;
            println!("images\t{}", d.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
