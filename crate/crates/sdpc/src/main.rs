use clap::{Parser, Subcommand};
use sdpc::cli::{commands, RunConfig};
use sdpc::error::Result;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "sdpc", about = "Hierarchical convolutional sparse coding with feedback", version)]
struct Cli {
    /// Configuration file (flat key=value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. --set net.k_fb=2
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (out.dir)
    #[arg(long, global = true)]
    out: Option<String>,

    /// Run seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, contrast-normalize and whiten the dataset into the cache
    Preprocess,
    /// Train the network on the preprocessed training split
    Train {
        /// Number of epochs (train.epochs)
        #[arg(long)]
        epochs: Option<usize>,
        /// Train on only the first N images (train.subset)
        #[arg(long)]
        subset: Option<usize>,
        /// Layer-1 learning rate (train.eta_l1)
        #[arg(long = "eta-l1")]
        eta_l1: Option<f32>,
        /// Layer-2 learning rate (train.eta_l2)
        #[arg(long = "eta-l2")]
        eta_l2: Option<f32>,
    },
    /// Denoising sweep over noise levels and feedback strengths
    Denoise {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Interaction maps, region statistics and activity ratios
    Maps {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of preferred orientations (exp.theta_grid; 0 = every
        /// retained feature)
        #[arg(long = "theta-grid")]
        theta_grid: Option<usize>,
    },
    /// Active-unit fractions per feedback strength
    Sparsity {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Receptive-field mosaics ranked by activation probability
    ShowRfs {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_text(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    for pair in &cli.overrides {
        let (k, v) = pair.split_once('=').ok_or_else(|| {
            sdpc::SdpcError::Config(format!("--set expects KEY=VALUE, got '{pair}'"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = build_config(&cli)?;
    match &cli.command {
        Command::Preprocess => commands::cmd_preprocess(&cfg),
        Command::Train {
            epochs,
            subset,
            eta_l1,
            eta_l2,
        } => {
            if let Some(e) = epochs {
                cfg.epochs = *e;
            }
            if let Some(s) = subset {
                cfg.subset = *s;
            }
            if let Some(eta) = eta_l1 {
                cfg.eta_l[0] = *eta;
            }
            if let Some(eta) = eta_l2 {
                if cfg.eta_l.len() > 1 {
                    cfg.eta_l[1] = *eta;
                }
            }
            commands::cmd_train(&cfg).map(|_| ())
        }
        Command::Denoise { checkpoint } => commands::cmd_denoise(&cfg, checkpoint),
        Command::Maps {
            checkpoint,
            theta_grid,
        } => {
            if let Some(t) = theta_grid {
                cfg.theta_grid = *t;
            }
            commands::cmd_maps(&cfg, checkpoint)
        }
        Command::Sparsity { checkpoint } => commands::cmd_sparsity(&cfg, checkpoint),
        Command::ShowRfs { checkpoint } => commands::cmd_show_rfs(&cfg, checkpoint),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
