use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cos_cvae::commands::{self, EvalMode};
use cos_cvae::config::{Profile, RunConfig};
use cos_cvae::corpus::SplitRole;
use cos_cvae::pseudosup::PseudoMode;

#[derive(Parser)]
#[command(name = "coscvae", version, about = "Diverse captioning with a context-object split latent model")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat key = value overrides applied on top of the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "toy")]
    profile: String,
    /// Weight of the pseudo objective, in [0, 1].
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    neighbors_k: Option<usize>,
    #[arg(long, global = true)]
    samples_n: Option<usize>,
    /// Comma-separated objects whose captions are withheld from training.
    #[arg(long, global = true)]
    held_out: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic raw inputs.
    Toyworld {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_images: Option<usize>,
    },
    /// Validate raw inputs and write a dataset bundle.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the joint embedding and build the neighbor index.
    Embed {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the captioner, optionally continuing from a checkpoint with pseudo captions.
    Train {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        pseudo: Option<PathBuf>,
        /// Pseudo mode (standard or novel) used to rebuild weak evidence.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build pseudo captions from retrieved contexts.
    Pseudo {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// standard or novel
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample captions for every image of a split.
    Sample {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a samples file.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// oracle, consensus, diversity or f1
        #[arg(long)]
        mode: String,
        #[arg(long, default_value = "test")]
        split: String,
        /// Object to score in f1 mode (repeatable); defaults to the held-out set.
        #[arg(long)]
        object: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn role(s: &str) -> Result<SplitRole> {
    match s {
        "train" => Ok(SplitRole::Train),
        "val" => Ok(SplitRole::Val),
        "test" => Ok(SplitRole::Test),
        _ => anyhow::bail!("--split: unknown split {s:?} (expected train, val or test)"),
    }
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let profile: Profile = c.profile.parse().context("--profile")?;
    let mut cfg = RunConfig::profile(profile);
    if let Some(p) = &c.config {
        cfg.apply_file(p).with_context(|| format!("--config {}", p.display()))?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(a) = c.alpha {
        cfg.train.alpha = a;
    }
    if let Some(k) = c.neighbors_k {
        cfg.pseudo.neighbors_k = k;
    }
    if let Some(n) = c.samples_n {
        cfg.samples_n = n;
    }
    if let Some(h) = &c.held_out {
        cfg.set("held_out", h).context("--held-out")?;
    }
    cfg.validate().context("configuration (check --config and flags)")?;
    Ok(cfg)
}

fn set_mode(cfg: &mut RunConfig, mode: &Option<String>) -> Result<()> {
    if let Some(m) = mode {
        cfg.pseudo.mode = m.parse::<PseudoMode>().context("--mode")?;
    }
    Ok(())
}

fn report(outputs: &[PathBuf]) {
    for o in outputs {
        println!("wrote {}", o.display());
    }
}

fn need(p: &Path, flag: &str) -> Result<()> {
    anyhow::ensure!(p.exists(), "{flag}: {} does not exist", p.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.common)?;
    match cli.cmd {
        Cmd::Toyworld { out, n_images } => {
            if let Some(n) = n_images {
                cfg.n_images = n;
            }
            report(&commands::cmd_toyworld(&cfg, &out)?);
        }
        Cmd::Prepare { input, out } => {
            need(&input, "--input")?;
            report(&commands::cmd_prepare(&cfg, &input, &out)?);
        }
        Cmd::Embed { bundle, out } => {
            need(&bundle, "--bundle")?;
            report(&commands::cmd_embed(&cfg, &bundle, &out)?);
        }
        Cmd::Train {
            bundle,
            init,
            pseudo,
            mode,
            out,
        } => {
            need(&bundle, "--bundle")?;
            if let Some(p) = &init {
                need(p, "--init")?;
            }
            if let Some(p) = &pseudo {
                need(p, "--pseudo")?;
            }
            set_mode(&mut cfg, &mode)?;
            report(&commands::cmd_train(&cfg, &bundle, init.as_deref(), pseudo.as_deref(), &out)?);
        }
        Cmd::Pseudo {
            bundle,
            index,
            checkpoint,
            mode,
            out,
        } => {
            need(&bundle, "--bundle")?;
            need(&index, "--index")?;
            need(&checkpoint, "--checkpoint")?;
            set_mode(&mut cfg, &mode)?;
            report(&commands::cmd_pseudo(&cfg, &bundle, &index, &checkpoint, &out)?);
        }
        Cmd::Sample {
            bundle,
            checkpoint,
            split,
            out,
        } => {
            need(&bundle, "--bundle")?;
            need(&checkpoint, "--checkpoint")?;
            report(&commands::cmd_sample(&cfg, &bundle, &checkpoint, role(&split)?, &out)?);
        }
        Cmd::Eval {
            samples,
            bundle,
            mode,
            split,
            object,
            out,
        } => {
            need(&samples, "--samples")?;
            need(&bundle, "--bundle")?;
            let mode: EvalMode = mode.parse().context("--mode")?;
            let r = commands::cmd_eval(&cfg, &samples, &bundle, role(&split)?, mode, &object, &out)?;
            print!("{}", r.to_table());
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
