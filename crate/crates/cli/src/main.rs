use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use replab::analysis::ParityFilter;
use replab::probe::ProbeConfig;
use replab::toytrain::ToyConfig;
use replab::{Method, Result};
use replab_cli::commands::{cmd_classsim, cmd_cka, cmd_diagmax, cmd_invariance, cmd_probe, cmd_toy};
use replab_cli::replicate::cmd_replicate;
use replab_cli::{exit, exit_code};

#[derive(Parser)]
#[command(name = "replab", version, about = "Layer-wise representation similarity: CKA grids, invariance, class alignment, probes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParityArg {
    All,
    Odd,
    Even,
}

impl From<ParityArg> for ParityFilter {
    fn from(p: ParityArg) -> Self {
        match p {
            ParityArg::All => ParityFilter::All,
            ParityArg::Odd => ParityFilter::Odd,
            ParityArg::Even => ParityFilter::Even,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    Supervised,
    Contrastive,
}

impl From<Objective> for Method {
    fn from(o: Objective) -> Self {
        match o {
            Objective::Supervised => Method::Supervised,
            Objective::Contrastive => Method::Contrastive,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// CKA grid between the layers of two runs.
    Cka {
        manifest_a: PathBuf,
        manifest_b: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        parity: ParityArg,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_svg: Option<PathBuf>,
    },
    /// Per-layer CKA with the corresponding layer (diag) and the best match (max).
    Diagmax {
        manifest_a: PathBuf,
        manifest_b: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        parity: ParityArg,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// CKA between two augmented passes over the same samples.
    Invariance {
        manifest_view1: PathBuf,
        manifest_view2: PathBuf,
        /// Every layer against every layer instead of corresponding layers.
        #[arg(long)]
        all_pairs: bool,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_svg: Option<PathBuf>,
    },
    /// CKA of every layer with the one-hot class matrix.
    Classsim {
        manifest: PathBuf,
        labels_file: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Linear probe accuracy per layer.
    Probe {
        manifest: PathBuf,
        labels_file: PathBuf,
        #[arg(long, default_value_t = ProbeConfig::default().l2_penalty)]
        l2: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Train a toy residual network and dump its layers.
    Toy {
        /// JSON config; built-in defaults when omitted.
        config_file: Option<PathBuf>,
        #[arg(long, value_enum)]
        objective: Objective,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Two seeds of each objective, every curve and grid, and a pass/fail report.
    Replicate {
        #[arg(long)]
        out_dir: PathBuf,
        /// JSON config overriding the built-in toy defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cka {
            manifest_a,
            manifest_b,
            parity,
            out_csv,
            out_svg,
        } => {
            cmd_cka(&manifest_a, &manifest_b, parity.into(), &out_csv, out_svg.as_deref())?;
        }
        Command::Diagmax {
            manifest_a,
            manifest_b,
            parity,
            out_csv,
        } => {
            cmd_diagmax(&manifest_a, &manifest_b, parity.into(), &out_csv)?;
        }
        Command::Invariance {
            manifest_view1,
            manifest_view2,
            all_pairs,
            out_csv,
            out_svg,
        } => {
            cmd_invariance(&manifest_view1, &manifest_view2, all_pairs, &out_csv, out_svg.as_deref())?;
        }
        Command::Classsim {
            manifest,
            labels_file,
            out_csv,
        } => {
            cmd_classsim(&manifest, &labels_file, &out_csv)?;
        }
        Command::Probe {
            manifest,
            labels_file,
            l2,
            split_seed,
            out_csv,
        } => {
            let cfg = ProbeConfig {
                l2_penalty: l2,
                split_seed,
                ..ProbeConfig::default()
            };
            cmd_probe(&manifest, &labels_file, &cfg, &out_csv)?;
        }
        Command::Toy {
            config_file,
            objective,
            seed,
            out_dir,
        } => {
            let run = cmd_toy(config_file.as_deref(), objective.into(), seed, &out_dir)?;
            if let Some(loss) = run.log.final_loss() {
                eprintln!("{}: final training loss {loss:.6}", run.info.model_id);
            }
        }
        Command::Replicate { out_dir, config } => {
            let cfg = match config {
                Some(path) => ToyConfig::read(&path)?,
                None => ToyConfig::default(),
            };
            let report = cmd_replicate(&cfg, &out_dir)?;
            print!("{}", report.to_text());
            eprintln!("finished in {:.1} s", report.seconds);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::INPUT as u8 } else { exit::SUCCESS as u8 });
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::from(exit::SUCCESS as u8),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
        Err(_) => ExitCode::from(exit::INTERNAL as u8),
    }
}
