use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ddgae::eval::table_row;
use ddgae::graph::DatasetName;
use ddgae::{Error, ErrorClass, ExperimentConfig, Precision};

mod fetch;
mod runs;

#[derive(Parser)]
#[command(
    name = "ddgae",
    version,
    about = "Diffusion graph autoencoder: train, embed, evaluate",
    after_help = "Datasets are cached under $DDGAE_DATA (default ~/.cache/ddgae).\nExit codes: 0 ok, 2 config, 3 data, 4 numeric, 1 other."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download and cache a TU dataset.
    Fetch {
        #[arg(long)]
        dataset: DatasetName,
        /// Expected SHA-256 of the archive.
        #[arg(long)]
        sha256: Option<String>,
        #[arg(long, env = fetch::BASE_URL_ENV, default_value = fetch::DEFAULT_BASE_URL)]
        base_url: String,
        /// Download again even when cached.
        #[arg(long)]
        force: bool,
    },
    /// Train a model; prints the checkpoint path.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Extract embeddings for the checkpoint's dataset.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output file (default: embeddings.bin beside the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the SVM protocol on one or more embedding files.
    Eval {
        #[arg(long = "embeddings", required = true, num_args = 1..)]
        embeddings: Vec<PathBuf>,
        /// Evaluation settings (default: config.toml beside the first file).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report directory (default: beside the first file).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accept inputs whose config hashes differ.
        #[arg(long)]
        force: bool,
    },
    /// Fetch, train, embed and evaluate; prints a table row.
    Repro {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, env = fetch::BASE_URL_ENV, default_value = fetch::DEFAULT_BASE_URL)]
        base_url: String,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// PROTEINS or IMDB-BINARY.
    #[arg(long)]
    dataset: Option<DatasetName>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Drop graphs with more nodes than this.
    #[arg(long)]
    max_nodes: Option<usize>,
    /// Use a class-balanced subset of this many graphs.
    #[arg(long)]
    subset: Option<usize>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<Precision>,
    /// Root directory for run directories.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = self.dataset {
            cfg.dataset = d;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if self.max_nodes.is_some() {
            cfg.max_nodes = self.max_nodes;
        }
        if self.subset.is_some() {
            cfg.subset = self.subset;
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report_fetch(name: DatasetName, status: &fetch::FetchStatus) {
    match status {
        fetch::FetchStatus::Downloaded { sha256 } => {
            eprintln!("fetch: {name} downloaded, sha256 {sha256}")
        }
        fetch::FetchStatus::Cached { sha256: Some(h) } => {
            eprintln!("fetch: {name} cached, sha256 {h}")
        }
        fetch::FetchStatus::Cached { sha256: None } => {
            eprintln!("fetch: {name} cached (files provided locally, no archive digest)")
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fetch {
            dataset,
            sha256,
            base_url,
            force,
        } => {
            let root = ExperimentConfig::default().data_root();
            let status = fetch::fetch(&root, dataset, &base_url, sha256.as_deref(), force)
                .context("fetch")?;
            report_fetch(dataset, &status);
            let ds = ddgae::graph::load_tudataset(&ddgae::graph::raw_dir(&root, dataset), dataset)
                .context("fetch")?;
            println!("{}", ddgae::graph::raw_dir(&root, dataset).display());
            eprintln!(
                "fetch: {} graphs, {} classes, mean {:.2} nodes",
                ds.graphs.len(),
                ds.num_classes(),
                ds.stats.mean_nodes
            );
        }
        Command::Train { cfg, resume } => {
            let cfg = cfg.resolve().context("config")?;
            let dir = runs::run_dir(&cfg.out_dir, &cfg.config_hash())?;
            let ckpt = runs::train_stage(&cfg, &dir, resume.as_deref()).context("train")?;
            println!("{}", ckpt.display());
        }
        Command::Embed { checkpoint, out } => {
            let path = runs::embed_stage(&checkpoint, out.as_deref(), None).context("embed")?;
            println!("{}", path.display());
        }
        Command::Eval {
            embeddings,
            config,
            out,
            force,
        } => {
            let set = runs::load_embeddings(&embeddings, force).context("eval")?;
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p).context("config")?,
                None => runs::sibling_config(&embeddings[0])
                    .context("config")?
                    .unwrap_or_default(),
            };
            let dir = out.unwrap_or_else(|| {
                embeddings[0]
                    .parent()
                    .map(|p| p.to_path_buf())
                    .unwrap_or_default()
            });
            let report = runs::eval_stage(&set, &cfg, &dir, force).context("eval")?;
            println!("{}", table_row(&report));
        }
        Command::Repro { cfg, base_url } => {
            let cfg = cfg.resolve().context("config")?;
            let root = cfg.data_root();
            let status =
                fetch::fetch(&root, cfg.dataset, &base_url, None, false).context("fetch")?;
            report_fetch(cfg.dataset, &status);
            let dir = runs::run_dir(&cfg.out_dir, &cfg.config_hash())?;
            let ckpt = runs::train_stage(&cfg, &dir, None).context("train")?;
            let emb = runs::embed_stage(&ckpt, None, Some(&root)).context("embed")?;
            let set = runs::load_embeddings(&[emb], false).context("eval")?;
            let report = runs::eval_stage(&set, &cfg, &dir, false).context("eval")?;
            eprintln!("repro: artifacts in {}", dir.display());
            println!("{}", table_row(&report));
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let class = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(Error::class);
    match class {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Data) => 3,
        Some(ErrorClass::Numeric) => 4,
        _ => 1,
    }
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
