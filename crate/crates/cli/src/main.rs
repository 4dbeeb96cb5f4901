//! `spectok`: generate synthetic graph datasets, dump Laplacian spectra
//! and spectral tokens, train and evaluate the model, and verify its
//! gradients.
//!
//! Exit codes: 0 success, 2 configuration/argument error, 3 data error,
//! 4 verification failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spectok::model::Variant;
use spectok::Error;

#[derive(Parser)]
#[command(name = "spectok", version, about)]
struct Cli {
    /// Worker threads for per-sample gradient computation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    #[value(name = "subformer_spec")]
    SubformerSpec,
    #[value(name = "graphtrans_spec")]
    GraphtransSpec,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::SubformerSpec => Variant::SubformerSpec,
            VariantArg::GraphtransSpec => Variant::GraphtransSpec,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic molecule-like dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Number of graphs.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        min_size: usize,
        #[arg(long, default_value_t = 24)]
        max_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dump graph/tree eigenvalues and the spectral token per graph.
    Spectrum {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 16)]
        k_graph: usize,
        #[arg(long, default_value_t = 16)]
        k_tree: usize,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for the token weights.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Split a dataset, train, and write metrics + best checkpoint.
    Train {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare model gradients against finite differences on a small graph.
    Gradcheck {
        /// Optional run configuration (its model section is used).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "subformer_spec")]
        variant: VariantArg,
        /// Rejected: stochastic dropout masks are not differentiable.
        #[arg(long)]
        force_dropout: bool,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Checkpoint(_) => 2,
        Error::Parse { .. } | Error::Validation { .. } | Error::Io(_) => 3,
        Error::Contract(_) | Error::Vocab(_) => 3,
        Error::Numeric(_) | Error::Dim(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: spectok::Result<bool> = match &cli.cmd {
        Cmd::Generate {
            out,
            n,
            min_size,
            max_size,
            seed,
        } => commands::generate(out, *n, *min_size, *max_size, *seed).map(|_| true),
        Cmd::Spectrum {
            data,
            k_graph,
            k_tree,
            out,
            seed,
        } => commands::spectrum(data, *k_graph, *k_tree, out.as_deref(), *seed).map(|_| true),
        Cmd::Train {
            config,
            data,
            out_dir,
        } => commands::train(config.as_deref(), data, out_dir, cli.threads).map(|_| true),
        Cmd::Eval { checkpoint, data } => commands::eval(checkpoint, data).map(|_| true),
        Cmd::Gradcheck {
            config,
            seed,
            variant,
            force_dropout,
        } => commands::gradcheck(config.as_deref(), *seed, (*variant).into(), *force_dropout),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
