mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use emo_core::{Precision, Variant};

use crate::error::{classify, error_document, Kind};

#[derive(Debug, Parser)]
#[command(name = "emo", version, about = "Structural analyses of EMO models and iRMB blocks")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Strict JSON run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_variant)]
    pub preset: Option<Variant>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    /// Square input side in pixels.
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Default,
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Structural,
    Vjp,
}

/// Operator switches and sizes of a probe block.
#[derive(Debug, Args)]
pub struct BlockArgs {
    #[arg(long)]
    pub kernel: Option<usize>,
    /// Attention window side; omit for one global window.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub no_attn: bool,
    #[arg(long)]
    pub no_conv: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Block layout and parameter totals of a model.
    Describe,
    /// Parameter and MAC breakdown.
    Count {
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Forward pass on a synthetic or raw-tensor input.
    Forward {
        /// noise, zero, constant:<v> or file:<path>
        #[arg(long)]
        input: Option<String>,
        #[arg(long, value_enum, default_value = "default")]
        init: InitArg,
        /// Load weights from a container instead of initializing.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        save_weights: Option<PathBuf>,
    },
    /// Analytic gradients against finite differences (f64 only).
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        channels: usize,
        #[arg(long, default_value_t = 8)]
        map: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Attention before versus after the expansion MLP.
    Equiv {
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Input pixels that can affect one output pixel of a block stack.
    Influence {
        #[command(flatten)]
        block: BlockArgs,
        #[arg(long, default_value_t = 8)]
        map: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        /// Output pixel as `row,col`.
        #[arg(long, value_delimiter = ',', default_values_t = [0, 0])]
        source: Vec<usize>,
        #[arg(long, value_enum, default_value = "structural")]
        mode: ModeArg,
    },
    /// Corner-to-corner block count of a repeated block.
    Mpl {
        #[command(flatten)]
        block: BlockArgs,
        #[arg(long, default_value_t = 8)]
        map: usize,
    },
    /// Diagonal feature similarity at a model stage, or the conv-only versus
    /// attention probe comparison when no model is given.
    Similarity {
        #[arg(long, default_value_t = 4)]
        stage: usize,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        input: Option<String>,
    },
    /// Local wall-clock timing of a forward pass.
    Bench {
        #[arg(long, default_value_t = 30)]
        runs: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: emo_core::Error| e.to_string())
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: emo_core::Error| e.to_string())
}

fn fail(kind: Kind, message: &str) -> ExitCode {
    print!("{}", output::render(&error_document(kind, message)));
    ExitCode::from(kind.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(Kind::Config, e.render().to_string().trim_end()),
    };
    let res = std::panic::catch_unwind(|| commands::run(&cli));
    match res {
        Ok(Ok(text)) => match output::emit(&text, cli.common.out.as_deref()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(Kind::Config, &format!("{e:#}")),
        },
        Ok(Err(e)) => fail(classify(&e), &format!("{e:#}")),
        Err(_) => fail(Kind::Internal, "internal panic"),
    }
}
