use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use rdner::brat::EntityType;
use rdner::metrics::ReportFormat;
use rdner::synthetic::SyntheticConfig;
use rdner_cli::{config::RunConfig, parse_alias, parse_threshold, ConvertOptions, Level};

#[derive(Parser)]
#[command(name = "rdner", version, about = "Rare-disease named entity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a directory of brat .txt/.ann pairs to tagged CoNLL.
    Convert {
        brat_dir: PathBuf,
        output: PathBuf,
        /// Report text/offset mismatches as warnings instead of failing.
        #[arg(long)]
        lenient: bool,
        /// Ignore .txt or .ann files without a partner.
        #[arg(long)]
        skip_unpaired: bool,
        /// Offsets in the .ann files count UTF-16 code units.
        #[arg(long)]
        utf16_offsets: bool,
        /// Extra annotation label, e.g. `RARE_DISEASE=RAREDISEASE`.
        #[arg(long = "alias", value_parser = parse_alias)]
        aliases: Vec<(String, EntityType)>,
    },
    /// Train a model from a `key = value` config file.
    Train { config: PathBuf },
    /// Tag a CoNLL file; writes CoNLL with a tag column.
    Predict {
        model: PathBuf,
        input: PathBuf,
        /// Output file (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score a model against a tagged CoNLL file.
    Evaluate {
        model: PathBuf,
        data: PathBuf,
        #[arg(long, default_value = "entity")]
        level: Level,
        #[arg(long, default_value = "table", value_parser = parse_format)]
        format: ReportFormat,
        /// Fail when a metric is below a bound, e.g. `micro_f1=0.9`.
        #[arg(long = "min", value_parser = parse_threshold)]
        min: Vec<(String, f64)>,
    },
    /// Write a synthetic brat corpus split into train/validation/test.
    GenSynthetic {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        size: usize,
        #[arg(long, default_value_t = 0.1)]
        discontinuous_fraction: f64,
        #[arg(long, default_value_t = 0.1)]
        overlap_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Convert {
            brat_dir,
            output,
            lenient,
            skip_unpaired,
            utf16_offsets,
            aliases,
        } => {
            let summary = rdner_cli::convert(
                &brat_dir,
                &output,
                &ConvertOptions {
                    lenient,
                    skip_unpaired,
                    utf16_offsets,
                    aliases,
                },
            )?;
            print!("{}", summary.render());
        }
        Command::Train { config } => {
            let config = RunConfig::load(&config)?;
            let outcome = rdner_cli::train(&config, None)?;
            println!("model\t{}", outcome.model_path.display());
            println!("manifest\t{}", outcome.manifest_path.display());
            println!("history\t{}", outcome.history_path.display());
        }
        Command::Predict { model, input, output } => {
            let text = rdner_cli::predict(&model, &input)?;
            match output {
                Some(path) => rdner::container::write_atomic(&path, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
        Command::Evaluate {
            model,
            data,
            level,
            format,
            min,
        } => {
            let eval = rdner_cli::evaluate(&model, &data, level, format, &min)?;
            print!("{}", eval.rendered);
            if !eval.failures.is_empty() {
                for (name, value, bound) in &eval.failures {
                    eprintln!("{name} = {value:.4} is below {bound}");
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::GenSynthetic {
            seed,
            size,
            discontinuous_fraction,
            overlap_fraction,
            out,
        } => {
            let n = rdner_cli::gen_synthetic(
                &SyntheticConfig {
                    seed,
                    size,
                    discontinuous_fraction,
                    overlap_fraction,
                },
                &out,
            )?;
            println!("documents\t{n}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
