use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use complex_compress::container::{read_container, write_container, ClusterSpec, PipelineConfig};
use complex_compress::entropy::EntropyMode;
use complex_compress::metrics::{self, StageReport};
use complex_compress::pruning::{PruneConfig, PruneKey};
use complex_compress::quantization::{InitScheme, KMeansParams};
use complex_compress::tensor::{load_raw, save_raw};
use complex_compress::{container, Error};

/// Complex-valued CNN weight compression: prune, quantize, entropy code.
#[derive(Parser)]
#[command(name = "ccnz", version)]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a CWT model into a CCNZ file and print the stage report.
    Compress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Rebuild a dense CWT model from a CCNZ file.
    Decompress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Stage report without writing anything, or `--diff A B` for the
    /// per-weight reconstruction distance between two CWT files.
    Stats {
        #[arg(long, required_unless_present = "diff", conflicts_with = "diff")]
        input: Option<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        diff: Option<Vec<PathBuf>>,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Per-layer summary of a CCNZ file.
    Inspect {
        #[arg(required_unless_present = "input")]
        file: Option<PathBuf>,
        #[arg(long, conflicts_with = "file")]
        input: Option<PathBuf>,
    },
    /// Pruning ratio over a list of thresholds.
    Sweep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.02, 0.03, 0.04, 0.05])]
        thresholds: Vec<f64>,
        #[arg(long, default_value = "modulus")]
        prune_key: PruneKey,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Kv,
}

#[derive(Clone, Copy, ValueEnum)]
enum EntropyArg {
    Split,
    Indices,
    None,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long, default_value = "modulus")]
    prune_key: PruneKey,
    /// `100` or `conv*=100,dense*=256`.
    #[arg(long, default_value = "256")]
    clusters: String,
    #[arg(long, default_value = "linear-neg")]
    init: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = EntropyArg::Split)]
    entropy: EntropyArg,
    #[arg(long, default_value_t = KMeansParams::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = KMeansParams::default().rel_tol)]
    rel_tol: f64,
    #[arg(long)]
    skip_prune: bool,
    /// Also skips Huffman coding, which works on quantized layers.
    #[arg(long)]
    skip_quantize: bool,
    #[arg(long)]
    skip_huffman: bool,
}

impl PipelineArgs {
    fn config(&self) -> complex_compress::Result<PipelineConfig> {
        let mut cfg = PipelineConfig {
            prune: PruneConfig::new(self.threshold, self.prune_key)?,
            clusters: ClusterSpec::parse(&self.clusters, 256)?,
            init: InitScheme::parse(&self.init, self.seed)?,
            kmeans: KMeansParams {
                max_iters: self.max_iters,
                rel_tol: self.rel_tol,
            },
            entropy_mode: match self.entropy {
                EntropyArg::Split => Some(EntropyMode::SplitValues),
                EntropyArg::Indices => Some(EntropyMode::Indices),
                EntropyArg::None => None,
            },
            ..PipelineConfig::default()
        };
        cfg.stages.prune = !self.skip_prune;
        cfg.stages.quantize = !self.skip_quantize;
        cfg.stages.huffman =
            !self.skip_huffman && !self.skip_quantize && cfg.entropy_mode.is_some();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_report(r: &StageReport, f: Format) {
    match f {
        Format::Table => print!("{}", r.to_table()),
        Format::Kv => print!("{}", r.to_key_values()),
    }
}

fn run(cmd: Command) -> complex_compress::Result<()> {
    match cmd {
        Command::Compress {
            input,
            output,
            pipeline,
            format,
        } => {
            let cfg = pipeline.config()?;
            let model = load_raw(&input)?;
            let (report, c) = metrics::compress_with_report(&model, &cfg)?;
            write_container(&c, &output)?;
            print_report(&report, format);
        }
        Command::Decompress { input, output } => {
            let c = read_container(&input)?;
            save_raw(&container::decompress(&c)?, &output)?;
        }
        Command::Stats {
            input,
            diff,
            pipeline,
            format,
        } => {
            if let Some(paths) = diff {
                let d = metrics::diff(&load_raw(&paths[0])?, &load_raw(&paths[1])?)?;
                for (name, m) in &d.layers {
                    println!("layer.{name}.max_distance: {m}");
                }
                println!("mean_distance: {}", d.mean_distance);
                println!("max_distance: {}", d.max_distance);
            } else {
                let cfg = pipeline.config()?;
                let model = load_raw(input.expect("clap enforces --input"))?;
                print_report(&metrics::report(&model, &cfg)?, format);
            }
        }
        Command::Inspect { file, input } => {
            let c = read_container(file.or(input).expect("clap enforces a path"))?;
            let layers = metrics::inspect(&c)?;
            print!("{}", metrics::format_inspect(&c, &layers));
        }
        Command::Sweep {
            input,
            thresholds,
            prune_key,
        } => {
            let model = load_raw(&input)?;
            println!("{:>12} {:>12}", "threshold", "pruned");
            for (t, r) in metrics::threshold_sweep(&model, &thresholds, prune_key)? {
                println!("{t:>12} {r:>12.6}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli.cmd)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
