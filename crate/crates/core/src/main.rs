use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use keypoint_consensus::io::{self, CubOptions};
use keypoint_consensus::pipeline::{self, MethodName, Preset, RunConfig};
use keypoint_consensus::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Keypoint consensus over object proposals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long, value_enum)]
    method: Option<MethodName>,
    /// Highest-scored proposals used per image.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-keypoint consensus from per-proposal predictions.
    Consensus {
        #[arg(long)]
        predictions: PathBuf,
        /// CUB dataset directory; enables object-box proposal filtering.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// PCP, AE, FVR, FIR and part accuracy of a consensus file.
    Evaluate {
        #[arg(long)]
        consensus: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Annotator standard deviation file (`<part_id> <sigma>` lines).
        #[arg(long)]
        std: Option<PathBuf>,
        /// Proposals for the whole-body box; the seed box is used without.
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Head, torso and whole-body boxes from a consensus file.
    Partbox {
        #[arg(long)]
        consensus: PathBuf,
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Training-crop manifest from annotations and proposals.
    Prepare {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Box-count sweep on synthetic scenes.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
}

fn config(common: &Common, default: Preset) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = common.preset {
        cfg.preset = Some(p);
    }
    if let Some(m) = common.method {
        cfg.method = m;
    }
    if let Some(k) = common.top_k {
        cfg.top_k_boxes = k;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.resolve(default)
}

fn write_output(common: &Common, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match &common.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            }
            let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
            let mut out = std::io::BufWriter::new(file);
            write(&mut out)?;
            out.flush().map_err(|e| io_error(path, e))
        }
        None => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            write(&mut out)?;
            out.flush().map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_cub(path: &Path, cfg: &RunConfig) -> Result<Vec<io::CubImage>> {
    io::load_cub(
        path,
        CubOptions {
            one_indexed: cfg.one_indexed,
        },
    )
}

fn std_path(flag: Option<PathBuf>, common: &Common, cfg: &RunConfig) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p);
    }
    let p = cfg.metrics.std_file.as_ref().ok_or_else(|| {
        Error::Config("an annotator std file is required (--std or metrics.std_file)".into())
    })?;
    let p = PathBuf::from(p);
    // relative to the config file that names it
    let base = common
        .config
        .as_ref()
        .and_then(|c| c.parent().map(Path::to_path_buf));
    Ok(match base {
        Some(base) if p.is_relative() => base.join(p),
        _ => p,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Consensus {
            predictions,
            annotations,
            common,
        } => {
            let preset = if annotations.is_some() {
                Preset::GtBox
            } else {
                Preset::NoGtBox
            };
            let cfg = config(&common, preset)?;
            let images = annotations
                .as_deref()
                .map(|p| load_cub(p, &cfg))
                .transpose()?;
            let gts: Option<Vec<_>> = images.map(|i| i.into_iter().map(|i| i.annotation).collect());
            let preds = io::load_predictions(&predictions)?;
            let table = pipeline::run_consensus(preds, gts.as_deref(), &cfg, common.threads)?;
            let header = pipeline::provenance("consensus", &cfg);
            write_output(&common, |out| {
                io::write_consensus(out, &table, &header).map(drop)
            })
        }
        Command::Evaluate {
            consensus,
            annotations,
            std,
            proposals,
            common,
        } => {
            let cfg = config(&common, Preset::GtBox)?;
            let images = load_cub(&annotations, &cfg)?;
            let n = images.first().map_or(0, |i| i.annotation.num_keypoints());
            let std = io::load_annotator_std(&std_path(std, &common, &cfg)?, n)?;
            let table = io::load_consensus(&consensus)?;
            let proposals = proposals.as_deref().map(io::load_predictions).transpose()?;
            let report =
                pipeline::run_evaluate(&table, &images, &std, proposals, &cfg, common.threads)?;
            let header = pipeline::provenance("evaluate", &cfg);
            write_output(&common, |out| {
                io::write_report(out, &report, &pipeline::keypoint_names(), &header).map(drop)
            })
        }
        Command::Partbox {
            consensus,
            proposals,
            common,
        } => {
            let cfg = config(&common, Preset::NoGtBox)?;
            let table = io::load_consensus(&consensus)?;
            let proposals = proposals.as_deref().map(io::load_predictions).transpose()?;
            let records = pipeline::run_partbox(&table, proposals, &cfg, common.threads)?;
            let header = pipeline::provenance("partbox", &cfg);
            write_output(&common, |out| {
                io::write_part_boxes(out, &records, &header).map(drop)
            })
        }
        Command::Prepare {
            annotations,
            proposals,
            common,
        } => {
            let cfg = config(&common, Preset::GtBox)?;
            let images = load_cub(&annotations, &cfg)?;
            let proposals = io::load_predictions(&proposals)?;
            let records = pipeline::run_prepare(&images, proposals, &cfg, common.threads)?;
            let header = pipeline::provenance("prepare", &cfg);
            write_output(&common, |out| {
                io::write_manifest(out, &records, &header).map(drop)
            })
        }
        Command::Simulate { common } => {
            let cfg = config(&common, Preset::NoGtBox)?;
            let rows = pipeline::run_simulate(&cfg, common.threads)?;
            let header = pipeline::provenance("simulate", &cfg);
            write_output(&common, |out| {
                io::write_sweep(out, &rows, &header).map(drop)
            })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
