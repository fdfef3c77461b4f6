use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use odisphere::config::{BiasMode, PipelineConfig};
use odisphere::metrics::{EvalOptions, KldDirection};
use odisphere::multiscale::Arch;
use odisphere::pipeline::{self, PipelineInputs};
use odisphere::{Error, Result};

#[derive(Parser)]
#[command(name = "odisphere", version, about = "Saliency maps for 360-degree images")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for initialization and training order.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Integration architecture (1-4).
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=4))]
    arch: Option<u8>,
    /// none, constant, single or multi.
    #[arg(long, global = true)]
    bias: Option<BiasMode>,
    /// Comma-separated angles of view in degrees.
    #[arg(long, global = true, value_delimiter = ',')]
    aovs: Option<Vec<f64>>,
    /// Angular spacing of viewing directions (must divide 180).
    #[arg(long = "interval-deg", global = true)]
    interval_deg: Option<f64>,
    /// Output directory (or report file for `evaluate`).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, env = "ODISPHERE_THREADS")]
    threads: Option<usize>,
}

#[derive(Args, Default)]
struct ParamArgs {
    /// Trained bias grid (OSB1).
    #[arg(long = "bias-params")]
    bias_params: Option<PathBuf>,
    /// Trained integration layer (OSB1).
    #[arg(long = "attn-params")]
    attn_params: Option<PathBuf>,
    /// ERP prior map (PFM) for `--bias constant`.
    #[arg(long)]
    prior: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write every tangent patch of an ERP image as PFM.
    Extract {
        /// ERP image (PNG, PFM or any common 8-bit format).
        image: PathBuf,
    },
    /// Predict an ERP saliency map.
    Pipeline {
        /// ERP image (PNG, PFM or any common 8-bit format).
        image: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        /// Fixation CSV for evaluation.
        #[arg(long)]
        fixations: Option<PathBuf>,
        /// Ground-truth ERP saliency map for evaluation.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Train the bias grid on a dataset manifest.
    Biasfit {
        /// Dataset manifest (JSON).
        dataset: PathBuf,
        /// Starting bias grid.
        #[arg(long = "bias-params")]
        init: Option<PathBuf>,
    },
    /// Train the integration layer on a dataset manifest.
    Attnfit {
        /// Dataset manifest (JSON).
        dataset: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Compute metrics for a predicted ERP map.
    Evaluate {
        /// Predicted ERP saliency map (PFM).
        prediction: PathBuf,
        /// Fixation CSV.
        #[arg(long)]
        fixations: Option<PathBuf>,
        /// Ground-truth ERP saliency map.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Elevation band width for per-band NSS.
        #[arg(long = "band-deg", default_value_t = 30.0)]
        band_deg: f64,
        /// Use KLD(pred || gt) instead of KLD(gt || pred).
        #[arg(long = "kld-pred-first")]
        kld_pred_first: bool,
    },
    /// Average the ground-truth maps of a dataset into a prior image.
    Plotprior {
        /// Dataset manifest (JSON).
        dataset: PathBuf,
    },
}

fn resolve_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(a) = c.arch {
        cfg.arch = Arch::try_from(a)?;
    }
    if let Some(b) = c.bias {
        cfg.bias = b;
    }
    if let Some(a) = &c.aovs {
        cfg.aovs_deg = a.clone();
    }
    if let Some(i) = c.interval_deg {
        cfg.interval_deg = i;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn inputs(params: ParamArgs, fixations: Option<PathBuf>, gt: Option<PathBuf>) -> PipelineInputs {
    PipelineInputs {
        bias_params: params.bias_params,
        attention_params: params.attn_params,
        prior: params.prior,
        fixations,
        ground_truth: gt,
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let out = cli.common.out.clone();
    match cli.command {
        Command::Evaluate {
            prediction,
            fixations,
            gt,
            band_deg,
            kld_pred_first,
        } => {
            let opts = EvalOptions {
                band_width_deg: band_deg,
                kld_direction: if kld_pred_first {
                    KldDirection::PredictionToGroundTruth
                } else {
                    KldDirection::GroundTruthToPrediction
                },
            };
            let out = if out.extension().is_some() { out } else { out.join("metrics.json") };
            let report = pipeline::cmd_evaluate(&prediction, gt.as_deref(), fixations.as_deref(), &opts, &out)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        command => {
            let cfg = resolve_config(&cli.common)?;
            let manifest = match command {
                Command::Extract { image } => pipeline::cmd_extract(&image, &cfg, &out)?,
                Command::Pipeline {
                    image,
                    params,
                    fixations,
                    gt,
                } => pipeline::cmd_pipeline(&image, &inputs(params, fixations, gt), &cfg, &out)?,
                Command::Biasfit { dataset, init } => pipeline::cmd_biasfit(&dataset, init.as_deref(), &cfg, &out)?,
                Command::Attnfit { dataset, params } => {
                    pipeline::cmd_attnfit(&dataset, &inputs(params, None, None), &cfg, &out)?
                }
                Command::Plotprior { dataset } => pipeline::cmd_plotprior(&dataset, &cfg, &out)?,
                Command::Evaluate { .. } => unreachable!("handled above"),
            };
            for p in &manifest.outputs {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
