//! Command-line front end.
//!
//! Exit codes: 0 success, 2 config error, 3 bound violation (verify-bounds
//! only), 4 stage failure.

use clap::{Args, Parser, Subcommand};
use relstab::error::Error;
use relstab::harness::{self, EmbeddingReportConfig, ExperimentConfig};
use relstab::linalg::NormOrder;
use relstab::model::ModelKind;
use relstab::stability::DenomMode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "relstab",
    version,
    about = "Stability metrics (RIS/RRS/ROS) for feature-attribution explanations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOverrides {
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the model kind.
    #[arg(long, value_parser = ["lr", "mlp"])]
    model: Option<String>,
    /// Override the metric norm order.
    #[arg(long, value_parser = ["1", "2", "inf"])]
    p: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured model and persist it as model.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Run the full pipeline: train, sample, explain, score, verify, persist.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict scoring to one denominator mode (default: both).
        #[arg(long = "denom-mode", value_parser = ["elementwise", "norm-ratio"])]
        denom_mode: Option<String>,
        /// Worker threads for the explain/score stage.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Re-verify the Lipschitz bounds over a results directory.
    VerifyBounds {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value_t = harness::BOUND_TOL)]
        tol: f64,
    },
    /// Print per-method log-scale statistics and the method ranking.
    Summarize {
        #[arg(long)]
        results: PathBuf,
    },
    /// Embedding-drift analysis on the synthetic rings (heatmap + report).
    Circles {
        /// Optional config; defaults to the 100-unit MLP on circles.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &CommonOverrides) -> Result<(), Error> {
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(kind) = &o.model {
        cfg.model.kind = ModelKind::parse(kind)?;
    }
    if let Some(p) = &o.p {
        cfg.metric.p = NormOrder::parse(p)?;
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) => 2,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Train {
            config,
            out,
            overrides,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            apply_overrides(&mut cfg, &overrides)?;
            let model = harness::train_only(&cfg, &out)?;
            println!(
                "trained {:?}: best val accuracy {:.4} at epoch {:?} ({} epochs run)",
                cfg.model.kind,
                model.training_meta.best_val_accuracy,
                model.training_meta.best_epoch,
                model.training_meta.epochs_run
            );
            println!("model written to {}", out.join("model.json").display());
            Ok(0)
        }
        Command::Run {
            config,
            out,
            denom_mode,
            workers,
            overrides,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            apply_overrides(&mut cfg, &overrides)?;
            let modes: Vec<DenomMode> = match denom_mode.as_deref() {
                Some(s) => vec![DenomMode::parse(s)?],
                None => DenomMode::BOTH.to_vec(),
            };
            let output = harness::run_experiment(&cfg, &out, workers, &modes)?;
            println!(
                "run complete: {} stability records, {} bound records, {} anchors used ({} skipped)",
                output.stability_records.len(),
                output.bound_records.len(),
                output.manifest.anchors.used,
                output.manifest.anchors.skipped_point_ids.len()
            );
            println!("{}", harness::render_summary(&output.summary));
            println!("results written to {}", out.display());
            Ok(0)
        }
        Command::VerifyBounds { results, tol } => {
            let (records, violations) = harness::reverify_bounds(&results, tol)?;
            let summary = relstab::bounds::tightness_summary(&records);
            println!(
                "checked {} records: {} violated (tolerance {tol:.1e})",
                records.len(),
                violations
            );
            if let Some(g) = summary.overall_ris_vs_rrs.geometric_mean {
                println!("geo-mean slack, RIS bound: {g:.3}");
            }
            if let Some(g) = summary.overall_rrs_vs_ros.geometric_mean {
                println!("geo-mean slack, RRS bound: {g:.3}");
            }
            Ok(if violations > 0 { 3 } else { 0 })
        }
        Command::Summarize { results } => {
            let summary = harness::summarize_dir(&results)?;
            println!("{}", harness::render_summary(&summary));
            Ok(0)
        }
        Command::Circles { config, out, seed } => {
            let mut cfg = match config {
                Some(path) => EmbeddingReportConfig::load(&path)?,
                None => EmbeddingReportConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let analysis = harness::circles::embedding_report(&cfg)?;
            harness::circles::write_outputs(&out, &analysis)?;
            let r = &analysis.report;
            println!(
                "val accuracy {:.4}; {} anchors ({} skipped), {} perturbations",
                r.val_accuracy, r.n_anchors, r.skipped_anchors, r.n_perturbations
            );
            println!(
                "perturbations nearer the opposite-class centroid: {} / {} ({:.4})",
                r.nearer_opposite, r.n_perturbations, r.fraction_nearer_opposite
            );
            println!("report written to {}", out.display());
            Ok(0)
        }
    }
}
