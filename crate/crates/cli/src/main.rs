use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use distortion_lens::config::parse_measures;
use distortion_lens::evaluation::GmmReadout;
use distortion_lens::features::subsample_per_class;
use distortion_lens::gmm::{ellipse_records, fit_class_models};
use distortion_lens::kernel::{default_gamma, KernelParams};
use distortion_lens::kpca::fit_kpca;
use distortion_lens::plot::{cluster_svg, write_report_plots};
use distortion_lens::synth::{synthesize, SynthConfig};
use distortion_lens::{score_zoo, Aggregation, Manifest, Report, RunConfig};

const THREADS_ENV: &str = "DISTORTION_LENS_THREADS";

#[derive(Parser)]
#[command(
    name = "distortion-lens",
    version,
    about = "Layer-wise distortion measures of classifier generalization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Score every model in a manifest and correlate scores with test accuracy.
    Score(ScoreArgs),
    /// Generate a synthetic model zoo with known test accuracies.
    Synth(SynthArgs),
    /// Draw one scatter plot per measure from a report.
    Plot(PlotArgs),
    /// Draw a 2-D kPCA scatter with fitted GMM ellipses for one layer.
    Clusters(ClusterArgs),
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// JSON run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of l2,gmm,svm,svs.
    #[arg(long)]
    measures: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_per_class: Option<usize>,
    #[arg(long)]
    kernel_cap: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    kpca_dim: Option<usize>,
    #[arg(long)]
    gmm_components: Option<usize>,
    /// confidence or centroid.
    #[arg(long)]
    gmm_readout: Option<String>,
    /// Box constraint for the SVM confusion measure.
    #[arg(long)]
    c: Option<f64>,
    /// Comma-separated ascending box constraints for the SV count.
    #[arg(long)]
    c_schedule: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    svm_tol: Option<f64>,
    /// mean, last, min or max.
    #[arg(long)]
    aggregation: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    models: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    dims: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 60)]
    per_class: usize,
    #[arg(long, default_value_t = 500)]
    holdout_per_class: usize,
    #[arg(long, default_value_t = 2.0)]
    max_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: String,
    #[arg(long)]
    layer: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_per_class: usize,
    #[arg(long, default_value_t = 3)]
    gmm_components: usize,
    /// Output SVG file.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let run = || -> Result<bool> {
        configure_threads()?;
        match cli.command {
            Command::Score(args) => cmd_score(args),
            Command::Synth(args) => cmd_synth(args).map(|()| true),
            Command::Plot(args) => cmd_plot(args).map(|()| true),
            Command::Clusters(args) => cmd_clusters(args).map(|()| true),
        }
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV} must be a non-negative integer, got {value:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number {v:?}"))
        })
        .collect()
}

fn run_config(args: ScoreArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = args.manifest {
        cfg.manifest = Some(m);
    }
    if let Some(list) = &args.measures {
        cfg.measures = parse_measures(list)?;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.out {
        cfg.out = v;
    }
    let e = &mut cfg.eval;
    if let Some(v) = args.folds {
        e.folds = v;
    }
    if let Some(v) = args.max_per_class {
        e.max_per_class = v;
    }
    if let Some(v) = args.kernel_cap {
        e.kernel_cap = v;
    }
    if let Some(v) = args.gamma {
        e.gamma = Some(v);
    }
    if let Some(v) = args.kpca_dim {
        e.kpca_dim = v;
    }
    if let Some(v) = args.gmm_components {
        e.gmm.n_components = v;
    }
    if let Some(v) = &args.gmm_readout {
        e.gmm_readout = match v.as_str() {
            "confidence" => GmmReadout::Confidence,
            "centroid" => GmmReadout::Centroid,
            other => bail!("unknown gmm readout {other:?} (expected confidence or centroid)"),
        };
    }
    if let Some(v) = args.c {
        e.svm.c = v;
    }
    if let Some(v) = &args.c_schedule {
        e.svm.c_schedule = parse_list(v)?;
    }
    if let Some(v) = args.epsilon {
        e.svm.epsilon = v;
    }
    if let Some(v) = args.svm_tol {
        e.svm.smo.tol = v;
    }
    if let Some(v) = &args.aggregation {
        e.aggregation = v.parse::<Aggregation>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Returns `Ok(false)` when some models failed; partial results are still written.
fn cmd_score(args: ScoreArgs) -> Result<bool> {
    let cfg = run_config(args)?;
    let manifest_path = cfg.manifest_path()?;
    let manifest = Manifest::load(manifest_path)?;
    let zoo = score_zoo(&manifest, &cfg.measures, &cfg.eval, cfg.seed)?;
    let report = Report::from_scores(&zoo);
    let (json, csv) = report.write(&cfg.out)?;
    println!("wrote {} and {}", json.display(), csv.display());
    for m in &report.measures {
        match m.r_squared {
            Some(r2) => println!("{:<10} r2 = {r2:.4}", m.measure),
            None => println!("{:<10} r2 = n/a", m.measure),
        }
    }
    for f in &report.failed_models {
        eprintln!("model {} failed: {}", f.model_id, f.error);
    }
    Ok(report.failed_models.is_empty())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_models: args.models,
        n_classes: args.classes,
        dims: args.dims,
        n_layers: args.layers,
        per_class: args.per_class,
        holdout_per_class: args.holdout_per_class,
        max_rate: args.max_rate,
        seed: args.seed,
    };
    let path = synthesize(&cfg, &args.out)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    let report = Report::load(&args.report)?;
    for path in write_report_plots(&report, &args.out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_clusters(args: ClusterArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let entry = manifest
        .models
        .iter()
        .find(|m| m.model_id == args.model)
        .with_context(|| format!("model {:?} not in manifest", args.model))?;
    let layer = entry
        .layers
        .iter()
        .find(|l| l.layer_id == args.layer)
        .with_context(|| format!("layer {:?} not in model {:?}", args.layer, args.model))?;
    let fs = subsample_per_class(
        &manifest.load_layer(entry, layer)?,
        args.max_per_class,
        args.seed,
    )?;
    let params: KernelParams = default_gamma(fs.features().view())?;
    let kpca = fit_kpca(fs.features().view(), params, 2)?;
    let coords = fs.with_features(kpca.train_coords().clone())?;
    let opts = distortion_lens::gmm::GmmOptions {
        n_components: args.gmm_components,
        ..Default::default()
    };
    let models = fit_class_models(&coords, &opts, args.seed)?;
    let points: Vec<([f64; 2], usize)> = coords
        .features()
        .rows()
        .into_iter()
        .zip(coords.labels())
        .map(|(r, &c)| ([r[0], r[1]], c))
        .collect();
    let svg = cluster_svg(
        &format!("{} / {}", args.model, args.layer),
        &points,
        &ellipse_records(&models),
    );
    write_file(&args.out, &svg)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
