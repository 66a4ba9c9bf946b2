use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use bearing_sa::divergence::{estimate_hdh, estimate_hdh_in_subspaces, repeat_estimates};
use bearing_sa::harness::{
    adapt, derive_seed, emit_report, load_domains, run_grid, ExperimentConfig, Method, ReportFormat,
};
use bearing_sa::signal_io::{build_dataset, DatasetManifest};
use bearing_sa::spectrum::featurize;
use bearing_sa::subspace::DimPolicy;
use bearing_sa::synth::{generate_domain, write_dataset, SynthSpec};
use bearing_sa::{Error, Result};

#[derive(Parser)]
#[command(name = "diag", version, about = "Cross-condition bearing fault diagnosis with subspace alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment grid described by a JSON config.
    Run(RunArgs),
    /// Generate synthetic domains and write them as manifests + raw records.
    Synth(SynthArgs),
    /// Estimate the HΔH divergence between two manifests, before and after alignment.
    Hdh(HdhArgs),
}

#[derive(Args)]
struct Common {
    /// Fixed subspace dimension (overrides the config's dimension policy).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    repeats: Option<usize>,
    /// Comma-separated subset of baseline1,baseline2,svm_na,nn_sa,svm_sa.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    format: Option<String>,
    /// Report path (overrides the config's `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HdhArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    fft_len: Option<usize>,
    /// Number of random splits to average.
    #[arg(long, default_value_t = 10)]
    splits: usize,
    #[arg(long, default_value_t = 0.5)]
    split_fraction: f64,
    #[command(flatten)]
    common: Common,
}

/// Input of `diag synth`: one domain per speed.
#[derive(Debug, Serialize, Deserialize)]
struct SynthJob {
    #[serde(default)]
    base: SynthSpec,
    speeds_rpm: Vec<f64>,
    per_class: usize,
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(r) = args.repeats {
        cfg.repeats = r;
    }
    if let Some(d) = args.common.dim {
        cfg.dim_policy = DimPolicy::Fixed(d);
    }
    if let Some(ms) = args.methods {
        cfg.methods = ms.iter().map(|m| m.parse::<Method>()).collect::<Result<_>>()?;
    }
    if let Some(s) = args.common.seed {
        cfg.rng_seed = s;
    }
    if let Some(f) = args.format {
        cfg.format = f.parse()?;
    }
    if args.common.workers.is_some() {
        cfg.workers = args.common.workers;
    }
    if args.out.is_some() {
        cfg.output = args.out;
    }
    cfg.validate()?;

    let report = with_workers(cfg.workers, || {
        let domains = load_domains(&cfg)?;
        run_grid(&domains, &cfg)
    })?;
    match &cfg.output {
        Some(path) => {
            let written = emit_report(&report, cfg.format, path)?;
            eprintln!("wrote {}", written.display());
        }
        None => match cfg.format {
            ReportFormat::Json => println!("{}", report.to_json()?),
            ReportFormat::Csv => print!("{}", report.to_csv()),
        },
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| Error::Io {
        path: args.spec.clone(),
        source: e,
    })?;
    let job: SynthJob = serde_json::from_str(&text)?;
    if job.speeds_rpm.is_empty() || job.per_class == 0 {
        return Err(Error::Config("synth job needs speeds_rpm and a positive per_class".into()));
    }
    for (i, &rpm) in job.speeds_rpm.iter().enumerate() {
        let set = generate_domain(&job.base, rpm, job.per_class, i as u64)?;
        let path = write_dataset(&set, &args.out, &format!("rpm{rpm}"))?;
        println!("{}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct HdhOutput {
    source: String,
    target: String,
    dim: usize,
    hdh_raw_features: bearing_sa::divergence::DivergenceSummary,
    hdh_aligned: bearing_sa::divergence::DivergenceSummary,
}

fn hdh(args: HdhArgs) -> Result<()> {
    let load = |p: &PathBuf| -> Result<(String, bearing_sa::spectrum::FeatureMatrix)> {
        let m = DatasetManifest::load(p)?;
        let fm = featurize(&build_dataset(&m)?, args.fft_len)?;
        Ok((m.name, fm))
    };
    let (s_name, xs) = load(&args.source)?;
    let (t_name, xt) = load(&args.target)?;
    let policy = args.common.dim.map_or_else(DimPolicy::default, DimPolicy::Fixed);
    let seed = args.common.seed.unwrap_or(0);
    let seeds: Vec<u64> = (0..args.splits as u64).map(|i| derive_seed(seed, 0xD1, i)).collect();
    let out = with_workers(args.common.workers, || {
        let a = adapt(xs.rows(), xt.rows(), policy)?;
        let raw = repeat_estimates(&seeds, |s| estimate_hdh(xs.rows(), xt.rows(), args.split_fraction, s))?;
        let aligned = repeat_estimates(&seeds, |s| {
            estimate_hdh_in_subspaces(xs.rows(), xt.rows(), &a.source, &a.target, &a.alignment, args.split_fraction, s)
        })?;
        Ok(HdhOutput {
            source: s_name,
            target: t_name,
            dim: a.dim,
            hdh_raw_features: raw,
            hdh_aligned: aligned,
        })
    })?;
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
        Command::Hdh(a) => hdh(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
