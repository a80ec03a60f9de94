use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nodseg::io::load_manifest;
use nodseg::phantom::{generate_suite, SuiteOptions};
use nodseg::pipeline::{run_eval, run_segment, RunOptions};
use nodseg::{CoarseMethod, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "nodseg",
    version,
    about = "Morphological lung-nodule segmentation on ROI crops"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment every case in a manifest.
    Segment(SegmentArgs),
    /// Score predictions against manifest ground truth.
    Eval(EvalArgs),
    /// Write a synthetic phantom suite with ground truth.
    Phantom(PhantomArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Plain,
    Deformable,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with PipelineConfig fields; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Segment each slice on its own ROI instead of propagating boxes.
    #[arg(long)]
    no_3d: bool,
    /// Write per-stage masks and traces for every slice.
    #[arg(long)]
    dump_stages: bool,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    s_m: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    margin: Option<usize>,
    /// Disable the ground-glass evenness stop.
    #[arg(long)]
    no_ggo_stop: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Where to write the JSON report (default: <pred>/report.json).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Row label in the report.
    #[arg(long, default_value = "ours")]
    label: String,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    slices: u64,
}

fn build_config(args: &SegmentArgs) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(m) = args.method {
        cfg.coarse_method = match m {
            Method::Plain => CoarseMethod::PlainThreshold,
            Method::Deformable => CoarseMethod::Deformable,
        };
    }
    macro_rules! take {
        ($($f:ident),*) => { $( if let Some(v) = args.$f { cfg.$f = v; } )* };
    }
    take!(alpha, s_m, epsilon, rho, tau, margin);
    if args.no_ggo_stop {
        cfg.ggo_stop = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn segment(args: SegmentArgs) -> anyhow::Result<ExitCode> {
    let cfg = build_config(&args)?;
    let cases = load_manifest(&args.manifest)?;
    let opts = RunOptions {
        cfg,
        dump_stages: args.dump_stages,
        use_3d: !args.no_3d,
        jobs: args.jobs as usize,
    };
    let summary = run_segment(&cases, &args.out, &opts)?;
    for (id, msg) in &summary.errors {
        eprintln!("error: {id}: {msg}");
    }
    println!(
        "segmented {}/{} cases into {}",
        summary.processed,
        cases.len(),
        args.out.display()
    );
    Ok(if summary.errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn eval(args: EvalArgs) -> anyhow::Result<ExitCode> {
    let cases = load_manifest(&args.manifest)?;
    let outcome = run_eval(&cases, &args.pred, &args.label)?;
    if !outcome.missing.is_empty() {
        eprintln!("missing predictions:");
        for p in &outcome.missing {
            eprintln!("  {}", p.display());
        }
        return Ok(ExitCode::from(1));
    }
    if outcome.report.cases.is_empty() {
        bail!("no labeled cases in {}", args.manifest.display());
    }
    print!("{}", outcome.report.to_text());
    let path = args.report.unwrap_or_else(|| args.pred.join("report.json"));
    write_text(&path, &outcome.report.to_json())?;
    Ok(ExitCode::SUCCESS)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn phantom(args: PhantomArgs) -> anyhow::Result<ExitCode> {
    let opts = SuiteOptions {
        n_slices: args.slices as usize,
        ..SuiteOptions::default()
    };
    let cases = generate_suite(args.seed, args.n as usize, &args.out, &opts)?;
    println!(
        "wrote {} cases to {}",
        cases.len(),
        args.out.join("manifest.json").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Segment(a) => segment(a),
        Command::Eval(a) => eval(a),
        Command::Phantom(a) => phantom(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
