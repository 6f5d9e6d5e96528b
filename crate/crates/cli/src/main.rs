use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use irdp_core::data::{load_dataset_path, write_dataset_path, Dataset, SchemaSpec};
use irdp_core::harness::{run_release, run_sweep, SweepSpec, DEFAULT_RUNS};
use irdp_core::mechanisms::{MechanismConfig, Method};
use irdp_core::metrics::MetricConfig;
use irdp_core::oracle::{centroid_shift_check, SensitivityProbe};

#[derive(Parser)]
#[command(
    name = "irdp",
    version,
    about = "Differentially private microaggregated data release"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Anonymize one dataset and write the release plus a utility report.
    Release(ReleaseArgs),
    /// Run a parameter grid and write averaged metrics as CSV with a JSON sidecar.
    Sweep(SweepArgs),
    /// Brute-force the centroid sensitivity bound on a sample of the data.
    #[command(hide = true)]
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Input {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// TOML schema describing the attributes to load.
    #[arg(long)]
    schema: PathBuf,
}

impl Input {
    fn load(&self) -> Result<Dataset> {
        let schema = SchemaSpec::load(&self.schema)
            .with_context(|| format!("loading schema {}", self.schema.display()))?;
        load_dataset_path(&self.data, &schema)
            .with_context(|| format!("loading {}", self.data.display()))
    }
}

#[derive(Args)]
struct ReleaseArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value = "ir-dp")]
    method: Method,
    #[arg(long)]
    k: usize,
    /// Total privacy budget, split evenly over the released attributes.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Comma-separated attributes to release; defaults to all.
    #[arg(long, value_delimiter = ',')]
    attrs: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Anonymized CSV; the report goes next to it as `<stem>.report.json`.
    #[arg(long)]
    out: PathBuf,
    /// Leave noisy values outside the attribute domain as drawn.
    #[arg(long)]
    no_clamp: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: Input,
    /// Comma-separated methods.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "ir-dp,plain-laplace,mv-dp"
    )]
    method: Vec<Method>,
    /// Comma-separated k values; `lo:hi` or `lo:hi:step` expands to an inclusive range.
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,1,10")]
    epsilon: Vec<f64>,
    /// One attribute subset per occurrence, comma-separated; defaults to all attributes.
    #[arg(long)]
    attrs: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_RUNS)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Summary CSV; per-run values go to the same path with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_clamp: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    k: usize,
    #[arg(long, value_delimiter = ',')]
    attrs: Vec<String>,
    /// Records taken from the top of the file.
    #[arg(long, default_value_t = 50)]
    limit: usize,
    #[arg(long, default_value_t = 11)]
    grid: usize,
}

fn parse_k_values(items: &[String]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for item in items {
        let parts: Vec<&str> = item.trim().split(':').collect();
        let num = |s: &str| {
            s.trim()
                .parse::<usize>()
                .with_context(|| format!("bad k value `{item}`"))
        };
        match parts.as_slice() {
            [one] => out.push(num(one)?),
            [lo, hi] => out.extend(num(lo)?..=num(hi)?),
            [lo, hi, step] => {
                let step = num(step)?;
                ensure!(step > 0, "k range step must be positive");
                out.extend((num(lo)?..=num(hi)?).step_by(step));
            }
            _ => bail!("bad k value `{item}`"),
        }
    }
    Ok(out)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn subset(data: Dataset, attrs: &[String]) -> Result<Dataset> {
    if attrs.is_empty() {
        Ok(data)
    } else {
        Ok(data.select(attrs)?)
    }
}

fn release(args: ReleaseArgs) -> Result<()> {
    let data = subset(args.input.load()?, &args.attrs)?;
    let cfg = MechanismConfig::new(args.method, args.k, args.epsilon, data.m(), args.seed)?
        .with_clamp(!args.no_clamp);
    let (out, report) = run_release(&data, &cfg, &MetricConfig::default())?;
    write_dataset_path(&out.data, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let report_path = sibling(&args.out, ".report.json");
    fs::write(&report_path, report.to_json())
        .with_context(|| format!("writing {}", report_path.display()))?;
    println!(
        "{} k={} epsilon={} m={}: re={:.6} jsd={:.6}",
        args.method,
        args.k,
        args.epsilon,
        data.m(),
        report.re_dataset,
        report.jsd_dataset
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let data = args.input.load()?;
    let mut spec = SweepSpec::new(args.method, parse_k_values(&args.k)?, args.epsilon);
    spec.attribute_subsets = args
        .attrs
        .iter()
        .map(|s| s.split(',').map(|a| a.trim().to_string()).collect())
        .collect();
    spec.runs = args.runs;
    spec.master_seed = args.seed;
    spec.clamp = !args.no_clamp;
    let report = run_sweep(&data, &spec, &MetricConfig::default())?;
    fs::write(&args.out, report.to_csv())
        .with_context(|| format!("writing {}", args.out.display()))?;
    let sidecar = args.out.with_extension("json");
    fs::write(&sidecar, report.to_json())
        .with_context(|| format!("writing {}", sidecar.display()))?;
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    println!("{} cells, {} failed", report.cells.len(), failed);
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<()> {
    let data = subset(args.input.load()?, &args.attrs)?;
    let mut all_passed = true;
    for (attr, column) in data.schema().iter().zip(data.columns()) {
        let (Some((lower, upper)), Some(values)) = (attr.bounds(), column.as_numeric()) else {
            continue;
        };
        let probe = SensitivityProbe {
            column: values.iter().copied().take(args.limit).collect(),
            k: args.k,
            delta_cap: upper - lower,
            grid_points: args.grid,
            domain: Some((lower, upper)),
        };
        let r = centroid_shift_check(&probe).with_context(|| format!("probing `{}`", attr.name))?;
        all_passed &= r.passed;
        println!(
            "{}: max shift {:.6} bound {:.6} over {} evaluations: {}",
            attr.name,
            r.max_shift,
            r.bound,
            r.evaluations,
            if r.passed { "ok" } else { "VIOLATED" }
        );
    }
    ensure!(all_passed, "sensitivity bound violated");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Release(a) => release(a),
        Command::Sweep(a) => sweep(a),
        Command::Verify(a) => verify(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("irdp: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
