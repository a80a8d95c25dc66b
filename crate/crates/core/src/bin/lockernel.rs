use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lockernel::diagnostics::{run_benchmark, BENCHMARKS};
use lockernel::experiments::{
    gen_synthetic_gestures, holdout_subject, run_experiment, sweep_dimension, sweep_train_fraction, write_tables_csv,
    Dataset, ResultTable,
};
use lockernel::features::{fit_pca, matrix_svd_features, preprocess, zero_pad_vectorize, NormalizeMode};
use lockernel::hermite::LocalizedKernelSpec;
use lockernel::io::{load_manifest, RunSpec};
use lockernel::Error;
use nalgebra::DMatrix;

#[derive(Parser)]
#[command(name = "lockernel", version, about = "Localized Hermite kernels, feature pipelines and experiment harness")]
struct Cli {
    /// Seed for every random choice (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the localized kernel on a grid as `x,phi`.
    KernelEval(KernelEvalArgs),
    /// Run a named verification benchmark.
    Verify {
        #[arg(long)]
        benchmark: String,
    },
    /// Extract features for every sample.
    Features(FeatureArgs),
    /// Stratified split experiment.
    Experiment(RunArgs),
    /// Feature-dimension sweep.
    SweepDim {
        #[command(flatten)]
        run: RunArgs,
        /// Comma list or `a..b`.
        #[arg(long)]
        r_values: Option<String>,
    },
    /// Training-fraction sweep.
    SweepFrac {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        fractions: Option<String>,
    },
    /// Hold-one-subject-out folds.
    Holdout(RunArgs),
}

#[derive(Args)]
struct KernelEvalArgs {
    #[arg(long = "N")]
    n: f64,
    #[arg(long)]
    q: u32,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 5.0)]
    x_max: f64,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Write to this file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Manifest CSV with `path,label,subject` rows.
    #[arg(long, conflicts_with = "synthetic")]
    manifest: Option<PathBuf>,
    /// Use the synthetic gesture generator.
    #[arg(long)]
    synthetic: bool,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct FeatureArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `pca` or `svd`.
    #[arg(long, default_value = "pca")]
    kind: String,
    #[arg(long)]
    r: Option<usize>,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<ExitCode> {
    match &cli.command {
        Command::KernelEval(a) => kernel_eval(a),
        Command::Verify { benchmark } => verify(benchmark),
        Command::Features(a) => features(cli, a),
        Command::Experiment(a) => {
            let (spec, ds) = load(cli, &a.data)?;
            let table = run_experiment(&spec.experiment, &ds)?;
            emit(&a.data, "experiment", &spec, &[table])
        }
        Command::SweepDim { run, r_values } => {
            let (mut spec, ds) = load(cli, &run.data)?;
            if let Some(v) = r_values {
                spec = override_key(&spec, "r_values", v)?;
            }
            let tables = sweep_dimension(&spec.experiment, &ds, &spec.r_values)?;
            emit(&run.data, "sweep-dim", &spec, &tables)
        }
        Command::SweepFrac { run, fractions } => {
            let (mut spec, ds) = load(cli, &run.data)?;
            if let Some(v) = fractions {
                spec = override_key(&spec, "fractions", v)?;
            }
            let tables = sweep_train_fraction(&spec.experiment, &ds, &spec.fractions)?;
            emit(&run.data, "sweep-frac", &spec, &tables)
        }
        Command::Holdout(a) => {
            let (spec, ds) = load(cli, &a.data)?;
            let tables = holdout_subject(&spec.experiment, &ds)?;
            emit(&a.data, "holdout", &spec, &tables)
        }
    }
}

fn kernel_eval(a: &KernelEvalArgs) -> CliResult<ExitCode> {
    if a.steps == 0 {
        return Err(Failure::Usage("--steps must be at least 1".into()));
    }
    if !(a.x_max > 0.0) || !a.x_max.is_finite() {
        return Err(Failure::Usage("--x-max must be positive".into()));
    }
    if !(a.n >= 1.0) || !a.n.is_finite() {
        return Err(Failure::Usage("--N must be at least 1".into()));
    }
    if a.q == 0 {
        return Err(Failure::Usage("--q must be at least 1".into()));
    }
    if !(a.gamma > 0.0) || !a.gamma.is_finite() {
        return Err(Failure::Usage("--gamma must be positive".into()));
    }
    let k = LocalizedKernelSpec::new(a.n, a.q, a.gamma)?;
    let mut out = String::from("x,phi\n");
    for i in 0..=a.steps {
        let x = a.x_max * i as f64 / a.steps as f64;
        out.push_str(&format!("{x},{}\n", k.eval_scaled(x)));
    }
    match &a.output {
        Some(p) => fs::write(p, out)?,
        None => print!("{out}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(name: &str) -> CliResult<ExitCode> {
    if !BENCHMARKS.contains(&name) {
        return Err(Failure::Usage(format!("unknown benchmark `{name}`; expected one of {}", BENCHMARKS.join(", "))));
    }
    let report = run_benchmark(name)?;
    print!("{report}");
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn load(cli: &Cli, d: &DataArgs) -> CliResult<(RunSpec, Dataset)> {
    let mut spec = match &d.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
            RunSpec::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => RunSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.experiment.seed = seed;
    }
    if let Some(m) = &d.manifest {
        spec.manifest = Some(m.clone());
    }
    let ds = match (&spec.manifest, d.synthetic) {
        (Some(m), false) => {
            if !m.exists() {
                return Err(Failure::Usage(format!("manifest {} does not exist", m.display())));
            }
            load_manifest(m)?
        }
        (_, true) => {
            spec.manifest = None;
            gen_synthetic_gestures(&spec.gestures, spec.experiment.seed)?.into()
        }
        (None, false) => return Err(Failure::Usage("pass --manifest FILE or --synthetic".into())),
    };
    Ok((spec, ds))
}

fn override_key(spec: &RunSpec, key: &str, value: &str) -> CliResult<RunSpec> {
    let text = format!("{}{key} = {value}\n", spec.to_kv());
    Ok(RunSpec::parse(&text)?)
}

fn write_run_manifest(dir: &Path, command: &str, spec: &RunSpec) -> CliResult<()> {
    let text = format!(
        "command = {command}\nseed = {}\nconfig_sha256 = {}\n",
        spec.experiment.seed,
        spec.hash()
    );
    fs::write(dir.join("run_manifest.txt"), text)?;
    fs::write(dir.join("config.txt"), spec.to_kv())?;
    Ok(())
}

fn emit(d: &DataArgs, command: &str, spec: &RunSpec, tables: &[ResultTable]) -> CliResult<ExitCode> {
    fs::create_dir_all(&d.out)?;
    let mut full = Vec::new();
    write_tables_csv(tables, &mut full, true)?;
    let mut acc = Vec::new();
    write_tables_csv(tables, &mut acc, false)?;
    fs::write(d.out.join("results.csv"), &full)?;
    fs::write(d.out.join("results_accuracy.csv"), &acc)?;
    write_run_manifest(&d.out, command, spec)?;
    print!("{}", String::from_utf8_lossy(&full));
    for t in tables {
        for n in &t.notes {
            eprintln!("note: {n}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn features(cli: &Cli, a: &FeatureArgs) -> CliResult<ExitCode> {
    let (spec, ds) = load(cli, &a.data)?;
    let r = a.r.unwrap_or(spec.experiment.r);
    let mode: NormalizeMode = spec.experiment.normalize;
    let pre = ds.samples.iter().map(|s| preprocess(s, mode)).collect::<lockernel::Result<Vec<_>>>()?;
    let mut out = String::new();
    match a.kind.as_str() {
        "pca" => {
            let frames = pre.iter().map(|s| s.frames()).max().unwrap_or(0);
            let rows = pre.iter().map(|s| zero_pad_vectorize(s, frames)).collect::<lockernel::Result<Vec<_>>>()?;
            let m = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
            let basis = fit_pca(&m, r)?;
            let cols: Vec<String> = (0..r).map(|i| format!("c{i}")).collect();
            out.push_str(&format!("sample,label,subject,{}\n", cols.join(",")));
            for (i, row) in rows.iter().enumerate() {
                let p = basis.project(row)?;
                let vals: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                out.push_str(&format!("{i},{},{},{}\n", ds.labels[i], ds.subjects[i], vals.join(",")));
            }
        }
        "svd" => {
            fs::create_dir_all(a.data.out.join("svd"))?;
            let cols: Vec<String> = (0..r).map(|i| format!("s{i}")).collect();
            out.push_str(&format!("sample,label,subject,{}\n", cols.join(",")));
            for (i, s) in pre.iter().enumerate() {
                let f = matrix_svd_features(s.data(), r)?;
                let vals: Vec<String> = f.s.iter().map(|v| v.to_string()).collect();
                out.push_str(&format!("{i},{},{},{}\n", ds.labels[i], ds.subjects[i], vals.join(",")));
                let mut u = String::new();
                for row in f.u.row_iter() {
                    let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    u.push_str(&cells.join(","));
                    u.push('\n');
                }
                fs::write(a.data.out.join("svd").join(format!("u_{i}.csv")), u)?;
            }
        }
        other => return Err(Failure::Usage(format!("--kind must be `pca` or `svd`, got `{other}`"))),
    }
    fs::create_dir_all(&a.data.out)?;
    fs::write(a.data.out.join("features.csv"), out)?;
    write_run_manifest(&a.data.out, "features", &spec)?;
    println!("wrote {} feature rows to {}", ds.len(), a.data.out.join("features.csv").display());
    Ok(ExitCode::SUCCESS)
}
