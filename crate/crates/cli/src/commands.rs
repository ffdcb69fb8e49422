use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hsaicp::bench::{self, CampaignConfig, Noise};
use hsaicp::{Algorithm, Registration, RegistrationParams, RigidTransform};

use crate::cloud_io::{load_cloud, write_cloud, CloudFormat};
use crate::report::{self, ReportFile, SimulationMeta};
use crate::{CliError, EXIT_DATA, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE};

/// Environment variable capping the number of benchmark worker threads.
pub const THREADS_ENV: &str = "HSA_ICP_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "hsa-icp",
    version,
    about = "Rigid registration of partially overlapping point clouds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Align a data cloud onto a model cloud.
    Register(RegisterArgs),
    /// Cut a source cloud into a partially overlapping pair with known motion.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo robustness campaign.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct RegisterArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "hsa")]
    algo: Algorithm,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    xi_min: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// 4×4 row-major initial transform.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Echoed into the report.
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writes the data cloud moved by the estimate.
    #[arg(long)]
    aligned_out: Option<PathBuf>,
    /// Ground truth (JSON or 4×4 matrix) used to fill in the error fields.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    n_cut: usize,
    /// Absolute noise standard deviation; defaults to half the model resolution.
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    overlaps: Vec<f64>,
    #[arg(long)]
    trials: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    algos: Vec<Algorithm>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Campaign JSON path; the CSV goes next to it with a `.csv` extension.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    angle_deg: f64,
    /// Translation perturbation range in units of the model resolution.
    #[arg(long, default_value_t = 1.0)]
    trans_range: f64,
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Register(a) => register(a),
        Command::Simulate(a) => simulate(a).map(|_| EXIT_OK),
        Command::Bench(a) => bench_cmd(a).map(|_| EXIT_OK),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn register(a: RegisterArgs) -> Result<i32, CliError> {
    let data = load_cloud(&a.data)?;
    let model = load_cloud(&a.model)?;
    let init = match &a.init {
        Some(p) => report::load_matrix4(p)?,
        None => RigidTransform::identity(),
    };
    let truth = a.truth.as_deref().map(report::load_transform).transpose()?;
    let defaults = RegistrationParams::default();
    let params = RegistrationParams {
        algorithm: a.algo,
        gamma: a.gamma.unwrap_or(defaults.gamma),
        lambda: a.lambda.unwrap_or(defaults.lambda),
        xi_min: a.xi_min.unwrap_or(defaults.xi_min),
        delta: a.delta,
        max_iterations: a.max_iters.unwrap_or(defaults.max_iterations),
        ..defaults
    };
    params
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let reg = Registration::new(&data, &model)?;
    let result = reg.run(&init, &params)?;
    let d = reg.resolution();
    let errors = truth
        .map(|t| bench::relative_errors(&result.transform, &t, d))
        .transpose()?;
    let report = ReportFile::new(&result, &params, &init, d, errors, a.seed);

    match &a.out {
        Some(path) => report::write_report(&report, path)?,
        None => {
            let text =
                serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
            println!("{text}");
        }
    }
    if let Some(path) = &a.aligned_out {
        let moved = hsaicp::apply_transform(&data, &result.transform)?;
        write_cloud(&moved, path, CloudFormat::from_extension(path))?;
    }
    if let Some(f) = &result.failure {
        eprintln!("error: registration failed: {f}");
        return Ok(EXIT_DATA);
    }
    if !result.converged {
        eprintln!(
            "warning: no convergence after {} iterations",
            result.iterations
        );
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(EXIT_OK)
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let source = load_cloud(&a.source)?;
    let noise = match a.noise_sigma {
        Some(s) => Noise::Absolute(s),
        None => Noise::default(),
    };
    let pair = bench::generate_pair(&source, a.n_cut, noise, a.seed)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;
    write_cloud(
        &pair.data,
        a.out_dir.join("data.ply"),
        CloudFormat::PlyAscii,
    )?;
    write_cloud(
        &pair.model,
        a.out_dir.join("model.ply"),
        CloudFormat::PlyAscii,
    )?;
    report::write_json(&pair.ground_truth, &a.out_dir.join("truth.json"))?;
    let meta = SimulationMeta {
        xi_true: pair.xi_true,
        n_cut: pair.n_cut,
        source_points: source.len(),
        data_points: pair.data.len(),
        model_points: pair.model.len(),
        resolution: pair.d,
        noise_sigma: pair.noise_sigma,
        seed: pair.seed,
    };
    report::write_json(&meta, &a.out_dir.join("meta.json"))
}

/// `report.json` → `report.csv`; a path without extension gets `.csv` appended.
pub fn csv_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "csv") {
        let mut s = out.as_os_str().to_owned();
        s.push(".csv");
        PathBuf::from(s)
    } else {
        out.with_extension("csv")
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Data(e.to_string()))
}

fn bench_cmd(a: BenchArgs) -> Result<(), CliError> {
    let source = load_cloud(&a.source)?;
    let config = CampaignConfig {
        overlaps: a.overlaps,
        trials: a.trials,
        algorithms: a.algos,
        params: RegistrationParams::default(),
        noise: a.noise_sigma.map_or(Noise::default(), Noise::Absolute),
        angle_range_deg: a.angle_deg,
        trans_range: a.trans_range,
        seed: a.seed,
    };
    let pool = thread_pool()?;
    let start = Instant::now();
    let campaign = pool.install(|| bench::run_monte_carlo(&source, &config))?;
    report::write_json(&campaign, &a.out)?;
    let csv = campaign.to_csv()?;
    let csv_out = csv_path(&a.out);
    std::fs::write(&csv_out, csv).map_err(|e| CliError::io(&csv_out, e))?;

    let mut err = std::io::stderr().lock();
    for s in &campaign.summaries {
        let _ = writeln!(
            err,
            "{:<7} xi={:.3} success={:.2} ({}/{})",
            s.algorithm.name(),
            s.xi_true,
            s.success_rate,
            s.successes,
            s.trials
        );
    }
    let _ = writeln!(
        err,
        "{} trials in {:.1}s",
        campaign.trials.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
