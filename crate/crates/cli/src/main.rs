use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lsrann::config::{RunConfig, ResolvedRun};
use lsrann::io::write_atomic;
use lsrann::problems::catalog_listing;
use lsrann::run::{compare, execute, extract_cloud, oracle_cloud, write_artifacts, Comparison, MANIFEST_FILE, SOLUTION_FILE};
use lsrann::solver::Solution;
use lsrann::zeroset::PointCloud;
use lsrann::Error;

const THREADS_VAR: &str = "LSRANN_THREADS";

#[derive(Parser)]
#[command(name = "lsrann", version, about = "Level-set solver for multivalued first-order PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(clap::Args)]
struct CaseArgs {
    /// TOML run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Catalog case id (overrides the config's case).
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl CaseArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match (&self.config, &self.case) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(case)) => RunConfig::for_case(case),
            (None, None) => return Err(Error::Config("give --case or --config".into())),
        };
        if let (Some(path), Some(case)) = (&self.config, &self.case) {
            log::info!("--case {case} overrides the case in {}", path.display());
            cfg.case = case.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a case and write solution.json, cloud.csv and manifest.json.
    Solve {
        #[command(flatten)]
        case: CaseArgs,
        /// `off` drops the growth schedule.
        #[arg(long, value_enum)]
        growth: Option<Switch>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also compare the cloud with the characteristics oracle.
        #[arg(long)]
        compare: bool,
    },
    /// Chamfer distances between a cloud and a reference manifold.
    Compare {
        cloud: PathBuf,
        /// Reference cloud CSV. Without it the oracle manifold is computed
        /// from --config/--case, or from the manifest next to the cloud.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        case: CaseArgs,
        /// Slab half-width for per-time slices.
        #[arg(long, default_value_t = 1e-9)]
        delta: f64,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print every catalog case with its parameters.
    Catalog {
        #[arg(long)]
        json: bool,
    },
    /// Sample the characteristics oracle manifold of a case.
    Oracle {
        #[command(flatten)]
        case: CaseArgs,
        /// Comma-separated times (default: the config's oracle times).
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long)]
        foot_points: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Re-extract the zero set from a saved solution.
    Zeroset {
        /// solution.json or a run directory containing it.
        solution: PathBuf,
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, value_delimiter = ',')]
        seed_grid: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        slice_times: Option<Vec<f64>>,
        #[arg(long)]
        eps0: Option<f64>,
        #[arg(long)]
        output: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::UnknownCase { .. } | Error::TomlDe(_) => 2,
            e if e.is_numerical() => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(e: Error) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

fn resolve(cfg: &RunConfig) -> Result<ResolvedRun, Failure> {
    cfg.resolve().map_err(config_failure)
}

/// Config for commands that act on an existing run: explicit flags first,
/// then the manifest saved in `dir`.
fn config_near(args: &CaseArgs, dir: &Path) -> Result<RunConfig, Failure> {
    if args.config.is_some() || args.case.is_some() {
        return args.load().map_err(config_failure);
    }
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| config_failure(Error::Config(format!("no --case/--config and cannot read {}: {e}", path.display()))))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::from(Error::from(e)))?;
    let cfg: RunConfig =
        serde_json::from_value(value["config"].clone()).map_err(|e| config_failure(Error::Config(format!("{}: {e}", path.display()))))?;
    Ok(cfg)
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Serialize)]
struct CompareReport {
    cloud: String,
    reference: String,
    points: usize,
    reference_points: usize,
    delta: f64,
    #[serde(flatten)]
    comparison: Comparison,
}

fn solve(args: &CaseArgs, growth: Option<Switch>, output: Option<PathBuf>, with_compare: bool) -> Result<(), Failure> {
    let mut cfg = args.load().map_err(config_failure)?;
    if let Some(g) = growth {
        cfg.network.growth_enabled = Some(matches!(g, Switch::On));
    }
    if output.is_some() {
        cfg.output = output;
    }
    let resolved = resolve(&cfg)?;
    let dir = resolved.output.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Failure::from(Error::from(e)))?;
    let mut out = match execute(&resolved) {
        Ok(out) => out,
        Err(f) => {
            f.manifest.write(&dir)?;
            eprintln!("manifest with the failed stage written to {}", dir.join(MANIFEST_FILE).display());
            return Err(f.error.into());
        }
    };
    if with_compare {
        let reference = oracle_cloud(&resolved.problem, &resolved.oracle)?;
        out.manifest.chamfer = Some(compare(&out.cloud, &reference, 1e-9)?);
    }
    write_artifacts(&dir, &out)?;
    for s in &out.manifest.stages {
        println!("{:?}: {} features, loss {:?}", s.stage, s.features, s.loss);
    }
    if let Some(c) = &out.manifest.chamfer {
        println!("chamfer mean {:.4e}, max {:.4e}", c.overall.mean, c.overall.max);
    }
    println!("{} zero-set points written to {}", out.cloud.len(), dir.display());
    Ok(())
}

fn cmd_compare(cloud_path: &Path, reference: Option<&Path>, args: &CaseArgs, delta: f64, output: Option<&Path>) -> Result<(), Failure> {
    let cloud = PointCloud::read_csv(cloud_path)?;
    let (reference_cloud, source) = match reference {
        Some(path) => (PointCloud::read_csv(path)?, path.display().to_string()),
        None => {
            let cfg = config_near(args, &parent_dir(cloud_path))?;
            let resolved = resolve(&cfg)?;
            (oracle_cloud(&resolved.problem, &resolved.oracle)?, format!("oracle for {}", cfg.case))
        }
    };
    let comparison = compare(&cloud, &reference_cloud, delta)?;
    let report = CompareReport {
        cloud: cloud_path.display().to_string(),
        reference: source,
        points: cloud.len(),
        reference_points: reference_cloud.len(),
        delta,
        comparison,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::from(Error::from(e)))? + "\n";
    match output {
        Some(path) => write_atomic(path, json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(())
}

fn cmd_catalog(json: bool) -> Result<(), Failure> {
    let listing = catalog_listing();
    if json {
        println!("{}", serde_json::to_string_pretty(&listing).map_err(|e| Failure::from(Error::from(e)))?);
        return Ok(());
    }
    for p in &listing {
        let growth: Vec<String> = p.growth.iter().map(|g| format!("{}@{:?}", g.width, g.range)).collect();
        println!("{}  {}", p.id, p.description);
        println!(
            "    {:?}, d={}, T={}, Omega={:?}",
            p.formulation, p.spatial_dim, p.t_final, p.omega
        );
        println!(
            "    N^I={}, N^B={}, E={:?}, Var={:?}, N={} ({}), eps_A={}",
            p.n_interior, p.n_boundary, p.mean, p.variance, p.n_candidates, p.n_candidates_label, p.eps_a
        );
        println!(
            "    m1={}, r1={:?}, growth=[{}], eta={}",
            p.m1,
            p.r1,
            growth.join(", "),
            p.eta
        );
    }
    Ok(())
}

fn cmd_oracle(args: &CaseArgs, times: Option<Vec<f64>>, foot_points: Option<usize>, output: &Path) -> Result<(), Failure> {
    let mut cfg = args.load().map_err(config_failure)?;
    if times.is_some() {
        cfg.oracle.times = times;
    }
    if foot_points.is_some() {
        cfg.oracle.foot_points = foot_points;
    }
    let resolved = resolve(&cfg)?;
    let cloud = oracle_cloud(&resolved.problem, &resolved.oracle)?;
    cloud.write_csv(output)?;
    println!("{} oracle points written to {}", cloud.len(), output.display());
    Ok(())
}

fn cmd_zeroset(
    solution: &Path,
    args: &CaseArgs,
    seed_grid: Option<Vec<usize>>,
    slice_times: Option<Vec<f64>>,
    eps0: Option<f64>,
    output: &Path,
) -> Result<(), Failure> {
    let path = if solution.is_dir() {
        solution.join(SOLUTION_FILE)
    } else {
        solution.to_path_buf()
    };
    let mut cfg = config_near(args, &parent_dir(&path))?;
    if slice_times.is_some() {
        cfg.zeroset.slice_times = slice_times;
        if seed_grid.is_none() {
            cfg.zeroset.seed_grid = None;
        }
    }
    if seed_grid.is_some() {
        cfg.zeroset.seed_grid = seed_grid;
    }
    if eps0.is_some() {
        cfg.zeroset.eps0 = eps0;
    }
    let resolved = resolve(&cfg)?;
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::from(Error::from(e)))?;
    let sol = Solution::from_json(&text)?;
    if sol.input_dim() != resolved.problem.input_dim() || sol.n_components() != resolved.problem.n_components() {
        return Err(config_failure(Error::Config(format!(
            "solution has {} inputs and {} components, case `{}` needs {} and {}",
            sol.input_dim(),
            sol.n_components(),
            cfg.case,
            resolved.problem.input_dim(),
            resolved.problem.n_components()
        ))));
    }
    let cloud = extract_cloud(&resolved.problem, &sol, &resolved.zeroset, resolved.slice_times.as_deref())?;
    if resolved.filter.is_some() {
        log::warn!("the tube filter needs the fit's collocation set and is skipped on re-extraction");
    }
    cloud.write_csv(output)?;
    println!("{} zero-set points written to {}", cloud.len(), output.display());
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_failure(Error::Config(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure {
            code: 1,
            message: e.to_string(),
        })
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Solve {
            case,
            growth,
            output,
            compare,
        } => solve(&case, growth, output, compare),
        Command::Compare {
            cloud,
            reference,
            case,
            delta,
            output,
        } => cmd_compare(&cloud, reference.as_deref(), &case, delta, output.as_deref()),
        Command::Catalog { json } => cmd_catalog(json),
        Command::Oracle {
            case,
            times,
            foot_points,
            output,
        } => cmd_oracle(&case, times, foot_points, &output),
        Command::Zeroset {
            solution,
            case,
            seed_grid,
            slice_times,
            eps0,
            output,
        } => cmd_zeroset(&solution, &case, seed_grid, slice_times, eps0, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
