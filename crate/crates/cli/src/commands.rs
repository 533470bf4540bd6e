use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use lsdp_core::distributions::{family_pmd, DiscreteDistribution, PmfJson};
use lsdp_core::experiments::{
    crossover_csv, crossover_scan, family_sweep, first_crossing, ising_benchmark, ising_rows_csv, parse_grid,
    RateTable, Transition,
};
use lsdp_core::families::{family_covariance, triangle_threshold};
use lsdp_core::features::{covariance_from_distribution, BlockCovariance, FeatureMap, FeatureMapJson};
use lsdp_core::graph::{BipartiteDag, BlockPartition};
use lsdp_core::realization::{realization_error, realize as realize_model};
use lsdp_core::sdp::{test_compatibility, ReportJson, Tolerances, Verdict};

use crate::{BenchArgs, CrossoverArgs, FamilyArgs, FamilyFormat, RealizeArgs, SweepArgs, TestArgs};

/// Largest entrywise gap accepted between a realized model and its decomposition.
const REALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Input { path: PathBuf, source: lsdp_core::Error },
    #[error(transparent)]
    Core(#[from] lsdp_core::Error),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

/// Parses a JSON file, keeping serde's line/column diagnostic and the file name.
fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Input { path: path.into(), source: e.into() })
}

fn load<T, J>(path: &Path) -> Result<T>
where
    J: serde::de::DeserializeOwned,
    T: TryFrom<J, Error = lsdp_core::Error>,
{
    T::try_from(parse::<J>(path)?).map_err(|source| CliError::Input { path: path.into(), source })
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

fn seed_or_generate(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random();
        eprintln!("seed: {s}");
        s
    })
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Feasible => 0,
        Verdict::CertifiedInfeasible => 2,
        Verdict::Undecided => 3,
    }
}

pub fn test(args: TestArgs) -> Result<u8> {
    let dag: BipartiteDag = load::<_, lsdp_core::graph::DagJson>(&args.dag)?;
    let cov = match (&args.cov, &args.dist) {
        (Some(path), _) => load::<BlockCovariance, lsdp_core::features::CovarianceJson>(path)?,
        (None, Some(path)) => {
            let dist: DiscreteDistribution = load::<_, PmfJson>(path)?;
            let fmap = match &args.feature {
                Some(f) => load::<FeatureMap, FeatureMapJson>(f)?,
                None => FeatureMap::orthonormal(dist.alphabet_sizes())?,
            };
            covariance_from_distribution(&dist, &fmap).map_err(|source| CliError::Input { path: path.clone(), source })?
        }
        (None, None) => return Err(CliError::Usage("either --cov or --dist is required".into())),
    };
    dag.check_partition(cov.partition())
        .map_err(|source| CliError::Input { path: args.dag.clone(), source })?;
    let rep = test_compatibility(&cov, &dag, &args.tol.tolerances())?;
    let json = rep.to_json_value(&dag, cov.partition(), args.emit_witness, args.emit_decomposition);
    print!("{}", to_json(&json));
    Ok(verdict_code(rep.verdict))
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    schema: &'static str,
    m: usize,
    d: usize,
    grid: &'a str,
    points: usize,
    transitions: &'a [Transition],
    undecided: usize,
    witness_failures: usize,
    tolerances: Tolerances,
    wall_seconds: f64,
}

pub fn sweep(args: SweepArgs) -> Result<u8> {
    let start = Instant::now();
    let dag = match &args.dag {
        Some(path) => load::<BipartiteDag, lsdp_core::graph::DagJson>(path)?,
        None if args.m == 3 => BipartiteDag::triangle(),
        None => return Err(CliError::Usage("--dag is required unless M = 3".into())),
    };
    let grid = parse_grid(&args.grid)?;
    let tol = args.tol.tolerances();
    let sweep = with_jobs(args.jobs, || family_sweep(args.m, args.d, &dag, &grid, &tol))??;
    write_or_print(args.out.as_deref(), &sweep.to_csv())?;
    let witness_failures = sweep.rows.iter().filter(|r| !r.witness_ok).count();
    let summary = SweepSummary {
        schema: "lsdp.sweep/1",
        m: args.m,
        d: args.d,
        grid: &args.grid,
        points: grid.len(),
        transitions: &sweep.transitions,
        undecided: sweep.rows.iter().filter(|r| r.verdict == Verdict::Undecided).count(),
        witness_failures,
        tolerances: tol,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    for t in &sweep.transitions {
        eprintln!("transition {}: p = {:.6}", t.test, t.p);
    }
    if let Some(path) = &args.summary {
        write_or_print(Some(path), &to_json(&summary))?;
    }
    if witness_failures > 0 {
        return Err(CliError::Verification(format!("{witness_failures} witnesses failed re-verification")));
    }
    Ok(0)
}

#[derive(Serialize)]
struct BenchSummary {
    schema: &'static str,
    table: RateTable,
    tolerances: Tolerances,
    jobs: Option<usize>,
    wall_seconds: f64,
}

pub fn bench(args: BenchArgs) -> Result<u8> {
    let start = Instant::now();
    let seed = seed_or_generate(args.seed);
    let tol = args.tol.tolerances();
    let result = with_jobs(args.jobs, || ising_benchmark(args.instances, seed, &tol))??;
    let table = result.table;
    write_or_print(args.out.as_deref(), &table.to_csv())?;
    if let Some(path) = &args.rows {
        write_or_print(Some(path), &ising_rows_csv(&result.rows))?;
    }
    if let Some(path) = &args.summary {
        let summary = BenchSummary {
            schema: "lsdp.bench/1",
            table,
            tolerances: tol,
            jobs: args.jobs,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        write_or_print(Some(path), &to_json(&summary))?;
    }
    if table.undecided > 0 {
        eprintln!("warning: {} instances undecided; the rate table is not valid", table.undecided);
    }
    if table.witness_failures > 0 {
        return Err(CliError::Verification(format!("{} witnesses failed re-verification", table.witness_failures)));
    }
    Ok(0)
}

pub fn realize(args: RealizeArgs) -> Result<u8> {
    let report: ReportJson = parse(&args.report)?;
    let input = |source| CliError::Input { path: args.report.clone(), source };
    if report.verdict != Verdict::Feasible {
        return Err(CliError::Usage(format!("report verdict is {:?}, not Feasible", report.verdict)));
    }
    let Some(dec_json) = &report.decomposition else {
        return Err(CliError::Usage("report has no decomposition; rerun `test` with --emit-decomposition".into()));
    };
    let dag = BipartiteDag::try_from(report.dag.clone()).map_err(input)?;
    let partition = BlockPartition::new(report.dims.clone()).map_err(input)?;
    let dec = dec_json.to_decomposition().map_err(input)?;
    let seed = seed_or_generate(args.seed);
    let model = realize_model(&dec, &dag, &partition, seed)?;
    let err = realization_error(&model, &dec.sum())?;
    if err > REALIZATION_TOL {
        return Err(CliError::Verification(format!("realized covariance differs by {err:e}")));
    }
    eprintln!("verified: realized covariance matches the decomposition within {err:.2e}");
    write_or_print(args.out.as_deref(), &to_json(&model.to_json_value()))?;
    Ok(0)
}

pub fn crossover(args: CrossoverArgs) -> Result<u8> {
    if args.d_min < 2 || args.d_max < args.d_min {
        return Err(CliError::Usage("need 2 ≤ --d-min ≤ --d-max".into()));
    }
    let sizes: Vec<usize> = (args.d_min..=args.d_max).collect();
    let rows = with_jobs(args.jobs, || crossover_scan(&sizes))??;
    write_or_print(args.out.as_deref(), &crossover_csv(&rows))?;
    match first_crossing(&rows, triangle_threshold()) {
        Some(d) => eprintln!("combined entropic transition first exceeds {:.6} at D = {d}", triangle_threshold()),
        None => eprintln!("combined entropic transition stays below {:.6} on this range", triangle_threshold()),
    }
    Ok(0)
}

pub fn family(args: FamilyArgs) -> Result<u8> {
    let text = match args.format {
        FamilyFormat::Pmf => to_json(&family_pmd(args.m, args.d, args.p)?.to_json_value()),
        FamilyFormat::Cov => to_json(&family_covariance(args.m, args.d, args.p)?.cov.to_json_value()),
    };
    write_or_print(args.out.as_deref(), &text)?;
    Ok(0)
}
