//! `mlve`: batch front door to the engines in mlve-core. Subcommands map one
//! to one onto the library: exact sigma quadrature, the multi-scale loop
//! vertex expansion, the resummed perturbation series, grid scans over the
//! coupling plane, and the exactness self-checks. Single results are printed
//! as JSON, grids as RFC 4180 CSV, and every run can write a deterministic
//! log with the resolved config, seeds, versions, and tolerances.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure (a quadrature
//! that did not settle, or a self-check that found a violation). A loop
//! vertex expansion that reports `converged: false` is a result, not a
//! failure; scans depend on seeing both verdicts.

mod config;
mod output;

use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use config::{parse_grid, resolve, CommonOpts, ResolvedConfig};
use output::{cplx, finite, OutputSink};

use mlve_core::forest::{bkar_exactness_residual, enumerate_forests, enumerate_spanning_trees};
use mlve_core::grassmann::{chi, chi_bar, gaussian_expectation, wick_recursive, Generator};
use mlve_core::lve::{cardioid_scan, cumulant_lve, empirical_rho};
use mlve_core::model::{check_resolvent_bound, CouplingPoint};
use mlve_core::oracle::{mc_cumulants, Oracle, SIGMA_REL_TOL};
use mlve_core::series::{borel_pade_resum, wick_coefficients, Observable};

#[derive(Parser)]
#[command(
    name = "mlve",
    version,
    about = "Cumulants of the quartic vector model: quadrature oracle, loop vertex expansion, resummed series, and self-checks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact sigma-quadrature value of log Z (k = 0) or of a cumulant
    Oracle(OracleArgs),
    /// Multi-scale loop vertex expansion with order-by-order increments
    Lve(LveArgs),
    /// Taylor coefficients in g and their Borel-Pade resummation
    Series(SeriesArgs),
    /// Convergence scan over a (|g|, gamma) grid; CSV, one row per cell
    Scan(ScanArgs),
    /// Exactness residual of the forest interpolation formula
    BkarCheck(BkarArgs),
    /// Sampled check of the resolvent bound along cardioid rays
    ResolventBound(ResolventArgs),
    /// Determinant Gaussian expectations against the exterior-algebra recursion
    GrassmannCheck(GrassmannArgs),
}

enum Failure {
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
}

type CmdResult = Result<(), Failure>;

fn validation(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn numerical(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Numerical(e.into())
}

fn main() -> ExitCode {
    let outcome = match Cli::parse().cmd {
        Cmd::Oracle(args) => run_oracle(args),
        Cmd::Lve(args) => run_lve(args),
        Cmd::Series(args) => run_series(args),
        Cmd::Scan(args) => run_scan(args),
        Cmd::BkarCheck(args) => run_bkar(args),
        Cmd::ResolventBound(args) => run_resolvent(args),
        Cmd::GrassmannCheck(args) => run_grassmann(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn init_threads(threads: usize) {
    if threads > 0 {
        // a second build_global in one process keeps the first pool; fine here
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn setup(
    common: &CommonOpts,
    engine: &'static str,
) -> Result<(ResolvedConfig, OutputSink), Failure> {
    let cfg = resolve(common, engine).map_err(validation)?;
    init_threads(cfg.engine.threads);
    Ok((cfg, OutputSink::new(&common.out, &common.log)))
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Also run the Monte Carlo cross-check with --samples and --seed
    #[arg(long)]
    with_mc: bool,
}

fn run_oracle(args: OracleArgs) -> CmdResult {
    let (cfg, sink) = setup(&args.common, "oracle")?;
    let oracle = Oracle::new(cfg.slices().n(), cfg.point());
    let momenta = &cfg.observable.momenta;
    let value = if momenta.is_empty() {
        oracle.log_z()
    } else {
        oracle.cumulant(momenta)
    }
    .map_err(|e| numerical(anyhow!(e)))?;
    let mc = if args.with_mc {
        let targets: Vec<Vec<u32>> = if momenta.is_empty() {
            Vec::new()
        } else {
            vec![momenta.clone()]
        };
        let est = mc_cumulants(
            cfg.slices().n(),
            &cfg.point(),
            &targets,
            cfg.engine.samples,
            cfg.engine.seed,
        );
        let est = if momenta.is_empty() {
            est.log_z
        } else {
            est.cumulants[0]
        };
        Some(json!({
            "mean": cplx(est.mean),
            "std_err": finite(est.std_err),
            "samples": est.samples,
            "pulls": finite((est.mean - value).norm() / est.std_err),
        }))
    } else {
        None
    };
    let payload = json!({
        "command": "oracle",
        "config": &cfg,
        "result": {
            "observable": if momenta.is_empty() { "log_z" } else { "cumulant" },
            "value": cplx(value),
            "rel_tol": SIGMA_REL_TOL,
            "mc": mc,
        },
    });
    sink.write_json(&payload).map_err(validation)?;
    sink.write_log("oracle", &cfg, &[("outcome", "ok".into())])
        .map_err(validation)
}

#[derive(Args)]
struct LveArgs {
    #[command(flatten)]
    common: CommonOpts,
}

fn run_lve(args: LveArgs) -> CmdResult {
    let (cfg, sink) = setup(&args.common, "lve")?;
    let res = cumulant_lve(
        &cfg.slices(),
        &cfg.point(),
        &cfg.observable.momenta,
        &cfg.lve_params(),
    )
    .map_err(|e| numerical(anyhow!(e)))?;
    let payload = json!({
        "command": "lve",
        "config": &cfg,
        "result": {
            "value": cplx(res.value),
            "converged": res.converged,
            "error_estimate": finite(res.error_estimate),
            "order_terms": res.order_terms.iter().map(|&t| cplx(t)).collect::<Vec<_>>(),
            "partial_sums": res.partial_sums.iter().map(|&s| cplx(s)).collect::<Vec<_>>(),
        },
    });
    sink.write_json(&payload).map_err(validation)?;
    sink.write_log(
        "lve",
        &cfg,
        &[
            ("converged", res.converged.to_string()),
            ("outcome", "ok".into()),
        ],
    )
    .map_err(validation)
}

#[derive(Args)]
struct SeriesArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Pade split "L,M" in the Borel plane; defaults to the balanced split
    #[arg(long, value_name = "L,M")]
    pade: Option<String>,
}

fn run_series(args: SeriesArgs) -> CmdResult {
    let (cfg, sink) = setup(&args.common, "series")?;
    let order = cfg.engine.order;
    let (l, m) = match &args.pade {
        Some(spec) => {
            let parts: Vec<usize> = spec
                .split(',')
                .map(|t| t.trim().parse().map_err(|_| anyhow!("bad --pade {spec:?}")))
                .collect::<Result<_, _>>()
                .map_err(validation)?;
            let [l, m] = parts[..] else {
                return Err(validation(anyhow!("--pade needs \"L,M\"")));
            };
            if l + m > order {
                return Err(validation(anyhow!(
                    "pade degrees {l}+{m} exceed the series order {order}"
                )));
            }
            (l, m)
        }
        None => (order - order / 2, order / 2),
    };
    let obs = if cfg.observable.momenta.is_empty() {
        Observable::FreeEnergy
    } else {
        Observable::Cumulant(cfg.observable.momenta.clone())
    };
    let series =
        wick_coefficients(cfg.slices().n(), &obs, order).map_err(|e| numerical(anyhow!(e)))?;
    let coeffs = series.coeffs_f64();
    let g = cfg.point().g;
    let resummed = borel_pade_resum(&coeffs, g, l, m);
    let payload = json!({
        "command": "series",
        "config": &cfg,
        "result": {
            "coefficients": &coeffs,
            "truncated": cplx(series.eval_truncated(g)),
            "pade": { "l": l, "m": m },
            "borel_pade": resummed.as_ref().ok().map(|&v| cplx(v)),
            "borel_pade_error": resummed.as_ref().err().map(|e| e.to_string()),
        },
    });
    sink.write_json(&payload).map_err(validation)?;
    let outcome = match &resummed {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("truncated sum only; resummation failed: {e}"),
    };
    sink.write_log("series", &cfg, &[("outcome", outcome)])
        .map_err(validation)
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Grid of coupling moduli |g|: "start:step:stop" or one value
    #[arg(
        long,
        value_name = "GRID",
        default_value = "0.02:0.04:0.18",
        allow_hyphen_values = true
    )]
    rho_grid: String,
    /// Grid of cardioid angles gamma = Arg(g)/2, in radians
    #[arg(
        long,
        value_name = "GRID",
        default_value = "0:0.3:1.5",
        allow_hyphen_values = true
    )]
    angle_grid: String,
    /// Attach quadrature reference values on cells inside the domain
    #[arg(long)]
    with_oracle: bool,
}

#[derive(Serialize)]
struct ScanRecord {
    m: u32,
    j_max: u32,
    rho: f64,
    k: usize,
    momenta: String,
    n_max: usize,
    modulus: f64,
    gamma: f64,
    g_re: f64,
    g_im: f64,
    in_domain: bool,
    converged: bool,
    value_re: f64,
    value_im: f64,
    error_estimate: f64,
    oracle_re: Option<f64>,
    oracle_im: Option<f64>,
    oracle_gap: Option<f64>,
}

fn run_scan(args: ScanArgs) -> CmdResult {
    let (cfg, sink) = setup(&args.common, "scan")?;
    let moduli = parse_grid(&args.rho_grid).map_err(validation)?;
    if moduli.iter().any(|&v| v < 0.0) {
        return Err(validation(anyhow!("|g| grid values must not be negative")));
    }
    let gammas = parse_grid(&args.angle_grid).map_err(validation)?;
    let rows = cardioid_scan(
        &cfg.slices(),
        &cfg.observable.momenta,
        &moduli,
        &gammas,
        cfg.model.rho,
        &cfg.lve_params(),
        args.with_oracle,
    )
    .map_err(|e| numerical(anyhow!(e)))?;
    let momenta_field = cfg
        .observable
        .momenta
        .iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join(";");
    let records: Vec<ScanRecord> = rows
        .iter()
        .map(|r| ScanRecord {
            m: cfg.model.m,
            j_max: cfg.model.j_max,
            rho: cfg.model.rho,
            k: cfg.observable.k,
            momenta: momenta_field.clone(),
            n_max: cfg.engine.n_max,
            modulus: r.modulus,
            gamma: r.gamma,
            g_re: r.g.re,
            g_im: r.g.im,
            in_domain: r.in_domain,
            converged: r.converged,
            value_re: r.value.re,
            value_im: r.value.im,
            error_estimate: r.error_estimate,
            oracle_re: r.oracle.map(|z| z.re),
            oracle_im: r.oracle.map(|z| z.im),
            oracle_gap: r.oracle_gap,
        })
        .collect();
    sink.write_csv(&records).map_err(validation)?;
    sink.write_log(
        "scan",
        &cfg,
        &[
            ("cells", records.len().to_string()),
            ("empirical_rho", format!("{:e}", empirical_rho(&rows))),
            ("outcome", "ok".into()),
        ],
    )
    .map_err(validation)
}

#[derive(Args)]
struct BkarArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Number of interpolation vertices (1..=5; 5 is slow at high node counts)
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Gauss-Legendre nodes per weakening parameter
    #[arg(long, default_value_t = 24)]
    nodes: usize,
    /// Residual tolerance
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

fn run_bkar(args: BkarArgs) -> CmdResult {
    let (cfg, sink) = setup(&args.common, "check")?;
    if !(1..=5).contains(&args.n) {
        return Err(validation(anyhow!("--n must lie in 1..=5, got {}", args.n)));
    }
    if !(2..=64).contains(&args.nodes) {
        return Err(validation(anyhow!(
            "--nodes must lie in 2..=64, got {}",
            args.nodes
        )));
    }
    let residual = bkar_exactness_residual(args.n, |a, b| 0.3 / (1.0 + (a + b) as f64), args.nodes)
        .map_err(|e| numerical(anyhow!(e)))?;
    let forest_count = enumerate_forests(args.n)
        .map_err(|e| numerical(anyhow!(e)))?
        .len();
    let tree_count = enumerate_spanning_trees(args.n)
        .map_err(|e| numerical(anyhow!(e)))?
        .len();
    let pass = residual < args.tol;
    let payload = json!({
        "command": "bkar-check",
        "config": &cfg,
        "result": {
            "n": args.n,
            "nodes": args.nodes,
            "forest_count": forest_count,
            "tree_count": tree_count,
            "residual": finite(residual),
            "tolerance": args.tol,
            "pass": pass,
        },
    });
    sink.write_json(&payload).map_err(validation)?;
    let outcome = if pass {
        "ok".to_string()
    } else {
        format!("residual {residual:e} not below {:e}", args.tol)
    };
    sink.write_log("bkar-check", &cfg, &[("outcome", outcome.clone())])
        .map_err(validation)?;
    if pass {
        Ok(())
    } else {
        Err(numerical(anyhow!(outcome)))
    }
}

#[derive(Args)]
struct ResolventArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Grid of cardioid angles gamma, radians, |gamma| < pi/2
    #[arg(
        long,
        value_name = "GRID",
        default_value = "-1.4:0.2:1.4",
        allow_hyphen_values = true
    )]
    gamma_grid: String,
    /// Radial position inside the cardioid: |g| = fill * rho * cos^2(gamma)
    #[arg(long, default_value_t = 0.8)]
    fill: f64,
}

#[derive(Serialize)]
struct BoundRecord {
    gamma: f64,
    fill: f64,
    rho: f64,
    n: u32,
    modulus: f64,
    samples: usize,
    seed: u64,
    max_ratio: f64,
    worst_p: u32,
    worst_sigma: f64,
    violations_sharp: usize,
    within_claimed: bool,
}

fn run_resolvent(args: ResolventArgs) -> CmdResult {
    let (cfg, sink) = setup(&args.common, "check")?;
    let gammas = parse_grid(&args.gamma_grid).map_err(validation)?;
    for &gamma in &gammas {
        if gamma.cos() <= 1e-3 {
            return Err(validation(anyhow!(
                "gamma = {gamma} is too close to the boundary rays (need |gamma| < pi/2)"
            )));
        }
    }
    if !args.fill.is_finite() || args.fill <= 0.0 || args.fill > 100.0 {
        return Err(validation(anyhow!(
            "--fill must lie in (0, 100], got {}",
            args.fill
        )));
    }
    let n = cfg.slices().n();
    let mut records = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for (i, &gamma) in gammas.iter().enumerate() {
        let point = CouplingPoint::on_cardioid_ray(gamma, args.fill, cfg.model.rho);
        let seed = cfg.engine.seed + i as u64;
        let report = check_resolvent_bound(&point, n, cfg.engine.samples, seed);
        worst = worst.max(report.max_ratio);
        records.push(BoundRecord {
            gamma,
            fill: args.fill,
            rho: cfg.model.rho,
            n,
            modulus: point.g.norm(),
            samples: report.samples,
            seed,
            max_ratio: report.max_ratio,
            worst_p: report.worst_p,
            worst_sigma: report.worst_sigma,
            violations_sharp: report.violations,
            within_claimed: report.max_ratio <= 2.0,
        });
    }
    sink.write_csv(&records).map_err(validation)?;
    let pass = records.iter().all(|r| r.within_claimed);
    let outcome = if pass {
        "ok".to_string()
    } else {
        format!("resolvent bound violated: sup |R| cos(gamma) = {worst}")
    };
    sink.write_log(
        "resolvent-bound",
        &cfg,
        &[
            ("rays", records.len().to_string()),
            ("sup_ratio", format!("{worst:e}")),
            ("outcome", outcome.clone()),
        ],
    )
    .map_err(validation)?;
    if pass {
        Ok(())
    } else {
        Err(numerical(anyhow!(outcome)))
    }
}

#[derive(Args)]
struct GrassmannArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Random instances to draw
    #[arg(long, default_value_t = 500)]
    instances: usize,
    /// Largest number of generator pairs per instance
    #[arg(long, default_value_t = 4)]
    max_pairs: usize,
}

fn run_grassmann(args: GrassmannArgs) -> CmdResult {
    use num_complex::Complex64;
    use rand::rngs::StdRng;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    let (cfg, sink) = setup(&args.common, "check")?;
    if !(1..=1_000_000).contains(&args.instances) {
        return Err(validation(anyhow!("--instances must lie in 1..=1e6")));
    }
    if !(1..=5).contains(&args.max_pairs) {
        return Err(validation(anyhow!("--max-pairs must lie in 1..=5")));
    }
    let mut rng = StdRng::seed_from_u64(cfg.engine.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..args.instances {
        let pairs = rng.random_range(1..=args.max_pairs);
        let mut c = vec![vec![Complex64::new(0.0, 0.0); pairs]; pairs];
        for row in &mut c {
            for entry in row.iter_mut() {
                *entry = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        let mut gens: Vec<Generator> = (0..pairs).flat_map(|i| [chi(i), chi_bar(i)]).collect();
        gens.shuffle(&mut rng);
        let det = gaussian_expectation(&c, &gens).map_err(|e| numerical(anyhow!(e)))?;
        let brute = wick_recursive(&c, &gens).map_err(|e| numerical(anyhow!(e)))?;
        worst = worst.max((det - brute).norm() / det.norm().max(brute.norm()).max(1.0));
    }
    let pass = worst < 1e-12;
    let payload = json!({
        "command": "grassmann-check",
        "config": &cfg,
        "result": {
            "instances": args.instances,
            "max_pairs": args.max_pairs,
            "seed": cfg.engine.seed,
            "worst_gap": finite(worst),
            "tolerance": 1e-12,
            "pass": pass,
        },
    });
    sink.write_json(&payload).map_err(validation)?;
    let outcome = if pass {
        "ok".to_string()
    } else {
        format!("worst relative gap {worst:e} at tolerance 1e-12")
    };
    sink.write_log("grassmann-check", &cfg, &[("outcome", outcome.clone())])
        .map_err(validation)?;
    if pass {
        Ok(())
    } else {
        Err(numerical(anyhow!(outcome)))
    }
}
