//! Run configuration in three layers: built-in defaults, then a TOML file,
//! then command line flags, each layer overriding the one below. The resolved
//! result is embedded verbatim in every output file, so a run can be
//! reproduced from its artifacts alone.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use mlve_core::lve::{LveParams, MAX_LEGS};
use mlve_core::model::{CouplingPoint, SliceConfig, DEFAULT_RHO};
use mlve_core::replica::QuadParams;
use mlve_core::series::MAX_ORDER_G;

/// Flags shared by every subcommand. Anything not given here falls back to
/// the config file, then to the defaults.
#[derive(Args, Debug, Default)]
pub struct CommonOpts {
    /// TOML config file; command line flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Slice base M (at least 2)
    #[arg(long = "M", value_name = "M")]
    pub m: Option<u32>,

    /// Lowest slice index; only 1 is supported
    #[arg(long)]
    pub jmin: Option<u32>,

    /// Highest slice index; the momentum cutoff is N = M^jmax
    #[arg(long)]
    pub jmax: Option<u32>,

    /// Coupling as "re" or "re,im"
    #[arg(long, value_name = "RE[,IM]", allow_hyphen_values = true)]
    pub g: Option<String>,

    /// Coupling as "modulus,angle"; angle is Arg g, twice the cardioid gamma
    #[arg(
        long,
        value_name = "MOD,ANGLE",
        allow_hyphen_values = true,
        conflicts_with = "g"
    )]
    pub g_polar: Option<String>,

    /// Cardioid scale rho of the claimed summability domain
    #[arg(long)]
    pub rho: Option<f64>,

    /// Number of source legs; must match the number of momenta
    #[arg(long)]
    pub k: Option<usize>,

    /// Leg momenta in 1..=N, comma separated or repeated
    #[arg(long = "p", value_name = "P", value_delimiter = ',')]
    pub momenta: Option<Vec<u32>>,

    /// Largest vertex order of the loop vertex expansion
    #[arg(long)]
    pub n_max: Option<usize>,

    /// Taylor order for the series engine
    #[arg(long)]
    pub order: Option<usize>,

    /// Gauss-Hermite nodes per Gaussian dimension
    #[arg(long)]
    pub gh_nodes: Option<usize>,

    /// Gauss-Legendre nodes per interpolation dimension
    #[arg(long)]
    pub gl_nodes: Option<usize>,

    /// log2 of the quasi Monte Carlo budget for blocks past the tensor cutoff
    #[arg(long)]
    pub qmc_log2: Option<u32>,

    /// Shift seed of the quasi Monte Carlo sampler
    #[arg(long)]
    pub qmc_seed: Option<u64>,

    /// Sample count for Monte Carlo estimates
    #[arg(long)]
    pub samples: Option<usize>,

    /// Seed for Monte Carlo estimates
    #[arg(long)]
    pub seed: Option<u64>,

    /// Noise floor of the convergence verdict
    #[arg(long)]
    pub noise_floor: Option<f64>,

    /// Worker threads; 0 keeps the library default, MLVE_THREADS is the fallback
    #[arg(long)]
    pub threads: Option<usize>,

    /// Results file; stdout when omitted
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Run log; defaults to the results file with extension "log"
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    model: FileModel,
    #[serde(default)]
    observable: FileObservable,
    #[serde(default)]
    engine: FileEngine,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileModel {
    m: Option<u32>,
    j_min: Option<u32>,
    j_max: Option<u32>,
    g: Option<FileG>,
    rho: Option<f64>,
}

/// Either Cartesian (re, optional im) or polar (modulus, angle), not a mix.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileG {
    re: Option<f64>,
    im: Option<f64>,
    modulus: Option<f64>,
    angle: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileObservable {
    k: Option<usize>,
    momenta: Option<Vec<u32>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEngine {
    name: Option<String>,
    n_max: Option<usize>,
    order: Option<usize>,
    gh_nodes: Option<usize>,
    gl_nodes: Option<usize>,
    qmc_log2: Option<u32>,
    qmc_seed: Option<u64>,
    samples: Option<usize>,
    seed: Option<u64>,
    noise_floor: Option<f64>,
    threads: Option<usize>,
}

/// Everything a run needs, fully defaulted and validated. Serialized into
/// each result file and log for provenance.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub model: ModelCfg,
    pub observable: ObservableCfg,
    pub engine: EngineCfg,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelCfg {
    pub m: u32,
    pub j_min: u32,
    pub j_max: u32,
    pub g_re: f64,
    pub g_im: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservableCfg {
    pub k: usize,
    pub momenta: Vec<u32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineCfg {
    pub name: &'static str,
    pub n_max: usize,
    pub order: usize,
    pub gh_nodes: usize,
    pub gl_nodes: usize,
    pub qmc_log2: u32,
    pub qmc_seed: u64,
    pub samples: usize,
    pub seed: u64,
    pub noise_floor: f64,
    pub threads: usize,
}

impl ResolvedConfig {
    pub fn slices(&self) -> SliceConfig {
        SliceConfig::new(self.model.m, self.model.j_max).expect("validated during resolution")
    }

    pub fn point(&self) -> CouplingPoint {
        CouplingPoint::with_rho(
            Complex64::new(self.model.g_re, self.model.g_im),
            self.model.rho,
        )
    }

    pub fn quad_params(&self) -> QuadParams {
        QuadParams {
            gh_nodes: self.engine.gh_nodes,
            gl_nodes: self.engine.gl_nodes,
            qmc_log2: self.engine.qmc_log2,
            qmc_seed: self.engine.qmc_seed,
            force_qmc: false,
        }
    }

    pub fn lve_params(&self) -> LveParams {
        LveParams {
            n_max: self.engine.n_max,
            quad: self.quad_params(),
            noise_floor: self.engine.noise_floor,
        }
    }
}

fn parse_pair(flag: &str, s: &str) -> Result<(f64, Option<f64>)> {
    let mut parts = s.split(',');
    let first = parts
        .next()
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| anyhow!("{flag} must not be empty"))?;
    let a: f64 = first
        .trim()
        .parse()
        .map_err(|_| anyhow!("{flag}: {first:?} is not a number"))?;
    let b = match parts.next() {
        Some(second) => Some(
            second
                .trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("{flag}: {second:?} is not a number"))?,
        ),
        None => None,
    };
    if parts.next().is_some() {
        bail!("{flag} takes at most two comma separated numbers, got {s:?}");
    }
    Ok((a, b))
}

fn resolve_g(opts: &CommonOpts, file: &FileConfig) -> Result<Complex64> {
    if let Some(s) = &opts.g {
        let (re, im) = parse_pair("--g", s)?;
        return Ok(Complex64::new(re, im.unwrap_or(0.0)));
    }
    if let Some(s) = &opts.g_polar {
        let (modulus, angle) = parse_pair("--g-polar", s)?;
        let angle = angle.ok_or_else(|| anyhow!("--g-polar needs \"modulus,angle\""))?;
        if modulus < 0.0 {
            bail!("--g-polar modulus must not be negative, got {modulus}");
        }
        return Ok(Complex64::from_polar(modulus, angle));
    }
    match &file.model.g {
        Some(g) => match (g.re, g.im, g.modulus, g.angle) {
            (Some(re), im, None, None) => Ok(Complex64::new(re, im.unwrap_or(0.0))),
            (None, None, Some(modulus), Some(angle)) => {
                if modulus < 0.0 {
                    bail!("model.g.modulus must not be negative, got {modulus}");
                }
                Ok(Complex64::from_polar(modulus, angle))
            }
            _ => bail!("model.g needs re (and optionally im), or modulus and angle"),
        },
        None => Ok(Complex64::new(0.0, 0.0)),
    }
}

/// Merges defaults, file, and flags, then validates the lot. `engine` is the
/// label of the subcommand being run; a conflicting engine.name in the file
/// is rejected rather than silently ignored.
pub fn resolve(opts: &CommonOpts, engine: &'static str) -> Result<ResolvedConfig> {
    let file: FileConfig = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    if let Some(name) = &file.engine.name {
        if name != engine {
            bail!("config names engine {name:?} but this subcommand runs {engine:?}");
        }
    }

    let m = opts.m.or(file.model.m).unwrap_or(2);
    let j_min = opts.jmin.or(file.model.j_min).unwrap_or(1);
    if j_min != 1 {
        bail!("the slicing starts at j_min = 1; {j_min} is not supported");
    }
    let j_max = opts.jmax.or(file.model.j_max).unwrap_or(3);
    let slices = SliceConfig::new(m, j_max).map_err(|e| anyhow!("{e}"))?;
    let rho = opts.rho.or(file.model.rho).unwrap_or(DEFAULT_RHO);
    if !rho.is_finite() || rho <= 0.0 {
        bail!("rho must be positive and finite, got {rho}");
    }
    let g = resolve_g(opts, &file)?;
    if !g.re.is_finite() || !g.im.is_finite() {
        bail!("the coupling must be finite, got {g}");
    }

    let momenta = opts
        .momenta
        .clone()
        .or_else(|| file.observable.momenta.clone())
        .unwrap_or_default();
    let k = opts.k.or(file.observable.k).unwrap_or(momenta.len());
    if k != momenta.len() {
        bail!("k = {k} does not match the {} momenta given", momenta.len());
    }
    if k > MAX_LEGS {
        bail!("at most {MAX_LEGS} legs are supported, got {k}");
    }
    let n = slices.n();
    for &p in &momenta {
        if p == 0 || p > n {
            bail!("momentum {p} lies outside 1..={n}");
        }
    }

    let quad = QuadParams::default();
    let lve = LveParams::default();
    let n_max = opts.n_max.or(file.engine.n_max).unwrap_or(lve.n_max);
    if !(1..=6).contains(&n_max) {
        bail!("n_max must lie in 1..=6, got {n_max}");
    }
    let order = opts.order.or(file.engine.order).unwrap_or(MAX_ORDER_G);
    if order > MAX_ORDER_G {
        bail!("the series order is capped at {MAX_ORDER_G}, got {order}");
    }
    let gh_nodes = opts
        .gh_nodes
        .or(file.engine.gh_nodes)
        .unwrap_or(quad.gh_nodes);
    if !(2..=200).contains(&gh_nodes) {
        bail!("gh_nodes must lie in 2..=200, got {gh_nodes}");
    }
    let gl_nodes = opts
        .gl_nodes
        .or(file.engine.gl_nodes)
        .unwrap_or(quad.gl_nodes);
    if !(1..=200).contains(&gl_nodes) {
        bail!("gl_nodes must lie in 1..=200, got {gl_nodes}");
    }
    let qmc_log2 = opts
        .qmc_log2
        .or(file.engine.qmc_log2)
        .unwrap_or(quad.qmc_log2);
    if qmc_log2 > 26 {
        bail!("qmc_log2 is capped at 26, got {qmc_log2}");
    }
    let samples = opts.samples.or(file.engine.samples).unwrap_or(200_000);
    if !(100..=100_000_000).contains(&samples) {
        bail!("samples must lie in 100..=1e8, got {samples}");
    }
    let noise_floor = opts
        .noise_floor
        .or(file.engine.noise_floor)
        .unwrap_or(lve.noise_floor);
    if !noise_floor.is_finite() || noise_floor <= 0.0 {
        bail!("noise_floor must be positive and finite, got {noise_floor}");
    }
    let threads = match opts.threads.or(file.engine.threads) {
        Some(t) => t,
        None => match std::env::var("MLVE_THREADS") {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| anyhow!("MLVE_THREADS must be a thread count, got {s:?}"))?,
            Err(_) => 0,
        },
    };
    if threads > 512 {
        bail!("threads is capped at 512, got {threads}");
    }

    Ok(ResolvedConfig {
        model: ModelCfg {
            m,
            j_min,
            j_max,
            g_re: g.re,
            g_im: g.im,
            rho,
        },
        observable: ObservableCfg { k, momenta },
        engine: EngineCfg {
            name: engine,
            n_max,
            order,
            gh_nodes,
            gl_nodes,
            qmc_log2,
            qmc_seed: opts
                .qmc_seed
                .or(file.engine.qmc_seed)
                .unwrap_or(quad.qmc_seed),
            samples,
            seed: opts.seed.or(file.engine.seed).unwrap_or(1),
            noise_floor,
            threads,
        },
    })
}

/// Parses "start:step:stop" (inclusive at both ends, up to rounding of the
/// step count) or a single number into a grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let nums: Vec<f64> = spec
        .split(':')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("{t:?} in grid {spec:?} is not a number"))
        })
        .collect::<Result<_>>()?;
    let grid = match nums[..] {
        [v] => vec![v],
        [start, step, stop] => {
            if !step.is_finite() || step <= 0.0 {
                bail!("grid step must be positive, got {step} in {spec:?}");
            }
            if stop < start {
                bail!("grid stop {stop} is below start {start} in {spec:?}");
            }
            let span = (stop - start) / step;
            let count = if (span - span.round()).abs() < 1e-6 {
                span.round() as usize + 1
            } else {
                span.floor() as usize + 1
            };
            if count > 100_000 {
                bail!("grid {spec:?} has {count} points; the cap is 100000");
            }
            (0..count).map(|i| start + i as f64 * step).collect()
        }
        _ => bail!("grid {spec:?} must be a single value or start:step:stop"),
    };
    if grid.iter().any(|v| !v.is_finite()) {
        bail!("grid {spec:?} contains non-finite values");
    }
    Ok(grid)
}
