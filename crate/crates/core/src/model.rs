//! Model geometry: the coupling point, slice layout, and the building blocks
//! every route shares (resolvents, subtracted logs, slice potentials).
//!
//! Conventions. The coupling is g = |g| e^{2 i gamma} with lambda = sqrt(g) on
//! the principal branch, so gamma = Arg(g)/2 in (-pi/2, pi/2]. The convergence
//! domain of the multi-scale expansion is the cardioid |g| < rho cos^2(gamma).
//! Momenta run over 1..=N with N = M^{j_max}; slice 1 is [1, M] and slice j >= 2
//! is (M^{j-1}, M^j]. The subtracted vertex log2(u) = u + ln(1 - u) is O(u^2) at
//! the origin, which is what makes slice potentials start at second order in
//! lambda and the expansion sum over forests converge.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::jet::Jet;

/// Default radius for the cardioid domain. Scans of the assembled expansion
/// (see the `scan` subcommand) show converged partial sums throughout this
/// region at desk scales; treat it as a practical domain, not a proved one.
pub const DEFAULT_RHO: f64 = 1.0;

/// A point in the complex coupling plane, with its square root fixed once.
#[derive(Clone, Copy, Debug)]
pub struct CouplingPoint {
    pub g: Complex64,
    pub lambda: Complex64,
    /// Half the argument of g, in (-pi/2, pi/2].
    pub gamma: f64,
    /// Cardioid radius used by `in_cardioid`.
    pub rho: f64,
}

impl CouplingPoint {
    pub fn new(g: Complex64) -> Self {
        Self::with_rho(g, DEFAULT_RHO)
    }

    pub fn with_rho(g: Complex64, rho: f64) -> Self {
        CouplingPoint {
            g,
            lambda: g.sqrt(),
            gamma: 0.5 * g.arg(),
            rho,
        }
    }

    /// The point at angle `gamma` and modulus `fill` times the cardioid
    /// boundary radius. `fill` in (0, 1) lands strictly inside the domain.
    pub fn on_cardioid_ray(gamma: f64, fill: f64, rho: f64) -> Self {
        let r = fill * cardioid_boundary(rho, gamma);
        Self::with_rho(Complex64::from_polar(r, 2.0 * gamma), rho)
    }

    pub fn in_cardioid(&self) -> bool {
        self.g.norm() < cardioid_boundary(self.rho, self.gamma)
    }
}

/// Boundary modulus rho cos^2(gamma) of the cardioid at angle gamma.
pub fn cardioid_boundary(rho: f64, gamma: f64) -> f64 {
    let c = gamma.cos();
    rho * c * c
}

/// Multi-scale slicing of the momentum range 1..=N, N = M^{j_max}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SliceConfig {
    pub m: u32,
    pub j_max: u32,
}

/// Keeps N small enough that per-slice sums and quadratures stay cheap.
pub const MAX_N: u32 = 1 << 16;

impl SliceConfig {
    pub fn new(m: u32, j_max: u32) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidParameter(format!(
                "slice base M={m}, need M >= 2"
            )));
        }
        if j_max < 1 {
            return Err(Error::InvalidParameter("need at least one slice".into()));
        }
        let n = (m as u64).checked_pow(j_max).unwrap_or(u64::MAX);
        if n > MAX_N as u64 {
            return Err(Error::CapExceeded {
                what: "N = M^j_max",
                got: n as usize,
                cap: MAX_N as usize,
            });
        }
        Ok(SliceConfig { m, j_max })
    }

    /// Total number of momenta N = M^{j_max}.
    pub fn n(&self) -> u32 {
        self.m.pow(self.j_max)
    }

    /// Momenta belonging to slice j.
    pub fn slice_range(&self, j: u32) -> std::ops::RangeInclusive<u32> {
        assert!(
            (1..=self.j_max).contains(&j),
            "slice index {j} out of 1..={}",
            self.j_max
        );
        if j == 1 {
            1..=self.m
        } else {
            self.m.pow(j - 1) + 1..=self.m.pow(j)
        }
    }

    /// The slice containing momentum p.
    pub fn slice_of(&self, p: u32) -> u32 {
        assert!(
            p >= 1 && p <= self.n(),
            "momentum {p} out of 1..={}",
            self.n()
        );
        let mut j = 1;
        let mut top = self.m;
        while p > top {
            j += 1;
            top *= self.m;
        }
        j
    }

    /// The subtraction constant L_N = sum_{p=1}^N 1/p.
    pub fn l_n(&self) -> f64 {
        harmonic_sum(self.n())
    }
}

/// Sum_{p=1}^{n} 1/p, summed smallest terms first.
pub fn harmonic_sum(n: u32) -> f64 {
    (1..=n).rev().map(|p| 1.0 / p as f64).sum()
}

/// log2(u) = u + ln(1 - u), with a series branch to avoid cancellation at small u.
pub fn subtracted_log(u: Complex64) -> Complex64 {
    if u.norm() < 1e-4 {
        // -u^2 (1/2 + u/3 + u^2/4 + u^3/5): truncation error ~ |u|^6 / 6
        -u * u * (Complex64::new(0.5, 0.0) + u / 3.0 + u * u / 4.0 + u * u * u / 5.0)
    } else {
        u + (Complex64::ONE - u).ln()
    }
}

/// The argument u_p(sigma) = i lambda sigma / p entering both the vertex and the
/// resolvent at momentum p.
#[inline]
pub fn u_of(point: &CouplingPoint, p: u32, sigma: f64) -> Complex64 {
    Complex64::I * point.lambda * sigma / p as f64
}

/// Resolvent factor G_p(sigma) = (1/p) (1 - i lambda sigma / p)^{-1}.
pub fn resolvent(point: &CouplingPoint, p: u32, sigma: f64) -> Complex64 {
    (Complex64::ONE - u_of(point, p, sigma)).inv() / p as f64
}

/// Slice potential V_j(sigma) = sum_{p in I_j} log2(i lambda sigma / p).
pub fn v_slice(cfg: &SliceConfig, point: &CouplingPoint, j: u32, sigma: f64) -> Complex64 {
    cfg.slice_range(j)
        .map(|p| subtracted_log(u_of(point, p, sigma)))
        .sum()
}

/// Jet of sigma |-> V_j(sigma) at the expansion point of `sigma_jet`.
pub fn v_slice_jet(cfg: &SliceConfig, point: &CouplingPoint, j: u32, sigma_jet: &Jet) -> Jet {
    let ord = sigma_jet.order();
    let mut acc = Jet::constant(Complex64::ZERO, ord);
    for p in cfg.slice_range(j) {
        let u = sigma_jet.scale(Complex64::I * point.lambda / p as f64);
        // u + ln(1 - u), with the constant coefficient recomputed stably
        let mut term = u.add(&u.neg().add_scalar(Complex64::ONE).ln());
        term = {
            let mut t = term;
            let fixed = subtracted_log(u.value());
            t = t.add_scalar(fixed - t.value());
            t
        };
        acc = acc.add(&term);
    }
    acc
}

/// Jet of sigma |-> G_p(sigma).
pub fn resolvent_jet(point: &CouplingPoint, p: u32, sigma_jet: &Jet) -> Jet {
    let u = sigma_jet.scale(Complex64::I * point.lambda / p as f64);
    u.neg()
        .add_scalar(Complex64::ONE)
        .recip()
        .scale(Complex64::from(1.0 / p as f64))
}

/// Uniform bound on |G_p| along the real sigma axis: 1 / (p cos gamma).
///
/// With t = |lambda| sigma / p real, |1 - i e^{i gamma} t|^2 = 1 + 2 t sin(gamma) + t^2,
/// minimized at t = -sin(gamma) with value cos^2(gamma). The bound is sharp.
pub fn resolvent_bound(p: u32, gamma: f64) -> f64 {
    1.0 / (p as f64 * gamma.cos())
}

/// Outcome of a randomized check of the resolvent bound.
#[derive(Clone, Copy, Debug)]
pub struct BoundReport {
    pub samples: usize,
    /// sup over samples of |G_p(sigma)| p cos(gamma); the bound holds iff <= 1.
    pub max_ratio: f64,
    pub worst_sigma: f64,
    pub worst_p: u32,
    /// Samples with ratio above 1 + 1e-12.
    pub violations: usize,
}

/// Samples |G_p(sigma)| over random (sigma, p) pairs plus, for each p, the
/// analytic maximizer sigma* = -p sin(gamma)/|lambda|, and compares against
/// `resolvent_bound`.
pub fn check_resolvent_bound(
    point: &CouplingPoint,
    n: u32,
    samples: usize,
    seed: u64,
) -> BoundReport {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let cosg = point.gamma.cos();
    let lam = point.lambda.norm();
    let mut report = BoundReport {
        samples: 0,
        max_ratio: 0.0,
        worst_sigma: 0.0,
        worst_p: 1,
        violations: 0,
    };
    let push = |report: &mut BoundReport, sigma: f64, p: u32| {
        let ratio = resolvent(point, p, sigma).norm() * p as f64 * cosg;
        report.samples += 1;
        if ratio > report.max_ratio {
            report.max_ratio = ratio;
            report.worst_sigma = sigma;
            report.worst_p = p;
        }
        if ratio > 1.0 + 1e-12 {
            report.violations += 1;
        }
    };
    if lam > 0.0 {
        for p in 1..=n {
            push(&mut report, -(p as f64) * point.gamma.sin() / lam, p);
        }
    }
    while report.samples < samples {
        let p = rng.random_range(1..=n);
        // Cauchy-distributed sigma at scale p/|lambda| covers both the core and
        // the tails of the resolvent in a scale-free way.
        let scale = if lam > 0.0 { p as f64 / lam } else { p as f64 };
        let sigma = scale * (std::f64::consts::PI * (rng.random::<f64>() - 0.5)).tan();
        push(&mut report, sigma, p);
    }
    report
}
