//! Quadrature primitives shared by the oracle and the expansion assembler:
//! classical Gauss rules built by Golub-Welsch, an adaptive Gauss-Kronrod
//! integrator for complex-valued functions on the real line, a shifted Halton
//! sampler feeding an inverse normal transform for the high-dimensional
//! Gaussian blocks, and compensated accumulators.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Nodes and weights from the symmetric tridiagonal Jacobi matrix of a weight
/// function with moment mu0 and recurrence coefficients alpha_k (diagonal) and
/// beta_k (off-diagonal, k = 1..n-1).
fn golub_welsch(alpha: &[f64], beta: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = alpha.len();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for (k, &a) in alpha.iter().enumerate() {
        jac[(k, k)] = a;
    }
    for (k, &b) in beta.iter().enumerate() {
        jac[(k, k + 1)] = b;
        jac[(k + 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &i in &order {
        nodes.push(eig.eigenvalues[i]);
        let v0 = eig.eigenvectors[(0, i)];
        weights.push(mu0 * v0 * v0);
    }
    (nodes, weights)
}

/// Gauss-Hermite rule for expectations against the standard normal density:
/// E[f(X)] ~ sum w_i f(x_i), weights summing to one. Exact for polynomials of
/// degree <= 2n - 1.
pub fn gauss_hermite_prob(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let alpha = vec![0.0; n];
    let beta: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    // mu0 = sqrt(2 pi) cancels against the density normalization
    golub_welsch(&alpha, &beta, 1.0)
}

/// Gauss-Legendre rule on [0, 1].
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let alpha = vec![0.0; n];
    let beta: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let (nodes, weights) = golub_welsch(&alpha, &beta, 2.0);
    (
        nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        weights.iter().map(|w| 0.5 * w).collect(),
    )
}

/// Gauss-Laguerre rule for integrals of f(t) e^{-t} over t >= 0.
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let alpha: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + 1.0).collect();
    let beta: Vec<f64> = (1..n).map(|k| k as f64).collect();
    golub_welsch(&alpha, &beta, 1.0)
}

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
// The literals keep QUADPACK's full printed precision.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> (Complex64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = WGK[7] * fc;
    let mut resg = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let fsum = f(center - dx) + f(center + dx);
        resk += WGK[j] * fsum;
        if j % 2 == 1 {
            resg += WG[j / 2] * fsum;
        }
    }
    ((resk * half), (resk - resg).norm() * half.abs())
}

/// Adaptive Gauss-Kronrod integration of a complex-valued function over [a, b].
///
/// Splits the worst interval until the summed error estimate drops below
/// max(abs_tol, rel_tol * |integral|), or fails with the achieved accuracy.
pub fn adaptive_gk15<F: Fn(f64) -> Complex64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Complex64> {
    const MAX_INTERVALS: usize = 4096;
    struct Seg {
        a: f64,
        b: f64,
        val: Complex64,
        err: f64,
    }
    let (val, err) = gk15(&f, a, b);
    let mut segs = vec![Seg { a, b, val, err }];
    loop {
        let total: Complex64 = segs.iter().map(|s| s.val).sum();
        let total_err: f64 = segs.iter().map(|s| s.err).sum();
        let target = abs_tol.max(rel_tol * total.norm());
        if total_err <= target {
            return Ok(total);
        }
        if segs.len() >= MAX_INTERVALS {
            return Err(Error::QuadratureNoConverge {
                achieved: total_err,
                requested: target,
            });
        }
        let worst = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i)
            .unwrap();
        let Seg { a, b, .. } = segs.swap_remove(worst);
        let mid = 0.5 * (a + b);
        for (lo, hi) in [(a, mid), (mid, b)] {
            let (val, err) = gk15(&f, lo, hi);
            segs.push(Seg {
                a: lo,
                b: hi,
                val,
                err,
            });
        }
    }
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9 across (0, 1)).
#[allow(clippy::excessive_precision)]
pub fn inv_normal_cdf(p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0,
        "inverse normal CDF needs p in (0,1), got {p}"
    );
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inv_normal_cdf(1.0 - p)
    }
}

const HALTON_PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical-inverse of `index` in the given base.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv_base = 1.0 / base as f64;
    let mut frac = inv_base;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * frac;
        index /= base;
        frac *= inv_base;
    }
    out
}

/// Halton low-discrepancy sequence with a fixed Cranley-Patterson shift.
/// Serves both raw uniforms and inverse-CDF standard normals.
#[derive(Clone, Debug)]
pub struct HaltonSampler {
    shift: Vec<f64>,
}

impl HaltonSampler {
    /// `seed` fixes the shift; the same seed gives the same sequence.
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(
            dim <= HALTON_PRIMES.len(),
            "Halton sampler supports up to 16 dimensions"
        );
        // splitmix64 stream for the shift components
        let mut state = seed.wrapping_add(0x9e3779b97f4a7c15);
        let mut next = move || {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^ (z >> 31)
        };
        let shift = (0..dim)
            .map(|_| (next() >> 11) as f64 / (1u64 << 53) as f64)
            .collect();
        HaltonSampler { shift }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// Fills `out` with the i-th point of the shifted sequence, kept strictly
    /// inside (0, 1).
    pub fn uniforms(&self, index: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.shift.len());
        for (d, slot) in out.iter_mut().enumerate() {
            let mut u = radical_inverse(index + 1, HALTON_PRIMES[d]) + self.shift[d];
            if u >= 1.0 {
                u -= 1.0;
            }
            *slot = u.clamp(1e-16, 1.0 - 1e-16);
        }
    }

    /// Fills `out` with the i-th point of the shifted sequence, as N(0,1) draws.
    pub fn normals(&self, index: u64, out: &mut [f64]) {
        self.uniforms(index, out);
        for slot in out.iter_mut() {
            *slot = inv_normal_cdf(*slot);
        }
    }
}

/// Neumaier-compensated accumulator for f64.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedF64 {
    sum: f64,
    comp: f64,
}

impl CompensatedF64 {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Neumaier-compensated accumulator for Complex64 (componentwise).
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedC64 {
    re: CompensatedF64,
    im: CompensatedF64,
}

impl CompensatedC64 {
    pub fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_matches_normal_moments() {
        let (x, w) = gauss_hermite_prob(5);
        assert_eq!(x.len(), 5);
        // exact for degree <= 9: E[X^k] = (k-1)!! for even k
        for (k, expect) in [(0u32, 1.0), (2, 1.0), (4, 3.0), (6, 15.0), (8, 105.0)] {
            let got: f64 = x
                .iter()
                .zip(&w)
                .map(|(xi, wi)| wi * xi.powi(k as i32))
                .sum();
            assert_relative_eq!(got, expect, max_relative = 1e-12);
        }
        let odd: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(3)).sum();
        assert!(odd.abs() < 1e-13);
    }

    #[test]
    fn legendre_01_integrates_monomials() {
        let (x, w) = gauss_legendre_01(4);
        for k in 0..=7u32 {
            let got: f64 = x
                .iter()
                .zip(&w)
                .map(|(xi, wi)| wi * xi.powi(k as i32))
                .sum();
            assert_relative_eq!(got, 1.0 / (k as f64 + 1.0), max_relative = 1e-12);
        }
    }

    #[test]
    fn laguerre_integrates_factorials() {
        let (x, w) = gauss_laguerre(6);
        let mut fact = 1.0;
        for k in 0..=11u32 {
            if k > 0 {
                fact *= k as f64;
            }
            let got: f64 = x
                .iter()
                .zip(&w)
                .map(|(xi, wi)| wi * xi.powi(k as i32))
                .sum();
            assert_relative_eq!(got, fact, max_relative = 1e-10);
        }
    }

    #[test]
    fn adaptive_complex_exponential() {
        let val = adaptive_gk15(|x| (Complex64::I * x).exp(), 0.0, 1.0, 1e-12, 1e-14).unwrap();
        let expect = (Complex64::I.exp() - Complex64::ONE) / Complex64::I;
        assert!((val - expect).norm() < 1e-12);
    }

    #[test]
    fn adaptive_handles_peaks_and_oscillation() {
        // Lorentzian over a wide window: needs refinement near the origin
        let val = adaptive_gk15(
            |x| Complex64::from(1.0 / (1.0 + x * x)),
            -1e3,
            1e3,
            1e-10,
            1e-12,
        )
        .unwrap();
        assert_relative_eq!(val.re, 2.0 * 1e3f64.atan(), max_relative = 1e-9);
        // oscillatory phase
        let val = adaptive_gk15(
            |x| Complex64::from((50.0 * x).cos()),
            0.0,
            10.0,
            1e-11,
            1e-13,
        )
        .unwrap();
        assert_relative_eq!(val.re, (500.0f64).sin() / 50.0, epsilon = 1e-11);
    }

    #[test]
    fn inverse_normal_cdf_reference_values() {
        assert_eq!(inv_normal_cdf(0.5), 0.0);
        assert_relative_eq!(
            inv_normal_cdf(0.975),
            1.959963984540054,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            inv_normal_cdf(0.99),
            2.3263478740408408,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            inv_normal_cdf(1e-3),
            -3.090232306167814,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            inv_normal_cdf(0.3),
            -0.5244005127080407,
            max_relative = 1e-8
        );
        // symmetry
        assert_relative_eq!(
            inv_normal_cdf(0.1),
            -inv_normal_cdf(0.9),
            max_relative = 1e-12
        );
    }

    #[test]
    fn halton_base2_prefix() {
        let seq: Vec<f64> = (1..=4).map(|i| radical_inverse(i, 2)).collect();
        assert_eq!(seq, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn halton_normals_have_unit_variance() {
        let sampler = HaltonSampler::new(3, 7);
        let mut buf = [0.0; 3];
        let n = 4096;
        let mut mean = [0.0; 3];
        let mut var = [0.0; 3];
        for i in 0..n {
            sampler.normals(i, &mut buf);
            for d in 0..3 {
                mean[d] += buf[d];
                var[d] += buf[d] * buf[d];
            }
        }
        for d in 0..3 {
            mean[d] /= n as f64;
            var[d] /= n as f64;
            assert!(mean[d].abs() < 2e-2, "dim {d} mean {}", mean[d]);
            assert!((var[d] - 1.0).abs() < 2e-2, "dim {d} var {}", var[d]);
        }
        // determinism under the same seed
        let sampler2 = HaltonSampler::new(3, 7);
        let mut buf2 = [0.0; 3];
        sampler.normals(17, &mut buf);
        sampler2.normals(17, &mut buf2);
        assert_eq!(buf, buf2);
    }

    #[test]
    fn neumaier_recovers_cancelled_small_terms() {
        let mut acc = CompensatedF64::default();
        acc.add(1e16);
        acc.add(1.0);
        acc.add(-1e16);
        assert_eq!(acc.value(), 1.0);
        let mut z = CompensatedC64::default();
        z.add(Complex64::new(1e16, -1.0));
        z.add(Complex64::new(2.0, 1e16));
        z.add(Complex64::new(-1e16, -1e16));
        assert_eq!(z.value(), Complex64::new(2.0, -1.0));
    }
}
