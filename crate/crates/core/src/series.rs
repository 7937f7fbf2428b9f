//! Perturbation theory in exact arithmetic, and its Borel-Pade resummation.
//!
//! This route never touches the sigma representation. The model's modulus
//! variables s_p = |phi_p|^2 are independent Exp(p) draws under the free
//! measure, and the interaction reweights them by exp(-(g/2) X^2) with
//! X = sum_p s_p - L_N. Every observable treated here is a ratio of
//! X-weighted Exp-moments, so its Taylor coefficients in g are exact
//! rationals: E[s_p^m e^{y(s_p - 1/p)}] = e^{-y/p} m! p / (p - y)^{m+1}
//! per momentum, multiplied out as a power series in y, with the g series
//! obtained from the even y-coefficients.
//!
//! The series has zero radius of convergence (coefficients grow factorially,
//! alternating), which is the whole reason the crate exists. The standard
//! rescue is implemented alongside: Borel transform b_m = c_m / m!, a Pade
//! approximant in the Borel plane, and a Laplace integral back, taken along a
//! rotated ray so that complex couplings stay clear of both the e^{-t} growth
//! direction and the Borel-plane poles on the negative real axis.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::partitions::set_partitions;
use crate::quad::gauss_laguerre;

/// Highest Taylor order in g kept by `wick_coefficients`.
pub const MAX_ORDER_G: usize = 4;

/// What the series expands.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Observable {
    /// log Z(g, N)
    FreeEnergy,
    /// The cumulant at the given momenta (legs; repetitions allowed).
    Cumulant(Vec<u32>),
}

/// A truncated Taylor series in g with exact rational coefficients.
#[derive(Clone, Debug)]
pub struct GSeries {
    pub observable: Observable,
    pub n: u32,
    pub coeffs: Vec<BigRational>,
}

impl GSeries {
    pub fn coeffs_f64(&self) -> Vec<f64> {
        self.coeffs.iter().map(rat_to_f64).collect()
    }

    /// Plain truncated evaluation; useful only well inside the resummation's
    /// accuracy, since the full series diverges for every g != 0.
    pub fn eval_truncated(&self, g: Complex64) -> Complex64 {
        let mut acc = Complex64::ZERO;
        let mut pow = Complex64::ONE;
        for c in &self.coeffs {
            acc += rat_to_f64(c) * pow;
            pow *= g;
        }
        acc
    }
}

fn rat_to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("rational out of f64 range")
}

fn big_factorial(n: usize) -> BigInt {
    let mut out = BigInt::one();
    for k in 2..=n {
        out *= k;
    }
    out
}

// Dense truncated power series over BigRational, length = order + 1.

fn ps_zero(ord: usize) -> Vec<BigRational> {
    vec![BigRational::zero(); ord + 1]
}

fn ps_mul(a: &[BigRational], b: &[BigRational], ord: usize) -> Vec<BigRational> {
    let mut out = ps_zero(ord);
    for (i, ai) in a.iter().enumerate().take(ord + 1) {
        if ai.is_zero() {
            continue;
        }
        for (j, bj) in b.iter().enumerate().take(ord + 1 - i) {
            if !bj.is_zero() {
                out[i + j] += ai * bj;
            }
        }
    }
    out
}

fn ps_add_assign(a: &mut [BigRational], b: &[BigRational], scale: &BigRational) {
    for (ai, bi) in a.iter_mut().zip(b) {
        *ai += bi * scale;
    }
}

/// log of a series with unit constant term: k l_k = k a_k - sum_{j<k} j l_j a_{k-j}.
fn ps_log(a: &[BigRational], ord: usize) -> Vec<BigRational> {
    debug_assert!(a[0].is_one());
    let mut l = ps_zero(ord);
    for k in 1..=ord {
        let mut acc = BigRational::from_integer(BigInt::from(k)) * &a[k];
        for j in 1..k {
            acc -= BigRational::from_integer(BigInt::from(j)) * &l[j] * &a[k - j];
        }
        l[k] = acc / BigRational::from_integer(BigInt::from(k));
    }
    l
}

/// a / b with b having a nonzero constant term.
fn ps_div(a: &[BigRational], b: &[BigRational], ord: usize) -> Vec<BigRational> {
    debug_assert!(!b[0].is_zero());
    let mut q = ps_zero(ord);
    for k in 0..=ord {
        let mut acc = a[k].clone();
        for j in 1..=k {
            acc -= &b[j] * &q[k - j];
        }
        q[k] = acc / &b[0];
    }
    q
}

/// Per-momentum factor E[s^m e^{y (s - 1/p)}] as a series in y:
/// e^{-y/p} * m! p / (p - y)^{m+1}.
fn per_momentum_series(p: u32, m: usize, ord: usize) -> Vec<BigRational> {
    let p_rat = BigRational::from_integer(BigInt::from(p));
    let inv_p = p_rat.recip();
    // e^{-y/p}
    let mut expo = ps_zero(ord);
    let mut term = BigRational::one();
    for (j, slot) in expo.iter_mut().enumerate() {
        if j > 0 {
            term = -&term * &inv_p / BigRational::from_integer(BigInt::from(j));
        }
        *slot = term.clone();
    }
    // (1 - y/p)^{-(m+1)} = sum_j C(m+j, j) (y/p)^j
    let mut geom = ps_zero(ord);
    let mut c = BigRational::one();
    let mut ip_pow = BigRational::one();
    for (j, slot) in geom.iter_mut().enumerate() {
        if j > 0 {
            c = c * BigRational::from_integer(BigInt::from(m + j))
                / BigRational::from_integer(BigInt::from(j));
            ip_pow *= &inv_p;
        }
        *slot = &c * &ip_pow;
    }
    let mut out = ps_mul(&expo, &geom, ord);
    // m! / p^m prefactor (the p / p^{m+1} part combined with m!)
    let pref = BigRational::new(big_factorial(m), BigInt::from(p).pow(m as u32));
    for slot in &mut out {
        *slot *= &pref;
    }
    out
}

/// Series in g of E[prod_p s_p^{m_p} exp(-(g/2) X^2)], X = sum_p s_p - L_N,
/// over independent s_p ~ Exp(p), p = 1..=n. `mult` lists (momentum, power).
fn weighted_series(n: u32, mult: &[(u32, usize)], ord_g: usize) -> Vec<BigRational> {
    let ord_y = 2 * ord_g;
    let mut prod = ps_zero(ord_y);
    prod[0] = BigRational::one();
    for p in 1..=n {
        let m = mult.iter().find(|(q, _)| *q == p).map_or(0, |(_, m)| *m);
        prod = ps_mul(&prod, &per_momentum_series(p, m, ord_y), ord_y);
    }
    // coefficient of g^k is (-1/2)^k (2k)! / k! times the y^{2k} coefficient
    let mut out = ps_zero(ord_g);
    for k in 0..=ord_g {
        let num = big_factorial(2 * k);
        let den = big_factorial(k) * BigInt::from(2).pow(k as u32);
        let mut w = BigRational::new(num, den);
        if k % 2 == 1 {
            w = -w;
        }
        out[k] = w * &prod[2 * k];
    }
    out
}

fn multiplicities(momenta: &[u32]) -> Vec<(u32, usize)> {
    let mut sorted = momenta.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(u32, usize)> = Vec::new();
    for p in sorted {
        match out.last_mut() {
            Some((q, m)) if *q == p => *m += 1,
            _ => out.push((p, 1)),
        }
    }
    out
}

/// Normalized leg moment M_S(g) = < prod_{q in S} G_{p_q} > as a g-series:
/// the weighted Exp-moment over Z, divided by the subset's multiplicity
/// factorials (conditional Wick counting).
fn moment_series(n: u32, momenta: &[u32], z: &[BigRational], ord: usize) -> Vec<BigRational> {
    let mult = multiplicities(momenta);
    let raw = weighted_series(n, &mult, ord);
    let mut out = ps_div(&raw, z, ord);
    let mut fac = BigInt::one();
    for (_, m) in &mult {
        fac *= big_factorial(*m);
    }
    let inv = BigRational::from_integer(fac).recip();
    for slot in &mut out {
        *slot *= &inv;
    }
    out
}

/// Taylor coefficients in g of the observable, orders 0..=order, all exact.
pub fn wick_coefficients(n: u32, obs: &Observable, order: usize) -> Result<GSeries> {
    if order > MAX_ORDER_G {
        return Err(Error::OrderTooHigh {
            got: order,
            cap: MAX_ORDER_G,
        });
    }
    if n < 1 {
        return Err(Error::InvalidParameter("need n >= 1".into()));
    }
    let z = weighted_series(n, &[], order);
    let coeffs = match obs {
        Observable::FreeEnergy => ps_log(&z, order),
        Observable::Cumulant(momenta) => {
            if momenta.is_empty() {
                return Err(Error::InvalidParameter(
                    "cumulant needs at least one leg".into(),
                ));
            }
            for &p in momenta {
                if p < 1 || p > n {
                    return Err(Error::InvalidParameter(format!(
                        "momentum {p} out of 1..={n}"
                    )));
                }
            }
            let k = momenta.len();
            let mut acc = ps_zero(order);
            for part in set_partitions(k) {
                let b = part.len();
                let mut weight = BigRational::from_integer(big_factorial(b - 1));
                if b % 2 == 0 {
                    weight = -weight;
                }
                let mut prod = ps_zero(order);
                prod[0] = BigRational::one();
                for block in &part {
                    let sub: Vec<u32> = block.iter().map(|&q| momenta[q]).collect();
                    prod = ps_mul(&prod, &moment_series(n, &sub, &z, order), order);
                }
                ps_add_assign(&mut acc, &prod, &weight);
            }
            let mut fac = BigInt::one();
            for (_, m) in multiplicities(momenta) {
                fac *= big_factorial(m);
            }
            let f = BigRational::from_integer(fac);
            for slot in &mut acc {
                *slot *= &f;
            }
            acc
        }
    };
    Ok(GSeries {
        observable: obs.clone(),
        n,
        coeffs,
    })
}

/// Borel transform b_m = c_m / m!.
pub fn borel_transform(coeffs: &[f64]) -> Vec<f64> {
    let mut fact = 1.0;
    coeffs
        .iter()
        .enumerate()
        .map(|(m, c)| {
            if m > 1 {
                fact *= m as f64;
            }
            c / fact
        })
        .collect()
}

/// Rational [L/M] approximant with real coefficients.
#[derive(Clone, Debug)]
pub struct PadeApproximant {
    /// Numerator coefficients, degree L.
    pub num: Vec<f64>,
    /// Denominator coefficients, degree M, normalized to den[0] = 1.
    pub den: Vec<f64>,
}

impl PadeApproximant {
    pub fn eval(&self, t: Complex64) -> Complex64 {
        let horner = |c: &[f64]| {
            let mut acc = Complex64::ZERO;
            for &ck in c.iter().rev() {
                acc = acc * t + ck;
            }
            acc
        };
        horner(&self.num) / horner(&self.den)
    }

    /// Denominator roots, via the companion matrix of the monic polynomial.
    pub fn poles(&self) -> Vec<Complex64> {
        let mut den = self.den.clone();
        let scale = den.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        while den.len() > 1 && den.last().unwrap().abs() < 1e-14 * scale {
            den.pop();
        }
        let m = den.len() - 1;
        if m == 0 {
            return Vec::new();
        }
        let lead = den[m];
        let mut comp = DMatrix::<f64>::zeros(m, m);
        for r in 1..m {
            comp[(r, r - 1)] = 1.0;
        }
        for r in 0..m {
            comp[(r, m - 1)] = -den[r] / lead;
        }
        comp.complex_eigenvalues().iter().copied().collect()
    }
}

/// Solve for the [l/m] Pade approximant of the series `coeffs` (needs
/// l + m + 1 coefficients).
pub fn pade(coeffs: &[f64], l: usize, m: usize) -> Result<PadeApproximant> {
    if coeffs.len() < l + m + 1 {
        return Err(Error::DegeneratePade(format!(
            "need {} coefficients for [{l}/{m}], have {}",
            l + m + 1,
            coeffs.len()
        )));
    }
    let b = |i: isize| -> f64 {
        if i < 0 {
            0.0
        } else {
            coeffs[i as usize]
        }
    };
    let mut den = vec![1.0];
    if m > 0 {
        let mut mat = DMatrix::<f64>::zeros(m, m);
        let mut rhs = nalgebra::DVector::<f64>::zeros(m);
        for r in 0..m {
            for c in 0..m {
                mat[(r, c)] = b(l as isize + r as isize - c as isize);
            }
            rhs[r] = -b(l as isize + 1 + r as isize);
        }
        let lu = mat.full_piv_lu();
        match lu.solve(&rhs) {
            Some(sol) => den.extend(sol.iter()),
            None => {
                return Err(Error::DegeneratePade(format!(
                    "singular [{l}/{m}] linear system"
                )))
            }
        }
    }
    let mut num = vec![0.0; l + 1];
    for (k, slot) in num.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, dj) in den.iter().enumerate().take(k + 1) {
            acc += dj * b(k as isize - j as isize);
        }
        *slot = acc;
    }
    Ok(PadeApproximant { num, den })
}

/// Borel sum of the truncated series at coupling g: Borel transform, [l/m]
/// Pade in the Borel plane, Laplace integral back along the ray rotated by
/// half the coupling phase, so the Borel variable stays in the right half
/// plane where the model's singularities cannot sit.
pub fn borel_pade_resum(coeffs: &[f64], g: Complex64, l: usize, m: usize) -> Result<Complex64> {
    if g == Complex64::ZERO {
        return Ok(Complex64::from(coeffs[0]));
    }
    let theta = g.arg();
    let phi = -0.5 * theta;
    if phi.cos() < 1e-3 {
        return Err(Error::BranchCut {
            context: "Laplace ray degenerates at the negative real coupling axis".into(),
        });
    }
    let b = borel_transform(coeffs);
    let pade_b = pade(&b, l, m)?;
    // the Borel ray has phase theta + phi = theta/2; refuse if a pole sits on it
    for z0 in pade_b.poles() {
        if z0.norm() < 1e-12 {
            return Err(Error::PoleHit { u: z0 });
        }
        let mut dphase = z0.arg() - (theta + phi);
        while dphase > std::f64::consts::PI {
            dphase -= 2.0 * std::f64::consts::PI;
        }
        while dphase < -std::f64::consts::PI {
            dphase += 2.0 * std::f64::consts::PI;
        }
        if dphase.abs() < 1e-3 {
            return Err(Error::PoleHit { u: z0 });
        }
    }
    // Int_0^{inf e^{i phi}} e^{-t} B(g t) dt, substituting t = u e^{i phi}/cos(phi)
    let rot = Complex64::from_polar(1.0 / phi.cos(), phi);
    let (nodes, weights) = gauss_laguerre(96);
    let mut acc = Complex64::ZERO;
    for (u, w) in nodes.iter().zip(&weights) {
        let osc = Complex64::from_polar(1.0, -u * phi.tan());
        acc += *w * osc * pade_b.eval(g * rot * *u);
    }
    Ok(acc * rot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CouplingPoint;
    use crate::oracle::Oracle;

    fn rats(nums: &[i64], dens: &[i64]) -> Vec<BigRational> {
        nums.iter()
            .zip(dens)
            .map(|(&n, &d)| BigRational::new(BigInt::from(n), BigInt::from(d)))
            .collect()
    }

    #[test]
    fn free_energy_n1_exact_coefficients() {
        let s = wick_coefficients(1, &Observable::FreeEnergy, 4).unwrap();
        assert_eq!(s.coeffs, rats(&[0, -1, 1, -5, 71], &[1, 2, 1, 1, 2]));
    }

    #[test]
    fn free_energy_n2_exact_coefficients() {
        // kappa_2(X) = 5/4, E[X^4] = kappa_4 + 3 kappa_2^2 = 51/8 + 75/16 = 177/16;
        // c_1 = -5/8, c_2 = (1/8) E[X^4]/2 - c_1^2/2 = 177/128 - 25/128 = 19/16
        let s = wick_coefficients(2, &Observable::FreeEnergy, 2).unwrap();
        assert_eq!(s.coeffs, rats(&[0, -5, 19], &[1, 8, 16]));
    }

    #[test]
    fn two_point_n1_exact_coefficients() {
        let s = wick_coefficients(1, &Observable::Cumulant(vec![1]), 1).unwrap();
        assert_eq!(s.coeffs, rats(&[1, -1], &[1, 1]));
    }

    #[test]
    fn repeated_legs_vanish_at_zero_coupling() {
        // free cumulants above two-point order are zero, also at equal momenta
        for momenta in [vec![2u32, 2], vec![1, 3], vec![2, 2, 2]] {
            let s = wick_coefficients(3, &Observable::Cumulant(momenta.clone()), 2).unwrap();
            assert!(s.coeffs[0].is_zero(), "momenta {momenta:?}: {:?}", s.coeffs);
        }
    }

    #[test]
    fn series_matches_oracle_at_weak_coupling() {
        let g = 0.004;
        let point = CouplingPoint::new(Complex64::from(g));
        let o = Oracle::new(3, point);
        let f = wick_coefficients(3, &Observable::FreeEnergy, 4).unwrap();
        let resid = (f.eval_truncated(point.g) - o.log_z().unwrap()).norm();
        assert!(resid < 2e-9, "free energy residual {resid:e}");
        for momenta in [vec![2u32], vec![1, 3], vec![2, 2]] {
            let s = wick_coefficients(3, &Observable::Cumulant(momenta.clone()), 4).unwrap();
            let resid = (s.eval_truncated(point.g) - o.cumulant(&momenta).unwrap()).norm();
            assert!(resid < 2e-9, "momenta {momenta:?} residual {resid:e}");
        }
    }

    #[test]
    fn order_cap_is_enforced() {
        let err = wick_coefficients(1, &Observable::FreeEnergy, 9).unwrap_err();
        assert!(matches!(
            err,
            Error::OrderTooHigh {
                got: 9,
                cap: MAX_ORDER_G
            }
        ));
    }

    #[test]
    fn pade_recovers_rational_functions() {
        // series of (1 + 2t)/(1 + t + t^2)
        let mut c = vec![0.0; 6];
        // long division: coefficients satisfy c_k + c_{k-1} + c_{k-2} = num_k
        for k in 0..6 {
            let numk = match k {
                0 => 1.0,
                1 => 2.0,
                _ => 0.0,
            };
            let prev1 = if k >= 1 { c[k - 1] } else { 0.0 };
            let prev2 = if k >= 2 { c[k - 2] } else { 0.0 };
            c[k] = numk - prev1 - prev2;
        }
        let p = pade(&c, 1, 2).unwrap();
        let t = Complex64::new(0.3, 0.1);
        let expect = (Complex64::ONE + 2.0 * t) / (Complex64::ONE + t + t * t);
        assert!((p.eval(t) - expect).norm() < 1e-12);
        // geometric series: single pole at 1
        let p = pade(&[1.0, 1.0, 1.0], 0, 1).unwrap();
        let poles = p.poles();
        assert_eq!(poles.len(), 1);
        assert!((poles[0] - Complex64::ONE).norm() < 1e-12);
    }

    #[test]
    fn borel_pade_sums_the_factorial_series() {
        // c_m = (-1)^m m!: Borel transform 1/(1+z), reproduced exactly by the
        // [0/1] Pade, so the rotated-ray Laplace integral must agree with the
        // straight real-axis integral Int e^{-t}/(1 + g t) dt by Cauchy's
        // theorem, at every coupling phase short of the negative axis.
        let coeffs: Vec<f64> = (0..8)
            .map(|m| if m % 2 == 0 { 1.0 } else { -1.0 } * crate::partitions::factorial(m))
            .collect();
        for g in [
            Complex64::from(0.3),
            Complex64::from(1.0),
            Complex64::from_polar(0.4, 1.0),
            Complex64::from_polar(0.4, -2.0),
        ] {
            let reference = crate::quad::adaptive_gk15(
                |t| (-t).exp() / (Complex64::ONE + g * t),
                0.0,
                120.0,
                1e-12,
                1e-14,
            )
            .unwrap();
            let summed = borel_pade_resum(&coeffs, g, 0, 1).unwrap();
            assert!(
                (summed - reference).norm() < 1e-9,
                "g = {g}: {summed} vs {reference}"
            );
        }
        // an over-asked approximant of the same rational function is rank
        // deficient; the solver reports that instead of inventing numbers
        let b = borel_transform(&coeffs);
        assert!(matches!(pade(&b, 3, 4), Err(Error::DegeneratePade(_))));
    }

    #[test]
    fn borel_pade_beats_truncation_for_the_model() {
        let g = Complex64::from(0.25);
        let o = Oracle::new(1, CouplingPoint::new(g));
        let truth = o.log_z().unwrap();
        let s = wick_coefficients(1, &Observable::FreeEnergy, 4).unwrap();
        let c = s.coeffs_f64();
        let trunc_err = (s.eval_truncated(g) - truth).norm();
        let resummed = borel_pade_resum(&c, g, 2, 2).unwrap();
        let borel_err = (resummed - truth).norm();
        assert!(
            borel_err < 0.2 * trunc_err,
            "borel {borel_err:e} vs truncated {trunc_err:e}"
        );
        assert!(borel_err < 2e-3, "borel error {borel_err:e}");
    }

    #[test]
    fn negative_real_axis_is_rejected() {
        let c = [1.0, -1.0, 2.0, -6.0, 24.0];
        let err = borel_pade_resum(&c, Complex64::from(-0.2), 2, 2).unwrap_err();
        assert!(matches!(err, Error::BranchCut { .. }));
    }
}
