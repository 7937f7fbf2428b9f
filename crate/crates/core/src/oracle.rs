//! Exact reference values by one-dimensional quadrature in the
//! Hubbard-Stratonovich field.
//!
//! Integrating out the N-component vector leaves
//!
//!   Z = Int dnu(sigma) exp(-sum_{p=1}^N log2(i lambda sigma / p)),
//!
//! with dnu the standard normal measure and log2(u) = u + ln(1 - u). Source
//! insertions turn into resolvent factors G_p(sigma) under the same measure, so
//! every moment of the model is a single real integral regardless of N. This
//! module evaluates those integrals adaptively and inverts moments into
//! cumulants two independent ways: partition-lattice inversion of quadrature
//! moments, and Cauchy-circle extraction of mixed source derivatives of log Z.
//! A direct Monte Carlo sampler over the original modulus variables gives a
//! third, quadrature-free cross-check.

use std::cell::RefCell;
use std::collections::HashMap;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::model::{harmonic_sum, resolvent, subtracted_log, u_of, CouplingPoint};
use crate::partitions::{cumulant_from_moments, factorial, set_partitions};
use crate::quad::adaptive_gk15;

/// Relative tolerance used for all sigma integrals.
pub const SIGMA_REL_TOL: f64 = 1e-11;
const SIGMA_ABS_TOL: f64 = 1e-14;

/// Product over distinct momenta of (multiplicity)!.
pub fn multiplicity_factor(momenta: &[u32]) -> f64 {
    let mut sorted = momenta.to_vec();
    sorted.sort_unstable();
    let mut out = 1.0;
    let mut run = 0usize;
    for (i, &p) in sorted.iter().enumerate() {
        run += 1;
        if i + 1 == sorted.len() || sorted[i + 1] != p {
            out *= factorial(run);
            run = 0;
        }
    }
    out
}

/// Quadrature oracle for a model with momenta 1..=n at a fixed coupling.
pub struct Oracle {
    pub n: u32,
    pub point: CouplingPoint,
    moment_cache: RefCell<HashMap<Vec<u32>, Complex64>>,
    z_cache: RefCell<Option<Complex64>>,
}

impl Oracle {
    pub fn new(n: u32, point: CouplingPoint) -> Self {
        assert!(n >= 1);
        Oracle {
            n,
            point,
            moment_cache: RefCell::new(HashMap::new()),
            z_cache: RefCell::new(None),
        }
    }

    /// Truncation radius: the Gaussian envelope can be displaced by at most
    /// |lambda| L_N along the imaginary frequency, so pad generously past it.
    fn sigma_cutoff(&self) -> f64 {
        let c = self.point.lambda.norm() * harmonic_sum(self.n);
        12.0 + 4.0 * c.max(1.0)
    }

    /// Int dnu(sigma) exp(-sum_p log2(u_p(sigma))) extra(sigma).
    fn sigma_integral<F: Fn(f64) -> Complex64>(&self, extra: F) -> Result<Complex64> {
        let s = self.sigma_cutoff();
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        adaptive_gk15(
            |sigma| {
                let mut v = Complex64::ZERO;
                for p in 1..=self.n {
                    v += subtracted_log(u_of(&self.point, p, sigma));
                }
                let gauss = -0.5 * sigma * sigma;
                norm * (gauss - v.re).exp() * Complex64::from_polar(1.0, -v.im) * extra(sigma)
            },
            -s,
            s,
            SIGMA_REL_TOL,
            SIGMA_ABS_TOL,
        )
    }

    /// The partition function Z(g, N).
    pub fn partition_function(&self) -> Result<Complex64> {
        if let Some(z) = *self.z_cache.borrow() {
            return Ok(z);
        }
        let z = self.sigma_integral(|_| Complex64::ONE)?;
        *self.z_cache.borrow_mut() = Some(z);
        Ok(z)
    }

    /// log Z on the principal branch. Valid while Z stays away from the cut,
    /// which holds throughout the cardioid at the scales this crate targets.
    pub fn log_z(&self) -> Result<Complex64> {
        let z = self.partition_function()?;
        if z.norm() < 1e-300 {
            return Err(Error::IllConditioned("partition function underflow".into()));
        }
        Ok(z.ln())
    }

    /// Normalized moment < prod_q G_{p_q}(sigma) > of the sigma measure.
    /// Repeated momenta are allowed and simply repeat the factor.
    pub fn moment(&self, momenta: &[u32]) -> Result<Complex64> {
        if momenta.is_empty() {
            return Ok(Complex64::ONE);
        }
        let mut key = momenta.to_vec();
        key.sort_unstable();
        for &p in &key {
            assert!(p >= 1 && p <= self.n, "momentum {p} out of 1..={}", self.n);
        }
        if let Some(&m) = self.moment_cache.borrow().get(&key) {
            return Ok(m);
        }
        let num = self.sigma_integral(|sigma| {
            key.iter()
                .map(|&p| resolvent(&self.point, p, sigma))
                .product()
        })?;
        let m = num / self.partition_function()?;
        self.moment_cache.borrow_mut().insert(key, m);
        Ok(m)
    }

    /// The k-point cumulant at the given momenta: partition inversion of the
    /// leg moments, times the multiplicity factor prod_p m_p! that converts
    /// x-derivatives of log Z into mixed source derivatives.
    pub fn cumulant(&self, momenta: &[u32]) -> Result<Complex64> {
        let k = momenta.len();
        assert!(k >= 1);
        let mut err = None;
        let kappa = cumulant_from_moments(k, |block| {
            let sub: Vec<u32> = block.iter().map(|&q| momenta[q]).collect();
            match self.moment(&sub) {
                Ok(m) => m,
                Err(e) => {
                    err.get_or_insert(e);
                    Complex64::ZERO
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(multiplicity_factor(momenta) * kappa)
    }

    /// Independent route to the same cumulant: extract the mixed Taylor
    /// coefficient of log Z(x) in the source strengths x_p by trapezoid sums
    /// over Cauchy circles, one circle per distinct momentum.
    pub fn cumulant_from_sources(&self, momenta: &[u32]) -> Result<Complex64> {
        let mut mult: Vec<(u32, usize)> = Vec::new();
        let mut sorted = momenta.to_vec();
        sorted.sort_unstable();
        for &p in &sorted {
            match mult.last_mut() {
                Some((q, m)) if *q == p => *m += 1,
                _ => mult.push((p, 1)),
            }
        }
        let d = mult.len();
        const POINTS: usize = 24;
        const RADIUS: f64 = 0.2;
        let mut coeff = Complex64::ZERO;
        let mut idx = vec![0usize; d];
        loop {
            // source strengths on the polydisc
            let xs: Vec<Complex64> = idx
                .iter()
                .map(|&j| {
                    Complex64::from_polar(
                        RADIUS,
                        2.0 * std::f64::consts::PI * j as f64 / POINTS as f64,
                    )
                })
                .collect();
            let z = self.sigma_integral(|sigma| {
                let mut src = Complex64::ZERO;
                for (x, (p, _)) in xs.iter().zip(&mult) {
                    src += x * resolvent(&self.point, *p, sigma);
                }
                src.exp()
            })?;
            if z.re <= 0.0 {
                return Err(Error::IllConditioned(
                    "log Z(x) left the principal branch on the Cauchy circle".into(),
                ));
            }
            let mut phase = Complex64::ONE;
            for (x, (_, m)) in xs.iter().zip(&mult) {
                phase *= x.powu(*m as u32);
            }
            coeff += z.ln() / phase;
            // advance the polydisc multi-index
            let mut carry = 0;
            while carry < d {
                idx[carry] += 1;
                if idx[carry] < POINTS {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
            }
            if carry == d {
                break;
            }
        }
        coeff /= (POINTS as f64).powi(d as i32);
        // kappa = prod_p (m_p!)^2 times the Taylor coefficient
        let mut fac = 1.0;
        for (_, m) in &mult {
            let f = factorial(*m);
            fac *= f * f;
        }
        Ok(fac * coeff)
    }
}

/// A Monte Carlo estimate with a batch-means standard error.
#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub mean: Complex64,
    pub std_err: f64,
    pub samples: usize,
}

/// Direct Monte Carlo over the modulus variables s_p ~ Exp(p): estimates the
/// normalized moment < prod_q G_{p_q} > by reweighting free samples with
/// w = exp(-(g/2) (sum_p s_p - L_N)^2) and dividing out the leg multiplicities.
/// `momenta` empty estimates the partition function itself.
pub fn mc_moment(
    n: u32,
    point: &CouplingPoint,
    momenta: &[u32],
    samples: usize,
    seed: u64,
) -> McEstimate {
    const BATCHES: usize = 50;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let exps: Vec<Exp<f64>> = (1..=n).map(|p| Exp::new(p as f64).unwrap()).collect();
    let l_n = harmonic_sum(n);
    let half_g = 0.5 * point.g;
    let mut mult: HashMap<u32, u32> = HashMap::new();
    for &p in momenta {
        mult.entry(p).or_insert(0);
        *mult.get_mut(&p).unwrap() += 1;
    }
    let per_batch = (samples / BATCHES).max(1);
    let mut batch_ratio = Vec::with_capacity(BATCHES);
    let mut tot_num = Complex64::ZERO;
    let mut tot_den = Complex64::ZERO;
    for _ in 0..BATCHES {
        let mut num = Complex64::ZERO;
        let mut den = Complex64::ZERO;
        for _ in 0..per_batch {
            let mut tot = -l_n;
            let mut obs = 1.0;
            for (p, exp) in exps.iter().enumerate() {
                let s = exp.sample(&mut rng);
                tot += s;
                if let Some(&m) = mult.get(&(p as u32 + 1)) {
                    obs *= s.powi(m as i32);
                }
            }
            let w = (-half_g * tot * tot).exp();
            num += obs * w;
            den += w;
        }
        batch_ratio.push(if momenta.is_empty() {
            num / per_batch as f64
        } else {
            num / den
        });
        tot_num += num;
        tot_den += den;
    }
    let mean_raw = if momenta.is_empty() {
        tot_num / (BATCHES * per_batch) as f64
    } else {
        tot_num / tot_den
    };
    let bm: Complex64 = batch_ratio.iter().sum::<Complex64>() / BATCHES as f64;
    let var: f64 =
        batch_ratio.iter().map(|r| (r - bm).norm_sqr()).sum::<f64>() / (BATCHES as f64 - 1.0);
    let corr: f64 = mult.values().map(|&m| factorial(m as usize)).product();
    McEstimate {
        mean: mean_raw / corr,
        std_err: (var / BATCHES as f64).sqrt() / corr,
        samples: BATCHES * per_batch,
    }
}

/// Joint Monte Carlo estimates from a single sample stream.
#[derive(Clone, Debug)]
pub struct McCumulants {
    pub log_z: McEstimate,
    /// One estimate per requested momenta list, in call order.
    pub cumulants: Vec<McEstimate>,
}

/// Estimates log Z together with a list of cumulants over shared samples.
/// Every moment a partition inversion needs is accumulated per batch and the
/// inversion runs batch by batch, so the reported error carries the full
/// covariance between the moments entering one cumulant; the headline mean
/// inverts the all-sample moments instead, which has less ratio bias.
pub fn mc_cumulants(
    n: u32,
    point: &CouplingPoint,
    targets: &[Vec<u32>],
    samples: usize,
    seed: u64,
) -> McCumulants {
    const BATCHES: usize = 50;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let exps: Vec<Exp<f64>> = (1..=n).map(|p| Exp::new(p as f64).unwrap()).collect();
    let l_n = harmonic_sum(n);
    let half_g = 0.5 * point.g;

    // every momentum subset any of the partition inversions will ask for
    let mut subset_index: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut subsets: Vec<Vec<u32>> = Vec::new();
    for target in targets {
        for part in set_partitions(target.len()) {
            for block in &part {
                let mut key: Vec<u32> = block.iter().map(|&q| target[q]).collect();
                key.sort_unstable();
                if !subset_index.contains_key(&key) {
                    subset_index.insert(key.clone(), subsets.len());
                    subsets.push(key);
                }
            }
        }
    }

    let per_batch = (samples / BATCHES).max(1);
    let invert = |target: &[u32], moment: &dyn Fn(&[u32]) -> Complex64| -> Complex64 {
        let kappa = cumulant_from_moments(target.len(), |block| {
            let mut key: Vec<u32> = block.iter().map(|&q| target[q]).collect();
            key.sort_unstable();
            moment(&key)
        });
        multiplicity_factor(target) * kappa
    };

    let mut batch_logz = Vec::with_capacity(BATCHES);
    let mut batch_cums: Vec<Vec<Complex64>> = vec![Vec::with_capacity(BATCHES); targets.len()];
    let mut tot_den = Complex64::ZERO;
    let mut tot_num = vec![Complex64::ZERO; subsets.len()];
    let mut s = vec![0.0f64; n as usize];
    for _ in 0..BATCHES {
        let mut den = Complex64::ZERO;
        let mut num = vec![Complex64::ZERO; subsets.len()];
        for _ in 0..per_batch {
            let mut tot = -l_n;
            for (sp, exp) in s.iter_mut().zip(&exps) {
                *sp = exp.sample(&mut rng);
                tot += *sp;
            }
            let w = (-half_g * tot * tot).exp();
            den += w;
            for (ni, subset) in num.iter_mut().zip(&subsets) {
                let obs: f64 = subset.iter().map(|&p| s[p as usize - 1]).product();
                *ni += obs * w;
            }
        }
        batch_logz.push((den / per_batch as f64).ln());
        for (t, target) in targets.iter().enumerate() {
            batch_cums[t].push(invert(target, &|key| {
                num[subset_index[key]] / den / multiplicity_factor(key)
            }));
        }
        tot_den += den;
        for (a, b) in tot_num.iter_mut().zip(&num) {
            *a += *b;
        }
    }

    let spread = |vals: &[Complex64], mean: Complex64| -> f64 {
        let var = vals.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (BATCHES as f64 - 1.0);
        (var / BATCHES as f64).sqrt()
    };
    let total = BATCHES * per_batch;
    let logz_mean = (tot_den / total as f64).ln();
    let log_z = McEstimate {
        mean: logz_mean,
        std_err: spread(&batch_logz, logz_mean),
        samples: total,
    };
    let cumulants = targets
        .iter()
        .enumerate()
        .map(|(t, target)| {
            let mean = invert(target, &|key| {
                tot_num[subset_index[key]] / tot_den / multiplicity_factor(key)
            });
            McEstimate {
                mean,
                std_err: spread(&batch_cums[t], mean),
                samples: total,
            }
        })
        .collect();
    McCumulants { log_z, cumulants }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn free(n: u32) -> Oracle {
        Oracle::new(n, CouplingPoint::new(Complex64::ZERO))
    }

    #[test]
    fn free_theory_is_exact() {
        let o = free(4);
        assert!((o.partition_function().unwrap() - Complex64::ONE).norm() < 1e-12);
        for p in 1..=4 {
            assert_relative_eq!(
                o.moment(&[p]).unwrap().re,
                1.0 / p as f64,
                max_relative = 1e-11
            );
        }
        assert_relative_eq!(o.moment(&[1, 2]).unwrap().re, 0.5, max_relative = 1e-11);
        assert_relative_eq!(o.moment(&[2, 2]).unwrap().re, 0.25, max_relative = 1e-11);
        // first cumulants: the free two-point function is 1/p
        assert_relative_eq!(o.cumulant(&[1]).unwrap().re, 1.0, max_relative = 1e-11);
        assert_relative_eq!(
            o.cumulant(&[3]).unwrap().re,
            1.0 / 3.0,
            max_relative = 1e-11
        );
        // all higher cumulants vanish, including at coinciding momenta where
        // the multiplicity bookkeeping has to cancel exactly
        assert!(o.cumulant(&[2, 2]).unwrap().norm() < 1e-11);
        assert!(o.cumulant(&[1, 3]).unwrap().norm() < 1e-11);
    }

    #[test]
    fn single_momentum_weak_coupling_expansion() {
        // N = 1: log Z = -g/2 + g^2 - 5 g^3 + 71/2 g^4 + O(g^5), from the
        // cumulants of (s - 1)^2, s ~ Exp(1), via central moments 1, 2, 9, 44,
        // 265, 14833 (derangement numbers).
        let g = 1e-3;
        let o = Oracle::new(1, CouplingPoint::new(Complex64::from(g)));
        let f = o.log_z().unwrap();
        let model = -g / 2.0 + g * g - 5.0 * g * g * g;
        assert!((f.re - model).abs() < 5e-11, "residual {:e}", f.re - model);
        assert!(f.im.abs() < 1e-13);
    }

    #[test]
    fn conjugate_coupling_conjugates_everything() {
        let g = Complex64::new(0.15, 0.1);
        let a = Oracle::new(3, CouplingPoint::new(g));
        let b = Oracle::new(3, CouplingPoint::new(g.conj()));
        let za = a.partition_function().unwrap();
        let zb = b.partition_function().unwrap();
        assert!((za.conj() - zb).norm() < 1e-11);
        let ma = a.moment(&[2, 3]).unwrap();
        let mb = b.moment(&[2, 3]).unwrap();
        assert!((ma.conj() - mb).norm() < 1e-11);
    }

    #[test]
    fn cumulant_is_symmetric_in_legs() {
        let o = Oracle::new(4, CouplingPoint::new(Complex64::new(0.2, 0.05)));
        let a = o.cumulant(&[1, 3, 3]).unwrap();
        let b = o.cumulant(&[3, 1, 3]).unwrap();
        assert!((a - b).norm() < 1e-13);
    }

    #[test]
    fn partition_inversion_matches_source_derivatives() {
        let o = Oracle::new(4, CouplingPoint::new(Complex64::new(0.18, 0.12)));
        for momenta in [vec![1u32], vec![3], vec![1, 2], vec![2, 2], vec![1, 1, 4]] {
            let a = o.cumulant(&momenta).unwrap();
            let b = o.cumulant_from_sources(&momenta).unwrap();
            assert!(
                (a - b).norm() <= 1e-8 * a.norm().max(1.0),
                "momenta {momenta:?}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn monte_carlo_agrees_within_three_sigma() {
        let point = CouplingPoint::new(Complex64::from(0.4));
        let o = Oracle::new(2, point);
        let z = o.partition_function().unwrap();
        let mc_z = mc_moment(2, &point, &[], 200_000, 11);
        assert!(
            (mc_z.mean - z).norm() < 3.0 * mc_z.std_err,
            "Z: mc {} vs quad {} (3 sigma = {:e})",
            mc_z.mean,
            z,
            3.0 * mc_z.std_err
        );
        let m = o.moment(&[1]).unwrap();
        let mc_m = mc_moment(2, &point, &[1], 200_000, 13);
        assert!((mc_m.mean - m).norm() < 3.0 * mc_m.std_err);
        let m22 = o.moment(&[2, 2]).unwrap();
        let mc_m22 = mc_moment(2, &point, &[2, 2], 200_000, 17);
        assert!((mc_m22.mean - m22).norm() < 3.0 * mc_m22.std_err);
    }

    #[test]
    fn joint_monte_carlo_tracks_quadrature() {
        let point = CouplingPoint::new(Complex64::from(0.1));
        let o = Oracle::new(4, point);
        let res = mc_cumulants(4, &point, &[vec![1], vec![1, 2]], 200_000, 29);
        let lz = o.log_z().unwrap();
        assert!(
            (res.log_z.mean - lz).norm() < 3.0 * res.log_z.std_err,
            "log Z: mc {} vs quad {} (sigma {:e})",
            res.log_z.mean,
            lz,
            res.log_z.std_err
        );
        for (est, target) in res.cumulants.iter().zip([vec![1u32], vec![1, 2]]) {
            let exact = o.cumulant(&target).unwrap();
            assert!(
                (est.mean - exact).norm() < 3.0 * est.std_err,
                "K{target:?}: mc {} vs quad {} (sigma {:e})",
                est.mean,
                exact,
                est.std_err
            );
            // the error bar itself should be sane, not just generous
            assert!(
                est.std_err < 0.02,
                "error bar {:e} too wide to test anything",
                est.std_err
            );
        }
    }

    #[test]
    fn multiplicity_factor_counts_repeats() {
        assert_eq!(multiplicity_factor(&[1, 2, 3]), 1.0);
        assert_eq!(multiplicity_factor(&[2, 2]), 2.0);
        assert_eq!(multiplicity_factor(&[5, 2, 5, 5, 2]), 12.0);
    }
}
