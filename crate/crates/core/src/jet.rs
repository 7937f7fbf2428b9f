//! Truncated Taylor jets over complex numbers.
//!
//! A `Jet` tracks the coefficients c_0..c_m of f(x0 + t) = sum_m c_m t^m, i.e. a
//! nested forward-mode dual number flattened into one coefficient vector. All the
//! interaction and source factors in this crate are built from affine functions of
//! the integration variable through exp, log and reciprocals, so these few
//! recurrences give every sigma-derivative we ever need, exactly and in one pass.

use num_complex::Complex64;

/// Highest tracked derivative order (inclusive).
pub const MAX_ORDER: usize = 7;
const W: usize = MAX_ORDER + 1;

/// Truncated Taylor polynomial with complex coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    c: [Complex64; W],
    ord: usize,
}

impl Jet {
    /// Constant jet.
    pub fn constant(v: Complex64, ord: usize) -> Self {
        assert!(ord <= MAX_ORDER, "jet order {ord} above {MAX_ORDER}");
        let mut c = [Complex64::ZERO; W];
        c[0] = v;
        Jet { c, ord }
    }

    /// The identity function at the expansion point `x`.
    pub fn variable(x: Complex64, ord: usize) -> Self {
        let mut j = Jet::constant(x, ord);
        if ord >= 1 {
            j.c[1] = Complex64::ONE;
        }
        j
    }

    pub fn order(&self) -> usize {
        self.ord
    }

    /// Value of the underlying function at the expansion point.
    pub fn value(&self) -> Complex64 {
        self.c[0]
    }

    /// m-th Taylor coefficient.
    pub fn coeff(&self, m: usize) -> Complex64 {
        if m <= self.ord {
            self.c[m]
        } else {
            Complex64::ZERO
        }
    }

    /// m-th derivative (coefficient times m!).
    pub fn derivative(&self, m: usize) -> Complex64 {
        let mut fact = 1.0;
        for r in 2..=m {
            fact *= r as f64;
        }
        self.coeff(m) * fact
    }

    pub fn add(&self, rhs: &Jet) -> Jet {
        let ord = self.ord.min(rhs.ord);
        let mut out = Jet::constant(Complex64::ZERO, ord);
        for m in 0..=ord {
            out.c[m] = self.c[m] + rhs.c[m];
        }
        out
    }

    pub fn sub(&self, rhs: &Jet) -> Jet {
        let ord = self.ord.min(rhs.ord);
        let mut out = Jet::constant(Complex64::ZERO, ord);
        for m in 0..=ord {
            out.c[m] = self.c[m] - rhs.c[m];
        }
        out
    }

    pub fn mul(&self, rhs: &Jet) -> Jet {
        let ord = self.ord.min(rhs.ord);
        let mut out = Jet::constant(Complex64::ZERO, ord);
        for m in 0..=ord {
            let mut acc = Complex64::ZERO;
            for r in 0..=m {
                acc += self.c[r] * rhs.c[m - r];
            }
            out.c[m] = acc;
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> Jet {
        let mut out = *self;
        for m in 0..=self.ord {
            out.c[m] *= s;
        }
        out
    }

    pub fn add_scalar(&self, s: Complex64) -> Jet {
        let mut out = *self;
        out.c[0] += s;
        out
    }

    pub fn neg(&self) -> Jet {
        self.scale(-Complex64::ONE)
    }

    /// 1 / self. Requires a nonzero leading coefficient.
    pub fn recip(&self) -> Jet {
        let a0 = self.c[0];
        debug_assert!(a0.norm() > 0.0, "jet reciprocal of zero");
        let inv = 1.0 / a0;
        let mut out = Jet::constant(inv, self.ord);
        out.c[0] = Complex64::ONE / a0;
        for m in 1..=self.ord {
            let mut acc = Complex64::ZERO;
            for r in 1..=m {
                acc += self.c[r] * out.c[m - r];
            }
            out.c[m] = -acc / a0;
        }
        out
    }

    /// exp(self).
    pub fn exp(&self) -> Jet {
        let mut out = Jet::constant(self.c[0].exp(), self.ord);
        for m in 1..=self.ord {
            let mut acc = Complex64::ZERO;
            for r in 1..=m {
                acc += (r as f64) * self.c[r] * out.c[m - r];
            }
            out.c[m] = acc / (m as f64);
        }
        out
    }

    /// exp(self) - 1, with the constant term computed stably near zero.
    pub fn exp_m1(&self) -> Jet {
        let mut out = self.exp();
        out.c[0] = cexp_m1(self.c[0]);
        out
    }

    /// Principal log(self). Requires a leading coefficient off the branch cut.
    pub fn ln(&self) -> Jet {
        let a0 = self.c[0];
        let mut out = Jet::constant(a0.ln(), self.ord);
        for m in 1..=self.ord {
            let mut acc = Complex64::ZERO;
            for r in 1..m {
                acc += (r as f64) * out.c[r] * self.c[m - r];
            }
            out.c[m] = (self.c[m] - acc / (m as f64)) / a0;
        }
        out
    }
}

/// exp(z) - 1 without catastrophic cancellation for small |z|.
pub fn cexp_m1(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        // z (1 + z/2 (1 + z/3 (1 + z/4))): relative error ~ |z|^4 / 5!
        let mut acc = Complex64::ONE + z / 5.0;
        acc = Complex64::ONE + z * acc / 4.0;
        acc = Complex64::ONE + z * acc / 3.0;
        acc = Complex64::ONE + z * acc / 2.0;
        z * acc
    } else {
        z.exp() - Complex64::ONE
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn variable_and_constant_coefficients() {
        let x = Jet::variable(c(2.0, 1.0), 3);
        assert_eq!(x.value(), c(2.0, 1.0));
        assert_eq!(x.coeff(1), Complex64::ONE);
        assert_eq!(x.coeff(2), Complex64::ZERO);
        let k = Jet::constant(c(5.0, 0.0), 3);
        assert_eq!(k.coeff(1), Complex64::ZERO);
    }

    #[test]
    fn product_reproduces_leibniz() {
        // f = x^2, g = x^3 at x = 1.5: (fg)''' = 60 x^2.
        let x = Jet::variable(c(1.5, 0.0), 4);
        let f = x.mul(&x);
        let g = f.mul(&x);
        let fg = f.mul(&g);
        assert_relative_eq!(
            fg.derivative(3).re,
            60.0 * 1.5f64.powi(2),
            max_relative = 1e-13
        );
    }

    #[test]
    fn recip_matches_analytic_derivatives() {
        // d^m/dx^m (1/(1 - a x)) = m! a^m / (1 - a x)^{m+1}
        let a = c(0.3, 0.7);
        let x0 = c(0.2, -0.1);
        let den = Jet::variable(x0, 5).scale(-a).add_scalar(Complex64::ONE);
        let r = den.recip();
        let base = Complex64::ONE - a * x0;
        for m in 0..=5usize {
            let mut fact = 1.0;
            for k in 2..=m {
                fact *= k as f64;
            }
            let expect = fact * a.powu(m as u32) / base.powu(m as u32 + 1);
            assert_relative_eq!(r.derivative(m).re, expect.re, max_relative = 1e-12);
            assert_relative_eq!(r.derivative(m).im, expect.im, max_relative = 1e-12);
        }
    }

    #[test]
    fn exp_ln_roundtrip_and_derivatives() {
        let x = Jet::variable(c(0.4, 0.2), 6);
        let f = x.mul(&x).add(&x).exp(); // exp(x^2 + x)
        let back = f.ln();
        // ln(exp(x^2 + x)) = x^2 + x: coefficients (2 x0 + 1) and 1
        let lin = 2.0 * c(0.4, 0.2) + Complex64::ONE;
        assert_relative_eq!(back.coeff(2).re, 1.0, max_relative = 1e-12);
        assert_relative_eq!(back.coeff(1).re, lin.re, max_relative = 1e-12);
        assert_relative_eq!(back.coeff(1).im, lin.im, max_relative = 1e-12);
        // exp'(x^2+x) = (2x+1) exp(x^2+x)
        let expect = (2.0 * c(0.4, 0.2) + Complex64::ONE) * f.value();
        assert_relative_eq!(f.derivative(1).re, expect.re, max_relative = 1e-13);
        assert_relative_eq!(f.derivative(1).im, expect.im, max_relative = 1e-13);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        // f(x) = exp(-(x + ln(1 - x))) - 1 along the real axis, a shape close to the
        // factors used elsewhere in the crate.
        let f = |x: f64| (-(x + (1.0 - x).ln())).exp() - 1.0;
        let x0 = 0.3;
        let jx = Jet::variable(c(x0, 0.0), 3);
        let one = Complex64::ONE;
        let jet = jx.add(&jx.neg().add_scalar(one).ln()).neg().exp_m1();
        let h = 1e-4;
        let fd1 = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
        let fd2 = (f(x0 + h) - 2.0 * f(x0) + f(x0 - h)) / (h * h);
        let fd3 = (f(x0 + 2.0 * h) - 2.0 * f(x0 + h) + 2.0 * f(x0 - h) - f(x0 - 2.0 * h))
            / (2.0 * h * h * h);
        assert_relative_eq!(jet.derivative(1).re, fd1, max_relative = 1e-7);
        assert_relative_eq!(jet.derivative(2).re, fd2, max_relative = 1e-6);
        assert_relative_eq!(jet.derivative(3).re, fd3, max_relative = 1e-4);
    }

    #[test]
    fn exp_m1_is_stable_for_tiny_arguments() {
        let z = c(1e-9, 2e-9);
        let direct = cexp_m1(z);
        // Leading terms: z + z^2/2.
        let expect = z + z * z / 2.0;
        assert!((direct - expect).norm() < 1e-24);
    }
}
