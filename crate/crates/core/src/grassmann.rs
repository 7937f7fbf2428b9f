//! Grassmann Gaussian expectations over replica pairs (chi_a, chibar_a).
//!
//! The covariance convention throughout: C_ab = < chibar_a chi_b >, so
//! anticommutation forces < chi_a chibar_b > = -C_ba, and mixed monomials pick
//! up the parity of whatever reordering brings them to the reference
//! interleaved form chibar chi chibar chi ... in which the expectation is a
//! plain determinant. Two independent evaluators are provided: the
//! sort-and-determinant route used by the expansion, and a pairwise Wick
//! recursion kept as an oracle, sharing no code with the first. Left Grassmann
//! derivatives round out the toolkit; the fermionic edge operators of the
//! expansion are sums of such derivative pairs.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// One Grassmann generator: chi_pair or chibar_pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Generator {
    pub pair: usize,
    pub barred: bool,
}

pub fn chi(pair: usize) -> Generator {
    Generator {
        pair,
        barred: false,
    }
}

pub fn chi_bar(pair: usize) -> Generator {
    Generator { pair, barred: true }
}

fn validate(monomial: &[Generator]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut seen = std::collections::HashSet::new();
    for g in monomial {
        if !seen.insert((g.pair, g.barred)) {
            return Err(Error::RepeatedGenerator);
        }
    }
    let barred: Vec<usize> = monomial
        .iter()
        .filter(|g| g.barred)
        .map(|g| g.pair)
        .collect();
    let unbarred: Vec<usize> = monomial
        .iter()
        .filter(|g| !g.barred)
        .map(|g| g.pair)
        .collect();
    if barred.len() != unbarred.len() {
        return Err(Error::UnbalancedMonomial {
            barred: barred.len(),
            unbarred: unbarred.len(),
        });
    }
    Ok((barred, unbarred))
}

/// Expectation of a monomial under the Gaussian state with covariance
/// c[a][b] = < chibar_a chi_b >: sign times determinant.
///
/// The sign is the parity of the permutation sorting the monomial into
/// chibar^(1) chi^(1) chibar^(2) chi^(2) .., where chibar^(i) is the i-th
/// barred generator of the input (in input order) and likewise for chi^(i);
/// the determinant is det[ c[a_i][b_j] ] over those sequences.
pub fn gaussian_expectation(c: &[Vec<Complex64>], monomial: &[Generator]) -> Result<Complex64> {
    let (barred, unbarred) = validate(monomial)?;
    let k = barred.len();
    if k == 0 {
        return Ok(Complex64::ONE);
    }
    // target slot of each input element: i-th barred -> 2i, j-th unbarred -> 2j+1
    let mut slots = Vec::with_capacity(monomial.len());
    let mut bi = 0;
    let mut ui = 0;
    for g in monomial {
        if g.barred {
            slots.push(2 * bi);
            bi += 1;
        } else {
            slots.push(2 * ui + 1);
            ui += 1;
        }
    }
    let mut inversions = 0usize;
    for i in 0..slots.len() {
        for j in i + 1..slots.len() {
            if slots[i] > slots[j] {
                inversions += 1;
            }
        }
    }
    let sign = if inversions.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    };
    let mat = DMatrix::from_fn(k, k, |i, j| c[barred[i]][unbarred[j]]);
    Ok(sign * mat.determinant())
}

/// Independent oracle for the same expectation: contract the leading generator
/// against each later partner, with the transposition sign (-1)^(j-1) for a
/// partner at offset j, and recurse on the remainder.
pub fn wick_recursive(c: &[Vec<Complex64>], monomial: &[Generator]) -> Result<Complex64> {
    validate(monomial)?;
    fn pair_value(c: &[Vec<Complex64>], x: Generator, y: Generator) -> Complex64 {
        match (x.barred, y.barred) {
            (true, false) => c[x.pair][y.pair],
            (false, true) => -c[y.pair][x.pair],
            _ => Complex64::ZERO,
        }
    }
    fn go(c: &[Vec<Complex64>], m: &[Generator]) -> Complex64 {
        if m.is_empty() {
            return Complex64::ONE;
        }
        let mut acc = Complex64::ZERO;
        for j in 1..m.len() {
            let pv = pair_value(c, m[0], m[j]);
            if pv == Complex64::ZERO {
                continue;
            }
            let sign = if (j - 1) % 2 == 0 { 1.0 } else { -1.0 };
            let rest: Vec<Generator> = m[1..j].iter().chain(&m[j + 1..]).copied().collect();
            acc += sign * pv * go(c, &rest);
        }
        acc
    }
    Ok(go(c, monomial))
}

/// Left Grassmann derivative: removes `gen` from the monomial with the sign
/// (-1)^position. None if the generator does not occur.
pub fn derivative(gen: Generator, monomial: &[Generator]) -> Option<(f64, Vec<Generator>)> {
    let pos = monomial.iter().position(|&g| g == gen)?;
    let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
    let mut rest = monomial.to_vec();
    rest.remove(pos);
    Some((sign, rest))
}

/// A signed monomial, the working currency of the edge-operator expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedMonomial {
    pub sign: f64,
    pub factors: Vec<Generator>,
}

/// Apply the symmetric fermionic edge operator
/// d/dchibar_a d/dchi_b + d/dchibar_b d/dchi_a to each signed monomial,
/// returning all surviving terms.
pub fn apply_edge_operator(a: usize, b: usize, terms: &[SignedMonomial]) -> Vec<SignedMonomial> {
    let mut out = Vec::new();
    for term in terms {
        for (bar_pair, chi_pair) in [(a, b), (b, a)] {
            if let Some((s1, rest)) = derivative(chi(chi_pair), &term.factors) {
                if let Some((s2, rest2)) = derivative(chi_bar(bar_pair), &rest) {
                    out.push(SignedMonomial {
                        sign: term.sign * s1 * s2,
                        factors: rest2,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cmat(rows: &[&[(f64, f64)]]) -> Vec<Vec<Complex64>> {
        rows.iter()
            .map(|r| r.iter().map(|&(re, im)| Complex64::new(re, im)).collect())
            .collect()
    }

    #[test]
    fn two_point_functions() {
        let c = cmat(&[&[(1.0, 0.0)]]);
        let plus = gaussian_expectation(&c, &[chi_bar(0), chi(0)]).unwrap();
        assert_eq!(plus, Complex64::ONE);
        let minus = gaussian_expectation(&c, &[chi(0), chi_bar(0)]).unwrap();
        assert_eq!(minus, -Complex64::ONE);
    }

    #[test]
    fn interleaved_four_point_is_a_determinant() {
        let y = 0.37;
        let c = cmat(&[&[(1.0, 0.0), (y, 0.0)], &[(y, 0.0), (1.0, 0.0)]]);
        let m = [chi_bar(0), chi(0), chi_bar(1), chi(1)];
        let got = gaussian_expectation(&c, &m).unwrap();
        assert!((got - Complex64::from(1.0 - y * y)).norm() < 1e-15);
    }

    #[test]
    fn swapping_adjacent_generators_flips_the_sign() {
        let c = cmat(&[&[(0.9, 0.1), (0.2, -0.3)], &[(0.4, 0.0), (1.1, 0.2)]]);
        let m = [chi_bar(0), chi(1), chi_bar(1), chi(0)];
        let mut swapped = m;
        swapped.swap(1, 2);
        let a = gaussian_expectation(&c, &m).unwrap();
        let b = gaussian_expectation(&c, &swapped).unwrap();
        assert!((a + b).norm() < 1e-15);
    }

    #[test]
    fn malformed_monomials_are_rejected() {
        let c = cmat(&[&[(1.0, 0.0)]]);
        assert!(matches!(
            gaussian_expectation(&c, &[chi(0), chi(0)]),
            Err(Error::RepeatedGenerator)
        ));
        assert!(matches!(
            gaussian_expectation(&c, &[chi_bar(0)]),
            Err(Error::UnbalancedMonomial {
                barred: 1,
                unbarred: 0
            })
        ));
    }

    #[test]
    fn determinant_route_matches_wick_recursion_on_random_monomials() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(2024);
        for trial in 0..500 {
            let pairs = rng.random_range(1..=4usize);
            let c: Vec<Vec<Complex64>> = (0..pairs)
                .map(|_| {
                    (0..pairs)
                        .map(|_| {
                            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                        })
                        .collect()
                })
                .collect();
            // a random balanced monomial over a random subset of the pairs
            let k = rng.random_range(1..=pairs);
            let mut gens: Vec<Generator> = Vec::new();
            let mut chosen: Vec<usize> = (0..pairs).collect();
            for _ in 0..pairs - k {
                chosen.remove(rng.random_range(0..chosen.len()));
            }
            for &p in &chosen {
                gens.push(chi(p));
                gens.push(chi_bar(p));
            }
            // Fisher-Yates shuffle
            for i in (1..gens.len()).rev() {
                let j = rng.random_range(0..=i);
                gens.swap(i, j);
            }
            let a = gaussian_expectation(&c, &gens).unwrap();
            let b = wick_recursive(&c, &gens).unwrap();
            assert!(
                (a - b).norm() < 1e-12 * (1.0 + a.norm()),
                "trial {trial}: det {a} vs wick {b} on {gens:?}"
            );
        }
    }

    #[test]
    fn derivative_signs() {
        let m = [chi(0), chi_bar(0)];
        assert_eq!(derivative(chi(0), &m), Some((1.0, vec![chi_bar(0)])));
        assert_eq!(derivative(chi_bar(0), &m), Some((-1.0, vec![chi(0)])));
        assert_eq!(derivative(chi(7), &m), None);
    }

    #[test]
    fn edge_operator_on_the_two_vertex_base_monomial() {
        // (d/dchibar_0 d/dchi_1 + d/dchibar_1 d/dchi_0) chi_0 chibar_0 chi_1 chibar_1
        // = -chi_0 chibar_1 + chibar_0 chi_1
        let base = SignedMonomial {
            sign: 1.0,
            factors: vec![chi(0), chi_bar(0), chi(1), chi_bar(1)],
        };
        let got = apply_edge_operator(0, 1, &[base]);
        assert_eq!(got.len(), 2);
        assert!(got.contains(&SignedMonomial {
            sign: -1.0,
            factors: vec![chi(0), chi_bar(1)]
        }));
        assert!(got.contains(&SignedMonomial {
            sign: 1.0,
            factors: vec![chi_bar(0), chi(1)]
        }));
        // contracted with C = -Y this gives the -2 Y_{01} edge factor
        let y01 = 0.6;
        let c = cmat(&[&[(-1.0, 0.0), (-y01, 0.0)], &[(-y01, 0.0), (-1.0, 0.0)]]);
        let total: Complex64 = got
            .iter()
            .map(|t| t.sign * gaussian_expectation(&c, &t.factors).unwrap())
            .sum();
        assert!((total - Complex64::from(-2.0 * y01)).norm() < 1e-15);
    }
}
