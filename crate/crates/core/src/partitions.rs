//! Set partitions of the leg set and the moments-to-cumulants inversion.
//!
//! A k-point cumulant treats repeated momenta as distinct legs, so everything
//! here partitions the index set {0, .., k-1} and never looks at the momentum
//! values. The inversion is the Moebius function of the partition lattice:
//! kappa = sum over partitions of (-1)^{b-1} (b-1)! times the product of block
//! moments, b the number of blocks.

use num_complex::Complex64;

/// All partitions of {0, .., k-1}. Blocks are sorted internally and listed by
/// their smallest element, so the output order is deterministic.
pub fn set_partitions(k: usize) -> Vec<Vec<Vec<usize>>> {
    if k == 0 {
        return vec![vec![]];
    }
    // restricted growth strings: s[0] = 0, s[i] <= 1 + max(s[0..i])
    let mut out = Vec::new();
    let mut s = vec![0usize; k];
    loop {
        let blocks = s.iter().copied().max().unwrap() + 1;
        let mut part = vec![Vec::new(); blocks];
        for (i, &b) in s.iter().enumerate() {
            part[b].push(i);
        }
        out.push(part);
        // next string in lexicographic order
        let mut i = k;
        loop {
            if i == 1 {
                return out;
            }
            i -= 1;
            let cap = 1 + s[..i].iter().copied().max().unwrap();
            if s[i] < cap {
                s[i] += 1;
                for v in s[i + 1..].iter_mut() {
                    *v = 0;
                }
                break;
            }
        }
    }
}

/// n! as f64.
pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|r| r as f64).product()
}

/// Joint cumulant of k legs from a block-moment evaluator. `moment` receives a
/// sorted list of leg indices and must return the joint moment of that subset.
pub fn cumulant_from_moments<F>(k: usize, mut moment: F) -> Complex64
where
    F: FnMut(&[usize]) -> Complex64,
{
    let mut acc = Complex64::ZERO;
    for part in set_partitions(k) {
        let b = part.len();
        let sign = if (b + 1) % 2 == 0 { 1.0 } else { -1.0 };
        let weight = sign * factorial(b.saturating_sub(1));
        let mut prod = Complex64::ONE;
        for block in &part {
            prod *= moment(block);
        }
        acc += weight * prod;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bell_numbers() {
        for (k, bell) in [
            (0usize, 1usize),
            (1, 1),
            (2, 2),
            (3, 5),
            (4, 15),
            (5, 52),
            (6, 203),
        ] {
            assert_eq!(set_partitions(k).len(), bell, "k = {k}");
        }
    }

    #[test]
    fn partitions_cover_every_index_once() {
        for part in set_partitions(4) {
            let mut seen = [false; 4];
            for block in &part {
                assert!(!block.is_empty());
                for &i in block {
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn gaussian_cumulants_truncate_after_second() {
        let mu = 0.7;
        let var = 1.3;
        // E[x^k] = mu E[x^{k-1}] + (k-1) var E[x^{k-2}]
        let mut moments = vec![1.0, mu];
        for k in 2..=6 {
            let m = mu * moments[k - 1] + (k as f64 - 1.0) * var * moments[k - 2];
            moments.push(m);
        }
        let kappa =
            |k: usize| cumulant_from_moments(k, |block| Complex64::from(moments[block.len()]));
        assert_relative_eq!(kappa(1).re, mu, max_relative = 1e-13);
        assert_relative_eq!(kappa(2).re, var, max_relative = 1e-13);
        for k in 3..=6 {
            assert!(kappa(k).norm() < 1e-10, "kappa_{k} = {}", kappa(k));
        }
    }

    #[test]
    fn poisson_cumulants_are_all_lambda() {
        let lam = 0.9;
        // Touchard recursion: m_{k+1} = lam sum_j C(k,j) m_j
        let mut moments = vec![1.0f64];
        for k in 0..6 {
            let mut next = 0.0;
            let mut binom = 1.0;
            for (j, m) in moments.iter().enumerate() {
                next += binom * m;
                binom *= (k - j) as f64 / (j + 1) as f64;
            }
            moments.push(lam * next);
        }
        for k in 1..=5 {
            let got = cumulant_from_moments(k, |block| Complex64::from(moments[block.len()]));
            assert_relative_eq!(got.re, lam, max_relative = 1e-11);
        }
    }
}
