//! Vertex factors and block expectations of the multi-scale expansion.
//!
//! Each expansion vertex a carries a label (kind, slice): an interaction
//! vertex contributes w(sigma) = e^{-V_j(sigma)} - 1, a source vertex with
//! attached legs Q contributes prod_{q in Q} G_{p_q}(sigma), all momenta of Q
//! lying in the vertex's slice. The forest derivative turns the bosonic part
//! of a term into a product over first-level blocks of
//!
//!   Int_{[0,1]^{edges}} E_{N(0, X(w))} [ prod_a w_a^(m_a)(sigma_a) ] dw,
//!
//! where X(w) is the path-minimum covariance of the block's internal tree and
//! m_a the vertex degree in that tree. Blocks are therefore the natural unit
//! of evaluation: this module computes one block integral with a strategy
//! picked by block size (tensor Gauss-Hermite inside ordering sectors up to
//! three vertices, fused quasi-Monte Carlo beyond), leaving bookkeeping and
//! caching to the assembler.

use nalgebra::{Cholesky, DMatrix, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forest::{integrate_by_sectors, Forest};
use crate::jet::Jet;
use crate::model::{resolvent_jet, v_slice_jet, CouplingPoint, SliceConfig};
use crate::quad::{gauss_hermite_prob, HaltonSampler};

/// What a vertex couples to.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WFactorKind {
    /// e^{-V_j} - 1
    Interaction,
    /// prod over attached legs of G_{p_q}; momenta sorted, all in the slice
    Source { momenta: Vec<u32> },
}

/// A labeled vertex factor.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WFactor {
    pub kind: WFactorKind,
    pub slice: u32,
}

impl WFactor {
    pub fn interaction(slice: u32) -> Self {
        WFactor {
            kind: WFactorKind::Interaction,
            slice,
        }
    }

    pub fn source(slice: u32, mut momenta: Vec<u32>) -> Self {
        momenta.sort_unstable();
        WFactor {
            kind: WFactorKind::Source { momenta },
            slice,
        }
    }

    /// Taylor jet of the factor along sigma.
    pub fn jet(&self, cfg: &SliceConfig, point: &CouplingPoint, sigma: f64, order: usize) -> Jet {
        let var = Jet::variable(Complex64::from(sigma), order);
        match &self.kind {
            WFactorKind::Interaction => v_slice_jet(cfg, point, self.slice, &var).neg().exp_m1(),
            WFactorKind::Source { momenta } => {
                let mut acc = Jet::constant(Complex64::ONE, order);
                for &p in momenta {
                    debug_assert_eq!(cfg.slice_of(p), self.slice);
                    acc = acc.mul(&resolvent_jet(point, p, &var));
                }
                acc
            }
        }
    }

    /// Plain value, order-zero jet.
    pub fn eval(&self, cfg: &SliceConfig, point: &CouplingPoint, sigma: f64) -> Complex64 {
        self.jet(cfg, point, sigma, 0).value()
    }
}

/// Numeric knobs for block evaluation.
#[derive(Clone, Copy, Debug)]
pub struct QuadParams {
    /// Gauss-Hermite nodes per Gaussian dimension (blocks of size <= 3).
    pub gh_nodes: usize,
    /// Gauss-Legendre nodes per w dimension inside ordering sectors.
    pub gl_nodes: usize,
    /// log2 of the quasi-Monte Carlo sample count for large blocks.
    pub qmc_log2: u32,
    /// Shift seed for the quasi-Monte Carlo sampler.
    pub qmc_seed: u64,
    /// Force the QMC path regardless of block size (testing hook).
    pub force_qmc: bool,
}

impl Default for QuadParams {
    fn default() -> Self {
        QuadParams {
            gh_nodes: 16,
            gl_nodes: 8,
            qmc_log2: 13,
            qmc_seed: 1,
            force_qmc: false,
        }
    }
}

/// One first-level block, in local vertex indices 0..factors.len():
/// the vertex factors with their derivative orders, and the internal tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub factors: Vec<(WFactor, usize)>,
    pub edges: Vec<(usize, usize)>,
}

impl BlockSpec {
    pub fn size(&self) -> usize {
        self.factors.len()
    }
}

fn covariance_from_tree(forest: &Forest, w: &[f64]) -> DMatrix<f64> {
    let s = forest.n;
    DMatrix::from_fn(s, s, |a, b| {
        if a == b {
            1.0
        } else {
            forest.path_min(w, a, b).unwrap_or(0.0)
        }
    })
}

fn cholesky_lower(x: DMatrix<f64>) -> Result<nalgebra::OMatrix<f64, Dyn, Dyn>> {
    let min_diag = x.diagonal().min();
    Cholesky::new(x).map(|c| c.l()).ok_or(Error::NotPsd {
        min_eigenvalue: min_diag,
    })
}

/// E_{N(0, X)} [ prod_a w_a^(m_a)(sigma_a) ] by a tensor Gauss-Hermite rule,
/// with sigma = L z for the Cholesky factor L of X.
fn correlated_expectation(
    l: &nalgebra::OMatrix<f64, Dyn, Dyn>,
    cfg: &SliceConfig,
    point: &CouplingPoint,
    spec: &BlockSpec,
    nodes: &[f64],
    weights: &[f64],
) -> Complex64 {
    let s = spec.size();
    let nn = nodes.len();
    let mut idx = vec![0usize; s];
    let mut total = Complex64::ZERO;
    loop {
        let mut weight = 1.0;
        let mut prod = Complex64::ONE;
        for (a, (factor, m)) in spec.factors.iter().enumerate() {
            weight *= weights[idx[a]];
            let mut sigma = 0.0;
            for b in 0..=a {
                sigma += l[(a, b)] * nodes[idx[b]];
            }
            prod *= factor.jet(cfg, point, sigma, *m).derivative(*m);
        }
        total += weight * prod;
        let mut c = 0;
        while c < s {
            idx[c] += 1;
            if idx[c] < nn {
                break;
            }
            idx[c] = 0;
            c += 1;
        }
        if c == s {
            break;
        }
    }
    total
}

/// The block integral: w-integral over the internal tree edges of the
/// interpolated Gaussian expectation of the derivative factors.
pub fn block_expectation(
    cfg: &SliceConfig,
    point: &CouplingPoint,
    spec: &BlockSpec,
    params: &QuadParams,
) -> Result<Complex64> {
    let s = spec.size();
    assert!(s >= 1);
    assert_eq!(
        spec.edges.len(),
        s.saturating_sub(1),
        "block interior must be a tree"
    );
    for (a, (factor, m)) in spec.factors.iter().enumerate() {
        let deg = spec
            .edges
            .iter()
            .filter(|&&(x, y)| x == a || y == a)
            .count();
        debug_assert_eq!(
            deg, *m,
            "derivative order of vertex {a} must equal its degree"
        );
        let _ = factor;
    }
    let tree = Forest::new(s, spec.edges.clone());
    if s <= 3 && !params.force_qmc {
        let (nodes, weights) = gauss_hermite_prob(params.gh_nodes);
        let mut bad = None;
        let val =
            integrate_by_sectors(spec.edges.len(), params.gl_nodes, |w| match cholesky_lower(
                covariance_from_tree(&tree, w),
            ) {
                Ok(l) => correlated_expectation(&l, cfg, point, spec, &nodes, &weights),
                Err(e) => {
                    bad.get_or_insert(e);
                    Complex64::ZERO
                }
            });
        if let Some(e) = bad.take() {
            return Err(e);
        }
        return Ok(val);
    }
    // fused QMC over (w, z): low-discrepancy uniforms drive both the edge
    // weakenings and, through the inverse CDF, the Gaussian directions
    let dim = spec.edges.len() + s;
    let sampler = HaltonSampler::new(dim, params.qmc_seed);
    let count = 1u64 << params.qmc_log2;
    let mut buf = vec![0.0; dim];
    let mut z = vec![0.0; s];
    let mut acc = crate::quad::CompensatedC64::default();
    for i in 0..count {
        sampler.uniforms(i, &mut buf);
        let w: Vec<f64> = buf[..spec.edges.len()]
            .iter()
            .map(|&u| u.clamp(1e-9, 1.0 - 1e-9))
            .collect();
        for (zi, &u) in z.iter_mut().zip(&buf[spec.edges.len()..]) {
            *zi = crate::quad::inv_normal_cdf(u);
        }
        let l = cholesky_lower(covariance_from_tree(&tree, &w))?;
        let mut prod = Complex64::ONE;
        for (a, (factor, m)) in spec.factors.iter().enumerate() {
            let mut sigma = 0.0;
            for b in 0..=a {
                sigma += l[(a, b)] * z[b];
            }
            prod *= factor.jet(cfg, point, sigma, *m).derivative(*m);
        }
        acc.add(prod);
    }
    Ok(acc.value() / count as f64)
}
