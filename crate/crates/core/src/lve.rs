//! Assembly of the multi-scale expansion: the sum over two-level jungles.
//!
//! A cumulant is organized as
//!
//! ```text
//! K^k({p_q}) = [prod_p m_p!] sum_{n>=1} (1/n!) sum_{jungles} sum_{labels}
//!              sum_{leg maps}  integral dw  Phi_B Phi_F
//! ```
//!
//! over jungles on n labeled vertices. Each vertex carries a label (c, j):
//! an interaction vertex couples to e^{-V_j} - 1, a source vertex to the
//! product of resolvents of the legs mapped onto it. First-level edges group
//! vertices into blocks whose sigma fields share a forest-interpolated
//! covariance, so Phi_B factorizes into one `block_expectation` per block.
//! Second-level edges contract replica Grassmann fields between blocks; Phi_F
//! is a polynomial in the second-level interpolation parameters and is
//! integrated exactly, ordering sector by ordering sector.
//!
//! The nilpotency of the replica fields is enforced by enumeration, not left
//! to the integrands: labels must be pairwise distinct inside a block, and a
//! second-level edge requires equal labels at its endpoints (the Grassmann
//! covariance carries that delta). Every source vertex must receive at least
//! one leg, and a leg only attaches to a source vertex of its own slice.
//! With no legs at all the same sum is the free energy log Z.

use std::collections::HashMap;

use itertools::Itertools;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forest::{enumerate_spanning_jungles, integrate_by_sectors, Jungle};
use crate::grassmann::{apply_edge_operator, chi, chi_bar, gaussian_expectation, SignedMonomial};
use crate::model::{CouplingPoint, SliceConfig};
use crate::oracle::{multiplicity_factor, Oracle};
use crate::partitions::factorial;
use crate::quad::CompensatedC64;
use crate::replica::{block_expectation, BlockSpec, QuadParams, WFactor};

/// Cap on the number of external legs (momenta) of one cumulant.
pub const MAX_LEGS: usize = 5;

/// Knobs of the expansion itself, wrapping the per-block quadrature knobs.
#[derive(Clone, Debug)]
pub struct LveParams {
    /// Largest vertex count summed; increments are reported per order.
    pub n_max: usize,
    pub quad: QuadParams,
    /// Increments below `noise_floor * (1 + |value|)` count as converged
    /// regardless of their trend; they are quadrature dust.
    pub noise_floor: f64,
}

impl Default for LveParams {
    fn default() -> Self {
        LveParams {
            n_max: 4,
            quad: QuadParams::default(),
            noise_floor: 1e-12,
        }
    }
}

/// Outcome of one jungle sum: the truncated value with its order-by-order
/// breakdown and a heuristic convergence verdict.
#[derive(Clone, Debug)]
pub struct CumulantResult {
    pub value: Complex64,
    /// Contribution of each vertex order n = 1..=n_max.
    pub order_terms: Vec<Complex64>,
    /// Running sums of `order_terms`.
    pub partial_sums: Vec<Complex64>,
    /// Last three increments decrease (or the last one is below the noise
    /// floor) and nothing overflowed.
    pub converged: bool,
    /// Geometric-tail estimate of the truncation remainder.
    pub error_estimate: f64,
}

/// Vertex label: interaction or source, and the slice index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Label {
    source: bool,
    slice: u32,
}

/// A block integral is determined by its factor list and internal tree shape
/// up to a relabeling of the local vertices; the cache key is the
/// lexicographically smallest relabeled form.
type BlockKey = (Vec<(WFactor, usize)>, Vec<(usize, usize)>);

fn canonical_block(spec: &BlockSpec) -> BlockKey {
    let s = spec.size();
    let mut best: Option<BlockKey> = None;
    for perm in (0..s).permutations(s) {
        let mut inv = vec![0usize; s];
        for (newpos, &old) in perm.iter().enumerate() {
            inv[old] = newpos;
        }
        let factors: Vec<_> = perm.iter().map(|&old| spec.factors[old].clone()).collect();
        let mut edges: Vec<_> = spec
            .edges
            .iter()
            .map(|&(x, y)| {
                let (a, b) = (inv[x], inv[y]);
                (a.min(b), a.max(b))
            })
            .collect();
        edges.sort_unstable();
        let cand = (factors, edges);
        if best.as_ref().is_none_or(|b| cand < *b) {
            best = Some(cand);
        }
    }
    best.expect("blocks are nonempty")
}

/// Phi_F depends on the jungle shape and on which vertices share a label,
/// nothing else, so label lists are normalized to first-occurrence ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct FermiKey {
    edges: Vec<(usize, usize)>,
    bosonic: Vec<bool>,
    label_ids: Vec<u8>,
}

fn normalize_labels(labels: &[Label]) -> Vec<u8> {
    let mut seen: Vec<Label> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(i) => i as u8,
            None => {
                seen.push(*l);
                (seen.len() - 1) as u8
            }
        })
        .collect()
}

/// The fermionic factor of one jungle term, integrated exactly over the
/// second-level interpolation parameters. The edge operators are applied
/// symbolically to the base monomial chi_0 chibar_0 .. chi_{n-1} chibar_{n-1}
/// and the surviving monomials are contracted against the covariance
/// C_ab = -Y_{B(a)B(b)} [label_a == label_b], which is -1 on the diagonal.
/// Inside a sector the integrand is a polynomial of per-variable degree at
/// most the edge count, so modest Gauss-Legendre rules are exact.
fn fermionic_value(jungle: &Jungle, label_ids: &[u8], gl_nodes: usize) -> Complex64 {
    let f_edges = jungle.fermionic_edges();
    if f_edges.is_empty() {
        // hard-core labels make all off-diagonal couplings of one block
        // vanish, so the base monomial contracts to +1
        return Complex64::ONE;
    }
    let n = jungle.forest.n;
    let blocks = jungle.blocks();
    let mut block_of = vec![0usize; n];
    for (bi, block) in blocks.iter().enumerate() {
        for &v in block {
            block_of[v] = bi;
        }
    }
    let base: Vec<_> = (0..n).flat_map(|a| [chi(a), chi_bar(a)]).collect();
    let mut terms = vec![SignedMonomial {
        sign: 1.0,
        factors: base,
    }];
    for &(a, b) in &f_edges {
        terms = apply_edge_operator(a, b, &terms);
    }
    integrate_by_sectors(f_edges.len(), gl_nodes, |w| {
        let y = jungle.y_matrix(w);
        let mut c = vec![vec![Complex64::ZERO; n]; n];
        for a in 0..n {
            for b in 0..n {
                if label_ids[a] == label_ids[b] {
                    c[a][b] = Complex64::from(-y[block_of[a]][block_of[b]]);
                }
            }
        }
        let mut acc = Complex64::ZERO;
        for t in &terms {
            acc += t.sign
                * gaussian_expectation(&c, &t.factors)
                    .expect("edge operators keep monomials balanced");
        }
        acc
    })
}

/// Everything the order-n sweep discovered: interned block and fermionic
/// jobs plus each surviving term as indices into those tables.
struct OrderTerms {
    terms: Vec<(usize, Vec<usize>)>,
    fermi_jobs: Vec<(FermiKey, Jungle, Vec<u8>)>,
    block_jobs: Vec<(BlockKey, BlockSpec)>,
}

fn enumerate_order(
    n: usize,
    domain: &[Label],
    momenta: &[u32],
    leg_slices: &[u32],
    slice_budget: &HashMap<u32, usize>,
) -> Result<OrderTerms> {
    let jungles = enumerate_spanning_jungles(n)?;
    let k = momenta.len();
    let mut out = OrderTerms {
        terms: Vec::new(),
        fermi_jobs: Vec::new(),
        block_jobs: Vec::new(),
    };
    let mut fermi_index: HashMap<FermiKey, usize> = HashMap::new();
    let mut block_index: HashMap<BlockKey, usize> = HashMap::new();

    for jungle in &jungles {
        let blocks = jungle.blocks();
        let f_edges = jungle.fermionic_edges();
        let bos = jungle.bosonic_forest();
        let degrees: Vec<usize> = (0..n).map(|v| bos.degree(v)).collect();

        'labels: for labels in (0..n)
            .map(|_| domain.iter().copied())
            .multi_cartesian_product()
        {
            // nilpotency: labels pairwise distinct inside each block
            for block in &blocks {
                for (i, &a) in block.iter().enumerate() {
                    for &b in &block[i + 1..] {
                        if labels[a] == labels[b] {
                            continue 'labels;
                        }
                    }
                }
            }
            // the Grassmann delta: second-level edges need equal labels
            if f_edges.iter().any(|&(a, b)| labels[a] != labels[b]) {
                continue;
            }
            // source vertices of one slice cannot outnumber its legs
            let sources: Vec<usize> = (0..n).filter(|&v| labels[v].source).collect();
            if sources.len() > k {
                continue;
            }
            let mut used: HashMap<u32, usize> = HashMap::new();
            for &v in &sources {
                *used.entry(labels[v].slice).or_insert(0) += 1;
            }
            if used
                .iter()
                .any(|(s, c)| c > slice_budget.get(s).unwrap_or(&0))
            {
                continue;
            }

            let label_ids = normalize_labels(&labels);
            let fkey = FermiKey {
                edges: jungle.forest.edges.clone(),
                bosonic: jungle.bosonic.clone(),
                label_ids: label_ids.clone(),
            };
            let fi = *fermi_index.entry(fkey.clone()).or_insert_with(|| {
                out.fermi_jobs.push((fkey, jungle.clone(), label_ids));
                out.fermi_jobs.len() - 1
            });

            // maps leg -> source vertex of the matching slice, onto `sources`
            let maps: Vec<Vec<usize>> = if k == 0 {
                vec![Vec::new()]
            } else {
                leg_slices
                    .iter()
                    .map(|&s| {
                        sources
                            .iter()
                            .copied()
                            .filter(|&v| labels[v].slice == s)
                            .collect::<Vec<_>>()
                    })
                    .multi_cartesian_product()
                    .filter(|map| sources.iter().all(|v| map.contains(v)))
                    .collect()
            };

            for map in maps {
                let mut attached: HashMap<usize, Vec<u32>> = HashMap::new();
                for (q, &v) in map.iter().enumerate() {
                    attached.entry(v).or_default().push(momenta[q]);
                }
                let mut keys = Vec::with_capacity(blocks.len());
                for block in &blocks {
                    let factors: Vec<(WFactor, usize)> = block
                        .iter()
                        .map(|&v| {
                            let w = if labels[v].source {
                                WFactor::source(labels[v].slice, attached[&v].clone())
                            } else {
                                WFactor::interaction(labels[v].slice)
                            };
                            (w, degrees[v])
                        })
                        .collect();
                    let local: HashMap<usize, usize> =
                        block.iter().enumerate().map(|(i, &v)| (v, i)).collect();
                    let edges: Vec<(usize, usize)> = bos
                        .edges
                        .iter()
                        .filter(|(a, _)| local.contains_key(a))
                        .filter_map(|&(a, b)| Some((*local.get(&a)?, *local.get(&b)?)))
                        .collect();
                    let spec = BlockSpec { factors, edges };
                    let key = canonical_block(&spec);
                    let bi = *block_index.entry(key.clone()).or_insert_with(|| {
                        out.block_jobs.push((key, spec));
                        out.block_jobs.len() - 1
                    });
                    keys.push(bi);
                }
                out.terms.push((fi, keys));
            }
        }
    }
    Ok(out)
}

fn convergence_verdict(order_terms: &[Complex64], value: Complex64, floor: f64) -> (bool, f64) {
    let mags: Vec<f64> = order_terms.iter().map(|t| t.norm()).collect();
    if mags.iter().any(|m| !m.is_finite()) || !value.is_finite() {
        return (false, f64::INFINITY);
    }
    let noise = floor * (1.0 + value.norm());
    let l = mags.len();
    let last = mags[l - 1];
    if last <= noise {
        return (true, noise);
    }
    if l >= 3 && mags[l - 3] > mags[l - 2] && mags[l - 2] > last {
        // pad the observed decay ratio before the geometric tail sum
        let r = (1.5 * last / mags[l - 2]).clamp(0.1, 0.95);
        return (true, last * r / (1.0 - r) + noise);
    }
    (false, if l >= 2 { last.max(mags[l - 2]) } else { last })
}

/// The jungle sum for the cumulant of `momenta`, or for log Z when `momenta`
/// is empty. Repeated momenta are distinct legs; the overall prod_p m_p! is
/// included. Term order, caching, and the parallel evaluation schedule are
/// all deterministic, so identical inputs give identical bits.
pub fn cumulant_lve(
    cfg: &SliceConfig,
    point: &CouplingPoint,
    momenta: &[u32],
    params: &LveParams,
) -> Result<CumulantResult> {
    let k = momenta.len();
    if k > MAX_LEGS {
        return Err(Error::CapExceeded {
            what: "cumulant legs",
            got: k,
            cap: MAX_LEGS,
        });
    }
    if params.n_max == 0 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    let n_modes = cfg.n();
    for &p in momenta {
        if p < 1 || p > n_modes {
            return Err(Error::InvalidParameter(format!(
                "momentum {p} outside 1..={n_modes}"
            )));
        }
    }
    let leg_slices: Vec<u32> = momenta.iter().map(|&p| cfg.slice_of(p)).collect();
    let mut slice_budget: HashMap<u32, usize> = HashMap::new();
    for &s in &leg_slices {
        *slice_budget.entry(s).or_insert(0) += 1;
    }
    let mut domain: Vec<Label> = (1..=cfg.j_max)
        .map(|j| Label {
            source: false,
            slice: j,
        })
        .collect();
    let mut source_slices: Vec<u32> = slice_budget.keys().copied().collect();
    source_slices.sort_unstable();
    domain.extend(source_slices.iter().map(|&j| Label {
        source: true,
        slice: j,
    }));

    let mult = multiplicity_factor(momenta);
    let mut block_cache: HashMap<BlockKey, Complex64> = HashMap::new();
    let mut fermi_cache: HashMap<FermiKey, Complex64> = HashMap::new();
    let mut order_terms = Vec::with_capacity(params.n_max);

    for n in 1..=params.n_max {
        let order = enumerate_order(n, &domain, momenta, &leg_slices, &slice_budget)?;

        let missing_blocks: Vec<usize> = (0..order.block_jobs.len())
            .filter(|&i| !block_cache.contains_key(&order.block_jobs[i].0))
            .collect();
        let block_vals: Vec<Result<Complex64>> = missing_blocks
            .par_iter()
            .map(|&i| block_expectation(cfg, point, &order.block_jobs[i].1, &params.quad))
            .collect();
        for (&i, val) in missing_blocks.iter().zip(block_vals) {
            block_cache.insert(order.block_jobs[i].0.clone(), val?);
        }

        let missing_fermi: Vec<usize> = (0..order.fermi_jobs.len())
            .filter(|&i| !fermi_cache.contains_key(&order.fermi_jobs[i].0))
            .collect();
        let fermi_vals: Vec<Complex64> = missing_fermi
            .par_iter()
            .map(|&i| {
                let (_, jungle, ids) = &order.fermi_jobs[i];
                fermionic_value(jungle, ids, params.quad.gl_nodes)
            })
            .collect();
        for (&i, val) in missing_fermi.iter().zip(fermi_vals) {
            fermi_cache.insert(order.fermi_jobs[i].0.clone(), val);
        }

        let mut acc = CompensatedC64::default();
        for (fi, block_keys) in &order.terms {
            let mut v = fermi_cache[&order.fermi_jobs[*fi].0];
            for &bi in block_keys {
                v *= block_cache[&order.block_jobs[bi].0];
            }
            acc.add(v);
        }
        order_terms.push(acc.value() * mult / factorial(n));
    }

    let mut partial_sums = Vec::with_capacity(order_terms.len());
    let mut run = Complex64::ZERO;
    for &t in &order_terms {
        run += t;
        partial_sums.push(run);
    }
    let value = run;
    let (mut converged, mut error_estimate) =
        convergence_verdict(&order_terms, value, params.noise_floor);
    if point.g.re < 0.0 && point.g.im.abs() <= 1e-12 * point.g.norm() {
        // on the negative real axis the resolvent pole sits on the sigma
        // contour; every quadrature value there is meaningless
        converged = false;
        error_estimate = f64::INFINITY;
    }
    Ok(CumulantResult {
        value,
        order_terms,
        partial_sums,
        converged,
        error_estimate,
    })
}

/// Taylor coefficients in g of a numeric map, by the trapezoid rule on the
/// circle |g| = radius. The trapezoid sums geometric phases exactly, so with
/// P points the m-th coefficient is polluted only by orders m + P, m + 2P, ..
/// plus the branch cut on the negative real axis, whose jump inside radii
/// around 0.02 sits at the e^{-1/(2 radius)} scale. The sample angles are
/// half-shifted so no evaluation lands exactly on that cut, where the sigma
/// integrands have poles on the contour and any returned value is noise.
pub fn reexpand_in_g<F>(
    mut eval: F,
    max_order: usize,
    radius: f64,
    points: usize,
) -> Result<Vec<Complex64>>
where
    F: FnMut(Complex64) -> Result<Complex64>,
{
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "reexpansion radius {radius}"
        )));
    }
    let pts = points.max(4 * (max_order + 1)).max(8);
    let angle = |j: usize| 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / pts as f64;
    let mut values = Vec::with_capacity(pts);
    for j in 0..pts {
        values.push(eval(Complex64::from_polar(radius, angle(j)))?);
    }
    let mut coeffs = Vec::with_capacity(max_order + 1);
    for m in 0..=max_order {
        let mut acc = CompensatedC64::default();
        for (j, &v) in values.iter().enumerate() {
            acc.add(v * Complex64::from_polar(1.0, -(m as f64) * angle(j)));
        }
        coeffs.push(acc.value() / (pts as f64 * radius.powi(m as i32)));
    }
    Ok(coeffs)
}

/// One cell of the coupling-domain scan.
#[derive(Clone, Debug)]
pub struct ScanRow {
    pub modulus: f64,
    pub gamma: f64,
    pub g: Complex64,
    /// |g| < rho cos^2(gamma), the claimed summability region.
    pub in_domain: bool,
    pub value: Complex64,
    pub converged: bool,
    pub error_estimate: f64,
    /// Quadrature reference, attempted only inside the domain.
    pub oracle: Option<Complex64>,
    pub oracle_gap: Option<f64>,
}

/// Runs the jungle sum over a (|g|, gamma) grid, tagging each cell with the
/// domain membership and the convergence verdict, optionally against the
/// quadrature oracle. Rows stream in grid order, gamma fastest.
pub fn cardioid_scan(
    cfg: &SliceConfig,
    momenta: &[u32],
    moduli: &[f64],
    gammas: &[f64],
    rho: f64,
    params: &LveParams,
    with_oracle: bool,
) -> Result<Vec<ScanRow>> {
    let mut rows = Vec::with_capacity(moduli.len() * gammas.len());
    for &modulus in moduli {
        for &gamma in gammas {
            let g = Complex64::from_polar(modulus, 2.0 * gamma);
            let point = CouplingPoint::with_rho(g, rho);
            let res = cumulant_lve(cfg, &point, momenta, params)?;
            let (mut oracle, mut oracle_gap) = (None, None);
            if with_oracle && point.in_cardioid() {
                let orc = Oracle::new(cfg.n(), point);
                let reference = if momenta.is_empty() {
                    orc.log_z()
                } else {
                    orc.cumulant(momenta)
                };
                if let Ok(v) = reference {
                    oracle = Some(v);
                    oracle_gap = Some((res.value - v).norm());
                }
            }
            rows.push(ScanRow {
                modulus,
                gamma,
                g,
                in_domain: point.in_cardioid(),
                value: res.value,
                converged: res.converged,
                error_estimate: res.error_estimate,
                oracle,
                oracle_gap,
            });
        }
    }
    Ok(rows)
}

/// The largest cardioid scale consistent with a scan: for each sampled angle,
/// the largest modulus whose cell converged is divided by cos^2(gamma), and
/// the most pessimistic angle wins. Angles at the domain's cusp are skipped.
pub fn empirical_rho(rows: &[ScanRow]) -> f64 {
    let mut per_gamma: HashMap<u64, f64> = HashMap::new();
    for row in rows {
        let cos2 = row.gamma.cos().powi(2);
        if cos2 < 1e-6 {
            continue;
        }
        let entry = per_gamma.entry(row.gamma.to_bits()).or_insert(0.0);
        if row.converged && row.modulus / cos2 > *entry {
            *entry = row.modulus / cos2;
        }
    }
    per_gamma
        .values()
        .fold(f64::INFINITY, |a, &b| a.min(b))
        .min(f64::INFINITY)
}
