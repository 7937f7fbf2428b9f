//! Forests, spanning trees, two-level jungles, and the interpolation
//! machinery of the forest formula.
//!
//! The expansion replaces a Gaussian integral over n coupled replicas by a sum
//! over forests on n labeled vertices. Each forest edge carries a weakening
//! parameter w in [0, 1], and the interpolated covariance between two vertices
//! is the minimum w along the unique forest path connecting them (one on the
//! diagonal, zero across components). That matrix stays positive semidefinite
//! for every w, which is the entire reason the formula produces convergent
//! bounds. A two-level jungle is a forest whose edges are split into a first
//! (bosonic) and second (fermionic) level; the first level's components are
//! the blocks, and the second level connects blocks. Connected objects, the
//! ones that survive in log Z, are spanning trees with a two-coloring.
//!
//! Integrands built from path minima are only piecewise smooth on the w cube,
//! so the integrator here splits the cube into ordering sectors, straightens
//! each simplex with a Duffy map, and applies a tensor Gauss-Legendre rule,
//! recovering spectral accuracy sector by sector.

use itertools::Itertools;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quad::gauss_legendre_01;

/// A forest on n labeled vertices; edges stored as (low, high) pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Forest {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Forest {
    pub fn new(n: usize, mut edges: Vec<(usize, usize)>) -> Self {
        for e in &mut edges {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        Forest { n, edges }
    }

    /// Connected components as sorted vertex lists, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut Vec<usize>, v: usize) -> usize {
            if parent[v] != v {
                let r = find(parent, parent[v]);
                parent[v] = r;
            }
            parent[v]
        }
        for &(a, b) in &self.edges {
            let ra = find(&mut parent, a);
            let rb = find(&mut parent, b);
            if ra != rb {
                parent[ra] = rb;
            }
        }
        let mut comps: Vec<Vec<usize>> = Vec::new();
        let roots: Vec<usize> = (0..self.n).map(|v| find(&mut parent, v)).collect();
        let mut root_index: Vec<Option<usize>> = vec![None; self.n];
        for (v, &r) in roots.iter().enumerate() {
            match root_index[r] {
                Some(i) => comps[i].push(v),
                None => {
                    root_index[r] = Some(comps.len());
                    comps.push(vec![v]);
                }
            }
        }
        comps
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == v || b == v)
            .count()
    }

    /// Minimum of w over the unique path from a to b; None if disconnected,
    /// +infinity conceptually for a == b (returned as 1.0, the diagonal value).
    /// `w` is indexed like `self.edges`.
    pub fn path_min(&self, w: &[f64], a: usize, b: usize) -> Option<f64> {
        debug_assert_eq!(w.len(), self.edges.len());
        if a == b {
            return Some(1.0);
        }
        // depth-first search tracking the running minimum
        let mut stack = vec![(a, usize::MAX, f64::INFINITY)];
        while let Some((v, from_edge, cur)) = stack.pop() {
            if v == b {
                return Some(cur);
            }
            for (i, &(x, y)) in self.edges.iter().enumerate() {
                if i == from_edge {
                    continue;
                }
                let next = if x == v {
                    y
                } else if y == v {
                    x
                } else {
                    continue;
                };
                stack.push((next, i, cur.min(w[i])));
            }
        }
        None
    }
}

/// Cap on the vertex count for exhaustive forest enumeration.
pub const MAX_FOREST_N: usize = 7;

/// All forests on n labeled vertices (including the empty one).
pub fn enumerate_forests(n: usize) -> Result<Vec<Forest>> {
    if n == 0 || n > MAX_FOREST_N {
        return Err(Error::CapExceeded {
            what: "forest vertices",
            got: n,
            cap: MAX_FOREST_N,
        });
    }
    let all_edges: Vec<(usize, usize)> = (0..n).array_combinations().map(|[a, b]| (a, b)).collect();
    let mut out = Vec::new();
    // backtracking over the edge list with a union-find cycle test
    fn recurse(
        n: usize,
        all: &[(usize, usize)],
        next: usize,
        chosen: &mut Vec<(usize, usize)>,
        parent: &mut Vec<usize>,
        out: &mut Vec<Forest>,
    ) {
        if next == all.len() {
            out.push(Forest::new(n, chosen.clone()));
            return;
        }
        recurse(n, all, next + 1, chosen, parent, out);
        let (a, b) = all[next];
        let find = |parent: &Vec<usize>, mut v: usize| {
            while parent[v] != v {
                v = parent[v];
            }
            v
        };
        let ra = find(parent, a);
        let rb = find(parent, b);
        if ra != rb {
            let saved = parent.clone();
            parent[ra] = rb;
            chosen.push((a, b));
            recurse(n, all, next + 1, chosen, parent, out);
            chosen.pop();
            *parent = saved;
        }
    }
    let mut chosen = Vec::new();
    let mut parent: Vec<usize> = (0..n).collect();
    recurse(n, &all_edges, 0, &mut chosen, &mut parent, &mut out);
    Ok(out)
}

/// All spanning trees on n labeled vertices, decoded from Pruefer sequences.
pub fn enumerate_spanning_trees(n: usize) -> Result<Vec<Forest>> {
    if n == 0 || n > MAX_FOREST_N {
        return Err(Error::CapExceeded {
            what: "tree vertices",
            got: n,
            cap: MAX_FOREST_N,
        });
    }
    if n == 1 {
        return Ok(vec![Forest::new(1, vec![])]);
    }
    if n == 2 {
        return Ok(vec![Forest::new(2, vec![(0, 1)])]);
    }
    let len = n - 2;
    let mut seq = vec![0usize; len];
    let mut out = Vec::with_capacity(n.pow(len as u32));
    loop {
        out.push(prufer_decode(n, &seq));
        let mut i = 0;
        loop {
            if i == len {
                return Ok(out);
            }
            seq[i] += 1;
            if seq[i] < n {
                break;
            }
            seq[i] = 0;
            i += 1;
        }
    }
}

fn prufer_decode(n: usize, seq: &[usize]) -> Forest {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    let mut used = vec![false; n];
    for &s in seq {
        let leaf = (0..n).find(|&v| degree[v] == 1 && !used[v]).unwrap();
        edges.push((leaf, s));
        used[leaf] = true;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&v| !used[v] && degree[v] == 1).collect();
    edges.push((rest[0], rest[1]));
    Forest::new(n, edges)
}

/// A two-level jungle: a forest plus the level assignment of each edge.
/// `bosonic[i]` marks edge i of `forest` as first level.
#[derive(Clone, Debug)]
pub struct Jungle {
    pub forest: Forest,
    pub bosonic: Vec<bool>,
}

impl Jungle {
    pub fn bosonic_forest(&self) -> Forest {
        let edges = self
            .forest
            .edges
            .iter()
            .zip(&self.bosonic)
            .filter(|(_, &b)| b)
            .map(|(&e, _)| e)
            .collect();
        Forest::new(self.forest.n, edges)
    }

    pub fn fermionic_edges(&self) -> Vec<(usize, usize)> {
        self.forest
            .edges
            .iter()
            .zip(&self.bosonic)
            .filter(|(_, &b)| !b)
            .map(|(&e, _)| e)
            .collect()
    }

    /// Blocks of the first level, ordered by smallest vertex.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        self.bosonic_forest().components()
    }

    /// Fermionic covariance between blocks: minimum second-level w along the
    /// path in the union forest, 1 on the diagonal, 0 when disconnected. `w_f`
    /// is indexed like `fermionic_edges()`. Entries are (row, col, value) of a
    /// symmetric matrix over block indices.
    pub fn y_matrix(&self, w_f: &[f64]) -> Vec<Vec<f64>> {
        let blocks = self.blocks();
        let nb = blocks.len();
        // spread the fermionic w's onto the union forest, bosonic edges get
        // +infinity so only second-level edges participate in the minimum
        let mut w_union = vec![f64::INFINITY; self.forest.edges.len()];
        let mut fi = 0;
        for (i, &b) in self.bosonic.iter().enumerate() {
            if !b {
                w_union[i] = w_f[fi];
                fi += 1;
            }
        }
        debug_assert_eq!(fi, w_f.len());
        let mut y = vec![vec![0.0; nb]; nb];
        for (bi, block_i) in blocks.iter().enumerate() {
            y[bi][bi] = 1.0;
            for (bj, block_j) in blocks.iter().enumerate().skip(bi + 1) {
                let m = self
                    .forest
                    .path_min(&w_union, block_i[0], block_j[0])
                    .unwrap_or(0.0);
                let m = if m.is_finite() { m } else { 1.0 };
                y[bi][bj] = m;
                y[bj][bi] = m;
            }
        }
        y
    }
}

/// Cap on the vertex count for jungle enumeration.
pub const MAX_JUNGLE_N: usize = 6;

/// All connected two-level jungles on n labeled vertices: spanning trees with
/// every assignment of edge levels. These are the objects log Z sums over.
pub fn enumerate_spanning_jungles(n: usize) -> Result<Vec<Jungle>> {
    if n == 0 || n > MAX_JUNGLE_N {
        return Err(Error::CapExceeded {
            what: "jungle vertices",
            got: n,
            cap: MAX_JUNGLE_N,
        });
    }
    let trees = enumerate_spanning_trees(n)?;
    let mut out = Vec::new();
    for tree in trees {
        let k = tree.edges.len();
        for mask in 0..(1u32 << k) {
            let bosonic = (0..k).map(|i| mask & (1 << i) != 0).collect();
            out.push(Jungle {
                forest: tree.clone(),
                bosonic,
            });
        }
    }
    Ok(out)
}

/// Integral of f over [0, 1]^k for integrands that are smooth within each
/// ordering sector of the coordinates (path minima have exactly this shape).
/// Sums over all k! sectors, each straightened by the Duffy substitution
/// w_{pi(i)} = prod_{r >= i} t_r with Jacobian prod t_r^{r-1}.
pub fn integrate_by_sectors<F>(k: usize, nodes: usize, mut f: F) -> Complex64
where
    F: FnMut(&[f64]) -> Complex64,
{
    assert!(
        k <= 6,
        "sector integration is exhaustive in k!, got k = {k}"
    );
    if k == 0 {
        return f(&[]);
    }
    let (x, wt) = gauss_legendre_01(nodes);
    let mut total = Complex64::ZERO;
    let mut w = vec![0.0; k];
    for perm in (0..k).permutations(k) {
        // tensor Gauss-Legendre over t in [0,1]^k
        let mut idx = vec![0usize; k];
        loop {
            let mut weight = 1.0;
            let mut prod = 1.0;
            // w_{pi(r)} is the tail product t_r t_{r+1} .. t_{k-1}
            for r in (0..k).rev() {
                let t = x[idx[r]];
                prod *= t;
                w[perm[r]] = prod;
                weight *= wt[idx[r]] * t.powi(r as i32);
            }
            total += weight * f(&w);
            let mut c = 0;
            while c < k {
                idx[c] += 1;
                if idx[c] < nodes {
                    break;
                }
                idx[c] = 0;
                c += 1;
            }
            if c == k {
                break;
            }
        }
    }
    total
}

/// Residual of the forest interpolation formula on the test function
/// H(x) = exp(sum_{a<b} c_ab x_ab): the forest sum minus H(1, .., 1).
/// Vanishing residual is exactness of the formula.
pub fn bkar_exactness_residual<C>(n: usize, c: C, nodes: usize) -> Result<f64>
where
    C: Fn(usize, usize) -> f64,
{
    let mut total = Complex64::ZERO;
    for forest in enumerate_forests(n)? {
        let k = forest.edges.len();
        let term = integrate_by_sectors(k, nodes, |w| {
            let mut expo = 0.0;
            for a in 0..n {
                for b in a + 1..n {
                    let x = forest.path_min(w, a, b).unwrap_or(0.0);
                    expo += c(a, b) * x;
                }
            }
            let mut pref = 1.0;
            for &(a, b) in &forest.edges {
                pref *= c(a, b);
            }
            Complex64::from(pref * expo.exp())
        });
        total += term;
    }
    let mut full = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            full += c(a, b);
        }
    }
    Ok((total - Complex64::from(full.exp())).norm())
}
