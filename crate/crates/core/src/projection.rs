//! Euclidean projection onto the action domains.
//!
//! The general engine is Dykstra's alternating projection over an
//! H-representation (an intersection of half-spaces `c_jᵀa <= e_j`). The
//! probability-simplex and box domains also have closed-form projections,
//! which double as exact oracles for the iterative engine.

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// One inequality `normalᵀa <= bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub bound: f64,
}

impl HalfSpace {
    pub fn new(normal: Vec<f64>, bound: f64) -> Result<Self> {
        if normal.iter().all(|&c| c == 0.0) {
            return Err(Error::validation("normal", "half-space normal must be nonzero"));
        }
        if normal.iter().any(|c| !c.is_finite()) || !bound.is_finite() {
            return Err(Error::validation("normal", "half-space must be finite"));
        }
        Ok(Self { normal, bound })
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// Signed violation `cᵀa − e`; positive means outside.
    pub fn violation(&self, a: &[f64]) -> f64 {
        dot(&self.normal, a) - self.bound
    }
}

/// Intersection of half-spaces with a feasible witness point.
#[derive(Debug, Clone)]
pub struct HPolytope {
    rows: Vec<HalfSpace>,
    witness: Vec<f64>,
}

impl HPolytope {
    pub fn new(rows: Vec<HalfSpace>, witness: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::validation("rows", "polytope needs at least one half-space"));
        }
        let dim = witness.len();
        for (j, row) in rows.iter().enumerate() {
            if row.dim() != dim {
                return Err(Error::validation(
                    format!("rows[{j}]"),
                    format!("normal has length {}, witness has {dim}", row.dim()),
                ));
            }
            let v = row.violation(&witness);
            if v > 1e-9 {
                return Err(Error::validation(
                    "witness",
                    format!("violates row {j} by {v:e}"),
                ));
            }
        }
        Ok(Self { rows, witness })
    }

    /// The probability simplex in `n` dimensions; `Σ = 1` becomes two opposing rows.
    pub fn simplex(n: usize) -> Result<Self> {
        SimplexProduct::new(vec![n])?.to_polytope()
    }

    pub fn rows(&self) -> &[HalfSpace] {
        &self.rows
    }

    pub fn witness(&self) -> &[f64] {
        &self.witness
    }

    pub fn dim(&self) -> usize {
        self.witness.len()
    }

    pub fn max_violation(&self, a: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| r.violation(a))
            .fold(0.0, f64::max)
    }
}

/// Product of probability simplices, one per block (the region action domain).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplexProduct {
    blocks: Vec<usize>,
}

impl SimplexProduct {
    pub fn new(blocks: Vec<usize>) -> Result<Self> {
        if blocks.is_empty() || blocks.contains(&0) {
            return Err(Error::validation("blocks", "every block length must be >= 1"));
        }
        Ok(Self { blocks })
    }

    /// Two equal blocks, `Δⁿ × Δⁿ`.
    pub fn pair(n: usize) -> Result<Self> {
        Self::new(vec![n, n])
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn to_polytope(&self) -> Result<HPolytope> {
        let dim = self.dim();
        let mut rows = Vec::with_capacity(dim + 2 * self.blocks.len());
        let mut witness = vec![0.0; dim];
        let mut offset = 0;
        for &len in &self.blocks {
            for k in offset..offset + len {
                let mut c = vec![0.0; dim];
                c[k] = -1.0;
                rows.push(HalfSpace::new(c, 0.0)?);
                witness[k] = 1.0 / len as f64;
            }
            let mut upper = vec![0.0; dim];
            upper[offset..offset + len].fill(1.0);
            let lower = upper.iter().map(|c| -c).collect();
            rows.push(HalfSpace::new(upper, 1.0)?);
            rows.push(HalfSpace::new(lower, -1.0)?);
            offset += len;
        }
        HPolytope::new(rows, witness)
    }

    /// Exact projection, block by block.
    pub fn project(&self, a: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(a.len());
        let mut offset = 0;
        for &len in &self.blocks {
            out.extend(project_simplex(&a[offset..offset + len]));
            offset += len;
        }
        out
    }
}

/// Axis-aligned box `lower <= a <= upper` (the adversary action domain).
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::validation("box", "bounds must be nonempty and equal length"));
        }
        for (k, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) || l > u {
                return Err(Error::validation(
                    format!("box[{k}]"),
                    format!("need finite lower <= upper, got [{l}, {u}]"),
                ));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, a: &[f64], tol: f64) -> bool {
        a.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, u))| *x >= l - tol && *x <= u + tol)
    }

    pub fn to_polytope(&self) -> Result<HPolytope> {
        let dim = self.dim();
        let mut rows = Vec::with_capacity(2 * dim);
        for k in 0..dim {
            let mut up = vec![0.0; dim];
            up[k] = 1.0;
            rows.push(HalfSpace::new(up, self.upper[k])?);
            let mut lo = vec![0.0; dim];
            lo[k] = -1.0;
            rows.push(HalfSpace::new(lo, -self.lower[k])?);
        }
        let witness = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect();
        HPolytope::new(rows, witness)
    }
}

/// Domain for the linear-objective vertex rule.
#[derive(Debug, Clone, Copy)]
pub enum VertexDomain<'a> {
    SimplexProduct(&'a SimplexProduct),
    Box(&'a BoxDomain),
}

/// Projection of `a` onto `{x : cᵀx <= e}`.
pub fn project_halfspace(a: &[f64], c: &[f64], e: f64) -> Result<Vec<f64>> {
    if a.len() != c.len() {
        return Err(Error::validation("normal", "length differs from the point"));
    }
    let norm2 = dot(c, c);
    if norm2 == 0.0 {
        return Err(Error::validation("normal", "half-space normal must be nonzero"));
    }
    let mut out = a.to_vec();
    clip_halfspace(&mut out, c, e, norm2);
    Ok(out)
}

#[inline]
fn clip_halfspace(x: &mut [f64], c: &[f64], e: f64, norm2: f64) {
    let excess = dot(c, x) - e;
    if excess > 0.0 {
        let step = excess / norm2;
        for (xi, ci) in x.iter_mut().zip(c) {
            *xi -= step * ci;
        }
    }
}

/// Dykstra's alternating projection of `a` onto `polytope`.
///
/// A cycle visits every half-space once. Iteration stops once a full cycle
/// moves no coordinate of the iterate or of any correction term by more than
/// `tol` and the iterate satisfies every row within `tol`.
pub fn dykstra_project(
    a: &[f64],
    polytope: &HPolytope,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let dim = polytope.dim();
    if a.len() != dim {
        return Err(Error::validation(
            "point",
            format!("length {} does not match polytope dimension {dim}", a.len()),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::validation("tol", "tolerance must be positive"));
    }
    let rows = polytope.rows();
    let norms: Vec<f64> = rows.iter().map(|r| dot(&r.normal, &r.normal)).collect();
    // corrections[j] holds I_j from the previous cycle
    let mut corrections = vec![vec![0.0; dim]; rows.len()];
    let mut x = a.to_vec();
    let mut y = vec![0.0; dim];
    let mut prev = x.clone();
    let mut residual = f64::INFINITY;

    for _ in 0..max_iter {
        prev.copy_from_slice(&x);
        // the iterate can return to the same point while corrections still move
        let mut corr_change: f64 = 0.0;
        for (j, row) in rows.iter().enumerate() {
            let corr = &mut corrections[j];
            for k in 0..dim {
                y[k] = x[k] - corr[k];
            }
            x.copy_from_slice(&y);
            clip_halfspace(&mut x, &row.normal, row.bound, norms[j]);
            for k in 0..dim {
                let next = x[k] - y[k];
                corr_change = corr_change.max((next - corr[k]).abs());
                corr[k] = next;
            }
        }
        let change = x
            .iter()
            .zip(&prev)
            .map(|(u, v)| (u - v).abs())
            .fold(corr_change, f64::max);
        residual = change.max(polytope.max_violation(&x));
        if residual < tol {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
        last_iterate: x,
    })
}

/// Exact projection onto the probability simplex (sort and threshold).
pub fn project_simplex(a: &[f64]) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut sorted = a.to_vec();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    a.iter().map(|&v| (v - theta).max(0.0)).collect()
}

pub fn project_box(a: &[f64], domain: &BoxDomain) -> Vec<f64> {
    a.iter()
        .zip(domain.lower.iter().zip(&domain.upper))
        .map(|(&x, (&l, &u))| x.clamp(l, u))
        .collect()
}

/// A vertex maximizing `gᵀx` over the domain.
///
/// Simplex blocks pick the one-hot vertex on the block's largest coefficient
/// (lowest index on ties). Box coordinates take the upper bound when
/// `g_k > 0` and the lower bound otherwise.
pub fn lp_vertex_argmax(g: &[f64], domain: VertexDomain<'_>) -> Result<Vec<f64>> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "linear objective".into(),
        });
    }
    match domain {
        VertexDomain::SimplexProduct(sp) => {
            if g.len() != sp.dim() {
                return Err(Error::validation("objective", "length differs from domain"));
            }
            let mut out = vec![0.0; g.len()];
            let mut offset = 0;
            for &len in sp.blocks() {
                let block = &g[offset..offset + len];
                let mut best = 0;
                for k in 1..len {
                    if block[k] > block[best] {
                        best = k;
                    }
                }
                out[offset + best] = 1.0;
                offset += len;
            }
            Ok(out)
        }
        VertexDomain::Box(b) => {
            if g.len() != b.dim() {
                return Err(Error::validation("objective", "length differs from domain"));
            }
            Ok(g.iter()
                .enumerate()
                .map(|(k, &v)| if v > 0.0 { b.upper[k] } else { b.lower[k] })
                .collect())
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
