//! Monotone wide-stencil discretization of Δ∞u = Σ u_i u_j u_ij.
//!
//! At a node x with stencil links (v_k, ℓ_k) the one-sided slopes are
//! s_k = (u(x + v_k) − u(x)) / ℓ_k. Each pair of links gives a local value
//!
//! Φ_ij = P_ij² · (s_i + s_j) / ((ℓ_i + ℓ_j)/2),
//! P_ij = max(|s_i − s_j|/2, ⅔·max(|s_i|, |s_j|)),
//!
//! where the second factor estimates the second derivative along the pair
//! and P_ij the gradient magnitude. The node value is
//!
//! D = ½ (max_i min_{j≠i} Φ_ij + min_i max_{j≠i} Φ_ij).
//!
//! For smooth data both extremes pick the pair closest to the gradient
//! line, where P is the central difference, so the gradient estimate is
//! second order; the ⅔ floor takes over only where the two slopes differ by
//! more than a factor of three, such as at a local extremum. Φ_ij is
//! nondecreasing in s_i and s_j (the floor is exactly what that requires),
//! and max-min of monotone continuous maps keeps that, so the scheme is
//! monotone (nondecreasing in neighbors, nonincreasing in the center),
//! continuous, odd, and positively 3-homogeneous in floating point.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GridDomain;

/// Upper bound on stencil size handled by the kernel's stack buffers.
pub const MAX_DIRS: usize = 128;

#[derive(Debug, Error, PartialEq)]
pub enum OperatorError {
    #[error("node {node} has no neighbor along axis direction {dir:?}")]
    StencilOutOfDomain { node: usize, dir: [i32; 2] },
    #[error("stencil width {stencil} exceeds the domain's link width {domain}")]
    StencilTooWide { stencil: u32, domain: u32 },
    #[error("node {0} is not an interior node")]
    NotInterior(usize),
    #[error("field has {got} values, domain has {want} nodes")]
    LengthMismatch { got: usize, want: usize },
    #[error("field value at node {0} is not finite")]
    NonFinite(usize),
}

/// Symmetric set of primitive lattice directions with |v| ≤ w, sorted by
/// angle so that direction k and k + len/2 are opposite.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stencil {
    width: u32,
    dirs: Vec<[i32; 2]>,
}

impl Stencil {
    pub fn new(width: u32) -> Self {
        assert!(width >= 1, "stencil width must be at least 1");
        let w = width as i32;
        let mut dirs = Vec::new();
        for a in -w..=w {
            for b in -w..=w {
                if (a, b) != (0, 0) && a * a + b * b <= w * w && gcd(a.unsigned_abs(), b.unsigned_abs()) == 1 {
                    dirs.push([a, b]);
                }
            }
        }
        dirs.sort_by(|p, q| angle(*p).total_cmp(&angle(*q)));
        assert!(dirs.len() <= MAX_DIRS, "stencil width {width} is too large");
        Self { width, dirs }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn directions(&self) -> &[[i32; 2]] {
        &self.dirs
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    /// Largest coordinate of any direction.
    pub fn reach(&self) -> u32 {
        self.dirs.iter().map(|d| d[0].unsigned_abs().max(d[1].unsigned_abs())).max().unwrap_or(0)
    }

    pub fn opposite(&self, k: usize) -> usize {
        (k + self.dirs.len() / 2) % self.dirs.len()
    }

    /// Largest angular gap between consecutive directions.
    pub fn angular_resolution(&self) -> f64 {
        let n = self.dirs.len();
        (0..n)
            .map(|k| {
                let gap = angle(self.dirs[(k + 1) % n]) - angle(self.dirs[k]);
                gap.rem_euclid(std::f64::consts::TAU)
            })
            .fold(0.0, f64::max)
    }

    fn is_axis(d: [i32; 2]) -> bool {
        d[0] == 0 || d[1] == 0
    }
}

impl Default for Stencil {
    fn default() -> Self {
        Self::new(3)
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 { a } else { gcd(b, a % b) }
}

fn angle(d: [i32; 2]) -> f64 {
    (d[1] as f64).atan2(d[0] as f64).rem_euclid(std::f64::consts::TAU)
}

/// Real values on every node of a domain, interior nodes first.
#[derive(Clone, Debug)]
pub struct ScalarField {
    domain: Arc<GridDomain>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(domain: Arc<GridDomain>, values: Vec<f64>) -> Result<Self, OperatorError> {
        if values.len() != domain.n_nodes() {
            return Err(OperatorError::LengthMismatch { got: values.len(), want: domain.n_nodes() });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(OperatorError::NonFinite(k));
        }
        Ok(Self { domain, values })
    }

    pub fn from_fn(domain: Arc<GridDomain>, f: impl Fn([f64; 2]) -> f64) -> Result<Self, OperatorError> {
        let values = domain.positions().into_iter().map(f).collect();
        Self::new(domain, values)
    }

    pub fn constant(domain: Arc<GridDomain>, c: f64) -> Self {
        let n = domain.n_nodes();
        Self::new(domain, vec![c; n]).expect("finite constant")
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn interior(&self) -> &[f64] {
        &self.values[..self.domain.n_interior()]
    }

    pub fn boundary(&self) -> &[f64] {
        &self.values[self.domain.n_interior()..]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, OperatorError> {
        Self::new(self.domain.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_interior(&self) -> f64 {
        self.interior().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl Serialize for ScalarField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.values.serialize(s)
    }
}

/// Links of one interior node for a given stencil, after dropping opposite
/// pairs of directions whose neighbor is missing.
pub fn node_links(domain: &GridDomain, stencil: &Stencil, node: usize) -> Result<Vec<(usize, f64)>, OperatorError> {
    if node >= domain.n_interior() {
        return Err(OperatorError::NotInterior(node));
    }
    let full = domain.stencil();
    if stencil.width() > full.width() {
        return Err(OperatorError::StencilTooWide { stencil: stencil.width(), domain: full.width() });
    }
    let links = domain.links(node);
    let lookup = |d: [i32; 2]| {
        let k = full.directions().iter().position(|e| *e == d).expect("sub-stencil direction");
        links[k]
    };
    let mut out = Vec::with_capacity(stencil.len());
    for (k, &d) in stencil.directions().iter().enumerate() {
        let here = lookup(d);
        let there = lookup(stencil.directions()[stencil.opposite(k)]);
        match (domain.field_index(here.target), domain.field_index(there.target)) {
            (Some(i), Some(_)) => out.push((i, here.length)),
            _ if Stencil::is_axis(d) => {
                return Err(OperatorError::StencilOutOfDomain { node, dir: d });
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Apply the discrete Δ∞ at an interior node.
pub fn dinf_apply(u: &ScalarField, stencil: &Stencil, node: usize) -> Result<f64, OperatorError> {
    let links = node_links(u.domain(), stencil, node)?;
    let mut kernel = Kernel::default();
    kernel.load(links.iter().map(|&(i, l)| (u.values[i], l)));
    Ok(kernel.eval(u.values[node]).value)
}

/// Discrete Δ∞ at every interior node.
pub fn dinf_field(u: &ScalarField, stencil: &Stencil) -> Result<Vec<f64>, OperatorError> {
    let asm = Assembly::new(u.domain(), stencil)?;
    let mut kernel = Kernel::default();
    Ok((0..u.domain().n_interior())
        .map(|k| {
            asm.load(&mut kernel, k, &u.values);
            kernel.eval(u.values[k]).value
        })
        .collect())
}

/// Per-node link data for a whole domain, laid out for repeated sweeps.
#[derive(Clone, Debug)]
pub struct Assembly {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    lengths: Vec<f64>,
}

impl Assembly {
    pub fn new(domain: &GridDomain, stencil: &Stencil) -> Result<Self, OperatorError> {
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        let mut lengths = Vec::new();
        for k in 0..domain.n_interior() {
            for (t, l) in node_links(domain, stencil, k)? {
                targets.push(t);
                lengths.push(l);
            }
            offsets.push(targets.len());
        }
        Ok(Self { offsets, targets, lengths })
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.targets[self.offsets[k]..self.offsets[k + 1]]
    }

    /// Fill `kernel` with node `k`'s neighbor values from `values`.
    pub fn load(&self, kernel: &mut Kernel, k: usize, values: &[f64]) {
        let r = self.offsets[k]..self.offsets[k + 1];
        kernel.load(self.targets[r.clone()].iter().zip(&self.lengths[r]).map(|(&t, &l)| (values[t], l)));
    }
}

/// Scheme value at a trial center value, with its derivative in the center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelEval {
    pub value: f64,
    pub slope: f64,
}

/// Scheme evaluation at one node with frozen neighbor values.
#[derive(Clone, Debug)]
pub struct Kernel {
    n: usize,
    vals: [f64; MAX_DIRS],
    inv: [f64; MAX_DIRS],
    lens: [f64; MAX_DIRS],
    s: [f64; MAX_DIRS],
}

impl Default for Kernel {
    fn default() -> Self {
        Self {
            n: 0,
            vals: [0.0; MAX_DIRS],
            inv: [0.0; MAX_DIRS],
            lens: [0.0; MAX_DIRS],
            s: [0.0; MAX_DIRS],
        }
    }
}

impl Kernel {
    pub fn load(&mut self, links: impl Iterator<Item = (f64, f64)>) {
        self.n = 0;
        for (v, l) in links {
            self.vals[self.n] = v;
            self.lens[self.n] = l;
            self.inv[self.n] = 1.0 / l;
            self.n += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn max_neighbor(&self) -> f64 {
        self.vals[..self.n].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_neighbor(&self) -> f64 {
        self.vals[..self.n].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_length(&self) -> f64 {
        self.lens[..self.n].iter().copied().fold(0.0, f64::max)
    }

    /// Evaluate the scheme with center value `t`.
    pub fn eval(&mut self, t: f64) -> KernelEval {
        let p = self.parts(t);
        KernelEval { value: p.value, slope: p.slope }
    }

    /// Value and slope at center `t`, plus the derivative in each neighbor
    /// slot written to `partials` (slot index, derivative). Returns the
    /// number of partials written, at most four.
    pub fn eval_partials(&mut self, t: f64, partials: &mut [(usize, f64); 4]) -> (KernelEval, usize) {
        let p = self.parts(t);
        let mut count = 0;
        for (slot, d) in p.partials {
            if let Some(e) = partials[..count].iter_mut().find(|e| e.0 == slot) {
                e.1 += d;
            } else {
                partials[count] = (slot, d);
                count += 1;
            }
        }
        (KernelEval { value: p.value, slope: p.slope }, count)
    }

    fn parts(&mut self, t: f64) -> Parts {
        let n = self.n;
        for k in 0..n {
            self.s[k] = (self.vals[k] - t) * self.inv[k];
        }
        let mut rowmin = [f64::INFINITY; MAX_DIRS];
        let mut rowmax = [f64::NEG_INFINITY; MAX_DIRS];
        let mut argmin = [(0u8, 0u8); MAX_DIRS];
        let mut argmax = [(0u8, 0u8); MAX_DIRS];
        for i in 0..n {
            let (si, li) = (self.s[i], self.lens[i]);
            for j in i + 1..n {
                let f = pair_value(si, self.s[j], 2.0 / (li + self.lens[j]));
                if f < rowmin[i] {
                    rowmin[i] = f;
                    argmin[i] = (i as u8, j as u8);
                }
                if f < rowmin[j] {
                    rowmin[j] = f;
                    argmin[j] = (i as u8, j as u8);
                }
                if f > rowmax[i] {
                    rowmax[i] = f;
                    argmax[i] = (i as u8, j as u8);
                }
                if f > rowmax[j] {
                    rowmax[j] = f;
                    argmax[j] = (i as u8, j as u8);
                }
            }
        }
        let (mut lower, mut pl) = (f64::NEG_INFINITY, (0, 0));
        let (mut upper, mut pu) = (f64::INFINITY, (0, 0));
        for i in 0..n {
            if rowmin[i] > lower {
                lower = rowmin[i];
                pl = argmin[i];
            }
            if rowmax[i] < upper {
                upper = rowmax[i];
                pu = argmax[i];
            }
        }
        let mut partials = [(0usize, 0.0); 4];
        let mut slope = 0.0;
        for (q, (i, j)) in [pl, pu].into_iter().enumerate() {
            let (i, j) = (i as usize, j as usize);
            let (di, dj) = pair_gradient(self.s[i], self.s[j], 2.0 / (self.lens[i] + self.lens[j]));
            partials[2 * q] = (i, 0.5 * di * self.inv[i]);
            partials[2 * q + 1] = (j, 0.5 * dj * self.inv[j]);
            slope -= 0.5 * (di * self.inv[i] + dj * self.inv[j]);
        }
        Parts { value: 0.5 * (lower + upper), slope, partials }
    }
}

struct Parts {
    value: f64,
    slope: f64,
    partials: [(usize, f64); 4],
}

/// Gradient estimate of a pair of slopes.
#[inline]
fn pair_gradient_magnitude(si: f64, sj: f64) -> f64 {
    (0.5 * (si - sj).abs()).max(2.0 / 3.0 * si.abs().max(sj.abs()))
}

/// Φ for slopes (si, sj) whose pair has inverse mean length `c`.
#[inline]
fn pair_value(si: f64, sj: f64, c: f64) -> f64 {
    let p = pair_gradient_magnitude(si, sj);
    p * p * (si + sj) * c
}

/// Derivatives of Φ in si and sj.
fn pair_gradient(si: f64, sj: f64, c: f64) -> (f64, f64) {
    let central = 0.5 * (si - sj).abs();
    let (ai, aj) = (si.abs(), sj.abs());
    let floor = 2.0 / 3.0 * ai.max(aj);
    let (p, pi, pj) = if central >= floor {
        let sg = if si >= sj { 0.5 } else { -0.5 };
        (central, sg, -sg)
    } else if ai >= aj {
        (floor, 2.0 / 3.0 * si.signum(), 0.0)
    } else {
        (floor, 0.0, 2.0 / 3.0 * sj.signum())
    };
    let f = (si + sj) * c;
    (2.0 * p * pi * f + p * p * c, 2.0 * p * pj * f + p * p * c)
}

/// One row of the consistency table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub spacing: f64,
    pub width: u32,
    /// Max error for u = x₁² (exact Δ∞ = 8x₁²).
    pub quadratic: f64,
    /// Max error for u = σ|x|^{4/3} (exact Δ∞ = 1).
    pub cone: f64,
    /// Max error for an affine function (exact Δ∞ = 0).
    pub affine: f64,
}

/// σ = 3^{4/3}/4, the constant with Δ∞(σ|x|^{4/3}) = 1.
pub fn sigma() -> f64 {
    3f64.powf(4.0 / 3.0) / 4.0
}

/// Max error of [`dinf_apply`] against exact values on the unit disk, over
/// nodes with 1/4 ≤ |x| ≤ 3/4, for each (h, w) pair.
pub fn scheme_consistency_report(cases: &[(f64, u32)]) -> Vec<ConsistencyRow> {
    use crate::geometry::{build_domain, DomainSpec};
    let sigma = sigma();
    cases
        .iter()
        .map(|&(h, w)| {
            let dom = build_domain(&DomainSpec::disk(1.0, h).with_stencil_width(w)).expect("unit disk");
            let stencil = Stencil::new(w);
            let err = |f: &dyn Fn([f64; 2]) -> f64, exact: &dyn Fn([f64; 2]) -> f64| {
                let u = ScalarField::from_fn(dom.clone(), f).expect("finite test function");
                let vals = dinf_field(&u, &stencil).expect("full stencil");
                (0..dom.n_interior())
                    .filter(|&k| {
                        let p = dom.position(k);
                        let r = p[0].hypot(p[1]);
                        (0.25..=0.75).contains(&r)
                    })
                    .map(|k| (vals[k] - exact(dom.position(k))).abs())
                    .fold(0.0, f64::max)
            };
            ConsistencyRow {
                spacing: h,
                width: w,
                quadratic: err(&|p| p[0] * p[0], &|p| 8.0 * p[0] * p[0]),
                cone: err(&|p| sigma * p[0].hypot(p[1]).powf(4.0 / 3.0), &|_| 1.0),
                affine: err(&|p| 0.3 * p[0] - 1.7 * p[1] + 0.2, &|_| 0.0),
            }
        })
        .collect()
}
