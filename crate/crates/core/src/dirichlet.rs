//! Dirichlet problem Δ∞u + λa(x)u³ = h(x) in Ω, u = b on ∂Ω, solved by
//! node-wise relaxation, plus the analytic a-priori bounds λ₀ and Λ.

use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{superlevel_inball, GridDomain, WeightField};
use crate::operator::{sigma, Assembly, Kernel, OperatorError, ScalarField, Stencil};

#[derive(Debug, Error)]
pub enum DirichletError {
    #[error("cap {cap} must exceed sup|b| = {bound}")]
    InvalidCap { cap: f64, bound: f64 },
    #[error("every superlevel set of the weight is empty")]
    NoPositiveMass,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Bounds on the principal eigenvalue from the out-ball and in-ball radii.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticBounds {
    pub sigma: f64,
    /// λ₀ = (σ³ μ R_o⁴)⁻¹.
    pub lambda0: f64,
    /// Λ = 4⁴/(3³σ³μ) · inf_α 1/(α ρ_α⁴).
    pub upper: f64,
    pub mu: f64,
    pub outball_radius: f64,
    /// Minimizing α and the in-ball radius of its superlevel set.
    pub alpha: f64,
    pub rho_alpha: f64,
}

/// Candidate α values: a uniform grid plus every weight level approached
/// from below, which is where 1/(αρ_α⁴) attains its infimum.
pub fn default_alpha_grid(a: &WeightField) -> Vec<f64> {
    let mu = a.sup();
    let mut levels: Vec<f64> = a.values().iter().map(|v| v / mu).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|x, y| (*x - *y).abs() <= 1e-12);
    let stride = (levels.len() / 200).max(1);
    let mut grid: Vec<f64> = (1..=20).map(|k| k as f64 / 20.0).collect();
    grid.extend(levels.iter().step_by(stride).map(|l| l * (1.0 - 1e-12)));
    grid.push(levels[levels.len() - 1] * (1.0 - 1e-12));
    grid.retain(|&x| x > 0.0 && x <= 1.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

pub fn analytic_bounds(domain: &GridDomain, a: &WeightField, alphas: &[f64]) -> Result<AnalyticBounds, DirichletError> {
    let s = sigma();
    let s3 = s * s * s;
    let mu = a.sup();
    let ro = domain.metrics().outball_radius;
    let lambda0 = 1.0 / (s3 * mu * ro.powi(4));
    let mut best: Option<(f64, f64, f64)> = None;
    for &alpha in alphas {
        assert!(alpha > 0.0 && alpha <= 1.0, "α must lie in (0, 1]");
        let rho = superlevel_inball(domain, a, alpha);
        if rho > 0.0 {
            let v = 1.0 / (alpha * rho.powi(4));
            if best.is_none_or(|b| v < b.0) {
                best = Some((v, alpha, rho));
            }
        }
    }
    let (inf, alpha, rho_alpha) = best.ok_or(DirichletError::NoPositiveMass)?;
    let upper = 256.0 / (27.0 * s3 * mu) * inf;
    Ok(AnalyticBounds { sigma: s, lambda0, upper, mu, outball_radius: ro, alpha, rho_alpha })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AprioriInterval {
    Bounded { lo: f64, hi: f64 },
    Unbounded,
}

/// Range of a positive solution with constant boundary value δ.
pub fn apriori_interval(delta: f64, lambda: f64, bounds: &AnalyticBounds) -> AprioriInterval {
    if delta == 0.0 && lambda < bounds.lambda0 {
        return AprioriInterval::Bounded { lo: 0.0, hi: 0.0 };
    }
    if lambda < 0.0 {
        AprioriInterval::Bounded { lo: 0.0, hi: delta }
    } else if lambda == 0.0 {
        AprioriInterval::Bounded { lo: delta, hi: delta }
    } else if lambda < bounds.lambda0 {
        let hi = delta / (1.0 - (lambda / bounds.lambda0).cbrt());
        AprioriInterval::Bounded { lo: delta, hi }
    } else {
        AprioriInterval::Unbounded
    }
}

/// Data of one Dirichlet problem on a fixed domain.
#[derive(Clone, Debug, Serialize)]
pub struct ProblemParams {
    pub lambda: f64,
    pub weight: WeightField,
    /// Right-hand side on interior nodes.
    pub rhs: Vec<f64>,
    /// Values on boundary points.
    pub boundary: Vec<f64>,
}

impl ProblemParams {
    /// Zero right-hand side and constant boundary value δ.
    pub fn constant_boundary(domain: &GridDomain, lambda: f64, weight: WeightField, delta: f64) -> Self {
        Self {
            lambda,
            weight,
            rhs: vec![0.0; domain.n_interior()],
            boundary: vec![delta; domain.n_boundary()],
        }
    }

    fn validate(&self, domain: &GridDomain) -> Result<(), DirichletError> {
        let bad = |m: String| Err(DirichletError::InvalidProblem(m));
        if self.weight.values().len() != domain.n_nodes() {
            return bad(format!("weight has {} values, domain {}", self.weight.values().len(), domain.n_nodes()));
        }
        if self.rhs.len() != domain.n_interior() {
            return bad(format!("rhs has {} values, interior {}", self.rhs.len(), domain.n_interior()));
        }
        if self.boundary.len() != domain.n_boundary() {
            return bad(format!("boundary has {} values, domain {}", self.boundary.len(), domain.n_boundary()));
        }
        if !self.lambda.is_finite() || self.boundary.iter().chain(&self.rhs).any(|v| !v.is_finite()) {
            return bad("non-finite data".into());
        }
        Ok(())
    }

    fn sup_abs_boundary(&self) -> f64 {
        self.boundary.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Iteration used by [`solve_dirichlet`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Continuation along the solution branch, parametrized by the value at
    /// a pinned interior node, from λ = 0 (or a supplied solution) up to
    /// the requested λ; Newton's method on the bordered system at each
    /// step. Every branch point solves the problem for its own λ, and
    /// solutions increase with λ, so a branch whose values pass the cap
    /// below the requested λ proves that no solution stays under the cap.
    #[default]
    Continuation,
    /// Linearly implicit pseudo-time stepping on u_t = Δ∞u + λau³ − h,
    /// which becomes Newton's method as the step grows. Steps are accepted
    /// only while the iterate stays an approximate sub-solution (or
    /// super-solution, matching the start), so iterates move monotonically.
    Implicit,
    /// Node-wise Gauss–Seidel relaxation over a fixed coloring.
    Relaxation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Residual tolerance; default 1e-8·(sup|b|³ + sup|h|), which keeps
    /// the solve invariant under u ↦ cu, b ↦ cb, h ↦ c³h.
    pub tol: Option<f64>,
    /// Iteration budget: sweeps for relaxation, linear solves for the
    /// implicit method.
    pub max_iters: usize,
    /// Divergence threshold on sup u; default 1e4·sup|b|, or 1e4 when b = 0.
    pub cap: Option<f64>,
    /// Worker threads for colored sweeps; results do not depend on it.
    pub threads: usize,
    /// Starting interior values instead of min(b).
    pub initial: Option<Vec<f64>>,
    /// λ that `initial` solves; lets continuation start from it when it
    /// does not exceed the requested λ.
    pub initial_lambda: Option<f64>,
    /// Lagged updates of the cubic term per node visit (relaxation only).
    pub inner_steps: usize,
    /// Keep the branch points passed by continuation in the report.
    pub record_branch: bool,
    pub method: Method,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iters: 100_000,
            cap: None,
            threads: 1,
            initial: None,
            initial_lambda: None,
            inner_steps: 4,
            record_branch: false,
            method: Method::Continuation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Converged,
    Diverged,
    Stalled,
}

/// Monotone direction the iterates were kept to, decided by the sign of
/// the starting residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// Start was a sub-solution; every iterate is one, so each lies below
    /// any solution above the start.
    Increasing,
    /// Start was a super-solution.
    Decreasing,
    /// Neither; steps only had to reduce the residual.
    Unordered,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub field: ScalarField,
    pub lambda: f64,
    pub method: Method,
    pub ordering: Ordering,
    pub iterations: usize,
    pub residual: f64,
    pub classification: Classification,
    pub sup_history: Vec<f64>,
    pub residual_history: Vec<f64>,
    pub tol: f64,
    pub cap: f64,
    /// Set when a non-finite value ended the run.
    pub non_finite: bool,
    /// Branch points (λ, interior values) passed by continuation below the
    /// cap, when requested; each solves the problem at its own λ.
    #[serde(skip)]
    pub branch: Vec<(f64, Vec<f64>)>,
}

/// Solve D(t) = y for the center value t, where D is the scheme value at a
/// node as a function of its center; D is continuous and strictly
/// decreasing. Safeguarded Newton inside an explicit bracket.
pub fn invert_scheme(kernel: &mut Kernel, y: f64, guess: f64) -> f64 {
    let lmax = kernel.max_length();
    let l4 = lmax.powi(4);
    let (vmin, vmax) = (kernel.min_neighbor(), kernel.max_neighbor());
    let pad = 1e-12 * (vmax.abs().max(vmin.abs()) + 1.0);
    let mut lo = vmin - (y.max(0.0) * l4 / 2.0).cbrt() * 1.01 - pad;
    let mut hi = vmax + ((-y).max(0.0) * l4 / 2.0).cbrt() * 1.01 + pad;
    while kernel.eval(lo).value < y {
        lo -= (hi - lo).max(pad);
    }
    while kernel.eval(hi).value > y {
        hi += (hi - lo).max(pad);
    }
    let mut t = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
    let mut step_old = hi - lo;
    for _ in 0..200 {
        let e = kernel.eval(t);
        let f = e.value - y;
        if f == 0.0 {
            return t;
        }
        if f > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - f / e.slope;
        let step = if e.slope < 0.0 && newton > lo && newton < hi && (2.0 * f).abs() <= (step_old * e.slope).abs() {
            newton - t
        } else {
            0.5 * (lo + hi) - t
        };
        step_old = step;
        let next = t + step;
        if next == t || hi - lo <= 4.0 * f64::EPSILON * t.abs().max(f64::MIN_POSITIVE) {
            return next.clamp(lo, hi);
        }
        t = next;
    }
    t
}

/// Pointwise residual D(u) + λ a u³ − h at interior nodes.
pub fn residual(field: &ScalarField, params: &ProblemParams, stencil: &Stencil) -> Result<Vec<f64>, DirichletError> {
    let asm = Assembly::new(field.domain(), stencil)?;
    Ok(residual_with(&asm, field.values(), params))
}

fn residual_with(asm: &Assembly, u: &[f64], params: &ProblemParams) -> Vec<f64> {
    let mut kernel = Kernel::default();
    let a = params.weight.values();
    (0..asm.n_nodes())
        .map(|k| {
            asm.load(&mut kernel, k, u);
            let t = u[k];
            kernel.eval(t).value + params.lambda * a[k] * t * t * t - params.rhs[k]
        })
        .collect()
}

/// Relax one node: lagged updates t ← D⁻¹(h − λ a t³).
fn relax(kernel: &mut Kernel, t0: f64, lambda_a: f64, rhs: f64, steps: usize) -> f64 {
    let mut t = t0;
    for _ in 0..steps.max(1) {
        let next = invert_scheme(kernel, rhs - lambda_a * t * t * t, t);
        let done = (next - t).abs() <= 1e-15 * next.abs();
        t = next;
        if done || lambda_a == 0.0 {
            break;
        }
    }
    t
}

/// Node colors such that no two nodes of one color are stencil neighbors.
fn colors(domain: &GridDomain, stencil: &Stencil) -> Vec<Vec<usize>> {
    let c = stencil.reach() as i64 + 1;
    let mut out = vec![Vec::new(); (c * c) as usize];
    for k in 0..domain.n_interior() {
        let p = domain.interior_index(k);
        out[(p[0].rem_euclid(c) * c + p[1].rem_euclid(c)) as usize].push(k);
    }
    out.retain(|v| !v.is_empty());
    out
}

pub fn solve_dirichlet(
    domain: &Arc<GridDomain>,
    params: &ProblemParams,
    stencil: &Stencil,
    opts: &SolveOptions,
) -> Result<SolveReport, DirichletError> {
    params.validate(domain)?;
    let bound = params.sup_abs_boundary();
    let cap = opts.cap.unwrap_or(if bound > 0.0 { 1e4 * bound } else { 1e4 });
    if !(cap > bound) {
        return Err(DirichletError::InvalidCap { cap, bound });
    }
    let data = bound.powi(3) + params.rhs.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let tol = opts.tol.unwrap_or(if data > 0.0 { 1e-8 * data } else { 1e-8 });
    let asm = Assembly::new(domain, stencil)?;
    let n = domain.n_interior();
    let bmin = params.boundary.iter().copied().fold(f64::INFINITY, f64::min);
    let mut u: Vec<f64> = match &opts.initial {
        Some(init) if init.len() == n => init.clone(),
        Some(init) => {
            return Err(DirichletError::InvalidProblem(format!(
                "initial guess has {} values, interior {n}",
                init.len()
            )))
        }
        None => vec![if bmin.is_finite() { bmin } else { 0.0 }; n],
    };
    u.extend_from_slice(&params.boundary);

    let mut run = Run {
        asm: &asm,
        params,
        n,
        tol,
        cap,
        sup_history: Vec::new(),
        residual_history: Vec::new(),
        iterations: 0,
        non_finite: false,
        branch: opts.record_branch.then(Vec::new),
    };
    let f0 = residual_with(&asm, &u, params);
    let ordering = if f0.iter().all(|&f| f >= -tol) {
        Ordering::Increasing
    } else if f0.iter().all(|&f| f <= tol) {
        Ordering::Decreasing
    } else {
        Ordering::Unordered
    };
    let (classification, residual) = match opts.method {
        Method::Continuation if params.lambda > 0.0 => {
            let warm = opts.initial_lambda.filter(|&l| opts.initial.is_some() && l <= params.lambda);
            match run.continuation(&mut u, domain, warm, opts.max_iters) {
                Some(out) => out,
                None => {
                    // Fall back to pseudo-time stepping from the plain start.
                    u[..n].fill(if bmin.is_finite() { bmin } else { 0.0 });
                    let f0 = residual_with(&asm, &u, params);
                    run.implicit(&mut u, f0, ordering, opts.max_iters)
                }
            }
        }
        Method::Continuation | Method::Implicit => run.implicit(&mut u, f0, ordering, opts.max_iters),
        Method::Relaxation => run.relaxation(&mut u, domain, stencil, opts),
    };
    let Run { iterations, sup_history, residual_history, non_finite, tol, branch, .. } = run;
    let field = ScalarField::new(domain.clone(), u)?;
    Ok(SolveReport {
        field,
        lambda: params.lambda,
        method: opts.method,
        ordering,
        iterations,
        residual,
        classification,
        sup_history,
        residual_history,
        tol,
        cap,
        non_finite,
        branch: branch.unwrap_or_default(),
    })
}

/// A point on the solution branch with boundary data b ≡ `level` and the
/// value at the pinned node (the interior node farthest from the boundary)
/// fixed to `peak`; the unknowns are the interior values and λ. Newton's
/// method on the bordered system starts from `guess` (interior values) and
/// `lambda`. Returns `None` when Newton fails.
pub fn branch_point(
    domain: &Arc<GridDomain>,
    weight: &WeightField,
    stencil: &Stencil,
    level: f64,
    peak: f64,
    guess: &[f64],
    lambda: f64,
) -> Result<Option<(f64, ScalarField)>, DirichletError> {
    let params = ProblemParams::constant_boundary(domain, lambda, weight.clone(), level);
    params.validate(domain)?;
    let n = domain.n_interior();
    if guess.len() != n {
        return Err(DirichletError::InvalidProblem(format!("guess has {} values, interior {n}", guess.len())));
    }
    let asm = Assembly::new(domain, stencil)?;
    let mut u = guess.to_vec();
    u.extend_from_slice(&params.boundary);
    let tol = 1e-10 * (level.abs().powi(3) + lambda.abs() * weight.sup() * peak.abs().powi(3)).max(f64::MIN_POSITIVE);
    let mut run = Run {
        asm: &asm,
        params: &params,
        n,
        tol,
        cap: f64::INFINITY,
        sup_history: Vec::new(),
        residual_history: Vec::new(),
        iterations: 0,
        non_finite: false,
        branch: None,
    };
    let mut lam = lambda;
    if !run.branch_newton(&mut u, &mut lam, pinned_node(domain), peak, tol) {
        return Ok(None);
    }
    Ok(Some((lam, ScalarField::new(domain.clone(), u)?)))
}

struct Run<'a> {
    asm: &'a Assembly,
    params: &'a ProblemParams,
    n: usize,
    tol: f64,
    cap: f64,
    sup_history: Vec<f64>,
    residual_history: Vec<f64>,
    iterations: usize,
    non_finite: bool,
    branch: Option<Vec<(f64, Vec<f64>)>>,
}

impl Run<'_> {
    fn fork(&self) -> Self {
        Run {
            asm: self.asm,
            params: self.params,
            n: self.n,
            tol: self.tol,
            cap: f64::INFINITY,
            sup_history: Vec::new(),
            residual_history: Vec::new(),
            iterations: 0,
            non_finite: false,
            branch: None,
        }
    }

    fn implicit(&mut self, u: &mut [f64], mut f: Vec<f64>, ordering: Ordering, max_iters: usize) -> (Classification, f64) {
        let (n, tol) = (self.n, self.tol);
        let a = self.params.weight.values();
        let lambda = self.params.lambda;
        let mut r = max_abs(&f);
        // The cubic term makes the system matrix lose its diagonal sign once
        // 1/dt < 3λau², so the first step stays below that.
        let stiff = (0..n).fold(0.0_f64, |m, k| m.max(3.0 * lambda * a[k] * u[k] * u[k]));
        let mut dt = if stiff > 0.0 { 0.5 / stiff } else { 1.0 };
        let mut rejections = 0;
        let mut trial = u.to_vec();
        while self.iterations < max_iters {
            if r <= tol {
                return (Classification::Converged, r);
            }
            self.iterations += 1;
            let step = self.implicit_step(u, &f, dt);
            let Some(du) = step else {
                dt *= 0.25;
                rejections += 1;
                if rejections > 60 {
                    return (Classification::Stalled, r);
                }
                continue;
            };
            for k in 0..n {
                trial[k] = u[k] + du[k];
                trial[k] = match ordering {
                    Ordering::Increasing => trial[k].max(u[k]),
                    Ordering::Decreasing => trial[k].min(u[k]),
                    Ordering::Unordered => trial[k],
                };
            }
            if trial[..n].iter().any(|v| !v.is_finite()) {
                dt *= 0.25;
                rejections += 1;
                continue;
            }
            let ft = residual_with(self.asm, &trial, self.params);
            let rt = max_abs(&ft);
            let ok = rt.is_finite()
                && (rt <= tol
                    || match ordering {
                        Ordering::Increasing => ft.iter().all(|&x| x >= -tol),
                        Ordering::Decreasing => ft.iter().all(|&x| x <= tol),
                        Ordering::Unordered => rt < r,
                    });
            if !ok {
                dt *= 0.25;
                rejections += 1;
                if rejections > 60 {
                    return (Classification::Stalled, r);
                }
                continue;
            }
            rejections = 0;
            u[..n].copy_from_slice(&trial[..n]);
            f = ft;
            r = rt;
            dt *= 4.0;
            let sup = sup_of(u);
            self.sup_history.push(sup);
            self.residual_history.push(r);
            if sup > self.cap {
                return (Classification::Diverged, r);
            }
        }
        let class = if r <= tol { Classification::Converged } else { Classification::Stalled };
        (class, r)
    }

    /// Solve (I/dt − J) du = f with J the Jacobian of the residual.
    fn implicit_step(&self, u: &[f64], f: &[f64], dt: f64) -> Option<Vec<f64>> {
        linear_solve(self.asm, self.params, self.params.lambda, u, f, 1.0 / dt, None)
    }

    /// Newton's method at fixed λ with a backtracking line search on the
    /// squared residual norm.
    fn newton(&mut self, u: &mut [f64], f: &mut Vec<f64>, tol: f64, max_steps: usize) -> bool {
        let n = self.n;
        let mut r = max_abs(f);
        let mut merit = sum_sq(f);
        let mut trial = u.to_vec();
        for _ in 0..max_steps {
            if r <= tol {
                return true;
            }
            self.iterations += 1;
            let Some(du) = linear_solve(self.asm, self.params, self.params.lambda, u, f, 0.0, None) else {
                return false;
            };
            let mut t = 1.0;
            loop {
                for k in 0..n {
                    trial[k] = u[k] + t * du[k];
                }
                let ft = residual_with(self.asm, &trial, self.params);
                let mt = sum_sq(&ft);
                if mt.is_finite() && mt < (1.0 - 1e-4 * t) * merit {
                    u[..n].copy_from_slice(&trial[..n]);
                    *f = ft;
                    merit = mt;
                    r = max_abs(f);
                    break;
                }
                t *= 0.5;
                if t < 1e-6 {
                    return false;
                }
            }
        }
        r <= tol
    }

    /// Bordered Newton for (u, λ) with u pinned to `m` at node `pin`.
    fn branch_newton(&mut self, u: &mut [f64], lambda: &mut f64, pin: usize, m: f64, tol: f64) -> bool {
        let n = self.n;
        let mut params = self.params.clone();
        for _ in 0..30 {
            params.lambda = *lambda;
            let f = residual_with(self.asm, u, &params);
            let gap = u[pin] - m;
            if max_abs(&f) <= tol && gap.abs() <= 1e-14 * m.abs().max(1.0) {
                return true;
            }
            self.iterations += 1;
            let Some(d) = linear_solve(self.asm, &params, *lambda, u, &f, 0.0, Some((pin, gap))) else {
                return false;
            };
            // Damp steps that would move λ or the field by more than half.
            let scale = d[..n].iter().zip(&u[..n]).fold(0.0_f64, |s, (x, y)| s.max(x.abs() / (y.abs() + 1e-300)));
            let t = if scale > 0.5 { 0.5 / scale } else { 1.0 };
            for k in 0..n {
                u[k] += t * d[k];
            }
            *lambda += t * d[n];
            if !lambda.is_finite() || u[..n].iter().any(|v| !v.is_finite()) {
                return false;
            }
        }
        false
    }

    /// March along the branch until λ is reached or the pinned value passes
    /// the cap. `None` means the branch could not be started.
    fn continuation(&mut self, u: &mut Vec<f64>, domain: &GridDomain, warm: Option<f64>, max_iters: usize) -> Option<(Classification, f64)> {
        let n = self.n;
        let target = self.params.lambda;
        let pin = pinned_node(domain);
        let base = base_solution(self, u, pin, warm)?;
        let base_pin = base.1[pin];
        let (mut lam, mut cur) = (base.0, base.2);
        let mut excess = cur[pin] - base_pin;
        let mut gamma: f64 = 1.5;
        let scale_tol = |lam: f64, u: &[f64], tol: f64, mu: f64| tol.max(1e-11 * lam * mu * sup_of(&u[..n]).abs().powi(3));
        let mu = self.params.weight.sup();
        while self.iterations < max_iters {
            self.sup_history.push(sup_of(&cur[..n]));
            if lam >= target {
                break;
            }
            if cur[pin] > self.cap {
                let r = max_abs(&residual_with(self.asm, &cur, &with_lambda(self.params, lam)));
                self.residual_history.push(r);
                *u = cur;
                return Some((Classification::Diverged, r));
            }
            let next_excess = excess * gamma;
            let m = base_pin + next_excess;
            let ratio = next_excess / excess;
            let mut trial = cur.clone();
            for k in 0..n {
                trial[k] = base.1[k] + (cur[k] - base.1[k]) * ratio;
            }
            let mut trial_lam = lam;
            let step_tol = scale_tol(lam, &trial, self.tol, mu);
            if self.branch_newton(&mut trial, &mut trial_lam, pin, m, step_tol) && trial_lam > lam {
                if trial_lam >= target {
                    // Interpolate between the bracketing branch points and
                    // finish with Newton at the requested λ.
                    let th = (target - lam) / (trial_lam - lam);
                    let mut guess: Vec<f64> = cur.iter().zip(&trial).map(|(a, b)| a + th * (b - a)).collect();
                    let mut f = residual_with(self.asm, &guess, self.params);
                    let tol = scale_tol(target, &guess, self.tol, mu);
                    let ok = self.newton(&mut guess, &mut f, tol, 50);
                    let r = max_abs(&f);
                    self.tol = tol;
                    self.sup_history.push(sup_of(&guess[..n]));
                    self.residual_history.push(r);
                    *u = guess;
                    let class = if ok { Classification::Converged } else { Classification::Stalled };
                    return Some((class, r));
                }
                lam = trial_lam;
                cur = trial;
                if let Some(b) = self.branch.as_mut() {
                    if cur[pin] <= self.cap {
                        b.push((lam, cur[..n].to_vec()));
                    }
                }
                excess = next_excess;
                self.residual_history.push(step_tol);
                gamma = (gamma * gamma).min(4.0);
            } else {
                gamma = gamma.sqrt();
                if gamma - 1.0 < 1e-6 {
                    *u = cur;
                    let r = max_abs(&residual_with(self.asm, u, self.params));
                    return Some((Classification::Stalled, r));
                }
            }
        }
        // Reached when a warm start already sits at the requested λ.
        let mut f = residual_with(self.asm, &cur, self.params);
        let tol = scale_tol(target, &cur, self.tol, mu);
        let ok = self.newton(&mut cur, &mut f, tol, 50);
        self.tol = tol;
        *u = cur;
        let r = max_abs(&f);
        Some((if ok { Classification::Converged } else { Classification::Stalled }, r))
    }

    fn relaxation(&mut self, u: &mut [f64], domain: &GridDomain, stencil: &Stencil, opts: &SolveOptions) -> (Classification, f64) {
        let n = self.n;
        let params = self.params;
        let order = colors(domain, stencil);
        let a = params.weight.values();
        let pool = (opts.threads > 1)
            .then(|| rayon::ThreadPoolBuilder::new().num_threads(opts.threads).build().ok())
            .flatten();
        let mut r = residual_max(self.asm, u, params);
        while r > self.tol && self.iterations < opts.max_iters {
            let before = u[..n].to_vec();
            for nodes in &order {
                let update = |k: &usize| {
                    let mut kernel = Kernel::default();
                    self.asm.load(&mut kernel, *k, u);
                    relax(&mut kernel, u[*k], params.lambda * a[*k], params.rhs[*k], opts.inner_steps)
                };
                let new: Vec<f64> = match &pool {
                    Some(p) => p.install(|| nodes.par_iter().map(update).collect()),
                    None => nodes.iter().map(update).collect(),
                };
                for (&k, v) in nodes.iter().zip(new) {
                    u[k] = v;
                }
            }
            self.iterations += 1;
            if u[..n].iter().any(|v| !v.is_finite()) {
                self.non_finite = true;
                u[..n].copy_from_slice(&before);
                return (Classification::Diverged, r);
            }
            let sup = sup_of(u);
            self.sup_history.push(sup);
            if sup > self.cap {
                return (Classification::Diverged, r);
            }
            r = residual_max(self.asm, u, params);
            self.residual_history.push(r);
        }
        let class = if r <= self.tol { Classification::Converged } else { Classification::Stalled };
        (class, r)
    }
}

fn with_lambda(params: &ProblemParams, lambda: f64) -> ProblemParams {
    ProblemParams { lambda, ..params.clone() }
}

/// Interior node farthest from the boundary.
pub fn pinned_node(domain: &GridDomain) -> usize {
    let d = domain.boundary_distance();
    (0..d.len()).fold(0, |best, k| if d[k] > d[best] { k } else { best })
}

/// λ = 0 solution of the run's data, and a first branch point (λ, u) to
/// continue from.
fn base_solution(run: &mut Run, u: &[f64], pin: usize, warm: Option<f64>) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let n = run.n;
    let params = run.params;
    let b0 = params.boundary.first().copied().unwrap_or(0.0);
    let flat = params.boundary.iter().all(|&b| b == b0) && params.rhs.iter().all(|&h| h == 0.0);
    let mut base = u.to_vec();
    if flat {
        base[..n].fill(b0);
    } else {
        base[..n].fill(params.boundary.iter().copied().fold(f64::INFINITY, f64::min));
        let zero = with_lambda(params, 0.0);
        let mut sub = Run { params: &zero, ..run.fork() };
        let f = residual_with(run.asm, &base, &zero);
        let (class, _) = sub.implicit(&mut base, f, Ordering::Unordered, 2000);
        run.iterations += sub.iterations;
        if class != Classification::Converged {
            return None;
        }
    }
    if let Some(l) = warm {
        let mut start = u.to_vec();
        let mut f = residual_with(run.asm, &start, &with_lambda(params, l));
        let lp = with_lambda(params, l);
        let mut sub = Run { params: &lp, ..run.fork() };
        let tol = run.tol.max(1e-11 * l * params.weight.sup() * sup_of(&start[..n]).powi(3));
        let ok = sub.newton(&mut start, &mut f, tol, 20);
        run.iterations += sub.iterations;
        if ok && (0..n).all(|k| start[k] > base[k]) {
            return Some((l, base, start));
        }
    }
    if !flat || b0 <= 0.0 {
        return None;
    }
    // Near λ = 0 the branch is b0 + εw with D(w) = −a, w = 0 on the
    // boundary, and λ ≈ (ε/b0)³: the field moves like λ^{1/3}, so the
    // first point is placed from w rather than by Newton from the flat
    // start, where the scheme's Jacobian vanishes.
    let torsion = ProblemParams {
        lambda: 0.0,
        weight: params.weight.clone(),
        rhs: params.weight.values()[..n].iter().map(|a| -a).collect(),
        boundary: vec![0.0; params.boundary.len()],
    };
    let mut w = vec![0.0; u.len()];
    let f = residual_with(run.asm, &w, &torsion);
    let mut sub = Run { params: &torsion, tol: 1e-10, ..run.fork() };
    let (class, _) = sub.implicit(&mut w, f, Ordering::Increasing, 5000);
    run.iterations += sub.iterations;
    if class != Classification::Converged {
        return None;
    }
    let eps = 0.02 * b0 / w[pin];
    let mut start: Vec<f64> = base.iter().zip(&w).map(|(b, w)| b + eps * w).collect();
    let mut lam = (eps / b0).powi(3);
    let m = start[pin];
    let tol = run.tol;
    if !run.branch_newton(&mut start, &mut lam, pin, m, tol) {
        return None;
    }
    Some((lam, base, start))
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Solve (shift·I − J) x = f, with J the Jacobian of the residual in the
/// interior values. With a border (pin, gap) the unknowns gain λ and the
/// system gains the row −x_pin = gap, for Newton on the pinned branch.
fn linear_solve(
    asm: &Assembly,
    params: &ProblemParams,
    lambda: f64,
    u: &[f64],
    f: &[f64],
    shift: f64,
    border: Option<(usize, f64)>,
) -> Option<Vec<f64>> {
    let n = asm.n_nodes();
    let a = params.weight.values();
    let mut kernel = Kernel::default();
    let mut partials = [(0usize, 0.0); 4];
    let mut triplets = Vec::with_capacity(7 * n + 1);
    for k in 0..n {
        asm.load(&mut kernel, k, u);
        let (e, count) = kernel.eval_partials(u[k], &mut partials);
        let diag = shift - e.slope - 3.0 * lambda * a[k] * u[k] * u[k];
        triplets.push(Triplet::new(k, k, diag));
        let nb = asm.neighbors(k);
        for &(slot, d) in &partials[..count] {
            let t = nb[slot];
            if t < n && d != 0.0 {
                triplets.push(Triplet::new(k, t, -d));
            }
        }
        if border.is_some() {
            triplets.push(Triplet::new(k, n, -a[k] * u[k].powi(3)));
        }
    }
    let size = n + border.is_some() as usize;
    let mut rhs = Col::<f64>::from_fn(size, |k| if k < n { f[k] } else { 0.0 });
    if let Some((pin, gap)) = border {
        triplets.push(Triplet::new(n, pin, -1.0));
        rhs[n] = gap;
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(size, size, &triplets).ok()?;
    let lu = mat.sp_lu().ok()?;
    lu.solve_in_place(rhs.as_mat_mut());
    let x: Vec<f64> = rhs.iter().copied().collect();
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn sup_of(u: &[f64]) -> f64 {
    u.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn residual_max(asm: &Assembly, u: &[f64], params: &ProblemParams) -> f64 {
    max_abs(&residual_with(asm, u, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, DomainSpec};

    fn disk(h: f64) -> Arc<GridDomain> {
        build_domain(&DomainSpec::disk(1.0, h)).unwrap()
    }

    #[test]
    fn unit_disk_bounds() {
        let d = disk(1.0 / 32.0);
        let a = WeightField::constant(&d, 1.0).unwrap();
        let b = analytic_bounds(&d, &a, &default_alpha_grid(&a)).unwrap();
        assert!((b.lambda0 - 64.0 / 81.0).abs() < 1e-9);
        assert!((b.upper - 16384.0 / 2187.0).abs() < 1e-9, "{b:?}");
        let a2 = WeightField::constant(&d, 2.0).unwrap();
        let b2 = analytic_bounds(&d, &a2, &default_alpha_grid(&a2)).unwrap();
        assert!((b2.lambda0 - b.lambda0 / 2.0).abs() < 1e-12);
        assert!((b2.upper - b.upper / 2.0).abs() < 1e-12);
    }

    #[test]
    fn intervals() {
        let b = AnalyticBounds {
            sigma: sigma(),
            lambda0: 0.8,
            upper: 7.0,
            mu: 1.0,
            outball_radius: 1.0,
            alpha: 1.0,
            rho_alpha: 1.0,
        };
        assert_eq!(apriori_interval(1.0, 0.1, &b), AprioriInterval::Bounded { lo: 1.0, hi: 2.0 });
        assert_eq!(apriori_interval(1.0, 0.0, &b), AprioriInterval::Bounded { lo: 1.0, hi: 1.0 });
        assert_eq!(apriori_interval(1.0, -3.0, &b), AprioriInterval::Bounded { lo: 0.0, hi: 1.0 });
        assert_eq!(apriori_interval(0.0, 0.5, &b), AprioriInterval::Bounded { lo: 0.0, hi: 0.0 });
        assert_eq!(apriori_interval(1.0, 0.8, &b), AprioriInterval::Unbounded);
    }

    #[test]
    fn invert_recovers_center() {
        let mut k = Kernel::default();
        k.load([(1.0, 0.1), (0.2, 0.14), (0.5, 0.1), (0.9, 0.22), (-0.3, 0.07), (0.4, 0.1)].into_iter());
        for t in [-1.0, 0.1, 0.45, 2.0, 40.0] {
            let y = k.eval(t).value;
            let back = invert_scheme(&mut k, y, 0.0);
            assert!((back - t).abs() < 1e-12 * (1.0 + t.abs()), "{t} -> {back}");
        }
    }

    #[test]
    fn lambda_zero_gives_constant() {
        let d = disk(1.0 / 8.0);
        let a = WeightField::constant(&d, 1.0).unwrap();
        let p = ProblemParams::constant_boundary(&d, 0.0, a, 1.0);
        let r = solve_dirichlet(&d, &p, &Stencil::default(), &SolveOptions::default()).unwrap();
        assert_eq!(r.classification, Classification::Converged);
        assert!(r.field.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn invalid_cap() {
        let d = disk(0.25);
        let a = WeightField::constant(&d, 1.0).unwrap();
        let p = ProblemParams::constant_boundary(&d, 0.1, a, 2.0);
        let opts = SolveOptions { cap: Some(1.0), ..Default::default() };
        assert!(matches!(
            solve_dirichlet(&d, &p, &Stencil::default(), &opts),
            Err(DirichletError::InvalidCap { .. })
        ));
    }

    #[test]
    fn colors_are_independent_sets() {
        let d = disk(0.1);
        let s = Stencil::default();
        let asm = Assembly::new(&d, &s).unwrap();
        for group in colors(&d, &s) {
            let set: std::collections::HashSet<usize> = group.iter().copied().collect();
            for &k in &group {
                assert!(asm.neighbors(k).iter().all(|t| !set.contains(t)));
            }
        }
    }
}
