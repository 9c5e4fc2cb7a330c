//! Principal eigenvalue λ_Ω = sup S, where S is the set of λ ≥ 0 for which
//! the problem with boundary value δ > 0 has a positive solution.
//!
//! S is an interval [0, λ_Ω) independent of δ, so λ_Ω is located by
//! bisection on membership tests, starting from the analytic bracket
//! [λ₀, Λ].

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirichlet::{
    analytic_bounds, branch_point, default_alpha_grid, pinned_node, solve_dirichlet, AnalyticBounds, Classification,
    DirichletError, ProblemParams, SolveOptions, SolveReport,
};
use crate::geometry::{GeometryError, GridDomain, WeightField};
use crate::operator::{OperatorError, ScalarField, Stencil};

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("analytic bracket is inverted: λ₀ = {lo} > Λ = {hi}")]
    BracketInversion { lo: f64, hi: f64 },
    #[error("no solution at λ = {lambda} to normalize")]
    NotConverged { lambda: f64 },
    #[error("superlevel set {{u > {0}}} is empty")]
    EmptyLevelSet(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Membership {
    InS,
    NotInS,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipRecord {
    pub lambda: f64,
    pub classification: Membership,
    pub sup_u: f64,
    /// λ(1 + (δ/sup u)³): for a positive solution with peak sup u, every
    /// λ' below this value is in S as well (continuum statement).
    pub hint: f64,
    pub iterations: usize,
}

/// Classify λ by solving with boundary value δ.
pub fn membership(
    domain: &Arc<GridDomain>,
    a: &WeightField,
    lambda: f64,
    delta: f64,
    stencil: &Stencil,
    opts: &SolveOptions,
) -> Result<(MembershipRecord, SolveReport), EigenError> {
    if !(lambda >= 0.0 && delta > 0.0) {
        return Err(EigenError::InvalidInput(format!("membership needs λ ≥ 0 and δ > 0, got λ = {lambda}, δ = {delta}")));
    }
    let params = ProblemParams::constant_boundary(domain, lambda, a.clone(), delta);
    let report = solve_dirichlet(domain, &params, stencil, opts)?;
    let classification = match report.classification {
        Classification::Converged => Membership::InS,
        Classification::Diverged => Membership::NotInS,
        Classification::Stalled => Membership::Inconclusive,
    };
    let sup_u = report.field.sup();
    let record = MembershipRecord {
        lambda,
        classification,
        sup_u,
        hint: lambda * (1.0 + (delta / sup_u).powi(3)),
        iterations: report.iterations,
    };
    Ok((record, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenOptions {
    pub stencil: Stencil,
    pub solver: SolveOptions,
    /// Try the hint of the last InS record before the midpoint when it is
    /// larger; the hint is only used after its own membership test.
    pub accelerate: bool,
    /// Extract the eigenfunction at the final lower bracket end.
    pub extract: bool,
    /// Boundary levels for extraction, relative to the pinned value.
    pub levels: Vec<f64>,
    /// Extraction stops once the normalized field moves less than this.
    pub change_tol: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            stencil: Stencil::default(),
            solver: SolveOptions::default(),
            accelerate: false,
            extract: true,
            levels: (2..=8).map(|k| 10f64.powi(-k)).collect(),
            change_tol: 1e-4,
        }
    }
}

/// Normalized positive eigenfunction approximation.
#[derive(Clone, Debug, Serialize)]
pub struct Eigenfunction {
    /// sup = 1, zero on boundary points.
    pub field: ScalarField,
    /// Boundary value of the normalized solution before it was zeroed.
    pub boundary_level: f64,
    /// λ of the last branch point; increases to the discrete eigenvalue as
    /// the boundary level falls.
    pub lambda: f64,
    /// Sup-norm change of the normalized field over the last level step.
    pub last_change: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenEstimate {
    pub lambda: f64,
    pub bracket: [f64; 2],
    pub bounds: AnalyticBounds,
    pub delta: f64,
    pub tol_lambda: f64,
    /// Set when an Inconclusive test moved the upper end.
    pub soft: bool,
    pub trace: Vec<MembershipRecord>,
    pub eigenfunction: Option<Eigenfunction>,
}

/// Bisection for λ_Ω on [λ₀, Λ] until the bracket is at most `tol_lambda`
/// wide. Each test continues from the largest known solution below its λ.
pub fn estimate_principal(
    domain: &Arc<GridDomain>,
    a: &WeightField,
    delta: f64,
    tol_lambda: f64,
    opts: &EigenOptions,
) -> Result<EigenEstimate, EigenError> {
    if !(tol_lambda > 0.0) {
        return Err(EigenError::InvalidInput(format!("tol_lambda must be positive, got {tol_lambda}")));
    }
    let bounds = analytic_bounds(domain, a, &default_alpha_grid(a))?;
    if bounds.lambda0 > bounds.upper {
        return Err(EigenError::BracketInversion { lo: bounds.lambda0, hi: bounds.upper });
    }
    let (mut lo, mut hi) = (bounds.lambda0, bounds.upper);
    // Known solutions (λ, interior values): InS results and branch points
    // passed on the way. A test at λ starts from the largest one below it.
    let mut known: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut trace = Vec::new();
    let mut soft = false;
    let mut hint: Option<f64> = None;
    while hi - lo > tol_lambda {
        let mid = 0.5 * (lo + hi);
        let lambda = match hint.take() {
            Some(h) if opts.accelerate && h > mid && h < hi => h,
            _ => mid,
        };
        let mut solver = SolveOptions { record_branch: true, ..opts.solver.clone() };
        if let Some((l, u)) = known.iter().filter(|k| k.0 <= lambda).max_by(|x, y| x.0.total_cmp(&y.0)) {
            solver.initial = Some(u.clone());
            solver.initial_lambda = Some(*l);
        }
        let (record, mut report) = membership(domain, a, lambda, delta, &opts.stencil, &solver)?;
        known.append(&mut report.branch);
        match record.classification {
            Membership::InS => {
                lo = lambda;
                hint = Some(record.hint);
                known.push((lambda, report.field.interior().to_vec()));
            }
            Membership::NotInS => hi = lambda,
            Membership::Inconclusive => {
                hi = lambda;
                soft = true;
            }
        }
        // Only the best start below each future test matters.
        known.sort_by(|x, y| x.0.total_cmp(&y.0));
        known.retain(|k| k.0 <= hi);
        if let Some(i) = known.iter().rposition(|k| k.0 <= lo) {
            known.drain(..i);
        }
        trace.push(record);
    }
    let warm = known.into_iter().rfind(|k| k.0 <= lo);
    let eigenfunction = if opts.extract {
        Some(extract_eigenfunction(domain, a, lo, delta, warm.as_ref(), opts)?)
    } else {
        None
    };
    Ok(EigenEstimate {
        lambda: 0.5 * (lo + hi),
        bracket: [lo, hi],
        bounds,
        delta,
        tol_lambda,
        soft,
        trace,
        eigenfunction,
    })
}

/// Normalized eigenfunction from the solution at λ_lo ∈ S.
///
/// Solutions of the homogeneous problem scale with δ, so lowering δ at a
/// fixed λ leaves u/sup u unchanged; what drives u/sup u to an
/// eigenfunction is the ratio δ/sup u tending to 0. The solution at λ_lo is
/// normalized by its pinned value, then followed along the branch with
/// boundary level ε from `opts.levels` (pinned value fixed to 1, λ free)
/// until the normalized field settles.
pub fn extract_eigenfunction(
    domain: &Arc<GridDomain>,
    a: &WeightField,
    lambda_lo: f64,
    delta: f64,
    warm: Option<&(f64, Vec<f64>)>,
    opts: &EigenOptions,
) -> Result<Eigenfunction, EigenError> {
    let n = domain.n_interior();
    let pin = pinned_node(domain);
    let start: Vec<f64> = match warm {
        Some((l, u)) if *l == lambda_lo => u.clone(),
        _ => {
            let mut solver = opts.solver.clone();
            if let Some((l, u)) = warm.filter(|w| w.0 <= lambda_lo) {
                solver.initial = Some(u.clone());
                solver.initial_lambda = Some(*l);
            }
            let (record, report) = membership(domain, a, lambda_lo, delta, &opts.stencil, &solver)?;
            if record.classification != Membership::InS {
                return Err(EigenError::NotConverged { lambda: lambda_lo });
            }
            report.field.interior().to_vec()
        }
    };
    let scale = start[pin];
    let mut v: Vec<f64> = start.iter().map(|x| x / scale).collect();
    let mut level = delta / scale;
    let mut lambda = lambda_lo;
    let mut last_change = f64::INFINITY;
    let normalized = |v: &[f64]| {
        let s = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        v.iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    for &target in opts.levels.iter().filter(|&&l| l > 0.0) {
        if target >= level {
            continue;
        }
        // Reach the target in geometric sub-steps, splitting on failure.
        let mut reached = level;
        let mut ratio = target / level;
        while reached > target * (1.0 + 1e-12) {
            let next = (reached * ratio).max(target);
            let guess: Vec<f64> = v.iter().map(|x| next + (x - reached) * (1.0 - next) / (1.0 - reached)).collect();
            match branch_point(domain, a, &opts.stencil, next, 1.0, &guess, lambda)? {
                Some((l, field)) if field.interior().iter().all(|&x| x > 0.0) => {
                    let before = normalized(&v);
                    v = field.interior().to_vec();
                    let after = normalized(&v);
                    last_change = before.iter().zip(&after).fold(0.0, |m, (x, y)| m.max((x - y).abs()));
                    lambda = l;
                    reached = next;
                }
                _ => {
                    ratio = ratio.sqrt();
                    if ratio > 0.999 {
                        break;
                    }
                }
            }
        }
        level = reached;
        if reached > target * (1.0 + 1e-12) || last_change < opts.change_tol {
            break;
        }
    }
    let sup = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut values: Vec<f64> = v.iter().map(|x| x / sup).collect();
    values.resize(domain.n_nodes(), 0.0);
    debug_assert_eq!(values.len() - n, domain.n_boundary());
    Ok(Eigenfunction {
        field: ScalarField::new(domain.clone(), values)?,
        boundary_level: level / sup,
        lambda,
        last_change,
    })
}

/// Principal eigenvalues of the superlevel sets {u > t} of a normalized
/// eigenfunction, with the lower bound λ̂(1 + θα³t³/(1−αt)³).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetReport {
    pub thresholds: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub brackets: Vec<[f64; 2]>,
    pub lower_bound: Vec<f64>,
    pub lambda_hat: f64,
    pub theta: f64,
    pub alpha: f64,
    /// Interior nodes of {u > t} outside its largest component.
    pub dropped_nodes: Vec<usize>,
    /// λ_t nondecreasing in t, up to twice the bisection tolerance.
    pub monotone: bool,
}

impl LevelSetReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,lambda_t,lower_bound\n");
        for k in 0..self.thresholds.len() {
            s.push_str(&format!("{:.6},{:.10e},{:.10e}\n", self.thresholds[k], self.lambdas[k], self.lower_bound[k]));
        }
        s
    }
}

/// Level sets keep the parent lattice and spacing.
pub fn level_set_analysis(
    eigenfunction: &ScalarField,
    a: &WeightField,
    thresholds: &[f64],
    lambda_hat: f64,
    delta: f64,
    tol_lambda: f64,
    opts: &EigenOptions,
) -> Result<LevelSetReport, EigenError> {
    let (theta, alpha) = (0.5, 0.5);
    let domain = eigenfunction.domain();
    let inner = EigenOptions { extract: false, ..opts.clone() };
    let mut report = LevelSetReport {
        thresholds: thresholds.to_vec(),
        lambdas: Vec::new(),
        brackets: Vec::new(),
        lower_bound: Vec::new(),
        lambda_hat,
        theta,
        alpha,
        dropped_nodes: Vec::new(),
        monotone: true,
    };
    for &t in thresholds {
        if !(0.0..1.0).contains(&t) {
            return Err(EigenError::EmptyLevelSet(t));
        }
        let keep: Vec<bool> = eigenfunction.interior().iter().map(|&u| u > t).collect();
        let (sub, parent) = match domain.restrict(&keep) {
            Ok(x) => x,
            Err(GeometryError::EmptyInterior) => return Err(EigenError::EmptyLevelSet(t)),
            Err(e) => return Err(e.into()),
        };
        report.dropped_nodes.push(keep.iter().filter(|&&k| k).count() - sub.n_interior());
        let est = estimate_principal(&sub, &a.select(&parent), delta, tol_lambda, &inner)?;
        if let Some(&prev) = report.lambdas.last() {
            report.monotone &= est.lambda >= prev - 2.0 * tol_lambda;
        }
        report.lambdas.push(est.lambda);
        report.brackets.push(est.bracket);
        report.lower_bound.push(lambda_hat * (1.0 + theta * (alpha * t).powi(3) / (1.0 - alpha * t).powi(3)));
    }
    Ok(report)
}
