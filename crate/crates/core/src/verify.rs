//! Discrete checks of comparison principles, a-priori bounds, sign
//! structure and the power transform, run against solver output.
//!
//! Continuum inequalities hold on the grid only up to the scheme's
//! consistency error, so each check takes a tolerance; the default is
//! C·h^{1/3} with C = 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirichlet::{residual, AnalyticBounds, Classification, ProblemParams, SolveReport};
use crate::eigen::LevelSetReport;
use crate::geometry::{GridDomain, WeightField};
use crate::operator::{dinf_field, OperatorError, ScalarField, Stencil};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("fields live on different domains")]
    DomainMismatch,
    #[error("v must be positive on every node (found {value} at node {node})")]
    NonPositiveV { node: usize, value: f64 },
    #[error("field must be positive on every node (found {value} at node {node})")]
    NonPositiveField { node: usize, value: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Dirichlet(#[from] crate::dirichlet::DirichletError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    /// Some inequality was violated, but only within the tolerance.
    PassWithSlack,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Field index of the node, or sample index for radial data.
    pub node: usize,
    pub position: [f64; 2],
    /// How far the inequality is violated.
    pub magnitude: f64,
    pub what: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub check: String,
    pub tolerance: f64,
    /// Scalar inputs the verdict depends on besides the fields.
    pub inputs: BTreeMap<String, f64>,
    /// Every violation, including those within the tolerance.
    pub violations: Vec<Violation>,
    pub notes: Vec<String>,
    pub verdict: Verdict,
}

impl ViolationReport {
    fn new(check: &str, tolerance: f64, inputs: &[(&str, f64)]) -> Self {
        Self {
            check: check.to_string(),
            tolerance,
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            violations: Vec::new(),
            notes: Vec::new(),
            verdict: Verdict::Pass,
        }
    }

    fn record(&mut self, node: usize, position: [f64; 2], magnitude: f64, what: &str) {
        if magnitude > 0.0 {
            self.violations.push(Violation { node, position, magnitude, what: what.to_string() });
        }
    }

    fn finish(mut self) -> Self {
        let worst = self.violations.iter().fold(0.0, |m: f64, v| m.max(v.magnitude));
        self.verdict = if worst > self.tolerance {
            Verdict::Fail
        } else if self.violations.is_empty() {
            Verdict::Pass
        } else {
            Verdict::PassWithSlack
        };
        self
    }

    /// Force a failure that is not tied to a node.
    fn fail(mut self, note: String) -> Self {
        self.notes.push(note);
        self.verdict = Verdict::Fail;
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }
}

/// C·h^{1/3}.
pub fn default_tolerance(domain: &GridDomain, c: f64) -> f64 {
    c * domain.spacing().cbrt()
}

fn same_domain(u: &ScalarField, v: &ScalarField) -> Result<(), VerifyError> {
    if std::sync::Arc::ptr_eq(u.domain(), v.domain()) || u.domain() == v.domain() {
        Ok(())
    } else {
        Err(VerifyError::DomainMismatch)
    }
}

fn params_of(field: &ScalarField, lambda: f64, a: &WeightField) -> ProblemParams {
    let d = field.domain();
    ProblemParams { lambda, weight: a.clone(), rhs: vec![0.0; d.n_interior()], boundary: field.boundary().to_vec() }
}

/// Residual of D(u) + λau³ scaled by the size of its two terms.
fn scaled_residual(field: &ScalarField, lambda: f64, a: &WeightField, stencil: &Stencil) -> Result<Vec<f64>, VerifyError> {
    let r = residual(field, &params_of(field, lambda, a), stencil)?;
    let d = dinf_field(field, stencil)?;
    Ok((0..r.len())
        .map(|k| {
            let cubic = lambda * a.values()[k] * field.values()[k].powi(3);
            r[k] / (d[k].abs() + cubic.abs()).max(f64::MIN_POSITIVE)
        })
        .collect())
}

/// Comparison at the interior maximum of u − v: if it exceeds the boundary
/// maximum then λ₁u³ ≥ λ₂v³ there. Also checks that u is a sub-solution for
/// λ₁ and v a super-solution for λ₂, with residuals relative to the size of
/// their terms.
pub fn check_comparison(
    u: &ScalarField,
    v: &ScalarField,
    lambda1: f64,
    lambda2: f64,
    a: &WeightField,
    stencil: &Stencil,
    tol: f64,
) -> Result<ViolationReport, VerifyError> {
    same_domain(u, v)?;
    let d = u.domain();
    let mut rep = ViolationReport::new("comparison", tol, &[("lambda1", lambda1), ("lambda2", lambda2)]);
    for (k, r) in scaled_residual(u, lambda1, a, stencil)?.into_iter().enumerate() {
        rep.record(k, d.position(k), -r, "u is not a sub-solution");
    }
    for (k, r) in scaled_residual(v, lambda2, a, stencil)?.into_iter().enumerate() {
        rep.record(k, d.position(k), r, "v is not a super-solution");
    }
    let n = d.n_interior();
    let diff: Vec<f64> = u.values().iter().zip(v.values()).map(|(x, y)| x - y).collect();
    let (p, sup_in) = (0..n).fold((0, f64::NEG_INFINITY), |b, k| if diff[k] > b.1 { (k, diff[k]) } else { b });
    let sup_bd = diff[n..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if sup_in > sup_bd + tol {
        let (up, vp) = (u.values()[p], v.values()[p]);
        let gap = lambda2 * vp.powi(3) - lambda1 * up.powi(3);
        let scale = (lambda2 * vp.powi(3)).abs().max(f64::MIN_POSITIVE);
        rep.record(p, d.position(p), gap / scale, "λ₁u³ < λ₂v³ at the interior maximum of u − v");
        rep.notes.push(format!("interior max of u − v {sup_in:.3e} exceeds boundary max {sup_bd:.3e}"));
    } else {
        rep.notes.push("u − v attains its maximum on the boundary".into());
    }
    Ok(rep.finish())
}

/// Ratio principle sup_U u/v = sup_∂U u/v on concentric disks around the
/// in-ball center (radii at 1/5, …, 4/5 of the in-ball radius) and on the
/// whole domain. ∂U is the set of stencil neighbors of U outside U.
pub fn check_ratio_principle(
    u: &ScalarField,
    v: &ScalarField,
    lambda1: f64,
    lambda2: f64,
    tol: f64,
) -> Result<ViolationReport, VerifyError> {
    same_domain(u, v)?;
    if lambda1 > lambda2 {
        return Err(VerifyError::InvalidInput(format!("need λ₁ ≤ λ₂, got {lambda1} > {lambda2}")));
    }
    if let Some(k) = v.values().iter().position(|&x| !(x > 0.0)) {
        return Err(VerifyError::NonPositiveV { node: k, value: v.values()[k] });
    }
    if !u.values().iter().any(|&x| x > 0.0) {
        return Err(VerifyError::InvalidInput("u must be positive somewhere".into()));
    }
    let d = u.domain();
    let n = d.n_interior();
    let ratio: Vec<f64> = u.values().iter().zip(v.values()).map(|(x, y)| x / y).collect();
    let metrics = d.metrics();
    let c = metrics.inball_center;
    let mut rep = ViolationReport::new("ratio_principle", tol, &[("lambda1", lambda1), ("lambda2", lambda2)]);
    let mut radii: Vec<Option<f64>> = (1..=4).map(|k| Some(metrics.inball_radius * k as f64 / 5.0)).collect();
    radii.push(None);
    for radius in radii {
        let inside: Vec<bool> = (0..n)
            .map(|k| {
                let p = d.position(k);
                radius.is_none_or(|r| (p[0] - c[0]).hypot(p[1] - c[1]) < r)
            })
            .collect();
        let mut edge = vec![false; d.n_nodes()];
        for k in (0..n).filter(|&k| inside[k]) {
            for l in d.links(k) {
                if let Some(t) = d.field_index(l.target) {
                    if t >= n || !inside[t] {
                        edge[t] = true;
                    }
                }
            }
        }
        let (p, sup_in) = (0..n)
            .filter(|&k| inside[k])
            .fold((0, f64::NEG_INFINITY), |b, k| if ratio[k] > b.1 { (k, ratio[k]) } else { b });
        let sup_edge = (0..d.n_nodes()).filter(|&k| edge[k]).map(|k| ratio[k]).fold(f64::NEG_INFINITY, f64::max);
        if sup_in == f64::NEG_INFINITY || sup_edge == f64::NEG_INFINITY {
            continue;
        }
        let label = radius.map_or("whole domain".to_string(), |r| format!("disk of radius {r:.4}"));
        let scale = sup_edge.abs().max(1e-300);
        rep.record(p, d.position(p), (sup_in - sup_edge) / scale, &format!("interior ratio exceeds edge ratio on {label}"));
        rep.notes.push(format!("{label}: sup_U u/v = {sup_in:.6e}, sup_∂U u/v = {sup_edge:.6e}"));
    }
    Ok(rep.finish())
}

/// A-priori bounds for a converged solve with zero right-hand side:
/// inf b + (λ/λ₀)^{1/3} inf min(u,0) ≤ u ≤ sup b + σ(λ/λ₀)^{1/3} sup max(u,0)
/// for λ ≥ 0 and, with constant boundary data δ, u = δ for λ = 0,
/// 0 ≤ u ≤ δ for λ < 0 and δ ≤ u ≤ δ/(1 − (λ/λ₀)^{1/3}) for 0 < λ < λ₀.
pub fn check_apriori_bounds(report: &SolveReport, params: &ProblemParams, bounds: &AnalyticBounds, tol: f64) -> Result<ViolationReport, VerifyError> {
    if report.classification != Classification::Converged {
        return Err(VerifyError::InvalidInput("a-priori bounds need a converged solve".into()));
    }
    let u = &report.field;
    let d = u.domain();
    let n = d.n_interior();
    let lambda = params.lambda;
    let mut rep = ViolationReport::new("apriori_bounds", tol, &[("lambda", lambda), ("lambda0", bounds.lambda0)]);
    let (bmin, bmax) = params.boundary.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &b| (lo.min(b), hi.max(b)));
    let scale = bmax.abs().max(bmin.abs()).max(f64::MIN_POSITIVE);
    let vals = &u.values()[..n];
    let check = |lo: f64, hi: f64, what: &str, rep: &mut ViolationReport| {
        for (k, &x) in vals.iter().enumerate() {
            rep.record(k, d.position(k), (lo - x).max(x - hi) / scale, what);
        }
    };
    if lambda >= 0.0 {
        let t = (lambda / bounds.lambda0).cbrt();
        let umin = vals.iter().copied().fold(0.0, f64::min);
        let umax = vals.iter().copied().fold(0.0, f64::max);
        check(bmin + t * umin, bmax + bounds.sigma * t * umax, "outside the general a-priori bounds", &mut rep);
    }
    if bmin == bmax {
        let delta = bmin;
        if lambda == 0.0 {
            check(delta, delta, "λ = 0 solution is not constant", &mut rep);
        } else if lambda < 0.0 && delta > 0.0 {
            check(0.0, delta, "λ < 0 solution leaves [0, δ]", &mut rep);
        } else if lambda > 0.0 && lambda < bounds.lambda0 && delta > 0.0 {
            let hi = delta / (1.0 - (lambda / bounds.lambda0).cbrt());
            check(delta, hi, "solution leaves [δ, δ/(1 − (λ/λ₀)^{1/3})]", &mut rep);
            rep.inputs.insert("upper".into(), hi);
        }
        rep.inputs.insert("delta".into(), delta);
    }
    Ok(rep.finish())
}

/// Sign structure: above the principal eigenvalue a solution with zero
/// boundary data must change sign; at or below it, one sign is expected.
pub fn check_sign_change(values: &[f64], lambda: f64, lambda_hat: f64, tol: f64) -> ViolationReport {
    let mut rep = ViolationReport::new("sign_change", tol, &[("lambda", lambda), ("lambda_hat", lambda_hat)]);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let changes = max > tol && min < -tol;
    rep.notes.push(format!("range [{min:.4e}, {max:.4e}]"));
    if lambda > lambda_hat {
        if changes {
            rep.finish()
        } else {
            rep.fail(format!("λ = {lambda} exceeds λ̂ = {lambda_hat} but the field does not change sign"))
        }
    } else if changes {
        rep.fail("a principal eigenfunction changes sign".into())
    } else {
        rep.notes.push("OneSign: check inapplicable at λ ≤ λ̂".into());
        rep.finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Claim {
    SubSolution,
    SuperSolution,
}

/// If w is a sub-solution of Δ∞w + λaw³ = 0 then so is w^q with λq³ for
/// q > 1; for q < 1 super-solutions are preserved. Residuals are compared
/// relative to the size of their terms.
pub fn check_power_transform(
    w: &ScalarField,
    lambda: f64,
    a: &WeightField,
    q: f64,
    claim: Claim,
    stencil: &Stencil,
    tol: f64,
) -> Result<ViolationReport, VerifyError> {
    if let Some(k) = w.values().iter().position(|&x| !(x > 0.0)) {
        return Err(VerifyError::NonPositiveField { node: k, value: w.values()[k] });
    }
    if !(q > 0.0) {
        return Err(VerifyError::InvalidInput(format!("exponent must be positive, got {q}")));
    }
    let d = w.domain();
    let mut rep = ViolationReport::new("power_transform", tol, &[("lambda", lambda), ("q", q)]);
    let sign = match claim {
        Claim::SubSolution => 1.0,
        Claim::SuperSolution => -1.0,
    };
    for (k, r) in scaled_residual(w, lambda, a, stencil)?.into_iter().enumerate() {
        rep.record(k, d.position(k), -sign * r, "w does not have the claimed residual sign");
    }
    let preserved = match claim {
        Claim::SubSolution => q >= 1.0,
        Claim::SuperSolution => q <= 1.0,
    };
    if !preserved {
        rep.notes.push("exponent does not preserve the claimed sign; only w was checked".into());
        return Ok(rep.finish());
    }
    let wq = w.map(|x| x.powf(q))?;
    for (k, r) in scaled_residual(&wq, lambda * q.powi(3), a, stencil)?.into_iter().enumerate() {
        rep.record(k, d.position(k), -sign * r, "w^q lost the residual sign");
    }
    Ok(rep.finish())
}

/// Distance estimate d(x) ≤ F(δ/u(x))/(λν)^{1/4} on a 2-D solution with
/// constant boundary value δ, allowing 2h of discretization slack.
pub fn check_distance(field: &ScalarField, delta: f64, lambda: f64, nu: f64) -> Result<ViolationReport, VerifyError> {
    let d = field.domain();
    let h = d.spacing();
    let dist = d.boundary_distance();
    let samples = (0..d.n_interior()).map(|k| (dist[k], field.values()[k]));
    let out = crate::radial::distance_bound_check(samples, delta, lambda, nu, 2.0 * h)
        .map_err(|e| VerifyError::InvalidInput(e.to_string()))?;
    let mut rep = ViolationReport::new("distance_estimate", 2.0 * h, &[("delta", delta), ("lambda", lambda), ("nu", nu)]);
    for (k, excess) in out.violations {
        rep.record(k, d.position(k), excess, "distance exceeds F(δ/u)/(λν)^{1/4}");
    }
    rep.notes.push(format!("slack in [{:.4e}, {:.4e}]", out.min_slack, out.max_slack));
    Ok(rep.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Equal,
    AtMost,
}

/// Expected relation `left ≈ right` or `left ≤ right` between two
/// eigenvalue estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRelation {
    pub label: String,
    pub left: f64,
    pub right: f64,
    pub relation: Relation,
}

impl LambdaRelation {
    pub fn equal(label: &str, left: f64, right: f64) -> Self {
        Self { label: label.into(), left, right, relation: Relation::Equal }
    }

    pub fn at_most(label: &str, left: f64, right: f64) -> Self {
        Self { label: label.into(), left, right, relation: Relation::AtMost }
    }
}

/// Relations between principal eigenvalue estimates, such as independence
/// of δ or monotonicity in the weight and the domain. `tol` is normally
/// twice the bisection tolerance. Violations are indexed by relation.
pub fn check_eigen_relations(check: &str, relations: &[LambdaRelation], tol: f64) -> ViolationReport {
    let mut rep = ViolationReport::new(check, tol, &[]);
    for (i, r) in relations.iter().enumerate() {
        let excess = match r.relation {
            Relation::Equal => (r.left - r.right).abs(),
            Relation::AtMost => r.left - r.right,
        };
        rep.record(i, [0.0, 0.0], excess, &r.label);
        rep.notes.push(format!("{}: {:.6} vs {:.6}", r.label, r.left, r.right));
    }
    rep.finish()
}

/// λ_t nondecreasing in t and bounded below by the reported curve.
pub fn check_level_sets(report: &LevelSetReport, tol: f64) -> ViolationReport {
    let mut relations = Vec::new();
    for k in 0..report.thresholds.len() {
        let t = report.thresholds[k];
        if k > 0 {
            let label = format!("λ_t at t = {} ≤ t = {t}", report.thresholds[k - 1]);
            relations.push(LambdaRelation::at_most(&label, report.lambdas[k - 1], report.lambdas[k]));
        }
        relations.push(LambdaRelation::at_most(&format!("lower bound at t = {t}"), report.lower_bound[k], report.lambdas[k]));
    }
    check_eigen_relations("level_sets", &relations, tol)
}

/// Reports as a JUnit-style XML suite.
pub fn junit_xml(suite: &str, reports: &[ViolationReport]) -> String {
    let esc = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;");
    let failures = reports.iter().filter(|r| !r.passed()).count();
    let mut out = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<testsuite name=\"{}\" tests=\"{}\" failures=\"{}\">\n",
        esc(suite),
        reports.len(),
        failures
    );
    for r in reports {
        out.push_str(&format!("  <testcase classname=\"{}\" name=\"{}\"", esc(suite), esc(&r.check)));
        if r.passed() {
            out.push_str("/>\n");
        } else {
            let worst = r.violations.iter().fold(0.0, |m: f64, v| m.max(v.magnitude));
            out.push_str(&format!(
                ">\n    <failure message=\"{} violations, worst {:.3e}, tolerance {:.3e}\">{}</failure>\n  </testcase>\n",
                r.violations.len(),
                worst,
                r.tolerance,
                esc(&r.notes.join("; "))
            ));
        }
    }
    out.push_str("</testsuite>\n");
    out
}
