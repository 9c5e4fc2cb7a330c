//! Radial problems on balls and annuli.
//!
//! For a radial function Δ∞u = (u′)²u″ in every dimension, so a radial
//! solution of Δ∞u + λa(r)u³ = 0 with u(0) = m solves the integral equation
//!
//!   u(r) = m − (3λ)^{1/3} ∫₀ʳ [∫₀ᵗ a(s)u(s)³ ds]^{1/3} dt.
//!
//! For constant a ≡ k the solution is explicit: F(u(r)/m) = (λk)^{1/4} r
//! with F(t) = ∫_t¹ (1−s⁴)^{−1/4} ds, and the ball of radius R has
//! principal eigenvalue β/R⁴ with β = F(0)⁴.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::operator::sigma;

#[derive(Debug, Error, PartialEq)]
pub enum RadialError {
    #[error("argument {0} outside the admissible range")]
    OutOfRange(f64),
    #[error("Picard iteration did not settle in {sweeps} sweeps (last change {change:e})")]
    NoConvergence { sweeps: usize, change: f64 },
    #[error("first zero does not cross R = {radius} for λ in [{lo}, {hi}]")]
    BracketFailure { radius: f64, lo: f64, hi: f64 },
    #[error("profile value {value:e} at R is not zero")]
    ProfileNotZeroAtR { value: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let (f1, f2) = (f(c - h * XK[j]), f(c + h * XK[j]));
        kron += WK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Globally adaptive Gauss–Kronrod quadrature to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let mut parts = vec![(a, b, gk15(&f, a, b))];
    for _ in 0..500 {
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        if err <= tol {
            break;
        }
        let worst = (0..parts.len()).max_by(|&i, &j| parts[i].2 .1.total_cmp(&parts[j].2 .1)).unwrap();
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        parts.push((lo, mid, gk15(&f, lo, mid)));
        parts.push((mid, hi, gk15(&f, mid, hi)));
    }
    parts.iter().map(|p| p.2 .0).sum()
}

/// F(t) = ∫_t¹ (1−s⁴)^{−1/4} ds for t ∈ [0, 1].
///
/// With s = 1 − τ⁴ the integrand becomes 4τ²((1+s)(1+s²))^{−1/4}, smooth
/// on τ ∈ [0, (1−t)^{1/4}].
pub fn f_quadrature(t: f64) -> Result<f64, RadialError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(RadialError::OutOfRange(t));
    }
    let top = (1.0 - t).powf(0.25);
    Ok(integrate(
        |tau| {
            let s = 1.0 - tau.powi(4);
            4.0 * tau * tau / ((1.0 + s) * (1.0 + s * s)).powf(0.25)
        },
        0.0,
        top,
        1e-13,
    ))
}

/// β = F(0)⁴, the principal eigenvalue of the unit ball.
pub fn beta() -> f64 {
    f_quadrature(0.0).expect("0 is in range").powi(4)
}

/// The t ∈ [0, 1] with F(t) = y, for y ∈ [0, F(0)].
pub fn f_inverse(y: f64) -> Result<f64, RadialError> {
    let f0 = f_quadrature(0.0)?;
    if !(0.0..=f0 * (1.0 + 1e-14)).contains(&y) {
        return Err(RadialError::OutOfRange(y));
    }
    if y >= f0 {
        return Ok(0.0);
    }
    if y == 0.0 {
        return Ok(1.0);
    }
    // Near t = 1, F(t) ≈ (4/3)·4^{−1/4}(1−t)^{3/4}; Newton in t with a
    // bisection guard.
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut t = (1.0 - (y * 0.75 * 4f64.powf(0.25)).powf(4.0 / 3.0)).clamp(0.0, 1.0);
    for _ in 0..100 {
        let g = f_quadrature(t)? - y;
        if g > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let slope = -(1.0 - t.powi(4)).powf(-0.25);
        let newton = t - g / slope;
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - t).abs() <= 1e-15 || hi - lo <= 1e-15 {
            return Ok(next);
        }
        t = next;
    }
    Ok(t)
}

/// Radial solution with constant weight k, u(0) = m: u(r) = m F⁻¹((λk)^{1/4} r),
/// valid up to the first zero F(0)/(λk)^{1/4}.
pub fn closed_form(lambda: f64, k: f64, m: f64, r: f64) -> Result<f64, RadialError> {
    Ok(m * f_inverse((lambda * k).powf(0.25) * r)?)
}

/// Sampled radial function u on r_i = i·Δr, i = 0..=N.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub dr: f64,
    pub u: Vec<f64>,
    pub m: f64,
    pub lambda: f64,
    /// a(r_i).
    pub weight: Vec<f64>,
    /// Smallest r with u(r) = 0, by linear interpolation.
    pub first_zero: Option<f64>,
    /// Picard sweeps used; zero for constructed profiles.
    pub sweeps: usize,
}

impl RadialProfile {
    pub fn r(&self, i: usize) -> f64 {
        i as f64 * self.dr
    }

    pub fn r_max(&self) -> f64 {
        self.r(self.u.len() - 1)
    }

    /// Linear interpolation of u; None outside [0, r_max].
    pub fn value_at(&self, r: f64) -> Option<f64> {
        if !(0.0..=self.r_max() * (1.0 + 1e-12)).contains(&r) {
            return None;
        }
        let x = r / self.dr;
        let i = (x.floor() as usize).min(self.u.len() - 2);
        let th = x - i as f64;
        Some(self.u[i] + th * (self.u[i + 1] - self.u[i]))
    }

    /// (r, u) rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,u\n");
        for (i, v) in self.u.iter().enumerate() {
            s.push_str(&format!("{:.12e},{:.12e}\n", self.r(i), v));
        }
        s
    }
}

fn first_zero(u: &[f64], dr: f64) -> Option<f64> {
    u.windows(2).enumerate().find_map(|(i, w)| {
        (w[0] > 0.0 && w[1] <= 0.0).then(|| (i as f64 + w[0] / (w[0] - w[1])) * dr)
    })
}

// Three-point Gauss–Legendre on [0, 1].
const GL3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// Solve the radial integral equation by Picard iteration on
/// r_i = i·Δr ⊂ [0, r_max].
///
/// The inner integral uses the cumulative trapezoid rule. The outer
/// integrand g = (∫₀ᵗ au³)^{1/3} behaves like t^{1/3} at the origin, so it
/// is written as t^{1/3}q(t) with q smooth and integrated exactly against
/// t^{1/3} with q piecewise linear; plain trapezoid would lose an order.
pub fn picard_radial(
    a: &dyn Fn(f64) -> f64,
    lambda: f64,
    m: f64,
    r_max: f64,
    dr: f64,
    max_sweeps: usize,
) -> Result<RadialProfile, RadialError> {
    if !(lambda > 0.0 && m > 0.0 && dr > 0.0 && r_max > dr) {
        return Err(RadialError::InvalidInput(format!("λ = {lambda}, m = {m}, Δr = {dr}, R = {r_max}")));
    }
    let n = (r_max / dr).round() as usize;
    let weight: Vec<f64> = (0..=n).map(|i| a(i as f64 * dr)).collect();
    if weight.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(RadialError::InvalidInput("weight must be positive and finite".into()));
    }
    // Outer weights: ∫ t^{1/3} and ∫ t^{1/3}(t − r_i)/Δr over each cell.
    let cells: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let a0 = i as f64 * dr;
            if i == 0 {
                (0.75 * dr.powf(4.0 / 3.0), 3.0 / 7.0 * dr.powf(4.0 / 3.0))
            } else {
                GL3.iter().fold((0.0, 0.0), |(p, q), &(x, w)| {
                    let c = (a0 + x * dr).cbrt() * w * dr;
                    (p + c, q + c * x)
                })
            }
        })
        .collect();
    let c3 = (3.0 * lambda).cbrt();
    let mut u = vec![m; n + 1];
    let mut next = vec![0.0; n + 1];
    let mut q = vec![0.0; n + 1];
    let mut change = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        let mut inner = 0.0;
        q[0] = weight[0].cbrt() * u[0];
        for i in 1..=n {
            let (f0, f1) = (weight[i - 1] * u[i - 1].powi(3), weight[i] * u[i].powi(3));
            inner += 0.5 * dr * (f0 + f1);
            q[i] = (inner / (i as f64 * dr)).cbrt();
        }
        let mut outer = 0.0;
        next[0] = m;
        for i in 0..n {
            let (p1, p2) = cells[i];
            outer += q[i] * (p1 - p2) + q[i + 1] * p2;
            next[i + 1] = m - c3 * outer;
        }
        change = u.iter().zip(&next).fold(0.0, |s, (x, y)| s.max((x - y).abs()));
        std::mem::swap(&mut u, &mut next);
        if change <= 1e-10 * m {
            return Ok(RadialProfile {
                dr,
                first_zero: first_zero(&u, dr),
                u,
                m,
                lambda,
                weight,
                sweeps: sweep,
            });
        }
    }
    Err(RadialError::NoConvergence { sweeps: max_sweeps, change })
}

/// One-dimensional analogues of λ₀ and Λ for the ball of radius R: the
/// out-ball radius is R and ρ_α is the in-ball radius of {r: a(r) > αμ}.
pub fn radial_bounds(a: &dyn Fn(f64) -> f64, radius: f64) -> (f64, f64) {
    let s3 = sigma().powi(3);
    let samples: Vec<f64> = (0..=2000).map(|i| a(radius * i as f64 / 2000.0)).collect();
    let mu = samples.iter().copied().fold(0.0, f64::max);
    let lambda0 = 1.0 / (s3 * mu * radius.powi(4));
    let dr = radius / 2000.0;
    let mut inf = f64::INFINITY;
    for k in 1..=100 {
        let alpha = k as f64 / 100.0 * (1.0 - 1e-12);
        // Components of the superlevel set along [0, R]; a component at the
        // origin is a ball, any other is an annulus of half its width.
        let mut rho: f64 = 0.0;
        let mut start: Option<usize> = None;
        for (i, &v) in samples.iter().enumerate() {
            let inside = v > alpha * mu;
            match (inside, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    rho = rho.max(component_radius(s, i - 1, dr));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            rho = rho.max(component_radius(s, samples.len() - 1, dr));
        }
        if rho > 0.0 {
            inf = inf.min(1.0 / (alpha * rho.powi(4)));
        }
    }
    (lambda0, 256.0 / (27.0 * s3 * mu) * inf)
}

fn component_radius(first: usize, last: usize, dr: f64) -> f64 {
    if first == 0 {
        last as f64 * dr
    } else {
        (last - first) as f64 * dr / 2.0
    }
}

/// Principal eigenvalue of the ball B_R with radial weight a, by bisection
/// on λ for first_zero(λ) = R with m = 1. Returns the profile on [0, R].
pub fn radial_first_eigen(a: &dyn Fn(f64) -> f64, radius: f64, tol_lambda: f64) -> Result<(f64, RadialProfile), RadialError> {
    radial_first_eigen_with(a, radius, tol_lambda, 1e-4 * radius)
}

pub fn radial_first_eigen_with(
    a: &dyn Fn(f64) -> f64,
    radius: f64,
    tol_lambda: f64,
    dr: f64,
) -> Result<(f64, RadialProfile), RadialError> {
    if !(radius > 0.0 && tol_lambda > 0.0) {
        return Err(RadialError::InvalidInput(format!("R = {radius}, tol = {tol_lambda}")));
    }
    let (l0, l1) = radial_bounds(a, radius);
    let reach = 1.5 * radius;
    let zero = |lambda: f64| -> Result<f64, RadialError> {
        let p = picard_radial(a, lambda, 1.0, reach, dr, 10_000)?;
        Ok(p.first_zero.unwrap_or(f64::INFINITY))
    };
    let (mut lo, mut hi) = (l0, l1);
    if zero(lo)? < radius || zero(hi)? > radius {
        return Err(RadialError::BracketFailure { radius, lo, hi });
    }
    while hi - lo > tol_lambda {
        let mid = 0.5 * (lo + hi);
        if zero(mid)? > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let profile = picard_radial(a, lambda, 1.0, radius, dr, 10_000)?;
    Ok((lambda, profile))
}

/// λ_ℓ = β(2ℓ−1)⁴/R⁴, the ℓ-th radial eigenvalue of B_R.
pub fn eigen_ladder(radius: f64, level: u32) -> f64 {
    assert!(level >= 1, "levels start at 1");
    beta() * ((2 * level - 1) as f64).powi(4) / radius.powi(4)
}

/// Principal eigenvalue of the annulus κ < |x| < τ: that of a ball of
/// radius (τ−κ)/2.
pub fn annulus_lambda(inner: f64, outer: f64) -> f64 {
    assert!(0.0 <= inner && inner < outer, "need 0 ≤ κ < τ");
    beta() / ((outer - inner) / 2.0).powi(4)
}

/// Extend a first eigenfunction profile on [0, R] (u(R) = 0) by odd
/// reflection about R, even reflection about 2R, and 4R-periodicity, to
/// [0, 4R·periods].
pub fn extend_reflect(profile: &RadialProfile, periods: usize) -> Result<RadialProfile, RadialError> {
    let n = profile.u.len() - 1;
    let end = profile.u[n];
    if end.abs() > 1e-5 * profile.m.abs() {
        return Err(RadialError::ProfileNotZeroAtR { value: end });
    }
    let total = 4 * n * periods.max(1);
    let u: Vec<f64> = (0..=total)
        .map(|i| {
            let j = i % (4 * n);
            // Fold [0, 4R) onto [0, R] with the sign of the branch.
            let (k, sign) = match j / n {
                0 => (j, 1.0),
                1 => (2 * n - j, -1.0),
                2 => (j - 2 * n, -1.0),
                _ => (4 * n - j, 1.0),
            };
            if k == n {
                0.0
            } else {
                sign * profile.u[k]
            }
        })
        .collect();
    let weight = (0..=total).map(|i| profile.weight[(i % (2 * n)).min(2 * n - i % (2 * n))]).collect();
    Ok(RadialProfile {
        dr: profile.dr,
        first_zero: first_zero(&u, profile.dr),
        u,
        m: profile.m,
        lambda: profile.lambda,
        weight,
        sweeps: 0,
    })
}

/// Pointwise residual (u′)²u″ + λ a u³ by central differences of step
/// `stride`·Δr, at every node where the stencil fits.
pub fn radial_residual(profile: &RadialProfile, lambda: f64, stride: usize) -> Vec<(f64, f64)> {
    let s = stride.max(1);
    let h = s as f64 * profile.dr;
    let u = &profile.u;
    (s..u.len().saturating_sub(s))
        .map(|i| {
            let d1 = (u[i + s] - u[i - s]) / (2.0 * h);
            let d2 = (u[i + s] - 2.0 * u[i] + u[i - s]) / (h * h);
            (profile.r(i), d1 * d1 * d2 + lambda * profile.weight[i] * u[i].powi(3))
        })
        .collect()
}

/// Result of checking d(x) ≤ F(δ/u(x))/(λν)^{1/4} at every sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    /// Smallest bound − distance over all samples.
    pub min_slack: f64,
    /// Largest bound − distance.
    pub max_slack: f64,
    /// (sample index, excess) where the distance exceeds the bound by more
    /// than the tolerance.
    pub violations: Vec<(usize, f64)>,
    pub tolerance: f64,
}

/// Distance estimate for a positive solution with boundary value δ:
/// `samples` holds (distance to the boundary, u) pairs.
pub fn distance_bound_check(
    samples: impl IntoIterator<Item = (f64, f64)>,
    delta: f64,
    lambda: f64,
    nu: f64,
    tolerance: f64,
) -> Result<DistanceReport, RadialError> {
    let scale = (lambda * nu).powf(0.25);
    let mut out = DistanceReport { min_slack: f64::INFINITY, max_slack: f64::NEG_INFINITY, violations: Vec::new(), tolerance };
    for (k, (d, u)) in samples.into_iter().enumerate() {
        if !(u > 0.0) {
            return Err(RadialError::InvalidInput(format!("sample {k} has u = {u}")));
        }
        let bound = f_quadrature((delta / u).min(1.0))? / scale;
        let slack = bound - d;
        out.min_slack = out.min_slack.min(slack);
        out.max_slack = out.max_slack.max(slack);
        if -slack > tolerance {
            out.violations.push((k, -slack));
        }
    }
    Ok(out)
}

/// Distance samples (R − r_i, u_i) of a profile on the ball of radius R.
pub fn profile_distances(profile: &RadialProfile, radius: f64) -> Vec<(f64, f64)> {
    (0..profile.u.len())
        .filter(|&i| profile.r(i) <= radius)
        .map(|i| (radius - profile.r(i), profile.u[i]))
        .collect()
}
