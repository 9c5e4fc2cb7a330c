use std::sync::Arc;

use proptest::prelude::*;

use inflap::dirichlet::{solve_dirichlet, Classification, ProblemParams, SolveOptions};
use inflap::geometry::{build_domain, superlevel_inball, DomainSpec, GridDomain, WeightField};
use inflap::operator::{dinf_apply, dinf_field, ScalarField, Stencil};
use inflap::radial::{f_quadrature, picard_radial};

fn small_disk() -> Arc<GridDomain> {
    build_domain(&DomainSpec::disk(1.0, 0.2)).unwrap()
}

fn field(domain: &Arc<GridDomain>, values: &[f64]) -> ScalarField {
    ScalarField::new(domain.clone(), values[..domain.n_nodes()].to_vec()).unwrap()
}

/// Smooth random function from a handful of Fourier-type coefficients.
fn smooth(c: &[f64]) -> impl Fn([f64; 2]) -> f64 + '_ {
    move |p| {
        c[0] * p[0] + c[1] * p[1] + c[2] * p[0] * p[0] + c[3] * p[0] * p[1] + c[4] * p[1] * p[1]
            + c[5] * (2.0 * p[0] + p[1]).sin()
            + c[6] * (p[0] - 3.0 * p[1]).cos()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scheme_is_monotone(
        u in prop::collection::vec(-2.0..2.0f64, 400),
        bump in prop::collection::vec(0.0..1.0f64, 400),
        node in 0usize..10_000,
        w in 1u32..=3,
    ) {
        let d = small_disk();
        let s = Stencil::new(w);
        let k = node % d.n_interior();
        let u = field(&d, &u);
        let mut raised = u.values().to_vec();
        for (j, b) in bump.iter().take(raised.len()).enumerate() {
            if j != k {
                raised[j] += b;
            }
        }
        let v = ScalarField::new(d.clone(), raised).unwrap();
        let (du, dv) = (dinf_apply(&u, &s, k).unwrap(), dinf_apply(&v, &s, k).unwrap());
        prop_assert!(dv >= du - 1e-9 * (1.0 + du.abs()), "{du} -> {dv}");

        // Raising only the center lowers the value.
        let mut center = u.values().to_vec();
        center[k] += bump[0];
        let c = ScalarField::new(d.clone(), center).unwrap();
        let dc = dinf_apply(&c, &s, k).unwrap();
        prop_assert!(dc <= du + 1e-9 * (1.0 + du.abs()), "{du} -> {dc}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn homogeneous_of_degree_three_and_shift_invariant(
        u in prop::collection::vec(-2.0..2.0f64, 400),
        c in 0.05..20.0f64,
        shift in -5.0..5.0f64,
    ) {
        let d = small_disk();
        let s = Stencil::new(3);
        let u = field(&d, &u);
        let base = dinf_field(&u, &s).unwrap();
        let scaled = dinf_field(&u.map(|x| c * x).unwrap(), &s).unwrap();
        let shifted = dinf_field(&u.map(|x| x + shift).unwrap(), &s).unwrap();
        for k in 0..base.len() {
            let tol = 1e-9 * (1.0 + base[k].abs());
            prop_assert!((scaled[k] - c.powi(3) * base[k]).abs() <= tol * c.powi(3), "node {k}");
            prop_assert!((shifted[k] - base[k]).abs() <= 1e-7 * (1.0 + base[k].abs()), "node {k}");
        }
    }

    #[test]
    fn quarter_turn_commutes_with_scheme(c in prop::collection::vec(-1.0..1.0f64, 7), w in 1u32..=3) {
        let d = build_domain(&DomainSpec::rectangle([-1.0, -1.0], [2.0, 2.0], 0.125)).unwrap();
        let s = Stencil::new(w);
        let f = smooth(&c);
        let u = ScalarField::from_fn(d.clone(), &f).unwrap();
        let turned = ScalarField::from_fn(d.clone(), |p| f([-p[1], p[0]])).unwrap();
        let du = dinf_field(&u, &s).unwrap();
        let dt = dinf_field(&turned, &s).unwrap();
        let positions = d.positions();
        for k in 0..d.n_interior() {
            let p = positions[k];
            let q = [-p[1], p[0]];
            let j = (0..d.n_interior())
                .find(|&j| (positions[j][0] - q[0]).abs() < 1e-12 && (positions[j][1] - q[1]).abs() < 1e-12)
                .expect("rotated node");
            prop_assert!((dt[k] - du[j]).abs() <= 1e-9 * (1.0 + du[j].abs()), "node {k}: {} vs {}", dt[k], du[j]);
        }
    }

    #[test]
    fn superlevel_inball_shrinks_with_alpha(
        c in prop::collection::vec(-1.0..1.0f64, 7),
        a1 in 0.0..1.0f64,
        a2 in 0.0..1.0f64,
    ) {
        let d = build_domain(&DomainSpec::disk(1.0, 0.1)).unwrap();
        let f = smooth(&c);
        let a = WeightField::from_fn(&d, |p| f(p).exp()).unwrap();
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        prop_assert!(superlevel_inball(&d, &a, lo) >= superlevel_inball(&d, &a, hi));
    }

    #[test]
    fn radial_quadrature_is_decreasing(t1 in 0.0..0.999f64, gap in 1e-4..0.5f64) {
        let t2 = (t1 + gap).min(0.9999);
        prop_assume!(t2 > t1);
        prop_assert!(f_quadrature(t1).unwrap() > f_quadrature(t2).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn first_zero_moves_in_as_lambda_grows(l1 in 0.8..3.0f64, factor in 1.05..2.0f64) {
        let l2 = l1 * factor;
        let one = |_: f64| 1.0;
        let z = |l: f64| picard_radial(&one, l, 1.0, 2.0, 2e-3, 200).unwrap().first_zero.expect("zero inside range");
        prop_assert!(z(l2) < z(l1));
    }

    #[test]
    fn dirichlet_solutions_are_ordered(
        d1 in 0.2..2.0f64,
        dd in 0.0..1.0f64,
        l1 in 0.0..0.5f64,
        dl in 0.0..0.2f64,
    ) {
        let d = build_domain(&DomainSpec::disk(1.0, 0.125).with_stencil_width(2)).unwrap();
        let s = Stencil::new(2);
        let solve = |lambda: f64, delta: f64| {
            let a = WeightField::constant(&d, 1.0).unwrap();
            let p = ProblemParams::constant_boundary(&d, lambda, a, delta);
            let r = solve_dirichlet(&d, &p, &s, &SolveOptions::default()).unwrap();
            prop_assert_eq!(r.classification, Classification::Converged);
            Ok(r.field)
        };
        let base = solve(l1, d1)?;
        let higher_boundary = solve(l1, d1 + dd)?;
        let higher_lambda = solve(l1 + dl, d1)?;
        // 3-homogeneity: boundary data scaled by c scales the solution by c.
        let tiny = solve(l1, 1e-3 * d1)?;
        for k in 0..d.n_interior() {
            let u = base.values()[k];
            prop_assert!((1e3 * tiny.values()[k] - u).abs() <= 1e-6 * u, "node {k}: {} vs {u}", 1e3 * tiny.values()[k]);
            prop_assert!(u >= d1 * (1.0 - 1e-9), "u = {u} below δ = {d1}");
            prop_assert!(higher_boundary.values()[k] >= u - 1e-8 * u);
            prop_assert!(higher_lambda.values()[k] >= u - 1e-8 * u);
        }
    }
}
