use inflap::eigen::{estimate_principal, EigenOptions};
use inflap::geometry::{build_domain, DomainSpec, WeightField};
use inflap::radial::{beta, radial_bounds, radial_first_eigen};

const TOL: f64 = 0.02;

#[test]
fn weight_scaling_divides_the_eigenvalue() {
    let d = build_domain(&DomainSpec::disk(1.0, 1.0 / 16.0)).unwrap();
    let opts = EigenOptions { extract: false, ..Default::default() };
    let one = estimate_principal(&d, &WeightField::constant(&d, 1.0).unwrap(), 1.0, TOL, &opts).unwrap();
    let three = estimate_principal(&d, &WeightField::constant(&d, 3.0).unwrap(), 1.0, TOL / 3.0, &opts).unwrap();
    assert!((3.0 * three.lambda - one.lambda).abs() <= 2.0 * TOL, "{} vs {}", 3.0 * three.lambda, one.lambda);
}

#[test]
fn square_eigenvalue_lies_in_the_analytic_bracket() {
    let d = build_domain(&DomainSpec::rectangle([0.0, 0.0], [1.0, 1.0], 1.0 / 24.0)).unwrap();
    let a = WeightField::from_fn(&d, |p| 1.0 + p[0]).unwrap();
    let est = estimate_principal(&d, &a, 1.0, TOL, &EigenOptions::default()).unwrap();
    assert!(est.lambda > est.bounds.lambda0 && est.lambda < est.bounds.upper, "{est:?}");
    assert!(!est.soft);

    let ef = est.eigenfunction.expect("eigenfunction");
    let f = &ef.field;
    assert!((f.sup() - 1.0).abs() < 1e-12);
    assert!(f.boundary().iter().all(|&b| b == 0.0));
    assert!(f.interior().iter().all(|&u| u > 0.0));
    assert!(ef.lambda <= est.bracket[1] + TOL);
    // The heavier right half carries more of the eigenfunction: the cone
    // tip stays within a cell of the center, but its right flank is higher.
    let side = |right: bool| -> f64 {
        (0..d.n_interior()).filter(|&k| (d.position(k)[0] > 0.5) == right && d.position(k)[0] != 0.5).map(|k| f.values()[k]).sum()
    };
    assert!(side(true) > side(false), "{} vs {}", side(true), side(false));
}

#[test]
fn radial_weight_between_extreme_constants() {
    let b = beta();
    let a = |r: f64| 1.0 + r;
    let (lambda, profile) = radial_first_eigen(&a, 1.0, 1e-7).unwrap();
    // 1 ≤ a ≤ 2 on the unit ball.
    assert!(lambda > b / 2.0 && lambda < b, "{lambda}");
    let (lo, hi) = radial_bounds(&a, 1.0);
    assert!(lo < lambda && lambda < hi);
    assert!(profile.u.last().unwrap().abs() < 1e-5);
    assert!(profile.u.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}
