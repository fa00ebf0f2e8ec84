use proptest::prelude::*;

use scl_core::cutoff::Plateau;
use scl_core::flow::{flow_map, FlowOptions, PhasePoint};
use scl_core::measure::{PhaseSpaceMeasure, Provenance};
use scl_core::operator::{
    build_hamiltonian, coherent_state, quadratic_observable, weyl_quantize, BuildOptions, GridDomain, QuantizeOptions,
    TestSymbol, Variant,
};
use scl_core::potentials::{Field, PotentialModel, Term};
use scl_core::resolvent::dissipative_bound;
use scl_core::{linalg, C64};

fn opts() -> FlowOptions {
    FlowOptions::with_tolerance(1e-12)
}

fn damped_double_bump() -> PotentialModel {
    PotentialModel::double_bump(2.0, 2.0).with_v2(Field::new(vec![Term::gaussian(1.0, vec![0.0], 1.0)]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn free_flow_is_a_straight_line(x in -5.0..5.0f64, y in -5.0..5.0f64, a in -2.0..2.0f64, b in -2.0..2.0f64, t in 0.0..20.0f64) {
        let model = PotentialModel::free(2);
        let (p, damping) = flow_map(&model, &PhasePoint::new(vec![x, y], vec![a, b]), t, &opts()).unwrap();
        prop_assert!((p.x[0] - (x + 2.0 * t * a)).abs() <= 1e-9 * (1.0 + t));
        prop_assert!((p.x[1] - (y + 2.0 * t * b)).abs() <= 1e-9 * (1.0 + t));
        prop_assert_eq!(p.xi, vec![a, b]);
        prop_assert_eq!(damping, 0.0);
    }

    #[test]
    fn flow_is_reversible(x in -4.0..4.0f64, xi in -1.5..1.5f64, t in 0.5..15.0f64) {
        let model = damped_double_bump();
        let w = PhasePoint::new(vec![x], vec![xi]);
        let (p, _) = flow_map(&model, &w, t, &opts()).unwrap();
        let (back, _) = flow_map(&model, &p.reversed(), t, &opts()).unwrap();
        prop_assert!((back.x[0] - x).abs() < 1e-7);
        prop_assert!((back.xi[0] + xi).abs() < 1e-7);
    }

    #[test]
    fn flow_composes(x in -4.0..4.0f64, xi in -1.5..1.5f64, s in 0.0..8.0f64, t in 0.0..8.0f64) {
        let model = damped_double_bump();
        let w = PhasePoint::new(vec![x], vec![xi]);
        let (direct, i_direct) = flow_map(&model, &w, s + t, &opts()).unwrap();
        let (mid, i_mid) = flow_map(&model, &w, s, &opts()).unwrap();
        let (two, i_two) = flow_map(&model, &mid, t, &opts()).unwrap();
        prop_assert!((direct.x[0] - two.x[0]).abs() < 1e-7);
        prop_assert!((direct.xi[0] - two.xi[0]).abs() < 1e-7);
        prop_assert!((i_direct - i_mid - i_two).abs() < 1e-7);
    }

    #[test]
    fn plateau_is_a_cutoff(lo in -3.0..0.0f64, widths in prop::array::uniform3(0.05..2.0f64), s in -10.0..10.0f64) {
        let p = Plateau::new(lo, lo + widths[0], lo + widths[0] + widths[1], lo + widths[0] + widths[1] + widths[2]);
        let v = p.eval(s);
        prop_assert!((0.0..=1.0).contains(&v));
        let (a, b) = p.support();
        if s <= a || s >= b {
            prop_assert_eq!(v, 0.0);
        }
        if s >= lo + widths[0] && s <= lo + widths[0] + widths[1] {
            prop_assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn measure_pairing_is_linear(
        pts in prop::collection::vec((-3.0..3.0f64, -2.0..2.0f64, 0.0..1.0f64), 1..40),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
    ) {
        let coords: Vec<f64> = pts.iter().flat_map(|p| [p.0, p.1]).collect();
        let weights: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let mu = PhaseSpaceMeasure::new(1, coords, weights, Provenance::EmpiricalMomentFit { energy: 1.0, h: 0.1 }).unwrap();
        let q1 = |x: &[f64], xi: &[f64]| (-x[0] * x[0]).exp() * xi[0];
        let q2 = |x: &[f64], xi: &[f64]| (x[0] - xi[0]).cos();
        let combined = TestSymbol::general(move |x: &[f64], xi: &[f64]| C64::new(a * q1(x, xi) + b * q2(x, xi), 0.0), true);
        let lhs = mu.pair(&combined);
        let rhs = a * mu.pair(&TestSymbol::general(move |x: &[f64], xi: &[f64]| C64::new(q1(x, xi), 0.0), true))
            + b * mu.pair(&TestSymbol::general(move |x: &[f64], xi: &[f64]| C64::new(q2(x, xi), 0.0), true));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        prop_assert_eq!(mu.pair(&TestSymbol::Zero), 0.0);
    }

    #[test]
    fn dissipative_bound_needs_room(h in 0.01..0.5f64, m in -1.0..1.0f64, im in -0.5..0.5f64) {
        let z = C64::new(1.0, im);
        match dissipative_bound(h, m, z) {
            Some(b) => prop_assert!(im > h * m && (b - 1.0 / (im - h * m)).abs() <= 1e-12 * b),
            None => prop_assert!(im <= h * m),
        }
    }
}

#[test]
fn real_symbols_quantize_to_symmetric_operators() {
    let grid = GridDomain::new(1, 4.0, 160, 1.0, 1.0).unwrap();
    let h = 0.2;
    let q = TestSymbol::product(|x: &[f64]| (-x[0] * x[0]).exp(), |xi: &[f64]| (-xi[0] * xi[0]).exp());
    let op = weyl_quantize(&q, &grid, h, &QuantizeOptions::default()).unwrap();
    let u = coherent_state(&grid, h, &[0.5], &[0.8]);
    let v = coherent_state(&grid, h, &[-0.3], &[-0.4]);
    let lhs = grid.inner(&op.apply(&u), &v);
    let rhs = grid.inner(&u, &op.apply(&v));
    assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1e-3), "{lhs} vs {rhs}");
    let expectation = quadratic_observable(&grid, &op, &u).unwrap();
    assert!(expectation.im.abs() <= 1e-10);
    assert!(expectation.re > 0.0);
}

#[test]
fn undamped_operator_without_layer_is_hermitian() {
    let grid = GridDomain::new(1, 6.0, 240, 0.0, 0.0).unwrap();
    let op = build_hamiltonian(
        &PotentialModel::double_bump(2.0, 2.0),
        None,
        &grid,
        0.2,
        Variant::H,
        &BuildOptions::default(),
    )
    .unwrap();
    assert!(op.matrix.hermitian_defect() <= 1e-12);
    let damped =
        build_hamiltonian(&damped_double_bump(), None, &grid, 0.2, Variant::H, &BuildOptions::default()).unwrap();
    assert!(damped.matrix.hermitian_defect() > 1e-3);
    let u: Vec<C64> = (0..grid.len()).map(|k| C64::new((k as f64 * 0.1).sin(), (k as f64 * 0.07).cos())).collect();
    // Im⟨H u, u⟩ = -h⟨V2 u, u⟩ ≤ 0.
    let hu = damped.matrix.matvec(&u);
    assert!(linalg::vdot(&u, &hu).im < 0.0);
}
