//! Fine-scale discretization against dense brute-force oracles.

mod common;

use common::{dense_load, dense_operator, max_diff_sparse_dense, TestRng};
use mdlod::assemble::{
    assemble_load, assemble_operator, energy_norm, solve_dirichlet, sub, CoefficientSet,
};
use mdlod::dof::build_space;
use mdlod::geometry::{build_domain, GeometrySpec};
use mdlod::mesh::build_mesh;
use mdlod::sparse::{LdlFactorization, UpperCsc};
use std::f64::consts::PI;

fn exp1_f0(x: f64, y: f64) -> f64 {
    (PI * x).sin() * (PI * y).sin()
}

fn exp1_f1(x: f64, y: f64) -> f64 {
    x + 2.0 * y
}

#[test]
fn sparse_operator_matches_dense_assembly() {
    let d = build_domain(&GeometrySpec::cross()).unwrap();
    let m = build_mesh(&d, 8).unwrap();
    let s = build_space(&m, &d).unwrap();
    assert!(s.n_free() <= 200, "oracle mesh too large: {}", s.n_free());
    let mut rng = TestRng::new(11);
    for trial in 0..5 {
        let coefs = if trial == 0 {
            CoefficientSet::constant(1.0, 1.0, 1.0)
        } else {
            rng.coefficient_set(&m)
        };
        let op = assemble_operator(&s, &m, &coefs, None).unwrap();
        let dense = dense_operator(&s, &m, &coefs);
        let diff = max_diff_sparse_dense(&op.free, &dense);
        let scale = op.free.max_abs();
        assert!(diff <= 1e-12 * scale, "trial {trial}: {diff}");
    }
}

#[test]
fn operator_is_positive_definite_for_random_coefficients() {
    let d = build_domain(&GeometrySpec::cross()).unwrap();
    let m = build_mesh(&d, 8).unwrap();
    let s = build_space(&m, &d).unwrap();
    let mut rng = TestRng::new(5);
    for trial in 0..10 {
        let coefs = rng.coefficient_set(&m);
        let op = assemble_operator(&s, &m, &coefs, None).unwrap();
        let ldl = LdlFactorization::new(&UpperCsc::from_symmetric_csr(&op.free)).unwrap();
        assert!(
            ldl.pivots().iter().all(|&p| p > 0.0),
            "trial {trial} produced a nonpositive pivot"
        );
    }
}

#[test]
fn load_matches_high_order_quadrature() {
    let d = build_domain(&GeometrySpec::cross()).unwrap();
    let m = build_mesh(&d, 8).unwrap();
    let s = build_space(&m, &d).unwrap();
    let f = assemble_load(&s, &m, &exp1_f0, &exp1_f1);
    let oracle = dense_load(&s, &m, &exp1_f0, &exp1_f1);
    let scale = oracle.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    for (i, (a, b)) in f.iter().zip(&oracle).enumerate() {
        assert!((a - b).abs() <= 1e-10 * scale.max(1.0), "entry {i}: {a} vs {b}");
    }
}

#[test]
fn direct_solve_matches_dense_solve() {
    let d = build_domain(&GeometrySpec::cross()).unwrap();
    let m = build_mesh(&d, 8).unwrap();
    let s = build_space(&m, &d).unwrap();
    let coefs = CoefficientSet::constant(1.0, 1.0, 1.0);
    let op = assemble_operator(&s, &m, &coefs, None).unwrap();
    let f = assemble_load(&s, &m, &exp1_f0, &exp1_f1);
    let u = solve_dirichlet(&op, &f).unwrap();
    let dense = dense_operator(&s, &m, &coefs);
    let rhs = nalgebra::DVector::from_vec(f.clone());
    let u_dense = dense.lu().solve(&rhs).unwrap();
    let scale = u_dense.amax();
    for i in 0..u.len() {
        assert!((u[i] - u_dense[i]).abs() <= 1e-10 * scale, "entry {i}");
    }
}

#[test]
fn h_convergence_against_overkill_reference() {
    // Smooth-data problem on the cross; energy error against an h/4 overkill
    // reference decreases with observed rate at least 0.9.
    let d = build_domain(&GeometrySpec::cross()).unwrap();
    let coefs = CoefficientSet::constant(1.0, 1.0, 1.0);
    let mut errors = Vec::new();
    for n in [8usize, 16, 32] {
        let m = build_mesh(&d, n).unwrap();
        let s = build_space(&m, &d).unwrap();
        let op = assemble_operator(&s, &m, &coefs, None).unwrap();
        let f = assemble_load(&s, &m, &exp1_f0, &exp1_f1);
        let u = solve_dirichlet(&op, &f).unwrap();

        let mr = build_mesh(&d, 4 * n).unwrap();
        let sr = build_space(&mr, &d).unwrap();
        let opr = assemble_operator(&sr, &mr, &coefs, None).unwrap();
        let fr = assemble_load(&sr, &mr, &exp1_f0, &exp1_f1);
        let ur = solve_dirichlet(&opr, &fr).unwrap();
        let up = mdlod::assemble::prolong_field((&m, &s), (&mr, &sr), &u);
        errors.push(energy_norm(&opr, &sub(&up, &ur)).unwrap());
    }
    let mut rates = Vec::new();
    for w in errors.windows(2) {
        rates.push((w[0] / w[1]).ln() / 2.0f64.ln());
    }
    println!("fine-space energy errors {errors:?}, rates {rates:?}");
    for r in &rates {
        assert!(*r >= 0.9, "observed rate {r} below 0.9 ({errors:?})");
    }
}
