//! Solves the fitted fine-scale problem on the cross domain at increasing
//! resolutions and prints the energy norm of the reference solution.

use mdlod::*;
use std::f64::consts::PI;
use std::time::Instant;

fn main() {
    let d = build_domain(&GeometrySpec::cross()).unwrap();
    let coefs = CoefficientSet::constant(1.0, 1.0, 1.0);
    for n in [32usize, 64, 128] {
        let t0 = Instant::now();
        let m = build_mesh(&d, n).unwrap();
        let s = build_space(&m, &d).unwrap();
        let a = assemble_operator(&s, &m, &coefs, None).unwrap();
        let f = assemble_load(
            &s,
            &m,
            &|x, y| (PI * x).sin() * (PI * y).sin(),
            &|x, y| x + 2.0 * y,
        );
        let u = solve_dirichlet(&a, &f).unwrap();
        let nrm = energy_norm(&a, &u).unwrap();
        println!(
            "h = 1/{n}: {} free DOFs, |u_h|_a = {nrm:.8}, {:.2?}",
            s.n_free(),
            t0.elapsed()
        );
    }
}
