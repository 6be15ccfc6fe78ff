use mpclearn_core::benchmarks::system_4d;
use mpclearn_core::polytope::max_control_invariant;
use std::time::Instant;

fn main() {
    let spec = system_4d();
    let t0 = Instant::now();
    let inv = max_control_invariant(&spec.sys, &spec.x_set, &spec.u_set, 100).unwrap();
    println!(
        "4D: certified={} iterations={} rows={} elapsed={:.1?}",
        inv.certified, inv.iterations, inv.set.num_rows(), t0.elapsed()
    );
    let t1 = Instant::now();
    let spec2 = mpclearn_core::benchmarks::double_integrator_2d();
    let inv2 = max_control_invariant(&spec2.sys, &spec2.x_set, &spec2.u_set, 100).unwrap();
    println!(
        "2D: certified={} iterations={} rows={} elapsed={:.1?}",
        inv2.certified, inv2.iterations, inv2.set.num_rows(), t1.elapsed()
    );
    for i in 0..inv2.set.num_rows() {
        println!("  row {:?} <= {:.4}", inv2.set.a_mat().row(i), inv2.set.b_vec()[i]);
    }
}
