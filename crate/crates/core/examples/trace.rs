use mpclearn_core::benchmarks::{double_integrator_2d, system_4d};
use mpclearn_core::mpc::MpcSolver;
use mpclearn_core::network::ProjectionSpec;
use mpclearn_core::numerics::{standard_normal, Prng};
use mpclearn_core::optimize::SolverSettings;
use mpclearn_core::polytope::max_control_invariant;
use mpclearn_core::sampler::{hit_and_run, HitAndRunConfig};

fn main() {
    // projection sweep on 2D
    let spec = double_integrator_2d();
    let inv = max_control_invariant(&spec.sys, &spec.x_set, &spec.u_set, 100).unwrap();
    let pspec = ProjectionSpec::build(&spec.sys, &spec.u_set, &inv.set).unwrap();
    let states = hit_and_run(&inv.set, 10_000, &HitAndRunConfig::new(29)).unwrap();
    let mut prng = Prng::seed_from_u64(31);
    let mut failures = 0;
    let mut worst = 0.0_f64;
    let t0 = std::time::Instant::now();
    for x in &states {
        for _ in 0..2 {
            let u_hat = standard_normal(&mut prng, 1).scale(3.0);
            match pspec.project_feasible(x, &u_hat) {
                Ok(p) => {
                    let v = pspec.constraint_slack(x, &p.u).iter().fold(0.0_f64, |m, s| m.max(-s));
                    worst = worst.max(v);
                }
                Err(_) => failures += 1,
            }
        }
    }
    println!("2D projections: failures {failures}, worst violation {worst:.2e}, {:.1?}", t0.elapsed());

    // MPC label sweep on 4D
    let spec4 = system_4d();
    let inv4 = max_control_invariant(&spec4.sys, &spec4.x_set, &spec4.u_set, 100).unwrap();
    let states4 = hit_and_run(&inv4.set, 400, &HitAndRunConfig::new(1)).unwrap();
    let solver = MpcSolver::new(&spec4, &SolverSettings::default()).unwrap();
    let mut iters: Vec<usize> = Vec::new();
    let t0 = std::time::Instant::now();
    let mut errs = 0;
    for x in &states4 {
        match solver.solve(x) { Ok(s) => iters.push(s.qp.iterations), Err(_) => errs += 1 }
    }
    iters.sort_unstable();
    let n = iters.len();
    println!("4D labels: errs={errs} p50={} p99={} max={} {:.1?}", iters[n/2], iters[n*99/100], iters[n-1], t0.elapsed());
}
