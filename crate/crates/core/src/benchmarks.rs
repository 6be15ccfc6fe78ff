//! Built-in benchmark problems used by the CLI and the test suites.

use crate::mpc::{LinearSystem, MpcSpec};
use crate::numerics::Matrix;
use crate::polytope::Polytope;

/// Two-dimensional double integrator with a scalar input: states in
/// [-5, 5]^2, input in [-2, 2], identity state weights, R = 10, N = 3.
pub fn double_integrator_2d() -> MpcSpec {
    let sys = LinearSystem::new(
        Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]).expect("static data"),
        Matrix::from_rows(&[&[0.0], &[1.0]]).expect("static data"),
    )
    .expect("static data");
    MpcSpec::new(
        sys,
        Matrix::identity(2),
        Matrix::identity(2),
        Matrix::from_rows(&[&[10.0]]).expect("static data"),
        3,
        Polytope::from_box(&[-5.0, -5.0], &[5.0, 5.0]).expect("static data"),
        Polytope::from_box(&[-2.0], &[2.0]).expect("static data"),
    )
    .expect("benchmark spec is valid")
}

/// Four-dimensional system with two inputs: states in the box
/// (+-6, +-6, +-1, +-0.5), inputs in [-5, 5]^2, identity weights, N = 10.
pub fn system_4d() -> MpcSpec {
    let sys = LinearSystem::new(
        Matrix::from_rows(&[
            &[0.7, -0.1, 0.0, 0.0],
            &[0.2, -0.5, 0.1, 0.0],
            &[0.0, 0.1, 0.1, 0.0],
            &[0.5, 0.0, 0.5, 0.5],
        ])
        .expect("static data"),
        Matrix::from_rows(&[&[0.0, 0.1], &[0.1, 1.0], &[0.1, 0.0], &[0.0, 0.0]])
            .expect("static data"),
    )
    .expect("static data");
    MpcSpec::new(
        sys,
        Matrix::identity(4),
        Matrix::identity(4),
        Matrix::identity(2),
        10,
        Polytope::from_box(&[-6.0, -6.0, -1.0, -0.5], &[6.0, 6.0, 1.0, 0.5]).expect("static data"),
        Polytope::from_box(&[-5.0, -5.0], &[5.0, 5.0]).expect("static data"),
    )
    .expect("benchmark spec is valid")
}

/// Looks up a built-in spec by its CLI name.
pub fn by_name(name: &str) -> Option<MpcSpec> {
    match name {
        "double-integrator-2d" => Some(double_integrator_2d()),
        "system-4d" => Some(system_4d()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_round_trip_through_config_text() {
        for spec in [double_integrator_2d(), system_4d()] {
            let text = spec.to_config_text();
            let parsed = crate::mpc::MpcSpec::from_config_text(&text).unwrap();
            assert_eq!(parsed.stable_hash(), spec.stable_hash());
            assert_eq!(parsed.horizon, spec.horizon);
        }
    }

    #[test]
    fn lookup_by_name() {
        assert!(by_name("double-integrator-2d").is_some());
        assert!(by_name("system-4d").is_some());
        assert!(by_name("unknown").is_none());
    }
}
