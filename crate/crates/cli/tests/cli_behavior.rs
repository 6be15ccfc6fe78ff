//! End-to-end behavior of the `mpclearn` binary: artifact layout, exit
//! codes, the one-line error contract, and seeded reproducibility.

use std::path::PathBuf;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mpclearn"))
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mpclearn-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn invariant_set_writes_polytope_and_manifest() {
    let out = scratch("invset");
    let status = binary()
        .args(["invariant-set", "--spec", "double-integrator-2d", "--out"])
        .arg(&out)
        .status()
        .expect("binary runs");
    assert!(status.success());
    let poly = std::fs::read_to_string(out.join("cinf.poly")).unwrap();
    assert!(poly.starts_with("10 2\n"), "unexpected header: {}", &poly[..20]);
    let manifest = std::fs::read_to_string(out.join("manifest-invariant-set.txt")).unwrap();
    assert!(manifest.contains("command: invariant-set"));
    assert!(manifest.contains("output: cinf.poly fnv1a64="));
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn unknown_spec_exits_one_with_machine_parseable_error() {
    let out = scratch("badspec");
    let output = binary()
        .args(["invariant-set", "--spec", "no-such-benchmark", "--out"])
        .arg(&out)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    let line = stderr.lines().next().unwrap_or("");
    assert!(
        line.starts_with("error[InvalidConfig]"),
        "stderr line: {line}"
    );
    assert_eq!(stderr.trim().lines().count(), 1, "must be a single line");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn sampling_is_byte_reproducible_across_processes() {
    let out_a = scratch("sample-a");
    let out_b = scratch("sample-b");
    for out in [&out_a, &out_b] {
        let status = binary()
            .args([
                "sample",
                "--spec",
                "double-integrator-2d",
                "--n",
                "200",
                "--seed",
                "11",
                "--out",
            ])
            .arg(out)
            .status()
            .expect("binary runs");
        assert!(status.success());
    }
    let a = std::fs::read(out_a.join("samples.txt")).unwrap();
    let b = std::fs::read(out_b.join("samples.txt")).unwrap();
    assert_eq!(a, b, "same seed in two processes must emit identical bytes");
    let _ = std::fs::remove_dir_all(&out_a);
    let _ = std::fs::remove_dir_all(&out_b);
}

#[test]
fn train_rejects_dataset_from_a_different_spec() {
    let out = scratch("mismatch");
    // dataset generated under the 2D spec
    let status = binary()
        .args([
            "gen-data",
            "--spec",
            "double-integrator-2d",
            "--n",
            "12",
            "--name",
            "tiny",
            "--seed",
            "3",
            "--out",
        ])
        .arg(&out)
        .status()
        .expect("binary runs");
    assert!(status.success());
    // training under the 4D spec must refuse it
    let output = binary()
        .args(["train", "--spec", "system-4d", "--arch", "bbnn", "--data"])
        .arg(out.join("tiny.data"))
        .arg("--out")
        .arg(&out)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.starts_with("error[Dataset]"),
        "stderr: {stderr}"
    );
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn failed_stage_leaves_no_partial_outputs() {
    let out = scratch("partial");
    // states file with an out-of-set point: labeling skips it and with
    // every state infeasible the stage errors out
    std::fs::create_dir_all(&out).unwrap();
    let states = out.join("bad_states.txt");
    std::fs::write(&states, "# states: 1\n# dim: 2\n40.0 40.0\n").unwrap();
    let output = binary()
        .args(["gen-data", "--spec", "double-integrator-2d", "--states-from"])
        .arg(&states)
        .args(["--name", "doomed", "--out"])
        .arg(&out)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
    assert!(
        !out.join("doomed.data").exists(),
        "partial dataset must be cleaned up"
    );
    let _ = std::fs::remove_dir_all(&out);
}
