use std::process::{Command, Output};

fn patree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patree")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    patree(args).status.code().unwrap()
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("h.txt");
    let snap = dir.path().join("s.csv");
    let h = hist.to_str().unwrap();
    let s = snap.to_str().unwrap();
    assert_eq!(
        code(&["simulate", "--theta", "0,2/3", "--n", "3000", "--seed", "4", "--out", h]),
        0
    );
    assert_eq!(
        code(&[
            "simulate",
            "--theta",
            "0,2/3",
            "--n",
            "3000",
            "--seed",
            "4",
            "--snapshot",
            "--out",
            s
        ]),
        0
    );
    let out = patree(&["estimate", "--input", h, "--method", "mle", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2, "{text}");
    assert_eq!(code(&["estimate", "--input", s, "--method", "pmle"]), 0);
    assert_eq!(code(&["estimate", "--input", s, "--method", "ee"]), 0);
    // The likelihood needs the attachment sequence.
    assert_eq!(code(&["estimate", "--input", s, "--method", "mle"]), 3);
}

#[test]
fn output_is_reproducible() {
    let a = patree(&[
        "simulate", "--family", "affine", "--theta", "1", "--n", "500", "--seed", "9",
    ])
    .stdout;
    let b = patree(&[
        "simulate", "--family", "affine", "--theta", "1", "--n", "500", "--seed", "9",
    ])
    .stdout;
    assert_eq!(a, b);
}

#[test]
fn invalid_input_exits_with_code_3() {
    assert_eq!(code(&["frobnicate"]), 3);
    assert_eq!(code(&["simulate", "--theta", "0,9", "--n", "10"]), 3);
    assert_eq!(code(&["simulate", "--family", "nope", "--theta", "1", "--n", "10"]), 3);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "n = 10\nbogus = 1\n").unwrap();
    assert_eq!(
        code(&["--config", cfg.to_str().unwrap(), "simulate", "--theta", "0,1"]),
        3
    );
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "family = \"affine\"\ntheta = \"0.5\"\nn = 200\nsnapshot = true\n").unwrap();
    let out = patree(&["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("# n=200"));
}

#[test]
fn analytic_commands_run() {
    assert_eq!(
        code(&["limits", "--family", "power-offset", "--theta", "0,2/3", "--kmax", "5"]),
        0
    );
    assert_eq!(code(&["urn", "--urn", "affine", "--alpha", "0", "--kappa", "3"]), 0);
    assert_eq!(
        code(&[
            "urn",
            "--urn",
            "cutoff",
            "--family",
            "eventually-constant:2",
            "--theta",
            "1,2",
            "--kappa",
            "3"
        ]),
        0
    );
    assert_eq!(
        code(&[
            "--workers",
            "1",
            "mc",
            "--theta",
            "0,2/3",
            "--n",
            "500",
            "--reps",
            "4",
            "--estimators",
            "mle,pmle"
        ]),
        0
    );
}
