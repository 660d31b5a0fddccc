use std::path::PathBuf;
use std::process::Command;

fn lodbs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lodbs"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("lodbs-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn print_config_is_parseable_toml() {
    let out = lodbs().args(["convergence", "--experiment", "exp2-mixed", "--print-config"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("experiment = \"exp2-mixed\""));
    let d = scratch("print");
    std::fs::write(d.join("c.toml"), &text).unwrap();
    let again = lodbs().args(["convergence", "--experiment", "exp2-mixed", "--paper-scale", "--print-config"]).output().unwrap();
    assert!(String::from_utf8(again.stdout).unwrap().contains("n_ref = 1024"));
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn run_writes_the_bundle() {
    let d = scratch("run");
    let cfg = d.join("small.toml");
    std::fs::write(
        &cfg,
        "experiment = \"exp1-smooth\"\nh_exponents = [1, 2]\nn_ref = 32\nt_end = 0.02\n[coefficient]\nkind = \"smooth\"\nepsilon = 0.125\n",
    )
    .unwrap();
    let out_dir = d.join("out");
    let out = lodbs().args(["--sequential", "run", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("[uniform-fem]") && stdout.contains("[pglod]"));
    for f in ["report.csv", "summary.json", "convergence.svg", "report_uniform-fem.csv", "report_pglod.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn bad_config_exits_with_error() {
    let d = scratch("bad");
    let cfg = d.join("bad.toml");
    std::fs::write(&cfg, "experiment = \"exp1-smooth\"\nh_exponents = [12]\n").unwrap();
    let out = lodbs().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error:"));
    std::fs::remove_dir_all(d).unwrap();
}

#[test]
fn infsup_and_correctors_print_tables() {
    let out = lodbs().args(["infsup", "--levels", "2"]).output().unwrap();
    assert!(out.status.success());
    let s = String::from_utf8(out.stdout).unwrap();
    assert_eq!(s.lines().count(), 3);
    let beta: f64 = s.lines().nth(1).unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(beta > 0.5 && beta < 1.0);

    let out = lodbs().args(["correctors", "--epsilon", "0.03125", "--H", "0.125", "--max-m", "3", "--fine-levels", "3"]).output().unwrap();
    assert!(out.status.success());
    let errs: Vec<f64> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errs.len(), 4);
    assert!(errs.windows(2).all(|w| w[1] <= w[0]));
}
