use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(
        &["run", "--scenario", "table1_async", "--warmup-s", "5", "--measure-s", "30", "--variant", "agch+eusf", "--out", "o"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["run_classes.csv", "run_histograms.csv", "run_summary.txt"] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
    let hist = fs::read_to_string(dir.path().join("o/run_histograms.csv")).unwrap();
    assert_eq!(hist.lines().count(), 31);
    assert!(String::from_utf8_lossy(&o.stdout).contains("variant agch+eusf"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "seed = 1\nmeasure_s = \"long\"\n").unwrap();
    let o = sim(&["run", "--config", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    assert_eq!(sim(&["run", "--variant", "turbo"], dir.path()).status.code(), Some(2));
    assert_eq!(sim(&["run", "--measure-s", "0"], dir.path()).status.code(), Some(2));
    assert_eq!(sim(&["run", "--scenario", "missing.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(sim(&["run", "--config", "missing.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(sim(&["reproduce", "fig5"], dir.path()).status.code(), Some(2));
    assert_eq!(
        sim(&["sweep", "--axis", "payload", "--values", "1,2"], dir.path()).status.code(),
        Some(2)
    );

    fs::write(
        dir.path().join("sc.toml"),
        "[[class]]\nname = \"x\"\ncount = -1\npayload = 10\ndistribution = \"poisson\"\narrival_rate = 0.1\n",
    )
    .unwrap();
    let o = sim(&["run", "--scenario", "sc.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn ignored_eusf_flags_warn() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&["run", "--eusf-x", "3", "--measure-s", "5", "--warmup-s", "0", "--scenario", "table1_async"], dir.path());
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
}

#[test]
fn sweep_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec![
            "sweep", "--scenario", "table1_async", "--axis", "arrival_rate", "--values", "20:40:20",
            "--seeds", "4,5", "--warmup-s", "5", "--measure-s", "30", "--out", out,
        ]
    };
    assert!(sim(&args("a"), dir.path()).status.success());
    assert!(sim(&args("b"), dir.path()).status.success());
    let a = fs::read(dir.path().join("a/sweep.csv")).unwrap();
    let b = fs::read(dir.path().join("b/sweep.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("arrival_rate_per_s,seed,variant,lambda_fresh_per_s"));
    assert_eq!(text.lines().count(), 1 + 2 * 3 * 2);
}

#[test]
fn empty_sweep_has_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&["sweep", "--axis", "arrival_rate", "--values", "", "--out", "e"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("e/sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn reproduce_fig4_short() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&["reproduce", "fig4", "--seeds", "1", "--warmup-s", "60", "--measure-s", "120", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(dir.path().join("r/fig4_summary.txt")).unwrap();
    let checks = summary.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count();
    assert_eq!(checks, 4);
    let hist = fs::read_to_string(dir.path().join("r/fig4_histograms.csv")).unwrap();
    assert!(hist.starts_with("count_per_s,rach_fraction,agch_fraction,data_fraction,truncated_poisson_fraction"));
}
