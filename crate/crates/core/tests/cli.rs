//! End-to-end checks of the `mgpp` binary: run directory contents, export
//! subcommands and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mgpp::harness::{load_checkpoint, read_metrics, Record, RunSummary};

fn mgpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgpp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &str = "\
preset = desk-90
seed = 4
task.n_train = 256
task.n_dev = 64
task.n_test = 64
model.layers = 1
train.epochs = 2
train.batch_size = 32
schedule.t_i = 2
schedule.t_f = 12
schedule.delta_t = 2
";

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path
}

fn run_tiny(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let cfg = write_config(dir, &format!("{name}.conf"), extra);
    let out_dir = dir.join(name);
    let out = mgpp(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out_dir
}

#[test]
fn run_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let run = run_tiny(tmp.path(), "mgpp", "");
    for f in ["config.txt", "metrics.jsonl", "final.ckpt", "summary.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let records = read_metrics(&run.join("metrics.jsonl")).unwrap();
    assert!(matches!(records.first(), Some(Record::Header(h)) if h.total_steps == 16));
    assert!(matches!(records.last(), Some(Record::Final(_))));
    let steps = records.iter().filter(|r| matches!(r, Record::Step(_))).count();
    let evals = records.iter().filter(|r| matches!(r, Record::Eval(_))).count();
    assert_eq!((steps, evals), (16, 2));

    let summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    let params = load_checkpoint(&run.join("final.ckpt")).unwrap();
    assert_eq!(summary.masked, params.masked_count());
    assert_eq!(summary.masked, (0.9 * summary.prunable_count as f64).floor() as usize);

    // the stored config reproduces the run
    let again = tmp.path().join("again");
    let out = mgpp(&[
        "run",
        run.join("config.txt").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(run.join("final.ckpt")).unwrap(),
        std::fs::read(again.join("final.ckpt")).unwrap()
    );
}

#[test]
fn export_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let mgpp_run = run_tiny(tmp.path(), "mgpp", "");
    let gmp_run = run_tiny(tmp.path(), "gmp", "method = gmp\n");

    let hist = mgpp(&[
        "export-histogram",
        mgpp_run.join("final.ckpt").to_str().unwrap(),
        "--bins",
        "7",
    ]);
    assert_eq!(code(&hist), 0);
    let text = stdout(&hist);
    assert_eq!(text.lines().next(), Some("bin_center,count"));
    assert_eq!(text.lines().count(), 8);

    let thr = mgpp(&["export-thresholds", mgpp_run.join("metrics.jsonl").to_str().unwrap()]);
    assert_eq!(code(&thr), 0);
    assert_eq!(stdout(&thr).lines().next(), Some("step,threshold"));
    assert!(stdout(&thr).lines().count() > 2);

    let cmp = mgpp(&[
        "compare",
        mgpp_run.join("metrics.jsonl").to_str().unwrap(),
        gmp_run.join("metrics.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(code(&cmp), 0);
    let rows = stdout(&cmp);
    assert!(rows.starts_with("method,runs,mean_test_accuracy"));
    assert!(rows.lines().any(|l| l.starts_with("mgpp,1,")) && rows.lines().any(|l| l.starts_with("gmp,1,")));

    let cfg = write_config(tmp.path(), "curve.conf", "");
    let curve = mgpp(&["export-prior-curve", cfg.to_str().unwrap(), "--range", "-1:1:0.5"]);
    assert_eq!(code(&curve), 0);
    assert_eq!(stdout(&curve).lines().count(), 6);

    let sched = mgpp(&["dump-schedule", cfg.to_str().unwrap()]);
    assert_eq!(code(&sched), 0);
    assert_eq!(stdout(&sched).lines().next(), Some("step,sparsity,eta,prune"));
    assert_eq!(stdout(&sched).lines().count(), 17);
}

#[test]
fn validation_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(tmp.path(), "unknown.conf", "model.width = 3\n");
    let out = mgpp(&["run", unknown.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.width"));

    let bad = write_config(tmp.path(), "bad.conf", "schedule.v_final = 1.5\n");
    let out = mgpp(&["run", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("schedule.v_final"));

    assert_eq!(
        code(&mgpp(&["run", tmp.path().join("missing.conf").to_str().unwrap()])),
        1
    );
    assert_eq!(code(&mgpp(&["run"])), 1);
    assert_eq!(code(&mgpp(&["frobnicate"])), 1);
    assert_eq!(code(&mgpp(&["--help"])), 0);

    let cfg = write_config(tmp.path(), "ok.conf", "");
    assert_eq!(
        code(&mgpp(&[
            "export-prior-curve",
            cfg.to_str().unwrap(),
            "--range",
            "1:-1:0.5"
        ])),
        1
    );
    assert_eq!(
        code(&mgpp(&["export-histogram", cfg.to_str().unwrap(), "--bins", "0"])),
        1
    );
}

#[test]
fn mixed_tasks_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_tiny(tmp.path(), "a", "");
    let b = run_tiny(tmp.path(), "b", "task.seed = 2\n");
    let out = mgpp(&[
        "compare",
        a.join("metrics.jsonl").to_str().unwrap(),
        b.join("metrics.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn runtime_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("none.ckpt");
    assert_eq!(code(&mgpp(&["export-histogram", missing.to_str().unwrap()])), 2);

    let corrupt = tmp.path().join("corrupt.ckpt");
    std::fs::write(&corrupt, b"MGPPCKPT garbage").unwrap();
    assert_eq!(code(&mgpp(&["export-histogram", corrupt.to_str().unwrap()])), 2);

    assert_eq!(
        code(&mgpp(&[
            "export-thresholds",
            tmp.path().join("none.jsonl").to_str().unwrap()
        ])),
        2
    );
}
