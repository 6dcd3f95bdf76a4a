//! End-to-end behaviour of the `tilewise` binary: outputs, files and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use tilewise_core::exec::{naive_gemm, read_tensor, write_tensor, AnyTensor, Tensor};

fn tilewise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tilewise"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Builds a synthetic-a gemm bank and a plan for `shape` in `dir`.
fn bank_and_plan(dir: &Path, shape: &str) -> (String, String) {
    let bank = dir.join("bank.json");
    let plan = dir.join("plan.json");
    let o = tilewise(&["build", "--hw", "synthetic-a", "--out", p(&bank)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = tilewise(&[
        "plan",
        "--hw",
        "synthetic-a",
        "--bank",
        p(&bank),
        "--shape",
        shape,
        "--out",
        p(&plan),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    (p(&bank).to_string(), p(&plan).to_string())
}

#[test]
fn build_reports_counts_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bank.json");
    let first = tilewise(&["build", "--hw", "synthetic-a", "--op", "gemm", "--out", p(&out)]);
    assert!(first.status.success());
    let text = stdout(&first);
    for line in ["level 0: 21 candidates", "total: 607 candidates", "reproducible: true"] {
        assert!(text.contains(line), "{text}");
    }
    // A second build compares against the file just written.
    let second = tilewise(&["build", "--hw", "synthetic-a", "--out", p(&out)]);
    assert!(stdout(&second).contains("reproducible: true"));
}

#[test]
fn plan_then_exec_passes_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let (_, plan) = bank_and_plan(dir.path(), "m=45,n=70,k=33");
    for extra in [&[][..], &["--float"][..], &["--poison-padding"][..]] {
        let mut args = vec![
            "exec",
            "--hw",
            "synthetic-a",
            "--plan",
            &plan,
            "--random",
            "--seed",
            "9",
        ];
        args.extend_from_slice(extra);
        let o = tilewise(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        let text = stdout(&o);
        assert!(text.contains("PASS (3150 elements)"), "{text}");
        assert!(text.contains("predicted cycles:"), "{text}");
    }
}

#[test]
fn exec_reads_and_writes_tensor_files() {
    let dir = tempfile::tempdir().unwrap();
    let (_, plan) = bank_and_plan(dir.path(), "m=5,n=7,k=3");
    let a = Tensor::<i32>::from_fn(vec![5, 3], |i| (i[0] * 3 + i[1]) as i32 - 4);
    let b = Tensor::<i32>::from_fn(vec![3, 7], |i| (i[0] as i32) - (i[1] as i32));
    let (pa, pb, pc) = (
        dir.path().join("a.txt"),
        dir.path().join("b.txt"),
        dir.path().join("c.txt"),
    );
    write_tensor(&AnyTensor::I32(a.clone()), &pa).unwrap();
    write_tensor(&AnyTensor::I32(b.clone()), &pb).unwrap();
    let o = tilewise(&[
        "exec",
        "--hw",
        "synthetic-a",
        "--plan",
        &plan,
        "--input",
        p(&pa),
        "--input",
        p(&pb),
        "--out",
        p(&pc),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let AnyTensor::I32(c) = read_tensor(&pc).unwrap() else {
        panic!("expected an i32 tensor");
    };
    assert_eq!(c, naive_gemm(&a, &b).unwrap());
}

#[test]
fn plan_breakdown_and_adaptive_winner() {
    let o = tilewise(&[
        "plan",
        "--hw",
        "synthetic-a",
        "--shape",
        "m=384,n=64,k=64",
        "--breakdown",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("predicted cycles:") && text.contains("selection time:") && text.contains("waves"));

    let o = tilewise(&[
        "plan",
        "--hw",
        "synthetic-a",
        "--hw",
        "synthetic-b",
        "--adaptive",
        "--shape",
        "m=2,n=64,k=64",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("winner: synthetic-b"), "{}", stdout(&o));
    let o = tilewise(&[
        "plan",
        "--hw",
        "synthetic-a",
        "--hw",
        "synthetic-b",
        "--adaptive",
        "--shape",
        "m=64,n=64,k=64",
    ]);
    assert!(stdout(&o).contains("winner: synthetic-a"), "{}", stdout(&o));
}

#[test]
fn report_writes_csv() {
    let o = tilewise(&[
        "report",
        "--hw",
        "synthetic-a",
        "--sweep",
        "m=1..4",
        "--shape",
        "n=16,k=16",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("m,n,k,synthetic-a_cycles") && header.ends_with("best_backend"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [
        &["frobnicate"][..],
        &["plan", "--hw", "synthetic-a", "--shape", "m=4,n=4"],
        &["plan", "--hw", "synthetic-a", "--shape", "m=4,n=4,k=x"],
        &[
            "plan",
            "--hw",
            "synthetic-a",
            "--hw",
            "synthetic-b",
            "--shape",
            "m=4,n=4,k=4",
        ],
        &[
            "report",
            "--hw",
            "synthetic-a",
            "--sweep",
            "m=1..4:0",
            "--shape",
            "n=4,k=4",
        ],
        &["report", "--hw", "synthetic-a", "--sweep", "m=1..4", "--format", "tsv"],
        &["build", "--hw", "synthetic-a"],
    ] {
        let o = tilewise(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error[usage]"), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn library_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (bank, plan) = bank_and_plan(dir.path(), "m=16,n=16,k=16");

    // Plan edited by hand.
    let mut json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&plan).unwrap()).unwrap();
    json["predicted_cost_cycles"] = 1.into();
    let bad_plan = dir.path().join("bad-plan.json");
    std::fs::write(&bad_plan, json.to_string()).unwrap();
    let o = tilewise(&["exec", "--hw", "synthetic-a", "--plan", p(&bad_plan), "--random"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[invalid-plan]"), "{}", stderr(&o));

    // Bank for other hardware, corrupted bank, missing file.
    let o = tilewise(&["plan", "--hw", "synthetic-b", "--bank", &bank, "--shape", "m=1,n=1,k=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[digest-mismatch]"), "{}", stderr(&o));
    let corrupt = dir.path().join("corrupt.json");
    std::fs::write(&corrupt, &std::fs::read_to_string(&bank).unwrap()[..100]).unwrap();
    let o = tilewise(&[
        "plan",
        "--hw",
        "synthetic-a",
        "--bank",
        p(&corrupt),
        "--shape",
        "m=1,n=1,k=1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[parse]"), "{}", stderr(&o));
    let o = tilewise(&[
        "build",
        "--hw",
        "no/such/hardware.json",
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(o.status.code(), Some(2));

    // Input tensor of the wrong shape.
    let small = dir.path().join("small.txt");
    write_tensor(&AnyTensor::I32(Tensor::zeros(vec![2, 2])), &small).unwrap();
    let o = tilewise(&[
        "exec",
        "--hw",
        "synthetic-a",
        "--plan",
        &plan,
        "--input",
        p(&small),
        "--input",
        p(&small),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[shape-mismatch]"), "{}", stderr(&o));
}

#[test]
fn preset_directory_overrides_builtins() {
    let dir = tempfile::tempdir().unwrap();
    let o = tilewise(&["presets", "--dump", p(dir.path())]);
    assert!(o.status.success());
    for key in ["cpu", "gpu-matrix", "gpu-vector", "synthetic-a", "synthetic-b"] {
        assert!(dir.path().join(format!("{key}.json")).exists());
    }
    // A custom descriptor under a new name, found through the environment.
    let text = std::fs::read_to_string(dir.path().join("synthetic-a.json")).unwrap();
    std::fs::write(
        dir.path().join("custom.json"),
        text.replace("\"synthetic-a\"", "\"custom\""),
    )
    .unwrap();
    let out = dir.path().join("bank.json");
    let o = Command::new(env!("CARGO_BIN_EXE_tilewise"))
        .args(["build", "--hw", "custom", "--out", p(&out)])
        .env("TILEWISE_PRESET_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("on custom"), "{}", stdout(&o));
}
