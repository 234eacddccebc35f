use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prompt-das")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn tiny_config(dir: &Path) -> String {
    write_config(
        dir,
        &format!(
            "# tiny end-to-end run\n\
             data.dir = {data}\n\
             output = {out}\n\
             seed = 3\n\
             synth.counts = 4, 2, 2\n\
             mae.epochs = 1\n\
             mae.batch_size = 8\n\
             train.epochs = 2\n\
             train.batch_size = 8\n\
             method = vpt\n\
             vpt.p = 2\n",
            data = dir.join("data").display(),
            out = dir.join("out").display()
        ),
    )
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["train", "--config", "x"]).status.code(), Some(1));
    assert_eq!(run(&["eval"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn configuration_errors_exit_with_two_before_writing_anything() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &format!("output = {}\nvpt.depth = 9\n", out.display()));
    let res = run(&["finetune", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(!out.exists());
    for bad in ["unknown.key=1", "method=adam", "mae.mask_ratio=2", "grid.base_lr="] {
        assert_eq!(run(&["pretrain", "--config", &cfg, "--set", "vpt.depth=2", "--set", bad]).status.code(), Some(2), "{bad}");
    }
}

#[test]
fn missing_data_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("data.dir = {}\noutput = {}\n", dir.path().join("nope").display(), dir.path().display()));
    assert_eq!(run(&["finetune", "--config", &cfg]).status.code(), Some(3));
    assert_eq!(run(&["eval", "--config", &cfg]).status.code(), Some(3));
    assert_eq!(run(&["report", "--config", &cfg, "--set", "report.dir=/nonexistent"]).status.code(), Some(3));
    assert_eq!(run(&["finetune", "--config", "/nonexistent.cfg"]).status.code(), Some(3));
}

#[test]
fn pipeline_runs_end_to_end_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    run_ok(&["synth", "--config", &cfg]);
    let manifest = fs::read_to_string(dir.path().join("data/train/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.trim().is_empty()).count(), 24);

    run_ok(&["pretrain", "--config", &cfg]);
    let pretrained = dir.path().join("out/pretrained.mpdc").display().to_string();
    assert!(fs::read_to_string(dir.path().join("out/pretrain_log.csv")).unwrap().starts_with("epoch,mean_loss,lr"));

    let mut metrics = Vec::new();
    for run_dir in ["a", "b"] {
        let out = dir.path().join(run_dir).display().to_string();
        let set_out = format!("output={out}");
        let set_pre = format!("pretrained={pretrained}");
        run_ok(&["finetune", "--config", &cfg, "--set", &set_out, "--set", &set_pre]);
        let printed = run_ok(&["eval", "--config", &cfg, "--set", &set_out]);
        assert!(printed.contains("VPT-deep (p=2)"), "{printed}");
        metrics.push(fs::read(dir.path().join(run_dir).join("metrics.csv")).unwrap());
        let confusion = fs::read_to_string(dir.path().join(run_dir).join("confusion.csv")).unwrap();
        assert_eq!(confusion.lines().count(), 7);
    }
    assert_eq!(metrics[0], metrics[1]);

    let table = run_ok(&["report", "--config", &cfg, "--set", &format!("report.dir={}", dir.path().display())]);
    assert!(table.contains("VPT-deep (p=2)"), "{table}");
    assert_eq!(table.lines().count(), 4, "{table}");
}

#[test]
fn sweeps_write_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    run_ok(&["synth", "--config", &cfg]);
    let p = run_ok(&["sweep", "--config", &cfg, "--set", "sweep.kind=prompt_count", "--set", "sweep.p=2,1", "--set", "train.epochs=1"]);
    let rows: Vec<&str> = p.lines().collect();
    assert_eq!(rows[0], "p,val_acc,test_acc,trainable_count,status");
    assert!(rows[1].starts_with("1,") && rows[2].starts_with("2,") && rows.len() == 3, "{p}");
    assert!(rows[1].ends_with(",ok"));

    let d = run_ok(&["sweep", "--config", &cfg, "--set", "sweep.kind=depth", "--set", "sweep.depths=1,4", "--set", "train.epochs=1"]);
    assert!(d.contains("bottom_top,1,\"{1}\",128,"), "{d}");
    assert!(d.contains("top_bottom,1,\"{4}\",128,"), "{d}");
    assert!(d.contains("bottom_top,4,\"{1,2,3,4}\",512,"), "{d}");

    let s = run_ok(&["sweep", "--config", &cfg, "--set", "sweep.kind=datasize", "--set", "sweep.sizes=12,24", "--set", "train.epochs=1"]);
    assert_eq!(s.lines().count(), 7, "{s}");
    let small = fs::read_to_string(dir.path().join("out/subset_12.txt")).unwrap();
    let large = fs::read_to_string(dir.path().join("out/subset_24.txt")).unwrap();
    assert!(small.lines().all(|f| large.lines().any(|g| g == f)));

    let res = run(&["sweep", "--config", &cfg, "--set", "sweep.kind=datasize", "--set", "sweep.sizes=30"]);
    assert_eq!(res.status.code(), Some(3));
}
