use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const SMALL: &str = r#"
seed = 3
target_client = 0

[federation]
clients = 3
rounds = 30
post_train_rounds = 3
local_iterations = 10
learning_rate = 1e-3
batch_size = 32

[unlearn]
iterations = 20
fgmp_interval = 5
learning_rate = 1e-3
batch_size = 32

[model]
hidden = [8]

[data.synthetic]
classes = 2
features = 6
samples_per_class = 300

[[data.synthetic.client_bias]]
client = 0
vector = [0.0, 2.0, 2.0, 0.0, 0.0, 0.0]
"#;

fn fcu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcu"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    o
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new(text: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("run.toml");
        std::fs::write(&config, text).unwrap();
        Fixture { _dir: dir, root, config }
    }

    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let out = self.root.join(out);
        let mut args = vec![cmd, "--config", self.config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        fcu(&args)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn report_field(path: &Path, field: &str) -> Value {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    doc["reports"][0][field].clone()
}

fn number(v: Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("expected number, got {v}"))
}

#[test]
fn missing_config_names_the_path() {
    let o = fcu(&["train", "--config", "/nonexistent/dir/cfg.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/dir/cfg.toml"), "{}", stderr(&o));
}

#[test]
fn invalid_config_is_rejected() {
    let f = Fixture::new("seed = 1\n[federation]\nclients = 0\n");
    let o = f.run("train", "out", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("federation"), "{}", stderr(&o));

    let f = Fixture::new("sed = 1\n");
    assert_eq!(f.run("train", "out", &[]).status.code(), Some(2));
}

#[test]
fn training_is_byte_reproducible() {
    let f = Fixture::new(SMALL);
    ok(f.run("train", "a", &[]));
    ok(f.run("train", "b", &[]));
    assert_eq!(files(&f.path("a/origin/model")), files(&f.path("b/origin/model")));
    let log = std::fs::read_to_string(f.path("a/origin/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 30);
    let a = std::fs::read_to_string(f.path("a/origin/report.json")).unwrap();
    let b = std::fs::read_to_string(f.path("b/origin/report.json")).unwrap();
    let strip = |s: &str| s.lines().filter(|l| !l.contains("runtime_seconds")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn seed_flag_changes_the_model() {
    let f = Fixture::new(SMALL);
    ok(f.run("train", "a", &[]));
    ok(f.run("train", "b", &["--seed", "9"]));
    assert_ne!(files(&f.path("a/origin/model")), files(&f.path("b/origin/model")));
}

#[test]
fn unlearn_outputs_and_method_names() {
    let f = Fixture::new(SMALL);
    ok(f.run("train", "o", &[]));
    ok(f.run("retrain", "o", &[]));
    ok(f.run("unlearn", "o", &[]));
    assert!(f.path("o/fcu/unlearned/manifest.json").exists());
    assert!(f.path("o/fcu/final/manifest.json").exists());
    let report = f.path("o/fcu/report.json");
    assert_eq!(report_field(&report, "method"), json!("fcu"));
    // the retrain report was present, so the gap is filled in
    assert!(report_field(&report, "efficacy_gap").is_f64());

    ok(f.run("unlearn", "o", &["--no-fgmp"]));
    assert_eq!(
        report_field(&f.path("o/fcu-no-fgmp/report.json"), "method"),
        json!("fcu-no-fgmp")
    );
    ok(f.run("unlearn", "o", &["--no-post-train"]));
    assert!(f.path("o/fcu-no-post-train/unlearned").exists());
    assert!(!f.path("o/fcu-no-post-train/final").exists());
}

#[test]
fn architecture_mismatch_exits_three() {
    let f = Fixture::new(SMALL);
    ok(f.run("train", "o", &[]));
    let other = Fixture::new(&SMALL.replace("hidden = [8]", "hidden = [5]"));
    let ck = f.path("o/origin/model");
    let o = other.run("unlearn", "x", &["--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = other.run("finetune", "x", &["--checkpoint", "/nonexistent/ck"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn retrain_and_finetune_reports() {
    let f = Fixture::new(SMALL);
    ok(f.run("train", "o", &[]));
    ok(f.run("retrain", "o", &[]));
    ok(f.run("finetune", "o", &[]));
    let retrain = f.path("o/retrain/report.json");
    assert_eq!(number(report_field(&retrain, "efficacy_gap")), 0.0);
    let finetune = f.path("o/finetune/report.json");
    let (ft, rt) = (
        number(report_field(&finetune, "runtime_seconds")),
        number(report_field(&retrain, "runtime_seconds")),
    );
    assert!(ft < rt, "finetune {ft}s vs retrain {rt}s");
}

#[test]
fn compare_combines_and_checks_digests() {
    let f = Fixture::new(SMALL);
    ok(f.run("train", "o", &[]));
    ok(f.run("retrain", "o", &[]));
    ok(f.run("unlearn", "o", &[]));
    let reports: Vec<String> = ["o/origin", "o/retrain", "o/fcu"]
        .iter()
        .map(|d| f.path(d).join("report.json").to_string_lossy().into_owned())
        .collect();
    let mut args = vec!["compare"];
    args.extend(reports.iter().map(String::as_str));
    let o = ok(fcu(&args));
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    let rows = table.lines().skip_while(|l| !l.starts_with("---")).skip(1).count();
    assert_eq!(rows, 3, "{table}");
    for m in ["origin", "retrain", "fcu"] {
        assert!(table.lines().any(|l| l.starts_with(m)), "{table}");
    }

    ok(f.run("train", "p", &["--seed", "11"]));
    let foreign = f.path("p/origin/report.json").to_string_lossy().into_owned();
    let o = fcu(&["compare", &reports[0], &foreign]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let combined = f.path("combined.json");
    ok(fcu(&["compare", &reports[0], &foreign, "--force", "--out", combined.to_str().unwrap()]));
    assert!(combined.exists());

    let o = fcu(&["compare", &reports[0]]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_results() {
    let f = Fixture::new(SMALL);
    let out = |name: &str, threads: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_fcu"))
            .args(["train", "--config", f.config.to_str().unwrap(), "--out"])
            .arg(f.path(name))
            .env("FCU_THREADS", threads)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        ok(o);
    };
    out("one", "1");
    out("four", "4");
    assert_eq!(files(&f.path("one/origin/model")), files(&f.path("four/origin/model")));
}
