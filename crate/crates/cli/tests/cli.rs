use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMOKE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml");

fn lab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mapa-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("MAPA_LAB_CACHE", cache())
        .output()
        .expect("binary runs")
}

/// Surrogate decoders are shared between tests.
fn cache() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("mapa-lab-cli-cache")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

fn header(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.lines().find(|l| !l.starts_with('#')).unwrap().to_string()
}

fn golden(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(p).unwrap().trim_end().to_string()
}

#[test]
fn generate_data_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["generate-data", "--dataset", "circle", "--n", "200", "--seed", "4"];
    ok(&lab(a.path(), &args));
    ok(&lab(b.path(), &args));
    let rel = Path::new("circle/data/seed4");
    for f in ["x.f64", "z_gt.f64", "eps_gt.f64", "splits.u8", "dataset.json"] {
        let x = std::fs::read(a.path().join(rel).join(f)).unwrap();
        let y = std::fs::read(b.path().join(rel).join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn train_rerun_is_a_no_op_and_changed_inputs_need_force() {
    let out = tempfile::tempdir().unwrap();
    let args = ["train", "--dataset", "abs_value", "--n", "200", "--method", "mapa", "--s", "10", "--epochs", "3", "--restarts", "1"];
    ok(&lab(out.path(), &args));
    let dir = out.path().join("abs_value/mapa/seed0/s10_k1");
    assert!(dir.join("model.json").exists() && dir.join("model.f64").exists());
    assert_eq!(header(&dir.join("history.csv")), golden("history.header"));

    let before = std::fs::read(dir.join("model.f64")).unwrap();
    let modified = std::fs::metadata(dir.join("model.f64")).unwrap().modified().unwrap();
    let again = lab(out.path(), &args);
    ok(&again);
    assert!(String::from_utf8_lossy(&again.stderr).contains("up to date"));
    assert_eq!(std::fs::metadata(dir.join("model.f64")).unwrap().modified().unwrap(), modified);

    let mut changed = args.to_vec();
    let epochs = changed.len() - 3;
    changed[epochs] = "4";
    let refused = lab(out.path(), &changed);
    assert_eq!(refused.status.code(), Some(2));
    assert_eq!(std::fs::read(dir.join("model.f64")).unwrap(), before);

    changed.push("--force");
    ok(&lab(out.path(), &changed));
}

#[test]
fn bad_names_exit_with_usage_code() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(lab(out.path(), &["generate-data", "--dataset", "moons"]).status.code(), Some(2));
    assert_eq!(lab(out.path(), &["train", "--method", "flow"]).status.code(), Some(2));
    assert_eq!(lab(out.path(), &["train", "--n", "200", "--k-frac", "3"]).status.code(), Some(2));
    assert_eq!(lab(out.path(), &["generate-data", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
}

#[test]
fn every_stage_writes_the_documented_headers() {
    let out = tempfile::tempdir().unwrap();
    ok(&lab(out.path(), &["all", "--config", SMOKE, "--n", "300"]));
    let root = out.path().join("abs_value");
    let cases = [
        ("mapa/seed0/s10_k1/history.csv", "history.header"),
        ("iwae/seed0/s10_k0/ll.csv", "eval_ll.header"),
        ("mapa/seed0/s10_k1/ll.csv", "eval_ll.header"),
        ("ground_truth/seed0/ll.csv", "ground_truth_ll.header"),
        ("cost/seed0/cost.csv", "cost.header"),
        ("trends/seed0/trends.csv", "trends.header"),
        ("trends/seed0/trends_summary.csv", "trends_summary.header"),
        ("non_ident/seed0/non_ident.csv", "non_ident.header"),
    ];
    for (file, gold) in cases {
        assert_eq!(header(&root.join(file)), golden(gold), "{file}");
    }
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("vae/seed0/s1_k0/eval.json")).unwrap()).unwrap();
    assert!(eval["kl"]["kl"].is_number());
    assert_eq!(eval["ll_model"].as_array().unwrap().len(), 30);
}
