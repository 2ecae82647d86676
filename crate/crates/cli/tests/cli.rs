use std::fs;
use std::path::Path;
use std::process::Command;

const BASE: &str = "[model]\nsplus = [6, 7]\nepsilon = 0.001\na = 0.1\nxi = [\"13/10\", \"17/10\"]\n";

fn run(verb: &str, config: &str, dir: &Path, extra: &[&str]) -> (i32, String) {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dpkam"))
        .arg(verb)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

#[test]
fn resonance_file_lists_known_tuple() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}[resonances]\norders = [4]\nbound = 3\n");
    let (code, _) = run("resonances", &cfg, d.path(), &[]);
    assert_eq!(code, 0);
    let csv = read(d.path(), "resonances.csv");
    assert!(csv.lines().any(|l| l == "4,-3 -1 2 2,0"), "{csv}");
}

#[test]
fn cubic_scan_is_empty() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}[resonances]\norders = [3]\nbound = 50\n");
    let (code, _) = run("resonances", &cfg, d.path(), &[]);
    assert_eq!(code, 0);
    let csv = read(d.path(), "resonances.csv");
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn order_cap_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}[resonances]\norders = [9]\n");
    assert_eq!(run("resonances", &cfg, d.path(), &[]).0, 3);
}

#[test]
fn budget_exit_code() {
    let d = tempfile::tempdir().unwrap();
    let (code, _) = run("resonances", BASE, d.path(), &["--budget", "10"]);
    assert_eq!(code, 2);
    assert!(read(d.path(), "summary.json").contains("\"partial\": true"));
}

#[test]
fn missing_field_names_it() {
    let d = tempfile::tempdir().unwrap();
    let (code, text) = run("twist", "[model]\nsplus = [6, 7]\nepsilon = 0.001\nxi = [\"1\", \"1\"]\n", d.path(), &[]);
    assert_eq!(code, 3);
    assert!(text.contains("`a`"), "{text}");
}

#[test]
fn twist_report_has_exact_determinant() {
    let d = tempfile::tempdir().unwrap();
    run("twist", BASE, d.path(), &[]);
    let j = read(d.path(), "twist.json");
    assert!(j.contains("\"det_a\": \"-1655182912840/152071101\""), "{j}");
    assert!(read(d.path(), "nondegeneracy.json").contains("ell_condition_1"));
}

#[test]
fn spectrum_identification_passes() {
    let d = tempfile::tempdir().unwrap();
    let (code, text) = run("spectrum", BASE, d.path(), &[]);
    assert_eq!(code, 0, "{text}");
    let csv = read(d.path(), "identification.csv");
    assert!(csv.lines().skip(2).all(|l| l.ends_with(",true")));
}

#[test]
fn outputs_are_deterministic_and_hashed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}[truncation]\nn_x = 24\nn_phi = 4\n[measure]\nsamples = 2000\nepsilons = [0.08, 0.16]\n");
    for verb in ["twist", "solve", "measure"] {
        run(verb, &cfg, a.path(), &["--seed", "7"]);
        run(verb, &cfg, b.path(), &["--seed", "7"]);
        for e in fs::read_dir(a.path().join("out")).unwrap() {
            let name = e.unwrap().file_name();
            let x = fs::read(a.path().join("out").join(&name)).unwrap();
            let y = fs::read(b.path().join("out").join(&name)).unwrap();
            assert_eq!(x, y, "{name:?} differs for {verb}");
            assert!(String::from_utf8_lossy(&x).contains("config_sha256=") || String::from_utf8_lossy(&x).contains("\"config_hash\""));
        }
    }
}

#[test]
fn small_solve_converges() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}[truncation]\nn_x = 24\nn_phi = 4\n");
    let (code, text) = run("solve", &cfg, d.path(), &[]);
    assert_eq!(code, 0, "{text}");
    let s = read(d.path(), "summary.json");
    assert!(s.contains("\"pass\": true"));
    assert!(read(d.path(), "checkpoint.json").contains("content_hash"));
}
