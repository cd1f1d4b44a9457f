use std::path::Path;
use std::process::{Command, Output};

use msset::io::{dataset_to_string, DataFormat};
use msset::model::{generate_dataset, ModelParams};

fn msset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msset")).args(args).output().unwrap()
}

fn write_dataset(dir: &Path, name: &str, outcomes: usize, m: usize, seed: u64) -> String {
    let p = ModelParams::exchangeable(vec![0.2; outcomes], vec![0.5; outcomes], 0.3, 0.4).unwrap();
    let d = generate_dataset(&p, m, seed).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, dataset_to_string(&d, DataFormat::Wide).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn test_all_mirrors_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path(), "d.csv", 2, 35, 1);
    let out = msset(&["test", "--input", &input, "--format", "wide", "--test", "all"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.iter().any(|l| l.starts_with("Egger ") && l.split_whitespace().count() == 3));
    assert!(lines.iter().any(|l| l.starts_with("Egger (Bonferroni)")));
    assert!(lines.iter().any(|l| l.starts_with("Begg ") && l.split_whitespace().count() == 3));
    assert!(lines.iter().any(|l| l.starts_with("Begg (Bonferroni)")));
    assert!(lines.iter().any(|l| l.starts_with("MSSET")));
}

#[test]
fn json_report_has_intermediates() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path(), "d.csv", 2, 30, 2);
    let out = msset(&["test", "--input", &input, "--json", "--m-convention", "total"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let ms = &v["msset"];
    for key in ["score", "sigma_aa", "lambda_bar", "statistic", "p_value", "asymptotic_cov_a"] {
        assert!(!ms[key].is_null(), "missing {key}");
    }
    assert_eq!(ms["info"]["aa_inverse"].as_array().unwrap().len(), 2);
    assert_eq!(ms["m_convention"], "total");
    assert!(v["egger"]["per_outcome"].is_array());

    let only = msset(&["test", "--input", &input, "--json", "--test", "egger"]);
    let w: serde_json::Value = serde_json::from_str(&stdout(&only)).unwrap();
    let keys = |x: &serde_json::Value| x.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&v), keys(&w));
    assert!(w["msset"].is_null());
}

#[test]
fn single_outcome_score_test() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path(), "one.csv", 1, 25, 3);
    let out = msset(&["test", "--input", &input, "--test", "msset", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["msset"]["df"], 1);
    assert_eq!(v["msset"]["score"].as_array().unwrap().len(), 1);
}

#[test]
fn invalid_file_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "study_id,y1,s1\na,0.1,0.2\nb,0.3,-1\n").unwrap();
    let out = msset(&["test", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    // Parses, but too few studies for a test.
    let few = dir.path().join("few.csv");
    std::fs::write(&few, "study_id,y1,s1,y2,s2\na,0.1,0.2,0.3,0.4\nb,0.5,0.6,0.7,0.8\n").unwrap();
    let out = msset(&["test", "--input", few.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("m_j below minimum"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = msset(&["test", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(msset(&["--help"]).status.code(), Some(0));
}

#[test]
fn computation_error_names_module_and_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    // Outcome 2 has identical standard errors and no dispersion: constant precision.
    let mut text = String::from("study_id,y1,s1,y2,s2\n");
    for i in 0..8 {
        text.push_str(&format!("s{i},{},{},0.5,0.3\n", 0.1 * i as f64, 0.2 + 0.05 * i as f64));
    }
    std::fs::write(&path, text).unwrap();
    let out = msset(&["test", "--input", path.to_str().unwrap(), "--test", "msset"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("msset") && err.contains("outcome2"), "{err}");
}

#[test]
fn funnel_export_rows() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path(), "d.csv", 2, 20, 4);
    let target = dir.path().join("funnel.csv");
    let out = msset(&["funnel", "--input", &input, "--outcome", "2", "--output", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&target).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("effect,stderr,pooled_estimate,ci_low_bound,ci_high_bound"));
    assert_eq!(lines.count(), 20);
    assert_eq!(msset(&["funnel", "--input", &input, "--outcome", "3"]).status.code(), Some(1));
}

#[test]
fn batch_reports_skips_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), "a.csv", 2, 30, 5);
    write_dataset(dir.path(), "small.csv", 2, 9, 6);
    write_dataset(dir.path(), "b.csv", 2, 40, 7);
    let manifest = dir.path().join("manifest.txt");
    std::fs::write(&manifest, "# datasets\na.csv\nsmall.csv, wide\nb.csv\n").unwrap();
    let decisions = dir.path().join("decisions.csv");
    let out = msset(&[
        "batch",
        "--manifest",
        manifest.to_str().unwrap(),
        "--decisions",
        decisions.to_str().unwrap(),
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    for t in v["tables"].as_array().unwrap() {
        let total: u64 = t["counts"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|c| c.as_u64().unwrap()).sum();
        assert_eq!(total, 2);
    }
    let rows: Vec<String> = std::fs::read_to_string(&decisions).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].contains("a.csv,analyzed"));
    assert!(rows[2].contains("small.csv,skipped,criterion (a)"));
    assert!(rows[3].contains("b.csv,analyzed"));

    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "\n# none\n").unwrap();
    assert_eq!(msset(&["batch", "--manifest", empty.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn simulate_and_generate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# small run\nn = 20\ntau2 = 0.5\nreplicates = 40\ntests = msset, egger\nseed = 3\n").unwrap();
    let a = msset(&["simulate", "--config", cfg.to_str().unwrap(), "--threads", "1"]);
    let b = msset(&["simulate", "--config", cfg.to_str().unwrap(), "--threads", "4"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let csv = stdout(&a);
    assert!(csv.starts_with("n,tau2,test,replicates,valid,failures,rejections,rate,mc_se\n"));
    assert_eq!(csv.lines().count(), 3);

    std::fs::write(&cfg, "replicates = 0\n").unwrap();
    assert_eq!(msset(&["simulate", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));

    let mixed = dir.path().join("mixed.cfg");
    std::fs::write(&mixed, "data = mixed-binary\n").unwrap();
    let main = dir.path().join("gen.csv");
    let counts = dir.path().join("gen_counts.csv");
    let out = msset(&[
        "generate",
        "--config",
        mixed.to_str().unwrap(),
        "--n",
        "30",
        "--output",
        main.to_str().unwrap(),
        "--counts-output",
        counts.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = msset(&[
        "test",
        "--input",
        main.to_str().unwrap(),
        "--counts",
        counts.to_str().unwrap(),
        "--smooth",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["msset"]["smoothed"], serde_json::json!([true, false]));
}
