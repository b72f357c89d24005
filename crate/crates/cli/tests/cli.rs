use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pal")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn empty_config(dir: &Path) -> String {
    let p = dir.join("config.toml");
    fs::write(&p, "").unwrap();
    p.to_str().unwrap().to_string()
}

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn generate_writes_four_csvs_and_manifest_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = pal(&["generate", "--out", path(out), "--seed", "3"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["source_train.csv", "target_train.csv", "query.csv", "gallery.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["files"].as_array().unwrap().len(), 4);
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[wls]\nsigma = \"lots\"\n").unwrap();
    let o = pal(&["run", "--config", path(&bad), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("wls.sigma"));

    let cfg = empty_config(dir.path());
    let o = pal(&["run", "--config", &cfg, "--out", path(dir.path()), "--variant", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pal(&["run", "--config", &cfg, "--out", path(dir.path()), "--set", "iterations=0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pal(&["ablate", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_writes_one_row_per_iteration_and_echoes_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = empty_config(dir.path());
    let out = dir.path().join("out");
    let o = pal(&[
        "run", "--config", &cfg, "--out", path(&out), "--variant", "PAL", "--set", "wls.sigma=0.7",
        "--dump-weights", "--dump-clusters",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&out.join("report.csv"));
    assert_eq!(rows[0], "iteration,variant,K,selected,map,rank1,rank5");
    assert_eq!(rows.len(), 1 + 6);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["wls"]["sigma"], 0.7);
    for i in 1..=6 {
        assert!(out.join(format!("weights_iter{i}.csv")).exists());
        assert!(out.join(format!("clusters_iter{i}.csv")).exists());
    }
    let weights = lines(&out.join("weights_iter1.csv"));
    assert!(weights[0].starts_with("sample_id,y,w_0"));
}

#[test]
fn report_reemits_csv_from_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = empty_config(dir.path());
    let run = dir.path().join("run");
    let o = pal(&["run", "--config", &cfg, "--out", path(&run), "--set", "iterations=2"]);
    assert!(o.status.success());
    let again = dir.path().join("again");
    let o = pal(&["report", "--config", path(&run.join("report.json")), "--out", path(&again)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.csv", "summary.csv", "cmc.csv"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ablate_covers_every_variant_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = empty_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = pal(&["ablate", "--config", &cfg, "--out", path(out), "--set", "iterations=3"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let rows = lines(&a.join("ablation.csv"));
    assert_eq!(rows.len(), 1 + 5 * 3);
    for v in ["PAL", "BS", "CEL", "OIMG", "DirectTransfer"] {
        assert_eq!(rows.iter().filter(|r| r.split(',').nth(1) == Some(v)).count(), 3, "{v}");
        assert!(a.join(format!("report_{v}.json")).exists());
    }
    let cmc = lines(&a.join("cmc.csv"));
    assert_eq!(cmc[0], "rank,variant,cmc");
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
    let hashes: Vec<String> = ["PAL", "BS", "CEL", "OIMG", "DirectTransfer"]
        .iter()
        .map(|v| {
            let r: serde_json::Value = serde_json::from_slice(&fs::read(a.join(format!("report_{v}.json"))).unwrap()).unwrap();
            r["benchmark_hash"].as_str().unwrap().to_string()
        })
        .collect();
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn diverging_run_exits_three_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = empty_config(dir.path());
    let out = dir.path().join("out");
    let o = pal(&["run", "--config", &cfg, "--out", path(&out), "--set", "train.learning_rate=1e200"]);
    assert_eq!(o.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(report["aborted"].is_string());
}
