use std::path::Path;
use std::process::{Command, Output};

use chrono::{Duration, NaiveDate};
use svcavail::features::TraceRecord;
use svcavail::pipeline::Manifest;
use svcavail::synthetic::{default_hotspots, geo_blobs, two_service_trace, write_trace_csv};

fn svcavail(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svcavail"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let p = dir.join("pipeline.toml");
    let text = format!(
        "[paths]\ninput = \"trace.csv\"\noutput_dir = \"out\"\n\
         [seeds]\ncluster = 1\nsplit = 2\nstage1 = 3\nstage2 = 4\n{extra}"
    );
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn cluster_finds_three_hotspots() {
    let dir = tempfile::tempdir().unwrap();
    let (points, labels) = geo_blobs(&default_hotspots(), 100, 5.0, 4).unwrap();
    let t0 = NaiveDate::from_ymd_opt(2024, 5, 1).unwrap().and_hms_opt(8, 0, 0).unwrap();
    let records: Vec<TraceRecord> = points
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (p, l))| TraceRecord::new(format!("s{l}"), *p, t0 + Duration::minutes(i as i64)).unwrap())
        .collect();
    write_trace_csv(&dir.path().join("trace.csv"), &records).unwrap();
    let cfg = write_config(dir.path(), "[cluster]\nk_max = 8\nb = 10\n");
    let out = svcavail(&["cluster"], &cfg);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("chosen_k = 3"));
    let m = Manifest::load(&dir.path().join("out/cluster.manifest.toml")).unwrap();
    assert_eq!(m.values["chosen_k"].as_integer(), Some(3));
    assert_eq!(m.seeds.cluster, 1);
    assert!(m.outputs.iter().any(|f| f.path.ends_with("clusters.svcm")));
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = svcavail(&["no-such-command"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error[usage]"));

    let out = Command::new(env!("CARGO_BIN_EXE_svcavail")).arg("cluster").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    write_trace_csv(&dir.path().join("trace.csv"), &two_service_trace(100, 0).unwrap()).unwrap();
    let out = svcavail(&["featurize"], &cfg);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("not found"), "{}", stderr(&out));
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[stage1]\nlearnig_rate = 0.1\n");
    let out = svcavail(&["cluster"], &cfg);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error[config]"), "{}", stderr(&out));
}

#[test]
fn predict_and_wrong_artifact() {
    let dir = tempfile::tempdir().unwrap();
    write_trace_csv(&dir.path().join("trace.csv"), &two_service_trace(400, 1).unwrap()).unwrap();
    let cfg = write_config(dir.path(), "[cluster]\nfixed_k = 2\n[stage1]\nmax_epochs = 60\nlearning_rate = 0.05\n");
    for sub in ["cluster", "featurize", "train-availability"] {
        let out = svcavail(&[sub], &cfg);
        assert!(out.status.success(), "{sub}: {}", stderr(&out));
    }
    let out = svcavail(&["predict", "--lat", "38.72", "--lon", "-9.14", "--time", "2024-03-05T08:00:00"], &cfg);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let first = stdout.lines().next().unwrap();
    assert!(first.starts_with("a\t"), "{stdout}");
    let p: f64 = first.split('\t').nth(1).unwrap().parse().unwrap();
    assert!(p > 0.5 && p <= 1.0);

    let o = dir.path().join("out");
    std::fs::copy(o.join("clusters.svcm"), o.join("stage1.svcm")).unwrap();
    let out = svcavail(&["predict", "--lat", "38.72", "--lon", "-9.14", "--time", "2024-03-05T08:00:00"], &cfg);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error[artifact-type]"), "{}", stderr(&out));

    let mut bytes = std::fs::read(o.join("clusters.svcm")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(o.join("clusters.svcm"), bytes).unwrap();
    let out = svcavail(&["featurize"], &cfg);
    assert!(stderr(&out).starts_with("error[corrupt]"), "{}", stderr(&out));
}

#[test]
fn malformed_rows_go_to_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("service_id,lat,lon,timestamp\n");
    let (points, _) = geo_blobs(&default_hotspots()[..1], 60, 2.0, 0).unwrap();
    for (i, p) in points.iter().enumerate() {
        text.push_str(&format!("x,{},{},2024-01-01 00:{:02}:00\n", p.lat(), p.lon(), i % 60));
    }
    text.push_str("x,91.0,0.0,2024-01-01 00:00:00\n");
    text.push_str("x,10.0,0.0,yesterday\n");
    std::fs::write(dir.path().join("trace.csv"), text).unwrap();
    let cfg = write_config(dir.path(), "[cluster]\nfixed_k = 1\n");
    let out = svcavail(&["cluster"], &cfg);
    assert!(out.status.success(), "{}", stderr(&out));
    let rejects = std::fs::read_to_string(dir.path().join("out/rejects.csv")).unwrap();
    assert_eq!(rejects.lines().count(), 3, "{rejects}");
    assert!(rejects.contains("62,") && rejects.contains("63,"), "{rejects}");
}
