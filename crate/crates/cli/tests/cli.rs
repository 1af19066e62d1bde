//! End-to-end checks of the `spikelearn` binary.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn spikelearn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikelearn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn text(root: &Path, name: &str) -> String {
    std::fs::read_to_string(root.join(name)).unwrap()
}

#[test]
fn single_rate_gives_single_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("tf");
    let o = spikelearn(&["neuron-tf", "--rates", "0", "--set", "neuron_tf.duration=1"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = text(&out, "gain.csv");
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    let cols: Vec<f64> = rows[0].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(cols[0], 0.0);
    assert_eq!(cols[1], 0.0);
    assert!(text(&out, "config.txt").contains("rates = 0"));
}

#[test]
fn gain_curve_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("tf");
    let o = spikelearn(&["neuron-tf", "--set", "neuron_tf.duration=5"], &out);
    assert!(o.status.success());
    let rates: Vec<f64> = text(&out, "gain.csv")
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rates.len(), 16);
    for w in rates.windows(2) {
        // Two standard errors of a Poisson count over 5 s at 150 Hz.
        assert!(w[1] >= w[0] - 2.0 * (w[0] / 5.0).sqrt().max(1.0), "{rates:?}");
    }
}

#[test]
fn missing_config_is_a_config_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = spikelearn(&["neuron-tf", "--config", "/nonexistent/experiment.cfg"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert!(!out.exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "[synapse]\njump_upp = 0.2\n").unwrap();
    let out = tmp.path().join("run");
    let o = spikelearn(&["neuron-tf", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn malformed_subpopulation_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    for spec in ["pattern:x", "5-2", "0-999", "pattern:7"] {
        let out = tmp.path().join(format!("etf-{}", spec.replace(':', "_")));
        let o = spikelearn(&["etf", "--subpopulation", spec, "--fractions", "0.5"], &out);
        assert_eq!(o.status.code(), Some(2), "{spec}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none(), "{spec}");
    }
}

#[test]
fn removal_outside_unit_interval_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    for r in ["1.5", "-0.1"] {
        let out = tmp.path().join(format!("recall{r}"));
        let o = spikelearn(&["recall", "--removal", r], &out);
        assert_eq!(o.status.code(), Some(2));
        assert!(!out.exists());
    }
}

#[test]
fn existing_run_directory_is_not_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("tf");
    assert!(spikelearn(&["neuron-tf", "--rates", "0"], &out).status.success());
    let before = files(&out);
    let o = spikelearn(&["neuron-tf", "--rates", "10"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(files(&out), before);
}

#[test]
fn default_output_root_gets_fresh_directories() {
    let tmp = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        let o = Command::new(env!("CARGO_BIN_EXE_spikelearn"))
            .args(["neuron-tf", "--rates", "0", "--seed", "4"])
            .env("SPIKELEARN_OUTPUT_ROOT", tmp.path())
            .output()
            .unwrap();
        assert!(o.status.success());
    }
    assert!(tmp.path().join("neuron-tf-seed4").join("gain.csv").exists());
    assert!(tmp.path().join("neuron-tf-seed4-2").join("gain.csv").exists());
}

#[test]
fn ltp_ltd_reruns_identically_and_silent_pre_never_transitions() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "ltp-ltd",
        "--set",
        "ltp_ltd.nu_pre=0,40",
        "--set",
        "ltp_ltd.nu_post=20,80",
        "--set",
        "ltp_ltd.n_neurons=8",
        "--set",
        "ltp_ltd.calibration_duration=5",
    ];
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(spikelearn(&args, &a).status.success());
    assert!(spikelearn(&args, &b).status.success());
    assert_eq!(text(&a, "plasticity_map.csv"), text(&b, "plasticity_map.csv"));
    for line in text(&a, "plasticity_map.csv").lines().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        if c[0] == "0" {
            assert_eq!(c[2].parse::<f64>().unwrap(), 0.0, "{line}");
            assert_eq!(c[4].parse::<f64>().unwrap(), 0.0, "{line}");
        }
    }
}

#[test]
fn etf_reports_one_then_two_stable_points() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("etf");
    let o = spikelearn(
        &[
            "etf",
            "--fractions",
            "0.05,0.9",
            "--set",
            "etf.nu_in=0,5,10,15,20,30,40,60,80,100,125,150,175,200,250,300",
            "--set",
            "etf.measure=2",
        ],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = text(&out, "report.txt");
    assert!(report.contains("f=0.05: 1 stable"), "{report}");
    assert!(report.contains("f=0.9: 2 stable"), "{report}");
    assert!(out.join("etf_f0.05.csv").exists() && out.join("etf_f0.9.csv").exists());
}

#[test]
fn learn_outputs_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["learn", "--seed", "3", "--set", "stimulus.presentations=8"];
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(spikelearn(&args, &a).status.success());
    assert!(spikelearn(&args, &b).status.success());
    assert_eq!(files(&a), files(&b));
    for f in [
        "config.txt",
        "events.txt",
        "schedule.txt",
        "groups.csv",
        "hamming.csv",
        "traces.csv",
        "delays.csv",
        "final_snapshot.txt",
        "report.txt",
        "patterns/happy.txt",
        "delay_sad_binary.txt",
    ] {
        assert!(a.join(f).exists(), "{f}");
    }
    // One snapshot per two presentations of each pattern, plus the initial one.
    let snaps = std::fs::read_dir(a.join("snapshots")).unwrap().count();
    assert_eq!(snaps, 3);
    let report = text(&a, "report.txt");
    assert!(report.contains("epoch 0s") && report.contains("epoch 30s: t="));
    assert!(report.contains("epoch 300s: not reached"));
    assert!(text(&a, "config.txt").contains("snapshot_every = 2"));
}

#[test]
fn stopped_learning_leaves_a_marked_partial_log() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("learn");
    let o = spikelearn(&["learn", "--stop-at", "10", "--set", "stimulus.presentations=20"], &out);
    assert!(o.status.success());
    let events = text(&out, "events.txt");
    let marker = events.lines().find(|l| l.starts_with("# truncated at ")).expect("truncation marker");
    let t_us: u64 = marker.trim_start_matches("# truncated at ").parse().unwrap();
    assert!((10_000_000..20_000_000).contains(&t_us), "{marker}");
    let last: u64 = events
        .lines()
        .filter(|l| !l.starts_with('#'))
        .last()
        .map(|l| l.split('\t').next().unwrap().parse().unwrap())
        .unwrap();
    assert!(last <= t_us);
    assert!(text(&out, "report.txt").starts_with("TRUNCATED"));
}

#[test]
fn untrained_matrix_has_no_attractor() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("recall");
    let o = spikelearn(&["recall", "--trials", "2"], &out);
    assert!(o.status.success());
    let report = text(&out, "report.txt");
    assert!(report.contains("matrix: untrained"));
    assert!(report.contains("no attractor"), "{report}");
    for line in text(&out, "scores.csv").lines().skip(1) {
        let cov: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(cov < 0.2, "{line}");
    }
}

#[test]
fn recall_does_not_modify_its_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let learn = tmp.path().join("learn");
    assert!(spikelearn(&["learn", "--set", "stimulus.presentations=4"], &learn).status.success());
    let snap = learn.join("final_snapshot.txt");
    let before = std::fs::read(&snap).unwrap();
    let out = tmp.path().join("recall");
    let o = spikelearn(&["recall", "--trials", "1", "--snapshot", snap.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&snap).unwrap(), before);
    assert!(text(&out, "report.txt").contains("mean recall_coverage"));
}

#[test]
fn missing_snapshot_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("recall");
    let o = spikelearn(&["recall", "--snapshot", "/nonexistent/snap.txt"], &out);
    assert_eq!(o.status.code(), Some(2));
}
