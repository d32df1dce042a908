use std::fs;
use std::path::Path;
use std::process::Command;

use fusetrack::fusion::FusionMode;
use fusetrack::tracker::TrackerConfig;
use fusetrack_harness::report::{frames_csv, run_eval, FRAME_HEADER, SUMMARY_HEADER};
use fusetrack_harness::sequence::{load_sequence, save_sequence};
use fusetrack_harness::synth::{synth_sequence, Motion, SynthSpec};

fn short_spec() -> SynthSpec {
    SynthSpec {
        name: "short".into(),
        frames: 8,
        width: 192,
        height: 160,
        start: (80.0, 80.0),
        target_size: (32.0, 28.0),
        motion: Motion::Linear { vx: 1.5, vy: 0.5 },
        ..SynthSpec::default()
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fusetrack"))
}

#[test]
fn saved_sequence_loads_back() {
    let seq = synth_sequence(&short_spec(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_sequence(&seq, dir.path()).unwrap();
    let back = load_sequence(dir.path()).unwrap();
    assert_eq!(back.len(), seq.len());
    assert_eq!(back.ground_truth, seq.ground_truth);
    // Frames go through 8-bit PNG.
    for (a, b) in back.frames.iter().zip(&seq.frames) {
        let worst = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-9, "{worst}");
    }
}

#[test]
fn fixed_shallow_weight_matches_shallow_mode() {
    let seq = synth_sequence(&short_spec(), 4).unwrap();
    let cfg = TrackerConfig::default();
    let fixed = run_eval(std::slice::from_ref(&seq), &cfg, FusionMode::Fixed { beta_s: 1.0 }, None, false).unwrap();
    let shallow_cfg = TrackerConfig::parse("fusion = shallow\n").unwrap();
    let shallow = run_eval(std::slice::from_ref(&seq), &shallow_cfg, shallow_cfg.fusion, None, false).unwrap();
    let a = &fixed.sequences[0];
    let b = &shallow.sequences[0];
    assert!(a.error.is_none(), "{:?}", a.error);
    assert_eq!(frames_csv(&a.frames), frames_csv(&b.frames));
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn empty_sequence_list_writes_header_only_summary() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_eval(&[], &TrackerConfig::default(), FusionMode::Adaptive, Some(dir.path()), false).unwrap();
    assert!(report.sequences.is_empty());
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary, format!("{SUMMARY_HEADER}\n"));
}

fn write_synth(dir: &Path, seed: u64) {
    let out = bin()
        .args(["synth", "--spec", "default", "--seed", &seed.to_string(), "--out"])
        .arg(dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();

    let out = bin().arg("selftest").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).lines().all(|l| l.starts_with("PASS")));

    let out = bin().arg("print-config").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        TrackerConfig::parse(&String::from_utf8_lossy(&out.stdout)).unwrap(),
        TrackerConfig::default()
    );

    let bad = root.join("bad.cfg");
    fs::write(&bad, "mu = -3\n").unwrap();
    assert_eq!(bin().args(["print-config", "--config"]).arg(&bad).output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("track").arg(root.join("missing")).output().unwrap().status.code(), Some(3));
    assert_eq!(
        bin().arg("track").arg(root).args(["--mode", "sideways"]).output().unwrap().status.code(),
        Some(2)
    );
    assert_eq!(
        bin().args(["synth", "--spec"]).arg(root.join("nope.spec")).arg("--out").arg(root.join("x")).output().unwrap().status.code(),
        Some(2)
    );

    let list = root.join("empty.txt");
    fs::write(&list, "# nothing here\n\n").unwrap();
    let out_dir = root.join("empty_out");
    let status = bin().arg("eval").arg(&list).arg("--out").arg(&out_dir).output().unwrap().status;
    assert_eq!(status.code(), Some(0));
    assert_eq!(fs::read_to_string(out_dir.join("summary.csv")).unwrap(), format!("{SUMMARY_HEADER}\n"));
}

#[test]
fn cli_tracks_a_synthetic_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let seq_dir = tmp.path().join("seqs").join("walk");
    let spec_file = tmp.path().join("walk.spec");
    let mut spec = short_spec();
    spec.frames = 6;
    fs::write(&spec_file, spec.to_text()).unwrap();
    let out = bin()
        .args(["synth", "--seed", "5", "--spec"])
        .arg(&spec_file)
        .arg("--out")
        .arg(&seq_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let list = tmp.path().join("seqs").join("list.txt");
    fs::write(&list, "walk\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = bin()
        .arg("eval")
        .arg(&list)
        .args(["--mode", "fixed:0.5", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("walk.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(FRAME_HEADER));
    assert_eq!(lines.count(), 6);
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("walk,") && summary.trim_end().ends_with(",ok"));
}

#[test]
fn default_spec_renders_through_cli() {
    let tmp = tempfile::tempdir().unwrap();
    write_synth(tmp.path(), 1);
    let seq = load_sequence(tmp.path()).unwrap();
    assert_eq!(seq.len(), SynthSpec::default().frames);
    assert_eq!(seq.ground_truth[0], SynthSpec::default().box_at(0));
}
