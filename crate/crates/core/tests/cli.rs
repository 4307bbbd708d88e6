use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_bsc");

fn bsc(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn make_toy(dir: &Path, videos: usize, contrast: &str) {
    let out = bsc(&["make-toy", "--out", dir.to_str().unwrap(), "--videos", &videos.to_string(), "--contrast", contrast]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["videos"], videos);
    assert_eq!(v["oracle"], "builtin:0");
}

const FAST: &[&str] = &["--batch", "16", "--max-queries", "96"];

#[test]
fn make_toy_writes_clips_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    make_toy(dir.path(), 3, "11");
    let labels = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
    let lines: Vec<&str> = labels.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], "video_000.vten,0");
    assert_eq!(lines[3], "video_002.vten,2");
    let clip = bsc_attack::tensor_io::load_video(dir.path().join("video_001.vten")).unwrap();
    assert_eq!(clip.dims(), [16, 64, 64, 3]);
}

#[test]
fn attack_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    make_toy(dir.path(), 2, "4");
    let video = dir.path().join("video_001.vten");
    let adv = dir.path().join("adv.vten");
    let args = ["attack", "--video", video.to_str().unwrap(), "--label", "1", "--out", adv.to_str().unwrap(), "--seed", "5"];
    let first = bsc(&[&args[..], FAST].concat());
    let second = bsc(&[&args[..], FAST, &["--threads", "2"]].concat());
    assert_eq!(first.stdout, second.stdout);
    let v = stdout_json(&first);
    assert_eq!(v["seed"], 5);
    assert_eq!(v["oracle_calls"].as_u64().unwrap(), v["queries"].as_u64().unwrap() + 1);
    let success = v["success"].as_bool().unwrap();
    assert_eq!(first.status.code(), Some(if success { 0 } else { 1 }));
    assert_eq!(adv.exists(), success);
}

#[test]
fn wrong_label_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    make_toy(dir.path(), 2, "11");
    let video = dir.path().join("video_001.vten");
    let out = bsc(&["attack", "--video", video.to_str().unwrap(), "--label", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn eval_on_empty_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bsc(&["eval", "--dataset", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_writes_csv_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_toy(&data, 3, "4");
    let csv = dir.path().join("rows.csv");
    let base = ["eval", "--dataset", data.to_str().unwrap(), "--out", csv.to_str().unwrap()];
    let out = bsc(&[&base[..], FAST].concat());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["n"], 3);
    let full = std::fs::read_to_string(&csv).unwrap();
    assert!(full.starts_with("video,success,queries,aoa,aoa_star,r_attack\n"));
    assert_eq!(full.lines().count(), 4);

    // Drop the last row and resume; the finished rows are kept and the missing one is recomputed.
    let partial: String = full.lines().take(3).map(|l| format!("{l}\n")).collect();
    std::fs::write(&csv, partial).unwrap();
    let again = bsc(&[&base[..], FAST, &["--resume"]].concat());
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), full);

    let to_stdout = bsc(&[&["eval", "--dataset", data.to_str().unwrap()][..], FAST].concat());
    assert_eq!(String::from_utf8(to_stdout.stdout).unwrap(), full);
    let err_summary: Value = serde_json::from_slice(to_stdout.stderr.trim_ascii()).unwrap();
    assert_eq!(err_summary, summary);
}

#[test]
fn grid_emits_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    make_toy(dir.path(), 2, "4");
    let out = bsc(&[&["grid", "--axis", "m", "--values", "2,3,4,5,6", "--dataset", dir.path().to_str().unwrap()][..], FAST].concat());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "axis,value,fr,aoa,aoa_star,aqn,n,skipped,seed");
    assert_eq!(lines.len(), 6);
    for (line, m) in lines[1..].iter().zip(2..) {
        assert!(line.starts_with(&format!("m,{m},")), "{line}");
    }
}

#[test]
fn export_writes_frames() {
    let dir = tempfile::tempdir().unwrap();
    make_toy(dir.path(), 1, "11");
    let frames = dir.path().join("frames");
    let out = bsc(&["export", "--video", dir.path().join("video_000.vten").to_str().unwrap(), "--out", frames.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["frames"], 16);
    assert!(frames.join("frame_0015.ppm").exists());
}

#[test]
fn serve_check_builtin_and_subprocess() {
    let out = bsc(&["serve-check", "--oracle", "builtin:3", "--dims", "4,8,8,1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["backend"], "builtin");
    assert_eq!(v["K"], 8);
    assert_eq!(v["dims"], serde_json::json!([4, 8, 8, 1]));

    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/oracle_server.py");
    let cmd = format!("cmd:python3 {script} mean 5 2 6 6 3");
    let out = bsc(&["serve-check", "--oracle", &cmd, "--dims", "2,6,6,3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["K"], 5);

    let out = bsc(&["serve-check", "--oracle", &cmd, "--dims", "2,6,7,3"]);
    assert_eq!(out.status.code(), Some(3));
    let out = bsc(&["serve-check", "--oracle", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_defaults_for_every_flag() {
    for sub in ["attack", "eval", "grid", "make-toy", "serve-check"] {
        let out = bsc(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0));
        let help = String::from_utf8(out.stdout).unwrap();
        for line in help.lines().map(str::trim_start).filter(|l| l.starts_with("--")) {
            let flag = line.split_whitespace().next().unwrap();
            if ["--help", "--video", "--label", "--dataset", "--out", "--axis", "--values"].contains(&flag) {
                continue;
            }
            // clap prints the description on the same line or the next one.
            let block: String = help
                .split(line)
                .nth(1)
                .unwrap()
                .lines()
                .take(2)
                .collect::<Vec<_>>()
                .join(" ");
            assert!(line.contains("[default") || block.contains("[default"), "{sub} {flag}: {line}");
        }
    }
    let out = bsc(&["attack", "--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in ["--m", "--font-size", "--lambda", "--font", "--batch", "--max-queries", "--strategy", "--match-queries", "--seed", "--text", "--text-file", "--caption", "--color", "--baseline", "--saliency", "--quantile", "--config", "--threads", "--oracle", "--oracle-timeout"] {
        assert!(help.contains(flag), "{flag}");
    }
    assert!(help.contains("[default: 4]") && help.contains("[default: 9]") && help.contains("[default: 0.001]"));
}
