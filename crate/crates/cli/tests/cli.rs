use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn outadapt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_outadapt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_data(dir: &Path, seed: &str) -> PathBuf {
    let data = dir.join(format!("data{seed}"));
    let out = outadapt(&[
        "gen-data", "--out", s(&data), "--seed", seed, "--size", "16", "--n-source", "4", "--n-target", "4",
        "--n-test", "3",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data
}

const TINY: [&str; 6] = ["--widths", "4,8,8,8,8", "--disc-channels", "8,16,1", "--deterministic", "--steps"];

fn train_tiny(data: &Path, out: &Path, steps: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(data), "--out", s(out)];
    args.extend(TINY);
    args.push(steps);
    args.extend(extra);
    outadapt(&args)
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn count(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "oasd"))
        .count()
}

#[test]
fn gen_data_defaults_and_reproducibility() {
    let tmp = TempDir::new().unwrap();
    let full = tmp.path().join("full");
    let out = outadapt(&["gen-data", "--out", s(&full)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(count(&full.join("source_train")), 200);
    assert_eq!(count(&full.join("target_train")), 200);
    assert_eq!(count(&full.join("target_test")), 50);
    let bytes = fs::read(full.join("target_test").join(fs::read_to_string(full.join("target_test/manifest.txt")).unwrap().lines().next().unwrap())).unwrap();
    assert_eq!(bytes.len(), 11 + 4 * 3 * 48 * 48 + 48 * 48);

    let a = small_data(tmp.path(), "3");
    let b = tmp.path().join("again");
    fs::rename(&a, &b).unwrap();
    let a = small_data(tmp.path(), "3");
    let strip = |fs: Vec<(PathBuf, Vec<u8>)>| fs.into_iter().filter(|(p, _)| !p.ends_with("run_manifest.txt")).collect::<Vec<_>>();
    assert_eq!(strip(files(&a)), strip(files(&b)));
    let c = small_data(tmp.path(), "4");
    assert_ne!(strip(files(&a)), strip(files(&c)));
}

#[test]
fn bad_flags_exit_with_usage_code() {
    let tmp = TempDir::new().unwrap();
    let out = outadapt(&["gen-data", "--out", s(tmp.path()), "--size", "50"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("multiple of 8"), "{}", stderr(&out));
    assert_eq!(code(&outadapt(&["gen-data", "--out", s(tmp.path()), "--classes", "12"])), 2);
    assert_eq!(code(&outadapt(&["train", "--data", "x", "--out", "y", "--mode", "sideways"])), 2);
    assert_eq!(code(&outadapt(&["train", "--data", "x"])), 2);
    assert_eq!(code(&outadapt(&["frobnicate"])), 2);
    assert_eq!(code(&outadapt(&["gradcheck", "--ops", "conv3d"])), 2);
}

#[test]
fn train_writes_artifacts_and_manifest_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path(), "0");
    let run = tmp.path().join("run");
    let out = train_tiny(&data, &run, "4", &["--mode", "multi_level", "--checkpoint-every", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("final losses: seg1="), "{}", stdout(&out));
    for f in ["train_log.csv", "final.oack", "run_manifest.txt", "checkpoint_000002.oack", "checkpoint_000004.oack"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let manifest = fs::read_to_string(run.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("lambda-adv = 0.001,0.0002"), "{manifest}");

    let rerun = tmp.path().join("rerun");
    let config = tmp.path().join("rerun.txt");
    fs::write(&config, manifest.replace(s(&run), s(&rerun))).unwrap();
    let out = outadapt(&["train", "--config", s(&config)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(rerun.join("final.oack")).unwrap(), fs::read(run.join("final.oack")).unwrap());
    assert_eq!(fs::read(rerun.join("train_log.csv")).unwrap(), log.as_bytes());
}

#[test]
fn command_line_overrides_config_file() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path(), "0");
    let run = tmp.path().join("run");
    let config = tmp.path().join("c.txt");
    fs::write(&config, "# sweep point\nsteps = 5\nlambda_adv = 0.002\ndeterministic = true\n").unwrap();
    let mut args = vec!["train", "--config", s(&config), "--data", s(&data), "--out", s(&run), "--steps", "2"];
    args.extend(&TINY[..4]);
    let out = outadapt(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(run.join("train_log.csv")).unwrap().lines().count(), 3);
    let manifest = fs::read_to_string(run.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("lambda-adv = 0.002") && manifest.contains("steps = 2"), "{manifest}");

    fs::write(&config, "colour = blue\n").unwrap();
    assert_eq!(code(&outadapt(&["train", "--config", s(&config), "--data", "x", "--out", "y"])), 2);
    assert_eq!(code(&outadapt(&["train", "--config", "/nonexistent/c.txt", "--data", "x", "--out", "y"])), 3);
}

#[test]
fn numerical_blow_up_exits_with_code_four() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path(), "0");
    let out = train_tiny(&data, &tmp.path().join("run"), "20", &["--g-lr", "1e30"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"), "{}", stderr(&out));
}

#[test]
fn eval_reports_chance_for_untrained_weights_and_gaps() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let out = outadapt(&["gen-data", "--out", s(&data), "--n-source", "2", "--n-target", "2", "--n-test", "20"]);
    assert_eq!(code(&out), 0);
    let run = tmp.path().join("run");
    let out = outadapt(&["train", "--data", s(&data), "--out", s(&run), "--steps", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = run.join("final.oack");

    let out = outadapt(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("class,iou\nroad,"), "{text}");
    let miou: f64 = text.lines().find_map(|l| l.strip_prefix("miou,")).unwrap().parse().unwrap();
    assert!(miou < 0.5, "untrained mIoU {miou}");

    let report = run.join("eval_report.csv");
    let out = outadapt(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&report)]);
    assert_eq!(code(&out), 0);
    let out = outadapt(&[
        "eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--oracle-report", s(&report), "--baseline-report",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let gap_line = stdout(&out).lines().last().unwrap().to_string();
    assert!(gap_line.ends_with(",0.000000"), "{gap_line}");
    assert_eq!(gap_line.split(',').count(), 4);

    let missing = outadapt(&["eval", "--checkpoint", s(&run.join("nope.oack")), "--data", s(&data)]);
    assert_eq!(code(&missing), 3);
    let bad_split = outadapt(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "nowhere"]);
    assert_eq!(code(&bad_split), 3);
}

#[test]
fn gradcheck_passes_filters_and_catches_faults() {
    let out = outadapt(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let table = stdout(&out);
    assert!(table.contains("g_loss_least_squares") && !table.contains("FAIL"));

    let out = outadapt(&["gradcheck", "--ops", "conv2d", "--seed", "4"]);
    assert_eq!(code(&out), 0);
    let rows: Vec<String> = stdout(&out).lines().skip(1).map(str::to_string).collect();
    assert!(rows[..rows.len() - 1].iter().all(|r| r.starts_with("conv2d_")), "{rows:?}");

    let out = outadapt(&["gradcheck", "--ops", "softmax_channels", "--inject-fault", "softmax_channels:1.5"]);
    assert_ne!(code(&out), 0);
    let table = stdout(&out);
    assert!(table.contains("FAIL (coord") && table.contains("analytic"), "{table}");
}

#[test]
fn report_plots_logs_and_compares_modes() {
    let tmp = TempDir::new().unwrap();
    let data = small_data(tmp.path(), "0");
    let mut logs = Vec::new();
    for mode in ["source_only", "feature", "single_level", "multi_level"] {
        let run = tmp.path().join(mode);
        let out = train_tiny(&data, &run, "3", &["--mode", mode]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        logs.push(run.join("train_log.csv"));
    }
    fs::write(tmp.path().join("single_level/eval_report.csv"), "class,iou\nroad,0.5\nmiou,0.5\n").unwrap();
    let mut broken = fs::read_to_string(&logs[0]).unwrap();
    broken.push_str("7,oops\n");
    fs::write(&logs[0], broken).unwrap();

    let report_dir = tmp.path().join("report");
    let mut args = vec!["report", "--out", s(&report_dir), "--deterministic", "--logs"];
    args.extend(logs.iter().map(|p| s(p)));
    let out = outadapt(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("warning") && stderr(&out).contains("row skipped"));

    let summary = fs::read_to_string(report_dir.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "metric,source_only,feature,single_level,multi_level");
    assert_eq!(lines[1], "miou,,,0.500000,");
    assert_eq!(lines[2], "rows,3,3,3,3");

    let svg = fs::read_to_string(report_dir.join("single_level.svg")).unwrap();
    assert!(svg.contains("segmentation loss") && svg.contains("adversarial loss") && svg.contains("discriminator loss"));
    assert!(svg.contains("target mIoU 0.5000"));
    let only = fs::read_to_string(report_dir.join("source_only.svg")).unwrap();
    assert_eq!(only.matches("<polyline").count(), 1);

    let again = tmp.path().join("again");
    let mut args = vec!["report", "--out", s(&again), "--deterministic", "--logs"];
    args.extend(logs.iter().map(|p| s(p)));
    assert_eq!(code(&outadapt(&args)), 0);
    assert_eq!(files(&again), files(&report_dir));
}
