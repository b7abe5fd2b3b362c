use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use outadapt::eval::{evaluate, miou_gap, IoUReport};
use outadapt::gradcheck::{all_passed, format_table, run_suite, Fault};
use outadapt::losses::LossWeights;
use outadapt::synth::{generate, load_dataset, DatasetConfig, DomainStyle, TrainingData};
use outadapt::trainer::{
    self, gan_name, seg_net_from_checkpoint, Checkpoint, StepLog, TrainConfig, Trainer, FINAL_CHECKPOINT, LOG_FILE,
};

use crate::failure::{Failure, EXIT_FAILED};
use crate::manifest::{list, lookup, RunManifest, RUN_MANIFEST};
use crate::report::{parse_log, render_svg, summary_csv, tail_means, unique_labels, RunSummary};
use crate::{EvalArgs, GenDataArgs, GradcheckArgs, ReportArgs, TrainArgs};

/// Report file name that `report` looks for next to each training log.
pub const EVAL_REPORT: &str = "eval_report.csv";

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, &e))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, &e))
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, &e))
}

fn override_style(style: &mut DomainStyle, texture: Option<f32>, noise: Option<f32>, gamma: Option<f32>, brightness: Option<f32>) {
    if let Some(v) = texture {
        style.texture = v;
    }
    if let Some(v) = noise {
        style.noise = v;
    }
    if let Some(v) = gamma {
        style.gamma = v;
    }
    if let Some(v) = brightness {
        style.brightness = v;
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<(), Failure> {
    let mut cfg = DatasetConfig {
        seed: a.seed,
        classes: a.classes,
        height: a.size,
        width: a.size,
        source_train: a.n_source,
        target_train: a.n_target,
        target_test: a.n_test,
        ..DatasetConfig::default()
    };
    override_style(&mut cfg.source_style, a.source_texture, a.source_noise, a.source_gamma, a.source_brightness);
    override_style(&mut cfg.target_style, a.target_texture, a.target_noise, a.target_gamma, a.target_brightness);
    cfg.validate()?;
    let pair = generate(&cfg)?;
    create_dir(&a.out)?;
    pair.write(&a.out)?;
    let mut m = RunManifest::new("gen-data", cfg.seed);
    m.set("out", a.out.display())
        .set("classes", cfg.classes)
        .set("size", a.size)
        .set("n-source", cfg.source_train)
        .set("n-target", cfg.target_train)
        .set("n-test", cfg.target_test);
    for (prefix, s) in [("source", &cfg.source_style), ("target", &cfg.target_style)] {
        m.set(&format!("{prefix}-texture"), s.texture)
            .set(&format!("{prefix}-noise"), s.noise)
            .set(&format!("{prefix}-gamma"), s.gamma)
            .set(&format!("{prefix}-brightness"), s.brightness);
    }
    for split in [outadapt::synth::SOURCE_TRAIN, outadapt::synth::TARGET_TRAIN, outadapt::synth::TARGET_TEST] {
        m.artifact(split, a.out.join(split));
    }
    m.write(&a.out)?;
    println!(
        "wrote {} source, {} target and {} test samples ({}x{}, {} classes) to {}",
        cfg.source_train,
        cfg.target_train,
        cfg.target_test,
        cfg.height,
        cfg.width,
        cfg.classes,
        a.out.display()
    );
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::for_mode(a.mode);
    let levels = a.mode.seg_levels();
    if let Some(adv) = &a.lambda_adv {
        match adv.len() {
            1 => cfg = cfg.with_lambda_adv(adv[0]),
            n if n == levels => cfg.weights.lambda_adv = adv.clone(),
            n => return Err(Failure::usage(format!("--lambda-adv has {n} values; {} takes 1 or {levels}", a.mode))),
        }
    }
    if let Some(seg) = &a.lambda_seg {
        if seg.len() != levels {
            return Err(Failure::usage(format!("--lambda-seg has {} values; {} takes {levels}", seg.len(), a.mode)));
        }
        cfg.weights.lambda_seg = seg.clone();
    }
    cfg.gan = a.gan;
    cfg.seed = a.seed;
    cfg.checkpoint_every = a.checkpoint_every;
    cfg.deterministic = a.deterministic;
    if let Some(v) = a.steps {
        cfg.total_steps = v;
    }
    if let Some(v) = a.g_lr {
        cfg.g_lr = v;
    }
    if let Some(v) = a.d_lr {
        cfg.d_lr = v;
    }
    if let Some(w) = &a.widths {
        cfg.widths = w
            .as_slice()
            .try_into()
            .map_err(|_| Failure::usage(format!("--widths needs 5 values, got {}", w.len())))?;
    }
    if let Some(c) = &a.disc_channels {
        cfg.disc_channels = c.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_manifest(a: &TrainArgs, cfg: &TrainConfig) -> RunManifest {
    let LossWeights { lambda_seg, lambda_adv } = &cfg.weights;
    let mut m = RunManifest::new("train", cfg.seed);
    m.set("data", a.data.display())
        .set("out", a.out.display())
        .set("mode", cfg.mode)
        .set("gan", gan_name(cfg.gan))
        .set("lambda-seg", list(lambda_seg))
        .set("lambda-adv", list(lambda_adv))
        .set("steps", cfg.total_steps)
        .set("g-lr", cfg.g_lr)
        .set("d-lr", cfg.d_lr)
        .set("checkpoint-every", cfg.checkpoint_every)
        .set("widths", list(&cfg.widths))
        .set("disc-channels", list(&cfg.disc_channels))
        .set("deterministic", cfg.deterministic);
    if let Some(r) = &a.resume {
        m.set("resume", r.display()).set("force", a.force);
    }
    m.artifact("log", a.out.join(LOG_FILE))
        .artifact("checkpoint", a.out.join(FINAL_CHECKPOINT));
    m
}

fn describe(log: &StepLog) -> String {
    let mut parts = Vec::new();
    for (name, vals) in [("seg", log.seg), ("adv", log.adv), ("d", log.d)] {
        for (i, v) in vals.iter().enumerate() {
            if let Some(v) = v {
                parts.push(format!("{name}{}={v:.4}", i + 1));
            }
        }
    }
    parts.join(" ")
}

pub fn train(a: &TrainArgs) -> Result<(), Failure> {
    let cfg = train_config(a)?;
    let data = TrainingData::load(&a.data)?;
    create_dir(&a.out)?;
    train_manifest(a, &cfg).write(&a.out)?;
    let classes = trainer::data_classes(&data)?;
    let start = Instant::now();
    let outcome = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let t = Trainer::from_checkpoint(cfg.clone(), classes, &ckpt, a.force)?;
            trainer::resume(t, &data, Some(&a.out))?
        }
        None => trainer::train(&cfg, &data, Some(&a.out))?,
    };
    let last = outcome.logs.last().map(describe).unwrap_or_else(|| "no steps run".into());
    println!(
        "trained {} to step {} ({}) in {:.1}s",
        cfg.mode,
        outcome.trainer.step_count(),
        gan_name(cfg.gan),
        start.elapsed().as_secs_f64()
    );
    println!("final losses: {last}");
    println!("artifacts in {}", a.out.display());
    Ok(())
}

fn read_report(path: &Path) -> Result<IoUReport, Failure> {
    Ok(IoUReport::from_csv(&read_file(path)?)?)
}

pub fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let samples = load_dataset(&a.data.join(&a.split))?;
    let classes = samples
        .first()
        .map(|s| s.classes)
        .ok_or_else(|| Failure::usage(format!("split {} under {} is empty", a.split, a.data.display())))?;
    let net = seg_net_from_checkpoint(&ckpt, classes)?;
    let report = evaluate(&net, &samples)?;
    let mut text = report.to_csv();
    if let Some(oracle_path) = &a.oracle_report {
        let oracle = read_report(oracle_path)?;
        let gap = miou_gap(&report, &oracle)?;
        let baseline = match &a.baseline_report {
            Some(p) => {
                let b = read_report(p)?;
                miou_gap(&b, &oracle)?;
                format!("{:.6}", b.miou_value())
            }
            None => String::new(),
        };
        text.push_str(&format!(
            "\nbaseline,adapted,oracle,gap\n{baseline},{:.6},{:.6},{gap:.6}\n",
            report.miou_value(),
            oracle.miou_value()
        ));
    }
    match &a.out {
        Some(path) => {
            write_file(path, &text)?;
            println!("mIoU {:.4} over {} images; report in {}", report.miou_value(), report.images, path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_fault(spec: &str) -> Result<Fault, Failure> {
    let (case, scale) = match spec.split_once(':') {
        Some((c, s)) => (c, s.parse::<f32>().map_err(|_| Failure::usage(format!("bad fault scale {s:?}")))?),
        None => (spec, 1.5),
    };
    Ok(Fault {
        case: case.to_string(),
        scale,
    })
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    let fault = a.inject_fault.as_deref().map(parse_fault).transpose()?;
    let start = Instant::now();
    let reports = run_suite(&a.seed, a.ops.as_deref(), fault.as_ref())?;
    print!("{}", format_table(&reports));
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!(
        "{} of {} checks passed in {:.2}s",
        reports.len() - failed,
        reports.len(),
        start.elapsed().as_secs_f64()
    );
    if all_passed(&reports) {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_FAILED,
            message: format!("{failed} gradient checks failed"),
        })
    }
}

/// Mode from the run manifest next to the log, else the directory name.
fn run_label(log: &Path) -> String {
    let dir = log.parent().unwrap_or(Path::new("."));
    fs::read_to_string(dir.join(RUN_MANIFEST))
        .ok()
        .and_then(|t| lookup(&t, "mode"))
        .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "run".to_string())
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

pub fn report(a: &ReportArgs) -> Result<(), Failure> {
    create_dir(&a.out)?;
    let timestamp = (!a.deterministic).then(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let labels = unique_labels(a.logs.iter().map(|p| run_label(p)).collect());
    let mut runs = Vec::new();
    for (path, label) in a.logs.iter().zip(labels) {
        let text = read_file(path)?;
        let origin = path.display().to_string();
        let rows = parse_log(&text, &origin, &mut |w| eprintln!("warning: {w}"));
        let eval_path = path.parent().unwrap_or(Path::new(".")).join(EVAL_REPORT);
        let miou = match fs::read_to_string(&eval_path) {
            Ok(t) => match IoUReport::from_csv(&t) {
                Ok(r) => r.miou,
                Err(e) => {
                    eprintln!("warning: {}: {e}; mIoU left empty", eval_path.display());
                    None
                }
            },
            Err(_) => None,
        };
        let title = match miou {
            Some(m) => format!("{label} (target mIoU {m:.4})"),
            None => label.clone(),
        };
        let svg_path = a.out.join(format!("{}.svg", file_stem(&label)));
        write_file(&svg_path, &render_svg(&title, &rows, timestamp))?;
        runs.push(RunSummary {
            label,
            rows: rows.len(),
            miou,
            tail: tail_means(&rows),
        });
    }
    let summary = a.out.join("summary.csv");
    write_file(&summary, &summary_csv(&runs))?;
    println!("wrote {} curve plots and {}", runs.len(), summary.display());
    Ok(())
}
