//! Confusion matrices, per-class IoU and mIoU.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::losses::IGNORE_LABEL;
use crate::networks::SegNet;
use crate::synth::{Sample, CLASS_NAMES};
use crate::tensor::Tensor;

/// Environment variable holding the number of evaluation threads.
pub const THREADS_ENV: &str = "OUTADAPT_THREADS";

/// Entry (i, j) counts pixels with ground truth i predicted as j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one (prediction, ground truth) pair of equal-length class maps.
    pub fn add_labels(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::shape(
                "confusion",
                format!("{} predictions for {} labels", pred.len(), truth.len()),
            ));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            if t == IGNORE_LABEL {
                continue;
            }
            let (p, t) = (usize::from(p), usize::from(t));
            if t >= self.classes || p >= self.classes {
                return Err(Error::Data(format!(
                    "label {t} or prediction {p} outside {} classes",
                    self.classes
                )));
            }
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    /// Adds the argmax of a C×H×W (or 1×C×H×W) probability map.
    pub fn accumulate(&mut self, probs: &Tensor, truth: &[u8]) -> Result<()> {
        let pred = argmax_channels(probs)?;
        let c = probs.dims()[probs.dims().len() - 3];
        if c != self.classes {
            return Err(Error::shape(
                "confusion",
                format!("{c} channels for {} classes", self.classes),
            ));
        }
        self.add_labels(&pred, truth)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape(
                "confusion",
                format!("merging {} into {} classes", other.classes, self.classes),
            ));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Per-pixel argmax over channels; ties go to the lowest class index.
pub fn argmax_channels(probs: &Tensor) -> Result<Vec<u8>> {
    let dims = probs.dims();
    let (c, hw) = match *dims {
        [c, h, w] | [1, c, h, w] => (c, h * w),
        _ => {
            return Err(Error::shape(
                "argmax",
                format!("expected C×H×W or 1×C×H×W, got {dims:?}"),
            ))
        }
    };
    if c > 256 {
        return Err(Error::shape("argmax", format!("{c} classes do not fit u8")));
    }
    let data = probs.data();
    Ok((0..hw)
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if data[k * hw + i] > data[best * hw + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IoUReport {
    /// IoU per class, `None` when the class is absent from both truth and
    /// prediction.
    pub per_class: Vec<Option<f64>>,
    /// Mean over defined classes; `None` if no class is defined.
    pub miou: Option<f64>,
    pub images: usize,
}

impl IoUReport {
    /// mIoU, or 0 when no class is defined.
    pub fn miou_value(&self) -> f64 {
        self.miou.unwrap_or(0.0)
    }

    /// `class,iou` rows followed by a `miou` row; undefined values are empty.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut out = String::from("class,iou\n");
        for (c, iou) in self.per_class.iter().enumerate() {
            let name = CLASS_NAMES.get(c).copied().unwrap_or("class");
            writeln!(out, "{name},{}", fmt(*iou)).expect("write to string");
        }
        writeln!(out, "miou,{}", fmt(self.miou)).expect("write to string");
        out
    }

    /// Parses the `class,iou` block written by [`IoUReport::to_csv`]. Reading
    /// stops at the first blank line; the image count is not stored and
    /// comes back as 0.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("class,iou") {
            return Err(Error::Data("report does not start with a class,iou header".into()));
        }
        let parse = |v: &str| -> Result<Option<f64>> {
            let v = v.trim();
            if v.is_empty() {
                return Ok(None);
            }
            v.parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Data(format!("bad IoU value {v:?}")))
        };
        let mut per_class = Vec::new();
        let mut miou = None;
        for line in lines.take_while(|l| !l.trim().is_empty()) {
            let (name, value) = line
                .split_once(',')
                .ok_or_else(|| Error::Data(format!("malformed report row {line:?}")))?;
            if name == "miou" {
                miou = Some(parse(value)?);
            } else {
                per_class.push(parse(value)?);
            }
        }
        let miou = miou.ok_or_else(|| Error::Data("report lacks a miou row".into()))?;
        Ok(IoUReport {
            per_class,
            miou,
            images: 0,
        })
    }
}

/// IoU_c = TP / (TP + FP + FN).
pub fn iou_report(cm: &ConfusionMatrix, images: usize) -> IoUReport {
    let c = cm.classes();
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let row: u64 = (0..c).map(|j| cm.get(k, j)).sum();
            let col: u64 = (0..c).map(|i| cm.get(i, k)).sum();
            let denom = row + col - tp;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    IoUReport {
        per_class,
        miou,
        images,
    }
}

/// Adapted mIoU minus oracle mIoU.
pub fn miou_gap(adapted: &IoUReport, oracle: &IoUReport) -> Result<f64> {
    if adapted.per_class.len() != oracle.per_class.len() {
        return Err(Error::Config(format!(
            "reports cover {} and {} classes",
            adapted.per_class.len(),
            oracle.per_class.len()
        )));
    }
    Ok(adapted.miou_value() - oracle.miou_value())
}

/// `baseline,adapted,oracle,gap` with gap = adapted − oracle.
pub fn gap_csv(baseline: &IoUReport, adapted: &IoUReport, oracle: &IoUReport) -> Result<String> {
    let gap = miou_gap(adapted, oracle)?;
    miou_gap(baseline, oracle)?;
    Ok(format!(
        "baseline,adapted,oracle,gap\n{:.6},{:.6},{:.6},{:.6}\n",
        baseline.miou_value(),
        adapted.miou_value(),
        oracle.miou_value(),
        gap
    ))
}

/// Thread count from [`THREADS_ENV`], defaulting to 1.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

fn confusion_of(net: &SegNet, samples: &[Sample]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(net.spec().classes);
    for s in samples {
        let p = net.predict(&s.batch_image())?;
        cm.accumulate(&p, &s.labels)?;
    }
    Ok(cm)
}

/// Level-1 predictions of `net` on `samples`, sharded over `threads`.
pub fn evaluate_with_threads(net: &SegNet, samples: &[Sample], threads: usize) -> Result<IoUReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let threads = threads.clamp(1, samples.len());
    let cm = if threads == 1 {
        confusion_of(net, samples)?
    } else {
        let chunk = samples.len().div_ceil(threads);
        let parts: Vec<Result<ConfusionMatrix>> = std::thread::scope(|scope| {
            let handles: Vec<_> = samples
                .chunks(chunk)
                .map(|part| scope.spawn(move || confusion_of(net, part)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation thread panicked"))
                .collect()
        });
        let mut cm = ConfusionMatrix::new(net.spec().classes);
        for part in parts {
            cm.merge(&part?)?;
        }
        cm
    };
    Ok(iou_report(&cm, samples.len()))
}

/// [`evaluate_with_threads`] using the thread count from the environment.
pub fn evaluate(net: &SegNet, samples: &[Sample]) -> Result<IoUReport> {
    evaluate_with_threads(net, samples, threads_from_env())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::SegNetSpec;
    use crate::synth::{generate, DatasetConfig};

    fn cm_from(pred: &[u8], truth: &[u8], c: usize) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::new(c);
        cm.add_labels(pred, truth).unwrap();
        cm
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let labels: Vec<u8> = (0..16).map(|i| (i % 2) as u8).collect();
        let cm = cm_from(&labels, &labels, 2);
        assert_eq!(cm.get(0, 0) + cm.get(1, 1), 16);
        assert_eq!(cm.get(0, 1) + cm.get(1, 0), 0);
        let r = iou_report(&cm, 1);
        assert_eq!(r.per_class, vec![Some(1.0), Some(1.0)]);
        assert_eq!(r.miou, Some(1.0));
    }

    #[test]
    fn ignored_pixels_are_skipped() {
        let cm = cm_from(&[0, 1, 1], &[255, 255, 255], 2);
        assert_eq!(cm, ConfusionMatrix::new(2));
    }

    #[test]
    fn hand_counted_example() {
        let cm = cm_from(&[0, 1, 1, 1], &[0, 0, 1, 1], 2);
        assert_eq!(
            [cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)],
            [1, 1, 0, 2]
        );
        let r = iou_report(&cm, 1);
        assert_eq!(r.per_class, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((r.miou.unwrap() - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_excluded() {
        let cm = cm_from(&[0, 0, 2], &[0, 0, 2], 3);
        let r = iou_report(&cm, 1);
        assert_eq!(r.per_class, vec![Some(1.0), None, Some(1.0)]);
        assert_eq!(r.miou, Some(1.0));
        assert_eq!(r.to_csv(), "class,iou\nroad,1.000000\nsky,\nbuilding,1.000000\nmiou,1.000000\n");
        let back = IoUReport::from_csv(&r.to_csv()).unwrap();
        assert_eq!(back, IoUReport { images: 0, ..r });
        assert!(IoUReport::from_csv("class,iou\nroad,x\nmiou,\n").is_err());
        assert!(IoUReport::from_csv("road,1\n").is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let p = Tensor::from_vec([1, 3, 1, 2], vec![0.4, 0.2, 0.4, 0.4, 0.2, 0.4]).unwrap();
        assert_eq!(argmax_channels(&p).unwrap(), vec![0, 1]);
    }

    fn report(miou: f64) -> IoUReport {
        IoUReport {
            per_class: vec![Some(miou)],
            miou: Some(miou),
            images: 1,
        }
    }

    #[test]
    fn gap_signs() {
        let gap = miou_gap(&report(0.424), &report(0.651)).unwrap();
        assert!((gap + 0.227).abs() < 1e-12);
        let gap = miou_gap(&report(0.350), &report(0.618)).unwrap();
        assert!((gap + 0.268).abs() < 1e-12);
        assert_eq!(miou_gap(&report(0.5), &report(0.5)).unwrap(), 0.0);
        let two = IoUReport {
            per_class: vec![Some(0.5), None],
            ..report(0.5)
        };
        assert!(miou_gap(&two, &report(0.5)).is_err());
        let csv = gap_csv(&report(0.3), &report(0.424), &report(0.651)).unwrap();
        assert_eq!(csv, "baseline,adapted,oracle,gap\n0.300000,0.424000,0.651000,-0.227000\n");
    }

    #[test]
    fn sharding_matches_sequential() {
        let pair = generate(&DatasetConfig {
            source_train: 0,
            target_train: 0,
            target_test: 5,
            ..DatasetConfig::default()
        })
        .unwrap();
        let net = SegNet::new(SegNetSpec::new(4), 3).unwrap();
        let one = evaluate_with_threads(&net, &pair.target_test, 1).unwrap();
        let three = evaluate_with_threads(&net, &pair.target_test, 3).unwrap();
        assert_eq!(one, three);
        assert_eq!(one.images, 5);
        assert!(evaluate_with_threads(&net, &[], 1).is_err());
    }
}
