//! Central finite-difference checks of every differentiable op, the losses
//! and the composite G objective of the trainer.

use std::fmt::Write as _;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{self, DomainLabel, GanObjective, LossWeights};
use crate::synth::{Sample, UnlabeledImage};
use crate::tensor::{Tape, Tensor, Var};

mod reference;

use reference::Arr;
use crate::trainer::{pixel_scale, AdaptMode, TrainConfig, Trainer};

pub const FD_STEP: f32 = 1e-3;
pub const REL_TOL: f64 = 1e-2;
pub const ABS_TOL: f64 = 1e-4;
/// Coordinates checked per case and seed (all of them if fewer exist).
pub const MIN_COORDS: usize = 20;
/// One-sided slopes differing by more than this many tolerances mark a
/// kink inside the step; such coordinates are replaced by fresh ones. A
/// smaller gap moves the central difference by less than one tolerance.
pub const KINK_FACTOR: f64 = 2.0;
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

/// Multiplies the analytic gradient of one case by `scale`, simulating a
/// broken backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub case: String,
    pub scale: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Worst {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub case: &'static str,
    pub seed: u64,
    pub checked: usize,
    /// Coordinates skipped because the function has a kink within one step.
    pub skipped: usize,
    pub max_abs_err: f64,
    /// Relative forward mismatch against the f64 reference, for op cases.
    pub forward_err: Option<f64>,
    /// Largest ratio of error to allowed error; at most 1 when passing.
    pub max_violation: f64,
    pub worst: Option<Worst>,
    pub passed: bool,
}

fn allowed(a: f64, n: f64) -> f64 {
    ABS_TOL.max(REL_TOL * a.abs().max(n.abs()))
}

/// Compares `analytic` against central differences of `eval` at `x0`.
/// Coordinates are drawn round-robin from `groups`, so every group is
/// represented.
pub fn check_coordinates(
    case: &'static str,
    seed: u64,
    x0: &[f32],
    analytic: &[f32],
    groups: &[Range<usize>],
    mut eval: impl FnMut(&[f32]) -> Result<f64>,
) -> Result<CaseReport> {
    if analytic.len() != x0.len() {
        return Err(Error::shape(
            "gradcheck",
            format!("{} gradient entries for {} coordinates", analytic.len(), x0.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let mut pools: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| {
            let mut v: Vec<usize> = g.clone().collect();
            v.shuffle(&mut rng);
            v
        })
        .collect();

    let f0 = eval(x0)?;
    let mut x = x0.to_vec();
    let mut report = CaseReport {
        case,
        seed,
        checked: 0,
        skipped: 0,
        max_abs_err: 0.0,
        forward_err: None,
        max_violation: 0.0,
        worst: None,
        passed: true,
    };
    while report.checked < MIN_COORDS && pools.iter().any(|p| !p.is_empty()) {
        for pool in &mut pools {
            let Some(i) = pool.pop() else { continue };
            let (lo, hi) = (x0[i] - FD_STEP, x0[i] + FD_STEP);
            x[i] = hi;
            let fp = eval(&x)?;
            x[i] = lo;
            let fm = eval(&x)?;
            x[i] = x0[i];
            let (up, down) = (f64::from(hi) - f64::from(x0[i]), f64::from(x0[i]) - f64::from(lo));
            let numeric = (fp - fm) / (up + down);
            let (fwd, bwd) = ((fp - f0) / up, (f0 - fm) / down);
            if (fwd - bwd).abs() > KINK_FACTOR * allowed(fwd, bwd) {
                report.skipped += 1;
                continue;
            }
            let a = f64::from(analytic[i]);
            let err = (a - numeric).abs();
            let violation = err / allowed(a, numeric);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(err);
            if violation >= report.max_violation {
                report.max_violation = violation;
                report.worst = Some(Worst {
                    coord: i,
                    analytic: a,
                    numeric,
                });
            }
            if report.checked >= MIN_COORDS {
                break;
            }
        }
    }
    let available: usize = groups.iter().map(ExactSizeIterator::len).sum();
    report.passed = report.checked >= MIN_COORDS.min(available) && report.max_violation <= 1.0;
    Ok(report)
}

type Build = fn(&mut Tape, &[Var], &Aux) -> Result<Var>;
type Reference = fn(&[Arr], &Aux) -> Arr;

/// Constants a case needs besides its checked inputs.
struct Aux {
    weights: Vec<Tensor>,
    labels: Vec<u8>,
}

struct OpCase {
    name: &'static str,
    inputs: Vec<Tensor>,
    aux: Aux,
    build: Build,
    reference: Reference,
}

/// Largest allowed |f32 − f64| between an op and its reference, relative
/// to max(1, |reference|).
pub const FORWARD_TOL: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(dims.to_vec(), data).expect("valid dims")
}

/// Values bounded away from zero, where leaky ReLU is smooth.
fn away_from_zero(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let mut t = uniform(rng, dims, 0.05, 1.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Σ r⊙y with a fixed random `r`, turning any output into a scalar.
fn project(tape: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let r = tape.constant_owned(r.shape().clone(), r.data().to_vec())?;
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

fn project_f64(y: &[f64], r: &Tensor) -> f64 {
    y.iter().zip(r.data()).map(|(&a, &b)| a * f64::from(b)).sum()
}

fn no_aux() -> Aux {
    Aux {
        weights: vec![],
        labels: vec![],
    }
}

fn conv_case(
    name: &'static str,
    rng: &mut ChaCha8Rng,
    input: [usize; 4],
    kernel: usize,
    out: usize,
    build: Build,
    reference: Reference,
) -> OpCase {
    let x = uniform(rng, &input, -1.0, 1.0);
    let w = uniform(rng, &[out, input[1], kernel, kernel], -0.5, 0.5);
    let b = uniform(rng, &[out], -0.5, 0.5);
    OpCase {
        name,
        inputs: vec![x, w, b],
        aux: no_aux(),
        build,
        reference,
    }
}

macro_rules! conv {
    ($name:expr, $rng:expr, $input:expr, $k:expr, $out:expr, $s:expr, $p:expr, $d:expr) => {
        conv_case(
            $name,
            $rng,
            $input,
            $k,
            $out,
            |t, v, _| t.conv2d(v[0], v[1], v[2], $s, $p, $d),
            |a, _| reference::conv2d(&a[0], &a[1], &a[2], $s, $p, $d),
        )
    };
}

fn sigmas(rng: &mut ChaCha8Rng, dims: &[usize], count: usize) -> Vec<Tensor> {
    (0..count).map(|_| uniform(rng, dims, 0.2, 0.8)).collect()
}

const SOURCE_Z: [f64; 1] = [1.0];
const TARGET_Z: [f64; 1] = [0.0];
const BATCH: [DomainLabel; 2] = [DomainLabel::Source, DomainLabel::Target];
const BATCH_Z: [f64; 2] = [1.0, 0.0];

fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut cases = vec![
        conv!("conv2d_k3_s2", rng, [1, 2, 8, 8], 3, 3, 2, 1, 1),
        conv!("conv2d_k3_s1", rng, [1, 2, 5, 5], 3, 3, 1, 1, 1),
        conv!("conv2d_k3_d2", rng, [1, 2, 6, 6], 3, 2, 1, 2, 2),
        conv!("conv2d_k3_d4", rng, [1, 2, 9, 9], 3, 2, 1, 4, 4),
        conv!("conv2d_k4_s2", rng, [1, 2, 6, 6], 4, 3, 2, 1, 1),
        conv!("conv2d_k4_s2_batch", rng, [2, 3, 8, 8], 4, 2, 2, 1, 1),
    ];
    cases.push(OpCase {
        name: "leaky_relu",
        inputs: vec![away_from_zero(rng, &[1, 2, 4, 4])],
        aux: no_aux(),
        build: |t, v, _| t.leaky_relu(v[0], 0.2),
        reference: |a, _| reference::leaky_relu(&a[0], 0.2),
    });
    cases.push(OpCase {
        name: "sigmoid",
        inputs: vec![uniform(rng, &[1, 2, 4, 4], -3.0, 3.0)],
        aux: no_aux(),
        build: |t, v, _| t.sigmoid(v[0]),
        reference: |a, _| reference::sigmoid(&a[0]),
    });
    cases.push(OpCase {
        name: "softmax_channels",
        inputs: vec![uniform(rng, &[1, 4, 3, 3], -2.0, 2.0)],
        aux: no_aux(),
        build: |t, v, _| t.softmax_channels(v[0]),
        reference: |a, _| reference::softmax_channels(&a[0]),
    });
    cases.push(OpCase {
        name: "upsample_bilinear",
        inputs: vec![uniform(rng, &[2, 2, 3, 3], -1.0, 1.0)],
        aux: no_aux(),
        build: |t, v, _| t.upsample_bilinear(v[0], 7, 9),
        reference: |a, _| reference::upsample_bilinear(&a[0], 7, 9),
    });
    cases.push(OpCase {
        name: "upsample_bilinear_x8",
        inputs: vec![uniform(rng, &[2, 3, 2, 2], -1.0, 1.0)],
        aux: no_aux(),
        build: |t, v, _| t.upsample_bilinear(v[0], 16, 16),
        reference: |a, _| reference::upsample_bilinear(&a[0], 16, 16),
    });

    let logits = uniform(rng, &[2, 3, 3, 4], -2.0, 2.0);
    let mut labels: Vec<u8> = (0..24).map(|_| rng.random_range(0..3u8)).collect();
    labels[5] = losses::IGNORE_LABEL;
    cases.push(OpCase {
        name: "seg_loss",
        inputs: vec![logits],
        aux: Aux {
            weights: vec![],
            labels,
        },
        build: |t, v, a| {
            let p = t.softmax_channels(v[0])?;
            losses::seg_loss(t, p, &a.labels)
        },
        reference: |x, a| {
            let p = reference::softmax_channels(&x[0]);
            Arr::scalar(reference::seg_loss(&p, &a.labels, losses::IGNORE_LABEL))
        },
    });
    cases.push(OpCase {
        name: "disc_loss",
        inputs: sigmas(rng, &[1, 1, 4, 4], 2),
        aux: no_aux(),
        build: |t, v, _| {
            let s = losses::disc_loss(t, v[0], DomainLabel::Source)?;
            let d = losses::disc_loss(t, v[1], DomainLabel::Target)?;
            t.add(s, d)
        },
        reference: |x, _| {
            Arr::scalar(reference::disc_loss(&x[0], &SOURCE_Z) + reference::disc_loss(&x[1], &TARGET_Z))
        },
    });
    cases.push(OpCase {
        name: "adv_loss",
        inputs: sigmas(rng, &[1, 1, 5, 5], 1),
        aux: no_aux(),
        build: |t, v, _| losses::adv_loss(t, v[0]),
        reference: |x, _| Arr::scalar(reference::disc_loss(&x[0], &SOURCE_Z)),
    });
    cases.push(OpCase {
        name: "ls_disc_loss",
        inputs: sigmas(rng, &[1, 1, 4, 4], 2),
        aux: no_aux(),
        build: |t, v, _| {
            let s = losses::ls_disc_loss(t, v[0], DomainLabel::Source)?;
            let d = losses::ls_disc_loss(t, v[1], DomainLabel::Target)?;
            t.add(s, d)
        },
        reference: |x, _| {
            Arr::scalar(reference::ls_disc_loss(&x[0], &SOURCE_Z) + reference::ls_disc_loss(&x[1], &TARGET_Z))
        },
    });
    cases.push(OpCase {
        name: "ls_adv_loss",
        inputs: sigmas(rng, &[1, 1, 5, 5], 1),
        aux: no_aux(),
        build: |t, v, _| losses::ls_adv_loss(t, v[0]),
        reference: |x, _| Arr::scalar(reference::ls_disc_loss(&x[0], &SOURCE_Z)),
    });
    cases.push(OpCase {
        name: "disc_loss_batch",
        inputs: sigmas(rng, &[2, 1, 4, 4], 1),
        aux: no_aux(),
        build: |t, v, _| GanObjective::Vanilla.disc_loss_batch(t, v[0], &BATCH),
        reference: |x, _| Arr::scalar(reference::disc_loss(&x[0], &BATCH_Z)),
    });
    cases.push(OpCase {
        name: "ls_disc_loss_batch",
        inputs: sigmas(rng, &[2, 1, 4, 4], 1),
        aux: no_aux(),
        build: |t, v, _| GanObjective::LeastSquares.disc_loss_batch(t, v[0], &BATCH),
        reference: |x, _| Arr::scalar(reference::ls_disc_loss(&x[0], &BATCH_Z)),
    });
    let parts: Vec<Tensor> = (0..4).map(|_| uniform(rng, &[1, 1, 3, 3], -1.0, 1.0)).collect();
    let r = uniform(rng, &[1, 1, 3, 3], -1.0, 1.0);
    cases.push(OpCase {
        name: "total_g_loss",
        inputs: parts,
        aux: Aux {
            weights: vec![r],
            labels: vec![],
        },
        build: |t, v, a| {
            let terms = v
                .iter()
                .map(|&x| project(t, x, &a.weights[0]))
                .collect::<Result<Vec<_>>>()?;
            losses::total_g_loss(t, &terms[..2], &terms[2..], &LossWeights::multi_level())
        },
        reference: |x, a| {
            let w = LossWeights::multi_level();
            let lambdas = w.lambda_seg.iter().chain(&w.lambda_adv);
            let total = x
                .iter()
                .zip(lambdas)
                .map(|(part, &l)| f64::from(l) * project_f64(&part.data, &a.weights[0]))
                .sum();
            Arr::scalar(total)
        },
    });
    cases
}

fn groups_of(sizes: impl IntoIterator<Item = usize>) -> Vec<Range<usize>> {
    let mut start = 0;
    sizes
        .into_iter()
        .map(|n| {
            start += n;
            start - n..start
        })
        .collect()
}

fn forward_error(f32_out: &[f32], reference: &[f64]) -> f64 {
    f32_out
        .iter()
        .zip(reference)
        .map(|(&a, &b)| (f64::from(a) - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares the tape backward against central differences of the f64
/// reference. Outputs with more than one element are reduced by a random
/// projection.
fn run_op_case(case: &OpCase, seed: u64, fault: Option<&Fault>) -> Result<CaseReport> {
    let sizes: Vec<usize> = case.inputs.iter().map(Tensor::numel).collect();
    let groups = groups_of(sizes.iter().copied());
    let leaves: Vec<Tensor> = case.inputs.iter().map(|t| t.clone().with_grad()).collect();
    let mut projection: Option<Tensor> = None;
    let to_arrs = |x: &[f32]| -> Vec<Arr> {
        case.inputs
            .iter()
            .zip(&groups)
            .map(|(t, g)| Arr::new(t.dims(), &x[g.clone()]))
            .collect()
    };
    let x0: Vec<f32> = case.inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let (analytic, forward_err) = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t)).collect();
        let mut out = (case.build)(&mut tape, &vars, &case.aux)?;
        let expected = (case.reference)(&to_arrs(&x0), &case.aux);
        let forward_err = forward_error(tape.value(out), &expected.data);
        let shape = tape.shape(out).clone();
        if shape.numel() > 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7072_6f6a);
            let r = uniform(&mut rng, shape.dims(), -1.0, 1.0);
            out = project(&mut tape, out, &r)?;
            projection = Some(r);
        }
        let grads = tape.backward(out)?;
        let mut flat = Vec::with_capacity(x0.len());
        for (v, &n) in vars.iter().zip(&sizes) {
            match grads.get(*v) {
                Some(g) => flat.extend_from_slice(g),
                None => flat.extend(std::iter::repeat_n(0.0, n)),
            }
        }
        (flat, forward_err)
    };
    let analytic = apply_fault(case.name, analytic, fault);
    let mut report = check_coordinates(case.name, seed, &x0, &analytic, &groups, |x| {
        let y = (case.reference)(&to_arrs(x), &case.aux);
        Ok(match &projection {
            Some(r) => project_f64(&y.data, r),
            None => y.data[0],
        })
    })?;
    report.forward_err = Some(forward_err);
    report.passed &= forward_err <= FORWARD_TOL;
    Ok(report)
}

fn apply_fault(case: &str, mut grads: Vec<f32>, fault: Option<&Fault>) -> Vec<f32> {
    if let Some(f) = fault.filter(|f| f.case == case) {
        grads.iter_mut().for_each(|g| *g *= f.scale);
    }
    grads
}

pub const TOY_CLASSES: usize = 2;
pub const TOY_SIZE: usize = 8;

/// A 2-class 8×8 trainer with both levels and two random discriminators.
pub fn toy_trainer(gan: GanObjective, seed: u64) -> Result<Trainer> {
    let config = TrainConfig {
        gan,
        seed,
        total_steps: 1,
        widths: [4, 8, 8, 8, 8],
        disc_channels: vec![8, 16, 1],
        deterministic: true,
        ..TrainConfig::for_mode(AdaptMode::MultiLevel)
    };
    Trainer::new(config, TOY_CLASSES)
}

/// Random source sample and target image for the toy trainer.
pub fn toy_batch(seed: u64) -> (Sample, UnlabeledImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x746f_79);
    let dims = [3, TOY_SIZE, TOY_SIZE];
    let source = Sample {
        image: uniform(&mut rng, &dims, 0.0, 1.0),
        labels: (0..TOY_SIZE * TOY_SIZE)
            .map(|_| rng.random_range(0..TOY_CLASSES as u8))
            .collect(),
        classes: TOY_CLASSES,
        domain: DomainLabel::Source,
    };
    let target = UnlabeledImage {
        image: uniform(&mut rng, &dims, 0.0, 1.0),
    };
    (source, target)
}

fn sample_arr(t: &Tensor) -> Arr {
    let d = t.dims();
    Arr::new(&[1, d[0], d[1], d[2]], t.data())
}

/// f64 reference of the trainer's G objective: weighted segmentation losses
/// on the source plus adversarial losses of the target maps under frozen
/// discriminators.
fn reference_g_objective(
    trainer: &Trainer,
    g: &[Arr],
    discs: &[Vec<Arr>],
    source: &Sample,
    target: &UnlabeledImage,
) -> f64 {
    let config = trainer.config();
    let rates = &trainer.seg_net().spec().aspp_rates;
    let slope = f64::from(crate::networks::TRUNK_SLOPE);
    let d_slope = f64::from(crate::networks::DISCRIMINATOR_SLOPE);
    let ps = reference::seg_forward(g, &sample_arr(&source.image), rates, slope);
    let pt = reference::seg_forward(g, &sample_arr(&target.image), rates, slope);
    let w = &config.weights;
    let mut total = 0.0;
    for (i, &l) in w.lambda_seg.iter().enumerate() {
        total += f64::from(l) * reference::seg_loss(&ps[i], &source.labels, losses::IGNORE_LABEL);
    }
    for (i, d) in discs.iter().enumerate() {
        let adv = match config.gan {
            GanObjective::Vanilla => {
                reference::disc_loss(&reference::disc_forward(d, &pt[i], d_slope, true), &SOURCE_Z)
            }
            GanObjective::LeastSquares => {
                reference::ls_disc_loss(&reference::disc_forward(d, &pt[i], d_slope, false), &SOURCE_Z)
            }
        };
        total += f64::from(w.lambda_adv[i]) * adv;
    }
    total
}

fn param_arrs(params: &crate::networks::ParamSet) -> Vec<Arr> {
    params.iter().map(|(_, _, t)| Arr::new(t.dims(), t.data())).collect()
}

/// Checks every G parameter gradient of the trainer's scaled objective
/// against differences of its f64 reference.
fn run_g_loss(case: &'static str, gan: GanObjective, seed: u64, fault: Option<&Fault>) -> Result<CaseReport> {
    let mut trainer = toy_trainer(gan, seed)?;
    let (source, target) = toy_batch(seed);
    trainer.g_gradients(&source, &target)?;
    let params = trainer.seg_net().params();
    let dims: Vec<Vec<usize>> = params.iter().map(|(_, _, t)| t.dims().to_vec()).collect();
    let groups = groups_of(params.iter().map(|(_, _, t)| t.numel()));
    let mut x0 = Vec::new();
    let mut analytic = Vec::new();
    for (_, _, t) in params.iter() {
        x0.extend_from_slice(t.data());
        match t.grad() {
            Some(g) => analytic.extend_from_slice(g),
            None => analytic.extend(std::iter::repeat_n(0.0, t.numel())),
        }
    }
    let analytic = apply_fault(case, analytic, fault);
    let discs: Vec<Vec<Arr>> = trainer.discriminators().iter().map(|d| param_arrs(d.params())).collect();
    let scale = f64::from(pixel_scale(TOY_SIZE, TOY_SIZE));

    let g0 = param_arrs(trainer.seg_net().params());
    let expected = reference_g_objective(&trainer, &g0, &discs, &source, &target);
    let actual = trainer.g_objective(&source, &target)?;
    let forward_err = (actual - expected).abs() / expected.abs().max(1.0);

    let mut report = check_coordinates(case, seed, &x0, &analytic, &groups, |x| {
        let g: Vec<Arr> = groups.iter().zip(&dims).map(|(r, d)| Arr::new(d, &x[r.clone()])).collect();
        Ok(scale * reference_g_objective(&trainer, &g, &discs, &source, &target))
    })?;
    report.forward_err = Some(forward_err);
    report.passed &= forward_err <= FORWARD_TOL;
    Ok(report)
}

const G_LOSS_CASES: [(&str, GanObjective); 2] = [
    ("g_loss", GanObjective::Vanilla),
    ("g_loss_least_squares", GanObjective::LeastSquares),
];

/// Names of all cases in suite order.
pub fn case_names() -> Vec<&'static str> {
    op_cases(0)
        .iter()
        .map(|c| c.name)
        .chain(G_LOSS_CASES.iter().map(|c| c.0))
        .collect()
}

/// A filter entry selects a case by exact name or as a `_`-separated prefix,
/// so `conv2d` selects every convolution case.
fn selected(name: &str, filter: Option<&[String]>) -> bool {
    filter.is_none_or(|f| {
        f.iter()
            .any(|p| name == p || name.strip_prefix(p.as_str()).is_some_and(|r| r.starts_with('_')))
    })
}

pub fn validate_filter(filter: &[String]) -> Result<()> {
    let names = case_names();
    for p in filter {
        if !names.iter().any(|n| selected(n, Some(std::slice::from_ref(p)))) {
            return Err(Error::Config(format!(
                "unknown gradcheck op {p:?}; known: {}",
                names.join(", ")
            )));
        }
    }
    Ok(())
}

pub fn run_suite(seeds: &[u64], filter: Option<&[String]>, fault: Option<&Fault>) -> Result<Vec<CaseReport>> {
    if let Some(f) = filter {
        validate_filter(f)?;
    }
    let mut reports = Vec::new();
    for &seed in seeds {
        for case in op_cases(seed) {
            if selected(case.name, filter) {
                reports.push(run_op_case(&case, seed, fault)?);
            }
        }
        for (name, gan) in G_LOSS_CASES {
            if selected(name, filter) {
                reports.push(run_g_loss(name, gan, seed, fault)?);
            }
        }
    }
    Ok(reports)
}

pub fn all_passed(reports: &[CaseReport]) -> bool {
    !reports.is_empty() && reports.iter().all(|r| r.passed)
}

/// Fixed-width pass/fail table, one row per case and seed.
pub fn format_table(reports: &[CaseReport]) -> String {
    let mut out = format!(
        "{:<22} {:>4} {:>7} {:>7} {:>11} {:>9} {:>9}  {}\n",
        "op", "seed", "checked", "skipped", "max_abs_err", "max/tol", "fwd_err", "result"
    );
    for r in reports {
        let fwd = r.forward_err.map_or("-".to_string(), |e| format!("{e:.1e}"));
        let _ = write!(
            out,
            "{:<22} {:>4} {:>7} {:>7} {:>11.3e} {:>9.3} {:>9}  {}",
            r.case,
            r.seed,
            r.checked,
            r.skipped,
            r.max_abs_err,
            r.max_violation,
            fwd,
            if r.passed { "PASS" } else { "FAIL" }
        );
        if let (false, Some(w)) = (r.passed, &r.worst) {
            let _ = write!(
                out,
                " (coord {}: analytic {:.6e}, numeric {:.6e})",
                w.coord, w.analytic, w.numeric
            );
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let x0 = [0.5f32, -1.0, 2.0];
        let eval = |x: &[f32]| Ok(x.iter().map(|&v| f64::from(v) * f64::from(v)).sum());
        let good: Vec<f32> = x0.iter().map(|v| 2.0 * v).collect();
        let r = check_coordinates("sq", 0, &x0, &good, &[0..3], eval).unwrap();
        assert!(r.passed && r.checked == 3, "{r:?}");
        let bad: Vec<f32> = good.iter().map(|v| v * 1.05).collect();
        let r = check_coordinates("sq", 0, &x0, &bad, &[0..3], eval).unwrap();
        assert!(!r.passed);
        assert!(r.max_violation > 1.0);
    }

    #[test]
    fn kinks_are_skipped_not_failed() {
        let x0 = [0.0f32, 1.0];
        let eval = |x: &[f32]| Ok(x.iter().map(|&v| f64::from(v).abs()).sum());
        let r = check_coordinates("abs", 0, &x0, &[1.0, 1.0], &[0..2], eval).unwrap();
        assert_eq!((r.checked, r.skipped), (1, 1));
        assert_eq!(r.max_violation, 0.0);
        // Too few smooth coordinates remain to reach the required count.
        assert!(!r.passed);
        let x0 = [0.0f32, 1.0, -2.0];
        let r = check_coordinates("abs", 0, &x0, &[1.0, 1.0, -1.0], &[0..1, 1..3], eval).unwrap();
        assert_eq!((r.checked, r.skipped), (2, 1));
    }

    #[test]
    fn groups_are_all_represented() {
        let x0 = vec![1.0f32; 100];
        let grads = vec![0.0f32; 100];
        let mut seen = vec![false; 100];
        let groups = [0..97, 97..98, 98..100];
        check_coordinates("const", 3, &x0, &grads, &groups, |x| {
            for (i, (&a, &b)) in x.iter().zip(&x0).enumerate() {
                if a != b {
                    seen[i] = true;
                }
            }
            Ok(0.0)
        })
        .unwrap();
        assert!(seen[97]);
        assert!(seen[98] || seen[99]);
        assert_eq!(seen.iter().filter(|&&s| s).count(), MIN_COORDS);
    }

    #[test]
    fn filter_selects_prefix_families() {
        let f = vec!["conv2d".to_string()];
        assert!(selected("conv2d_k3_s2", Some(&f)));
        assert!(!selected("leaky_relu", Some(&f)));
        let f = vec!["disc_loss".to_string()];
        assert!(selected("disc_loss_batch", Some(&f)));
        assert!(!selected("ls_disc_loss", Some(&f)));
        assert!(validate_filter(&["nope".to_string()]).is_err());
    }

    #[test]
    fn every_case_has_enough_coordinates() {
        for case in op_cases(0) {
            let n: usize = case.inputs.iter().map(Tensor::numel).sum();
            assert!(n >= MIN_COORDS, "{}", case.name);
        }
    }
}
