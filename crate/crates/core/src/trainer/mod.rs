//! One-stage joint training of the segmentation network and its
//! discriminators.

mod checkpoint;
mod config;
mod log;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_EXTENSION, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{fnv1a, gan_name, parse_gan, AdaptMode, TrainConfig, MAX_STEPS};
pub use log::{StepLog, LOG_HEADER};

use crate::error::{Error, Result};
use crate::losses::{seg_loss, total_g_loss, DomainLabel, GanObjective};
use crate::networks::{Bound, DiscOutput, Discriminator, ParamSet, SegNet, SegNetSpec, SegOutputs};
use crate::optim::{AdamState, PolySchedule, SgdState};
use crate::synth::{splitmix64, Sample, TrainingData, UnlabeledImage};
use crate::tensor::{Tape, Tensor, Var};

pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.oack";

/// Networks, optimizer states and the step counter.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub g: SegNet,
    pub discs: Vec<Discriminator>,
    pub sgd: SgdState,
    pub adams: Vec<AdamState>,
    pub step: u64,
}

/// Result of the G half of a step, consumed by the D half.
#[derive(Debug, Clone)]
pub struct GPhase {
    pub lr: f64,
    pub seg: [Option<f32>; 2],
    pub adv: [Option<f32>; 2],
    /// Value of the weighted G objective before the update.
    pub objective: f64,
    /// Detached discriminator inputs, one 2×C×H×W batch per D with the
    /// source map first and the target map second.
    pub disc_inputs: Vec<Tensor>,
}

struct GForward {
    bound: Bound,
    total: Var,
    seg: [Option<f32>; 2],
    adv: [Option<f32>; 2],
    disc_inputs: Vec<Tensor>,
}

/// Domains of the two items of a discriminator batch.
const DISC_BATCH: [DomainLabel; 2] = [DomainLabel::Source, DomainLabel::Target];

fn stack_pair(tape: &Tape, a: Var, b: Var) -> Result<Tensor> {
    let dims = tape.shape(a).dims().to_vec();
    let mut data = Vec::with_capacity(2 * tape.value(a).len());
    data.extend_from_slice(tape.value(a));
    data.extend_from_slice(tape.value(b));
    let mut stacked = dims;
    stacked[0] = 2;
    Tensor::from_vec(stacked, data)
}

fn named<T>(term: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{term} ({m})")),
        e => e,
    })
}

fn finite_scalar(tape: &Tape, v: Var, term: &str) -> Result<f32> {
    let x = tape.scalar(v);
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("{term} loss ({x})")))
    }
}

/// Factor applied to every objective before backpropagation. Losses are sums
/// over pixels; the learning rates are per-pixel rates, so gradients are
/// taken of the per-pixel mean.
/// The map a GAN objective scores: the sigmoid confidence σ for the
/// cross-entropy form, the raw score upsampled to the same size for the
/// least-squares form, which regresses it onto the labels 0 and 1.
pub fn disc_score(gan: GanObjective, tape: &mut Tape, out: &DiscOutput) -> Result<Var> {
    match gan {
        GanObjective::Vanilla => Ok(out.sigma),
        GanObjective::LeastSquares => {
            let (_, _, h, w) = tape.shape(out.sigma).nchw("disc_score")?;
            tape.upsample_bilinear(out.logits, h, w)
        }
    }
}

pub fn pixel_scale(height: usize, width: usize) -> f32 {
    1.0 / (height * width) as f32
}

fn derived_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

const SOURCE_ORDER: u64 = 0x5352_4300;
const TARGET_ORDER: u64 = 0x5447_5400;
const G_INIT: u64 = 0x4749_4e00;
const D_INIT: u64 = 0x4449_4e00;

/// Sample order: a fresh seeded permutation per epoch, so the index at any
/// step depends only on (seed, step).
#[derive(Debug, Clone)]
pub struct EpochOrder {
    seed: u64,
    len: usize,
    epoch: Option<u64>,
    perm: Vec<usize>,
}

impl EpochOrder {
    pub fn new(seed: u64, len: usize) -> Self {
        EpochOrder {
            seed,
            len,
            epoch: None,
            perm: Vec::new(),
        }
    }

    pub fn index(&mut self, step: u64) -> usize {
        let n = self.len as u64;
        let epoch = step / n;
        if self.epoch != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(self.seed, epoch));
            self.perm = (0..self.len).collect();
            self.perm.shuffle(&mut rng);
            self.epoch = Some(epoch);
        }
        self.perm[(step % n) as usize]
    }
}

pub struct Trainer {
    config: TrainConfig,
    classes: usize,
    state: TrainState,
    g_schedule: PolySchedule,
    d_schedule: PolySchedule,
}

impl Trainer {
    pub fn new(config: TrainConfig, classes: usize) -> Result<Self> {
        config.validate()?;
        let g = SegNet::new(config.seg_spec(classes), derived_seed(config.seed, G_INIT))?;
        let discs = config
            .disc_specs(classes)
            .into_iter()
            .enumerate()
            .map(|(i, spec)| Discriminator::new(spec, derived_seed(config.seed, D_INIT + i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let sgd = SgdState::new(g.params());
        let adams = discs.iter().map(|d| AdamState::new(d.params())).collect();
        Ok(Trainer {
            g_schedule: PolySchedule::new(config.g_lr, config.total_steps),
            d_schedule: PolySchedule::new(config.d_lr, config.total_steps),
            classes,
            state: TrainState {
                g,
                discs,
                sgd,
                adams,
                step: 0,
            },
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut TrainState {
        &mut self.state
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    pub fn seg_net(&self) -> &SegNet {
        &self.state.g
    }

    pub fn discriminators(&self) -> &[Discriminator] {
        &self.state.discs
    }

    /// Discriminator input of level `i` for one forward pass.
    fn disc_input(&self, tape: &mut Tape, out: &SegOutputs, i: usize, size: (usize, usize)) -> Result<Var> {
        match self.config.mode {
            AdaptMode::Feature => tape.upsample_bilinear(out.f2, size.0, size.1),
            _ => Ok(out.level(i + 1)),
        }
    }

    fn g_forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        source: &Sample,
        target: &UnlabeledImage,
        trainable: bool,
    ) -> Result<GForward> {
        let bound = self.state.g.params().bind(tape, trainable);
        let size = (source.height(), source.width());
        let xs = tape.leaf_owned(source.batch_image());
        let out_s = named("source forward", self.state.g.forward(tape, &bound, xs))?;

        let levels = self.config.mode.seg_levels();
        let mut seg_vars = Vec::with_capacity(levels);
        let mut seg = [None; 2];
        for level in 1..=levels {
            let term = format!("seg{level}");
            let l = named(&term, seg_loss(tape, out_s.level(level), &source.labels))?;
            seg[level - 1] = Some(finite_scalar(tape, l, &term)?);
            seg_vars.push(l);
        }

        let mut adv_vars = Vec::new();
        let mut adv = [None; 2];
        let mut disc_inputs = Vec::new();
        if !self.state.discs.is_empty() {
            let xt = tape.leaf_owned(target.batch_image());
            let out_t = named("target forward", self.state.g.forward(tape, &bound, xt))?;
            for (i, d) in self.state.discs.iter().enumerate() {
                let term = format!("adv{}", i + 1);
                let in_s = named(&term, self.disc_input(tape, &out_s, i, size))?;
                let in_t = named(&term, self.disc_input(tape, &out_t, i, size))?;
                disc_inputs.push(stack_pair(tape, in_s, in_t)?);
                let d_bound = d.params().bind(tape, false);
                let out = named(&term, d.forward(tape, &d_bound, in_t))?;
                let score = named(&term, disc_score(self.config.gan, tape, &out))?;
                let l = named(&term, self.config.gan.adv_loss(tape, score))?;
                adv[i] = Some(finite_scalar(tape, l, &term)?);
                adv_vars.push(l);
            }
        }
        let total = named("total", total_g_loss(tape, &seg_vars, &adv_vars, &self.config.weights))?;
        finite_scalar(tape, total, "total")?;
        Ok(GForward {
            bound,
            total,
            seg,
            adv,
            disc_inputs,
        })
    }

    /// Weighted G objective on a batch, without updating anything.
    pub fn g_objective(&self, source: &Sample, target: &UnlabeledImage) -> Result<f64> {
        let mut tape = Tape::new();
        let f = self.g_forward(&mut tape, source, target, false)?;
        Ok(f64::from(tape.scalar(f.total)))
    }

    /// Stores the gradient of the scaled G objective in the G parameters
    /// without updating them.
    pub fn g_gradients(&mut self, source: &Sample, target: &UnlabeledImage) -> Result<GPhase> {
        let t = self.state.step;
        if t >= self.config.total_steps {
            return Err(Error::Config(format!(
                "step {t} is past total_steps {}",
                self.config.total_steps
            )));
        }
        let lr = self.g_schedule.lr(t)?;
        let (mut grads, f, objective) = {
            let mut tape = Tape::new();
            let f = self.g_forward(&mut tape, source, target, true)?;
            let objective = f64::from(tape.scalar(f.total));
            let scaled = tape.scale(f.total, pixel_scale(source.height(), source.width()))?;
            let grads = named("G backward", tape.backward(scaled))?;
            (grads, f, objective)
        };
        self.state.g.params_mut().set_grads(&mut grads, &f.bound)?;
        Ok(GPhase {
            lr,
            seg: f.seg,
            adv: f.adv,
            objective,
            disc_inputs: f.disc_inputs,
        })
    }

    /// Forward both domains, then one SGD step on G with every D frozen.
    pub fn g_update(&mut self, source: &Sample, target: &UnlabeledImage) -> Result<GPhase> {
        let phase = self.g_gradients(source, target)?;
        self.state.sgd.step(self.state.g.params_mut(), phase.lr)?;
        Ok(phase)
    }

    fn d_forward<'a>(
        d: &'a Discriminator,
        gan: GanObjective,
        tape: &mut Tape<'a>,
        inputs: &'a Tensor,
        trainable: bool,
        term: &str,
    ) -> Result<(Bound, Var)> {
        let bound = d.params().bind(tape, trainable);
        let x = tape.constant(inputs);
        let out = named(term, d.forward(tape, &bound, x))?;
        let score = named(term, disc_score(gan, tape, &out))?;
        let l = named(term, gan.disc_loss_batch(tape, score, &DISC_BATCH))?;
        finite_scalar(tape, l, term)?;
        Ok((bound, l))
    }

    /// Discriminator loss of D_i on the detached inputs of a G phase.
    pub fn d_objective(&self, phase: &GPhase, i: usize) -> Result<f64> {
        let mut tape = Tape::new();
        let term = format!("d{}", i + 1);
        let (_, l) = Self::d_forward(
            &self.state.discs[i],
            self.config.gan,
            &mut tape,
            &phase.disc_inputs[i],
            false,
            &term,
        )?;
        Ok(f64::from(tape.scalar(l)))
    }

    /// One Adam step per discriminator on detached source (z = 1) and target
    /// (z = 0) inputs, then advances the step counter.
    pub fn d_update(&mut self, phase: &GPhase) -> Result<(Option<f64>, [Option<f32>; 2])> {
        let mut d_losses = [None; 2];
        let lr = if self.state.discs.is_empty() {
            None
        } else {
            Some(self.d_schedule.lr(self.state.step)?)
        };
        for i in 0..self.state.discs.len() {
            let term = format!("d{}", i + 1);
            let (mut grads, bound, value) = {
                let mut tape = Tape::new();
                let (bound, l) = Self::d_forward(
                    &self.state.discs[i],
                    self.config.gan,
                    &mut tape,
                    &phase.disc_inputs[i],
                    true,
                    &term,
                )?;
                let value = tape.scalar(l);
                let dims = phase.disc_inputs[i].dims();
                let scaled = tape.scale(l, pixel_scale(dims[2], dims[3]))?;
                (named(&term, tape.backward(scaled))?, bound, value)
            };
            let params = self.state.discs[i].params_mut();
            params.set_grads(&mut grads, &bound)?;
            self.state.adams[i].step(params, lr.expect("discriminators present"))?;
            d_losses[i] = Some(value);
        }
        self.state.step += 1;
        Ok((lr, d_losses))
    }

    /// A full G-then-D training step.
    pub fn step(&mut self, source: &Sample, target: &UnlabeledImage) -> Result<StepLog> {
        let start = (!self.config.deterministic).then(Instant::now);
        let step = self.state.step;
        let phase = self.g_update(source, target)?;
        let (lr_d, d) = self.d_update(&phase)?;
        Ok(StepLog {
            step,
            lr_g: phase.lr,
            lr_d,
            seg: phase.seg,
            adv: phase.adv,
            d,
            ms: start.map(|s| s.elapsed().as_secs_f64() * 1e3),
        })
    }

    /// Runs the remaining steps, calling `on_step` after each.
    pub fn run(
        &mut self,
        data: &TrainingData,
        mut on_step: impl FnMut(&Trainer, &StepLog) -> Result<()>,
    ) -> Result<()> {
        check_data(data, self.classes, self.config.mode)?;
        let mut source_order = EpochOrder::new(derived_seed(self.config.seed, SOURCE_ORDER), data.source.len());
        let mut target_order =
            EpochOrder::new(derived_seed(self.config.seed, TARGET_ORDER), data.target.len().max(1));
        let fallback = UnlabeledImage::from(&data.source[0]);
        while self.state.step < self.config.total_steps {
            let t = self.state.step;
            let source = &data.source[source_order.index(t)];
            let target = data.target.get(target_order.index(t)).unwrap_or(&fallback);
            let log = self.step(source, target)?;
            on_step(self, &log)?;
        }
        Ok(())
    }

    fn param_sets(&self) -> Vec<(String, &ParamSet)> {
        let mut sets = vec![("g".to_string(), self.state.g.params())];
        for (i, d) in self.state.discs.iter().enumerate() {
            sets.push((format!("d{}", i + 1), d.params()));
        }
        sets
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut records = Vec::new();
        for (prefix, set) in self.param_sets() {
            for (name, _, t) in set.iter() {
                records.push(TensorRecord::new(format!("{prefix}.{name}"), t.dims(), t.data().to_vec()));
            }
        }
        let g = self.state.g.params();
        for (i, v) in self.state.sgd.velocity.iter().enumerate() {
            let name = format!("opt.g.velocity.{}", g.names()[i]);
            records.push(TensorRecord::new(name, g.tensor(i).dims(), v.clone()));
        }
        for (k, (adam, d)) in self.state.adams.iter().zip(&self.state.discs).enumerate() {
            let p = d.params();
            for i in 0..p.len() {
                let dims = p.tensor(i).dims();
                let name = &p.names()[i];
                records.push(TensorRecord::new(format!("opt.d{}.m.{name}", k + 1), dims, adam.first[i].clone()));
                records.push(TensorRecord::new(format!("opt.d{}.v.{name}", k + 1), dims, adam.second[i].clone()));
            }
            records.push(TensorRecord::new(format!("opt.d{}.step", k + 1), &[], vec![adam.step as f32]));
        }
        records.push(TensorRecord::new("step", &[], vec![self.state.step as f32]));
        Checkpoint {
            config_hash: self.config.model_hash(self.classes),
            records,
        }
    }

    /// Rebuilds a trainer from a checkpoint. A config-hash mismatch is an
    /// error unless `force` is set; shapes must agree either way.
    pub fn from_checkpoint(config: TrainConfig, classes: usize, ckpt: &Checkpoint, force: bool) -> Result<Self> {
        let mut trainer = Trainer::new(config, classes)?;
        let expected = trainer.checkpoint();
        if ckpt.config_hash != expected.config_hash && !force {
            return Err(Error::ConfigHash {
                found: ckpt.config_hash,
                expected: expected.config_hash,
            });
        }
        let mut values = Vec::with_capacity(expected.records.len());
        for want in &expected.records {
            let got = ckpt.get(&want.name).ok_or_else(|| {
                Error::Config(format!("checkpoint lacks record {}", want.name))
            })?;
            if got.dims != want.dims {
                return Err(Error::Config(format!(
                    "record {} has dims {:?}, expected {:?}",
                    want.name, got.dims, want.dims
                )));
            }
            values.push(got.data.as_slice());
        }
        let mut values = values.into_iter();
        let state = &mut trainer.state;
        let mut sets: Vec<&mut ParamSet> = vec![state.g.params_mut()];
        sets.extend(state.discs.iter_mut().map(Discriminator::params_mut));
        for set in sets {
            for i in 0..set.len() {
                set.set_values(i, values.next().expect("record per tensor"))?;
            }
        }
        for v in &mut state.sgd.velocity {
            v.copy_from_slice(values.next().expect("velocity record"));
        }
        for adam in &mut state.adams {
            for i in 0..adam.first.len() {
                adam.first[i].copy_from_slice(values.next().expect("first moment"));
                adam.second[i].copy_from_slice(values.next().expect("second moment"));
            }
            adam.step = counter(values.next().expect("adam step"))?;
        }
        state.step = counter(values.next().expect("step record"))?;
        if state.step > trainer.config.total_steps {
            return Err(Error::Config(format!(
                "checkpoint step {} beyond total_steps {}",
                state.step, trainer.config.total_steps
            )));
        }
        Ok(trainer)
    }
}

fn counter(v: &[f32]) -> Result<u64> {
    let x = v[0];
    if x >= 0.0 && x.fract() == 0.0 && (x as u64) < MAX_STEPS {
        Ok(x as u64)
    } else {
        Err(Error::Config(format!("invalid step counter {x}")))
    }
}

fn check_data(data: &TrainingData, classes: usize, mode: AdaptMode) -> Result<()> {
    let first = data
        .source
        .first()
        .ok_or_else(|| Error::Data("source training set is empty".into()))?;
    if data.target.is_empty() && mode != AdaptMode::SourceOnly {
        return Err(Error::Data("target training set is empty".into()));
    }
    let dims = first.image.dims().to_vec();
    for s in &data.source {
        if s.image.dims() != dims.as_slice() || s.classes != classes {
            return Err(Error::Data(format!(
                "source sample {:?} with {} classes differs from {:?} with {classes}",
                s.image.dims(),
                s.classes,
                dims
            )));
        }
    }
    if let Some(t) = data.target.iter().find(|t| t.image.dims() != dims.as_slice()) {
        return Err(Error::Data(format!(
            "target image {:?} differs from source {:?}",
            t.image.dims(),
            dims
        )));
    }
    Ok(())
}

/// Segmentation network stored in a checkpoint. Trunk widths are read from
/// the record shapes, so no training config is needed.
pub fn seg_net_from_checkpoint(ckpt: &Checkpoint, classes: usize) -> Result<SegNet> {
    let record = |name: &str| {
        ckpt.get(&format!("g.{name}"))
            .ok_or_else(|| Error::Config(format!("checkpoint lacks record g.{name}")))
    };
    let mut widths = [0; 5];
    for (i, w) in widths.iter_mut().enumerate() {
        let dims = &record(&format!("trunk.b{}.weight", i + 1))?.dims;
        *w = dims.first().copied().unwrap_or(0);
    }
    let mut net = SegNet::new(SegNetSpec::new(classes).with_widths(widths), 0)?;
    let params = net.params_mut();
    for i in 0..params.len() {
        let name = params.names()[i].clone();
        let got = record(&name)?;
        if got.dims != params.tensor(i).dims() {
            return Err(Error::Config(format!(
                "record g.{name} has dims {:?}, expected {:?} for {classes} classes",
                got.dims,
                params.tensor(i).dims()
            )));
        }
        params.set_values(i, &got.data)?;
    }
    Ok(net)
}

/// Class count of a training set.
pub fn data_classes(data: &TrainingData) -> Result<usize> {
    data.source
        .first()
        .map(|s| s.classes)
        .ok_or_else(|| Error::Data("source training set is empty".into()))
}

/// Final trainer plus every step log.
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub logs: Vec<StepLog>,
}

/// Trains from scratch. With `out_dir`, writes the CSV log, periodic
/// checkpoints and a final checkpoint there.
pub fn train(config: &TrainConfig, data: &TrainingData, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let trainer = Trainer::new(config.clone(), data_classes(data)?)?;
    resume(trainer, data, out_dir)
}

/// Continues training an existing trainer up to its `total_steps`.
pub fn resume(mut trainer: Trainer, data: &TrainingData, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut writer = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };
    let every = trainer.config.checkpoint_every;
    let mut logs = Vec::new();
    trainer.run(data, |tr, log| {
        if !log.is_finite() {
            return Err(Error::NonFinite(format!("step {} log", log.step)));
        }
        if let Some((w, path)) = writer.as_mut() {
            writeln!(w, "{}", log.csv_row()).map_err(|e| Error::io(path.as_path(), e))?;
            let done = tr.step_count();
            if every > 0 && done % every == 0 {
                w.flush().map_err(|e| Error::io(path.as_path(), e))?;
                let dir = out_dir.expect("writer implies directory");
                tr.checkpoint()
                    .save(&dir.join(format!("checkpoint_{done:06}.{CHECKPOINT_EXTENSION}")))?;
            }
        }
        logs.push(log.clone());
        Ok(())
    })?;
    if let Some((mut w, path)) = writer {
        w.flush().map_err(|e| Error::io(&path, e))?;
        let dir = out_dir.expect("writer implies directory");
        trainer.checkpoint().save(&dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainOutcome { trainer, logs })
}
