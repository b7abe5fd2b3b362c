//! Objective terms: segmentation cross-entropy, discriminator and adversarial
//! losses (cross-entropy and least-squares forms), and their weighted sum.
//!
//! Every loss is summed over pixels and over the batch. σ is the
//! discriminator's confidence that a map came from the source domain, so the
//! two-class output reads (1 − σ, σ) for (target, source).

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tape, Var};

/// Label value excluded from the segmentation loss and from evaluation.
pub const IGNORE_LABEL: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainLabel {
    Source,
    Target,
}

impl DomainLabel {
    /// The indicator z: 1 for source, 0 for target.
    pub fn z(self) -> f32 {
        match self {
            DomainLabel::Source => 1.0,
            DomainLabel::Target => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum GanObjective {
    #[default]
    Vanilla,
    LeastSquares,
}

impl GanObjective {
    pub fn disc_loss(self, tape: &mut Tape, sigma: Var, z: DomainLabel) -> Result<Var> {
        match self {
            GanObjective::Vanilla => disc_loss(tape, sigma, z),
            GanObjective::LeastSquares => ls_disc_loss(tape, sigma, z),
        }
    }

    /// Discriminator loss over a batch whose items come from different
    /// domains; `domains[n]` labels batch item n.
    pub fn disc_loss_batch(self, tape: &mut Tape, sigma: Var, domains: &[DomainLabel]) -> Result<Var> {
        let shape = tape.shape(sigma).clone();
        let n = shape.dims().first().copied().unwrap_or(0);
        if domains.len() != n {
            return Err(Error::shape(
                "disc_loss_batch",
                format!("{} domain labels for {shape:?}", domains.len()),
            ));
        }
        let per_item = shape.numel() / n;
        let z: Vec<f32> = domains
            .iter()
            .flat_map(|d| std::iter::repeat_n(d.z(), per_item))
            .collect();
        match self {
            GanObjective::Vanilla => {
                // Probability assigned to the true domain: z·σ + (1−z)·(1−σ).
                let sign = z.iter().map(|z| 2.0 * z - 1.0).collect();
                let offset = z.iter().map(|z| 1.0 - z).collect();
                let sign = tape.constant_owned(shape.clone(), sign)?;
                let offset = tape.constant_owned(shape, offset)?;
                let scaled = tape.mul(sigma, sign)?;
                let p = tape.add(scaled, offset)?;
                let logp = tape.log(p)?;
                let total = tape.sum(logp)?;
                tape.scale(total, -1.0)
            }
            GanObjective::LeastSquares => {
                let z = tape.constant_owned(shape, z)?;
                let residual = tape.sub(sigma, z)?;
                let sq = tape.square(residual)?;
                tape.sum(sq)
            }
        }
    }

    pub fn adv_loss(self, tape: &mut Tape, sigma: Var) -> Result<Var> {
        match self {
            GanObjective::Vanilla => adv_loss(tape, sigma),
            GanObjective::LeastSquares => ls_adv_loss(tape, sigma),
        }
    }
}

/// Per-level weights λ_seg and λ_adv.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub lambda_seg: Vec<f32>,
    pub lambda_adv: Vec<f32>,
}

impl LossWeights {
    /// λ_seg = 1, λ_adv = 0.001.
    pub fn single_level() -> Self {
        LossWeights {
            lambda_seg: vec![1.0],
            lambda_adv: vec![0.001],
        }
    }

    /// Level 1 as in the single-level case; level 2 uses λ_seg = 0.1 and
    /// λ_adv = 0.0002.
    pub fn multi_level() -> Self {
        LossWeights {
            lambda_seg: vec![1.0, 0.1],
            lambda_adv: vec![0.001, 0.0002],
        }
    }

    pub fn levels(&self) -> usize {
        self.lambda_seg.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_seg.len() != self.lambda_adv.len() || !(1..=2).contains(&self.levels()) {
            return Err(Error::Config(format!(
                "need one or two levels with matching λ lists, got seg {:?} adv {:?}",
                self.lambda_seg, self.lambda_adv
            )));
        }
        let all = self.lambda_seg.iter().chain(&self.lambda_adv);
        if let Some(bad) = all.clone().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::Config(format!("loss weight {bad} must be finite and >= 0")));
        }
        Ok(())
    }
}

/// −Σ log P[label] over all non-ignored pixels of an N×C×H×W softmax map.
/// `labels` holds N·H·W class ids in row-major order.
pub fn seg_loss(tape: &mut Tape, probs: Var, labels: &[u8]) -> Result<Var> {
    let shape = tape.shape(probs).clone();
    let (n, c, h, w) = shape.nchw("seg_loss")?;
    let plane = h * w;
    if labels.len() != n * plane {
        return Err(Error::shape(
            "seg_loss",
            format!("{} labels for prediction {:?}", labels.len(), shape),
        ));
    }
    let mut mask = vec![0.0f32; shape.numel()];
    for (i, &label) in labels.iter().enumerate() {
        if label == IGNORE_LABEL {
            continue;
        }
        if usize::from(label) >= c {
            let (b, p) = (i / plane, i % plane);
            return Err(Error::Data(format!(
                "label {label} at (n={b}, h={}, w={}) outside {c} classes",
                p / w,
                p % w
            )));
        }
        mask[(i / plane * c + usize::from(label)) * plane + i % plane] = 1.0;
    }
    let mask = tape.constant_owned(shape, mask)?;
    let logp = tape.log(probs)?;
    let picked = tape.mul(logp, mask)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0)
}

/// Cross-entropy of the discriminator: −Σ [(1−z)·log(1−σ) + z·log σ].
pub fn disc_loss(tape: &mut Tape, sigma: Var, z: DomainLabel) -> Result<Var> {
    let p = match z {
        DomainLabel::Source => sigma,
        DomainLabel::Target => {
            let neg = tape.scale(sigma, -1.0)?;
            tape.add_scalar(neg, 1.0)?
        }
    };
    let logp = tape.log(p)?;
    let total = tape.sum(logp)?;
    tape.scale(total, -1.0)
}

/// Adversarial term for G: −Σ log σ on target predictions.
pub fn adv_loss(tape: &mut Tape, sigma_target: Var) -> Result<Var> {
    disc_loss(tape, sigma_target, DomainLabel::Source)
}

/// Least-squares discriminator loss: Σ [z·(σ−1)² + (1−z)·σ²].
pub fn ls_disc_loss(tape: &mut Tape, sigma: Var, z: DomainLabel) -> Result<Var> {
    let residual = match z {
        DomainLabel::Source => tape.add_scalar(sigma, -1.0)?,
        DomainLabel::Target => sigma,
    };
    let sq = tape.square(residual)?;
    tape.sum(sq)
}

/// Least-squares adversarial term: Σ (σ−1)².
pub fn ls_adv_loss(tape: &mut Tape, sigma_target: Var) -> Result<Var> {
    ls_disc_loss(tape, sigma_target, DomainLabel::Source)
}

/// Σ_i λ^i_seg·L^i_seg + Σ_i λ^i_adv·L^i_adv. `adv` may be empty when no
/// adversarial term is computed.
pub fn total_g_loss(tape: &mut Tape, seg: &[Var], adv: &[Var], weights: &LossWeights) -> Result<Var> {
    if seg.len() != weights.lambda_seg.len()
        || !(adv.is_empty() || adv.len() == weights.lambda_adv.len())
    {
        return Err(Error::Config(format!(
            "{} seg / {} adv losses for {} weight levels",
            seg.len(),
            adv.len(),
            weights.levels()
        )));
    }
    let terms = seg
        .iter()
        .zip(&weights.lambda_seg)
        .chain(adv.iter().zip(&weights.lambda_adv));
    let mut total: Option<Var> = None;
    for (&loss, &lambda) in terms {
        if tape.shape(loss) != &Shape::scalar() {
            return Err(Error::shape("total_g_loss", "loss terms must be scalars"));
        }
        let term = tape.scale(loss, lambda)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Config("total_g_loss needs at least one term".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn batched_disc_loss_matches_per_domain_sum() {
        let vals = vec![0.2, 0.9, 0.5, 0.7, 0.1, 0.3, 0.6, 0.8];
        let both = Tensor::from_vec([2, 1, 2, 2], vals.clone()).unwrap();
        let src = Tensor::from_vec([1, 1, 2, 2], vals[..4].to_vec()).unwrap();
        let tgt = Tensor::from_vec([1, 1, 2, 2], vals[4..].to_vec()).unwrap();
        for gan in [GanObjective::Vanilla, GanObjective::LeastSquares] {
            let mut t = Tape::new();
            let (b, s, g) = (t.constant(&both), t.constant(&src), t.constant(&tgt));
            let batched = gan
                .disc_loss_batch(&mut t, b, &[DomainLabel::Source, DomainLabel::Target])
                .unwrap();
            let ls = gan.disc_loss(&mut t, s, DomainLabel::Source).unwrap();
            let lt = gan.disc_loss(&mut t, g, DomainLabel::Target).unwrap();
            let expected = t.scalar(ls) + t.scalar(lt);
            assert!((t.scalar(batched) - expected).abs() < 1e-5, "{gan:?}");
            assert!(gan.disc_loss_batch(&mut t, b, &[DomainLabel::Source]).is_err());
        }
    }

    const LN2: f32 = std::f32::consts::LN_2;

    fn sigma_map(value: f32, h: usize, w: usize) -> Tensor {
        Tensor::full([1, 1, h, w], value).unwrap().with_grad()
    }

    #[test]
    fn seg_loss_uniform_and_perfect() {
        let p = Tensor::full([1, 4, 2, 2], 0.25).unwrap();
        let mut t = Tape::new();
        let v = t.leaf(&p);
        let l = seg_loss(&mut t, v, &[0, 1, 2, 3]).unwrap();
        assert!((t.scalar(l) - 4.0 * 4f32.ln()).abs() < 1e-5);
        assert!((t.scalar(l) - 5.5452).abs() < 1e-4);

        // P(true) = 1 − 1e-12 rounds to 1 in f32, so the loss is exactly 0.
        let mut data = vec![0.0; 4];
        data[0] = 1.0 - 1e-12;
        data[2 + 1] = 1.0 - 1e-12;
        let p = Tensor::from_vec([1, 2, 1, 2], data).unwrap();
        let v = t.leaf(&p);
        let l = seg_loss(&mut t, v, &[0, 1]).unwrap();
        assert!(t.scalar(l).abs() < 1e-6);
    }

    #[test]
    fn seg_loss_ignore_and_errors() {
        let p = Tensor::full([1, 3, 2, 2], 1.0 / 3.0).unwrap().with_grad();
        let mut t = Tape::new();
        let v = t.leaf(&p);
        let l = seg_loss(&mut t, v, &[IGNORE_LABEL; 4]).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let err = seg_loss(&mut t, v, &[0, 1, 3, 0]).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("h=1, w=0")), "{err}");
        assert!(seg_loss(&mut t, v, &[0, 1]).is_err());

        let mut t = Tape::new();
        let v = t.leaf(&p);
        let l = seg_loss(&mut t, v, &[IGNORE_LABEL; 4]).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(v).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn vanilla_values() {
        let mut t = Tape::new();
        let s1 = sigma_map(0.5, 1, 1);
        let v = t.leaf(&s1);
        let l = disc_loss(&mut t, v, DomainLabel::Source).unwrap();
        assert!((t.scalar(l) - LN2).abs() < 1e-6);

        let s4 = sigma_map(0.5, 2, 2);
        let v = t.leaf(&s4);
        let l = disc_loss(&mut t, v, DomainLabel::Target).unwrap();
        assert!((t.scalar(l) - 4.0 * LN2).abs() < 1e-5);
        let a = adv_loss(&mut t, v).unwrap();
        assert!((t.scalar(a) - 2.7726).abs() < 1e-4);

        let ones = sigma_map(1.0, 2, 2);
        let v = t.leaf(&ones);
        let l = disc_loss(&mut t, v, DomainLabel::Source).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let a = adv_loss(&mut t, v).unwrap();
        assert_eq!(t.scalar(a), 0.0);
    }

    #[test]
    fn adv_gradient_is_negative() {
        for s in [0.01f32, 0.3, 0.5, 0.9, 0.999] {
            let x = sigma_map(s, 1, 1);
            let mut t = Tape::new();
            let v = t.leaf(&x);
            let l = adv_loss(&mut t, v).unwrap();
            let g = t.backward(l).unwrap().get(v).unwrap()[0];
            assert!(g < 0.0);
            assert!((g + 1.0 / s).abs() < 1e-4 * (1.0 / s));
        }
    }

    #[test]
    fn saturated_discriminator_stays_finite() {
        let zero = sigma_map(0.0, 2, 2);
        let mut t = Tape::new();
        let v = t.leaf(&zero);
        let l = disc_loss(&mut t, v, DomainLabel::Source).unwrap();
        assert!(t.scalar(l).is_finite() && t.scalar(l) > 0.0);
        let g = t.backward(l).unwrap();
        assert!(g.get(v).unwrap().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn least_squares_values() {
        let mut t = Tape::new();
        let one = sigma_map(1.0, 2, 2);
        let half = sigma_map(0.5, 2, 2);
        let zero = sigma_map(0.0, 2, 2);
        let (one, half, zero) = (t.leaf(&one), t.leaf(&half), t.leaf(&zero));
        let l = ls_disc_loss(&mut t, one, DomainLabel::Source).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let l = ls_disc_loss(&mut t, half, DomainLabel::Target).unwrap();
        assert_eq!(t.scalar(l), 1.0);
        let l = ls_disc_loss(&mut t, zero, DomainLabel::Target).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let l = ls_adv_loss(&mut t, one).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let l = ls_adv_loss(&mut t, half).unwrap();
        assert_eq!(t.scalar(l), 1.0);
    }

    #[test]
    fn weighted_sums() {
        let mut t = Tape::new();
        let vals: Vec<Var> = [2.0, 3.0, 4.0, 5.0]
            .iter()
            .map(|&v| t.leaf_owned(Tensor::scalar(v)))
            .collect();
        let w1 = LossWeights::single_level();
        let l = total_g_loss(&mut t, &vals[0..1], &vals[1..2], &w1).unwrap();
        assert!((t.scalar(l) - 2.003).abs() < 1e-6);

        let w2 = LossWeights::multi_level();
        let l = total_g_loss(&mut t, &[vals[0], vals[2]], &[vals[1], vals[3]], &w2).unwrap();
        assert!((t.scalar(l) - 2.404).abs() < 1e-6);

        let w0 = LossWeights {
            lambda_seg: vec![1.0, 0.1],
            lambda_adv: vec![0.0, 0.0],
        };
        let l = total_g_loss(&mut t, &[vals[0], vals[2]], &[vals[1], vals[3]], &w0).unwrap();
        assert!((t.scalar(l) - 2.4).abs() < 1e-6);

        assert!(total_g_loss(&mut t, &vals[0..2], &vals[2..3], &w2).is_err());
        assert!(total_g_loss(&mut t, &vals[0..1], &vals[1..3], &w1).is_err());
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::multi_level().validate().is_ok());
        let bad = LossWeights {
            lambda_seg: vec![1.0],
            lambda_adv: vec![-0.1],
        };
        assert!(bad.validate().is_err());
        let mismatched = LossWeights {
            lambda_seg: vec![1.0, 0.1],
            lambda_adv: vec![0.001],
        };
        assert!(mismatched.validate().is_err());
    }
}
