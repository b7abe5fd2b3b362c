use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Negative slope of the trunk activations.
pub const TRUNK_SLOPE: f32 = 0.2;
const TRUNK_KERNEL: usize = 3;

/// Structure of the segmentation network.
///
/// The trunk has five 3×3 blocks: B1–B3 downsample by 2 each, B4 and B5 keep
/// the 1/8 resolution and widen their receptive field with dilation 2 and 4.
/// Both classifier heads are ASPP-style sums of parallel dilated 3×3 convs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegNetSpec {
    pub in_channels: usize,
    pub widths: [usize; 5],
    pub classes: usize,
    pub aspp_rates: Vec<usize>,
}

impl SegNetSpec {
    pub const DEFAULT_WIDTHS: [usize; 5] = [16, 32, 64, 64, 64];
    pub const DEFAULT_ASPP_RATES: [usize; 3] = [1, 2, 4];

    pub fn new(classes: usize) -> Self {
        SegNetSpec {
            in_channels: 3,
            widths: Self::DEFAULT_WIDTHS,
            classes,
            aspp_rates: Self::DEFAULT_ASPP_RATES.to_vec(),
        }
    }

    pub fn with_widths(mut self, widths: [usize; 5]) -> Self {
        self.widths = widths;
        self
    }

    /// Channels of the B4 feature map consumed by the auxiliary head.
    pub fn level2_channels(&self) -> usize {
        self.widths[3]
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.widths.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config(format!("zero channel width in {:?}", self.widths)));
        }
        if self.aspp_rates.len() < 2 || self.aspp_rates.contains(&0) {
            return Err(Error::Config(format!(
                "ASPP needs at least two positive rates, got {:?}",
                self.aspp_rates
            )));
        }
        Ok(())
    }
}

/// (stride, dilation) of each trunk block; padding equals dilation.
const TRUNK_LAYOUT: [(usize, usize); 5] = [(2, 1), (2, 1), (2, 1), (1, 2), (1, 4)];

/// Overall downsampling factor of the trunk.
pub const OUTPUT_STRIDE: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Conv {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegNet {
    spec: SegNetSpec,
    params: ParamSet,
}

/// Per-level predictions of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct SegOutputs {
    /// Main-head logits, upsampled to the input size.
    pub logits1: Var,
    /// Auxiliary-head logits, upsampled to the input size.
    pub logits2: Var,
    /// Level-1 (main) softmax map.
    pub p1: Var,
    /// Level-2 (auxiliary) softmax map.
    pub p2: Var,
    /// B4 feature map at 1/8 resolution.
    pub f2: Var,
}

impl SegOutputs {
    /// Softmax output of level `i` (1 = main head, 2 = auxiliary head).
    pub fn level(&self, i: usize) -> Var {
        match i {
            1 => self.p1,
            2 => self.p2,
            _ => panic!("segmentation level {i} does not exist"),
        }
    }
}

impl SegNet {
    /// He-initialized network; identical seeds give identical parameters.
    pub fn new(spec: SegNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut cin = spec.in_channels;
        for (i, &width) in spec.widths.iter().enumerate() {
            params.push_conv(&format!("trunk.b{}", i + 1), width, cin, TRUNK_KERNEL, &mut rng);
            cin = width;
        }
        for (head, cin) in [("main", spec.widths[4]), ("aux", spec.widths[3])] {
            for &rate in &spec.aspp_rates {
                params.push_conv(
                    &format!("{head}.aspp_r{rate}"),
                    spec.classes,
                    cin,
                    TRUNK_KERNEL,
                    &mut rng,
                );
            }
        }
        Ok(SegNet { spec, params })
    }

    pub fn spec(&self) -> &SegNetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn trunk(i: usize) -> Conv {
        Conv {
            weight: 2 * i,
            bias: 2 * i + 1,
        }
    }

    fn head(&self, aux: bool, branch: usize) -> Conv {
        let start = 10 + if aux { 2 * self.spec.aspp_rates.len() } else { 0 };
        Conv {
            weight: start + 2 * branch,
            bias: start + 2 * branch + 1,
        }
    }

    /// Parameter indices belonging to the main (level-1) head.
    pub fn main_head_indices(&self) -> std::ops::Range<usize> {
        let start = self.head(false, 0).weight;
        start..start + 2 * self.spec.aspp_rates.len()
    }

    /// Parameter indices belonging to the auxiliary (level-2) head.
    pub fn aux_head_indices(&self) -> std::ops::Range<usize> {
        let start = self.head(true, 0).weight;
        start..start + 2 * self.spec.aspp_rates.len()
    }

    /// Sets both classifier heads to zero, making every prediction uniform.
    pub fn zero_heads(&mut self) {
        for i in self.main_head_indices().chain(self.aux_head_indices()) {
            let t = self.params.tensor_mut(i);
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn aspp(&self, tape: &mut Tape, bound: &Bound, aux: bool, features: Var) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (branch, &rate) in self.spec.aspp_rates.iter().enumerate() {
            let conv = self.head(aux, branch);
            let y = tape.conv2d(
                features,
                bound[conv.weight],
                bound[conv.bias],
                1,
                rate,
                rate,
            )?;
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        Ok(acc.expect("at least two branches"))
    }

    /// Runs the network on an N×3×H×W image batch with H, W divisible by 8.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, image: Var) -> Result<SegOutputs> {
        let (_, c, h, w) = tape.shape(image).nchw("seg_forward")?;
        if c != self.spec.in_channels {
            return Err(Error::Config(format!(
                "segmentation network expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        if h % OUTPUT_STRIDE != 0 || w % OUTPUT_STRIDE != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be divisible by {OUTPUT_STRIDE}"
            )));
        }
        let mut x = image;
        let mut f2 = image;
        for (i, &(stride, dilation)) in TRUNK_LAYOUT.iter().enumerate() {
            let conv = Self::trunk(i);
            x = tape.conv2d(x, bound[conv.weight], bound[conv.bias], stride, dilation, dilation)?;
            x = tape.leaky_relu(x, TRUNK_SLOPE)?;
            if i == 3 {
                f2 = x;
            }
        }
        let main = self.aspp(tape, bound, false, x)?;
        let aux = self.aspp(tape, bound, true, f2)?;
        let logits1 = tape.upsample_bilinear(main, h, w)?;
        let logits2 = tape.upsample_bilinear(aux, h, w)?;
        let p1 = tape.softmax_channels(logits1)?;
        let p2 = tape.softmax_channels(logits2)?;
        Ok(SegOutputs {
            logits1,
            logits2,
            p1,
            p2,
            f2,
        })
    }

    /// Level-1 softmax map without recording gradients.
    pub fn predict(&self, image: &crate::tensor::Tensor) -> Result<crate::tensor::Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(image);
        let out = self.forward(&mut tape, &bound, x)?;
        Ok(tape.to_tensor(out.p1))
    }
}
