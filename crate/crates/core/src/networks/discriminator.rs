use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Tape, Var};

/// Output channels of the five discriminator convolutions.
pub const DISCRIMINATOR_CHANNELS: [usize; 5] = [64, 128, 256, 512, 1];
pub const DISCRIMINATOR_KERNEL: usize = 4;
pub const DISCRIMINATOR_STRIDE: usize = 2;
pub const DISCRIMINATOR_PADDING: usize = 1;
/// Leaky-ReLU slope after every layer but the last.
pub const DISCRIMINATOR_SLOPE: f32 = 0.2;

/// Fully-convolutional discriminator structure: a chain of 4×4 stride-2
/// convolutions ending in a single confidence channel. No normalization.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DiscriminatorSpec {
    /// Channels of the map it judges: C for softmax outputs, the B4 width
    /// for feature-level adaptation.
    pub in_channels: usize,
    pub channels: Vec<usize>,
}

impl DiscriminatorSpec {
    pub fn new(in_channels: usize) -> Self {
        DiscriminatorSpec {
            in_channels,
            channels: DISCRIMINATOR_CHANNELS.to_vec(),
        }
    }

    /// Narrower or shallower chain, used for small-scale checks.
    pub fn with_channels(mut self, channels: Vec<usize>) -> Self {
        self.channels = channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.last() != Some(&1) {
            return Err(Error::Config(format!(
                "discriminator must end in one channel, got {:?}",
                self.channels
            )));
        }
        if self.in_channels == 0 || self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "zero channel count in discriminator {:?}",
                self.channels
            )));
        }
        Ok(())
    }

    /// Spatial size of the pre-upsample confidence map for an h×w input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let mut dims = [1, self.in_channels, h, w];
        for &cout in &self.channels {
            let g = ConvGeometry::new(
                &dims,
                &[cout, dims[1], DISCRIMINATOR_KERNEL, DISCRIMINATOR_KERNEL],
                DISCRIMINATOR_STRIDE,
                DISCRIMINATOR_PADDING,
                1,
            )
            .map_err(|_| {
                Error::Config(format!(
                    "{h}x{w} input is too small for {} stride-2 discriminator layers",
                    self.channels.len()
                ))
            })?;
            dims = g.output_dims();
        }
        Ok((dims[2], dims[3]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    params: ParamSet,
}

#[derive(Debug, Clone, Copy)]
pub struct DiscOutput {
    /// Final-layer logits before upsampling.
    pub logits: Var,
    /// Sigmoid confidence that the input came from the source domain,
    /// upsampled to the input resolution.
    pub sigma: Var,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut cin = spec.in_channels;
        for (i, &cout) in spec.channels.iter().enumerate() {
            params.push_conv(
                &format!("conv{}", i + 1),
                cout,
                cin,
                DISCRIMINATOR_KERNEL,
                &mut rng,
            );
            cin = cout;
        }
        Ok(Discriminator { spec, params })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Number of convolution layers.
    pub fn depth(&self) -> usize {
        self.spec.channels.len()
    }

    /// Zeroes the last layer so that σ = 0.5 everywhere.
    pub fn zero_last_layer(&mut self) {
        let last = self.params.len() - 2;
        for i in [last, last + 1] {
            self.params.tensor_mut(i).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, input: Var) -> Result<DiscOutput> {
        let (_, c, h, w) = tape.shape(input).nchw("disc_forward")?;
        if c != self.spec.in_channels {
            return Err(Error::Config(format!(
                "discriminator built for {} channels received {c}",
                self.spec.in_channels
            )));
        }
        self.spec.output_size(h, w)?;
        let mut x = input;
        let layers = self.depth();
        for i in 0..layers {
            x = tape.conv2d(
                x,
                bound[2 * i],
                bound[2 * i + 1],
                DISCRIMINATOR_STRIDE,
                DISCRIMINATOR_PADDING,
                1,
            )?;
            if i + 1 < layers {
                x = tape.leaky_relu(x, DISCRIMINATOR_SLOPE)?;
            }
        }
        let logits = x;
        let sigma = tape.sigmoid(logits)?;
        let sigma = tape.upsample_bilinear(sigma, h, w)?;
        Ok(DiscOutput { logits, sigma })
    }
}
