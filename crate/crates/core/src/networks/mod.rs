//! Segmentation network G and fully-convolutional discriminators D_i.

mod discriminator;
mod params;
mod segnet;

pub use discriminator::{
    DiscOutput, Discriminator, DiscriminatorSpec, DISCRIMINATOR_CHANNELS, DISCRIMINATOR_KERNEL,
    DISCRIMINATOR_PADDING, DISCRIMINATOR_SLOPE, DISCRIMINATOR_STRIDE,
};
pub use params::{Bound, ParamKind, ParamSet};
pub use segnet::{SegNet, SegNetSpec, SegOutputs, OUTPUT_STRIDE, TRUNK_SLOPE};
