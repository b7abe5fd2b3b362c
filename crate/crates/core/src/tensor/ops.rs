use std::borrow::Cow;

use super::conv::{self, ConvGeometry};
use super::tape::{Node, Tape, Var};
use super::Shape;
use crate::error::{Error, Result};

/// Inputs below this are clamped before taking the logarithm.
pub const LOG_CLAMP: f32 = 1e-12;

/// Recorded operation with whatever its backward rule needs. Input fields are
/// node indices on the owning tape.
pub(crate) enum Op {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        geom: ConvGeometry,
        cols: Vec<f32>,
    },
    LeakyRelu {
        input: usize,
        slope: f32,
    },
    Sigmoid {
        input: usize,
    },
    SoftmaxChannels {
        input: usize,
    },
    Upsample {
        input: usize,
        plan: UpsamplePlan,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    AddScalar(usize),
    Log(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![input, weight, bias],
            Op::LeakyRelu { input, .. }
            | Op::Sigmoid { input }
            | Op::SoftmaxChannels { input }
            | Op::Upsample { input, .. } => vec![input],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![a],
        }
    }

    /// Vector-Jacobian products for node `me` given its upstream gradient.
    pub(crate) fn backward(&self, nodes: &[Node], me: usize, dy: &[f32]) -> Vec<(usize, Vec<f32>)> {
        let val = |i: usize| -> &[f32] { &nodes[i].value };
        let out = val(me);
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ref geom,
                ref cols,
            } => {
                let need = [input, weight, bias].map(|i| nodes[i].requires_grad);
                let g = conv::backward(geom, val(weight), cols, dy, need);
                [(input, g.input), (weight, g.weight), (bias, g.bias)]
                    .into_iter()
                    .filter_map(|(i, g)| g.map(|g| (i, g)))
                    .collect()
            }
            Op::LeakyRelu { input, slope } => {
                let g = val(input)
                    .iter()
                    .zip(dy)
                    .map(|(&x, &d)| if x >= 0.0 { d } else { slope * d })
                    .collect();
                vec![(input, g)]
            }
            Op::Sigmoid { input } => {
                let g = out.iter().zip(dy).map(|(&y, &d)| d * y * (1.0 - y)).collect();
                vec![(input, g)]
            }
            Op::SoftmaxChannels { input } => {
                let (n, c, h, w) = nodes[me].shape.nchw("softmax").expect("rank checked");
                let plane = h * w;
                let mut g = vec![0.0; out.len()];
                for b in 0..n {
                    let base = b * c * plane;
                    for p in 0..plane {
                        let dot: f32 = (0..c)
                            .map(|k| out[base + k * plane + p] * dy[base + k * plane + p])
                            .sum();
                        for k in 0..c {
                            let i = base + k * plane + p;
                            g[i] = out[i] * (dy[i] - dot);
                        }
                    }
                }
                vec![(input, g)]
            }
            Op::Upsample { input, ref plan } => {
                let mut g = vec![0.0; val(input).len()];
                plan.scatter(dy, &mut g);
                vec![(input, g)]
            }
            Op::Add(a, b) => vec![(a, dy.to_vec()), (b, dy.to_vec())],
            Op::Sub(a, b) => vec![(a, dy.to_vec()), (b, dy.iter().map(|d| -d).collect())],
            Op::Mul(a, b) => {
                let ga = dy.iter().zip(val(b)).map(|(d, y)| d * y).collect();
                let gb = dy.iter().zip(val(a)).map(|(d, x)| d * x).collect();
                vec![(a, ga), (b, gb)]
            }
            Op::Scale(a, s) => vec![(a, dy.iter().map(|d| d * s).collect())],
            Op::AddScalar(a) => vec![(a, dy.to_vec())],
            Op::Log(a) => {
                let g = val(a)
                    .iter()
                    .zip(dy)
                    .map(|(&x, &d)| if x > LOG_CLAMP { d / x } else { 0.0 })
                    .collect();
                vec![(a, g)]
            }
            Op::Square(a) => {
                let g = val(a).iter().zip(dy).map(|(&x, &d)| 2.0 * x * d).collect();
                vec![(a, g)]
            }
            Op::Sum(a) => vec![(a, vec![dy[0]; val(a).len()])],
            Op::Mean(a) => {
                let len = val(a).len();
                vec![(a, vec![dy[0] / len as f32; len])]
            }
        }
    }
}

/// Per-axis interpolation table for corner-aligned bilinear resampling.
#[derive(Debug, Clone)]
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f32>,
}

impl AxisTaps {
    fn new(src: usize, dst: usize) -> Self {
        let scale = if dst > 1 {
            (src - 1) as f64 / (dst - 1) as f64
        } else {
            0.0
        };
        let mut taps = AxisTaps {
            lo: Vec::with_capacity(dst),
            hi: Vec::with_capacity(dst),
            frac: Vec::with_capacity(dst),
        };
        for o in 0..dst {
            let pos = o as f64 * scale;
            let lo = (pos.floor() as usize).min(src - 1);
            taps.lo.push(lo);
            taps.hi.push((lo + 1).min(src - 1));
            taps.frac.push((pos - lo as f64) as f32);
        }
        taps
    }
}

#[derive(Debug, Clone)]
pub(crate) struct UpsamplePlan {
    planes: usize,
    in_h: usize,
    in_w: usize,
    rows: AxisTaps,
    cols: AxisTaps,
}

impl UpsamplePlan {
    fn gather(&self, x: &[f32]) -> Vec<f32> {
        let (oh, ow) = (self.rows.lo.len(), self.cols.lo.len());
        let mut out = Vec::with_capacity(self.planes * oh * ow);
        for p in 0..self.planes {
            let src = &x[p * self.in_h * self.in_w..(p + 1) * self.in_h * self.in_w];
            for oy in 0..oh {
                let (y0, y1, fy) = (self.rows.lo[oy], self.rows.hi[oy], self.rows.frac[oy]);
                let (r0, r1) = (&src[y0 * self.in_w..], &src[y1 * self.in_w..]);
                for ox in 0..ow {
                    let (x0, x1, fx) = (self.cols.lo[ox], self.cols.hi[ox], self.cols.frac[ox]);
                    let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                    let bottom = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                    out.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
        out
    }

    fn scatter(&self, dy: &[f32], dx: &mut [f32]) {
        let (oh, ow) = (self.rows.lo.len(), self.cols.lo.len());
        for p in 0..self.planes {
            let dst = &mut dx[p * self.in_h * self.in_w..(p + 1) * self.in_h * self.in_w];
            let src = &dy[p * oh * ow..(p + 1) * oh * ow];
            for oy in 0..oh {
                let (y0, y1, fy) = (self.rows.lo[oy], self.rows.hi[oy], self.rows.frac[oy]);
                for ox in 0..ow {
                    let (x0, x1, fx) = (self.cols.lo[ox], self.cols.hi[ox], self.cols.frac[ox]);
                    let d = src[oy * ow + ox];
                    dst[y0 * self.in_w + x0] += d * (1.0 - fy) * (1.0 - fx);
                    dst[y0 * self.in_w + x1] += d * (1.0 - fy) * fx;
                    dst[y1 * self.in_w + x0] += d * fy * (1.0 - fx);
                    dst[y1 * self.in_w + x1] += d * fy * fx;
                }
            }
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa.clone())
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f32) -> f32,
        op: impl FnOnce(usize) -> Op,
    ) -> Result<Var> {
        let shape = self.shape(a).clone();
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        self.record(name, shape, value, op(a.index))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var> {
        let shape = self.same_shape(name, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.record(name, shape, value, op)
    }

    /// 2-D cross-correlation of an NCHW input with a (Cout, Cin, kH, kW) kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Var> {
        let geom = ConvGeometry::new(
            self.shape(input).dims(),
            self.shape(weight).dims(),
            stride,
            padding,
            dilation,
        )?;
        if self.shape(bias).dims() != [geom.out_channels] {
            return Err(Error::Config(format!(
                "conv2d bias {:?} does not match {} output channels",
                self.shape(bias),
                geom.out_channels
            )));
        }
        // Unfolded inputs are only needed for the weight gradient.
        let keep_cols = self.requires_grad(weight);
        let (out, cols) = conv::forward(
            &geom,
            self.value(input),
            self.value(weight),
            self.value(bias),
            keep_cols,
        );
        let shape = Shape::new(geom.output_dims())?;
        self.record(
            "conv2d",
            shape,
            out,
            Op::Conv2d {
                input: input.index,
                weight: weight.index,
                bias: bias.index,
                geom,
                cols,
            },
        )
    }

    /// `x` for `x ≥ 0`, `slope·x` otherwise. The derivative at 0 is 1.
    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Config(format!("leaky_relu slope {slope} not in (0, 1)")));
        }
        self.unary(
            "leaky_relu",
            x,
            |v| if v >= 0.0 { v } else { slope * v },
            |input| Op::LeakyRelu { input, slope },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, |input| Op::Sigmoid { input })
    }

    /// Softmax over the channel axis of an NCHW tensor, max-shifted per pixel.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).clone();
        let (n, c, h, w) = shape.nchw("softmax_channels")?;
        if c < 2 {
            return Err(Error::Config(format!("softmax_channels needs C >= 2, got {c}")));
        }
        let plane = h * w;
        let src = self.value(x);
        let mut out = vec![0.0; src.len()];
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let max = (0..c)
                    .map(|k| src[base + k * plane + p])
                    .fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0;
                for k in 0..c {
                    let e = (src[base + k * plane + p] - max).exp();
                    out[base + k * plane + p] = e;
                    total += e;
                }
                for k in 0..c {
                    out[base + k * plane + p] /= total;
                }
            }
        }
        self.record(
            "softmax_channels",
            shape,
            out,
            Op::SoftmaxChannels { input: x.index },
        )
    }

    /// Bilinear resize on a corner-aligned grid (output corners coincide with
    /// input corners).
    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (n, c, h, w) = self.shape(x).nchw("upsample_bilinear")?;
        if out_h < h || out_w < w {
            return Err(Error::Config(format!(
                "upsample_bilinear target {out_h}x{out_w} smaller than input {h}x{w}"
            )));
        }
        let plan = UpsamplePlan {
            planes: n * c,
            in_h: h,
            in_w: w,
            rows: AxisTaps::new(h, out_h),
            cols: AxisTaps::new(w, out_w),
        };
        let out = plan.gather(self.value(x));
        let shape = Shape::new([n, c, out_h, out_w])?;
        self.record(
            "upsample_bilinear",
            shape,
            out,
            Op::Upsample {
                input: x.index,
                plan,
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.index, b.index))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.index, b.index))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.index, b.index))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var> {
        self.unary("scale", a, |x| x * s, |i| Op::Scale(i, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + s, Op::AddScalar)
    }

    /// Natural log of `max(x, 1e-12)`; zero gradient inside the clamp.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, |x| x.max(LOG_CLAMP).ln(), Op::Log)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).iter().map(|&v| f64::from(v)).sum::<f64>() as f32;
        self.record("sum", Shape::scalar(), vec![total], Op::Sum(a.index))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let mean = (v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64) as f32;
        self.record("mean", Shape::scalar(), vec![mean], Op::Mean(a.index))
    }

    /// Gradient-free constant with the given shape and values.
    pub fn constant_owned(&mut self, shape: Shape, values: Vec<f32>) -> Result<Var> {
        if shape.numel() != values.len() {
            return Err(Error::shape("constant", format!("{} values for {shape:?}", values.len())));
        }
        Ok(self.push_node(shape, Cow::Owned(values), false, Op::Leaf))
    }
}
