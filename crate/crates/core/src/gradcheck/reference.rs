//! Straightforward f64 forward implementations used as finite-difference
//! oracles. They share no code with the tape ops.

/// Dense row-major array; NCHW for rank 4, `[]` for scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Arr {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn new(dims: &[usize], data: &[f32]) -> Self {
        Arr {
            dims: dims.to_vec(),
            data: data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Arr {
            dims: vec![],
            data: vec![v],
        }
    }

    fn nchw(&self) -> (usize, usize, usize, usize) {
        (self.dims[0], self.dims[1], self.dims[2], self.dims[3])
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Arr {
        Arr {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub fn conv2d(x: &Arr, w: &Arr, b: &Arr, stride: usize, pad: usize, dil: usize) -> Arr {
    let (n, cin, h, wd) = x.nchw();
    let (cout, _, kh, kw) = w.nchw();
    let oh = (h + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
    let ow = (wd + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for b_ in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky * dil) as isize - pad as isize;
                                let ix = (ox * stride + kx * dil) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data[((b_ * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b_ * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Arr {
        dims: vec![n, cout, oh, ow],
        data: out,
    }
}

pub fn leaky_relu(x: &Arr, slope: f64) -> Arr {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

pub fn sigmoid(x: &Arr) -> Arr {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn softmax_channels(x: &Arr) -> Arr {
    let (n, c, h, w) = x.nchw();
    let plane = h * w;
    let mut out = x.clone();
    for b in 0..n {
        for p in 0..plane {
            let idx = |ch: usize| (b * c + ch) * plane + p;
            let z: f64 = (0..c).map(|ch| x.data[idx(ch)].exp()).sum();
            for ch in 0..c {
                out.data[idx(ch)] = x.data[idx(ch)].exp() / z;
            }
        }
    }
    out
}

/// Corner-aligned bilinear resize.
pub fn upsample_bilinear(x: &Arr, oh: usize, ow: usize) -> Arr {
    let (n, c, h, w) = x.nchw();
    let coord = |o: usize, src: usize, dst: usize| {
        if dst == 1 {
            0.0
        } else {
            o as f64 * (src - 1) as f64 / (dst - 1) as f64
        }
    };
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let at = |y: usize, xx: usize| x.data[(plane * h + y) * w + xx];
        for oy in 0..oh {
            let fy = coord(oy, h, oh);
            let y0 = (fy.floor() as usize).min(h - 1);
            let y1 = (y0 + 1).min(h - 1);
            let ty = fy - y0 as f64;
            for ox in 0..ow {
                let fx = coord(ox, w, ow);
                let x0 = (fx.floor() as usize).min(w - 1);
                let x1 = (x0 + 1).min(w - 1);
                let tx = fx - x0 as f64;
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                out[(plane * oh + oy) * ow + ox] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    Arr {
        dims: vec![n, c, oh, ow],
        data: out,
    }
}

/// −Σ log p[label] over non-ignored pixels.
pub fn seg_loss(probs: &Arr, labels: &[u8], ignore: u8) -> f64 {
    let (_, c, h, w) = probs.nchw();
    let plane = h * w;
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != ignore)
        .map(|(i, &l)| -probs.data[((i / plane) * c + usize::from(l)) * plane + i % plane].ln())
        .sum()
}

/// −Σ [z·log σ + (1−z)·log(1−σ)] with one label `z` per batch element.
pub fn disc_loss(sigma: &Arr, z: &[f64]) -> f64 {
    per_sample(sigma, z, |s, z| -(z * s.ln() + (1.0 - z) * (1.0 - s).ln()))
}

/// Σ [z·(σ−1)² + (1−z)·σ²] with one label `z` per batch element.
pub fn ls_disc_loss(sigma: &Arr, z: &[f64]) -> f64 {
    per_sample(sigma, z, |s, z| z * (s - 1.0).powi(2) + (1.0 - z) * s * s)
}

fn per_sample(sigma: &Arr, z: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    let per = sigma.data.len() / z.len();
    sigma
        .data
        .iter()
        .enumerate()
        .map(|(i, &s)| f(s, z[i / per]))
        .sum()
}

/// Trunk blocks as (stride, dilation); every block is a 3×3 convolution
/// with padding equal to its dilation, followed by leaky ReLU.
const TRUNK: [(usize, usize); 5] = [(2, 1), (2, 1), (2, 1), (1, 2), (1, 4)];

/// ASPP head: sum of parallel 3×3 convolutions at the given rates.
fn aspp(x: &Arr, params: &[Arr], rates: &[usize]) -> Arr {
    let mut acc: Option<Arr> = None;
    for (k, &r) in rates.iter().enumerate() {
        let y = conv2d(x, &params[2 * k], &params[2 * k + 1], 1, r, r);
        acc = Some(match acc {
            None => y,
            Some(mut a) => {
                a.data.iter_mut().zip(&y.data).for_each(|(p, q)| *p += q);
                a
            }
        });
    }
    acc.expect("at least one rate")
}

/// Segmentation network forward: level-1 and level-2 softmax maps at input
/// resolution. `params` are the trunk, main head and aux head tensors in
/// weight/bias order.
pub fn seg_forward(params: &[Arr], image: &Arr, rates: &[usize], slope: f64) -> [Arr; 2] {
    let (_, _, h, w) = image.nchw();
    let mut x = image.clone();
    let mut f2 = image.clone();
    for (i, &(stride, dil)) in TRUNK.iter().enumerate() {
        x = leaky_relu(&conv2d(&x, &params[2 * i], &params[2 * i + 1], stride, dil, dil), slope);
        if i == 3 {
            f2 = x.clone();
        }
    }
    let heads = &params[10..];
    let main = aspp(&x, &heads[..2 * rates.len()], rates);
    let aux = aspp(&f2, &heads[2 * rates.len()..], rates);
    [main, aux].map(|logits| softmax_channels(&upsample_bilinear(&logits, h, w)))
}

/// Discriminator forward: 4×4 stride-2 convolutions with leaky ReLU between
/// them, then (optionally) sigmoid and upsampling to the input size.
pub fn disc_forward(params: &[Arr], x: &Arr, slope: f64, squash: bool) -> Arr {
    let (_, _, h, w) = x.nchw();
    let layers = params.len() / 2;
    let mut y = x.clone();
    for i in 0..layers {
        y = conv2d(&y, &params[2 * i], &params[2 * i + 1], 2, 1, 1);
        if i + 1 < layers {
            y = leaky_relu(&y, slope);
        }
    }
    if squash {
        y = sigmoid(&y);
    }
    upsample_bilinear(&y, h, w)
}
