//! Dense row-major `f32` tensors and the handful of kernels a plain
//! feed-forward CNN needs: convolution, ReLU, 2×2 max pooling, linear layers,
//! softmax cross-entropy, and the input-gradient rule for each layer kind.
//!
//! Reductions inside convolution and linear layers accumulate in `f64` and in
//! a fixed order, so every kernel here is bitwise reproducible.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!("extents must be >= 1, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "bad shape {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                acc * d + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f32) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Interprets the tensor as `[c, h, w]`.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(format!("expected rank-3 tensor, got {:?}", self.shape))),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Coordinates of each 2×2 max-pool winner, recorded during the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    coords: Vec<(u32, u32)>,
}

impl PoolIndices {
    /// Input coordinate `(y, x)` that won output cell `(c, qy, qx)`.
    #[inline]
    pub fn argmax(&self, c: usize, qy: usize, qx: usize) -> (usize, usize) {
        let (y, x) = self.coords[(c * self.out_h + qy) * self.out_w + qx];
        (y as usize, x as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Conv,
    Relu,
    MaxPool,
    Flatten,
    Linear,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv => "conv",
            OpKind::Relu => "relu",
            OpKind::MaxPool => "maxpool",
            OpKind::Flatten => "flatten",
            OpKind::Linear => "linear",
        }
    }
}

/// What the backward rule of one layer needs from its forward pass.
#[derive(Debug, Clone, Copy)]
pub enum BackwardRecord<'a> {
    Conv {
        weight: &'a Tensor,
        pad: usize,
        stride: usize,
        input_shape: [usize; 3],
    },
    Relu {
        mask: &'a Tensor,
    },
    MaxPool {
        indices: &'a PoolIndices,
    },
    Flatten {
        input_shape: &'a [usize],
    },
    Linear {
        weight: &'a Tensor,
    },
}

impl BackwardRecord<'_> {
    pub fn kind(&self) -> OpKind {
        match self {
            BackwardRecord::Conv { .. } => OpKind::Conv,
            BackwardRecord::Relu { .. } => OpKind::Relu,
            BackwardRecord::MaxPool { .. } => OpKind::MaxPool,
            BackwardRecord::Flatten { .. } => OpKind::Flatten,
            BackwardRecord::Linear { .. } => OpKind::Linear,
        }
    }
}

pub fn conv_output_extent(n: usize, k: usize, pad: usize, stride: usize) -> Result<usize> {
    let padded = n + 2 * pad;
    if stride == 0 || padded < k || !(padded - k).is_multiple_of(stride) {
        return Err(Error::shape(format!(
            "extent {n} with k={k}, pad={pad}, stride={stride} is not integral"
        )));
    }
    Ok((padded - k) / stride + 1)
}

fn check_conv_shapes(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (cin, h, w) = input.dims3()?;
    let &[cout, wcin, kh, kw] = weight.shape() else {
        return Err(Error::shape(format!("conv weight must be rank 4, got {:?}", weight.shape())));
    };
    if wcin != cin {
        return Err(Error::shape(format!("conv weight expects {wcin} input channels, input has {cin}")));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape(format!("conv kernel must be square and odd, got {kh}x{kw}")));
    }
    Ok((cin, h, w, cout, kh))
}

pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    pad: usize,
    stride: usize,
) -> Result<Tensor> {
    let (cin, h, w, cout, k) = check_conv_shapes(input, weight)?;
    if bias.shape() != [cout] {
        return Err(Error::shape(format!("conv bias must be [{cout}], got {:?}", bias.shape())));
    }
    let oh = conv_output_extent(h, k, pad, stride)?;
    let ow = conv_output_extent(w, k, pad, stride)?;

    let x = input.data();
    let wt = weight.data();
    let mut out = Vec::with_capacity(cout * oh * ow);
    let mut acc = vec![0f64; oh * ow];
    for co in 0..cout {
        acc.fill(bias.data()[co] as f64);
        for ci in 0..cin {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for dy in 0..k {
                for dx in 0..k {
                    let wv = wt[((co * cin + ci) * k + dy) * k + dx] as f64;
                    for oy in 0..oh {
                        let iy = (oy * stride + dy) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let acc_row = &mut acc[oy * ow..(oy + 1) * ow];
                        for (ox, a) in acc_row.iter_mut().enumerate() {
                            let ix = (ox * stride + dx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *a += wv * row[ix as usize] as f64;
                            }
                        }
                    }
                }
            }
        }
        out.extend(acc.iter().map(|&v| v as f32));
    }
    Tensor::new(vec![cout, oh, ow], out)
}

pub fn relu_forward(input: &Tensor) -> (Tensor, Tensor) {
    let out = input.map(|v| if v > 0.0 { v } else { 0.0 });
    let mask = input.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    (out, mask)
}

/// 2×2, stride-2 max pooling with ceiling semantics: odd extents get a
/// partial trailing window. Ties go to the first element in row-major order.
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let (c, h, w) = input.dims3()?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut coords = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for qy in 0..oh {
            for qx in 0..ow {
                let mut best = (2 * qy, 2 * qx);
                let mut best_v = x[(ch * h + best.0) * w + best.1];
                for y in 2 * qy..(2 * qy + 2).min(h) {
                    for xx in 2 * qx..(2 * qx + 2).min(w) {
                        let v = x[(ch * h + y) * w + xx];
                        if v > best_v {
                            best_v = v;
                            best = (y, xx);
                        }
                    }
                }
                out.push(best_v);
                coords.push((best.0 as u32, best.1 as u32));
            }
        }
    }
    let indices = PoolIndices {
        channels: c,
        in_h: h,
        in_w: w,
        out_h: oh,
        out_w: ow,
        coords,
    };
    Ok((Tensor::new(vec![c, oh, ow], out)?, indices))
}

pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let &[m, n] = weight.shape() else {
        return Err(Error::shape(format!("linear weight must be rank 2, got {:?}", weight.shape())));
    };
    if input.len() != n || input.rank() != 1 {
        return Err(Error::shape(format!("linear expects [{n}] input, got {:?}", input.shape())));
    }
    if bias.shape() != [m] {
        return Err(Error::shape(format!("linear bias must be [{m}], got {:?}", bias.shape())));
    }
    let x = input.data();
    let out = weight
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, &b)| {
            let s = row
                .iter()
                .zip(x)
                .fold(b as f64, |acc, (&wv, &xv)| acc + wv as f64 * xv as f64);
            s as f32
        })
        .collect();
    Tensor::new(vec![m], out)
}

/// Returns `(loss, d loss / d logits)` for `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f32, Tensor)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::invalid(format!("label {label} out of range for {} classes", z.len())));
    }
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = z.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (z[label] as f64 - max);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| (e / sum - if i == label { 1.0 } else { 0.0 }) as f32)
        .collect();
    Ok((loss as f32, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Gradient with respect to a layer's input, given the gradient with respect
/// to its output and what the forward pass recorded.
pub fn layer_input_gradient(kind: OpKind, upstream: &Tensor, record: &BackwardRecord<'_>) -> Result<Tensor> {
    if record.kind() != kind {
        return Err(Error::KindMismatch {
            expected: kind.name(),
            got: record.kind().name(),
        });
    }
    match *record {
        BackwardRecord::Relu { mask } => {
            if mask.shape() != upstream.shape() {
                return Err(Error::shape("relu mask and upstream gradient differ in shape"));
            }
            let data = upstream.data().iter().zip(mask.data()).map(|(g, m)| g * m).collect();
            Tensor::new(upstream.shape().to_vec(), data)
        }
        BackwardRecord::MaxPool { indices } => {
            let (c, oh, ow) = upstream.dims3()?;
            if (c, oh, ow) != (indices.channels, indices.out_h, indices.out_w) {
                return Err(Error::shape("pool indices and upstream gradient differ in shape"));
            }
            let (h, w) = (indices.in_h, indices.in_w);
            let mut grad = Tensor::zeros(&[c, h, w]);
            let g = grad.data_mut();
            let up = upstream.data();
            for ch in 0..c {
                for qy in 0..oh {
                    for qx in 0..ow {
                        let (y, x) = indices.argmax(ch, qy, qx);
                        g[(ch * h + y) * w + x] += up[(ch * oh + qy) * ow + qx];
                    }
                }
            }
            Ok(grad)
        }
        BackwardRecord::Flatten { input_shape } => upstream.clone().reshape(input_shape),
        BackwardRecord::Linear { weight } => {
            let &[m, n] = weight.shape() else {
                return Err(Error::shape("linear weight must be rank 2"));
            };
            if upstream.len() != m {
                return Err(Error::shape(format!("linear upstream must have {m} entries")));
            }
            let up = upstream.data();
            let mut acc = vec![0f64; n];
            for (row, &g) in weight.data().chunks_exact(n).zip(up) {
                for (a, &wv) in acc.iter_mut().zip(row) {
                    *a += wv as f64 * g as f64;
                }
            }
            Tensor::new(vec![n], acc.into_iter().map(|v| v as f32).collect())
        }
        BackwardRecord::Conv {
            weight,
            pad,
            stride,
            input_shape: [cin, h, w],
        } => {
            let &[cout, wcin, k, _] = weight.shape() else {
                return Err(Error::shape("conv weight must be rank 4"));
            };
            let (uc, oh, ow) = upstream.dims3()?;
            if uc != cout || wcin != cin {
                return Err(Error::shape("conv weight and upstream gradient disagree"));
            }
            // Transpose of the forward correlation: scatter each output
            // gradient back through the same taps.
            let up = upstream.data();
            let wt = weight.data();
            let mut acc = vec![0f64; cin * h * w];
            for co in 0..cout {
                for ci in 0..cin {
                    for dy in 0..k {
                        for dx in 0..k {
                            let wv = wt[((co * cin + ci) * k + dy) * k + dx] as f64;
                            for oy in 0..oh {
                                let iy = (oy * stride + dy) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for ox in 0..ow {
                                    let ix = (ox * stride + dx) as isize - pad as isize;
                                    if ix >= 0 && ix < w as isize {
                                        acc[(ci * h + iy as usize) * w + ix as usize] +=
                                            wv * up[(co * oh + oy) * ow + ox] as f64;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Tensor::new(vec![cin, h, w], acc.into_iter().map(|v| v as f32).collect())
        }
    }
}
