//! Diffusion pathways of individual pixels.
//!
//! Every pixel starts as a `C×1×1` field holding its own channel values. At
//! each conv layer the field is spread through the layer's 180°-rotated
//! filters with one added to every tap, then gated by the ReLU mask recorded
//! in the classifier's forward pass (and optionally by a per-layer set of
//! important channels). At each max-pool layer only the values sitting on the
//! forward pass's argmax positions survive. After every conv and pool layer
//! the field is summed over its spatial extent, giving that pixel's pathway
//! cross-section per channel.
//!
//! A field is positioned on the feature map by an anchor: the map coordinate
//! of its `(0, 0)` element. A `k×k` diffusion moves the anchor by
//! `-(k-1)/2` and grows the extent by `k-1`; pooling maps the anchor to
//! `⌊a/2⌋` and keeps every pooled cell the field touches.
//!
//! Fields are held in `f64`: the `(W+1)` products grow by roughly the fan-in
//! at every layer and leave `f32` range on deep networks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::model::dpwn::Container;
use crate::model::{rank_descending, ForwardTrace, Importance, LayerKind, Model, ModelSpec};
use crate::tensor::Tensor;

/// Rotates each `k×k` plane of a `[cout, cin, k, k]` weight by 180°.
pub fn rotate180(weight: &Tensor) -> Tensor {
    let &[cout, cin, kh, kw] = weight.shape() else {
        panic!("rotate180 expects a rank-4 weight, got {:?}", weight.shape());
    };
    let w = weight.data();
    let mut out = Tensor::zeros(weight.shape());
    let o = out.data_mut();
    for p in 0..cout * cin {
        for dy in 0..kh {
            for dx in 0..kw {
                o[(p * kh + dy) * kw + dx] = w[(p * kh + (kh - 1 - dy)) * kw + (kw - 1 - dx)];
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct DiffusionKernelSet {
    /// Indexed by model layer; `Some` for conv layers.
    kernels: Vec<Option<Tensor>>,
}

impl DiffusionKernelSet {
    pub fn get(&self, layer: usize) -> Option<&Tensor> {
        self.kernels.get(layer).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.kernels.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn build_diffusion_kernels(model: &Model) -> DiffusionKernelSet {
    let kernels = (0..model.spec().layers().len())
        .map(|i| model.conv_weight(i).map(rotate180))
        .collect();
    DiffusionKernelSet { kernels }
}

/// One pixel's diffusion state at some layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelField {
    pub origin: (usize, usize),
    pub channels: usize,
    pub ph: usize,
    pub pw: usize,
    /// Feature-map coordinate of element `(·, 0, 0)`.
    pub anchor: (isize, isize),
    /// `[channels, ph, pw]`, row-major.
    pub values: Vec<f64>,
    /// Number of pathway layers traversed so far.
    pub depth: usize,
}

impl PixelField {
    /// Initial `C×1×1` field of pixel `(y, x)`.
    pub fn from_pixel(image: &Tensor, y: usize, x: usize) -> Result<Self> {
        let (c, h, w) = image.dims3()?;
        if y >= h || x >= w {
            return Err(Error::invalid(format!("pixel ({y}, {x}) outside {h}x{w} image")));
        }
        Ok(PixelField {
            origin: (y, x),
            channels: c,
            ph: 1,
            pw: 1,
            anchor: (y as isize, x as isize),
            values: (0..c).map(|ch| image.get(&[ch, y, x]) as f64).collect(),
            depth: 0,
        })
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.ph + y) * self.pw + x]
    }

    /// Per-channel sum over the spatial extent.
    pub fn aggregate(&self) -> Vec<f64> {
        self.values
            .chunks_exact(self.ph * self.pw)
            .map(|p| p.iter().sum())
            .collect()
    }

    fn window(&self) -> Window {
        Window {
            y0: self.anchor.0,
            x0: self.anchor.1,
            h: self.ph,
            w: self.pw,
        }
    }
}

/// A rectangle of feature-map coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    y0: isize,
    x0: isize,
    h: usize,
    w: usize,
}

impl Window {
    fn clip(self, map_h: usize, map_w: usize) -> Window {
        let y0 = self.y0.max(0);
        let x0 = self.x0.max(0);
        let y1 = (self.y0 + self.h as isize).min(map_h as isize);
        let x1 = (self.x0 + self.w as isize).min(map_w as isize);
        Window {
            y0,
            x0,
            h: (y1 - y0).max(0) as usize,
            w: (x1 - x0).max(0) as usize,
        }
    }

    fn area(self) -> usize {
        self.h * self.w
    }
}

/// Diffusion kernel with `+1` folded in, laid out `[ci][dy][dx][co]` so the
/// innermost loop runs over output channels.
#[derive(Debug, Clone)]
struct PlusOneKernel {
    cin: usize,
    cout: usize,
    k: usize,
    taps: Vec<f64>,
}

impl PlusOneKernel {
    fn new(rw: &Tensor) -> Result<Self> {
        let (cout, _, _) = kernel_dims(rw)?;
        Self::for_channels(rw, &(0..cout).collect::<Vec<_>>())
    }

    /// Kernel producing only the listed output channels, in that order.
    fn for_channels(rw: &Tensor, channels: &[usize]) -> Result<Self> {
        let (_, cin, k) = kernel_dims(rw)?;
        let w = rw.data();
        let n = channels.len();
        let mut taps = vec![0f64; cin * k * k * n];
        for (j, &co) in channels.iter().enumerate() {
            for t in 0..cin * k * k {
                taps[t * n + j] = w[co * cin * k * k + t] as f64 + 1.0;
            }
        }
        Ok(PlusOneKernel { cin, cout: n, k, taps })
    }
}

/// Full correlation of `src` (`[cin, src_win]`) with the kernel, evaluated on
/// `out_win`. Returns `[out position][co]`:
/// `out(Y, X, co) = Σ src(ci, Y + r - dy, X + r - dx) · kernel(co, ci, dy, dx)`.
///
/// Each output element accumulates in `ci → dy → dx` order; zero sources are
/// skipped, which never changes a sum, so every caller gets identical bits.
fn diffuse(src: &[f64], src_win: Window, kernel: &PlusOneKernel, out_win: Window) -> Vec<f64> {
    let PlusOneKernel { cin, cout, k, .. } = *kernel;
    let r = (k as isize - 1) / 2;
    let mut acc = vec![0f64; out_win.area() * cout];
    let plane = src_win.area();
    if plane == 0 || out_win.area() == 0 {
        return acc;
    }
    for ci in 0..cin {
        let sp = &src[ci * plane..(ci + 1) * plane];
        if sp.iter().all(|&v| v == 0.0) {
            continue;
        }
        for dy in 0..k {
            for dx in 0..k {
                let t = (ci * k + dy) * k + dx;
                let taps = &kernel.taps[t * cout..(t + 1) * cout];
                for oy in 0..out_win.h {
                    let sy = out_win.y0 + oy as isize + r - dy as isize - src_win.y0;
                    if sy < 0 || sy >= src_win.h as isize {
                        continue;
                    }
                    for ox in 0..out_win.w {
                        let sx = out_win.x0 + ox as isize + r - dx as isize - src_win.x0;
                        if sx < 0 || sx >= src_win.w as isize {
                            continue;
                        }
                        let s = sp[sy as usize * src_win.w + sx as usize];
                        if s == 0.0 {
                            continue;
                        }
                        let p = oy * out_win.w + ox;
                        for (a, &wv) in acc[p * cout..(p + 1) * cout].iter_mut().zip(taps) {
                            *a += wv * s;
                        }
                    }
                }
            }
        }
    }
    acc
}

fn kernel_dims(rw: &Tensor) -> Result<(usize, usize, usize)> {
    match *rw.shape() {
        [cout, cin, k, kw] if k == kw && k % 2 == 1 => Ok((cout, cin, k)),
        _ => Err(Error::shape(format!("diffusion kernel must be [cout, cin, k, k] with odd k, got {:?}", rw.shape()))),
    }
}

/// Spreads a field through `RW + 1` (full correlation), growing each extent
/// by `k - 1`.
pub fn conv_diffuse(field: &PixelField, rw: &Tensor) -> Result<PixelField> {
    let (cout, cin, k) = kernel_dims(rw)?;
    if cin != field.channels {
        return Err(Error::shape(format!(
            "field has {} channels, kernel expects {cin}",
            field.channels
        )));
    }
    let kernel = PlusOneKernel::new(rw)?;
    let r = (k as isize - 1) / 2;
    let src_win = field.window();
    let out_win = Window {
        y0: src_win.y0 - r,
        x0: src_win.x0 - r,
        h: field.ph + k - 1,
        w: field.pw + k - 1,
    };
    let plane = out_win.area();
    let acc = diffuse(&field.values, src_win, &kernel, out_win);
    let mut values = vec![0f64; cout * plane];
    for (p, row) in acc.chunks_exact(cout).enumerate() {
        for (co, &v) in row.iter().enumerate() {
            values[co * plane + p] = v;
        }
    }
    Ok(PixelField {
        origin: field.origin,
        channels: cout,
        ph: out_win.h,
        pw: out_win.w,
        anchor: (out_win.y0, out_win.x0),
        values,
        depth: field.depth + 1,
    })
}

/// Zeroes field elements that fall outside the feature map or sit on a
/// position the forward ReLU switched off. `relu_layer` is the model index
/// of the ReLU layer.
pub fn apply_relu_mask(field: &PixelField, trace: &ForwardTrace, relu_layer: usize) -> Result<PixelField> {
    let mask = trace
        .relu_masks
        .get(relu_layer)
        .and_then(Option::as_ref)
        .ok_or_else(|| Error::MissingRecord(format!("no ReLU mask at layer {relu_layer}")))?;
    let (c, h, w) = mask.dims3()?;
    if c != field.channels {
        return Err(Error::shape(format!("ReLU mask has {c} channels, field has {}", field.channels)));
    }
    let m = mask.data();
    let mut out = field.clone();
    for ch in 0..c {
        for y in 0..field.ph {
            for x in 0..field.pw {
                let (my, mx) = (field.anchor.0 + y as isize, field.anchor.1 + x as isize);
                let on = my >= 0
                    && mx >= 0
                    && (my as usize) < h
                    && (mx as usize) < w
                    && m[(ch * h + my as usize) * w + mx as usize] != 0.0;
                if !on {
                    out.values[(ch * field.ph + y) * field.pw + x] = 0.0;
                }
            }
        }
    }
    Ok(out)
}

/// Keeps, for every pooled cell the field touches, the value at that cell's
/// forward argmax. `pool_layer` is the model index of the max-pool layer.
pub fn apply_pool_mask(field: &PixelField, trace: &ForwardTrace, pool_layer: usize) -> Result<PixelField> {
    let idx = trace
        .pool_indices
        .get(pool_layer)
        .and_then(Option::as_ref)
        .ok_or_else(|| Error::MissingRecord(format!("no pool argmax at layer {pool_layer}")))?;
    if idx.channels != field.channels {
        return Err(Error::shape("pool record and field differ in channel count"));
    }
    let (ay, ax) = field.anchor;
    let qy0 = ay.div_euclid(2);
    let qx0 = ax.div_euclid(2);
    let ph = ((ay + field.ph as isize - 1).div_euclid(2) - qy0 + 1) as usize;
    let pw = ((ax + field.pw as isize - 1).div_euclid(2) - qx0 + 1) as usize;
    let mut values = vec![0f64; field.channels * ph * pw];
    for ch in 0..field.channels {
        for py in 0..ph {
            for px in 0..pw {
                let (qy, qx) = (qy0 + py as isize, qx0 + px as isize);
                if qy < 0 || qx < 0 || qy as usize >= idx.out_h || qx as usize >= idx.out_w {
                    continue;
                }
                let (my, mx) = idx.argmax(ch, qy as usize, qx as usize);
                let (fy, fx) = (my as isize - ay, mx as isize - ax);
                if fy >= 0 && fx >= 0 && (fy as usize) < field.ph && (fx as usize) < field.pw {
                    values[(ch * ph + py) * pw + px] = field.get(ch, fy as usize, fx as usize);
                }
            }
        }
    }
    Ok(PixelField {
        origin: field.origin,
        channels: field.channels,
        ph,
        pw,
        anchor: (qy0, qx0),
        values,
        depth: field.depth + 1,
    })
}

/// Zeroes every channel not in `keep`.
pub fn apply_channel_mask(field: &PixelField, keep: &[usize]) -> Result<PixelField> {
    let mut kept = vec![false; field.channels];
    for &c in keep {
        *kept.get_mut(c).ok_or_else(|| {
            Error::invalid(format!("channel {c} out of range for {} channels", field.channels))
        })? = true;
    }
    let mut out = field.clone();
    let plane = field.ph * field.pw;
    for (ch, p) in out.values.chunks_exact_mut(plane).enumerate() {
        if !kept[ch] {
            p.fill(0.0);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMask {
    Off,
    TopK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    ActivationL1,
    /// Gradient × activation toward the class the model predicts.
    GradTimesActivation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathwayOptions {
    pub channel_mask: ChannelMask,
    pub importance: ImportanceMethod,
    /// When false the ReLU gate is skipped (map-boundary clipping still
    /// applies); pool routing always applies.
    pub relu_masks: bool,
    /// Pixels per work unit.
    #[serde(skip)]
    pub chunk: usize,
}

impl Default for PathwayOptions {
    fn default() -> Self {
        PathwayOptions {
            channel_mask: ChannelMask::Off,
            importance: ImportanceMethod::ActivationL1,
            relu_masks: true,
            chunk: 64,
        }
    }
}

/// Pathway cross-section intensities of every pixel at one pathway layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPathwayAggregate {
    /// Pathway index (L0, L1, ...).
    pub layer: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// `[height, width, channels]`, row-major.
    pub values: Vec<f64>,
}

impl LayerPathwayAggregate {
    pub fn zeros(layer: usize, height: usize, width: usize, channels: usize) -> Self {
        LayerPathwayAggregate {
            layer,
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        }
    }

    pub fn row(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.values[o..o + self.channels]
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    /// Σ over pixels, per channel.
    pub fn channel_totals(&self) -> Vec<f64> {
        let mut t = vec![0f64; self.channels];
        for row in self.values.chunks_exact(self.channels) {
            for (a, v) in t.iter_mut().zip(row) {
                *a += v;
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathwayResult {
    pub layers: Vec<LayerPathwayAggregate>,
    pub options: PathwayOptions,
}

impl PathwayResult {
    pub fn layer(&self, l: usize) -> Result<&LayerPathwayAggregate> {
        self.layers
            .get(l)
            .ok_or_else(|| Error::invalid(format!("no pathway layer L{l} (have {})", self.layers.len())))
    }

    pub fn channel_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|a| a.channels).collect()
    }

    /// Stores each layer as `agg/L<idx>` with shape `(H, W, C)`. Values are
    /// divided by `2^scale_log2[l]` (recorded in `meta`) so they fit in f32.
    pub fn to_container(&self, spec: &ModelSpec) -> Container {
        let mut scales = Vec::with_capacity(self.layers.len());
        let tensors = self
            .layers
            .iter()
            .map(|a| {
                let max = a.values.iter().fold(0f64, |m, v| m.max(v.abs()));
                let e = if max > 2f64.powi(64) { max.log2().ceil() as i32 - 64 } else { 0 };
                scales.push(e);
                let s = 2f64.powi(-e);
                let data = a.values.iter().map(|&v| (v * s) as f32).collect();
                let t = Tensor::new(vec![a.height, a.width, a.channels], data).expect("aggregate shape");
                (format!("agg/L{}", a.layer), t)
            })
            .collect();
        Container {
            arch: spec.to_arch(),
            input_shape: spec.input_shape(),
            classes: spec.classes(),
            tensors,
            meta: Some(json!({ "options": self.options, "scale_log2": scales })),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let bad = |msg: String| Error::Header { format: "DPWN", msg };
        let meta = c.meta.as_ref().ok_or_else(|| bad("aggregate file lacks meta record".into()))?;
        let mut options: PathwayOptions = serde_json::from_value(meta["options"].clone())
            .map_err(|e| bad(format!("bad options record: {e}")))?;
        options.chunk = PathwayOptions::default().chunk;
        let scales: Vec<i32> = serde_json::from_value(meta["scale_log2"].clone())
            .map_err(|e| bad(format!("bad scale record: {e}")))?;
        let mut layers = Vec::new();
        for (l, &e) in scales.iter().enumerate() {
            let t = c
                .tensor(&format!("agg/L{l}"))
                .ok_or_else(|| bad(format!("missing tensor agg/L{l}")))?;
            let &[h, w, ch] = t.shape() else {
                return Err(bad(format!("agg/L{l} must be rank 3")));
            };
            let s = 2f64.powi(e);
            layers.push(LayerPathwayAggregate {
                layer: l,
                height: h,
                width: w,
                channels: ch,
                values: t.data().iter().map(|&v| v as f64 * s).collect(),
            });
        }
        Ok(PathwayResult { layers, options })
    }
}

/// Field held only over its in-bounds part. Elements outside the map are
/// always zero after masking, so this is an exact representation.
#[derive(Debug, Clone)]
struct ClippedField {
    channels: usize,
    ph: usize,
    pw: usize,
    anchor: (isize, isize),
    win: Window,
    values: Vec<f64>,
}

impl ClippedField {

    fn aggregate(&self) -> Vec<f64> {
        let plane = self.win.area();
        if plane == 0 {
            return vec![0.0; self.channels];
        }
        self.values.chunks_exact(plane).map(|p| p.iter().sum()).collect()
    }
}

/// Per-layer state of one pixel, as reported by [`PathwayEngine::trace_pixel`].
#[derive(Debug, Clone, PartialEq)]
pub struct PixelLayerState {
    pub ph: usize,
    pub pw: usize,
    pub anchor: (isize, isize),
    pub aggregate: Vec<f64>,
}

struct ConvStep {
    /// Restricted to the output channels in `channels`.
    kernel: PlusOneKernel,
    cout: usize,
    k: usize,
    map: (usize, usize),
    relu_layer: Option<usize>,
    /// Output channels that are computed (all, or the channel-mask keep set).
    channels: Vec<usize>,
}

enum Step {
    Conv(ConvStep),
    Pool { layer: usize },
}

/// Precomputed per-image state for extracting pathways of any pixel.
pub struct PathwayEngine<'a> {
    trace: &'a ForwardTrace,
    steps: Vec<Step>,
    options: PathwayOptions,
    input_channels: usize,
}

impl<'a> PathwayEngine<'a> {
    pub fn new(
        model: &Model,
        kernels: &DiffusionKernelSet,
        trace: &'a ForwardTrace,
        options: PathwayOptions,
    ) -> Result<Self> {
        Self::build(model, kernels, trace, options, None)
    }

    /// Like [`PathwayEngine::new`], but with keep-sets fixed by the caller
    /// (one per pathway layer; entries of pool layers are ignored) instead of
    /// ranked from this image's trace. Only used when the channel mask is on.
    pub fn with_keep_sets(
        model: &Model,
        kernels: &DiffusionKernelSet,
        trace: &'a ForwardTrace,
        options: PathwayOptions,
        keep: &[Vec<usize>],
    ) -> Result<Self> {
        if keep.len() != model.spec().pathway_layers().len() {
            return Err(Error::invalid(format!(
                "{} keep-sets for {} pathway layers",
                keep.len(),
                model.spec().pathway_layers().len()
            )));
        }
        Self::build(model, kernels, trace, options, Some(keep))
    }

    fn build(
        model: &Model,
        kernels: &DiffusionKernelSet,
        trace: &'a ForwardTrace,
        options: PathwayOptions,
        fixed: Option<&[Vec<usize>]>,
    ) -> Result<Self> {
        let spec = model.spec();
        let mut steps = Vec::new();
        for (l, &layer) in spec.pathway_layers().iter().enumerate() {
            match spec.layers()[layer].kind {
                LayerKind::Conv { .. } => {
                    let rw = kernels
                        .get(layer)
                        .ok_or_else(|| Error::MissingRecord(format!("no diffusion kernel for layer {layer}")))?;
                    let (cout, _, k) = kernel_dims(rw)?;
                    let out = spec.output_shape(layer);
                    let act = spec.activation_layer(layer);
                    let relu_layer = (act != layer && options.relu_masks).then_some(act);
                    if let Some(r) = relu_layer {
                        if trace.relu_masks.get(r).and_then(Option::as_ref).is_none() {
                            return Err(Error::MissingRecord(format!("no ReLU mask at layer {r}")));
                        }
                    }
                    let channels = match options.channel_mask {
                        ChannelMask::Off => (0..cout).collect(),
                        ChannelMask::TopK(_) if fixed.is_some() => {
                            let mut keep = fixed.unwrap()[l].clone();
                            keep.sort_unstable();
                            keep.dedup();
                            if keep.last().is_some_and(|&c| c >= cout) {
                                return Err(Error::invalid(format!("keep-set index out of range at L{l}")));
                            }
                            keep
                        }
                        ChannelMask::TopK(n) => {
                            let method = match options.importance {
                                ImportanceMethod::ActivationL1 => Importance::ActivationL1,
                                ImportanceMethod::GradTimesActivation => {
                                    Importance::GradTimesActivation { class: trace.predicted }
                                }
                            };
                            let ranking = model.channel_importance(trace, l, method)?;
                            let mut keep: Vec<usize> = ranking.into_iter().take(n).collect();
                            keep.sort_unstable();
                            keep
                        }
                    };
                    steps.push(Step::Conv(ConvStep {
                        kernel: PlusOneKernel::for_channels(rw, &channels)?,
                        cout,
                        k,
                        map: (out[1], out[2]),
                        relu_layer,
                        channels,
                    }));
                }
                LayerKind::MaxPool => {
                    if trace.pool_indices.get(layer).and_then(Option::as_ref).is_none() {
                        return Err(Error::MissingRecord(format!("no pool argmax at layer {layer}")));
                    }
                    steps.push(Step::Pool { layer });
                }
                _ => unreachable!("pathway layers are conv or pool"),
            }
        }
        Ok(PathwayEngine {
            trace,
            steps,
            options,
            input_channels: spec.input_shape()[0],
        })
    }

    /// Runs one pixel through every pathway layer, calling `visit` with the
    /// pathway index and state after each.
    fn run_pixel(&self, y: usize, x: usize, mut visit: impl FnMut(usize, &ClippedField)) {
        let image = &self.trace.input;
        let mut field = ClippedField {
            channels: self.input_channels,
            ph: 1,
            pw: 1,
            anchor: (y as isize, x as isize),
            win: Window { y0: y as isize, x0: x as isize, h: 1, w: 1 },
            values: (0..self.input_channels).map(|c| image.get(&[c, y, x]) as f64).collect(),
        };
        for (l, step) in self.steps.iter().enumerate() {
            field = match step {
                Step::Conv(conv) => self.conv_step(&field, conv),
                Step::Pool { layer } => self.pool_step(&field, *layer),
            };
            visit(l, &field);
        }
    }

    fn conv_step(&self, src: &ClippedField, conv: &ConvStep) -> ClippedField {
        let ConvStep { kernel, cout, k, map, relu_layer, channels } = conv;
        let r = (*k as isize - 1) / 2;
        let (ph, pw) = (src.ph + k - 1, src.pw + k - 1);
        let anchor = (src.anchor.0 - r, src.anchor.1 - r);
        let win = Window { y0: anchor.0, x0: anchor.1, h: ph, w: pw }.clip(map.0, map.1);
        let plane = win.area();
        let acc = diffuse(&src.values, src.win, kernel, win);
        let mask = relu_layer.map(|l| self.trace.relu_masks[l].as_ref().expect("checked in new").data());
        let (mh, mw) = *map;
        let mut values = vec![0f64; cout * plane];
        let n = channels.len();
        for oy in 0..win.h {
            for ox in 0..win.w {
                let p = oy * win.w + ox;
                let m_off = (win.y0 as usize + oy) * mw + win.x0 as usize + ox;
                for (j, &co) in channels.iter().enumerate() {
                    if mask.is_some_and(|m| m[co * mh * mw + m_off] == 0.0) {
                        continue;
                    }
                    values[co * plane + p] = acc[p * n + j];
                }
            }
        }
        ClippedField { channels: *cout, ph, pw, anchor, win, values }
    }

    fn pool_step(&self, src: &ClippedField, layer: usize) -> ClippedField {
        let idx = self.trace.pool_indices[layer].as_ref().expect("checked in new");
        let (ay, ax) = src.anchor;
        let anchor = (ay.div_euclid(2), ax.div_euclid(2));
        let ph = ((ay + src.ph as isize - 1).div_euclid(2) - anchor.0 + 1) as usize;
        let pw = ((ax + src.pw as isize - 1).div_euclid(2) - anchor.1 + 1) as usize;
        let win = Window { y0: anchor.0, x0: anchor.1, h: ph, w: pw }.clip(idx.out_h, idx.out_w);
        let plane = win.area();
        let splane = src.win.area();
        let mut values = vec![0f64; src.channels * plane];
        for ch in 0..src.channels {
            for py in 0..win.h {
                for px in 0..win.w {
                    let (qy, qx) = ((win.y0 as usize) + py, (win.x0 as usize) + px);
                    let (my, mx) = idx.argmax(ch, qy, qx);
                    let (sy, sx) = (my as isize - src.win.y0, mx as isize - src.win.x0);
                    if sy >= 0 && sx >= 0 && (sy as usize) < src.win.h && (sx as usize) < src.win.w {
                        values[(ch * win.h + py) * win.w + px] =
                            src.values[ch * splane + sy as usize * src.win.w + sx as usize];
                    }
                }
            }
        }
        ClippedField {
            channels: src.channels,
            ph,
            pw,
            anchor,
            win,
            values,
        }
    }

    /// Channels computed at each pathway layer; empty for pool layers.
    pub fn keep_sets(&self) -> Vec<Vec<usize>> {
        self.steps
            .iter()
            .map(|s| match s {
                Step::Conv(c) => c.channels.clone(),
                Step::Pool { .. } => Vec::new(),
            })
            .collect()
    }

    /// Extent, anchor and aggregate of one pixel after each pathway layer.
    pub fn trace_pixel(&self, y: usize, x: usize) -> Vec<PixelLayerState> {
        let mut out = Vec::with_capacity(self.steps.len());
        self.run_pixel(y, x, |_, f| {
            out.push(PixelLayerState {
                ph: f.ph,
                pw: f.pw,
                anchor: f.anchor,
                aggregate: f.aggregate(),
            })
        });
        out
    }

    /// Aggregates for every pixel of the image, chunked and run in parallel.
    /// Each pixel is computed sequentially, so the result does not depend on
    /// scheduling.
    pub fn extract(&self) -> PathwayResult {
        let (_, h, w) = self.trace.input.dims3().expect("image is rank 3");
        let channels: Vec<usize> = self
            .steps
            .iter()
            .scan(self.input_channels, |c, s| {
                if let Step::Conv(ConvStep { cout, .. }) = s {
                    *c = *cout;
                }
                Some(*c)
            })
            .collect();
        let chunk = self.options.chunk.max(1);
        let pixels: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect();
        let chunks: Vec<Vec<Vec<Vec<f64>>>> = pixels
            .par_chunks(chunk)
            .map(|px| {
                px.iter()
                    .map(|&(y, x)| {
                        let mut rows = Vec::with_capacity(self.steps.len());
                        self.run_pixel(y, x, |_, f| rows.push(f.aggregate()));
                        rows
                    })
                    .collect()
            })
            .collect();

        let mut layers: Vec<LayerPathwayAggregate> = channels
            .iter()
            .enumerate()
            .map(|(l, &c)| LayerPathwayAggregate::zeros(l, h, w, c))
            .collect();
        for (p, rows) in chunks.into_iter().flatten().enumerate() {
            for (agg, row) in layers.iter_mut().zip(rows) {
                agg.values[p * agg.channels..(p + 1) * agg.channels].copy_from_slice(&row);
            }
        }
        PathwayResult {
            layers,
            options: self.options,
        }
    }
}

/// Keep-sets shared by a whole dataset: channels ranked by importance scores
/// summed over every trace, top `n` per conv pathway layer.
pub fn dataset_keep_sets(
    model: &Model,
    traces: &[ForwardTrace],
    n: usize,
    method: ImportanceMethod,
) -> Result<Vec<Vec<usize>>> {
    let spec = model.spec();
    let mut out = Vec::with_capacity(spec.pathway_layers().len());
    for (l, &layer) in spec.pathway_layers().iter().enumerate() {
        if !matches!(spec.layers()[layer].kind, LayerKind::Conv { .. }) {
            out.push(Vec::new());
            continue;
        }
        let mut total = vec![0f64; spec.output_shape(layer)[0]];
        for t in traces {
            let m = match method {
                ImportanceMethod::ActivationL1 => Importance::ActivationL1,
                ImportanceMethod::GradTimesActivation => Importance::GradTimesActivation { class: t.predicted },
            };
            for (a, s) in total.iter_mut().zip(model.channel_scores(t, l, m)?) {
                *a += s;
            }
        }
        let mut keep: Vec<usize> = rank_descending(&total).into_iter().take(n).collect();
        keep.sort_unstable();
        out.push(keep);
    }
    Ok(out)
}

/// Runs the classifier on `image` and extracts the pathways of every pixel.
pub fn extract_pathways(
    model: &Model,
    kernels: &DiffusionKernelSet,
    image: &Tensor,
    options: PathwayOptions,
) -> Result<PathwayResult> {
    let trace = model.forward_trace(image)?;
    extract_with_trace(model, kernels, &trace, options)
}

pub fn extract_with_trace(
    model: &Model,
    kernels: &DiffusionKernelSet,
    trace: &ForwardTrace,
    options: PathwayOptions,
) -> Result<PathwayResult> {
    Ok(PathwayEngine::new(model, kernels, trace, options)?.extract())
}
