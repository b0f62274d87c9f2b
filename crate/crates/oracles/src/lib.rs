//! Straightforward reference computations, written independently of the
//! optimized code paths they check: an f64 forward pass, an exhaustive
//! enumeration of pathway paths, and the field-extent update rules.

use diffpath::{LayerKind, LayerParams, LayerSpec, Model, ModelSpec, Tensor};

/// Outputs of layers `from..` in f64, given the input of layer `from`.
pub fn forward64_layers(model: &Model, from: usize, input: Vec<f64>) -> Vec<Vec<f64>> {
    let spec = model.spec();
    let mut shape = spec.input_shape_of(from).to_vec();
    let mut x = input;
    let mut outs = Vec::new();
    for i in from..spec.layers().len() {
        x = step64(&spec.layers()[i], model.params(i), &x, &shape);
        shape = spec.output_shape(i).to_vec();
        outs.push(x.clone());
    }
    outs
}

/// Output of every layer for `image`.
pub fn forward64(model: &Model, image: &Tensor) -> Vec<Vec<f64>> {
    forward64_layers(model, 0, image.data().iter().map(|&v| v as f64).collect())
}

/// Logits when `act` is fed in as the input of layer `from`.
pub fn logits64_from(model: &Model, from: usize, act: Vec<f64>) -> Vec<f64> {
    forward64_layers(model, from, act).pop().expect("layers after `from`")
}

/// Softmax cross-entropy of the f64 logits at `label`.
pub fn loss64(model: &Model, image: &Tensor, label: usize) -> f64 {
    let logits = forward64(model, image).pop().expect("model has layers");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    sum.ln() - (logits[label] - max)
}

fn step64(layer: &LayerSpec, params: &LayerParams, x: &[f64], shape: &[usize]) -> Vec<f64> {
    match (&layer.kind, params) {
        (LayerKind::Conv { cin, cout, k, pad }, LayerParams::Conv { weight, bias }) => {
            let (h, w) = (shape[1], shape[2]);
            let mut out = vec![0f64; cout * h * w];
            for co in 0..*cout {
                for oy in 0..h {
                    for ox in 0..w {
                        let mut s = bias.data()[co] as f64;
                        for ci in 0..*cin {
                            for ty in 0..*k {
                                for tx in 0..*k {
                                    let iy = oy as isize + ty as isize - *pad as isize;
                                    let ix = ox as isize + tx as isize - *pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    s += weight.get(&[co, ci, ty, tx]) as f64
                                        * x[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out[(co * h + oy) * w + ox] = s;
                    }
                }
            }
            out
        }
        (LayerKind::Relu, _) => x.iter().map(|&v| v.max(0.0)).collect(),
        (LayerKind::MaxPool, _) => {
            let (c, h, w) = (shape[0], shape[1], shape[2]);
            let mut out = Vec::new();
            for ch in 0..c {
                let plane = &x[ch * h * w..(ch + 1) * h * w];
                for qy in 0..h.div_ceil(2) {
                    for qx in 0..w.div_ceil(2) {
                        let (my, mx) = window_argmax(plane, h, w, qy, qx);
                        out.push(plane[my * w + mx]);
                    }
                }
            }
            out
        }
        (LayerKind::Flatten, _) => x.to_vec(),
        (LayerKind::Linear { inputs, outputs }, LayerParams::Linear { weight, bias }) => (0..*outputs)
            .map(|o| bias.data()[o] as f64 + (0..*inputs).map(|i| weight.get(&[o, i]) as f64 * x[i]).sum::<f64>())
            .collect(),
        _ => panic!("layer {} has mismatched parameters", layer.name),
    }
}

/// Row-major-first argmax of the (possibly partial) 2×2 window at `(qy, qx)`
/// of one `h×w` plane.
pub fn window_argmax<T: PartialOrd + Copy>(plane: &[T], h: usize, w: usize, qy: usize, qx: usize) -> (usize, usize) {
    let mut best = (2 * qy, 2 * qx);
    for my in 2 * qy..(2 * qy + 2).min(h) {
        for mx in 2 * qx..(2 * qx + 2).min(w) {
            if plane[my * w + mx] > plane[best.0 * w + best.1] {
                best = (my, mx);
            }
        }
    }
    best
}

/// Sum of path weights per (pathway layer, channel) for source pixel
/// `(y, x)`, gated by the masks of the f32 forward pass.
///
/// A path picks, at each conv, an output channel and a forward tap `t`; it
/// moves from input coordinate `s` to the output coordinate `s + r - t` that
/// reads `s` through that tap, and multiplies by `W[t] + 1`. The path dies if
/// the coordinate leaves the map, if the following ReLU was off there, if the
/// channel is outside the keep-set, or, at a pool, if `s` is not the argmax of
/// its window.
pub fn path_sums(model: &Model, image: &Tensor, keep: Option<&[Vec<usize>]>, y: usize, x: usize) -> Vec<Vec<f64>> {
    let trace = model.forward_trace(image).expect("image fits the model");
    let spec = model.spec();
    let mut walker = Walker {
        model,
        outputs: &trace.outputs,
        keep,
        sums: spec.pathway_channels().iter().map(|&c| vec![0.0; c]).collect(),
    };
    for c in 0..spec.input_shape()[0] {
        walker.walk(0, c, y, x, image.get(&[c, y, x]) as f64);
    }
    walker.sums
}

struct Walker<'a> {
    model: &'a Model,
    outputs: &'a [Tensor],
    keep: Option<&'a [Vec<usize>]>,
    sums: Vec<Vec<f64>>,
}

impl Walker<'_> {
    fn walk(&mut self, layer: usize, c: usize, y: usize, x: usize, w: f64) {
        let spec = self.model.spec();
        let Some(l) = spec.pathway_index(layer) else {
            if layer + 1 < spec.layers().len() && !matches!(spec.layers()[layer].kind, LayerKind::Flatten) {
                self.walk(layer + 1, c, y, x, w);
            }
            return;
        };
        match spec.layers()[layer].kind {
            LayerKind::Conv { cout, k, .. } => {
                let LayerParams::Conv { weight, .. } = self.model.params(layer) else {
                    unreachable!()
                };
                let pre = &self.outputs[layer];
                let (h, wd) = (pre.shape()[1] as isize, pre.shape()[2] as isize);
                let gated = matches!(spec.layers().get(layer + 1).map(|s| &s.kind), Some(LayerKind::Relu));
                let r = (k as isize - 1) / 2;
                for co in 0..cout {
                    if self.keep.is_some_and(|keep| !keep[l].contains(&co)) {
                        continue;
                    }
                    for ty in 0..k {
                        for tx in 0..k {
                            let oy = y as isize + r - ty as isize;
                            let ox = x as isize + r - tx as isize;
                            if oy < 0 || ox < 0 || oy >= h || ox >= wd {
                                continue;
                            }
                            let (oy, ox) = (oy as usize, ox as usize);
                            if gated && pre.get(&[co, oy, ox]) <= 0.0 {
                                continue;
                            }
                            let nw = w * (weight.get(&[co, c, ty, tx]) as f64 + 1.0);
                            self.sums[l][co] += nw;
                            self.walk(layer + 1, co, oy, ox, nw);
                        }
                    }
                }
            }
            LayerKind::MaxPool => {
                let input = &self.outputs[layer - 1];
                let (h, wd) = (input.shape()[1], input.shape()[2]);
                let plane = &input.data()[c * h * wd..(c + 1) * h * wd];
                if window_argmax(plane, h, wd, y / 2, x / 2) == (y, x) {
                    self.sums[l][c] += w;
                    self.walk(layer + 1, c, y / 2, x / 2, w);
                }
            }
            _ => unreachable!(),
        }
    }
}

/// Top-n channels of every pathway layer by post-activation L1, ties to the
/// lower index.
pub fn l1_keep_sets(model: &Model, image: &Tensor, n: usize) -> Vec<Vec<usize>> {
    let trace = model.forward_trace(image).expect("image fits the model");
    let spec = model.spec();
    spec.pathway_layers()
        .iter()
        .map(|&layer| {
            let act = &trace.outputs[spec.activation_layer(layer)];
            let c = act.shape()[0];
            let plane = act.len() / c;
            let scores: Vec<f64> = (0..c)
                .map(|ch| act.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.abs() as f64).sum())
                .collect();
            let mut idx: Vec<usize> = (0..c).collect();
            idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            idx.truncate(n);
            idx
        })
        .collect()
}

/// Field extent after each pathway layer for a source at coordinate `start`:
/// a conv grows the extent by k-1 and moves the anchor by -(k-1)/2; a pool
/// maps the covered range [a, a+p-1] to [floor(a/2), floor((a+p-1)/2)].
pub fn extent_schedule(spec: &ModelSpec, start: isize) -> Vec<usize> {
    let (mut a, mut p) = (start, 1isize);
    let mut out = Vec::new();
    for &layer in spec.pathway_layers() {
        match spec.layers()[layer].kind {
            LayerKind::Conv { k, .. } => {
                a -= (k as isize - 1) / 2;
                p += k as isize - 1;
            }
            _ => {
                let last = (a + p - 1).div_euclid(2);
                a = a.div_euclid(2);
                p = last - a + 1;
            }
        }
        out.push(p as usize);
    }
    out
}
