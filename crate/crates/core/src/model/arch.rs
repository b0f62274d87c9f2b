//! Built-in architectures.

use super::{LayerSpec, ModelSpec};
use crate::error::Result;

/// VGG-16 adapted to small inputs: 13 convolutions in five blocks, each
/// block closed by a 2×2 max pool, then three fully connected layers.
pub fn vgg16(input_shape: [usize; 3], classes: usize) -> Result<ModelSpec> {
    let blocks: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let mut layers = Vec::new();
    let mut cin = input_shape[0];
    let (mut h, mut w) = (input_shape[1], input_shape[2]);
    for (b, widths) in blocks.iter().enumerate() {
        for (j, &cout) in widths.iter().enumerate() {
            let name = format!("conv{}_{}", b + 1, j + 1);
            layers.push(LayerSpec::conv(&name, cin, cout, 3));
            layers.push(LayerSpec::relu(&format!("relu{}_{}", b + 1, j + 1)));
            cin = cout;
        }
        layers.push(LayerSpec::maxpool(&format!("maxpl{}", b + 1)));
        h = h.div_ceil(2);
        w = w.div_ceil(2);
    }
    let flat = cin * h * w;
    layers.push(LayerSpec::flatten("flatten"));
    layers.push(LayerSpec::linear("fc1", flat, 512));
    layers.push(LayerSpec::relu("fc1_relu"));
    layers.push(LayerSpec::linear("fc2", 512, 512));
    layers.push(LayerSpec::relu("fc2_relu"));
    layers.push(LayerSpec::linear("fc3", 512, classes));
    ModelSpec::new(layers, input_shape, classes)
}

/// Four convolutions in two pooled blocks; small enough for fast test runs.
pub fn tiny(input_shape: [usize; 3], classes: usize) -> Result<ModelSpec> {
    let c = input_shape[0];
    let (h, w) = (input_shape[1].div_ceil(2).div_ceil(2), input_shape[2].div_ceil(2).div_ceil(2));
    ModelSpec::new(
        vec![
            LayerSpec::conv("conv1_1", c, 8, 3),
            LayerSpec::relu("relu1_1"),
            LayerSpec::conv("conv1_2", 8, 8, 3),
            LayerSpec::relu("relu1_2"),
            LayerSpec::maxpool("maxpl1"),
            LayerSpec::conv("conv2_1", 8, 16, 3),
            LayerSpec::relu("relu2_1"),
            LayerSpec::conv("conv2_2", 16, 16, 3),
            LayerSpec::relu("relu2_2"),
            LayerSpec::maxpool("maxpl2"),
            LayerSpec::flatten("flatten"),
            LayerSpec::linear("fc", 16 * h * w, classes),
        ],
        input_shape,
        classes,
    )
}

/// 6×6 single-channel network: conv 1→2, ReLU, pool, conv 2→2, ReLU, then a
/// linear read-out to two classes.
pub fn toy() -> ModelSpec {
    ModelSpec::new(
        vec![
            LayerSpec::conv("conv1", 1, 2, 3),
            LayerSpec::relu("relu1"),
            LayerSpec::maxpool("pool1"),
            LayerSpec::conv("conv2", 2, 2, 3),
            LayerSpec::relu("relu2"),
            LayerSpec::flatten("flatten"),
            LayerSpec::linear("fc", 2 * 3 * 3, 2),
        ],
        [1, 6, 6],
        2,
    )
    .expect("toy architecture chains")
}

pub fn by_name(name: &str, input_shape: [usize; 3], classes: usize) -> Result<ModelSpec> {
    match name {
        "vgg16" => vgg16(input_shape, classes),
        "tiny" => tiny(input_shape, classes),
        "toy" => Ok(toy()),
        other => Err(crate::error::Error::invalid(format!(
            "unknown architecture {other:?} (expected vgg16, tiny or toy)"
        ))),
    }
}
