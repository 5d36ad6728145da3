//! Shared locations and loaders for tests that need MNIST or the trained
//! fixtures. `SMOOTHFOOL_DATA_DIR` overrides the workspace `data/` folder.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use smoothfool::data::{load_mnist_idx, mnist_paths};
use smoothfool::fixture::{load_or_train, Recipe};
use smoothfool::net::LayerSpec;
use smoothfool::{LabeledDataset, Network, SmoothingKernel, Tensor};

pub fn data_dir() -> PathBuf {
    match std::env::var_os("SMOOTHFOOL_DATA_DIR") {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

pub fn mnist_dir() -> PathBuf {
    data_dir().join("mnist")
}

pub fn mnist_available() -> bool {
    let (images, labels) = mnist_paths(mnist_dir(), false);
    images.exists() && labels.exists()
}

pub fn mnist_test() -> Option<LabeledDataset> {
    if !mnist_available() {
        eprintln!("MNIST not found under {}; skipping", mnist_dir().display());
        return None;
    }
    let (images, labels) = mnist_paths(mnist_dir(), false);
    Some(load_mnist_idx(images, labels).expect("MNIST test split parses"))
}

/// Loads the cached fixture, training it on first use.
pub fn fixture(name: &str) -> Option<Network> {
    if !mnist_available() {
        return None;
    }
    let recipe = Recipe::by_name(name).expect("known fixture");
    Some(load_or_train(&recipe, &mnist_dir(), &data_dir().join("fixtures"), false).expect("fixture loads or trains"))
}

/// Indices of the first `n` test samples `net` classifies correctly.
pub fn correctly_classified(net: &Network, data: &LabeledDataset, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    for (i, (x, label)) in data.iter().enumerate() {
        if out.len() == n {
            break;
        }
        if net.predict(x).expect("fixture input") == label {
            out.push(i);
        }
    }
    out
}

/// A small conv -> relu -> pool -> dense -> relu -> dense network.
pub fn random_network(rng: &mut ChaCha8Rng) -> Network {
    let channels = rng.gen_range(1..=2);
    let out_channels = rng.gen_range(2..=3);
    // pooling needs an even convolution output
    let (side, k, stride, padding, conv_side) = loop {
        let side = rng.gen_range(6..=9);
        let k = rng.gen_range(2..=3);
        let stride = rng.gen_range(1..=2);
        let padding = rng.gen_range(0..=1);
        let conv_side = (side + 2 * padding - k) / stride + 1;
        if conv_side % 2 == 0 {
            break (side, k, stride, padding, conv_side);
        }
    };
    let pooled = conv_side / 2;
    let flat = out_channels * pooled * pooled;
    let hidden = rng.gen_range(3..=6);
    let classes = rng.gen_range(2..=4);
    let specs = vec![
        LayerSpec::Conv2d {
            in_channels: channels,
            out_channels,
            kernel: (k, k),
            stride,
            padding,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: flat,
            outputs: hidden,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: hidden,
            outputs: classes,
        },
    ];
    Network::initialize(vec![channels, side, side], &specs, rng).expect("consistent random architecture")
}

/// Direct replicate-padded convolution, one output pixel at a time.
pub fn naive_convolution(img: &Tensor, k: &SmoothingKernel) -> Tensor {
    let (_, h, w) = img.image_dims().unwrap();
    let r = k.radius() as i64;
    Tensor::from_fn(img.shape(), |idx| {
        let ch = idx / (h * w);
        let y = (idx / w % h) as i64;
        let x = (idx % w) as i64;
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let sy = (y + dy).clamp(0, h as i64 - 1) as usize;
                let sx = (x + dx).clamp(0, w as i64 - 1) as usize;
                acc += k.weight((dy + r) as usize, (dx + r) as usize) * img.data()[ch * h * w + sy * w + sx];
            }
        }
        acc
    })
}

pub fn random_kernel(rng: &mut ChaCha8Rng) -> SmoothingKernel {
    match rng.gen_range(0..4) {
        0 => SmoothingKernel::gaussian(rng.gen_range(0.3..3.0)).unwrap(),
        1 => SmoothingKernel::uniform(2 * rng.gen_range(0..5) + 1).unwrap(),
        2 => SmoothingKernel::linear(2 * rng.gen_range(1..5) + 1).unwrap(),
        _ => SmoothingKernel::identity(),
    }
}
