//! Batch-major forward and backward passes.
//!
//! Activations for a batch of `B` samples are stored contiguously, sample
//! after sample. A trace of one sample can be back-propagated with several
//! seed rows at once; every row then shares that sample's activations.

use super::gemm::gemm;
use super::{Layer, Network};
use crate::tensor::Tensor;

enum Aux {
    None,
    /// Per output element, the winning input offset within its sample.
    Pool(Vec<u32>),
    /// im2col matrices, `K x P` per sample, kept only for parameter gradients.
    Cols(Vec<f64>),
}

pub struct Trace<'n> {
    net: &'n Network,
    batch: usize,
    /// `acts[i]` is the input of layer `i`; the last entry holds the logits.
    acts: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

struct ConvGeom {
    ic: usize,
    h: usize,
    w: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn new(net: &Network, index: usize) -> Self {
        let Layer::Conv2d(c) = &net.layers()[index] else {
            unreachable!("not a conv layer")
        };
        let ins = net.layer_input_shape(index);
        let outs = net.layer_input_shape(index + 1);
        let ws = c.weight.shape();
        ConvGeom {
            ic: ins[0],
            h: ins[1],
            w: ins[2],
            oc: outs[0],
            kh: ws[2],
            kw: ws[3],
            oh: outs[1],
            ow: outs[2],
            stride: c.stride,
            pad: c.padding,
        }
    }

    fn k(&self) -> usize {
        self.ic * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    /// Calls `f(row, col, src_offset)` for every in-bounds im2col entry.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for c in 0..self.ic {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    for oy in 0..self.oh {
                        let sy = (oy * self.stride + i) as isize - self.pad as isize;
                        if sy < 0 || sy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let sx = (ox * self.stride + j) as isize - self.pad as isize;
                            if sx < 0 || sx >= self.w as isize {
                                continue;
                            }
                            let src = (c * self.h + sy as usize) * self.w + sx as usize;
                            f(row, oy * self.ow + ox, src);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.p();
        cols.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_tap(|row, col, src| cols[row * p + col] = x[src]);
    }

    fn col2im_add(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.p();
        self.for_each_tap(|row, col, src| dx[src] += cols[row * p + col]);
    }
}

/// Runs the network on `batch` samples laid out back to back in `x`.
pub(crate) fn forward<'n>(net: &'n Network, x: &[f64], batch: usize, keep_cols: bool) -> Trace<'n> {
    debug_assert_eq!(x.len(), batch * net.input_len());
    let mut acts = Vec::with_capacity(net.layers().len() + 1);
    let mut aux = Vec::with_capacity(net.layers().len());
    acts.push(x.to_vec());
    for (index, layer) in net.layers().iter().enumerate() {
        let input = acts.last().expect("non-empty");
        let in_len: usize = net.layer_input_shape(index).iter().product();
        let out_len: usize = net.layer_input_shape(index + 1).iter().product();
        let mut out = vec![0.0; batch * out_len];
        let mut extra = Aux::None;
        match layer {
            Layer::Dense(d) => {
                // Y (B x O) = X (B x I) * W^T
                gemm(batch, in_len, out_len, input, (in_len, 1), d.weight.data(), (1, in_len), 0.0, &mut out);
                for row in out.chunks_mut(out_len) {
                    for (y, b) in row.iter_mut().zip(d.bias.data()) {
                        *y += b;
                    }
                }
            }
            Layer::Conv2d(c) => {
                let g = ConvGeom::new(net, index);
                let (k, p) = (g.k(), g.p());
                let mut cols = vec![0.0; if keep_cols { batch * k * p } else { k * p }];
                for s in 0..batch {
                    let col = if keep_cols { &mut cols[s * k * p..(s + 1) * k * p] } else { &mut cols[..] };
                    g.im2col(&input[s * in_len..(s + 1) * in_len], col);
                    let y = &mut out[s * out_len..(s + 1) * out_len];
                    gemm(g.oc, k, p, c.weight.data(), (k, 1), col, (p, 1), 0.0, y);
                    for (plane, b) in y.chunks_mut(p).zip(c.bias.data()) {
                        plane.iter_mut().for_each(|v| *v += b);
                    }
                }
                if keep_cols {
                    extra = Aux::Cols(cols);
                }
            }
            Layer::Relu => {
                for (o, &v) in out.iter_mut().zip(input) {
                    *o = v.max(0.0);
                }
            }
            Layer::MaxPool2x2 => {
                let s = net.layer_input_shape(index);
                let (ch, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut idx = vec![0u32; batch * out_len];
                for b in 0..batch {
                    let src = &input[b * in_len..(b + 1) * in_len];
                    for c in 0..ch {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let base = (c * h + 2 * oy) * w + 2 * ox;
                                let mut best = base;
                                for cand in [base + 1, base + w, base + w + 1] {
                                    if src[cand] > src[best] {
                                        best = cand;
                                    }
                                }
                                let o = b * out_len + (c * oh + oy) * ow + ox;
                                out[o] = src[best];
                                idx[o] = best as u32;
                            }
                        }
                    }
                }
                extra = Aux::Pool(idx);
            }
            Layer::Flatten => out.copy_from_slice(input),
        }
        acts.push(out);
        aux.push(extra);
    }
    Trace { net, batch, acts, aux }
}

impl<'n> Trace<'n> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Logits of the first (or only) sample.
    pub fn logits(&self) -> &[f64] {
        self.logits_of(0)
    }

    pub fn logits_of(&self, sample: usize) -> &[f64] {
        let m = self.net.num_classes();
        &self.acts.last().expect("non-empty")[sample * m..(sample + 1) * m]
    }

    /// Input gradients of the listed logits, one tensor per entry.
    pub fn logit_gradients(&self, classes: &[usize]) -> Vec<Tensor> {
        assert_eq!(self.batch, 1, "logit gradients need a single-sample trace");
        let m = self.net.num_classes();
        let mut seeds = vec![0.0; classes.len() * m];
        for (row, &c) in classes.iter().enumerate() {
            seeds[row * m + c] = 1.0;
        }
        self.split_rows(backward(self, &seeds, classes.len(), None, true), classes.len())
    }

    /// Input gradient of `sum_j seed[j] * f_j`.
    pub fn seed_gradient(&self, seed: &[f64]) -> Tensor {
        assert_eq!(self.batch, 1, "seed gradient needs a single-sample trace");
        self.split_rows(backward(self, seed, 1, None, true), 1).remove(0)
    }

    fn split_rows(&self, flat: Vec<f64>, rows: usize) -> Vec<Tensor> {
        let n = self.net.input_len();
        (0..rows)
            .map(|r| Tensor::new(self.net.input_shape().to_vec(), flat[r * n..(r + 1) * n].to_vec()).expect("gradient shape"))
            .collect()
    }
}

/// Back-propagates `rows` seed rows of logit cotangents.
///
/// With a single-sample trace every row uses sample 0; otherwise row `r`
/// uses sample `r`. Parameter gradients are accumulated into `grads`
/// (`grads[layer][param]`) and require a trace recorded with `keep_cols`.
pub(crate) fn backward(
    trace: &Trace<'_>,
    seeds: &[f64],
    rows: usize,
    mut grads: Option<&mut [Vec<Vec<f64>>]>,
    need_input: bool,
) -> Vec<f64> {
    let net = trace.net;
    debug_assert!(trace.batch == 1 || trace.batch == rows);
    debug_assert!(grads.is_none() || trace.batch == rows);
    let sample = |r: usize| if trace.batch == 1 { 0 } else { r };
    let mut delta = seeds.to_vec();
    for (index, layer) in net.layers().iter().enumerate().rev() {
        let in_len: usize = net.layer_input_shape(index).iter().product();
        let out_len: usize = net.layer_input_shape(index + 1).iter().product();
        let input = &trace.acts[index];
        let need_dx = index > 0 || need_input;
        let mut dx = Vec::new();
        match layer {
            Layer::Dense(d) => {
                if let Some(g) = grads.as_deref_mut() {
                    let (gw, gb) = split2(&mut g[index]);
                    // dW (O x I) += delta^T (O x B) * X (B x I)
                    gemm(out_len, rows, in_len, &delta, (1, out_len), input, (in_len, 1), 1.0, gw);
                    for row in delta.chunks(out_len) {
                        for (b, v) in gb.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                }
                if need_dx {
                    dx = vec![0.0; rows * in_len];
                    gemm(rows, out_len, in_len, &delta, (out_len, 1), d.weight.data(), (in_len, 1), 0.0, &mut dx);
                }
            }
            Layer::Conv2d(c) => {
                let g = ConvGeom::new(net, index);
                let (k, p) = (g.k(), g.p());
                if let Some(gr) = grads.as_deref_mut() {
                    let Aux::Cols(cols) = &trace.aux[index] else {
                        panic!("parameter gradients need a trace recorded for training")
                    };
                    let (gw, gb) = split2(&mut gr[index]);
                    for r in 0..rows {
                        let dy = &delta[r * out_len..(r + 1) * out_len];
                        let col = &cols[r * k * p..(r + 1) * k * p];
                        // dW (OC x K) += dY (OC x P) * cols^T (P x K)
                        gemm(g.oc, p, k, dy, (p, 1), col, (1, p), 1.0, gw);
                        for (b, plane) in gb.iter_mut().zip(dy.chunks(p)) {
                            *b += plane.iter().sum::<f64>();
                        }
                    }
                }
                if need_dx {
                    dx = vec![0.0; rows * in_len];
                    let mut dcols = vec![0.0; k * p];
                    for r in 0..rows {
                        let dy = &delta[r * out_len..(r + 1) * out_len];
                        // dcols (K x P) = W^T (K x OC) * dY (OC x P)
                        gemm(k, g.oc, p, c.weight.data(), (1, k), dy, (p, 1), 0.0, &mut dcols);
                        g.col2im_add(&dcols, &mut dx[r * in_len..(r + 1) * in_len]);
                    }
                }
            }
            Layer::Relu => {
                if need_dx {
                    dx = vec![0.0; rows * in_len];
                    for r in 0..rows {
                        let act = &input[sample(r) * in_len..(sample(r) + 1) * in_len];
                        let src = &delta[r * out_len..(r + 1) * out_len];
                        for ((d, &s), &a) in dx[r * in_len..(r + 1) * in_len].iter_mut().zip(src).zip(act) {
                            if a > 0.0 {
                                *d = s;
                            }
                        }
                    }
                }
            }
            Layer::MaxPool2x2 => {
                if need_dx {
                    let Aux::Pool(idx) = &trace.aux[index] else {
                        unreachable!("pool layer without indices")
                    };
                    dx = vec![0.0; rows * in_len];
                    for r in 0..rows {
                        let winners = &idx[sample(r) * out_len..(sample(r) + 1) * out_len];
                        let dst = &mut dx[r * in_len..(r + 1) * in_len];
                        for (&wi, &v) in winners.iter().zip(&delta[r * out_len..(r + 1) * out_len]) {
                            dst[wi as usize] += v;
                        }
                    }
                }
            }
            Layer::Flatten => {
                if need_dx {
                    dx = std::mem::take(&mut delta);
                }
            }
        }
        if !need_dx {
            return Vec::new();
        }
        delta = dx;
    }
    delta
}

fn split2(params: &mut [Vec<f64>]) -> (&mut [f64], &mut [f64]) {
    let (w, b) = params.split_at_mut(1);
    (&mut w[0], &mut b[0])
}
