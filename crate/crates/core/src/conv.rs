//! Per-channel 2-D convolution with replicate (edge-clamp) padding.
//!
//! Kernels are symmetric, so correlation and convolution coincide; the loops
//! below index as a correlation. Rank-1 kernels take a two-pass route that
//! touches `2k` taps per pixel instead of `k^2`.

use crate::kernel::SmoothingKernel;
use crate::tensor::{Result, Tensor};

/// Convolves every channel of a `C x H x W` tensor with `kernel`.
pub fn convolve2d(image: &Tensor, kernel: &SmoothingKernel) -> Result<Tensor> {
    let (c, h, w) = image.image_dims()?;
    let mut out = Tensor::zeros(image.shape());
    convolve_planes(image.data(), c, h, w, kernel, out.data_mut());
    Ok(out)
}

/// Adjoint (transpose) of [`convolve2d`] as a linear map.
///
/// Away from the border this is the same convolution; at the border the
/// clamped taps fold back onto edge pixels, so the two differ.
pub fn convolve2d_adjoint(image: &Tensor, kernel: &SmoothingKernel) -> Result<Tensor> {
    let (c, h, w) = image.image_dims()?;
    let mut out = Tensor::zeros(image.shape());
    if kernel.is_identity() {
        out.data_mut().copy_from_slice(image.data());
        return Ok(out);
    }
    let plane = h * w;
    for ch in 0..c {
        let src = &image.data()[ch * plane..(ch + 1) * plane];
        let dst = &mut out.data_mut()[ch * plane..(ch + 1) * plane];
        match kernel.separable_factor() {
            Some(f) => {
                let mut tmp = vec![0.0; plane];
                // forward = vertical(horizontal(x)); adjoint reverses the order
                vertical_adjoint(src, h, w, f, &mut tmp);
                horizontal_adjoint(&tmp, h, w, f, dst);
            }
            None => direct_adjoint(src, h, w, kernel, dst),
        }
    }
    Ok(out)
}

/// Slice-level convolution used by hot loops. `out` is overwritten.
pub(crate) fn convolve_planes(
    src: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kernel: &SmoothingKernel,
    out: &mut [f64],
) {
    debug_assert_eq!(src.len(), c * h * w);
    debug_assert_eq!(out.len(), c * h * w);
    if kernel.is_identity() {
        out.copy_from_slice(src);
        return;
    }
    let plane = h * w;
    let mut tmp = vec![0.0; plane];
    for ch in 0..c {
        let s = &src[ch * plane..(ch + 1) * plane];
        let o = &mut out[ch * plane..(ch + 1) * plane];
        match kernel.separable_factor() {
            Some(f) => {
                horizontal(s, h, w, f, &mut tmp);
                vertical(&tmp, h, w, f, o);
            }
            None => direct(s, h, w, kernel, o),
        }
    }
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn direct(src: &[f64], h: usize, w: usize, kernel: &SmoothingKernel, out: &mut [f64]) {
    let k = kernel.size();
    let r = kernel.radius() as isize;
    let weights = kernel.weights();
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..k {
                let sy = clamp_index(y as isize + i as isize - r, h);
                let row = &src[sy * w..(sy + 1) * w];
                let krow = &weights[i * k..(i + 1) * k];
                for (j, &kw) in krow.iter().enumerate() {
                    acc += kw * row[clamp_index(x as isize + j as isize - r, w)];
                }
            }
            out[y * w + x] = acc;
        }
    }
}

fn direct_adjoint(src: &[f64], h: usize, w: usize, kernel: &SmoothingKernel, out: &mut [f64]) {
    let k = kernel.size();
    let r = kernel.radius() as isize;
    out.iter_mut().for_each(|v| *v = 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = src[y * w + x];
            for i in 0..k {
                let sy = clamp_index(y as isize + i as isize - r, h);
                for j in 0..k {
                    let sx = clamp_index(x as isize + j as isize - r, w);
                    out[sy * w + sx] += kernel.weight(i, j) * v;
                }
            }
        }
    }
}

fn horizontal(src: &[f64], h: usize, w: usize, f: &[f64], out: &mut [f64]) {
    let r = (f.len() / 2) as isize;
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &fw) in f.iter().enumerate() {
                acc += fw * row[clamp_index(x as isize + t as isize - r, w)];
            }
            out[y * w + x] = acc;
        }
    }
}

fn vertical(src: &[f64], h: usize, w: usize, f: &[f64], out: &mut [f64]) {
    let r = (f.len() / 2) as isize;
    out.iter_mut().for_each(|v| *v = 0.0);
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (t, &fw) in f.iter().enumerate() {
            let sy = clamp_index(y as isize + t as isize - r, h);
            let row = &src[sy * w..(sy + 1) * w];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += fw * s;
            }
        }
    }
}

fn horizontal_adjoint(src: &[f64], h: usize, w: usize, f: &[f64], out: &mut [f64]) {
    let r = (f.len() / 2) as isize;
    out.iter_mut().for_each(|v| *v = 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = src[y * w + x];
            for (t, &fw) in f.iter().enumerate() {
                out[y * w + clamp_index(x as isize + t as isize - r, w)] += fw * v;
            }
        }
    }
}

fn vertical_adjoint(src: &[f64], h: usize, w: usize, f: &[f64], out: &mut [f64]) {
    let r = (f.len() / 2) as isize;
    out.iter_mut().for_each(|v| *v = 0.0);
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (t, &fw) in f.iter().enumerate() {
            let sy = clamp_index(y as isize + t as isize - r, h);
            let dst = &mut out[sy * w..(sy + 1) * w];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += fw * s;
            }
        }
    }
}
