//! Forward and reverse-mode passes for the conv chain.

use crate::error::{Error, Result};
use crate::nn::arch::{Arch, ModelParams};
use crate::nn::loss::{bce_terms, sigmoid};
use crate::tensor::Tensor;

/// Unfolds a `[in_ch, side, side]` input into a `[in_ch*k*k, side*side]`
/// column matrix (zero padding, stride 1).
fn im2col(input: &[f64], in_ch: usize, k: usize, side: usize) -> Vec<f64> {
    let plane = side * side;
    let r = (k / 2) as isize;
    let n = side as isize;
    let mut cols = vec![0.0; in_ch * k * k * plane];
    for i in 0..in_ch {
        let src = &input[i * plane..(i + 1) * plane];
        for ky in 0..k {
            let dy = ky as isize - r;
            for kx in 0..k {
                let dx = kx as isize - r;
                let row = &mut cols[((i * k + ky) * k + kx) * plane..][..plane];
                let x0 = (-dx).max(0) as usize;
                let x1 = (n - dx).min(n) as usize;
                for y in (-dy).max(0)..(n - dy).min(n) {
                    let at = y as usize * side;
                    let from = ((y + dy) * n + dx + x0 as isize) as usize;
                    row[at + x0..at + x1].copy_from_slice(&src[from..from + x1 - x0]);
                }
            }
        }
    }
    cols
}

/// Scatters a column-matrix gradient back onto the `[in_ch, side, side]` input.
fn col2im_add(dcols: &[f64], in_ch: usize, k: usize, side: usize, dinput: &mut [f64]) {
    let plane = side * side;
    let r = (k / 2) as isize;
    let n = side as isize;
    for i in 0..in_ch {
        let dst = &mut dinput[i * plane..(i + 1) * plane];
        for ky in 0..k {
            let dy = ky as isize - r;
            for kx in 0..k {
                let dx = kx as isize - r;
                let row = &dcols[((i * k + ky) * k + kx) * plane..][..plane];
                let x0 = (-dx).max(0) as usize;
                let x1 = (n - dx).min(n) as usize;
                for y in (-dy).max(0)..(n - dy).min(n) {
                    let at = y as usize * side;
                    let to = ((y + dy) * n + dx + x0 as isize) as usize;
                    for (d, &g) in dst[to..to + x1 - x0].iter_mut().zip(&row[at + x0..at + x1]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

/// `c = a · b + beta · c` for row-major matrices given as
/// `(data, rows, cols)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn matmul(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    // SAFETY: the asserted bounds cover every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Per-layer caches from a single-image forward pass.
struct Trace {
    /// Column matrix of each layer's input.
    cols: Vec<Vec<f64>>,
    /// Pre-activation outputs of each layer.
    pre: Vec<Vec<f64>>,
}

fn forward_one(params: &ModelParams, image: &[f64], keep_trace: bool) -> (Vec<f64>, Option<Trace>) {
    let arch = params.arch();
    let side = arch.patch_size;
    let plane = side * side;
    let theta = params.theta();
    let offsets = params.layer_offsets();
    let mut current = image.to_vec();
    let mut trace = keep_trace.then(|| Trace {
        cols: Vec::with_capacity(arch.layers.len()),
        pre: Vec::with_capacity(arch.layers.len()),
    });
    for (layer, &(w_at, b_at)) in arch.layers.iter().zip(&offsets) {
        let inner = layer.in_channels * layer.kernel * layer.kernel;
        let cols = im2col(&current, layer.in_channels, layer.kernel, side);
        let mut z: Vec<f64> = theta[b_at..b_at + layer.out_channels]
            .iter()
            .flat_map(|&b| std::iter::repeat_n(b, plane))
            .collect();
        matmul(
            layer.out_channels,
            inner,
            plane,
            &theta[w_at..b_at],
            (inner, 1),
            &cols,
            (plane, 1),
            1.0,
            &mut z,
        );
        current = z.iter().map(|&v| layer.activation.apply(v)).collect();
        if let Some(t) = trace.as_mut() {
            t.cols.push(cols);
            t.pre.push(z);
        }
    }
    (current, trace)
}

fn check_images(arch: &Arch, images: &Tensor) -> Result<usize> {
    let shape = images.shape();
    let ok = shape.len() == 4
        && shape[1] == 1
        && shape[2] == arch.patch_size
        && shape[3] == arch.patch_size;
    if !ok {
        let batch = shape.first().copied().unwrap_or(0);
        return Err(Error::ShapeMismatch {
            expected: vec![batch, 1, arch.patch_size, arch.patch_size],
            actual: shape.to_vec(),
        });
    }
    Ok(shape[0])
}

/// Logits `[B,1,H,W]` for a batch of images `[B,1,H,W]`.
pub fn model_forward(params: &ModelParams, images: &Tensor) -> Result<Tensor> {
    let batch = check_images(params.arch(), images)?;
    let plane = params.arch().patch_size.pow(2);
    let mut out = Vec::with_capacity(batch * plane);
    for image in images.data().chunks_exact(plane.max(1)) {
        out.extend(forward_one(params, image, false).0);
    }
    let logits = Tensor::new(images.shape().to_vec(), out)?;
    if !logits.all_finite() {
        return Err(Error::NonFinite("forward pass"));
    }
    Ok(logits)
}

/// Mean binary cross-entropy over all pixels of the batch, multiplied by
/// `scale`, together with its exact gradient with respect to `theta`.
pub fn loss_and_gradient(
    params: &ModelParams,
    images: &Tensor,
    targets: &Tensor,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    let batch = check_images(params.arch(), images)?;
    targets.expect_shape(images.shape())?;
    let arch = params.arch();
    let side = arch.patch_size;
    let plane = side * side;
    let count = (batch * plane) as f64;
    let theta = params.theta();
    let offsets = params.layer_offsets();
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;

    for (image, target) in images
        .data()
        .chunks_exact(plane)
        .zip(targets.data().chunks_exact(plane))
    {
        let (logits, trace) = forward_one(params, image, true);
        let trace = trace.expect("trace requested");
        let mut upstream: Vec<f64> = Vec::with_capacity(plane);
        for (&l, &t) in logits.iter().zip(target) {
            loss += bce_terms(l, t);
            upstream.push((sigmoid(l) - t) * scale / count);
        }

        for (idx, layer) in arch.layers.iter().enumerate().rev() {
            let (w_at, b_at) = offsets[idx];
            let inner = layer.in_channels * layer.kernel * layer.kernel;
            // through the activation
            for (g, &z) in upstream.iter_mut().zip(&trace.pre[idx]) {
                *g *= layer.activation.derivative(z);
            }
            let cols = &trace.cols[idx];
            for (o, g) in upstream.chunks_exact(plane).enumerate() {
                grad[b_at + o] += g.iter().sum::<f64>();
            }
            // dW += G · colsᵀ
            matmul(
                layer.out_channels,
                plane,
                inner,
                &upstream,
                (plane, 1),
                cols,
                (1, plane),
                1.0,
                &mut grad[w_at..b_at],
            );
            if idx > 0 {
                // dcols = Wᵀ · G
                let mut dcols = vec![0.0; inner * plane];
                matmul(
                    inner,
                    layer.out_channels,
                    plane,
                    &theta[w_at..b_at],
                    (1, inner),
                    &upstream,
                    (plane, 1),
                    0.0,
                    &mut dcols,
                );
                let mut dinput = vec![0.0; layer.in_channels * plane];
                col2im_add(&dcols, layer.in_channels, layer.kernel, side, &mut dinput);
                upstream = dinput;
            }
        }
    }

    let loss = loss * scale / count;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("backward pass"));
    }
    Ok((loss, grad))
}

/// Gradient of the mean binary cross-entropy with respect to `theta`.
pub fn model_backward(params: &ModelParams, images: &Tensor, targets: &Tensor) -> Result<Vec<f64>> {
    loss_and_gradient(params, images, targets, 1.0).map(|(_, g)| g)
}
