//! Forward and analytic backward kernels.
//!
//! Feature maps are `[C, H, W]` planes; convolution weights are
//! `[C_out, C_in, kh, kw]`. All kernels are pure functions and parallelize
//! over disjoint output planes, so results are identical at any thread
//! count.

use crate::par;
use crate::{Error, Result};

use super::tensor::Tensor;

fn shape_err(expected: impl Into<String>, found: &[usize]) -> Error {
    Error::ShapeMismatch {
        expected: expected.into(),
        found: format!("{found:?}"),
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(shape_err(format!("{what} [C, H, W]"), &t.shape)),
    }
}

/// 3×3 convolution, stride 1, zero padding 1.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (ci_n, h, w) = dims3(input, "conv input")?;
    let (co_n, wci, kh, kw) = match weights.shape[..] {
        [co, ci, kh, kw] => (co, ci, kh, kw),
        _ => return Err(shape_err("conv weights [Co, Ci, 3, 3]", &weights.shape)),
    };
    if wci != ci_n || kh != 3 || kw != 3 {
        return Err(shape_err(
            format!("conv weights [Co, {ci_n}, 3, 3]"),
            &weights.shape,
        ));
    }
    if bias.shape != [co_n] {
        return Err(shape_err(format!("conv bias [{co_n}]"), &bias.shape));
    }

    let plane = h * w;
    let mut out = Tensor::zeros(&[co_n, h, w]);
    par::for_each_chunk_mut(&mut out.data, plane, |co, out_plane| {
        out_plane.fill(bias.data[co]);
        for ci in 0..ci_n {
            let in_plane = &input.data[ci * plane..(ci + 1) * plane];
            let wbase = (co * ci_n + ci) * 9;
            for ky in 0..3usize {
                let y0 = 1usize.saturating_sub(ky);
                let y1 = (h + 1 - ky).min(h);
                for kx in 0..3usize {
                    let wv = weights.data[wbase + ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let x0 = 1usize.saturating_sub(kx);
                    let x1 = (w + 1 - kx).min(w);
                    for y in y0..y1 {
                        let in_row = &in_plane[(y + ky - 1) * w..(y + ky) * w];
                        let out_row = &mut out_plane[y * w..(y + 1) * w];
                        // x+kx-1 is in range for x in [x0, x1)
                        let shift = kx as isize - 1;
                        for x in x0..x1 {
                            out_row[x] += wv * in_row[(x as isize + shift) as usize];
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Gradients of [`conv2d_forward`].
pub struct Conv2dGrads {
    pub d_input: Option<Tensor>,
    pub d_weights: Tensor,
    pub d_bias: Tensor,
}

/// Backward pass for the 3×3 convolution.
///
/// `want_d_input` skips the input-gradient plane for the first layer of a
/// network, where it is never consumed.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    d_out: &Tensor,
    want_d_input: bool,
) -> Result<Conv2dGrads> {
    let (ci_n, h, w) = dims3(input, "conv input")?;
    let (co_n, ..) = match weights.shape[..] {
        [co, ci, 3, 3] if ci == ci_n => (co, ci),
        _ => {
            return Err(shape_err(
                format!("conv weights [Co, {ci_n}, 3, 3]"),
                &weights.shape,
            ))
        }
    };
    if d_out.shape != [co_n, h, w] {
        return Err(shape_err(format!("conv d_out [{co_n}, {h}, {w}]"), &d_out.shape));
    }

    let plane = h * w;
    let mut d_weights = Tensor::zeros(&weights.shape);
    let mut d_bias = Tensor::zeros(&[co_n]);

    // d_bias and d_weights: one output channel per task.
    let db: Vec<f64> = par::map_indexed(co_n, |co| {
        d_out.data[co * plane..(co + 1) * plane].iter().sum()
    });
    d_bias.data.copy_from_slice(&db);

    par::for_each_chunk_mut(&mut d_weights.data, ci_n * 9, |co, dw_block| {
        let dout_plane = &d_out.data[co * plane..(co + 1) * plane];
        for ci in 0..ci_n {
            let in_plane = &input.data[ci * plane..(ci + 1) * plane];
            for ky in 0..3usize {
                let y0 = 1usize.saturating_sub(ky);
                let y1 = (h + 1 - ky).min(h);
                for kx in 0..3usize {
                    let x0 = 1usize.saturating_sub(kx);
                    let x1 = (w + 1 - kx).min(w);
                    let shift = kx as isize - 1;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let in_row = &in_plane[(y + ky - 1) * w..(y + ky) * w];
                        let dout_row = &dout_plane[y * w..(y + 1) * w];
                        for x in x0..x1 {
                            acc += dout_row[x] * in_row[(x as isize + shift) as usize];
                        }
                    }
                    dw_block[ci * 9 + ky * 3 + kx] = acc;
                }
            }
        }
    });

    let d_input = if want_d_input {
        let mut d_in = Tensor::zeros(&input.shape);
        // One input channel per task; accumulate over output channels inside.
        par::for_each_chunk_mut(&mut d_in.data, plane, |ci, din_plane| {
            for co in 0..co_n {
                let dout_plane = &d_out.data[co * plane..(co + 1) * plane];
                let wbase = (co * ci_n + ci) * 9;
                for ky in 0..3usize {
                    let y0 = 1usize.saturating_sub(ky);
                    let y1 = (h + 1 - ky).min(h);
                    for kx in 0..3usize {
                        let wv = weights.data[wbase + ky * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let x0 = 1usize.saturating_sub(kx);
                        let x1 = (w + 1 - kx).min(w);
                        let shift = kx as isize - 1;
                        for y in y0..y1 {
                            let din_row = &mut din_plane[(y + ky - 1) * w..(y + ky) * w];
                            let dout_row = &dout_plane[y * w..(y + 1) * w];
                            for x in x0..x1 {
                                din_row[(x as isize + shift) as usize] += wv * dout_row[x];
                            }
                        }
                    }
                }
            }
        });
        Some(d_in)
    } else {
        None
    };

    Ok(Conv2dGrads {
        d_input,
        d_weights,
        d_bias,
    })
}

/// 1×1 convolution (per-pixel linear map over channels).
pub fn conv1x1_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (ci_n, h, w) = dims3(input, "conv1x1 input")?;
    let (co_n, wci) = match weights.shape[..] {
        [co, ci] => (co, ci),
        _ => return Err(shape_err("conv1x1 weights [Co, Ci]", &weights.shape)),
    };
    if wci != ci_n {
        return Err(shape_err(format!("conv1x1 weights [Co, {ci_n}]"), &weights.shape));
    }
    if bias.shape != [co_n] {
        return Err(shape_err(format!("conv1x1 bias [{co_n}]"), &bias.shape));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(&[co_n, h, w]);
    par::for_each_chunk_mut(&mut out.data, plane, |co, out_plane| {
        out_plane.fill(bias.data[co]);
        for ci in 0..ci_n {
            let wv = weights.data[co * ci_n + ci];
            let in_plane = &input.data[ci * plane..(ci + 1) * plane];
            for (o, &v) in out_plane.iter_mut().zip(in_plane) {
                *o += wv * v;
            }
        }
    });
    Ok(out)
}

/// Backward pass for the 1×1 convolution.
pub fn conv1x1_backward(
    input: &Tensor,
    weights: &Tensor,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (ci_n, h, w) = dims3(input, "conv1x1 input")?;
    let co_n = weights.shape[0];
    if d_out.shape != [co_n, h, w] {
        return Err(shape_err(format!("conv1x1 d_out [{co_n}, {h}, {w}]"), &d_out.shape));
    }
    let plane = h * w;

    let mut d_weights = Tensor::zeros(&weights.shape);
    par::for_each_chunk_mut(&mut d_weights.data, ci_n, |co, dw_row| {
        let dout_plane = &d_out.data[co * plane..(co + 1) * plane];
        for ci in 0..ci_n {
            let in_plane = &input.data[ci * plane..(ci + 1) * plane];
            dw_row[ci] = dout_plane.iter().zip(in_plane).map(|(d, v)| d * v).sum();
        }
    });

    let mut d_bias = Tensor::zeros(&[co_n]);
    for co in 0..co_n {
        d_bias.data[co] = d_out.data[co * plane..(co + 1) * plane].iter().sum();
    }

    let mut d_input = Tensor::zeros(&input.shape);
    par::for_each_chunk_mut(&mut d_input.data, plane, |ci, din_plane| {
        for co in 0..co_n {
            let wv = weights.data[co * ci_n + ci];
            let dout_plane = &d_out.data[co * plane..(co + 1) * plane];
            for (d, &g) in din_plane.iter_mut().zip(dout_plane) {
                *d += wv * g;
            }
        }
    });

    Ok((d_input, d_weights, d_bias))
}

/// Elementwise max(0, x).
pub fn relu_forward(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// ReLU backward; the subgradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, d_out: &Tensor) -> Tensor {
    assert_eq!(input.shape, d_out.shape, "relu backward shape mismatch");
    Tensor {
        shape: input.shape.clone(),
        data: input
            .data
            .iter()
            .zip(&d_out.data)
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

/// Numerically stable per-pixel softmax over the channel dimension.
pub fn softmax_pixels(logits: &Tensor) -> Result<Tensor> {
    let (c_n, h, w) = dims3(logits, "softmax logits")?;
    let plane = h * w;
    let mut out = Tensor::zeros(&logits.shape);
    for p in 0..plane {
        let mut mx = f64::NEG_INFINITY;
        for c in 0..c_n {
            mx = mx.max(logits.data[c * plane + p]);
        }
        let mut z = 0.0;
        for c in 0..c_n {
            let e = (logits.data[c * plane + p] - mx).exp();
            out.data[c * plane + p] = e;
            z += e;
        }
        for c in 0..c_n {
            out.data[c * plane + p] /= z;
        }
    }
    Ok(out)
}

/// Loss, gradient and the number of pixels that actually contributed.
pub struct CrossEntropyResult {
    pub loss: f64,
    pub d_logits: Tensor,
    pub contributing: usize,
}

/// Mean cross-entropy over non-ignored pixels.
///
/// `labels` has one entry per pixel; a pixel contributes iff
/// `valid_mask[p]` (all pixels when the mask is `None`). Ignored pixels get
/// zero loss and zero gradient. With no contributing pixels the loss and
/// gradients are zero — reported through `contributing`, not an error.
pub fn cross_entropy(
    logits: &Tensor,
    labels: &[u8],
    valid_mask: Option<&[bool]>,
) -> Result<CrossEntropyResult> {
    let (c_n, h, w) = dims3(logits, "cross-entropy logits")?;
    let plane = h * w;
    if labels.len() != plane {
        return Err(shape_err(format!("labels [{plane}]"), &[labels.len()]));
    }
    if let Some(m) = valid_mask {
        if m.len() != plane {
            return Err(shape_err(format!("valid mask [{plane}]"), &[m.len()]));
        }
    }

    let probs = softmax_pixels(logits)?;
    let contributing = match valid_mask {
        Some(m) => m.iter().filter(|&&v| v).count(),
        None => plane,
    };
    let mut d_logits = Tensor::zeros(&logits.shape);
    if contributing == 0 {
        return Ok(CrossEntropyResult {
            loss: 0.0,
            d_logits,
            contributing,
        });
    }
    let inv_n = 1.0 / contributing as f64;
    let mut loss = 0.0;
    for p in 0..plane {
        if let Some(m) = valid_mask {
            if !m[p] {
                continue;
            }
        }
        let label = labels[p] as usize;
        assert!(label < c_n, "label {label} out of range for {c_n} classes");
        loss -= probs.data[label * plane + p].max(f64::MIN_POSITIVE).ln();
        for c in 0..c_n {
            let indicator = if c == label { 1.0 } else { 0.0 };
            d_logits.data[c * plane + p] = (probs.data[c * plane + p] - indicator) * inv_n;
        }
    }
    Ok(CrossEntropyResult {
        loss: loss * inv_n,
        d_logits,
        contributing,
    })
}

/// Normalize each row of an `[N, F]` matrix to unit L2 norm.
pub fn l2_normalize_rows(m: &Tensor) -> Result<Tensor> {
    let (n, f) = match m.shape[..] {
        [n, f] => (n, f),
        _ => return Err(shape_err("matrix [N, F]", &m.shape)),
    };
    let mut out = Tensor::zeros(&m.shape);
    for r in 0..n {
        let row = &m.data[r * f..(r + 1) * f];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateFeature { row: r });
        }
        for (o, &v) in out.data[r * f..(r + 1) * f].iter_mut().zip(row) {
            *o = v / norm;
        }
    }
    Ok(out)
}

/// Backward pass of [`l2_normalize_rows`]: for y = x/‖x‖,
/// dx = (dy − y·(yᵀdy)) / ‖x‖.
pub fn l2_normalize_rows_backward(input: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    let (n, f) = match input.shape[..] {
        [n, f] => (n, f),
        _ => return Err(shape_err("matrix [N, F]", &input.shape)),
    };
    if d_out.shape != input.shape {
        return Err(shape_err(format!("{:?}", input.shape), &d_out.shape));
    }
    let mut d_in = Tensor::zeros(&input.shape);
    for r in 0..n {
        let x = &input.data[r * f..(r + 1) * f];
        let dy = &d_out.data[r * f..(r + 1) * f];
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateFeature { row: r });
        }
        let y: Vec<f64> = x.iter().map(|&v| v / norm).collect();
        let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
        for (d, (yi, dyi)) in d_in.data[r * f..(r + 1) * f]
            .iter_mut()
            .zip(y.iter().zip(dy))
        {
            *d = (dyi - yi * dot) / norm;
        }
    }
    Ok(d_in)
}
