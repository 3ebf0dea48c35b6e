//! Minimal 2D/3D convolution kernels (3-wide, zero padding, same size)
//! with exact analytic gradients. Everything is f64 on flat channel-planar
//! buffers: `[c][y][x]` in 2D, `[c][z][y][x]` in 3D.
//!
//! The hot loops are row stencils: each output row accumulates the three
//! x-taps of every valid (kz, ky) plane in one L1-resident buffer, so a
//! channel pair costs a single pass over the volume instead of 27.

/// acc[x] += w0·row[x-1] + w1·row[x] + w2·row[x+1], zero-padded.
#[inline]
fn stencil_row(acc: &mut [f64], row: &[f64], w0: f64, w1: f64, w2: f64) {
    let n = acc.len();
    assert_eq!(row.len(), n);
    if n == 0 {
        return;
    }
    if n == 1 {
        acc[0] += w1 * row[0];
        return;
    }
    acc[0] += w1 * row[0] + w2 * row[1];
    for x in 1..n - 1 {
        acc[x] += w0 * row[x - 1] + w1 * row[x] + w2 * row[x + 1];
    }
    acc[n - 1] += w0 * row[n - 2] + w1 * row[n - 1];
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// (Σ g[x]·row[x-1], Σ g[x]·row[x], Σ g[x]·row[x+1]) over valid x.
#[inline]
fn dots3(g: &[f64], row: &[f64]) -> (f64, f64, f64) {
    let n = g.len();
    if n < 2 {
        return (0.0, if n == 1 { g[0] * row[0] } else { 0.0 }, 0.0);
    }
    (
        dot(&g[1..], &row[..n - 1]),
        dot(g, row),
        dot(&g[..n - 1], &row[1..]),
    )
}

pub fn conv2d_forward(
    input: &[f64],
    (h, w): (usize, usize),
    in_ch: usize,
    out_ch: usize,
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let plane = h * w;
    debug_assert_eq!(input.len(), in_ch * plane);
    debug_assert_eq!(weights.len(), out_ch * in_ch * 9);
    let mut out = vec![0.0; out_ch * plane];
    let mut acc = vec![0.0; w];
    for oc in 0..out_ch {
        out[oc * plane..(oc + 1) * plane].fill(bias[oc]);
        for ic in 0..in_ch {
            let wk = &weights[(oc * in_ch + ic) * 9..][..9];
            let inp = &input[ic * plane..][..plane];
            for y in 0..h {
                acc.fill(0.0);
                for ky in 0..3usize {
                    let yy = y as i64 + ky as i64 - 1;
                    if yy < 0 || yy >= h as i64 {
                        continue;
                    }
                    let row = &inp[yy as usize * w..][..w];
                    stencil_row(&mut acc, row, wk[ky * 3], wk[ky * 3 + 1], wk[ky * 3 + 2]);
                }
                let orow = &mut out[oc * plane + y * w..][..w];
                for (o, a) in orow.iter_mut().zip(&acc) {
                    *o += a;
                }
            }
        }
    }
    out
}

/// Returns (grad_input, grad_weights, grad_bias).
pub fn conv2d_backward(
    input: &[f64],
    (h, w): (usize, usize),
    in_ch: usize,
    out_ch: usize,
    weights: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let mut grad_in = vec![0.0; in_ch * plane];
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = vec![0.0; out_ch];
    let mut acc = vec![0.0; w];
    for oc in 0..out_ch {
        grad_b[oc] = grad_out[oc * plane..(oc + 1) * plane].iter().sum();
    }
    for oc in 0..out_ch {
        let gout = &grad_out[oc * plane..][..plane];
        for ic in 0..in_ch {
            let wk = &weights[(oc * in_ch + ic) * 9..][..9];
            let gw = &mut grad_w[(oc * in_ch + ic) * 9..][..9];
            let inp = &input[ic * plane..][..plane];

            // Input gradient: correlation with the flipped kernel.
            for y in 0..h {
                acc.fill(0.0);
                for ky in 0..3usize {
                    let yy = y as i64 - (ky as i64 - 1);
                    if yy < 0 || yy >= h as i64 {
                        continue;
                    }
                    let row = &gout[yy as usize * w..][..w];
                    stencil_row(&mut acc, row, wk[ky * 3 + 2], wk[ky * 3 + 1], wk[ky * 3]);
                }
                let irow = &mut grad_in[ic * plane + y * w..][..w];
                for (o, a) in irow.iter_mut().zip(&acc) {
                    *o += a;
                }
            }

            // Weight gradient: shifted dot products per kernel row.
            for y in 0..h {
                let g = &gout[y * w..][..w];
                for ky in 0..3usize {
                    let yy = y as i64 + ky as i64 - 1;
                    if yy < 0 || yy >= h as i64 {
                        continue;
                    }
                    let row = &inp[yy as usize * w..][..w];
                    let (d0, d1, d2) = dots3(g, row);
                    gw[ky * 3] += d0;
                    gw[ky * 3 + 1] += d1;
                    gw[ky * 3 + 2] += d2;
                }
            }
        }
    }
    (grad_in, grad_w, grad_b)
}

pub fn conv3d_forward(
    input: &[f64],
    (d, h, w): (usize, usize, usize),
    in_ch: usize,
    out_ch: usize,
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let vol = d * h * w;
    debug_assert_eq!(input.len(), in_ch * vol);
    debug_assert_eq!(weights.len(), out_ch * in_ch * 27);
    let mut out = vec![0.0; out_ch * vol];
    let mut acc = vec![0.0; w];
    for oc in 0..out_ch {
        out[oc * vol..(oc + 1) * vol].fill(bias[oc]);
        for ic in 0..in_ch {
            let wk = &weights[(oc * in_ch + ic) * 27..][..27];
            let inp = &input[ic * vol..][..vol];
            for z in 0..d {
                for y in 0..h {
                    acc.fill(0.0);
                    for kz in 0..3usize {
                        let zz = z as i64 + kz as i64 - 1;
                        if zz < 0 || zz >= d as i64 {
                            continue;
                        }
                        for ky in 0..3usize {
                            let yy = y as i64 + ky as i64 - 1;
                            if yy < 0 || yy >= h as i64 {
                                continue;
                            }
                            let row = &inp[(zz as usize * h + yy as usize) * w..][..w];
                            let o = (kz * 3 + ky) * 3;
                            stencil_row(&mut acc, row, wk[o], wk[o + 1], wk[o + 2]);
                        }
                    }
                    let orow = &mut out[oc * vol + (z * h + y) * w..][..w];
                    for (o, a) in orow.iter_mut().zip(&acc) {
                        *o += a;
                    }
                }
            }
        }
    }
    out
}

pub fn conv3d_backward(
    input: &[f64],
    (d, h, w): (usize, usize, usize),
    in_ch: usize,
    out_ch: usize,
    weights: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let vol = d * h * w;
    let mut grad_in = vec![0.0; in_ch * vol];
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = vec![0.0; out_ch];
    let mut acc = vec![0.0; w];
    for oc in 0..out_ch {
        grad_b[oc] = grad_out[oc * vol..(oc + 1) * vol].iter().sum();
    }
    for oc in 0..out_ch {
        let gout = &grad_out[oc * vol..][..vol];
        for ic in 0..in_ch {
            let wk = &weights[(oc * in_ch + ic) * 27..][..27];
            let gw = &mut grad_w[(oc * in_ch + ic) * 27..][..27];
            let inp = &input[ic * vol..][..vol];

            for z in 0..d {
                for y in 0..h {
                    acc.fill(0.0);
                    for kz in 0..3usize {
                        let zz = z as i64 - (kz as i64 - 1);
                        if zz < 0 || zz >= d as i64 {
                            continue;
                        }
                        for ky in 0..3usize {
                            let yy = y as i64 - (ky as i64 - 1);
                            if yy < 0 || yy >= h as i64 {
                                continue;
                            }
                            let row = &gout[(zz as usize * h + yy as usize) * w..][..w];
                            let o = (kz * 3 + ky) * 3;
                            stencil_row(&mut acc, row, wk[o + 2], wk[o + 1], wk[o]);
                        }
                    }
                    let irow = &mut grad_in[ic * vol + (z * h + y) * w..][..w];
                    for (o, a) in irow.iter_mut().zip(&acc) {
                        *o += a;
                    }
                }
            }

            for z in 0..d {
                for y in 0..h {
                    let g = &gout[(z * h + y) * w..][..w];
                    for kz in 0..3usize {
                        let zz = z as i64 + kz as i64 - 1;
                        if zz < 0 || zz >= d as i64 {
                            continue;
                        }
                        for ky in 0..3usize {
                            let yy = y as i64 + ky as i64 - 1;
                            if yy < 0 || yy >= h as i64 {
                                continue;
                            }
                            let row = &inp[(zz as usize * h + yy as usize) * w..][..w];
                            let (d0, d1, d2) = dots3(g, row);
                            let o = (kz * 3 + ky) * 3;
                            gw[o] += d0;
                            gw[o + 1] += d1;
                            gw[o + 2] += d2;
                        }
                    }
                }
            }
        }
    }
    (grad_in, grad_w, grad_b)
}

#[inline]
pub fn relu_forward(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` where the forward activation was clamped.
#[inline]
pub fn relu_backward(activated: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable ln(1 + e^x).
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
