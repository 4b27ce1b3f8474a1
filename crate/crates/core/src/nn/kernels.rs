//! Single-sample forward/backward kernels. Images are `[h, w, c]` row-major.

use super::layer::{ConvGeom, PoolMode};

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn dense_forward(params: &[f64], inputs: usize, outputs: usize, w_off: usize, b_off: usize, x: &[f64]) -> Vec<f64> {
    let w = &params[w_off..w_off + inputs * outputs];
    let b = &params[b_off..b_off + outputs];
    (0..outputs).map(|o| b[o] + dot(&w[o * inputs..(o + 1) * inputs], x)).collect()
}

/// Accumulates parameter gradients into `grad` and returns dL/dx.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    params: &[f64],
    inputs: usize,
    outputs: usize,
    w_off: usize,
    b_off: usize,
    x: &[f64],
    dy: &[f64],
    grad: &mut [f64],
    need_dx: bool,
) -> Vec<f64> {
    let w = &params[w_off..w_off + inputs * outputs];
    let mut dx = if need_dx { vec![0.0; inputs] } else { Vec::new() };
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        axpy(g, x, &mut grad[w_off + o * inputs..w_off + (o + 1) * inputs]);
        grad[b_off + o] += g;
        if need_dx {
            axpy(g, &w[o * inputs..(o + 1) * inputs], &mut dx);
        }
    }
    dx
}

/// Patch matrix: one row per output position, columns ordered (ky, kx, c).
pub fn im2col(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let pl = g.patch_len();
    let mut cols = vec![0.0; g.positions() * pl];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * pl..(oy * g.out_w + ox + 1) * pl];
            for ky in 0..g.kernel {
                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..g.kernel {
                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.in_w + ix as usize) * g.in_c;
                    let dst = (ky * g.kernel + kx) * g.in_c;
                    row[dst..dst + g.in_c].copy_from_slice(&x[src..src + g.in_c]);
                }
            }
        }
    }
    cols
}

fn col2im_add(g: &ConvGeom, dcols: &[f64], dx: &mut [f64]) {
    let pl = g.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &dcols[(oy * g.out_w + ox) * pl..(oy * g.out_w + ox + 1) * pl];
            for ky in 0..g.kernel {
                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..g.kernel {
                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.in_w + ix as usize) * g.in_c;
                    let src = (ky * g.kernel + kx) * g.in_c;
                    for c in 0..g.in_c {
                        dx[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
}

pub fn conv_forward(params: &[f64], g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let pl = g.patch_len();
    let cols = im2col(g, x);
    let w = &params[g.w_off..g.w_off + g.out_c * pl];
    let b = &params[g.b_off..g.b_off + g.out_c];
    let mut y = vec![0.0; g.positions() * g.out_c];
    for p in 0..g.positions() {
        let patch = &cols[p * pl..(p + 1) * pl];
        for co in 0..g.out_c {
            y[p * g.out_c + co] = b[co] + dot(&w[co * pl..(co + 1) * pl], patch);
        }
    }
    y
}

pub fn conv_backward(params: &[f64], g: &ConvGeom, x: &[f64], dy: &[f64], grad: &mut [f64], need_dx: bool) -> Vec<f64> {
    let pl = g.patch_len();
    let cols = im2col(g, x);
    let w = &params[g.w_off..g.w_off + g.out_c * pl];
    let mut dcols = if need_dx { vec![0.0; cols.len()] } else { Vec::new() };
    for p in 0..g.positions() {
        let patch = &cols[p * pl..(p + 1) * pl];
        for co in 0..g.out_c {
            let d = dy[p * g.out_c + co];
            if d == 0.0 {
                continue;
            }
            axpy(d, patch, &mut grad[g.w_off + co * pl..g.w_off + (co + 1) * pl]);
            grad[g.b_off + co] += d;
            if need_dx {
                axpy(d, &w[co * pl..(co + 1) * pl], &mut dcols[p * pl..(p + 1) * pl]);
            }
        }
    }
    if !need_dx {
        return Vec::new();
    }
    let mut dx = vec![0.0; g.in_h * g.in_w * g.in_c];
    col2im_add(g, &dcols, &mut dx);
    dx
}

/// Pooling with window = stride = `size`; trailing rows/columns that do not
/// fill a window are dropped. For max pooling, also returns the argmax index
/// of every output.
#[allow(clippy::too_many_arguments)]
pub fn pool_forward(
    mode: PoolMode,
    size: usize,
    in_w: usize,
    c: usize,
    out_h: usize,
    out_w: usize,
    x: &[f64],
) -> (Vec<f64>, Vec<usize>) {
    let mut y = vec![0.0; out_h * out_w * c];
    let mut arg = if mode == PoolMode::Max { vec![0usize; y.len()] } else { Vec::new() };
    let inv = 1.0 / (size * size) as f64;
    for oy in 0..out_h {
        for ox in 0..out_w {
            for ch in 0..c {
                let o = (oy * out_w + ox) * c + ch;
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                let mut acc = 0.0;
                for ky in 0..size {
                    for kx in 0..size {
                        let i = ((oy * size + ky) * in_w + ox * size + kx) * c + ch;
                        let v = x[i];
                        acc += v;
                        if v > best {
                            best = v;
                            best_i = i;
                        }
                    }
                }
                match mode {
                    PoolMode::Max => {
                        y[o] = best;
                        arg[o] = best_i;
                    }
                    PoolMode::Avg => y[o] = acc * inv,
                }
            }
        }
    }
    (y, arg)
}

#[allow(clippy::too_many_arguments)]
pub fn pool_backward(
    mode: PoolMode,
    size: usize,
    in_h: usize,
    in_w: usize,
    c: usize,
    out_h: usize,
    out_w: usize,
    argmax: &[usize],
    dy: &[f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; in_h * in_w * c];
    match mode {
        PoolMode::Max => {
            for (o, &i) in argmax.iter().enumerate() {
                dx[i] += dy[o];
            }
        }
        PoolMode::Avg => {
            let inv = 1.0 / (size * size) as f64;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    for ch in 0..c {
                        let d = dy[(oy * out_w + ox) * c + ch] * inv;
                        for ky in 0..size {
                            for kx in 0..size {
                                dx[((oy * size + ky) * in_w + ox * size + kx) * c + ch] += d;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(in_h: usize, in_w: usize, in_c: usize, out_c: usize, k: usize, stride: usize, padding: usize) -> ConvGeom {
        let out_h = (in_h + 2 * padding - k) / stride + 1;
        let out_w = (in_w + 2 * padding - k) / stride + 1;
        ConvGeom {
            in_h,
            in_w,
            in_c,
            out_h,
            out_w,
            out_c,
            kernel: k,
            stride,
            padding,
            w_off: 0,
            b_off: out_c * k * k * in_c,
        }
    }

    /// Direct nested-loop convolution, independent of the im2col path.
    fn naive_conv(params: &[f64], g: &ConvGeom, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; g.out_h * g.out_w * g.out_c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                for co in 0..g.out_c {
                    let mut s = params[g.b_off + co];
                    for ky in 0..g.kernel {
                        for kx in 0..g.kernel {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                continue;
                            }
                            for ci in 0..g.in_c {
                                let wi = ((co * g.kernel + ky) * g.kernel + kx) * g.in_c + ci;
                                s += params[wi] * x[(iy as usize * g.in_w + ix as usize) * g.in_c + ci];
                            }
                        }
                    }
                    y[(oy * g.out_w + ox) * g.out_c + co] = s;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_loops() {
        for &(h, w, ci, co, k, s, p) in
            &[(5, 6, 2, 3, 3, 1, 0), (7, 7, 1, 2, 3, 2, 1), (4, 4, 3, 2, 1, 1, 0), (6, 5, 2, 2, 5, 1, 2)]
        {
            let g = geom(h, w, ci, co, k, s, p);
            let params: Vec<f64> = (0..g.param_count()).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect();
            let x: Vec<f64> = (0..h * w * ci).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.25).collect();
            let a = conv_forward(&params, &g, &x);
            let b = naive_conv(&params, &g, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = vec![1.0, 5.0, 2.0, 3.0];
        let (y, arg) = pool_forward(PoolMode::Max, 2, 2, 1, 1, 1, &x);
        assert_eq!(y, vec![5.0]);
        let dx = pool_backward(PoolMode::Max, 2, 2, 2, 1, 1, 1, &arg, &[1.5]);
        assert_eq!(dx, vec![0.0, 1.5, 0.0, 0.0]);
        let (y, _) = pool_forward(PoolMode::Avg, 2, 2, 1, 1, 1, &x);
        assert_eq!(y, vec![2.75]);
    }
}
