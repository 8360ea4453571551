//! Layer kernels: forward and backward passes for the supported layer set.
//!
//! Everything is f64 and single-threaded; convolution goes through im2col and
//! a dense matmul. The nested-loop oracle these kernels are tested against
//! lives in the test module.

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub fn conv_output_hw(
    (h, w): (usize, usize),
    kernel: (usize, usize),
    stride: usize,
    padding: (usize, usize),
) -> (usize, usize) {
    (
        (h + 2 * padding.0 - kernel.0) / stride + 1,
        (w + 2 * padding.1 - kernel.1) / stride + 1,
    )
}

/// Unfold x [n, c, h, w] into [c*kh*kw, n*oh*ow].
pub fn im2col(
    x: &ArrayView4<f64>,
    kernel: (usize, usize),
    stride: usize,
    padding: (usize, usize),
) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let (kh, kw) = kernel;
    let (oh, ow) = conv_output_hw((h, w), kernel, stride, padding);
    let m = n * oh * ow;
    let mut cols = Array2::<f64>::zeros((c * kh * kw, m));
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let rbase = row * m;
                for ni in 0..n {
                    let xbase = (ni * c + ci) * h * w;
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - padding.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * w;
                        let crow = rbase + (ni * oh + oy) * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kj) as isize - padding.1 as isize;
                            if ix >= 0 && ix < w as isize {
                                cs[crow + ox] = xs[xrow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold [c*kh*kw, n*oh*ow] gradients back onto the input (scatter-add).
pub fn col2im(
    cols: &ArrayView2<f64>,
    input_dim: (usize, usize, usize, usize),
    kernel: (usize, usize),
    stride: usize,
    padding: (usize, usize),
) -> Array4<f64> {
    let (n, c, h, w) = input_dim;
    let (kh, kw) = kernel;
    let (oh, ow) = conv_output_hw((h, w), kernel, stride, padding);
    let m = n * oh * ow;
    let mut x = Array4::<f64>::zeros(input_dim);
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let xs = x.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let rbase = row * m;
                for ni in 0..n {
                    let xbase = (ni * c + ci) * h * w;
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - padding.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * w;
                        let crow = rbase + (ni * oh + oy) * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kj) as isize - padding.1 as isize;
                            if ix >= 0 && ix < w as isize {
                                xs[xrow + ix as usize] += cs[crow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// y [n, cout, oh, ow] from x and weights [cout, cin, kh, kw].
/// Also returns the im2col matrix for reuse in the backward pass.
pub fn conv2d_forward(
    x: &ArrayView4<f64>,
    weight: &ArrayView4<f64>,
    stride: usize,
    padding: (usize, usize),
) -> (Array4<f64>, Array2<f64>) {
    let (n, _c, h, w) = x.dim();
    let (cout, cin, kh, kw) = weight.dim();
    let (oh, ow) = conv_output_hw((h, w), (kh, kw), stride, padding);
    let cols = im2col(x, (kh, kw), stride, padding);
    let wmat = weight
        .to_shape((cout, cin * kh * kw))
        .expect("weight reshape");
    let ymat = wmat.dot(&cols); // [cout, n*oh*ow]
    let y = ymat
        .to_shape((cout, n, oh, ow))
        .expect("output reshape")
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .to_owned();
    (y, cols)
}

/// Gradients w.r.t. input and weights given the cached im2col matrix.
pub fn conv2d_backward(
    grad_y: &ArrayView4<f64>,
    cols: &ArrayView2<f64>,
    weight: &ArrayView4<f64>,
    input_dim: (usize, usize, usize, usize),
    stride: usize,
    padding: (usize, usize),
) -> (Array4<f64>, Array4<f64>) {
    let (cout, cin, kh, kw) = weight.dim();
    let (n, _, oh, ow) = grad_y.dim();
    let gymat = grad_y
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .to_shape((cout, n * oh * ow))
        .expect("grad reshape")
        .to_owned();
    let wmat = weight
        .to_shape((cout, cin * kh * kw))
        .expect("weight reshape");
    let grad_w = gymat
        .dot(&cols.t())
        .to_shape((cout, cin, kh, kw))
        .expect("grad_w reshape")
        .to_owned();
    let grad_cols = wmat.t().dot(&gymat);
    let grad_x = col2im(&grad_cols.view(), input_dim, (kh, kw), stride, padding);
    (grad_x, grad_w)
}

pub struct BnCache {
    pub mean: Array1<f64>,
    pub inv_std: Array1<f64>,
}

/// Train-mode batchnorm using batch statistics. Updates running stats in
/// place (unbiased variance, momentum [`BN_MOMENTUM`]).
pub fn batchnorm_forward_train(
    x: &ArrayView4<f64>,
    gamma: &ArrayView1<f64>,
    beta: &ArrayView1<f64>,
    running_mean: &mut Array1<f64>,
    running_var: &mut Array1<f64>,
) -> (Array4<f64>, BnCache) {
    let (n, c, h, w) = x.dim();
    let count = (n * h * w) as f64;
    let mut mean = Array1::<f64>::zeros(c);
    let mut var = Array1::<f64>::zeros(c);
    for ci in 0..c {
        let ch = x.index_axis(Axis(1), ci);
        let m = ch.sum() / count;
        let v = ch.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / count;
        mean[ci] = m;
        var[ci] = v;
    }
    let mut y = Array4::<f64>::zeros((n, c, h, w));
    let mut inv_std = Array1::<f64>::zeros(c);
    for ci in 0..c {
        let is = 1.0 / (var[ci] + BN_EPS).sqrt();
        inv_std[ci] = is;
        let g = gamma[ci];
        let b = beta[ci];
        let m = mean[ci];
        let xc = x.index_axis(Axis(1), ci);
        let mut yc = y.index_axis_mut(Axis(1), ci);
        yc.zip_mut_with(&xc, |o, &v| *o = g * (v - m) * is + b);
        let unbiased = if count > 1.0 { var[ci] * count / (count - 1.0) } else { var[ci] };
        running_mean[ci] = (1.0 - BN_MOMENTUM) * running_mean[ci] + BN_MOMENTUM * m;
        running_var[ci] = (1.0 - BN_MOMENTUM) * running_var[ci] + BN_MOMENTUM * unbiased;
    }
    (y, BnCache { mean, inv_std })
}

/// Eval-mode batchnorm using running statistics.
pub fn batchnorm_forward_eval(
    x: &ArrayView4<f64>,
    gamma: &ArrayView1<f64>,
    beta: &ArrayView1<f64>,
    running_mean: &ArrayView1<f64>,
    running_var: &ArrayView1<f64>,
) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let mut y = Array4::<f64>::zeros((n, c, h, w));
    for ci in 0..c {
        let is = 1.0 / (running_var[ci] + BN_EPS).sqrt();
        let g = gamma[ci];
        let b = beta[ci];
        let m = running_mean[ci];
        let xc = x.index_axis(Axis(1), ci);
        let mut yc = y.index_axis_mut(Axis(1), ci);
        yc.zip_mut_with(&xc, |o, &v| *o = g * (v - m) * is + b);
    }
    y
}

/// Train-mode batchnorm backward (batch statistics).
pub fn batchnorm_backward(
    x: &ArrayView4<f64>,
    grad_y: &ArrayView4<f64>,
    gamma: &ArrayView1<f64>,
    cache: &BnCache,
) -> (Array4<f64>, Array1<f64>, Array1<f64>) {
    let (n, c, h, w) = x.dim();
    let count = (n * h * w) as f64;
    let mut grad_x = Array4::<f64>::zeros((n, c, h, w));
    let mut grad_gamma = Array1::<f64>::zeros(c);
    let mut grad_beta = Array1::<f64>::zeros(c);
    for ci in 0..c {
        let m = cache.mean[ci];
        let is = cache.inv_std[ci];
        let xc = x.index_axis(Axis(1), ci);
        let gyc = grad_y.index_axis(Axis(1), ci);
        let mut sum_gy = 0.0;
        let mut sum_gy_xhat = 0.0;
        for (&gy, &xv) in gyc.iter().zip(xc.iter()) {
            let xhat = (xv - m) * is;
            sum_gy += gy;
            sum_gy_xhat += gy * xhat;
        }
        grad_beta[ci] = sum_gy;
        grad_gamma[ci] = sum_gy_xhat;
        let g = gamma[ci];
        let mut gxc = grad_x.index_axis_mut(Axis(1), ci);
        for ((o, &gy), &xv) in gxc.iter_mut().zip(gyc.iter()).zip(xc.iter()) {
            let xhat = (xv - m) * is;
            *o = g * is / count * (count * gy - sum_gy - xhat * sum_gy_xhat);
        }
    }
    (grad_x, grad_gamma, grad_beta)
}

pub fn relu_forward(x: &ArrayView4<f64>) -> Array4<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x: &ArrayView4<f64>, grad_y: &ArrayView4<f64>) -> Array4<f64> {
    let mut g = grad_y.to_owned();
    g.zip_mut_with(x, |o, &v| {
        if v <= 0.0 {
            *o = 0.0;
        }
    });
    g
}

/// Max pooling; returns output and the flat input index of each maximum
/// (first maximum wins on ties).
pub fn maxpool_forward(
    x: &ArrayView4<f64>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> (Array4<f64>, Vec<usize>) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = conv_output_hw((h, w), (kernel, kernel), stride, (padding, padding));
    let mut y = Array4::<f64>::zeros((n, c, oh, ow));
    let mut argmax = vec![0usize; n * c * oh * ow];
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let ys = y.as_slice_mut().expect("standard layout");
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ki in 0..kernel {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..kernel {
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if xs[idx] > best {
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let oidx = ((ni * c + ci) * oh + oy) * ow + ox;
                    ys[oidx] = best;
                    argmax[oidx] = best_idx;
                }
            }
        }
    }
    (y, argmax)
}

pub fn maxpool_backward(
    grad_y: &ArrayView4<f64>,
    argmax: &[usize],
    input_dim: (usize, usize, usize, usize),
) -> Array4<f64> {
    let mut grad_x = Array4::<f64>::zeros(input_dim);
    let gxs = grad_x.as_slice_mut().expect("standard layout");
    let gy = grad_y.as_standard_layout();
    let gys = gy.as_slice().expect("standard layout");
    for (i, &src) in argmax.iter().enumerate() {
        gxs[src] += gys[i];
    }
    grad_x
}

/// Global average pool to spatial 1x1.
pub fn gap_forward(x: &ArrayView4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut y = Array4::<f64>::zeros((n, c, 1, 1));
    for ni in 0..n {
        for ci in 0..c {
            y[[ni, ci, 0, 0]] = x.index_axis(Axis(0), ni).index_axis(Axis(0), ci).sum() * scale;
        }
    }
    y
}

pub fn gap_backward(grad_y: &ArrayView4<f64>, input_dim: (usize, usize, usize, usize)) -> Array4<f64> {
    let (n, c, h, w) = input_dim;
    let scale = 1.0 / (h * w) as f64;
    let mut grad_x = Array4::<f64>::zeros(input_dim);
    for ni in 0..n {
        for ci in 0..c {
            let g = grad_y[[ni, ci, 0, 0]] * scale;
            grad_x
                .index_axis_mut(Axis(0), ni)
                .index_axis_mut(Axis(0), ci)
                .fill(g);
        }
    }
    grad_x
}

/// Fully-connected layer on [n, c, 1, 1] activations with weights [out, in].
pub fn linear_forward(x: &ArrayView4<f64>, weight: &ArrayView2<f64>) -> Array4<f64> {
    let (n, c, _, _) = x.dim();
    let out = weight.dim().0;
    let x2 = x.to_shape((n, c)).expect("linear input must be [n, c, 1, 1]");
    let y2 = x2.dot(&weight.t());
    y2.to_shape((n, out, 1, 1)).expect("reshape").to_owned()
}

pub fn linear_backward(
    x: &ArrayView4<f64>,
    weight: &ArrayView2<f64>,
    grad_y: &ArrayView4<f64>,
) -> (Array4<f64>, Array2<f64>) {
    let (n, c, _, _) = x.dim();
    let out = weight.dim().0;
    let x2 = x.to_shape((n, c)).expect("reshape");
    let gy2 = grad_y.to_shape((n, out)).expect("reshape").to_owned();
    let grad_w = gy2.t().dot(&x2);
    let grad_x = gy2.dot(weight);
    (
        grad_x.to_shape((n, c, 1, 1)).expect("reshape").to_owned(),
        grad_w,
    )
}

/// Mean cross-entropy over the batch with a numerically stable softmax.
/// Returns the loss and the gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &ArrayView2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let (n, k) = logits.dim();
    assert_eq!(n, labels.len(), "batch/label size mismatch");
    let mut grad = Array2::<f64>::zeros((n, k));
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = logits.index_axis(Axis(0), i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row.iter() {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln() + max;
        loss += (log_denom - row[labels[i]]) * inv_n;
        for j in 0..k {
            let p = (row[j] - log_denom).exp();
            grad[[i, j]] = (p - if j == labels[i] { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    (loss, grad)
}

pub fn logistic_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid_derivative(x: f64) -> f64 {
    let s = logistic_sigmoid(x);
    s * (1.0 - s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array, Array4};
    use rand::Rng;

    /// Straightforward nested-loop convolution, the reference oracle.
    pub(crate) fn conv_oracle(
        x: &Array4<f64>,
        w: &Array4<f64>,
        stride: usize,
        padding: (usize, usize),
    ) -> Array4<f64> {
        let (n, cin, h, wd) = x.dim();
        let (cout, _cin, kh, kw) = w.dim();
        let (oh, ow) = conv_output_hw((h, wd), (kh, kw), stride, padding);
        let mut y = Array4::<f64>::zeros((n, cout, oh, ow));
        for ni in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * stride + ki) as isize - padding.0 as isize;
                                    let ix = (ox * stride + kj) as isize - padding.1 as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                        acc += x[[ni, ci, iy as usize, ix as usize]]
                                            * w[[co, ci, ki, kj]];
                                    }
                                }
                            }
                        }
                        y[[ni, co, oy, ox]] = acc;
                    }
                }
            }
        }
        y
    }

    fn randn4(rng: &mut impl Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array::from_shape_simple_fn(dim, || rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn identity_one_by_one_conv() {
        let mut rng = crate::rng::stream(1, "nn-test");
        let x = randn4(&mut rng, (2, 3, 4, 4));
        let mut w = Array4::<f64>::zeros((3, 3, 1, 1));
        for i in 0..3 {
            w[[i, i, 0, 0]] = 1.0;
        }
        let (y, _) = conv2d_forward(&x.view(), &w.view(), 1, (0, 0));
        assert!(y.iter().zip(x.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn conv_matches_oracle_on_random_configs() {
        let mut rng = crate::rng::stream(2, "nn-test");
        for trial in 0..20 {
            let cin = 1 + trial % 4;
            let cout = 1 + (trial * 3) % 5;
            let k = [1, 3, 5][trial % 3];
            let stride = 1 + trial % 2;
            let pad = k / 2;
            let hw = 4 + trial % 5;
            let x = randn4(&mut rng, (2, cin, hw, hw));
            let w = randn4(&mut rng, (cout, cin, k, k));
            let (y, _) = conv2d_forward(&x.view(), &w.view(), stride, (pad, pad));
            let yo = conv_oracle(&x, &w, stride, (pad, pad));
            let max = y
                .iter()
                .zip(yo.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max <= 1e-5, "trial {trial}: max abs diff {max}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = crate::rng::stream(3, "nn-test");
        let x = randn4(&mut rng, (2, 3, 5, 5));
        let w = randn4(&mut rng, (4, 3, 3, 3));
        let (y, cols) = conv2d_forward(&x.view(), &w.view(), 2, (1, 1));
        let gy = randn4(&mut rng, y.dim());
        let (gx, gw) = conv2d_backward(&gy.view(), &cols.view(), &w.view(), x.dim(), 2, (1, 1));
        let eps = 1e-6;
        let loss = |x: &Array4<f64>, w: &Array4<f64>| -> f64 {
            let (y, _) = conv2d_forward(&x.view(), &w.view(), 2, (1, 1));
            (&y * &gy).sum()
        };
        for probe in 0..10 {
            let mut xp = x.clone();
            let flat = probe * 7 % xp.len();
            let xs = xp.as_slice_mut().unwrap();
            xs[flat] += eps;
            let num = (loss(&xp, &w) - loss(&x, &w)) / eps;
            let ana = gx.as_slice().unwrap()[flat];
            assert!((num - ana).abs() < 1e-4, "gx[{flat}]: {num} vs {ana}");

            let mut wp = w.clone();
            let flat = probe * 11 % wp.len();
            wp.as_slice_mut().unwrap()[flat] += eps;
            let num = (loss(&x, &wp) - loss(&x, &w)) / eps;
            let ana = gw.as_slice().unwrap()[flat];
            assert!((num - ana).abs() < 1e-4, "gw[{flat}]: {num} vs {ana}");
        }
    }

    #[test]
    fn batchnorm_normalizes_and_backward_checks() {
        let mut rng = crate::rng::stream(4, "nn-test");
        let x = randn4(&mut rng, (4, 3, 4, 4));
        let gamma = Array1::from_vec(vec![1.0, 2.0, 0.5]);
        let beta = Array1::from_vec(vec![0.0, -1.0, 0.3]);
        let mut rm = Array1::zeros(3);
        let mut rv = Array1::ones(3);
        let (y, cache) =
            batchnorm_forward_train(&x.view(), &gamma.view(), &beta.view(), &mut rm, &mut rv);
        // channel 0: unit gamma, zero beta -> mean 0, var ~1
        let c0 = y.index_axis(Axis(1), 0);
        assert!(c0.sum().abs() / (c0.len() as f64) < 1e-12);

        let gy = randn4(&mut rng, y.dim());
        let (gx, ggamma, gbeta) = batchnorm_backward(&x.view(), &gy.view(), &gamma.view(), &cache);
        let eps = 1e-6;
        let loss = |x: &Array4<f64>, gamma: &Array1<f64>, beta: &Array1<f64>| -> f64 {
            let mut rm = Array1::zeros(3);
            let mut rv = Array1::ones(3);
            let (y, _) =
                batchnorm_forward_train(&x.view(), &gamma.view(), &beta.view(), &mut rm, &mut rv);
            (&y * &gy).sum()
        };
        for probe in [0usize, 17, 33, 90] {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[probe] += eps;
            let num = (loss(&xp, &gamma, &beta) - loss(&x, &gamma, &beta)) / eps;
            let ana = gx.as_slice().unwrap()[probe];
            assert!((num - ana).abs() < 1e-4, "gx[{probe}]: {num} vs {ana}");
        }
        for ci in 0..3 {
            let mut gp = gamma.clone();
            gp[ci] += eps;
            let num = (loss(&x, &gp, &beta) - loss(&x, &gamma, &beta)) / eps;
            assert!((num - ggamma[ci]).abs() < 1e-4);
            let mut bp = beta.clone();
            bp[ci] += eps;
            let num = (loss(&x, &gamma, &bp) - loss(&x, &gamma, &beta)) / eps;
            assert!((num - gbeta[ci]).abs() < 1e-4);
        }
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let mut rng = crate::rng::stream(5, "nn-test");
        let x = randn4(&mut rng, (1, 2, 6, 6));
        let (y, argmax) = maxpool_forward(&x.view(), 3, 2, 1);
        let gy = Array4::<f64>::ones(y.dim());
        let gx = maxpool_backward(&gy.view(), &argmax, x.dim());
        assert_eq!(gx.sum(), y.len() as f64);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Array2::<f64>::zeros((2, 10));
        let (loss, grad) = softmax_cross_entropy(&logits.view(), &[3, 7]);
        assert!((loss - (10f64).ln()).abs() < 1e-12);
        assert!((grad[[0, 3]] - (0.1 - 1.0) / 2.0).abs() < 1e-12);
        assert!((grad[[0, 0]] - 0.1 / 2.0).abs() < 1e-12);
    }
}
