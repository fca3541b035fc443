//! Minimal 1-D convolutional building blocks with explicit backward passes.
//!
//! Activations are stored channel-major as a `C × (N·L)` matrix: column
//! `n·L + t` holds timestep `t` of batch item `n`. Convolutions lower to a
//! single matrix product through an im2col buffer.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point element type of the network (`f32` for training, `f64`
/// for gradient verification).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A batch of sequences in channel-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Act<F> {
    pub data: Array2<F>,
    pub n: usize,
    pub len: usize,
}

impl<F: Real> Act<F> {
    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    /// Stacks `T × C` windows into one activation.
    pub fn from_windows<'a>(windows: impl IntoIterator<Item = ArrayView2<'a, f32>>) -> Self {
        let windows: Vec<_> = windows.into_iter().collect();
        let n = windows.len();
        let (len, c) = windows.first().map(|w| w.dim()).unwrap_or((0, 0));
        let mut data = Array2::zeros((c, n * len));
        for (b, w) in windows.iter().enumerate() {
            debug_assert_eq!(w.dim(), (len, c));
            for t in 0..len {
                for ch in 0..c {
                    data[[ch, b * len + t]] = F::of(w[[t, ch]] as f64);
                }
            }
        }
        Self { data, n, len }
    }
}

fn kaiming<F: Real, R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        F::of(std * z)
    })
}

/// Bias-free 1-D convolution with "same" padding `k / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<F> {
    /// `C_out × (C_in · K)`, column index `c_in · K + k`.
    pub weight: Array2<F>,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl<F: Real> Conv1d<F> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = in_channels * kernel;
        Self {
            weight: kaiming(out_channels, fan_in, fan_in, rng),
            in_channels,
            kernel,
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad() - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn im2col(&self, x: &Act<F>) -> Array2<F> {
        let (cin, k, s, p) = (self.in_channels, self.kernel, self.stride, self.pad() as isize);
        let (n, lin) = (x.n, x.len);
        let lout = self.out_len(lin);
        let ncols = n * lout;
        let mut cols = Array2::<F>::zeros((cin * k, ncols));
        let xs = x.data.as_slice().expect("standard layout");
        let cs = cols.as_slice_mut().expect("standard layout");
        for ci in 0..cin {
            for kk in 0..k {
                let row = (ci * k + kk) * ncols;
                for b in 0..n {
                    let xbase = ci * n * lin + b * lin;
                    let cbase = row + b * lout;
                    for o in 0..lout {
                        let t = (o * s + kk) as isize - p;
                        if t >= 0 && (t as usize) < lin {
                            cs[cbase + o] = xs[xbase + t as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<F>, n: usize, lin: usize) -> Array2<F> {
        let (cin, k, s, p) = (self.in_channels, self.kernel, self.stride, self.pad() as isize);
        let lout = self.out_len(lin);
        let ncols = n * lout;
        let mut dx = Array2::<F>::zeros((cin, n * lin));
        let ds = dcols.as_slice().expect("standard layout");
        let xs = dx.as_slice_mut().expect("standard layout");
        for ci in 0..cin {
            for kk in 0..k {
                let row = (ci * k + kk) * ncols;
                for b in 0..n {
                    let xbase = ci * n * lin + b * lin;
                    let cbase = row + b * lout;
                    for o in 0..lout {
                        let t = (o * s + kk) as isize - p;
                        if t >= 0 && (t as usize) < lin {
                            xs[xbase + t as usize] += ds[cbase + o];
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the output and the lowered input needed by `backward`.
    pub fn forward(&self, x: &Act<F>) -> (Act<F>, Array2<F>) {
        debug_assert_eq!(x.channels(), self.in_channels);
        let cols = if self.is_pointwise() {
            x.data.as_standard_layout().into_owned()
        } else {
            self.im2col(x)
        };
        let y = self.weight.dot(&cols);
        let len = self.out_len(x.len);
        (Act { data: y, n: x.n, len }, cols)
    }

    pub fn forward_eval(&self, x: &Act<F>) -> Act<F> {
        if self.is_pointwise() {
            Act {
                data: self.weight.dot(&x.data),
                n: x.n,
                len: x.len,
            }
        } else {
            self.forward(x).0
        }
    }

    /// Gradients w.r.t. weight and input given the upstream gradient.
    pub fn backward(&self, cols: &Array2<F>, n: usize, in_len: usize, dy: &Array2<F>) -> (Array2<F>, Array2<F>) {
        let dw = dy.dot(&cols.t());
        let mut dcols = Array2::<F>::zeros((self.weight.ncols(), dy.ncols()));
        general_mat_mul(F::one(), &self.weight.t(), dy, F::zero(), &mut dcols);
        let dx = if self.is_pointwise() {
            dcols
        } else {
            self.col2im(&dcols, n, in_len)
        };
        (dw, dx)
    }
}

/// Per-channel batch normalization over all `N·L` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
}

pub struct BnCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

impl<F: Real> BatchNorm<F> {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    /// Normalizes with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, x: &Array2<F>) -> (Array2<F>, BnCache<F>) {
        let cols = x.ncols();
        let m = F::of(Self::MOMENTUM);
        let mut xhat = Array2::<F>::zeros(x.raw_dim());
        let mut inv_std = Array1::<F>::zeros(x.nrows());
        let mut y = Array2::<F>::zeros(x.raw_dim());
        for c in 0..x.nrows() {
            let row = x.row(c);
            let mean = row.sum() / F::of(cols as f64);
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / F::of(cols as f64);
            let istd = F::one() / (var + F::of(Self::EPS)).sqrt();
            inv_std[c] = istd;
            let (g, b) = (self.gamma[c], self.beta[c]);
            for ((xh, yy), &v) in xhat.row_mut(c).iter_mut().zip(y.row_mut(c).iter_mut()).zip(row.iter()) {
                *xh = (v - mean) * istd;
                *yy = g * *xh + b;
            }
            let unbiased = if cols > 1 {
                var * F::of(cols as f64 / (cols - 1) as f64)
            } else {
                var
            };
            self.running_mean[c] = (F::one() - m) * self.running_mean[c] + m * mean;
            self.running_var[c] = (F::one() - m) * self.running_var[c] + m * unbiased;
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.clone();
        for (c, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            let istd = F::one() / (self.running_var[c] + F::of(Self::EPS)).sqrt();
            let (g, b, mu) = (self.gamma[c], self.beta[c], self.running_mean[c]);
            row.mapv_inplace(|v| g * (v - mu) * istd + b);
        }
        y
    }

    /// Returns `(dgamma, dbeta, dx)`.
    pub fn backward(&self, cache: &BnCache<F>, dy: &Array2<F>) -> (Array1<F>, Array1<F>, Array2<F>) {
        let cols = F::of(dy.ncols() as f64);
        let channels = dy.nrows();
        let mut dgamma = Array1::zeros(channels);
        let mut dbeta = Array1::zeros(channels);
        let mut dx = Array2::zeros(dy.raw_dim());
        for c in 0..channels {
            let (dyr, xh) = (dy.row(c), cache.xhat.row(c));
            let sum_dy: F = dyr.sum();
            let sum_dy_xh: F = dyr.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum();
            dgamma[c] = sum_dy_xh;
            dbeta[c] = sum_dy;
            let k = self.gamma[c] * cache.inv_std[c] / cols;
            for ((d, &g), &h) in dx.row_mut(c).iter_mut().zip(dyr.iter()).zip(xh.iter()) {
                *d = k * (cols * g - sum_dy - h * sum_dy_xh);
            }
        }
        (dgamma, dbeta, dx)
    }
}

pub fn relu<F: Real>(x: &mut Array2<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Zeroes `dy` wherever the ReLU output was not positive.
pub fn relu_backward<F: Real>(out: &Array2<F>, dy: &mut Array2<F>) {
    ndarray::Zip::from(dy).and(out).for_each(|d, &o| {
        if o <= F::zero() {
            *d = F::zero();
        }
    });
}

/// Parameter-free residual shortcut: strided subsampling in time and
/// zero-padding of the extra output channels.
pub fn shortcut<F: Real>(x: &Act<F>, out_channels: usize, stride: usize, out_len: usize) -> Array2<F> {
    let mut y = Array2::zeros((out_channels, x.n * out_len));
    for c in 0..x.channels() {
        for b in 0..x.n {
            for o in 0..out_len {
                y[[c, b * out_len + o]] = x.data[[c, b * x.len + o * stride]];
            }
        }
    }
    y
}

pub fn shortcut_backward<F: Real>(dy: &Array2<F>, in_channels: usize, n: usize, in_len: usize, stride: usize, out_len: usize) -> Array2<F> {
    let mut dx = Array2::zeros((in_channels, n * in_len));
    for c in 0..in_channels {
        for b in 0..n {
            for o in 0..out_len {
                dx[[c, b * in_len + o * stride]] += dy[[c, b * out_len + o]];
            }
        }
    }
    dx
}

/// Global max over time: returns `N × C` features and the winning columns.
pub fn global_max_pool<F: Real>(x: &Act<F>) -> (Array2<F>, Array2<usize>) {
    let c = x.channels();
    let mut out = Array2::zeros((x.n, c));
    let mut arg = Array2::zeros((x.n, c));
    for ch in 0..c {
        let row = x.data.row(ch);
        for b in 0..x.n {
            let mut best = b * x.len;
            for t in b * x.len..(b + 1) * x.len {
                if row[t] > row[best] {
                    best = t;
                }
            }
            out[[b, ch]] = row[best];
            arg[[b, ch]] = best;
        }
    }
    (out, arg)
}

pub fn global_max_pool_backward<F: Real>(d: &Array2<F>, arg: &Array2<usize>, channels: usize, cols: usize) -> Array2<F> {
    let mut dx = Array2::zeros((channels, cols));
    for ((b, ch), &g) in d.indexed_iter() {
        dx[[ch, arg[[b, ch]]]] += g;
    }
    dx
}

/// Row-wise L2 normalization; returns the normalized rows and their norms.
pub fn l2_normalize_rows<F: Real>(h: &Array2<F>) -> (Array2<F>, Array1<F>) {
    let norms = h.map_axis(Axis(1), |r| r.iter().map(|&v| v * v).sum::<F>().sqrt().max(F::of(1e-12)));
    let mut z = h.clone();
    for (mut row, &n) in z.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v / n);
    }
    (z, norms)
}

/// Backward of `z = h / ‖h‖`: `dh = (dz − z (z·dz)) / ‖h‖`.
pub fn l2_normalize_backward<F: Real>(z: &Array2<F>, norms: &Array1<F>, dz: &Array2<F>) -> Array2<F> {
    let mut dh = dz.clone();
    for ((mut row, zr), &n) in dh.rows_mut().into_iter().zip(z.rows()).zip(norms.iter()) {
        let dot: F = row.iter().zip(zr.iter()).map(|(&a, &b)| a * b).sum();
        for (d, &zz) in row.iter_mut().zip(zr.iter()) {
            *d = (*d - zz * dot) / n;
        }
    }
    dh
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_act(c: usize, n: usize, len: usize, seed: u64) -> Act<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Act {
            data: Array2::from_shape_simple_fn((c, n * len), || rng.random_range(-1.0..1.0)),
            n,
            len,
        }
    }

    /// Direct sliding-window convolution.
    fn naive_conv(conv: &Conv1d<f64>, x: &Act<f64>) -> Array2<f64> {
        let lout = conv.out_len(x.len);
        let p = (conv.kernel / 2) as isize;
        let mut y = Array2::zeros((conv.out_channels(), x.n * lout));
        for co in 0..conv.out_channels() {
            for b in 0..x.n {
                for o in 0..lout {
                    let mut acc = 0.0;
                    for ci in 0..conv.in_channels {
                        for k in 0..conv.kernel {
                            let t = (o * conv.stride + k) as isize - p;
                            if t >= 0 && (t as usize) < x.len {
                                acc += conv.weight[[co, ci * conv.kernel + k]] * x.data[[ci, b * x.len + t as usize]];
                            }
                        }
                    }
                    y[[co, b * lout + o]] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (k, s, len) in [(11, 2, 33), (11, 1, 20), (1, 1, 9), (3, 2, 8)] {
            let conv = Conv1d::<f64>::new(3, 4, k, s, &mut rng);
            let x = random_act(3, 2, len, 7);
            let (y, _) = conv.forward(&x);
            let expected = naive_conv(&conv, &x);
            assert_eq!(y.len, conv.out_len(len));
            assert!((&y.data - &expected).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn conv_input_gradient_is_adjoint() {
        // <dy, conv(x)> = <conv^T(dy), x> for a linear map.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv1d::<f64>::new(2, 3, 5, 2, &mut rng);
        let x = random_act(2, 3, 17, 2);
        let (y, cols) = conv.forward(&x);
        let dy = random_act(3, 3, y.len, 3).data;
        let (_, dx) = conv.backward(&cols, x.n, x.len, &dy);
        let lhs: f64 = (&dy * &y.data).sum();
        let rhs: f64 = (&dx * &x.data).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn = BatchNorm::<f64>::new(2);
        let x = random_act(2, 4, 8, 5).data;
        let (y, _) = bn.forward_train(&x);
        for row in y.rows() {
            assert!(row.mean().unwrap().abs() < 1e-12);
        }
        let before = bn.clone();
        let _ = bn.forward_eval(&x);
        assert_eq!(before, bn);
    }

    #[test]
    fn max_pool_picks_maximum() {
        let x = Act {
            data: ndarray::array![[1.0, 5.0, 2.0, -1.0, -3.0, -2.0]],
            n: 2,
            len: 3,
        };
        let (p, arg) = global_max_pool(&x);
        assert_eq!(p, ndarray::array![[5.0], [-1.0]]);
        assert_eq!(arg, ndarray::array![[1], [3]]);
    }

    #[test]
    fn normalize_rows_unit() {
        let h = ndarray::array![[3.0f64, 4.0], [0.0, -2.0]];
        let (z, n) = l2_normalize_rows(&h);
        assert_eq!(z, ndarray::array![[0.6, 0.8], [0.0, -1.0]]);
        assert_eq!(n, ndarray::array![5.0, 2.0]);
    }
}
