use rand::distributions::{Distribution, Uniform};
use rayon::prelude::*;

use super::loss::{focal_terms, FocalConfig};
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Channels after the first convolution.
pub const HIDDEN: usize = 12;
/// Kernel side; padding is `KERNEL / 2` so spatial size is preserved.
pub const KERNEL: usize = 3;
const K2: usize = KERNEL * KERNEL;

pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_BN_EPS: f64 = 1e-5;

/// Trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub conv1_w: Vec<T>,
    pub conv1_b: Vec<T>,
    pub bn_gamma: Vec<T>,
    pub bn_beta: Vec<T>,
    pub conv2_w: Vec<T>,
    pub conv2_b: Vec<T>,
}

impl<T: Real> Params<T> {
    pub const NAMES: [&'static str; 6] = [
        "conv1.weight",
        "conv1.bias",
        "bn.weight",
        "bn.bias",
        "conv2.weight",
        "conv2.bias",
    ];

    pub fn zeros(n_in: usize) -> Self {
        Self {
            conv1_w: vec![T::zero(); HIDDEN * n_in * K2],
            conv1_b: vec![T::zero(); HIDDEN],
            bn_gamma: vec![T::zero(); HIDDEN],
            bn_beta: vec![T::zero(); HIDDEN],
            conv2_w: vec![T::zero(); HIDDEN * K2],
            conv2_b: vec![T::zero(); 1],
        }
    }

    pub fn tensors(&self) -> [&[T]; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.bn_gamma,
            &self.bn_beta,
            &self.conv2_w,
            &self.conv2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.bn_gamma,
            &mut self.bn_beta,
            &mut self.conv2_w,
            &mut self.conv2_b,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.to_f64().unwrap())).collect();
        Params {
            conv1_w: c(&self.conv1_w),
            conv1_b: c(&self.conv1_b),
            bn_gamma: c(&self.bn_gamma),
            bn_beta: c(&self.bn_beta),
            conv2_w: c(&self.conv2_w),
            conv2_b: c(&self.conv2_b),
        }
    }
}

/// conv(N_in -> 12) -> batch norm -> ReLU -> conv(12 -> 1) -> sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnWeights<T = f32> {
    n_in: usize,
    pub params: Params<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

/// Which statistics batch norm normalizes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Batch,
    Running,
}

/// Per-channel batch statistics seen during a training-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance (divides by the pixel count).
    pub var: Vec<f64>,
    pub count: usize,
}

struct SampleForward<T> {
    xhat: Vec<T>,
    relu: Vec<T>,
    logits: Vec<T>,
}

struct Forward<T> {
    samples: Vec<SampleForward<T>>,
    inv_std: Vec<T>,
    stats: Option<BatchStats>,
}

impl<T: Real> FcnWeights<T> {
    /// Zero convolutions, identity batch norm. Outputs 0.5 everywhere.
    pub fn zeros(n_in: usize) -> Self {
        let mut params = Params::zeros(n_in);
        params.bn_gamma.fill(T::one());
        Self {
            n_in,
            params,
            running_mean: vec![T::zero(); HIDDEN],
            running_var: vec![T::one(); HIDDEN],
            momentum: T::of(DEFAULT_BN_MOMENTUM),
            eps: T::of(DEFAULT_BN_EPS),
        }
    }

    /// Kernels uniform in +-1/sqrt(fan_in), biases zero.
    pub fn init(n_in: usize, seed: u64) -> Self {
        let mut w = Self::zeros(n_in);
        let mut rng = rng_for(seed, stream::INIT, n_in as u64, 0);
        for (t, fan_in) in [(&mut w.params.conv1_w, n_in * K2), (&mut w.params.conv2_w, HIDDEN * K2)] {
            let b = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-b, b);
            for v in t.iter_mut() {
                *v = T::of(dist.sample(&mut rng));
            }
        }
        w
    }

    pub fn from_parts(
        n_in: usize,
        params: Params<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
        momentum: T,
        eps: T,
    ) -> Result<Self> {
        let expect = Params::<T>::zeros(n_in);
        for ((name, a), b) in Params::<T>::NAMES.iter().zip(params.tensors()).zip(expect.tensors()) {
            if a.len() != b.len() {
                return Err(Error::Shape(format!("{name}: {} values, expected {}", a.len(), b.len())));
            }
        }
        if running_mean.len() != HIDDEN || running_var.len() != HIDDEN {
            return Err(Error::Shape("running statistics must have 12 entries".into()));
        }
        Ok(Self {
            n_in,
            params,
            running_mean,
            running_var,
            momentum,
            eps,
        })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn cast<U: Real>(&self) -> FcnWeights<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.to_f64().unwrap())).collect();
        FcnWeights {
            n_in: self.n_in,
            params: self.params.cast(),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            momentum: U::of(self.momentum.to_f64().unwrap()),
            eps: U::of(self.eps.to_f64().unwrap()),
        }
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.channels() != self.n_in {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {}",
                self.n_in,
                x.channels()
            )));
        }
        Ok(())
    }

    fn forward_pass(&self, x: &Tensor4<T>, mode: BnMode) -> Result<Forward<T>> {
        self.check_input(x)?;
        let [n, c, h, w] = x.shape();
        let p = &self.params;
        let z1: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| conv3x3(x.sample(i), c, h, w, &p.conv1_w, &p.conv1_b, HIDDEN))
            .collect();
        let hw = h * w;
        let (mean, var, stats) = match mode {
            BnMode::Batch => {
                let count = n * hw;
                let sums: Vec<Vec<f64>> = z1.par_iter().map(|z| channel_sums(z, hw, |v| v)).collect();
                let mean = reduce_in_order(&sums).into_iter().map(|s| s / count as f64).collect::<Vec<_>>();
                let sq: Vec<Vec<f64>> = z1
                    .par_iter()
                    .map(|z| {
                        let mut out = vec![0.0; HIDDEN];
                        for (k, o) in out.iter_mut().enumerate() {
                            *o = z[k * hw..(k + 1) * hw]
                                .iter()
                                .map(|v| (v.to_f64().unwrap() - mean[k]).powi(2))
                                .sum();
                        }
                        out
                    })
                    .collect();
                let var: Vec<f64> = reduce_in_order(&sq).into_iter().map(|s| s / count as f64).collect();
                (
                    mean.iter().map(|&m| T::of(m)).collect::<Vec<T>>(),
                    var.iter().map(|&v| T::of(v)).collect::<Vec<T>>(),
                    Some(BatchStats { mean, var, count }),
                )
            }
            BnMode::Running => (self.running_mean.clone(), self.running_var.clone(), None),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let samples = z1
            .into_par_iter()
            .map(|mut xhat| {
                let mut relu = vec![T::zero(); HIDDEN * hw];
                for k in 0..HIDDEN {
                    let (g, b) = (p.bn_gamma[k], p.bn_beta[k]);
                    for (xv, rv) in xhat[k * hw..(k + 1) * hw].iter_mut().zip(&mut relu[k * hw..(k + 1) * hw]) {
                        *xv = (*xv - mean[k]) * inv_std[k];
                        let a = g * *xv + b;
                        *rv = if a > T::zero() { a } else { T::zero() };
                    }
                }
                let logits = conv3x3(&relu, HIDDEN, h, w, &p.conv2_w, &p.conv2_b, 1);
                SampleForward { xhat, relu, logits }
            })
            .collect();
        Ok(Forward {
            samples,
            inv_std,
            stats,
        })
    }

    /// Pre-sigmoid output, N x 1 x H x W.
    pub fn logits(&self, x: &Tensor4<T>, mode: BnMode) -> Result<Tensor4<T>> {
        let f = self.forward_pass(x, mode)?;
        let data = f.samples.into_iter().flat_map(|s| s.logits).collect();
        Tensor4::new(x.batch(), 1, x.height(), x.width(), data)
    }

    /// Probabilities in (0, 1), N x 1 x H x W.
    pub fn forward(&self, x: &Tensor4<T>, training: bool) -> Result<Tensor4<T>> {
        let mode = if training { BnMode::Batch } else { BnMode::Running };
        Ok(self.logits(x, mode)?.map(sigmoid))
    }

    /// Mean focal loss over all pixels of a training-mode pass.
    pub fn loss(&self, x: &Tensor4<T>, y: &[u8], focal: &FocalConfig) -> Result<f64> {
        let z = self.logits(x, BnMode::Batch)?;
        check_targets(&z, y)?;
        let total: f64 = z
            .data()
            .iter()
            .zip(y)
            .map(|(&zi, &yi)| focal_terms(zi, yi, focal).0.to_f64().unwrap())
            .sum();
        Ok(total / y.len() as f64)
    }

    /// Mean focal loss, its gradient with respect to every trainable
    /// parameter and the batch statistics, all from one training-mode pass.
    pub fn loss_and_grad(&self, x: &Tensor4<T>, y: &[u8], focal: &FocalConfig) -> Result<(f64, Params<T>, BatchStats)> {
        let fwd = self.forward_pass(x, BnMode::Batch)?;
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        if y.len() != n * hw {
            return Err(Error::Shape(format!("{} targets for {} outputs", y.len(), n * hw)));
        }
        let scale = T::of(1.0 / (n * hw) as f64);
        let p = &self.params;

        struct Stage1<T> {
            loss: f64,
            d_conv2_w: Vec<f64>,
            d_conv2_b: Vec<f64>,
            da: Vec<T>,
            sum_da: Vec<f64>,
            sum_da_xhat: Vec<f64>,
        }
        let stage1: Vec<Stage1<T>> = fwd
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let yi = &y[i * hw..(i + 1) * hw];
                let mut loss = 0.0;
                let dz2: Vec<T> = s
                    .logits
                    .iter()
                    .zip(yi)
                    .map(|(&z, &t)| {
                        let (l, g) = focal_terms(z, t, focal);
                        loss += l.to_f64().unwrap();
                        g * scale
                    })
                    .collect();
                let mut d_conv2_w = vec![0.0; HIDDEN * K2];
                let mut d_conv2_b = vec![0.0; 1];
                conv3x3_weight_grad(&s.relu, HIDDEN, h, w, &dz2, 1, &mut d_conv2_w, &mut d_conv2_b);
                let mut da = conv3x3_input_grad(&dz2, 1, h, w, &p.conv2_w, HIDDEN);
                for (d, &r) in da.iter_mut().zip(&s.relu) {
                    if r <= T::zero() {
                        *d = T::zero();
                    }
                }
                let sum_da = channel_sums(&da, hw, |v| v);
                let mut sum_da_xhat = vec![0.0; HIDDEN];
                for (k, o) in sum_da_xhat.iter_mut().enumerate() {
                    *o = da[k * hw..(k + 1) * hw]
                        .iter()
                        .zip(&s.xhat[k * hw..(k + 1) * hw])
                        .map(|(&d, &xh)| (d * xh).to_f64().unwrap())
                        .sum();
                }
                Stage1 {
                    loss,
                    d_conv2_w,
                    d_conv2_b,
                    da,
                    sum_da,
                    sum_da_xhat,
                }
            })
            .collect();

        let loss = stage1.iter().map(|s| s.loss).sum::<f64>() / (n * hw) as f64;
        let d_beta = reduce_in_order(&stage1.iter().map(|s| s.sum_da.clone()).collect::<Vec<_>>());
        let d_gamma = reduce_in_order(&stage1.iter().map(|s| s.sum_da_xhat.clone()).collect::<Vec<_>>());
        let d_conv2_w = reduce_in_order(&stage1.iter().map(|s| s.d_conv2_w.clone()).collect::<Vec<_>>());
        let d_conv2_b = reduce_in_order(&stage1.iter().map(|s| s.d_conv2_b.clone()).collect::<Vec<_>>());

        let m = T::of((n * hw) as f64);
        let mean_dxhat: Vec<T> = (0..HIDDEN).map(|k| p.bn_gamma[k] * T::of(d_beta[k]) / m).collect();
        let mean_dxhat_xhat: Vec<T> = (0..HIDDEN).map(|k| p.bn_gamma[k] * T::of(d_gamma[k]) / m).collect();

        let stage2: Vec<(Vec<f64>, Vec<f64>)> = stage1
            .par_iter()
            .zip(fwd.samples.par_iter())
            .enumerate()
            .map(|(i, (s1, s))| {
                let mut dz1 = s1.da.clone();
                for k in 0..HIDDEN {
                    let (g, inv) = (p.bn_gamma[k], fwd.inv_std[k]);
                    for (d, &xh) in dz1[k * hw..(k + 1) * hw].iter_mut().zip(&s.xhat[k * hw..(k + 1) * hw]) {
                        *d = inv * (g * *d - mean_dxhat[k] - xh * mean_dxhat_xhat[k]);
                    }
                }
                let mut dw = vec![0.0; HIDDEN * c * K2];
                let mut db = vec![0.0; HIDDEN];
                conv3x3_weight_grad(x.sample(i), c, h, w, &dz1, HIDDEN, &mut dw, &mut db);
                (dw, db)
            })
            .collect();
        let d_conv1_w = reduce_in_order(&stage2.iter().map(|s| s.0.clone()).collect::<Vec<_>>());
        let d_conv1_b = reduce_in_order(&stage2.iter().map(|s| s.1.clone()).collect::<Vec<_>>());

        let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        let grads = Params {
            conv1_w: cast(d_conv1_w),
            conv1_b: cast(d_conv1_b),
            bn_gamma: cast(d_gamma),
            bn_beta: cast(d_beta),
            conv2_w: cast(d_conv2_w),
            conv2_b: cast(d_conv2_b),
        };
        Ok((loss, grads, fwd.stats.expect("batch mode records statistics")))
    }

    /// Exponential moving average of batch statistics; the variance is
    /// stored unbiased.
    pub fn update_running(&mut self, s: &BatchStats) {
        let m = self.momentum;
        let unbias = if s.count > 1 {
            s.count as f64 / (s.count - 1) as f64
        } else {
            1.0
        };
        for k in 0..HIDDEN {
            self.running_mean[k] = (T::one() - m) * self.running_mean[k] + m * T::of(s.mean[k]);
            self.running_var[k] = (T::one() - m) * self.running_var[k] + m * T::of(s.var[k] * unbias);
        }
    }
}

/// Network output for a batch; `training` selects batch statistics.
pub fn fcn_forward<T: Real>(w: &FcnWeights<T>, x: &Tensor4<T>, training: bool) -> Result<Tensor4<T>> {
    w.forward(x, training)
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn check_targets<T: Real>(z: &Tensor4<T>, y: &[u8]) -> Result<()> {
    if y.len() != z.data().len() {
        return Err(Error::Shape(format!("{} targets for {} outputs", y.len(), z.data().len())));
    }
    Ok(())
}

fn channel_sums<T: Real>(v: &[T], hw: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    v.chunks(hw).map(|ch| ch.iter().map(|x| f(x.to_f64().unwrap())).sum()).collect()
}

/// Elementwise sum of per-sample partials in sample order, so the result
/// does not depend on how work was scheduled.
fn reduce_in_order(parts: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; parts.first().map_or(0, |p| p.len())];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Output rows `i` for which row `i + d` lies inside `0..n`.
fn valid(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// 3x3 convolution, stride 1, zero padding 1.
pub(crate) fn conv3x3<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); cout * hw];
    for o in 0..cout {
        let dst = &mut out[o * hw..(o + 1) * hw];
        dst.fill(bias[o]);
        for ci in 0..cin {
            let src = &x[ci * hw..(ci + 1) * hw];
            for ki in 0..KERNEL {
                let di = ki as isize - 1;
                let (i0, i1) = valid(h, di);
                for kj in 0..KERNEL {
                    let dj = kj as isize - 1;
                    let (j0, j1) = valid(w, dj);
                    let wv = weight[(o * cin + ci) * K2 + ki * KERNEL + kj];
                    for i in i0..i1 {
                        let si = (i as isize + di) as usize * w;
                        let s = &src[(si as isize + j0 as isize + dj) as usize..(si as isize + j1 as isize + dj) as usize];
                        for (d, &v) in dst[i * w + j0..i * w + j1].iter_mut().zip(s) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates kernel and bias gradients of `conv3x3` into `dw`, `db`.
pub(crate) fn conv3x3_weight_grad<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    dout: &[T],
    cout: usize,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let hw = h * w;
    for o in 0..cout {
        let g = &dout[o * hw..(o + 1) * hw];
        db[o] += g.iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
        for ci in 0..cin {
            let src = &x[ci * hw..(ci + 1) * hw];
            for ki in 0..KERNEL {
                let di = ki as isize - 1;
                let (i0, i1) = valid(h, di);
                for kj in 0..KERNEL {
                    let dj = kj as isize - 1;
                    let (j0, j1) = valid(w, dj);
                    let mut acc = 0.0;
                    for i in i0..i1 {
                        let si = ((i as isize + di) as usize * w) as isize;
                        let s = &src[(si + j0 as isize + dj) as usize..(si + j1 as isize + dj) as usize];
                        let row: T = g[i * w + j0..i * w + j1].iter().zip(s).map(|(&a, &b)| a * b).sum();
                        acc += row.to_f64().unwrap();
                    }
                    dw[(o * cin + ci) * K2 + ki * KERNEL + kj] += acc;
                }
            }
        }
    }
}

/// Gradient of `conv3x3` with respect to its input.
pub(crate) fn conv3x3_input_grad<T: Real>(
    dout: &[T],
    cout: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cin: usize,
) -> Vec<T> {
    let hw = h * w;
    let mut dx = vec![T::zero(); cin * hw];
    for o in 0..cout {
        let g = &dout[o * hw..(o + 1) * hw];
        for ci in 0..cin {
            let dst = &mut dx[ci * hw..(ci + 1) * hw];
            for ki in 0..KERNEL {
                let di = ki as isize - 1;
                let (i0, i1) = valid(h, di);
                for kj in 0..KERNEL {
                    let dj = kj as isize - 1;
                    let (j0, j1) = valid(w, dj);
                    let wv = weight[(o * cin + ci) * K2 + ki * KERNEL + kj];
                    for i in i0..i1 {
                        let si = ((i as isize + di) as usize * w) as isize;
                        let d = &mut dst[(si + j0 as isize + dj) as usize..(si + j1 as isize + dj) as usize];
                        for (dv, &gv) in d.iter_mut().zip(&g[i * w + j0..i * w + j1]) {
                            *dv += wv * gv;
                        }
                    }
                }
            }
        }
    }
    dx
}
