//! Layers with explicit forward and backward passes.
//!
//! Activations are `ArrayD` in NCHW layout (NC after pooling/flattening).
//! A forward pass in training mode records one [`Cache`] per layer; the
//! matching backward pass consumes them in reverse order and accumulates
//! parameter gradients into [`Grads`].

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD, Axis, Ix2, IxDyn};

use super::params::{BufferId, BufferStore, Grads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Whether a forward pass trains (batch statistics, caches recorded,
/// running statistics updated) or evaluates (running statistics, no caches).
pub enum Mode<'a, T> {
    Train(&'a mut BufferStore<T>),
    Eval(&'a BufferStore<T>),
}

impl<T> Mode<'_, T> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub channels: usize,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Clone, Debug)]
pub struct Residual {
    pub name: String,
    pub main: Vec<Layer>,
    /// Projection applied to the skip path; identity when `None`.
    pub shortcut: Option<Vec<Layer>>,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    Relu,
    /// Max pooling with a square window.
    MaxPool { kernel: usize, stride: usize, padding: usize },
    /// Average pooling down to an `out × out` grid; `out = 1` is global pooling.
    AdaptiveAvgPool { out: usize },
    Flatten,
    Linear(Linear),
    Residual(Box<Residual>),
}

#[derive(Debug)]
pub enum Cache<T> {
    Conv { cols: Array2<T>, in_shape: [usize; 4] },
    BatchNorm { xhat: ArrayD<T>, inv_std: Vec<T>, train: bool },
    Relu { output: ArrayD<T> },
    MaxPool { argmax: Vec<usize>, in_shape: [usize; 4] },
    AvgPool { in_shape: [usize; 4] },
    Flatten { in_shape: Vec<usize> },
    Linear { input: Array2<T> },
    Residual {
        main: Vec<Cache<T>>,
        shortcut: Option<Vec<Cache<T>>>,
        output: ArrayD<T>,
    },
}

fn dims4(x: &ArrayD<impl Clone>, key: &str) -> Result<[usize; 4]> {
    match x.shape() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        other => Err(Error::Shape {
            key: key.to_string(),
            msg: format!("expected NCHW input, got shape {other:?}"),
        }),
    }
}

fn check_finite<T: Scalar>(x: &ArrayD<T>, layer: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical {
            layer: layer.to_string(),
        })
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }

    /// Input column for output column `o` and kernel offset `kk`, if inside.
    #[inline]
    fn source(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let i = (o * self.s + kk) as isize - self.p as isize;
        (i >= 0 && (i as usize) < limit).then_some(i as usize)
    }
}

fn im2col<T: Scalar>(x: &[T], g: ConvGeom) -> Array2<T> {
    let width = g.cols();
    let mut cols = vec![T::zero(); g.rows() * width];
    let plane = g.ho * g.wo;
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst_row = &mut cols[row * width..(row + 1) * width];
                for ni in 0..g.n {
                    let src = &x[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut dst_row[ni * plane..(ni + 1) * plane];
                    for oh in 0..g.ho {
                        let Some(ih) = g.source(oh, ki, g.h) else { continue };
                        let src_row = &src[ih * g.w..(ih + 1) * g.w];
                        let dst_out = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                        for (ow, d) in dst_out.iter_mut().enumerate() {
                            if let Some(iw) = g.source(ow, kj, g.w) {
                                *d = src_row[iw];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((g.rows(), width), cols).expect("im2col shape")
}

fn col2im<T: Scalar>(cols: &Array2<T>, g: ConvGeom) -> Vec<T> {
    let cols = cols.as_standard_layout();
    let cols = cols.as_slice().expect("contiguous");
    let width = g.cols();
    let plane = g.ho * g.wo;
    let mut x = vec![T::zero(); g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src_row = &cols[row * width..(row + 1) * width];
                for ni in 0..g.n {
                    let dst = &mut x[(ni * g.c + ci) * g.h * g.w..][..g.h * g.w];
                    let src = &src_row[ni * plane..(ni + 1) * plane];
                    for oh in 0..g.ho {
                        let Some(ih) = g.source(oh, ki, g.h) else { continue };
                        let dst_row = &mut dst[ih * g.w..(ih + 1) * g.w];
                        let src_out = &src[oh * g.wo..(oh + 1) * g.wo];
                        for (ow, v) in src_out.iter().enumerate() {
                            if let Some(iw) = g.source(ow, kj, g.w) {
                                dst_row[iw] = dst_row[iw] + *v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

impl Conv2d {
    fn geometry(&self, shape: [usize; 4]) -> Result<ConvGeom> {
        let [n, c, h, w] = shape;
        if c != self.in_channels {
            return Err(Error::Shape {
                key: self.name.clone(),
                msg: format!("expected {} input channels, got {c}", self.in_channels),
            });
        }
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::Shape {
                key: self.name.clone(),
                msg: format!("input {h}x{w} smaller than kernel {}", self.kernel),
            });
        }
        Ok(ConvGeom {
            n,
            c,
            h,
            w,
            k: self.kernel,
            s: self.stride,
            p: self.padding,
            ho: (h + 2 * self.padding - self.kernel) / self.stride + 1,
            wo: (w + 2 * self.padding - self.kernel) / self.stride + 1,
        })
    }

    fn weight_matrix<'a, T: Scalar>(&self, params: &'a ParamStore<T>) -> ndarray::ArrayView2<'a, T> {
        params
            .param(self.weight)
            .view()
            .into_shape_with_order((self.out_channels, self.in_channels * self.kernel * self.kernel))
            .expect("conv weight shape")
    }

    fn forward<T: Scalar>(&self, params: &ParamStore<T>, x: &ArrayD<T>) -> Result<(ArrayD<T>, Array2<T>, [usize; 4])> {
        let shape = dims4(x, &self.name)?;
        let g = self.geometry(shape)?;
        let x = x.as_standard_layout();
        let cols = im2col(x.as_slice().expect("contiguous"), g);
        let mut out2 = Array2::<T>::zeros((self.out_channels, g.cols()));
        general_mat_mul(T::one(), &self.weight_matrix(params), &cols, T::zero(), &mut out2);

        let plane = g.ho * g.wo;
        let mut out = vec![T::zero(); g.n * self.out_channels * plane];
        let bias = self.bias.map(|b| params.param(b));
        for co in 0..self.out_channels {
            let row = out2.row(co);
            let row = row.as_slice().expect("row-major");
            let b = bias.map(|b| b[[co]]).unwrap_or_else(T::zero);
            for ni in 0..g.n {
                let dst = &mut out[(ni * self.out_channels + co) * plane..][..plane];
                for (d, s) in dst.iter_mut().zip(&row[ni * plane..(ni + 1) * plane]) {
                    *d = *s + b;
                }
            }
        }
        let out = ArrayD::from_shape_vec(IxDyn(&[g.n, self.out_channels, g.ho, g.wo]), out)
            .expect("conv output shape");
        Ok((out, cols, shape))
    }

    fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        grads: &mut Grads<T>,
        cols: &Array2<T>,
        in_shape: [usize; 4],
        dy: &ArrayD<T>,
        need_dx: bool,
    ) -> Option<ArrayD<T>> {
        let g = self.geometry(in_shape).expect("validated in forward");
        let plane = g.ho * g.wo;
        let dy = dy.as_standard_layout();
        let dy_s = dy.as_slice().expect("contiguous");
        let mut dy2 = Array2::<T>::zeros((self.out_channels, g.cols()));
        for co in 0..self.out_channels {
            let mut row = dy2.row_mut(co);
            let row = row.as_slice_mut().expect("row-major");
            for ni in 0..g.n {
                row[ni * plane..(ni + 1) * plane]
                    .copy_from_slice(&dy_s[(ni * self.out_channels + co) * plane..][..plane]);
            }
        }

        {
            let gw = grads.get_mut(self.weight);
            let mut gw2 = gw
                .view_mut()
                .into_shape_with_order((self.out_channels, g.rows()))
                .expect("conv weight shape");
            general_mat_mul(T::one(), &dy2, &cols.t(), T::one(), &mut gw2);
        }
        if let Some(b) = self.bias {
            let gb = grads.get_mut(b);
            for (co, row) in dy2.rows().into_iter().enumerate() {
                gb[[co]] = gb[[co]] + row.sum();
            }
        }
        if !need_dx {
            return None;
        }
        let mut dcols = Array2::<T>::zeros((g.rows(), g.cols()));
        general_mat_mul(T::one(), &self.weight_matrix(params).t(), &dy2, T::zero(), &mut dcols);
        let dx = col2im(&dcols, g);
        Some(ArrayD::from_shape_vec(IxDyn(&in_shape), dx).expect("input shape"))
    }
}

impl BatchNorm2d {
    fn forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        mode: &mut Mode<'_, T>,
        x: &ArrayD<T>,
    ) -> Result<(ArrayD<T>, ArrayD<T>, Vec<T>)> {
        let [n, c, h, w] = dims4(x, &self.name)?;
        if c != self.channels {
            return Err(Error::Shape {
                key: self.name.clone(),
                msg: format!("expected {} channels, got {c}", self.channels),
            });
        }
        let plane = h * w;
        let m = n * plane;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("contiguous");
        let eps = T::from_f64_lossy(BN_EPS);

        let (mean, var): (Vec<T>, Vec<T>) = match mode {
            Mode::Train(buffers) => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ci in 0..c {
                    let mut s = 0f64;
                    for ni in 0..n {
                        s += xs[(ni * c + ci) * plane..][..plane].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut sq = 0f64;
                    for ni in 0..n {
                        sq += xs[(ni * c + ci) * plane..][..plane]
                            .iter()
                            .map(|v| {
                                let d = v.as_f64() - mu;
                                d * d
                            })
                            .sum::<f64>();
                    }
                    mean[ci] = T::from_f64_lossy(mu);
                    var[ci] = T::from_f64_lossy(sq / m as f64);
                    let unbiased = if m > 1 { sq / (m - 1) as f64 } else { sq };
                    let rm = buffers.buffer_mut(self.running_mean);
                    rm[[ci]] = T::from_f64_lossy((1.0 - BN_MOMENTUM) * rm[[ci]].as_f64() + BN_MOMENTUM * mu);
                    let rv = buffers.buffer_mut(self.running_var);
                    rv[[ci]] =
                        T::from_f64_lossy((1.0 - BN_MOMENTUM) * rv[[ci]].as_f64() + BN_MOMENTUM * unbiased);
                }
                (mean, var)
            }
            Mode::Eval(buffers) => (
                buffers.buffer(self.running_mean).iter().copied().collect(),
                buffers.buffer(self.running_var).iter().copied().collect(),
            ),
        };

        let gamma = params.param(self.gamma);
        let beta = params.param(self.beta);
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut y = vec![T::zero(); xs.len()];
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * plane;
                let (g, b, mu, is) = (gamma[[ci]], beta[[ci]], mean[ci], inv_std[ci]);
                for i in off..off + plane {
                    let xh = (xs[i] - mu) * is;
                    xhat[i] = xh;
                    y[i] = g * xh + b;
                }
            }
        }
        let shape = IxDyn(&[n, c, h, w]);
        Ok((
            ArrayD::from_shape_vec(shape.clone(), y).expect("bn shape"),
            ArrayD::from_shape_vec(shape, xhat).expect("bn shape"),
            inv_std,
        ))
    }

    fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        grads: &mut Grads<T>,
        xhat: &ArrayD<T>,
        inv_std: &[T],
        train: bool,
        dy: &ArrayD<T>,
    ) -> ArrayD<T> {
        let [n, c, h, w] = dims4(xhat, &self.name).expect("validated in forward");
        let plane = h * w;
        let m = T::from_usize_lossy(n * plane);
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("contiguous");
        let xh = xhat.as_slice().expect("contiguous");
        let gamma = params.param(self.gamma).clone();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * plane;
                for i in off..off + plane {
                    dgamma[ci] = dgamma[ci] + dys[i] * xh[i];
                    dbeta[ci] = dbeta[ci] + dys[i];
                }
            }
        }
        {
            let gg = grads.get_mut(self.gamma);
            for ci in 0..c {
                gg[[ci]] = gg[[ci]] + dgamma[ci];
            }
        }
        {
            let gb = grads.get_mut(self.beta);
            for ci in 0..c {
                gb[[ci]] = gb[[ci]] + dbeta[ci];
            }
        }
        let mut dx = vec![T::zero(); dys.len()];
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * plane;
                let g = gamma[[ci]];
                let is = inv_std[ci];
                if train {
                    // dxhat = dy * gamma; sums over the channel are dbeta*gamma and dgamma*gamma
                    let s1 = dbeta[ci] * g;
                    let s2 = dgamma[ci] * g;
                    for i in off..off + plane {
                        dx[i] = is / m * (m * dys[i] * g - s1 - xh[i] * s2);
                    }
                } else {
                    for i in off..off + plane {
                        dx[i] = dys[i] * g * is;
                    }
                }
            }
        }
        ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), dx).expect("bn shape")
    }
}

impl Linear {
    fn forward<T: Scalar>(&self, params: &ParamStore<T>, x: &ArrayD<T>) -> Result<(ArrayD<T>, Array2<T>)> {
        let x2 = x
            .view()
            .into_dimensionality::<Ix2>()
            .map_err(|_| Error::Shape {
                key: self.name.clone(),
                msg: format!("expected (batch, features) input, got {:?}", x.shape()),
            })?
            .to_owned();
        if x2.ncols() != self.in_features {
            return Err(Error::Shape {
                key: self.name.clone(),
                msg: format!("expected {} features, got {}", self.in_features, x2.ncols()),
            });
        }
        let w = params
            .param(self.weight)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("linear weight shape");
        let b = params.param(self.bias);
        let mut y = x2.dot(&w.t());
        for mut row in y.rows_mut() {
            for (v, bb) in row.iter_mut().zip(b.iter()) {
                *v = *v + *bb;
            }
        }
        Ok((y.into_dyn(), x2))
    }

    fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        grads: &mut Grads<T>,
        input: &Array2<T>,
        dy: &ArrayD<T>,
    ) -> ArrayD<T> {
        let dy = dy.view().into_dimensionality::<Ix2>().expect("linear grad shape");
        {
            let gw = grads.get_mut(self.weight);
            let mut gw = gw.view_mut().into_dimensionality::<Ix2>().expect("linear weight shape");
            general_mat_mul(T::one(), &dy.t(), input, T::one(), &mut gw);
        }
        {
            let gb = grads.get_mut(self.bias);
            let sums = dy.sum_axis(Axis(0));
            for (g, s) in gb.iter_mut().zip(sums.iter()) {
                *g = *g + *s;
            }
        }
        let w = params
            .param(self.weight)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("linear weight shape");
        dy.dot(&w).into_dyn()
    }
}

fn max_pool_forward<T: Scalar>(
    x: &ArrayD<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(ArrayD<T>, Vec<usize>, [usize; 4])> {
    let shape = dims4(x, "max_pool")?;
    let [n, c, h, w] = shape;
    let ho = (h + 2 * padding - kernel) / stride + 1;
    let wo = (w + 2 * padding - kernel) / stride + 1;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("contiguous");
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for nc in 0..n * c {
        let base = nc * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_i = base;
                for ki in 0..kernel {
                    let ih = (oh * stride + ki) as isize - padding as isize;
                    if ih < 0 || ih as usize >= h {
                        continue;
                    }
                    for kj in 0..kernel {
                        let iw = (ow * stride + kj) as isize - padding as isize;
                        if iw < 0 || iw as usize >= w {
                            continue;
                        }
                        let i = base + ih as usize * w + iw as usize;
                        if xs[i] > best {
                            best = xs[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_i);
            }
        }
    }
    Ok((
        ArrayD::from_shape_vec(IxDyn(&[n, c, ho, wo]), out).expect("pool shape"),
        argmax,
        shape,
    ))
}

fn avg_pool_forward<T: Scalar>(x: &ArrayD<T>, out: usize) -> Result<(ArrayD<T>, [usize; 4])> {
    let shape = dims4(x, "avg_pool")?;
    let [n, c, h, w] = shape;
    if out == 0 || h % out != 0 || w % out != 0 {
        return Err(Error::Shape {
            key: "avg_pool".into(),
            msg: format!("cannot pool {h}x{w} to {out}x{out}"),
        });
    }
    let (bh, bw) = (h / out, w / out);
    let scale = T::one() / T::from_usize_lossy(bh * bw);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("contiguous");
    let mut y = vec![T::zero(); n * c * out * out];
    for nc in 0..n * c {
        for ih in 0..h {
            for iw in 0..w {
                let o = nc * out * out + (ih / bh) * out + iw / bw;
                y[o] = y[o] + xs[nc * h * w + ih * w + iw];
            }
        }
    }
    y.iter_mut().for_each(|v| *v = *v * scale);
    let y = if out == 1 {
        ArrayD::from_shape_vec(IxDyn(&[n, c]), y)
    } else {
        ArrayD::from_shape_vec(IxDyn(&[n, c, out, out]), y)
    }
    .expect("pool shape");
    Ok((y, shape))
}

fn avg_pool_backward<T: Scalar>(dy: &ArrayD<T>, in_shape: [usize; 4]) -> ArrayD<T> {
    let [n, c, h, w] = in_shape;
    let out = if dy.ndim() == 2 { 1 } else { dy.shape()[2] };
    let (bh, bw) = (h / out, w / out);
    let scale = T::one() / T::from_usize_lossy(bh * bw);
    let dy = dy.as_standard_layout();
    let ds = dy.as_slice().expect("contiguous");
    let mut dx = vec![T::zero(); n * c * h * w];
    for nc in 0..n * c {
        for ih in 0..h {
            for iw in 0..w {
                dx[nc * h * w + ih * w + iw] = ds[nc * out * out + (ih / bh) * out + iw / bw] * scale;
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&in_shape), dx).expect("pool shape")
}

/// Runs `layers` in order. In training mode the returned caches feed
/// [`backward`]; in evaluation mode the cache list is empty.
pub fn forward<T: Scalar>(
    layers: &[Layer],
    params: &ParamStore<T>,
    mode: &mut Mode<'_, T>,
    mut x: ArrayD<T>,
    scope: &str,
) -> Result<(ArrayD<T>, Vec<Cache<T>>)> {
    let train = mode.is_train();
    let mut caches = Vec::with_capacity(if train { layers.len() } else { 0 });
    for (i, layer) in layers.iter().enumerate() {
        let (y, cache) = match layer {
            Layer::Conv(conv) => {
                let (y, cols, in_shape) = conv.forward(params, &x)?;
                (y, Cache::Conv { cols, in_shape })
            }
            Layer::BatchNorm(bn) => {
                let (y, xhat, inv_std) = bn.forward(params, mode, &x)?;
                (y, Cache::BatchNorm { xhat, inv_std, train })
            }
            Layer::Relu => {
                let y = x.mapv(|v| if v > T::zero() { v } else { T::zero() });
                let cache = Cache::Relu {
                    output: if train { y.clone() } else { ArrayD::zeros(IxDyn(&[0])) },
                };
                (y, cache)
            }
            Layer::MaxPool {
                kernel,
                stride,
                padding,
            } => {
                let (y, argmax, in_shape) = max_pool_forward(&x, *kernel, *stride, *padding)?;
                (y, Cache::MaxPool { argmax, in_shape })
            }
            Layer::AdaptiveAvgPool { out } => {
                let (y, in_shape) = avg_pool_forward(&x, *out)?;
                (y, Cache::AvgPool { in_shape })
            }
            Layer::Flatten => {
                let in_shape = x.shape().to_vec();
                let n = in_shape[0];
                let rest = in_shape[1..].iter().product::<usize>();
                let y = x
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&[n, rest]))
                    .expect("flatten shape");
                (y, Cache::Flatten { in_shape })
            }
            Layer::Linear(lin) => {
                let (y, input) = lin.forward(params, &x)?;
                (y, Cache::Linear { input })
            }
            Layer::Residual(block) => {
                let (main_out, main) = forward(&block.main, params, mode, x.clone(), &block.name)?;
                let (skip, shortcut) = match &block.shortcut {
                    Some(sc) => {
                        let (s, c) = forward(sc, params, mode, x.clone(), &block.name)?;
                        (s, Some(c))
                    }
                    None => (x.clone(), None),
                };
                if main_out.shape() != skip.shape() {
                    return Err(Error::Shape {
                        key: block.name.clone(),
                        msg: format!("residual {:?} vs skip {:?}", main_out.shape(), skip.shape()),
                    });
                }
                let y = (main_out + skip).mapv(|v| if v > T::zero() { v } else { T::zero() });
                let output = if train { y.clone() } else { ArrayD::zeros(IxDyn(&[0])) };
                (
                    y,
                    Cache::Residual {
                        main,
                        shortcut,
                        output,
                    },
                )
            }
        };
        check_finite(&y, &layer_name(layer, scope, i))?;
        if train {
            caches.push(cache);
        }
        x = y;
    }
    Ok((x, caches))
}

fn layer_name(layer: &Layer, scope: &str, index: usize) -> String {
    match layer {
        Layer::Conv(c) => c.name.clone(),
        Layer::BatchNorm(b) => b.name.clone(),
        Layer::Linear(l) => l.name.clone(),
        Layer::Residual(r) => r.name.clone(),
        Layer::Relu => format!("{scope}.relu[{index}]"),
        Layer::MaxPool { .. } => format!("{scope}.maxpool[{index}]"),
        Layer::AdaptiveAvgPool { .. } => format!("{scope}.avgpool[{index}]"),
        Layer::Flatten => format!("{scope}.flatten[{index}]"),
    }
}

/// Back-propagates `dy` through `layers`, accumulating parameter gradients.
/// Returns the input gradient unless `need_dx` is false and the first layer
/// can skip computing it.
pub fn backward<T: Scalar>(
    layers: &[Layer],
    params: &ParamStore<T>,
    grads: &mut Grads<T>,
    caches: Vec<Cache<T>>,
    mut dy: ArrayD<T>,
    need_dx: bool,
) -> Option<ArrayD<T>> {
    assert_eq!(layers.len(), caches.len(), "backward needs training-mode caches");
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let want_dx = need_dx || i > 0;
        dy = match (layer, cache) {
            (Layer::Conv(conv), Cache::Conv { cols, in_shape }) => {
                match conv.backward(params, grads, &cols, in_shape, &dy, want_dx) {
                    Some(dx) => dx,
                    None => return None,
                }
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std, train }) => {
                bn.backward(params, grads, &xhat, &inv_std, train, &dy)
            }
            (Layer::Relu, Cache::Relu { output }) => {
                ndarray::Zip::from(&mut dy).and(&output).for_each(|d, &o| {
                    if o <= T::zero() {
                        *d = T::zero();
                    }
                });
                dy
            }
            (Layer::MaxPool { .. }, Cache::MaxPool { argmax, in_shape }) => {
                let mut dx = vec![T::zero(); in_shape.iter().product()];
                for (g, &src) in dy.iter().zip(&argmax) {
                    dx[src] = dx[src] + *g;
                }
                ArrayD::from_shape_vec(IxDyn(&in_shape), dx).expect("pool shape")
            }
            (Layer::AdaptiveAvgPool { .. }, Cache::AvgPool { in_shape }) => avg_pool_backward(&dy, in_shape),
            (Layer::Flatten, Cache::Flatten { in_shape }) => dy
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(IxDyn(&in_shape))
                .expect("flatten shape"),
            (Layer::Linear(lin), Cache::Linear { input }) => lin.backward(params, grads, &input, &dy),
            (
                Layer::Residual(block),
                Cache::Residual {
                    main,
                    shortcut,
                    output,
                },
            ) => {
                ndarray::Zip::from(&mut dy).and(&output).for_each(|d, &o| {
                    if o <= T::zero() {
                        *d = T::zero();
                    }
                });
                let skip_dx = match (&block.shortcut, shortcut) {
                    (Some(sc), Some(c)) => backward(sc, params, grads, c, dy.clone(), want_dx),
                    (None, None) => Some(dy.clone()),
                    _ => unreachable!("shortcut cache mismatch"),
                };
                let main_dx = backward(&block.main, params, grads, main, dy, want_dx);
                match (main_dx, skip_dx) {
                    (Some(a), Some(b)) => a + b,
                    _ => return None,
                }
            }
            _ => unreachable!("layer/cache mismatch"),
        };
    }
    Some(dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::TensorStore;
    use ndarray::Array4;

    /// Direct-loop convolution used as an oracle for the im2col path.
    fn naive_conv(x: &Array4<f64>, w: &Array4<f64>, b: &[f64], stride: usize, pad: usize) -> Array4<f64> {
        let (n, c, h, wd) = x.dim();
        let (co, _, k, _) = w.dim();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        Array4::from_shape_fn((n, co, ho, wo), |(ni, o, oh, ow)| {
            let mut s = b[o];
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                            s += x[[ni, ci, ih as usize, iw as usize]] * w[[o, ci, ki, kj]];
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (5, 2, 2), (7, 2, 3), (1, 2, 0)] {
            let x = Array4::from_shape_fn((2, 3, 9, 8), |(a, b, c, d)| ((a * 7 + b * 5 + c * 3 + d) % 11) as f64 - 5.0);
            let w = Array4::from_shape_fn((4, 3, k, k), |(a, b, c, d)| ((a + 2 * b + 3 * c + 5 * d) % 7) as f64 * 0.1 - 0.3);
            let bias = [0.5, -0.25, 0.0, 1.0];
            let mut params = TensorStore::<f64>::new();
            let wid = params.add_param("w", w.clone().into_dyn());
            let bid = params.add_param("b", ndarray::arr1(&bias).into_dyn());
            let conv = Conv2d {
                name: "conv".into(),
                weight: wid,
                bias: Some(bid),
                in_channels: 3,
                out_channels: 4,
                kernel: k,
                stride: s,
                padding: p,
            };
            let (y, _, _) = conv.forward(&params, &x.clone().into_dyn()).unwrap();
            let expect = naive_conv(&x, &w, &bias, s, p);
            assert_eq!(y.shape(), expect.shape());
            for (a, b) in y.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let mut params = TensorStore::<f32>::new();
        let w = params.add_param("w", ArrayD::from_elem(IxDyn(&[2, 3]), f32::MAX));
        let b = params.add_param("b", ArrayD::zeros(IxDyn(&[2])));
        let layers = vec![Layer::Linear(Linear {
            name: "head.blowup".into(),
            weight: w,
            bias: b,
            in_features: 3,
            out_features: 2,
        })];
        let buffers = TensorStore::new();
        let x = ArrayD::from_elem(IxDyn(&[1, 3]), 10.0f32);
        let err = forward(&layers, &params, &mut Mode::Eval(&buffers), x, "m").unwrap_err();
        assert!(matches!(err, Error::Numerical { ref layer } if layer == "head.blowup"));
    }

    #[test]
    fn avg_pool_rejects_indivisible_grid() {
        let x = ArrayD::<f32>::zeros(IxDyn(&[1, 1, 10, 10]));
        assert!(avg_pool_forward(&x, 8).is_err());
        let (y, _) = avg_pool_forward(&x, 5).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
    }
}
