//! Neural network layers: convolution, max-pooling, ReLU, inverted dropout,
//! softmax, flatten, and dense.
//!
//! Activations are NCHW. Forward passes that training needs to replay return
//! a cache alongside the output; `backward` consumes that cache and the
//! upstream gradient and produces gradients shaped exactly like the inputs
//! and parameters.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{col2im, im2col, Scalar, Shape, Tensor};

/// 2-D convolution with symmetric zero padding and floor output semantics.
///
/// `kernels` is [out_c, in_c, k, k]; `bias` is [out_c]. The input is padded by
/// `pad` on every side, then the bottom/right remainder that no window can
/// cover at this stride is cropped so the patch sweep tiles exactly. For
/// stride 1 with pad = (k-1)/2 this is "same" padding; for stride 2 it halves
/// odd and even extents alike (256 -> 128 with k = 3, pad = 1).
#[derive(Debug, Clone)]
pub struct ConvLayer<T> {
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

/// Per-sample patch matrices and the geometry needed to invert the forward pass.
#[derive(Debug)]
pub struct ConvCache<T> {
    cols: Vec<Tensor<T>>,
    in_dims: [usize; 4],
    eff_hw: (usize, usize),
    out_hw: (usize, usize),
}

#[derive(Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(kernels: Tensor<T>, bias: Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        if kernels.rank() != 4 {
            return Err(Error::shape(format!(
                "conv kernels must be [out_c, in_c, kh, kw], got {}",
                kernels.shape()
            )));
        }
        if kernels.dims()[2] != kernels.dims()[3] {
            return Err(Error::shape(format!(
                "conv kernels must be square, got {}",
                kernels.shape()
            )));
        }
        if bias.dims() != [kernels.dims()[0]] {
            return Err(Error::shape(format!(
                "conv bias shape {} does not match {} output channels",
                bias.shape(),
                kernels.dims()[0]
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv stride must be >= 1"));
        }
        Ok(ConvLayer { kernels, bias, stride, pad })
    }

    /// He-normal kernels (fan_in = in_c * k * k), zero bias, "same"-style
    /// padding pad = (k - 1) / 2.
    pub fn init(in_c: usize, out_c: usize, k: usize, stride: usize, rng: &mut Rng) -> Result<Self> {
        let kernels = Tensor::he_normal(Shape::new(vec![out_c, in_c, k, k])?, in_c * k * k, rng)?;
        let bias = Tensor::zeros(Shape::new(vec![out_c])?);
        ConvLayer::new(kernels, bias, stride, (k - 1) / 2)
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.dims()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.dims()[2]
    }

    /// Padded-and-cropped extent along one axis, and the output extent.
    fn axis_geometry(&self, input: usize) -> Result<(usize, usize)> {
        let k = self.kernel_size();
        let padded = input + 2 * self.pad;
        if k > padded {
            return Err(Error::shape(format!(
                "conv kernel {k} exceeds padded input extent {padded}"
            )));
        }
        let eff = padded - (padded - k) % self.stride;
        Ok((eff, (eff - k) / self.stride + 1))
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.axis_geometry(h)?.1, self.axis_geometry(w)?.1))
    }

    /// Copies one sample into its zero-padded, bottom/right-cropped buffer.
    fn pad_sample(&self, sample: &[T], c: usize, h: usize, w: usize, eh: usize, ew: usize) -> Tensor<T> {
        let mut padded = Tensor::zeros(Shape::new(vec![c, eh, ew]).expect("validated dims"));
        let dst = padded.data_mut();
        for ci in 0..c {
            for y in 0..h {
                let py = y + self.pad;
                if py >= eh {
                    break;
                }
                let src_row = (ci * h + y) * w;
                let dst_row = (ci * eh + py) * ew + self.pad;
                let n = w.min(ew - self.pad);
                dst[dst_row..dst_row + n].copy_from_slice(&sample[src_row..src_row + n]);
            }
        }
        padded
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<[usize; 4]> {
        if input.rank() != 4 {
            return Err(Error::shape(format!(
                "conv input must be [n, c, h, w], got {}",
                input.shape()
            )));
        }
        let d = input.dims();
        if d[1] != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                d[1]
            )));
        }
        Ok([d[0], d[1], d[2], d[3]])
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run_forward(input, false)?.0)
    }

    pub fn forward_cached(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (out, cache) = self.run_forward(input, true)?;
        Ok((out, cache.expect("cache requested")))
    }

    fn run_forward(&self, input: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Option<ConvCache<T>>)> {
        let [n, c, h, w] = self.check_input(input)?;
        let (eh, ho) = self.axis_geometry(h)?;
        let (ew, wo) = self.axis_geometry(w)?;
        let oc = self.out_channels();
        let k = self.kernel_size();
        let kmat = Tensor::from_vec(
            Shape::new(vec![oc, c * k * k])?,
            self.kernels.data().to_vec(),
        )?;

        let mut out = Tensor::zeros(Shape::new(vec![n, oc, ho, wo])?);
        let plane = ho * wo;
        let mut cols_cache = Vec::new();
        for s in 0..n {
            let sample = &input.data()[s * c * h * w..(s + 1) * c * h * w];
            let padded = self.pad_sample(sample, c, h, w, eh, ew);
            let cols = im2col(&padded, k, k, self.stride, 0)?;
            let prod = kmat.matmul(&cols)?;
            let dst = &mut out.data_mut()[s * oc * plane..(s + 1) * oc * plane];
            for f in 0..oc {
                let b = self.bias.data()[f];
                for (d, &p) in dst[f * plane..(f + 1) * plane]
                    .iter_mut()
                    .zip(&prod.data()[f * plane..(f + 1) * plane])
                {
                    *d = p + b;
                }
            }
            if keep {
                cols_cache.push(cols);
            }
        }
        let cache = keep.then(|| ConvCache {
            cols: cols_cache,
            in_dims: [n, c, h, w],
            eff_hw: (eh, ew),
            out_hw: (ho, wo),
        });
        Ok((out, cache))
    }

    pub fn backward(&self, cache: &ConvCache<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        let [n, c, h, w] = cache.in_dims;
        let (eh, ew) = cache.eff_hw;
        let (ho, wo) = cache.out_hw;
        let oc = self.out_channels();
        let k = self.kernel_size();
        if grad_out.dims() != [n, oc, ho, wo] {
            return Err(Error::shape(format!(
                "conv upstream gradient must be {n}x{oc}x{ho}x{wo}, got {}",
                grad_out.shape()
            )));
        }
        let kmat_t = Tensor::from_vec(
            Shape::new(vec![oc, c * k * k])?,
            self.kernels.data().to_vec(),
        )?
        .transposed()?;

        let plane = ho * wo;
        let mut grad_kernels = Tensor::zeros(self.kernels.shape().clone());
        let mut grad_bias = Tensor::zeros(self.bias.shape().clone());
        let mut grad_input = Tensor::zeros(Shape::new(vec![n, c, h, w])?);
        for s in 0..n {
            let g_mat = Tensor::from_vec(
                Shape::new(vec![oc, plane])?,
                grad_out.data()[s * oc * plane..(s + 1) * oc * plane].to_vec(),
            )?;
            // dK += g . cols^T, flattened to [oc, c*k*k].
            let dk = g_mat.matmul(&cache.cols[s].transposed()?)?;
            for (acc, &v) in grad_kernels.data_mut().iter_mut().zip(dk.data()) {
                *acc += v;
            }
            for f in 0..oc {
                let mut acc = T::zero();
                for &g in &g_mat.data()[f * plane..(f + 1) * plane] {
                    acc += g;
                }
                grad_bias.data_mut()[f] += acc;
            }
            // dcols = K^T . g, scattered back through the padded image.
            let dcols = kmat_t.matmul(&g_mat)?;
            let dpadded = col2im(&dcols, c, eh, ew, k, k, self.stride, 0)?;
            let dst = &mut grad_input.data_mut()[s * c * h * w..(s + 1) * c * h * w];
            for ci in 0..c {
                for y in 0..h {
                    let py = y + self.pad;
                    if py >= eh {
                        break;
                    }
                    let src_row = (ci * eh + py) * ew + self.pad;
                    let dst_row = (ci * h + y) * w;
                    let m = w.min(ew - self.pad);
                    dst[dst_row..dst_row + m]
                        .copy_from_slice(&dpadded.data()[src_row..src_row + m]);
                }
            }
        }
        Ok(ConvGrads { input: grad_input, kernels: grad_kernels, bias: grad_bias })
    }
}

/// Max pooling. Ties go to the first element in row-major window order.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool {
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug)]
pub struct PoolCache {
    winners: Vec<usize>,
    in_dims: [usize; 4],
    out_dims: [usize; 4],
}

impl MaxPool {
    pub fn new(size: usize, stride: usize) -> Result<MaxPool> {
        if size == 0 || stride == 0 {
            return Err(Error::config("pool size and stride must be >= 1"));
        }
        Ok(MaxPool { size, stride })
    }

    /// The standard 2x2, stride-2 pool.
    pub fn two_by_two() -> MaxPool {
        MaxPool { size: 2, stride: 2 }
    }

    fn axis_out(&self, input: usize, axis: &str) -> Result<usize> {
        if self.size > input {
            return Err(Error::shape(format!(
                "pool window {} exceeds input {axis} {input}",
                self.size
            )));
        }
        if (input - self.size) % self.stride != 0 {
            return Err(Error::shape(format!(
                "pool over {axis} {input} with window {}, stride {} leaves a remainder",
                self.size, self.stride
            )));
        }
        Ok((input - self.size) / self.stride + 1)
    }

    pub fn forward<T: Scalar>(&self, input: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
        if input.rank() != 4 {
            return Err(Error::shape(format!(
                "pool input must be [n, c, h, w], got {}",
                input.shape()
            )));
        }
        let [n, c, h, w] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
        let ho = self.axis_out(h, "height")?;
        let wo = self.axis_out(w, "width")?;
        let mut out = Tensor::zeros(Shape::new(vec![n, c, ho, wo])?);
        let mut winners = vec![0usize; n * c * ho * wo];
        let src = input.data();
        let dst = out.data_mut();
        let mut o = 0;
        for s in 0..n {
            for ci in 0..c {
                let base = (s * c + ci) * h * w;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let y0 = oy * self.stride;
                        let x0 = ox * self.stride;
                        let mut win = base + y0 * w + x0;
                        let mut best = src[win];
                        for ky in 0..self.size {
                            for kx in 0..self.size {
                                let idx = base + (y0 + ky) * w + (x0 + kx);
                                if src[idx] > best {
                                    best = src[idx];
                                    win = idx;
                                }
                            }
                        }
                        dst[o] = best;
                        winners[o] = win;
                        o += 1;
                    }
                }
            }
        }
        let cache = PoolCache {
            winners,
            in_dims: [n, c, h, w],
            out_dims: [n, c, ho, wo],
        };
        Ok((out, cache))
    }

    /// Routes each upstream gradient to its window's winner.
    pub fn backward<T: Scalar>(&self, cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.dims() != cache.out_dims {
            return Err(Error::shape(format!(
                "pool upstream gradient shape {} does not match forward output {:?}",
                grad_out.shape(),
                cache.out_dims
            )));
        }
        let mut grad = Tensor::zeros(Shape::new(cache.in_dims.to_vec())?);
        let g = grad.data_mut();
        for (&win, &up) in cache.winners.iter().zip(grad_out.data()) {
            g[win] += up;
        }
        Ok(grad)
    }
}

/// Elementwise max(x, 0).
pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// ReLU plus the pass-through mask. The derivative at 0 is taken as 0.
pub fn relu_cached<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, Vec<bool>) {
    let mask: Vec<bool> = input.data().iter().map(|&x| x > T::zero()).collect();
    (relu(input), mask)
}

pub fn relu_backward<T: Scalar>(mask: &[bool], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if mask.len() != grad_out.elem_count() {
        return Err(Error::shape(format!(
            "relu mask covers {} elements, upstream gradient has {}",
            mask.len(),
            grad_out.elem_count()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(mask)
        .map(|(&g, &keep)| if keep { g } else { T::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape().clone(), data)
}

/// Inverted dropout: kept activations are scaled by 1 / (1 - rate) at train
/// time so evaluation is a plain identity.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    rate: f64,
}

#[derive(Debug)]
pub struct DropoutMask {
    keep: Vec<bool>,
    scale: f64,
}

impl DropoutMask {
    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    /// Inverted-dropout factor 1/(1-rate) applied to surviving units.
    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Dropout> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(Dropout { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward_train<T: Scalar>(
        &self,
        input: &Tensor<T>,
        rng: &mut Rng,
    ) -> (Tensor<T>, DropoutMask) {
        let scale = 1.0 / (1.0 - self.rate);
        let s = T::from_f64(scale);
        let keep: Vec<bool> = input.data().iter().map(|_| !rng.bernoulli(self.rate)).collect();
        let data: Vec<T> = input
            .data()
            .iter()
            .zip(&keep)
            .map(|(&x, &k)| if k { x * s } else { T::zero() })
            .collect();
        let out = Tensor::from_vec(input.shape().clone(), data).expect("same shape");
        (out, DropoutMask { keep, scale })
    }

    /// Gradients flow through exactly the kept positions, with the same scale.
    pub fn backward<T: Scalar>(mask: &DropoutMask, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if mask.keep.len() != grad_out.elem_count() {
            return Err(Error::shape(format!(
                "dropout mask covers {} elements, upstream gradient has {}",
                mask.keep.len(),
                grad_out.elem_count()
            )));
        }
        let s = T::from_f64(mask.scale);
        let data = grad_out
            .data()
            .iter()
            .zip(&mask.keep)
            .map(|(&g, &k)| if k { g * s } else { T::zero() })
            .collect();
        Tensor::from_vec(grad_out.shape().clone(), data)
    }
}

/// Row-wise softmax of [N, K] logits, stabilized by max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(Error::shape(format!(
            "softmax expects [n, k] logits, got {}",
            logits.shape()
        )));
    }
    let (n, k) = (logits.dims()[0], logits.dims()[1]);
    let mut out = Tensor::zeros(logits.shape().clone());
    for i in 0..n {
        let row = &logits.data()[i * k..(i + 1) * k];
        let mut m = row[0];
        for &x in row {
            if x > m {
                m = x;
            }
        }
        let dst = &mut out.data_mut()[i * k..(i + 1) * k];
        let mut sum = T::zero();
        for (d, &x) in dst.iter_mut().zip(row) {
            *d = (x - m).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    Ok(out)
}

/// Collapses [N, C, H, W] to [N, C*H*W]; row-major layout makes this a pure
/// reshape. Returns the spatial dims for the matching unflatten.
pub fn flatten<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, [usize; 4])> {
    if input.rank() != 4 {
        return Err(Error::shape(format!(
            "flatten expects [n, c, h, w], got {}",
            input.shape()
        )));
    }
    let d = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
    let flat = input
        .clone()
        .reshape(Shape::new(vec![d[0], d[1] * d[2] * d[3]])?)?;
    Ok((flat, d))
}

pub fn unflatten<T: Scalar>(grad: &Tensor<T>, dims: [usize; 4]) -> Result<Tensor<T>> {
    grad.clone().reshape(Shape::new(dims.to_vec())?)
}

/// Fully connected layer computing y = x W + b, with W laid out [in, out].
#[derive(Debug, Clone)]
pub struct DenseLayer<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::shape(format!(
                "dense weights must be [in, out], got {}",
                weights.shape()
            )));
        }
        if bias.dims() != [weights.dims()[1]] {
            return Err(Error::shape(format!(
                "dense bias shape {} does not match {} outputs",
                bias.shape(),
                weights.dims()[1]
            )));
        }
        Ok(DenseLayer { weights, bias })
    }

    /// He-normal weights (fan_in = in_dim), zero bias.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        let weights = Tensor::he_normal(Shape::new(vec![in_dim, out_dim])?, in_dim, rng)?;
        let bias = Tensor::zeros(Shape::new(vec![out_dim])?);
        DenseLayer::new(weights, bias)
    }

    pub fn in_dim(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.rank() != 2 || input.dims()[1] != self.in_dim() {
            return Err(Error::shape(format!(
                "dense expects [n, {}] input, got {}",
                self.in_dim(),
                input.shape()
            )));
        }
        let mut out = input.matmul(&self.weights)?;
        let k = self.out_dim();
        for row in out.data_mut().chunks_mut(k) {
            for (o, &b) in row.iter_mut().zip(self.bias.data()) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// `input` is the forward input for this layer (the cache).
    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<DenseGrads<T>> {
        let n = input.dims()[0];
        if grad_out.dims() != [n, self.out_dim()] {
            return Err(Error::shape(format!(
                "dense upstream gradient must be {n}x{}, got {}",
                self.out_dim(),
                grad_out.shape()
            )));
        }
        let grad_weights = input.transposed()?.matmul(grad_out)?;
        let mut grad_bias = Tensor::zeros(self.bias.shape().clone());
        let k = self.out_dim();
        for row in grad_out.data().chunks(k) {
            for (b, &g) in grad_bias.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let grad_input = grad_out.matmul(&self.weights.transposed()?)?;
        Ok(DenseGrads { input: grad_input, weights: grad_weights, bias: grad_bias })
    }
}
