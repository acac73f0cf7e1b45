//! Dense row-major tensors over `f32`/`f64`.
//!
//! Layout is row-major (last dimension contiguous); network activations use
//! NCHW order. Training runs at `f32`; gradient checks instantiate the same
//! code at `f64`. All reductions accumulate at the tensor's own dtype so a
//! run's numbers are a pure function of inputs and seed.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Element type of a tensor, as recorded in serialized metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

/// Floating-point element. Implemented for `f32` and `f64` only.
pub trait Scalar:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(x: f64) -> f32 {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(x: f64) -> f64 {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Validated dimension list: non-empty, every entry positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Shape> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::shape("shape needs at least one dimension"));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::shape(format!(
                "dimension {pos} of shape {dims:?} is zero; every dimension must be positive"
            )));
        }
        Ok(Shape { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn elem_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len(), "index rank mismatch");
        let mut off = 0;
        for (i, (&ix, &d)) in idx.iter().zip(&self.dims).enumerate() {
            debug_assert!(ix < d, "index {ix} out of bounds for dimension {i} (size {d})");
            off = off * d + ix;
        }
        off
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Tensor<T> {
        let n = shape.elem_count();
        Tensor { shape, data: vec![T::zero(); n] }
    }

    pub fn filled(shape: Shape, value: T) -> Tensor<T> {
        let n = shape.elem_count();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Tensor<T>> {
        if data.len() != shape.elem_count() {
            return Err(Error::shape(format!(
                "shape {shape} wants {} elements, got {}",
                shape.elem_count(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// He-normal initialization: zero-mean normal with std sqrt(2 / fan_in).
    pub fn he_normal(shape: Shape, fan_in: usize, rng: &mut Rng) -> Result<Tensor<T>> {
        if fan_in == 0 {
            return Err(Error::config("he_normal requires fan_in >= 1"));
        }
        let std = (2.0 / fan_in as f64).sqrt();
        let n = shape.elem_count();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(T::from_f64(std * rng.normal()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn elem_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.shape.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: T) {
        let off = self.shape.offset(idx);
        self.data[off] = value;
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: Shape) -> Result<Tensor<T>> {
        if shape.elem_count() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {} ({} elements) to {} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                shape.elem_count()
            )));
        }
        Ok(Tensor { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Matrix product of two rank-2 tensors, accumulated at `T`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (a, b) = (self, other);
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::shape(format!(
                "matmul needs rank-2 operands, got {} and {}",
                a.shape, b.shape
            )));
        }
        let (n, m) = (a.dims()[0], a.dims()[1]);
        let (m2, p) = (b.dims()[0], b.dims()[1]);
        if m != m2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions disagree: {} vs {}",
                a.shape, b.shape
            )));
        }
        let mut out = vec![T::zero(); n * p];
        // i-k-j order keeps the b row and the out row contiguous.
        for i in 0..n {
            let a_row = &a.data[i * m..(i + 1) * m];
            let out_row = &mut out[i * p..(i + 1) * p];
            for (k, &aik) in a_row.iter().enumerate() {
                if aik == T::zero() {
                    continue;
                }
                let b_row = &b.data[k * p..(k + 1) * p];
                for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                    *o += aik * bkj;
                }
            }
        }
        Ok(Tensor { shape: Shape::new(vec![n, p])?, data: out })
    }

    /// Transpose of a rank-2 tensor.
    pub fn transposed(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::shape(format!(
                "transpose needs a rank-2 tensor, got {}",
                self.shape
            )));
        }
        let (n, m) = (self.dims()[0], self.dims()[1]);
        let mut data = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = self.data[i * m + j];
            }
        }
        Ok(Tensor { shape: Shape::new(vec![m, n])?, data })
    }
}

/// Smallest index attaining the maximum value.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    assert!(!xs.is_empty(), "argmax of an empty slice");
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Output height/width of a convolution window sweep, requiring exact division.
fn conv_extent(input: usize, kernel: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let padded = input + 2 * pad;
    if kernel > padded {
        return Err(Error::shape(format!(
            "kernel {axis} {kernel} exceeds padded input {axis} {padded}"
        )));
    }
    let span = padded - kernel;
    if span % stride != 0 {
        return Err(Error::shape(format!(
            "convolution over {axis} {input} (pad {pad}) with kernel {kernel}, stride {stride} \
             leaves a remainder; output extent must divide exactly"
        )));
    }
    Ok(span / stride + 1)
}

/// Unfolds a [C, H, W] image into a [C*kh*kw, Ho*Wo] patch matrix.
///
/// Padding is virtual zero-padding of `pad` pixels on every side. The sweep
/// must tile exactly: `(H + 2*pad - kh) % stride == 0` (same for width),
/// otherwise this is a shape error.
pub fn im2col<T: Scalar>(
    input: &Tensor<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    if input.rank() != 3 {
        return Err(Error::shape(format!(
            "im2col needs a [C, H, W] tensor, got {}",
            input.shape()
        )));
    }
    if kh == 0 || kw == 0 || stride == 0 {
        return Err(Error::config("im2col kernel and stride must be >= 1"));
    }
    let (c, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let ho = conv_extent(h, kh, stride, pad, "height")?;
    let wo = conv_extent(w, kw, stride, pad, "width")?;
    let rows = c * kh * kw;
    let cols = ho * wo;
    let mut out = vec![T::zero(); rows * cols];
    let src = input.data();
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let base = row * cols;
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[base + oy * wo + ox] = src[src_row + ix as usize];
                    }
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(vec![rows, cols])?, out)
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix back into a [C, H, W]
/// image. Positions that fell in the virtual padding are dropped.
pub fn col2im<T: Scalar>(
    cols: &Tensor<T>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let ho = conv_extent(h, kh, stride, pad, "height")?;
    let wo = conv_extent(w, kw, stride, pad, "width")?;
    let rows = c * kh * kw;
    let ncols = ho * wo;
    if cols.dims() != [rows, ncols] {
        return Err(Error::shape(format!(
            "col2im expected a {rows}x{ncols} patch matrix for a {c}x{h}x{w} image, got {}",
            cols.shape()
        )));
    }
    let mut out = vec![T::zero(); c * h * w];
    let src = cols.data();
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let base = row * ncols;
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[dst_row + ix as usize] += src[base + oy * wo + ox];
                    }
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(vec![c, h, w])?, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(dims: &[usize]) -> Shape {
        Shape::new(dims.to_vec()).unwrap()
    }

    fn tensor_f64(dims: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape(dims), data.to_vec()).unwrap()
    }

    /// Independent triple-loop matrix product used as the matmul oracle.
    fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (n, m, p) = (a.dims()[0], a.dims()[1], b.dims()[1]);
        let mut out = Tensor::zeros(shape(&[n, p]));
        for i in 0..n {
            for j in 0..p {
                let mut acc = 0.0;
                for k in 0..m {
                    acc += a.get(&[i, k]) * b.get(&[k, j]);
                }
                out.set(&[i, j], acc);
            }
        }
        out
    }

    /// Independent direct convolution (valid region of a zero-padded image).
    fn conv_oracle(
        input: &Tensor<f64>,
        kernels: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (c, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
        let (oc, kh, kw) = (kernels.dims()[0], kernels.dims()[2], kernels.dims()[3]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(shape(&[oc, ho, wo]));
        for f in 0..oc {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oy * stride + ki) as isize - pad as isize;
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input.get(&[ci, iy as usize, ix as usize])
                                    * kernels.get(&[f, ci, ki as usize, kj as usize]);
                            }
                        }
                    }
                    out.set(&[f, oy, ox], acc);
                }
            }
        }
        out
    }

    fn fill_random(t: &mut Tensor<f64>, rng: &mut Rng) {
        for x in t.data_mut() {
            *x = rng.uniform(-1.0, 1.0);
        }
    }

    #[test]
    fn shape_rejects_zero_dimensions_and_empty_lists() {
        assert!(Shape::new(vec![3, 0, 4]).is_err());
        assert!(Shape::new(Vec::new()).is_err());
        assert_eq!(shape(&[3, 256, 256]).elem_count(), 3 * 256 * 256);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor::<f64>::from_vec(shape(&[2, 3]), vec![1.0; 5]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('6') && msg.contains('5'), "unhelpful message: {msg}");
    }

    #[test]
    fn matmul_identity_leaves_matrix_unchanged() {
        let mut eye = Tensor::zeros(shape(&[3, 3]));
        for i in 0..3 {
            eye.set(&[i, i], 1.0);
        }
        let a = tensor_f64(&[3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(a.matmul(&eye).unwrap(), a);
        assert_eq!(eye.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_case_1x2_2x1() {
        let a = tensor_f64(&[1, 2], &[1.0, 2.0]);
        let b = tensor_f64(&[2, 1], &[3.0, 4.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.dims(), &[1, 1]);
        assert_eq!(c.data()[0], 11.0);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(1234);
        let mut a = Tensor::zeros(shape(&[7, 5]));
        let mut b = Tensor::zeros(shape(&[5, 3]));
        fill_random(&mut a, &mut rng);
        fill_random(&mut b, &mut rng);
        let fast = a.matmul(&b).unwrap();
        let slow = matmul_oracle(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            let rel = (x - y).abs() / y.abs().max(1e-8);
            assert!(rel <= 1e-12, "matmul diverges from oracle: {x} vs {y}");
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::<f64>::zeros(shape(&[2, 3]));
        let b = Tensor::<f64>::zeros(shape(&[4, 2]));
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "unhelpful message: {msg}");
    }

    #[test]
    fn transpose_roundtrips() {
        let mut rng = Rng::new(7);
        let mut a = Tensor::zeros(shape(&[4, 6]));
        fill_random(&mut a, &mut rng);
        assert_eq!(a.transposed().unwrap().transposed().unwrap(), a);
        assert_eq!(a.transposed().unwrap().get(&[5, 2]), a.get(&[2, 5]));
    }

    #[test]
    fn im2col_3x3_kernel_over_3x3_image_is_the_flattened_image() {
        let input = tensor_f64(&[1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let cols = im2col(&input, 3, 3, 1, 0).unwrap();
        assert_eq!(cols.dims(), &[9, 1]);
        assert_eq!(cols.data(), input.data());
    }

    #[test]
    fn im2col_2x2_stride_2_produces_the_four_disjoint_blocks() {
        let vals: Vec<f64> = (0..16).map(f64::from).collect();
        let input = tensor_f64(&[1, 4, 4], &vals);
        let cols = im2col(&input, 2, 2, 2, 0).unwrap();
        assert_eq!(cols.dims(), &[4, 4]);
        // Column j holds the patch at block j; row order is (ki, kj) row-major.
        let expected = [
            [0.0, 2.0, 8.0, 10.0],  // top-left element of each block
            [1.0, 3.0, 9.0, 11.0],  // top-right
            [4.0, 6.0, 12.0, 14.0], // bottom-left
            [5.0, 7.0, 13.0, 15.0], // bottom-right
        ];
        for (r, row) in expected.iter().enumerate() {
            for (c, want) in row.iter().enumerate() {
                assert_eq!(cols.get(&[r, c]), *want, "patch matrix entry ({r}, {c})");
            }
        }
    }

    #[test]
    fn im2col_rejects_non_integer_output_extent() {
        let input = Tensor::<f64>::zeros(shape(&[1, 5, 5]));
        let err = im2col(&input, 2, 2, 2, 0).unwrap_err();
        assert!(err.to_string().contains("remainder"), "got: {err}");
    }

    #[test]
    fn convolution_via_im2col_matches_nested_loop_oracle() {
        let mut rng = Rng::new(99);
        for &(c, h, w, oc, k, stride, pad) in &[
            (3usize, 8usize, 8usize, 4usize, 3usize, 1usize, 1usize),
            (2, 9, 7, 3, 3, 2, 1),
            (1, 6, 6, 2, 2, 2, 0),
            (4, 5, 5, 5, 5, 1, 2),
        ] {
            let mut input = Tensor::zeros(shape(&[c, h, w]));
            let mut kernels = Tensor::zeros(shape(&[oc, c, k, k]));
            fill_random(&mut input, &mut rng);
            fill_random(&mut kernels, &mut rng);

            let cols = im2col(&input, k, k, stride, pad).unwrap();
            let kmat = Tensor::from_vec(
                shape(&[oc, c * k * k]),
                kernels.data().to_vec(),
            )
            .unwrap();
            let fast = kmat.matmul(&cols).unwrap();
            let slow = conv_oracle(&input, &kernels, stride, pad);
            assert_eq!(fast.elem_count(), slow.elem_count());
            for (x, y) in fast.data().iter().zip(slow.data()) {
                let rel = (x - y).abs() / y.abs().max(1e-8);
                assert!(
                    rel <= 1e-12,
                    "im2col conv diverges from direct conv (c={c} h={h} stride={stride}): {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // <im2col(x), y> must equal <x, col2im(y)> for the pair to be adjoint.
        let mut rng = Rng::new(4242);
        for &(c, h, w, k, stride, pad) in &[
            (2usize, 6usize, 6usize, 3usize, 1usize, 1usize),
            (3, 9, 9, 3, 2, 1),
            (1, 4, 4, 2, 2, 0),
        ] {
            let mut x = Tensor::zeros(shape(&[c, h, w]));
            fill_random(&mut x, &mut rng);
            let cols = im2col(&x, k, k, stride, pad).unwrap();
            let mut y = Tensor::zeros(cols.shape().clone());
            fill_random(&mut y, &mut rng);

            let lhs: f64 = cols.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let back = col2im(&y, c, h, w, k, k, stride, pad).unwrap();
            let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
            let rel = (lhs - rhs).abs() / rhs.abs().max(1e-8);
            assert!(rel <= 1e-10, "adjoint identity broken: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn argmax_returns_smallest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
        assert_eq!(argmax(&[-2.0, -1.0, -3.0]), 1);
        // Exhaustive over one-hot vectors.
        for i in 0..10 {
            let mut v = vec![0.0f64; 10];
            v[i] = 1.0;
            assert_eq!(argmax(&v), i);
        }
    }

    #[test]
    fn he_normal_std_tracks_fan_in() {
        // fan_in = 2 gives std sqrt(2/2) = 1.
        let mut rng = Rng::new(11);
        let t: Tensor<f64> = Tensor::he_normal(shape(&[1_000_000]), 2, &mut rng).unwrap();
        let n = t.elem_count() as f64;
        let mean: f64 = t.data().iter().sum::<f64>() / n;
        let var: f64 = t.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((std - 1.0).abs() < 0.01, "std {std} should be within 1% of 1.0");
        assert!(mean.abs() < 0.01, "mean {mean} should be near zero");
    }

    #[test]
    fn he_normal_is_seed_deterministic() {
        let a: Tensor<f32> = Tensor::he_normal(shape(&[64, 3, 3, 3]), 27, &mut Rng::new(42)).unwrap();
        let b: Tensor<f32> = Tensor::he_normal(shape(&[64, 3, 3, 3]), 27, &mut Rng::new(42)).unwrap();
        assert_eq!(a.data(), b.data(), "same seed must reproduce bit-identical init");
    }

    #[test]
    fn reshape_preserves_data_and_rejects_bad_counts() {
        let t = tensor_f64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = t.clone().reshape(shape(&[3, 2])).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(shape(&[4, 2])).is_err());
    }
}
