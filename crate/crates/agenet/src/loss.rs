//! Categorical cross-entropy over softmax outputs.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Probabilities below this are clamped before the log, keeping perfect
/// one-hot predictions finite.
pub const PROB_EPSILON: f64 = 1e-12;

/// Row-wise tolerance when validating that probabilities sum to 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// [N, K] one-hot labels: entries exactly 0 or 1, exactly one 1 per row.
#[derive(Debug, Clone)]
pub struct OneHotBatch<T> {
    tensor: Tensor<T>,
}

impl<T: Scalar> OneHotBatch<T> {
    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::data("one-hot batch needs at least one label"));
        }
        let mut tensor = Tensor::zeros(Shape::new(vec![labels.len(), classes])?);
        for (i, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::data(format!(
                    "label {label} at row {i} is out of range for {classes} classes"
                )));
            }
            tensor.set(&[i, label], T::one());
        }
        Ok(OneHotBatch { tensor })
    }

    pub fn from_tensor(tensor: Tensor<T>) -> Result<Self> {
        if tensor.rank() != 2 {
            return Err(Error::shape(format!(
                "one-hot batch must be [n, k], got {}",
                tensor.shape()
            )));
        }
        let k = tensor.dims()[1];
        for (i, row) in tensor.data().chunks(k).enumerate() {
            let mut ones = 0;
            for &x in row {
                if x == T::one() {
                    ones += 1;
                } else if x != T::zero() {
                    return Err(Error::data(format!(
                        "row {i} is not one-hot: entry {x} is neither 0 nor 1"
                    )));
                }
            }
            if ones != 1 {
                return Err(Error::data(format!(
                    "row {i} is not one-hot: {ones} entries equal 1"
                )));
            }
        }
        Ok(OneHotBatch { tensor })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn len(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.tensor.dims()[1]
    }

    /// Class index of row `i`.
    pub fn label(&self, i: usize) -> usize {
        let k = self.classes();
        let row = &self.tensor.data()[i * k..(i + 1) * k];
        row.iter().position(|&x| x == T::one()).expect("validated one-hot row")
    }
}

/// [N, K] class probabilities: entries in [0, 1], rows summing to 1 within
/// [`ROW_SUM_TOLERANCE`].
#[derive(Debug, Clone)]
pub struct ProbBatch<T> {
    tensor: Tensor<T>,
}

impl<T: Scalar> ProbBatch<T> {
    pub fn from_tensor(tensor: Tensor<T>) -> Result<Self> {
        if tensor.rank() != 2 {
            return Err(Error::shape(format!(
                "probability batch must be [n, k], got {}",
                tensor.shape()
            )));
        }
        let k = tensor.dims()[1];
        for (i, row) in tensor.data().chunks(k).enumerate() {
            let mut sum = 0.0;
            for &p in row {
                let p = p.to_f64();
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::data(format!(
                        "row {i} holds {p}, which is not a probability"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::data(format!(
                    "probabilities in row {i} sum to {sum}, not 1"
                )));
            }
        }
        Ok(ProbBatch { tensor })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn len(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.tensor.dims()[1]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let k = self.classes();
        &self.tensor.data()[i * k..(i + 1) * k]
    }
}

/// Loss values plus the gradient of the mean loss with respect to the logits
/// that produced `probs` (softmax and cross-entropy fused: (p - y) / n).
#[derive(Debug)]
pub struct CrossEntropy<T> {
    pub sum: T,
    pub mean: T,
    pub grad_logits: Tensor<T>,
}

pub fn cross_entropy<T: Scalar>(
    probs: &ProbBatch<T>,
    labels: &OneHotBatch<T>,
) -> Result<CrossEntropy<T>> {
    if probs.tensor().dims() != labels.tensor().dims() {
        return Err(Error::shape(format!(
            "probabilities {} and labels {} disagree",
            probs.tensor().shape(),
            labels.tensor().shape()
        )));
    }
    let n = probs.len();
    let eps = T::from_f64(PROB_EPSILON);
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut sum = T::zero();
    let mut grad = Tensor::zeros(probs.tensor().shape().clone());
    for ((&p, &y), g) in probs
        .tensor()
        .data()
        .iter()
        .zip(labels.tensor().data())
        .zip(grad.data_mut())
    {
        if y != T::zero() {
            let clamped = if p < eps { eps } else { p };
            sum -= y * clamped.ln();
        }
        *g = (p - y) * inv_n;
    }
    Ok(CrossEntropy { sum, mean: sum * inv_n, grad_logits: grad })
}

/// Probability each row assigned to its true class: yhat_i = sum_j y_ij p_ij.
pub fn predict_prob<T: Scalar>(
    probs: &ProbBatch<T>,
    labels: &OneHotBatch<T>,
) -> Result<Tensor<T>> {
    if probs.tensor().dims() != labels.tensor().dims() {
        return Err(Error::shape(format!(
            "probabilities {} and labels {} disagree",
            probs.tensor().shape(),
            labels.tensor().shape()
        )));
    }
    let k = probs.classes();
    let data: Vec<T> = probs
        .tensor()
        .data()
        .chunks(k)
        .zip(labels.tensor().data().chunks(k))
        .map(|(p_row, y_row)| {
            let mut acc = T::zero();
            for (&p, &y) in p_row.iter().zip(y_row) {
                acc += p * y;
            }
            acc
        })
        .collect();
    Tensor::from_vec(Shape::new(vec![probs.len()])?, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[&[f64]]) -> ProbBatch<f64> {
        let k = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ProbBatch::from_tensor(
            Tensor::from_vec(Shape::new(vec![rows.len(), k]).unwrap(), flat).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_prediction_loss_is_within_clamp_residual() {
        let p = probs(&[&[0.0, 1.0, 0.0]]);
        let y = OneHotBatch::from_labels(&[1], 3).unwrap();
        let ce = cross_entropy(&p, &y).unwrap();
        assert!(ce.sum.abs() <= 1e-11, "perfect prediction gave loss {}", ce.sum);
        assert!(ce.mean.abs() <= 1e-11);
    }

    #[test]
    fn uniform_ten_class_prediction_costs_ln_ten() {
        let row = [0.1f64; 10];
        let p = probs(&[&row, &row, &row]);
        let y = OneHotBatch::from_labels(&[0, 4, 9], 10).unwrap();
        let ce = cross_entropy(&p, &y).unwrap();
        // The documented anchor 2.302585093 agrees with LN_10 within 7e-12.
        let ln10 = core::f64::consts::LN_10;
        assert!(
            (ce.mean - ln10).abs() <= 1e-9,
            "uniform 10-class mean loss {} should be ln 10",
            ce.mean
        );
        assert!((ce.sum - 3.0 * ln10).abs() <= 3e-9);
    }

    #[test]
    fn gradient_is_probs_minus_labels_over_n() {
        let p = probs(&[&[0.7, 0.2, 0.1], &[0.1, 0.1, 0.8]]);
        let y = OneHotBatch::from_labels(&[0, 2], 3).unwrap();
        let ce = cross_entropy(&p, &y).unwrap();
        let expected = [
            (0.7 - 1.0) / 2.0,
            0.2 / 2.0,
            0.1 / 2.0,
            0.1 / 2.0,
            0.1 / 2.0,
            (0.8 - 1.0) / 2.0,
        ];
        for (g, e) in ce.grad_logits.data().iter().zip(&expected) {
            assert!((g - e).abs() <= 1e-15, "gradient {g} expected {e}");
        }
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let p = probs(&[&[0.25, 0.25, 0.3, 0.2], &[0.9, 0.05, 0.03, 0.02]]);
        let y = OneHotBatch::from_labels(&[2, 0], 4).unwrap();
        let ce = cross_entropy(&p, &y).unwrap();
        for row in ce.grad_logits.data().chunks(4) {
            let s: f64 = row.iter().sum();
            assert!(s.abs() <= 1e-10, "gradient row sums to {s}, not 0");
        }
    }

    #[test]
    fn loss_is_never_negative() {
        let p = probs(&[&[0.5, 0.5], &[0.999, 0.001], &[0.001, 0.999]]);
        let y = OneHotBatch::from_labels(&[0, 0, 0], 2).unwrap();
        let ce = cross_entropy(&p, &y).unwrap();
        assert!(ce.sum >= 0.0);
        assert!(ce.mean >= 0.0);
    }

    #[test]
    fn non_one_hot_rows_are_rejected() {
        let half = Tensor::from_vec(Shape::new(vec![1, 2]).unwrap(), vec![0.5f64, 0.5]).unwrap();
        assert!(OneHotBatch::from_tensor(half).is_err());
        let two_ones = Tensor::from_vec(Shape::new(vec![1, 3]).unwrap(), vec![1.0f64, 1.0, 0.0]).unwrap();
        assert!(OneHotBatch::from_tensor(two_ones).is_err());
        let all_zero = Tensor::from_vec(Shape::new(vec![1, 3]).unwrap(), vec![0.0f64; 3]).unwrap();
        assert!(OneHotBatch::from_tensor(all_zero).is_err());
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        assert!(OneHotBatch::<f64>::from_labels(&[3], 3).is_err());
    }

    #[test]
    fn prob_batch_rejects_bad_rows() {
        let bad_sum = Tensor::from_vec(Shape::new(vec![1, 2]).unwrap(), vec![0.6f64, 0.6]).unwrap();
        assert!(ProbBatch::from_tensor(bad_sum).is_err());
        let negative = Tensor::from_vec(Shape::new(vec![1, 2]).unwrap(), vec![-0.2f64, 1.2]).unwrap();
        assert!(ProbBatch::from_tensor(negative).is_err());
    }

    #[test]
    fn predict_prob_reads_the_true_class_probability() {
        let p = probs(&[&[0.7, 0.2, 0.1], &[0.1, 0.1, 0.8], &[0.3, 0.4, 0.3]]);
        let y = OneHotBatch::from_labels(&[0, 2, 1], 3).unwrap();
        let yhat = predict_prob(&p, &y).unwrap();
        assert_eq!(yhat.dims(), &[3]);
        assert_eq!(yhat.data(), &[0.7, 0.8, 0.4]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = probs(&[&[0.5, 0.5]]);
        let y = OneHotBatch::from_labels(&[0], 3).unwrap();
        assert!(cross_entropy(&p, &y).is_err());
        assert!(predict_prob(&p, &y).is_err());
    }

    #[test]
    fn one_hot_label_lookup_roundtrips() {
        let y = OneHotBatch::<f32>::from_labels(&[3, 0, 7], 10).unwrap();
        assert_eq!(y.label(0), 3);
        assert_eq!(y.label(1), 0);
        assert_eq!(y.label(2), 7);
    }
}
