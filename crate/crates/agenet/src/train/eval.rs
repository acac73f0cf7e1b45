//! Evaluation: categorical accuracy, the confusion matrix, softmax-weighted
//! expected age, and exact/one-off scoring of ages against a foreign bin
//! scheme (the hierarchical mapping used for gapped evaluation bins).

use crate::data::bins::BinScheme;
use crate::error::{Error, Result};
use crate::loss::ProbBatch;
use crate::tensor::{argmax, Scalar};

/// Fraction of rows whose argmax matches the label.
pub fn accuracy<T: Scalar>(probs: &ProbBatch<T>, labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows cannot be scored against {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::data("cannot score an empty batch".to_string()));
    }
    let classes = probs.classes();
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::data(format!(
                "label {label} out of range for {classes} classes at row {i}"
            )));
        }
        if argmax(probs.row(i)) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// k x k count grid: rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<ConfusionMatrix> {
        if classes == 0 {
            return Err(Error::config("confusion matrix needs at least one class".to_string()));
        }
        Ok(ConfusionMatrix { classes, counts: vec![0; classes * classes] })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::data(format!(
                "confusion entry ({truth}, {predicted}) out of range for {} classes",
                self.classes
            )));
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn count(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Diagonal mass over total: exactly the categorical accuracy.
    pub fn accuracy(&self) -> f64 {
        let trace: usize = (0..self.classes).map(|i| self.count(i, i)).sum();
        match self.total() {
            0 => 0.0,
            n => trace as f64 / n as f64,
        }
    }

    /// Fraction of samples predicted into the true class or a class whose
    /// index is adjacent to it.
    pub fn one_off_accuracy(&self) -> f64 {
        let mut near = 0usize;
        for t in 0..self.classes {
            for p in 0..self.classes {
                if t.abs_diff(p) <= 1 {
                    near += self.count(t, p);
                }
            }
        }
        match self.total() {
            0 => 0.0,
            n => near as f64 / n as f64,
        }
    }

    /// Count of samples whose true class is `truth`.
    pub fn truth_count(&self, truth: usize) -> usize {
        (0..self.classes).map(|p| self.count(truth, p)).sum()
    }

    /// CSV: header row of class names, then one count row per true class.
    pub fn to_csv(&self, class_names: &[String]) -> Result<String> {
        if class_names.len() != self.classes {
            return Err(Error::shape(format!(
                "{} class names for a {}-class confusion matrix",
                class_names.len(),
                self.classes
            )));
        }
        let mut out = class_names.join(",");
        out.push('\n');
        for t in 0..self.classes {
            let row: Vec<String> =
                (0..self.classes).map(|p| self.count(t, p).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        Ok(out)
    }
}

/// Computes accuracy together with the confusion matrix in one pass.
pub fn evaluate<T: Scalar>(
    probs: &ProbBatch<T>,
    labels: &[usize],
) -> Result<(f64, ConfusionMatrix)> {
    let acc = accuracy(probs, labels)?;
    let mut matrix = ConfusionMatrix::new(probs.classes())?;
    for (i, &label) in labels.iter().enumerate() {
        matrix.record(label, argmax(probs.row(i)))?;
    }
    Ok((acc, matrix))
}

/// Representative age per training bin: the midpoint (lo+hi)/2 for closed
/// bins, a configurable age for the open-ended last bin.
#[derive(Debug, Clone, PartialEq)]
pub struct MidpointTable {
    midpoints: Vec<f64>,
}

impl MidpointTable {
    /// Default representative age for an open-ended (60+) style bin.
    pub const DEFAULT_OPEN_BIN_AGE: f64 = 70.0;

    pub fn new(scheme: &BinScheme, open_bin_age: f64) -> Result<MidpointTable> {
        if !open_bin_age.is_finite() {
            return Err(Error::config(format!(
                "open-bin representative age must be finite, got {open_bin_age}"
            )));
        }
        let midpoints: Vec<f64> = scheme
            .bins()
            .iter()
            .map(|bin| match bin.hi {
                Some(hi) => (bin.lo as f64 + hi as f64) / 2.0,
                None => open_bin_age,
            })
            .collect();
        for pair in midpoints.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(Error::config(format!(
                    "midpoints must be strictly increasing, got {} then {} \
                     (open-bin age too small?)",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(MidpointTable { midpoints })
    }

    pub fn training_default() -> MidpointTable {
        MidpointTable::new(&BinScheme::training(), Self::DEFAULT_OPEN_BIN_AGE)
            .expect("reference table is valid")
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    pub fn len(&self) -> usize {
        self.midpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.midpoints.is_empty()
    }
}

/// Probability-weighted age per row: age_i = sum_j p_ij * midpoint_j.
pub fn expected_ages<T: Scalar>(probs: &ProbBatch<T>, table: &MidpointTable) -> Result<Vec<f64>> {
    if probs.classes() != table.len() {
        return Err(Error::shape(format!(
            "{} probability columns cannot be weighted by {} midpoints",
            probs.classes(),
            table.len()
        )));
    }
    Ok((0..probs.len())
        .map(|i| {
            probs
                .row(i)
                .iter()
                .zip(table.midpoints())
                .map(|(&p, &m)| p.to_f64() * m)
                .sum()
        })
        .collect())
}

/// Exact and one-off hit fractions of predicted ages against a bin scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossBinScores {
    pub exact: f64,
    pub one_off: f64,
    pub count: usize,
}

/// True when `age` falls inside the bin, boundaries included. The open bin
/// accepts every age at or above its lower bound.
fn age_in_bin(age: f64, bin: &crate::data::bins::AgeBin) -> bool {
    match bin.hi {
        Some(hi) => age >= bin.lo as f64 && age <= hi as f64,
        None => age >= bin.lo as f64,
    }
}

/// Scores continuous age predictions against labels expressed in `target`'s
/// bin indices. Exact: the age lies inside the labelled bin. One-off: inside
/// the labelled bin or one of its list-adjacent neighbours. Ages landing in
/// the gaps between bins miss on both metrics.
pub fn cross_bin_eval(
    pred_ages: &[f64],
    labels: &[usize],
    target: &BinScheme,
) -> Result<CrossBinScores> {
    if pred_ages.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predicted ages cannot be scored against {} labels",
            pred_ages.len(),
            labels.len()
        )));
    }
    if pred_ages.is_empty() {
        return Err(Error::data("cannot score an empty evaluation set".to_string()));
    }
    let bins = target.bins();
    let mut exact = 0usize;
    let mut one_off = 0usize;
    for (i, (&age, &label)) in pred_ages.iter().zip(labels).enumerate() {
        if label >= bins.len() {
            return Err(Error::data(format!(
                "label {label} out of range for the {}-bin '{}' scheme at row {i}",
                bins.len(),
                target.name()
            )));
        }
        if age_in_bin(age, &bins[label]) {
            exact += 1;
            one_off += 1;
            continue;
        }
        let lo = label.saturating_sub(1);
        let hi = (label + 1).min(bins.len() - 1);
        if (lo..=hi).any(|j| age_in_bin(age, &bins[j])) {
            one_off += 1;
        }
    }
    let n = pred_ages.len() as f64;
    Ok(CrossBinScores { exact: exact as f64 / n, one_off: one_off as f64 / n, count: pred_ages.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::bins::AgeBin;
    use crate::rng::Rng;
    use crate::tensor::{Shape, Tensor};

    fn prob_batch(rows: Vec<Vec<f64>>) -> ProbBatch<f64> {
        let n = rows.len();
        let k = rows[0].len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        ProbBatch::from_tensor(Tensor::from_vec(Shape::new(vec![n, k]).unwrap(), data).unwrap())
            .unwrap()
    }

    #[test]
    fn hand_counted_two_class_evaluation() {
        // Predictions [0, 1, 1] against labels [0, 0, 1].
        let probs = prob_batch(vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.3, 0.7]]);
        let (acc, matrix) = evaluate(&probs, &[0, 0, 1]).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(matrix.count(0, 0), 1);
        assert_eq!(matrix.count(0, 1), 1);
        assert_eq!(matrix.count(1, 0), 0);
        assert_eq!(matrix.count(1, 1), 1);
    }

    #[test]
    fn perfect_predictions_give_a_diagonal_matrix() {
        let probs = prob_batch(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let (acc, matrix) = evaluate(&probs, &[0, 1, 2]).unwrap();
        assert_eq!(acc, 1.0);
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(matrix.count(t, p), usize::from(t == p));
            }
        }
        assert_eq!(matrix.accuracy(), 1.0);
    }

    #[test]
    fn confusion_row_sums_count_each_true_class() {
        let mut rng = Rng::new(31);
        let k = 5;
        let n = 200;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut truth_tally = vec![0usize; k];
        for _ in 0..n {
            let mut row: Vec<f64> = (0..k).map(|_| rng.uniform(0.01, 1.0)).collect();
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
            rows.push(row);
            let label = rng.index(k);
            truth_tally[label] += 1;
            labels.push(label);
        }
        let (acc, matrix) = evaluate(&prob_batch(rows), &labels).unwrap();
        assert_eq!(matrix.total(), n, "matrix total equals the sample count");
        for t in 0..k {
            assert_eq!(matrix.truth_count(t), truth_tally[t]);
        }
        assert!((matrix.accuracy() - acc).abs() < 1e-15, "trace/total is the accuracy");
    }

    #[test]
    fn confusion_csv_uses_bin_names_as_header() {
        let mut matrix = ConfusionMatrix::new(2).unwrap();
        matrix.record(0, 0).unwrap();
        matrix.record(1, 0).unwrap();
        matrix.record(1, 1).unwrap();
        let csv = matrix.to_csv(&["0-2".into(), "3-6".into()]).unwrap();
        assert_eq!(csv, "0-2,3-6\n1,0\n1,1\n");
    }

    #[test]
    fn training_midpoints_match_the_bin_arithmetic() {
        let table = MidpointTable::training_default();
        assert_eq!(
            table.midpoints(),
            &[1.0, 4.5, 9.5, 15.0, 20.0, 24.5, 30.0, 39.0, 52.0, 70.0]
        );
    }

    #[test]
    fn midpoint_of_a_forty_to_forty_five_bin_is_42_5() {
        let scheme = BinScheme::new(
            "range-check",
            vec![AgeBin { lo: 0, hi: Some(39) }, AgeBin { lo: 40, hi: Some(45) }],
        )
        .unwrap();
        let table = MidpointTable::new(&scheme, 70.0).unwrap();
        assert_eq!(table.midpoints()[1], 42.5);
    }

    #[test]
    fn open_bin_age_below_last_midpoint_is_rejected() {
        let err = MidpointTable::new(&BinScheme::training(), 50.0).unwrap_err();
        assert!(err.to_string().contains("strictly increasing"), "got: {err}");
    }

    #[test]
    fn expected_age_of_a_one_hot_row_is_its_midpoint() {
        let mut row = vec![0.0; 10];
        row[4] = 1.0; // training bin (18-22)
        let ages =
            expected_ages(&prob_batch(vec![row]), &MidpointTable::training_default()).unwrap();
        assert_eq!(ages, vec![20.0]);
    }

    #[test]
    fn expected_age_of_uniform_probs_is_the_midpoint_mean() {
        let table = MidpointTable::training_default();
        let ages = expected_ages(&prob_batch(vec![vec![0.1; 10]]), &table).unwrap();
        let mean: f64 = table.midpoints().iter().sum::<f64>() / 10.0;
        assert!((ages[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn expected_age_stays_inside_the_midpoint_hull() {
        let mut rng = Rng::new(8);
        let table = MidpointTable::training_default();
        for _ in 0..100 {
            let mut row: Vec<f64> = (0..10).map(|_| rng.uniform(0.0, 1.0)).collect();
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
            let age = expected_ages(&prob_batch(vec![row]), &table).unwrap()[0];
            assert!((1.0..=70.0).contains(&age), "convex combination escaped: {age}");
        }
    }

    #[test]
    fn cross_bin_trace_on_the_gapped_evaluation_scheme() {
        let scheme = BinScheme::adience();
        // Label index 4 is (25-32).
        let inside = cross_bin_eval(&[30.0], &[4], &scheme).unwrap();
        assert_eq!((inside.exact, inside.one_off), (1.0, 1.0));

        // 18.0 lies in (15-20), the neighbour below: one-off only.
        let neighbour = cross_bin_eval(&[18.0], &[4], &scheme).unwrap();
        assert_eq!((neighbour.exact, neighbour.one_off), (0.0, 1.0));

        // 22.0 falls in the 20..25 gap: a miss on both metrics.
        let gap = cross_bin_eval(&[22.0], &[4], &scheme).unwrap();
        assert_eq!((gap.exact, gap.one_off), (0.0, 0.0));
    }

    #[test]
    fn cross_bin_open_bin_accepts_any_large_age() {
        let scheme = BinScheme::adience();
        let scores = cross_bin_eval(&[200.0], &[7], &scheme).unwrap();
        assert_eq!((scores.exact, scores.one_off), (1.0, 1.0));
    }

    #[test]
    fn cross_bin_boundaries_are_inclusive() {
        let scheme = BinScheme::adience();
        for age in [25.0, 32.0] {
            let scores = cross_bin_eval(&[age], &[4], &scheme).unwrap();
            assert_eq!(scores.exact, 1.0, "boundary age {age} must count as inside");
        }
    }

    #[test]
    fn exact_never_exceeds_one_off() {
        let mut rng = Rng::new(99);
        let scheme = BinScheme::adience();
        for _ in 0..50 {
            let n = 1 + rng.index(20);
            let ages: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 90.0)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.index(scheme.len())).collect();
            let scores = cross_bin_eval(&ages, &labels, &scheme).unwrap();
            assert!(scores.exact <= scores.one_off);
            assert!(scores.one_off <= 1.0);
        }
    }

    #[test]
    fn cross_bin_rejects_out_of_range_labels() {
        let err = cross_bin_eval(&[10.0], &[8], &BinScheme::adience()).unwrap_err();
        assert!(err.to_string().contains("out of range"), "got: {err}");
    }

    #[test]
    fn accuracy_rejects_mismatched_lengths() {
        let probs = prob_batch(vec![vec![0.6, 0.4]]);
        assert!(accuracy(&probs, &[0, 1]).is_err());
        assert!(accuracy(&probs, &[]).is_err());
    }
}
