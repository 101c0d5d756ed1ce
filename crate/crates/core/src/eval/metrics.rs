//! Classification metrics on integer labels `0..n_classes`.

use crate::error::{Error, Result};

fn check(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Metric(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&c| c >= n_classes) {
        return Err(Error::Metric(format!("class {bad} outside 0..{n_classes}")));
    }
    Ok(())
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    check(y_true, y_pred, n_classes)?;
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::Metric("accuracy needs equal, nonempty label lists".into()));
    }
    let hits = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Per-class recall. Every class must occur in `y_true`.
pub fn sensitivities(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let m = confusion_matrix(y_true, y_pred, n_classes)?;
    m.iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                Err(Error::Metric(format!("class {c} has no samples")))
            } else {
                Ok(row[c] as f64 / total as f64)
            }
        })
        .collect()
}

pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<f64> {
    let s = sensitivities(y_true, y_pred, n_classes)?;
    Ok(s.iter().sum::<f64>() / n_classes as f64)
}

/// Mean recall over the classes that occur in `y_true`; used for model
/// selection on small folds where a class may be missing.
pub fn present_class_bacc(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> f64 {
    let mut hit = vec![0usize; n_classes];
    let mut tot = vec![0usize; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        tot[t] += 1;
        hit[t] += (t == p) as usize;
    }
    let present: Vec<f64> = (0..n_classes)
        .filter(|&c| tot[c] > 0)
        .map(|c| hit[c] as f64 / tot[c] as f64)
        .collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// ROC AUC of `scores` for the positives, by the trapezoidal rule over every
/// distinct threshold.
pub fn roc_auc(positive: &[bool], scores: &[f64]) -> Result<f64> {
    if positive.len() != scores.len() {
        return Err(Error::Metric("labels and scores differ in length".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("ROC AUC needs both positives and negatives".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("non-finite score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
    }
    Ok(area / (n_pos * n_neg) as f64)
}

/// Binary tasks score the positive column (class 1); multi-class tasks
/// average the one-vs-rest AUC of every class.
pub fn auc_ovr_macro(y_true: &[usize], proba: &[Vec<f64>], n_classes: usize) -> Result<f64> {
    if y_true.len() != proba.len() {
        return Err(Error::Metric("labels and probabilities differ in length".into()));
    }
    if let Some(row) = proba.iter().find(|r| r.len() != n_classes) {
        return Err(Error::Metric(format!("probability row of length {}", row.len())));
    }
    let column = |c: usize| -> Result<f64> {
        let pos: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
        let scores: Vec<f64> = proba.iter().map(|r| r[c]).collect();
        roc_auc(&pos, &scores).map_err(|_| Error::Metric(format!("class {c} absent from labels")))
    };
    if n_classes == 2 {
        if !y_true.contains(&0) {
            return Err(Error::Metric("class 0 absent from labels".into()));
        }
        return column(1);
    }
    let mut total = 0.0;
    for c in 0..n_classes {
        total += column(c)?;
    }
    Ok(total / n_classes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// P(score_pos > score_neg) + P(tie) / 2 over all pairs.
    fn pair_auc(positive: &[bool], scores: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if positive[i] && !positive[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn bacc_examples() {
        let y = [0, 0, 1, 1, 2, 2];
        assert_eq!(balanced_accuracy(&y, &y, 3).unwrap(), 1.0);
        assert!((balanced_accuracy(&y, &[0; 6], 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        // recalls 1.0, 0.5, 0.75
        let t = [0, 0, 1, 1, 2, 2, 2, 2];
        let p = [0, 0, 1, 0, 2, 2, 2, 1];
        assert_eq!(sensitivities(&t, &p, 3).unwrap(), vec![1.0, 0.5, 0.75]);
        assert_eq!(balanced_accuracy(&t, &p, 3).unwrap(), 0.75);
    }

    #[test]
    fn sensitivity_examples() {
        let t = [0, 1, 1, 2];
        assert_eq!(sensitivities(&t, &[0, 0, 0, 2], 3).unwrap(), vec![1.0, 0.0, 1.0]);
        assert!(matches!(sensitivities(&[0, 0], &[0, 0], 2), Err(Error::Metric(_))));
    }

    #[test]
    fn confusion_rows_sum_to_class_counts() {
        let t = [0, 1, 2, 2, 1];
        let m = confusion_matrix(&t, &[1, 1, 0, 2, 2], 3).unwrap();
        assert_eq!(m.iter().map(|r| r.iter().sum::<usize>()).collect::<Vec<_>>(), vec![1, 2, 2]);
        assert_eq!(m[2], vec![1, 0, 1]);
    }

    #[test]
    fn auc_examples() {
        let y = [0, 0, 1, 1, 2, 2];
        let perfect: Vec<Vec<f64>> = y.iter().map(|&c| (0..3).map(|k| (k == c) as u8 as f64).collect()).collect();
        assert_eq!(auc_ovr_macro(&y, &perfect, 3).unwrap(), 1.0);
        let flat = vec![vec![1.0 / 3.0; 3]; 6];
        assert_eq!(auc_ovr_macro(&y, &flat, 3).unwrap(), 0.5);
        let pos = [true, false, true, false, true, false];
        let s = [0.9, 0.8, 0.4, 0.4, 0.3, 0.1];
        assert_eq!(roc_auc(&pos, &s).unwrap(), pair_auc(&pos, &s));
        assert!(matches!(auc_ovr_macro(&[0, 0], &flat[..2], 3), Err(Error::Metric(_))));
    }

    #[test]
    fn binary_auc_uses_positive_column() {
        let y = [0, 1, 0, 1];
        let p = vec![vec![0.8, 0.2], vec![0.3, 0.7], vec![0.4, 0.6], vec![0.45, 0.55]];
        let pos: Vec<bool> = y.iter().map(|&c| c == 1).collect();
        let s: Vec<f64> = p.iter().map(|r| r[1]).collect();
        assert_eq!(auc_ovr_macro(&y, &p, 2).unwrap(), pair_auc(&pos, &s));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(
            labels in prop::collection::vec(0usize..3, 3..=12),
            raw in prop::collection::vec(prop::collection::vec(0u8..4, 3), 12),
        ) {
            let n = labels.len();
            prop_assume!((0..3).all(|c| labels.contains(&c)));
            let proba: Vec<Vec<f64>> = raw[..n].iter().map(|r| {
                let w: Vec<f64> = r.iter().map(|&v| v as f64 + 1.0).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            }).collect();
            let mut want = 0.0;
            for c in 0..3 {
                let pos: Vec<bool> = labels.iter().map(|&t| t == c).collect();
                let s: Vec<f64> = proba.iter().map(|r| r[c]).collect();
                want += pair_auc(&pos, &s);
            }
            prop_assert!((auc_ovr_macro(&labels, &proba, 3).unwrap() - want / 3.0).abs() < 1e-12);
        }

        #[test]
        fn bacc_is_mean_sensitivity_and_order_free(
            pairs in prop::collection::vec((0usize..3, 0usize..3), 3..=12),
            rot in 0usize..12,
        ) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
            prop_assume!((0..3).all(|c| t.contains(&c)));
            let s = sensitivities(&t, &p, 3).unwrap();
            let b = balanced_accuracy(&t, &p, 3).unwrap();
            prop_assert_eq!(b, s.iter().sum::<f64>() / 3.0);
            let mut tr = t.clone();
            let mut pr = p.clone();
            tr.rotate_left(rot % t.len());
            pr.rotate_left(rot % t.len());
            prop_assert_eq!(balanced_accuracy(&tr, &pr, 3).unwrap(), b);
        }
    }
}
