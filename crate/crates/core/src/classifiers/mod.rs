//! Grade-based MLP, volume-based SVM, and their calibrated linear blend.
//!
//! Labels are task-local class indices `0..n_classes`.

mod bundle;
mod mlp;
mod svm;

pub use bundle::{read_bundle, write_bundle};
pub use mlp::{mlp_predict_proba, mlp_train, softmax, MlpConfig, MlpModel, MlpTrainingRecord};
pub use svm::{
    balanced_weights, kkt_residual, smo_solve, svm_predict_proba, svm_train, DualSolution, Kernel, KernelKind,
    Machine, Platt, SmoParams, SvmConfig, SvmModel,
};

use serde::{Deserialize, Serialize};

use crate::error::{data_err, geometry, Error, Result};
use crate::eval::metrics::{argmax, present_class_bacc};

/// Common row length of a nonempty feature matrix.
fn check_rows(xs: &[Vec<f64>]) -> Result<usize> {
    let dim = xs.first().map(Vec::len).ok_or_else(|| data_err!("empty feature matrix"))?;
    if dim == 0 || xs.iter().any(|x| x.len() != dim) {
        return Err(geometry!("feature rows must share one nonzero length"));
    }
    if xs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(data_err!("non-finite feature value"));
    }
    Ok(dim)
}

fn check_labels(labels: &[usize], rows: usize, n_classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(geometry!("{} labels for {rows} feature rows", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(data_err!("label {bad} outside 0..{n_classes}"));
    }
    let mut seen = vec![false; n_classes];
    for &l in labels {
        seen[l] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(data_err!("training needs at least two classes"));
    }
    Ok(())
}

/// `lambda p_mlp + (1 - lambda) p_svm`.
pub fn blend(lambda: f64, p_mlp: &[f64], p_svm: &[f64]) -> Vec<f64> {
    p_mlp.iter().zip(p_svm).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect()
}

/// Grid step of the blending coefficient search.
pub const LAMBDA_STEPS: usize = 100;

/// The coefficient in `{0, 0.01, ..., 1}` maximizing the balanced accuracy
/// of the blend on the calibration samples; ties keep the smallest.
pub fn ensemble_calibrate(p_mlp: &[Vec<f64>], p_svm: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Protocol("calibration fold is empty".into()));
    }
    if p_mlp.len() != labels.len() || p_svm.len() != labels.len() {
        return Err(geometry!("calibration probabilities and labels differ in length"));
    }
    let n_classes = p_mlp[0].len();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for step in 0..=LAMBDA_STEPS {
        let lambda = step as f64 / LAMBDA_STEPS as f64;
        let preds: Vec<usize> = p_mlp.iter().zip(p_svm).map(|(a, b)| argmax(&blend(lambda, a, b))).collect();
        let bacc = present_class_bacc(labels, &preds, n_classes);
        if bacc > best.0 {
            best = (bacc, lambda);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub classes: Vec<String>,
    pub lambda: f64,
    pub mlp: MlpModel,
    pub svm: SvmModel,
}

impl EnsembleModel {
    pub fn predict_proba(&self, dc_features: &[f64], volumes: &[f64]) -> Result<Vec<f64>> {
        let a = self.mlp.predict_proba(dc_features)?;
        let b = self.svm.predict_proba(volumes)?;
        Ok(blend(self.lambda, &a, &b))
    }
}

pub fn ensemble_predict(e: &EnsembleModel, dc_features: &[f64], volumes: &[f64]) -> Result<Vec<f64>> {
    e.predict_proba(dc_features, volumes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_branches_pick_zero() {
        let p = vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.6, 0.4]];
        assert_eq!(ensemble_calibrate(&p, &p, &[0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn barely_right_mlp_against_confidently_wrong_svm_picks_one() {
        // the MLP wins only when the SVM weight vanishes
        let labels = [0, 1, 2];
        let eps = 0.002;
        let mlp: Vec<Vec<f64>> = labels
            .iter()
            .map(|&c| (0..3).map(|k| if k == c { 1.0 / 3.0 + eps } else { 1.0 / 3.0 - eps / 2.0 }).collect())
            .collect();
        let svm: Vec<Vec<f64>> = labels.iter().map(|&c| (0..3).map(|k| ((k == (c + 1) % 3) as u8) as f64).collect()).collect();
        assert_eq!(ensemble_calibrate(&mlp, &svm, &labels).unwrap(), 1.0);
    }

    #[test]
    fn handcrafted_case_lands_in_the_middle_band() {
        // Sample 1 needs lambda > 0.4595, sample 2 needs lambda < 0.5405.
        let labels = [0, 1, 0, 0, 1, 1];
        let mlp = vec![
            vec![1.0, 0.0],
            vec![0.925, 0.075],
            vec![0.9, 0.1],
            vec![0.8, 0.2],
            vec![0.1, 0.9],
            vec![0.3, 0.7],
        ];
        let svm = vec![
            vec![0.075, 0.925],
            vec![0.0, 1.0],
            vec![0.9, 0.1],
            vec![0.7, 0.3],
            vec![0.2, 0.8],
            vec![0.1, 0.9],
        ];
        let lambda = ensemble_calibrate(&mlp, &svm, &labels).unwrap();
        assert!((lambda - 0.5).abs() <= 0.05, "{lambda}");
        // exhaustive oracle: lambda is the first grid point classifying all six
        let all_right = |l: f64| labels.iter().enumerate().all(|(i, &y)| argmax(&blend(l, &mlp[i], &svm[i])) == y);
        let first = (0..=100).map(|s| s as f64 / 100.0).find(|&l| all_right(l)).unwrap();
        assert_eq!(lambda, first);
        assert!(!all_right(0.45) && !all_right(0.55));
    }

    #[test]
    fn empty_calibration_fold_is_a_protocol_error() {
        assert!(matches!(ensemble_calibrate(&[], &[], &[]), Err(Error::Protocol(_))));
    }

    #[test]
    fn blend_arithmetic() {
        assert_eq!(blend(0.5, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), vec![0.5, 0.5, 0.0]);
        assert_eq!(blend(1.0, &[0.2, 0.8], &[0.9, 0.1]), vec![0.2, 0.8]);
        assert_eq!(blend(0.0, &[0.2, 0.8], &[0.9, 0.1]), vec![0.9, 0.1]);
    }
}
