//! Stratified fold planning and the per-iteration role rotation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{data_err, Error, Result};
use crate::seed::{self, stream};

/// Folds of sample indices. At iteration `r`, fold `f` plays role
/// `(f - r) mod n`: roles `0..n-3` train, `n-3` validates the classifiers,
/// `n-2` calibrates the blend, and `n-1` is the test fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

/// Sample indices of each role in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRoles {
    pub iteration: usize,
    pub train: Vec<usize>,
    pub classifier_val: Vec<usize>,
    pub ensemble_cal: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles each class, then deals its members round-robin over the folds,
/// the dealing position carrying over from one class to the next. Every fold
/// gets the floor or the ceiling of its share of every class.
pub fn stratified_folds(labels: &[usize], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 4 {
        return Err(Error::Parameter(format!("need at least 4 folds, got {n_folds}")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = seed::rng(seed, stream::FOLDS);
    let mut folds = vec![Vec::new(); n_folds];
    let mut pos = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < n_folds {
            return Err(data_err!("class {c} has {} members, fewer than {n_folds} folds", members.len()));
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[pos % n_folds].push(i);
            pos += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { seed, folds })
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    pub fn n_samples(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// Role index of fold `fold` at `iteration`.
    pub fn role_of(&self, fold: usize, iteration: usize) -> usize {
        let n = self.n_folds();
        (fold + n - iteration % n) % n
    }

    pub fn roles(&self, iteration: usize) -> IterationRoles {
        let n = self.n_folds();
        let mut r = IterationRoles {
            iteration,
            train: Vec::new(),
            classifier_val: Vec::new(),
            ensemble_cal: Vec::new(),
            test: Vec::new(),
        };
        for (f, members) in self.folds.iter().enumerate() {
            let dst = match self.role_of(f, iteration) {
                x if x + 3 < n => &mut r.train,
                x if x + 3 == n => &mut r.classifier_val,
                x if x + 2 == n => &mut r.ensemble_cal,
                _ => &mut r.test,
            };
            dst.extend(members);
        }
        r.train.sort_unstable();
        r
    }
}

impl IterationRoles {
    fn sets(&self) -> [(&'static str, &[usize]); 4] {
        [
            ("train", &self.train),
            ("classifier validation", &self.classifier_val),
            ("ensemble calibration", &self.ensemble_cal),
            ("test", &self.test),
        ]
    }

    /// Protocol error if any sample holds two roles or a role is empty.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut owner: std::collections::HashMap<usize, &str> = std::collections::HashMap::new();
        for (name, set) in self.sets() {
            if set.is_empty() {
                return Err(Error::Protocol(format!("iteration {}: {name} set is empty", self.iteration)));
            }
            for &i in set {
                if let Some(prev) = owner.insert(i, name) {
                    return Err(Error::Protocol(format!(
                        "iteration {}: sample {i} is in both the {prev} and {name} sets",
                        self.iteration
                    )));
                }
            }
        }
        Ok(())
    }

    /// Keeps the samples accepted by `keep` in every role.
    pub fn filtered(&self, keep: impl Fn(usize) -> bool) -> IterationRoles {
        let f = |v: &[usize]| v.iter().copied().filter(|&i| keep(i)).collect();
        IterationRoles {
            iteration: self.iteration,
            train: f(&self.train),
            classifier_val: f(&self.classifier_val),
            ensemble_cal: f(&self.ensemble_cal),
            test: f(&self.test),
        }
    }
}
