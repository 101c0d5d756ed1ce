//! Classification tasks and metric reports.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, argmax, auc_ovr_macro, confusion_matrix, sensitivities};
use crate::dc_space::DiagnosticClass;
use crate::error::{Error, Result};
use crate::synth::Domain;

/// A diagnosis task. Subjects of classes outside the task are dropped; in
/// binary tasks the class with index 1 is the positive one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    DemVsCn,
    AdVsCn,
    FtdVsCn,
    AdVsFtd,
    ThreeClass,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::DemVsCn, Task::AdVsCn, Task::FtdVsCn, Task::AdVsFtd, Task::ThreeClass];

    pub fn name(self) -> &'static str {
        match self {
            Task::DemVsCn => "dem-vs-cn",
            Task::AdVsCn => "ad-vs-cn",
            Task::FtdVsCn => "ftd-vs-cn",
            Task::AdVsFtd => "ad-vs-ftd",
            Task::ThreeClass => "three-class",
        }
    }

    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Task::DemVsCn => &["CN", "Dem"],
            Task::AdVsCn => &["CN", "AD"],
            Task::FtdVsCn => &["CN", "FTD"],
            Task::AdVsFtd => &["AD", "FTD"],
            Task::ThreeClass => &["CN", "AD", "FTD"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn n_classes(self) -> usize {
        if self == Task::ThreeClass {
            3
        } else {
            2
        }
    }

    /// Task-local label of a subject, `None` when the task ignores its class.
    pub fn label(self, c: DiagnosticClass) -> Option<usize> {
        use DiagnosticClass::*;
        match (self, c) {
            (Task::DemVsCn, CN) | (Task::AdVsCn, CN) | (Task::FtdVsCn, CN) | (Task::AdVsFtd, AD) => Some(0),
            (Task::DemVsCn, _) | (Task::AdVsCn, AD) | (Task::FtdVsCn, FTD) | (Task::AdVsFtd, FTD) => Some(1),
            (Task::ThreeClass, c) => Some(c.code()),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown task '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub domain: Domain,
    pub classes: Vec<String>,
    pub n: usize,
    pub acc: f64,
    pub bacc: f64,
    pub auc: f64,
    pub sensitivities: Vec<f64>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    /// Metrics of argmax predictions over probability rows.
    pub fn from_probabilities(task: Task, domain: Domain, y_true: &[usize], proba: &[Vec<f64>]) -> Result<Self> {
        let n_classes = task.n_classes();
        let y_pred: Vec<usize> = proba.iter().map(|p| argmax(p)).collect();
        let sens = sensitivities(y_true, &y_pred, n_classes)?;
        Ok(Self {
            task,
            domain,
            classes: task.class_names(),
            n: y_true.len(),
            acc: accuracy(y_true, &y_pred)?,
            bacc: sens.iter().sum::<f64>() / n_classes as f64,
            auc: auc_ovr_macro(y_true, proba, n_classes)?,
            sensitivities: sens,
            confusion: confusion_matrix(y_true, &y_pred, n_classes)?,
        })
    }
}

pub const SUMMARY_HEADER: &str = "task,domain,n,acc,bacc,auc,sensitivities";

/// One CSV line per report; sensitivities are `class:value` pairs joined by `;`.
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in reports {
        let sens: Vec<String> = r
            .classes
            .iter()
            .zip(&r.sensitivities)
            .map(|(c, s)| format!("{c}:{s:.6}"))
            .collect();
        out += &format!(
            "{},{},{},{:.6},{:.6},{:.6},{}\n",
            r.task,
            r.domain.tag(),
            r.n,
            r.acc,
            r.bacc,
            r.auc,
            sens.join(";")
        );
    }
    out
}

pub fn write_summary_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    std::fs::write(path, summary_csv(reports)).map_err(|e| Error::io(path, e))
}
