//! The cross-validation protocol and out-of-domain evaluation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{stratified_folds, FoldPlan, IterationRoles};
use super::metrics::present_class_bacc;
use super::metrics::argmax;
use super::report::{EvalReport, Task};
use crate::classifiers::{
    blend, ensemble_calibrate, mlp_train, read_bundle, svm_train, write_bundle, EnsembleModel, KernelKind, MlpConfig,
    SvmConfig,
};
use crate::dc_space::DiagnosticClass;
use crate::error::{geometry, Error, Result};
use crate::features::StructureFeatures;
use crate::grader_net::{train_ensemble, GraderConfig, GraderEnsemble, GradingSample};
use crate::patch_grid::GridSpec;
use crate::seed::{self, stream};
use crate::synth::{Domain, Subject};

/// Number of models the out-of-domain evaluation averages.
pub const OOD_MODELS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub n_folds: usize,
    pub seed: u64,
    /// Patches per axis.
    pub k: usize,
    pub grader: GraderConfig,
    pub mlp: MlpConfig,
    pub svm: SvmConfig,
    pub tasks: Vec<Task>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_folds: 10,
            seed: 0,
            k: 2,
            grader: GraderConfig::default(),
            mlp: MlpConfig::default(),
            svm: SvmConfig::default(),
            tasks: Task::ALL.to_vec(),
        }
    }
}

/// A test-fold prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject: usize,
    pub iteration: usize,
    pub label: usize,
    pub proba: Vec<f64>,
}

/// Per-task results of the generic protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub report: EvalReport,
    /// In subject order.
    pub predictions: Vec<Prediction>,
}

/// Restricts every role to the subjects the task keeps.
pub fn task_roles(roles: &IterationRoles, classes: &[DiagnosticClass], task: Task) -> IterationRoles {
    roles.filtered(|i| task.label(classes[i]).is_some())
}

/// Runs the fold rotation with an injected learner. For every iteration
/// `fit_predict` receives the full role sets and returns, per task in
/// `tasks`, the probability rows of that task's test subjects
/// (`task_roles(..).test`, in order). Leakage is checked before each call;
/// afterwards every kept subject must have been tested exactly once.
pub fn cross_validate_with<F>(
    plan: &FoldPlan,
    classes: &[DiagnosticClass],
    tasks: &[Task],
    mut fit_predict: F,
) -> Result<Vec<TaskOutcome>>
where
    F: FnMut(&IterationRoles) -> Result<Vec<Vec<Vec<f64>>>>,
{
    if plan.n_samples() != classes.len() {
        return Err(geometry!("fold plan covers {} subjects, dataset has {}", plan.n_samples(), classes.len()));
    }
    let mut collected: Vec<Vec<Option<Prediction>>> = vec![vec![None; classes.len()]; tasks.len()];
    for r in 0..plan.n_folds() {
        let roles = plan.roles(r);
        roles.check_disjoint()?;
        let out = fit_predict(&roles)?;
        if out.len() != tasks.len() {
            return Err(Error::Protocol(format!("iteration {r}: {} task outputs for {} tasks", out.len(), tasks.len())));
        }
        for (t, (&task, rows)) in tasks.iter().zip(out).enumerate() {
            let test = task_roles(&roles, classes, task).test;
            if rows.len() != test.len() {
                return Err(Error::Protocol(format!(
                    "iteration {r}, {task}: {} predictions for {} test subjects",
                    rows.len(),
                    test.len()
                )));
            }
            for (i, proba) in test.into_iter().zip(rows) {
                if proba.len() != task.n_classes() {
                    return Err(geometry!("{task}: probability row of length {}", proba.len()));
                }
                let slot = &mut collected[t][i];
                if slot.is_some() {
                    return Err(Error::Protocol(format!("{task}: subject {i} tested twice")));
                }
                *slot = Some(Prediction {
                    subject: i,
                    iteration: r,
                    label: task.label(classes[i]).expect("kept subject"),
                    proba,
                });
            }
        }
    }
    tasks
        .iter()
        .zip(collected)
        .map(|(&task, slots)| {
            let mut predictions = Vec::new();
            for (i, s) in slots.into_iter().enumerate() {
                match s {
                    Some(p) => predictions.push(p),
                    None if task.label(classes[i]).is_some() => {
                        return Err(Error::Protocol(format!("{task}: subject {i} never tested")));
                    }
                    None => {}
                }
            }
            let y: Vec<usize> = predictions.iter().map(|p| p.label).collect();
            let proba: Vec<Vec<f64>> = predictions.iter().map(|p| p.proba.clone()).collect();
            let report = EvalReport::from_probabilities(task, Domain::In, &y, &proba)?;
            Ok(TaskOutcome { report, predictions })
        })
        .collect()
}

/// A grader ensemble plus one calibrated classifier pair per task.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub grader: GraderEnsemble,
    pub classifiers: Vec<(Task, EnsembleModel)>,
}

impl TrainedPipeline {
    pub fn features(&self, subject: &Subject) -> Result<StructureFeatures> {
        StructureFeatures::compute(&self.grader.grade_raw(&subject.volume)?, &subject.labels)
    }

    pub fn classifier(&self, task: Task) -> Result<&EnsembleModel> {
        self.classifiers
            .iter()
            .find(|(t, _)| *t == task)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Protocol(format!("pipeline has no classifier for {task}")))
    }

    pub fn predict(&self, task: Task, f: &StructureFeatures) -> Result<Vec<f64>> {
        self.classifier(task)?.predict_proba(&f.dc_flat(), &f.volumes)
    }

    /// `grader.dgw` and one `<task>.dgc` per task inside `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.grader.save(dir.join("grader.dgw"))?;
        for (task, m) in &self.classifiers {
            write_bundle(m, dir.join(format!("{task}.dgc")))?;
        }
        Ok(())
    }

    /// Loads the grader and the bundles of the given tasks.
    pub fn load(dir: &Path, tasks: &[Task]) -> Result<Self> {
        Ok(Self {
            grader: GraderEnsemble::load(dir.join("grader.dgw"))?,
            classifiers: tasks
                .iter()
                .map(|&t| Ok((t, read_bundle(dir.join(format!("{t}.dgc")))?)))
                .collect::<Result<_>>()?,
        })
    }
}

pub fn iteration_dir(models_dir: &Path, iteration: usize) -> std::path::PathBuf {
    models_dir.join(format!("iter{iteration:02}"))
}

/// Loads `iter00`, `iter01`, ... until the first missing directory.
pub fn load_pipelines(models_dir: &Path, tasks: &[Task]) -> Result<Vec<TrainedPipeline>> {
    let mut out = Vec::new();
    while iteration_dir(models_dir, out.len()).is_dir() {
        out.push(TrainedPipeline::load(&iteration_dir(models_dir, out.len()), tasks)?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no trained models under {}", models_dir.display())));
    }
    Ok(out)
}

/// Calibration-fold diagnostics of one task in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskIterationRecord {
    pub task: Task,
    pub lambda: f64,
    pub cal_bacc_mlp: f64,
    pub cal_bacc_svm: f64,
    pub cal_bacc_ensemble: f64,
    pub mlp_epochs: usize,
    pub mlp_best_epoch: usize,
    pub svm_kernel: KernelKind,
    pub svm_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub grader_seed: u64,
    pub tasks: Vec<TaskIterationRecord>,
}

/// Everything one cross-validation run produces.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub config: CvConfig,
    pub plan: FoldPlan,
    pub subject_ids: Vec<String>,
    pub outcomes: Vec<TaskOutcome>,
    pub iterations: Vec<IterationRecord>,
    pub models: Vec<TrainedPipeline>,
    /// Structure features of every subject, from the iteration that tested it.
    pub test_features: Vec<StructureFeatures>,
}

/// The JSON report of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config: CvConfig,
    pub subject_ids: Vec<String>,
    pub plan: FoldPlan,
    pub iterations: Vec<IterationRecord>,
    pub reports: Vec<EvalReport>,
    pub predictions: Vec<Vec<Prediction>>,
}

impl CvOutcome {
    pub fn reports(&self) -> Vec<EvalReport> {
        self.outcomes.iter().map(|o| o.report.clone()).collect()
    }

    pub fn report(&self, task: Task) -> Option<&EvalReport> {
        self.outcomes.iter().map(|o| &o.report).find(|r| r.task == task)
    }

    pub fn to_report(&self) -> CvReport {
        CvReport {
            config: self.config.clone(),
            subject_ids: self.subject_ids.clone(),
            plan: self.plan.clone(),
            iterations: self.iterations.clone(),
            reports: self.reports(),
            predictions: self.outcomes.iter().map(|o| o.predictions.clone()).collect(),
        }
    }

    pub fn save_models(&self, models_dir: &Path) -> Result<()> {
        for (r, m) in self.models.iter().enumerate() {
            m.save(&iteration_dir(models_dir, r))?;
        }
        Ok(())
    }
}

fn rows<T: Clone>(idx: &[usize], all: &[T]) -> Vec<T> {
    idx.iter().map(|&i| all[i].clone()).collect()
}

struct TaskFit {
    model: EnsembleModel,
    record: TaskIterationRecord,
    test_proba: Vec<Vec<f64>>,
}

/// MLP and SVM on the training roles, model selection on d8, the blend
/// coefficient on d9, predictions on d10.
fn fit_task(
    task: Task,
    roles: &IterationRoles,
    labels: &[Option<usize>],
    features: &[StructureFeatures],
    cfg: &CvConfig,
    seed_value: u64,
) -> Result<TaskFit> {
    let dc: Vec<Vec<f64>> = features.iter().map(StructureFeatures::dc_flat).collect();
    let vol: Vec<Vec<f64>> = features.iter().map(|f| f.volumes.clone()).collect();
    let y = |idx: &[usize]| -> Vec<usize> { idx.iter().map(|&i| labels[i].expect("filtered")).collect() };
    let n = task.n_classes();
    let (tr, va, ca) = (&roles.train, &roles.classifier_val, &roles.ensemble_cal);
    let (mlp, mlp_rec) = mlp_train(&rows(tr, &dc), &y(tr), &rows(va, &dc), &y(va), n, &cfg.mlp, seed_value)?;
    let svm = svm_train(&rows(tr, &vol), &y(tr), &rows(va, &vol), &y(va), n, &cfg.svm)?;
    let pm: Vec<Vec<f64>> = ca.iter().map(|&i| mlp.predict_proba(&dc[i])).collect::<Result<_>>()?;
    let ps: Vec<Vec<f64>> = ca.iter().map(|&i| svm.predict_proba(&vol[i])).collect::<Result<_>>()?;
    let yc = y(ca);
    let lambda = ensemble_calibrate(&pm, &ps, &yc)?;
    let cal_bacc = |p: &[Vec<f64>]| present_class_bacc(&yc, &p.iter().map(|r| argmax(r)).collect::<Vec<_>>(), n);
    let pe: Vec<Vec<f64>> = pm.iter().zip(&ps).map(|(a, b)| blend(lambda, a, b)).collect();
    let record = TaskIterationRecord {
        task,
        lambda,
        cal_bacc_mlp: cal_bacc(&pm),
        cal_bacc_svm: cal_bacc(&ps),
        cal_bacc_ensemble: cal_bacc(&pe),
        mlp_epochs: mlp_rec.epochs_run,
        mlp_best_epoch: mlp_rec.best_epoch,
        svm_kernel: svm.kernel.kind,
        svm_c: svm.c,
    };
    let model = EnsembleModel {
        classes: task.class_names(),
        lambda,
        mlp,
        svm,
    };
    let test_proba = roles
        .test
        .iter()
        .map(|&i| model.predict_proba(&dc[i], &vol[i]))
        .collect::<Result<_>>()?;
    Ok(TaskFit {
        model,
        record,
        test_proba,
    })
}

/// Full protocol: per iteration, one grader ensemble trained on d1..d7 and
/// shared by every task, classifiers validated on d8, the blend calibrated
/// on d9, predictions on d10; metrics on the concatenated test predictions.
pub fn run_cross_validation(subjects: &[Subject], cfg: &CvConfig) -> Result<CvOutcome> {
    if subjects.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    if cfg.tasks.is_empty() {
        return Err(Error::Parameter("no tasks requested".into()));
    }
    let classes: Vec<DiagnosticClass> = subjects.iter().map(|s| s.class).collect();
    let codes: Vec<usize> = classes.iter().map(|c| c.code()).collect();
    let plan = stratified_folds(&codes, cfg.n_folds, cfg.seed)?;
    let prepared: Vec<GradingSample> = subjects
        .par_iter()
        .map(|s| GradingSample::new(&s.volume, &s.labels, s.class))
        .collect::<Result<_>>()?;
    let grid = GridSpec::new(prepared[0].intensity.dims(), cfg.grader.patch_dims, cfg.k)?;
    if let Some(s) = subjects.iter().find(|s| s.volume.dims() != subjects[0].volume.dims()) {
        return Err(geometry!("subject {} differs in dims from {}", s.id, subjects[0].id));
    }
    let iter_base = seed::derive(cfg.seed, stream::ITERATION);
    let mut iterations = Vec::new();
    let mut models = Vec::new();
    let mut test_features: Vec<Option<StructureFeatures>> = vec![None; subjects.len()];
    let outcomes = cross_validate_with(&plan, &classes, &cfg.tasks, |roles| {
        let grader_seed = seed::derive(iter_base, roles.iteration as u64);
        let train: Vec<GradingSample> = rows(&roles.train, &prepared);
        let grader = train_ensemble(&train, &grid, &cfg.grader, grader_seed)?;
        let features: Vec<StructureFeatures> = subjects
            .par_iter()
            .zip(&prepared)
            .map(|(s, p)| StructureFeatures::compute(&grader.grade_volume(&p.intensity, s.volume.dims())?, &s.labels))
            .collect::<Result<_>>()?;
        for &i in &roles.test {
            test_features[i] = Some(features[i].clone());
        }
        let mut records = Vec::new();
        let mut classifiers = Vec::new();
        let mut probas = Vec::new();
        for (t, &task) in cfg.tasks.iter().enumerate() {
            let labels: Vec<Option<usize>> = classes.iter().map(|&c| task.label(c)).collect();
            let fit = fit_task(
                task,
                &task_roles(roles, &classes, task),
                &labels,
                &features,
                cfg,
                seed::derive(grader_seed, stream::MLP + t as u64),
            )?;
            records.push(fit.record);
            classifiers.push((task, fit.model));
            probas.push(fit.test_proba);
        }
        iterations.push(IterationRecord {
            iteration: roles.iteration,
            grader_seed,
            tasks: records,
        });
        models.push(TrainedPipeline { grader, classifiers });
        Ok(probas)
    })?;
    Ok(CvOutcome {
        config: cfg.clone(),
        subject_ids: subjects.iter().map(|s| s.id.clone()).collect(),
        plan,
        outcomes,
        iterations,
        models,
        test_features: test_features.into_iter().map(|f| f.expect("every subject tested")).collect(),
    })
}

/// Element-wise mean of per-model probability rows; `per_model[m][i]` is the
/// row of model `m` for sample `i`.
pub fn average_probabilities(per_model: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let first = per_model.first().ok_or_else(|| Error::Protocol("no models to average".into()))?;
    let mut acc: Vec<Vec<f64>> = first.iter().map(|r| vec![0.0; r.len()]).collect();
    for m in per_model {
        if m.len() != acc.len() || m.iter().zip(&acc).any(|(a, b)| a.len() != b.len()) {
            return Err(geometry!("model outputs differ in shape"));
        }
        for (a, r) in acc.iter_mut().zip(m) {
            for (x, v) in a.iter_mut().zip(r) {
                *x += v;
            }
        }
    }
    let k = per_model.len() as f64;
    Ok(acc.into_iter().map(|r| r.into_iter().map(|v| v / k).collect()).collect())
}

/// Reports over the subjects the task keeps, from probabilities averaged
/// over models.
fn averaged_report(task: Task, classes: &[DiagnosticClass], per_model: &[Vec<Vec<f64>>]) -> Result<EvalReport> {
    let mean = average_probabilities(per_model)?;
    let y: Vec<usize> = classes.iter().filter_map(|&c| task.label(c)).collect();
    EvalReport::from_probabilities(task, Domain::Out, &y, &mean)
}

/// Out-of-domain evaluation of several tasks at once: each of the ten
/// pipelines grades every subject once, and per task the ten probability
/// vectors of a subject are averaged before the argmax.
pub fn evaluate_out_of_domain_tasks(
    models: &[TrainedPipeline],
    subjects: &[Subject],
    tasks: &[Task],
) -> Result<Vec<EvalReport>> {
    if models.len() != OOD_MODELS {
        return Err(Error::Protocol(format!(
            "out-of-domain evaluation averages {OOD_MODELS} models, got {}",
            models.len()
        )));
    }
    let classes: Vec<DiagnosticClass> = subjects.iter().map(|s| s.class).collect();
    // per_task[t][m][i]
    let mut per_task: Vec<Vec<Vec<Vec<f64>>>> = vec![Vec::new(); tasks.len()];
    for m in models {
        let features: Vec<StructureFeatures> = subjects.par_iter().map(|s| m.features(s)).collect::<Result<_>>()?;
        for (t, &task) in tasks.iter().enumerate() {
            let rows = subjects
                .iter()
                .zip(&features)
                .filter(|(s, _)| task.label(s.class).is_some())
                .map(|(_, f)| m.predict(task, f))
                .collect::<Result<_>>()?;
            per_task[t].push(rows);
        }
    }
    tasks
        .iter()
        .zip(&per_task)
        .map(|(&task, pm)| averaged_report(task, &classes, pm))
        .collect()
}

pub fn evaluate_out_of_domain(models: &[TrainedPipeline], subjects: &[Subject], task: Task) -> Result<EvalReport> {
    Ok(evaluate_out_of_domain_tasks(models, subjects, &[task])?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use DiagnosticClass::*;

    fn classes(n: usize) -> Vec<DiagnosticClass> {
        (0..3 * n).map(|i| DiagnosticClass::ALL[i % 3]).collect()
    }

    fn one_hot(l: usize, n: usize) -> Vec<f64> {
        (0..n).map(|c| (c == l) as u8 as f64).collect()
    }

    #[test]
    fn oracle_learner_scores_perfectly_on_every_task() {
        let cls = classes(10);
        let codes: Vec<usize> = cls.iter().map(|c| c.code()).collect();
        let plan = stratified_folds(&codes, 10, 4).unwrap();
        let outcomes = cross_validate_with(&plan, &cls, &Task::ALL, |roles| {
            Ok(Task::ALL
                .iter()
                .map(|&t| {
                    task_roles(roles, &cls, t)
                        .test
                        .iter()
                        .map(|&i| one_hot(t.label(cls[i]).unwrap(), t.n_classes()))
                        .collect()
                })
                .collect())
        })
        .unwrap();
        for o in &outcomes {
            assert_eq!(o.report.acc, 1.0);
            assert_eq!(o.report.bacc, 1.0);
            assert_eq!(o.report.auc, 1.0);
        }
        assert_eq!(outcomes[0].report.n, 30);
        assert_eq!(outcomes[1].report.n, 20);
        // each subject tested exactly once, by the iteration whose test fold holds it
        for p in &outcomes[4].predictions {
            assert!(plan.roles(p.iteration).test.contains(&p.subject));
        }
    }

    #[test]
    fn learner_sees_disjoint_roles() {
        let cls = classes(10);
        let codes: Vec<usize> = cls.iter().map(|c| c.code()).collect();
        let plan = stratified_folds(&codes, 10, 4).unwrap();
        let mut seen = Vec::new();
        cross_validate_with(&plan, &cls, &[Task::AdVsFtd], |roles| {
            let r = task_roles(roles, &cls, Task::AdVsFtd);
            assert!(r.train.iter().chain(&r.test).all(|&i| cls[i] != CN));
            seen.extend(r.test.clone());
            Ok(vec![r.test.iter().map(|_| vec![0.5, 0.5]).collect()])
        })
        .unwrap();
        seen.sort_unstable();
        let expect: Vec<usize> = (0..30).filter(|&i| cls[i] != CN).collect();
        assert_eq!(seen, expect);
    }

    #[test]
    fn short_output_is_a_protocol_error() {
        let cls = classes(10);
        let codes: Vec<usize> = cls.iter().map(|c| c.code()).collect();
        let plan = stratified_folds(&codes, 10, 4).unwrap();
        let r = cross_validate_with(&plan, &cls, &[Task::ThreeClass], |_| Ok(vec![vec![vec![1.0, 0.0, 0.0]]]));
        assert!(matches!(r, Err(Error::Protocol(_))));
    }

    #[test]
    fn identical_models_average_to_one_model() {
        let cls = [CN, AD, FTD, CN, AD, FTD];
        let rows: Vec<Vec<f64>> = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.3, 0.4, 0.3],
            vec![0.1, 0.5, 0.4],
            vec![0.2, 0.2, 0.6],
            vec![0.1, 0.8, 0.1],
            vec![0.0, 0.1, 0.9],
        ];
        let ten = vec![rows.clone(); 10];
        let single = averaged_report(Task::ThreeClass, &cls, std::slice::from_ref(&rows)).unwrap();
        assert_eq!(averaged_report(Task::ThreeClass, &cls, &ten).unwrap(), single);
        let mixed: Vec<Vec<Vec<f64>>> = (0..10).map(|m| if m % 2 == 0 { rows.clone() } else { rows.iter().rev().cloned().collect() }).collect();
        for r in average_probabilities(&mixed).unwrap() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_model_count_is_a_protocol_error() {
        assert!(matches!(evaluate_out_of_domain(&[], &[], Task::ThreeClass), Err(Error::Protocol(_))));
    }
}
