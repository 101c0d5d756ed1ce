//! Kernel SVM on structure volumes: SMO with second-order working-set
//! selection, one-vs-rest decomposition, class-balanced box constraints,
//! grid search over kernel and C, and Platt probability calibration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_labels, check_rows};
use crate::error::{geometry, Error, Result};
use crate::eval::metrics::{argmax, present_class_bacc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Poly,
    Rbf,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [KernelKind::Linear, KernelKind::Poly, KernelKind::Rbf];
}

/// `Poly` is `(gamma <x, y> + 1)^3`; `Rbf` is `exp(-gamma |x - y|^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub gamma: f64,
}

impl Kernel {
    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            gamma: 1.0,
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(a, b),
            KernelKind::Poly => (self.gamma * dot(a, b) + 1.0).powi(3),
            KernelKind::Rbf => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-self.gamma * d2).exp()
            }
        }
    }

    pub fn gram(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        xs.iter().map(|a| xs.iter().map(|b| self.eval(a, b)).collect()).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoParams {
    /// Stop when the maximal KKT violating pair gap falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 100_000,
        }
    }
}

/// Dual solution of one binary machine; the decision value is
/// `sum_i alpha_i y_i K(x_i, x) + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

const TAU: f64 = 1e-12;

/// Solves `min 1/2 a'Qa - e'a` s.t. `y'a = 0`, `0 <= a_i <= c_i`, with
/// `Q_ij = y_i y_j K_ij`. `warm` must be feasible for the constraints.
pub fn smo_solve(gram: &[Vec<f64>], y: &[f64], c: &[f64], warm: Option<&[f64]>, p: &SmoParams) -> DualSolution {
    let n = y.len();
    let mut alpha = warm.map_or_else(|| vec![0.0; n], |w| w.to_vec());
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i][j];
    let mut grad = vec![-1.0; n];
    for (i, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            for (k, g) in grad.iter_mut().enumerate() {
                *g += q(i, k) * a;
            }
        }
    }
    let upper = |a: &[f64], i: usize| a[i] >= c[i];
    let lower = |a: &[f64], i: usize| a[i] <= 0.0;
    let mut iterations = 0;
    while iterations < p.max_iter {
        // first index: maximal violation
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            let in_up = if y[t] > 0.0 { !upper(&alpha, t) } else { !lower(&alpha, t) };
            if in_up && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = t;
            }
        }
        if i_sel == usize::MAX {
            break;
        }
        let i = i_sel;
        // second index: largest objective decrease
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let in_low = if y[t] > 0.0 { !lower(&alpha, t) } else { !upper(&alpha, t) };
            if !in_low {
                continue;
            }
            let v = y[t] * grad[t];
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let mut quad = gram[i][i] + gram[t][t] - 2.0 * gram[i][t];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(diff * diff) / quad;
                if obj <= best {
                    best = obj;
                    j_sel = t;
                }
            }
        }
        if gmax + gmax2 < p.tol || j_sel == usize::MAX {
            break;
        }
        let j = j_sel;
        iterations += 1;
        let (ai, aj) = (alpha[i], alpha[j]);
        let (ci, cj) = (c[i], c[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            let (mut ni, mut nj) = (ai + delta, aj + delta);
            if diff > 0.0 {
                if nj < 0.0 {
                    nj = 0.0;
                    ni = diff;
                }
            } else if ni < 0.0 {
                ni = 0.0;
                nj = -diff;
            }
            if diff > ci - cj {
                if ni > ci {
                    ni = ci;
                    nj = ci - diff;
                }
            } else if nj > cj {
                nj = cj;
                ni = cj + diff;
            }
            alpha[i] = ni;
            alpha[j] = nj;
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            let (mut ni, mut nj) = (ai - delta, aj + delta);
            if sum > ci {
                if ni > ci {
                    ni = ci;
                    nj = sum - ci;
                }
            } else if nj < 0.0 {
                nj = 0.0;
                ni = sum;
            }
            if sum > cj {
                if nj > cj {
                    nj = cj;
                    ni = sum - cj;
                }
            } else if ni < 0.0 {
                ni = 0.0;
                nj = sum;
            }
            alpha[i] = ni;
            alpha[j] = nj;
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for (k, g) in grad.iter_mut().enumerate() {
            *g += q(i, k) * di + q(j, k) * dj;
        }
    }
    // offset: mean over free vectors, else the middle of the feasible range
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(&alpha, t) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(&alpha, t) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    DualSolution {
        alpha,
        bias: -rho,
        iterations,
    }
}

/// Largest violation of the optimality conditions of a dual solution:
/// margin conditions per point status, the equality constraint and the box.
pub fn kkt_residual(gram: &[Vec<f64>], y: &[f64], c: &[f64], sol: &DualSolution) -> f64 {
    let n = y.len();
    let mut worst: f64 = y.iter().zip(&sol.alpha).map(|(yi, a)| yi * a).sum::<f64>().abs();
    for i in 0..n {
        let a = sol.alpha[i];
        worst = worst.max((-a).max(a - c[i]).max(0.0));
        let f: f64 = (0..n).map(|k| sol.alpha[k] * y[k] * gram[k][i]).sum::<f64>() + sol.bias;
        let m = y[i] * f - 1.0;
        let v = if a <= 0.0 {
            (-m).max(0.0)
        } else if a >= c[i] {
            m.max(0.0)
        } else {
            m.abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Platt sigmoid `P(positive | f) = 1 / (1 + exp(a f + b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub a: f64,
    pub b: f64,
}

impl Platt {
    pub fn prob(&self, f: f64) -> f64 {
        let z = self.a * f + self.b;
        if z >= 0.0 {
            (-z).exp() / (1.0 + (-z).exp())
        } else {
            1.0 / (1.0 + z.exp())
        }
    }

    /// Newton fit with backtracking on regularized targets.
    pub fn fit(dec: &[f64], positive: &[bool]) -> Platt {
        let prior1 = positive.iter().filter(|&&p| p).count() as f64;
        let prior0 = positive.len() as f64 - prior1;
        let hi = (prior1 + 1.0) / (prior1 + 2.0);
        let lo = 1.0 / (prior0 + 2.0);
        let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
        let objective = |a: f64, b: f64| -> f64 {
            dec.iter()
                .zip(&t)
                .map(|(&d, &ti)| {
                    let z = d * a + b;
                    if z >= 0.0 {
                        ti * z + (-z).exp().ln_1p()
                    } else {
                        (ti - 1.0) * z + z.exp().ln_1p()
                    }
                })
                .sum()
        };
        let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
        let mut fval = objective(a, b);
        for _ in 0..100 {
            let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
            for (&d, &ti) in dec.iter().zip(&t) {
                let z = d * a + b;
                let (p, q) = if z >= 0.0 {
                    ((-z).exp() / (1.0 + (-z).exp()), 1.0 / (1.0 + (-z).exp()))
                } else {
                    (1.0 / (1.0 + z.exp()), z.exp() / (1.0 + z.exp()))
                };
                let d2 = p * q;
                h11 += d * d * d2;
                h22 += d2;
                h21 += d * d2;
                let d1 = ti - p;
                g1 += d * d1;
                g2 += d1;
            }
            if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
                break;
            }
            let det = h11 * h22 - h21 * h21;
            let da = -(h22 * g1 - h21 * g2) / det;
            let db = -(-h21 * g1 + h11 * g2) / det;
            let gd = g1 * da + g2 * db;
            let mut step = 1.0;
            while step >= 1e-10 {
                let (na, nb) = (a + step * da, b + step * db);
                let nf = objective(na, nb);
                if nf < fval + 1e-4 * step * gd {
                    a = na;
                    b = nb;
                    fval = nf;
                    break;
                }
                step /= 2.0;
            }
            if step < 1e-10 {
                break;
            }
        }
        Platt { a, b }
    }
}

/// One binary machine: the positive class against the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub support: Vec<Vec<f64>>,
    /// `alpha_i y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub platt: Platt,
}

impl Machine {
    pub fn decision(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        self.support.iter().zip(&self.coef).map(|(s, c)| c * kernel.eval(s, x)).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c_min: f64,
    pub c_max: f64,
    pub c_steps: usize,
    pub kernels: Vec<KernelKind>,
    pub smo: SmoParams,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c_min: 1e-5,
            c_max: 1e5,
            c_steps: 500,
            kernels: KernelKind::ALL.to_vec(),
            smo: SmoParams::default(),
        }
    }
}

impl SvmConfig {
    /// Log-uniform C values, ascending.
    pub fn c_grid(&self) -> Vec<f64> {
        if self.c_steps == 1 {
            return vec![self.c_min];
        }
        let (lo, hi) = (self.c_min.log10(), self.c_max.log10());
        (0..self.c_steps)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (self.c_steps - 1) as f64))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.c_min > 0.0 && self.c_min <= self.c_max) || self.c_steps == 0 || self.kernels.is_empty() {
            return Err(Error::Parameter("invalid SVM grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub n_classes: usize,
    pub kernel: Kernel,
    pub c: f64,
    /// Feature standardization fitted on the training set.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// One machine for two classes (class 1 positive), else one per class.
    pub machines: Vec<Machine>,
    pub validation_bacc: f64,
}

/// Per-sample weights `N / (k N_c)`.
pub fn balanced_weights(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    labels.iter().map(|&l| n / (n_classes as f64 * counts[l] as f64)).collect()
}

fn standardizer(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let scale = (0..d)
        .map(|j| {
            let var = xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect()
}

fn machine_targets(labels: &[usize], n_classes: usize) -> Vec<Vec<f64>> {
    let positives: Vec<usize> = if n_classes == 2 { vec![1] } else { (0..n_classes).collect() };
    positives
        .iter()
        .map(|&p| labels.iter().map(|&l| if l == p { 1.0 } else { -1.0 }).collect())
        .collect()
}

fn predict_from_decisions(dec: &[f64]) -> usize {
    if dec.len() == 1 {
        (dec[0] > 0.0) as usize
    } else {
        argmax(dec)
    }
}

impl SvmModel {
    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(geometry!("SVM expects {} features, got {}", self.mean.len(), x.len()));
        }
        Ok(())
    }

    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let z = standardize(x, &self.mean, &self.scale);
        Ok(self.machines.iter().map(|m| m.decision(&self.kernel, &z)).collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(predict_from_decisions(&self.decision_values(x)?))
    }

    /// Platt probability per machine, renormalized over classes.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let dec = self.decision_values(x)?;
        if self.machines.len() == 1 {
            let p1 = self.machines[0].platt.prob(dec[0]);
            return Ok(vec![1.0 - p1, p1]);
        }
        let raw: Vec<f64> = self.machines.iter().zip(&dec).map(|(m, &f)| m.platt.prob(f)).collect();
        let s: f64 = raw.iter().sum();
        if s > 0.0 {
            Ok(raw.iter().map(|p| p / s).collect())
        } else {
            Ok(vec![1.0 / self.n_classes as f64; self.n_classes])
        }
    }
}

pub fn svm_predict_proba(m: &SvmModel, x: &[f64]) -> Result<Vec<f64>> {
    m.predict_proba(x)
}

/// Solves every machine of one kernel across the C grid, each C warm started
/// from the previous solution. Indexed `[machine][c]`.
fn sweep_kernel(
    gram: &[Vec<f64>],
    targets: &[Vec<f64>],
    weights: &[f64],
    grid: &[f64],
    smo: &SmoParams,
) -> Vec<Vec<DualSolution>> {
    targets
        .par_iter()
        .map(|y| {
            let mut warm: Option<Vec<f64>> = None;
            grid.iter()
                .map(|&c| {
                    let bounds: Vec<f64> = weights.iter().map(|w| c * w).collect();
                    let sol = smo_solve(gram, y, &bounds, warm.as_deref(), smo);
                    warm = Some(sol.alpha.clone());
                    sol
                })
                .collect()
        })
        .collect()
}

fn build_machine(sol: &DualSolution, y: &[f64], xs: &[Vec<f64>]) -> Machine {
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support.push(xs[i].iter().map(|&v| v as f32 as f64).collect());
            coef.push((a * y[i]) as f32 as f64);
        }
    }
    Machine {
        support,
        coef,
        bias: sol.bias as f32 as f64,
        platt: Platt { a: 0.0, b: 0.0 },
    }
}

/// Grid search over kernels and C on the validation set, then Platt fits on
/// the validation decision values of the selected model.
pub fn svm_train(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    val_x: &[Vec<f64>],
    val_y: &[usize],
    n_classes: usize,
    cfg: &SvmConfig,
) -> Result<SvmModel> {
    cfg.validate()?;
    let dim = check_rows(train_x)?;
    check_labels(train_y, train_x.len(), n_classes)?;
    if val_x.is_empty() {
        return Err(Error::Protocol("SVM validation set is empty".into()));
    }
    if check_rows(val_x)? != dim {
        return Err(geometry!("validation features differ in dimension"));
    }
    check_labels(val_y, val_x.len(), n_classes)?;
    let (mean, scale) = standardizer(train_x);
    let xs: Vec<Vec<f64>> = train_x.iter().map(|x| standardize(x, &mean, &scale)).collect();
    let vs: Vec<Vec<f64>> = val_x.iter().map(|x| standardize(x, &mean, &scale)).collect();
    let all: Vec<f64> = xs.iter().flatten().cloned().collect();
    let mu = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / all.len() as f64;
    let gamma = if var > 0.0 { 1.0 / (dim as f64 * var) } else { 1.0 };
    let weights = balanced_weights(train_y, n_classes);
    let targets = machine_targets(train_y, n_classes);
    let grid = cfg.c_grid();

    // (bacc, c index, kernel, solutions per machine)
    let mut best: Option<(f64, usize, Kernel, Vec<DualSolution>)> = None;
    for &kind in &cfg.kernels {
        let kernel = Kernel { kind, gamma };
        let gram = kernel.gram(&xs);
        let cross: Vec<Vec<f64>> = vs.iter().map(|v| xs.iter().map(|x| kernel.eval(x, v)).collect()).collect();
        let sweeps = sweep_kernel(&gram, &targets, &weights, &grid, &cfg.smo);
        for ci in 0..grid.len() {
            let preds: Vec<usize> = cross
                .iter()
                .map(|kv| {
                    let dec: Vec<f64> = sweeps
                        .iter()
                        .zip(&targets)
                        .map(|(sw, y)| {
                            let s = &sw[ci];
                            s.alpha.iter().zip(y).zip(kv).map(|((a, yi), k)| a * yi * k).sum::<f64>() + s.bias
                        })
                        .collect();
                    predict_from_decisions(&dec)
                })
                .collect();
            let bacc = present_class_bacc(val_y, &preds, n_classes);
            let better = match &best {
                None => true,
                Some((b, bc, bk, _)) => bacc > *b || (bacc == *b && (grid[ci] < grid[*bc] || (ci == *bc && kind < bk.kind))),
            };
            if better {
                best = Some((bacc, ci, kernel, sweeps.iter().map(|sw| sw[ci].clone()).collect()));
            }
        }
    }
    let (bacc, ci, kernel, sols) = best.expect("nonempty grid");
    let mut model = SvmModel {
        n_classes,
        kernel,
        c: grid[ci],
        mean,
        scale,
        machines: sols.iter().zip(&targets).map(|(s, y)| build_machine(s, y, &xs)).collect(),
        validation_bacc: bacc,
    };
    let val_dec: Vec<Vec<f64>> = val_x.iter().map(|x| model.decision_values(x)).collect::<Result<_>>()?;
    let positive_class = |m: usize| if n_classes == 2 { 1 } else { m };
    for m in 0..model.machines.len() {
        let dec: Vec<f64> = val_dec.iter().map(|d| d[m]).collect();
        let pos: Vec<bool> = val_y.iter().map(|&l| l == positive_class(m)).collect();
        model.machines[m].platt = Platt::fit(&dec, &pos);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tight() -> SmoParams {
        SmoParams {
            tol: 1e-10,
            max_iter: 1_000_000,
        }
    }

    #[test]
    fn two_point_problem_matches_closed_form() {
        let xs = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let y = [-1.0, 1.0];
        let gram = Kernel::linear().gram(&xs);
        let sol = smo_solve(&gram, &y, &[10.0, 10.0], None, &tight());
        assert!((sol.alpha[0] - 0.5).abs() < 1e-6 && (sol.alpha[1] - 0.5).abs() < 1e-6, "{:?}", sol.alpha);
        assert!(sol.bias.abs() < 1e-6);
        assert!(kkt_residual(&gram, &y, &[10.0, 10.0], &sol) < 1e-6);
    }

    #[test]
    fn random_separable_sets_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(6..20);
            let mut xs = Vec::new();
            let mut y = Vec::new();
            for i in 0..n {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                xs.push(vec![s * rng.gen_range(0.5..2.0), rng.gen_range(-2.0..2.0)]);
                y.push(s);
            }
            let c = vec![rng.gen_range(0.1..100.0); n];
            let gram = Kernel::linear().gram(&xs);
            let sol = smo_solve(&gram, &y, &c, None, &tight());
            assert!(kkt_residual(&gram, &y, &c, &sol) < 1e-6);
        }
    }

    #[test]
    fn warm_start_reaches_the_same_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<Vec<f64>> = (0..16).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = xs.iter().map(|x| if x[0] + 0.3 * x[1] > 0.1 { 1.0 } else { -1.0 }).collect();
        let k = Kernel { kind: KernelKind::Rbf, gamma: 0.5 };
        let gram = k.gram(&xs);
        let first = smo_solve(&gram, &y, &[0.5; 16], None, &tight());
        let cold = smo_solve(&gram, &y, &[2.0; 16], None, &tight());
        let warm = smo_solve(&gram, &y, &[2.0; 16], Some(&first.alpha), &tight());
        for (a, b) in cold.alpha.iter().zip(&warm.alpha) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(kkt_residual(&gram, &y, &[2.0; 16], &warm) < 1e-6);
    }

    #[test]
    fn kernels_are_as_defined() {
        let (a, b) = ([1.0, 2.0], [0.5, -1.0]);
        assert_eq!(Kernel::linear().eval(&a, &b), -1.5);
        let p = Kernel { kind: KernelKind::Poly, gamma: 0.5 };
        assert!((p.eval(&a, &b) - 0.25f64.powi(3)).abs() < 1e-15);
        let r = Kernel { kind: KernelKind::Rbf, gamma: 0.5 };
        assert!((r.eval(&a, &b) - (-0.5f64 * 9.25).exp()).abs() < 1e-15);
    }

    fn small_cfg() -> SvmConfig {
        SvmConfig { c_steps: 50, ..SvmConfig::default() }
    }

    #[test]
    fn toy_problem_decides_by_the_midline() {
        let xs = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let vx = vec![vec![-2.0, 0.0], vec![2.0, 0.0]];
        let m = svm_train(&xs, &[0, 1], &vx, &[0, 1], 2, &small_cfg()).unwrap();
        assert_eq!(m.predict(&[2.0, 0.0]).unwrap(), 1);
        assert_eq!(m.predict(&[-2.0, 0.0]).unwrap(), 0);
        let p = m.predict_proba(&[-2.0, 0.0]).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confident_machine_gives_high_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mk = |n: usize| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for i in 0..n {
                let c = i % 2;
                let s = if c == 0 { -1.0 } else { 1.0 };
                xs.push(vec![s + rng.gen_range(-0.6..0.6), rng.gen_range(-1.0..1.0)]);
                ys.push(c);
            }
            (xs, ys)
        };
        let (tx, ty) = mk(30);
        let (vx, vy) = mk(20);
        let m = svm_train(&tx, &ty, &vx, &vy, 2, &small_cfg()).unwrap();
        assert!(m.predict_proba(&[-4.0, 0.0]).unwrap()[0] > 0.9);
        // mirrored problem gives mirrored probabilities
        let flip = |xs: &[Vec<f64>]| xs.iter().map(|x| vec![-x[0], x[1]]).collect::<Vec<_>>();
        let flip_y = |ys: &[usize]| ys.iter().map(|&y| 1 - y).collect::<Vec<_>>();
        let mm = svm_train(&flip(&tx), &flip_y(&ty), &flip(&vx), &flip_y(&vy), 2, &small_cfg()).unwrap();
        for x in [[-1.5, 0.2], [0.3, -0.4], [2.0, 1.0]] {
            let p = m.predict_proba(&x).unwrap();
            let q = mm.predict_proba(&[-x[0], x[1]]).unwrap();
            assert!((p[0] - q[1]).abs() < 1e-5, "{p:?} vs {q:?}");
        }
    }

    #[test]
    fn balanced_weights_put_the_boundary_at_the_midpoint() {
        // nine points at x = -1, one at x = +1, symmetric in y
        let mut xs: Vec<Vec<f64>> = (-4..=4).map(|v| vec![-1.0, v as f64]).collect();
        xs.push(vec![1.0, 0.0]);
        let mut labels = vec![0usize; 9];
        labels.push(1);
        let w = balanced_weights(&labels, 2);
        assert!((w[0] - 10.0 / 18.0).abs() < 1e-15 && (w[9] - 5.0).abs() < 1e-15);
        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let c: Vec<f64> = w.iter().map(|wi| 0.01 * wi).collect();
        let gram = Kernel::linear().gram(&xs);
        let sol = smo_solve(&gram, &y, &c, None, &tight());
        let f = |p: [f64; 2]| -> f64 {
            (0..10).map(|i| sol.alpha[i] * y[i] * (xs[i][0] * p[0] + xs[i][1] * p[1])).sum::<f64>() + sol.bias
        };
        assert!(f([0.0, 0.0]).abs() < 1e-9, "{}", f([0.0, 0.0]));
        assert!(f([0.1, 0.0]) > 0.0 && f([-0.1, 0.0]) < 0.0);
        assert!(kkt_residual(&gram, &y, &c, &sol) < 1e-6);
    }

    #[test]
    fn duplicated_data_selects_the_same_hyperparameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut mk = |n: usize| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for i in 0..n {
                let c = i % 3;
                let centre = [[0.0, 3.0], [3.0, 0.0], [-3.0, -3.0]][c];
                xs.push(vec![centre[0] + rng.gen_range(-0.5..0.5), centre[1] + rng.gen_range(-0.5..0.5)]);
                ys.push(c);
            }
            (xs, ys)
        };
        let (tx, ty) = mk(18);
        let (vx, vy) = mk(9);
        let a = svm_train(&tx, &ty, &vx, &vy, 3, &small_cfg()).unwrap();
        let dx: Vec<Vec<f64>> = tx.iter().chain(&tx).cloned().collect();
        let dy: Vec<usize> = ty.iter().chain(&ty).cloned().collect();
        let b = svm_train(&dx, &dy, &vx, &vy, 3, &small_cfg()).unwrap();
        assert_eq!((a.kernel.kind, a.c), (b.kernel.kind, b.c));
        assert_eq!(a.validation_bacc, 1.0);
    }

    #[test]
    fn multiclass_probabilities_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let ys: Vec<usize> = xs.iter().map(|x| if x[0] > 0.5 { 0 } else if x[1] > 0.0 { 1 } else { 2 }).collect();
        let m = svm_train(&xs[..20], &ys[..20], &xs[20..], &ys[20..], 3, &small_cfg()).unwrap();
        assert_eq!(m.machines.len(), 3);
        for x in &xs {
            let p = m.predict_proba(x).unwrap();
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(m.predict_proba(&[1.0]), Err(Error::Geometry(_))));
    }

    #[test]
    fn empty_validation_is_a_protocol_error() {
        let xs = vec![vec![0.0], vec![1.0]];
        assert!(matches!(svm_train(&xs, &[0, 1], &[], &[], 2, &small_cfg()), Err(Error::Protocol(_))));
    }

    #[test]
    fn c_grid_is_log_uniform() {
        let g = SvmConfig::default().c_grid();
        assert_eq!(g.len(), 500);
        assert!((g[0] - 1e-5).abs() < 1e-20 && (g[499] - 1e5).abs() < 1e-9);
        let r = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-9));
    }
}
