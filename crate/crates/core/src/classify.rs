//! Kernel SVM trained by pairwise dual decomposition, one-vs-rest multiclass
//! wrapping, k-nearest-neighbor voting, and the class-indicator label function.
//!
//! Training works on a precomputed [`GramMatrix`] so any kernel from
//! [`crate::kernels`] can be plugged in. Prediction takes a row of kernel
//! values against the training set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, shape, Error, Result};
use crate::kernels::{GramMatrix, KernelSpec};

/// Stopping tolerance on the maximal KKT violation.
pub const KKT_TOL: f64 = 1e-3;
/// Cap on the number of pair updates.
pub const MAX_PAIR_UPDATES: usize = 1_000_000;
pub const DEFAULT_C: f64 = 1.0;
const TAU: f64 = 1e-12;

/// Binary soft-margin SVM. Decision value `Σ coeff_i k(x, sv_i) + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// `α_i y_i` for each support vector.
    pub support_coeffs: Vec<f64>,
    /// Indices of the support vectors into the training set.
    pub support_ids: Vec<usize>,
    pub bias: f64,
    pub spec: KernelSpec,
    pub c: f64,
    /// Maximal KKT violation at return.
    pub kkt_violation: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl SvmModel {
    /// Decision value from kernel values against the support vectors, in `support_ids` order.
    pub fn decision(&self, gram_row: &[f64]) -> Result<f64> {
        svm_predict(self, gram_row)
    }

    /// Decision value from kernel values against the whole training set.
    pub fn decision_full(&self, train_row: &[f64]) -> Result<f64> {
        let mut acc = self.bias;
        for (&id, &a) in self.support_ids.iter().zip(&self.support_coeffs) {
            let k = train_row.get(id).ok_or_else(|| {
                shape(format!("kernel row of length {} lacks support vector {id}", train_row.len()))
            })?;
            acc += a * k;
        }
        Ok(acc)
    }

    /// Writes the plain-text model format.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "svm")?;
        writeln!(out, "kernel {}", self.spec)?;
        writeln!(out, "C {}", self.c)?;
        writeln!(out, "bias {}", self.bias)?;
        writeln!(out, "support {}", self.support_ids.len())?;
        for (id, a) in self.support_ids.iter().zip(&self.support_coeffs) {
            writeln!(out, "{id} {a}")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().map(|(i, l)| l.map(|l| (i + 1, l)));
        load_binary(&mut lines)
    }
}

type NumberedLines<'a> = dyn Iterator<Item = std::io::Result<(usize, String)>> + 'a;

fn next_line(lines: &mut NumberedLines<'_>) -> Result<(usize, String)> {
    while let Some(item) = lines.next() {
        let (n, l) = item?;
        if !l.trim().is_empty() {
            return Ok((n, l.trim().to_string()));
        }
    }
    Err(Error::Parse { line: 0, msg: "unexpected end of model file".into() })
}

fn field<'a>(line: &'a str, n: usize, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .filter(|rest| rest.starts_with(' '))
        .map(str::trim)
        .ok_or_else(|| Error::Parse { line: n, msg: format!("expected `{key} ...`, found `{line}`") })
}

fn number<T: std::str::FromStr>(s: &str, n: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Parse { line: n, msg: format!("not a number: `{s}`") })
}

fn load_binary(lines: &mut NumberedLines<'_>) -> Result<SvmModel> {
    let (n, l) = next_line(lines)?;
    if l != "svm" {
        return Err(Error::Parse { line: n, msg: format!("expected `svm`, found `{l}`") });
    }
    let (n, l) = next_line(lines)?;
    let spec: KernelSpec = field(&l, n, "kernel")?
        .parse()
        .map_err(|e: Error| Error::Parse { line: n, msg: e.to_string() })?;
    let (n, l) = next_line(lines)?;
    let c: f64 = number(field(&l, n, "C")?, n)?;
    let (n, l) = next_line(lines)?;
    let bias: f64 = number(field(&l, n, "bias")?, n)?;
    let (n, l) = next_line(lines)?;
    let count: usize = number(field(&l, n, "support")?, n)?;
    let mut support_ids = Vec::with_capacity(count);
    let mut support_coeffs = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, l) = next_line(lines)?;
        let mut it = l.split_whitespace();
        let (Some(id), Some(a), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Parse { line: n, msg: format!("expected `index coefficient`, found `{l}`") });
        };
        support_ids.push(number(id, n)?);
        support_coeffs.push(number(a, n)?);
    }
    Ok(SvmModel {
        support_coeffs,
        support_ids,
        bias,
        spec,
        c,
        kkt_violation: 0.0,
        iterations: 0,
        warnings: Vec::new(),
    })
}

/// Records a warning when the Gram matrix is markedly indefinite.
fn indefiniteness_warning(gram: &GramMatrix) -> Option<String> {
    let m = gram.len() as f64;
    let min_eig = gram.min_eigenvalue();
    let limit = -1e-3 * gram.trace().abs() / m;
    (min_eig < limit).then(|| {
        let msg = format!("Gram matrix is indefinite (min eigenvalue {min_eig:.3e}); training continues");
        warn!("{msg}");
        msg
    })
}

/// Solves the soft-margin dual
/// `min ½ αᵀQα − Σα  s.t. 0 ≤ α ≤ C, Σ y_i α_i = 0`, `Q_ij = y_i y_j K_ij`,
/// by updating the maximal violating pair until the violation drops below
/// [`KKT_TOL`].
pub fn svm_train_binary(gram: &GramMatrix, labels: &[f64], c: f64) -> Result<SvmModel> {
    let m = gram.len();
    if labels.len() != m {
        return Err(shape(format!("{} labels for a {m}x{m} Gram matrix", labels.len())));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(invalid(format!("C must be positive, got {c}")));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(invalid("labels must be +1 or -1"));
    }
    if !labels.contains(&1.0) || !labels.contains(&-1.0) {
        return Err(invalid("training labels contain a single class"));
    }
    let k = &gram.entries;
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("Gram matrix has non-finite entries".into()));
    }
    let mut warnings: Vec<String> = indefiniteness_warning(gram).into_iter().collect();

    let y = labels;
    let q = |i: usize, j: usize| y[i] * y[j] * k[(i, j)];
    let mut alpha = vec![0.0; m];
    let mut grad = vec![-1.0; m];
    let mut iterations = 0;
    let violation = loop {
        let (i, j, gap) = select_pair(&alpha, &grad, y, c);
        if gap < KKT_TOL || iterations >= MAX_PAIR_UPDATES {
            if gap >= KKT_TOL {
                let msg = format!("pair-update cap reached with KKT violation {gap:.3e}");
                warn!("{msg}");
                warnings.push(msg);
            }
            break gap;
        }
        iterations += 1;
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qii = q(i, i);
        let qjj = q(j, j);
        let qij = q(i, j);
        if y[i] != y[j] {
            let quad = positive(qii + qjj + 2.0 * qij);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = positive(qii + qjj - 2.0 * qij);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    };

    let bias = -rho(&alpha, &grad, y, c);
    let mut support_ids = Vec::new();
    let mut support_coeffs = Vec::new();
    for (t, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            support_ids.push(t);
            support_coeffs.push(a * y[t]);
        }
    }
    Ok(SvmModel {
        support_coeffs,
        support_ids,
        bias,
        spec: gram.spec.clone(),
        c,
        kkt_violation: violation,
        iterations,
        warnings,
    })
}

fn positive(quad: f64) -> f64 {
    if quad > 0.0 {
        quad
    } else {
        TAU
    }
}

fn in_up(a: f64, y: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(a: f64, y: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Maximal violating pair `(i, j)` and the gap `m(α) − M(α)`.
fn select_pair(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> (usize, usize, f64) {
    let mut i = usize::MAX;
    let mut up = f64::NEG_INFINITY;
    let mut j = usize::MAX;
    let mut low = f64::INFINITY;
    for t in 0..alpha.len() {
        let v = -y[t] * grad[t];
        if in_up(alpha[t], y[t], c) && v > up {
            up = v;
            i = t;
        }
        if in_low(alpha[t], y[t], c) && v < low {
            low = v;
            j = t;
        }
    }
    if i == usize::MAX || j == usize::MAX {
        return (0, 0, 0.0);
    }
    (i, j, up - low)
}

fn rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        0.5 * (ub + lb)
    }
}

/// `Σ coeff_i · gram_row[i] + bias`.
pub fn svm_predict(model: &SvmModel, gram_row: &[f64]) -> Result<f64> {
    if gram_row.len() != model.support_coeffs.len() {
        return Err(shape(format!(
            "kernel row of length {} for {} support vectors",
            gram_row.len(),
            model.support_coeffs.len()
        )));
    }
    Ok(model.bias + model.support_coeffs.iter().zip(gram_row).map(|(a, k)| a * k).sum::<f64>())
}

/// One binary model per class, trained class-vs-rest.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassModel {
    pub models: Vec<SvmModel>,
    /// Class label of each model, ascending.
    pub classes: Vec<usize>,
}

pub fn one_vs_rest_train(gram: &GramMatrix, labels: &[usize], c: f64) -> Result<MulticlassModel> {
    if labels.len() != gram.len() {
        return Err(shape(format!("{} labels for {} training points", labels.len(), gram.len())));
    }
    let classes: Vec<usize> = {
        let mut v = labels.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    if classes.len() < 2 {
        return Err(invalid("one-vs-rest training needs at least two classes"));
    }
    let models = classes
        .iter()
        .map(|&cls| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == cls { 1.0 } else { -1.0 }).collect();
            svm_train_binary(gram, &y, c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MulticlassModel { models, classes })
}

impl MulticlassModel {
    /// Decision values for one point given its kernel values against the training set.
    pub fn decisions(&self, train_row: &[f64]) -> Result<Vec<f64>> {
        self.models.iter().map(|m| m.decision_full(train_row)).collect()
    }

    pub fn dump<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "multiclass {}", self.models.len())?;
        for (cls, m) in self.classes.iter().zip(&self.models) {
            writeln!(out, "class {cls}")?;
            m.dump(&mut out)?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().map(|(i, l)| l.map(|l| (i + 1, l)));
        let (n, l) = next_line(&mut lines)?;
        let count: usize = number(field(&l, n, "multiclass")?, n)?;
        let mut classes = Vec::with_capacity(count);
        let mut models = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, l) = next_line(&mut lines)?;
            classes.push(number(field(&l, n, "class")?, n)?);
            models.push(load_binary(&mut lines)?);
        }
        Ok(Self { models, classes })
    }
}

/// Class with the largest decision value; ties go to the lowest class.
pub fn one_vs_rest_predict(model: &MulticlassModel, train_row: &[f64]) -> Result<usize> {
    let d = model.decisions(train_row)?;
    let mut best = 0;
    for (i, v) in d.iter().enumerate() {
        if *v > d[best] {
            best = i;
        }
    }
    Ok(model.classes[best])
}

/// Predicts every row of a test-versus-train kernel matrix.
pub fn one_vs_rest_predict_batch(model: &MulticlassModel, cross: &DMatrix<f64>) -> Result<Vec<usize>> {
    (0..cross.nrows())
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = cross.row(i).iter().copied().collect();
            one_vs_rest_predict(model, &row)
        })
        .collect()
}

/// Majority vote among the `k` nearest training points.
///
/// Equidistant neighbors are ordered by training index. Vote ties go to the
/// label with the smaller mean neighbor distance, then to the lowest label.
pub fn knn_predict<T, F>(train: &[T], labels: &[usize], x: &T, k: usize, metric: F) -> Result<usize>
where
    F: Fn(&T, &T) -> f64,
{
    if train.is_empty() {
        return Err(invalid("knn: empty training set"));
    }
    if labels.len() != train.len() {
        return Err(shape(format!("knn: {} labels for {} training points", labels.len(), train.len())));
    }
    if k == 0 || k > train.len() {
        return Err(invalid(format!("knn: k={k} with {} training points", train.len())));
    }
    let mut dist: Vec<(f64, usize)> = train.iter().enumerate().map(|(i, t)| (metric(x, t), i)).collect();
    if dist.iter().any(|(d, _)| d.is_nan()) {
        return Err(Error::Numerical("knn: metric returned NaN".into()));
    }
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for &(d, i) in &dist[..k] {
        let e = votes.entry(labels[i]).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d;
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for (&label, &(count, total)) in &votes {
        let mean = total / count as f64;
        let better = match best {
            None => true,
            Some((_, bc, bm)) => count > bc || (count == bc && mean < bm),
        };
        if better {
            best = Some((label, count, mean));
        }
    }
    Ok(best.map(|b| b.0).unwrap_or(labels[dist[0].1]))
}

/// Parallel [`knn_predict`] over a batch of queries.
pub fn knn_predict_batch<T, F>(train: &[T], labels: &[usize], queries: &[T], k: usize, metric: F) -> Result<Vec<usize>>
where
    T: Sync,
    F: Fn(&T, &T) -> f64 + Sync,
{
    queries.par_iter().map(|x| knn_predict(train, labels, x, k, &metric)).collect()
}

/// Class indicators `c_i(x) ∈ {0, 1}` over a labeled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFunction {
    pub classes: Vec<usize>,
    /// `indicators[s][i] = 1` iff sample `s` has class `classes[i]`.
    pub indicators: Vec<Vec<u8>>,
}

impl LabelFunction {
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut classes = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let indicators = labels
            .iter()
            .map(|l| classes.iter().map(|c| u8::from(c == l)).collect())
            .collect();
        Self { classes, indicators }
    }

    /// Class whose indicator is 1 (argmax; the first class on ties).
    pub fn label(&self, sample: usize) -> Option<usize> {
        let ind = self.indicators.get(sample)?;
        let mut best = 0;
        for (i, v) in ind.iter().enumerate() {
            if *v > ind[best] {
                best = i;
            }
        }
        self.classes.get(best).copied()
    }

    /// Every sample has exactly one active indicator.
    pub fn is_consistent(&self) -> bool {
        self.indicators.iter().all(|row| row.iter().filter(|v| **v == 1).count() == 1)
    }
}

/// Short human-readable summary of a trained binary model.
pub fn describe(model: &SvmModel) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{} support vectors, bias {:.6}, KKT violation {:.2e}, {} updates",
        model.support_ids.len(),
        model.bias,
        model.kkt_violation,
        model.iterations
    );
    s
}
