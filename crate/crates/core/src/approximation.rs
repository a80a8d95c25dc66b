//! Approximation from the span of kernel translates `{Φ_N(·, y_j)}`.
//!
//! Two minimizers are provided: the empirical risk minimizer, which for a
//! well-separated node set interpolates the data, and the theoretical
//! least-squares minimizer, whose normal equations involve
//! `Ψ_N(x, y) = ∫ Φ_N(x, z) Φ_N(y, z) dτ(z)`. Both measures enter only through
//! a [`DiscreteQuadrature`]. The remaining functions are diagnostics for the
//! pointwise error behaviour: node separation, distance to the nearest node,
//! and diagonal dominance of the collocation matrix.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, shape, Error, Result};
use crate::features::FeatureVec;
use crate::kernels::{cross_gram, feature_distance, gram, DiscreteQuadrature, KernelSpec};
use crate::linalg::solve_checked;

const SOLVE_HINT: &str =
    "collocation matrix is too ill-conditioned; increase N or use nodes with a wider minimal separation";

/// Fitted coefficients on a node set.
#[derive(Debug, Clone)]
pub struct CollocationModel {
    pub nodes: Vec<FeatureVec>,
    pub coeffs: DVector<f64>,
    pub spec: KernelSpec,
    /// Minimal separation of the nodes (infinite for a single node).
    pub eta: f64,
    /// `max_k Σ_{j≠k} |A_jk| / A_kk` of the solved system matrix.
    pub dominance_ratio: f64,
    /// One-norm condition estimate of the solved system.
    pub condition: f64,
}

impl CollocationModel {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `η̃ = min(1, η/3)`.
    pub fn eta_tilde(&self) -> f64 {
        eta_tilde(self.eta)
    }

    /// `Σ_k a_k Φ(x, y_k)`.
    pub fn evaluate(&self, x: &FeatureVec) -> Result<f64> {
        evaluate(self, x)
    }
}

pub fn eta_tilde(eta: f64) -> f64 {
    (eta / 3.0).min(1.0)
}

/// Smallest pairwise distance.
pub fn minimal_separation<T, F>(points: &[T], metric: F) -> Result<f64>
where
    F: Fn(&T, &T) -> f64,
{
    if points.len() < 2 {
        return Err(invalid("minimal_separation needs at least two points"));
    }
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(metric(&points[i], &points[j]));
        }
    }
    Ok(best)
}

fn node_separation(nodes: &[FeatureVec]) -> Result<f64> {
    if nodes.len() < 2 {
        return Ok(f64::INFINITY);
    }
    let mut best = f64::INFINITY;
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            best = best.min(feature_distance(&nodes[i], &nodes[j])?);
        }
    }
    Ok(best)
}

fn dominance_of(matrix: &DMatrix<f64>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..matrix.nrows() {
        let diag = matrix[(k, k)];
        if diag == 0.0 {
            return Err(Error::Numerical(format!("zero diagonal entry at node {k}")));
        }
        let off: f64 = (0..matrix.ncols()).filter(|&j| j != k).map(|j| matrix[(j, k)].abs()).sum();
        worst = worst.max(off / diag.abs());
    }
    Ok(worst)
}

/// Diagonal-dominance ratio of the collocation matrix on `nodes`.
pub fn dominance_diagnostic(spec: &KernelSpec, nodes: &[FeatureVec]) -> Result<f64> {
    if nodes.len() < 2 {
        return Err(invalid("dominance_diagnostic needs at least two nodes"));
    }
    dominance_of(&gram(spec, nodes)?.entries)
}

/// Solves `Σ_k a_k Φ(y_j, y_k) = f_j` for the interpolating coefficients.
pub fn fit_empirical(spec: &KernelSpec, nodes: &[FeatureVec], values: &[f64]) -> Result<CollocationModel> {
    if nodes.is_empty() {
        return Err(invalid("fit_empirical: no nodes"));
    }
    if nodes.len() != values.len() {
        return Err(shape(format!("fit_empirical: {} nodes but {} values", nodes.len(), values.len())));
    }
    let eta = node_separation(nodes)?;
    if eta == 0.0 {
        return Err(invalid("fit_empirical: nodes must be distinct"));
    }
    let g = gram(spec, nodes)?;
    let rhs = DVector::from_column_slice(values);
    let (coeffs, condition) = solve_checked(&g.entries, &rhs, SOLVE_HINT)?;
    Ok(CollocationModel {
        nodes: nodes.to_vec(),
        coeffs,
        spec: spec.clone(),
        eta,
        dominance_ratio: dominance_of(&g.entries)?,
        condition,
    })
}

fn weighted_columns(
    spec: &KernelSpec,
    nodes: &[FeatureVec],
    quad: &DiscreteQuadrature,
) -> Result<DMatrix<f64>> {
    if quad.is_empty() {
        return Err(invalid("empty quadrature"));
    }
    cross_gram(spec, nodes, &quad.nodes)
}

/// Solves the normal equations `Σ_ℓ a_ℓ Ψ_N(y_ℓ, y_j) = σ_N(F f_0)(y_j)`.
///
/// `target` holds `F` at the quadrature nodes; the density comes from `quad`.
pub fn fit_theoretical(
    spec: &KernelSpec,
    nodes: &[FeatureVec],
    target: &[f64],
    quad: &DiscreteQuadrature,
) -> Result<CollocationModel> {
    if nodes.is_empty() {
        return Err(invalid("fit_theoretical: no nodes"));
    }
    if target.len() != quad.len() {
        return Err(shape(format!(
            "fit_theoretical: {} target values for {} quadrature nodes",
            target.len(),
            quad.len()
        )));
    }
    let k = weighted_columns(spec, nodes, quad)?;
    let tau: Vec<f64> = quad.weights.iter().zip(&quad.density).map(|(w, f0)| w * f0).collect();
    let m = nodes.len();
    let mut psi = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v: f64 = (0..quad.len()).map(|z| tau[z] * (k[(i, z)] * k[(j, z)])).sum();
            psi[(i, j)] = v;
            psi[(j, i)] = v;
        }
    }
    let rhs = DVector::from_fn(m, |j, _| (0..quad.len()).map(|z| quad.weights[z] * (target[z] * quad.density[z]) * k[(j, z)]).sum());
    let (coeffs, condition) = solve_checked(&psi, &rhs, SOLVE_HINT)?;
    Ok(CollocationModel {
        nodes: nodes.to_vec(),
        coeffs,
        spec: spec.clone(),
        eta: node_separation(nodes)?,
        dominance_ratio: dominance_of(&psi)?,
        condition,
    })
}

/// Discretized `σ_N(f)(x) = Σ_z w_z f(z) Φ(x, z)`.
pub fn sigma_n(spec: &KernelSpec, f_values: &[f64], quad: &DiscreteQuadrature, x: &FeatureVec) -> Result<f64> {
    if f_values.len() != quad.len() {
        return Err(shape(format!("sigma_n: {} values for {} quadrature nodes", f_values.len(), quad.len())));
    }
    let col = quad.kernel_column(spec, x)?;
    Ok(quad.weights.iter().zip(f_values).zip(&col).map(|((w, f), k)| w * f * k).sum())
}

pub fn evaluate(model: &CollocationModel, x: &FeatureVec) -> Result<f64> {
    let mut acc = 0.0;
    for (a, y) in model.coeffs.iter().zip(&model.nodes) {
        acc += a * model.spec.eval(x, y)?;
    }
    Ok(acc)
}

/// Evaluates the model at many points in parallel.
pub fn evaluate_many(model: &CollocationModel, xs: &[FeatureVec]) -> Result<Vec<f64>> {
    xs.par_iter().map(|x| evaluate(model, x)).collect()
}

/// Per-probe distance to the node set and model error, sorted by distance.
#[derive(Debug, Clone, Default)]
pub struct ErrorProfile {
    /// Index of each row into the caller's probe list.
    pub probe_index: Vec<usize>,
    pub delta: Vec<f64>,
    pub abs_error: Vec<f64>,
    pub model_value: Vec<f64>,
    /// Nearest node (lowest index among equidistant nodes).
    pub nearest: Vec<usize>,
    /// True when another node is equally near.
    pub boundary: Vec<bool>,
}

impl ErrorProfile {
    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    /// Largest `|model|` over probes with `δ(x) > threshold`.
    pub fn sup_model_beyond(&self, threshold: f64) -> Option<f64> {
        self.delta
            .iter()
            .zip(&self.model_value)
            .filter(|(d, _)| **d > threshold)
            .map(|(_, v)| v.abs())
            .reduce(f64::max)
    }

    /// Largest error over probes with `δ(x) ≤ threshold`.
    pub fn sup_error_within(&self, threshold: f64) -> Option<f64> {
        self.delta
            .iter()
            .zip(&self.abs_error)
            .filter(|(d, _)| **d <= threshold)
            .map(|(_, e)| *e)
            .reduce(f64::max)
    }

    pub fn sup_error(&self) -> f64 {
        self.abs_error.iter().copied().fold(0.0, f64::max)
    }

    /// CSV with header `delta,abs_error,model_value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "delta,abs_error,model_value")?;
        for i in 0..self.len() {
            writeln!(out, "{},{},{}", self.delta[i], self.abs_error[i], self.model_value[i])?;
        }
        Ok(())
    }
}

/// Builds the error profile of `model` against `truth` at `probes`.
///
/// `metric` is the distance used for `δ(x) = min_j ρ(x, y_j)`.
pub fn error_profile<F>(model: &CollocationModel, truth: &[f64], probes: &[FeatureVec], metric: F) -> Result<ErrorProfile>
where
    F: Fn(&FeatureVec, &FeatureVec) -> f64 + Sync,
{
    if probes.is_empty() {
        return Err(invalid("error_profile: no probes"));
    }
    if truth.len() != probes.len() {
        return Err(shape(format!("error_profile: {} truth values for {} probes", truth.len(), probes.len())));
    }
    let rows: Vec<(usize, f64, usize, bool, f64)> = probes
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut best = f64::INFINITY;
            let mut nearest = 0;
            let mut tie = false;
            for (j, y) in model.nodes.iter().enumerate() {
                let d = metric(x, y);
                if d < best {
                    best = d;
                    nearest = j;
                    tie = false;
                } else if d == best {
                    tie = true;
                }
            }
            evaluate(model, x).map(|v| (i, best, nearest, tie, v))
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a].1.total_cmp(&rows[b].1).then(a.cmp(&b)));
    let mut p = ErrorProfile::default();
    for idx in order {
        let (i, delta, nearest, tie, value) = rows[idx];
        p.probe_index.push(i);
        p.delta.push(delta);
        p.abs_error.push((value - truth[i]).abs());
        p.model_value.push(value);
        p.nearest.push(nearest);
        p.boundary.push(tie);
    }
    Ok(p)
}

/// Default metric: the kernel's own feature distance.
pub fn default_metric(x: &FeatureVec, y: &FeatureVec) -> f64 {
    feature_distance(x, y).unwrap_or(f64::INFINITY)
}
