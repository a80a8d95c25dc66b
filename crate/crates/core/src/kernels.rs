//! Kernels over the feature representations, Gram assembly, and the
//! normal-equation kernel `Ψ_N(x, y) = ∫ Φ_N(x, z) Φ_N(y, z) dτ(z)`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{invalid, shape, Error, Result};
use crate::features::{FeatureKind, FeatureVec};
use crate::hermite::LocalizedKernelSpec;
use crate::linalg::{canonicalize_columns, euclidean, orthonormality_defect};

/// Tolerance on `‖UᵀU − I‖_F` for subspace inputs.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

pub const GRASSMANN_GAMMA: f64 = 0.2;
pub const LAPLACE_ALPHA: f64 = 0.2;
pub const LAPLACE_BETA: f64 = 0.0042;
pub const GAUSSIAN_ALPHA: f64 = 0.2;
pub const GAUSSIAN_BETA: f64 = 0.12;
pub const VIDEO_RBF_GAMMA: f64 = 2.1e-7;
pub const LOCALIZED_GAMMA: f64 = 0.8;

/// A kernel together with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `exp(−γ(r − ‖U1ᵀU2‖_F²))`
    Grassmann { gamma: f64 },
    /// `exp(−α‖U1 − U2‖_F − β‖Σ1 − Σ2‖)`
    LaplaceSvd { alpha: f64, beta: f64 },
    /// `exp(−α‖U1 − U2‖_F² − β‖Σ1 − Σ2‖²)`
    GaussianSvd { alpha: f64, beta: f64 },
    /// `exp(−γ‖x − y‖²)`
    EuclideanRbf { gamma: f64 },
    /// `Φ̃_{N,q}(γ ρ(x, y))`
    Localized(LocalizedKernelSpec),
}

impl KernelSpec {
    pub fn grassmann_default() -> Self {
        Self::Grassmann { gamma: GRASSMANN_GAMMA }
    }

    pub fn laplace_default() -> Self {
        Self::LaplaceSvd { alpha: LAPLACE_ALPHA, beta: LAPLACE_BETA }
    }

    pub fn gaussian_default() -> Self {
        Self::GaussianSvd { alpha: GAUSSIAN_ALPHA, beta: GAUSSIAN_BETA }
    }

    pub fn rbf_default() -> Self {
        Self::EuclideanRbf { gamma: VIDEO_RBF_GAMMA }
    }

    pub fn localized(n: f64, q: u32, gamma: f64) -> Result<Self> {
        Ok(Self::Localized(LocalizedKernelSpec::new(n, q, gamma)?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Grassmann { .. } => "grassmann",
            Self::LaplaceSvd { .. } => "laplace",
            Self::GaussianSvd { .. } => "gaussian",
            Self::EuclideanRbf { .. } => "rbf",
            Self::Localized(_) => "localized",
        }
    }

    /// Whether the kernel accepts this representation.
    pub fn accepts(&self, kind: FeatureKind) -> bool {
        use FeatureKind::*;
        match self {
            Self::Grassmann { .. } => matches!(kind, Subspace | Grassmann),
            Self::LaplaceSvd { .. } | Self::GaussianSvd { .. } => kind == Subspace,
            Self::EuclideanRbf { .. } => matches!(kind, Pca | Flat),
            Self::Localized(_) => true,
        }
    }

    /// Value at coincident arguments.
    pub fn peak(&self) -> f64 {
        match self {
            Self::Localized(spec) => spec.eval(0.0),
            _ => 1.0,
        }
    }

    /// Evaluates the kernel with orthonormality checks on subspace inputs.
    pub fn eval(&self, x: &FeatureVec, y: &FeatureVec) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        self.eval_trusted(x, y)
    }

    fn check_point(&self, x: &FeatureVec) -> Result<()> {
        if !self.accepts(x.kind()) {
            return Err(invalid(format!(
                "{} kernel does not accept {:?} features",
                self.name(),
                x.kind()
            )));
        }
        if matches!(self, Self::Grassmann { .. } | Self::Localized(_)) {
            if let Some(u) = x.basis() {
                let defect = orthonormality_defect(u);
                if defect > ORTHONORMAL_TOL {
                    return Err(invalid(format!(
                        "basis is not orthonormal (defect {defect:.3e})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Evaluation for inputs already validated by [`check_point`](Self::check_point).
    ///
    /// Arguments are put in a canonical order first so the result is
    /// symmetric to the last bit.
    fn eval_trusted(&self, x: &FeatureVec, y: &FeatureVec) -> Result<f64> {
        let (x, y) = if x.total_cmp(y) == Ordering::Greater { (y, x) } else { (x, y) };
        match (self, x, y) {
            (Self::Grassmann { gamma }, _, _) => {
                let (u1, u2) = bases(x, y)?;
                Ok(grassmann_unchecked(u1, u2, *gamma))
            }
            (Self::LaplaceSvd { alpha, beta }, FeatureVec::Subspace(a), FeatureVec::Subspace(b)) => {
                let (du, ds) = svd_distances(&a.u, &a.s, &b.u, &b.s)?;
                Ok((-alpha * du - beta * ds).exp())
            }
            (Self::GaussianSvd { alpha, beta }, FeatureVec::Subspace(a), FeatureVec::Subspace(b)) => {
                let (du, ds) = svd_distances(&a.u, &a.s, &b.u, &b.s)?;
                Ok((-alpha * du * du - beta * ds * ds).exp())
            }
            (Self::EuclideanRbf { gamma }, _, _) => {
                let (a, b) = flats(x, y)?;
                let d = euclidean(a, b);
                Ok((-gamma * d * d).exp())
            }
            (Self::Localized(spec), _, _) => {
                let d = feature_distance(x, y)?;
                Ok(spec.eval_scaled(d))
            }
            _ => Err(invalid(format!(
                "{} kernel cannot combine {:?} and {:?}",
                self.name(),
                x.kind(),
                y.kind()
            ))),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Grassmann { gamma } => write!(f, "grassmann gamma={gamma}"),
            Self::LaplaceSvd { alpha, beta } => write!(f, "laplace alpha={alpha} beta={beta}"),
            Self::GaussianSvd { alpha, beta } => write!(f, "gaussian alpha={alpha} beta={beta}"),
            Self::EuclideanRbf { gamma } => write!(f, "rbf gamma={gamma}"),
            Self::Localized(s) => write!(f, "localized N={} q={} gamma={}", s.n(), s.q(), s.gamma()),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// Parses the [`Display`](fmt::Display) form, e.g. `localized N=8 q=18 gamma=0.8`.
    /// Omitted parameters take the table defaults.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let name = parts.next().ok_or_else(|| invalid("empty kernel spec"))?;
        let mut params = std::collections::BTreeMap::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| invalid(format!("kernel parameter `{p}` is not key=value")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| invalid(format!("kernel parameter `{k}` is not a number: `{v}`")))?;
            params.insert(k.to_ascii_lowercase(), v);
        }
        let mut take = |k: &str, default: f64| params.remove(k).unwrap_or(default);
        let spec = match name {
            "grassmann" => Self::Grassmann { gamma: take("gamma", GRASSMANN_GAMMA) },
            "laplace" => Self::LaplaceSvd { alpha: take("alpha", LAPLACE_ALPHA), beta: take("beta", LAPLACE_BETA) },
            "gaussian" => Self::GaussianSvd { alpha: take("alpha", GAUSSIAN_ALPHA), beta: take("beta", GAUSSIAN_BETA) },
            "rbf" => Self::EuclideanRbf { gamma: take("gamma", VIDEO_RBF_GAMMA) },
            "localized" => {
                let n = take("n", 8.0);
                let q = take("q", 18.0);
                let gamma = take("gamma", LOCALIZED_GAMMA);
                if q < 1.0 || q.fract() != 0.0 || q > u32::MAX as f64 {
                    return Err(invalid(format!("localized kernel q must be a positive integer, got {q}")));
                }
                Self::localized(n, q as u32, gamma)?
            }
            other => return Err(invalid(format!("unknown kernel `{other}`"))),
        };
        if let Some(k) = params.keys().next() {
            return Err(invalid(format!("unknown parameter `{k}` for {name} kernel")));
        }
        match spec {
            Self::Grassmann { gamma } | Self::EuclideanRbf { gamma } if !(gamma > 0.0) => {
                Err(invalid("kernel gamma must be positive"))
            }
            Self::LaplaceSvd { alpha, beta } | Self::GaussianSvd { alpha, beta } if !(alpha >= 0.0 && beta >= 0.0) => {
                Err(invalid("kernel alpha and beta must be nonnegative"))
            }
            spec => Ok(spec),
        }
    }
}

fn bases<'a>(x: &'a FeatureVec, y: &'a FeatureVec) -> Result<(&'a DMatrix<f64>, &'a DMatrix<f64>)> {
    match (x.basis(), y.basis()) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(invalid("expected subspace features")),
    }
}

fn flats<'a>(x: &'a FeatureVec, y: &'a FeatureVec) -> Result<(&'a [f64], &'a [f64])> {
    match (x.coords(), y.coords()) {
        (Some(a), Some(b)) if a.len() == b.len() => Ok((a, b)),
        (Some(a), Some(b)) => Err(shape(format!("vector lengths {} and {}", a.len(), b.len()))),
        _ => Err(invalid("expected vector features")),
    }
}

/// Distance used by the localized kernel: Euclidean for vectors, the
/// projection (chordal) distance `√(r − ‖U1ᵀU2‖_F²)` for subspaces.
pub fn feature_distance(x: &FeatureVec, y: &FeatureVec) -> Result<f64> {
    if let (Some(a), Some(b)) = (x.coords(), y.coords()) {
        if a.len() != b.len() {
            return Err(shape(format!("vector lengths {} and {}", a.len(), b.len())));
        }
        return Ok(euclidean(a, b));
    }
    let (u1, u2) = bases(x, y)?;
    if u1.shape() != u2.shape() {
        return Err(shape(format!("bases {:?} and {:?}", u1.shape(), u2.shape())));
    }
    Ok(projection_residual(u1, u2).max(0.0).sqrt())
}

/// `r − ‖U1ᵀU2‖_F²`.
/// `r − ‖U1ᵀU2‖_F²`, evaluated as `‖U1 − U2 U2ᵀU1‖_F²` to avoid cancellation.
fn projection_residual(u1: &DMatrix<f64>, u2: &DMatrix<f64>) -> f64 {
    (u1 - u2 * (u2.transpose() * u1)).norm_squared()
}

fn grassmann_unchecked(u1: &DMatrix<f64>, u2: &DMatrix<f64>, gamma: f64) -> f64 {
    (-gamma * projection_residual(u1, u2)).exp()
}

/// Grassmann projection kernel on two orthonormal `n × r` bases.
pub fn grassmann_kernel(u1: &DMatrix<f64>, u2: &DMatrix<f64>, gamma: f64) -> Result<f64> {
    if u1.shape() != u2.shape() {
        return Err(shape(format!("bases {:?} and {:?}", u1.shape(), u2.shape())));
    }
    for u in [u1, u2] {
        let defect = orthonormality_defect(u);
        if defect > ORTHONORMAL_TOL {
            return Err(invalid(format!("basis is not orthonormal (defect {defect:.3e})")));
        }
    }
    Ok(grassmann_unchecked(u1, u2, gamma))
}

fn svd_distances(
    u1: &DMatrix<f64>,
    s1: &nalgebra::DVector<f64>,
    u2: &DMatrix<f64>,
    s2: &nalgebra::DVector<f64>,
) -> Result<(f64, f64)> {
    if u1.shape() != u2.shape() || s1.len() != s2.len() {
        return Err(shape(format!(
            "SVD features {:?}/{} and {:?}/{}",
            u1.shape(),
            s1.len(),
            u2.shape(),
            s2.len()
        )));
    }
    Ok(((u1 - u2).norm(), (s1 - s2).norm()))
}

fn canonical(u: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = u.clone();
    canonicalize_columns(&mut c);
    c
}

/// Laplace kernel on singular vectors and values; columns are sign-canonicalized first.
pub fn laplace_svd_kernel(
    u1: &DMatrix<f64>,
    s1: &nalgebra::DVector<f64>,
    u2: &DMatrix<f64>,
    s2: &nalgebra::DVector<f64>,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let (du, ds) = svd_distances(&canonical(u1), s1, &canonical(u2), s2)?;
    Ok((-alpha * du - beta * ds).exp())
}

/// Gaussian kernel on singular vectors and values; columns are sign-canonicalized first.
pub fn gaussian_svd_kernel(
    u1: &DMatrix<f64>,
    s1: &nalgebra::DVector<f64>,
    u2: &DMatrix<f64>,
    s2: &nalgebra::DVector<f64>,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let (du, ds) = svd_distances(&canonical(u1), s1, &canonical(u2), s2)?;
    Ok((-alpha * du * du - beta * ds * ds).exp())
}

pub fn euclidean_rbf(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(shape(format!("vector lengths {} and {}", x.len(), y.len())));
    }
    let d = euclidean(x, y);
    Ok((-gamma * d * d).exp())
}

pub fn localized_distance_kernel(spec: &LocalizedKernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(shape(format!("vector lengths {} and {}", x.len(), y.len())));
    }
    Ok(spec.eval_scaled(euclidean(x, y)))
}

/// Symmetric kernel matrix over a point set.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub spec: KernelSpec,
    pub point_ids: Vec<usize>,
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Principal submatrix on the given row/column indices.
    pub fn select(&self, idx: &[usize]) -> GramMatrix {
        let m = idx.len();
        let entries = DMatrix::from_fn(m, m, |i, j| self.entries[(idx[i], idx[j])]);
        GramMatrix {
            entries,
            spec: self.spec.clone(),
            point_ids: idx.iter().map(|&i| self.point_ids[i]).collect(),
        }
    }
}

fn validate_points(spec: &KernelSpec, points: &[FeatureVec]) -> Result<()> {
    if let Some(first) = points.first() {
        let kind = first.kind();
        if points.iter().any(|p| p.kind() != kind) {
            return Err(invalid("gram: mixed feature representations"));
        }
    }
    points.iter().try_for_each(|p| spec.check_point(p))
}

/// Assembles the Gram matrix, computing the upper triangle in parallel.
pub fn gram(spec: &KernelSpec, points: &[FeatureVec]) -> Result<GramMatrix> {
    validate_points(spec, points)?;
    let m = points.len();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            (i..m)
                .map(|j| spec.eval_trusted(&points[i], &points[j]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries = DMatrix::zeros(m, m);
    for (i, row) in rows.into_iter().enumerate() {
        for (offset, v) in row.into_iter().enumerate() {
            let j = i + offset;
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(GramMatrix { entries, spec: spec.clone(), point_ids: (0..m).collect() })
}

/// Rectangular kernel matrix `K[i, j] = k(rows[i], cols[j])`.
pub fn cross_gram(spec: &KernelSpec, rows: &[FeatureVec], cols: &[FeatureVec]) -> Result<DMatrix<f64>> {
    validate_points(spec, rows)?;
    validate_points(spec, cols)?;
    if let (Some(a), Some(b)) = (rows.first(), cols.first()) {
        if a.kind() != b.kind() {
            return Err(invalid("cross_gram: mixed feature representations"));
        }
    }
    let data: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|r| cols.iter().map(|c| spec.eval_trusted(r, c)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| data[i][j]))
}

/// Weighted point set standing in for the measure `τ = f_0 dμ*`.
#[derive(Debug, Clone)]
pub struct DiscreteQuadrature {
    pub nodes: Vec<FeatureVec>,
    pub weights: Vec<f64>,
    pub density: Vec<f64>,
}

impl DiscreteQuadrature {
    pub fn new(nodes: Vec<FeatureVec>, weights: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(invalid("quadrature: no nodes"));
        }
        if nodes.len() != weights.len() || nodes.len() != density.len() {
            return Err(shape(format!(
                "quadrature: {} nodes, {} weights, {} density values",
                nodes.len(),
                weights.len(),
                density.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(invalid("quadrature: weights must be positive and finite"));
        }
        if density.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(invalid("quadrature: density must be positive"));
        }
        Ok(Self { nodes, weights, density })
    }

    /// Unit density with the given weights.
    pub fn uniform_density(nodes: Vec<FeatureVec>, weights: Vec<f64>) -> Result<Self> {
        let n = nodes.len();
        Self::new(nodes, weights, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Kernel values `k(x, z)` at every node.
    pub fn kernel_column(&self, spec: &KernelSpec, x: &FeatureVec) -> Result<Vec<f64>> {
        self.nodes.iter().map(|z| spec.eval(x, z)).collect()
    }
}

/// `Ψ_N(x, y) ≈ Σ_z w_z f_0(z) k(x, z) k(y, z)`.
pub fn psi_kernel(spec: &KernelSpec, quad: &DiscreteQuadrature, x: &FeatureVec, y: &FeatureVec) -> Result<f64> {
    if quad.is_empty() {
        return Err(Error::InvalidInput("psi_kernel: empty quadrature".into()));
    }
    let kx = quad.kernel_column(spec, x)?;
    let ky = quad.kernel_column(spec, y)?;
    Ok(psi_from_columns(quad, &kx, &ky))
}

pub(crate) fn psi_from_columns(quad: &DiscreteQuadrature, kx: &[f64], ky: &[f64]) -> f64 {
    quad.weights
        .iter()
        .zip(&quad.density)
        .zip(kx.iter().zip(ky))
        .map(|((w, f0), (a, b))| (w * f0) * (a * b))
        .sum()
}
