//! Spectrogram preprocessing and the feature representations built on it:
//! SVD subspace features, PCA coordinates, and ARMA/Grassmann embeddings.

use std::cmp::Ordering;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, shape, Error, Result};
use crate::linalg::{canonicalize_columns, orthonormal_basis, orthonormality_defect, thin_svd};

/// Floor applied to magnitudes before taking decibels.
pub const DB_FLOOR: f64 = 1e-12;
/// Number of histogram bins used by the Yen threshold.
pub const YEN_BINS: usize = 256;
/// Default PCA dimension.
pub const DEFAULT_PCA_DIM: usize = 30;

/// Preprocessing state of a spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrogramState {
    Magnitude,
    LogDb,
    Thresholded,
    Binary,
    UnitNormalized,
}

/// Optional label and subject attached to a sample.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleMeta {
    pub label: Option<usize>,
    pub subject: Option<String>,
}

/// Real matrix of Doppler bins × time frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: DMatrix<f64>,
    state: SpectrogramState,
    /// Retained entries after thresholding.
    support: Option<DMatrix<bool>>,
    /// Threshold in dB, set by [`log_threshold`].
    threshold_db: Option<f64>,
    pub meta: SampleMeta,
}

impl Spectrogram {
    pub fn from_magnitude(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(invalid("spectrogram must have at least one bin and one frame"));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("magnitudes must be finite and nonnegative"));
        }
        Ok(Self {
            data,
            state: SpectrogramState::Magnitude,
            support: None,
            threshold_db: None,
            meta: SampleMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: SampleMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn state(&self) -> SpectrogramState {
        self.state
    }

    pub fn threshold_db(&self) -> Option<f64> {
        self.threshold_db
    }

    pub fn bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    /// Number of exactly-zero entries.
    pub fn zero_count(&self) -> usize {
        self.data.iter().filter(|v| **v == 0.0).count()
    }
}

/// Short-time Fourier transform magnitude.
///
/// Column `t` is `|DFT(window · signal[t·hop .. t·hop + window.len()])|`
/// with the frame zero-padded to `fft_size`. Row `k` is DFT bin `k`.
pub fn stft(signal: &[Complex64], window: &[f64], hop: usize, fft_size: usize) -> Result<Spectrogram> {
    if hop == 0 {
        return Err(invalid("stft: hop must be at least 1"));
    }
    if window.is_empty() || window.len() > fft_size {
        return Err(invalid(format!(
            "stft: window length {} must be in 1..={fft_size}",
            window.len()
        )));
    }
    if signal.len() < window.len() {
        return Err(invalid(format!(
            "stft: signal of length {} is shorter than the window ({})",
            signal.len(),
            window.len()
        )));
    }
    let frames = (signal.len() - window.len()) / hop + 1;
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(fft_size);
    let mut data = DMatrix::zeros(fft_size, frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    for t in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        let start = t * hop;
        for (i, w) in window.iter().enumerate() {
            buf[i] = signal[start + i] * *w;
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().enumerate() {
            data[(k, t)] = c.norm();
        }
    }
    Spectrogram::from_magnitude(data)
}

/// Real-valued convenience wrapper around [`stft`].
pub fn stft_real(signal: &[f64], window: &[f64], hop: usize, fft_size: usize) -> Result<Spectrogram> {
    let complex: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    stft(&complex, window, hop, fft_size)
}

/// Periodic-free (symmetric) Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos())
        .collect()
}

/// `20 log10(max(|x|, floor))` elementwise.
pub fn to_db(magnitude: &DMatrix<f64>) -> DMatrix<f64> {
    magnitude.map(|v| 20.0 * v.abs().max(DB_FLOOR).log10())
}

/// Histogram bin of `v` for `bins` uniform bins over `[lo, hi]`.
fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let pos = ((v - lo) / (hi - lo) * bins as f64).floor();
    (pos.max(0.0) as usize).min(bins - 1)
}

/// Index `k` maximizing Yen's entropic criterion; bins `0..=k` are background.
///
/// The criterion for a split after bin `k` is
/// `−ln(S₁(k)·S₂(k)) + 2 ln(P(k)(1 − P(k)))` with `P` the cumulative mass and
/// `S₁`, `S₂` the sums of squared bin probabilities below and above the split.
/// Ties resolve to the smallest `k`. Returns `None` when no split has
/// mass on both sides.
pub fn yen_split(histogram: &[u64]) -> Option<usize> {
    let total: u64 = histogram.iter().sum();
    if total == 0 || histogram.len() < 2 {
        return None;
    }
    let p: Vec<f64> = histogram.iter().map(|&c| c as f64 / total as f64).collect();
    let sq_total: f64 = p.iter().map(|v| v * v).sum();
    let mut cum = 0.0;
    let mut cum_sq = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for k in 0..p.len() - 1 {
        cum += p[k];
        cum_sq += p[k] * p[k];
        let above_sq = (sq_total - cum_sq).max(0.0);
        if cum <= 0.0 || cum >= 1.0 || cum_sq <= 0.0 || above_sq <= 0.0 {
            continue;
        }
        let crit = -(cum_sq * above_sq).ln() + 2.0 * (cum * (1.0 - cum)).ln();
        match best {
            Some((_, b)) if crit <= b => {}
            _ => best = Some((k, crit)),
        }
    }
    best.map(|(k, _)| k)
}

/// Converts to dB and applies the Yen threshold.
///
/// Entries in histogram bins above the selected split keep their dB value;
/// the rest become zero. A constant image keeps every entry.
pub fn log_threshold(spec: &Spectrogram) -> Result<Spectrogram> {
    if spec.state != SpectrogramState::Magnitude {
        return Err(invalid(format!("log_threshold expects a magnitude spectrogram, got {:?}", spec.state)));
    }
    let db = to_db(&spec.data);
    let lo = db.min();
    let hi = db.max();
    let (support, threshold) = if hi <= lo {
        (DMatrix::from_element(db.nrows(), db.ncols(), true), lo)
    } else {
        let mut hist = vec![0u64; YEN_BINS];
        for v in db.iter() {
            hist[bin_of(*v, lo, hi, YEN_BINS)] += 1;
        }
        let split = yen_split(&hist).unwrap_or(0);
        let width = (hi - lo) / YEN_BINS as f64;
        let threshold = lo + (split + 1) as f64 * width;
        (db.map(|v| bin_of(v, lo, hi, YEN_BINS) > split), threshold)
    };
    let data = DMatrix::from_fn(db.nrows(), db.ncols(), |i, j| {
        if support[(i, j)] {
            db[(i, j)]
        } else {
            0.0
        }
    });
    Ok(Spectrogram {
        data,
        state: SpectrogramState::Thresholded,
        support: Some(support),
        threshold_db: Some(threshold),
        meta: spec.meta.clone(),
    })
}

/// Normalization applied after thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeMode {
    Binary,
    Unit,
}

impl std::str::FromStr for NormalizeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Self::Binary),
            "unit" | "normalized" => Ok(Self::Unit),
            other => Err(invalid(format!("unknown normalization '{other}'"))),
        }
    }
}

/// Binary: indicator of the retained support. Unit: retained dB values mapped
/// affinely so the threshold goes to 0 and the maximum to 1.
pub fn normalize(spec: &Spectrogram, mode: NormalizeMode) -> Result<Spectrogram> {
    if spec.state != SpectrogramState::Thresholded {
        return Err(invalid(format!("normalize expects a thresholded spectrogram, got {:?}", spec.state)));
    }
    let support = spec
        .support
        .clone()
        .unwrap_or_else(|| spec.data.map(|v| v != 0.0));
    let (data, state) = match mode {
        NormalizeMode::Binary => (support.map(|s| if s { 1.0 } else { 0.0 }), SpectrogramState::Binary),
        NormalizeMode::Unit => {
            let th = spec.threshold_db.unwrap_or(0.0);
            let mut hi = f64::NEG_INFINITY;
            for (v, s) in spec.data.iter().zip(support.iter()) {
                if *s {
                    hi = hi.max(*v);
                }
            }
            let span = hi - th;
            let data = DMatrix::from_fn(spec.data.nrows(), spec.data.ncols(), |i, j| {
                if !support[(i, j)] {
                    0.0
                } else if span > 0.0 {
                    ((spec.data[(i, j)] - th) / span).clamp(0.0, 1.0)
                } else {
                    1.0
                }
            });
            (data, SpectrogramState::UnitNormalized)
        }
    };
    Ok(Spectrogram { data, state, support: Some(support), threshold_db: spec.threshold_db, meta: spec.meta.clone() })
}

/// Full preprocessing chain: dB, Yen threshold, then normalization.
pub fn preprocess(spec: &Spectrogram, mode: NormalizeMode) -> Result<Spectrogram> {
    normalize(&log_threshold(spec)?, mode)
}

/// Top-`r` left singular vectors (sign-canonicalized) and singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceFeature {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
}

impl SubspaceFeature {
    pub fn new(mut u: DMatrix<f64>, s: DVector<f64>) -> Result<Self> {
        if u.ncols() != s.len() {
            return Err(shape(format!("{} singular vectors with {} singular values", u.ncols(), s.len())));
        }
        if s.iter().any(|v| *v < 0.0) || s.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("singular values must be nonnegative and nonincreasing"));
        }
        let defect = orthonormality_defect(&u);
        if defect > 1e-8 {
            return Err(invalid(format!("singular vectors are not orthonormal (defect {defect:.3e})")));
        }
        canonicalize_columns(&mut u);
        Ok(Self { u, s })
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Keeps the leading `r` components.
    pub fn truncate(&self, r: usize) -> Result<Self> {
        if r == 0 || r > self.rank() {
            return Err(invalid(format!("cannot truncate rank-{} feature to {r}", self.rank())));
        }
        Ok(Self { u: self.u.columns(0, r).into_owned(), s: self.s.rows(0, r).into_owned() })
    }
}

/// Orthonormal basis representing a point on a Grassmann manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannPoint {
    pub basis: DMatrix<f64>,
}

impl GrassmannPoint {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let defect = orthonormality_defect(&basis);
        if defect > 1e-8 {
            return Err(invalid(format!("Grassmann basis is not orthonormal (defect {defect:.3e})")));
        }
        Ok(Self { basis })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Kind tag of a [`FeatureVec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FeatureKind {
    Subspace,
    Pca,
    Grassmann,
    Flat,
}

/// A sample in one of the supported feature representations.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureVec {
    Subspace(SubspaceFeature),
    Pca(DVector<f64>),
    Grassmann(GrassmannPoint),
    Flat(DVector<f64>),
}

impl FeatureVec {
    pub fn kind(&self) -> FeatureKind {
        match self {
            Self::Subspace(_) => FeatureKind::Subspace,
            Self::Pca(_) => FeatureKind::Pca,
            Self::Grassmann(_) => FeatureKind::Grassmann,
            Self::Flat(_) => FeatureKind::Flat,
        }
    }

    pub fn basis(&self) -> Option<&DMatrix<f64>> {
        match self {
            Self::Subspace(f) => Some(&f.u),
            Self::Grassmann(g) => Some(&g.basis),
            _ => None,
        }
    }

    pub fn coords(&self) -> Option<&[f64]> {
        match self {
            Self::Pca(v) | Self::Flat(v) => Some(v.as_slice()),
            _ => None,
        }
    }

    /// Total order over representation and raw data, used to fix argument order.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        fn cmp_slices(a: &[f64], b: &[f64]) -> Ordering {
            for (x, y) in a.iter().zip(b) {
                match x.total_cmp(y) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            a.len().cmp(&b.len())
        }
        self.kind().cmp(&other.kind()).then_with(|| match (self, other) {
            (Self::Subspace(a), Self::Subspace(b)) => {
                cmp_slices(a.u.as_slice(), b.u.as_slice()).then_with(|| cmp_slices(a.s.as_slice(), b.s.as_slice()))
            }
            (Self::Grassmann(a), Self::Grassmann(b)) => cmp_slices(a.basis.as_slice(), b.basis.as_slice()),
            _ => cmp_slices(self.coords().unwrap_or(&[]), other.coords().unwrap_or(&[])),
        })
    }
}

/// Top-`r` SVD subspace feature of a spectrogram.
pub fn svd_features(spec: &Spectrogram, r: usize) -> Result<SubspaceFeature> {
    matrix_svd_features(spec.data(), r)
}

pub fn matrix_svd_features(m: &DMatrix<f64>, r: usize) -> Result<SubspaceFeature> {
    let max_r = m.nrows().min(m.ncols());
    if r == 0 || r > max_r {
        return Err(invalid(format!("svd_features: r={r} must be in 1..={max_r}")));
    }
    let svd = thin_svd(m)?;
    let mut u = svd.u.columns(0, r).into_owned();
    canonicalize_columns(&mut u);
    Ok(SubspaceFeature { u, s: svd.s.rows(0, r).into_owned() })
}

/// Mean, leading principal directions and their variances.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: DVector<f64>,
    pub components: DMatrix<f64>,
    pub explained: DVector<f64>,
}

/// Fits a PCA basis on the rows of `train` via SVD of the centered matrix.
pub fn fit_pca(train: &DMatrix<f64>, r: usize) -> Result<PcaBasis> {
    let (m, d) = train.shape();
    if r == 0 || r > m.min(d) {
        return Err(invalid(format!("fit_pca: r={r} must be in 1..={}", m.min(d))));
    }
    let mean = DVector::from_fn(d, |j, _| train.column(j).mean());
    let mut centered = train.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    // The right singular vectors of the centered data are the principal directions.
    let svd = if m >= d { thin_svd(&centered)? } else { transpose_svd(&centered)? };
    let top = svd.s.get(0).copied().unwrap_or(0.0);
    let tol = top * 1e-10 * m.max(d) as f64;
    if top == 0.0 || svd.s[r - 1] <= tol {
        let rank = svd.s.iter().filter(|&&s| s > tol).count();
        return Err(invalid(format!("fit_pca: r={r} exceeds the rank {rank} of the centered data")));
    }
    let mut components = svd.v.columns(0, r).into_owned();
    canonicalize_columns(&mut components);
    let denom = if m > 1 { (m - 1) as f64 } else { 1.0 };
    let explained = DVector::from_fn(r, |i, _| svd.s[i] * svd.s[i] / denom);
    Ok(PcaBasis { mean, components, explained })
}

/// SVD of `m` computed from the SVD of `mᵀ` (cheaper for wide matrices).
fn transpose_svd(m: &DMatrix<f64>) -> Result<crate::linalg::ThinSvd> {
    let t = thin_svd(&m.transpose())?;
    Ok(crate::linalg::ThinSvd { u: t.v, s: t.s, v: t.u })
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn input_len(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, x: &[f64]) -> Result<DVector<f64>> {
        pca_project(self, x)
    }
}

/// `componentsᵀ (x − mean)`.
pub fn pca_project(basis: &PcaBasis, x: &[f64]) -> Result<DVector<f64>> {
    if x.len() != basis.mean.len() {
        return Err(shape(format!("pca_project: input length {} vs basis {}", x.len(), basis.mean.len())));
    }
    let centered = DVector::from_column_slice(x) - &basis.mean;
    Ok(basis.components.transpose() * centered)
}

/// Pads with zero columns on the right up to `target_frames`, then flattens column-major.
pub fn zero_pad_vectorize(spec: &Spectrogram, target_frames: usize) -> Result<Vec<f64>> {
    if spec.frames() > target_frames {
        return Err(invalid(format!(
            "zero_pad_vectorize: spectrogram has {} frames, target is {target_frames}",
            spec.frames()
        )));
    }
    let mut out = Vec::with_capacity(spec.bins() * target_frames);
    out.extend_from_slice(spec.data().as_slice());
    out.resize(spec.bins() * target_frames, 0.0);
    Ok(out)
}

/// Linear dynamical model `f(t) = C z(t)`, `z(t+1) = A z(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmaModel {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: usize,
    /// Set when the state Gram matrix needed a ridge term.
    pub regularized: bool,
}

/// Closed-form subspace fit of an ARMA model to a `p × τ` series.
///
/// With `[f(1) … f(τ)] ≈ U Σ Vᵀ` truncated to `d` components, `C = U` and
/// `A = Σ VᵀD₁V (VᵀD₂V)⁻¹ Σ⁻¹`, where `D₁` shifts time forward by one step
/// and `D₂` selects the first `τ − 1` steps. No mean-centering is applied.
pub fn arma_fit(series: &DMatrix<f64>, d: usize) -> Result<ArmaModel> {
    let (p, tau) = series.shape();
    if tau < 2 {
        return Err(invalid("arma_fit: need at least two time steps"));
    }
    if d == 0 || d > p.min(tau) {
        return Err(invalid(format!("arma_fit: d={d} must be in 1..={}", p.min(tau))));
    }
    let svd = thin_svd(series)?;
    let mut u = svd.u.columns(0, d).into_owned();
    let mut v = svd.v.columns(0, d).into_owned();
    // Canonicalize U and carry the same sign flips into V.
    let before = u.clone();
    canonicalize_columns(&mut u);
    for j in 0..d {
        if (0..p).any(|i| u[(i, j)] != before[(i, j)]) {
            v.column_mut(j).neg_mut();
        }
    }
    let sigma = svd.s.rows(0, d).into_owned();
    if sigma.iter().any(|s| *s <= 0.0) {
        return Err(Error::Numerical(format!(
            "arma_fit: series has rank below d={d} (singular values {:?})",
            sigma.as_slice()
        )));
    }
    let v_late = v.rows(1, tau - 1);
    let v_early = v.rows(0, tau - 1);
    let shift = v_late.transpose() * v_early; // Vᵀ D₁ V
    let mut select = v_early.transpose() * v_early; // Vᵀ D₂ V

    let mut regularized = false;
    let cond = {
        let e = nalgebra::SymmetricEigen::new(select.clone()).eigenvalues;
        let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
        if lo <= 0.0 { f64::INFINITY } else { hi / lo }
    };
    if cond > 1e12 {
        select += DMatrix::identity(d, d) * 1e-10;
        regularized = true;
    }
    let select_inv = select
        .try_inverse()
        .ok_or_else(|| Error::Numerical("arma_fit: state Gram matrix is singular".into()))?;
    let sig = DMatrix::from_diagonal(&sigma);
    let sig_inv = DMatrix::from_diagonal(&sigma.map(|s| 1.0 / s));
    let a = sig * shift * select_inv * sig_inv;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("arma_fit: transition matrix is not finite".into()));
    }
    Ok(ArmaModel { a, c: u, d, regularized })
}

/// Orthonormalized truncated observability matrix `[C; CA; …; CA^{m−1}]`.
pub fn grassmann_embed(model: &ArmaModel, m: usize) -> Result<GrassmannPoint> {
    if m == 0 {
        return Err(invalid("grassmann_embed: m must be at least 1"));
    }
    let (p, d) = model.c.shape();
    let mut stacked = DMatrix::zeros(m * p, d);
    let mut block = model.c.clone();
    for i in 0..m {
        stacked.view_mut((i * p, 0), (p, d)).copy_from(&block);
        block = &block * &model.a;
    }
    let basis = orthonormal_basis(&stacked)?;
    Ok(GrassmannPoint { basis })
}

/// Squared projection distance `r − ‖U1ᵀU2‖_F²` between two subspaces.
pub fn projection_distance_sq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.ncols() as f64 - (a.transpose() * b).norm_squared()
}
