//! Synthetic data and the classification harness: stratified splits,
//! repeated trials, feature-dimension and training-fraction sweeps, and
//! hold-one-subject-out folds.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::classify::{knn_predict_batch, one_vs_rest_predict_batch, one_vs_rest_train, DEFAULT_C};
use crate::error::{invalid, Error, Result};
use crate::features::{
    fit_pca, hann_window, matrix_svd_features, preprocess, stft, zero_pad_vectorize, FeatureVec, NormalizeMode,
    SampleMeta, Spectrogram, DEFAULT_PCA_DIM,
};
use crate::kernels::{cross_gram, gram, KernelSpec};
use crate::linalg::euclidean;

/// Points on a circle embedded in `R^Q`.
#[derive(Debug, Clone)]
pub struct SyntheticManifoldSet {
    pub ambient_dim: usize,
    /// `M × Q`, including noise.
    pub points: DMatrix<f64>,
    /// `M × Q`, noiseless.
    pub clean: DMatrix<f64>,
    pub theta: Vec<f64>,
    pub truth: Vec<f64>,
    pub noise_sigma: f64,
    /// Orthogonal `Q × Q` map applied to the plane of the circle.
    pub rotation: DMatrix<f64>,
}

/// Default test function on the circle.
pub fn circle_target(theta: f64) -> f64 {
    (3.0 * theta).sin()
}

impl SyntheticManifoldSet {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Noiseless point at angle `theta`.
    pub fn embed(&self, theta: f64) -> DVector<f64> {
        let mut p = DVector::zeros(self.ambient_dim);
        p[0] = theta.cos();
        p[1] = theta.sin();
        &self.rotation * p
    }

    pub fn node_features(&self) -> Vec<FeatureVec> {
        self.points.row_iter().map(|r| FeatureVec::Flat(r.transpose())).collect()
    }

    /// `count` equispaced noiseless probes offset by half a step, with the target values.
    pub fn probes(&self, count: usize) -> (Vec<FeatureVec>, Vec<f64>) {
        (0..count)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / count as f64;
                (FeatureVec::Flat(self.embed(t)), circle_target(t))
            })
            .unzip()
    }
}

fn random_orthogonal(q: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(q, q, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut o = qr.q();
    let r = qr.r();
    for j in 0..q {
        if r[(j, j)] < 0.0 {
            o.column_mut(j).neg_mut();
        }
    }
    o
}

/// `m` equispaced points `θ_j = 2πj/m` on a randomly rotated unit circle in `R^q`,
/// with isotropic Gaussian noise of standard deviation `noise_sigma`.
pub fn gen_circle(q: usize, m: usize, noise_sigma: f64, seed: u64) -> Result<SyntheticManifoldSet> {
    if q < 2 || m < 2 {
        return Err(invalid(format!("gen_circle needs Q >= 2 and M >= 2, got Q={q}, M={m}")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(invalid("noise_sigma must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = random_orthogonal(q, &mut rng);
    let theta: Vec<f64> = (0..m).map(|j| 2.0 * std::f64::consts::PI * j as f64 / m as f64).collect();
    let mut set = SyntheticManifoldSet {
        ambient_dim: q,
        points: DMatrix::zeros(m, q),
        clean: DMatrix::zeros(m, q),
        truth: theta.iter().map(|&t| circle_target(t)).collect(),
        theta,
        noise_sigma,
        rotation,
    };
    for j in 0..m {
        let p = set.embed(set.theta[j]);
        set.clean.row_mut(j).copy_from(&p.transpose());
        for k in 0..q {
            let e: f64 = StandardNormal.sample(&mut rng);
            set.points[(j, k)] = p[k] + noise_sigma * e;
        }
    }
    Ok(set)
}

/// Short-time Fourier transform settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        Self { window: 32, hop: 16, fft_size: 32 }
    }
}

/// Motion template of one gesture class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GestureKind {
    /// Linear frequency sweep upward over a short duration.
    UpChirp,
    /// Sinusoidal frequency modulation over a long duration.
    Oscillation,
    /// Two short bursts at opposite Doppler shifts.
    DoublePulse,
    /// Linear frequency sweep downward.
    DownChirp,
}

impl GestureKind {
    pub const ALL: [GestureKind; 4] = [Self::UpChirp, Self::Oscillation, Self::DoublePulse, Self::DownChirp];

    /// Nominal duration in samples.
    pub fn base_duration(self) -> f64 {
        match self {
            Self::UpChirp => 224.0,
            Self::Oscillation => 480.0,
            Self::DoublePulse => 320.0,
            Self::DownChirp => 352.0,
        }
    }

    /// Instantaneous frequency (cycles/sample) at normalized time `t ∈ [0, 1]`.
    pub fn frequency(self, t: f64, scale: f64) -> f64 {
        match self {
            Self::UpChirp => scale * (-0.15 + 0.35 * t),
            Self::Oscillation => scale * 0.2 * (2.0 * std::f64::consts::PI * 2.5 * t).sin(),
            Self::DoublePulse => {
                if t < 0.5 {
                    scale * 0.18
                } else {
                    -scale * 0.12
                }
            }
            Self::DownChirp => scale * (0.2 - 0.35 * t),
        }
    }

    /// Amplitude envelope at normalized time `t`.
    pub fn envelope(self, t: f64) -> f64 {
        let bump = |a: f64, b: f64| {
            if t <= a || t >= b {
                0.0
            } else {
                (std::f64::consts::PI * (t - a) / (b - a)).sin()
            }
        };
        match self {
            Self::DoublePulse => bump(0.05, 0.4) + bump(0.6, 0.95),
            _ => bump(0.0, 1.0).sqrt(),
        }
    }
}

/// Generator settings for [`gen_synthetic_gestures`].
#[derive(Debug, Clone, PartialEq)]
pub struct GestureGenConfig {
    pub classes: usize,
    pub subjects: usize,
    pub per_cell: usize,
    /// Complex noise standard deviation relative to unit main-scatterer amplitude.
    pub noise_sigma: f64,
    /// Scatterers per sample, 1 to 4.
    pub scatterers: usize,
    /// Relative spread of per-subject frequency and duration factors.
    pub subject_spread: f64,
    /// Relative per-sample jitter.
    pub sample_jitter: f64,
    /// Amplitude of a static zero-Doppler clutter tone.
    pub clutter: f64,
    /// Extra frequency factor for selected subjects.
    pub subject_rate_override: Vec<(usize, f64)>,
    pub stft: StftParams,
}

impl Default for GestureGenConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            subjects: 6,
            per_cell: 25,
            noise_sigma: 0.3,
            scatterers: 3,
            subject_spread: 0.12,
            sample_jitter: 0.05,
            clutter: 0.2,
            subject_rate_override: Vec::new(),
            stft: StftParams::default(),
        }
    }
}

const SCATTER_FREQ: [f64; 4] = [1.0, 0.7, 0.45, 0.25];
const SCATTER_AMP: [f64; 4] = [1.0, 0.6, 0.4, 0.25];

/// Per-subject `(frequency factor, duration factor)`.
pub fn subject_factors(subject: usize, subjects: usize, spread: f64) -> (f64, f64) {
    if subjects < 2 {
        return (1.0, 1.0);
    }
    let u = subject as f64 / (subjects - 1) as f64 - 0.5;
    let v = ((subject * 7 + 3) % subjects) as f64 / (subjects - 1) as f64 - 0.5;
    (1.0 + spread * u, 1.0 + 1.5 * spread * v)
}

pub fn subject_name(subject: usize) -> String {
    if subject < 26 {
        char::from(b'A' + subject as u8).to_string()
    } else {
        format!("S{subject}")
    }
}

/// Labeled spectrograms of simulated gestures.
#[derive(Debug, Clone)]
pub struct SyntheticGestureSet {
    pub samples: Vec<Spectrogram>,
    pub labels: Vec<usize>,
    /// Subject index of each sample.
    pub subjects: Vec<usize>,
    pub config: GestureGenConfig,
}

/// Complex baseband signal of one gesture sample.
pub fn gesture_signal(
    kind: GestureKind,
    len: usize,
    freq_scale: f64,
    scatterers: usize,
    noise_sigma: f64,
    clutter: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Complex64> {
    let mut sig = vec![Complex64::new(0.0, 0.0); len];
    for s in 0..scatterers.clamp(1, 4) {
        let mut phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for (n, out) in sig.iter_mut().enumerate() {
            let t = n as f64 / (len - 1).max(1) as f64;
            let f = kind.frequency(t, freq_scale) * SCATTER_FREQ[s];
            *out += Complex64::from_polar(SCATTER_AMP[s] * kind.envelope(t), phase);
            phase += std::f64::consts::TAU * f;
        }
    }
    if clutter > 0.0 {
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for out in sig.iter_mut() {
            *out += Complex64::from_polar(clutter, phase);
        }
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma / std::f64::consts::SQRT_2).expect("valid sigma");
        for out in sig.iter_mut() {
            *out += Complex64::new(normal.sample(rng), normal.sample(rng));
        }
    }
    sig
}

/// `classes × subjects × per_cell` magnitude spectrograms of varying width.
pub fn gen_synthetic_gestures(cfg: &GestureGenConfig, seed: u64) -> Result<SyntheticGestureSet> {
    if cfg.classes == 0 || cfg.classes > GestureKind::ALL.len() {
        return Err(invalid(format!("classes must be in 1..=4, got {}", cfg.classes)));
    }
    if cfg.subjects == 0 || cfg.per_cell == 0 {
        return Err(invalid("subjects and per_cell must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window = hann_window(cfg.stft.window);
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut subjects = Vec::new();
    for subject in 0..cfg.subjects {
        let (mut fs, ds) = subject_factors(subject, cfg.subjects, cfg.subject_spread);
        for &(s, factor) in &cfg.subject_rate_override {
            if s == subject {
                fs *= factor;
            }
        }
        for (label, kind) in GestureKind::ALL.iter().take(cfg.classes).enumerate() {
            for _ in 0..cfg.per_cell {
                let jf = 1.0 + cfg.sample_jitter * rng.random_range(-1.0..1.0);
                let jd = 1.0 + 2.0 * cfg.sample_jitter * rng.random_range(-1.0..1.0);
                let len = ((kind.base_duration() * ds * jd) as usize).max(cfg.stft.window);
                let sig = gesture_signal(*kind, len, fs * jf, cfg.scatterers, cfg.noise_sigma, cfg.clutter, &mut rng);
                let spec = stft(&sig, &window, cfg.stft.hop, cfg.stft.fft_size)?
                    .with_meta(SampleMeta { label: Some(label), subject: Some(subject_name(subject)) });
                samples.push(spec);
                labels.push(label);
                subjects.push(subject);
            }
        }
    }
    Ok(SyntheticGestureSet { samples, labels, subjects, config: cfg.clone() })
}

/// Labeled spectrogram collection consumed by the harness.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Spectrogram>,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn subject_names(&self) -> Vec<String> {
        let mut s = self.subjects.clone();
        s.sort();
        s.dedup();
        s
    }
}

impl From<SyntheticGestureSet> for Dataset {
    fn from(set: SyntheticGestureSet) -> Self {
        Self {
            subjects: set.subjects.iter().map(|&s| subject_name(s)).collect(),
            samples: set.samples,
            labels: set.labels,
        }
    }
}

/// Representation fed to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureChoice {
    /// Projection of the zero-padded vectorized spectrogram on the top PCA directions.
    Pca,
    /// Per-sample top singular vectors and values.
    Svd,
}

/// Rescaling applied to PCA coordinates before the kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureScale {
    None,
    /// Scales so the median training nearest-neighbor distance equals the target.
    NearestNeighbor(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Svm { spec: KernelSpec, c: f64 },
    Knn { k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub feature: FeatureChoice,
    pub classifier: Classifier,
}

impl Method {
    pub fn pca_knn(k: usize) -> Self {
        Self { feature: FeatureChoice::Pca, classifier: Classifier::Knn { k } }
    }

    pub fn pca_svm(spec: KernelSpec) -> Self {
        Self { feature: FeatureChoice::Pca, classifier: Classifier::Svm { spec, c: DEFAULT_C } }
    }

    pub fn svd_svm(spec: KernelSpec) -> Self {
        Self { feature: FeatureChoice::Svd, classifier: Classifier::Svm { spec, c: DEFAULT_C } }
    }

    /// Table label such as `PCA LocSVM64` or `Grassmann SVD SVM`.
    pub fn name(&self) -> String {
        let prefix = match self.feature {
            FeatureChoice::Pca => "PCA",
            FeatureChoice::Svd => "SVD",
        };
        match &self.classifier {
            Classifier::Knn { k } if *k == 5 => format!("{prefix} KNN"),
            Classifier::Knn { k } => format!("{prefix} {k}-NN"),
            Classifier::Svm { spec: KernelSpec::Localized(s), .. } => format!("{prefix} LocSVM{}", s.degree()),
            Classifier::Svm { spec, .. } => {
                let kernel = match spec {
                    KernelSpec::Grassmann { .. } => "Grassmann",
                    KernelSpec::LaplaceSvd { .. } => "Laplace",
                    KernelSpec::GaussianSvd { .. } => "Gaussian",
                    _ => "RBF",
                };
                format!("{kernel} {prefix} SVM")
            }
        }
    }

    /// Same method with the localized kernel's `q` clamped to `min(q, r)`.
    pub fn clamped(&self, r: usize) -> Result<Self> {
        let mut m = self.clone();
        if let Classifier::Svm { spec: KernelSpec::Localized(s), .. } = &mut m.classifier {
            let q = s.q().min(r as u32).max(1);
            if q != s.q() {
                *s = s.with_q(q)?;
            }
        }
        Ok(m)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let feat = match self.feature {
            FeatureChoice::Pca => "pca",
            FeatureChoice::Svd => "svd",
        };
        match &self.classifier {
            Classifier::Knn { k } => write!(f, "{feat} knn {k}"),
            Classifier::Svm { spec, c } => write!(f, "{feat} svm {spec} C={c}"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    /// `pca knn 5`, `pca svm localized N=8 q=18 gamma=0.8`, `svd svm grassmann C=2`.
    fn from_str(s: &str) -> Result<Self> {
        let mut words: Vec<&str> = s.split_whitespace().collect();
        if words.len() < 2 {
            return Err(invalid(format!("method `{s}` needs a feature and a classifier")));
        }
        let feature = match words[0] {
            "pca" => FeatureChoice::Pca,
            "svd" => FeatureChoice::Svd,
            other => return Err(invalid(format!("unknown feature `{other}`"))),
        };
        let classifier = match words[1] {
            "knn" => {
                let k = match words.get(2) {
                    Some(k) => k.parse().map_err(|_| invalid(format!("knn k is not an integer: `{k}`")))?,
                    None => 5,
                };
                Classifier::Knn { k }
            }
            "svm" => {
                let mut c = DEFAULT_C;
                if let Some(pos) = words.iter().position(|w| w.starts_with("C=")) {
                    c = words[pos][2..].parse().map_err(|_| invalid(format!("bad C in `{s}`")))?;
                    words.remove(pos);
                }
                if !(c > 0.0) {
                    return Err(invalid("C must be positive"));
                }
                let spec: KernelSpec = words[2..].join(" ").parse()?;
                Classifier::Svm { spec, c }
            }
            other => return Err(invalid(format!("unknown classifier `{other}`"))),
        };
        Ok(Self { feature, classifier })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitPolicy {
    /// Stratified split with the given training fraction.
    Ratio(f64),
    /// Stratified subsample of the training pool at each fraction.
    FractionSweep(Vec<f64>),
    SubjectHoldout,
}

pub const DEFAULT_FRACTIONS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub normalize: NormalizeMode,
    pub r: usize,
    pub methods: Vec<Method>,
    pub split: SplitPolicy,
    pub train_fraction: f64,
    pub trials: usize,
    pub seed: u64,
    pub feature_scale: FeatureScale,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            normalize: NormalizeMode::Binary,
            r: DEFAULT_PCA_DIM,
            methods: vec![Method::pca_knn(5)],
            split: SplitPolicy::Ratio(0.8),
            train_fraction: 0.8,
            trials: 5,
            seed: 42,
            feature_scale: FeatureScale::None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.r == 0 {
            return Err(invalid("r must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(invalid("no methods configured"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid(format!("train_fraction must be in (0, 1), got {}", self.train_fraction)));
        }
        if let SplitPolicy::FractionSweep(f) = &self.split {
            if f.is_empty() || f.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                return Err(invalid("fractions must lie in (0, 1]"));
            }
        }
        if let FeatureScale::NearestNeighbor(t) = self.feature_scale {
            if !(t > 0.0) {
                return Err(invalid("feature scale target must be positive"));
            }
        }
        Ok(())
    }
}

/// Aggregated outcome of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub r: usize,
    pub accuracy_mean: f64,
    pub accuracy_var: f64,
    pub test_time_mean: f64,
    pub test_time_var: f64,
    pub train_time_mean: f64,
    pub train_time_var: f64,
    pub trials_ok: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    /// Swept variable and its value, e.g. `("fraction", "0.4")`.
    pub key: Option<(String, String)>,
    pub rows: Vec<ResultRow>,
    pub notes: Vec<String>,
}

const TIME_COLUMNS: [&str; 4] = ["Test Time (s)", "Test Time Variance", "Train Time (s)", "Train Time Variance"];

impl ResultTable {
    pub fn row(&self, method: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Writes CSV; `with_timing = false` drops the wall-clock columns.
    pub fn write_csv<W: Write>(&self, out: W, with_timing: bool) -> Result<()> {
        write_tables_csv(std::slice::from_ref(self), out, with_timing)
    }

    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, with_timing).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 csv")
    }
}

/// Writes one CSV covering several tables; a key column is added when the tables carry one.
pub fn write_tables_csv<W: Write>(tables: &[ResultTable], mut out: W, with_timing: bool) -> Result<()> {
    let key = tables.iter().find_map(|t| t.key.as_ref().map(|k| k.0.clone()));
    let mut header: Vec<&str> = Vec::new();
    if let Some(k) = &key {
        header.push(k);
    }
    header.extend(["method", "r", "Average Accuracy (%)", "Accuracy Variance"]);
    if with_timing {
        header.extend(TIME_COLUMNS);
    }
    writeln!(out, "{}", header.join(","))?;
    for t in tables {
        for row in &t.rows {
            let mut cells = Vec::new();
            if key.is_some() {
                cells.push(t.key.as_ref().map(|k| k.1.clone()).unwrap_or_default());
            }
            cells.push(row.method.clone());
            cells.push(row.r.to_string());
            cells.push(row.accuracy_mean.to_string());
            cells.push(row.accuracy_var.to_string());
            if with_timing {
                for v in [row.test_time_mean, row.test_time_var, row.train_time_mean, row.train_time_var] {
                    cells.push(v.to_string());
                }
            }
            writeln!(out, "{}", cells.join(","))?;
        }
    }
    Ok(())
}

/// Population mean and variance.
pub fn mean_var(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Per-class stratified split of `idx`; both halves are returned in ascending order.
pub fn stratified_split(idx: &[usize], labels: &[usize], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (_, mut members) in by_class {
        members.shuffle(rng);
        let take = ((members.len() as f64) * fraction).round() as usize;
        let take = take.min(members.len());
        first.extend_from_slice(&members[..take]);
        second.extend_from_slice(&members[take..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

/// Preprocessed spectrograms shared by every split of a run.
struct Prepared {
    specs: Vec<Spectrogram>,
    vectors: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

fn prepare(dataset: &Dataset, mode: NormalizeMode) -> Result<Prepared> {
    if dataset.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    if dataset.labels.len() != dataset.len() || dataset.subjects.len() != dataset.len() {
        return Err(invalid("dataset labels and subjects must match the sample count"));
    }
    let specs: Vec<Spectrogram> =
        dataset.samples.par_iter().map(|s| preprocess(s, mode)).collect::<Result<_>>()?;
    let frames = specs.iter().map(|s| s.frames()).max().unwrap_or(0);
    let bins = specs[0].bins();
    if specs.iter().any(|s| s.bins() != bins) {
        return Err(invalid("all spectrograms must have the same number of frequency bins"));
    }
    let vectors = specs.iter().map(|s| zero_pad_vectorize(s, frames)).collect::<Result<_>>()?;
    Ok(Prepared { specs, vectors, labels: dataset.labels.clone() })
}

struct TrialOutcome {
    accuracy: f64,
    train_s: f64,
    test_s: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median nearest-neighbor distance within a point set.
pub fn median_nn_distance(points: &[DVector<f64>]) -> f64 {
    let d: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    median(d)
}

fn features_for(
    method: &Method,
    prep: &Prepared,
    r: usize,
    scale: FeatureScale,
    train: &[usize],
    test: &[usize],
) -> Result<(Vec<FeatureVec>, Vec<FeatureVec>)> {
    match method.feature {
        FeatureChoice::Pca => {
            let d = prep.vectors[0].len();
            let m = DMatrix::from_fn(train.len(), d, |i, j| prep.vectors[train[i]][j]);
            let basis = fit_pca(&m, r)?;
            let project = |ids: &[usize]| -> Result<Vec<DVector<f64>>> {
                ids.iter().map(|&i| basis.project(&prep.vectors[i])).collect()
            };
            let mut tr = project(train)?;
            let mut te = project(test)?;
            if let FeatureScale::NearestNeighbor(target) = scale {
                let s = median_nn_distance(&tr);
                if s > 0.0 {
                    let f = target / s;
                    tr.iter_mut().chain(te.iter_mut()).for_each(|v| *v *= f);
                }
            }
            Ok((tr.into_iter().map(FeatureVec::Pca).collect(), te.into_iter().map(FeatureVec::Pca).collect()))
        }
        FeatureChoice::Svd => {
            let f = |ids: &[usize]| -> Result<Vec<FeatureVec>> {
                ids.par_iter()
                    .map(|&i| matrix_svd_features(prep.specs[i].data(), r).map(FeatureVec::Subspace))
                    .collect()
            };
            Ok((f(train)?, f(test)?))
        }
    }
}

fn run_trial(method: &Method, prep: &Prepared, r: usize, scale: FeatureScale, train: &[usize], test: &[usize]) -> Result<TrialOutcome> {
    if test.is_empty() {
        return Err(Error::Experiment("split produced an empty test set".into()));
    }
    let train_labels: Vec<usize> = train.iter().map(|&i| prep.labels[i]).collect();
    let mut present = train_labels.clone();
    present.sort_unstable();
    present.dedup();
    let mut all: Vec<usize> = prep.labels.clone();
    all.sort_unstable();
    all.dedup();
    if present != all {
        return Err(Error::Experiment(format!("training split lacks classes (has {present:?} of {all:?})")));
    }
    let test_labels: Vec<usize> = test.iter().map(|&i| prep.labels[i]).collect();

    let start = Instant::now();
    let (tr, te) = features_for(method, prep, r, scale, train, test)?;
    let predict: Box<dyn Fn(&[FeatureVec]) -> Result<Vec<usize>>> = match &method.classifier {
        Classifier::Svm { spec, c } => {
            let g = gram(spec, &tr)?;
            let model = one_vs_rest_train(&g, &train_labels, *c)?;
            let tr = tr.clone();
            let spec = spec.clone();
            Box::new(move |xs: &[FeatureVec]| {
                let cross = cross_gram(&spec, xs, &tr)?;
                one_vs_rest_predict_batch(&model, &cross)
            })
        }
        Classifier::Knn { k } => {
            let k = *k;
            let tr = tr.clone();
            let labels = train_labels.clone();
            Box::new(move |xs: &[FeatureVec]| {
                knn_predict_batch(&tr, &labels, xs, k, |a, b| {
                    euclidean(a.coords().unwrap_or(&[]), b.coords().unwrap_or(&[]))
                })
            })
        }
    };
    let train_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let pred = predict(&te)?;
    let test_s = start.elapsed().as_secs_f64();
    let hits = pred.iter().zip(&test_labels).filter(|(a, b)| a == b).count();
    Ok(TrialOutcome { accuracy: 100.0 * hits as f64 / test.len() as f64, train_s, test_s })
}

fn aggregate(method: &Method, r: usize, outcomes: Vec<Result<TrialOutcome>>, notes: &mut Vec<String>) -> ResultRow {
    let name = method.name();
    let mut acc = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (t, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                acc.push(o.accuracy);
                train.push(o.train_s);
                test.push(o.test_s);
            }
            Err(e) => notes.push(format!("{name} r={r} trial {t}: {e}")),
        }
    }
    let (accuracy_mean, accuracy_var) = mean_var(&acc);
    let (train_time_mean, train_time_var) = mean_var(&train);
    let (test_time_mean, test_time_var) = mean_var(&test);
    ResultRow {
        method: name,
        r,
        accuracy_mean,
        accuracy_var,
        test_time_mean,
        test_time_var,
        train_time_mean,
        train_time_var,
        trials_ok: acc.len(),
    }
}

/// Trains on a stratified subsample (`pool_fraction` of the training pool) for each trial.
fn run_split(config: &ExperimentConfig, prep: &Prepared, r: usize, pool_fraction: f64) -> Result<ResultTable> {
    let all: Vec<usize> = (0..prep.labels.len()).collect();
    let mut table = ResultTable::default();
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..config.trials)
        .map(|t| {
            let mut rng = trial_rng(config.seed, t as u64);
            let (pool, test) = stratified_split(&all, &prep.labels, config.train_fraction, &mut rng);
            let train = if pool_fraction >= 1.0 {
                pool
            } else {
                stratified_split(&pool, &prep.labels, pool_fraction, &mut rng).0
            };
            (train, test)
        })
        .collect();
    if pool_fraction < 1.0 {
        if let Some((train, _)) = splits.first() {
            table.notes.push(format!("fraction {pool_fraction}: {} training samples", train.len()));
        }
    }
    for method in &config.methods {
        let method = method.clamped(r)?;
        let outcomes =
            splits.iter().map(|(tr, te)| run_trial(&method, prep, r, config.feature_scale, tr, te)).collect();
        let row = aggregate(&method, r, outcomes, &mut table.notes);
        table.rows.push(row);
    }
    Ok(table)
}

/// Stratified train/test split repeated over `config.trials` trials.
pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<ResultTable> {
    config.validate()?;
    let prep = prepare(dataset, config.normalize)?;
    let fraction = match config.split {
        SplitPolicy::Ratio(f) => f,
        _ => config.train_fraction,
    };
    let cfg = ExperimentConfig { train_fraction: fraction, ..config.clone() };
    run_split(&cfg, &prep, config.r, 1.0)
}

/// One table per feature dimension; the localized kernel uses `q = min(q, r)`.
pub fn sweep_dimension(config: &ExperimentConfig, dataset: &Dataset, r_values: &[usize]) -> Result<Vec<ResultTable>> {
    config.validate()?;
    let prep = prepare(dataset, config.normalize)?;
    let mut out = Vec::new();
    for &r in r_values {
        let mut t = run_split(config, &prep, r, 1.0)?;
        t.key = Some(("r".into(), r.to_string()));
        out.push(t);
    }
    Ok(out)
}

/// One table per fraction of the training pool; the test sets are those of [`run_experiment`].
pub fn sweep_train_fraction(config: &ExperimentConfig, dataset: &Dataset, fractions: &[f64]) -> Result<Vec<ResultTable>> {
    config.validate()?;
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(invalid("fractions must lie in (0, 1]"));
    }
    let prep = prepare(dataset, config.normalize)?;
    let mut out = Vec::new();
    for &f in fractions {
        let mut t = run_split(config, &prep, config.r, f)?;
        t.key = Some(("fraction".into(), f.to_string()));
        out.push(t);
    }
    Ok(out)
}

/// Trains on all subjects but one and tests on the held-out subject, for each subject.
pub fn holdout_subject(config: &ExperimentConfig, dataset: &Dataset) -> Result<Vec<ResultTable>> {
    config.validate()?;
    let names = dataset.subject_names();
    if names.len() < 2 {
        return Err(invalid("holdout needs at least two subjects"));
    }
    let prep = prepare(dataset, config.normalize)?;
    let mut out = Vec::new();
    for name in &names {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| &dataset.subjects[i] == name);
        let mut table = ResultTable { key: Some(("subject".into(), name.clone())), ..Default::default() };
        for method in &config.methods {
            let method = method.clamped(config.r)?;
            let outcome = run_trial(&method, &prep, config.r, config.feature_scale, &train, &test);
            let row = aggregate(&method, config.r, vec![outcome], &mut table.notes);
            table.rows.push(row);
        }
        out.push(table);
    }
    Ok(out)
}
