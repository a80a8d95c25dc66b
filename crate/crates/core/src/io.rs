//! File formats: spectrogram CSV, dataset manifests, and flat `key = value`
//! run configurations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::experiments::{
    Dataset, ExperimentConfig, FeatureScale, GestureGenConfig, Method, SplitPolicy, StftParams, DEFAULT_FRACTIONS,
};
use crate::features::{SampleMeta, Spectrogram};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Parses a spectrogram from CSV text: one row per frequency bin, one column per frame.
///
/// A first line reading `complex` declares interleaved `re,im` pairs, whose
/// moduli become the magnitudes. Blank lines and lines starting with `#` are skipped.
pub fn parse_spectrogram_csv(text: &str) -> Result<Spectrogram> {
    let mut complex = false;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut seen_data = false;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_data && line.eq_ignore_ascii_case("complex") {
            complex = true;
            seen_data = true;
            continue;
        }
        seen_data = true;
        let vals: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|_| parse_err(n, format!("not a number: `{}`", c.trim()))))
            .collect::<Result<_>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(n, "non-finite value"));
        }
        let row = if complex {
            if vals.len() % 2 != 0 {
                return Err(parse_err(n, "complex row needs an even number of values"));
            }
            vals.chunks(2).map(|p| p[0].hypot(p[1])).collect()
        } else {
            vals
        };
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(n, format!("row has {} frames, expected {}", row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(invalid("spectrogram CSV has no data"));
    }
    let (bins, frames) = (rows.len(), rows[0].len());
    Spectrogram::from_magnitude(DMatrix::from_fn(bins, frames, |i, j| rows[i][j]))
}

pub fn read_spectrogram_csv(path: &Path) -> Result<Spectrogram> {
    parse_spectrogram_csv(&fs::read_to_string(path)?)
}

pub fn spectrogram_to_csv(spec: &Spectrogram) -> String {
    let mut out = String::new();
    for row in spec.data().row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub subject: String,
}

/// Parses `path,label,subject` rows after a mandatory header. Relative paths are joined to `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim().replace(' ', "") == "path,label,subject" => {}
        Some((i, h)) => return Err(parse_err(i + 1, format!("expected header `path,label,subject`, found `{h}`"))),
        None => return Err(invalid("manifest is empty")),
    }
    let mut out = Vec::new();
    for (i, l) in lines {
        let n = i + 1;
        let cells: Vec<&str> = l.split(',').map(str::trim).collect();
        let [path, label, subject] = cells[..] else {
            return Err(parse_err(n, format!("expected 3 fields, found {}", cells.len())));
        };
        if path.is_empty() || subject.is_empty() {
            return Err(parse_err(n, "empty path or subject"));
        }
        let label: usize = label.parse().map_err(|_| parse_err(n, format!("label is not a nonnegative integer: `{label}`")))?;
        let p = PathBuf::from(path);
        out.push(ManifestEntry { path: if p.is_absolute() { p } else { base.join(p) }, label, subject: subject.to_string() });
    }
    if out.is_empty() {
        return Err(invalid("manifest lists no samples"));
    }
    Ok(out)
}

/// Loads every spectrogram listed in a manifest file.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let entries = parse_manifest(&text, base)?;
    let mut ds = Dataset { samples: Vec::new(), labels: Vec::new(), subjects: Vec::new() };
    for e in entries {
        let spec = read_spectrogram_csv(&e.path).map_err(|err| match err {
            Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", e.path.display()) },
            other => other,
        })?;
        ds.samples.push(spec.with_meta(SampleMeta { label: Some(e.label), subject: Some(e.subject.clone()) }));
        ds.labels.push(e.label);
        ds.subjects.push(e.subject);
    }
    Ok(ds)
}

/// `key = value` lines; `#` starts a comment. Repeated keys are kept in order.
pub fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| parse_err(i + 1, format!("expected key = value, found `{line}`")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(parse_err(i + 1, "empty key"));
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Everything a harness command needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub experiment: ExperimentConfig,
    pub gestures: GestureGenConfig,
    pub manifest: Option<PathBuf>,
    pub fractions: Vec<f64>,
    pub r_values: Vec<usize>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            gestures: GestureGenConfig::default(),
            manifest: None,
            fractions: DEFAULT_FRACTIONS.to_vec(),
            r_values: (1..=20).collect(),
        }
    }
}

fn num<T: std::str::FromStr>(v: &str, line: usize, key: &str) -> Result<T> {
    v.parse().map_err(|_| parse_err(line, format!("`{key}`: cannot parse `{v}`")))
}

fn list<T: std::str::FromStr>(v: &str, line: usize, key: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(s.trim(), line, key)).collect()
}

/// Accepts `a..b` (inclusive) or a comma list.
fn usize_range(v: &str, line: usize, key: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = v.split_once("..") {
        let a: usize = num(a.trim(), line, key)?;
        let b: usize = num(b.trim(), line, key)?;
        if a > b {
            return Err(parse_err(line, format!("`{key}`: empty range {v}")));
        }
        return Ok((a..=b).collect());
    }
    list(v, line, key)
}

impl RunSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = RunSpec::default();
        let mut methods = Vec::new();
        let e = &mut spec.experiment;
        let g = &mut spec.gestures;
        for (n, k, v) in parse_kv(text)? {
            match k.as_str() {
                "normalize" => e.normalize = v.parse().map_err(|err: Error| parse_err(n, err.to_string()))?,
                "r" => e.r = num(&v, n, &k)?,
                "method" => methods.push(v.parse::<Method>().map_err(|err| parse_err(n, err.to_string()))?),
                "train_fraction" => e.train_fraction = num(&v, n, &k)?,
                "trials" => e.trials = num(&v, n, &k)?,
                "seed" => e.seed = num(&v, n, &k)?,
                "feature_scale" => {
                    e.feature_scale = match v.as_str() {
                        "none" => FeatureScale::None,
                        other => match other.strip_prefix("nn:") {
                            Some(t) => FeatureScale::NearestNeighbor(num(t, n, &k)?),
                            None => return Err(parse_err(n, format!("feature_scale must be `none` or `nn:<target>`, got `{v}`"))),
                        },
                    }
                }
                "fractions" => spec.fractions = list(&v, n, &k)?,
                "r_values" => spec.r_values = usize_range(&v, n, &k)?,
                "manifest" => spec.manifest = Some(PathBuf::from(v)),
                "synthetic.classes" => g.classes = num(&v, n, &k)?,
                "synthetic.subjects" => g.subjects = num(&v, n, &k)?,
                "synthetic.per_cell" => g.per_cell = num(&v, n, &k)?,
                "synthetic.noise" => g.noise_sigma = num(&v, n, &k)?,
                "synthetic.scatterers" => g.scatterers = num(&v, n, &k)?,
                "synthetic.subject_spread" => g.subject_spread = num(&v, n, &k)?,
                "synthetic.jitter" => g.sample_jitter = num(&v, n, &k)?,
                "synthetic.clutter" => g.clutter = num(&v, n, &k)?,
                "stft.window" => g.stft.window = num(&v, n, &k)?,
                "stft.hop" => g.stft.hop = num(&v, n, &k)?,
                "stft.fft_size" => g.stft.fft_size = num(&v, n, &k)?,
                _ => return Err(parse_err(n, format!("unknown key `{k}`"))),
            }
        }
        if !methods.is_empty() {
            spec.experiment.methods = methods;
        }
        spec.experiment.split = SplitPolicy::Ratio(spec.experiment.train_fraction);
        spec.experiment.validate()?;
        Ok(spec)
    }

    /// Canonical `key = value` rendering; parsing it gives back the same spec.
    pub fn to_kv(&self) -> String {
        let e = &self.experiment;
        let g = &self.gestures;
        let StftParams { window, hop, fft_size } = g.stft;
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("normalize", match e.normalize {
            crate::features::NormalizeMode::Binary => "binary".into(),
            crate::features::NormalizeMode::Unit => "unit".into(),
        });
        kv.insert("r", e.r.to_string());
        kv.insert("train_fraction", e.train_fraction.to_string());
        kv.insert("trials", e.trials.to_string());
        kv.insert("seed", e.seed.to_string());
        kv.insert("feature_scale", match e.feature_scale {
            FeatureScale::None => "none".into(),
            FeatureScale::NearestNeighbor(t) => format!("nn:{t}"),
        });
        kv.insert("fractions", join(&self.fractions));
        kv.insert("r_values", join(&self.r_values));
        if let Some(m) = &self.manifest {
            kv.insert("manifest", m.display().to_string());
        }
        kv.insert("synthetic.classes", g.classes.to_string());
        kv.insert("synthetic.subjects", g.subjects.to_string());
        kv.insert("synthetic.per_cell", g.per_cell.to_string());
        kv.insert("synthetic.noise", g.noise_sigma.to_string());
        kv.insert("synthetic.scatterers", g.scatterers.to_string());
        kv.insert("synthetic.subject_spread", g.subject_spread.to_string());
        kv.insert("synthetic.jitter", g.sample_jitter.to_string());
        kv.insert("synthetic.clutter", g.clutter.to_string());
        kv.insert("stft.window", window.to_string());
        kv.insert("stft.hop", hop.to_string());
        kv.insert("stft.fft_size", fft_size.to_string());
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for m in &e.methods {
            out.push_str(&format!("method = {m}\n"));
        }
        out
    }

    /// SHA-256 of the canonical rendering, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
