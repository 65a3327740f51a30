//! Silo datasets: synthetic generation, stratified splits, CSV ingestion.
//!
//! A silo is one data source whose raw samples never leave it during
//! federated training. Features are binary indicator vectors (medication
//! given / not given), labels are binary outcomes. Real cohort extracts
//! load from CSV; the synthetic generator produces heterogeneous silos
//! calibrated to a target prevalence.
//!
//! Synthetic model per silo `i`: the feature-prevalence vector is a
//! convex blend of a shared global draw and a silo-private draw with
//! blend weight = `heterogeneity` (0 makes all silos identical). The
//! label coefficient vector is a shared global draw plus two
//! silo-specific deviations that both scale with `heterogeneity`: a mild
//! dense perturbation, and a strong sparse one on a small set of
//! "signature" features per silo (locally common practices with strong
//! local outcome effects; signature features also get a prevalence
//! boost). Features are Bernoulli draws from the prevalence vector;
//! labels come from a logistic model whose intercept is solved by
//! bisection so the silo's expected positive rate hits
//! `target_prevalence`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::audit::AccessScope;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::seeding::{self, silo_tag};

const TAG_GLOBAL: u64 = 0x01;
const TAG_SILO: u64 = 0x02;
const TAG_SIZE: u64 = 0x03;
const TAG_SPLIT: u64 = 0x04;

/// Feature-prevalence draws live in this band; mean activity per feature
/// is the midpoint.
const PREV_LO: f64 = 0.01;
const PREV_HI: f64 = 0.09;

/// Target standard deviation of the shared part of the label logit.
/// Label coefficients are scaled so this holds independent of
/// feature_dim.
const LOGIT_SD: f64 = 2.4;

/// At full heterogeneity the dense silo-private coefficient component
/// carries this fraction of the blend; the rest stays global, so silo
/// label models diverge without becoming unrelated tasks.
const COEF_MIX: f64 = 0.35;

/// Fraction of features that act as one silo's signature set.
const SIG_FRACTION: f64 = 0.08;

/// Prevalence boost of a signature feature inside its silo, at h = 1.
const SIG_PREV_BOOST: f64 = 0.20;

/// Label-logit weight (either sign) a signature feature adds inside its
/// silo, at h = 1.
const SIG_STRENGTH: f64 = 8.0;

/// Log-normal silo sizes are clipped to this range.
const SIZE_MIN: usize = 200;
const SIZE_MAX: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One silo's private shard: binary features, binary labels, and a
/// per-sample split tag. Immutable once built; training code reads it
/// through an [`AccessScope`] so cross-silo reads can be audited.
#[derive(Debug, Clone)]
pub struct SiloDataset {
    silo_id: String,
    feature_dim: usize,
    /// Row-major `n × feature_dim`, entries 0 or 1.
    features: Vec<u8>,
    labels: Vec<u8>,
    split: Vec<Split>,
}

impl SiloDataset {
    pub fn new(
        silo_id: impl Into<String>,
        feature_dim: usize,
        features: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<SiloDataset> {
        let silo_id = silo_id.into();
        if silo_id.is_empty() {
            return Err(Error::invalid("empty silo id"));
        }
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be >= 1"));
        }
        if labels.is_empty() {
            return Err(Error::invalid(format!("silo {silo_id}: no samples")));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::shape(format!(
                "silo {silo_id}: {} feature values for {} samples x {} dims",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        if features.iter().any(|&v| v > 1) || labels.iter().any(|&v| v > 1) {
            return Err(Error::invalid(format!(
                "silo {silo_id}: features and labels must be 0 or 1"
            )));
        }
        let n = labels.len();
        Ok(SiloDataset { silo_id, feature_dim, features, labels, split: vec![Split::Train; n] })
    }

    pub fn silo_id(&self) -> &str {
        &self.silo_id
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split_tags(&self) -> &[Split] {
        &self.split
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Sample indices carrying the given split tag.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split.iter().filter(|&&s| s == split).count()
    }

    /// Materializes the rows of one split as a dense f64 matrix plus the
    /// matching labels. The access is recorded against `scope`.
    pub fn split_data(&self, split: Split, scope: &AccessScope) -> (Matrix, Vec<u8>) {
        let idx = self.split_indices(split);
        (self.rows_matrix(&idx, scope), idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Materializes arbitrary rows as a dense f64 matrix.
    pub fn rows_matrix(&self, rows: &[usize], scope: &AccessScope) -> Matrix {
        scope.record(&self.silo_id);
        let d = self.feature_dim;
        let mut values = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            values.extend(self.features[r * d..(r + 1) * d].iter().map(|&v| v as f64));
        }
        Array2::from_shape_vec((rows.len(), d), values).expect("row gather shape")
    }

    fn with_split(&self, split: Vec<Split>) -> SiloDataset {
        SiloDataset {
            silo_id: self.silo_id.clone(),
            feature_dim: self.feature_dim,
            features: self.features.clone(),
            labels: self.labels.clone(),
            split,
        }
    }
}

/// How many samples each generated silo gets.
#[derive(Debug, Clone, PartialEq)]
pub enum SiloSizes {
    Fixed(usize),
    PerSilo(Vec<usize>),
    /// Hospitals vary widely in size; log-normal, clipped to
    /// `[200, 20000]`.
    LogNormal {
        median: f64,
        sigma: f64,
    },
}

/// Parameters of the synthetic cohort generator.
#[derive(Debug, Clone)]
pub struct GenSpec {
    pub n_silos: usize,
    pub sizes: SiloSizes,
    pub feature_dim: usize,
    /// 0 = IID silos, 1 = fully silo-private distributions.
    pub heterogeneity: f64,
    /// Expected positive-label fraction, strictly inside (0, 1).
    pub target_prevalence: f64,
    pub seed: u64,
}

impl GenSpec {
    fn validate(&self) -> Result<()> {
        if self.n_silos == 0 {
            return Err(Error::invalid("n_silos must be >= 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return Err(Error::invalid("heterogeneity must be in [0, 1]"));
        }
        if !(self.target_prevalence > 0.0 && self.target_prevalence < 1.0) {
            return Err(Error::invalid("target_prevalence must be inside (0, 1)"));
        }
        match &self.sizes {
            SiloSizes::Fixed(n) if *n == 0 => Err(Error::invalid("silo size must be >= 1")),
            SiloSizes::PerSilo(v) if v.len() != self.n_silos => {
                Err(Error::invalid(format!("{} sizes for {} silos", v.len(), self.n_silos)))
            }
            SiloSizes::PerSilo(v) if v.contains(&0) => {
                Err(Error::invalid("silo size must be >= 1"))
            }
            SiloSizes::LogNormal { median, sigma }
                if median.is_nan() || *median <= 0.0 || sigma.is_nan() || *sigma < 0.0 =>
            {
                Err(Error::invalid("log-normal sizes need median > 0 and sigma >= 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Per-silo generating parameters, exposed for calibration checks.
#[derive(Debug, Clone)]
pub struct GenDiagnostics {
    pub silo_ids: Vec<String>,
    /// The blended Bernoulli prevalence vector of each silo.
    pub feature_prevalence: Vec<Vec<f64>>,
    /// Solved logistic intercept of each silo.
    pub intercepts: Vec<f64>,
}

/// Zero-padded silo id; lexicographic order matches numeric order.
pub fn silo_id_for_index(index: usize, n_silos: usize) -> String {
    let width = n_silos.saturating_sub(1).to_string().len().max(3);
    format!("h{index:0width$}")
}

pub fn generate(spec: &GenSpec) -> Result<Vec<SiloDataset>> {
    generate_with_diagnostics(spec).map(|(silos, _)| silos)
}

pub fn generate_with_diagnostics(spec: &GenSpec) -> Result<(Vec<SiloDataset>, GenDiagnostics)> {
    spec.validate()?;
    let d = spec.feature_dim;
    let h = spec.heterogeneity;

    // Shared global draws; each silo blends its private draws against
    // these with weight h.
    let mut global_rng = seeding::stream_rng(spec.seed, &[TAG_GLOBAL]);
    let global_prev: Vec<f64> =
        (0..d).map(|_| PREV_LO + (PREV_HI - PREV_LO) * global_rng.random::<f64>()).collect();
    let coef_sd = LOGIT_SD / (d as f64 * mid_prev_variance()).sqrt();
    let global_coef: Vec<f64> =
        (0..d).map(|_| coef_sd * standard_normal(&mut global_rng)).collect();

    let per_silo: Result<Vec<_>> = (0..spec.n_silos)
        .into_par_iter()
        .map(|i| {
            let silo_id = silo_id_for_index(i, spec.n_silos);
            let n = resolve_size(&spec.sizes, i, spec.seed)?;
            let mut rng = seeding::stream_rng(spec.seed, &[TAG_SILO, i as u64]);

            // Private draws happen unconditionally, so the RNG stream
            // layout (and thus every downstream draw) is independent of
            // h. That makes heterogeneity effects exactly linear in h.
            let mut prev: Vec<f64> = global_prev
                .iter()
                .map(|&g| {
                    let p = PREV_LO + (PREV_HI - PREV_LO) * rng.random::<f64>();
                    (1.0 - h) * g + h * p
                })
                .collect();
            let mut coef: Vec<f64> = global_coef
                .iter()
                .map(|&g| {
                    let p = coef_sd * standard_normal(&mut rng);
                    (1.0 - COEF_MIX * h) * g + COEF_MIX * h * p
                })
                .collect();
            let sig_count = (d as f64 * SIG_FRACTION).ceil() as usize;
            for j in rand::seq::index::sample(&mut rng, d, sig_count) {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                prev[j] = (prev[j] + h * SIG_PREV_BOOST).min(0.95);
                coef[j] += h * sign * SIG_STRENGTH;
            }

            let mut features = vec![0u8; n * d];
            for row in features.chunks_exact_mut(d) {
                for (slot, &q) in row.iter_mut().zip(&prev) {
                    *slot = u8::from(rng.random::<f64>() < q);
                }
            }

            let logits: Vec<f64> = features
                .chunks_exact(d)
                .map(|row| row.iter().zip(&coef).filter(|(&x, _)| x == 1).map(|(_, &b)| b).sum())
                .collect();
            let intercept = solve_intercept(&logits, spec.target_prevalence);
            let labels: Vec<u8> = logits
                .iter()
                .map(|&z| u8::from(rng.random::<f64>() < sigmoid_scalar(z + intercept)))
                .collect();

            let dataset = SiloDataset::new(silo_id, d, features, labels)?;
            Ok((dataset, prev, intercept))
        })
        .collect();

    let mut silos = Vec::with_capacity(spec.n_silos);
    let mut diag = GenDiagnostics {
        silo_ids: Vec::with_capacity(spec.n_silos),
        feature_prevalence: Vec::with_capacity(spec.n_silos),
        intercepts: Vec::with_capacity(spec.n_silos),
    };
    for (dataset, prev, intercept) in per_silo? {
        diag.silo_ids.push(dataset.silo_id().to_string());
        diag.feature_prevalence.push(prev);
        diag.intercepts.push(intercept);
        silos.push(dataset);
    }
    Ok((silos, diag))
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sigmoid_scalar(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn mid_prev_variance() -> f64 {
    let q = 0.5 * (PREV_LO + PREV_HI);
    q * (1.0 - q)
}

/// Bisection for the intercept c with mean(sigmoid(z + c)) = target.
/// The mean is strictly increasing in c, so 200 halvings of [-60, 60]
/// land well below f64 resolution.
fn solve_intercept(logits: &[f64], target: f64) -> f64 {
    let mean_prob = |c: f64| -> f64 {
        logits.iter().map(|&z| sigmoid_scalar(z + c)).sum::<f64>() / logits.len() as f64
    };
    let (mut lo, mut hi) = (-60.0_f64, 60.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn resolve_size(sizes: &SiloSizes, index: usize, seed: u64) -> Result<usize> {
    Ok(match sizes {
        SiloSizes::Fixed(n) => *n,
        SiloSizes::PerSilo(v) => v[index],
        SiloSizes::LogNormal { median, sigma } => {
            let mut rng = seeding::stream_rng(seed, &[TAG_SIZE, index as u64]);
            let z = standard_normal(&mut rng);
            let raw = (median.ln() + sigma * z).exp();
            (raw.round() as usize).clamp(SIZE_MIN, SIZE_MAX)
        }
    })
}

/// Emitted when a silo could not be stratified (it lacks one class
/// entirely) and all its samples were placed in the training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitWarning {
    pub silo_id: String,
    pub message: String,
}

/// Assigns train/val/test tags stratified by label. Each class is
/// shuffled with a stream derived from `(seed, silo id)` and cut at
/// boundaries `round(r_train * n)` and `round((r_train + r_val) * n)`,
/// so split sizes track the ratios within rounding per class. A silo
/// missing one class entirely goes whole into train with a warning.
pub fn split(
    dataset: &SiloDataset,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(SiloDataset, Option<SplitWarning>)> {
    if ratios.iter().any(|&r| !(0.0..=1.0).contains(&r) || !r.is_finite()) {
        return Err(Error::invalid("split ratios must lie in [0, 1]"));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split ratios must sum to 1"));
    }

    let pos: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == 1).collect();
    let neg: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        let warning = SplitWarning {
            silo_id: dataset.silo_id().to_string(),
            message: format!(
                "silo {}: only one label class present; all {} samples assigned to train",
                dataset.silo_id(),
                dataset.len()
            ),
        };
        return Ok((dataset.with_split(vec![Split::Train; dataset.len()]), Some(warning)));
    }

    let mut rng = seeding::stream_rng(seed, &[TAG_SPLIT, silo_tag(dataset.silo_id())]);
    let mut tags = vec![Split::Train; dataset.len()];
    for stratum in [pos, neg] {
        let mut order = stratum;
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let n = order.len() as f64;
        let b1 = (ratios[0] * n).round() as usize;
        let b2 = ((ratios[0] + ratios[1]) * n).round() as usize;
        for (k, &sample) in order.iter().enumerate() {
            tags[sample] = if k < b1 {
                Split::Train
            } else if k < b2 {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok((dataset.with_split(tags), None))
}

/// Applies [`split`] across a cohort, collecting warnings.
pub fn split_all(
    silos: &[SiloDataset],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<SiloDataset>, Vec<SplitWarning>)> {
    let mut out = Vec::with_capacity(silos.len());
    let mut warnings = Vec::new();
    for silo in silos {
        let (tagged, warning) = split(silo, ratios, seed)?;
        out.push(tagged);
        warnings.extend(warning);
    }
    Ok((out, warnings))
}

const CSV_HEADER: &str = "silo_id,label,features";

/// Writes silos as CSV: a header, then one row per sample in the form
/// `silo_id,label,i1;i2;...` where the third field lists the indices of
/// active features in ascending order (empty if none). Split tags are
/// not serialized.
pub fn save_csv(silos: &[SiloDataset], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{CSV_HEADER}")?;
    for silo in silos {
        let d = silo.feature_dim;
        for (row, &label) in silo.features.chunks_exact(d).zip(&silo.labels) {
            let active: Vec<String> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 1)
                .map(|(j, _)| j.to_string())
                .collect();
            writeln!(out, "{},{},{}", silo.silo_id, label, active.join(";"))?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a cohort CSV written by [`save_csv`] (or an external extract in
/// the same format). The feature dimension is inferred as
/// `max index + 1` unless given. Silos come back in ascending id order;
/// sample order within a silo follows the file. All samples are tagged
/// train.
pub fn load_csv(path: &Path, feature_dim: Option<usize>) -> Result<Vec<SiloDataset>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end() == CSV_HEADER => {}
        Some((_, first)) => {
            return Err(Error::parse(1, format!("expected header `{CSV_HEADER}`, got `{first}`")))
        }
        None => return Err(Error::parse(1, "empty file")),
    }

    struct RawRow {
        label: u8,
        active: Vec<usize>,
    }
    let mut by_silo: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    let mut max_index: Option<usize> = None;

    for (idx, line) in lines {
        let line_no = idx + 1; // 1-based, header is line 1
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (Some(silo_id), Some(label), Some(feats)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::parse(line_no, "expected 3 comma-separated fields"));
        };
        if silo_id.is_empty() {
            return Err(Error::parse(line_no, "empty silo id"));
        }
        let label: u8 = match label {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::parse(line_no, format!("label must be 0 or 1, got `{other}`")))
            }
        };
        let mut active = Vec::new();
        if !feats.is_empty() {
            for tok in feats.split(';') {
                let j: usize = tok
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("invalid feature index `{tok}`")))?;
                if active.contains(&j) {
                    return Err(Error::parse(line_no, format!("duplicate feature index {j}")));
                }
                if let Some(dim) = feature_dim {
                    if j >= dim {
                        return Err(Error::parse(
                            line_no,
                            format!("feature index {j} out of range for dimension {dim}"),
                        ));
                    }
                }
                max_index = Some(max_index.map_or(j, |m| m.max(j)));
                active.push(j);
            }
        }
        by_silo.entry(silo_id.to_string()).or_default().push(RawRow { label, active });
    }

    if by_silo.is_empty() {
        return Err(Error::parse(1, "no data rows"));
    }
    let dim = match feature_dim {
        Some(d) => d,
        None => match max_index {
            Some(m) => m + 1,
            None => {
                return Err(Error::invalid(
                    "cannot infer feature dimension: no active features in file",
                ))
            }
        },
    };

    by_silo
        .into_iter()
        .map(|(silo_id, rows)| {
            let mut features = vec![0u8; rows.len() * dim];
            let mut labels = Vec::with_capacity(rows.len());
            for (r, row) in rows.iter().enumerate() {
                labels.push(row.label);
                for &j in &row.active {
                    features[r * dim + j] = 1;
                }
            }
            SiloDataset::new(silo_id, dim, features, labels)
        })
        .collect()
}
