//! Sampled data, covariance estimation and the two equivalent chi-squared forms.
//!
//! A [`SampleSet`] holds `N` independent observation vectors of dimension `d`.
//! Everything downstream works from the estimated mean and covariance, so data
//! files always store raw samples and never pre-averaged values.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Default relative singular-value cutoff for covariance inversion.
pub const DEFAULT_SVD_CUTOFF: f64 = 1e-12;

/// `N` samples of a `d`-dimensional observable together with its abscissa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSampleSet", into = "RawSampleSet")]
pub struct SampleSet {
    abscissa: Vec<f64>,
    samples: DMatrix<f64>,
    tag: String,
}

#[derive(Serialize, Deserialize)]
struct RawSampleSet {
    abscissa: Vec<f64>,
    samples: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    tag: String,
}

impl TryFrom<RawSampleSet> for SampleSet {
    type Error = Error;

    fn try_from(raw: RawSampleSet) -> Result<Self> {
        SampleSet::new(raw.abscissa, raw.samples, raw.tag)
    }
}

impl From<SampleSet> for RawSampleSet {
    fn from(s: SampleSet) -> Self {
        let samples = (0..s.n_samples()).map(|i| s.samples.row(i).iter().cloned().collect()).collect();
        RawSampleSet {
            abscissa: s.abscissa,
            samples,
            tag: s.tag,
        }
    }
}

impl SampleSet {
    pub fn new(abscissa: Vec<f64>, rows: Vec<Vec<f64>>, tag: impl Into<String>) -> Result<Self> {
        let d = abscissa.len();
        if d == 0 {
            return Err(Error::InvalidSampleSet("abscissa is empty".into()));
        }
        if rows.len() < 2 {
            return Err(Error::InvalidSampleSet(format!(
                "need at least 2 samples, found {}",
                rows.len()
            )));
        }
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::InvalidSampleSet(format!(
                "row {i} has length {}, expected {d}",
                row.len()
            )));
        }
        if rows.iter().flatten().chain(abscissa.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSampleSet("non-finite value".into()));
        }
        let samples = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Ok(Self {
            abscissa,
            samples,
            tag: tag.into(),
        })
    }

    /// Builds a sample set from an `N x d` matrix.
    pub fn from_matrix(abscissa: Vec<f64>, samples: DMatrix<f64>, tag: impl Into<String>) -> Result<Self> {
        check_len(abscissa.len(), samples.ncols())?;
        if samples.nrows() < 2 {
            return Err(Error::InvalidSampleSet(format!(
                "need at least 2 samples, found {}",
                samples.nrows()
            )));
        }
        if abscissa.is_empty() {
            return Err(Error::InvalidSampleSet("abscissa is empty".into()));
        }
        Ok(Self {
            abscissa,
            samples,
            tag: tag.into(),
        })
    }

    pub fn abscissa(&self) -> &[f64] {
        &self.abscissa
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn dim(&self) -> usize {
        self.abscissa.len()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.samples.row(i).transpose()
    }

    /// Keeps only the coordinates selected by `sel`.
    pub fn select(&self, sel: &SubsetSelector) -> Result<SampleSet> {
        check_len(self.dim(), sel.len())?;
        let idx = sel.kept_indices();
        if idx.is_empty() {
            return Err(Error::EmptyKeepSet);
        }
        let abscissa = idx.iter().map(|&j| self.abscissa[j]).collect();
        let samples = self.samples.select_columns(idx.iter());
        Ok(SampleSet {
            abscissa,
            samples,
            tag: self.tag.clone(),
        })
    }

    /// Reads the CSV layout: a header row of abscissa values, then one row per sample.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let abscissa = rdr
            .headers()?
            .iter()
            .map(|h| {
                h.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("abscissa header `{h}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("sample value `{v}` is not a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        SampleSet::new(abscissa, rows, "")
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.abscissa.iter().map(|x| x.to_string()))?;
        for i in 0..self.n_samples() {
            wtr.write_record(self.samples.row(i).iter().map(|x| x.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }
}

/// Boolean keep-mask over the data coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSelector {
    keep_mask: Vec<bool>,
}

impl SubsetSelector {
    pub fn new(keep_mask: Vec<bool>) -> Result<Self> {
        if !keep_mask.iter().any(|&k| k) {
            return Err(Error::EmptyKeepSet);
        }
        Ok(Self { keep_mask })
    }

    pub fn keep_all(d: usize) -> Self {
        Self {
            keep_mask: vec![true; d],
        }
    }

    /// Keeps the coordinates whose abscissa lies in `[min, max]`.
    pub fn window(abscissa: &[f64], min: Option<f64>, max: Option<f64>) -> Result<Self> {
        let mask = abscissa
            .iter()
            .map(|&x| min.is_none_or(|lo| x >= lo) && max.is_none_or(|hi| x <= hi))
            .collect();
        Self::new(mask)
    }

    pub fn keep_mask(&self) -> &[bool] {
        &self.keep_mask
    }

    pub fn len(&self) -> usize {
        self.keep_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep_mask.is_empty()
    }

    pub fn n_kept(&self) -> usize {
        self.keep_mask.iter().filter(|&&k| k).count()
    }

    pub fn n_cut(&self) -> usize {
        self.len() - self.n_kept()
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        self.keep_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect()
    }
}

/// How covariance information is restricted to a data subset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestrictMode {
    /// Extract the covariance submatrix, then invert it.
    #[default]
    SubmatrixThenInvert,
    /// Invert the full covariance, then take the submatrix of the inverse.
    InvertThenSubmatrix,
}

/// Sample mean and covariance together with a conditioned inverse.
///
/// The inverse is formed in the correlation basis, `Σ⁻¹ = D⁻¹ R⁺ D⁻¹` with
/// `D = diag(σ)`, so the relative cutoff acts on the correlation spectrum
/// rather than on raw variances that can span many orders of magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    abscissa: Vec<f64>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    n_samples: usize,
    inv_cov: DMatrix<f64>,
    // rows span the retained modes; whitenerᵀ·whitener == inv_cov
    whitener: DMatrix<f64>,
    svd_cutoff: f64,
}

impl CovarianceEstimate {
    /// Builds an estimate from an externally supplied mean and covariance.
    pub fn from_parts(
        abscissa: Vec<f64>,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        n_samples: usize,
        svd_cutoff: f64,
    ) -> Result<Self> {
        let d = mean.len();
        check_len(d, abscissa.len())?;
        check_len(d, cov.nrows())?;
        check_len(d, cov.ncols())?;
        check_cutoff(svd_cutoff)?;
        let (inv_cov, whitener) = conditioned_inverse(&cov, svd_cutoff)?;
        Ok(Self {
            abscissa,
            mean,
            cov,
            n_samples,
            inv_cov,
            whitener,
            svd_cutoff,
        })
    }

    pub fn abscissa(&self) -> &[f64] {
        &self.abscissa
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn inv_cov(&self) -> &DMatrix<f64> {
        &self.inv_cov
    }

    /// Matrix `W` with `WᵀW` equal to the conditioned inverse covariance.
    pub fn whitener(&self) -> &DMatrix<f64> {
        &self.whitener
    }

    pub fn svd_cutoff(&self) -> f64 {
        self.svd_cutoff
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of retained modes in the conditioned inverse.
    pub fn rank(&self) -> usize {
        self.whitener.nrows()
    }
}

fn check_cutoff(cutoff: f64) -> Result<()> {
    if !(0.0..1.0).contains(&cutoff) {
        return Err(Error::DegenerateData(format!(
            "svd cutoff {cutoff} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Mean and `N − 1` covariance of the samples, plus the conditioned inverse.
pub fn estimate_covariance(s: &SampleSet, svd_cutoff: f64) -> Result<CovarianceEstimate> {
    check_cutoff(svd_cutoff)?;
    let n = s.n_samples();
    let d = s.dim();
    let mean = DVector::from_fn(d, |j, _| s.samples.column(j).sum() / n as f64);
    let mut centered = s.samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    cov = (&cov + cov.transpose()) * 0.5;
    let (inv_cov, whitener) = conditioned_inverse(&cov, svd_cutoff)?;
    Ok(CovarianceEstimate {
        abscissa: s.abscissa.clone(),
        mean,
        cov,
        n_samples: n,
        inv_cov,
        whitener,
        svd_cutoff,
    })
}

/// Pseudo-inverse of a covariance matrix through the SVD of its correlation matrix.
///
/// Returns `(inverse, whitener)`. Zero-variance coordinates are dropped when a
/// cutoff is in effect and rejected when `cutoff == 0`.
pub(crate) fn conditioned_inverse(cov: &DMatrix<f64>, cutoff: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = cov.nrows();
    let sd: Vec<f64> = (0..d).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let active: Vec<usize> = (0..d).filter(|&i| sd[i] > 0.0).collect();
    if cutoff == 0.0 && active.len() < d {
        return Err(Error::DegenerateData(
            "zero-variance coordinate with no svd cutoff".into(),
        ));
    }
    if active.is_empty() {
        return Ok((DMatrix::zeros(d, d), DMatrix::zeros(0, d)));
    }
    let m = active.len();
    let corr = DMatrix::from_fn(m, m, |a, b| {
        let (i, j) = (active[a], active[b]);
        cov[(i, j)] / (sd[i] * sd[j])
    });
    let corr = (&corr + corr.transpose()) * 0.5;
    // for a symmetric PSD matrix the eigendecomposition is its SVD
    let eig = corr.symmetric_eigen();
    let values = eig.eigenvalues.map(|v| v.max(0.0));
    let s_max = values.max();
    if cutoff == 0.0 {
        let s_min = values.min();
        if s_min <= s_max * m as f64 * f64::EPSILON {
            return Err(Error::DegenerateData(
                "covariance is numerically singular and no svd cutoff is set".into(),
            ));
        }
    }
    let kept: Vec<usize> = (0..m)
        .filter(|&j| values[j] > 0.0 && values[j] > cutoff * s_max)
        .collect();
    let mut whitener = DMatrix::zeros(kept.len(), d);
    for (r, &j) in kept.iter().enumerate() {
        let scale = 1.0 / values[j].sqrt();
        for (a, &i) in active.iter().enumerate() {
            whitener[(r, i)] = eig.eigenvectors[(a, j)] * scale / sd[i];
        }
    }
    let inv = whitener.tr_mul(&whitener);
    Ok((inv, whitener))
}

/// Mean-based chi-squared `(ȳ − f)ᵀ (Σ/N)⁻¹ (ȳ − f)`.
pub fn chi2_mean_based(est: &CovarianceEstimate, prediction: &[f64]) -> Result<f64> {
    check_len(est.dim(), prediction.len())?;
    let r = &est.mean - DVector::from_column_slice(prediction);
    Ok(est.n_samples as f64 * r.dot(&(&est.inv_cov * &r)))
}

/// Sample-sum chi-squared `Σᵢ (yᵢ − f)ᵀ Σ⁻¹ (yᵢ − f)`.
///
/// Differs from [`chi2_mean_based`] by the constant `(N − 1)·rank(Σ)`.
pub fn chi2_sample_sum(s: &SampleSet, est: &CovarianceEstimate, prediction: &[f64]) -> Result<f64> {
    check_len(est.dim(), prediction.len())?;
    check_len(est.dim(), s.dim())?;
    let f = DVector::from_column_slice(prediction);
    Ok((0..s.n_samples())
        .map(|i| {
            let r = s.row(i) - &f;
            r.dot(&(&est.inv_cov * &r))
        })
        .sum())
}

/// Restricts covariance information to the coordinates kept by `sel`.
pub fn restrict(est: &CovarianceEstimate, sel: &SubsetSelector, mode: RestrictMode) -> Result<CovarianceEstimate> {
    check_len(est.dim(), sel.len())?;
    if sel.n_cut() == 0 {
        return Ok(est.clone());
    }
    let idx = sel.kept_indices();
    if idx.is_empty() {
        return Err(Error::EmptyKeepSet);
    }
    let abscissa: Vec<f64> = idx.iter().map(|&i| est.abscissa[i]).collect();
    let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| est.mean[i]));
    let cov = est.cov.select_rows(idx.iter()).select_columns(idx.iter());
    let (inv_cov, whitener) = match mode {
        RestrictMode::SubmatrixThenInvert => conditioned_inverse(&cov, est.svd_cutoff)?,
        RestrictMode::InvertThenSubmatrix => {
            let inv = est.inv_cov.select_rows(idx.iter()).select_columns(idx.iter());
            let w = whitener_from_inverse(&inv, &cov);
            (inv, w)
        }
    };
    Ok(CovarianceEstimate {
        abscissa,
        mean,
        cov,
        n_samples: est.n_samples,
        inv_cov,
        whitener,
        svd_cutoff: est.svd_cutoff,
    })
}

// Factor a given PSD inverse as WᵀW, working in the correlation scale of `cov`.
fn whitener_from_inverse(inv: &DMatrix<f64>, cov: &DMatrix<f64>) -> DMatrix<f64> {
    let d = inv.nrows();
    let sd: Vec<f64> = (0..d).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let scaled = DMatrix::from_fn(d, d, |i, j| inv[(i, j)] * sd[i] * sd[j]);
    let scaled = (&scaled + scaled.transpose()) * 0.5;
    let eig = scaled.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let kept: Vec<usize> = (0..d)
        .filter(|&j| eig.eigenvalues[j] > lmax * d as f64 * f64::EPSILON)
        .collect();
    let mut w = DMatrix::zeros(kept.len(), d);
    for (r, &j) in kept.iter().enumerate() {
        let scale = eig.eigenvalues[j].sqrt();
        for i in 0..d {
            if sd[i] > 0.0 {
                w[(r, i)] = eig.eigenvectors[(i, j)] * scale / sd[i];
            }
        }
    }
    w
}
