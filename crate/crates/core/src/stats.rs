//! Long-run statistics: moments, Gaussian KDE, ACF/CCF and the two-sample
//! Kolmogorov-Smirnov statistic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// KDE kernel contributions are dropped beyond this many bandwidths.
const KERNEL_CUTOFF: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdfGrid {
    pub points: usize,
    /// Grid extends this many bandwidths beyond the data range.
    pub pad_bandwidths: f64,
}

impl Default for PdfGrid {
    fn default() -> Self {
        Self { points: 512, pad_bandwidths: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pdf {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub pdf: Pdf,
    /// Lags `0..=L`.
    pub acf: Vec<f64>,
    /// Lags `-L..=L` against the partner series, when one was given.
    pub ccf: Option<Vec<f64>>,
    /// KS distance to the reference sample, when one was given.
    pub ks: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryOptions {
    pub max_lag: usize,
    pub grid: PdfGrid,
    /// Use every `ks_every`-th value of both samples for the KS statistic.
    /// `1` keeps all (dependent) samples.
    pub ks_every: usize,
}

impl SummaryOptions {
    /// ACF horizon of `horizon` time units at sampling interval `delta`.
    pub fn for_horizon(horizon: f64, delta: f64) -> Self {
        Self {
            max_lag: (horizon / delta).round() as usize,
            grid: PdfGrid::default(),
            ks_every: 1,
        }
    }
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("{what} contains non-finite values")));
    }
    Ok(())
}

/// Sample mean and unbiased standard deviation.
pub fn mean_std(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!("{} samples", x.len())));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    Ok((mean, var.sqrt()))
}

fn centered(x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let (mean, _) = mean_std(x)?;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ss = c.iter().map(|v| v * v).sum::<f64>();
    Ok((c, ss))
}

/// Autocorrelation at lags `0..=max_lag`, normalized by the lag-0 sum.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag >= x.len() {
        return Err(Error::Contract(format!(
            "max lag {max_lag} not below series length {}",
            x.len()
        )));
    }
    let (c, ss) = centered(x)?;
    Ok((0..=max_lag)
        .map(|l| if l == 0 { 1.0 } else { c[..c.len() - l].iter().zip(&c[l..]).map(|(a, b)| a * b).sum::<f64>() / ss })
        .collect())
}

/// `corr(a_t, b_{t+l})` for `l = -max_lag..=max_lag`; entry `i` is lag `i - max_lag`.
pub fn cross_correlation(a: &[f64], b: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("series lengths {} and {}", a.len(), b.len())));
    }
    if max_lag >= a.len() {
        return Err(Error::Contract(format!("max lag {max_lag} not below length {}", a.len())));
    }
    let (ca, sa) = centered(a)?;
    let (cb, sb) = centered(b)?;
    let norm = (sa * sb).sqrt();
    let n = a.len();
    let lags = -(max_lag as isize)..=(max_lag as isize);
    Ok(lags
        .map(|l| {
            let s: f64 = if l >= 0 {
                let l = l as usize;
                ca[..n - l].iter().zip(&cb[l..]).map(|(u, v)| u * v).sum()
            } else {
                let l = (-l) as usize;
                ca[l..].iter().zip(&cb[..n - l]).map(|(u, v)| u * v).sum()
            };
            s / norm
        })
        .collect())
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `0.9 min(std, IQR/1.34) n^{-1/5}`.
pub fn silverman_bandwidth(x: &[f64]) -> Result<f64> {
    let (_, std) = mean_std(x)?;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(bandwidth_sorted(&sorted, std))
}

fn bandwidth_sorted(sorted: &[f64], std: f64) -> f64 {
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    0.9 * spread * (sorted.len() as f64).powf(-0.2)
}

/// Gaussian kernel density estimate with Silverman bandwidth, normalized so
/// the trapezoid integral over the grid is one.
pub fn kde(x: &[f64], grid: PdfGrid) -> Result<Pdf> {
    check_finite(x, "kde sample")?;
    if grid.points < 2 {
        return Err(Error::Contract("pdf grid needs at least 2 points".into()));
    }
    let (_, std) = mean_std(x)?;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = bandwidth_sorted(&sorted, std);
    let lo = sorted[0] - grid.pad_bandwidths * h;
    let hi = sorted[sorted.len() - 1] + grid.pad_bandwidths * h;
    let step = (hi - lo) / (grid.points - 1) as f64;
    let xs: Vec<f64> = (0..grid.points).map(|i| lo + step * i as f64).collect();
    let inv_h = 1.0 / h;
    let mut density: Vec<f64> = xs
        .iter()
        .map(|&g| {
            let a = sorted.partition_point(|v| *v < g - KERNEL_CUTOFF * h);
            let b = sorted.partition_point(|v| *v <= g + KERNEL_CUTOFF * h);
            sorted[a..b]
                .iter()
                .map(|v| {
                    let u = (g - v) * inv_h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    let mass = step * (density.iter().sum::<f64>() - 0.5 * (density[0] + density[grid.points - 1]));
    density.iter_mut().for_each(|d| *d /= mass);
    Ok(Pdf { x: xs, density, bandwidth: h })
}

/// Trapezoid integral of a pdf over its grid.
pub fn pdf_mass(pdf: &Pdf) -> f64 {
    pdf.x
        .windows(2)
        .zip(pdf.density.windows(2))
        .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
        .sum()
}

/// Sup distance between the empirical CDFs of two samples.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("KS statistic needs two nonempty samples".into()));
    }
    check_finite(a, "KS sample")?;
    check_finite(b, "KS sample")?;
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

/// Every `every`-th element.
pub fn subsample(x: &[f64], every: usize) -> Vec<f64> {
    x.iter().step_by(every.max(1)).copied().collect()
}

/// Summary of one component: moments, pdf, ACF, and optionally the CCF with
/// `partner` and the KS distance to `reference`.
pub fn summarize(
    x: &[f64],
    partner: Option<&[f64]>,
    reference: Option<&[f64]>,
    opts: &SummaryOptions,
) -> Result<SummaryStats> {
    check_finite(x, "series")?;
    if opts.max_lag >= x.len() {
        return Err(Error::Contract(format!(
            "max lag {} not below series length {}",
            opts.max_lag,
            x.len()
        )));
    }
    let (mean, std) = mean_std(x)?;
    let ks = reference
        .map(|r| ks_statistic(&subsample(x, opts.ks_every), &subsample(r, opts.ks_every)))
        .transpose()?;
    Ok(SummaryStats {
        mean,
        std,
        pdf: kde(x, opts.grid)?,
        acf: acf(x, opts.max_lag)?,
        ccf: partner.map(|p| cross_correlation(x, p, opts.max_lag)).transpose()?,
        ks,
    })
}
