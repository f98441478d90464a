use ndarray::Array2;

use crate::error::{Error, Result};
use crate::reduction::ReducedMap;
use crate::series::SeriesSet;

/// Observations, their `R_delta` images and the discrepancy series, stored
/// component-major for the likelihood kernels.
#[derive(Debug, Clone)]
pub struct NarmaxData {
    pub(crate) delta: f64,
    /// `x[k][n]`, `N` values per component.
    pub(crate) x: Vec<Vec<f64>>,
    /// `R_delta(x^n)` per component.
    pub(crate) rx: Vec<Vec<f64>>,
    /// `z^{n+1}` at index `n`, `N - 1` values per component.
    pub(crate) z: Vec<Vec<f64>>,
    /// Components entering the pooled likelihood, in summation order.
    pub(crate) active: Vec<usize>,
}

fn columns(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.columns().into_iter().map(|c| c.to_vec()).collect()
}

impl NarmaxData {
    /// Requires `series.z`, e.g. from [`ReducedMap::extract_discrepancy`].
    pub fn new(map: &ReducedMap, series: &SeriesSet) -> Result<Self> {
        series.validate()?;
        let z = series.z.as_ref().ok_or_else(|| {
            Error::Contract("series has no discrepancy z; extract it first".into())
        })?;
        if series.dim() != map.k {
            return Err(Error::Dimension(format!(
                "series has {} components, reduced map has {}",
                series.dim(),
                map.k
            )));
        }
        if (series.delta - map.delta).abs() > 1e-12 * map.delta {
            return Err(Error::Config(format!(
                "series delta {} differs from reduced map delta {}",
                series.delta, map.delta
            )));
        }
        let rx = map.increments(series.x.view())?;
        Ok(Self {
            delta: series.delta,
            x: columns(&series.x),
            rx: columns(&rx),
            z: columns(z),
            active: (0..map.k).collect(),
        })
    }

    /// Extracts `z` when the series does not carry it yet.
    pub fn from_observations(map: &ReducedMap, series: &SeriesSet) -> Result<Self> {
        if series.z.is_some() {
            return Self::new(map, series);
        }
        let z = map.extract_discrepancy(series.x.view())?;
        Self::new(map, &series.clone().with_z(z)?)
    }

    /// Restricts the likelihood to a single component.
    pub fn only_component(mut self, k: usize) -> Result<Self> {
        if k >= self.x.len() {
            return Err(Error::Dimension(format!("component {k} out of range")));
        }
        self.active = vec![k];
        Ok(self)
    }

    /// The first `rows` observations.
    pub fn prefix(&self, rows: usize) -> Result<Self> {
        if rows < 2 || rows > self.rows() {
            return Err(Error::InsufficientData(format!(
                "prefix of {rows} rows from {}",
                self.rows()
            )));
        }
        let cut = |v: &Vec<Vec<f64>>, n: usize| v.iter().map(|c| c[..n].to_vec()).collect();
        Ok(Self {
            delta: self.delta,
            x: cut(&self.x, rows),
            rx: cut(&self.rx, rows),
            z: cut(&self.z, rows - 1),
            active: self.active.clone(),
        })
    }

    /// Number of observation rows `N`.
    pub fn rows(&self) -> usize {
        self.x.first().map_or(0, |c| c.len())
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }
}
