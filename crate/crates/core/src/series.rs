use ndarray::Array2;

use crate::error::{Error, Result};

/// Uniformly sampled multivariate series with step `delta`.
///
/// Row `n` of `x` is the observation `x^n`. Row `i` of `z` (and of `xi`) is
/// the discrepancy `z^{i+1}` on the transition `x^i -> x^{i+1}`, so both have
/// exactly one row fewer than `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSet {
    pub delta: f64,
    pub x: Array2<f64>,
    pub z: Option<Array2<f64>>,
    pub xi: Option<Array2<f64>>,
}

impl SeriesSet {
    pub fn new(delta: f64, x: Array2<f64>) -> Result<Self> {
        let set = Self {
            delta,
            x,
            z: None,
            xi: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn with_z(mut self, z: Array2<f64>) -> Result<Self> {
        self.z = Some(z);
        self.validate()?;
        Ok(self)
    }

    pub fn with_xi(mut self, xi: Array2<f64>) -> Result<Self> {
        self.xi = Some(xi);
        self.validate()?;
        Ok(self)
    }

    /// Number of observation rows.
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// Spatial dimension `K`.
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        let k = self.x.ncols();
        let n = self.x.nrows();
        for (name, arr) in [("z", &self.z), ("xi", &self.xi)] {
            if let Some(a) = arr {
                if a.ncols() != k {
                    return Err(Error::Dimension(format!(
                        "{name} has {} columns, x has {k}",
                        a.ncols()
                    )));
                }
                if a.nrows() + 1 != n {
                    return Err(Error::Dimension(format!(
                        "{name} has {} rows, expected {}",
                        a.nrows(),
                        n.saturating_sub(1)
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_row_count_is_checked() {
        let x = Array2::zeros((5, 4));
        let s = SeriesSet::new(0.1, x).unwrap();
        assert!(s.clone().with_z(Array2::zeros((4, 4))).is_ok());
        assert!(matches!(
            s.clone().with_z(Array2::zeros((5, 4))),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            s.with_z(Array2::zeros((4, 3))),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn delta_must_be_positive() {
        assert!(SeriesSet::new(0.0, Array2::zeros((2, 4))).is_err());
    }
}
