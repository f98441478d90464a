//! Deterministic one-step map of the truncated model and exact discrepancy
//! extraction.
//!
//! With `x^{n+1} = x^n + delta R_delta(x^n) + delta z^{n+1}`, the discrepancy
//! `z^{n+1} = (x^{n+1} - x^n) / delta - R_delta(x^n)` is computed from the data
//! alone; no derivative of `x` is approximated.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lorenz96::{truncated_rhs, BLOW_UP_THRESHOLD};

/// One-step method used to discretize the truncated vector field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    /// Explicit midpoint.
    Rk2,
    #[default]
    Rk4,
}

/// `R_delta` for the resolved-only Lorenz 96 field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedMap {
    pub k: usize,
    pub forcing: f64,
    pub delta: f64,
    pub scheme: Scheme,
}

impl ReducedMap {
    pub fn new(k: usize, forcing: f64, delta: f64, scheme: Scheme) -> Result<Self> {
        if k < 4 {
            return Err(Error::Config(format!("k must be >= 4, got {k}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("delta must be positive, got {delta}")));
        }
        Ok(Self { k, forcing, delta, scheme })
    }

    /// Writes `R_delta(x)` into `out`, so that the deterministic step is
    /// `x + delta * out`. Both slices must have length `k`.
    pub fn increment_into(&self, x: &[f64], out: &mut [f64], scratch: &mut Scratch) -> Result<()> {
        if x.len() != self.k || out.len() != self.k {
            return Err(Error::Dimension(format!(
                "reduced map of dimension {} applied to length {}",
                self.k,
                x.len()
            )));
        }
        let f = self.forcing;
        let h = self.delta;
        let Scratch { k1, k2, k3, k4, tmp } = scratch;
        match self.scheme {
            Scheme::Euler => truncated_rhs(f, x, out),
            Scheme::Rk2 => {
                truncated_rhs(f, x, k1);
                for i in 0..self.k {
                    tmp[i] = x[i] + 0.5 * h * k1[i];
                }
                truncated_rhs(f, tmp, out);
            }
            Scheme::Rk4 => {
                truncated_rhs(f, x, k1);
                for i in 0..self.k {
                    tmp[i] = x[i] + 0.5 * h * k1[i];
                }
                truncated_rhs(f, tmp, k2);
                for i in 0..self.k {
                    tmp[i] = x[i] + 0.5 * h * k2[i];
                }
                truncated_rhs(f, tmp, k3);
                for i in 0..self.k {
                    tmp[i] = x[i] + h * k3[i];
                }
                truncated_rhs(f, tmp, k4);
                for i in 0..self.k {
                    out[i] = (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]) / 6.0;
                }
            }
        }
        if out.iter().all(|v| v.is_finite() && v.abs() <= BLOW_UP_THRESHOLD) {
            Ok(())
        } else {
            Err(Error::BlowUp { step: 0 })
        }
    }

    pub fn scratch(&self) -> Scratch {
        Scratch::new(self.k)
    }

    /// Allocating form of [`ReducedMap::increment_into`].
    pub fn reduced_increment(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.k];
        self.increment_into(x, &mut out, &mut self.scratch())?;
        Ok(out)
    }

    /// `R_delta` applied to every row of `x`.
    pub fn increments(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(x.dim());
        let mut sc = self.scratch();
        let mut buf = vec![0.0; self.k];
        for (n, (row, mut dst)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let src = row.to_vec();
            self.increment_into(&src, &mut buf, &mut sc)
                .map_err(|e| relabel(e, n))?;
            dst.iter_mut().zip(&buf).for_each(|(d, s)| *d = *s);
        }
        Ok(out)
    }

    /// Discrepancy series `z^{n+1} = (x^{n+1} - x^n)/delta - R_delta(x^n)`,
    /// returned as an `(N-1) x K` array.
    pub fn extract_discrepancy(&self, x_obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let n = x_obs.nrows();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "discrepancy needs at least 2 observations, got {n}"
            )));
        }
        if x_obs.ncols() != self.k {
            return Err(Error::Dimension(format!(
                "observations have {} columns, map has {}",
                x_obs.ncols(),
                self.k
            )));
        }
        let r = self.increments(x_obs.slice(ndarray::s![..n - 1, ..]))?;
        let mut z = Array2::zeros((n - 1, self.k));
        for i in 0..n - 1 {
            for kk in 0..self.k {
                z[(i, kk)] = (x_obs[(i + 1, kk)] - x_obs[(i, kk)]) / self.delta - r[(i, kk)];
            }
        }
        Ok(z)
    }

    /// Inverse of [`ReducedMap::extract_discrepancy`]: rebuilds `x` from `x^0` and `z`.
    pub fn reconstruct(&self, x0: &[f64], z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x0.len() != self.k || z.ncols() != self.k {
            return Err(Error::Dimension("reconstruct: dimension mismatch".into()));
        }
        let mut x = Array2::zeros((z.nrows() + 1, self.k));
        x.row_mut(0).iter_mut().zip(x0).for_each(|(d, s)| *d = *s);
        let mut cur = x0.to_vec();
        let mut r = vec![0.0; self.k];
        let mut sc = self.scratch();
        for (i, zrow) in z.rows().into_iter().enumerate() {
            self.increment_into(&cur, &mut r, &mut sc).map_err(|e| relabel(e, i))?;
            for kk in 0..self.k {
                cur[kk] += self.delta * r[kk] + self.delta * zrow[kk];
            }
            x.row_mut(i + 1).iter_mut().zip(&cur).for_each(|(d, s)| *d = *s);
        }
        Ok(x)
    }
}

fn relabel(e: Error, step: usize) -> Error {
    match e {
        Error::BlowUp { .. } => Error::BlowUp { step },
        other => other,
    }
}

/// Work buffers for [`ReducedMap::increment_into`].
#[derive(Debug, Clone)]
pub struct Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    pub fn new(k: usize) -> Self {
        Self {
            k1: vec![0.0; k],
            k2: vec![0.0; k],
            k3: vec![0.0; k],
            k4: vec![0.0; k],
            tmp: vec![0.0; k],
        }
    }
}
