//! Residual recursion and the conditional Gaussian log-likelihood
//!
//! `l = -sum |z^n - Phi^n|^2 / (2 sigma2) - (M/2) ln sigma2`, summed over the
//! active components. The gradient through the recursive `xi` dependence is
//! carried forward alongside the residuals.

use ndarray::Array2;
use rayon::prelude::*;

use super::{dot, fill_fixed, NarmaxData, NarmaxParams, NarmaxStructure};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    /// Gradient over the coefficient vector (no `sigma2` entry).
    pub grad: Vec<f64>,
    /// Derivative in `sigma2`; zero at the profiled optimum.
    pub dsigma2: f64,
    /// The variance at which `value` was evaluated.
    pub sigma2: f64,
    /// Sum of squared residuals.
    pub sse: f64,
    /// Number of residual terms `M`.
    pub count: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Accum {
    pub sse: f64,
    pub count: usize,
    /// `sum xi * dxi/dtheta`.
    pub xi_dxi: Vec<f64>,
}

/// Residual recursion for one component. Fills `xi` (length `N - 1`) and,
/// when `want_grad`, accumulates `sum xi dxi/dtheta`.
pub(crate) fn component_pass(
    st: &NarmaxStructure,
    coeffs: &[f64],
    data: &NarmaxData,
    k: usize,
    want_grad: bool,
    xi: &mut [f64],
) -> Accum {
    let nf = st.n_fixed();
    let nc = st.n_coeffs();
    let q = st.q;
    let (fixed, ma) = coeffs.split_at(nf);
    let xk = &data.x[k];
    let rxk = &data.rx[k];
    let zk = &data.z[k];
    let nz = zk.len();
    let w = st.warmup();

    xi.iter_mut().for_each(|v| *v = 0.0);
    let mut reg = vec![0.0; nf];
    let mut ring = vec![0.0; q.max(1) * nc];
    let mut cur = vec![0.0; nc];
    let mut acc = Accum {
        sse: 0.0,
        count: nz.saturating_sub(w),
        xi_dxi: vec![0.0; if want_grad { nc } else { 0 }],
    };

    for m in w..nz {
        fill_fixed(st, |j| zk[m - j], |j| xk[m + 1 - j], |j| rxk[m + 1 - j], &mut reg);
        let mut phi = dot(fixed, &reg);
        for j in 1..=q {
            phi += ma[j - 1] * xi[m - j];
        }
        let e = zk[m] - phi;
        xi[m] = e;
        acc.sse += e * e;

        if want_grad {
            for i in 0..nf {
                cur[i] = -reg[i];
            }
            for j in 1..=q {
                cur[nf + j - 1] = -xi[m - j];
            }
            for j in 1..=q {
                // Slots of indices before the warmup were never written and hold zeros.
                let slot = ((m - j) % q) * nc;
                let dj = ma[j - 1];
                for i in 0..nc {
                    cur[i] -= dj * ring[slot + i];
                }
            }
            for i in 0..nc {
                acc.xi_dxi[i] += e * cur[i];
            }
            if q > 0 {
                let slot = (m % q) * nc;
                ring[slot..slot + nc].copy_from_slice(&cur);
            }
        }
    }
    acc
}

/// Pools component passes in the fixed order of `data.active`.
pub(crate) fn pooled(
    st: &NarmaxStructure,
    coeffs: &[f64],
    data: &NarmaxData,
    want_grad: bool,
) -> Accum {
    let n = data.rows().saturating_sub(1);
    let parts: Vec<Accum> = data
        .active
        .par_iter()
        .map(|&k| {
            let mut xi = vec![0.0; n];
            component_pass(st, coeffs, data, k, want_grad, &mut xi)
        })
        .collect();
    let mut total = Accum {
        sse: 0.0,
        count: 0,
        xi_dxi: vec![0.0; if want_grad { st.n_coeffs() } else { 0 }],
    };
    for p in parts {
        total.sse += p.sse;
        total.count += p.count;
        total.xi_dxi.iter_mut().zip(&p.xi_dxi).for_each(|(t, v)| *t += v);
    }
    total
}

fn check_data(st: &NarmaxStructure, data: &NarmaxData) -> Result<()> {
    let nz = data.rows().saturating_sub(1);
    if nz <= st.warmup() {
        return Err(Error::InsufficientData(format!(
            "{} observations leave no residual terms after a warmup of {}",
            data.rows(),
            st.warmup()
        )));
    }
    Ok(())
}

/// `xi^n = z^n - Phi^n`, with the first [`NarmaxStructure::warmup`] values
/// fixed at zero. Returns an `(N-1) x K` array over all components.
pub fn residuals(st: &NarmaxStructure, th: &NarmaxParams, data: &NarmaxData) -> Result<Array2<f64>> {
    th.check(st)?;
    check_data(st, data)?;
    let coeffs = th.to_vector();
    let n = data.rows() - 1;
    let cols: Vec<Vec<f64>> = (0..data.dim())
        .into_par_iter()
        .map(|k| {
            let mut xi = vec![0.0; n];
            component_pass(st, &coeffs, data, k, false, &mut xi);
            xi
        })
        .collect();
    Ok(Array2::from_shape_fn((n, data.dim()), |(i, k)| cols[k][i]))
}

/// Conditional log-likelihood at `th` (including its `sigma2`) and gradient.
pub fn log_likelihood(
    st: &NarmaxStructure,
    th: &NarmaxParams,
    data: &NarmaxData,
) -> Result<LogLikelihood> {
    th.check(st)?;
    check_data(st, data)?;
    let s2 = th.sigma2;
    let acc = pooled(st, &th.to_vector(), data, true);
    let m = acc.count as f64;
    Ok(LogLikelihood {
        value: -acc.sse / (2.0 * s2) - 0.5 * m * s2.ln(),
        grad: acc.xi_dxi.iter().map(|g| -g / s2).collect(),
        dsigma2: acc.sse / (2.0 * s2 * s2) - 0.5 * m / s2,
        sigma2: s2,
        sse: acc.sse,
        count: acc.count,
    })
}

/// Log-likelihood with `sigma2` replaced by its maximizer `sse / M`.
pub fn profile_log_likelihood(
    st: &NarmaxStructure,
    coeffs: &[f64],
    data: &NarmaxData,
) -> Result<LogLikelihood> {
    if coeffs.len() != st.n_coeffs() {
        return Err(Error::Dimension(format!(
            "{} coefficients for structure with {}",
            coeffs.len(),
            st.n_coeffs()
        )));
    }
    check_data(st, data)?;
    let acc = pooled(st, coeffs, data, true);
    Ok(profiled(&acc))
}

pub(crate) fn profiled(acc: &Accum) -> LogLikelihood {
    let m = acc.count as f64;
    let s2 = acc.sse / m;
    LogLikelihood {
        value: -0.5 * m * (s2.ln() + 1.0),
        grad: acc.xi_dxi.iter().map(|g| -g * m / acc.sse).collect(),
        dsigma2: 0.0,
        sigma2: s2,
        sse: acc.sse,
        count: acc.count,
    }
}
