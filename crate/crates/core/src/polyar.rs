//! Polynomial + AR(1) closure baseline.
//!
//! The continuous unresolved tendency is estimated by forward differences,
//! regressed on a degree-5 polynomial in `x_k`, and the regression residual is
//! modelled as `eta(t + delta) = phi eta(t) + sigma xi(t)`. The reduced ODE
//! `dx_k/dt = x_{k-1}(x_{k+1} - x_{k-2}) - x_k + F + P(x_k) + eta_k` is
//! advanced by one RK4 step of length `delta` with `eta` frozen.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lorenz96::{truncated_rhs, Rk4};
use crate::optimizer::least_squares_named;
use crate::reduction::{ReducedMap, Scheme};
use crate::seed;
use crate::series::SeriesSet;

pub const DEFAULT_DEGREE: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyarParams {
    /// `poly[j]` multiplies `x^j`.
    pub poly: Vec<f64>,
    pub phi: f64,
    pub sigma: f64,
    pub delta: f64,
}

impl PolyarParams {
    pub fn poly_value(&self, x: f64) -> f64 {
        self.poly.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// `(x(t+delta) - x(t))/delta - [x_{k-1}(x_{k+1} - x_{k-2}) - x_k + F]`.
pub fn estimate_z_fd(x_obs: ArrayView2<f64>, delta: f64, forcing: f64) -> Result<Array2<f64>> {
    let (n, k) = x_obs.dim();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 observations, got {n}")));
    }
    if !(delta > 0.0) {
        return Err(Error::Config(format!("delta must be positive, got {delta}")));
    }
    if k < 4 {
        return Err(Error::Dimension(format!("need at least 4 components, got {k}")));
    }
    let mut z = Array2::zeros((n - 1, k));
    let mut f = vec![0.0; k];
    let mut cur = vec![0.0; k];
    for i in 0..n - 1 {
        cur.iter_mut().zip(x_obs.row(i)).for_each(|(d, s)| *d = *s);
        truncated_rhs(forcing, &cur, &mut f);
        for c in 0..k {
            z[(i, c)] = (x_obs[(i + 1, c)] - x_obs[(i, c)]) / delta - f[c];
        }
    }
    Ok(z)
}

/// Least-squares polynomial `z ~ P(x)` pooled over all samples.
pub fn fit_poly(x: &[f64], z: &[f64], degree: usize) -> Result<Vec<f64>> {
    if x.len() != z.len() {
        return Err(Error::Dimension(format!("{} x samples, {} z samples", x.len(), z.len())));
    }
    let rows = x.len();
    let cols = degree + 1;
    let mut design = vec![0.0; rows * cols];
    for (i, &v) in x.iter().enumerate() {
        let mut pw = 1.0;
        for j in 0..cols {
            design[j * rows + i] = pw;
            pw *= v;
        }
    }
    least_squares_named(&design, rows, cols, z, &|j| format!("x^{j}"))
}

/// Lag-1 regression `eta_{n+1} = phi eta_n + sigma xi_n`, pooled over the
/// columns of `eta` (one column per component, rows in time).
pub fn fit_ar1(eta: ArrayView2<f64>) -> Result<(f64, f64)> {
    let n = eta.nrows();
    if n < 3 {
        return Err(Error::InsufficientData(format!("AR(1) needs at least 3 samples, got {n}")));
    }
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for col in eta.columns() {
        for t in 0..n - 1 {
            sxx += col[t] * col[t];
            sxy += col[t] * col[t + 1];
        }
    }
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("AR(1) residual series has zero variance".into()));
    }
    let phi = sxy / sxx;
    let mut sse = 0.0;
    let mut count = 0usize;
    for col in eta.columns() {
        for t in 0..n - 1 {
            sse += (col[t + 1] - phi * col[t]).powi(2);
            count += 1;
        }
    }
    Ok((phi, (sse / count as f64).sqrt()))
}

/// Full POLYAR estimation from observations.
pub fn fit_polyar(series: &SeriesSet, forcing: f64, degree: usize) -> Result<PolyarParams> {
    let n = series.len();
    let z = estimate_z_fd(series.x.view(), series.delta, forcing)?;
    let xs = series.x.slice(ndarray::s![..n - 1, ..]);
    // Pool in column order, so each component's block is a contiguous time series.
    let xv: Vec<f64> = xs.columns().into_iter().flat_map(|c| c.to_vec()).collect();
    let zv: Vec<f64> = z.columns().into_iter().flat_map(|c| c.to_vec()).collect();
    let poly = fit_poly(&xv, &zv, degree)?;
    let params = PolyarParams { poly, phi: 0.0, sigma: 0.0, delta: series.delta };
    let eta = Array2::from_shape_fn(z.dim(), |(i, c)| z[(i, c)] - params.poly_value(xs[(i, c)]));
    let (phi, sigma) = fit_ar1(eta.view())?;
    if !(phi.abs() < 1.0) {
        log::warn!("POLYAR autoregression phi = {phi} is not stationary");
    }
    Ok(PolyarParams { phi, sigma, ..params })
}

/// Initial state of a POLYAR run: `x(t0)` and the noise `eta(t0 - delta)`
/// that drove the transition into it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyarInit {
    pub x: Array1<f64>,
    pub eta_prev: Array1<f64>,
}

impl PolyarInit {
    /// `x` at the last row of the window and `eta` from the forward-difference
    /// residual on the window's final transition.
    pub fn from_observations(params: &PolyarParams, forcing: f64, window: ArrayView2<f64>) -> Result<Self> {
        let n = window.nrows();
        let last2 = window.slice(ndarray::s![n.saturating_sub(2).., ..]);
        let z = estimate_z_fd(last2, params.delta, forcing)?;
        let x_prev = window.row(n - 2);
        let eta_prev = Array1::from_shape_fn(window.ncols(), |c| z[(0, c)] - params.poly_value(x_prev[c]));
        Ok(Self { x: window.row(n - 1).to_owned(), eta_prev })
    }
}

/// Simulates `n_rows` rows starting at `init.x`.
///
/// Each step first advances `eta` by the AR(1) recursion, then takes one RK4
/// step of length `delta` with `eta` held fixed. Row `t` of the returned `xi`
/// holds the `eta` used on the step from row `t` to `t + 1`.
pub fn simulate_polyar(
    params: &PolyarParams,
    forcing: f64,
    init: &PolyarInit,
    n_rows: usize,
    seed: u64,
) -> Result<SeriesSet> {
    simulate_polyar_with_rng(params, forcing, init, n_rows, &mut seed::rng(seed, &[]))
}

pub fn simulate_polyar_with_rng<R: Rng + ?Sized>(
    params: &PolyarParams,
    forcing: f64,
    init: &PolyarInit,
    n_rows: usize,
    rng: &mut R,
) -> Result<SeriesSet> {
    let k = init.x.len();
    if init.eta_prev.len() != k || k < 4 {
        return Err(Error::Dimension(format!("init x[{k}], eta[{}]", init.eta_prev.len())));
    }
    if n_rows < 1 {
        return Err(Error::Contract("n_rows must be >= 1".into()));
    }
    let mut x = Array2::zeros((n_rows, k));
    let mut eta_out = Array2::zeros((n_rows.saturating_sub(1), k));
    let mut state = init.x.to_vec();
    let mut eta = init.eta_prev.to_vec();
    x.row_mut(0).assign(&init.x);
    let mut rk = Rk4::new(k);
    for t in 0..n_rows - 1 {
        for e in eta.iter_mut() {
            let noise: f64 = rng.sample(StandardNormal);
            *e = params.phi * *e + params.sigma * noise;
        }
        let frozen = &eta;
        rk.step(
            |u, du| {
                truncated_rhs(forcing, u, du);
                for c in 0..k {
                    du[c] += params.poly_value(u[c]) + frozen[c];
                }
            },
            &mut state,
            params.delta,
            t + 1,
        )?;
        x.row_mut(t + 1).iter_mut().zip(&state).for_each(|(d, s)| *d = *s);
        eta_out.row_mut(t).iter_mut().zip(&eta).for_each(|(d, s)| *d = *s);
    }
    SeriesSet::new(params.delta, x)?.with_xi(eta_out)
}

/// The Euler reduced map whose discrepancy equals [`estimate_z_fd`].
pub fn euler_map(k: usize, forcing: f64, delta: f64) -> Result<ReducedMap> {
    ReducedMap::new(k, forcing, delta, Scheme::Euler)
}
