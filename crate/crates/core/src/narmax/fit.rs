//! Maximum likelihood fitting and structure diagnostics.

use serde::{Deserialize, Serialize};

use super::likelihood::{component_pass, pooled, profiled};
use super::{fill_fixed, ma_invertible, NarmaxData, NarmaxParams, NarmaxStructure};
use crate::error::{Error, Result};
use crate::optimizer::{bfgs_maximize, OptProblem};

/// Correlation-matrix pivots below this mark a regressor as dependent.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Gradient-norm stop for the per-observation objective in whitened coordinates.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Starting coefficient vector; defaults to `mu = mean(z)`, `a_1 = 0.5`.
    pub init: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iters: 500, init: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: NarmaxParams,
    /// Conditional log-likelihood at the fitted coefficients and `sigma2`.
    pub loglik: f64,
    /// Gradient norm in the optimizer's coordinates (see [`FitOptions::tolerance`]).
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

struct Moments {
    gram: Vec<f64>,
    z_sum: f64,
    count: usize,
}

fn fixed_moments(st: &NarmaxStructure, data: &NarmaxData) -> Moments {
    let nf = st.n_fixed();
    let w = st.warmup();
    let mut gram = vec![0.0; nf * nf];
    let mut reg = vec![0.0; nf];
    let mut z_sum = 0.0;
    let mut count = 0;
    for &k in &data.active {
        let (xk, rxk, zk) = (&data.x[k], &data.rx[k], &data.z[k]);
        for m in w..zk.len() {
            fill_fixed(st, |j| zk[m - j], |j| xk[m + 1 - j], |j| rxk[m + 1 - j], &mut reg);
            for i in 0..nf {
                for j in i..nf {
                    gram[i * nf + j] += reg[i] * reg[j];
                }
            }
            z_sum += zk[m];
            count += 1;
        }
    }
    for i in 0..nf {
        for j in 0..i {
            gram[i * nf + j] = gram[j * nf + i];
        }
    }
    Moments { gram, z_sum, count }
}

/// Cholesky factor `L` (row-major, lower) of the regressor correlation
/// matrix, in term order; terms whose pivot vanishes are explained by earlier
/// terms and listed as dependent.
fn correlation_cholesky(gram: &[f64], nf: usize) -> (Vec<f64>, Vec<usize>) {
    let scale: Vec<f64> = (0..nf).map(|i| gram[i * nf + i].sqrt()).collect();
    let mut l = vec![0.0f64; nf * nf];
    let mut dependent = Vec::new();
    for j in 0..nf {
        if !(scale[j] > 0.0) {
            dependent.push(j);
            continue;
        }
        let corr = |a: usize, b: usize| gram[a * nf + b] / (scale[a] * scale[b]);
        let pivot = corr(j, j) - (0..j).map(|c| l[j * nf + c].powi(2)).sum::<f64>();
        if !(pivot > RANK_TOLERANCE) {
            dependent.push(j);
            continue;
        }
        let ljj = pivot.sqrt();
        l[j * nf + j] = ljj;
        for i in j + 1..nf {
            if !(scale[i] > 0.0) {
                continue;
            }
            let s = corr(i, j) - (0..j).map(|c| l[i * nf + c] * l[j * nf + c]).sum::<f64>();
            l[i * nf + j] = s / ljj;
        }
    }
    (l, dependent)
}

/// Linear reparametrization `theta = T u` with `T = diag(D^-1 L^-T, 1/s_ma)`,
/// which whitens the fixed regressors: `D` holds their RMS, `L` the
/// correlation Cholesky factor, `s_ma` the initial residual RMS.
struct Whitening {
    l: Vec<f64>,
    rms: Vec<f64>,
    ma_scale: f64,
}

impl Whitening {
    fn nf(&self) -> usize {
        self.rms.len()
    }

    fn to_theta(&self, u: &[f64]) -> Vec<f64> {
        let nf = self.nf();
        let mut t = u.to_vec();
        for i in (0..nf).rev() {
            let s: f64 = (i + 1..nf).map(|r| self.l[r * nf + i] * t[r]).sum();
            t[i] = (u[i] - s) / self.l[i * nf + i];
        }
        for i in 0..nf {
            t[i] /= self.rms[i];
        }
        t[nf..].iter_mut().for_each(|v| *v /= self.ma_scale);
        t
    }

    fn from_theta(&self, theta: &[f64]) -> Vec<f64> {
        let nf = self.nf();
        let mut u: Vec<f64> = (0..nf)
            .map(|i| (i..nf).map(|r| self.l[r * nf + i] * theta[r] * self.rms[r]).sum())
            .collect();
        u.extend(theta[nf..].iter().map(|v| v * self.ma_scale));
        u
    }

    /// `T^T g`.
    fn pull_back(&self, g: &[f64]) -> Vec<f64> {
        let nf = self.nf();
        let mut out: Vec<f64> = g.to_vec();
        for i in 0..nf {
            let v = g[i] / self.rms[i];
            let s: f64 = (0..i).map(|c| self.l[i * nf + c] * out[c]).sum();
            out[i] = (v - s) / self.l[i * nf + i];
        }
        out[nf..].iter_mut().for_each(|v| *v /= self.ma_scale);
        out
    }
}

/// Maximizes the conditional log-likelihood with `sigma2` profiled out.
///
/// BFGS runs in whitened coordinates (see [`Whitening`]), and the objective is divided by the number of residual terms. Failing to
/// converge within `max_iters` is reported, not raised.
pub fn fit(st: &NarmaxStructure, data: &NarmaxData, opts: &FitOptions) -> Result<FitReport> {
    let nf = st.n_fixed();
    let nc = st.n_coeffs();
    let nz = data.rows().saturating_sub(1);
    if nz <= st.warmup() + nc {
        return Err(Error::InsufficientData(format!(
            "{} observations for {nc} coefficients and warmup {}",
            data.rows(),
            st.warmup()
        )));
    }

    let mom = fixed_moments(st, data);
    let (chol, dependent) = correlation_cholesky(&mom.gram, nf);
    if !dependent.is_empty() {
        let names = st.term_names();
        return Err(Error::RankDeficient {
            terms: dependent.into_iter().map(|i| names[i].clone()).collect(),
        });
    }
    let m = mom.count as f64;

    let theta0 = match &opts.init {
        Some(v) if v.len() != nc => {
            return Err(Error::Dimension(format!("init has {} values, expected {nc}", v.len())))
        }
        Some(v) => v.clone(),
        None => {
            let mut v = vec![0.0; nc];
            v[0] = mom.z_sum / m;
            if st.p >= 1 {
                v[1] = 0.5;
            }
            v
        }
    };

    let rms: Vec<f64> = (0..nf).map(|i| (mom.gram[i * nf + i] / m).sqrt()).collect();
    let mut ma_scale = 1.0;
    if st.q > 0 {
        // MA regressors are the residuals themselves; use their size at the start.
        let mut xi = vec![0.0; nz];
        let mut zero_ma = theta0.clone();
        zero_ma[nf..].iter_mut().for_each(|v| *v = 0.0);
        let sse: f64 = data
            .active
            .iter()
            .map(|&k| component_pass(st, &zero_ma, data, k, false, &mut xi).sse)
            .sum();
        let r = (sse / m).sqrt();
        if r > 0.0 && r.is_finite() {
            ma_scale = r;
        }
    }
    let white = Whitening { l: chol, rms, ma_scale };

    let u0 = white.from_theta(&theta0);
    let mut prob = OptProblem {
        dim: nc,
        objective: |u: &[f64]| {
            let acc = pooled(st, &white.to_theta(u), data, true);
            if !(acc.sse > 0.0 && acc.sse.is_finite()) {
                return (f64::NEG_INFINITY, vec![0.0; nc]);
            }
            let ll = profiled(&acc);
            let mm = acc.count as f64;
            let g: Vec<f64> = ll.grad.iter().map(|g| g / mm).collect();
            (ll.value / mm, white.pull_back(&g))
        },
        tolerance: opts.tolerance,
        max_iters: opts.max_iters,
    };
    let res = bfgs_maximize(&mut prob, &u0)?;

    let theta = white.to_theta(&res.x);
    let acc = pooled(st, &theta, data, false);
    let ll = profiled(&acc);
    let params = NarmaxParams::from_vector(st, &theta, ll.sigma2)?;
    let mut warnings = Vec::new();
    if !ma_invertible(&params.d) {
        let msg = format!("MA polynomial with d = {:?} has roots inside the unit disk", params.d);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if !res.converged {
        log::warn!(
            "fit did not converge after {} iterations (gradient norm {:.3e})",
            res.iterations,
            res.grad_norm
        );
    }
    Ok(FitReport {
        params,
        loglik: ll.value,
        grad_norm: res.grad_norm,
        iterations: res.iterations,
        converged: res.converged,
        warnings,
    })
}

/// Coefficient paths over nested data prefixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub names: Vec<String>,
    /// Observation rows used by each refit.
    pub sizes: Vec<usize>,
    /// `paths[i][f]`: coefficient `i` fitted on prefix `f`.
    pub paths: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    /// Per coefficient, whether the last two fits agree; `None` with one fit.
    pub converged: Option<Vec<bool>>,
    pub reports: Vec<FitReport>,
}

/// Relative change between the last two fits below which a coefficient
/// counts as converged.
pub const PATH_REL_TOLERANCE: f64 = 0.05;
/// Changes below this absolute size also count, for coefficients near zero.
pub const PATH_ABS_FLOOR: f64 = 1e-4;

/// Refits on the prefixes `round(f * N)` for increasing `fractions` in `(0, 1]`.
pub fn convergence_diagnostic(
    st: &NarmaxStructure,
    data: &NarmaxData,
    fractions: &[f64],
    opts: &FitOptions,
) -> Result<ConvergenceReport> {
    if fractions.is_empty()
        || fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0))
        || fractions.windows(2).any(|w| !(w[0] < w[1]))
    {
        return Err(Error::Contract(format!(
            "fractions must be increasing within (0, 1], got {fractions:?}"
        )));
    }
    let n = data.rows();
    let mut reports = Vec::with_capacity(fractions.len());
    let mut sizes = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let rows = ((f * n as f64).round() as usize).clamp(2, n);
        let report = if rows == n {
            fit(st, data, opts)?
        } else {
            fit(st, &data.prefix(rows)?, opts)?
        };
        sizes.push(rows);
        reports.push(report);
    }
    let nc = st.n_coeffs();
    let vectors: Vec<Vec<f64>> = reports.iter().map(|r| r.params.to_vector()).collect();
    let paths: Vec<Vec<f64>> = (0..nc).map(|i| vectors.iter().map(|v| v[i]).collect()).collect();
    let converged = (paths.first().map_or(0, |p| p.len()) >= 2).then(|| {
        paths
            .iter()
            .map(|p| {
                let (prev, last) = (p[p.len() - 2], p[p.len() - 1]);
                let change = (last - prev).abs();
                change < PATH_REL_TOLERANCE * last.abs() || change < PATH_ABS_FLOOR
            })
            .collect()
    });
    Ok(ConvergenceReport {
        names: st.term_names(),
        sizes,
        paths,
        sigma2: reports.iter().map(|r| r.params.sigma2).collect(),
        converged,
        reports,
    })
}
