//! NARMAX representation of the discrepancy series.
//!
//! Per spatial component, with parameters shared across components:
//!
//! ```text
//! Phi^n = mu + sum_{j<=p} a_j z^{n-j}
//!            + sum_{j<=r} sum_{l<=d_x} b_{j,l} (x^{n-j})^l
//!            + sum_{j<=s} sum_{l<=d_R} c_{j,l} (R_delta(x^{n-j}))^l
//!            + sum_{j<=q} d_j xi^{n-j}
//! z^n = Phi^n + xi^n,   xi^n ~ N(0, sigma2)
//! ```

mod data;
mod fit;
mod likelihood;
mod simulate;

pub use data::NarmaxData;
pub use fit::{convergence_diagnostic, fit, ConvergenceReport, FitOptions, FitReport};
pub use likelihood::{log_likelihood, profile_log_likelihood, residuals, LogLikelihood};
pub use simulate::{simulate, simulate_with_rng, History};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orders of the NARMAX terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NarmaxStructure {
    /// Autoregression order in `z`.
    pub p: usize,
    /// Number of lags of `x`.
    pub r: usize,
    /// Number of lags of `R_delta(x)`.
    pub s: usize,
    /// Moving-average order.
    pub q: usize,
    /// Highest power of `x`.
    pub d_x: usize,
    /// Highest power of `R_delta(x)`.
    #[serde(rename = "d_R")]
    pub d_r: usize,
}

impl NarmaxStructure {
    pub fn new(p: usize, r: usize, s: usize, q: usize, d_x: usize, d_r: usize) -> Self {
        Self { p, r, s, q, d_x, d_r }
    }

    /// Coefficients multiplying known regressors: `mu`, `a`, `b`, `c`.
    pub fn n_fixed(&self) -> usize {
        1 + self.p + self.r * self.d_x + self.s * self.d_r
    }

    /// All coefficients except `sigma2`.
    pub fn n_coeffs(&self) -> usize {
        self.n_fixed() + self.q
    }

    /// Leading residuals fixed at zero: every lag of the first computed
    /// residual must exist in the data.
    pub fn warmup(&self) -> usize {
        self.p
            .max(self.q)
            .max(self.r.saturating_sub(1))
            .max(self.s.saturating_sub(1))
    }

    /// Observation steps needed to start a forecast: `max{1,p,r,s,2q} + 1`.
    pub fn history_len(&self) -> usize {
        1.max(self.p).max(self.r).max(self.s).max(2 * self.q) + 1
    }

    /// Largest lag of `x` the structure reads.
    pub fn x_lags(&self) -> usize {
        let r = if self.d_x > 0 { self.r } else { 0 };
        let s = if self.d_r > 0 { self.s } else { 0 };
        r.max(s)
    }

    /// Names of the coefficients in vector order.
    pub fn term_names(&self) -> Vec<String> {
        let mut names = vec!["mu".to_string()];
        names.extend((1..=self.p).map(|j| format!("a{j}")));
        for j in 1..=self.r {
            names.extend((1..=self.d_x).map(|l| format!("b{j},{l}")));
        }
        for j in 1..=self.s {
            names.extend((1..=self.d_r).map(|l| format!("c{j},{l}")));
        }
        names.extend((1..=self.q).map(|j| format!("d{j}")));
        names
    }
}

/// Coefficients `(mu, a, b, c, d)` and innovation variance.
///
/// `b[j-1][l-1]` multiplies `(x^{n-j})^l`; `c` likewise for `R_delta(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarmaxParams {
    pub mu: f64,
    pub a: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    pub sigma2: f64,
}

impl NarmaxParams {
    pub fn zeros(st: &NarmaxStructure, sigma2: f64) -> Self {
        Self {
            mu: 0.0,
            a: vec![0.0; st.p],
            b: vec![vec![0.0; st.d_x]; st.r],
            c: vec![vec![0.0; st.d_r]; st.s],
            d: vec![0.0; st.q],
            sigma2,
        }
    }

    pub fn check(&self, st: &NarmaxStructure) -> Result<()> {
        let bad = |what: &str| Err(Error::Dimension(format!("{what} does not match structure {st:?}")));
        if self.a.len() != st.p {
            return bad("a");
        }
        if self.b.len() != st.r || self.b.iter().any(|row| row.len() != st.d_x) {
            return bad("b");
        }
        if self.c.len() != st.s || self.c.iter().any(|row| row.len() != st.d_r) {
            return bad("c");
        }
        if self.d.len() != st.q {
            return bad("d");
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Domain(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }

    /// Flattens coefficients in [`NarmaxStructure::term_names`] order.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = vec![self.mu];
        v.extend(&self.a);
        self.b.iter().for_each(|row| v.extend(row));
        self.c.iter().for_each(|row| v.extend(row));
        v.extend(&self.d);
        v
    }

    pub fn from_vector(st: &NarmaxStructure, v: &[f64], sigma2: f64) -> Result<Self> {
        if v.len() != st.n_coeffs() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a structure with {}",
                v.len(),
                st.n_coeffs()
            )));
        }
        let mut it = v.iter().copied();
        let mut take = |n: usize| (&mut it).take(n).collect::<Vec<_>>();
        let mu = take(1)[0];
        let a = take(st.p);
        let b = (0..st.r).map(|_| take(st.d_x)).collect();
        let c = (0..st.s).map(|_| take(st.d_r)).collect();
        let d = take(st.q);
        Ok(Self { mu, a, b, c, d, sigma2 })
    }
}

/// Lagged values feeding `Phi^n`, most recent first: `z[0] = z^{n-1}`,
/// `x[0] = x^{n-1}`, `rx[0] = R_delta(x^{n-1})`, `xi[0] = xi^{n-1}`.
#[derive(Debug, Clone, Copy)]
pub struct Lags<'a> {
    pub z: &'a [f64],
    pub x: &'a [f64],
    pub rx: &'a [f64],
    pub xi: &'a [f64],
}

/// Fills the known regressors of `Phi` (`1`, z lags, x powers, R powers).
/// `zl(j)`, `xl(j)`, `rl(j)` return the value at lag `j >= 1`.
#[inline(always)]
pub(crate) fn fill_fixed(
    st: &NarmaxStructure,
    zl: impl Fn(usize) -> f64,
    xl: impl Fn(usize) -> f64,
    rl: impl Fn(usize) -> f64,
    out: &mut [f64],
) {
    out[0] = 1.0;
    let mut i = 1;
    for j in 1..=st.p {
        out[i] = zl(j);
        i += 1;
    }
    for j in 1..=st.r {
        let v = xl(j);
        let mut pw = 1.0;
        for _ in 0..st.d_x {
            pw *= v;
            out[i] = pw;
            i += 1;
        }
    }
    for j in 1..=st.s {
        let v = rl(j);
        let mut pw = 1.0;
        for _ in 0..st.d_r {
            pw *= v;
            out[i] = pw;
            i += 1;
        }
    }
}

#[inline(always)]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Deterministic part `Phi^n` for one component.
pub fn phi(st: &NarmaxStructure, th: &NarmaxParams, lags: &Lags<'_>) -> Result<f64> {
    th.check(st)?;
    let need_x = if st.d_x > 0 { st.r } else { 0 };
    let need_r = if st.d_r > 0 { st.s } else { 0 };
    if lags.z.len() < st.p || lags.x.len() < need_x || lags.rx.len() < need_r || lags.xi.len() < st.q {
        return Err(Error::Contract(format!(
            "history (z {}, x {}, R {}, xi {}) too short for {st:?}",
            lags.z.len(),
            lags.x.len(),
            lags.rx.len(),
            lags.xi.len()
        )));
    }
    let coeffs = th.to_vector();
    let mut reg = vec![0.0; st.n_fixed()];
    fill_fixed(
        st,
        |j| lags.z[j - 1],
        |j| lags.x[j - 1],
        |j| lags.rx[j - 1],
        &mut reg,
    );
    let (fixed, ma) = coeffs.split_at(st.n_fixed());
    Ok(dot(fixed, &reg) + dot(ma, &lags.xi[..st.q]))
}

/// Whether `1 + d_1 w + ... + d_q w^q` has all roots outside the unit disk,
/// i.e. the residual recursion is stable. Step-down (Schur-Cohn) test.
pub fn ma_invertible(d: &[f64]) -> bool {
    let mut poly: Vec<f64> = std::iter::once(1.0).chain(d.iter().copied()).collect();
    while poly.len() > 1 && *poly.last().unwrap() == 0.0 {
        poly.pop();
    }
    while poly.len() > 1 {
        let m = poly.len() - 1;
        let k = poly[m] / poly[0];
        if !(k.abs() < 1.0) {
            return false;
        }
        let next: Vec<f64> = (0..m).map(|i| (poly[i] - k * poly[m - i]) / (1.0 - k * k)).collect();
        poly = next;
    }
    true
}

/// JSON parameter file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    pub structure: NarmaxStructure,
    pub coefficients: Coefficients,
    pub sigma2: f64,
    pub meta: ParamsMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub mu: f64,
    pub a: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsMeta {
    pub delta: f64,
    pub seed: u64,
    pub data_hash: String,
}

impl ParamsDocument {
    pub fn new(st: NarmaxStructure, th: &NarmaxParams, meta: ParamsMeta) -> Self {
        Self {
            structure: st,
            coefficients: Coefficients {
                mu: th.mu,
                a: th.a.clone(),
                b: th.b.clone(),
                c: th.c.clone(),
                d: th.d.clone(),
            },
            sigma2: th.sigma2,
            meta,
        }
    }

    pub fn params(&self) -> Result<NarmaxParams> {
        let c = &self.coefficients;
        let th = NarmaxParams {
            mu: c.mu,
            a: c.a.clone(),
            b: c.b.clone(),
            c: c.c.clone(),
            d: c.d.clone(),
            sigma2: self.sigma2,
        };
        th.check(&self.structure)?;
        Ok(th)
    }
}
