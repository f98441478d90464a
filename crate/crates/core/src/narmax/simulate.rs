//! Reduced-model simulation:
//! `x^{n+1} = x^n + delta R_delta(x^n) + delta z^{n+1}`, `z^{n+1} = Phi^{n+1} + xi^{n+1}`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::likelihood::component_pass;
use super::{dot, fill_fixed, NarmaxData, NarmaxParams, NarmaxStructure};
use crate::error::{Error, Result};
use crate::lorenz96::BLOW_UP_THRESHOLD;
use crate::reduction::ReducedMap;
use crate::seed;
use crate::series::SeriesSet;

/// Initial steps of a simulation: `n` rows of `x` and `n - 1` rows of `z`, `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub x: Array2<f64>,
    pub z: Array2<f64>,
    pub xi: Array2<f64>,
}

impl History {
    pub fn new(x: Array2<f64>, z: Array2<f64>, xi: Array2<f64>) -> Result<Self> {
        let (n, k) = x.dim();
        if n == 0 || z.dim() != (n - 1, k) || xi.dim() != (n - 1, k) {
            return Err(Error::Dimension(format!(
                "history x{:?}, z{:?}, xi{:?}",
                x.dim(),
                z.dim(),
                xi.dim()
            )));
        }
        Ok(Self { x, z, xi })
    }

    /// Starts from observed `x` only: `z` is extracted and `xi` follows from
    /// the residual recursion with the warmup values set to zero.
    pub fn from_observations(
        st: &NarmaxStructure,
        th: &NarmaxParams,
        map: &ReducedMap,
        x_window: ArrayView2<f64>,
    ) -> Result<Self> {
        th.check(st)?;
        let z = map.extract_discrepancy(x_window)?;
        let series = SeriesSet::new(map.delta, x_window.to_owned())?.with_z(z.clone())?;
        let data = NarmaxData::new(map, &series)?;
        let coeffs = th.to_vector();
        let n = z.nrows();
        let mut xi = Array2::zeros(z.dim());
        let mut col = vec![0.0; n];
        for k in 0..data.dim() {
            component_pass(st, &coeffs, &data, k, false, &mut col);
            xi.column_mut(k).iter_mut().zip(&col).for_each(|(d, s)| *d = *s);
        }
        Self::new(x_window.to_owned(), z, xi)
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }
}

/// Simulates `n_rows` observation rows (the history included) with a
/// generator seeded from `seed`.
pub fn simulate(
    st: &NarmaxStructure,
    th: &NarmaxParams,
    map: &ReducedMap,
    init: &History,
    n_rows: usize,
    seed: u64,
) -> Result<SeriesSet> {
    simulate_with_rng(st, th, map, init, n_rows, &mut seed::rng(seed, &[]))
}

pub fn simulate_with_rng<R: Rng + ?Sized>(
    st: &NarmaxStructure,
    th: &NarmaxParams,
    map: &ReducedMap,
    init: &History,
    n_rows: usize,
    rng: &mut R,
) -> Result<SeriesSet> {
    th.check(st)?;
    let h = init.rows();
    let k = map.k;
    if init.x.ncols() != k {
        return Err(Error::Dimension(format!(
            "history has {} components, map has {k}",
            init.x.ncols()
        )));
    }
    if h < st.warmup() + 1 {
        return Err(Error::Contract(format!(
            "history of {h} rows; structure {st:?} needs at least {}",
            st.warmup() + 1
        )));
    }
    if n_rows < h {
        return Err(Error::Contract(format!("n_rows {n_rows} shorter than history {h}")));
    }

    let delta = map.delta;
    let sigma = th.sigma2.sqrt();
    let coeffs = th.to_vector();
    let nf = st.n_fixed();
    let (fixed, ma) = coeffs.split_at(nf);

    let mut x = Array2::zeros((n_rows, k));
    let mut z = Array2::zeros((n_rows - 1, k));
    let mut xi = Array2::zeros((n_rows - 1, k));
    let mut rx = Array2::zeros((n_rows, k));
    x.slice_mut(ndarray::s![..h, ..]).assign(&init.x);
    z.slice_mut(ndarray::s![..h - 1, ..]).assign(&init.z);
    xi.slice_mut(ndarray::s![..h - 1, ..]).assign(&init.xi);

    let mut scratch = map.scratch();
    let mut buf = vec![0.0; k];
    let mut row = vec![0.0; k];
    let mut reg = vec![0.0; nf];
    let mut fill_rx = |x: &Array2<f64>, rx: &mut Array2<f64>, t: usize| -> Result<()> {
        row.iter_mut().zip(x.row(t)).for_each(|(d, s)| *d = *s);
        map.increment_into(&row, &mut buf, &mut scratch)
            .map_err(|_| Error::BlowUp { step: t })?;
        rx.row_mut(t).iter_mut().zip(&buf).for_each(|(d, s)| *d = *s);
        Ok(())
    };
    for t in 0..h {
        fill_rx(&x, &mut rx, t)?;
    }

    for t in h - 1..n_rows - 1 {
        if t >= h {
            fill_rx(&x, &mut rx, t)?;
        }
        // z row t holds z^{t+1}; its lags are rows t - j of z/xi and t + 1 - j of x/R(x).
        for c in 0..k {
            fill_fixed(st, |j| z[(t - j, c)], |j| x[(t + 1 - j, c)], |j| rx[(t + 1 - j, c)], &mut reg);
            let mut phi = dot(fixed, &reg);
            for j in 1..=st.q {
                phi += ma[j - 1] * xi[(t - j, c)];
            }
            let noise: f64 = rng.sample(StandardNormal);
            let e = sigma * noise;
            let zn = phi + e;
            xi[(t, c)] = e;
            z[(t, c)] = zn;
            let next = x[(t, c)] + delta * rx[(t, c)] + delta * zn;
            if !(next.abs() <= BLOW_UP_THRESHOLD) {
                return Err(Error::BlowUp { step: t + 1 });
            }
            x[(t + 1, c)] = next;
        }
    }
    SeriesSet::new(delta, x)?.with_z(z)?.with_xi(xi)
}
