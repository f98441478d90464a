//! Two-scale Lorenz 96 system and a fixed-step RK4 integrator.
//!
//! ```text
//! dx_k/dt   = x_{k-1} (x_{k+1} - x_{k-2}) - x_k + F + (h_x / J) sum_j y_{j,k}
//! dy_jk/dt  = (1/eps) [ y_{j+1,k} (y_{j-1,k} - y_{j+2,k}) - y_{j,k} + h_y x_k ]
//! ```
//!
//! Indices are cyclic with `y_{j+J,k} = y_{j,k+1}`, so the fast variables form
//! a single ring of length `J*K`. Internally a state is one flat buffer laid
//! out as `[x_0..x_{K-1}, y_{0,0}..y_{J-1,0}, y_{0,1}, ...]`, which makes the
//! fast ring contiguous.

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::series::SeriesSet;

/// Any state component beyond this magnitude is treated as a blow-up.
pub const BLOW_UP_THRESHOLD: f64 = 1.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L96Config {
    pub k: usize,
    pub j: usize,
    pub forcing: f64,
    pub eps: f64,
    pub h_x: f64,
    pub h_y: f64,
    pub dt: f64,
    pub spinup: f64,
    pub seed: u64,
}

impl Default for L96Config {
    fn default() -> Self {
        Self {
            k: 18,
            j: 20,
            forcing: 10.0,
            eps: 0.5,
            h_x: -1.0,
            h_y: 1.0,
            dt: 0.001,
            spinup: 100.0,
            seed: 0,
        }
    }
}

impl L96Config {
    pub fn validate(&self) -> Result<()> {
        if self.k < 4 {
            return Err(Error::Config(format!("k must be >= 4, got {}", self.k)));
        }
        if self.j < 1 {
            return Err(Error::Config("j must be >= 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.spinup >= 0.0) {
            return Err(Error::Config("spinup must be non-negative".into()));
        }
        for (name, v) in [("forcing", self.forcing), ("h_x", self.h_x), ("h_y", self.h_y)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    fn flat_len(&self) -> usize {
        self.k * (self.j + 1)
    }
}

/// Resolved vector `x` (length K) and unresolved matrix `y` (J x K).
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub x: Array1<f64>,
    pub y: Array2<f64>,
}

impl FullState {
    fn check(&self, cfg: &L96Config) -> Result<()> {
        if self.x.len() != cfg.k || self.y.dim() != (cfg.j, cfg.k) {
            return Err(Error::Dimension(format!(
                "state has x[{}], y{:?}; config expects x[{}], y({}, {})",
                self.x.len(),
                self.y.dim(),
                cfg.k,
                cfg.j,
                cfg.k
            )));
        }
        Ok(())
    }

    fn to_flat(&self) -> Vec<f64> {
        let (j, k) = self.y.dim();
        let mut flat = Vec::with_capacity(k * (j + 1));
        flat.extend(self.x.iter());
        for col in self.y.columns() {
            flat.extend(col.iter());
        }
        flat
    }

    fn from_flat(cfg: &L96Config, flat: &[f64]) -> Self {
        let (k, j) = (cfg.k, cfg.j);
        let x = Array1::from(flat[..k].to_vec());
        let y = Array2::from_shape_fn((j, k), |(jj, kk)| flat[k + kk * j + jj]);
        Self { x, y }
    }

    /// Rotates the spatial index by `by`: component `k` moves to `k + by`.
    pub fn shifted(&self, by: usize) -> Self {
        let k = self.x.len();
        let x = Array1::from_shape_fn(k, |i| self.x[(i + k - by % k) % k]);
        let y = Array2::from_shape_fn(self.y.dim(), |(jj, i)| self.y[(jj, (i + k - by % k) % k)]);
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }
}

/// Time derivative of the full two-scale system.
pub fn full_rhs(cfg: &L96Config, s: &FullState) -> Result<FullState> {
    s.check(cfg)?;
    let flat = s.to_flat();
    let mut out = vec![0.0; flat.len()];
    full_rhs_flat(cfg, &flat, &mut out);
    Ok(FullState::from_flat(cfg, &out))
}

fn full_rhs_flat(cfg: &L96Config, s: &[f64], out: &mut [f64]) {
    let k = cfg.k;
    let j = cfg.j;
    let (x, y) = s.split_at(k);
    let (dx, dy) = out.split_at_mut(k);

    truncated_rhs(cfg.forcing, x, dx);
    let coupling = cfg.h_x / j as f64;
    for (kk, d) in dx.iter_mut().enumerate() {
        let col = &y[kk * j..(kk + 1) * j];
        *d += coupling * col.iter().sum::<f64>();
    }

    let n = j * k;
    let inv_eps = 1.0 / cfg.eps;
    let h_y = cfg.h_y;
    let term = |m: usize, prev: f64, next: f64, next2: f64| -> f64 {
        inv_eps * (next * (prev - next2) - y[m] + h_y * x[m / j])
    };
    if n >= 4 {
        dy[0] = term(0, y[n - 1], y[1], y[2]);
        for m in 1..n - 2 {
            dy[m] = inv_eps * (y[m + 1] * (y[m - 1] - y[m + 2]) - y[m] + h_y * x[m / j]);
        }
        dy[n - 2] = term(n - 2, y[n - 3], y[n - 1], y[0]);
        dy[n - 1] = term(n - 1, y[n - 2], y[0], y[1]);
    } else {
        for m in 0..n {
            dy[m] = term(m, y[(m + n - 1) % n], y[(m + 1) % n], y[(m + 2) % n]);
        }
    }
}

/// Resolved-only vector field `x_{k-1} (x_{k+1} - x_{k-2}) - x_k + F`.
pub fn truncated_rhs(forcing: f64, x: &[f64], out: &mut [f64]) {
    let k = x.len();
    debug_assert!(k >= 4 && out.len() == k);
    let at = |i: isize| x[i.rem_euclid(k as isize) as usize];
    for i in [0usize, 1, k - 1] {
        let ii = i as isize;
        out[i] = at(ii - 1) * (at(ii + 1) - at(ii - 2)) - x[i] + forcing;
    }
    for i in 2..k - 1 {
        out[i] = x[i - 1] * (x[i + 1] - x[i - 2]) - x[i] + forcing;
    }
}

/// Classical four-stage Runge-Kutta stepper with reusable scratch buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advances `y` by `dt` in place. `step` is only used to label a blow-up.
    pub fn step<F>(&mut self, mut rhs: F, y: &mut [f64], dt: f64, step: usize) -> Result<()>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        if dt == 0.0 {
            return Ok(());
        }
        let n = y.len();
        let half = 0.5 * dt;
        rhs(y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + half * self.k1[i];
        }
        rhs(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + half * self.k2[i];
        }
        rhs(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + dt * self.k3[i];
        }
        rhs(&self.tmp, &mut self.k4);
        let sixth = dt / 6.0;
        let mut ok = true;
        for i in 0..n {
            y[i] += sixth * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
            ok &= y[i].abs() <= BLOW_UP_THRESHOLD;
        }
        if ok {
            Ok(())
        } else {
            Err(Error::BlowUp { step })
        }
    }
}

/// One RK4 step of `rhs` from `s`. Returns a new state; `dt = 0` is the identity.
pub fn rk4_step<F>(rhs: F, s: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if !(dt >= 0.0) {
        return Err(Error::Contract(format!("dt must be >= 0, got {dt}")));
    }
    let mut y = s.to_vec();
    Rk4::new(s.len()).step(rhs, &mut y, dt, 0)?;
    Ok(y)
}

/// Integrates the full system in place for `steps` steps of `cfg.dt`.
pub fn integrate(cfg: &L96Config, s: &mut FullState, steps: usize) -> Result<()> {
    cfg.validate()?;
    s.check(cfg)?;
    let mut flat = s.to_flat();
    let mut rk = Rk4::new(flat.len());
    for n in 0..steps {
        rk.step(|u, du| full_rhs_flat(cfg, u, du), &mut flat, cfg.dt, n)?;
    }
    *s = FullState::from_flat(cfg, &flat);
    Ok(())
}

/// Seeded random initial condition for trajectory `index`.
pub fn initial_state(cfg: &L96Config, index: u64) -> FullState {
    let mut rng = seed::rng(cfg.seed, &[index]);
    let half_f = 0.5 * cfg.forcing;
    let x = Array1::from_shape_fn(cfg.k, |_| half_f * rng.gen_range(-1.0..=1.0));
    let y = Array2::from_shape_fn((cfg.j, cfg.k), |_| rng.gen_range(-0.1..=0.1));
    FullState { x, y }
}

fn steps_per(cfg: &L96Config, interval: f64, what: &str) -> Result<usize> {
    let ratio = interval / cfg.dt;
    let steps = ratio.round();
    if !(interval > 0.0) || steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "{what} = {interval} is not a positive integer multiple of dt = {}",
            cfg.dt
        )));
    }
    Ok(steps as usize)
}

/// Samples trajectory `index` every `delta` after discarding `cfg.spinup`.
///
/// `total_time` includes the spinup, so the run produces
/// `round((total_time - spinup) / delta) + 1` observation rows.
pub fn generate_trajectory(
    cfg: &L96Config,
    total_time: f64,
    delta: f64,
    index: u64,
) -> Result<SeriesSet> {
    cfg.validate()?;
    let per_obs = steps_per(cfg, delta, "delta")?;
    if !(total_time >= cfg.spinup) {
        return Err(Error::Config(format!(
            "total time {total_time} is shorter than spinup {}",
            cfg.spinup
        )));
    }
    let spin_steps = (cfg.spinup / cfg.dt).round() as usize;
    let rows = ((total_time - cfg.spinup) / delta + 1e-9).floor() as usize + 1;

    let mut flat = initial_state(cfg, index).to_flat();
    let mut rk = Rk4::new(cfg.flat_len());
    let rhs = |u: &[f64], du: &mut [f64]| full_rhs_flat(cfg, u, du);
    for n in 0..spin_steps {
        rk.step(rhs, &mut flat, cfg.dt, n)?;
    }
    let mut x = Array2::zeros((rows, cfg.k));
    let mut step = spin_steps;
    for row in 0..rows {
        if row > 0 {
            for _ in 0..per_obs {
                rk.step(rhs, &mut flat, cfg.dt, step)?;
                step += 1;
            }
        }
        x.row_mut(row)
            .iter_mut()
            .zip(&flat[..cfg.k])
            .for_each(|(d, s)| *d = *s);
    }
    SeriesSet::new(delta, x)
}

/// Ground-truth dataset (trajectory 0 of the configured seed).
pub fn generate_dataset(cfg: &L96Config, total_time: f64, delta: f64) -> Result<SeriesSet> {
    generate_trajectory(cfg, total_time, delta, 0)
}

/// Independent trajectories `0..count`, integrated concurrently.
pub fn generate_trajectories(
    cfg: &L96Config,
    total_time: f64,
    delta: f64,
    count: usize,
) -> Result<Vec<SeriesSet>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_trajectory(cfg, total_time, delta, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_state(cfg: &L96Config) -> FullState {
        let mut s = initial_state(cfg, 3);
        s.x.mapv_inplace(|v| v * 1.7);
        s.y.mapv_inplace(|v| v * 10.0);
        s
    }

    #[test]
    fn symmetric_fixed_point_of_x_equation() {
        let cfg = L96Config::default();
        let s = FullState {
            x: Array1::from_elem(cfg.k, cfg.forcing),
            y: Array2::zeros((cfg.j, cfg.k)),
        };
        let d = full_rhs(&cfg, &s).unwrap();
        for v in d.x.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rhs_is_translation_equivariant() {
        let cfg = L96Config::default();
        let s = random_state(&cfg);
        for by in [1, 5, 17] {
            let lhs = full_rhs(&cfg, &s.shifted(by)).unwrap();
            let rhs = full_rhs(&cfg, &s).unwrap().shifted(by);
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn rhs_matches_direct_index_formula() {
        // Oracle written straight from the cyclic index rules.
        let cfg = L96Config { k: 5, j: 3, ..Default::default() };
        let s = random_state(&cfg);
        let (k, j) = (cfg.k as isize, cfg.j as isize);
        let x = |i: isize| s.x[i.rem_euclid(k) as usize];
        let y = |jj: isize, kk: isize| {
            let kk = kk + jj.div_euclid(j);
            s.y[(jj.rem_euclid(j) as usize, kk.rem_euclid(k) as usize)]
        };
        let d = full_rhs(&cfg, &s).unwrap();
        for kk in 0..k {
            let zk: f64 = (0..j).map(|jj| y(jj, kk)).sum::<f64>() * cfg.h_x / cfg.j as f64;
            let dx = x(kk - 1) * (x(kk + 1) - x(kk - 2)) - x(kk) + cfg.forcing + zk;
            assert_abs_diff_eq!(d.x[kk as usize], dx, epsilon = 1e-12);
            for jj in 0..j {
                let dy = (y(jj + 1, kk) * (y(jj - 1, kk) - y(jj + 2, kk)) - y(jj, kk)
                    + cfg.h_y * x(kk))
                    / cfg.eps;
                assert_abs_diff_eq!(d.y[(jj as usize, kk as usize)], dy, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn derivative_agrees_with_central_difference_of_rk4() {
        let cfg = L96Config::default();
        let s = random_state(&cfg);
        let flat = s.to_flat();
        let rhs = |u: &[f64], du: &mut [f64]| full_rhs_flat(&cfg, u, du);
        let h = 1e-4;
        let fwd = rk4_step(rhs, &flat, h).unwrap();
        // Backward step of the same scheme: integrate the negated field.
        let bwd = rk4_step(
            |u: &[f64], du: &mut [f64]| {
                full_rhs_flat(&cfg, u, du);
                du.iter_mut().for_each(|v| *v = -*v);
            },
            &flat,
            h,
        )
        .unwrap();
        let mut d = vec![0.0; flat.len()];
        full_rhs_flat(&cfg, &flat, &mut d);
        let scale = d.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..flat.len() {
            let fd = (fwd[i] - bwd[i]) / (2.0 * h);
            assert!((fd - d[i]).abs() < 1e-3 * scale, "component {i}: {fd} vs {}", d[i]);
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let y = vec![1.0, -2.0, 3.5];
        let out = rk4_step(|u: &[f64], du: &mut [f64]| du.copy_from_slice(u), &y, 0.0).unwrap();
        assert_eq!(out, y);
        assert!(rk4_step(|_: &[f64], _: &mut [f64]| {}, &y, -1.0).is_err());
    }

    #[test]
    fn rk4_is_fourth_order_on_exponential() {
        let lambda = -1.3;
        let err = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut y = vec![1.0];
            let mut rk = Rk4::new(1);
            for n in 0..steps {
                rk.step(|u, du| du[0] = lambda * u[0], &mut y, dt, n).unwrap();
            }
            (y[0] - lambda.exp()).abs()
        };
        let one_step = {
            let y = rk4_step(|u: &[f64], du: &mut [f64]| du[0] = lambda * u[0], &[1.0], 0.1).unwrap();
            (y[0] - (lambda * 0.1).exp()).abs()
        };
        assert!(one_step < 1e-6);
        let order = (err(0.1) / err(0.05)).log2();
        assert!((order - 4.0).abs() < 0.15, "order {order}");
    }

    #[test]
    fn rk4_global_order_on_full_system() {
        let cfg = L96Config { dt: 1e-5, ..Default::default() };
        let s0 = random_state(&cfg);
        let t_end = 0.08;
        let run = |dt: f64| {
            let c = L96Config { dt, ..cfg };
            let mut s = s0.clone();
            integrate(&c, &mut s, (t_end / dt).round() as usize).unwrap();
            s.to_flat()
        };
        let reference = run(1e-5);
        let err = |dt: f64| {
            run(dt)
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let e1 = err(0.004);
        let e2 = err(0.002);
        let order = (e1 / e2).log2();
        assert!((order - 4.0).abs() < 0.4, "order {order} ({e1:e}, {e2:e})");
    }

    #[test]
    fn blow_up_is_an_error() {
        let mut y = vec![1.0];
        let mut rk = Rk4::new(1);
        let r = (0..200).try_for_each(|n| rk.step(|u, du| du[0] = u[0] * u[0], &mut y, 0.1, n));
        assert!(matches!(r, Err(Error::BlowUp { .. })));
    }

    #[test]
    fn observation_count_and_determinism() {
        let cfg = L96Config { spinup: 0.5, seed: 11, ..Default::default() };
        let a = generate_dataset(&cfg, 0.5 + 100.0 * 0.01, 0.01).unwrap();
        assert_eq!(a.len(), 101);
        let b = generate_dataset(&cfg, 0.5 + 100.0 * 0.01, 0.01).unwrap();
        assert_eq!(a.x, b.x);
        let c = generate_dataset(&L96Config { seed: 12, ..cfg }, 1.5, 0.01).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn delta_must_be_multiple_of_dt() {
        let cfg = L96Config { spinup: 0.0, ..Default::default() };
        assert!(matches!(
            generate_dataset(&cfg, 1.0, 0.0105),
            Err(Error::Config(_))
        ));
        assert!(matches!(generate_dataset(&cfg, -1.0, 0.01), Err(Error::Config(_))));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cfg = L96Config::default();
        let s = FullState { x: Array1::zeros(5), y: Array2::zeros((20, 18)) };
        assert!(matches!(full_rhs(&cfg, &s), Err(Error::Dimension(_))));
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(L96Config { k: 3, ..Default::default() }.validate().is_err());
        assert!(L96Config { eps: 0.0, ..Default::default() }.validate().is_err());
        assert!(L96Config { dt: 0.0, ..Default::default() }.validate().is_err());
    }
}
