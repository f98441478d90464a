#![allow(dead_code)]

use narmax_closure::narmax::{self, History, NarmaxParams, NarmaxStructure};
use narmax_closure::reduction::{ReducedMap, Scheme};
use narmax_closure::{Error, SeriesSet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const K: usize = 18;
pub const F: f64 = 10.0;

pub fn map(delta: f64) -> ReducedMap {
    ReducedMap::new(K, F, delta, Scheme::Rk4).unwrap()
}

/// `rows` rows of the deterministic truncated model after a burn-in.
pub fn reduced_window(map: &ReducedMap, rows: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0: Vec<f64> = (0..map.k).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let burn = 200;
    let x = map.reconstruct(&x0, Array2::zeros((burn + rows - 1, map.k)).view()).unwrap();
    x.slice(ndarray::s![burn.., ..]).to_owned()
}

pub fn random_structure(rng: &mut ChaCha8Rng, min_q: usize) -> NarmaxStructure {
    let r = rng.gen_range(0..=2);
    let s = rng.gen_range(0..=2);
    NarmaxStructure::new(
        rng.gen_range(0..=2),
        r,
        s,
        rng.gen_range(min_q..=2),
        if r > 0 { rng.gen_range(1..=2) } else { 0 },
        if s > 0 { rng.gen_range(1..=2) } else { 0 },
    )
}

/// Small random coefficients: AR and MA sums bounded by 0.8, and polynomial
/// terms scaled by the typical size of `x^l`.
pub fn random_params(st: &NarmaxStructure, rng: &mut ChaCha8Rng, sigma2: f64) -> NarmaxParams {
    let mut th = NarmaxParams::zeros(st, sigma2);
    th.mu = rng.gen_range(-0.5..0.5);
    let lim = |n: usize| if n == 0 { 0.0 } else { 0.8 / n as f64 };
    th.a.iter_mut().for_each(|v| *v = rng.gen_range(-lim(st.p)..lim(st.p)));
    th.d.iter_mut().for_each(|v| *v = rng.gen_range(-lim(st.q)..lim(st.q)));
    for row in th.b.iter_mut().chain(th.c.iter_mut()) {
        for (l, v) in row.iter_mut().enumerate() {
            *v = rng.gen_range(-0.05..0.05) / 5f64.powi(l as i32);
        }
    }
    th
}

/// Simulates `n` rows from a reduced-map history window.
pub fn synthetic(
    st: &NarmaxStructure,
    th: &NarmaxParams,
    map: &ReducedMap,
    n: usize,
    seed: u64,
) -> Result<SeriesSet, Error> {
    let window = reduced_window(map, st.history_len(), seed);
    let hist = History::from_observations(st, th, map, window.view())?;
    narmax::simulate(st, th, map, &hist, n, seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Maximum relative error between the analytic likelihood gradient and
/// central differences at a random point near `th`.
pub fn gradient_fd_error(
    st: &NarmaxStructure,
    th: &NarmaxParams,
    data: &narmax::NarmaxData,
) -> f64 {
    let ll = narmax::log_likelihood(st, th, data).unwrap();
    let v = th.to_vector();
    let value = |w: &[f64]| {
        let p = NarmaxParams::from_vector(st, w, th.sigma2).unwrap();
        narmax::log_likelihood(st, &p, data).unwrap().value
    };
    let fd: Vec<f64> = (0..v.len())
        .map(|i| {
            let h = 1e-5 * v[i].abs().max(1e-2);
            let mut up = v.clone();
            let mut dn = v.clone();
            up[i] += h;
            dn[i] -= h;
            (value(&up) - value(&dn)) / (2.0 * h)
        })
        .collect();
    let scale = norm(&ll.grad).max(1e-8);
    ll.grad.iter().zip(&fd).map(|(g, f)| (g - f).abs() / scale).fold(0.0, f64::max)
}
