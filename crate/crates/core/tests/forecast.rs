mod common;

use common::*;
use narmax_closure::forecast::*;
use narmax_closure::lorenz96::L96Config;
use narmax_closure::narmax::{NarmaxParams, NarmaxStructure};
use narmax_closure::{Error, Result};
use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Truth from one long run of the forecast model itself.
fn narmax_setup(n_segments: usize, steps: usize) -> (NarmaxModel, Vec<Array2<f64>>, Vec<f64>) {
    let st = NarmaxStructure::new(1, 1, 0, 1, 1, 0);
    let mut th = NarmaxParams::zeros(&st, 0.5);
    th.mu = 0.2;
    th.a = vec![0.8];
    th.b = vec![vec![-0.1]];
    th.d = vec![0.3];
    let m = map(0.05);
    let long = synthetic(&st, &th, &m, n_segments * steps + 2001, 31).unwrap().x;
    let long = long.slice(s![2000.., ..]).to_owned();
    let segs = (0..n_segments)
        .map(|i| long.slice(s![i * steps..=(i + 1) * steps, ..]).to_owned())
        .collect();
    let clim = climatology(long.view());
    (NarmaxModel { structure: st, params: th, map: m }, segs, clim)
}

fn config(n_segments: usize, n_ens: usize) -> ForecastConfig {
    ForecastConfig { n_segments, horizon: 2.0, n_ens, n0: 3, seed: 17 }
}

#[test]
fn climatology_forecast_has_zero_anomaly_correlation() {
    struct Clim(Vec<f64>);
    impl ForecastModel for Clim {
        fn history_len(&self) -> usize {
            2
        }
        fn run_member(&self, _: ArrayView2<f64>, steps: usize, _: &mut ChaCha8Rng) -> Result<Array2<f64>> {
            Ok(Array2::from_shape_fn((steps + 1, self.0.len()), |(_, c)| self.0[c]))
        }
    }
    let (_, segs, clim) = narmax_setup(50, 40);
    let score = run_forecast(&Clim(clim.clone()), &segs, 0.05, &config(50, 2), &clim).unwrap();
    assert!(score.ancr.iter().all(|v| *v == 0.0));
    assert!(score.rmse.iter().all(|v| *v > 0.0));
}

#[test]
fn ensemble_averaging_does_not_increase_rmse() {
    let (model, segs, clim) = narmax_setup(500, 40);
    let one = run_forecast(&model, &segs, 0.05, &config(500, 1), &clim).unwrap();
    let five = run_forecast(&model, &segs, 0.05, &config(500, 5), &clim).unwrap();
    let twenty = run_forecast(&model, &segs, 0.05, &config(500, 20), &clim).unwrap();
    assert!(one.rmse[0] < 1e-12 && twenty.rmse[0] < 1e-12);
    // Sampling noise of the RMSE over 500 segments is a few percent.
    for t in 1..one.lead.len() {
        assert!(twenty.rmse[t] <= one.rmse[t] * 1.03, "lead {}: {} vs {}", one.lead[t], twenty.rmse[t], one.rmse[t]);
        assert!(twenty.rmse[t] <= five.rmse[t] * 1.03);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&twenty.rmse) < mean(&one.rmse));
    assert!(twenty.ancr.iter().chain(&one.ancr).all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn forecasts_are_reproducible() {
    let (model, segs, clim) = narmax_setup(20, 40);
    let a = run_forecast(&model, &segs, 0.05, &config(20, 4), &clim).unwrap();
    let b = run_forecast(&model, &segs, 0.05, &config(20, 4), &clim).unwrap();
    assert_eq!(a, b);
    let c = run_forecast(&model, &segs, 0.05, &ForecastConfig { seed: 18, ..config(20, 4) }, &clim).unwrap();
    assert_ne!(a.rmse, c.rmse);
}

/// Blows up on roughly one in `every` members.
struct Fragile {
    inner: NarmaxModel,
    every: u32,
}

impl ForecastModel for Fragile {
    fn history_len(&self) -> usize {
        self.inner.history_len()
    }
    fn run_member(&self, window: ArrayView2<f64>, steps: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        if rng.gen_range(0..self.every) == 0 {
            return Err(Error::BlowUp { step: 7 });
        }
        self.inner.run_member(window, steps, rng)
    }
}

#[test]
fn blow_ups_are_excluded_up_to_one_percent() {
    let (model, segs, clim) = narmax_setup(100, 20);
    let cfg = ForecastConfig { horizon: 1.0, ..config(100, 20) };
    let rare = Fragile { inner: model, every: 1000 };
    let score = run_forecast(&rare, &segs, 0.05, &cfg, &clim).unwrap();
    assert!(score.excluded_members <= 20);
    let (model, ..) = narmax_setup(1, 20);
    let frequent = Fragile { inner: model, every: 10 };
    match run_forecast(&frequent, &segs, 0.05, &cfg, &clim) {
        Err(Error::EnsembleBlowUp { failed, total }) => assert!(failed > 20 && total == 2000),
        other => panic!("expected ensemble blow-up, got {other:?}"),
    }
}

#[test]
fn truth_segments_are_spaced_by_the_horizon() {
    let cfg = L96Config { spinup: 1.0, seed: 3, ..L96Config::default() };
    let segs = truth_segments(&cfg, 4, 0.5, 0.05, 2, 2).unwrap();
    assert_eq!(segs.len(), 4);
    assert!(segs.iter().all(|s| s.dim() == (13, K)));
    assert_eq!(segs[0].row(10), segs[1].row(0));
    assert_eq!(segs[0].row(12), segs[1].row(2));
    assert_ne!(segs[1].row(10), segs[2].row(0));
    assert_eq!(truth_segments(&cfg, 4, 0.5, 0.05, 2, 2).unwrap(), segs);
}
