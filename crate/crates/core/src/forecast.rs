//! Ensemble forecast verification against full-model truth segments.
//!
//! Every ensemble member starts from the same observed `n0`-step window of a
//! truth segment; the noise state is initialized from that window. Scores per
//! lead time `tau` (measured from the last window row):
//!
//! ```text
//! RMSE(tau) = sqrt( mean_{segments, k} (xbar_k(tau) - x_k(tau))^2 )
//! ANCR(tau) = mean_segments corr_k(xbar_k(tau) - clim_k, x_k(tau) - clim_k)
//! ```
//!
//! where `xbar` is the ensemble mean, `clim` the full-model climatology and
//! `corr_k` the centered correlation over the components.

use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lorenz96::{generate_trajectory, L96Config};
use crate::narmax::{self, History, NarmaxParams, NarmaxStructure};
use crate::polyar::{self, PolyarInit, PolyarParams};
use crate::reduction::ReducedMap;
use crate::seed;

/// Largest fraction of ensemble members allowed to blow up.
pub const MAX_BLOW_UP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub n_segments: usize,
    /// Segment length in time units.
    pub horizon: f64,
    pub n_ens: usize,
    /// Observation rows imposed as initial condition.
    pub n0: usize,
    pub seed: u64,
}

impl ForecastConfig {
    pub fn validate(&self, delta: f64) -> Result<usize> {
        if self.n0 < 2 {
            return Err(Error::Config(format!("n0 must be >= 2, got {}", self.n0)));
        }
        if self.n_ens == 0 || self.n_segments == 0 {
            return Err(Error::Config("n_ens and n_segments must be positive".into()));
        }
        let steps = self.horizon / delta;
        if !(steps >= 1.0) || (steps - steps.round()).abs() > 1e-9 * steps {
            return Err(Error::Config(format!(
                "horizon {} is not an integer multiple of delta {delta}",
                self.horizon
            )));
        }
        Ok(steps.round() as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastScore {
    /// Lead times in time units.
    pub lead: Vec<f64>,
    pub rmse: Vec<f64>,
    pub ancr: Vec<f64>,
    pub n_ens: usize,
    pub segments: usize,
    /// Members excluded after blowing up.
    pub excluded_members: usize,
}

impl ForecastScore {
    /// First lead at which ANCR drops below `level`, linearly interpolated.
    pub fn ancr_crossing(&self, level: f64) -> Option<f64> {
        self.ancr.windows(2).zip(self.lead.windows(2)).find_map(|(a, t)| {
            (a[0] >= level && a[1] < level)
                .then(|| t[0] + (a[0] - level) / (a[0] - a[1]) * (t[1] - t[0]))
        })
    }
}

/// A reduced model that can be started from an observed window.
pub trait ForecastModel: Sync {
    /// Observation rows needed to initialize.
    fn history_len(&self) -> usize;

    /// Runs one member from `window` (its last row is lead zero) for `steps`
    /// steps, returning `steps + 1` rows starting at lead zero.
    fn run_member(&self, window: ArrayView2<f64>, steps: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>>;
}

pub struct NarmaxModel {
    pub structure: NarmaxStructure,
    pub params: NarmaxParams,
    pub map: ReducedMap,
}

impl ForecastModel for NarmaxModel {
    fn history_len(&self) -> usize {
        self.structure.history_len()
    }

    fn run_member(&self, window: ArrayView2<f64>, steps: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let hist = History::from_observations(&self.structure, &self.params, &self.map, window)?;
        let h = hist.rows();
        let sim = narmax::simulate_with_rng(&self.structure, &self.params, &self.map, &hist, h + steps, rng)?;
        Ok(sim.x.slice(ndarray::s![h - 1.., ..]).to_owned())
    }
}

pub struct PolyarModel {
    pub params: PolyarParams,
    pub forcing: f64,
}

impl ForecastModel for PolyarModel {
    fn history_len(&self) -> usize {
        2
    }

    fn run_member(&self, window: ArrayView2<f64>, steps: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let init = PolyarInit::from_observations(&self.params, self.forcing, window)?;
        Ok(polyar::simulate_polyar_with_rng(&self.params, self.forcing, &init, steps + 1, rng)?.x)
    }
}

/// Pearson correlation across components; zero when either vector is flat.
fn centered_cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x - ma, y - mb);
        ab += u * v;
        aa += u * u;
        bb += v * v;
    }
    let denom = (aa * bb).sqrt();
    if denom > 0.0 {
        ab / denom
    } else {
        0.0
    }
}

struct SegmentScore {
    sq_err: Vec<f64>,
    ancr: Vec<f64>,
    excluded: usize,
    scored: bool,
}

fn score_segment<M: ForecastModel + ?Sized>(
    model: &M,
    segment: ArrayView2<f64>,
    cfg: &ForecastConfig,
    climatology: &[f64],
    index: usize,
) -> Result<SegmentScore> {
    let n0 = cfg.n0;
    let steps = segment.nrows() - n0;
    let k = segment.ncols();
    let window = segment.slice(ndarray::s![..n0, ..]);
    let truth = segment.slice(ndarray::s![n0 - 1.., ..]);
    let mut mean = Array2::<f64>::zeros((steps + 1, k));
    let mut used = 0usize;
    let mut excluded = 0usize;
    for member in 0..cfg.n_ens {
        let mut rng = seed::rng(cfg.seed, &[index as u64, member as u64]);
        match model.run_member(window, steps, &mut rng) {
            Ok(traj) => {
                mean += &traj;
                used += 1;
            }
            Err(Error::BlowUp { step }) => {
                log::debug!("segment {index} member {member} blew up at step {step}");
                excluded += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Ok(SegmentScore { sq_err: vec![], ancr: vec![], excluded, scored: false });
    }
    mean /= used as f64;
    let mut sq_err = vec![0.0; steps + 1];
    let mut ancr = vec![0.0; steps + 1];
    let mut fa = vec![0.0; k];
    let mut ta = vec![0.0; k];
    for t in 0..=steps {
        let mut se = 0.0;
        for c in 0..k {
            se += (mean[(t, c)] - truth[(t, c)]).powi(2);
            fa[c] = mean[(t, c)] - climatology[c];
            ta[c] = truth[(t, c)] - climatology[c];
        }
        sq_err[t] = se;
        ancr[t] = centered_cosine(&fa, &ta);
    }
    Ok(SegmentScore { sq_err, ancr, excluded, scored: true })
}

/// Scores `model` on every truth segment. Segments and members are
/// independent work units; aggregation runs in segment order.
pub fn run_forecast<M: ForecastModel + ?Sized>(
    model: &M,
    segments: &[Array2<f64>],
    delta: f64,
    cfg: &ForecastConfig,
    climatology: &[f64],
) -> Result<ForecastScore> {
    cfg.validate(delta)?;
    if cfg.n0 < model.history_len() {
        return Err(Error::Config(format!(
            "n0 = {} below the model's history requirement {}",
            cfg.n0,
            model.history_len()
        )));
    }
    let Some(first) = segments.first() else {
        return Err(Error::InsufficientData("no truth segments".into()));
    };
    let (rows, k) = first.dim();
    if segments.iter().any(|s| s.dim() != (rows, k)) {
        return Err(Error::Dimension("truth segments differ in shape".into()));
    }
    if rows < cfg.n0 + 1 {
        return Err(Error::Contract(format!(
            "segments of {rows} rows are shorter than n0 + 1 = {}",
            cfg.n0 + 1
        )));
    }
    if climatology.len() != k {
        return Err(Error::Dimension(format!("climatology has {} entries, state has {k}", climatology.len())));
    }

    let parts: Vec<SegmentScore> = segments
        .par_iter()
        .enumerate()
        .map(|(i, seg)| score_segment(model, seg.view(), cfg, climatology, i))
        .collect::<Result<_>>()?;

    let total = cfg.n_ens * segments.len();
    let excluded: usize = parts.iter().map(|p| p.excluded).sum();
    if excluded as f64 > MAX_BLOW_UP_FRACTION * total as f64 {
        return Err(Error::EnsembleBlowUp { failed: excluded, total });
    }
    if excluded > 0 {
        log::warn!("{excluded} of {total} ensemble members blew up and were excluded");
    }

    let steps = rows - cfg.n0;
    let mut se = vec![0.0; steps + 1];
    let mut ancr = vec![0.0; steps + 1];
    let mut scored = 0usize;
    for p in parts.iter().filter(|p| p.scored) {
        se.iter_mut().zip(&p.sq_err).for_each(|(a, b)| *a += b);
        ancr.iter_mut().zip(&p.ancr).for_each(|(a, b)| *a += b);
        scored += 1;
    }
    let n = scored as f64;
    Ok(ForecastScore {
        lead: (0..=steps).map(|t| t as f64 * delta).collect(),
        rmse: se.iter().map(|v| (v / (n * k as f64)).sqrt()).collect(),
        ancr: ancr.iter().map(|v| v / n).collect(),
        n_ens: cfg.n_ens,
        segments: scored,
        excluded_members: excluded,
    })
}

/// `n_segments` consecutive truth segments drawn from `chains` independent
/// full-model trajectories. Each segment holds `lead_in` history rows ahead
/// of `horizon` time units of lead (pass `n0 - 1`); segments of a chain are
/// spaced by the horizon.
pub fn truth_segments(
    cfg: &L96Config,
    n_segments: usize,
    horizon: f64,
    delta: f64,
    chains: usize,
    lead_in: usize,
) -> Result<Vec<Array2<f64>>> {
    let chains = chains.clamp(1, n_segments.max(1));
    let steps = (horizon / delta).round() as usize;
    let per_chain = n_segments.div_ceil(chains);
    let runs: Vec<Vec<Array2<f64>>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let count = per_chain.min(n_segments - (c * per_chain).min(n_segments));
            if count == 0 {
                return Ok(vec![]);
            }
            let total = cfg.spinup + (count * steps + lead_in) as f64 * delta;
            let traj = generate_trajectory(cfg, total, delta, c as u64)?;
            Ok((0..count)
                .map(|i| traj.x.slice(ndarray::s![i * steps..=(i + 1) * steps + lead_in, ..]).to_owned())
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(runs.into_iter().flatten().collect())
}

/// Per-component time mean of a long run.
pub fn climatology(x: ArrayView2<f64>) -> Vec<f64> {
    x.mean_axis(ndarray::Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduction::Scheme;
    use ndarray::Array1;

    /// Deterministic truncated model; exact when truth comes from it.
    struct Deterministic(ReducedMap);

    impl ForecastModel for Deterministic {
        fn history_len(&self) -> usize {
            2
        }
        fn run_member(&self, window: ArrayView2<f64>, steps: usize, _: &mut ChaCha8Rng) -> Result<Array2<f64>> {
            let x0 = window.row(window.nrows() - 1).to_vec();
            self.0.reconstruct(&x0, Array2::zeros((steps, self.0.k)).view())
        }
    }

    struct Constant(Vec<f64>);

    impl ForecastModel for Constant {
        fn history_len(&self) -> usize {
            2
        }
        fn run_member(&self, _: ArrayView2<f64>, steps: usize, _: &mut ChaCha8Rng) -> Result<Array2<f64>> {
            Ok(Array2::from_shape_fn((steps + 1, self.0.len()), |(_, c)| self.0[c]))
        }
    }

    fn reduced_truth(map: &ReducedMap, n_seg: usize, rows: usize) -> Vec<Array2<f64>> {
        let x0: Vec<f64> = (0..map.k).map(|k| 2.0 + 5.0 * (k as f64 * 0.7).sin()).collect();
        let long = map
            .reconstruct(&x0, Array2::zeros((n_seg * (rows - 1) + 200, map.k)).view())
            .unwrap();
        (0..n_seg)
            .map(|i| long.slice(ndarray::s![200 + i * (rows - 1)..200 + (i + 1) * (rows - 1) + 1, ..]).to_owned())
            .collect()
    }

    fn cfg(n_segments: usize) -> ForecastConfig {
        ForecastConfig { n_segments, horizon: 2.0, n_ens: 3, n0: 2, seed: 1 }
    }

    #[test]
    fn perfect_model_scores_perfectly() {
        let map = ReducedMap::new(18, 10.0, 0.01, Scheme::Rk4).unwrap();
        let segs = reduced_truth(&map, 6, 201);
        let clim = climatology(segs[0].view());
        let score = run_forecast(&Deterministic(map), &segs, 0.01, &cfg(6), &clim).unwrap();
        assert!(score.rmse.iter().all(|v| *v < 1e-12));
        assert!(score.ancr.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert_eq!(score.lead.len(), 200);
    }

    #[test]
    fn anomaly_correlation_ignores_climatology_offset() {
        let map = ReducedMap::new(18, 10.0, 0.01, Scheme::Rk4).unwrap();
        let segs = reduced_truth(&map, 4, 201);
        let clim = climatology(segs[1].view());
        let model = Constant(segs[0].row(0).to_vec());
        let a = run_forecast(&model, &segs, 0.01, &cfg(4), &clim).unwrap();
        let shift = Array1::from_shape_fn(18, |k| 0.5 * k as f64 - 3.0);
        let segs2: Vec<_> = segs.iter().map(|s| s + &shift).collect();
        let clim2: Vec<f64> = clim.iter().zip(shift.iter()).map(|(a, b)| a + b).collect();
        let model2 = Constant(segs2[0].row(0).to_vec());
        let b = run_forecast(&model2, &segs2, 0.01, &cfg(4), &clim2).unwrap();
        for (u, v) in a.ancr.iter().zip(&b.ancr) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn short_segments_and_bad_config_are_rejected() {
        let map = ReducedMap::new(18, 10.0, 0.01, Scheme::Rk4).unwrap();
        let segs = reduced_truth(&map, 2, 3);
        let clim = vec![0.0; 18];
        let c = ForecastConfig { n0: 3, horizon: 0.02, ..cfg(2) };
        assert!(matches!(
            run_forecast(&Deterministic(map), &segs, 0.01, &c, &clim),
            Err(Error::Contract(_))
        ));
        let c = ForecastConfig { n0: 1, ..cfg(2) };
        assert!(run_forecast(&Deterministic(map), &segs, 0.01, &c, &clim).is_err());
    }

    #[test]
    fn crossing_is_interpolated() {
        let s = ForecastScore {
            lead: vec![0.0, 1.0, 2.0, 3.0],
            rmse: vec![0.0; 4],
            ancr: vec![1.0, 0.8, 0.4, 0.2],
            n_ens: 1,
            segments: 1,
            excluded_members: 0,
        };
        assert!((s.ancr_crossing(0.6).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(s.ancr_crossing(0.1), None);
    }
}
