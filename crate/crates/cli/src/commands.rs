//! The pipeline stages. Each reads its inputs from and writes its artifacts
//! to the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use narmax_closure::forecast::{self, ForecastConfig, ForecastModel, NarmaxModel, PolyarModel};
use narmax_closure::lorenz96::generate_trajectory;
use narmax_closure::narmax::{self, fit, History, NarmaxData, ParamsDocument, ParamsMeta};
use narmax_closure::polyar::{self, PolyarInit, PolyarParams};
use narmax_closure::reduction::ReducedMap;
use narmax_closure::stats::{self, SummaryOptions, SummaryStats};
use narmax_closure::SeriesSet;
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::{streams, PipelineConfig, Scale};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct NarmaxFitArtifact {
    pub config_hash: String,
    pub data_hash: String,
    pub report: narmax::FitReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PolyarFitArtifact {
    pub config_hash: String,
    pub data_hash: String,
    pub degree: usize,
    /// Stationary noise variance `sigma^2 / (1 - phi^2)`; null when `|phi| >= 1`.
    pub eta_variance: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub mean: f64,
    pub std: f64,
    /// KS distance to the full-model data; absent for the full model.
    pub ks: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryTable {
    pub config_hash: String,
    pub data_hash: String,
    pub delta: f64,
    /// 1-based component index.
    pub component: usize,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ForecastRun {
    pub model: String,
    pub n_ens: usize,
    pub file: String,
    /// First lead at which ANCR drops below 0.6.
    pub ancr_06_crossing: Option<f64>,
    pub excluded_members: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub config_hash: String,
    pub data_hash: String,
    pub n_segments: usize,
    pub horizon: f64,
    pub n0: usize,
    pub runs: Vec<ForecastRun>,
}

fn write_resolved_config(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    write_bytes(&out.join(RESOLVED_CONFIG), cfg.to_toml().as_bytes())
}

fn reduced_map(cfg: &PipelineConfig) -> Result<ReducedMap> {
    Ok(ReducedMap::new(cfg.model.k, cfg.model.forcing, cfg.delta, cfg.scheme)?)
}

pub fn simulate(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let start = Instant::now();
    let model = cfg.l96(streams::DATA);
    let total = model.spinup + (cfg.n_obs - 1) as f64 * cfg.delta;
    log::info!("integrating the full model for {total} time units");
    let data = generate_trajectory(&model, total, cfg.delta, 0)?;
    let bytes = dataset_bytes(cfg.delta, &data.x);
    let meta = DatasetMeta {
        content_hash: sha256_hex(&bytes),
        config_hash: cfg.hash(),
        data_config_hash: cfg.data_hash(),
        seed: cfg.seed,
        model_seed: model.seed,
        delta: cfg.delta,
        rows: data.len(),
        model: cfg.model,
        created_unix: now_unix(),
    };
    write_bytes(&out.join(DATASET), &bytes)?;
    write_json(&out.join(DATASET_META), &meta)?;
    write_resolved_config(cfg, out)?;
    log::info!("wrote {} rows in {:.1?}", data.len(), start.elapsed());
    Ok(())
}

/// Loads the dataset after checking it against its metadata and `cfg`.
fn load_dataset(cfg: &PipelineConfig, out: &Path) -> Result<(SeriesSet, String)> {
    let meta: DatasetMeta = read_json(&out.join(DATASET_META))?;
    let (x, hash) = read_dataset(&out.join(DATASET))?;
    if hash != meta.content_hash {
        return Err(CliError::Provenance(format!(
            "{} has hash {hash}, metadata records {}",
            DATASET, meta.content_hash
        )));
    }
    if meta.data_config_hash != cfg.data_hash() {
        return Err(CliError::Provenance(
            "dataset was generated with different model, delta, n_obs or seed settings".into(),
        ));
    }
    if x.ncols() != cfg.model.k || x.nrows() != meta.rows {
        return Err(CliError::Provenance(format!("dataset shape {:?} does not match metadata", x.dim())));
    }
    Ok((SeriesSet::new(cfg.delta, x)?, hash))
}

pub fn fit_models(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let (series, data_hash) = load_dataset(cfg, out)?;
    let map = reduced_map(cfg)?;
    let start = Instant::now();
    let data = NarmaxData::from_observations(&map, &series)?;
    let report = fit(&cfg.narmax, &data, &cfg.fit_options())?;
    log::info!(
        "NARMAX fit: {} iterations, converged {}, loglik {:.6e} ({:.1?})",
        report.iterations,
        report.converged,
        report.loglik,
        start.elapsed()
    );
    let doc = ParamsDocument::new(
        cfg.narmax,
        &report.params,
        ParamsMeta { delta: cfg.delta, seed: cfg.seed, data_hash: data_hash.clone() },
    );
    write_json(&out.join(NARMAX_PARAMS), &doc)?;
    write_json(
        &out.join(NARMAX_FIT),
        &NarmaxFitArtifact { config_hash: cfg.hash(), data_hash: data_hash.clone(), report },
    )?;

    let pa = polyar::fit_polyar(&series, cfg.model.forcing, cfg.polyar.degree)?;
    let mut warnings = Vec::new();
    if !(pa.phi.abs() < 1.0) {
        warnings.push(format!("phi = {} is not stationary", pa.phi));
    }
    log::info!("POLYAR fit: phi {:.4}, sigma {:.4}", pa.phi, pa.sigma);
    write_json(&out.join(POLYAR_PARAMS), &pa)?;
    write_json(
        &out.join(POLYAR_FIT),
        &PolyarFitArtifact {
            config_hash: cfg.hash(),
            data_hash,
            degree: cfg.polyar.degree,
            eta_variance: (pa.phi.abs() < 1.0).then(|| pa.sigma * pa.sigma / (1.0 - pa.phi * pa.phi)),
            warnings,
        },
    )?;
    write_resolved_config(cfg, out)
}

struct Fitted {
    series: SeriesSet,
    data_hash: String,
    narmax: NarmaxModel,
    polyar: PolyarParams,
}

fn load_fitted(cfg: &PipelineConfig, out: &Path) -> Result<Fitted> {
    let (series, data_hash) = load_dataset(cfg, out)?;
    let doc: ParamsDocument = read_json(&out.join(NARMAX_PARAMS))?;
    let pa: PolyarParams = read_json(&out.join(POLYAR_PARAMS))?;
    let pfit: PolyarFitArtifact = read_json(&out.join(POLYAR_FIT))?;
    if doc.meta.data_hash != data_hash || pfit.data_hash != data_hash {
        return Err(CliError::Provenance("parameters were fitted on a different dataset".into()));
    }
    if doc.structure != cfg.narmax {
        return Err(CliError::Provenance(format!(
            "parameter file has structure {:?}, config has {:?}",
            doc.structure, cfg.narmax
        )));
    }
    if pa.poly.len() != cfg.polyar.degree + 1 || (pa.delta - cfg.delta).abs() > 1e-12 {
        return Err(CliError::Provenance("POLYAR parameters do not match the config".into()));
    }
    let params = doc.params()?;
    Ok(Fitted {
        series,
        data_hash,
        narmax: NarmaxModel { structure: cfg.narmax, params, map: reduced_map(cfg)? },
        polyar: pa,
    })
}

fn write_stats(out: &Path, name: &str, st: &SummaryStats, delta: f64) -> Result<()> {
    write_csv(&out.join(format!("pdf_{name}.csv")), &["x", "density"], st.pdf.x.iter().zip(&st.pdf.density).map(|(x, d)| vec![*x, *d]))?;
    write_csv(
        &out.join(format!("acf_{name}.csv")),
        &["lag", "value"],
        st.acf.iter().enumerate().map(|(l, v)| vec![l as f64 * delta, *v]),
    )?;
    if let Some(ccf) = &st.ccf {
        let half = (ccf.len() / 2) as f64;
        write_csv(
            &out.join(format!("ccf_{name}.csv")),
            &["lag", "value"],
            ccf.iter().enumerate().map(|(i, v)| vec![(i as f64 - half) * delta, *v]),
        )?;
    }
    Ok(())
}

pub fn validate(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let f = load_fitted(cfg, out)?;
    let n = f.series.len();
    let k = cfg.model.k;
    let c = cfg.validate.component;
    let partner = (c + 1) % k;
    let m = &f.narmax;
    let h = m.structure.history_len();
    let x = &f.series.x;
    let start = Instant::now();
    let hist = History::from_observations(&m.structure, &m.params, &m.map, x.slice(s![..h, ..]))?;
    let nx = narmax::simulate(&m.structure, &m.params, &m.map, &hist, n, cfg.stream_seed(streams::NARMAX_RUN))?.x;
    let init = PolyarInit::from_observations(&f.polyar, cfg.model.forcing, x.slice(s![..2, ..]))?;
    let px = polyar::simulate_polyar(&f.polyar, cfg.model.forcing, &init, n, cfg.stream_seed(streams::POLYAR_RUN))?.x;
    log::info!("simulated both reduced models for {n} rows in {:.1?}", start.elapsed());

    let opts = SummaryOptions { ks_every: cfg.validate.ks_every, ..SummaryOptions::for_horizon(cfg.validate.acf_horizon, cfg.delta) };
    let truth = x.column(c).to_vec();
    let summary = |a: &Array2<f64>, reference: Option<&[f64]>| -> Result<SummaryStats> {
        let (u, v) = (a.column(c).to_vec(), a.column(partner).to_vec());
        Ok(stats::summarize(&u, Some(&v), reference, &opts)?)
    };
    let mut rows = Vec::new();
    for (name, data, reference) in [("full", x, None), ("polyar", &px, Some(truth.as_slice())), ("narmax", &nx, Some(truth.as_slice()))] {
        let st = summary(data, reference)?;
        write_stats(out, name, &st, cfg.delta)?;
        log::info!("{name}: mean {:.4}, std {:.4}, KS {:?}", st.mean, st.std, st.ks);
        rows.push(SummaryRow { model: name.into(), mean: st.mean, std: st.std, ks: st.ks });
    }
    write_json(
        &out.join(SUMMARY_TABLE),
        &SummaryTable { config_hash: cfg.hash(), data_hash: f.data_hash, delta: cfg.delta, component: c + 1, rows },
    )
}

pub fn run_forecasts(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let f = load_fitted(cfg, out)?;
    let fc = &cfg.forecast;
    let start = Instant::now();
    let truth = cfg.l96(streams::TRUTH_SEGMENTS);
    log::info!("integrating {} truth segments of {} time units", fc.n_segments, fc.horizon);
    let segments = forecast::truth_segments(&truth, fc.n_segments, fc.horizon, cfg.delta, fc.chains, cfg.n0() - 1)?;
    log::info!("truth segments ready in {:.1?}", start.elapsed());
    let clim = forecast::climatology(f.series.x.view());
    let pm = PolyarModel { params: f.polyar.clone(), forcing: cfg.model.forcing };
    let models: [(&str, &dyn ForecastModel); 2] = [("narmax", &f.narmax), ("polyar", &pm)];
    let mut runs = Vec::new();
    for (name, model) in models {
        for &n_ens in &fc.ensembles {
            let fcfg = ForecastConfig {
                n_segments: fc.n_segments,
                horizon: fc.horizon,
                n_ens,
                n0: cfg.n0(),
                seed: cfg.stream_seed(streams::ENSEMBLES),
            };
            let score = forecast::run_forecast(model, &segments, cfg.delta, &fcfg, &clim)?;
            let file = format!("forecast_{name}_ens{n_ens}.csv");
            write_csv(
                &out.join(&file),
                &["lead", "rmse", "ancr"],
                (0..score.lead.len()).map(|i| vec![score.lead[i], score.rmse[i], score.ancr[i]]),
            )?;
            let crossing = score.ancr_crossing(0.6);
            log::info!("{name} N_ens = {n_ens}: ANCR 0.6 crossing {crossing:?}");
            runs.push(ForecastRun {
                model: name.into(),
                n_ens,
                file,
                ancr_06_crossing: crossing,
                excluded_members: score.excluded_members,
            });
        }
    }
    write_json(
        &out.join(FORECAST_SUMMARY),
        &ForecastSummary {
            config_hash: cfg.hash(),
            data_hash: f.data_hash,
            n_segments: fc.n_segments,
            horizon: fc.horizon,
            n0: cfg.n0(),
            runs,
        },
    )
}

/// All stages for both sampling intervals, each in `out/delta_<delta>`.
pub fn repro_paper(base: Option<&PipelineConfig>, scale: Scale, seed: Option<u64>, out: &Path) -> Result<()> {
    for delta in [0.01, 0.05] {
        let mut cfg = PipelineConfig::reference(delta, scale);
        if let Some(b) = base {
            cfg.model = b.model;
            cfg.scheme = b.scheme;
            cfg.polyar = b.polyar;
            cfg.fit = b.fit;
            cfg.validate = b.validate;
            cfg.seed = b.seed;
            cfg.forecast.horizon = b.forecast.horizon;
            cfg.forecast.ensembles = b.forecast.ensembles.clone();
            cfg.forecast.chains = b.forecast.chains;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let dir: PathBuf = out.join(format!("delta_{delta}"));
        cfg.out_dir = dir.clone();
        cfg.validate()?;
        log::info!("delta = {delta}: writing to {}", dir.display());
        simulate(&cfg, &dir)?;
        fit_models(&cfg, &dir)?;
        validate(&cfg, &dir)?;
        run_forecasts(&cfg, &dir)?;
    }
    Ok(())
}
