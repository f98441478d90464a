//! Pipeline configuration, read from TOML.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use narmax_closure::lorenz96::L96Config;
use narmax_closure::narmax::{FitOptions, NarmaxStructure};
use narmax_closure::reduction::Scheme;
use narmax_closure::seed;
use serde::{Deserialize, Serialize};

use crate::artifacts::sha256_hex;
use crate::error::CliError;

/// Seed paths below the master seed, one per random stream.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const TRUTH_SEGMENTS: u64 = 2;
    pub const NARMAX_RUN: u64 = 3;
    pub const POLYAR_RUN: u64 = 4;
    pub const ENSEMBLES: u64 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    /// `N = 10^5`, 500 forecast segments.
    Desk,
    /// `N = 5 * 10^5`, 10000 forecast segments.
    Paper,
}

impl Scale {
    pub fn n_obs(self) -> usize {
        match self {
            Scale::Desk => 100_000,
            Scale::Paper => 500_000,
        }
    }

    pub fn n_segments(self) -> usize {
        match self {
            Scale::Desk => 500,
            Scale::Paper => 10_000,
        }
    }
}

/// Two-scale model parameters; the initial-condition seed comes from the
/// master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub k: usize,
    pub j: usize,
    pub forcing: f64,
    pub eps: f64,
    pub h_x: f64,
    pub h_y: f64,
    pub dt: f64,
    pub spinup: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = L96Config::default();
        Self { k: d.k, j: d.j, forcing: d.forcing, eps: d.eps, h_x: d.h_x, h_y: d.h_y, dt: d.dt, spinup: d.spinup }
    }
}

impl ModelSection {
    pub fn l96(&self, seed: u64) -> L96Config {
        L96Config {
            k: self.k,
            j: self.j,
            forcing: self.forcing,
            eps: self.eps,
            h_x: self.h_x,
            h_y: self.h_y,
            dt: self.dt,
            spinup: self.spinup,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolyarSection {
    pub degree: usize,
}

impl Default for PolyarSection {
    fn default() -> Self {
        Self { degree: narmax_closure::polyar::DEFAULT_DEGREE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = FitOptions::default();
        Self { tolerance: d.tolerance, max_iters: d.max_iters }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    /// ACF/CCF horizon in time units.
    pub acf_horizon: f64,
    /// Component summarized (0-based); the CCF partner is the next one.
    pub component: usize,
    /// KS thinning.
    pub ks_every: usize,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self { acf_horizon: 5.0, component: 0, ks_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    pub n_segments: usize,
    pub horizon: f64,
    pub ensembles: Vec<usize>,
    /// Independent full-model runs the truth segments are cut from.
    pub chains: usize,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self { n_segments: 500, horizon: 10.0, ensembles: vec![1, 5, 20], chains: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub delta: f64,
    pub n_obs: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub model: ModelSection,
    pub narmax: NarmaxStructure,
    #[serde(default)]
    pub polyar: PolyarSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub forecast: ForecastSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// The settings that determine the dataset.
#[derive(Serialize)]
struct DataSection<'a> {
    seed: u64,
    delta: f64,
    n_obs: usize,
    model: &'a ModelSection,
}

impl PipelineConfig {
    /// The structures used for the two sampling intervals of the reference
    /// experiments.
    pub fn reference(delta: f64, scale: Scale) -> Self {
        let narmax = if (delta - 0.01).abs() < 1e-12 {
            NarmaxStructure::new(1, 2, 0, 1, 1, 0)
        } else {
            NarmaxStructure::new(1, 1, 1, 0, 3, 1)
        };
        Self {
            seed: 0,
            delta,
            n_obs: scale.n_obs(),
            out_dir: default_out_dir(),
            scheme: Scheme::Rk4,
            model: ModelSection::default(),
            narmax,
            polyar: PolyarSection::default(),
            fit: FitSection::default(),
            validate: ValidateSection::default(),
            forecast: ForecastSection { n_segments: scale.n_segments(), ..ForecastSection::default() },
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_scale(&mut self, scale: Scale) {
        self.n_obs = scale.n_obs();
        self.forecast.n_segments = scale.n_segments();
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.model.l96(0).validate()?;
        if !(self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        let ratio = self.delta / self.model.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return bad(format!("delta = {} is not a multiple of model.dt = {}", self.delta, self.model.dt));
        }
        if self.n_obs < 2 {
            return bad(format!("n_obs must be >= 2, got {}", self.n_obs));
        }
        if self.n_obs <= self.narmax.history_len() + self.narmax.n_coeffs() {
            return bad(format!("n_obs = {} too small for the narmax structure", self.n_obs));
        }
        if self.polyar.degree == 0 {
            return bad("polyar.degree must be >= 1".into());
        }
        if !(self.fit.tolerance > 0.0) || self.fit.max_iters == 0 {
            return bad("fit.tolerance and fit.max_iters must be positive".into());
        }
        let v = &self.validate;
        if !(v.acf_horizon > 0.0) || v.ks_every == 0 {
            return bad("validate.acf_horizon and validate.ks_every must be positive".into());
        }
        if v.component >= self.model.k {
            return bad(format!("validate.component {} out of range for k = {}", v.component, self.model.k));
        }
        let f = &self.forecast;
        if f.n_segments == 0 || f.chains == 0 {
            return bad("forecast.n_segments and forecast.chains must be positive".into());
        }
        if f.ensembles.is_empty() || f.ensembles.contains(&0) {
            return bad("forecast.ensembles must list positive sizes".into());
        }
        let steps = f.horizon / self.delta;
        if !(steps >= 1.0) || (steps - steps.round()).abs() > 1e-9 * steps {
            return bad(format!("forecast.horizon = {} is not a multiple of delta", f.horizon));
        }
        if steps.round() as usize <= self.n0() {
            return bad("forecast.horizon shorter than the initialization window".into());
        }
        Ok(())
    }

    /// Rows of observations imposed on every forecast.
    pub fn n0(&self) -> usize {
        self.narmax.history_len().max(2)
    }

    pub fn l96(&self, stream: u64) -> L96Config {
        self.model.l96(seed::derive(self.seed, &[stream]))
    }

    pub fn stream_seed(&self, stream: u64) -> u64 {
        seed::derive(self.seed, &[stream])
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { tolerance: self.fit.tolerance, max_iters: self.fit.max_iters, init: None }
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        let c = Self { out_dir: PathBuf::new(), ..self.clone() };
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn data_hash(&self) -> String {
        let d = DataSection { seed: self.seed, delta: self.delta, n_obs: self.n_obs, model: &self.model };
        sha256_hex(serde_json::to_string(&d).expect("config serializes").as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
