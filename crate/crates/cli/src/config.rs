//! Experiment configuration: a TOML file, with command-line flags layered
//! on top.

use std::path::{Path, PathBuf};

use mapa_core::datasets::{GeneratorName, SurrogateFitConfig};
use mapa_core::evaluation::{CountConfig, EvalConfig};
use mapa_core::inference::Method;
use mapa_core::prior_recovery::RecoveryConfig;
use mapa_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub datasets: Vec<GeneratorName>,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub split: [f64; 3],
    pub methods: Vec<Method>,
    pub s_grid: Vec<usize>,
    /// `k = round(frac · S)` for the MAPA family.
    pub k_fracs: Vec<f64>,
    pub restarts: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub val_every: usize,
    pub surrogate: SurrogateFitConfig,
    pub eval: EvalConfig,
    pub recovery: RecoveryConfig,
    pub count: CountSection,
    pub trends: TrendSection,
    pub non_ident: NonIdentSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs"),
            datasets: vec![GeneratorName::AbsValue],
            n: 2000,
            seeds: vec![0],
            split: [0.8, 0.1, 0.1],
            methods: vec![Method::Mapa, Method::Iwae, Method::Vae],
            s_grid: vec![1, 10, 50],
            k_fracs: vec![0.1],
            restarts: 3,
            epochs: 500,
            lr: 1e-3,
            batch_size: 100,
            hidden: vec![50, 50, 50],
            val_every: 1,
            surrogate: SurrogateFitConfig::default(),
            eval: EvalConfig::default(),
            recovery: RecoveryConfig::default(),
            count: CountSection::default(),
            trends: TrendSection::default(),
            non_ident: NonIdentSection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountSection {
    /// Dataset size for pass counting; the main `n` when absent.
    pub n: Option<usize>,
    #[serde(flatten)]
    pub passes: CountConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendSection {
    pub points: usize,
    pub grid: usize,
}

impl Default for TrendSection {
    fn default() -> Self {
        Self { points: 50, grid: 401 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonIdentSection {
    pub points: usize,
}

impl Default for NonIdentSection {
    fn default() -> Self {
        Self { points: 50 }
    }
}

/// Flag values that replace config entries when present.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub dataset: Option<GeneratorName>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub s: Option<usize>,
    pub k_frac: Option<f64>,
    pub epochs: Option<usize>,
    pub restarts: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.dataset {
            self.datasets = vec![v];
        }
        if let Some(v) = o.n {
            self.n = v;
        }
        if let Some(v) = o.seed {
            self.seeds = vec![v];
        }
        if let Some(v) = o.method {
            self.methods = vec![v];
        }
        if let Some(v) = o.s {
            self.s_grid = vec![v];
        }
        if let Some(v) = o.k_frac {
            self.k_fracs = vec![v];
        }
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if let Some(v) = o.restarts {
            self.restarts = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("datasets, seeds and methods must be non-empty".into()));
        }
        if self.n < 10 {
            return Err(Error::Config(format!("n must be at least 10, got {}", self.n)));
        }
        let total: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| *f <= 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be positive and sum to 1, got {:?}", self.split)));
        }
        if self.k_fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("k fractions must lie in [0, 1]".into()));
        }
        self.eval.validate()
    }

    /// `(S, k)` settings trained for a method.
    pub fn settings(&self, method: Method, n_train: usize) -> Vec<(usize, usize)> {
        match method {
            Method::Ae => vec![(0, 0)],
            Method::Vae => vec![(1, 0)],
            Method::Iwae => self.s_grid.iter().filter(|&&s| s > 0).map(|&s| (s, 0)).collect(),
            _ => {
                let mut out = Vec::new();
                for &s in &self.s_grid {
                    for &f in &self.k_fracs {
                        let k = mapa_core::inference::k_from_fraction(f, s, n_train);
                        if k + s > 0 && !(k == n_train && s > 0) && !out.contains(&(s, k)) {
                            out.push((s, k));
                        }
                    }
                }
                out
            }
        }
    }
}
