use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interaction matrix of the three-species site, row-major.
pub const KAPPA_3: [f64; 9] = [1.2, -0.1, 0.0, 0.2, 1.2, 0.0, 0.1, 0.1, 1.0];

/// Interaction matrix of the five-species site, row-major.
pub const KAPPA_5: [f64; 25] = [
    1.2, -0.1, 0.0, 0.0, -0.1, //
    0.2, 1.2, 0.0, 0.0, -0.1, //
    0.0, 0.2, 1.2, -0.1, 0.0, //
    0.0, 0.0, 0.1, 1.2, 0.0, //
    0.1, 0.1, 0.0, 0.0, 1.2,
];

/// Constants of the normalized controlled logistic SDE
///
/// ```text
/// dX = X . diag[(r - u - kappa X) dt + sigma dW],   X(0) = X0
/// ```
///
/// together with the time mesh (`steps` = M uniform steps over `horizon`)
/// and the Monte-Carlo sample count used for cost estimates.
///
/// The on-disk form is a flat TOML table whose keys are the field names;
/// `kappa` is a row-major array of length `d * d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub r: Vec<f64>,
    pub kappa: Vec<f64>,
    pub sigma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub x_desired: Vec<f64>,
    pub horizon: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub steps: usize,
    pub samples: usize,
}

impl ModelConfig {
    /// Single species: r=2, kappa=1.2, X_d=1, T=2, alpha=0.01, beta=0.1,
    /// sigma=0.1, M=50, K=100, quotas in [0.5, 1].
    pub fn single_species() -> Self {
        Self {
            d: 1,
            r: vec![2.0],
            kappa: vec![1.2],
            sigma: vec![0.1],
            alpha: vec![0.01],
            beta: 0.1,
            x_desired: vec![1.0],
            horizon: 2.0,
            u_min: 0.5,
            u_max: 1.0,
            steps: 50,
            samples: 100,
        }
    }

    /// Single species with unit self-interaction, the reference problem
    /// for lifting a scalar policy through an interaction matrix.
    pub fn unit_species() -> Self {
        Self {
            kappa: vec![1.0],
            ..Self::single_species()
        }
    }

    pub fn three_species() -> Self {
        Self::multi_species(3, KAPPA_3.to_vec())
    }

    pub fn five_species() -> Self {
        Self::multi_species(5, KAPPA_5.to_vec())
    }

    /// `d` species sharing the single-species constants, with the given
    /// interaction matrix and target `X_d = 1`.
    pub fn multi_species(d: usize, kappa: Vec<f64>) -> Self {
        let base = Self::single_species();
        Self {
            d,
            r: vec![base.r[0]; d],
            kappa,
            sigma: vec![base.sigma[0]; d],
            alpha: vec![base.alpha[0]; d],
            x_desired: vec![1.0; d],
            ..base
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "single" | "1d" => Some(Self::single_species()),
            "unit" => Some(Self::unit_species()),
            "three" | "3d" => Some(Self::three_species()),
            "five" | "5d" => Some(Self::five_species()),
            _ => None,
        }
    }

    /// Time step `T / M`.
    pub fn h(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.h()
    }

    pub fn kappa_row(&self, i: usize) -> &[f64] {
        &self.kappa[i * self.d..(i + 1) * self.d]
    }

    /// Writes `kappa * x` into `out`.
    pub fn kappa_times(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.kappa_row(i).iter().zip(x).map(|(k, xj)| k * xj).sum();
        }
    }

    pub fn with_steps(&self, steps: usize) -> Self {
        Self {
            steps,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        for (name, len, want) in [
            ("r", self.r.len(), d),
            ("kappa", self.kappa.len(), d * d),
            ("sigma", self.sigma.len(), d),
            ("alpha", self.alpha.len(), d),
            ("x_desired", self.x_desired.len(), d),
        ] {
            if len != want {
                return Err(Error::Config(format!(
                    "{name} has {len} entries, expected {want}"
                )));
            }
        }
        let all_finite = self
            .r
            .iter()
            .chain(&self.kappa)
            .chain(&self.sigma)
            .chain(&self.alpha)
            .chain(&self.x_desired)
            .chain([&self.beta, &self.horizon, &self.u_min, &self.u_max])
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Config("non-finite constant".into()));
        }
        if self.steps == 0 || self.samples == 0 {
            return Err(Error::Config("steps and samples must be at least 1".into()));
        }
        if self.horizon <= 0.0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(self.u_min > 0.0 && self.u_min <= self.u_max) {
            return Err(Error::Config("need 0 < u_min <= u_max".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::Config("beta must be nonnegative".into()));
        }
        if self.sigma.iter().any(|&s| s < 0.0) {
            return Err(Error::Config("sigma entries must be nonnegative".into()));
        }
        if (0..d).any(|i| self.kappa[i * d + i] <= 0.0) {
            return Err(Error::Config("kappa diagonal must be positive".into()));
        }
        if self.r.iter().chain(&self.x_desired).any(|&v| v <= 0.0) {
            return Err(Error::Config("r and x_desired must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
