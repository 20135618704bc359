//! Scenario parameters and the derived network layout.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schemes::Scheme;

pub const BOLTZMANN: f64 = 1.38e-23;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// All scalar parameters of one scenario. Field names in the TOML file follow
/// the serde renames below; every field is optional there and defaults to
/// [`ScenarioConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of LEO satellites.
    #[serde(rename = "M")]
    pub num_leo: usize,
    /// Number of GEO users.
    #[serde(rename = "N")]
    pub num_gu: usize,
    /// Number of LEO users.
    #[serde(rename = "K")]
    pub num_lu: usize,
    /// LEO users per LEO satellite, in satellite order.
    pub group_sizes: Vec<usize>,
    #[serde(rename = "N_tg")]
    pub geo_antennas: usize,
    #[serde(rename = "N_tl")]
    pub leo_antennas: usize,
    /// GEO power budget, linear (noise power is 1).
    #[serde(rename = "P_g")]
    pub geo_power: f64,
    /// Per-LEO power budget, linear.
    #[serde(rename = "P_l")]
    pub leo_power: f64,
    /// Phase-error variance on GEO-transmitted links, rad^2.
    pub sigma2_e_g: f64,
    /// Phase-error variance on LEO-transmitted links, rad^2.
    pub sigma2_e_l: f64,
    pub carrier_freq: f64,
    pub bandwidth: f64,
    #[serde(rename = "ut_gain_dBi")]
    pub ut_gain_dbi: f64,
    #[serde(rename = "geo_gain_max_dBi")]
    pub geo_gain_max_dbi: f64,
    #[serde(rename = "leo_gain_dBi")]
    pub leo_gain_dbi: f64,
    pub geo_height_m: f64,
    pub leo_height_m: f64,
    #[serde(rename = "theta3dB_geo_deg")]
    pub theta3db_geo_deg: f64,
    #[serde(rename = "theta3dB_leo_deg")]
    pub theta3db_leo_deg: f64,
    #[serde(rename = "rician_factor_dB")]
    pub rician_factor_db: f64,
    #[serde(rename = "noise_temp_K")]
    pub noise_temp_k: f64,
    /// Mean of ln(chi_dB) for the rain fade.
    #[serde(rename = "rain_mu_dB")]
    pub rain_mu_db: f64,
    /// Standard deviation of ln(chi_dB).
    #[serde(rename = "rain_sigma_dB")]
    pub rain_sigma_db: f64,
    /// Draw the rain fade per antenna feed instead of once per terminal.
    pub rain_per_feed: bool,
    /// Receiver noise power after normalization.
    pub noise_power: f64,
    /// SCA stopping tolerance on the penalized objective.
    pub tau: f64,
    /// Initial rank-one penalty factor.
    pub beta: f64,
    pub beta_max: f64,
    /// Escalate beta when the max relative rank gap has not shrunk by
    /// `beta_shrink` (fraction) over `beta_window` iterations.
    pub beta_window: usize,
    pub beta_shrink: f64,
    /// Target max relative rank gap for the escalation schedule.
    pub rank_tol: f64,
    pub max_iters: usize,
    /// Relative rank gap below which a block is factorized directly.
    pub gap_tol: f64,
    pub randomizations: usize,
    pub solver_tol: f64,
    pub solver_max_iter: u32,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_leo: 2,
            num_gu: 6,
            num_lu: 4,
            group_sizes: vec![2, 2],
            geo_antennas: 4,
            leo_antennas: 3,
            geo_power: db_to_linear(15.0),
            leo_power: db_to_linear(10.0),
            sigma2_e_g: 0.0,
            sigma2_e_l: 0.0,
            carrier_freq: 20e9,
            bandwidth: 500e6,
            ut_gain_dbi: 39.7,
            geo_gain_max_dbi: 58.5,
            leo_gain_dbi: 30.5,
            geo_height_m: 35_786e3,
            leo_height_m: 600e3,
            theta3db_geo_deg: 0.4412,
            theta3db_leo_deg: 4.4127,
            rician_factor_db: 10.0,
            noise_temp_k: 290.0,
            rain_mu_db: -3.125,
            rain_sigma_db: 1.591,
            rain_per_feed: false,
            noise_power: 1.0,
            tau: 1e-5,
            beta: 0.1,
            beta_max: 1e4,
            beta_window: 5,
            beta_shrink: 0.1,
            rank_tol: 1e-3,
            max_iters: 200,
            gap_tol: 1e-4,
            randomizations: 100,
            solver_tol: 1e-8,
            solver_max_iter: 200,
            scheme: Scheme::DRsma,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Splits `num_lu` users as evenly as possible over `num_leo` satellites,
    /// earlier satellites taking the remainder.
    pub fn even_groups(num_lu: usize, num_leo: usize) -> Vec<usize> {
        if num_leo == 0 {
            return Vec::new();
        }
        (0..num_leo)
            .map(|m| num_lu / num_leo + usize::from(m < num_lu % num_leo))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.group_sizes.len() != self.num_leo {
            return bad(format!(
                "group_sizes has {} entries but M = {}",
                self.group_sizes.len(),
                self.num_leo
            ));
        }
        if self.group_sizes.iter().sum::<usize>() != self.num_lu {
            return bad(format!("group_sizes {:?} do not sum to K = {}", self.group_sizes, self.num_lu));
        }
        if self.num_gu == 0 && self.num_lu == 0 {
            return bad("no users (N = K = 0)".into());
        }
        if self.geo_antennas == 0 || (self.num_leo > 0 && self.leo_antennas == 0) {
            return bad("antenna counts must be positive".into());
        }
        let positive = [
            ("P_g", self.geo_power),
            ("carrier_freq", self.carrier_freq),
            ("bandwidth", self.bandwidth),
            ("geo_height_m", self.geo_height_m),
            ("leo_height_m", self.leo_height_m),
            ("theta3dB_geo_deg", self.theta3db_geo_deg),
            ("theta3dB_leo_deg", self.theta3db_leo_deg),
            ("noise_temp_K", self.noise_temp_k),
            ("noise_power", self.noise_power),
            ("tau", self.tau),
            ("beta_max", self.beta_max),
            ("solver_tol", self.solver_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.num_leo > 0 && !(self.leo_power.is_finite() && self.leo_power > 0.0) {
            return bad(format!("P_l must be positive, got {}", self.leo_power));
        }
        for (name, v) in [("sigma2_e_g", self.sigma2_e_g), ("sigma2_e_l", self.sigma2_e_l), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.rain_sigma_db >= 0.0) || !self.rain_mu_db.is_finite() {
            return bad("rain fade parameters must be finite with rain_sigma_dB >= 0".into());
        }
        if self.max_iters == 0 || self.beta_window == 0 {
            return bad("max_iters and beta_window must be positive".into());
        }
        if self.randomizations == 0 {
            return bad("randomizations must be positive".into());
        }
        Ok(())
    }

    pub fn layout(&self) -> NetworkLayout {
        NetworkLayout {
            num_gu: self.num_gu,
            group_sizes: self.group_sizes.clone(),
            geo_antennas: self.geo_antennas,
            leo_antennas: self.leo_antennas,
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    /// kTB, the thermal noise power the link budgets are normalized by.
    pub fn thermal_noise(&self) -> f64 {
        BOLTZMANN * self.noise_temp_k * self.bandwidth
    }

    pub fn rician_factor(&self) -> f64 {
        db_to_linear(self.rician_factor_db)
    }

    pub fn theta3db_geo(&self) -> f64 {
        self.theta3db_geo_deg.to_radians()
    }

    pub fn theta3db_leo(&self) -> f64 {
        self.theta3db_leo_deg.to_radians()
    }
}

/// User and antenna counts; LEO users are numbered consecutively, the first
/// `group_sizes[0]` belonging to LEO 0 and so on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub num_gu: usize,
    pub group_sizes: Vec<usize>,
    pub geo_antennas: usize,
    pub leo_antennas: usize,
}

impl NetworkLayout {
    pub fn num_leo(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn num_lu(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn group(&self, m: usize) -> Range<usize> {
        let start: usize = self.group_sizes[..m].iter().sum();
        start..start + self.group_sizes[m]
    }

    /// Serving LEO of LEO user `k`.
    pub fn leo_of(&self, k: usize) -> usize {
        let mut acc = 0;
        for (m, &g) in self.group_sizes.iter().enumerate() {
            acc += g;
            if k < acc {
                return m;
            }
        }
        panic!("LEO user {k} out of range (K = {acc})");
    }
}
