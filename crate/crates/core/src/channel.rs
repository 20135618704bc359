//! Channel model: placement geometry, GEO and LEO channel sampling, phase
//! errors and the second-order statistics seen by the optimizer.
//!
//! Geometry is planar. The GEO beam is centred at the origin and covers a
//! disc of radius `h_g tan(theta3dB_g)`; LEO `m` is centred on a ring of half
//! that radius at angle `2 pi m / M` with its own disc of radius
//! `h_l tan(theta3dB_l)`. A terminal at ground offset `r` from a satellite's
//! nadir sees it at off-axis angle `atan(r / h)` and slant range
//! `sqrt(h^2 + r^2)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{db_to_linear, NetworkLayout, ScenarioConfig};
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};

// ---------------------------------------------------------------------------
// Bessel functions and the GEO beam pattern

/// `J_n(x) / x^n` by its power series (valid for moderate |x|).
fn bessel_ratio_series(n: u32, x: f64) -> f64 {
    let q = -(x * x) / 4.0;
    let mut fact_n = 1.0;
    for i in 1..=n {
        fact_n *= i as f64;
    }
    let mut term = 1.0 / (fact_n * 2f64.powi(n as i32));
    let mut sum = term;
    for k in 1..200 {
        term *= q / (k as f64 * (n + k) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Hankel asymptotic expansion of `J_nu(x)` for large `x`.
fn bessel_asymptotic(nu: u32, x: f64) -> f64 {
    let mu = 4.0 * (nu as f64).powi(2);
    let omega = x - nu as f64 * PI / 2.0 - PI / 4.0;
    let (mut p, mut q) = (0.0, 0.0);
    let mut a = 1.0;
    let mut last = f64::INFINITY;
    for k in 0..30 {
        if k > 0 {
            let odd = (2 * k - 1) as f64;
            a *= (mu - odd * odd) / (k as f64 * 8.0 * x);
        }
        if a.abs() > last {
            break;
        }
        last = a.abs();
        let signed = if (k / 2) % 2 == 0 { a } else { -a };
        if k % 2 == 0 {
            p += signed;
        } else {
            q += signed;
        }
        if a.abs() < 1e-17 {
            break;
        }
    }
    (2.0 / (PI * x)).sqrt() * (p * omega.cos() - q * omega.sin())
}

/// Bessel function of the first kind `J_n(x)`.
pub fn bessel_j(n: u32, x: f64) -> f64 {
    let sign = if x < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
    let x = x.abs();
    if x < 12.0 {
        return sign * bessel_ratio_series(n, x) * x.powi(n as i32);
    }
    let j0 = bessel_asymptotic(0, x);
    if n == 0 {
        return sign * j0;
    }
    let mut jm1 = j0;
    let mut j = bessel_asymptotic(1, x);
    // Upward recurrence is stable while n < x.
    for k in 1..n {
        let next = 2.0 * k as f64 / x * j - jm1;
        jm1 = j;
        j = next;
    }
    sign * j
}

fn bessel_ratio(n: u32, x: f64) -> f64 {
    if x.abs() < 12.0 {
        bessel_ratio_series(n, x)
    } else {
        bessel_j(n, x) / x.powi(n as i32)
    }
}

/// Tapered multibeam gain `Gmax [J1(u)/(2u) + 36 J3(u)/u^3]^2` with
/// `u = 2.07123 sin(theta) / sin(theta3dB)`.
pub fn geo_beam_gain(theta: f64, theta3db: f64, gmax: f64) -> f64 {
    let u = 2.07123 * theta.sin() / theta3db.sin();
    let bracket = 0.5 * bessel_ratio(1, u) + 36.0 * bessel_ratio(3, u);
    gmax * bracket * bracket
}

// ---------------------------------------------------------------------------
// Geometry

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPath {
    pub distance_m: f64,
    pub off_axis_rad: f64,
}

impl LinkPath {
    pub fn from_offset(height: f64, ground_offset: f64) -> Self {
        Self { distance_m: height.hypot(ground_offset), off_axis_rad: (ground_offset / height).atan() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub gu_positions: Vec<[f64; 2]>,
    pub lu_positions: Vec<[f64; 2]>,
    pub leo_centers: Vec<[f64; 2]>,
    /// GEO to each GU.
    pub geo_gu: Vec<LinkPath>,
    /// GEO to each LU.
    pub geo_lu: Vec<LinkPath>,
    /// `[m][k]`: LEO `m` to every LU.
    pub leo_lu: Vec<Vec<LinkPath>>,
    /// `[m][n]`: LEO `m` to every GU.
    pub leo_gu: Vec<Vec<LinkPath>>,
}

pub fn geo_coverage_radius(cfg: &ScenarioConfig) -> f64 {
    cfg.geo_height_m * cfg.theta3db_geo().tan()
}

pub fn leo_coverage_radius(cfg: &ScenarioConfig) -> f64 {
    cfg.leo_height_m * cfg.theta3db_leo().tan()
}

pub fn leo_centers(cfg: &ScenarioConfig) -> Vec<[f64; 2]> {
    let ring = 0.5 * geo_coverage_radius(cfg);
    let m_total = cfg.num_leo as f64;
    (0..cfg.num_leo)
        .map(|m| {
            let a = 2.0 * PI * m as f64 / m_total;
            [ring * a.cos(), ring * a.sin()]
        })
        .collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn uniform_in_disc<R: Rng + ?Sized>(center: [f64; 2], radius: f64, rng: &mut R) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let a = 2.0 * PI * rng.random::<f64>();
    [center[0] + r * a.cos(), center[1] + r * a.sin()]
}

/// Link paths for terminals at given ground positions.
pub fn geometry_from_positions(
    cfg: &ScenarioConfig,
    gu_positions: Vec<[f64; 2]>,
    lu_positions: Vec<[f64; 2]>,
) -> LinkGeometry {
    let centers = leo_centers(cfg);
    let origin = [0.0, 0.0];
    let geo = |p: &[f64; 2]| LinkPath::from_offset(cfg.geo_height_m, dist(*p, origin));
    let leo = |c: [f64; 2], p: &[f64; 2]| LinkPath::from_offset(cfg.leo_height_m, dist(*p, c));
    LinkGeometry {
        geo_gu: gu_positions.iter().map(geo).collect(),
        geo_lu: lu_positions.iter().map(geo).collect(),
        leo_lu: centers.iter().map(|&c| lu_positions.iter().map(|p| leo(c, p)).collect()).collect(),
        leo_gu: centers.iter().map(|&c| gu_positions.iter().map(|p| leo(c, p)).collect()).collect(),
        gu_positions,
        lu_positions,
        leo_centers: centers,
    }
}

/// GUs uniform in the GEO coverage disc, each LEO's users uniform in its own.
pub fn sample_geometry<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> LinkGeometry {
    let rg = geo_coverage_radius(cfg);
    let rl = leo_coverage_radius(cfg);
    let centers = leo_centers(cfg);
    let gu: Vec<_> = (0..cfg.num_gu).map(|_| uniform_in_disc([0.0, 0.0], rg, rng)).collect();
    let mut lu = Vec::with_capacity(cfg.num_lu);
    for (m, &size) in cfg.group_sizes.iter().enumerate() {
        for _ in 0..size {
            lu.push(uniform_in_disc(centers[m], rl, rng));
        }
    }
    geometry_from_positions(cfg, gu, lu)
}

// ---------------------------------------------------------------------------
// Channel sampling

/// Estimated channels. LEO users are indexed globally (see
/// [`NetworkLayout::group`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    pub layout: NetworkLayout,
    /// GEO to GU `n`.
    pub h_g: Vec<CVec>,
    /// GEO to LU `k`.
    pub h_g2l: Vec<CVec>,
    /// `[m][k]`: LEO `m` to LU `k` (own users and cross links).
    pub h_l: Vec<Vec<CVec>>,
    /// `[m][n]`: LEO `m` to GU `n`.
    pub h_l2g: Vec<Vec<CVec>>,
}

fn random_phases<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| 2.0 * PI * rng.random::<f64>()).collect()
}

fn sample_rain_fade<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> f64 {
    let normal = Normal::new(cfg.rain_mu_db, cfg.rain_sigma_db).expect("validated rain parameters");
    loop {
        let chi_db = normal.sample(rng).exp();
        let chi = db_to_linear(chi_db);
        if chi_db > 0.0 && chi.is_finite() {
            return chi;
        }
    }
}

/// Free-space, noise-normalized GEO amplitude without rain fade.
pub fn geo_amplitude(cfg: &ScenarioConfig, path: &LinkPath) -> f64 {
    let gain = geo_beam_gain(path.off_axis_rad, cfg.theta3db_geo(), db_to_linear(cfg.geo_gain_max_dbi));
    let spreading = 4.0 * PI * path.distance_m / cfg.wavelength();
    (db_to_linear(cfg.ut_gain_dbi) * gain).sqrt() / (spreading * cfg.thermal_noise().sqrt())
}

/// Mean LEO channel power `gamma = Gr Gl / ((4 pi d / lambda)^2 kTB)`.
pub fn leo_gamma(cfg: &ScenarioConfig, path: &LinkPath) -> f64 {
    let spreading = 4.0 * PI * path.distance_m / cfg.wavelength();
    db_to_linear(cfg.ut_gain_dbi) * db_to_linear(cfg.leo_gain_dbi) / (spreading * spreading * cfg.thermal_noise())
}

fn geo_vector<R: Rng + ?Sized>(cfg: &ScenarioConfig, path: &LinkPath, rng: &mut R) -> CVec {
    let amp = geo_amplitude(cfg, path);
    let n = cfg.geo_antennas;
    let chi: Vec<f64> = if cfg.rain_per_feed {
        (0..n).map(|_| sample_rain_fade(cfg, rng)).collect()
    } else {
        vec![sample_rain_fade(cfg, rng); n]
    };
    let phases = random_phases(n, rng);
    CVec::from_fn(n, |i, _| C64::from_polar(amp / chi[i].sqrt(), -phases[i]))
}

/// Complex Rician gain with `E|g|^2 = gamma` and factor `kappa` (may be infinite).
pub fn sample_rician<R: Rng + ?Sized>(gamma: f64, kappa: f64, rng: &mut R) -> C64 {
    let los_fraction = if kappa.is_infinite() { 1.0 } else { kappa / (kappa + 1.0) };
    let mean = (los_fraction * gamma / 2.0).sqrt();
    let var = (1.0 - los_fraction) * gamma / 2.0;
    let normal = Normal::new(mean, var.sqrt()).expect("finite Rician parameters");
    C64::new(normal.sample(rng), normal.sample(rng))
}

fn leo_vector<R: Rng + ?Sized>(cfg: &ScenarioConfig, path: &LinkPath, rng: &mut R) -> CVec {
    let g = sample_rician(leo_gamma(cfg, path), cfg.rician_factor(), rng);
    let phases = random_phases(cfg.leo_antennas, rng);
    CVec::from_fn(cfg.leo_antennas, |i, _| g * C64::from_polar(1.0, -phases[i]))
}

/// GEO-to-GU and GEO-to-LU estimated channels.
pub fn sample_geo_channel<R: Rng + ?Sized>(
    geometry: &LinkGeometry,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> (Vec<CVec>, Vec<CVec>) {
    let g = geometry.geo_gu.iter().map(|p| geo_vector(cfg, p, rng)).collect();
    let g2l = geometry.geo_lu.iter().map(|p| geo_vector(cfg, p, rng)).collect();
    (g, g2l)
}

/// LEO-to-LU (`[m][k]`) and LEO-to-GU (`[m][n]`) estimated channels.
pub fn sample_leo_channel<R: Rng + ?Sized>(
    geometry: &LinkGeometry,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> (Vec<Vec<CVec>>, Vec<Vec<CVec>>) {
    let l = geometry.leo_lu.iter().map(|row| row.iter().map(|p| leo_vector(cfg, p, rng)).collect()).collect();
    let l2g = geometry.leo_gu.iter().map(|row| row.iter().map(|p| leo_vector(cfg, p, rng)).collect()).collect();
    (l, l2g)
}

pub fn sample_channel_estimate<R: Rng + ?Sized>(
    geometry: &LinkGeometry,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> ChannelEstimate {
    let (h_g, h_g2l) = sample_geo_channel(geometry, cfg, rng);
    let (h_l, h_l2g) = sample_leo_channel(geometry, cfg, rng);
    ChannelEstimate { layout: cfg.layout(), h_g, h_g2l, h_l, h_l2g }
}

/// Geometry followed by channels, from one RNG.
pub fn sample_scenario<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> (LinkGeometry, ChannelEstimate) {
    let geometry = sample_geometry(cfg, rng);
    let estimate = sample_channel_estimate(&geometry, cfg, rng);
    (geometry, estimate)
}

impl ChannelEstimate {
    pub fn validate(&self) -> Result<()> {
        let l = &self.layout;
        let check = |what: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::Dimension(format!("channel estimate: {what}")))
            }
        };
        check("GU count", self.h_g.len() == l.num_gu)?;
        check("LU count", self.h_g2l.len() == l.num_lu())?;
        check("LEO count", self.h_l.len() == l.num_leo() && self.h_l2g.len() == l.num_leo())?;
        check("GEO antennas", self.h_g.iter().chain(&self.h_g2l).all(|v| v.len() == l.geo_antennas))?;
        for m in 0..l.num_leo() {
            check("LEO-LU rows", self.h_l[m].len() == l.num_lu())?;
            check("LEO-GU rows", self.h_l2g[m].len() == l.num_gu)?;
            check(
                "LEO antennas",
                self.h_l[m].iter().chain(&self.h_l2g[m]).all(|v| v.len() == l.leo_antennas),
            )?;
        }
        Ok(())
    }

    fn map<F: FnMut(&CVec, bool) -> CVec>(&self, mut f: F) -> ChannelEstimate {
        ChannelEstimate {
            layout: self.layout.clone(),
            h_g: self.h_g.iter().map(|v| f(v, true)).collect(),
            h_g2l: self.h_g2l.iter().map(|v| f(v, true)).collect(),
            h_l: self.h_l.iter().map(|row| row.iter().map(|v| f(v, false)).collect()).collect(),
            h_l2g: self.h_l2g.iter().map(|row| row.iter().map(|v| f(v, false)).collect()).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Phase errors and second-order statistics

/// Correlation of the phase-error factor `e^{-j phi_e}` with
/// `phi_e ~ N(0, sigma2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCorrelation {
    /// `E{Phi Phi^H}`.
    pub x: CMat,
    /// `E{(Phi - 1)(Phi - 1)^H}`.
    pub x_res: CMat,
    pub sigma2: f64,
}

pub fn phase_error_correlation(sigma2: f64, dim: usize) -> Result<PhaseCorrelation> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidConfig(format!("phase-error variance must be non-negative, got {sigma2}")));
    }
    if dim == 0 {
        return Err(Error::Dimension("phase correlation of dimension 0".into()));
    }
    let off = (-sigma2).exp();
    let m = (-sigma2 / 2.0).exp();
    let x = CMat::from_fn(dim, dim, |i, j| C64::new(if i == j { 1.0 } else { off }, 0.0));
    let x_res =
        CMat::from_fn(dim, dim, |i, j| C64::new(if i == j { 2.0 * (1.0 - m) } else { (1.0 - m) * (1.0 - m) }, 0.0));
    Ok(PhaseCorrelation { x, x_res, sigma2 })
}

/// Actual channel `h = h_hat o e^{-j phi_e}`.
pub fn realize_phase_error<R: Rng + ?Sized>(h_hat: &CVec, sigma2: f64, rng: &mut R) -> CVec {
    if sigma2 == 0.0 {
        return h_hat.clone();
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).expect("non-negative variance");
    h_hat.map(|z| z * C64::from_polar(1.0, -normal.sample(rng)))
}

/// Actual channels for every link, GEO-transmitted links with `sigma2_g` and
/// LEO-transmitted links with `sigma2_l`.
pub fn realize_channels<R: Rng + ?Sized>(
    estimate: &ChannelEstimate,
    sigma2_g: f64,
    sigma2_l: f64,
    rng: &mut R,
) -> ChannelEstimate {
    estimate.map(|v, geo| realize_phase_error(v, if geo { sigma2_g } else { sigma2_l }, rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkStats {
    /// `E{h h^H}`.
    pub h: CMat,
    /// `E{h_res h_res^H}` with `h_res = h - h_hat`.
    pub h_res: CMat,
}

impl LinkStats {
    pub fn new(h_hat: &CVec, corr: &PhaseCorrelation) -> Self {
        let n = h_hat.len();
        let scale = |x: &CMat| CMat::from_fn(n, n, |i, j| h_hat[i] * x[(i, j)] * h_hat[j].conj());
        Self { h: scale(&corr.x), h_res: scale(&corr.x_res) }
    }
}

/// Second-order channel statistics for every link of one realization.
#[derive(Debug, Clone)]
pub struct ChannelStatistics {
    pub estimate: ChannelEstimate,
    pub sigma2_g: f64,
    pub sigma2_l: f64,
    pub g: Vec<LinkStats>,
    pub g2l: Vec<LinkStats>,
    /// `[m][k]`.
    pub l: Vec<Vec<LinkStats>>,
    /// `[m][n]`.
    pub l2g: Vec<Vec<LinkStats>>,
}

impl ChannelStatistics {
    pub fn layout(&self) -> &NetworkLayout {
        &self.estimate.layout
    }
}

pub fn channel_statistics(estimate: &ChannelEstimate, sigma2_g: f64, sigma2_l: f64) -> Result<ChannelStatistics> {
    estimate.validate()?;
    let layout = &estimate.layout;
    let cg = phase_error_correlation(sigma2_g, layout.geo_antennas)?;
    let cl = if layout.num_leo() > 0 {
        Some(phase_error_correlation(sigma2_l, layout.leo_antennas)?)
    } else {
        None
    };
    let geo = |v: &Vec<CVec>| v.iter().map(|h| LinkStats::new(h, &cg)).collect::<Vec<_>>();
    let leo = |rows: &Vec<Vec<CVec>>| {
        rows.iter()
            .map(|row| row.iter().map(|h| LinkStats::new(h, cl.as_ref().unwrap())).collect())
            .collect::<Vec<_>>()
    };
    Ok(ChannelStatistics {
        g: geo(&estimate.h_g),
        g2l: geo(&estimate.h_g2l),
        l: leo(&estimate.h_l),
        l2g: leo(&estimate.h_l2g),
        estimate: estimate.clone(),
        sigma2_g,
        sigma2_l,
    })
}
