//! Monte Carlo sweeps over one scenario parameter, with CSV and PNG output.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{channel_statistics, sample_scenario, ChannelStatistics};
use crate::config::{db_to_linear, ScenarioConfig};
use crate::error::{Error, Result};
use crate::par::{map_ordered, ExecMode};
use crate::sca::{log_denominators, solve_mmf, solve_mmf_from, ScaResult, ScaTrace};
use crate::schemes::Scheme;

/// Parameter swept by an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVar {
    /// Per-LEO power in dB.
    #[serde(rename = "P_l_dB")]
    PlDb,
    /// GEO power in dB.
    #[serde(rename = "P_g_dB")]
    PgDb,
    /// Number of LUs, spread evenly over the LEOs.
    K,
    /// Number of LEOs, with the LUs spread evenly over them.
    M,
    /// Phase-error variance in deg^2, applied to every link.
    #[serde(rename = "sigma_e_deg")]
    SigmaEDeg,
}

impl SweepVar {
    pub const ALL: [SweepVar; 5] = [SweepVar::PlDb, SweepVar::PgDb, SweepVar::K, SweepVar::M, SweepVar::SigmaEDeg];

    pub fn name(self) -> &'static str {
        match self {
            SweepVar::PlDb => "P_l_dB",
            SweepVar::PgDb => "P_g_dB",
            SweepVar::K => "K",
            SweepVar::M => "M",
            SweepVar::SigmaEDeg => "sigma_e_deg",
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut cfg = base.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} must be a non-negative integer, got {v}", self.name())))
            }
        };
        match self {
            SweepVar::PlDb => cfg.leo_power = db_to_linear(value),
            SweepVar::PgDb => cfg.geo_power = db_to_linear(value),
            SweepVar::K => {
                cfg.num_lu = count(value)?;
                cfg.group_sizes = ScenarioConfig::even_groups(cfg.num_lu, cfg.num_leo);
            }
            SweepVar::M => {
                cfg.num_leo = count(value)?;
                cfg.group_sizes = ScenarioConfig::even_groups(cfg.num_lu, cfg.num_leo);
            }
            SweepVar::SigmaEDeg => {
                let s = value * (std::f64::consts::PI / 180.0).powi(2);
                cfg.sigma2_e_g = s;
                cfg.sigma2_e_l = s;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepVar::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep variable `{s}`")))
    }
}

/// `start:step:stop`, inclusive of `stop` up to rounding.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("grid `{s}` is not start:step:stop"));
    let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
    match parts[..] {
        [v] => Ok(vec![v]),
        [start, step, stop] => {
            if !(step > 0.0) || stop < start {
                return Err(bad());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    /// `None` runs the base configuration as a single grid point.
    pub var: Option<SweepVar>,
    pub values: Vec<f64>,
    pub realizations: usize,
    pub schemes: Vec<Scheme>,
    pub base: ScenarioConfig,
    pub seed: u64,
    pub exec: ExecMode,
    /// Warm-start each scheme from its restriction and keep the better run.
    pub nested: bool,
    /// Keep every SCA trace in the result.
    pub keep_traces: bool,
}

impl SweepSpec {
    pub fn single(base: ScenarioConfig, schemes: Vec<Scheme>, realizations: usize) -> Self {
        let seed = base.seed;
        SweepSpec {
            var: None,
            values: vec![0.0],
            realizations,
            schemes,
            base,
            seed,
            exec: ExecMode::Parallel,
            nested: true,
            keep_traces: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        if self.realizations == 0 {
            return Err(Error::InvalidConfig("at least one realization is required".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("no schemes selected".into()));
        }
        self.base.validate()?;
        for &v in &self.values {
            self.config_at(v)?;
        }
        Ok(())
    }

    pub fn config_at(&self, value: f64) -> Result<ScenarioConfig> {
        match self.var {
            Some(var) => var.apply(&self.base, value),
            None => Ok(self.base.clone()),
        }
    }

    pub fn var_name(&self) -> &'static str {
        self.var.map_or("none", SweepVar::name)
    }
}

/// Independent RNG for realization `r` and a given purpose; the same for
/// every scheme and grid point.
pub fn realization_rng(seed: u64, r: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((r << 8) | purpose);
    rng
}

const CHANNEL_STREAM: u64 = 0;
const EXTRACTION_STREAM: u64 = 1;

/// Channel statistics of realization `r` under `cfg`.
pub fn realization_statistics(cfg: &ScenarioConfig, seed: u64, r: u64) -> Result<ChannelStatistics> {
    let mut rng = realization_rng(seed, r, CHANNEL_STREAM);
    let (_, est) = sample_scenario(cfg, &mut rng);
    channel_statistics(&est, cfg.sigma2_e_g, cfg.sigma2_e_l)
}

/// Solves every scheme on the same statistics. With `nested`, each scheme
/// whose restriction is also requested is additionally started from the
/// restriction's precoders and the better of the two runs is kept.
pub fn solve_schemes(
    stats: &ChannelStatistics,
    cfg: &ScenarioConfig,
    schemes: &[Scheme],
    nested: bool,
    seed: u64,
    r: u64,
) -> Vec<(Scheme, Result<ScaResult>)> {
    let mut order: Vec<Scheme> = schemes.to_vec();
    order.sort_by_key(|s| std::cmp::Reverse(*s));
    order.dedup();
    let mut done: Vec<(Scheme, Result<ScaResult>)> = Vec::new();
    for scheme in order {
        let mask = scheme.mask();
        let mut rng = realization_rng(seed, r, EXTRACTION_STREAM + 1 + scheme as u64);
        let mut res = solve_mmf(stats, cfg, mask, &mut rng);
        let warm = scheme
            .restriction()
            .filter(|_| nested)
            .and_then(|sub| done.iter().find(|(s, _)| *s == sub))
            .and_then(|(_, r)| r.as_ref().ok());
        if let Some(prev) = warm {
            let f0 = prev.precoders.covariates();
            let warm_res = log_denominators(stats, &f0, cfg, mask)
                .and_then(|xi0| solve_mmf_from(stats, cfg, mask, f0, xi0, &mut rng));
            res = match (res, warm_res) {
                (Ok(a), Ok(b)) => Ok(if b.mmf() > a.mmf() { b } else { a }),
                (Err(_), Ok(b)) => Ok(b),
                (a, Err(_)) => a,
            };
        }
        done.push((scheme, res));
    }
    schemes
        .iter()
        .map(|s| {
            let i = done.iter().position(|(d, _)| d == s).expect("solved above");
            match &done[i].1 {
                Ok(r) => (*s, Ok(r.clone())),
                Err(e) => (*s, Err(Error::Solver(e.to_string()))),
            }
        })
        .collect()
}

/// Outcome of one scheme on one realization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub grid_index: usize,
    pub value: f64,
    pub realization: usize,
    pub scheme: Scheme,
    pub mmf: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_gap: f64,
    pub beta_escalated: bool,
    pub error: Option<String>,
    pub trace: Option<ScaTrace>,
}

impl RunRecord {
    pub fn id(&self) -> String {
        format!("{}_{}_r{}", self.scheme.name(), self.grid_index, self.realization)
    }
}

/// Aggregate over realizations for one grid point and scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub scheme: Scheme,
    /// MMF of every successful realization, in realization order.
    pub mmf: Vec<f64>,
    pub iterations: Vec<usize>,
    pub n_fail: usize,
    pub n_unconverged: usize,
}

impl SweepPoint {
    pub fn n_ok(&self) -> usize {
        self.mmf.len()
    }

    pub fn mean(&self) -> f64 {
        if self.mmf.is_empty() {
            f64::NAN
        } else {
            self.mmf.iter().sum::<f64>() / self.mmf.len() as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        let n = self.mmf.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean();
        let var = self.mmf.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    }

    pub fn mean_iters(&self) -> f64 {
        if self.iterations.is_empty() {
            f64::NAN
        } else {
            self.iterations.iter().sum::<usize>() as f64 / self.iterations.len() as f64
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub var: String,
    pub points: Vec<SweepPoint>,
    pub runs: Vec<RunRecord>,
}

impl SweepResult {
    pub fn point(&self, value: f64, scheme: Scheme) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.value == value && p.scheme == scheme)
    }

    /// Runs that errored or stopped before converging.
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some() || !r.converged).count()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for p in &self.points {
            wr.write_record([
                self.var.clone(),
                p.value.to_string(),
                p.scheme.name().to_string(),
                p.mean().to_string(),
                p.stderr().to_string(),
                p.n_ok().to_string(),
                p.n_fail.to_string(),
                p.mean_iters().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub const CSV_HEADER: [&str; 8] = ["sweep_var", "value", "scheme", "mean_mmf", "stderr", "n_ok", "n_fail", "mean_iters"];

/// One parsed row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CsvRow {
    pub sweep_var: String,
    pub value: f64,
    pub scheme: Scheme,
    pub mean_mmf: f64,
    pub stderr: f64,
    pub n_ok: usize,
    pub n_fail: usize,
    pub mean_iters: f64,
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<CsvRow>> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<std::result::Result<Vec<CsvRow>, _>>()?)
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let configs: Vec<ScenarioConfig> = spec.values.iter().map(|&v| spec.config_at(v)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> =
        (0..spec.values.len()).flat_map(|g| (0..spec.realizations).map(move |r| (g, r))).collect();
    let per_job = map_ordered(spec.exec, jobs, |(g, r)| {
        let cfg = &configs[g];
        let value = spec.values[g];
        let record = |scheme: Scheme, res: Result<ScaResult>| match res {
            Ok(s) => RunRecord {
                grid_index: g,
                value,
                realization: r,
                scheme,
                mmf: Some(s.mmf()),
                iterations: s.iterations,
                converged: s.converged,
                max_gap: s.max_gap,
                beta_escalated: s.trace.beta_escalated(),
                error: None,
                trace: spec.keep_traces.then_some(s.trace),
            },
            Err(e) => RunRecord {
                grid_index: g,
                value,
                realization: r,
                scheme,
                mmf: None,
                iterations: 0,
                converged: false,
                max_gap: f64::NAN,
                beta_escalated: false,
                error: Some(e.to_string()),
                trace: None,
            },
        };
        match realization_statistics(cfg, spec.seed, r as u64) {
            Ok(stats) => solve_schemes(&stats, cfg, &spec.schemes, spec.nested, spec.seed, r as u64)
                .into_iter()
                .map(|(s, res)| record(s, res))
                .collect::<Vec<_>>(),
            Err(e) => spec.schemes.iter().map(|&s| record(s, Err(Error::Degenerate(e.to_string())))).collect(),
        }
    });
    let runs: Vec<RunRecord> = per_job.into_iter().flatten().collect();
    let mut points = Vec::new();
    for (g, &value) in spec.values.iter().enumerate() {
        for &scheme in &spec.schemes {
            let mut p = SweepPoint { value, scheme, mmf: vec![], iterations: vec![], n_fail: 0, n_unconverged: 0 };
            for run in runs.iter().filter(|x| x.grid_index == g && x.scheme == scheme) {
                match run.mmf {
                    Some(v) if v.is_finite() => {
                        p.mmf.push(v);
                        p.iterations.push(run.iterations);
                        p.n_unconverged += usize::from(!run.converged);
                    }
                    _ => p.n_fail += 1,
                }
            }
            points.push(p);
        }
    }
    Ok(SweepResult { var: spec.var_name().to_string(), points, runs })
}

// ---------------------------------------------------------------------------
// Plot

const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189], [255, 127, 14], [23, 190, 207]];

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        for (ox, oy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x + ox, y + oy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Renders mean MMF against the swept value, one colored line per scheme
/// with +-1 standard-error bars, as a PNG.
pub fn render_plot(result: &SweepResult, width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 40i64;
    let finite: Vec<&SweepPoint> = result.points.iter().filter(|p| p.mean().is_finite()).collect();
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &finite {
        xmin = xmin.min(p.value);
        xmax = xmax.max(p.value);
        ymin = ymin.min(p.mean() - p.stderr());
        ymax = ymax.max(p.mean() + p.stderr());
    }
    if finite.is_empty() {
        return img;
    }
    if xmax <= xmin {
        xmin -= 1.0;
        xmax += 1.0;
    }
    if ymax <= ymin {
        ymin -= 1.0;
        ymax += 1.0;
    }
    let (w, h) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    let px = |x: f64| margin + ((x - xmin) / (xmax - xmin) * w as f64).round() as i64;
    let py = |y: f64| margin + h - ((y - ymin) / (ymax - ymin) * h as f64).round() as i64;
    let axis = Rgb([0, 0, 0]);
    draw_line(&mut img, (margin, margin + h), (margin + w, margin + h), axis);
    draw_line(&mut img, (margin, margin), (margin, margin + h), axis);

    let mut schemes: Vec<Scheme> = finite.iter().map(|p| p.scheme).collect();
    schemes.dedup();
    schemes.sort();
    schemes.dedup();
    for (i, scheme) in schemes.iter().enumerate() {
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        let mut pts: Vec<&&SweepPoint> = finite.iter().filter(|p| p.scheme == *scheme).collect();
        pts.sort_by(|a, b| a.value.total_cmp(&b.value));
        for pair in pts.windows(2) {
            draw_line(&mut img, (px(pair[0].value), py(pair[0].mean())), (px(pair[1].value), py(pair[1].mean())), color);
        }
        for p in pts {
            let x = px(p.value);
            let (lo, hi) = (py(p.mean() - p.stderr()), py(p.mean() + p.stderr()));
            draw_line(&mut img, (x, lo), (x, hi), color);
            draw_line(&mut img, (x - 4, lo), (x + 4, lo), color);
            draw_line(&mut img, (x - 4, hi), (x + 4, hi), color);
            for d in -3..=3 {
                draw_line(&mut img, (x - 3, py(p.mean()) + d), (x + 3, py(p.mean()) + d), color);
            }
        }
    }
    img
}

pub fn emit_plot(result: &SweepResult, path: &Path) -> Result<()> {
    render_plot(result, 800, 600).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0:5:20").unwrap(), vec![0.0, 5.0, 10.0, 15.0, 20.0]);
        assert_eq!(parse_grid("3").unwrap(), vec![3.0]);
        assert_eq!(parse_grid("0:0.1:0.3").unwrap().len(), 4);
        assert!(parse_grid("1:0:2").is_err());
        assert!(parse_grid("a:b").is_err());
    }

    #[test]
    fn sweep_vars_apply() {
        let base = ScenarioConfig::default();
        let c = SweepVar::K.apply(&base, 5.0).unwrap();
        assert_eq!(c.group_sizes, vec![3, 2]);
        let c = SweepVar::PlDb.apply(&base, 20.0).unwrap();
        assert!((c.leo_power - 100.0).abs() < 1e-9);
        let c = SweepVar::SigmaEDeg.apply(&base, 5.0).unwrap();
        assert!((c.sigma2_e_g - 5.0 * (std::f64::consts::PI / 180.0).powi(2)).abs() < 1e-15);
        assert!(SweepVar::K.apply(&base, 2.5).is_err());
        assert_eq!("p_l_db".parse::<SweepVar>().unwrap(), SweepVar::PlDb);
    }
}
