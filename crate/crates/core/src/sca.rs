//! Penalized successive convex approximation for the max-min fair rate
//! problem, and rank-one precoder extraction.
//!
//! Each iteration solves a convex subproblem in the lifted covariances
//! `F`: rate lower bounds `alpha ln2 <= eta - xi` with `A >= e^eta` as
//! exponential cones and `B <= e^xi` replaced by its tangent at the previous
//! `xi`, plus the linearized rank-one penalty
//! `beta * sum(tr F - v^H F v)` around the previous leading eigenvectors.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelStatistics;
use crate::config::ScenarioConfig;
use crate::conic::{ConicProgram, HermitianVar, LinExpr, SolveStatus, SolverSettings, VarId};
use crate::error::{Error, Result};
use crate::linalg::{e1, hermitian_eigen, leading_eigenpair, outer, quad_form, trace_re, CMat, CVec, C64};
use crate::rates::{
    approx_rates, assemble_segments, power_segments, Block, CommonRateSplit, CovariateSet, PowerSegments,
    PrecoderSet, RateFamily, RateReport,
};
use crate::schemes::{apply_mask, StreamMask};

/// Blocks whose trace is below this fraction of the satellite budget are
/// treated as switched off when measuring rank gaps.
const ACTIVE_TRACE_FRACTION: f64 = 1e-6;
/// Below this trace a block's leading eigenvector is taken as `e1`.
const ZERO_TRACE: f64 = 1e-9;

/// One value per user for each of the five rate families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Families<T> {
    pub gc: Vec<T>,
    pub gd: Vec<T>,
    pub sup: Vec<T>,
    pub sub: Vec<T>,
    pub p: Vec<T>,
}

impl<T> Default for Families<T> {
    fn default() -> Self {
        Families { gc: vec![], gd: vec![], sup: vec![], sub: vec![], p: vec![] }
    }
}

impl<T> Families<T> {
    pub fn get(&self, f: RateFamily) -> &Vec<T> {
        match f {
            RateFamily::GuCommon => &self.gc,
            RateFamily::GuDesignated => &self.gd,
            RateFamily::LuSuper => &self.sup,
            RateFamily::LuSub => &self.sub,
            RateFamily::LuPrivate => &self.p,
        }
    }

    pub fn get_mut(&mut self, f: RateFamily) -> &mut Vec<T> {
        match f {
            RateFamily::GuCommon => &mut self.gc,
            RateFamily::GuDesignated => &mut self.gd,
            RateFamily::LuSuper => &mut self.sup,
            RateFamily::LuSub => &mut self.sub,
            RateFamily::LuPrivate => &mut self.p,
        }
    }

    pub fn count(&self) -> usize {
        RateFamily::ALL.iter().map(|&f| self.get(f).len()).sum()
    }
}

/// Rate families that exist under `mask`.
pub fn family_active(mask: StreamMask, f: RateFamily) -> bool {
    match f {
        RateFamily::GuCommon | RateFamily::LuSuper => mask.enable_geo_common,
        RateFamily::LuSub => mask.enable_sub_common,
        RateFamily::GuDesignated | RateFamily::LuPrivate => true,
    }
}

/// Blocks that carry a variable under `mask`.
pub fn active_blocks(cfg: &ScenarioConfig, mask: StreamMask) -> Vec<Block> {
    let layout = cfg.layout();
    Block::all(&layout)
        .into_iter()
        .filter(|b| match b {
            Block::GeoCommon => mask.enable_geo_common,
            Block::SubCommon(m) => mask.enable_sub_common && layout.group_sizes[*m] > 0,
            _ => true,
        })
        .collect()
}

fn budget(cfg: &ScenarioConfig, b: Block) -> f64 {
    if b.is_geo() {
        cfg.geo_power
    } else {
        cfg.leo_power
    }
}

// ---------------------------------------------------------------------------
// Rank-one helpers

/// `tr F - lambda_max(F)`.
pub fn rank_one_gap(f: &CMat) -> f64 {
    if f.nrows() == 0 {
        return 0.0;
    }
    trace_re(f) - leading_eigenpair(f).0
}

/// `(tr F - lambda_max(F)) / tr F`, 0 for a zero block.
pub fn relative_rank_gap(f: &CMat) -> f64 {
    let tr = trace_re(f);
    if tr <= 0.0 {
        0.0
    } else {
        rank_one_gap(f) / tr
    }
}

/// Unit leading eigenvector, or `e1` for a (numerically) zero block.
pub fn leading_vector(f: &CMat) -> CVec {
    if trace_re(f) < ZERO_TRACE {
        e1(f.nrows())
    } else {
        leading_eigenpair(f).1
    }
}

pub type BlockVectors = HashMap<Block, CVec>;

pub fn leading_vectors(f: &CovariateSet, blocks: &[Block]) -> BlockVectors {
    blocks.iter().map(|&b| (b, leading_vector(f.block(b)))).collect()
}

/// `beta * sum over blocks of (tr F - v^H F v)`.
pub fn penalty(f: &CovariateSet, eigvecs: &BlockVectors, beta: f64) -> f64 {
    beta * eigvecs.iter().map(|(&b, v)| trace_re(f.block(b)) - quad_form(f.block(b), v)).sum::<f64>()
}

/// Largest relative rank gap over blocks carrying a meaningful share of
/// their satellite's power.
pub fn max_relative_gap(f: &CovariateSet, cfg: &ScenarioConfig, blocks: &[Block]) -> f64 {
    blocks
        .iter()
        .filter(|&&b| trace_re(f.block(b)) > ACTIVE_TRACE_FRACTION * budget(cfg, b))
        .map(|&b| relative_rank_gap(f.block(b)))
        .fold(0.0, f64::max)
}

/// Tangent of `e^xi` at `point`: `e^point (xi - point + 1)`, which never
/// exceeds `e^xi`.
pub fn taylor_upper(xi: LinExpr, point: f64) -> LinExpr {
    let s = point.exp();
    xi * s + LinExpr::constant(s * (1.0 - point))
}

// ---------------------------------------------------------------------------
// Initialization

fn dominant_direction(rows: &[&CVec]) -> Option<CVec> {
    let d = rows.first()?.len();
    let mut g = CMat::zeros(d, d);
    for h in rows {
        g += outer(h);
    }
    (trace_re(&g) > 0.0).then(|| leading_eigenpair(&g).1)
}

fn check_nonzero(what: &str, v: &CVec) -> Result<()> {
    if v.norm_squared() > 0.0 {
        Ok(())
    } else {
        Err(Error::Degenerate(format!("zero channel vector on {what}")))
    }
}

/// `ln B` of every active family at `f`.
pub fn log_denominators(stats: &ChannelStatistics, f: &CovariateSet, cfg: &ScenarioConfig, mask: StreamMask) -> Result<Families<f64>> {
    let seg = power_segments(stats, f)?;
    Ok(log_denominators_of(&seg, cfg.noise_power, mask))
}

fn log_denominators_of(seg: &PowerSegments, noise: f64, mask: StreamMask) -> Families<f64> {
    let mut out = Families::default();
    for fam in RateFamily::ALL {
        if family_active(mask, fam) {
            *out.get_mut(fam) = (0..fam.size(&seg.layout)).map(|i| seg.ratio(fam, i, noise).den.ln()).collect();
        }
    }
    out
}

/// MRT / dominant-direction starting point with equal power splits, and the
/// matching Taylor points `xi0 = ln B(F0)`.
pub fn initialize(stats: &ChannelStatistics, cfg: &ScenarioConfig, mask: StreamMask) -> Result<(CovariateSet, Families<f64>)> {
    let est = &stats.estimate;
    let layout = &est.layout;
    for (n, h) in est.h_g.iter().enumerate() {
        check_nonzero(&format!("GEO-GU {n}"), h)?;
    }
    for (k, h) in est.h_g2l.iter().enumerate() {
        check_nonzero(&format!("GEO-LU {k}"), h)?;
    }
    for k in 0..layout.num_lu() {
        check_nonzero(&format!("LEO-LU {k}"), &est.h_l[layout.leo_of(k)][k])?;
    }
    let mut p = PrecoderSet::zeros(layout);
    let geo_rows: Vec<&CVec> = est.h_g.iter().chain(&est.h_g2l).collect();
    let gu_rows: Vec<&CVec> = est.h_g.iter().collect();
    let geo_share = if mask.enable_geo_common { 0.5 } else { 1.0 };
    if mask.enable_geo_common {
        if let Some(w) = dominant_direction(&geo_rows) {
            p.w_c = w * C64::new((geo_share * cfg.geo_power).sqrt(), 0.0);
        }
    }
    if let Some(w) = dominant_direction(&gu_rows) {
        let share = if mask.enable_geo_common { 1.0 - geo_share } else { 1.0 };
        p.w_d = w * C64::new((share * cfg.geo_power).sqrt(), 0.0);
    }
    for m in 0..layout.num_leo() {
        let group = layout.group(m);
        if group.is_empty() {
            continue;
        }
        let sub_on = mask.enable_sub_common;
        if sub_on {
            let rows: Vec<&CVec> = group.clone().map(|k| &est.h_l[m][k]).collect();
            if let Some(v) = dominant_direction(&rows) {
                p.p_c[m] = v * C64::new((0.5 * cfg.leo_power).sqrt(), 0.0);
            }
        }
        let pool = if sub_on { 0.5 } else { 1.0 } * cfg.leo_power / group.len() as f64;
        for k in group {
            let h = &est.h_l[m][k];
            p.p_p[k] = h * C64::new(pool.sqrt() / h.norm(), 0.0);
        }
    }
    let mut f = p.covariates();
    apply_mask(mask, &mut f);
    let xi = log_denominators(stats, &f, cfg, mask)?;
    Ok((f, xi))
}

// ---------------------------------------------------------------------------
// Subproblem

/// Variable handles of one built subproblem.
#[derive(Debug, Clone)]
pub struct P4Vars {
    pub t: VarId,
    pub c_g: Vec<VarId>,
    pub c_sup: Vec<VarId>,
    pub c_sub: Vec<VarId>,
    pub alpha: Families<VarId>,
    /// `eta - xi0`.
    pub eta: Families<VarId>,
    /// `xi - xi0`.
    pub xi: Families<VarId>,
    /// Taylor points `xi0` the subproblem was built around.
    pub xi0: Families<f64>,
    pub blocks: Vec<(Block, HermitianVar)>,
    pub penalty: LinExpr,
}

#[derive(Debug, Clone)]
pub struct P4 {
    pub program: ConicProgram,
    pub vars: P4Vars,
}

fn sum_vars(v: &[VarId]) -> LinExpr {
    LinExpr::sum(v.iter().map(|&x| LinExpr::var(x)))
}

/// Builds the convex subproblem around the previous Taylor points `xi_prev`
/// and leading eigenvectors `eig_prev`.
pub fn build_p4(
    stats: &ChannelStatistics,
    cfg: &ScenarioConfig,
    mask: StreamMask,
    xi_prev: &Families<f64>,
    eig_prev: &BlockVectors,
    beta: f64,
) -> Result<P4> {
    let layout = stats.layout().clone();
    if layout != cfg.layout() {
        return Err(Error::Dimension("channel statistics do not match the configuration".into()));
    }
    let (n_gu, n_lu) = (layout.num_gu, layout.num_lu());
    let mut prog = ConicProgram::new();
    prog.settings = SolverSettings { tol: cfg.solver_tol, max_iter: cfg.solver_max_iter, ..SolverSettings::default() };

    let blocks = active_blocks(cfg, mask);
    let mut handles: Vec<(Block, HermitianVar)> = Vec::new();
    for &b in &blocks {
        let d = if b.is_geo() { layout.geo_antennas } else { layout.leo_antennas };
        handles.push((b, prog.add_hermitian_psd(&b.label(), d)?));
    }
    let lookup: HashMap<Block, HermitianVar> = handles.iter().cloned().collect();

    let t = prog.add_scalar("t")?;
    let mut c_g = Vec::new();
    let mut c_sup = Vec::new();
    let mut c_sub = Vec::new();
    if mask.enable_geo_common {
        for n in 0..n_gu {
            c_g.push(prog.add_nonneg(&format!("c_g{n}"))?);
        }
        for k in 0..n_lu {
            c_sup.push(prog.add_nonneg(&format!("c_sup{k}"))?);
        }
    }
    if mask.enable_sub_common {
        for k in 0..n_lu {
            c_sub.push(prog.add_nonneg(&format!("c_sub{k}"))?);
        }
    }

    let seg: PowerSegments<LinExpr> = assemble_segments(stats, |b, h| match lookup.get(&b) {
        Some(v) => v.inner(h),
        None => LinExpr::zero(),
    });

    let mut alpha = Families::default();
    let mut eta = Families::default();
    let mut xi = Families::default();
    for fam in RateFamily::ALL {
        if !family_active(mask, fam) {
            continue;
        }
        let points = xi_prev.get(fam);
        let size = fam.size(&layout);
        if points.len() != size {
            return Err(Error::Dimension(format!("Taylor points for family `{}`", fam.tag())));
        }
        for i in 0..size {
            let a = prog.add_scalar(&format!("alpha_{}{i}", fam.tag()))?;
            let e = prog.add_scalar(&format!("eta_{}{i}", fam.tag()))?;
            let x = prog.add_scalar(&format!("xi_{}{i}", fam.tag()))?;
            // `e` and `x` hold eta - xi0 and xi - xi0 so that both cone rows
            // are scaled by e^-xi0.
            let ratio = seg.ratio(fam, i, cfg.noise_power);
            let scale = (-points[i]).exp();
            prog.add_eq(LinExpr::term(a, std::f64::consts::LN_2), LinExpr::var(e) - LinExpr::var(x));
            prog.add_exp_ge(ratio.num * scale, LinExpr::var(e));
            prog.add_le(ratio.den * scale, taylor_upper(LinExpr::var(x), 0.0));
            alpha.get_mut(fam).push(a);
            eta.get_mut(fam).push(e);
            xi.get_mut(fam).push(x);
        }
    }

    let common_sum = sum_vars(&c_g) + sum_vars(&c_sup);
    for n in 0..n_gu {
        let cg = c_g.get(n).map_or(LinExpr::zero(), |&c| LinExpr::var(c));
        prog.add_le(LinExpr::var(t), cg + LinExpr::var(alpha.gd[n]));
        if mask.enable_geo_common {
            prog.add_le(common_sum.clone(), LinExpr::var(alpha.gc[n]));
        }
    }
    for k in 0..n_lu {
        let mut rhs = LinExpr::var(alpha.p[k]);
        if let Some(&c) = c_sup.get(k) {
            rhs += LinExpr::var(c);
        }
        if let Some(&c) = c_sub.get(k) {
            rhs += LinExpr::var(c);
        }
        prog.add_le(LinExpr::var(t), rhs);
        if mask.enable_geo_common {
            prog.add_le(common_sum.clone(), LinExpr::var(alpha.sup[k]));
        }
        if mask.enable_sub_common {
            let m = layout.leo_of(k);
            let group_sum = LinExpr::sum(layout.group(m).map(|i| LinExpr::var(c_sub[i])));
            prog.add_le(group_sum, LinExpr::var(alpha.sub[k]));
        }
    }

    let trace_of = |b: Block| lookup.get(&b).map_or(LinExpr::zero(), |v| v.trace());
    prog.add_le(trace_of(Block::GeoCommon) + trace_of(Block::GeoDesignated), LinExpr::constant(cfg.geo_power));
    for m in 0..layout.num_leo() {
        let mut power = trace_of(Block::SubCommon(m));
        for k in layout.group(m) {
            power += trace_of(Block::Private(k));
        }
        prog.add_le(power, LinExpr::constant(cfg.leo_power));
    }

    let mut pen = LinExpr::zero();
    for (b, v) in &handles {
        let u = eig_prev.get(b).cloned().unwrap_or_else(|| e1(v.dim));
        pen += v.trace() - v.quad(&u);
    }
    let pen = (pen * beta).compact();
    prog.maximize(LinExpr::var(t) - pen.clone());

    Ok(P4 { program: prog, vars: P4Vars { t, c_g, c_sup, c_sub, alpha, eta, xi, xi0: xi_prev.clone(), blocks: handles, penalty: pen } })
}

// ---------------------------------------------------------------------------
// Iteration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// `t - f_P`.
    pub objective: f64,
    pub penalty: f64,
    pub max_gap: f64,
    pub status: SolveStatus,
    pub seconds: f64,
    pub t: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaTrace {
    pub rows: Vec<TraceRow>,
}

impl ScaTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.status.has_solution()).map(|r| r.objective).collect()
    }

    /// Largest decrease of the objective between consecutive iterations.
    pub fn max_decrease(&self) -> f64 {
        self.objectives().windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }

    pub fn beta_escalated(&self) -> bool {
        self.rows.windows(2).any(|w| w[1].beta > w[0].beta)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "objective", "penalty", "max_gap", "status", "seconds", "t", "beta"])?;
        for r in &self.rows {
            wr.write_record([
                r.iteration.to_string(),
                format!("{:?}", r.objective),
                format!("{:?}", r.penalty),
                format!("{:?}", r.max_gap),
                r.status.to_string(),
                format!("{:.6}", r.seconds),
                format!("{:?}", r.t),
                format!("{:?}", r.beta),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackState {
    pub t: f64,
    pub alpha: Families<f64>,
    pub eta: Families<f64>,
    pub xi: Families<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaResult {
    pub covariates: CovariateSet,
    pub precoders: PrecoderSet,
    pub split: CommonRateSplit,
    pub report: RateReport,
    pub trace: ScaTrace,
    pub converged: bool,
    pub iterations: usize,
    pub final_beta: f64,
    /// Max relative rank gap of the final covariances.
    pub max_gap: f64,
    /// Whether any block needed Gaussian randomization.
    pub randomized: bool,
    pub slack: Option<SlackState>,
    pub mask: StreamMask,
    /// Solver diagnostic of the iteration that stopped the run early.
    pub failure: Option<String>,
}

impl ScaResult {
    pub fn mmf(&self) -> f64 {
        self.report.mmf
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn read_families(sol: &crate::conic::Solution, v: &Families<VarId>, shift: Option<&Families<f64>>) -> Families<f64> {
    let mut out = Families::default();
    for fam in RateFamily::ALL {
        let off = shift.map(|s| s.get(fam));
        *out.get_mut(fam) =
            v.get(fam).iter().enumerate().map(|(i, &id)| sol.value(id) + off.map_or(0.0, |o| o[i])).collect();
    }
    out
}

fn read_split(sol: &crate::conic::Solution, v: &P4Vars, cfg: &ScenarioConfig) -> CommonRateSplit {
    let layout = cfg.layout();
    let mut c = CommonRateSplit::zeros(&layout);
    for (dst, ids) in [(&mut c.c_g, &v.c_g), (&mut c.c_sup, &v.c_sup), (&mut c.c_sub, &v.c_sub)] {
        for (d, &id) in dst.iter_mut().zip(ids) {
            *d = sol.value(id).max(0.0);
        }
    }
    c
}

/// Static regularization levels tried in turn when a subproblem solve
/// fails numerically, or returns a point worse than the previous iterate
/// (which is feasible for the new subproblem).
const RETRY_STATIC_REG: [f64; 3] = [1e-8, 1e-6, 1e-5];
const FLOOR_SLACK: f64 = 1e-7;

fn solve_with_retries(program: &ConicProgram, floor: Option<f64>) -> crate::conic::Solution {
    let acceptable = |s: &crate::conic::Solution| {
        s.status.has_solution() && floor.is_none_or(|f| s.objective >= f - FLOOR_SLACK)
    };
    let mut best = program.solve();
    for reg in RETRY_STATIC_REG {
        if acceptable(&best) {
            break;
        }
        let mut p = program.clone();
        p.settings.static_reg = reg;
        let sol = p.solve();
        let improves = sol.status.has_solution() && (!best.status.has_solution() || sol.objective > best.objective);
        if improves || (best.status == SolveStatus::Error && sol.status != SolveStatus::Error) {
            best = sol;
        }
    }
    best
}

/// Runs the SCA from the standard initialization.
pub fn solve_mmf<R: Rng + ?Sized>(
    stats: &ChannelStatistics,
    cfg: &ScenarioConfig,
    mask: StreamMask,
    rng: &mut R,
) -> Result<ScaResult> {
    let (f0, xi0) = initialize(stats, cfg, mask)?;
    solve_mmf_from(stats, cfg, mask, f0, xi0, rng)
}

/// Runs the SCA from a given feasible starting point `(F0, xi0)`.
pub fn solve_mmf_from<R: Rng + ?Sized>(
    stats: &ChannelStatistics,
    cfg: &ScenarioConfig,
    mask: StreamMask,
    f0: CovariateSet,
    xi0: Families<f64>,
    rng: &mut R,
) -> Result<ScaResult> {
    let blocks = active_blocks(cfg, mask);
    let mut f = f0;
    apply_mask(mask, &mut f);
    let mut xi = xi0;
    let mut beta = cfg.beta;
    let mut prev_obj = 0.0;
    let mut trace = ScaTrace::default();
    let mut split = CommonRateSplit::zeros(&cfg.layout());
    let mut slack = None;
    let mut converged = false;
    let mut gaps: Vec<f64> = Vec::new();
    let mut last_escalation = 0;
    let mut failure = None;

    for iter in 1..=cfg.max_iters {
        let start = Instant::now();
        let eig = leading_vectors(&f, &blocks);
        let p4 = build_p4(stats, cfg, mask, &xi, &eig, beta)?;
        let sol = solve_with_retries(&p4.program, (iter > 1).then_some(prev_obj));
        if !sol.status.has_solution() {
            if iter == 1 && sol.status == SolveStatus::Infeasible {
                return Err(Error::InfeasibleStart(sol.diagnostic));
            }
            trace.rows.push(TraceRow {
                iteration: iter,
                objective: f64::NAN,
                penalty: f64::NAN,
                max_gap: f64::NAN,
                status: sol.status,
                seconds: start.elapsed().as_secs_f64(),
                t: f64::NAN,
                beta,
            });
            failure = Some(format!("iteration {iter}: {} {}", sol.status, sol.diagnostic));
            break;
        }
        let v = &p4.vars;
        let mut next = CovariateSet::zeros(&cfg.layout());
        for (b, h) in &v.blocks {
            *next.block_mut(*b) = sol.matrix(h);
        }
        f = next;
        xi = read_families(&sol, &v.xi, Some(&v.xi0));
        split = read_split(&sol, v, cfg);
        let t = sol.value(v.t);
        slack = Some(SlackState { t, alpha: read_families(&sol, &v.alpha, None), eta: read_families(&sol, &v.eta, Some(&v.xi0)), xi: xi.clone() });
        let obj = sol.objective;
        let gap = max_relative_gap(&f, cfg, &blocks);
        gaps.push(gap);
        trace.rows.push(TraceRow {
            iteration: iter,
            objective: obj,
            penalty: sol.eval(&v.penalty),
            max_gap: gap,
            status: sol.status,
            seconds: start.elapsed().as_secs_f64(),
            t,
            beta,
        });

        let stalled = (obj - prev_obj).abs() < cfg.tau;
        prev_obj = obj;
        let rank_ok = gap <= cfg.rank_tol;
        if stalled && (rank_ok || beta >= cfg.beta_max) {
            converged = true;
            break;
        }
        if !rank_ok && beta < cfg.beta_max {
            let w = cfg.beta_window;
            let slow = gaps.len() > w && iter - last_escalation >= w && gap > (1.0 - cfg.beta_shrink) * gaps[gaps.len() - 1 - w];
            if stalled || slow {
                beta = (2.0 * beta).min(cfg.beta_max);
                last_escalation = iter;
            }
        }
    }

    let iterations = trace.rows.len();
    let max_gap = max_relative_gap(&f, cfg, &blocks);
    let (precoders, randomized) = extract_precoders(&f, stats, cfg, mask, &split, rng)?;
    let report_raw = approx_rates(&power_segments(stats, &precoders.covariates())?, cfg.noise_power);
    let split = split.achievable_under(&report_raw, &cfg.layout());
    let mut report = report_raw;
    report.apply_split(&split);
    Ok(ScaResult {
        covariates: f,
        precoders,
        split,
        report,
        trace,
        converged,
        iterations,
        final_beta: beta,
        max_gap,
        randomized,
        slack,
        mask,
        failure,
    })
}

// ---------------------------------------------------------------------------
// Extraction

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    C64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
}

fn scale_to_budget(p: &mut PrecoderSet, cfg: &ScenarioConfig) {
    let layout = cfg.layout();
    let geo = p.geo_power();
    if geo > cfg.geo_power {
        let s = C64::new((cfg.geo_power / geo).sqrt(), 0.0);
        p.w_c *= s;
        p.w_d *= s;
    }
    for m in 0..layout.num_leo() {
        let pw = p.leo_power(&layout, m);
        if pw > cfg.leo_power {
            let s = C64::new((cfg.leo_power / pw).sqrt(), 0.0);
            p.p_c[m] *= s;
            for k in layout.group(m) {
                p.p_p[k] *= s;
            }
        }
    }
}

/// Score of a candidate: MMF of its approximate rates with `split` scaled
/// down to what the candidate can actually carry.
pub fn candidate_mmf(stats: &ChannelStatistics, cfg: &ScenarioConfig, p: &PrecoderSet, split: &CommonRateSplit) -> Result<f64> {
    let mut report = approx_rates(&power_segments(stats, &p.covariates())?, cfg.noise_power);
    let s = split.achievable_under(&report, &cfg.layout());
    report.apply_split(&s);
    Ok(report.mmf)
}

/// Rank-one factorization of every block; blocks whose relative rank gap
/// exceeds `gap_tol` go through Gaussian randomization, keeping the
/// candidate with the best MMF (first among equals). Returns the precoders
/// and whether randomization was used.
pub fn extract_precoders<R: Rng + ?Sized>(
    f: &CovariateSet,
    stats: &ChannelStatistics,
    cfg: &ScenarioConfig,
    mask: StreamMask,
    split: &CommonRateSplit,
    rng: &mut R,
) -> Result<(PrecoderSet, bool)> {
    let layout = cfg.layout();
    f.check_dims(&layout)?;
    let blocks = active_blocks(cfg, mask);
    let mut base = PrecoderSet::zeros(&layout);
    let mut loose: Vec<(Block, Vec<f64>, CMat)> = Vec::new();
    for &b in &blocks {
        let m = f.block(b);
        let tr = trace_re(m);
        if tr <= 0.0 {
            continue;
        }
        let (vals, vecs) = hermitian_eigen(m);
        let principal = vecs.column(0).into_owned() * C64::new(vals[0].max(0.0).sqrt(), 0.0);
        if relative_rank_gap(m) > cfg.gap_tol && tr > ACTIVE_TRACE_FRACTION * budget(cfg, b) {
            // The principal direction carrying the full trace is the first candidate.
            *base.vector_mut(b) = principal * C64::new((tr / vals[0].max(f64::MIN_POSITIVE)).sqrt(), 0.0);
            loose.push((b, vals, vecs));
        } else {
            *base.vector_mut(b) = principal;
        }
    }
    if loose.is_empty() {
        return Ok((base, false));
    }
    scale_to_budget(&mut base, cfg);
    let mut best = base.clone();
    let mut best_score = candidate_mmf(stats, cfg, &base, split)?;
    for _ in 0..cfg.randomizations {
        let mut cand = base.clone();
        for (b, vals, vecs) in &loose {
            let d = vals.len();
            let z = CVec::from_fn(d, |i, _| complex_gaussian(rng) * vals[i].max(0.0).sqrt());
            let mut x = vecs * z;
            let norm2 = x.norm_squared();
            if norm2 > 0.0 {
                let tr: f64 = vals.iter().map(|v| v.max(0.0)).sum();
                x *= C64::new((tr / norm2).sqrt(), 0.0);
            }
            *cand.vector_mut(*b) = x;
        }
        scale_to_budget(&mut cand, cfg);
        let score = candidate_mmf(stats, cfg, &cand, split)?;
        if score > best_score {
            best_score = score;
            best = cand;
        }
    }
    Ok((best, true))
}
