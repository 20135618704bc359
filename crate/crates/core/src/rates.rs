//! Power segments, instantaneous SINRs and the deterministic ergodic-rate
//! approximations `R' = log2(E{num} / E{den})`.
//!
//! Segment assembly is written once, generically over the value type, so
//! the optimizer can build the same expressions over solver variables that
//! [`power_segments`] evaluates numerically.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelEstimate, ChannelStatistics};
use crate::config::NetworkLayout;
use crate::error::{Error, Result};
use crate::linalg::{inner_sq, outer, trace_product, trace_re, CMat, CVec};

/// One transmitted stream / covariance block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    GeoCommon,
    GeoDesignated,
    SubCommon(usize),
    Private(usize),
}

impl Block {
    /// All blocks in canonical order.
    pub fn all(layout: &NetworkLayout) -> Vec<Block> {
        let mut v = vec![Block::GeoCommon, Block::GeoDesignated];
        v.extend((0..layout.num_leo()).map(Block::SubCommon));
        v.extend((0..layout.num_lu()).map(Block::Private));
        v
    }

    pub fn is_geo(self) -> bool {
        matches!(self, Block::GeoCommon | Block::GeoDesignated)
    }

    pub fn label(self) -> String {
        match self {
            Block::GeoCommon => "F_gc".into(),
            Block::GeoDesignated => "F_gd".into(),
            Block::SubCommon(m) => format!("F_lc{m}"),
            Block::Private(k) => format!("F_lp{k}"),
        }
    }
}

/// Lifted precoders `F = w w^H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSet {
    pub geo_common: CMat,
    pub geo_designated: CMat,
    pub sub_common: Vec<CMat>,
    pub private: Vec<CMat>,
}

impl CovariateSet {
    pub fn zeros(layout: &NetworkLayout) -> Self {
        let g = || CMat::zeros(layout.geo_antennas, layout.geo_antennas);
        let l = || CMat::zeros(layout.leo_antennas, layout.leo_antennas);
        Self {
            geo_common: g(),
            geo_designated: g(),
            sub_common: (0..layout.num_leo()).map(|_| l()).collect(),
            private: (0..layout.num_lu()).map(|_| l()).collect(),
        }
    }

    pub fn block(&self, b: Block) -> &CMat {
        match b {
            Block::GeoCommon => &self.geo_common,
            Block::GeoDesignated => &self.geo_designated,
            Block::SubCommon(m) => &self.sub_common[m],
            Block::Private(k) => &self.private[k],
        }
    }

    pub fn block_mut(&mut self, b: Block) -> &mut CMat {
        match b {
            Block::GeoCommon => &mut self.geo_common,
            Block::GeoDesignated => &mut self.geo_designated,
            Block::SubCommon(m) => &mut self.sub_common[m],
            Block::Private(k) => &mut self.private[k],
        }
    }

    pub fn geo_power(&self) -> f64 {
        trace_re(&self.geo_common) + trace_re(&self.geo_designated)
    }

    pub fn leo_power(&self, layout: &NetworkLayout, m: usize) -> f64 {
        trace_re(&self.sub_common[m]) + layout.group(m).map(|k| trace_re(&self.private[k])).sum::<f64>()
    }

    pub fn check_dims(&self, layout: &NetworkLayout) -> Result<()> {
        let sq = |m: &CMat, d: usize| m.nrows() == d && m.ncols() == d;
        let ok = sq(&self.geo_common, layout.geo_antennas)
            && sq(&self.geo_designated, layout.geo_antennas)
            && self.sub_common.len() == layout.num_leo()
            && self.private.len() == layout.num_lu()
            && self.sub_common.iter().chain(&self.private).all(|m| sq(m, layout.leo_antennas));
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("covariance set does not match the network layout".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecoderSet {
    pub w_c: CVec,
    pub w_d: CVec,
    pub p_c: Vec<CVec>,
    pub p_p: Vec<CVec>,
}

impl PrecoderSet {
    pub fn zeros(layout: &NetworkLayout) -> Self {
        Self {
            w_c: CVec::zeros(layout.geo_antennas),
            w_d: CVec::zeros(layout.geo_antennas),
            p_c: (0..layout.num_leo()).map(|_| CVec::zeros(layout.leo_antennas)).collect(),
            p_p: (0..layout.num_lu()).map(|_| CVec::zeros(layout.leo_antennas)).collect(),
        }
    }

    pub fn vector(&self, b: Block) -> &CVec {
        match b {
            Block::GeoCommon => &self.w_c,
            Block::GeoDesignated => &self.w_d,
            Block::SubCommon(m) => &self.p_c[m],
            Block::Private(k) => &self.p_p[k],
        }
    }

    pub fn vector_mut(&mut self, b: Block) -> &mut CVec {
        match b {
            Block::GeoCommon => &mut self.w_c,
            Block::GeoDesignated => &mut self.w_d,
            Block::SubCommon(m) => &mut self.p_c[m],
            Block::Private(k) => &mut self.p_p[k],
        }
    }

    pub fn covariates(&self) -> CovariateSet {
        CovariateSet {
            geo_common: outer(&self.w_c),
            geo_designated: outer(&self.w_d),
            sub_common: self.p_c.iter().map(outer).collect(),
            private: self.p_p.iter().map(outer).collect(),
        }
    }

    pub fn geo_power(&self) -> f64 {
        self.w_c.norm_squared() + self.w_d.norm_squared()
    }

    pub fn leo_power(&self, layout: &NetworkLayout, m: usize) -> f64 {
        self.p_c[m].norm_squared() + layout.group(m).map(|k| self.p_p[k].norm_squared()).sum::<f64>()
    }
}

// ---------------------------------------------------------------------------
// Segments

/// Received power terms at one GEO user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuSegments<T> {
    pub common: T,
    pub common_res: T,
    pub designated: T,
    pub designated_res: T,
    /// LEO sub-common and private leakage.
    pub interference: T,
}

/// Received power terms at one LEO user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LuSegments<T> {
    /// GEO super-common stream.
    pub sup: T,
    pub sup_res: T,
    /// Own LEO's sub-common stream.
    pub sub: T,
    pub sub_res: T,
    pub private: T,
    pub private_res: T,
    /// Intra-LEO privates, other LEOs' streams and the GEO designated stream.
    pub interference: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSegments<T = f64> {
    pub layout: NetworkLayout,
    pub gu: Vec<GuSegments<T>>,
    pub lu: Vec<LuSegments<T>>,
}

/// Values that segments can be assembled over: plain numbers or affine
/// expressions in solver variables.
pub trait SegmentValue: Clone + Add<Output = Self> + From<f64> {}
impl<T: Clone + Add<Output = T> + From<f64>> SegmentValue for T {}

/// Builds every segment from `tr(block, H)`, which must return
/// `Re tr(H F_block)` in the caller's value type.
pub fn assemble_segments<T, F>(stats: &ChannelStatistics, mut tr: F) -> PowerSegments<T>
where
    T: SegmentValue,
    F: FnMut(Block, &CMat) -> T,
{
    let layout = stats.layout().clone();
    let gu = (0..layout.num_gu)
        .map(|n| {
            let mut interference = T::from(0.0);
            for m in 0..layout.num_leo() {
                let h = &stats.l2g[m][n].h;
                interference = interference + tr(Block::SubCommon(m), h);
                for k in layout.group(m) {
                    interference = interference + tr(Block::Private(k), h);
                }
            }
            GuSegments {
                common: tr(Block::GeoCommon, &stats.g[n].h),
                common_res: tr(Block::GeoCommon, &stats.g[n].h_res),
                designated: tr(Block::GeoDesignated, &stats.g[n].h),
                designated_res: tr(Block::GeoDesignated, &stats.g[n].h_res),
                interference,
            }
        })
        .collect();
    let lu = (0..layout.num_lu())
        .map(|k| {
            let m = layout.leo_of(k);
            let own = &stats.l[m][k];
            let mut interference = T::from(0.0);
            for i in layout.group(m).filter(|&i| i != k) {
                interference = interference + tr(Block::Private(i), &own.h);
            }
            for j in (0..layout.num_leo()).filter(|&j| j != m) {
                let h = &stats.l[j][k].h;
                interference = interference + tr(Block::SubCommon(j), h);
                for i in layout.group(j) {
                    interference = interference + tr(Block::Private(i), h);
                }
            }
            interference = interference + tr(Block::GeoDesignated, &stats.g2l[k].h);
            LuSegments {
                sup: tr(Block::GeoCommon, &stats.g2l[k].h),
                sup_res: tr(Block::GeoCommon, &stats.g2l[k].h_res),
                sub: tr(Block::SubCommon(m), &own.h),
                sub_res: tr(Block::SubCommon(m), &own.h_res),
                private: tr(Block::Private(k), &own.h),
                private_res: tr(Block::Private(k), &own.h_res),
                interference,
            }
        })
        .collect();
    PowerSegments { layout, gu, lu }
}

fn clamp_trace(x: f64) -> f64 {
    if x < 0.0 && x >= -1e-9 {
        0.0
    } else {
        x
    }
}

/// Numeric segments `S' = Re tr(H F)`, tiny negative round-off clamped to 0.
pub fn power_segments(stats: &ChannelStatistics, f: &CovariateSet) -> Result<PowerSegments> {
    f.check_dims(stats.layout())?;
    Ok(assemble_segments(stats, |b, h| clamp_trace(trace_product(h, f.block(b)))))
}

// ---------------------------------------------------------------------------
// Rate expressions

/// The five rate families, one lower-bound variable each per user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RateFamily {
    GuCommon,
    GuDesignated,
    LuSuper,
    LuSub,
    LuPrivate,
}

impl RateFamily {
    pub const ALL: [RateFamily; 5] =
        [RateFamily::GuCommon, RateFamily::GuDesignated, RateFamily::LuSuper, RateFamily::LuSub, RateFamily::LuPrivate];

    pub fn is_gu(self) -> bool {
        matches!(self, RateFamily::GuCommon | RateFamily::GuDesignated)
    }

    pub fn size(self, layout: &NetworkLayout) -> usize {
        if self.is_gu() {
            layout.num_gu
        } else {
            layout.num_lu()
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            RateFamily::GuCommon => "gc",
            RateFamily::GuDesignated => "gd",
            RateFamily::LuSuper => "sup",
            RateFamily::LuSub => "sub",
            RateFamily::LuPrivate => "p",
        }
    }
}

/// `R = log2(num / den)`; `num` is the `A` term, `den` the `B` term.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRatio<T> {
    pub num: T,
    pub den: T,
}

impl LogRatio<f64> {
    pub fn rate(&self) -> f64 {
        (self.num / self.den).log2()
    }
}

impl<T: SegmentValue> GuSegments<T> {
    pub fn common_ratio(&self, noise: f64) -> LogRatio<T> {
        let base = self.designated.clone() + self.interference.clone() + T::from(noise);
        LogRatio { num: self.common.clone() + base.clone(), den: self.common_res.clone() + base }
    }

    pub fn designated_ratio(&self, noise: f64) -> LogRatio<T> {
        let base = self.common_res.clone() + self.interference.clone() + T::from(noise);
        LogRatio { num: self.designated.clone() + base.clone(), den: self.designated_res.clone() + base }
    }
}

impl<T: SegmentValue> LuSegments<T> {
    pub fn super_ratio(&self, noise: f64) -> LogRatio<T> {
        let base = self.sub.clone() + self.private.clone() + self.interference.clone() + T::from(noise);
        LogRatio { num: self.sup.clone() + base.clone(), den: self.sup_res.clone() + base }
    }

    pub fn sub_ratio(&self, noise: f64) -> LogRatio<T> {
        let base = self.sup_res.clone() + self.private.clone() + self.interference.clone() + T::from(noise);
        LogRatio { num: self.sub.clone() + base.clone(), den: self.sub_res.clone() + base }
    }

    /// Private stream after both SIC layers: the numerator keeps the residual
    /// of the sub-common stream, matching the sub-common denominator.
    pub fn private_ratio(&self, noise: f64) -> LogRatio<T> {
        let base = self.sup_res.clone() + self.sub_res.clone() + self.interference.clone() + T::from(noise);
        LogRatio { num: self.private.clone() + base.clone(), den: self.private_res.clone() + base }
    }
}

impl<T: SegmentValue> PowerSegments<T> {
    pub fn ratio(&self, family: RateFamily, i: usize, noise: f64) -> LogRatio<T> {
        match family {
            RateFamily::GuCommon => self.gu[i].common_ratio(noise),
            RateFamily::GuDesignated => self.gu[i].designated_ratio(noise),
            RateFamily::LuSuper => self.lu[i].super_ratio(noise),
            RateFamily::LuSub => self.lu[i].sub_ratio(noise),
            RateFamily::LuPrivate => self.lu[i].private_ratio(noise),
        }
    }
}

/// Non-negative portions of the shared streams assigned to each user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonRateSplit {
    pub c_g: Vec<f64>,
    pub c_sup: Vec<f64>,
    pub c_sub: Vec<f64>,
}

impl CommonRateSplit {
    pub fn zeros(layout: &NetworkLayout) -> Self {
        Self { c_g: vec![0.0; layout.num_gu], c_sup: vec![0.0; layout.num_lu()], c_sub: vec![0.0; layout.num_lu()] }
    }

    pub fn super_common_sum(&self) -> f64 {
        self.c_g.iter().sum::<f64>() + self.c_sup.iter().sum::<f64>()
    }

    pub fn sub_common_sum(&self, layout: &NetworkLayout, m: usize) -> f64 {
        layout.group(m).map(|k| self.c_sub[k]).sum()
    }

    /// Scales the super-common portions, and each LEO's sub-common portions,
    /// down just enough to be decodable under `report`'s rates.
    pub fn achievable_under(&self, report: &RateReport, layout: &NetworkLayout) -> CommonRateSplit {
        let mut out = self.clone();
        let scale = |sum: f64, cap: f64| if sum > cap { (cap.max(0.0) / sum).min(1.0) } else { 1.0 };
        let s = scale(self.super_common_sum(), report.common_rate);
        out.c_g.iter_mut().chain(out.c_sup.iter_mut()).for_each(|c| *c = (*c * s).max(0.0));
        for m in 0..layout.num_leo() {
            let s = scale(self.sub_common_sum(layout, m), report.sub_common_rate[m]);
            for k in layout.group(m) {
                out.c_sub[k] = (out.c_sub[k] * s).max(0.0);
            }
        }
        out
    }
}

/// Stream rates, common and sub-common rates, per-user totals and MMF value,
/// all in bits/s/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub group_sizes: Vec<usize>,
    pub gu_common: Vec<f64>,
    pub gu_designated: Vec<f64>,
    pub lu_super: Vec<f64>,
    pub lu_sub: Vec<f64>,
    pub lu_private: Vec<f64>,
    pub common_rate: f64,
    pub sub_common_rate: Vec<f64>,
    pub gu_total: Vec<f64>,
    pub lu_total: Vec<f64>,
    pub mmf: f64,
}

impl RateReport {
    /// Fills derived fields from stream rates with an all-zero split.
    pub fn from_stream_rates(
        layout: &NetworkLayout,
        gu_common: Vec<f64>,
        gu_designated: Vec<f64>,
        lu_super: Vec<f64>,
        lu_sub: Vec<f64>,
        lu_private: Vec<f64>,
    ) -> Self {
        let mut r = RateReport {
            group_sizes: layout.group_sizes.clone(),
            gu_common,
            gu_designated,
            lu_super,
            lu_sub,
            lu_private,
            common_rate: 0.0,
            sub_common_rate: Vec::new(),
            gu_total: Vec::new(),
            lu_total: Vec::new(),
            mmf: 0.0,
        };
        r.common_rate = common_rate(&r);
        r.sub_common_rate = (0..layout.num_leo()).map(|m| subcommon_rate(&r, m)).collect();
        r.apply_split(&CommonRateSplit::zeros(layout));
        r
    }

    pub fn layout_groups(&self) -> NetworkLayout {
        NetworkLayout {
            num_gu: self.gu_common.len(),
            group_sizes: self.group_sizes.clone(),
            geo_antennas: 0,
            leo_antennas: 0,
        }
    }

    pub fn apply_split(&mut self, c: &CommonRateSplit) {
        let (gu, lu, mmf) = total_rates(c, self);
        self.gu_total = gu;
        self.lu_total = lu;
        self.mmf = mmf;
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["mmf".to_string(), "common_rate".to_string()];
        h.extend((0..self.sub_common_rate.len()).map(|m| format!("sub_common_rate_{m}")));
        for n in 0..self.gu_common.len() {
            h.extend(["common", "designated", "total"].map(|s| format!("gu{n}_{s}")));
        }
        for k in 0..self.lu_super.len() {
            h.extend(["super", "sub", "private", "total"].map(|s| format!("lu{k}_{s}")));
        }
        h
    }

    /// Values in [`RateReport::csv_header`] order: MMF, common rate, per-LEO
    /// sub-common rates, then per GU (common, designated, total) and per LU
    /// (super, sub, private, total).
    pub fn csv_record(&self) -> Vec<String> {
        let mut v = vec![self.mmf, self.common_rate];
        v.extend(&self.sub_common_rate);
        for n in 0..self.gu_common.len() {
            v.extend([self.gu_common[n], self.gu_designated[n], self.gu_total[n]]);
        }
        for k in 0..self.lu_super.len() {
            v.extend([self.lu_super[k], self.lu_sub[k], self.lu_private[k], self.lu_total[k]]);
        }
        v.into_iter().map(|x| format!("{x:?}")).collect()
    }
}

/// The five approximate rate formulas for every user.
pub fn approx_rates(seg: &PowerSegments, noise: f64) -> RateReport {
    let fam = |f: RateFamily| -> Vec<f64> {
        (0..f.size(&seg.layout)).map(|i| seg.ratio(f, i, noise).rate().max(0.0)).collect()
    };
    RateReport::from_stream_rates(
        &seg.layout,
        fam(RateFamily::GuCommon),
        fam(RateFamily::GuDesignated),
        fam(RateFamily::LuSuper),
        fam(RateFamily::LuSub),
        fam(RateFamily::LuPrivate),
    )
}

/// Worst super-common decoding rate over all GUs and LUs.
pub fn common_rate(report: &RateReport) -> f64 {
    report.gu_common.iter().chain(&report.lu_super).copied().fold(f64::INFINITY, f64::min).min(f64::MAX).max(0.0)
}

/// Worst sub-common decoding rate among LEO `m`'s users (0 for an empty group).
pub fn subcommon_rate(report: &RateReport, m: usize) -> f64 {
    let start: usize = report.group_sizes[..m].iter().sum();
    let group = &report.lu_sub[start..start + report.group_sizes[m]];
    if group.is_empty() {
        0.0
    } else {
        group.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `R_n = c_g + R_gd` and `R_k = c_sup + c_sub + R_p`, plus their minimum.
pub fn total_rates(c: &CommonRateSplit, report: &RateReport) -> (Vec<f64>, Vec<f64>, f64) {
    let gu: Vec<f64> = report.gu_designated.iter().zip(&c.c_g).map(|(r, c)| r + c).collect();
    let lu: Vec<f64> = (0..report.lu_private.len()).map(|k| c.c_sup[k] + c.c_sub[k] + report.lu_private[k]).collect();
    let mmf = gu.iter().chain(&lu).copied().fold(f64::INFINITY, f64::min);
    (gu, lu, mmf)
}

// ---------------------------------------------------------------------------
// Instantaneous SINRs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantaneousSinrs {
    pub gu_common: Vec<f64>,
    pub gu_designated: Vec<f64>,
    pub lu_super: Vec<f64>,
    pub lu_sub: Vec<f64>,
    pub lu_private: Vec<f64>,
}

impl InstantaneousSinrs {
    /// `log2(1 + SINR)` per stream, packaged as a report with a zero split.
    pub fn rates(&self, layout: &NetworkLayout) -> RateReport {
        let r = |v: &Vec<f64>| v.iter().map(|s| (1.0 + s).log2()).collect();
        RateReport::from_stream_rates(
            layout,
            r(&self.gu_common),
            r(&self.gu_designated),
            r(&self.lu_super),
            r(&self.lu_sub),
            r(&self.lu_private),
        )
    }
}

/// Per-stream SINRs for one realization: desired terms through the
/// estimated channel, SIC residuals through `h - h_hat`, everything else
/// through the actual channel.
pub fn instantaneous_sinrs(
    actual: &ChannelEstimate,
    estimated: &ChannelEstimate,
    p: &PrecoderSet,
    noise: f64,
) -> Result<InstantaneousSinrs> {
    actual.validate()?;
    estimated.validate()?;
    if actual.layout != estimated.layout {
        return Err(Error::Dimension("actual and estimated channels have different layouts".into()));
    }
    let layout = &actual.layout;
    let pw = |h: &CVec, w: &CVec| inner_sq(h, w);
    let mut out = InstantaneousSinrs {
        gu_common: Vec::new(),
        gu_designated: Vec::new(),
        lu_super: Vec::new(),
        lu_sub: Vec::new(),
        lu_private: Vec::new(),
    };
    for n in 0..layout.num_gu {
        let (h, hh) = (&actual.h_g[n], &estimated.h_g[n]);
        let res = h - hh;
        let mut interference = 0.0;
        for m in 0..layout.num_leo() {
            let hl = &actual.h_l2g[m][n];
            interference += pw(hl, &p.p_c[m]);
            interference += layout.group(m).map(|k| pw(hl, &p.p_p[k])).sum::<f64>();
        }
        let res_c = pw(&res, &p.w_c);
        out.gu_common.push(pw(hh, &p.w_c) / (res_c + pw(h, &p.w_d) + interference + noise));
        out.gu_designated.push(pw(hh, &p.w_d) / (res_c + pw(&res, &p.w_d) + interference + noise));
    }
    for k in 0..layout.num_lu() {
        let m = layout.leo_of(k);
        let (hg, hgh) = (&actual.h_g2l[k], &estimated.h_g2l[k]);
        let (hl, hlh) = (&actual.h_l[m][k], &estimated.h_l[m][k]);
        let (res_g, res_l) = (hg - hgh, hl - hlh);
        let mut interference = pw(hg, &p.w_d);
        interference += layout.group(m).filter(|&i| i != k).map(|i| pw(hl, &p.p_p[i])).sum::<f64>();
        for j in (0..layout.num_leo()).filter(|&j| j != m) {
            let hj = &actual.h_l[j][k];
            interference += pw(hj, &p.p_c[j]);
            interference += layout.group(j).map(|i| pw(hj, &p.p_p[i])).sum::<f64>();
        }
        let sup_res = pw(&res_g, &p.w_c);
        let sub_res = pw(&res_l, &p.p_c[m]);
        let s_lc = pw(hl, &p.p_c[m]);
        let s_lp = pw(hl, &p.p_p[k]);
        out.lu_super.push(pw(hgh, &p.w_c) / (sup_res + s_lc + s_lp + interference + noise));
        out.lu_sub.push(pw(hlh, &p.p_c[m]) / (sup_res + sub_res + s_lp + interference + noise));
        out.lu_private.push(pw(hlh, &p.p_p[k]) / (sup_res + sub_res + pw(&res_l, &p.p_p[k]) + interference + noise));
    }
    Ok(out)
}
