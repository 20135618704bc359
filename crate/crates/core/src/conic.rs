//! A small conic modelling layer: real scalar variables, complex Hermitian
//! PSD matrix variables, affine constraints and exponential cones, solved
//! with the Clarabel interior-point solver.
//!
//! A Hermitian variable `F` of complex dimension `d` owns `d^2` real
//! parameters: the real parts of its upper triangle (diagonal included) and
//! the imaginary parts of its strict upper triangle. Its PSD constraint is
//! imposed on the real symmetric embedding `[[Re F, -Im F], [Im F, Re F]]`,
//! written directly in terms of those parameters, so the block structure
//! holds by construction. All accessors ([`HermitianVar::trace`],
//! [`HermitianVar::inner`]) return complex-domain quantities.
//!
//! # Dump format
//!
//! [`ConicProgram::dump`] writes a line-oriented sparse text file:
//!
//! ```text
//! conic-program v1
//! vars <n>
//! scalar <index> <name>
//! hermitian <name> <dim> <first-index>      # parameters first..first+dim^2
//! objective max <constant> <k> <idx>:<coef> ...
//! row <ge|le|eq> <constant> <k> <idx>:<coef> ...   # expr (sense) 0
//! exp <constant> <k> <idx>:<coef> ... | <constant> <k> <idx>:<coef> ...
//!                                                  # second >= exp(first)
//! ```
//!
//! Within a Hermitian block the parameters are ordered as
//! `Re F_00, Re F_01, Im F_01, ..., Re F_11, ...` (row-major upper triangle,
//! each off-diagonal real part followed by its imaginary part).

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

/// `sum coef * x[idx] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(v: VarId) -> Self {
        Self { terms: vec![(v.0, 1.0)], constant: 0.0 }
    }

    pub fn term(v: VarId, coef: f64) -> Self {
        Self { terms: vec![(v.0, coef)], constant: 0.0 }
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) {
        self.terms.push((v.0, coef));
    }

    pub fn sum<I: IntoIterator<Item = LinExpr>>(items: I) -> Self {
        let mut out = LinExpr::zero();
        for e in items {
            out += e;
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    /// Merges repeated variables and drops zero coefficients.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (i, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Self { terms: out, constant: self.constant }
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0).max()
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl From<VarId> for LinExpr {
    fn from(v: VarId) -> Self {
        LinExpr::var(v)
    }
}

impl AddAssign for LinExpr {
    fn add_assign(&mut self, rhs: LinExpr) {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl SubAssign for LinExpr {
    fn sub_assign(&mut self, rhs: LinExpr) {
        *self += -rhs;
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self += rhs;
        self
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: LinExpr) -> LinExpr {
        self -= rhs;
        self
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, s: f64) -> LinExpr {
        self.terms.iter_mut().for_each(|t| t.1 *= s);
        self.constant *= s;
        self
    }
}

/// Handle to a complex Hermitian PSD variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HermitianVar {
    pub dim: usize,
    offset: usize,
    index: usize,
}

impl HermitianVar {
    fn param(&self, i: usize, j: usize, imag: bool) -> usize {
        debug_assert!(i <= j && !(imag && i == j));
        // Row-major upper triangle; each row i has (d - i) reals and (d - i - 1) imaginaries.
        let d = self.dim;
        let before: usize = (0..i).map(|r| 2 * (d - r) - 1).sum();
        let within = if j == i { 0 } else { 1 + 2 * (j - i - 1) + usize::from(imag) };
        self.offset + before + within
    }

    fn re(&self, i: usize, j: usize) -> VarId {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        VarId(self.param(a, b, false))
    }

    pub fn num_params(&self) -> usize {
        self.dim * self.dim
    }

    pub fn trace(&self) -> LinExpr {
        LinExpr { terms: (0..self.dim).map(|i| (self.re(i, i).0, 1.0)).collect(), constant: 0.0 }
    }

    /// `Re tr(H F)`; only the Hermitian part of `h` matters.
    pub fn inner(&self, h: &CMat) -> LinExpr {
        assert_eq!(h.nrows(), self.dim, "inner product dimension");
        let mut e = LinExpr::zero();
        for i in 0..self.dim {
            e.add_term(self.re(i, i), h[(i, i)].re);
            for j in i + 1..self.dim {
                // H_ij conj(F_ij) + H_ji F_ij, real part.
                let hs = (h[(i, j)] + h[(j, i)].conj()) * 0.5;
                e.add_term(VarId(self.param(i, j, false)), 2.0 * hs.re);
                e.add_term(VarId(self.param(i, j, true)), 2.0 * hs.im);
            }
        }
        e
    }

    /// `v^H F v`.
    pub fn quad(&self, v: &CVec) -> LinExpr {
        self.inner(&(v * v.adjoint()))
    }

    /// The matrix value under primal values `x`.
    pub fn value(&self, x: &[f64]) -> CMat {
        let d = self.dim;
        let mut m = CMat::zeros(d, d);
        for i in 0..d {
            m[(i, i)] = C64::new(x[self.param(i, i, false)], 0.0);
            for j in i + 1..d {
                let z = C64::new(x[self.param(i, j, false)], x[self.param(i, j, true)]);
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        m
    }

    /// Upper-triangle column-major entries of the real embedding as
    /// (svec position, parameter, coefficient) with the sqrt(2) off-diagonal
    /// scaling applied.
    fn embedding_svec(&self) -> Vec<(usize, usize, f64)> {
        let d = self.dim;
        let n = 2 * d;
        let mut out = Vec::new();
        let mut pos = 0;
        for col in 0..n {
            for row in 0..=col {
                let scale = if row == col { 1.0 } else { std::f64::consts::SQRT_2 };
                let entry = if (row < d) == (col < d) {
                    Some((self.re(row % d, col % d).0, 1.0))
                } else {
                    // row < d <= col: the -Im F block.
                    let (a, b) = (row, col - d);
                    match a.cmp(&b) {
                        std::cmp::Ordering::Less => Some((self.param(a, b, true), -1.0)),
                        std::cmp::Ordering::Greater => Some((self.param(b, a, true), 1.0)),
                        std::cmp::Ordering::Equal => None,
                    }
                };
                if let Some((p, c)) = entry {
                    out.push((pos, p, scale * c));
                }
                pos += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Inaccurate,
    Infeasible,
    Error,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Inaccurate)
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Inaccurate => "inaccurate",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    pub objective: f64,
    pub x: Vec<f64>,
    pub solve_time: f64,
    pub iterations: u32,
    pub diagnostic: String,
}

impl Solution {
    pub fn value(&self, v: VarId) -> f64 {
        self.x[v.0]
    }

    pub fn eval(&self, e: &LinExpr) -> f64 {
        e.eval(&self.x)
    }

    pub fn matrix(&self, m: &HermitianVar) -> CMat {
        m.value(&self.x)
    }
}

/// A run stopped by iteration limits or stalled steps still counts as an
/// (inaccurate) solution when residuals are at most this and the duality gap
/// at most this relative to `max(1, |objective|)`.
pub const ACCEPT_RESIDUAL: f64 = 1e-6;
pub const ACCEPT_GAP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: u32,
    /// Static KKT regularization. Slightly above the solver's own default
    /// so that near-rank-one PSD blocks do not stall the line search.
    pub static_reg: f64,
    /// Print the solver's iteration log.
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, static_reg: 1e-7, verbose: false }
    }
}

#[derive(Debug, Clone)]
struct MatrixDecl {
    name: String,
    var: HermitianVar,
}

#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    names: HashSet<String>,
    scalars: Vec<(usize, String)>,
    matrices: Vec<MatrixDecl>,
    num_vars: usize,
    rows: Vec<(LinExpr, Sense)>,
    exp: Vec<(LinExpr, LinExpr)>,
    objective: Option<LinExpr>,
    pub settings: SolverSettings,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    fn claim(&mut self, name: &str) -> Result<()> {
        if !self.names.insert(name.to_string()) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        Ok(())
    }

    pub fn add_scalar(&mut self, name: &str) -> Result<VarId> {
        self.claim(name)?;
        let id = self.num_vars;
        self.num_vars += 1;
        self.scalars.push((id, name.to_string()));
        Ok(VarId(id))
    }

    pub fn add_nonneg(&mut self, name: &str) -> Result<VarId> {
        let v = self.add_scalar(name)?;
        self.add_constraint(LinExpr::var(v), Sense::Ge, LinExpr::zero());
        Ok(v)
    }

    pub fn add_hermitian_psd(&mut self, name: &str, dim: usize) -> Result<HermitianVar> {
        if dim == 0 {
            return Err(Error::Dimension(format!("PSD variable `{name}` of dimension 0")));
        }
        self.claim(name)?;
        let var = HermitianVar { dim, offset: self.num_vars, index: self.matrices.len() };
        self.num_vars += dim * dim;
        self.matrices.push(MatrixDecl { name: name.to_string(), var: var.clone() });
        Ok(var)
    }

    /// `lhs (sense) rhs`.
    pub fn add_constraint(&mut self, lhs: LinExpr, sense: Sense, rhs: LinExpr) {
        self.rows.push(((lhs - rhs).compact(), sense));
    }

    pub fn add_le(&mut self, lhs: LinExpr, rhs: LinExpr) {
        self.add_constraint(lhs, Sense::Le, rhs);
    }

    pub fn add_ge(&mut self, lhs: LinExpr, rhs: LinExpr) {
        self.add_constraint(lhs, Sense::Ge, rhs);
    }

    pub fn add_eq(&mut self, lhs: LinExpr, rhs: LinExpr) {
        self.add_constraint(lhs, Sense::Eq, rhs);
    }

    /// `affine >= exp(x)`, one exponential cone `(x, 1, affine)`.
    pub fn add_exp_ge(&mut self, affine: LinExpr, x: LinExpr) {
        self.exp.push((x.compact(), affine.compact()));
    }

    pub fn maximize(&mut self, objective: LinExpr) {
        self.objective = Some(objective.compact());
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_linear_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_exp_cones(&self) -> usize {
        self.exp.len()
    }

    pub fn num_psd(&self) -> usize {
        self.matrices.len()
    }

    pub fn psd_dims(&self) -> Vec<usize> {
        self.matrices.iter().map(|m| m.var.dim).collect()
    }

    fn check_refs(&self) -> Result<()> {
        let exprs = self
            .rows
            .iter()
            .map(|r| &r.0)
            .chain(self.exp.iter().flat_map(|e| [&e.0, &e.1]))
            .chain(self.objective.iter());
        for e in exprs {
            if let Some(i) = e.max_index() {
                if i >= self.num_vars {
                    return Err(Error::Dimension(format!("expression references undeclared variable {i}")));
                }
            }
        }
        Ok(())
    }

    /// Solves the program. Numerical trouble is reported through the
    /// returned status, never as a silently wrong optimum.
    pub fn solve(&self) -> Solution {
        let start = Instant::now();
        let fail = |status: SolveStatus, msg: String| Solution {
            status,
            objective: f64::NAN,
            x: vec![f64::NAN; self.num_vars],
            solve_time: start.elapsed().as_secs_f64(),
            iterations: 0,
            diagnostic: msg,
        };
        let Some(objective) = &self.objective else {
            return fail(SolveStatus::Error, "no objective set".into());
        };
        if let Err(e) = self.check_refs() {
            return fail(SolveStatus::Error, e.to_string());
        }
        let n = self.num_vars;
        let mut q = vec![0.0; n];
        for &(i, c) in &objective.terms {
            q[i] -= c;
        }
        let (mut ri, mut ci, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut push_row = |e: &LinExpr, sign: f64, ri: &mut Vec<usize>, b: &mut Vec<f64>| {
            let r = b.len();
            for &(i, c) in &e.terms {
                ri.push(r);
                ci.push(i);
                vals.push(-sign * c);
            }
            b.push(sign * e.constant);
        };
        let eqs: Vec<_> = self.rows.iter().filter(|r| r.1 == Sense::Eq).collect();
        for (e, _) in &eqs {
            push_row(e, 1.0, &mut ri, &mut b);
        }
        if !eqs.is_empty() {
            cones.push(SupportedConeT::ZeroConeT(eqs.len()));
        }
        let mut n_ineq = 0;
        for (e, s) in &self.rows {
            match s {
                Sense::Ge => push_row(e, 1.0, &mut ri, &mut b),
                Sense::Le => push_row(e, -1.0, &mut ri, &mut b),
                Sense::Eq => continue,
            }
            n_ineq += 1;
        }
        if n_ineq > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(n_ineq));
        }
        for (x, affine) in &self.exp {
            push_row(x, 1.0, &mut ri, &mut b);
            push_row(&LinExpr::constant(1.0), 1.0, &mut ri, &mut b);
            push_row(affine, 1.0, &mut ri, &mut b);
            cones.push(SupportedConeT::ExponentialConeT());
        }
        for m in &self.matrices {
            let base = b.len();
            let n2 = 2 * m.var.dim;
            let len = n2 * (n2 + 1) / 2;
            let mut rows_of: Vec<LinExpr> = vec![LinExpr::zero(); len];
            for (pos, p, c) in m.var.embedding_svec() {
                rows_of[pos].add_term(VarId(p), c);
            }
            for r in &rows_of {
                push_row(r, 1.0, &mut ri, &mut b);
            }
            debug_assert_eq!(b.len(), base + len);
            cones.push(SupportedConeT::PSDTriangleConeT(n2));
        }
        let m_rows = b.len();
        let a = CscMatrix::new_from_triplets(m_rows, n, ri, ci, vals);
        let p = CscMatrix::zeros((n, n));
        let settings = DefaultSettingsBuilder::default()
            .verbose(self.settings.verbose)
            .max_iter(self.settings.max_iter)
            .tol_gap_abs(self.settings.tol)
            .tol_gap_rel(self.settings.tol)
            .tol_feas(self.settings.tol)
            .static_regularization_constant(self.settings.static_reg)
            .build()
            .expect("valid solver settings");
        let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => return fail(SolveStatus::Error, format!("solver setup failed: {e}")),
        };
        solver.solve();
        let sol = &solver.solution;
        let gap = (sol.obj_val - sol.obj_val_dual).abs();
        let gap_ok = gap <= ACCEPT_GAP * sol.obj_val.abs().max(1.0);
        let residual_ok = sol.r_prim.is_finite() && sol.r_prim <= ACCEPT_RESIDUAL && sol.r_dual <= ACCEPT_RESIDUAL && gap_ok;
        let (status, diagnostic) = match sol.status {
            SolverStatus::Solved => (SolveStatus::Optimal, String::new()),
            SolverStatus::AlmostSolved => (SolveStatus::Inaccurate, "reduced accuracy".to_string()),
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                (SolveStatus::Infeasible, format!("{:?}", sol.status))
            }
            SolverStatus::MaxIterations | SolverStatus::InsufficientProgress | SolverStatus::NumericalError
                if residual_ok =>
            {
                (SolveStatus::Inaccurate, format!("{:?} with small residuals", sol.status))
            }
            other => (
                SolveStatus::Error,
                format!(
                    "{other:?} (primal residual {:.3e}, dual residual {:.3e}, duality gap {:.3e})",
                    sol.r_prim, sol.r_dual, gap
                ),
            ),
        };
        let x = sol.x.clone();
        Solution {
            status,
            objective: if status.has_solution() { objective.eval(&x) } else { f64::NAN },
            x,
            solve_time: start.elapsed().as_secs_f64(),
            iterations: sol.iterations,
            diagnostic,
        }
    }

    /// Writes the program in the sparse text format described in the module
    /// documentation.
    pub fn dump<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        fn expr(e: &LinExpr) -> String {
            let mut s = format!("{:?} {}", e.constant, e.terms.len());
            for (i, c) in &e.terms {
                s.push_str(&format!(" {i}:{c:?}"));
            }
            s
        }
        writeln!(w, "conic-program v1")?;
        writeln!(w, "vars {}", self.num_vars)?;
        for (i, name) in &self.scalars {
            writeln!(w, "scalar {i} {name}")?;
        }
        for m in &self.matrices {
            writeln!(w, "hermitian {} {} {}", m.name, m.var.dim, m.var.offset)?;
        }
        if let Some(o) = &self.objective {
            writeln!(w, "objective max {}", expr(o))?;
        }
        for (e, s) in &self.rows {
            let tag = match s {
                Sense::Ge => "ge",
                Sense::Le => "le",
                Sense::Eq => "eq",
            };
            writeln!(w, "row {tag} {}", expr(e))?;
        }
        for (x, a) in &self.exp {
            writeln!(w, "exp {} | {}", expr(x), expr(a))?;
        }
        Ok(())
    }

    /// Index of a declared Hermitian variable among all matrix variables.
    pub fn matrix_index(&self, m: &HermitianVar) -> usize {
        m.index
    }
}
