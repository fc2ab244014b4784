//! A small primal-dual interior-point solver for linear programs over
//! products of nonnegative orthants and real symmetric PSD cones.
//!
//! Standard form:
//!
//! ```text
//! minimize    c'x
//! subject to  A x = b
//!             G x + s = h,   s in K
//! ```
//!
//! PSD blocks are stored as `svec`: the lower triangle in column-major
//! order with off-diagonal entries scaled by `sqrt(2)`, so the Euclidean
//! inner product of two svecs equals the trace inner product of the
//! matrices. Hermitian blocks are lifted to `[Re, -Im; Im, Re]`.
//!
//! Constraints are added through [`ConicProgram`]'s builder methods as
//! affine expressions, which hide the sign conventions of `G` and `h`.

mod cones;
mod ipm;

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use cones::{mat_from_svec, svec_dim, svec_from_mat, svec_index};
pub use ipm::solve;

use crate::linalg::min_eigenvalue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    NonNeg(usize),
    /// Real symmetric PSD matrices of the given order.
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::NonNeg(k) => k,
            Cone::Psd(n) => svec_dim(n),
        }
    }

    /// Barrier degree of the cone.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::NonNeg(k) => k,
            Cone::Psd(n) => n,
        }
    }
}

/// `constant + sum(coef * x[var])`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn var(v: usize) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: usize, coef: f64) -> Self {
        Self {
            constant: 0.0,
            terms: vec![(v, coef)],
        }
    }

    pub fn add_term(&mut self, v: usize, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
        self
    }

    pub fn add_expr(&mut self, other: &AffineExpr, scale: f64) -> &mut Self {
        self.constant += scale * other.constant;
        for &(v, c) in &other.terms {
            self.add_term(v, scale * c);
        }
        self
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = AffineExpr::constant(0.0);
        out.add_expr(self, scale);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|t| t.1 == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }
}

/// Complex affine expression, used for Hermitian blocks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComplexAffine {
    pub re: AffineExpr,
    pub im: AffineExpr,
}

#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    n_vars: usize,
    c: Vec<f64>,
    objective_offset: f64,
    /// `(row, col, value)` of `A`.
    a: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    /// `(row, col, value)` of `G`.
    g: Vec<(usize, usize, f64)>,
    h: Vec<f64>,
    cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_equalities(&self) -> usize {
        self.b.len()
    }

    pub fn cone_rows(&self) -> usize {
        self.h.len()
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    pub fn objective(&self) -> &[f64] {
        &self.c
    }

    pub fn objective_offset(&self) -> f64 {
        self.objective_offset
    }

    pub fn add_var(&mut self) -> usize {
        self.n_vars += 1;
        self.c.push(0.0);
        self.n_vars - 1
    }

    pub fn add_vars(&mut self, k: usize) -> std::ops::Range<usize> {
        let start = self.n_vars;
        for _ in 0..k {
            self.add_var();
        }
        start..self.n_vars
    }

    /// Adds `expr` to the minimized objective.
    pub fn add_objective(&mut self, expr: &AffineExpr) {
        self.objective_offset += expr.constant;
        for &(v, c) in &expr.terms {
            self.c[v] += c;
        }
    }

    fn check_expr(&self, expr: &AffineExpr) {
        for &(v, _) in &expr.terms {
            assert!(v < self.n_vars, "variable {v} out of range");
        }
    }

    /// `expr == 0`.
    pub fn add_equality(&mut self, expr: &AffineExpr) {
        self.check_expr(expr);
        let row = self.b.len();
        for &(v, c) in &expr.terms {
            self.a.push((row, v, c));
        }
        self.b.push(-expr.constant);
    }

    /// `expr >= 0`. Consecutive calls are merged into one orthant block.
    pub fn add_nonneg(&mut self, expr: &AffineExpr) {
        self.check_expr(expr);
        let row = self.h.len();
        for &(v, c) in &expr.terms {
            self.g.push((row, v, -c));
        }
        self.h.push(expr.constant);
        match self.cones.last_mut() {
            Some(Cone::NonNeg(k)) => *k += 1,
            _ => self.cones.push(Cone::NonNeg(1)),
        }
    }

    /// Symmetric matrix of order `n` with the given lower-triangle entries
    /// `(i, j, expr)`, `i >= j`, constrained PSD. Missing entries are zero
    /// and repeated entries add.
    pub fn add_psd(&mut self, n: usize, entries: &[(usize, usize, AffineExpr)]) {
        let base = self.h.len();
        let dim = svec_dim(n);
        self.h.extend(std::iter::repeat_n(0.0, dim));
        for (i, j, expr) in entries {
            assert!(
                i >= j && *i < n,
                "entry ({i}, {j}) not in lower triangle of order {n}"
            );
            self.check_expr(expr);
            let scale = if i == j {
                1.0
            } else {
                std::f64::consts::SQRT_2
            };
            let row = base + svec_index(n, *i, *j);
            self.h[row] += scale * expr.constant;
            for &(v, c) in &expr.terms {
                self.g.push((row, v, -scale * c));
            }
        }
        self.cones.push(Cone::Psd(n));
    }

    /// Hermitian matrix of order `n` (entries `(i, j)`, `i >= j`) constrained
    /// PSD through its real lifting of order `2n`.
    pub fn add_hermitian_psd(&mut self, n: usize, entries: &[(usize, usize, ComplexAffine)]) {
        let mut lifted = Vec::with_capacity(4 * entries.len());
        for (i, j, z) in entries {
            let (i, j) = (*i, *j);
            assert!(
                i >= j && i < n,
                "entry ({i}, {j}) not in lower triangle of order {n}"
            );
            if !z.re.is_zero() {
                lifted.push((i, j, z.re.clone()));
                lifted.push((n + i, n + j, z.re.clone()));
            }
            if i != j && !z.im.is_zero() {
                lifted.push((n + i, j, z.im.clone()));
                lifted.push((n + j, i, z.im.scaled(-1.0)));
            }
        }
        self.add_psd(2 * n, &lifted);
    }

    /// Objective value `c'x + offset`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `h - G x`, the slack implied by `x`.
    pub fn slack(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.h.clone();
        for &(r, c, v) in &self.g {
            s[r] -= v * x[c];
        }
        s
    }

    /// Writes the standard-form data as text: a header line, the dimension
    /// line, the cone list, then `c`, `A`, `b`, `G`, `h` as sparse
    /// triplets (`row col value`, or `index value` for vectors), each
    /// section introduced by its name and entry count.
    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "conic-program 1")?;
        writeln!(
            w,
            "vars {} equalities {} cone_rows {}",
            self.n_vars,
            self.b.len(),
            self.h.len()
        )?;
        let cones: Vec<String> = self
            .cones
            .iter()
            .map(|c| match c {
                Cone::NonNeg(k) => format!("l:{k}"),
                Cone::Psd(n) => format!("s:{n}"),
            })
            .collect();
        writeln!(w, "cones {}", cones.join(" "))?;
        writeln!(w, "objective_offset {:.17e}", self.objective_offset)?;
        let vec_section = |w: &mut W, name: &str, v: &[f64]| -> std::io::Result<()> {
            let nz: Vec<_> = v.iter().enumerate().filter(|(_, x)| **x != 0.0).collect();
            writeln!(w, "{name} {}", nz.len())?;
            for (i, x) in nz {
                writeln!(w, "{i} {x:.17e}")?;
            }
            Ok(())
        };
        let mat_section =
            |w: &mut W, name: &str, t: &[(usize, usize, f64)]| -> std::io::Result<()> {
                writeln!(w, "{name} {}", t.len())?;
                for (r, c, x) in t {
                    writeln!(w, "{r} {c} {x:.17e}")?;
                }
                Ok(())
            };
        vec_section(&mut w, "c", &self.c)?;
        mat_section(&mut w, "A", &self.a)?;
        vec_section(&mut w, "b", &self.b)?;
        mat_section(&mut w, "G", &self.g)?;
        vec_section(&mut w, "h", &self.h)?;
        Ok(())
    }

    pub(crate) fn parts(&self) -> ProgramParts<'_> {
        ProgramParts {
            n: self.n_vars,
            c: &self.c,
            a: &self.a,
            b: &self.b,
            g: &self.g,
            h: &self.h,
            cones: &self.cones,
        }
    }
}

pub(crate) struct ProgramParts<'a> {
    pub n: usize,
    pub c: &'a [f64],
    pub a: &'a [(usize, usize, f64)],
    pub b: &'a [f64],
    pub g: &'a [(usize, usize, f64)],
    pub h: &'a [f64],
    pub cones: &'a [Cone],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// Stalled before `tol` but within `reduced_tol`.
    NearOptimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalError,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::NearOptimal => "near_optimal",
            SolveStatus::PrimalInfeasible => "infeasible",
            SolveStatus::DualInfeasible => "unbounded",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::NumericalError => "numerical_error",
        };
        f.write_str(s)
    }
}

/// Relative primal infeasibility, dual infeasibility and duality gap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }

    pub fn below(&self, tol: f64) -> bool {
        self.primal <= tol && self.dual <= tol && self.gap <= tol
    }
}

impl fmt::Display for Residuals {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "primal {:.3e}, dual {:.3e}, gap {:.3e}",
            self.primal, self.dual, self.gap
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Residual level at which a stalled solve still reports
    /// [`SolveStatus::NearOptimal`].
    pub reduced_tol: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 200,
            step_fraction: 0.99,
            reduced_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Primal variables `x`.
    pub primal: Vec<f64>,
    /// Cone multipliers `z`.
    pub dual: Vec<f64>,
    /// Equality multipliers `y`.
    pub dual_eq: Vec<f64>,
    pub slack: Vec<f64>,
    /// `c'x` plus the objective offset.
    pub objective_value: f64,
    /// `-b'y - h'z` plus the objective offset.
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    /// For infeasible statuses, which certificate was found.
    pub certificate: Option<String>,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Optimal or near optimal.
    pub fn is_usable(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

/// Independent recomputation of the optimality conditions: primal
/// feasibility with `s = h - G x` recomputed, dual feasibility including
/// the dual cone, and the relative duality gap.
pub fn certify(p: &ConicProgram, sol: &ConicSolution) -> Residuals {
    let x = &sol.primal;
    let z = &sol.dual;
    let y = &sol.dual_eq;
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();

    let mut eq = vec![0.0; p.b.len()];
    for &(r, c, v) in &p.a {
        eq[r] += v * x[c];
    }
    for (e, b) in eq.iter_mut().zip(&p.b) {
        *e -= b;
    }
    let s = p.slack(x);
    let primal =
        (norm(&eq) / norm(&p.b).max(1.0)).max(cone_violation(&p.cones, &s) / norm(&p.h).max(1.0));

    let mut dres = p.c.clone();
    for &(r, c, v) in &p.a {
        dres[c] += v * y[r];
    }
    for &(r, c, v) in &p.g {
        dres[c] += v * z[r];
    }
    let dual =
        (norm(&dres) / norm(&p.c).max(1.0)).max(cone_violation(&p.cones, z) / norm(&p.c).max(1.0));

    let cx: f64 = p.c.iter().zip(x).map(|(a, b)| a * b).sum();
    let by: f64 = p.b.iter().zip(y).map(|(a, b)| a * b).sum();
    let hz: f64 = p.h.iter().zip(z).map(|(a, b)| a * b).sum();
    let gap = (cx + by + hz).abs() / cx.abs().max((by + hz).abs()).max(1.0);
    Residuals { primal, dual, gap }
}

/// Largest violation of cone membership: `max(0, -min entry)` for
/// orthants and `max(0, -min eigenvalue)` for PSD blocks.
pub fn cone_violation(cones: &[Cone], v: &[f64]) -> f64 {
    let mut off = 0;
    let mut worst = 0.0f64;
    for cone in cones {
        let d = cone.dim();
        let block = &v[off..off + d];
        let lo = match cone {
            Cone::NonNeg(_) => block.iter().cloned().fold(f64::INFINITY, f64::min),
            Cone::Psd(n) => min_eigenvalue(&mat_from_svec(*n, block)),
        };
        worst = worst.max(-lo);
        off += d;
    }
    worst
}

/// Minimum eigenvalue of each PSD block of a cone vector.
pub fn psd_block_min_eigenvalues(cones: &[Cone], v: &[f64]) -> Vec<f64> {
    let mut off = 0;
    let mut out = Vec::new();
    for cone in cones {
        let d = cone.dim();
        if let Cone::Psd(n) = cone {
            out.push(min_eigenvalue(&mat_from_svec(*n, &v[off..off + d])));
        }
        off += d;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_default(p: &ConicProgram) -> ConicSolution {
        solve(p, &Settings::default())
    }

    #[test]
    fn trace_minimization_over_shifted_cone() {
        // minimize tr(X) s.t. X - I PSD, X 2x2 symmetric.
        let mut p = ConicProgram::new();
        let v = p.add_vars(3); // x11, x21, x22
        let (x11, x21, x22) = (v.start, v.start + 1, v.start + 2);
        p.add_objective(&AffineExpr {
            constant: 0.0,
            terms: vec![(x11, 1.0), (x22, 1.0)],
        });
        let mut d1 = AffineExpr::var(x11);
        d1.constant = -1.0;
        let mut d2 = AffineExpr::var(x22);
        d2.constant = -1.0;
        p.add_psd(2, &[(0, 0, d1), (1, 0, AffineExpr::var(x21)), (1, 1, d2)]);
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective_value - 2.0).abs() < 1e-7);
        assert!((sol.primal[x11] - 1.0).abs() < 1e-7);
        assert!(sol.primal[x21].abs() < 1e-7);
        assert!(certify(&p, &sol).below(1e-6));
    }

    #[test]
    fn determinant_bound() {
        // maximize t s.t. [[1, t], [t, 1]] PSD.
        let mut p = ConicProgram::new();
        let t = p.add_var();
        p.add_objective(&AffineExpr::term(t, -1.0));
        p.add_psd(
            2,
            &[
                (0, 0, AffineExpr::constant(1.0)),
                (1, 0, AffineExpr::var(t)),
                (1, 1, AffineExpr::constant(1.0)),
            ],
        );
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal[t] - 1.0).abs() < 1e-7, "{}", sol.primal[t]);
    }

    #[test]
    fn lp_lower_bound() {
        let mut p = ConicProgram::new();
        let x = p.add_var();
        p.add_objective(&AffineExpr::var(x));
        let mut e = AffineExpr::var(x);
        e.constant = -3.0;
        p.add_nonneg(&e);
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal[x] - 3.0).abs() < 1e-7);
        assert!((sol.objective_value - 3.0).abs() < 1e-7);
    }

    #[test]
    fn equality_constrained_lp() {
        // minimize x + 2y s.t. x + y = 1, x, y >= 0.
        let mut p = ConicProgram::new();
        let x = p.add_var();
        let y = p.add_var();
        p.add_objective(&AffineExpr {
            constant: 0.5,
            terms: vec![(x, 1.0), (y, 2.0)],
        });
        p.add_equality(&AffineExpr {
            constant: -1.0,
            terms: vec![(x, 1.0), (y, 1.0)],
        });
        p.add_nonneg(&AffineExpr::var(x));
        p.add_nonneg(&AffineExpr::var(y));
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal[x] - 1.0).abs() < 1e-7);
        assert!((sol.objective_value - 1.5).abs() < 1e-7);
        assert!(certify(&p, &sol).below(1e-6));
    }

    #[test]
    fn infeasible_lp_is_detected() {
        let mut p = ConicProgram::new();
        let x = p.add_var();
        p.add_objective(&AffineExpr::var(x));
        let mut lo = AffineExpr::var(x);
        lo.constant = -2.0; // x >= 2
        p.add_nonneg(&lo);
        let mut hi = AffineExpr::term(x, -1.0);
        hi.constant = 1.0; // x <= 1
        p.add_nonneg(&hi);
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
        assert!(sol.certificate.is_some());
    }

    #[test]
    fn unbounded_lp_is_detected() {
        let mut p = ConicProgram::new();
        let x = p.add_var();
        p.add_objective(&AffineExpr::term(x, -1.0));
        p.add_nonneg(&AffineExpr::var(x));
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::DualInfeasible);
    }

    #[test]
    fn hermitian_lifting_matches_complex_constraint() {
        // maximize Re(z) + Im(z) s.t. [[1, z*], [z, 1]] PSD  ->  |z| <= 1,
        // optimum at z = (1 + j)/sqrt(2), value sqrt(2).
        let mut p = ConicProgram::new();
        let zr = p.add_var();
        let zi = p.add_var();
        p.add_objective(&AffineExpr {
            constant: 0.0,
            terms: vec![(zr, -1.0), (zi, -1.0)],
        });
        let one = ComplexAffine {
            re: AffineExpr::constant(1.0),
            im: AffineExpr::default(),
        };
        p.add_hermitian_psd(
            2,
            &[
                (0, 0, one.clone()),
                (
                    1,
                    0,
                    ComplexAffine {
                        re: AffineExpr::var(zr),
                        im: AffineExpr::var(zi),
                    },
                ),
                (1, 1, one),
            ],
        );
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let s = 0.5f64.sqrt();
        assert!((sol.primal[zr] - s).abs() < 1e-6 && (sol.primal[zi] - s).abs() < 1e-6);
        assert!((sol.objective_value + 2f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn certify_detects_perturbation() {
        let mut p = ConicProgram::new();
        let t = p.add_var();
        p.add_objective(&AffineExpr::term(t, -1.0));
        p.add_psd(
            2,
            &[
                (0, 0, AffineExpr::constant(1.0)),
                (1, 0, AffineExpr::var(t)),
                (1, 1, AffineExpr::constant(1.0)),
            ],
        );
        let mut sol = solve_default(&p);
        assert!(certify(&p, &sol).below(1e-6));
        assert!((sol.objective_value - p.evaluate(&sol.primal)).abs() < 1e-12);
        sol.primal[0] += 1e-3;
        assert!(certify(&p, &sol).primal > 1e-6);
    }

    #[test]
    fn dump_lists_sections() {
        let mut p = ConicProgram::new();
        let x = p.add_var();
        p.add_objective(&AffineExpr::var(x));
        p.add_nonneg(&AffineExpr::var(x));
        let mut buf = Vec::new();
        p.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("conic-program 1\nvars 1 equalities 0 cone_rows 1\ncones l:1\n"));
        for section in ["\nc 1\n", "\nA 0\n", "\nb 0\n", "\nG 1\n", "\nh 0\n"] {
            assert!(text.contains(section), "missing {section:?}");
        }
    }
}
