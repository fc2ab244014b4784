//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling
//! and a Mehrotra predictor-corrector.
//!
//! The embedding is
//!
//! ```text
//! [0]   [ 0   A'  G'  c ] [x]   [0]
//! [0] = [-A   0   0   b ] [y] - [0]
//! [s]   [-G   0   0   h ] [z]   [0]
//! [k]   [-c' -b' -h'  0 ] [t]   [0]
//! ```
//!
//! and each Newton step reduces to two solves with
//! `[[0, A', G'], [A, 0, 0], [G, 0, -W'W]]`, which are in turn reduced to
//! the normal matrix `G' (W'W)^-1 G` (plus `A'A` when there are equalities).

use std::f64::consts::SQRT_2;

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use log::debug;
use nalgebra::{Cholesky, DVector, Dyn};

use super::cones::{BlockScaling, Layout, Scaling};
use super::{Cone, ConicProgram, ConicSolution, ProgramParts, Residuals, Settings, SolveStatus};
use crate::linalg::RMat;

type Sparse = Vec<Vec<(usize, f64)>>;

struct PsdStructure {
    block: usize,
    n: usize,
    dim: usize,
    vars: Vec<usize>,
    /// Per touching variable: unpacked lower-triangle matrix entries.
    entries: Vec<Vec<(usize, usize, f64)>>,
    /// Per touching variable: whether `P M P` is formed densely.
    dense_ta: Vec<bool>,
    /// Per touching variable: svec-local rows of its column.
    cols: Sparse,
    /// Dense `G` restricted to this block, when the dense product is cheaper.
    gc_dense: Option<RMat>,
}

struct Structure {
    n: usize,
    p: usize,
    m: usize,
    c: Vec<f64>,
    b: Vec<f64>,
    h: Vec<f64>,
    a_rows: Sparse,
    a_cols: Sparse,
    g_cols: Sparse,
    /// Rows of `G` that belong to orthant blocks, with their row index.
    nonneg_rows: Vec<(usize, Vec<(usize, f64)>)>,
    psd: Vec<PsdStructure>,
}

fn gather(n_major: usize, triplets: impl Iterator<Item = (usize, usize, f64)>) -> Sparse {
    let mut out: Sparse = vec![Vec::new(); n_major];
    for (major, minor, v) in triplets {
        out[major].push((minor, v));
    }
    for list in &mut out {
        list.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(list.len());
        for &(k, v) in list.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == k => last.1 += v,
                _ => merged.push((k, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        *list = merged;
    }
    out
}

impl Structure {
    fn new(parts: &ProgramParts<'_>, layout: &Layout) -> Self {
        let n = parts.n;
        let p = parts.b.len();
        let m = parts.h.len();
        let a_rows = gather(p, parts.a.iter().cloned());
        let a_cols = gather(n, parts.a.iter().map(|&(r, c, v)| (c, r, v)));
        let g_cols = gather(n, parts.g.iter().map(|&(r, c, v)| (c, r, v)));
        let g_rows = gather(m, parts.g.iter().cloned());

        let mut nonneg_rows = Vec::new();
        let mut psd = Vec::new();
        for (block, (cone, range)) in layout.blocks().enumerate() {
            match cone {
                Cone::NonNeg(_) => {
                    for r in range {
                        nonneg_rows.push((r, g_rows[r].clone()));
                    }
                }
                Cone::Psd(order) => psd.push(Self::psd_structure(block, order, range, &g_cols)),
            }
        }
        Self {
            n,
            p,
            m,
            c: parts.c.to_vec(),
            b: parts.b.to_vec(),
            h: parts.h.to_vec(),
            a_rows,
            a_cols,
            g_cols,
            nonneg_rows,
            psd,
        }
    }

    fn psd_structure(
        block: usize,
        n: usize,
        range: std::ops::Range<usize>,
        g_cols: &Sparse,
    ) -> PsdStructure {
        let dim = range.len();
        // svec-local index -> (i, j)
        let mut coords = Vec::with_capacity(dim);
        for j in 0..n {
            for i in j..n {
                coords.push((i, j));
            }
        }
        let mut vars = Vec::new();
        let mut entries = Vec::new();
        let mut cols = Vec::new();
        for (var, col) in g_cols.iter().enumerate() {
            let local: Vec<(usize, f64)> = col
                .iter()
                .filter(|(r, _)| range.contains(r))
                .map(|&(r, v)| (r - range.start, v))
                .collect();
            if local.is_empty() {
                continue;
            }
            let unpacked = local
                .iter()
                .map(|&(k, v)| {
                    let (i, j) = coords[k];
                    (i, j, if i == j { v } else { v / SQRT_2 })
                })
                .collect::<Vec<_>>();
            vars.push(var);
            entries.push(unpacked);
            cols.push(local);
        }
        let dense_ta = entries
            .iter()
            .map(|e| {
                let unpacked = e
                    .iter()
                    .map(|&(i, j, _)| if i == j { 1 } else { 2 })
                    .sum::<usize>();
                unpacked * dim > n * n * n
            })
            .collect();
        let nnz: usize = cols.iter().map(|c| c.len()).sum();
        let v = vars.len();
        let gc_dense = if dim * v <= 8 * nnz {
            let mut g = RMat::zeros(dim, v);
            for (k, col) in cols.iter().enumerate() {
                for &(r, val) in col {
                    g[(r, k)] = val;
                }
            }
            Some(g)
        } else {
            None
        };
        PsdStructure {
            block,
            n,

            dim,
            vars,
            entries,
            dense_ta,
            cols,
            gc_dense,
        }
    }

    fn g_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (j, col) in self.g_cols.iter().enumerate() {
            let xj = x[j];
            if xj != 0.0 {
                for &(r, v) in col {
                    out[r] += v * xj;
                }
            }
        }
        out
    }

    fn gt_mul(&self, z: &[f64]) -> Vec<f64> {
        self.g_cols
            .iter()
            .map(|col| col.iter().map(|&(r, v)| v * z[r]).sum())
            .collect()
    }

    fn a_mul(&self, x: &[f64]) -> Vec<f64> {
        self.a_rows
            .iter()
            .map(|row| row.iter().map(|&(c, v)| v * x[c]).sum())
            .collect()
    }

    fn at_mul(&self, y: &[f64]) -> Vec<f64> {
        self.a_cols
            .iter()
            .map(|col| col.iter().map(|&(r, v)| v * y[r]).sum())
            .collect()
    }

    /// `G' (W'W)^-1 G`.
    fn normal_matrix(&self, w: &Scaling) -> RMat {
        let mut hm = RMat::zeros(self.n, self.n);
        let mut nonneg_weights = Vec::new();
        // Orthant weights z/s = 1/d^2 in row order.
        for b in &w.blocks {
            if let BlockScaling::NonNeg { d, .. } = b {
                nonneg_weights.extend(d.iter().map(|v| 1.0 / (v * v)));
            }
        }
        for ((_, row), wt) in self.nonneg_rows.iter().zip(&nonneg_weights) {
            for (ia, &(a, va)) in row.iter().enumerate() {
                let f = wt * va;
                for &(b, vb) in &row[ia..] {
                    hm[(a.min(b), a.max(b))] += f * vb;
                }
            }
        }
        for ps in &self.psd {
            let p = match &w.blocks[ps.block] {
                BlockScaling::Psd { p, .. } => p,
                BlockScaling::NonNeg { .. } => unreachable!("block kind mismatch"),
            };
            let hc = psd_contribution(ps, p);
            for (ka, &a) in ps.vars.iter().enumerate() {
                for (kb, &b) in ps.vars.iter().enumerate().skip(ka) {
                    hm[(a.min(b), a.max(b))] += hc[(ka, kb)];
                }
            }
        }
        // Mirror the upper triangle.
        for j in 0..self.n {
            for i in j + 1..self.n {
                hm[(i, j)] = hm[(j, i)];
            }
        }
        hm
    }
}

/// `Gc' svec(P M_a P)` for all touching variables of one PSD block.
fn psd_contribution(ps: &PsdStructure, p: &RMat) -> RMat {
    let n = ps.n;
    let v = ps.vars.len();
    let mut t = RMat::zeros(ps.dim, v);
    let pdata = p.as_slice();
    for (k, entries) in ps.entries.iter().enumerate() {
        let out = &mut t.as_mut_slice()[k * ps.dim..(k + 1) * ps.dim];
        if ps.dense_ta[k] {
            let mut ma = RMat::zeros(n, n);
            for &(i, j, val) in entries {
                ma[(i, j)] += val;
                if i != j {
                    ma[(j, i)] += val;
                }
            }
            let ta = p * ma * p;
            let mut idx = 0;
            for j in 0..n {
                out[idx] = ta[(j, j)];
                idx += 1;
                for i in j + 1..n {
                    out[idx] = SQRT_2 * 0.5 * (ta[(i, j)] + ta[(j, i)]);
                    idx += 1;
                }
            }
        } else {
            for &(r, s, val) in entries {
                let pr = &pdata[r * n..(r + 1) * n];
                let psc = &pdata[s * n..(s + 1) * n];
                let mut idx = 0;
                if r == s {
                    for j in 0..n {
                        let f = val * pr[j];
                        out[idx] += f * pr[j];
                        idx += 1;
                        let f2 = SQRT_2 * f;
                        for p in &pr[j + 1..n] {
                            out[idx] += f2 * p;
                            idx += 1;
                        }
                    }
                } else {
                    for j in 0..n {
                        let (a, b) = (val * psc[j], val * pr[j]);
                        out[idx] += 2.0 * pr[j] * a;
                        idx += 1;
                        let (a2, b2) = (SQRT_2 * a, SQRT_2 * b);
                        for i in j + 1..n {
                            out[idx] += pr[i] * a2 + psc[i] * b2;
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
    match &ps.gc_dense {
        Some(g) => g.transpose() * t,
        None => {
            let mut hc = RMat::zeros(v, v);
            for ka in 0..v {
                let col = t.column(ka);
                for kb in ka..v {
                    let s: f64 = ps.cols[kb].iter().map(|&(r, val)| val * col[r]).sum();
                    hc[(ka, kb)] = s;
                }
            }
            hc
        }
    }
}

struct Kkt<'a> {
    st: &'a Structure,
    layout: &'a Layout,
    w: &'a Scaling,
    /// Cholesky of `D M D` with `D = diag(M)^-1/2`.
    chol: Llt<f64>,
    equil: DVector<f64>,
    /// Cholesky of `A M^-1 A'` and `M^-1 A'`.
    schur: Option<(Cholesky<f64, Dyn>, RMat)>,
}

impl<'a> Kkt<'a> {
    fn factor(st: &'a Structure, layout: &'a Layout, w: &'a Scaling) -> Option<Self> {
        let mut m = st.normal_matrix(w);
        if st.p > 0 {
            for row in &st.a_rows {
                for &(a, va) in row {
                    for &(b, vb) in row {
                        m[(a, b)] += va * vb;
                    }
                }
            }
        }
        let top = (0..st.n).map(|i| m[(i, i)].abs()).fold(1e-300, f64::max);
        let equil = DVector::from_fn(st.n, |i, _| 1.0 / m[(i, i)].abs().max(1e-14 * top).sqrt());
        for j in 0..st.n {
            for i in 0..st.n {
                m[(i, j)] *= equil[i] * equil[j];
            }
        }
        let mut delta = 1e-13;
        let chol = loop {
            let reg = Mat::from_fn(st.n, st.n, |i, j| {
                if i == j {
                    m[(i, j)] + delta
                } else {
                    m[(i, j)]
                }
            });
            if let Ok(c) = reg.llt(Side::Lower) {
                break c;
            }
            delta *= 100.0;
            if delta > 1e-2 {
                return None;
            }
        };
        let mut kkt = Self {
            st,
            layout,
            w,
            chol,
            equil,
            schur: None,
        };
        if st.p > 0 {
            let at = RMat::from_fn(st.n, st.p, |i, k| {
                st.a_cols[i].iter().find(|e| e.0 == k).map_or(0.0, |e| e.1)
            });
            let minv_at = kkt.m_solve_mat(&at);
            let mut s = at.transpose() * &minv_at;
            let sscale = (0..st.p).map(|i| s[(i, i)].abs()).fold(1e-300, f64::max);
            for i in 0..st.p {
                s[(i, i)] += 1e-13 * sscale;
            }
            kkt.schur = Some((s.cholesky()?, minv_at));
        }
        Some(kkt)
    }

    fn m_solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut x = Mat::from_fn(r.len(), 1, |i, _| r[i] * self.equil[i]);
        self.chol.solve_in_place(x.as_mut());
        DVector::from_fn(r.len(), |i, _| x[(i, 0)] * self.equil[i])
    }

    fn m_solve_mat(&self, r: &RMat) -> RMat {
        let mut x = Mat::from_fn(r.nrows(), r.ncols(), |i, j| r[(i, j)] * self.equil[i]);
        self.chol.solve_in_place(x.as_mut());
        RMat::from_fn(r.nrows(), r.ncols(), |i, j| x[(i, j)] * self.equil[i])
    }

    fn solve_once(&self, r1: &[f64], r2: &[f64], r3: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let st = self.st;
        let scaled = self.w.wtw_inv(self.layout, r3);
        let gt = st.gt_mul(&scaled);
        let mut rhs = DVector::from_iterator(st.n, r1.iter().zip(&gt).map(|(a, b)| a + b));
        let (dx, dy) = match &self.schur {
            None => (self.m_solve(&rhs), Vec::new()),
            Some((schol, minv_at)) => {
                let at_r2 = st.at_mul(r2);
                for (i, v) in at_r2.iter().enumerate() {
                    rhs[i] += v;
                }
                let minv_rhs = self.m_solve(&rhs);
                let a_minv_rhs = st.a_mul(minv_rhs.as_slice());
                let t = DVector::from_iterator(st.p, a_minv_rhs.iter().zip(r2).map(|(a, b)| a - b));
                let dy = schol.solve(&t);
                let dx = minv_rhs - minv_at * &dy;
                (dx, dy.as_slice().to_vec())
            }
        };
        let gdx = st.g_mul(dx.as_slice());
        let diff: Vec<f64> = gdx.iter().zip(r3).map(|(a, b)| a - b).collect();
        let dz = self.w.wtw_inv(self.layout, &diff);
        (dx.as_slice().to_vec(), dy, dz)
    }

    /// Solves `[[0, A', G'], [A, 0, 0], [G, 0, -W'W]] [x; y; z] = [r1; r2; r3]`
    /// with iterative refinement until the residual stops shrinking.
    fn solve(&self, r1: &[f64], r2: &[f64], r3: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let st = self.st;
        let (mut x, mut y, mut z) = self.solve_once(r1, r2, r3);
        let residual = |x: &[f64], y: &[f64], z: &[f64]| {
            let aty = st.at_mul(y);
            let gtz = st.gt_mul(z);
            let e1: Vec<f64> = (0..st.n).map(|i| r1[i] - aty[i] - gtz[i]).collect();
            let ax = st.a_mul(x);
            let e2: Vec<f64> = (0..st.p).map(|i| r2[i] - ax[i]).collect();
            let gx = st.g_mul(x);
            let wz = self.w.wtw(self.layout, z);
            let e3: Vec<f64> = (0..st.m).map(|i| r3[i] - gx[i] + wz[i]).collect();
            let size = (norm(&e1).powi(2) + norm(&e2).powi(2) + norm(&e3).powi(2)).sqrt();
            (e1, e2, e3, size)
        };
        let target = 1e-15 * (norm(r1).powi(2) + norm(r2).powi(2) + norm(r3).powi(2)).sqrt();
        let (mut e1, mut e2, mut e3, mut size) = residual(&x, &y, &z);
        for _ in 0..REFINEMENT_ROUNDS {
            if size <= target {
                break;
            }
            let (cx, cy, cz) = self.solve_once(&e1, &e2, &e3);
            let mut nx = x.clone();
            let mut ny = y.clone();
            let mut nz = z.clone();
            add(&mut nx, &cx, 1.0);
            add(&mut ny, &cy, 1.0);
            add(&mut nz, &cz, 1.0);
            let (f1, f2, f3, next) = residual(&nx, &ny, &nz);
            if !(next < size) {
                break;
            }
            let improved = next < 0.5 * size;
            (x, y, z, e1, e2, e3, size) = (nx, ny, nz, f1, f2, f3, next);
            if !improved {
                break;
            }
        }
        (x, y, z)
    }
}

const REFINEMENT_ROUNDS: usize = 8;

/// Iterations without a better iterate after which a near-optimal solve stops.
const STALL_ITERATIONS: usize = 10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn add(a: &mut [f64], b: &[f64], s: f64) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

fn neg(a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| -v).collect()
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Candidate {
    score: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    residuals: Residuals,
}

/// Solves a conic program. Deterministic for identical inputs.
pub fn solve(program: &ConicProgram, settings: &Settings) -> ConicSolution {
    let parts = program.parts();
    let layout = Layout::new(parts.cones);
    let st = Structure::new(&parts, &layout);
    let offset = program.objective_offset();
    let finish = |status: SolveStatus,
                  x: Vec<f64>,
                  y: Vec<f64>,
                  z: Vec<f64>,
                  s: Vec<f64>,
                  residuals: Residuals,
                  iterations: usize,
                  certificate: Option<String>| {
        let pobj = dot(&st.c, &x) + offset;
        let dobj = -dot(&st.b, &y) - dot(&st.h, &z) + offset;
        ConicSolution {
            status,
            primal: x,
            dual: z,
            dual_eq: y,
            slack: s,
            objective_value: pobj,
            dual_objective: dobj,
            residuals,
            iterations,
            certificate,
        }
    };

    if st.m == 0 {
        return finish(
            SolveStatus::NumericalError,
            vec![0.0; st.n],
            vec![0.0; st.p],
            Vec::new(),
            Vec::new(),
            Residuals::default(),
            0,
            Some("program has no cone constraints".into()),
        );
    }

    let e = layout.identity();
    let identity_scaling = Scaling::compute(&layout, &e, &e).expect("identity is interior");
    let kkt0 = match Kkt::factor(&st, &layout, &identity_scaling) {
        Some(k) => k,
        None => {
            return finish(
                SolveStatus::NumericalError,
                vec![0.0; st.n],
                vec![0.0; st.p],
                vec![0.0; st.m],
                vec![0.0; st.m],
                Residuals::default(),
                0,
                Some("initial factorization failed".into()),
            )
        }
    };
    let zero_n = vec![0.0; st.n];
    let zero_p = vec![0.0; st.p];
    let zero_m = vec![0.0; st.m];
    let (x0, _, zt) = kkt0.solve(&zero_n, &st.b, &st.h);
    let mut s0 = neg(&zt);
    let (_, y0, mut z0) = kkt0.solve(&neg(&st.c), &zero_p, &zero_m);
    for v in [&mut s0, &mut z0] {
        let shift = layout.boundary_shift(v);
        if shift >= -1e-8 * norm(v).max(1.0) {
            add(v, &e, 1.0 + shift);
        }
    }
    let mut it = Iterate {
        x: x0,
        y: y0,
        z: z0,
        s: s0,
        tau: 1.0,
        kappa: 1.0,
    };

    let resx0 = norm(&st.c).max(1.0);
    let resy0 = norm(&st.b).max(1.0);
    let resz0 = norm(&st.h).max(1.0);
    let mut best: Option<Candidate> = None;
    let mut w = match Scaling::compute(&layout, &it.s, &it.z) {
        Some(w) => w,
        None => {
            return finish(
                SolveStatus::NumericalError,
                it.x,
                it.y,
                it.z,
                it.s,
                Residuals::default(),
                0,
                Some("initial point left the cone".into()),
            )
        }
    };

    let mut last_improvement = 0;
    for iter in 0..=settings.max_iter {
        let aty = st.at_mul(&it.y);
        let gtz = st.gt_mul(&it.z);
        let ax = st.a_mul(&it.x);
        let gx = st.g_mul(&it.x);
        let hresx: Vec<f64> = (0..st.n).map(|i| aty[i] + gtz[i]).collect();
        let r1: Vec<f64> = (0..st.n).map(|i| hresx[i] + st.c[i] * it.tau).collect();
        let r2: Vec<f64> = (0..st.p).map(|i| -ax[i] + st.b[i] * it.tau).collect();
        let r3: Vec<f64> = (0..st.m)
            .map(|i| -gx[i] + st.h[i] * it.tau - it.s[i])
            .collect();
        let cx = dot(&st.c, &it.x);
        let by = dot(&st.b, &it.y);
        let hz = dot(&st.h, &it.z);
        let r4 = -cx - by - hz - it.kappa;

        let tau = it.tau;
        let pcost = cx / tau;
        let dcost = -(by + hz) / tau;
        let gap = dot(&it.s, &it.z);
        let pres = (norm(&r2) / resy0).max(norm(&r3) / resz0) / tau;
        let dres = norm(&r1) / resx0 / tau;
        let gap_res = gap / (tau * tau) / pcost.abs().max(1.0);
        let residuals = Residuals {
            primal: pres,
            dual: dres,
            gap: gap_res.max((pcost - dcost).abs() / pcost.abs().max(1.0)),
        };
        debug!(
            "iter {iter:3}: pcost {pcost:+.6e} dcost {dcost:+.6e} pres {pres:.2e} dres {dres:.2e} gap {gap_res:.2e} tau {tau:.2e} kappa {:.2e}",
            it.kappa
        );

        let unscale = |v: &[f64]| v.iter().map(|a| a / tau).collect::<Vec<_>>();
        if residuals.below(settings.tol) {
            return finish(
                SolveStatus::Optimal,
                unscale(&it.x),
                unscale(&it.y),
                unscale(&it.z),
                unscale(&it.s),
                residuals,
                iter,
                None,
            );
        }
        if hz + by < 0.0 {
            let pinf = norm(&hresx) / resx0 / (-hz - by);
            if pinf <= settings.tol {
                let f = 1.0 / (-hz - by);
                return finish(
                    SolveStatus::PrimalInfeasible,
                    vec![0.0; st.n],
                    it.y.iter().map(|v| v * f).collect(),
                    it.z.iter().map(|v| v * f).collect(),
                    vec![0.0; st.m],
                    residuals,
                    iter,
                    Some(format!(
                        "dual ray with h'z + b'y = -1 and |A'y + G'z| = {:.3e}",
                        norm(&hresx) * f
                    )),
                );
            }
        }
        if cx < 0.0 {
            let gxs: Vec<f64> = (0..st.m).map(|i| gx[i] + it.s[i]).collect();
            let dinf = (norm(&ax) / resy0).max(norm(&gxs) / resz0) / (-cx);
            if dinf <= settings.tol {
                let f = 1.0 / (-cx);
                return finish(
                    SolveStatus::DualInfeasible,
                    it.x.iter().map(|v| v * f).collect(),
                    vec![0.0; st.p],
                    vec![0.0; st.m],
                    it.s.iter().map(|v| v * f).collect(),
                    residuals,
                    iter,
                    Some("primal ray with c'x = -1".into()),
                );
            }
        }
        let score = residuals.max();
        if best.as_ref().is_none_or(|b| score < b.score) && score.is_finite() {
            last_improvement = iter;
            best = Some(Candidate {
                score,
                x: unscale(&it.x),
                y: unscale(&it.y),
                z: unscale(&it.z),
                s: unscale(&it.s),
                residuals,
            });
        }
        let give_up = |status: SolveStatus, why: &str, best: Option<Candidate>| {
            let b = best.expect("at least one iterate recorded");
            let status = if b.residuals.below(settings.reduced_tol) {
                SolveStatus::NearOptimal
            } else {
                status
            };
            finish(
                status,
                b.x,
                b.y,
                b.z,
                b.s,
                b.residuals,
                iter,
                Some(why.to_string()),
            )
        };
        if iter == settings.max_iter {
            return give_up(SolveStatus::MaxIterations, "iteration limit reached", best);
        }
        if let Some(b) = &best {
            let near = b.score <= settings.reduced_tol;
            if near && (score > 1e3 * b.score || iter - last_improvement >= STALL_ITERATIONS) {
                return give_up(SolveStatus::NumericalError, "progress stalled", best);
            }
        }

        let kkt = match Kkt::factor(&st, &layout, &w) {
            Some(k) => k,
            None => {
                return give_up(
                    SolveStatus::NumericalError,
                    "KKT factorization failed",
                    best,
                )
            }
        };
        let lambda = w.lambda(&layout);
        let lambda_sq = layout.jordan(&lambda, &lambda);
        let mu = (gap + it.tau * it.kappa) / (layout.degree as f64 + 1.0);

        let (x1, y1, z1) = kkt.solve(&neg(&st.c), &st.b, &st.h);
        let denom = it.kappa / it.tau - (dot(&st.c, &x1) + dot(&st.b, &y1) + dot(&st.h, &z1));

        let direction = |xi: &[f64], xi_tau: f64| {
            let u = w.lambda_solve(&layout, xi);
            let wtu = w.wt(&layout, &u);
            let rhs3: Vec<f64> = (0..st.m).map(|i| r3[i] - wtu[i]).collect();
            let (mut dx, mut dy, mut dz) = kkt.solve(&neg(&r1), &r2, &rhs3);
            let dtau =
                (-r4 + xi_tau / it.tau + dot(&st.c, &dx) + dot(&st.b, &dy) + dot(&st.h, &dz))
                    / denom;
            add(&mut dx, &x1, dtau);
            add(&mut dy, &y1, dtau);
            add(&mut dz, &z1, dtau);
            let wtwdz = w.wtw(&layout, &dz);
            let ds: Vec<f64> = (0..st.m).map(|i| wtu[i] - wtwdz[i]).collect();
            let dkappa = (xi_tau - it.kappa * dtau) / it.tau;
            (dx, dy, dz, ds, dtau, dkappa)
        };
        let max_step = |ds_t: &[f64], dz_t: &[f64], dtau: f64, dkappa: f64| {
            let mut a = w.max_step(&layout, ds_t).min(w.max_step(&layout, dz_t));
            if dtau < 0.0 {
                a = a.min(-it.tau / dtau);
            }
            if dkappa < 0.0 {
                a = a.min(-it.kappa / dkappa);
            }
            a
        };

        // Predictor.
        let xi_a: Vec<f64> = neg(&lambda_sq);
        let (_, _, dz_a, ds_a, dtau_a, dkappa_a) = direction(&xi_a, -it.tau * it.kappa);
        let ds_at = w.winv_t(&layout, &ds_a);
        let dz_at = w.w(&layout, &dz_a);
        let alpha_a = max_step(&ds_at, &dz_at, dtau_a, dkappa_a).min(1.0);
        let sigma = (1.0 - alpha_a).powi(3);

        // Corrector.
        let corr = layout.jordan(&ds_at, &dz_at);
        let xi: Vec<f64> = (0..st.m)
            .map(|i| -lambda_sq[i] + sigma * mu * e[i] - corr[i])
            .collect();
        let xi_tau = -it.tau * it.kappa + sigma * mu - dtau_a * dkappa_a;
        let (dx, dy, dz, ds, dtau, dkappa) = direction(&xi, xi_tau);
        let ds_t = w.winv_t(&layout, &ds);
        let dz_t = w.w(&layout, &dz);
        let alpha = (settings.step_fraction * max_step(&ds_t, &dz_t, dtau, dkappa)).min(1.0);
        if !(alpha > 0.0) || !alpha.is_finite() {
            return give_up(
                SolveStatus::NumericalError,
                "no progress along search direction",
                best,
            );
        }

        drop(kkt);
        add(&mut it.x, &dx, alpha);
        add(&mut it.y, &dy, alpha);
        if w.step(&layout, &ds_t, &dz_t, alpha).is_none() {
            return give_up(SolveStatus::NumericalError, "iterate left the cone", best);
        }
        (it.s, it.z) = w.points(&layout);
        it.tau += alpha * dtau;
        it.kappa += alpha * dkappa;
    }
    unreachable!("loop returns on the final iteration")
}
