//! Cone algebra: svec packing, Jordan products and Nesterov-Todd scaling.

use std::f64::consts::SQRT_2;

use nalgebra::DVector;

use super::Cone;
use crate::linalg::{symmetric_eigen, RMat};

pub fn svec_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry `(i, j)`, `i >= j`, in the column-major lower triangle.
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j && i < n);
    j * (2 * n - j + 1) / 2 + (i - j)
}

pub fn mat_from_svec(n: usize, v: &[f64]) -> RMat {
    let mut m = RMat::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        m[(j, j)] = v[k];
        k += 1;
        for i in j + 1..n {
            let x = v[k] / SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

pub fn svec_from_mat(m: &RMat) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(svec_dim(n));
    for j in 0..n {
        v.push(m[(j, j)]);
        for i in j + 1..n {
            v.push(SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    v
}

fn write_svec(m: &RMat, out: &mut [f64]) {
    let n = m.nrows();
    let mut k = 0;
    for j in 0..n {
        out[k] = m[(j, j)];
        k += 1;
        for i in j + 1..n {
            out[k] = SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]);
            k += 1;
        }
    }
}

/// Cone layout with precomputed offsets.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub cones: Vec<Cone>,
    pub offsets: Vec<usize>,
    pub dim: usize,
    pub degree: usize,
}

impl Layout {
    pub fn new(cones: &[Cone]) -> Self {
        let mut offsets = Vec::with_capacity(cones.len());
        let mut off = 0;
        for c in cones {
            offsets.push(off);
            off += c.dim();
        }
        Self {
            cones: cones.to_vec(),
            offsets,
            dim: off,
            degree: cones.iter().map(|c| c.degree()).sum(),
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = (Cone, std::ops::Range<usize>)> + '_ {
        self.cones
            .iter()
            .zip(&self.offsets)
            .map(|(c, &o)| (*c, o..o + c.dim()))
    }

    /// Identity element `e`.
    pub fn identity(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.dim];
        for (cone, r) in self.blocks() {
            match cone {
                Cone::NonNeg(_) => e[r].iter_mut().for_each(|v| *v = 1.0),
                Cone::Psd(n) => {
                    for j in 0..n {
                        e[r.start + svec_index(n, j, j)] = 1.0;
                    }
                }
            }
        }
        e
    }

    /// Largest `t` such that `v + t e` would lie on the cone boundary,
    /// i.e. minus the smallest "eigenvalue" of `v`.
    pub fn boundary_shift(&self, v: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (cone, r) in self.blocks() {
            let lo = match cone {
                Cone::NonNeg(_) => v[r].iter().cloned().fold(f64::INFINITY, f64::min),
                Cone::Psd(n) => symmetric_eigen(&mat_from_svec(n, &v[r])).0[0],
            };
            worst = worst.max(-lo);
        }
        worst
    }

    /// Jordan product `u o v`.
    pub fn jordan(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (cone, r) in self.blocks() {
            match cone {
                Cone::NonNeg(_) => {
                    for i in r {
                        out[i] = u[i] * v[i];
                    }
                }
                Cone::Psd(n) => {
                    let a = mat_from_svec(n, &u[r.clone()]);
                    let b = mat_from_svec(n, &v[r.clone()]);
                    let p = &a * &b;
                    let sym = (&p + p.transpose()) * 0.5;
                    write_svec(&sym, &mut out[r]);
                }
            }
        }
        out
    }
}

/// Nesterov-Todd scaling of one cone block.
#[derive(Debug, Clone)]
pub(crate) enum BlockScaling {
    /// `W = diag(d)`, `d = sqrt(s / z)`.
    NonNeg { d: Vec<f64>, lambda: Vec<f64> },
    /// `W(u) = R' u R`, with `R' Z R = R^-1 S R^-T = diag(lambda)`.
    Psd {
        n: usize,
        r: RMat,
        rinv: RMat,
        lambda: Vec<f64>,
        /// `(R R')^-1`, so that `(W'W)^-1 (u) = P u P`.
        p: RMat,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    pub blocks: Vec<BlockScaling>,
}

impl Scaling {
    /// Computes the scaling point of interior `s`, `z`. Returns `None` when
    /// either is numerically outside its cone.
    pub fn compute(layout: &Layout, s: &[f64], z: &[f64]) -> Option<Self> {
        let mut blocks = Vec::with_capacity(layout.cones.len());
        for (cone, r) in layout.blocks() {
            match cone {
                Cone::NonNeg(_) => {
                    let mut d = Vec::with_capacity(r.len());
                    let mut lambda = Vec::with_capacity(r.len());
                    for i in r {
                        if !(s[i] > 0.0 && z[i] > 0.0) {
                            return None;
                        }
                        d.push((s[i] / z[i]).sqrt());
                        lambda.push((s[i] * z[i]).sqrt());
                    }
                    blocks.push(BlockScaling::NonNeg { d, lambda });
                }
                Cone::Psd(n) => {
                    let sm = mat_from_svec(n, &s[r.clone()]);
                    let zm = mat_from_svec(n, &z[r.clone()]);
                    let (r_mat, rinv, lambda) = nt_psd(&sm, &zm)?;
                    let p = rinv.transpose() * &rinv;
                    blocks.push(BlockScaling::Psd {
                        n,
                        r: r_mat,
                        rinv,
                        lambda,
                        p,
                    });
                }
            }
        }
        Some(Self { blocks })
    }

    /// Moves to `s + alpha ds`, `z + alpha dz` given the scaled directions
    /// `ds_t = W^-T ds` and `dz_t = W dz`, updating the scaling from the
    /// scaled iterates `lambda + alpha ds_t` and `lambda + alpha dz_t`.
    pub fn step(&mut self, layout: &Layout, ds_t: &[f64], dz_t: &[f64], alpha: f64) -> Option<()> {
        for (b, (_, rg)) in self.blocks.iter_mut().zip(layout.blocks()) {
            match b {
                BlockScaling::NonNeg { d, lambda } => {
                    for (k, i) in rg.enumerate() {
                        let st = lambda[k] + alpha * ds_t[i];
                        let zt = lambda[k] + alpha * dz_t[i];
                        if !(st > 0.0 && zt > 0.0) {
                            return None;
                        }
                        // s = d st, z = zt / d.
                        d[k] *= (st / zt).sqrt();
                        lambda[k] = (st * zt).sqrt();
                    }
                }
                BlockScaling::Psd {
                    n,
                    r,
                    rinv,
                    lambda,
                    p,
                } => {
                    let mut st = mat_from_svec(*n, &ds_t[rg.clone()]) * alpha;
                    let mut zt = mat_from_svec(*n, &dz_t[rg.clone()]) * alpha;
                    for (k, l) in lambda.iter().enumerate() {
                        st[(k, k)] += l;
                        zt[(k, k)] += l;
                    }
                    let (rt, rtinv, lt) = nt_psd(&st, &zt)?;
                    *r = &*r * rt;
                    *rinv = rtinv * &*rinv;
                    *lambda = lt;
                    *p = rinv.transpose() * &*rinv;
                }
            }
        }
        Some(())
    }

    /// `(s, z)` recovered from the scaling: `s = W' lambda`, `z = W^-1 lambda`.
    pub fn points(&self, layout: &Layout) -> (Vec<f64>, Vec<f64>) {
        let mut s = vec![0.0; layout.dim];
        let mut z = vec![0.0; layout.dim];
        for (b, (_, rg)) in self.blocks.iter().zip(layout.blocks()) {
            match b {
                BlockScaling::NonNeg { d, lambda } => {
                    for (k, i) in rg.enumerate() {
                        s[i] = d[k] * lambda[k];
                        z[i] = lambda[k] / d[k];
                    }
                }
                BlockScaling::Psd {
                    r, rinv, lambda, ..
                } => {
                    let l = DVector::from_column_slice(lambda);
                    let mut rl = r.clone();
                    let mut ril = rinv.transpose();
                    for (k, (mut a, mut b)) in
                        rl.column_iter_mut().zip(ril.column_iter_mut()).enumerate()
                    {
                        a *= l[k].sqrt();
                        b *= l[k].sqrt();
                    }
                    write_svec(&(&rl * rl.transpose()), &mut s[rg.clone()]);
                    write_svec(&(&ril * ril.transpose()), &mut z[rg]);
                }
            }
        }
        (s, z)
    }

    /// Scaled point `lambda` as a cone vector.
    pub fn lambda(&self, layout: &Layout) -> Vec<f64> {
        let mut out = vec![0.0; layout.dim];
        for (b, (_, r)) in self.blocks.iter().zip(layout.blocks()) {
            match b {
                BlockScaling::NonNeg { lambda, .. } => out[r].copy_from_slice(lambda),
                BlockScaling::Psd { n, lambda, .. } => {
                    for (j, l) in lambda.iter().enumerate() {
                        out[r.start + svec_index(*n, j, j)] = *l;
                    }
                }
            }
        }
        out
    }

    fn map(&self, layout: &Layout, u: &[f64], op: Op) -> Vec<f64> {
        let mut out = vec![0.0; layout.dim];
        for (b, (_, r)) in self.blocks.iter().zip(layout.blocks()) {
            match b {
                BlockScaling::NonNeg { d, .. } => {
                    for (k, i) in r.enumerate() {
                        out[i] = match op {
                            Op::W | Op::Wt => d[k] * u[i],
                            Op::WinvT => u[i] / d[k],
                            Op::WtWinv => u[i] / (d[k] * d[k]),
                            Op::WtW => u[i] * d[k] * d[k],
                        };
                    }
                }
                BlockScaling::Psd {
                    n, r: rm, rinv, p, ..
                } => {
                    let m = mat_from_svec(*n, &u[r.clone()]);
                    let res = match op {
                        Op::W => rm.transpose() * m * rm,
                        Op::Wt => rm * m * rm.transpose(),
                        Op::WinvT => rinv * m * rinv.transpose(),
                        Op::WtWinv => p * m * p,
                        Op::WtW => {
                            let q = rm * rm.transpose();
                            &q * m * &q
                        }
                    };
                    write_svec(&res, &mut out[r]);
                }
            }
        }
        out
    }

    pub fn w(&self, layout: &Layout, u: &[f64]) -> Vec<f64> {
        self.map(layout, u, Op::W)
    }

    pub fn wt(&self, layout: &Layout, u: &[f64]) -> Vec<f64> {
        self.map(layout, u, Op::Wt)
    }

    pub fn winv_t(&self, layout: &Layout, u: &[f64]) -> Vec<f64> {
        self.map(layout, u, Op::WinvT)
    }

    /// `(W'W)^-1 u`.
    pub fn wtw_inv(&self, layout: &Layout, u: &[f64]) -> Vec<f64> {
        self.map(layout, u, Op::WtWinv)
    }

    pub fn wtw(&self, layout: &Layout, u: &[f64]) -> Vec<f64> {
        self.map(layout, u, Op::WtW)
    }

    /// `lambda \ xi`, the inverse of `u -> lambda o u`.
    pub fn lambda_solve(&self, layout: &Layout, xi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; layout.dim];
        for (b, (_, r)) in self.blocks.iter().zip(layout.blocks()) {
            match b {
                BlockScaling::NonNeg { lambda, .. } => {
                    for (k, i) in r.enumerate() {
                        out[i] = xi[i] / lambda[k];
                    }
                }
                BlockScaling::Psd { n, lambda, .. } => {
                    let mut k = r.start;
                    for j in 0..*n {
                        for i in j..*n {
                            out[k] = 2.0 * xi[k] / (lambda[i] + lambda[j]);
                            k += 1;
                        }
                    }
                }
            }
        }
        out
    }

    /// Largest `alpha` with `lambda + alpha * du` in the cone (infinite if
    /// unbounded).
    pub fn max_step(&self, layout: &Layout, du: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        for (b, (_, r)) in self.blocks.iter().zip(layout.blocks()) {
            match b {
                BlockScaling::NonNeg { lambda, .. } => {
                    for (k, i) in r.enumerate() {
                        if du[i] < 0.0 {
                            alpha = alpha.min(-lambda[k] / du[i]);
                        }
                    }
                }
                BlockScaling::Psd { n, lambda, .. } => {
                    let mut m = mat_from_svec(*n, &du[r]);
                    for i in 0..*n {
                        for j in 0..*n {
                            m[(i, j)] /= (lambda[i] * lambda[j]).sqrt();
                        }
                    }
                    let lo = symmetric_eigen(&m).0[0];
                    if lo < 0.0 {
                        alpha = alpha.min(-1.0 / lo);
                    }
                }
            }
        }
        alpha
    }
}

/// NT scaling of one PSD pair: `R` and `R^-1` with
/// `R' Z R = R^-1 S R^-T = diag(lambda)`.
fn nt_psd(sm: &RMat, zm: &RMat) -> Option<(RMat, RMat, Vec<f64>)> {
    let n = sm.nrows();
    let ls = sm.clone().cholesky()?.l();
    let lz = zm.clone().cholesky()?.l();
    let m = lz.transpose() * &ls;
    let svd = m.svd(false, true);
    let vt = svd.v_t?;
    let lambda: Vec<f64> = svd.singular_values.iter().cloned().collect();
    if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return None;
    }
    // R = Ls V diag(lambda)^-1/2
    let mut r_mat = &ls * vt.transpose();
    for (k, mut col) in r_mat.column_iter_mut().enumerate() {
        col /= lambda[k].sqrt();
    }
    // R^-1 = diag(lambda)^1/2 V' Ls^-1
    let ls_inv = ls.solve_lower_triangular(&RMat::identity(n, n))?;
    let mut rinv = vt * ls_inv;
    for (k, mut row) in rinv.row_iter_mut().enumerate() {
        row *= lambda[k].sqrt();
    }
    Some((r_mat, rinv, lambda))
}

#[derive(Clone, Copy)]
enum Op {
    W,
    Wt,
    WinvT,
    WtWinv,
    WtW,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> RMat {
        let g = RMat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose() + RMat::identity(n, n) * 0.2
    }

    #[test]
    fn svec_indexing_is_column_major_lower() {
        let n = 4;
        let mut k = 0;
        for j in 0..n {
            for i in j..n {
                assert_eq!(svec_index(n, i, j), k);
                k += 1;
            }
        }
        assert_eq!(k, svec_dim(n));
    }

    #[test]
    fn svec_preserves_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_pd(&mut rng, 5);
        let b = random_pd(&mut rng, 5);
        let ip: f64 = svec_from_mat(&a)
            .iter()
            .zip(svec_from_mat(&b))
            .map(|(x, y)| x * y)
            .sum();
        assert!((ip - (&a * &b).trace()).abs() < 1e-12);
        assert!((mat_from_svec(5, &svec_from_mat(&a)) - &a).norm() < 1e-14);
    }

    #[test]
    fn nt_scaling_maps_s_and_z_to_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layout = Layout::new(&[Cone::NonNeg(3), Cone::Psd(4)]);
        let mut s = vec![0.5, 2.0, 0.1];
        let mut z = vec![3.0, 0.2, 1.0];
        s.extend(svec_from_mat(&random_pd(&mut rng, 4)));
        z.extend(svec_from_mat(&random_pd(&mut rng, 4)));
        let w = Scaling::compute(&layout, &s, &z).unwrap();
        let lambda = w.lambda(&layout);
        let wz = w.w(&layout, &z);
        let ws = w.winv_t(&layout, &s);
        for i in 0..layout.dim {
            assert!((wz[i] - lambda[i]).abs() < 1e-10, "Wz at {i}");
            assert!((ws[i] - lambda[i]).abs() < 1e-10, "W^-T s at {i}");
        }
        // (W'W)^-1 undoes W'W, and W'W z = s.
        let back = w.wtw_inv(&layout, &w.wtw(&layout, &z));
        let wtwz = w.wtw(&layout, &z);
        for i in 0..layout.dim {
            assert!((back[i] - z[i]).abs() < 1e-9);
            assert!((wtwz[i] - s[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn lambda_solve_inverts_jordan_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layout = Layout::new(&[Cone::NonNeg(2), Cone::Psd(3)]);
        let mut s = vec![1.0, 4.0];
        let mut z = vec![2.0, 0.5];
        s.extend(svec_from_mat(&random_pd(&mut rng, 3)));
        z.extend(svec_from_mat(&random_pd(&mut rng, 3)));
        let w = Scaling::compute(&layout, &s, &z).unwrap();
        let lambda = w.lambda(&layout);
        let xi: Vec<f64> = (0..layout.dim).map(|i| (i as f64 * 0.37).sin()).collect();
        let u = w.lambda_solve(&layout, &xi);
        let back = layout.jordan(&lambda, &u);
        for i in 0..layout.dim {
            assert!((back[i] - xi[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn max_step_hits_boundary() {
        let layout = Layout::new(&[Cone::Psd(2)]);
        let s = svec_from_mat(&RMat::identity(2, 2));
        let w = Scaling::compute(&layout, &s, &s).unwrap();
        let du = svec_from_mat(&RMat::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 1.0]));
        assert!((w.max_step(&layout, &du) - 0.5).abs() < 1e-12);
        assert_eq!(
            layout.boundary_shift(&svec_from_mat(&RMat::from_row_slice(
                2,
                2,
                &[3.0, 0.0, 0.0, -1.0]
            ))),
            1.0
        );
    }
}
