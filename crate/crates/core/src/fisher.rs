//! Fisher information and Cramér-Rao bounds for multi-target angle, range
//! and reflectivity estimation.
//!
//! Parameters are always ordered as
//! `[theta_1..theta_L, d_1..d_L, bR_1..bR_L, bI_1..bI_L]`.
//!
//! Two independent routes are provided: [`fim_direct`] works from the
//! derivative matrices of the echo mean for a concrete symbol block, and
//! [`fim_from_covariance`] evaluates the Hadamard-product block formulas
//! from the transmit covariance. The second is affine in the covariance,
//! which is what the optimizer consumes through [`FimMap`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{steering_derivative, steering_vector, ArrayConfig, Target, Wrt};
use crate::error::{Error, Result};
use crate::linalg::{
    check_hermitian, hermitian_basis, hermitian_coords, symmetric_eigen, CMat, CVec, RMat, J,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParameterKind {
    Angle,
    Range,
    ReflectReal,
    ReflectImag,
}

impl ParameterKind {
    pub const ALL: [ParameterKind; 4] = [
        ParameterKind::Angle,
        ParameterKind::Range,
        ParameterKind::ReflectReal,
        ParameterKind::ReflectImag,
    ];

    fn block(self) -> usize {
        match self {
            ParameterKind::Angle => 0,
            ParameterKind::Range => 1,
            ParameterKind::ReflectReal => 2,
            ParameterKind::ReflectImag => 3,
        }
    }
}

/// Layout of the unknown parameter vector for `L` targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterVector {
    pub n_targets: usize,
}

impl ParameterVector {
    pub fn new(n_targets: usize) -> Self {
        Self { n_targets }
    }

    pub fn len(&self) -> usize {
        4 * self.n_targets
    }

    pub fn is_empty(&self) -> bool {
        self.n_targets == 0
    }

    pub fn index(&self, kind: ParameterKind, target: usize) -> usize {
        kind.block() * self.n_targets + target
    }

    pub fn kind_of(&self, index: usize) -> (ParameterKind, usize) {
        (
            ParameterKind::ALL[index / self.n_targets],
            index % self.n_targets,
        )
    }

    /// Stacks the true parameter values of the targets.
    pub fn values(targets: &[Target]) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * targets.len());
        out.extend(targets.iter().map(|t| t.location.angle));
        out.extend(targets.iter().map(|t| t.location.range));
        out.extend(targets.iter().map(|t| t.reflectivity.re));
        out.extend(targets.iter().map(|t| t.reflectivity.im));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FimMatrix {
    pub entries: RMat,
    pub noise_variance: f64,
    pub symbol_count: usize,
}

impl FimMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }
}

/// Echo mean and its derivative with respect to every parameter.
#[derive(Debug, Clone)]
pub struct MeanDerivatives {
    pub mean: CMat,
    /// One `N x S` matrix per parameter, in [`ParameterVector`] order.
    pub derivatives: Vec<CMat>,
}

/// Steering vectors and derivatives of one target (transmit and receive
/// arrays share a geometry, so `a = v`).
#[derive(Debug, Clone)]
pub(crate) struct TargetResponse {
    pub a: CVec,
    pub v: CVec,
    pub a_angle: CVec,
    pub v_angle: CVec,
    pub a_range: CVec,
    pub v_range: CVec,
    pub b: Complex64,
}

impl TargetResponse {
    pub fn new(t: &Target, cfg: &ArrayConfig) -> Result<Self> {
        let v = steering_vector(&t.location, cfg)?.entries;
        let dv_angle = steering_derivative(&t.location, cfg, Wrt::Angle)?;
        let dv_range = steering_derivative(&t.location, cfg, Wrt::Range)?;
        Ok(Self {
            a: v.clone(),
            v,
            a_angle: dv_angle.clone(),
            v_angle: dv_angle,
            a_range: dv_range.clone(),
            v_range: dv_range,
            b: t.reflectivity,
        })
    }
}

fn responses(targets: &[Target], cfg: &ArrayConfig) -> Result<Vec<TargetResponse>> {
    if targets.is_empty() {
        return Err(Error::invalid("at least one target is required"));
    }
    targets
        .iter()
        .map(|t| TargetResponse::new(t, cfg))
        .collect()
}

fn outer_t(p: &CVec, q: &CVec) -> CMat {
    p * q.transpose()
}

pub fn mean_and_derivatives(
    targets: &[Target],
    x: &CMat,
    cfg: &ArrayConfig,
) -> Result<MeanDerivatives> {
    let n = cfg.n_elements();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "symbol block rows",
            expected: n,
            found: x.nrows(),
        });
    }
    let resp = responses(targets, cfg)?;
    let l = resp.len();
    let s = x.ncols();
    let mut mean = CMat::zeros(n, s);
    let mut derivs = vec![CMat::zeros(n, s); 4 * l];
    for (i, r) in resp.iter().enumerate() {
        let av = outer_t(&r.a, &r.v) * x;
        mean += &av * r.b;
        let d_angle = (outer_t(&r.a_angle, &r.v) + outer_t(&r.a, &r.v_angle)) * x;
        let d_range = (outer_t(&r.a_range, &r.v) + outer_t(&r.a, &r.v_range)) * x;
        derivs[i] = d_angle * r.b;
        derivs[l + i] = d_range * r.b;
        derivs[3 * l + i] = &av * J;
        derivs[2 * l + i] = av;
    }
    Ok(MeanDerivatives {
        mean,
        derivatives: derivs,
    })
}

/// `[F]_ij = 2 Re tr(dmu_i^H C^-1 dmu_j)` with `C = sigma^2 I`.
pub fn fim_direct(
    targets: &[Target],
    x: &CMat,
    noise_variance: f64,
    cfg: &ArrayConfig,
) -> Result<FimMatrix> {
    check_noise(noise_variance)?;
    let md = mean_and_derivatives(targets, x, cfg)?;
    let p = md.derivatives.len();
    let mut f = RMat::zeros(p, p);
    for i in 0..p {
        for k in i..p {
            let g = md.derivatives[i].dotc(&md.derivatives[k]);
            let v = 2.0 * g.re / noise_variance;
            f[(i, k)] = v;
            f[(k, i)] = v;
        }
    }
    Ok(FimMatrix {
        entries: f,
        noise_variance,
        symbol_count: x.ncols(),
    })
}

fn check_noise(noise_variance: f64) -> Result<()> {
    if !(noise_variance > 0.0 && noise_variance.is_finite()) {
        return Err(Error::invalid(format!(
            "noise variance must be positive, got {noise_variance}"
        )));
    }
    Ok(())
}

fn stack(cols: impl Iterator<Item = CVec>, n: usize) -> CMat {
    let cols: Vec<CVec> = cols.collect();
    CMat::from_fn(n, cols.len(), |i, k| cols[k][i])
}

/// Stacked response matrices of all targets.
struct Stacked {
    a: CMat,
    v: CMat,
    a_dot: [CMat; 2],
    v_dot: [CMat; 2],
    b: Vec<Complex64>,
}

impl Stacked {
    fn new(resp: &[TargetResponse], n: usize) -> Self {
        Self {
            a: stack(resp.iter().map(|r| r.a.clone()), n),
            v: stack(resp.iter().map(|r| r.v.clone()), n),
            a_dot: [
                stack(resp.iter().map(|r| r.a_angle.clone()), n),
                stack(resp.iter().map(|r| r.a_range.clone()), n),
            ],
            v_dot: [
                stack(resp.iter().map(|r| r.v_angle.clone()), n),
                stack(resp.iter().map(|r| r.v_range.clone()), n),
            ],
            b: resp.iter().map(|r| r.b).collect(),
        }
    }
}

/// `Q2^H R^* Q1`, i.e. entry `(l, p) = q1_p^T R q2_l^*`.
fn quad(q2: &CMat, r_conj: &CMat, q1: &CMat) -> CMat {
    q2.adjoint() * r_conj * q1
}

/// Scales rows by `conj(b_l)` and columns by `b_p`.
fn weight_rows_cols(m: &CMat, rows: Option<&[Complex64]>, cols: Option<&[Complex64]>) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |l, p| {
        let mut z = m[(l, p)];
        if let Some(b) = rows {
            z *= b[l].conj();
        }
        if let Some(b) = cols {
            z *= b[p];
        }
        z
    })
}

/// Complex Gram blocks `J_ab[l, p] = tr(dmu_{a,l}^H dmu_{b,p})` for
/// `a, b in {angle, range, bR}` computed from the covariance.
struct GramBlocks {
    /// indexed [alpha][beta] for alpha, beta in {angle, range}
    geo: [[CMat; 2]; 2],
    /// geometric parameter vs bR
    geo_b: [CMat; 2],
    bb: CMat,
}

fn gram_blocks(st: &Stacked, r: &CMat, symbols: f64) -> GramBlocks {
    let rc = r.map(|z| z.conj());
    let vv = quad(&st.v, &rc, &st.v);
    let aa = st.a.adjoint() * &st.a;
    let b = st.b.as_slice();
    let geo_pair = |al: usize, be: usize| {
        let t1 = (st.a_dot[al].adjoint() * &st.a_dot[be]).component_mul(&vv);
        let t2 = (st.a_dot[al].adjoint() * &st.a).component_mul(&quad(&st.v, &rc, &st.v_dot[be]));
        let t3 = (st.a.adjoint() * &st.a_dot[be]).component_mul(&quad(&st.v_dot[al], &rc, &st.v));
        let t4 = aa.component_mul(&quad(&st.v_dot[al], &rc, &st.v_dot[be]));
        weight_rows_cols(&(t1 + t2 + t3 + t4), Some(b), Some(b)) * Complex64::new(symbols, 0.0)
    };
    let geo_b = |al: usize| {
        let t1 = (st.a_dot[al].adjoint() * &st.a).component_mul(&vv);
        let t2 = aa.component_mul(&quad(&st.v_dot[al], &rc, &st.v));
        weight_rows_cols(&(t1 + t2), Some(b), None) * Complex64::new(symbols, 0.0)
    };
    GramBlocks {
        geo: [
            [geo_pair(0, 0), geo_pair(0, 1)],
            [geo_pair(1, 0), geo_pair(1, 1)],
        ],
        geo_b: [geo_b(0), geo_b(1)],
        bb: aa.component_mul(&vv) * Complex64::new(symbols, 0.0),
    }
}

/// Assembles the real FIM from the complex blocks with the
/// `Re / -Im` sign pattern of the reflectivity columns.
fn assemble(gb: &GramBlocks, l: usize, scale: f64) -> RMat {
    let mut f = RMat::zeros(4 * l, 4 * l);
    let mut put = |row0: usize, col0: usize, m: &RMat| {
        for i in 0..l {
            for k in 0..l {
                f[(row0 + i, col0 + k)] = scale * m[(i, k)];
                f[(col0 + k, row0 + i)] = scale * m[(i, k)];
            }
        }
    };
    let re = |m: &CMat| m.map(|z| z.re);
    let neg_im = |m: &CMat| m.map(|z| -z.im);
    for al in 0..2 {
        for be in al..2 {
            put(al * l, be * l, &re(&gb.geo[al][be]));
        }
        put(al * l, 2 * l, &re(&gb.geo_b[al]));
        put(al * l, 3 * l, &neg_im(&gb.geo_b[al]));
    }
    put(2 * l, 2 * l, &re(&gb.bb));
    put(3 * l, 3 * l, &re(&gb.bb));
    put(2 * l, 3 * l, &neg_im(&gb.bb));
    f
}

/// FIM of a block whose sample covariance is `r` (`R_x = X X^H / S`).
pub fn fim_from_covariance(
    targets: &[Target],
    r: &CMat,
    symbol_count: usize,
    noise_variance: f64,
    cfg: &ArrayConfig,
) -> Result<FimMatrix> {
    check_noise(noise_variance)?;
    let n = cfg.n_elements();
    if r.nrows() != n || r.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "covariance size",
            expected: n,
            found: r.nrows(),
        });
    }
    check_hermitian(r, 1e-10)?;
    let resp = responses(targets, cfg)?;
    let st = Stacked::new(&resp, n);
    let gb = gram_blocks(&st, r, symbol_count as f64);
    Ok(FimMatrix {
        entries: assemble(&gb, resp.len(), 2.0 / noise_variance),
        noise_variance,
        symbol_count,
    })
}

/// The FIM as a linear map of the real coordinates of the covariance
/// (see [`crate::linalg::hermitian_coords`]).
#[derive(Debug, Clone)]
pub struct FimMap {
    pub basis: Vec<RMat>,
    pub dim: usize,
}

impl FimMap {
    pub fn new(
        targets: &[Target],
        symbol_count: usize,
        noise_variance: f64,
        cfg: &ArrayConfig,
    ) -> Result<Self> {
        check_noise(noise_variance)?;
        let n = cfg.n_elements();
        let resp = responses(targets, cfg)?;
        let st = Stacked::new(&resp, n);
        let l = resp.len();
        let basis = hermitian_coords(n)
            .into_iter()
            .map(|c| {
                let gb = gram_blocks(&st, &hermitian_basis(n, c), symbol_count as f64);
                assemble(&gb, l, 2.0 / noise_variance)
            })
            .collect();
        Ok(Self { basis, dim: 4 * l })
    }

    pub fn apply(&self, params: &[f64]) -> RMat {
        let mut f = RMat::zeros(self.dim, self.dim);
        for (m, &p) in self.basis.iter().zip(params) {
            if p != 0.0 {
                f += m * p;
            }
        }
        f
    }
}

/// Default ridge `1e-10 * trace(F) / dim`.
pub fn default_ridge(f: &FimMatrix) -> f64 {
    1e-10 * f.trace().max(0.0) / f.dim().max(1) as f64
}

/// Diagonal of `(F + ridge I)^-1`.
pub fn crb_diagonal(f: &FimMatrix, ridge: f64) -> Result<Vec<f64>> {
    crb_diagonal_of(&f.entries, ridge)
}

pub fn crb_diagonal_of(f: &RMat, ridge: f64) -> Result<Vec<f64>> {
    let p = f.nrows();
    let m = f + RMat::identity(p, p) * ridge;
    let (g, d) = equilibrate(&m)?;
    let (vals, _) = symmetric_eigen(&g);
    check_condition(vals[0], vals[p - 1])?;
    let chol = g.cholesky().ok_or(Error::SingularFisher {
        condition: vals[p - 1] / vals[0],
    })?;
    let inv = chol.inverse();
    Ok((0..p).map(|i| inv[(i, i)] / (d[i] * d[i])).collect())
}

/// `D^-1/2 F D^-1/2` with `D = diag(F)`, and the square roots `D^1/2`.
/// Conditioning of the result does not depend on parameter units.
pub fn equilibrate(f: &RMat) -> Result<(RMat, Vec<f64>)> {
    let p = f.nrows();
    let d: Vec<f64> = (0..p).map(|i| f[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::SingularFisher {
            condition: f64::INFINITY,
        });
    }
    let d: Vec<f64> = d.into_iter().map(f64::sqrt).collect();
    let g = RMat::from_fn(p, p, |i, j| f[(i, j)] / (d[i] * d[j]));
    Ok(((&g + g.transpose()) * 0.5, d))
}

/// Rejects an equilibrated spectrum `[lo, hi]` that is numerically singular.
pub fn check_condition(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 1e-14 * hi.abs()) || !(hi > 0.0) {
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        return Err(Error::SingularFisher { condition });
    }
    Ok(())
}

pub fn root_crb(crb: &[f64]) -> Vec<f64> {
    crb.iter().map(|v| v.max(0.0).sqrt()).collect()
}
