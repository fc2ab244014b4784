//! Transmit design: the symbol-level precoding program with a CRB epigraph,
//! the block-level precoding baseline, beampatterns and trade-off sweeps.

mod blp;
mod pattern;
mod slp;
mod sweep;

use log::warn;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::{user_channel, ArrayConfig, PolarPoint, Target};
use crate::ci::PskConstellation;
use crate::conic::{AffineExpr, ConicProgram, ConicSolution, Settings, SolveStatus};
use crate::error::{Error, Result};
use crate::fisher::{
    check_condition, crb_diagonal_of, equilibrate, fim_from_covariance, FimMap, ParameterKind,
    ParameterVector,
};
use crate::linalg::{hermitian_to_params, CMat, CVec, RMat};

pub use blp::{
    assemble_p2, data_matrix, design_blp, extract_beamformers, sinr_of_beamformers, BlpDesign,
    BlpFrontier, P2Objective, P2Program,
};
pub use pattern::{
    beampattern, beampattern_map, focusing_contrast, to_db_peak, PatternScale, PowerMap,
};
pub use slp::{
    assemble_p1, complete_waveform, design_slp, design_slp_with, normalization_factors, Census,
    Completion, Formulation, P1Layout, P1Program, SlpDesign,
};
pub use sweep::{tradeoff_sweep, PrecoderKind, TradeoffPoint};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub array: ArrayConfig,
    pub users: Vec<PolarPoint>,
    /// Constellation index sent to user `k` in slot `s`, `K` rows of `S`.
    pub symbol_schedule: Vec<Vec<usize>>,
    pub targets: Vec<Target>,
    /// `sigma_R^2`.
    pub sensing_noise: f64,
    /// `sigma_C^2`.
    pub comm_noise: f64,
    pub power_budget: f64,
    pub symbol_count: usize,
    pub constellation: PskConstellation,
}

impl Scene {
    /// Builds a scene whose symbol schedule is drawn uniformly from the
    /// constellation with `seed`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        array: ArrayConfig,
        users: Vec<PolarPoint>,
        targets: Vec<Target>,
        sensing_noise: f64,
        comm_noise: f64,
        power_budget: f64,
        symbol_count: usize,
        constellation: PskConstellation,
        seed: u64,
    ) -> Result<Self> {
        let schedule = random_schedule(users.len(), symbol_count, constellation.order(), seed);
        let scene = Self {
            array,
            users,
            symbol_schedule: schedule,
            targets,
            sensing_noise,
            comm_noise,
            power_budget,
            symbol_count,
            constellation,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn with_schedule(mut self, schedule: Vec<Vec<usize>>) -> Result<Self> {
        self.symbol_schedule = schedule;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::invalid("scene needs at least one user"));
        }
        if self.targets.is_empty() {
            return Err(Error::invalid("scene needs at least one target"));
        }
        if self.symbol_count == 0 {
            return Err(Error::invalid("symbol count must be positive"));
        }
        for (name, v) in [
            ("sensing noise", self.sensing_noise),
            ("communication noise", self.comm_noise),
            ("power budget", self.power_budget),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        for p in &self.users {
            p.validate()?;
        }
        for t in &self.targets {
            t.location.validate()?;
        }
        if self.symbol_schedule.len() != self.users.len() {
            return Err(Error::DimensionMismatch {
                context: "symbol schedule rows",
                expected: self.users.len(),
                found: self.symbol_schedule.len(),
            });
        }
        for row in &self.symbol_schedule {
            if row.len() != self.symbol_count {
                return Err(Error::DimensionMismatch {
                    context: "symbol schedule columns",
                    expected: self.symbol_count,
                    found: row.len(),
                });
            }
            if let Some(&q) = row.iter().find(|&&q| q >= self.constellation.order()) {
                return Err(Error::invalid(format!(
                    "symbol index {q} outside a {}-PSK alphabet",
                    self.constellation.order()
                )));
            }
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn n_elements(&self) -> usize {
        self.array.n_elements()
    }

    pub fn channels(&self) -> Result<Vec<CVec>> {
        self.users
            .iter()
            .map(|p| user_channel(p, &self.array))
            .collect()
    }

    pub fn symbol_phase(&self, user: usize, slot: usize) -> f64 {
        self.constellation.phase(self.symbol_schedule[user][slot])
    }
}

pub fn random_schedule(users: usize, slots: usize, order: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..users)
        .map(|_| {
            (0..slots)
                .map(|_| rng.random_range(0..order.max(1)))
                .collect()
        })
        .collect()
}

/// `NF_R` (sum of CRBs at the pure-sensing optimum) and `NF_C`
/// (the communication metric at the pure-communication optimum).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub sensing: f64,
    pub communication: f64,
}

impl Normalizers {
    pub fn validate(&self) -> Result<()> {
        if !(self.sensing > 0.0 && self.communication > 0.0)
            || !self.sensing.is_finite()
            || !self.communication.is_finite()
        {
            return Err(Error::invalid(format!(
                "normalizers must be positive, got NF_R = {}, NF_C = {}",
                self.sensing, self.communication
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignOptions {
    pub formulation: Formulation,
    pub solver: Settings,
    /// Largest accepted `N * S`.
    pub max_block_entries: usize,
    /// Seed for waveform completion and beamformer randomization.
    pub seed: u64,
    /// Relative width at which the bisection on `gamma` stops.
    pub bisection_tol: f64,
    /// Number of `gamma` grid intervals used by the baseline's trade-off.
    pub gamma_grid: usize,
    /// Golden-section steps refining the baseline's `gamma` per weight.
    pub golden_steps: usize,
    pub randomization_rounds: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            formulation: Formulation::Aggregated,
            solver: Settings::default(),
            max_block_entries: 8192,
            seed: 0,
            bisection_tol: 1e-4,
            gamma_grid: 16,
            golden_steps: 3,
            randomization_rounds: 50,
        }
    }
}

/// Per-parameter CRB summary of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrbReport {
    /// Diagonal of `F^-1`, parameter order `[theta, d, Re b, Im b]`.
    pub diagonal: Vec<f64>,
}

impl CrbReport {
    pub fn from_covariance(scene: &Scene, r: &CMat) -> Option<Self> {
        let f = fim_from_covariance(
            &scene.targets,
            r,
            scene.symbol_count,
            scene.sensing_noise,
            &scene.array,
        )
        .ok()?;
        let ridge = 0.0;
        crb_diagonal_of(&f.entries, ridge)
            .ok()
            .map(|diagonal| Self { diagonal })
    }

    pub fn total(&self) -> f64 {
        self.diagonal.iter().sum()
    }

    fn sum_of(&self, kind: ParameterKind) -> f64 {
        let pv = ParameterVector::new(self.diagonal.len() / 4);
        (0..pv.n_targets)
            .map(|l| self.diagonal[pv.index(kind, l)])
            .sum()
    }

    /// `sqrt(sum_l CRB(theta_l))`, radians.
    pub fn root_angle(&self) -> f64 {
        self.sum_of(ParameterKind::Angle).max(0.0).sqrt()
    }

    /// `sqrt(sum_l CRB(d_l))`, meters.
    pub fn root_range(&self) -> f64 {
        self.sum_of(ParameterKind::Range).max(0.0).sqrt()
    }

    /// `sqrt(sum_i CRB_i)` over all parameters.
    pub fn root_total(&self) -> f64 {
        self.total().max(0.0).sqrt()
    }
}

/// The FIM as an affine map of a covariance expressed in units of the power
/// budget, whitened as `T' F T` with `T T' = F_ref^-1` and `F_ref = F(P I / N)`,
/// so the scaled FIM is the identity at the isotropic covariance.
/// `T = D^-1/2 G^-1/2` where `G = D^-1/2 F_ref D^-1/2`, `D = diag(F_ref)`.
pub(crate) struct ScaledFim {
    /// Whitened basis matrices, one per covariance coordinate.
    basis: Vec<RMat>,
    /// Unit vectors `T' e_i / |T' e_i|`.
    directions: Vec<DVector<f64>>,
    /// `[F_ref^-1]_ii`.
    scales: Vec<f64>,
    /// `trace(F_ref^-1)`.
    reference: f64,
}

impl ScaledFim {
    pub(crate) fn new(scene: &Scene) -> Result<Self> {
        let n = scene.n_elements();
        let map = FimMap::new(
            &scene.targets,
            scene.symbol_count,
            scene.sensing_noise,
            &scene.array,
        )?;
        let iso = CMat::identity(n, n).scale(scene.power_budget / n as f64);
        let f_ref = map.apply(&hermitian_to_params(&iso));
        let (g, d) = equilibrate(&f_ref)?;
        let eig = g.symmetric_eigen();
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        check_condition(lo, hi)?;
        let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
        let g_inv_sqrt =
            &eig.eigenvectors * RMat::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
        let t = RMat::from_fn(map.dim, map.dim, |i, j| {
            0.5 * (g_inv_sqrt[(i, j)] + g_inv_sqrt[(j, i)]) / d[i]
        });
        let basis = map
            .basis
            .iter()
            .map(|m| t.transpose() * m * &t * scene.power_budget)
            .collect();
        let mut directions = Vec::with_capacity(map.dim);
        let mut scales = Vec::with_capacity(map.dim);
        for i in 0..map.dim {
            let row = t.row(i).transpose();
            let sq = row.norm_squared();
            scales.push(sq);
            directions.push(row / sq.sqrt());
        }
        let reference = crb_diagonal_of(&f_ref, 0.0)?.iter().sum();
        Ok(Self {
            basis,
            directions,
            scales,
            reference,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.scales.len()
    }

    /// Factor converting the scaled epigraph variable `t~_i` to `t_i`.
    pub(crate) fn t_scale(&self, i: usize) -> f64 {
        self.scales[i]
    }

    pub(crate) fn reference(&self) -> f64 {
        self.reference
    }

    /// Adds `t~` variables and one Schur block `[F~, u_i; u_i', t~_i] >= 0`
    /// per parameter. `blocks` lists `(first covariance parameter, weight)`
    /// for the covariance blocks whose weighted sum is the FIM argument.
    pub(crate) fn add_epigraph(&self, prog: &mut ConicProgram, blocks: &[(usize, f64)]) -> usize {
        let p = self.dim();
        let t = prog.add_vars(p).start;
        let mut entries: Vec<(usize, usize, AffineExpr)> = Vec::new();
        for a in 0..p {
            for b in 0..=a {
                let mut e = AffineExpr::constant(0.0);
                for &(start, w) in blocks {
                    for (c, m) in self.basis.iter().enumerate() {
                        let v = m[(a, b)];
                        if v != 0.0 {
                            e.add_term(start + c, w * v);
                        }
                    }
                }
                entries.push((a, b, e));
            }
        }
        for i in 0..p {
            let mut block = entries.clone();
            for (k, &u) in self.directions[i].iter().enumerate() {
                block.push((p, k, AffineExpr::constant(u)));
            }
            block.push((p, p, AffineExpr::var(t + i)));
            prog.add_psd(p + 1, &block);
        }
        t
    }
}

/// Maps a finished solve onto the crate's error type.
pub(crate) fn check_solution(sol: &ConicSolution, what: &str) -> Result<()> {
    match sol.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::NearOptimal => {
            warn!("{what}: stalled at residuals {:?}", sol.residuals);
            Ok(())
        }
        SolveStatus::PrimalInfeasible => Err(Error::Infeasible(format!(
            "{what}: {}",
            sol.certificate
                .clone()
                .unwrap_or_else(|| "primal infeasible".into())
        ))),
        status => Err(Error::Solver {
            status: format!("{what}: {status}"),
            residuals: sol.residuals,
        }),
    }
}

pub(crate) fn covariance_of(x: &CMat) -> CMat {
    (x * x.adjoint()).scale(1.0 / x.ncols().max(1) as f64)
}

pub(crate) fn validate_weight(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!(
            "weight rho must lie in [0, 1], got {rho}"
        )));
    }
    Ok(())
}

pub(crate) fn real_param_count(n: usize) -> usize {
    n * n
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_seeded() {
        assert_eq!(random_schedule(2, 5, 4, 9), random_schedule(2, 5, 4, 9));
        assert!(random_schedule(3, 40, 4, 1)
            .iter()
            .flatten()
            .all(|&q| q < 4));
    }

    #[test]
    fn scene_validation() {
        let s = test_scenes::small(4, 4, 2, 1);
        assert!(s.clone().with_schedule(vec![vec![0; 4]]).is_err());
        assert!(s
            .clone()
            .with_schedule(vec![vec![0; 4], vec![4; 4]])
            .is_err());
        let mut bad = s.clone();
        bad.comm_noise = 0.0;
        assert!(bad.validate().is_err());
        assert!(s.validate().is_ok());
    }

    #[test]
    fn scaled_fim_reference_is_isotropic_crb() {
        let s = test_scenes::small(6, 8, 1, 1);
        let sf = ScaledFim::new(&s).unwrap();
        let iso = CMat::identity(6, 6).scale(s.power_budget / 6.0);
        let crb = CrbReport::from_covariance(&s, &iso).unwrap();
        assert!((sf.reference() - crb.total()).abs() < 1e-9 * crb.total());
    }
}
