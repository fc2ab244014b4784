//! Block-level precoding baseline.
//!
//! The semidefinite relaxation keeps `R~ = sum_k W~_k` and `W~_1 .. W~_{K-1}`
//! as variables (all in units of the power budget) with
//! `W~_K = R~ - sum_{k<K} W~_k` constrained PSD, so the CRB epigraph touches
//! only `R~`. With `Q_k = conj(h_k) h_k^T`, the SINR row of user `k` at a
//! fixed `gamma` is
//!
//! ```text
//! tr(Q_k W_k) - gamma (tr(Q_k R) - tr(Q_k W_k)) >= gamma sigma_C^2,
//! ```
//!
//! divided by `(1 + gamma) P ||h_k||^2`. The largest feasible `gamma` is
//! found by bisection on a slack-maximizing program; the trade-off for a
//! weight `rho` searches `gamma` against the CRB-minimizing program.

use log::warn;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    check_solution, covariance_of, real_param_count, validate_weight, CrbReport, DesignOptions,
    Normalizers, ScaledFim, Scene,
};
use crate::conic::{
    self, certify, AffineExpr, ComplexAffine, ConicProgram, Residuals, Settings, SolveStatus,
};
use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eigen, hermitian_entry, hermitian_from_params, hermitian_part,
    hermitian_trace_coeffs, CMat, CVec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum P2Objective {
    /// Maximize a common slack `tau <= 1` on the SINR rows; the fixed
    /// `gamma` is feasible iff the optimum is `>= 0` up to the solver
    /// tolerance.
    MaxSlack,
    /// Minimize the sum of CRB epigraph variables.
    MinCrb,
}

pub struct P2Program {
    pub program: ConicProgram,
    pub n: usize,
    /// First parameter of `R~`.
    pub covariance: usize,
    /// First parameter of each of `W~_1 .. W~_{K-1}`.
    pub beamformers: Vec<usize>,
    pub crb: Option<usize>,
    pub slack: Option<usize>,
    pub t_scales: Vec<f64>,
}

impl P2Program {
    /// `W_1 .. W_K` and `R` in power units.
    fn matrices(&self, x: &[f64], power: f64) -> (Vec<CMat>, CMat) {
        let m = real_param_count(self.n);
        let read = |start: usize| {
            hermitian_part(&hermitian_from_params(self.n, &x[start..start + m])).scale(power)
        };
        let r = read(self.covariance);
        let mut ws: Vec<CMat> = self.beamformers.iter().map(|&b| read(b)).collect();
        let last = ws.iter().fold(r.clone(), |acc, w| acc - w);
        ws.push(last);
        (ws, r)
    }
}

fn hermitian_block_entries(start: usize, n: usize, sign: f64, acc: &mut [ComplexAffine]) {
    for i in 0..n {
        for j in 0..=i {
            let idx = i * (i + 1) / 2 + j;
            let (re, im) = hermitian_entry(n, i, j);
            acc[idx].re.add_term(start + re, sign);
            if let Some((v, s)) = im {
                acc[idx].im.add_term(start + v, sign * s);
            }
        }
    }
}

fn lower_entries(n: usize, acc: Vec<ComplexAffine>) -> Vec<(usize, usize, ComplexAffine)> {
    let mut out = Vec::with_capacity(acc.len());
    let mut it = acc.into_iter();
    for i in 0..n {
        for j in 0..=i {
            out.push((i, j, it.next().expect("entry count")));
        }
    }
    out
}

fn empty_entries(n: usize) -> Vec<ComplexAffine> {
    (0..n * (n + 1) / 2)
        .map(|_| ComplexAffine {
            re: AffineExpr::constant(0.0),
            im: AffineExpr::constant(0.0),
        })
        .collect()
}

/// Builds the relaxed baseline program at a fixed `gamma >= 0`.
pub fn assemble_p2(
    scene: &Scene,
    gamma: f64,
    objective: P2Objective,
    options: &DesignOptions,
) -> Result<P2Program> {
    scene.validate()?;
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!(
            "gamma must be finite and nonnegative, got {gamma}"
        )));
    }
    let (n, k) = (scene.n_elements(), scene.n_users());
    if n * scene.symbol_count > options.max_block_entries {
        return Err(Error::TooLarge(format!(
            "N * S = {} exceeds the configured cap of {}",
            n * scene.symbol_count,
            options.max_block_entries
        )));
    }
    let channels = scene.channels()?;
    let m = real_param_count(n);
    let mut prog = ConicProgram::new();
    let covariance = prog.add_vars(m).start;
    let beamformers: Vec<usize> = (1..k).map(|_| prog.add_vars(m).start).collect();

    let mut power = AffineExpr::constant(1.0);
    for i in 0..n {
        power.add_term(covariance + i, -1.0);
    }
    prog.add_nonneg(&power);

    for &b in &beamformers {
        let mut acc = empty_entries(n);
        hermitian_block_entries(b, n, 1.0, &mut acc);
        prog.add_hermitian_psd(n, &lower_entries(n, acc));
    }
    let mut acc = empty_entries(n);
    hermitian_block_entries(covariance, n, 1.0, &mut acc);
    for &b in &beamformers {
        hermitian_block_entries(b, n, -1.0, &mut acc);
    }
    prog.add_hermitian_psd(n, &lower_entries(n, acc));

    let slack = match objective {
        P2Objective::MaxSlack => {
            let tau = prog.add_var();
            prog.add_nonneg(&AffineExpr::constant(1.0).add_term(tau, -1.0).clone());
            prog.add_objective(&AffineExpr::term(tau, -1.0));
            Some(tau)
        }
        P2Objective::MinCrb => None,
    };

    let c = gamma / (1.0 + gamma);
    for (user, h) in channels.iter().enumerate() {
        let hn2 = h.norm_squared();
        if !(hn2 > 0.0) {
            return Err(Error::DegenerateGeometry(format!(
                "channel of user {user} vanishes"
            )));
        }
        let hc = h.map(|z| z.conj());
        let q = (&hc * h.transpose()).scale(1.0 / hn2);
        let coeffs = hermitian_trace_coeffs(&q);
        let mut row = AffineExpr::constant(-c * scene.comm_noise / (scene.power_budget * hn2));
        let own: Vec<(usize, f64)> = if user + 1 < k {
            vec![(beamformers[user], 1.0)]
        } else {
            std::iter::once((covariance, 1.0))
                .chain(beamformers.iter().map(|&b| (b, -1.0)))
                .collect()
        };
        for (p, &v) in coeffs.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for &(start, sign) in &own {
                row.add_term(start + p, sign * v);
            }
            row.add_term(covariance + p, -c * v);
        }
        if let Some(tau) = slack {
            row.add_term(tau, -1.0);
        }
        prog.add_nonneg(&row);
    }

    let mut crb = None;
    let mut t_scales = Vec::new();
    if objective == P2Objective::MinCrb {
        let fim = ScaledFim::new(scene)?;
        let t = fim.add_epigraph(&mut prog, &[(covariance, 1.0)]);
        t_scales = (0..fim.dim()).map(|i| fim.t_scale(i)).collect();
        let mut obj = AffineExpr::constant(0.0);
        for (i, sc) in t_scales.iter().enumerate() {
            obj.add_term(t + i, sc / fim.reference());
        }
        prog.add_objective(&obj);
        crb = Some(t);
    }

    Ok(P2Program {
        program: prog,
        n,
        covariance,
        beamformers,
        crb,
        slack,
        t_scales,
    })
}

/// `K x S` rows of a DFT matrix, so `(1/S) D D^H = I_K`.
pub fn data_matrix(k: usize, s: usize) -> Result<CMat> {
    if s < k {
        return Err(Error::invalid(format!(
            "orthogonal streams need S >= K, got S = {s}, K = {k}"
        )));
    }
    Ok(CMat::from_fn(k, s, |i, j| {
        Complex64::from_polar(
            1.0,
            -2.0 * std::f64::consts::PI * ((i * j) % s) as f64 / s as f64,
        )
    }))
}

/// `|h_k^T w_k|^2 / (sum_{j != k} |h_k^T w_j|^2 + sigma^2)` per user.
pub fn sinr_of_beamformers(vectors: &[CVec], channels: &[CVec], noise: f64) -> Vec<f64> {
    channels
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let gains: Vec<f64> = vectors
                .iter()
                .map(|w| (h.transpose() * w)[(0, 0)].norm_sqr())
                .collect();
            let interference: f64 = gains
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, g)| g)
                .sum();
            gains[k] / (interference + noise)
        })
        .collect()
}

/// Rank-one vectors from relaxed `W_k`: leading eigenvectors scaled to
/// `tr W_k`, then Gaussian randomization when the minimum SINR misses
/// `gamma` by more than 1%. Returns the best vectors and their minimum SINR.
pub fn extract_beamformers(
    ws: &[CMat],
    channels: &[CVec],
    noise: f64,
    gamma: f64,
    rounds: usize,
    seed: u64,
) -> (Vec<CVec>, f64) {
    let eig: Vec<(Vec<f64>, CMat)> = ws.iter().map(hermitian_eigen).collect();
    let leading: Vec<CVec> = eig
        .iter()
        .map(|(vals, vecs)| {
            let n = vals.len();
            vecs.column(n - 1)
                .into_owned()
                .scale(vals[n - 1].max(0.0).sqrt())
        })
        .collect();
    let scale_to = |v: CVec, w: &CMat| {
        let target = w.trace().re.max(0.0);
        let norm2 = v.norm_squared();
        if norm2 > 0.0 {
            v.scale((target / norm2).sqrt())
        } else {
            v
        }
    };
    let mut best: Vec<CVec> = leading
        .into_iter()
        .zip(ws)
        .map(|(v, w)| scale_to(v, w))
        .collect();
    let min_sinr = |vs: &[CVec]| {
        sinr_of_beamformers(vs, channels, noise)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    };
    let mut best_val = min_sinr(&best);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut round = 0;
    while best_val < 0.99 * gamma && round < rounds {
        round += 1;
        let cand: Vec<CVec> = eig
            .iter()
            .zip(ws)
            .map(|((vals, vecs), w)| {
                let n = vals.len();
                let g = CVec::from_fn(n, |i, _| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    Complex64::new(re, im).scale(vals[i].max(0.0).sqrt() / std::f64::consts::SQRT_2)
                });
                scale_to(vecs * g, w)
            })
            .collect();
        let v = min_sinr(&cand);
        if v > best_val {
            best_val = v;
            best = cand;
        }
    }
    (best, best_val)
}

/// One solved point of the relaxed baseline.
#[derive(Debug, Clone)]
pub(crate) struct BlpPoint {
    gamma: f64,
    beamformers: Vec<CMat>,
    covariance: CMat,
    crb_bounds: Vec<f64>,
    residuals: Residuals,
    iterations: usize,
}

impl BlpPoint {
    fn crb_sum(&self) -> f64 {
        self.crb_bounds.iter().sum()
    }
}

fn probe_settings(options: &DesignOptions) -> Settings {
    Settings {
        tol: options.solver.tol.min(1e-9),
        ..options.solver
    }
}

/// Solves the slack program; `Ok((tau, point))`.
fn probe(scene: &Scene, gamma: f64, options: &DesignOptions) -> Result<(f64, BlpPoint)> {
    let p2 = assemble_p2(scene, gamma, P2Objective::MaxSlack, options)?;
    let sol = conic::solve(&p2.program, &probe_settings(options));
    let residuals = certify(&p2.program, &sol);
    let usable = sol.is_usable()
        || (matches!(
            sol.status,
            SolveStatus::MaxIterations | SolveStatus::NumericalError
        ) && residuals.below(1e-6));
    if !usable {
        check_solution(&sol, &format!("baseline slack program at gamma = {gamma}"))?;
    }
    let (ws, r) = p2.matrices(&sol.primal, scene.power_budget);
    let tau = sol.primal[p2.slack.expect("slack variable")];
    Ok((
        tau,
        BlpPoint {
            gamma,
            beamformers: ws,
            covariance: r,
            crb_bounds: Vec::new(),
            residuals,
            iterations: sol.iterations,
        },
    ))
}

fn min_crb_point(scene: &Scene, gamma: f64, options: &DesignOptions) -> Result<BlpPoint> {
    let p2 = assemble_p2(scene, gamma, P2Objective::MinCrb, options)?;
    let sol = conic::solve(&p2.program, &options.solver);
    check_solution(&sol, &format!("baseline CRB program at gamma = {gamma}"))?;
    let residuals = certify(&p2.program, &sol);
    let (ws, r) = p2.matrices(&sol.primal, scene.power_budget);
    let t = p2.crb.expect("epigraph variables");
    Ok(BlpPoint {
        gamma,
        beamformers: ws,
        covariance: r,
        crb_bounds: p2
            .t_scales
            .iter()
            .enumerate()
            .map(|(i, s)| s * sol.primal[t + i])
            .collect(),
        residuals,
        iterations: sol.iterations,
    })
}

/// The baseline's achievable region, shared by all weights of a sweep.
pub struct BlpFrontier {
    pub gamma_max: f64,
    /// `(gamma, optimal slack)` for every bisection probe.
    pub probes: Vec<(f64, f64)>,
    pub normalizers: Normalizers,
    max_point: BlpPoint,
    sensing_point: BlpPoint,
    grid: Vec<Option<BlpPoint>>,
}

impl BlpFrontier {
    pub fn compute(scene: &Scene, options: &DesignOptions) -> Result<Self> {
        scene.validate()?;
        let channels = scene.channels()?;
        let hmin2 = channels
            .iter()
            .map(|h| h.norm_squared())
            .fold(f64::INFINITY, f64::min);
        let mut hi = scene.power_budget * hmin2 / scene.comm_noise;
        let mut probes = Vec::new();
        let (tau_hi, point_hi) = probe(scene, hi, options)?;
        probes.push((hi, tau_hi));
        let feasible = |tau: f64| tau >= -probe_settings(options).tol;
        let max_point = if feasible(tau_hi) {
            point_hi
        } else {
            let (tau0, mut best) = probe(scene, 0.0, options)?;
            probes.push((0.0, tau0));
            if !feasible(tau0) {
                return Err(Error::Infeasible(format!(
                    "baseline infeasible even at gamma = 0; probes: {probes:?}"
                )));
            }
            let mut lo = 0.0;
            while hi - lo > options.bisection_tol * hi {
                let mid = 0.5 * (lo + hi);
                let (tau, point) = probe(scene, mid, options)?;
                probes.push((mid, tau));
                if feasible(tau) {
                    lo = mid;
                    best = point;
                } else {
                    hi = mid;
                }
            }
            best
        };
        let mut max_point = max_point;
        max_point.crb_bounds = CrbReport::from_covariance(scene, &max_point.covariance)
            .map(|r| r.diagonal)
            .unwrap_or_else(|| vec![f64::INFINITY; 4 * scene.n_targets()]);
        let gamma_max = max_point.gamma;
        if !(gamma_max > 0.0) {
            return Err(Error::Infeasible(format!(
                "baseline admits no positive SINR; probes: {probes:?}"
            )));
        }
        let sensing_point = min_crb_point(scene, 0.0, options)?;
        let normalizers = Normalizers {
            sensing: sensing_point.crb_sum(),
            communication: gamma_max,
        };
        normalizers.validate()?;
        let g = options.gamma_grid.max(1);
        let grid: Vec<Option<BlpPoint>> = (0..=g)
            .into_par_iter()
            .map(|j| {
                if j == 0 {
                    return Some(sensing_point.clone());
                }
                min_crb_point(scene, grid_gamma(gamma_max, j, g), options).ok()
            })
            .collect();
        Ok(Self {
            gamma_max,
            probes,
            normalizers,
            max_point,
            sensing_point,
            grid,
        })
    }

    fn score(&self, rho: f64, p: &BlpPoint) -> f64 {
        -rho * p.crb_sum() / self.normalizers.sensing
            + (1.0 - rho) * p.gamma / self.normalizers.communication
    }

    /// Best relaxed point for `rho`: grid search, then golden-section
    /// refinement around the best grid node.
    fn best_point(&self, scene: &Scene, rho: f64, options: &DesignOptions) -> BlpPoint {
        if rho == 1.0 {
            return self.sensing_point.clone();
        }
        let g = self.grid.len() - 1;
        let (j, _) = self
            .grid
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.as_ref().map(|p| (j, self.score(rho, p))))
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, v| if v.1 > acc.1 { v } else { acc },
            );
        let mut best = self.grid[j]
            .clone()
            .unwrap_or_else(|| self.sensing_point.clone());
        let mut best_score = self.score(rho, &best);
        let (mut a, mut b) = (
            grid_gamma(self.gamma_max, j.saturating_sub(1), g),
            grid_gamma(self.gamma_max, (j + 1).min(g), g),
        );
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let eval = |gamma: f64| min_crb_point(scene, gamma, options).ok();
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let mut fc = eval(c);
        let mut fd = eval(d);
        for _ in 0..options.golden_steps {
            let sc = fc
                .as_ref()
                .map_or(f64::NEG_INFINITY, |p| self.score(rho, p));
            let sd = fd
                .as_ref()
                .map_or(f64::NEG_INFINITY, |p| self.score(rho, p));
            for (s, p) in [(sc, &fc), (sd, &fd)] {
                if s > best_score {
                    best_score = s;
                    best = p.clone().expect("scored point exists");
                }
            }
            if sc >= sd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = eval(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = eval(d);
            }
        }
        for p in [fc, fd].into_iter().flatten() {
            let s = self.score(rho, &p);
            if s > best_score {
                best_score = s;
                best = p;
            }
        }
        if rho == 0.0 || self.score(rho, &self.max_point) > best_score {
            return self.max_point.clone();
        }
        best
    }

    pub fn design(&self, scene: &Scene, rho: f64, options: &DesignOptions) -> Result<BlpDesign> {
        validate_weight(rho)?;
        let mut point = self.best_point(scene, rho, options);
        let channels = scene.channels()?;
        let relaxed = CrbReport::from_covariance(scene, &point.covariance);
        if point.crb_bounds.iter().any(|v| !v.is_finite()) {
            point.crb_bounds.clear();
        }
        let (vectors, achieved) = extract_beamformers(
            &point.beamformers,
            &channels,
            scene.comm_noise,
            point.gamma,
            options.randomization_rounds,
            options.seed,
        );
        let d = data_matrix(scene.n_users(), scene.symbol_count)?;
        let w = CMat::from_fn(scene.n_elements(), scene.n_users(), |i, k| vectors[k][i]);
        let symbols = &w * &d;
        let mut warnings = Vec::new();
        let extraction_ok = achieved >= 0.99 * point.gamma;
        if !extraction_ok {
            warnings.push(format!(
                "rank-one extraction reached SINR {achieved:.6e} against the relaxed {:.6e}",
                point.gamma
            ));
        }
        let power: f64 = vectors.iter().map(|v| v.norm_squared()).sum();
        if power > scene.power_budget * (1.0 + 1e-6) {
            warnings.push(format!("beamformer power {power:.6e} exceeds the budget"));
        }
        for m in &warnings {
            warn!("baseline rho = {rho}: {m}");
        }
        let crb_sum: f64 = point.crb_bounds.iter().sum();
        Ok(BlpDesign {
            weight: rho,
            gamma: point.gamma,
            gamma_max: self.gamma_max,
            beamformers: point.beamformers,
            vectors,
            data_matrix: d,
            crb_waveform: CrbReport::from_covariance(scene, &covariance_of(&symbols)),
            symbols,
            covariance: point.covariance,
            objective: -rho * crb_sum / self.normalizers.sensing
                + (1.0 - rho) * point.gamma / self.normalizers.communication,
            crb_bounds: point.crb_bounds,
            crb_relaxed: relaxed,
            achieved_gamma: achieved,
            extraction_ok,
            power,
            normalizers: self.normalizers,
            residuals: point.residuals,
            iterations: point.iterations,
            warnings,
        })
    }
}

fn grid_gamma(gamma_max: f64, j: usize, g: usize) -> f64 {
    if j == g {
        gamma_max * (1.0 - 1e-4)
    } else {
        gamma_max * j as f64 / g as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlpDesign {
    pub weight: f64,
    /// SINR level of the relaxed solution.
    pub gamma: f64,
    pub gamma_max: f64,
    /// Relaxed `W_k`.
    pub beamformers: Vec<CMat>,
    /// Extracted `w_k`.
    pub vectors: Vec<CVec>,
    pub data_matrix: CMat,
    /// `[w_1 .. w_K] D`.
    pub symbols: CMat,
    /// `sum_k W_k`.
    pub covariance: CMat,
    pub crb_bounds: Vec<f64>,
    pub crb_relaxed: Option<CrbReport>,
    pub crb_waveform: Option<CrbReport>,
    /// Minimum SINR of the extracted vectors.
    pub achieved_gamma: f64,
    pub extraction_ok: bool,
    /// `sum_k ||w_k||^2`.
    pub power: f64,
    pub objective: f64,
    pub normalizers: Normalizers,
    pub residuals: Residuals,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl BlpDesign {
    pub fn sinr(&self) -> f64 {
        self.gamma
    }

    pub fn crb_sum(&self) -> f64 {
        self.crb_bounds.iter().sum()
    }
}

/// Builds the frontier and returns the design for `rho`.
pub fn design_blp(scene: &Scene, rho: f64, options: &DesignOptions) -> Result<BlpDesign> {
    validate_weight(rho)?;
    BlpFrontier::compute(scene, options)?.design(scene, rho, options)
}
