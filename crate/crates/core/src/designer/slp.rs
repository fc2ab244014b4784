//! The symbol-level precoding program.
//!
//! Decision variables are kept in units of the power budget: `x~ = x / sqrt(P)`
//! and `R~ = R / P`, so the power row reads `tr R~ <= 1`. Each CI row is
//! divided by `sqrt(P) ||h_k||` and `gamma' = gamma_ref * gamma~` with
//! `gamma_ref = sqrt(P) max_k ||h_k|| / sigma_C`. The CRB epigraph uses the
//! whitened FIM of [`ScaledFim`], so `t_i = [F_ref^-1]_ii t~_i`.
//!
//! Two equivalent relaxations are available. [`Formulation::PerSymbol`]
//! keeps one `[R_s, x_s; x_s^H, 1] >= 0` block per slot and feeds the FIM
//! with `(1/S) sum_s R_s`. [`Formulation::Aggregated`] keeps only the
//! average covariance `R` with the single block `[R, X / sqrt(S); X^H / sqrt(S), I]`:
//! every feasible per-symbol point maps to an aggregated one with the same
//! objective, and the per-symbol blocks `R_s = x_s x_s^H + (R - X X^H / S)`
//! recover the converse.

use log::warn;
use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    check_solution, covariance_of, real_param_count, validate_weight, CrbReport, DesignOptions,
    Normalizers, ScaledFim, Scene,
};
use crate::ci::{received_coefficients, rotate_channel, scaled_ci_margin, CiConstraint};
use crate::conic::{self, certify, AffineExpr, ComplexAffine, Cone, ConicProgram, Residuals};
use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eigen, hermitian_entry, hermitian_from_params, hermitian_part, psd_projection, CMat,
    CVec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formulation {
    Aggregated,
    PerSymbol,
}

/// Variable offsets of an assembled program.
#[derive(Debug, Clone, PartialEq)]
pub struct P1Layout {
    pub n: usize,
    pub s: usize,
    /// First variable of `[Re x_0; Im x_0; Re x_1; ...]`; absent at `rho = 1`.
    pub symbols: Option<usize>,
    /// First parameter of each covariance block.
    pub covariances: Vec<usize>,
    pub crb: Option<usize>,
    pub gamma: Option<usize>,
}

impl P1Layout {
    fn x_re(&self, slot: usize, i: usize) -> usize {
        self.symbols.expect("program has symbol variables") + 2 * self.n * slot + i
    }

    fn x_im(&self, slot: usize, i: usize) -> usize {
        self.x_re(slot, i) + self.n
    }

    /// `X~` read from a primal vector (zero when the program has none).
    pub fn symbols_from(&self, x: &[f64]) -> CMat {
        match self.symbols {
            None => CMat::zeros(self.n, self.s),
            Some(_) => CMat::from_fn(self.n, self.s, |i, s| {
                Complex64::new(x[self.x_re(s, i)], x[self.x_im(s, i)])
            }),
        }
    }

    pub fn covariance_from(&self, x: &[f64], block: usize) -> CMat {
        let start = self.covariances[block];
        hermitian_from_params(self.n, &x[start..start + real_param_count(self.n)])
    }
}

/// Variable, row and cone counts of a program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub variables: usize,
    pub equalities: usize,
    pub nonneg_rows: usize,
    /// Orders of the real PSD blocks seen by the solver (Hermitian blocks
    /// of order `m` appear lifted to `2m`).
    pub psd_orders: Vec<usize>,
}

impl Census {
    /// Closed form for the symbol-level program.
    ///
    /// With `N` elements, `S` slots, `K` users and `L` targets, and for
    /// `0 < rho < 1`:
    /// * variables: `2NS + B N^2 + 4L + 1`, with `B = 1` aggregated or `S`
    ///   per-symbol;
    /// * nonnegative rows: `2KS + 1`;
    /// * PSD blocks: one of order `2(N + S)` aggregated or `S` of order
    ///   `2(N + 1)` per-symbol, then `4L` blocks of order `4L + 1`.
    ///
    /// At `rho = 1` the symbols, `gamma'` and the CI rows are absent and the
    /// covariance blocks have order `2N`; at `rho = 0` the epigraph is absent.
    pub fn p1(form: Formulation, n: usize, s: usize, k: usize, l: usize, rho: f64) -> Self {
        let comm = rho < 1.0;
        let sensing = rho > 0.0;
        let blocks = match form {
            Formulation::Aggregated => 1,
            Formulation::PerSymbol => s,
        };
        let p = 4 * l;
        let variables =
            if comm { 2 * n * s + 1 } else { 0 } + blocks * n * n + if sensing { p } else { 0 };
        let nonneg_rows = 1 + if comm { 2 * k * s } else { 0 };
        let mut psd_orders = match (form, comm) {
            (Formulation::Aggregated, true) => vec![2 * (n + s)],
            (Formulation::PerSymbol, true) => vec![2 * (n + 1); s],
            (_, false) => vec![2 * n; blocks],
        };
        if sensing {
            psd_orders.extend(std::iter::repeat_n(p + 1, p));
        }
        Self {
            variables,
            equalities: 0,
            nonneg_rows,
            psd_orders,
        }
    }

    pub fn of(program: &ConicProgram) -> Self {
        let mut nonneg_rows = 0;
        let mut psd_orders = Vec::new();
        for c in program.cones() {
            match *c {
                Cone::NonNeg(k) => nonneg_rows += k,
                Cone::Psd(n) => psd_orders.push(n),
            }
        }
        Self {
            variables: program.n_vars(),
            equalities: program.n_equalities(),
            nonneg_rows,
            psd_orders,
        }
    }
}

pub struct P1Program {
    pub program: ConicProgram,
    pub layout: P1Layout,
    pub gamma_ref: f64,
    /// `[F_ref^-1]_ii`, converting `t~_i` to `t_i`.
    pub t_scales: Vec<f64>,
    pub formulation: Formulation,
}

impl P1Program {
    pub fn census(&self) -> Census {
        Census::of(&self.program)
    }
}

pub(crate) fn gamma_reference(scene: &Scene, channels: &[CVec]) -> f64 {
    let hmax = channels.iter().map(|h| h.norm()).fold(0.0, f64::max);
    scene.power_budget.sqrt() * hmax / scene.comm_noise.sqrt()
}

fn covariance_entry(layout_start: usize, n: usize, i: usize, j: usize) -> ComplexAffine {
    let (re, im) = hermitian_entry(n, i, j);
    ComplexAffine {
        re: AffineExpr::var(layout_start + re),
        im: match im {
            Some((idx, sign)) => AffineExpr::term(layout_start + idx, sign),
            None => AffineExpr::constant(0.0),
        },
    }
}

/// Builds the symbol-level program for weight `rho`. The objective is the
/// negated `rho sum_i t_i / NF_R - (1 - rho) gamma' / NF_C`, minimized.
pub fn assemble_p1(
    scene: &Scene,
    rho: f64,
    normalizers: &Normalizers,
    options: &DesignOptions,
) -> Result<P1Program> {
    scene.validate()?;
    validate_weight(rho)?;
    normalizers.validate()?;
    let (n, s) = (scene.n_elements(), scene.symbol_count);
    if n * s > options.max_block_entries {
        return Err(Error::TooLarge(format!(
            "N * S = {} exceeds the configured cap of {}",
            n * s,
            options.max_block_entries
        )));
    }
    let comm = rho < 1.0;
    let sensing = rho > 0.0;
    let channels = scene.channels()?;
    let gamma_ref = gamma_reference(scene, &channels);
    if comm && !(gamma_ref > 0.0) {
        return Err(Error::DegenerateGeometry("all user channels vanish".into()));
    }
    let fim = if sensing {
        Some(ScaledFim::new(scene)?)
    } else {
        None
    };

    let mut prog = ConicProgram::new();
    let symbols = comm.then(|| prog.add_vars(2 * n * s).start);
    let n_blocks = match options.formulation {
        Formulation::Aggregated => 1,
        Formulation::PerSymbol => s,
    };
    let covariances: Vec<usize> = (0..n_blocks)
        .map(|_| prog.add_vars(real_param_count(n)).start)
        .collect();
    let mut layout = P1Layout {
        n,
        s,
        symbols,
        covariances,
        crb: None,
        gamma: None,
    };

    // Power.
    let mut power = AffineExpr::constant(1.0);
    for &start in &layout.covariances {
        for i in 0..n {
            power.add_term(start + i, -1.0 / n_blocks as f64);
        }
    }
    prog.add_nonneg(&power);

    // Lifted blocks.
    let inv_sqrt_s = 1.0 / (s as f64).sqrt();
    match (options.formulation, comm) {
        (Formulation::Aggregated, true) => {
            let start = layout.covariances[0];
            let mut entries = Vec::new();
            for i in 0..n {
                for j in 0..=i {
                    entries.push((i, j, covariance_entry(start, n, i, j)));
                }
            }
            for slot in 0..s {
                for i in 0..n {
                    entries.push((
                        n + slot,
                        i,
                        ComplexAffine {
                            re: AffineExpr::term(layout.x_re(slot, i), inv_sqrt_s),
                            im: AffineExpr::term(layout.x_im(slot, i), -inv_sqrt_s),
                        },
                    ));
                }
                entries.push((
                    n + slot,
                    n + slot,
                    ComplexAffine {
                        re: AffineExpr::constant(1.0),
                        im: AffineExpr::constant(0.0),
                    },
                ));
            }
            prog.add_hermitian_psd(n + s, &entries);
        }
        (Formulation::PerSymbol, true) => {
            for slot in 0..s {
                let start = layout.covariances[slot];
                let mut entries = Vec::new();
                for i in 0..n {
                    for j in 0..=i {
                        entries.push((i, j, covariance_entry(start, n, i, j)));
                    }
                    entries.push((
                        n,
                        i,
                        ComplexAffine {
                            re: AffineExpr::var(layout.x_re(slot, i)),
                            im: AffineExpr::term(layout.x_im(slot, i), -1.0),
                        },
                    ));
                }
                entries.push((
                    n,
                    n,
                    ComplexAffine {
                        re: AffineExpr::constant(1.0),
                        im: AffineExpr::constant(0.0),
                    },
                ));
                prog.add_hermitian_psd(n + 1, &entries);
            }
        }
        (_, false) => {
            for &start in &layout.covariances {
                let mut entries = Vec::new();
                for i in 0..n {
                    for j in 0..=i {
                        entries.push((i, j, covariance_entry(start, n, i, j)));
                    }
                }
                prog.add_hermitian_psd(n, &entries);
            }
        }
    }

    // CI rows.
    if comm {
        let g = prog.add_var();
        layout.gamma = Some(g);
        let hmax = channels.iter().map(|h| h.norm()).fold(0.0, f64::max);
        let (sin_psi, cos_psi) = scene.constellation.half_angle().sin_cos();
        for (user, h) in channels.iter().enumerate() {
            let hn = h.norm();
            if !(hn > 0.0) {
                return Err(Error::DegenerateGeometry(format!(
                    "channel of user {user} vanishes"
                )));
            }
            for slot in 0..s {
                let rotated = rotate_channel(h, scene.symbol_phase(user, slot));
                let (re, im) = received_coefficients(&rotated);
                for sign in [1.0, -1.0] {
                    let mut row = AffineExpr::term(g, -hmax / hn);
                    for (idx, (a, b)) in re.iter().zip(&im).enumerate() {
                        let coef = (a * sin_psi - sign * b * cos_psi) / hn;
                        if coef != 0.0 {
                            let var = if idx < n {
                                layout.x_re(slot, idx)
                            } else {
                                layout.x_im(slot, idx - n)
                            };
                            row.add_term(var, coef);
                        }
                    }
                    prog.add_nonneg(&row);
                }
            }
        }
        prog.add_objective(&AffineExpr::term(
            g,
            -(1.0 - rho) * gamma_ref / normalizers.communication,
        ));
    }

    // CRB epigraph.
    let mut t_scales = Vec::new();
    if let Some(fim) = &fim {
        let blocks: Vec<(usize, f64)> = layout
            .covariances
            .iter()
            .map(|&c| (c, 1.0 / n_blocks as f64))
            .collect();
        let t = fim.add_epigraph(&mut prog, &blocks);
        layout.crb = Some(t);
        t_scales = (0..fim.dim()).map(|i| fim.t_scale(i)).collect();
        let mut obj = AffineExpr::constant(0.0);
        for (i, sc) in t_scales.iter().enumerate() {
            obj.add_term(t + i, rho * sc / normalizers.sensing);
        }
        prog.add_objective(&obj);
    }

    Ok(P1Program {
        program: prog,
        layout,
        gamma_ref,
        t_scales,
        formulation: options.formulation,
    })
}

/// Transmitted block realizing a covariance with the given constrained part.
#[derive(Debug, Clone)]
pub struct Completion {
    pub symbols: CMat,
    /// Fraction of `tr R` that could not be realized.
    pub shortfall: f64,
}

/// Extends `x` to `x + E` so that the sample covariance approaches `r`
/// without changing what any user receives.
///
/// The leftover `R - X X^H / S` is shorted onto the null space of the user
/// channels (the largest PSD part with range inside it), and `E` spreads
/// that part over slot directions orthogonal to the rows of `x`, so
/// `(X + E)(X + E)^H / S = X X^H / S + P'` and `h_k^T E = 0`. The
/// directions are drawn with `seed`. When the free slot directions run out
/// the weakest eigen-directions are dropped and reported as `shortfall`.
pub fn complete_waveform(x: &CMat, r: &CMat, channels: &[CVec], seed: u64) -> Completion {
    let (n, s) = x.shape();
    let leftover = psd_projection(&hermitian_part(&(r - covariance_of(x))));
    let shorted = if channels.is_empty() {
        leftover
    } else {
        short_onto_null(&leftover, channels)
    };
    let total = r.trace().re.max(0.0);
    let (vals, vecs) = hermitian_eigen(&shorted);
    let top = vals.last().copied().unwrap_or(0.0).max(0.0);
    let keep: Vec<usize> = (0..n)
        .rev()
        .filter(|&i| vals[i] > 1e-12 * top && top > 0.0)
        .collect();

    // Orthonormal basis of {z : X z = 0} in C^S.
    let (gv, gvec) = hermitian_eigen(&(x.adjoint() * x));
    let gtop = gv.last().copied().unwrap_or(0.0).max(0.0);
    let free: Vec<usize> = (0..s)
        .filter(|&i| gv[i] <= 1e-10 * gtop.max(f64::MIN_POSITIVE))
        .collect();

    let r_used = keep.len().min(free.len());
    let dropped: f64 = keep[r_used..].iter().map(|&i| vals[i]).sum();
    let mut symbols = x.clone();
    if r_used > 0 {
        let z0 = CMat::from_fn(s, free.len(), |i, c| gvec[(i, free[c])]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = CMat::zeros(free.len(), r_used);
        for v in g.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v = Complex64::new(re, im);
        }
        let z = &z0 * g.qr().q();
        let scale = (s as f64).sqrt();
        for (c, &i) in keep[..r_used].iter().enumerate() {
            let amp = vals[i].sqrt() * scale;
            let col = vecs.column(i);
            let row = z.column(c).adjoint();
            symbols += (col * row).scale(amp);
        }
    }
    Completion {
        symbols,
        shortfall: if total > 0.0 { dropped / total } else { 0.0 },
    }
}

/// Shorted operator of `p` onto `{e : h_k^T e = 0 for all k}`.
fn short_onto_null(p: &CMat, channels: &[CVec]) -> CMat {
    let n = p.nrows();
    let mut g = CMat::zeros(n, n);
    for h in channels {
        let hc = h.map(|z| z.conj());
        g += &hc * h.transpose();
    }
    let (vals, vecs) = hermitian_eigen(&g);
    let top = vals.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let m = vals.iter().filter(|&&v| v <= 1e-10 * top).count();
    if m == 0 {
        return CMat::zeros(n, n);
    }
    let u = vecs.columns(0, m).into_owned();
    if m == n {
        return p.clone();
    }
    let uc = vecs.columns(m, n - m).into_owned();
    let a = u.adjoint() * p * &u;
    let b = u.adjoint() * p * &uc;
    let c = uc.adjoint() * p * &uc;
    let eps = 1e-12 * c.norm().max(f64::MIN_POSITIVE);
    let c_pinv = c
        .pseudo_inverse(eps)
        .unwrap_or_else(|_| CMat::zeros(n - m, n - m));
    let shorted = a - &b * c_pinv * b.adjoint();
    psd_projection(&hermitian_part(&(&u * shorted * u.adjoint())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlpDesign {
    pub weight: f64,
    /// Transmitted block `N x S` after completion.
    pub symbols: CMat,
    /// The block returned by the program.
    pub solver_symbols: CMat,
    /// Per-slot covariances `R_{x_s}`.
    pub covariances: Vec<CMat>,
    /// `(1/S) sum_s R_{x_s}`.
    pub covariance: CMat,
    pub gamma_prime: f64,
    /// `t_i`, empty at `rho = 0`.
    pub crb_bounds: Vec<f64>,
    /// `-rho sum t_i / NF_R + (1 - rho) gamma' / NF_C`.
    pub objective: f64,
    pub normalizers: Normalizers,
    /// CRB of the relaxed covariance; `None` when its FIM is singular.
    pub crb_relaxed: Option<CrbReport>,
    /// CRB of the transmitted block.
    pub crb_waveform: Option<CrbReport>,
    /// `max_s ||R_{x_s} - x_s x_s^H||_F / tr R_{x_s}`.
    pub relaxation_gap: f64,
    pub completion_shortfall: f64,
    /// Average power of the transmitted block.
    pub power: f64,
    /// Largest `cos(psi)`-scaled CI margin of the transmitted block.
    pub max_ci_margin: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl SlpDesign {
    /// Reported communication SINR, `gamma'^2`.
    pub fn sinr(&self) -> f64 {
        self.gamma_prime * self.gamma_prime
    }

    pub fn crb_sum(&self) -> f64 {
        self.crb_bounds.iter().sum()
    }

    pub(crate) fn renormalize(&mut self, normalizers: Normalizers) {
        let rho = self.weight;
        let sensing = if rho > 0.0 {
            self.crb_sum() / normalizers.sensing
        } else {
            0.0
        };
        self.objective =
            -rho * sensing + (1.0 - rho) * self.gamma_prime / normalizers.communication;
        self.normalizers = normalizers;
    }
}

/// Solves the program for `rho` with explicit normalizers.
pub fn design_slp_with(
    scene: &Scene,
    rho: f64,
    normalizers: &Normalizers,
    options: &DesignOptions,
) -> Result<SlpDesign> {
    let p1 = assemble_p1(scene, rho, normalizers, options)?;
    let sol = conic::solve(&p1.program, &options.solver);
    check_solution(&sol, &format!("symbol-level program at rho = {rho}"))?;
    let residuals = certify(&p1.program, &sol);
    let x = &sol.primal;
    let layout = &p1.layout;
    let (n, s) = (layout.n, layout.s);
    let power = scene.power_budget;
    let solver_symbols = layout.symbols_from(x).scale(power.sqrt());
    let blocks: Vec<CMat> = (0..layout.covariances.len())
        .map(|b| hermitian_part(&layout.covariance_from(x, b)).scale(power))
        .collect();
    let covariance = blocks
        .iter()
        .fold(CMat::zeros(n, n), |acc, b| acc + b)
        .scale(1.0 / blocks.len() as f64);
    let covariances: Vec<CMat> = match p1.formulation {
        Formulation::PerSymbol => blocks,
        Formulation::Aggregated => {
            let rest = &covariance - covariance_of(&solver_symbols);
            (0..s)
                .map(|slot| {
                    let xs = solver_symbols.column(slot);
                    xs * xs.adjoint() + &rest
                })
                .collect()
        }
    };
    let relaxation_gap = covariances
        .iter()
        .enumerate()
        .map(|(slot, rs)| {
            let xs = solver_symbols.column(slot);
            let tr = rs.trace().re;
            if tr > 0.0 {
                (rs - xs * xs.adjoint()).norm() / tr
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let gamma_prime = layout.gamma.map_or(0.0, |g| p1.gamma_ref * x[g]);
    let crb_bounds: Vec<f64> = layout.crb.map_or_else(Vec::new, |t| {
        p1.t_scales
            .iter()
            .enumerate()
            .map(|(i, sc)| sc * x[t + i])
            .collect()
    });

    let channels = scene.channels()?;
    let constrained: &[CVec] = if rho < 1.0 { &channels } else { &[] };
    let completion = complete_waveform(&solver_symbols, &covariance, constrained, options.seed);
    let symbols = completion.symbols;
    let tx_power = symbols.norm_squared() / s as f64;

    let sigma_c = scene.comm_noise.sqrt();
    let mut max_ci_margin = f64::NEG_INFINITY;
    if rho < 1.0 {
        for (user, h) in channels.iter().enumerate() {
            for slot in 0..s {
                let c = CiConstraint::new(
                    h,
                    scene.symbol_phase(user, slot),
                    gamma_prime,
                    sigma_c,
                    &scene.constellation,
                )?;
                let col: CVec = DVector::from_column_slice(symbols.column(slot).as_slice());
                max_ci_margin =
                    max_ci_margin.max(scaled_ci_margin(&c, &col)? / (power.sqrt() * h.norm()));
            }
        }
    }

    let mut warnings = Vec::new();
    if relaxation_gap > 1e-3 {
        warnings.push(format!("relaxation gap {relaxation_gap:.3e} exceeds 1e-3"));
    }
    if completion.shortfall > 1e-6 {
        warnings.push(format!(
            "waveform completion left {:.3e} of the covariance trace unrealized",
            completion.shortfall
        ));
    }
    if tx_power > power * (1.0 + 1e-6) {
        warnings.push(format!(
            "transmit power {tx_power:.6e} exceeds the budget {power:.6e}"
        ));
    }
    for w in &warnings {
        warn!("rho = {rho}: {w}");
    }

    let mut design = SlpDesign {
        weight: rho,
        crb_relaxed: CrbReport::from_covariance(scene, &covariance),
        crb_waveform: CrbReport::from_covariance(scene, &covariance_of(&symbols)),
        symbols,
        solver_symbols,
        covariances,
        covariance,
        gamma_prime,
        crb_bounds,
        objective: 0.0,
        normalizers: *normalizers,
        relaxation_gap,
        completion_shortfall: completion.shortfall,
        power: tx_power,
        max_ci_margin,
        residuals,
        iterations: sol.iterations,
        warnings,
    };
    design.renormalize(*normalizers);
    Ok(design)
}

/// Solves the two extremes and returns `(NF_R, NF_C)` with the `rho = 1`
/// and `rho = 0` designs.
pub(crate) fn normalization_designs(
    scene: &Scene,
    options: &DesignOptions,
) -> Result<(Normalizers, SlpDesign, SlpDesign)> {
    let channels = scene.channels()?;
    let fim = ScaledFim::new(scene)?;
    let provisional = Normalizers {
        sensing: fim.reference(),
        communication: gamma_reference(scene, &channels),
    };
    let sensing = design_slp_with(scene, 1.0, &provisional, options)
        .map_err(|e| extreme_error("rho = 1", e))?;
    let comm = design_slp_with(scene, 0.0, &provisional, options)
        .map_err(|e| extreme_error("rho = 0", e))?;
    let nf = Normalizers {
        sensing: sensing.crb_sum(),
        communication: comm.gamma_prime,
    };
    if !(nf.communication > 0.0) {
        return Err(Error::Infeasible(format!(
            "rho = 0 extreme: no positive CI threshold is achievable (gamma' = {:.3e})",
            nf.communication
        )));
    }
    if !(nf.sensing > 0.0) {
        return Err(Error::Infeasible(format!(
            "rho = 1 extreme: sum of CRB bounds is {:.3e}",
            nf.sensing
        )));
    }
    Ok((nf, sensing, comm))
}

fn extreme_error(which: &str, e: Error) -> Error {
    match e {
        Error::Infeasible(m) => Error::Infeasible(format!("{which} extreme: {m}")),
        Error::Solver { status, residuals } => Error::Solver {
            status: format!("{which} extreme: {status}"),
            residuals,
        },
        other => other,
    }
}

/// `NF_R = sum t_i` at the `rho = 1` optimum and `NF_C = gamma'` at the
/// `rho = 0` optimum.
pub fn normalization_factors(scene: &Scene, options: &DesignOptions) -> Result<Normalizers> {
    normalization_designs(scene, options).map(|(nf, _, _)| nf)
}

/// Computes the normalizers and solves for `rho`.
pub fn design_slp(scene: &Scene, rho: f64, options: &DesignOptions) -> Result<SlpDesign> {
    validate_weight(rho)?;
    let (nf, mut sensing, mut comm) = normalization_designs(scene, options)?;
    if rho == 1.0 {
        sensing.renormalize(nf);
        return Ok(sensing);
    }
    if rho == 0.0 {
        comm.renormalize(nf);
        return Ok(comm);
    }
    design_slp_with(scene, rho, &nf, options)
}

#[cfg(test)]
mod tests {
    use super::super::test_scenes::small;
    use super::*;
    use crate::array::{user_channel, ArrayConfig, PolarPoint, Target};
    use crate::ci::PskConstellation;

    fn single_element_scene(power: f64, comm_noise: f64) -> Scene {
        let array = ArrayConfig::half_wavelength(1, 0.1).unwrap();
        let user = PolarPoint::from_degrees(2.0, 70.0).unwrap();
        let target = Target::new(
            PolarPoint::from_degrees(3.0, 100.0).unwrap(),
            Complex64::new(1.0, 0.0),
        )
        .unwrap();
        Scene::new(
            array,
            vec![user],
            vec![target],
            1.0,
            comm_noise,
            power,
            1,
            PskConstellation::new(4).unwrap(),
            5,
        )
        .unwrap()
    }

    #[test]
    fn census_matches_closed_form() {
        let scene = small(8, 12, 2, 2);
        let nf = Normalizers {
            sensing: 1.0,
            communication: 1.0,
        };
        for form in [Formulation::Aggregated, Formulation::PerSymbol] {
            let opts = DesignOptions {
                formulation: form,
                ..Default::default()
            };
            for rho in [0.0, 0.5, 1.0] {
                let p = assemble_p1(&scene, rho, &nf, &opts).unwrap();
                assert_eq!(
                    p.census(),
                    Census::p1(form, 8, 12, 2, 2, rho),
                    "{form:?} rho={rho}"
                );
            }
        }
        let agg = Census::p1(Formulation::Aggregated, 8, 12, 2, 2, 0.5);
        assert_eq!(agg.variables, 265);
        assert_eq!(agg.nonneg_rows, 49);
        assert_eq!(agg.psd_orders.len(), 9);
        assert_eq!(agg.psd_orders[0], 40);
    }

    #[test]
    fn size_guard() {
        let scene = small(8, 12, 2, 2);
        let nf = Normalizers {
            sensing: 1.0,
            communication: 1.0,
        };
        let opts = DesignOptions {
            max_block_entries: 50,
            ..Default::default()
        };
        assert!(matches!(
            assemble_p1(&scene, 0.5, &nf, &opts),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn single_element_gamma_matches_analytic() {
        let scene = single_element_scene(2.0, 0.3);
        let h = user_channel(&scene.users[0], &scene.array).unwrap();
        let expected =
            (2.0f64).sqrt() * h.norm() * scene.constellation.half_angle().sin() / 0.3f64.sqrt();
        let nf = Normalizers {
            sensing: 1.0,
            communication: expected,
        };
        let d = design_slp_with(&scene, 0.0, &nf, &DesignOptions::default()).unwrap();
        assert!(
            (d.gamma_prime - expected).abs() < 1e-6 * expected,
            "{} vs {expected}",
            d.gamma_prime
        );
        assert!(d.max_ci_margin < 1e-6);
    }

    #[test]
    fn gamma_squared_scales_with_power() {
        let a = single_element_scene(1.0, 0.5);
        let b = single_element_scene(2.0, 0.5);
        let nf = Normalizers {
            sensing: 1.0,
            communication: 1.0,
        };
        let ga = design_slp_with(&a, 0.0, &nf, &DesignOptions::default())
            .unwrap()
            .gamma_prime;
        let gb = design_slp_with(&b, 0.0, &nf, &DesignOptions::default())
            .unwrap()
            .gamma_prime;
        assert!((gb * gb / (ga * ga) - 2.0).abs() < 1e-5);
    }

    #[test]
    fn formulations_agree() {
        let scene = small(4, 5, 2, 1);
        let nf = Normalizers {
            sensing: 1.0,
            communication: 1.0,
        };
        let mut values = Vec::new();
        for form in [Formulation::Aggregated, Formulation::PerSymbol] {
            let opts = DesignOptions {
                formulation: form,
                ..Default::default()
            };
            let nf = Normalizers {
                sensing: ScaledFim::new(&scene).unwrap().reference(),
                ..nf
            };
            let d = design_slp_with(&scene, 0.5, &nf, &opts).unwrap();
            values.push((d.objective, d.gamma_prime, d.crb_sum()));
        }
        let (a, b) = (values[0], values[1]);
        assert!(
            (a.0 - b.0).abs() < 1e-5 * (1.0 + a.0.abs()),
            "{a:?} vs {b:?}"
        );
    }

    #[test]
    fn design_invariants_hold() {
        let scene = small(6, 8, 2, 2);
        let opts = DesignOptions::default();
        let nf = normalization_factors(&scene, &opts).unwrap();
        let d = design_slp_with(&scene, 0.5, &nf, &opts).unwrap();
        assert!(d.residuals.below(1e-6), "{}", d.residuals);
        assert!(d.power <= scene.power_budget * (1.0 + 1e-6));
        assert!(d.max_ci_margin <= 1e-6);
        let mean_trace: f64 = d.covariances.iter().map(|r| r.trace().re).sum::<f64>() / 8.0;
        assert!(mean_trace <= scene.power_budget * (1.0 + 1e-6));
        for (slot, r) in d.covariances.iter().enumerate() {
            let xs = d.solver_symbols.column(slot);
            let mut block = CMat::zeros(7, 7);
            block.view_mut((0, 0), (6, 6)).copy_from(r);
            block.view_mut((0, 6), (6, 1)).copy_from(&xs);
            block.view_mut((6, 0), (1, 6)).copy_from(&xs.adjoint());
            block[(6, 6)] = Complex64::new(1.0, 0.0);
            let (vals, _) = hermitian_eigen(&block);
            assert!(vals[0] > -1e-6 * r.trace().re.max(1.0));
        }
        let relaxed = d.crb_relaxed.as_ref().unwrap().total();
        assert!(
            d.crb_sum() >= relaxed * (1.0 - 1e-5),
            "{} < {relaxed}",
            d.crb_sum()
        );
        assert!(d.crb_waveform.as_ref().unwrap().total() >= relaxed * (1.0 - 1e-6));
    }

    #[test]
    fn sensing_normalizer_ignores_users() {
        let opts = DesignOptions::default();
        let a = small(5, 6, 1, 1);
        let mut b = a.clone();
        b.users = vec![PolarPoint::from_degrees(7.0, 50.0).unwrap()];
        let nfa = normalization_factors(&a, &opts).unwrap();
        let nfb = normalization_factors(&b, &opts).unwrap();
        assert!((nfa.sensing - nfb.sensing).abs() < 1e-6 * nfa.sensing);
    }

    #[test]
    fn completion_realizes_covariance_and_preserves_reception() {
        let scene = small(5, 9, 2, 1);
        let h = scene.channels().unwrap();
        let x = CMat::from_fn(5, 9, |i, s| {
            Complex64::new((i + s) as f64 * 0.1, (i as f64 - s as f64) * 0.05)
        });
        let extra = CMat::from_fn(5, 2, |i, c| {
            Complex64::new((i * c) as f64 + 0.3, 0.2 * i as f64)
        });
        let r = covariance_of(&x) + &extra * extra.adjoint();
        let c = complete_waveform(&x, &r, &h, 4);
        for hk in &h {
            let before = hk.transpose() * &x;
            let after = hk.transpose() * &c.symbols;
            assert!((after - &before).norm() < 1e-9 * (1.0 + before.norm()));
        }
        let realized = covariance_of(&c.symbols);
        let diff = &r - &realized;
        let (vals, _) = hermitian_eigen(&diff);
        assert!(vals[0] > -1e-9 * r.trace().re);
        let free = complete_waveform(&CMat::zeros(5, 9), &r, &[], 4);
        assert!((covariance_of(&free.symbols) - &r).norm() < 1e-9 * r.norm());
        assert!(free.shortfall < 1e-12);
    }

    #[test]
    fn completion_reports_shortfall() {
        let r = CMat::identity(4, 4);
        let c = complete_waveform(&CMat::zeros(4, 2), &r, &[], 1);
        assert!((c.shortfall - 0.5).abs() < 1e-9);
    }
}
