//! Experiment drivers behind the CLI subcommands.

use std::path::PathBuf;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::{Experiment, RunConfig};
use super::output::{
    beampattern_csv, block_csv, mc_csv, peaks_csv, spectrum_csv, to_db, tradeoff_csv, write_record,
    write_text, McRow, ResultRecord, SCHEMA_VERSION,
};
use crate::array::PolarPoint;
use crate::conic::Residuals;
use crate::designer::{
    beampattern_map, design_blp, design_slp, tradeoff_sweep, BlpDesign, CrbReport, DesignOptions,
    PowerMap, PrecoderKind, Scene, SlpDesign,
};
use crate::error::Result;
use crate::fisher::{ParameterKind, ParameterVector};
use crate::grid::PolarGrid;
use crate::linalg::CMat;
use crate::sensing::{
    estimation_error, find_peaks, music_spectrum_on, noise_subspace, sample_covariance, scene_echo,
    EstimationError, MusicGrid, PeakSet, SteeringTable,
};

pub enum Design {
    Slp(SlpDesign),
    Blp(BlpDesign),
}

impl Design {
    pub fn compute(
        scene: &Scene,
        precoder: PrecoderKind,
        rho: f64,
        options: &DesignOptions,
    ) -> Result<Self> {
        Ok(match precoder {
            PrecoderKind::Slp => Design::Slp(design_slp(scene, rho, options)?),
            PrecoderKind::Blp => Design::Blp(design_blp(scene, rho, options)?),
        })
    }

    /// Transmitted `N x S` block.
    pub fn symbols(&self) -> &CMat {
        match self {
            Design::Slp(d) => &d.symbols,
            Design::Blp(d) => &d.symbols,
        }
    }

    /// `(1/S) X X^H` of the transmitted block.
    pub fn sample_covariance(&self) -> CMat {
        let x = self.symbols();
        (x * x.adjoint()).scale(1.0 / x.ncols() as f64)
    }

    /// `gamma'^2` or `gamma`.
    pub fn sinr(&self) -> f64 {
        match self {
            Design::Slp(d) => d.sinr(),
            Design::Blp(d) => d.sinr(),
        }
    }

    pub fn residuals(&self) -> Residuals {
        match self {
            Design::Slp(d) => d.residuals,
            Design::Blp(d) => d.residuals,
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            Design::Slp(d) => &d.warnings,
            Design::Blp(d) => &d.warnings,
        }
    }

    pub fn metrics(&self, scene: &Scene) -> Value {
        match self {
            Design::Slp(d) => json!({
                "precoder": "slp",
                "rho": d.weight,
                "gamma_prime": d.gamma_prime,
                "sinr": d.sinr(),
                "sinr_db": to_db(d.sinr()),
                "crb_bound_sum": d.crb_sum(),
                "crb_bounds": d.crb_bounds,
                "crb_relaxed": crb_json(scene, d.crb_relaxed.as_ref()),
                "crb_waveform": crb_json(scene, d.crb_waveform.as_ref()),
                "objective": d.objective,
                "normalizers": {"sensing": d.normalizers.sensing, "communication": d.normalizers.communication},
                "relaxation_gap": d.relaxation_gap,
                "completion_shortfall": d.completion_shortfall,
                "power": d.power,
                "max_ci_margin": d.max_ci_margin,
                "iterations": d.iterations,
            }),
            Design::Blp(d) => json!({
                "precoder": "blp",
                "rho": d.weight,
                "gamma": d.gamma,
                "gamma_max": d.gamma_max,
                "sinr": d.sinr(),
                "sinr_db": to_db(d.sinr()),
                "achieved_gamma": d.achieved_gamma,
                "extraction_ok": d.extraction_ok,
                "crb_bound_sum": d.crb_sum(),
                "crb_bounds": d.crb_bounds,
                "crb_relaxed": crb_json(scene, d.crb_relaxed.as_ref()),
                "crb_waveform": crb_json(scene, d.crb_waveform.as_ref()),
                "objective": d.objective,
                "normalizers": {"sensing": d.normalizers.sensing, "communication": d.normalizers.communication},
                "power": d.power,
                "iterations": d.iterations,
            }),
        }
    }
}

fn crb_json(scene: &Scene, crb: Option<&CrbReport>) -> Value {
    let Some(c) = crb else {
        return Value::Null;
    };
    let pv = ParameterVector::new(scene.n_targets());
    let per_target: Vec<Value> = (0..scene.n_targets())
        .map(|l| {
            let root = |k: ParameterKind| c.diagonal[pv.index(k, l)].max(0.0).sqrt();
            json!({
                "rcrb_angle_rad": root(ParameterKind::Angle),
                "rcrb_range_m": root(ParameterKind::Range),
                "rcrb_reflectivity_re": root(ParameterKind::ReflectReal),
                "rcrb_reflectivity_im": root(ParameterKind::ReflectImag),
            })
        })
        .collect();
    json!({
        "total": c.total(),
        "rcrb_angle_rad": c.root_angle(),
        "rcrb_range_m": c.root_range(),
        "per_target": per_target,
    })
}

/// One MUSIC pass over a noisy echo of `x`.
#[derive(Debug, Clone)]
pub struct MusicTrial {
    pub seed: u64,
    pub spectrum: MusicGrid,
    pub peaks: PeakSet,
    /// `None` when fewer peaks than targets were found.
    pub error: Option<EstimationError>,
    pub success: bool,
    pub degenerate: bool,
}

/// Success means every target is matched within one angle cell and
/// `range_rel` relative range error.
pub fn music_trial(
    scene: &Scene,
    x: &CMat,
    table: &SteeringTable,
    cap: f64,
    seed: u64,
    range_rel: f64,
) -> Result<MusicTrial> {
    let echo = scene_echo(scene, x, seed)?;
    let r = sample_covariance(&echo)?;
    let noise = noise_subspace(&r, scene.n_targets())?;
    let spectrum = music_spectrum_on(&noise.basis, table, cap)?;
    let peaks = find_peaks(&spectrum, scene.n_targets())?;
    let truths: Vec<PolarPoint> = scene.targets.iter().map(|t| t.location).collect();
    let error = if peaks.shortfall {
        None
    } else {
        let est: Vec<PolarPoint> = peaks.peaks.iter().map(|p| p.location).collect();
        Some(estimation_error(&est, &truths)?)
    };
    let (cell, _) = table.grid.cell_size();
    let success = error
        .as_ref()
        .is_some_and(|e| e.all_within(&truths, cell * (1.0 + 1e-9), range_rel));
    Ok(MusicTrial {
        seed,
        spectrum,
        peaks,
        error,
        success,
        degenerate: noise.degenerate,
    })
}

/// Seed of Monte-Carlo trial `index`: the first word of stream `index` of
/// a ChaCha8 generator keyed by `base`.
pub fn trial_seed(base: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Relative range tolerance of a successful MUSIC trial.
pub const RANGE_TOLERANCE: f64 = 0.05;

/// Runs `trials` seeded MUSIC passes in parallel; results are in trial order.
pub fn monte_carlo(
    scene: &Scene,
    x: &CMat,
    grid: &PolarGrid,
    cap: f64,
    base_seed: u64,
    trials: usize,
) -> Result<Vec<MusicTrial>> {
    let table = SteeringTable::new(&scene.array, grid)?;
    (0..trials)
        .into_par_iter()
        .map(|i| {
            music_trial(
                scene,
                x,
                &table,
                cap,
                trial_seed(base_seed, i),
                RANGE_TOLERANCE,
            )
        })
        .collect()
}

/// Files written and the record of one run.
pub struct Outcome {
    pub record: ResultRecord,
    pub output_dir: PathBuf,
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let start = Instant::now();
    let scene = cfg.scene()?;
    let options = cfg.design_options();
    let dir = cfg.run.output_dir.clone();
    let mut files = Vec::new();
    let mut residuals = None;
    let mut warnings = Vec::new();
    let metrics = match cfg.run.experiment {
        Experiment::Design => {
            let d = Design::compute(&scene, cfg.design.precoder, cfg.design.rho, &options)?;
            files.push(write_text(&dir, "design.csv", &block_csv(d.symbols()))?);
            residuals = Some(d.residuals());
            warnings.extend(d.warnings().iter().cloned());
            d.metrics(&scene)
        }
        Experiment::Sweep => {
            let points = tradeoff_sweep(&scene, &cfg.design.rho_grid, &options)?;
            files.push(write_text(&dir, "tradeoff.csv", &tradeoff_csv(&points))?);
            json!({ "points": points })
        }
        Experiment::Beampattern => {
            let b = &cfg.beampattern;
            let d = Design::compute(&scene, b.precoder, b.rho, &options)?;
            let map = beampattern_map(
                &d.sample_covariance(),
                &scene.array,
                &cfg.beampattern_grid()?,
                b.scale,
            )?;
            files.push(write_text(&dir, "beampattern.csv", &beampattern_csv(&map))?);
            residuals = Some(d.residuals());
            warnings.extend(d.warnings().iter().cloned());
            json!({ "design": d.metrics(&scene), "peaks": pattern_peaks(&map, &scene) })
        }
        Experiment::Music => {
            let m = &cfg.music;
            let d = Design::compute(&scene, m.precoder, m.rho, &options)?;
            let table = SteeringTable::new(&scene.array, &cfg.music_grid()?)?;
            let t = music_trial(
                &scene,
                d.symbols(),
                &table,
                m.cap,
                cfg.run.seed,
                RANGE_TOLERANCE,
            )?;
            files.push(write_text(
                &dir,
                "spectrum.csv",
                &spectrum_csv(&t.spectrum),
            )?);
            files.push(write_text(&dir, "peaks.csv", &peaks_csv(&t.peaks.peaks))?);
            residuals = Some(d.residuals());
            warnings.extend(d.warnings().iter().cloned());
            if t.degenerate {
                warnings.push("noise subspace split is degenerate".into());
            }
            json!({
                "design": d.metrics(&scene),
                "shortfall": t.peaks.shortfall,
                "estimation_error": t.error,
                "success": t.success,
            })
        }
        Experiment::Mc => {
            let m = &cfg.music;
            let d = Design::compute(&scene, m.precoder, m.rho, &options)?;
            let trials = monte_carlo(
                &scene,
                d.symbols(),
                &cfg.music_grid()?,
                m.cap,
                cfg.run.seed,
                m.trials,
            )?;
            let rows = mc_rows(&scene, &trials);
            files.push(write_text(&dir, "mc_trials.csv", &mc_csv(&rows))?);
            residuals = Some(d.residuals());
            warnings.extend(d.warnings().iter().cloned());
            let successes = trials.iter().filter(|t| t.success).count();
            let errs: Vec<&EstimationError> =
                trials.iter().filter_map(|t| t.error.as_ref()).collect();
            let rms = |f: &dyn Fn(&EstimationError) -> f64| {
                (errs.iter().map(|e| f(e).powi(2)).sum::<f64>() / errs.len().max(1) as f64).sqrt()
            };
            json!({
                "design": d.metrics(&scene),
                "trials": trials.len(),
                "successes": successes,
                "success_rate": successes as f64 / trials.len().max(1) as f64,
                "shortfalls": trials.iter().filter(|t| t.peaks.shortfall).count(),
                "rmse_angle_rad": rms(&|e| e.rmse_angle),
                "rmse_range_m": rms(&|e| e.rmse_range),
            })
        }
    };
    let record = ResultRecord {
        schema_version: SCHEMA_VERSION,
        experiment: cfg.run.experiment.name().into(),
        seed: cfg.run.seed,
        inputs: cfg.to_text(),
        metrics,
        timing_s: start.elapsed().as_secs_f64(),
        residuals,
        warnings,
        files,
    };
    write_record(&dir, &record)?;
    Ok(Outcome {
        record,
        output_dir: dir,
    })
}

fn pattern_peaks(map: &PowerMap, scene: &Scene) -> Value {
    let db = map.power_db();
    let peaks: Vec<Value> = map
        .peaks(scene.n_targets())
        .iter()
        .map(|p| {
            let (ia, ir) = map.grid.nearest(p);
            json!({
                "angle_deg": p.angle.to_degrees(),
                "range_m": p.range,
                "power_db": db[(ia, ir)],
            })
        })
        .collect();
    Value::Array(peaks)
}

fn mc_rows(scene: &Scene, trials: &[MusicTrial]) -> Vec<McRow> {
    let mut rows = Vec::new();
    for (i, t) in trials.iter().enumerate() {
        for l in 0..scene.n_targets() {
            let matched = t
                .error
                .as_ref()
                .map(|e| (e, &t.peaks.peaks[e.assignment[l]]));
            rows.push(McRow {
                trial: i,
                seed: t.seed,
                target: l,
                angle_est_deg: matched.map(|(_, p)| p.location.angle.to_degrees()),
                range_est_m: matched.map(|(_, p)| p.location.range),
                angle_error_deg: matched.map(|(e, _)| e.angle_errors[l].to_degrees()),
                range_error_m: matched.map(|(e, _)| e.range_errors[l]),
                success: t.success,
            });
        }
    }
    rows
}
