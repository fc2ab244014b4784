//! Radar echo simulation and 2D MUSIC angle/range estimation.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{steering_vector, ArrayConfig, PolarPoint, Target};
use crate::designer::Scene;
use crate::error::{Error, Result};
use crate::grid::{local_maxima, PolarGrid};
use crate::linalg::{hermitian_eigen, CMat, RMat};

/// Spectrum value used where the projected steering vector vanishes.
pub const DEFAULT_SPECTRUM_CAP: f64 = 1e12;

/// Relative denominator below which a spectrum cell is clamped.
const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Received echo block `Y = sum_l b_l a_l v_l^T X + Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoBlock {
    /// `N x S`.
    pub samples: CMat,
    pub noise_variance: f64,
    pub seed: u64,
}

/// Noiseless part of the echo.
pub fn echo_mean(cfg: &ArrayConfig, targets: &[Target], x: &CMat) -> Result<CMat> {
    let n = cfg.n_elements();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "symbol block rows",
            expected: n,
            found: x.nrows(),
        });
    }
    let mut y = CMat::zeros(n, x.ncols());
    for t in targets {
        let v = steering_vector(&t.location, cfg)?.entries;
        // a = v for a shared transmit/receive array.
        let vx = v.transpose() * x;
        y += (&v * vx) * t.reflectivity;
    }
    Ok(y)
}

/// Circularly-symmetric complex Gaussian noise, entries drawn column by
/// column as two real Gaussians of variance `sigma^2 / 2`.
pub fn complex_noise(rows: usize, cols: usize, noise_variance: f64, seed: u64) -> Result<CMat> {
    if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
        return Err(Error::invalid(format!(
            "noise variance must be nonnegative, got {noise_variance}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (0.5 * noise_variance).sqrt()).expect("finite deviation");
    let mut z = CMat::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            z[(r, c)] = Complex64::new(re, im);
        }
    }
    Ok(z)
}

pub fn generate_echo(
    cfg: &ArrayConfig,
    targets: &[Target],
    noise_variance: f64,
    x: &CMat,
    seed: u64,
) -> Result<EchoBlock> {
    let mean = echo_mean(cfg, targets, x)?;
    let noise = complex_noise(mean.nrows(), mean.ncols(), noise_variance, seed)?;
    Ok(EchoBlock {
        samples: mean + noise,
        noise_variance,
        seed,
    })
}

/// Echo of `x` from the targets of `scene`.
pub fn scene_echo(scene: &Scene, x: &CMat, seed: u64) -> Result<EchoBlock> {
    generate_echo(&scene.array, &scene.targets, scene.sensing_noise, x, seed)
}

/// `(1/S) Y Y^H`.
pub fn sample_covariance(e: &EchoBlock) -> Result<CMat> {
    let s = e.samples.ncols();
    if s == 0 {
        return Err(Error::invalid("echo block has no snapshots"));
    }
    let r = (&e.samples * e.samples.adjoint()).scale(1.0 / s as f64);
    Ok((&r + r.adjoint()).scale(0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSubspace {
    /// `N x (N - L)` orthonormal columns.
    pub basis: CMat,
    /// All eigenvalues of the covariance, ascending.
    pub eigenvalues: Vec<f64>,
    /// Set when the eigenvalues on either side of the split are not
    /// separated, so the split is not well defined.
    pub degenerate: bool,
}

impl NoiseSubspace {
    /// `|U_n^H a| / |a|`.
    pub fn leakage(&self, a: &nalgebra::DVector<Complex64>) -> f64 {
        (self.basis.adjoint() * a).norm() / a.norm()
    }
}

/// Eigenvectors of the `N - L` smallest eigenvalues of `r`.
pub fn noise_subspace(r: &CMat, n_targets: usize) -> Result<NoiseSubspace> {
    let n = r.nrows();
    if r.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "covariance columns",
            expected: n,
            found: r.ncols(),
        });
    }
    if n_targets >= n {
        return Err(Error::invalid(format!(
            "number of targets ({n_targets}) must be below the number of elements ({n})"
        )));
    }
    let (values, vectors) = hermitian_eigen(r);
    let k = n - n_targets;
    let top = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let degenerate =
        n_targets > 0 && (values[k] - values[k - 1]) <= 1e-9 * top.max(f64::MIN_POSITIVE);
    Ok(NoiseSubspace {
        basis: vectors.columns(0, k).into_owned(),
        eigenvalues: values,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicGrid {
    pub angles: Vec<f64>,
    pub ranges: Vec<f64>,
    /// `|angles| x |ranges|`.
    pub spectrum: RMat,
}

impl MusicGrid {
    pub fn grid(&self) -> PolarGrid {
        PolarGrid {
            angles: self.angles.clone(),
            ranges: self.ranges.clone(),
        }
    }
}

/// Receive steering vectors of every cell of a grid, stored as columns in
/// angle-major order so repeated spectra skip their evaluation.
#[derive(Debug, Clone)]
pub struct SteeringTable {
    pub grid: PolarGrid,
    /// `N x cells`.
    pub vectors: CMat,
    norms: Vec<f64>,
}

impl SteeringTable {
    pub fn new(cfg: &ArrayConfig, grid: &PolarGrid) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::invalid("MUSIC grid is empty"));
        }
        let points = grid.points();
        let columns = points
            .par_iter()
            .map(|p| steering_vector(p, cfg).map(|v| v.entries))
            .collect::<Result<Vec<_>>>()?;
        let vectors = CMat::from_columns(&columns);
        let norms = columns.iter().map(|a| a.norm_squared()).collect();
        Ok(Self {
            grid: grid.clone(),
            vectors,
            norms,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.vectors.nrows()
    }
}

/// `1 / (a^H U_n U_n^H a)` on every grid point, with `a` the receive
/// steering vector. Cells whose denominator falls below `1e-12 |a|^2`
/// are set to `cap`.
pub fn music_spectrum(
    noise: &CMat,
    cfg: &ArrayConfig,
    grid: &PolarGrid,
    cap: f64,
) -> Result<MusicGrid> {
    music_spectrum_on(noise, &SteeringTable::new(cfg, grid)?, cap)
}

/// [`music_spectrum`] over precomputed steering vectors.
pub fn music_spectrum_on(noise: &CMat, table: &SteeringTable, cap: f64) -> Result<MusicGrid> {
    let n = table.n_elements();
    if noise.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "noise subspace rows",
            expected: n,
            found: noise.nrows(),
        });
    }
    if !(cap > 0.0) {
        return Err(Error::invalid("spectrum cap must be positive"));
    }
    let (na, nr) = table.grid.shape();
    let uh = noise.adjoint();
    let rows: Vec<Vec<f64>> = (0..na)
        .into_par_iter()
        .map(|ia| {
            let block = &uh * table.vectors.columns(ia * nr, nr);
            (0..nr)
                .map(|ir| {
                    let denom = block.column(ir).norm_squared();
                    if denom < DENOMINATOR_FLOOR * table.norms[ia * nr + ir] {
                        cap
                    } else {
                        (1.0 / denom).min(cap)
                    }
                })
                .collect()
        })
        .collect();
    let spectrum = RMat::from_fn(na, nr, |i, j| rows[i][j]);
    Ok(MusicGrid {
        angles: table.grid.angles.clone(),
        ranges: table.grid.ranges.clone(),
        spectrum,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub angle_index: usize,
    pub range_index: usize,
    pub location: PolarPoint,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    pub peaks: Vec<Peak>,
    /// Fewer strict local maxima than requested.
    pub shortfall: bool,
}

/// The `count` strongest strict local maxima of the spectrum.
pub fn find_peaks(g: &MusicGrid, count: usize) -> Result<PeakSet> {
    if g.spectrum.len() <= count {
        return Err(Error::invalid(format!(
            "grid of {} cells cannot hold {count} distinct peaks",
            g.spectrum.len()
        )));
    }
    let (cells, shortfall) = local_maxima(&g.spectrum, count);
    let peaks = cells
        .into_iter()
        .map(|(ia, ir)| Peak {
            angle_index: ia,
            range_index: ir,
            location: PolarPoint {
                range: g.ranges[ir],
                angle: g.angles[ia],
            },
            value: g.spectrum[(ia, ir)],
        })
        .collect();
    Ok(PeakSet { peaks, shortfall })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationError {
    /// `assignment[l]` is the estimate matched to truth `l`.
    pub assignment: Vec<usize>,
    /// Estimate minus truth, radians.
    pub angle_errors: Vec<f64>,
    /// Estimate minus truth, meters.
    pub range_errors: Vec<f64>,
    pub rmse_angle: f64,
    pub rmse_range: f64,
}

impl EstimationError {
    /// Every truth matched within `angle_tol` radians and `range_rel`
    /// relative range error.
    pub fn all_within(&self, truths: &[PolarPoint], angle_tol: f64, range_rel: f64) -> bool {
        self.angle_errors.iter().all(|e| e.abs() <= angle_tol)
            && self
                .range_errors
                .iter()
                .zip(truths)
                .all(|(e, t)| e.abs() <= range_rel * t.range)
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// Matches estimates to truths by minimizing the total normalized distance
/// `|dtheta| + |dd| / d_truth` over all permutations.
pub fn estimation_error(
    estimates: &[PolarPoint],
    truths: &[PolarPoint],
) -> Result<EstimationError> {
    if estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            context: "estimate count",
            expected: truths.len(),
            found: estimates.len(),
        });
    }
    if truths.len() > 8 {
        return Err(Error::TooLarge(
            "assignment is brute force over at most 8 targets".into(),
        ));
    }
    let cost = |e: &PolarPoint, t: &PolarPoint| {
        (e.angle - t.angle).abs() + (e.range - t.range).abs() / t.range
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(truths.len()) {
        let c: f64 = perm
            .iter()
            .zip(truths)
            .map(|(&i, t)| cost(&estimates[i], t))
            .sum();
        if best.as_ref().is_none_or(|b| c < b.0) {
            best = Some((c, perm));
        }
    }
    let assignment = best.map(|b| b.1).unwrap_or_default();
    let angle_errors: Vec<f64> = assignment
        .iter()
        .zip(truths)
        .map(|(&i, t)| estimates[i].angle - t.angle)
        .collect();
    let range_errors: Vec<f64> = assignment
        .iter()
        .zip(truths)
        .map(|(&i, t)| estimates[i].range - t.range)
        .collect();
    let rms = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt()
        }
    };
    Ok(EstimationError {
        rmse_angle: rms(&angle_errors),
        rmse_range: rms(&range_errors),
        assignment,
        angle_errors,
        range_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::path_loss;
    use crate::grid::linspace;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> ArrayConfig {
        ArrayConfig::half_wavelength(16, 2.5).unwrap()
    }

    fn target(d: f64, deg: f64, cfg: &ArrayConfig) -> Target {
        let p = PolarPoint::from_degrees(d, deg).unwrap();
        Target::new(p, Complex64::new(1.0 / path_loss(&p, cfg).unwrap(), 0.0)).unwrap()
    }

    fn random_block(n: usize, s: usize, seed: u64) -> CMat {
        complex_noise(n, s, 1.0, seed).unwrap()
    }

    #[test]
    fn noiseless_single_target_is_rank_one_response() {
        let c = cfg();
        let p = PolarPoint::from_degrees(7.0, 80.0).unwrap();
        let t = Target::new(p, Complex64::new(1.0, 0.0)).unwrap();
        let x = random_block(16, 5, 1);
        let e = generate_echo(&c, &[t], 0.0, &x, 9).unwrap();
        let a = steering_vector(&p, &c).unwrap().entries;
        let expected = &a * (a.transpose() * &x);
        assert!((e.samples - expected).norm() < 1e-14);
    }

    #[test]
    fn noise_variance_matches() {
        let c = ArrayConfig::half_wavelength(4, 2.5).unwrap();
        let t = Target {
            location: PolarPoint::from_degrees(5.0, 90.0).unwrap(),
            reflectivity: Complex64::new(0.0, 0.0),
        };
        let x = CMat::from_element(4, 2500, Complex64::new(1.0, 0.0));
        let e = generate_echo(&c, &[t], 0.7, &x, 11).unwrap();
        let count = e.samples.len() as f64;
        let var = e.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / count;
        // |z|^2 is exponential with mean and deviation sigma^2.
        assert!((var - 0.7).abs() < 3.0 * 0.7 / count.sqrt(), "{var}");
    }

    #[test]
    fn echo_is_linear_with_shared_noise() {
        let c = cfg();
        let ts = [target(5.0, 90.0, &c), target(10.0, 90.0, &c)];
        let (x1, x2) = (random_block(16, 6, 2), random_block(16, 6, 3));
        let e12 = generate_echo(&c, &ts, 0.3, &(&x1 + &x2), 5).unwrap();
        let e1 = generate_echo(&c, &ts, 0.3, &x1, 5).unwrap();
        let m2 = echo_mean(&c, &ts, &x2).unwrap();
        assert!((e12.samples - e1.samples - &m2).norm() < 1e-9 * m2.norm());
    }

    #[test]
    fn echo_is_seed_reproducible() {
        let c = cfg();
        let ts = [target(5.0, 90.0, &c)];
        let x = random_block(16, 4, 2);
        let a = generate_echo(&c, &ts, 1.0, &x, 42).unwrap();
        let b = generate_echo(&c, &ts, 1.0, &x, 42).unwrap();
        assert_eq!(a, b);
        let other = generate_echo(&c, &ts, 1.0, &x, 43).unwrap();
        assert_ne!(a.samples, other.samples);
    }

    #[test]
    fn covariance_of_single_snapshot_and_zero() {
        let y = random_block(3, 1, 4);
        let e = EchoBlock {
            samples: y.clone(),
            noise_variance: 0.0,
            seed: 0,
        };
        let r = sample_covariance(&e).unwrap();
        assert!((r - &y * y.adjoint()).norm() < 1e-14);
        let z = EchoBlock {
            samples: CMat::zeros(3, 4),
            noise_variance: 0.0,
            seed: 0,
        };
        assert_eq!(sample_covariance(&z).unwrap(), CMat::zeros(3, 3));
    }

    proptest! {
        #[test]
        fn covariance_is_psd_with_frobenius_trace(seed in 0u64..500, s in 1usize..12) {
            let y = random_block(5, s, seed);
            let e = EchoBlock { samples: y.clone(), noise_variance: 1.0, seed };
            let r = sample_covariance(&e).unwrap();
            let tr = r.trace().re;
            prop_assert!((tr - y.norm_squared() / s as f64).abs() < 1e-12 * tr.max(1.0));
            let (vals, _) = hermitian_eigen(&r);
            prop_assert!(vals[0] >= -1e-12 * tr);
        }

        #[test]
        fn scaling_covariance_keeps_argmax(seed in 0u64..50, c in 0.01f64..100.0) {
            let cf = ArrayConfig::half_wavelength(6, 2.5).unwrap();
            let ts = [target(5.0, 95.0, &cf)];
            let x = random_block(6, 12, seed);
            let e = generate_echo(&cf, &ts, 1e-3, &x, seed).unwrap();
            let r = sample_covariance(&e).unwrap();
            let grid = PolarGrid::uniform((80f64.to_radians(), 110f64.to_radians()), 15, (3.0, 8.0), 11).unwrap();
            let g1 = music_spectrum(&noise_subspace(&r, 1).unwrap().basis, &cf, &grid, DEFAULT_SPECTRUM_CAP).unwrap();
            let g2 = music_spectrum(&noise_subspace(&r.scale(c), 1).unwrap().basis, &cf, &grid, DEFAULT_SPECTRUM_CAP).unwrap();
            prop_assert_eq!(g1.spectrum.iamax_full(), g2.spectrum.iamax_full());
        }
    }

    #[test]
    fn diagonal_noise_subspace() {
        let r = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(5.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
        ]));
        let ns = noise_subspace(&r, 1).unwrap();
        assert_eq!(ns.basis.ncols(), 2);
        assert!(ns.basis.row(0).norm() < 1e-12);
        assert!(!ns.degenerate);
    }

    #[test]
    fn identity_is_flagged_degenerate() {
        let ns = noise_subspace(&CMat::identity(4, 4), 2).unwrap();
        assert!(ns.degenerate);
        let gram = ns.basis.adjoint() * &ns.basis;
        assert!((gram - CMat::identity(2, 2)).norm() < 1e-10);
        assert!(noise_subspace(&CMat::identity(4, 4), 4).is_err());
    }

    #[test]
    fn noiseless_two_targets_are_orthogonal_to_noise_subspace() {
        let c = cfg();
        let ts = [target(5.0, 90.0, &c), target(10.0, 90.0, &c)];
        let x = random_block(16, 24, 6);
        let e = generate_echo(&c, &ts, 0.0, &x, 0).unwrap();
        let ns = noise_subspace(&sample_covariance(&e).unwrap(), 2).unwrap();
        let gram = ns.basis.adjoint() * &ns.basis;
        assert!((gram - CMat::identity(14, 14)).norm() < 1e-10);
        for t in &ts {
            let a = steering_vector(&t.location, &c).unwrap().entries;
            assert!(ns.leakage(&a) < 1e-8);
        }
    }

    #[test]
    fn steering_in_noise_subspace_gives_inverse_norm() {
        let c = ArrayConfig::half_wavelength(4, 2.5).unwrap();
        let grid = PolarGrid::new(vec![1.2], vec![6.0]).unwrap();
        let g = music_spectrum(&CMat::identity(4, 4), &c, &grid, DEFAULT_SPECTRUM_CAP).unwrap();
        let a = steering_vector(&grid.point(0, 0), &c).unwrap().entries;
        assert_relative_eq!(
            g.spectrum[(0, 0)],
            1.0 / a.norm_squared(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn noiseless_single_target_peak_at_nearest_cell() {
        let c = cfg();
        // On an angle grid line: between angle lines the range-angle coupling
        // of the spectrum can move the peak to a diagonal neighbor.
        let truth = PolarPoint::from_degrees(6.3, 97.0).unwrap();
        let t = Target::new(truth, Complex64::new(2.0, 1.0)).unwrap();
        let e = generate_echo(&c, &[t], 0.0, &random_block(16, 8, 3), 0).unwrap();
        let ns = noise_subspace(&sample_covariance(&e).unwrap(), 1).unwrap();
        let grid = PolarGrid::new(
            linspace((80f64.to_radians(), 110f64.to_radians()), 61),
            linspace((3.0, 10.0), 57),
        )
        .unwrap();
        let g = music_spectrum(&ns.basis, &c, &grid, DEFAULT_SPECTRUM_CAP).unwrap();
        assert!(g.spectrum.iter().all(|&v| v > 0.0 && v.is_finite()));
        let peaks = find_peaks(&g, 1).unwrap();
        assert_eq!(
            (peaks.peaks[0].angle_index, peaks.peaks[0].range_index),
            grid.nearest(&truth)
        );
    }

    #[test]
    fn exact_grid_hit_is_clamped() {
        let c = cfg();
        let truth = PolarPoint::new(6.0, 1.5).unwrap();
        let t = Target::new(truth, Complex64::new(1.0, 0.0)).unwrap();
        let e = generate_echo(&c, &[t], 0.0, &random_block(16, 8, 3), 0).unwrap();
        let ns = noise_subspace(&sample_covariance(&e).unwrap(), 1).unwrap();
        let grid = PolarGrid::new(vec![1.4, 1.5, 1.6], vec![5.0, 6.0, 7.0]).unwrap();
        let g = music_spectrum(&ns.basis, &c, &grid, 1e9).unwrap();
        assert_eq!(g.spectrum[(1, 1)], 1e9);
    }

    #[test]
    fn too_small_grid_is_rejected() {
        let g = MusicGrid {
            angles: vec![1.0],
            ranges: vec![2.0],
            spectrum: RMat::zeros(1, 1),
        };
        assert!(find_peaks(&g, 1).is_err());
    }

    #[test]
    fn assignment_is_order_invariant() {
        let truths = [
            PolarPoint::new(5.0, 1.5).unwrap(),
            PolarPoint::new(10.0, 1.5).unwrap(),
        ];
        let exact = estimation_error(&truths, &truths).unwrap();
        assert_eq!(exact.rmse_angle, 0.0);
        assert_eq!(exact.rmse_range, 0.0);
        let est = [
            PolarPoint::new(10.2, 1.52).unwrap(),
            PolarPoint::new(4.9, 1.49).unwrap(),
        ];
        let swapped = [est[1], est[0]];
        let a = estimation_error(&est, &truths).unwrap();
        let b = estimation_error(&swapped, &truths).unwrap();
        assert_eq!(a.angle_errors, b.angle_errors);
        assert_eq!(a.range_errors, b.range_errors);
        assert_eq!(a.assignment, vec![1, 0]);
    }

    #[test]
    fn injected_offsets_are_recovered() {
        let truths = [
            PolarPoint::new(5.0, 1.5).unwrap(),
            PolarPoint::new(10.0, 1.2).unwrap(),
            PolarPoint::new(8.0, 1.9).unwrap(),
        ];
        let offsets = [(0.01, -0.2), (-0.02, 0.3), (0.005, 0.1)];
        let est: Vec<PolarPoint> = truths
            .iter()
            .zip(&offsets)
            .map(|(t, &(da, dd))| PolarPoint::new(t.range + dd, t.angle + da).unwrap())
            .collect();
        let e = estimation_error(&est, &truths).unwrap();
        for (l, &(da, dd)) in offsets.iter().enumerate() {
            assert_relative_eq!(e.angle_errors[l], da, epsilon = 1e-12);
            assert_relative_eq!(e.range_errors[l], dd, epsilon = 1e-12);
        }
        assert!(estimation_error(&est[..2], &truths).is_err());
    }
}
