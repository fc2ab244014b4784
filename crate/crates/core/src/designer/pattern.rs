//! Transmit beampatterns over (angle, range) points.

use serde::{Deserialize, Serialize};

use crate::array::{path_loss, steering_vector, ArrayConfig, PolarPoint};
use crate::error::{Error, Result};
use crate::grid::{linspace, local_maxima, PolarGrid};
use crate::linalg::{check_hermitian, CMat, RMat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternScale {
    /// Power delivered to the point, path loss included.
    Physical,
    /// Physical power divided by the path loss `beta(p)`.
    ArrayGain,
}

/// Power `v(p)^T R v(p)^*` radiated toward each point by a block with
/// sample covariance `r`, where `v(p)` is the transmit steering vector
/// (the received field is `v^T x`).
pub fn beampattern(
    r: &CMat,
    cfg: &ArrayConfig,
    points: &[PolarPoint],
    scale: PatternScale,
) -> Result<Vec<f64>> {
    let n = cfg.n_elements();
    if r.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "beampattern covariance",
            expected: n,
            found: r.nrows(),
        });
    }
    check_hermitian(r, 1e-9 * (1.0 + r.norm()))?;
    points
        .iter()
        .map(|p| {
            let v = steering_vector(p, cfg)?.entries;
            let vc = v.map(|z| z.conj());
            let power = (v.transpose() * r * vc)[(0, 0)].re.max(0.0);
            Ok(match scale {
                PatternScale::Physical => power,
                PatternScale::ArrayGain => power / path_loss(p, cfg)?,
            })
        })
        .collect()
}

/// Values in dB relative to the largest one.
pub fn to_db_peak(values: &[f64]) -> Vec<f64> {
    let peak = values.iter().copied().fold(0.0, f64::max);
    values
        .iter()
        .map(|&v| {
            if peak > 0.0 {
                10.0 * (v.max(peak * 1e-30) / peak).log10()
            } else {
                0.0
            }
        })
        .collect()
}

/// Beampattern sampled on a grid, rows indexed by angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerMap {
    pub grid: PolarGrid,
    pub power: RMat,
}

impl PowerMap {
    pub fn power_db(&self) -> RMat {
        let (na, nr) = self.grid.shape();
        let db = to_db_peak(self.power.transpose().as_slice());
        RMat::from_row_slice(na, nr, &db)
    }

    /// Strongest strict local maxima as grid points.
    pub fn peaks(&self, count: usize) -> Vec<PolarPoint> {
        local_maxima(&self.power, count)
            .0
            .into_iter()
            .map(|(ia, ir)| self.grid.point(ia, ir))
            .collect()
    }
}

pub fn beampattern_map(
    r: &CMat,
    cfg: &ArrayConfig,
    grid: &PolarGrid,
    scale: PatternScale,
) -> Result<PowerMap> {
    let values = beampattern(r, cfg, &grid.points(), scale)?;
    let (na, nr) = grid.shape();
    Ok(PowerMap {
        grid: grid.clone(),
        power: RMat::from_row_slice(na, nr, &values),
    })
}

/// Range-focusing contrast at `target`: array-gain power at the target over
/// its mean along the same direction for ranges in `[d/2, 2d]`. Close to
/// one (0 dB) when the pattern cannot resolve range there.
pub fn focusing_contrast(
    r: &CMat,
    cfg: &ArrayConfig,
    target: &PolarPoint,
    samples: usize,
) -> Result<f64> {
    target.validate()?;
    let ranges = linspace((0.5 * target.range, 2.0 * target.range), samples.max(2));
    let mut points: Vec<PolarPoint> = ranges
        .iter()
        .map(|&d| PolarPoint {
            range: d,
            angle: target.angle,
        })
        .collect();
    points.push(*target);
    let values = beampattern(r, cfg, &points, PatternScale::ArrayGain)?;
    let at_target = values[values.len() - 1];
    let mean = values[..values.len() - 1].iter().sum::<f64>() / (values.len() - 1) as f64;
    Ok(if mean > 0.0 { at_target / mean } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn cfg() -> ArrayConfig {
        ArrayConfig::half_wavelength(12, 1.0).unwrap()
    }

    #[test]
    fn identity_pattern_is_n_beta() {
        let c = cfg();
        let pts: Vec<PolarPoint> = (1..6)
            .map(|i| PolarPoint::new(2.0 + i as f64, 0.3 * i as f64).unwrap())
            .collect();
        let phys = beampattern(&CMat::identity(12, 12), &c, &pts, PatternScale::Physical).unwrap();
        for (p, v) in pts.iter().zip(phys) {
            let expect = 12.0 * path_loss(p, &c).unwrap();
            assert!((v - expect).abs() < 1e-12 * expect);
        }
        let gain = beampattern(&CMat::identity(12, 12), &c, &pts, PatternScale::ArrayGain).unwrap();
        assert!(gain.iter().all(|g| (g - 12.0).abs() < 1e-9));
    }

    #[test]
    fn matched_focusing_peaks_at_focus() {
        let c = cfg();
        let focus = PolarPoint::from_degrees(4.0, 80.0).unwrap();
        let v = steering_vector(&focus, &c)
            .unwrap()
            .entries
            .map(|z| z.conj());
        let r = &v * v.adjoint();
        let grid = PolarGrid::uniform(
            (60f64.to_radians(), 100f64.to_radians()),
            41,
            (2.0, 6.0),
            41,
        )
        .unwrap();
        let map = beampattern_map(&r, &c, &grid, PatternScale::ArrayGain).unwrap();
        assert_eq!(map.peaks(1)[0], grid.point(20, 20));
        let db = map.power_db();
        assert!(db.max().abs() < 1e-12);
    }

    #[test]
    fn patterns_are_nonnegative() {
        let c = cfg();
        let a = CMat::from_fn(12, 3, |i, k| {
            Complex64::new((i * k) as f64 * 0.1, i as f64 * 0.2 - 1.0)
        });
        let r = &a * a.adjoint();
        let pts: Vec<PolarPoint> = (1..30)
            .map(|i| PolarPoint::new(1.0 + 0.3 * i as f64, 0.1 * i as f64).unwrap())
            .collect();
        assert!(beampattern(&r, &c, &pts, PatternScale::Physical)
            .unwrap()
            .iter()
            .all(|&v| v >= 0.0));
    }

    #[test]
    fn contrast_falls_in_far_field() {
        let c = cfg();
        let near = PolarPoint::from_degrees(3.0, 90.0).unwrap();
        let far = PolarPoint::from_degrees(300.0, 90.0).unwrap();
        let focus = |p: &PolarPoint| {
            let v = steering_vector(p, &c).unwrap().entries.map(|z| z.conj());
            &v * v.adjoint()
        };
        let cn = focusing_contrast(&focus(&near), &c, &near, 60).unwrap();
        let cf = focusing_contrast(&focus(&far), &c, &far, 60).unwrap();
        assert!(cn > 1.3 * cf, "{cn} vs {cf}");
    }
}
