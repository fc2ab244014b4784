//! Rectangular (angle, range) grids and 8-neighborhood peak picking.

use serde::{Deserialize, Serialize};

use crate::array::PolarPoint;
use crate::error::{Error, Result};
use crate::linalg::RMat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarGrid {
    /// Ascending, radians.
    pub angles: Vec<f64>,
    /// Ascending, meters.
    pub ranges: Vec<f64>,
}

impl PolarGrid {
    pub fn new(angles: Vec<f64>, ranges: Vec<f64>) -> Result<Self> {
        if angles.is_empty() || ranges.is_empty() {
            return Err(Error::invalid("grid axes must be nonempty"));
        }
        let ascending = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if !ascending(&angles) || !ascending(&ranges) {
            return Err(Error::invalid("grid axes must be strictly ascending"));
        }
        if angles
            .iter()
            .any(|&a| !(a > 0.0 && a < std::f64::consts::PI))
        {
            return Err(Error::invalid("grid angles must lie in (0, pi)"));
        }
        if ranges.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::invalid("grid ranges must be positive"));
        }
        Ok(Self { angles, ranges })
    }

    /// `n_angles` by `n_ranges` points, endpoints included.
    pub fn uniform(
        angle_span: (f64, f64),
        n_angles: usize,
        range_span: (f64, f64),
        n_ranges: usize,
    ) -> Result<Self> {
        Self::new(
            linspace(angle_span, n_angles),
            linspace(range_span, n_ranges),
        )
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.angles.len(), self.ranges.len())
    }

    pub fn len(&self) -> usize {
        self.angles.len() * self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, ia: usize, ir: usize) -> PolarPoint {
        PolarPoint {
            range: self.ranges[ir],
            angle: self.angles[ia],
        }
    }

    /// Angle-major: all ranges of the first angle, then the next angle.
    pub fn points(&self) -> Vec<PolarPoint> {
        let mut out = Vec::with_capacity(self.len());
        for ia in 0..self.angles.len() {
            for ir in 0..self.ranges.len() {
                out.push(self.point(ia, ir));
            }
        }
        out
    }

    /// Spacing of each axis (zero for a single-point axis).
    pub fn cell_size(&self) -> (f64, f64) {
        let step = |v: &[f64]| {
            if v.len() < 2 {
                0.0
            } else {
                (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64
            }
        };
        (step(&self.angles), step(&self.ranges))
    }

    /// Index of the grid point nearest to `p` on each axis.
    pub fn nearest(&self, p: &PolarPoint) -> (usize, usize) {
        (
            nearest_index(&self.angles, p.angle),
            nearest_index(&self.ranges, p.range),
        )
    }
}

pub fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn nearest_index(axis: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (i, &a) in axis.iter().enumerate() {
        if (a - v).abs() < (axis[best] - v).abs() {
            best = i;
        }
    }
    best
}

/// Cells whose value is strictly greater than every 8-neighbor, in
/// descending order of value with ties broken by lower row then lower
/// column. At most `count` are returned; the flag is set when fewer exist.
pub fn local_maxima(values: &RMat, count: usize) -> (Vec<(usize, usize)>, bool) {
    let (rows, cols) = values.shape();
    let mut found = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let v = values[(i, j)];
            if !v.is_finite() {
                continue;
            }
            let mut is_max = true;
            'nb: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= rows as i64 || nj >= cols as i64 {
                        continue;
                    }
                    if values[(ni as usize, nj as usize)] >= v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                found.push((i, j));
            }
        }
    }
    found.sort_by(|a, b| values[*b].total_cmp(&values[*a]).then(a.cmp(b)));
    let shortfall = found.len() < count;
    found.truncate(count);
    (found, shortfall)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_includes_endpoints() {
        let v = linspace((1.0, 2.0), 5);
        assert_eq!(v, vec![1.0, 1.25, 1.5, 1.75, 2.0]);
    }

    #[test]
    fn rejects_unsorted_axes() {
        assert!(PolarGrid::new(vec![1.0, 0.5], vec![1.0]).is_err());
        assert!(PolarGrid::new(vec![0.5], vec![]).is_err());
    }

    #[test]
    fn points_are_angle_major() {
        let g = PolarGrid::new(vec![0.5, 1.0], vec![2.0, 3.0, 4.0]).unwrap();
        let p = g.points();
        assert_eq!(p.len(), 6);
        assert_eq!((p[1].angle, p[1].range), (0.5, 3.0));
        assert_eq!((p[3].angle, p[3].range), (1.0, 2.0));
    }

    #[test]
    fn single_spike() {
        let mut m = RMat::zeros(5, 4);
        m[(2, 3)] = 1.0;
        let (peaks, short) = local_maxima(&m, 1);
        assert_eq!(peaks, vec![(2, 3)]);
        assert!(!short);
    }

    #[test]
    fn plateau_is_not_a_strict_maximum() {
        let mut m = RMat::zeros(3, 3);
        m[(1, 1)] = 1.0;
        m[(1, 2)] = 1.0;
        let (peaks, short) = local_maxima(&m, 1);
        assert!(peaks.is_empty());
        assert!(short);
    }

    #[test]
    fn peaks_sorted_by_value() {
        let mut m = RMat::zeros(6, 6);
        m[(0, 0)] = 1.0;
        m[(4, 4)] = 3.0;
        m[(2, 5)] = 2.0;
        let (peaks, _) = local_maxima(&m, 3);
        assert_eq!(peaks, vec![(4, 4), (2, 5), (0, 0)]);
    }

    #[test]
    fn nearest_point() {
        let g = PolarGrid::uniform((0.5, 1.5), 11, (1.0, 2.0), 11).unwrap();
        let (ia, ir) = g.nearest(&PolarPoint {
            range: 1.52,
            angle: 0.81,
        });
        assert_eq!((ia, ir), (3, 5));
    }
}
