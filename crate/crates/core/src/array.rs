//! Near-field uniform linear array geometry and channel vectors.
//!
//! Elements sit on the x-axis, centred on the reference element at the
//! origin. Angles are measured from the positive array axis, so broadside
//! is `pi/2`. Every channel, transmit and receive steering vector uses the
//! same spherical-wavefront model with a per-point (not per-element)
//! free-space amplitude.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CVec, J};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    n_elements: usize,
    wavelength: f64,
    spacing: f64,
}

impl ArrayConfig {
    pub fn new(n_elements: usize, wavelength: f64, spacing: f64) -> Result<Self> {
        if n_elements == 0 {
            return Err(Error::invalid("array needs at least one element"));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::invalid(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::invalid(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        Ok(Self {
            n_elements,
            wavelength,
            spacing,
        })
    }

    /// Half-wavelength array.
    pub fn half_wavelength(n_elements: usize, wavelength: f64) -> Result<Self> {
        Self::new(n_elements, wavelength, wavelength / 2.0)
    }

    /// Half-wavelength array at a carrier frequency in Hz.
    pub fn from_carrier(n_elements: usize, carrier_hz: f64) -> Result<Self> {
        if !(carrier_hz > 0.0) {
            return Err(Error::invalid("carrier frequency must be positive"));
        }
        Self::half_wavelength(n_elements, SPEED_OF_LIGHT / carrier_hz)
    }

    /// Builds a config where both wavelength and carrier are given; they must
    /// agree to 1e-6 relative.
    pub fn with_carrier(
        n_elements: usize,
        wavelength: f64,
        spacing: f64,
        carrier_hz: f64,
    ) -> Result<Self> {
        let cfg = Self::new(n_elements, wavelength, spacing)?;
        let rel = (wavelength * carrier_hz - SPEED_OF_LIGHT).abs() / SPEED_OF_LIGHT;
        if rel > 1e-6 {
            return Err(Error::invalid(format!(
                "wavelength {wavelength} m and carrier {carrier_hz} Hz disagree (relative error {rel:.2e})"
            )));
        }
        Ok(cfg)
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn carrier_frequency(&self) -> f64 {
        SPEED_OF_LIGHT / self.wavelength
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Element index offsets `n - (N + 1) / 2` for `n = 1..=N`.
    pub fn element_indices(&self) -> Vec<f64> {
        let center = (self.n_elements as f64 + 1.0) / 2.0;
        (1..=self.n_elements).map(|n| n as f64 - center).collect()
    }
}

/// Signed element positions along the array axis, in metres.
pub fn element_offsets(cfg: &ArrayConfig) -> Vec<f64> {
    cfg.element_indices()
        .into_iter()
        .map(|d| d * cfg.spacing)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub range: f64,
    pub angle: f64,
}

impl PolarPoint {
    pub fn new(range: f64, angle: f64) -> Result<Self> {
        let p = Self { range, angle };
        p.validate()?;
        Ok(p)
    }

    pub fn from_degrees(range: f64, angle_deg: f64) -> Result<Self> {
        Self::new(range, angle_deg.to_radians())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(Error::invalid(format!(
                "range must be positive, got {}",
                self.range
            )));
        }
        if !(self.angle > 0.0 && self.angle < PI) {
            return Err(Error::invalid(format!(
                "angle must lie in (0, pi), got {} rad",
                self.angle
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub location: PolarPoint,
    pub reflectivity: Complex64,
}

impl Target {
    pub fn new(location: PolarPoint, reflectivity: Complex64) -> Result<Self> {
        location.validate()?;
        if !(reflectivity.norm() > 0.0) {
            return Err(Error::invalid("target reflectivity must be nonzero"));
        }
        Ok(Self {
            location,
            reflectivity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SteeringKind {
    Transmit,
    Receive,
    UserChannel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub entries: CVec,
    pub kind: SteeringKind,
}

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Exact distance from each element to the point.
pub fn distance_profile(p: &PolarPoint, cfg: &ArrayConfig) -> Result<Vec<f64>> {
    p.validate()?;
    let (d, cos_t) = (p.range, p.angle.cos());
    let scale = d.max(cfg.spacing * cfg.n_elements as f64);
    element_offsets(cfg)
        .into_iter()
        .map(|x| {
            let r2 = d * d + x * x - 2.0 * d * x * cos_t;
            let r = r2.max(0.0).sqrt();
            if r <= 1e-12 * scale {
                Err(Error::DegenerateGeometry(format!(
                    "point (d={d}, theta={}) coincides with the element at {x} m",
                    p.angle
                )))
            } else {
                Ok(r)
            }
        })
        .collect()
}

/// Free-space amplitude gain `lambda^2 sin(theta) / (16 pi d^2)`.
pub fn path_loss(p: &PolarPoint, cfg: &ArrayConfig) -> Result<f64> {
    p.validate()?;
    let lam = cfg.wavelength;
    Ok(lam * lam * p.angle.sin() / (16.0 * PI * p.range * p.range))
}

pub fn steering_vector(p: &PolarPoint, cfg: &ArrayConfig) -> Result<SteeringVector> {
    steering_vector_of_kind(p, cfg, SteeringKind::Transmit)
}

pub fn steering_vector_of_kind(
    p: &PolarPoint,
    cfg: &ArrayConfig,
    kind: SteeringKind,
) -> Result<SteeringVector> {
    let r = distance_profile(p, cfg)?;
    let amp = path_loss(p, cfg)?.sqrt();
    let k = cfg.wavenumber();
    let entries = CVec::from_iterator(
        r.len(),
        r.iter().map(|&rn| Complex64::from_polar(amp, -k * rn)),
    );
    Ok(SteeringVector { entries, kind })
}

/// User channel vector `h_k`.
pub fn user_channel(p: &PolarPoint, cfg: &ArrayConfig) -> Result<CVec> {
    Ok(steering_vector_of_kind(p, cfg, SteeringKind::UserChannel)?.entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wrt {
    Angle,
    Range,
}

/// Analytic derivative of the steering vector with respect to angle or
/// range, including the derivative of the amplitude `sqrt(beta)`.
pub fn steering_derivative(p: &PolarPoint, cfg: &ArrayConfig, wrt: Wrt) -> Result<CVec> {
    let r = distance_profile(p, cfg)?;
    let amp = path_loss(p, cfg)?.sqrt();
    let k = cfg.wavenumber();
    let (d, t) = (p.range, p.angle);
    let (sin_t, cos_t) = t.sin_cos();
    let d_amp = match wrt {
        Wrt::Angle => amp * cos_t / (2.0 * sin_t),
        Wrt::Range => -amp / d,
    };
    let offsets = element_offsets(cfg);
    let out = r.iter().zip(offsets).map(|(&rn, x)| {
        let dr = match wrt {
            Wrt::Angle => d * x * sin_t / rn,
            Wrt::Range => (d - x * cos_t) / rn,
        };
        let phase = Complex64::from_polar(1.0, -k * rn);
        phase * (d_amp - J * (amp * k * dr))
    });
    Ok(CVec::from_iterator(r.len(), out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FraunhoferDistances {
    /// `2 D^2 / lambda` with aperture `D = (N - 1) spacing`.
    pub classic: f64,
    /// `(N spacing)^2 / lambda`.
    pub array: f64,
}

pub fn fraunhofer_distances(cfg: &ArrayConfig) -> FraunhoferDistances {
    let n = cfg.n_elements as f64;
    let aperture = (n - 1.0) * cfg.spacing;
    FraunhoferDistances {
        classic: 2.0 * aperture * aperture / cfg.wavelength,
        array: (n * cfg.spacing).powi(2) / cfg.wavelength,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(n: usize) -> ArrayConfig {
        ArrayConfig::new(n, 0.01, 0.005).unwrap()
    }

    #[test]
    fn offsets_small_arrays() {
        assert_eq!(element_offsets(&cfg(3)), vec![-0.005, 0.0, 0.005]);
        assert_eq!(element_offsets(&cfg(1)), vec![0.0]);
        let four = element_offsets(&cfg(4));
        for (a, b) in four.iter().zip([-0.0075, -0.0025, 0.0025, 0.0075]) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn offsets_are_symmetric_and_evenly_spaced() {
        let off = element_offsets(&cfg(9));
        for (a, b) in off.iter().zip(off.iter().rev()) {
            assert_relative_eq!(*a, -*b, epsilon = 1e-15);
        }
        for w in off.windows(2) {
            assert_relative_eq!(w[1] - w[0], 0.005, epsilon = 1e-15);
        }
    }

    #[test]
    fn distances_center_and_broadside() {
        let c = cfg(5);
        let p = PolarPoint::new(3.0, 1.1).unwrap();
        assert_relative_eq!(distance_profile(&p, &c).unwrap()[2], 3.0, epsilon = 1e-15);
        let b = PolarPoint::new(2.0, PI / 2.0).unwrap();
        let r = distance_profile(&b, &c).unwrap();
        for (rn, x) in r.iter().zip(element_offsets(&c)) {
            assert_relative_eq!(*rn, (4.0 + x * x).sqrt(), epsilon = 1e-14);
        }
    }

    #[test]
    fn distances_direct_formula() {
        let c = cfg(3);
        let p = PolarPoint::new(5.0, PI / 4.0).unwrap();
        let r = distance_profile(&p, &c).unwrap();
        let expect = |x: f64| (25.0 + x * x - 2.0 * 5.0 * x * (PI / 4.0).cos()).sqrt();
        assert_relative_eq!(r[0], expect(-0.005), epsilon = 1e-14);
        assert_relative_eq!(r[1], 5.0, epsilon = 1e-14);
        assert_relative_eq!(r[2], expect(0.005), epsilon = 1e-14);
        assert!((r[0] - 5.003_536_783).abs() < 1e-9);
        assert!((r[2] - 4.996_465_717).abs() < 1e-9);
    }

    #[test]
    fn distance_mirror_symmetry() {
        let c = cfg(7);
        let p = PolarPoint::new(1.3, 0.7).unwrap();
        let q = PolarPoint::new(1.3, PI - 0.7).unwrap();
        let a = distance_profile(&p, &c).unwrap();
        let mut b = distance_profile(&q, &c).unwrap();
        b.reverse();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(*x, *y, epsilon = 1e-14);
        }
    }

    #[test]
    fn degenerate_point_on_element() {
        let c = ArrayConfig::new(3, 0.01, 1.0).unwrap();
        // Element at +1 m sits at angle 0 which is excluded; approach it closely.
        let p = PolarPoint::new(1.0, 1e-13).unwrap();
        assert!(matches!(
            distance_profile(&p, &c),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn path_loss_values() {
        let c = cfg(4);
        let b = path_loss(&PolarPoint::new(10.0, PI / 2.0).unwrap(), &c).unwrap();
        assert_relative_eq!(b, 1e-4 / (16.0 * PI * 100.0), max_relative = 1e-14);
        assert_relative_eq!(b, 1.9894e-8, max_relative = 1e-4);
        let far = path_loss(&PolarPoint::new(20.0, PI / 2.0).unwrap(), &c).unwrap();
        assert_relative_eq!(far, b / 4.0, max_relative = 1e-14);
        let off = path_loss(&PolarPoint::new(10.0, 1.0).unwrap(), &c).unwrap();
        assert!(off < b);
        assert!(PolarPoint::new(1.0, 0.0).is_err());
        assert!(PolarPoint::new(1.0, PI).is_err());
    }

    #[test]
    fn steering_single_element_and_magnitudes() {
        let c = cfg(1);
        let p = PolarPoint::new(2.0, 1.0).unwrap();
        let v = steering_vector(&p, &c).unwrap();
        let beta = path_loss(&p, &c).unwrap();
        let expect = Complex64::from_polar(beta.sqrt(), -2.0 * PI * 2.0 / 0.01);
        assert!((v.entries[0] - expect).norm() < 1e-15);

        let c = cfg(12);
        let v = steering_vector(&p, &c).unwrap();
        let beta = path_loss(&p, &c).unwrap();
        for z in v.entries.iter() {
            assert_relative_eq!(z.norm(), beta.sqrt(), max_relative = 1e-12);
        }
        assert_relative_eq!(v.entries.norm_squared(), 12.0 * beta, max_relative = 1e-12);
    }

    #[test]
    fn far_field_phase_is_planar() {
        let c = cfg(8);
        let dfa = fraunhofer_distances(&c).array;
        let d = 200.0 * dfa;
        let theta = 1.2;
        let p = PolarPoint::new(d, theta).unwrap();
        let v = steering_vector(&p, &c).unwrap();
        let amp = path_loss(&p, &c).unwrap().sqrt();
        let k = c.wavenumber();
        for (z, x) in v.entries.iter().zip(element_offsets(&c)) {
            let planar = Complex64::from_polar(amp, -k * (d - x * theta.cos()));
            let dphi = (z / planar).arg().abs();
            assert!(dphi < 1e-2, "phase deviation {dphi}");
        }
    }

    fn fd_check(p: PolarPoint, c: &ArrayConfig, wrt: Wrt) -> f64 {
        let an = steering_derivative(&p, c, wrt).unwrap();
        let (h, plus, minus) = match wrt {
            Wrt::Angle => {
                let h = 1e-6 * p.angle;
                (
                    h,
                    PolarPoint {
                        angle: p.angle + h,
                        ..p
                    },
                    PolarPoint {
                        angle: p.angle - h,
                        ..p
                    },
                )
            }
            Wrt::Range => {
                let h = 1e-6 * p.range;
                (
                    h,
                    PolarPoint {
                        range: p.range + h,
                        ..p
                    },
                    PolarPoint {
                        range: p.range - h,
                        ..p
                    },
                )
            }
        };
        let vp = steering_vector(&plus, c).unwrap().entries;
        let vm = steering_vector(&minus, c).unwrap().entries;
        let fd = (vp - vm) / Complex64::new(2.0 * h, 0.0);
        (&an - fd).norm() / an.norm()
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let c = ArrayConfig::new(16, 0.5, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = PolarPoint::new(
                rng.random_range(2.0..50.0),
                rng.random_range(0.1 * PI..0.9 * PI),
            )
            .unwrap();
            for wrt in [Wrt::Angle, Wrt::Range] {
                let e = fd_check(p, &c, wrt);
                assert!(e < 1e-6, "{wrt:?} rel err {e} at {p:?}");
            }
        }
    }

    #[test]
    fn single_element_range_derivative() {
        let c = cfg(1);
        let p = PolarPoint::new(3.0, 0.9).unwrap();
        let beta = path_loss(&p, &c).unwrap();
        let k = c.wavenumber();
        // d/dd [ sqrt(beta) e^{-jkd} ] with sqrt(beta) ∝ 1/d
        let expect =
            Complex64::from_polar(1.0, -k * 3.0) * (-beta.sqrt() / 3.0 - J * beta.sqrt() * k);
        let got = steering_derivative(&p, &c, Wrt::Range).unwrap()[0];
        assert!((got - expect).norm() < 1e-12 * expect.norm());
    }

    #[test]
    fn broadside_center_element_has_no_phase_derivative() {
        let c = cfg(5);
        let p = PolarPoint::new(4.0, PI / 2.0).unwrap();
        let dv = steering_derivative(&p, &c, Wrt::Angle).unwrap();
        // The amplitude term is proportional to cos(theta), which is only
        // zero up to rounding at pi/2.
        let v = steering_vector(&p, &c).unwrap().entries;
        assert!(dv[2].norm() < 1e-15 * v[2].norm());
        assert!(dv[0].norm() > 1e-6 * v[0].norm());
    }

    #[test]
    fn fraunhofer_values() {
        let lam = 0.01;
        let two = ArrayConfig::half_wavelength(2, lam).unwrap();
        assert_relative_eq!(
            fraunhofer_distances(&two).classic,
            lam / 2.0,
            max_relative = 1e-14
        );
        let big = ArrayConfig::new(201, 0.01, 0.005).unwrap();
        assert_relative_eq!(
            fraunhofer_distances(&big).array,
            1.005f64.powi(2) / 0.01,
            max_relative = 1e-12
        );
        assert!((fraunhofer_distances(&big).array - 101.0).abs() < 0.01);
        let small = ArrayConfig::new(50, 0.01, 0.005).unwrap();
        let dbl = ArrayConfig::new(100, 0.01, 0.005).unwrap();
        let ratio = fraunhofer_distances(&dbl).array / fraunhofer_distances(&small).array;
        assert_relative_eq!(ratio, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn carrier_consistency() {
        assert!(ArrayConfig::with_carrier(4, SPEED_OF_LIGHT / 30e9, 0.005, 30e9).is_ok());
        assert!(ArrayConfig::with_carrier(4, 0.02, 0.005, 30e9).is_err());
        let c = ArrayConfig::from_carrier(4, 30e9).unwrap();
        assert_relative_eq!(c.wavelength(), 0.009993, max_relative = 1e-3);
        assert!(ArrayConfig::new(0, 0.01, 0.005).is_err());
    }
}
