//! Constructive-interference regions for M-PSK and the per-symbol
//! constraint used by symbol-level precoding.
//!
//! A noiseless received sample `y = h^T x` decodes with margin when, after
//! de-rotation by the intended symbol phase, it sits inside the sector
//! `|arg| <= psi` at distance at least `gamma' * sigma_c` from both edges.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CVec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PskConstellation {
    order: usize,
    amplitude: f64,
}

impl PskConstellation {
    /// Unit-amplitude M-PSK. `order` must be a power of two and at least 2.
    pub fn new(order: usize) -> Result<Self> {
        Self::with_amplitude(order, 1.0)
    }

    pub fn with_amplitude(order: usize, amplitude: f64) -> Result<Self> {
        if order < 2 || !order.is_power_of_two() {
            return Err(Error::invalid(format!(
                "PSK order must be a power of two >= 2, got {order}"
            )));
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::invalid("PSK amplitude must be positive"));
        }
        Ok(Self { order, amplitude })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Half-width `psi = pi / M` of each decision sector.
    pub fn half_angle(&self) -> f64 {
        PI / self.order as f64
    }

    pub fn phase(&self, index: usize) -> f64 {
        2.0 * PI * (index % self.order) as f64 / self.order as f64
    }

    pub fn symbol(&self, index: usize) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase(index))
    }
}

/// `h_tilde = h * exp(-j phi)`.
pub fn rotate_channel(h: &CVec, symbol_phase: f64) -> CVec {
    let rot = Complex64::from_polar(1.0, -symbol_phase);
    h.map(|z| z * rot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiConstraint {
    pub rotated_channel: CVec,
    /// `gamma' * sigma_c`, the required distance from each sector edge.
    pub edge_distance: f64,
    pub half_angle: f64,
}

impl CiConstraint {
    pub fn new(
        channel: &CVec,
        symbol_phase: f64,
        gamma_prime: f64,
        sigma_c: f64,
        psk: &PskConstellation,
    ) -> Result<Self> {
        if !(gamma_prime >= 0.0) || !(sigma_c >= 0.0) {
            return Err(Error::invalid("CI threshold inputs must be nonnegative"));
        }
        Ok(Self {
            rotated_channel: rotate_channel(channel, symbol_phase),
            edge_distance: gamma_prime * sigma_c,
            half_angle: psk.half_angle(),
        })
    }

    /// `gamma' sigma_c / cos(psi)`; infinite for BPSK.
    pub fn threshold(&self) -> f64 {
        self.edge_distance / self.half_angle.cos()
    }

    pub fn tan_psi(&self) -> f64 {
        self.half_angle.tan()
    }

    pub fn received(&self, x: &CVec) -> Complex64 {
        self.rotated_channel
            .iter()
            .zip(x.iter())
            .map(|(h, v)| h * v)
            .sum()
    }
}

/// `|Im y| - Re y * tan(psi) + gamma' sigma_c / cos(psi)` for
/// `y = h_tilde^T x`; the constraint holds when this is `<= 0`.
///
/// For BPSK the printed form is unbounded, so the equivalent
/// `cos(psi)`-scaled margin is returned instead (see [`scaled_ci_margin`]).
pub fn ci_margin(c: &CiConstraint, x: &CVec) -> Result<f64> {
    check_len(c, x)?;
    let y = c.received(x);
    if c.half_angle.cos() < 1e-12 {
        return scaled_ci_margin(c, x);
    }
    Ok(y.im.abs() - y.re * c.tan_psi() + c.threshold())
}

/// `|Im y| cos(psi) - Re y sin(psi) + gamma' sigma_c`: the margin
/// multiplied by `cos(psi)`. It is minus the distance to the nearer sector
/// edge plus the required distance, and stays finite for every order.
pub fn scaled_ci_margin(c: &CiConstraint, x: &CVec) -> Result<f64> {
    check_len(c, x)?;
    let y = c.received(x);
    let (s, co) = c.half_angle.sin_cos();
    Ok(y.im.abs() * co - y.re * s + c.edge_distance)
}

fn check_len(c: &CiConstraint, x: &CVec) -> Result<()> {
    if c.rotated_channel.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "CI constraint vector",
            expected: c.rotated_channel.len(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Whether `received`, de-rotated by the symbol phase, lies in the closed
/// decision sector. The origin is counted as inside.
pub fn ci_region_contains(received: Complex64, symbol_phase: f64, psk: &PskConstellation) -> bool {
    let z = received * Complex64::from_polar(1.0, -symbol_phase);
    let (s, c) = psk.half_angle().sin_cos();
    z.re >= 0.0 && z.im.abs() * c <= z.re * s
}

/// Two affine rows over `[Re x; Im x]`: the constraint holds iff
/// `row . [Re x; Im x] + offset <= 0` for both rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CiRows {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub offset: f64,
}

/// Coefficients of `Re(h^T x)` and `Im(h^T x)` over `[Re x; Im x]`.
pub fn received_coefficients(h: &CVec) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let mut re = vec![0.0; 2 * n];
    let mut im = vec![0.0; 2 * n];
    for (i, z) in h.iter().enumerate() {
        re[i] = z.re;
        re[n + i] = -z.im;
        im[i] = z.im;
        im[n + i] = z.re;
    }
    (re, im)
}

/// Rows `+-Im(y) cos(psi) - Re(y) sin(psi)`, with offset `gamma' sigma_c`.
pub fn linearized_ci_rows(c: &CiConstraint) -> CiRows {
    let (re, im) = received_coefficients(&c.rotated_channel);
    let (s, co) = c.half_angle.sin_cos();
    let row = |sign: f64| {
        re.iter()
            .zip(&im)
            .map(|(r, i)| sign * i * co - r * s)
            .collect::<Vec<_>>()
    };
    CiRows {
        plus: row(1.0),
        minus: row(-1.0),
        offset: c.edge_distance,
    }
}

pub fn stack_real(x: &CVec) -> Vec<f64> {
    x.iter()
        .map(|z| z.re)
        .chain(x.iter().map(|z| z.im))
        .collect()
}
