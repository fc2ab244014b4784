//! Trade-off sweeps over the weight `rho`.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::blp::BlpFrontier;
use super::slp::{design_slp_with, normalization_designs};
use super::{validate_weight, CrbReport, DesignOptions, Scene};
use crate::conic::Residuals;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecoderKind {
    Slp,
    Blp,
}

impl fmt::Display for PrecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrecoderKind::Slp => "slp",
            PrecoderKind::Blp => "blp",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub rho: f64,
    pub precoder: PrecoderKind,
    pub feasible: bool,
    /// `gamma'^2` for symbol-level designs, `gamma` for the baseline.
    pub sinr: Option<f64>,
    /// CRB of the design's relaxed covariance.
    pub crb: Option<CrbReport>,
    /// Sum of the epigraph bounds `t_i`.
    pub crb_sum: Option<f64>,
    pub status: String,
    pub residuals: Option<Residuals>,
}

impl TradeoffPoint {
    fn failed(rho: f64, precoder: PrecoderKind, e: &Error) -> Self {
        log::warn!("{precoder} point at rho = {rho} failed: {e}");
        Self {
            rho,
            precoder,
            feasible: false,
            sinr: None,
            crb: None,
            crb_sum: None,
            status: status_of(e).into(),
            residuals: None,
        }
    }
}

pub(crate) fn status_of(e: &Error) -> &'static str {
    match e {
        Error::Infeasible(_) => "infeasible",
        Error::Solver { .. } => "solver_error",
        Error::SingularFisher { .. } => "singular_fisher",
        _ => "error",
    }
}

/// One symbol-level and one baseline point per weight, in grid order.
/// Failed points are recorded as infeasible and the sweep continues.
pub fn tradeoff_sweep(
    scene: &Scene,
    rho_grid: &[f64],
    options: &DesignOptions,
) -> Result<Vec<TradeoffPoint>> {
    scene.validate()?;
    if rho_grid.is_empty() {
        return Err(Error::invalid("empty weight grid"));
    }
    for &rho in rho_grid {
        validate_weight(rho)?;
    }

    let slp: Vec<TradeoffPoint> = match normalization_designs(scene, options) {
        Err(e) => rho_grid
            .iter()
            .map(|&r| TradeoffPoint::failed(r, PrecoderKind::Slp, &e))
            .collect(),
        Ok((nf, sensing, comm)) => rho_grid
            .par_iter()
            .map(|&rho| {
                let design = if rho == 1.0 {
                    Ok(sensing.clone())
                } else if rho == 0.0 {
                    Ok(comm.clone())
                } else {
                    design_slp_with(scene, rho, &nf, options)
                };
                match design {
                    Ok(d) => TradeoffPoint {
                        rho,
                        precoder: PrecoderKind::Slp,
                        feasible: true,
                        sinr: Some(d.sinr()),
                        crb: d.crb_relaxed.clone(),
                        crb_sum: (!d.crb_bounds.is_empty()).then(|| d.crb_sum()),
                        status: "optimal".into(),
                        residuals: Some(d.residuals),
                    },
                    Err(e) => TradeoffPoint::failed(rho, PrecoderKind::Slp, &e),
                }
            })
            .collect(),
    };

    let blp: Vec<TradeoffPoint> = match BlpFrontier::compute(scene, options) {
        Err(e) => rho_grid
            .iter()
            .map(|&r| TradeoffPoint::failed(r, PrecoderKind::Blp, &e))
            .collect(),
        Ok(frontier) => rho_grid
            .par_iter()
            .map(|&rho| match frontier.design(scene, rho, options) {
                Ok(d) => TradeoffPoint {
                    rho,
                    precoder: PrecoderKind::Blp,
                    feasible: true,
                    sinr: Some(d.sinr()),
                    crb: d.crb_relaxed.clone(),
                    crb_sum: (!d.crb_bounds.is_empty()).then(|| d.crb_sum()),
                    status: "optimal".into(),
                    residuals: Some(d.residuals),
                },
                Err(e) => TradeoffPoint::failed(rho, PrecoderKind::Blp, &e),
            })
            .collect(),
    };

    Ok(slp.into_iter().zip(blp).flat_map(|(a, b)| [a, b]).collect())
}
