//! CSV emission at 12 significant digits and JSON result records.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conic::Residuals;
use crate::designer::{PowerMap, TradeoffPoint};
use crate::error::Result;
use crate::linalg::CMat;
use crate::sensing::{MusicGrid, Peak};

pub const SCHEMA_VERSION: u32 = 1;

/// Shortest decimal that reproduces `v` rounded to 12 significant digits.
pub fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return "0".into();
    }
    rounded.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

pub fn tradeoff_csv(points: &[TradeoffPoint]) -> String {
    let mut s =
        String::from("rho,precoder,sinr_db,rcrb_angle_rad,rcrb_range_m,feasible,solver_status\n");
    for p in points {
        let (sinr, angle, range) = if p.feasible {
            (
                p.sinr.map(to_db),
                p.crb.as_ref().map(|c| c.root_angle()),
                p.crb.as_ref().map(|c| c.root_range()),
            )
        } else {
            (None, None, None)
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            fmt_num(p.rho),
            p.precoder,
            opt(sinr),
            opt(angle),
            opt(range),
            p.feasible,
            p.status
        );
    }
    s
}

/// Rows in angle-major order, power in dB relative to the map's peak.
pub fn beampattern_csv(map: &PowerMap) -> String {
    let db = map.power_db();
    let mut s = String::from("theta_deg,range_m,power_db\n");
    for (ia, a) in map.grid.angles.iter().enumerate() {
        for (ir, r) in map.grid.ranges.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{}",
                fmt_num(a.to_degrees()),
                fmt_num(*r),
                fmt_num(db[(ia, ir)])
            );
        }
    }
    s
}

pub fn spectrum_csv(g: &MusicGrid) -> String {
    let mut s = String::from("angle_deg,range_m,value\n");
    for (ia, a) in g.angles.iter().enumerate() {
        for (ir, r) in g.ranges.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{}",
                fmt_num(a.to_degrees()),
                fmt_num(*r),
                fmt_num(g.spectrum[(ia, ir)])
            );
        }
    }
    s
}

pub fn peaks_csv(peaks: &[Peak]) -> String {
    let mut s = String::from("rank,angle_deg,range_m,value,angle_index,range_index\n");
    for (k, p) in peaks.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            k,
            fmt_num(p.location.angle.to_degrees()),
            fmt_num(p.location.range),
            fmt_num(p.value),
            p.angle_index,
            p.range_index
        );
    }
    s
}

/// Transmit block, one row per (slot, element).
pub fn block_csv(x: &CMat) -> String {
    let mut s = String::from("slot,element,re,im\n");
    for slot in 0..x.ncols() {
        for n in 0..x.nrows() {
            let v = x[(n, slot)];
            let _ = writeln!(s, "{},{},{},{}", slot, n, fmt_num(v.re), fmt_num(v.im));
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub trial: usize,
    pub seed: u64,
    pub target: usize,
    pub angle_est_deg: Option<f64>,
    pub range_est_m: Option<f64>,
    pub angle_error_deg: Option<f64>,
    pub range_error_m: Option<f64>,
    pub success: bool,
}

pub fn mc_csv(rows: &[McRow]) -> String {
    let mut s = String::from(
        "trial,seed,target,angle_est_deg,range_est_m,angle_error_deg,range_error_m,success\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.trial,
            r.seed,
            r.target,
            opt(r.angle_est_deg),
            opt(r.range_est_m),
            opt(r.angle_error_deg),
            opt(r.range_error_m),
            r.success
        );
    }
    s
}

/// One run's summary; appended as a JSON line to `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub experiment: String,
    pub seed: u64,
    /// The effective configuration, in config-file syntax.
    pub inputs: String,
    pub metrics: serde_json::Value,
    pub timing_s: f64,
    pub residuals: Option<Residuals>,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<String> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)?;
    Ok(name.to_string())
}

/// Writes `metrics.json` and appends the record to `records.jsonl`.
pub fn write_record(dir: &Path, record: &ResultRecord) -> Result<()> {
    fs::create_dir_all(dir)?;
    let pretty = serde_json::to_string_pretty(record).map_err(std::io::Error::other)?;
    fs::write(dir.join("metrics.json"), pretty + "\n")?;
    let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("records.jsonl"))?;
    writeln!(f, "{line}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::PolarPoint;
    use crate::designer::PrecoderKind;
    use num_complex::Complex64;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_num(0.1 + 0.2), "0.3");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(-2.5e-20), "-0.000000000000000000025");
        assert_eq!(fmt_num(123456789.123_456_7), "123456789.123");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_num(f64::NAN), "nan");
    }

    #[test]
    fn formatted_values_are_stable_under_reparse() {
        for v in [
            1.0 / 7.0,
            12345.678901234,
            9.99999999999951e-5,
            6.02214076e23,
        ] {
            let once = fmt_num(v);
            assert_eq!(fmt_num(once.parse().unwrap()), once);
            let rel = (once.parse::<f64>().unwrap() - v).abs() / v.abs();
            assert!(rel < 5e-12, "{v}: {once}");
        }
    }

    fn point(rho: f64, feasible: bool) -> TradeoffPoint {
        TradeoffPoint {
            rho,
            precoder: PrecoderKind::Blp,
            feasible,
            sinr: feasible.then_some(100.0),
            crb: None,
            crb_sum: None,
            status: if feasible { "optimal" } else { "infeasible" }.into(),
            residuals: None,
        }
    }

    #[test]
    fn infeasible_rows_have_empty_metrics() {
        let csv = tradeoff_csv(&[point(0.0, false), point(1.0, true)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "rho,precoder,sinr_db,rcrb_angle_rad,rcrb_range_m,feasible,solver_status"
        );
        assert_eq!(lines[1], "0,blp,,,,false,infeasible");
        assert_eq!(lines[2], "1,blp,20,,,true,optimal");
    }

    #[test]
    fn block_rows() {
        let x = CMat::from_fn(2, 3, |i, j| Complex64::new(i as f64, j as f64));
        let csv = block_csv(&x);
        assert_eq!(csv.lines().count(), 7);
        assert_eq!(csv.lines().nth(4).unwrap(), "1,1,1,1");
    }

    #[test]
    fn peak_rows() {
        let p = Peak {
            angle_index: 3,
            range_index: 4,
            location: PolarPoint::from_degrees(5.0, 90.0).unwrap(),
            value: 2.0,
        };
        assert_eq!(peaks_csv(&[p]).lines().nth(1).unwrap(), "0,90,5,2,3,4");
    }

    #[test]
    fn records_append() {
        let dir = tempfile::tempdir().unwrap();
        let rec = ResultRecord {
            schema_version: SCHEMA_VERSION,
            experiment: "design".into(),
            seed: 3,
            inputs: String::new(),
            metrics: serde_json::json!({"a": 1}),
            timing_s: 0.5,
            residuals: None,
            warnings: vec![],
            files: vec![],
        };
        write_record(dir.path(), &rec).unwrap();
        write_record(dir.path(), &rec).unwrap();
        let lines = fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 2);
        let back: ResultRecord = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(back, rec);
    }
}
