//! Run configuration: flat `[section]` blocks of `key = value` lines.
//!
//! Lists are comma separated, locations are written `range@angle_deg`,
//! complex reflectivities `re:im`, and weight grids either as a list or as
//! `start:step:stop`. `#` starts a comment. Every key has a default, so an
//! empty file describes the desk-scale scene.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{fraunhofer_distances, path_loss, ArrayConfig, PolarPoint, Target};
use crate::ci::PskConstellation;
use crate::designer::{
    random_schedule, DesignOptions, Formulation, PatternScale, PrecoderKind, Scene,
};
use crate::error::{Error, Result};
use crate::grid::{linspace, PolarGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub range: f64,
    pub angle_deg: f64,
}

impl Location {
    pub fn point(&self) -> Result<PolarPoint> {
        PolarPoint::from_degrees(self.range, self.angle_deg)
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.range, self.angle_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Reflectivity {
    /// `b_l = 1 / beta_l`, unit-amplitude echoes at the array.
    InversePathLoss,
    Values(Vec<Complex64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PowerSpec {
    Budget(f64),
    /// ASNR `P N^2 / sigma_R^2` in dB.
    AsnrDb(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CommNoiseSpec {
    Variance(f64),
    /// `P N mean_k(beta_k) / sigma_C^2` in dB.
    SnrDb(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    Design,
    Sweep,
    Beampattern,
    Music,
    Mc,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Design => "design",
            Experiment::Sweep => "sweep",
            Experiment::Beampattern => "beampattern",
            Experiment::Music => "music",
            Experiment::Mc => "mc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySection {
    pub elements: usize,
    pub wavelength: f64,
    /// Element spacing; half a wavelength when absent.
    pub spacing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSection {
    pub users: Vec<Location>,
    pub targets: Vec<Location>,
    pub reflectivity: Reflectivity,
    pub sensing_noise: f64,
    pub power: PowerSpec,
    pub comm_noise: CommNoiseSpec,
    pub symbols: usize,
    pub psk_order: usize,
    /// Explicit constellation indices, one row per user.
    pub schedule: Option<Vec<Vec<usize>>>,
    /// Seed of the random schedule used when none is given.
    pub schedule_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSection {
    pub precoder: PrecoderKind,
    pub rho: f64,
    pub rho_grid: Vec<f64>,
    pub formulation: Formulation,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicSection {
    /// Half-width of the angle window around the mean target angle.
    pub angle_span_deg: f64,
    pub angle_points: usize,
    pub range_min: f64,
    /// Upper range; `1.2 d_FA / 10` when absent.
    pub range_max: Option<f64>,
    pub range_points: usize,
    pub trials: usize,
    pub cap: f64,
    /// Weight of the design whose block illuminates the scene.
    pub rho: f64,
    pub precoder: PrecoderKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeampatternSection {
    pub angle_min_deg: f64,
    pub angle_max_deg: f64,
    pub angle_step_deg: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub range_step: f64,
    pub rho: f64,
    pub precoder: PrecoderKind,
    pub scale: PatternScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub array: ArraySection,
    pub scene: SceneSection,
    pub design: DesignSection,
    pub music: MusicSection,
    pub beampattern: BeampatternSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let loc = |range, angle_deg| Location { range, angle_deg };
        Self {
            array: ArraySection {
                elements: 16,
                wavelength: 2.5,
                spacing: None,
            },
            scene: SceneSection {
                users: vec![loc(10.0, 112.5), loc(15.0, 112.5)],
                targets: vec![loc(5.0, 90.0), loc(10.0, 90.0)],
                reflectivity: Reflectivity::InversePathLoss,
                sensing_noise: 1.0,
                power: PowerSpec::AsnrDb(10.0),
                comm_noise: CommNoiseSpec::SnrDb(30.0),
                symbols: 24,
                psk_order: 4,
                schedule: None,
                schedule_seed: 0,
            },
            design: DesignSection {
                precoder: PrecoderKind::Slp,
                rho: 0.5,
                rho_grid: weight_grid(0.0, 0.1, 1.0).expect("default grid is valid"),
                formulation: Formulation::Aggregated,
                tol: 1e-7,
            },
            music: MusicSection {
                angle_span_deg: 30.0,
                angle_points: 200,
                range_min: 1.0,
                range_max: None,
                range_points: 200,
                trials: 100,
                cap: crate::sensing::DEFAULT_SPECTRUM_CAP,
                rho: 1.0,
                precoder: PrecoderKind::Slp,
            },
            beampattern: BeampatternSection {
                angle_min_deg: 1.0,
                angle_max_deg: 179.0,
                angle_step_deg: 1.0,
                range_min: 1.0,
                range_max: 20.0,
                range_step: 0.25,
                rho: 1.0,
                precoder: PrecoderKind::Slp,
                scale: PatternScale::Physical,
            },
            run: RunSection {
                experiment: Experiment::Design,
                seed: 0,
                output_dir: PathBuf::from("out"),
            },
        }
    }
}

/// `start, start + step, ..., stop`, evaluated as `start + (stop - start) i / n`
/// so decimal grids hit their nodes exactly.
pub fn weight_grid(start: f64, step: f64, stop: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::invalid(format!("bad grid {start}:{step}:{stop}")));
    }
    let intervals = ((stop - start) / step).round();
    if ((stop - start) - intervals * step).abs() > 1e-9 * step.max(stop.abs()) {
        return Err(Error::invalid(format!(
            "step {step} does not divide [{start}, {stop}]"
        )));
    }
    let n = intervals as usize;
    if n > 100_000 {
        return Err(Error::invalid("grid has too many points"));
    }
    if n == 0 {
        return Ok(vec![start]);
    }
    Ok((0..=n)
        .map(|i| start + (stop - start) * i as f64 / n as f64)
        .collect())
}

/// Parses `start:step:stop` or a comma list.
pub fn parse_weight_grid(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    let grid = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!(
                "grid `{text}` is not start:step:stop"
            )));
        }
        let v = parts
            .iter()
            .map(|p| parse_f64(p))
            .collect::<Result<Vec<_>>>()?;
        weight_grid(v[0], v[1], v[2])?
    } else {
        split_list(text)
            .iter()
            .map(|p| parse_f64(p))
            .collect::<Result<Vec<_>>>()?
    };
    if grid.is_empty() {
        return Err(Error::invalid("empty weight grid"));
    }
    if let Some(w) = grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::invalid(format!("weight {w} outside [0, 1]")));
    }
    Ok(grid)
}

pub fn parse_precoder(text: &str) -> Result<PrecoderKind> {
    match text.trim() {
        "slp" => Ok(PrecoderKind::Slp),
        "blp" => Ok(PrecoderKind::Blp),
        other => Err(Error::invalid(format!(
            "unknown precoder `{other}` (slp, blp)"
        ))),
    }
}

fn parse_f64(text: &str) -> Result<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("`{}` is not a number", text.trim())))?;
    if !v.is_finite() {
        return Err(Error::invalid(format!("`{}` is not finite", text.trim())));
    }
    Ok(v)
}

fn parse_int<T: std::str::FromStr>(text: &str) -> Result<T> {
    text.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("`{}` is not a nonnegative integer", text.trim())))
}

fn split_list(text: &str) -> Vec<&str> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_locations(text: &str) -> Result<Vec<Location>> {
    split_list(text)
        .into_iter()
        .map(|item| {
            let (r, a) = item.split_once('@').ok_or_else(|| {
                Error::invalid(format!("location `{item}` is not range@angle_deg"))
            })?;
            let loc = Location {
                range: parse_f64(r)?,
                angle_deg: parse_f64(a)?,
            };
            loc.point()?;
            Ok(loc)
        })
        .collect()
}

fn parse_reflectivity(text: &str) -> Result<Reflectivity> {
    if text.trim() == "inverse_path_loss" {
        return Ok(Reflectivity::InversePathLoss);
    }
    let values = split_list(text)
        .into_iter()
        .map(|item| {
            let (re, im) = item
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("reflectivity `{item}` is not re:im")))?;
            Ok(Complex64::new(parse_f64(re)?, parse_f64(im)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Reflectivity::Values(values))
}

fn parse_schedule(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split(';')
        .map(|row| split_list(row).into_iter().map(parse_int).collect())
        .collect()
}

fn parse_formulation(text: &str) -> Result<Formulation> {
    match text.trim() {
        "aggregated" => Ok(Formulation::Aggregated),
        "per_symbol" => Ok(Formulation::PerSymbol),
        other => Err(Error::invalid(format!(
            "unknown formulation `{other}` (aggregated, per_symbol)"
        ))),
    }
}

fn parse_scale(text: &str) -> Result<PatternScale> {
    match text.trim() {
        "physical" => Ok(PatternScale::Physical),
        "array_gain" => Ok(PatternScale::ArrayGain),
        other => Err(Error::invalid(format!(
            "unknown scale `{other}` (physical, array_gain)"
        ))),
    }
}

fn parse_experiment(text: &str) -> Result<Experiment> {
    match text.trim() {
        "design" => Ok(Experiment::Design),
        "sweep" => Ok(Experiment::Sweep),
        "beampattern" => Ok(Experiment::Beampattern),
        "music" => Ok(Experiment::Music),
        "mc" => Ok(Experiment::Mc),
        other => Err(Error::invalid(format!(
            "unknown experiment `{other}` (design, sweep, beampattern, music, mc)"
        ))),
    }
}

fn parse_auto<T>(text: &str, f: impl Fn(&str) -> Result<T>) -> Result<Option<T>> {
    if text.trim() == "auto" {
        Ok(None)
    } else {
        f(text).map(Some)
    }
}

fn formulation_name(f: Formulation) -> &'static str {
    match f {
        Formulation::Aggregated => "aggregated",
        Formulation::PerSymbol => "per_symbol",
    }
}

fn scale_name(s: PatternScale) -> &'static str {
    match s {
        PatternScale::Physical => "physical",
        PatternScale::ArrayGain => "array_gain",
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

struct Entry {
    value: String,
    line: usize,
}

/// A failed check, located by section and, where one applies, key.
struct Invalid {
    section: &'static str,
    key: Option<&'static str>,
    message: String,
}

impl Invalid {
    fn describe(&self) -> String {
        match self.key {
            Some(k) => format!("{}.{k}: {}", self.section, self.message),
            None => format!("[{}] {}", self.section, self.message),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<(String, String), Entry> = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(line, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::config(line, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let sec = section
                .clone()
                .ok_or_else(|| Error::config(line, "key outside of a section"))?;
            let (key, value) = content.split_once('=').ok_or_else(|| {
                Error::config(line, format!("expected `key = value`, found `{content}`"))
            })?;
            let key = key.trim().to_string();
            if !KEYS.iter().any(|(s, k)| *s == sec && *k == key) {
                return Err(Error::config(
                    line,
                    format!("unknown key `{key}` in [{sec}]"),
                ));
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if let Some(prev) = entries.insert((sec.clone(), key.clone()), entry) {
                return Err(Error::config(
                    line,
                    format!(
                        "duplicate key `{key}` in [{sec}], first set on line {}",
                        prev.line
                    ),
                ));
            }
        }

        let mut cfg = RunConfig::default();
        let get = |sec: &str, key: &str| entries.get(&(sec.to_string(), key.to_string()));
        macro_rules! set {
            ($sec:literal, $key:literal, $parse:expr, $slot:expr) => {
                if let Some(e) = get($sec, $key) {
                    $slot = ($parse)(e.value.as_str()).map_err(|err| at(e.line, $key, err))?;
                }
            };
        }

        set!("array", "elements", parse_int, cfg.array.elements);
        set!("array", "wavelength", parse_f64, cfg.array.wavelength);
        set!(
            "array",
            "spacing",
            |v| parse_auto(v, parse_f64),
            cfg.array.spacing
        );

        set!("scene", "users", parse_locations, cfg.scene.users);
        set!("scene", "targets", parse_locations, cfg.scene.targets);
        set!(
            "scene",
            "reflectivity",
            parse_reflectivity,
            cfg.scene.reflectivity
        );
        set!("scene", "sensing_noise", parse_f64, cfg.scene.sensing_noise);
        match (get("scene", "power_budget"), get("scene", "asnr_db")) {
            (Some(_), Some(e)) => {
                return Err(Error::config(
                    e.line,
                    "give either power_budget or asnr_db, not both",
                ));
            }
            (Some(e), None) => {
                cfg.scene.power = PowerSpec::Budget(
                    parse_f64(&e.value).map_err(|err| at(e.line, "power_budget", err))?,
                )
            }
            (None, Some(e)) => {
                cfg.scene.power = PowerSpec::AsnrDb(
                    parse_f64(&e.value).map_err(|err| at(e.line, "asnr_db", err))?,
                )
            }
            (None, None) => {}
        }
        match (get("scene", "comm_noise"), get("scene", "comm_snr_db")) {
            (Some(_), Some(e)) => {
                return Err(Error::config(
                    e.line,
                    "give either comm_noise or comm_snr_db, not both",
                ));
            }
            (Some(e), None) => {
                cfg.scene.comm_noise = CommNoiseSpec::Variance(
                    parse_f64(&e.value).map_err(|err| at(e.line, "comm_noise", err))?,
                )
            }
            (None, Some(e)) => {
                cfg.scene.comm_noise = CommNoiseSpec::SnrDb(
                    parse_f64(&e.value).map_err(|err| at(e.line, "comm_snr_db", err))?,
                )
            }
            (None, None) => {}
        }
        set!("scene", "symbols", parse_int, cfg.scene.symbols);
        set!("scene", "psk_order", parse_int, cfg.scene.psk_order);
        set!(
            "scene",
            "schedule",
            |v| parse_auto(v, parse_schedule),
            cfg.scene.schedule
        );
        set!("scene", "schedule_seed", parse_int, cfg.scene.schedule_seed);

        set!("design", "precoder", parse_precoder, cfg.design.precoder);
        set!("design", "rho", parse_f64, cfg.design.rho);
        set!("design", "rho_grid", parse_weight_grid, cfg.design.rho_grid);
        set!(
            "design",
            "formulation",
            parse_formulation,
            cfg.design.formulation
        );
        set!("design", "tol", parse_f64, cfg.design.tol);

        set!(
            "music",
            "angle_span_deg",
            parse_f64,
            cfg.music.angle_span_deg
        );
        set!("music", "angle_points", parse_int, cfg.music.angle_points);
        set!("music", "range_min", parse_f64, cfg.music.range_min);
        set!(
            "music",
            "range_max",
            |v| parse_auto(v, parse_f64),
            cfg.music.range_max
        );
        set!("music", "range_points", parse_int, cfg.music.range_points);
        set!("music", "trials", parse_int, cfg.music.trials);
        set!("music", "cap", parse_f64, cfg.music.cap);
        set!("music", "rho", parse_f64, cfg.music.rho);
        set!("music", "precoder", parse_precoder, cfg.music.precoder);

        set!(
            "beampattern",
            "angle_min_deg",
            parse_f64,
            cfg.beampattern.angle_min_deg
        );
        set!(
            "beampattern",
            "angle_max_deg",
            parse_f64,
            cfg.beampattern.angle_max_deg
        );
        set!(
            "beampattern",
            "angle_step_deg",
            parse_f64,
            cfg.beampattern.angle_step_deg
        );
        set!(
            "beampattern",
            "range_min",
            parse_f64,
            cfg.beampattern.range_min
        );
        set!(
            "beampattern",
            "range_max",
            parse_f64,
            cfg.beampattern.range_max
        );
        set!(
            "beampattern",
            "range_step",
            parse_f64,
            cfg.beampattern.range_step
        );
        set!("beampattern", "rho", parse_f64, cfg.beampattern.rho);
        set!(
            "beampattern",
            "precoder",
            parse_precoder,
            cfg.beampattern.precoder
        );
        set!("beampattern", "scale", parse_scale, cfg.beampattern.scale);

        set!("run", "experiment", parse_experiment, cfg.run.experiment);
        set!("run", "seed", parse_int, cfg.run.seed);
        set!(
            "run",
            "output_dir",
            |v: &str| Ok::<_, Error>(PathBuf::from(v)),
            cfg.run.output_dir
        );

        cfg.check().map_err(|e| {
            let line = e
                .key
                .and_then(|k| get(e.section, k))
                .or_else(|| {
                    entries
                        .iter()
                        .filter(|((sec, _), _)| sec == e.section)
                        .map(|(_, v)| v)
                        .min_by_key(|v| v.line)
                })
                .map_or(0, |v| v.line);
            Error::config(line, e.describe())
        })?;
        Ok(cfg)
    }

    /// Checks value ranges and builds the scene and grids once. Errors
    /// carry line 0; [`RunConfig::parse`] attributes them to lines.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|e| Error::config(0, e.describe()))
    }

    fn check(&self) -> std::result::Result<(), Invalid> {
        let fail = |section, key, message: String| {
            Err(Invalid {
                section,
                key,
                message,
            })
        };
        let a = &self.array;
        if a.elements == 0 {
            return fail("array", Some("elements"), "must be at least 1".into());
        }
        if !(a.wavelength > 0.0 && a.wavelength.is_finite()) {
            return fail(
                "array",
                Some("wavelength"),
                format!("must be positive, got {}", a.wavelength),
            );
        }
        if let Some(d) = a.spacing {
            if !(d > 0.0 && d.is_finite()) {
                return fail(
                    "array",
                    Some("spacing"),
                    format!("must be positive, got {d}"),
                );
            }
        }
        let sc = &self.scene;
        if sc.users.is_empty() {
            return fail(
                "scene",
                Some("users"),
                "at least one user is required".into(),
            );
        }
        if sc.targets.is_empty() {
            return fail(
                "scene",
                Some("targets"),
                "at least one target is required".into(),
            );
        }
        if let Reflectivity::Values(v) = &sc.reflectivity {
            if v.len() != sc.targets.len() {
                let msg = format!("{} values for {} targets", v.len(), sc.targets.len());
                return fail("scene", Some("reflectivity"), msg);
            }
        }
        if !(sc.sensing_noise > 0.0 && sc.sensing_noise.is_finite()) {
            return fail(
                "scene",
                Some("sensing_noise"),
                format!("must be positive, got {}", sc.sensing_noise),
            );
        }
        if let PowerSpec::Budget(p) = sc.power {
            if !(p > 0.0 && p.is_finite()) {
                return fail(
                    "scene",
                    Some("power_budget"),
                    format!("must be positive, got {p}"),
                );
            }
        }
        if let CommNoiseSpec::Variance(v) = sc.comm_noise {
            if !(v > 0.0 && v.is_finite()) {
                return fail(
                    "scene",
                    Some("comm_noise"),
                    format!("must be positive, got {v}"),
                );
            }
        }
        if sc.symbols == 0 {
            return fail("scene", Some("symbols"), "must be at least 1".into());
        }
        for (section, w) in [
            ("design", self.design.rho),
            ("music", self.music.rho),
            ("beampattern", self.beampattern.rho),
        ] {
            if !(0.0..=1.0).contains(&w) {
                return fail(section, Some("rho"), format!("{w} outside [0, 1]"));
            }
        }
        if !(self.design.tol > 0.0) {
            return fail("design", Some("tol"), "must be positive".into());
        }
        if self.music.angle_points < 2 {
            return fail(
                "music",
                Some("angle_points"),
                "needs at least two points".into(),
            );
        }
        if self.music.range_points < 2 {
            return fail(
                "music",
                Some("range_points"),
                "needs at least two points".into(),
            );
        }
        if !(self.music.cap > 0.0) {
            return fail("music", Some("cap"), "must be positive".into());
        }
        let section = |name: &'static str| {
            move |e: Error| Invalid {
                section: name,
                key: None,
                message: plain(e),
            }
        };
        self.scene().map_err(section("scene"))?;
        self.music_grid().map_err(section("music"))?;
        self.beampattern_grid().map_err(section("beampattern"))?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let a = &self.array;
        let _ = writeln!(s, "[array]");
        let _ = writeln!(s, "elements = {}", a.elements);
        let _ = writeln!(s, "wavelength = {}", a.wavelength);
        let _ = writeln!(
            s,
            "spacing = {}",
            a.spacing.map_or("auto".into(), |v| v.to_string())
        );

        let sc = &self.scene;
        let _ = writeln!(s, "\n[scene]");
        let _ = writeln!(s, "users = {}", join(&sc.users));
        let _ = writeln!(s, "targets = {}", join(&sc.targets));
        let refl = match &sc.reflectivity {
            Reflectivity::InversePathLoss => "inverse_path_loss".to_string(),
            Reflectivity::Values(v) => v
                .iter()
                .map(|c| format!("{}:{}", c.re, c.im))
                .collect::<Vec<_>>()
                .join(", "),
        };
        let _ = writeln!(s, "reflectivity = {refl}");
        let _ = writeln!(s, "sensing_noise = {}", sc.sensing_noise);
        match sc.power {
            PowerSpec::Budget(p) => writeln!(s, "power_budget = {p}"),
            PowerSpec::AsnrDb(v) => writeln!(s, "asnr_db = {v}"),
        }
        .ok();
        match sc.comm_noise {
            CommNoiseSpec::Variance(v) => writeln!(s, "comm_noise = {v}"),
            CommNoiseSpec::SnrDb(v) => writeln!(s, "comm_snr_db = {v}"),
        }
        .ok();
        let _ = writeln!(s, "symbols = {}", sc.symbols);
        let _ = writeln!(s, "psk_order = {}", sc.psk_order);
        let schedule = sc.schedule.as_ref().map_or("auto".into(), |rows| {
            rows.iter().map(|r| join(r)).collect::<Vec<_>>().join("; ")
        });
        let _ = writeln!(s, "schedule = {schedule}");
        let _ = writeln!(s, "schedule_seed = {}", sc.schedule_seed);

        let d = &self.design;
        let _ = writeln!(s, "\n[design]");
        let _ = writeln!(s, "precoder = {}", d.precoder);
        let _ = writeln!(s, "rho = {}", d.rho);
        let _ = writeln!(s, "rho_grid = {}", join(&d.rho_grid));
        let _ = writeln!(s, "formulation = {}", formulation_name(d.formulation));
        let _ = writeln!(s, "tol = {}", d.tol);

        let m = &self.music;
        let _ = writeln!(s, "\n[music]");
        let _ = writeln!(s, "angle_span_deg = {}", m.angle_span_deg);
        let _ = writeln!(s, "angle_points = {}", m.angle_points);
        let _ = writeln!(s, "range_min = {}", m.range_min);
        let _ = writeln!(
            s,
            "range_max = {}",
            m.range_max.map_or("auto".into(), |v| v.to_string())
        );
        let _ = writeln!(s, "range_points = {}", m.range_points);
        let _ = writeln!(s, "trials = {}", m.trials);
        let _ = writeln!(s, "cap = {}", m.cap);
        let _ = writeln!(s, "rho = {}", m.rho);
        let _ = writeln!(s, "precoder = {}", m.precoder);

        let b = &self.beampattern;
        let _ = writeln!(s, "\n[beampattern]");
        let _ = writeln!(s, "angle_min_deg = {}", b.angle_min_deg);
        let _ = writeln!(s, "angle_max_deg = {}", b.angle_max_deg);
        let _ = writeln!(s, "angle_step_deg = {}", b.angle_step_deg);
        let _ = writeln!(s, "range_min = {}", b.range_min);
        let _ = writeln!(s, "range_max = {}", b.range_max);
        let _ = writeln!(s, "range_step = {}", b.range_step);
        let _ = writeln!(s, "rho = {}", b.rho);
        let _ = writeln!(s, "precoder = {}", b.precoder);
        let _ = writeln!(s, "scale = {}", scale_name(b.scale));

        let r = &self.run;
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "experiment = {}", r.experiment.name());
        let _ = writeln!(s, "seed = {}", r.seed);
        let _ = writeln!(s, "output_dir = {}", r.output_dir.display());
        s
    }

    pub fn array_config(&self) -> Result<ArrayConfig> {
        let a = &self.array;
        match a.spacing {
            Some(d) => ArrayConfig::new(a.elements, a.wavelength, d),
            None => ArrayConfig::half_wavelength(a.elements, a.wavelength),
        }
    }

    pub fn power_budget(&self) -> Result<f64> {
        let n = self.array.elements as f64;
        Ok(match self.scene.power {
            PowerSpec::Budget(p) => p,
            PowerSpec::AsnrDb(db) => asnr_power(db, n, self.scene.sensing_noise),
        })
    }

    pub fn scene(&self) -> Result<Scene> {
        let array = self.array_config()?;
        let users = self
            .scene
            .users
            .iter()
            .map(Location::point)
            .collect::<Result<Vec<_>>>()?;
        let points = self
            .scene
            .targets
            .iter()
            .map(Location::point)
            .collect::<Result<Vec<_>>>()?;
        let targets = points
            .iter()
            .enumerate()
            .map(|(l, p)| {
                let b = match &self.scene.reflectivity {
                    Reflectivity::InversePathLoss => {
                        Complex64::new(1.0 / path_loss(p, &array)?, 0.0)
                    }
                    Reflectivity::Values(v) => v[l],
                };
                Target::new(*p, b)
            })
            .collect::<Result<Vec<_>>>()?;
        let power = self.power_budget()?;
        let comm_noise = match self.scene.comm_noise {
            CommNoiseSpec::Variance(v) => v,
            CommNoiseSpec::SnrDb(db) => {
                let mean_beta = users
                    .iter()
                    .map(|u| path_loss(u, &array))
                    .sum::<Result<f64>>()?
                    / users.len() as f64;
                power * array.n_elements() as f64 * mean_beta / 10f64.powf(db / 10.0)
            }
        };
        let psk = PskConstellation::new(self.scene.psk_order)?;
        let schedule = match &self.scene.schedule {
            Some(rows) => rows.clone(),
            None => random_schedule(
                users.len(),
                self.scene.symbols,
                psk.order(),
                self.scene.schedule_seed,
            ),
        };
        Scene::new(
            array,
            users,
            targets,
            self.scene.sensing_noise,
            comm_noise,
            power,
            self.scene.symbols,
            psk,
            self.scene.schedule_seed,
        )?
        .with_schedule(schedule)
    }

    pub fn design_options(&self) -> DesignOptions {
        let mut o = DesignOptions {
            formulation: self.design.formulation,
            seed: self.run.seed,
            ..Default::default()
        };
        o.solver.tol = self.design.tol;
        o
    }

    pub fn music_grid(&self) -> Result<PolarGrid> {
        let m = &self.music;
        let mean_angle = self.scene.targets.iter().map(|t| t.angle_deg).sum::<f64>()
            / self.scene.targets.len() as f64;
        let lo = (mean_angle - m.angle_span_deg).max(0.05);
        let hi = (mean_angle + m.angle_span_deg).min(179.95);
        let range_max = match m.range_max {
            Some(v) => v,
            None => 1.2 * fraunhofer_distances(&self.array_config()?).array / 10.0,
        };
        if !(range_max > m.range_min) {
            return Err(Error::invalid(format!(
                "range [{}, {range_max}] is empty",
                m.range_min
            )));
        }
        PolarGrid::new(
            linspace((lo.to_radians(), hi.to_radians()), m.angle_points),
            linspace((m.range_min, range_max), m.range_points),
        )
    }

    pub fn beampattern_grid(&self) -> Result<PolarGrid> {
        let b = &self.beampattern;
        let angles = weight_grid(b.angle_min_deg, b.angle_step_deg, b.angle_max_deg)
            .map_err(|e| Error::invalid(format!("angles: {}", plain(e))))?;
        let ranges = weight_grid(b.range_min, b.range_step, b.range_max)
            .map_err(|e| Error::invalid(format!("ranges: {}", plain(e))))?;
        PolarGrid::new(angles.iter().map(|a| a.to_radians()).collect(), ranges)
    }
}

/// `P = 10^(ASNR/10) sigma_R^2 / N^2`.
pub fn asnr_power(asnr_db: f64, n_elements: f64, sensing_noise: f64) -> f64 {
    10f64.powf(asnr_db / 10.0) * sensing_noise / (n_elements * n_elements)
}

fn plain(err: Error) -> String {
    match err {
        Error::InvalidInput(m) => m,
        Error::Config { message, .. } => message,
        other => other.to_string(),
    }
}

fn at(line: usize, key: &str, err: Error) -> Error {
    Error::config(line, format!("{key}: {}", plain(err)))
}

const SECTIONS: [&str; 6] = ["array", "scene", "design", "music", "beampattern", "run"];

const KEYS: &[(&str, &str)] = &[
    ("array", "elements"),
    ("array", "wavelength"),
    ("array", "spacing"),
    ("scene", "users"),
    ("scene", "targets"),
    ("scene", "reflectivity"),
    ("scene", "sensing_noise"),
    ("scene", "power_budget"),
    ("scene", "asnr_db"),
    ("scene", "comm_noise"),
    ("scene", "comm_snr_db"),
    ("scene", "symbols"),
    ("scene", "psk_order"),
    ("scene", "schedule"),
    ("scene", "schedule_seed"),
    ("design", "precoder"),
    ("design", "rho"),
    ("design", "rho_grid"),
    ("design", "formulation"),
    ("design", "tol"),
    ("music", "angle_span_deg"),
    ("music", "angle_points"),
    ("music", "range_min"),
    ("music", "range_max"),
    ("music", "range_points"),
    ("music", "trials"),
    ("music", "cap"),
    ("music", "rho"),
    ("music", "precoder"),
    ("beampattern", "angle_min_deg"),
    ("beampattern", "angle_max_deg"),
    ("beampattern", "angle_step_deg"),
    ("beampattern", "range_min"),
    ("beampattern", "range_max"),
    ("beampattern", "range_step"),
    ("beampattern", "rho"),
    ("beampattern", "precoder"),
    ("beampattern", "scale"),
    ("run", "experiment"),
    ("run", "seed"),
    ("run", "output_dir"),
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(
            RunConfig::parse("# nothing\n\n").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn default_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn explicit_values_round_trip() {
        let text = "
[array]
elements = 8
wavelength = 0.01
spacing = 0.004
[scene]
users = 3@60, 4.5@75.25
targets = 2@80
reflectivity = 0.5:-1.25
power_budget = 2
comm_noise = 0.001
symbols = 4
psk_order = 8
schedule = 0, 1, 2, 3; 7, 6, 5, 4
[design]
precoder = blp
rho_grid = 0, 0.25, 1
formulation = per_symbol
[music]
range_max = 9
[beampattern]
scale = array_gain
[run]
experiment = mc
seed = 7
output_dir = results/a
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.array.spacing, Some(0.004));
        assert_eq!(
            cfg.scene.reflectivity,
            Reflectivity::Values(vec![Complex64::new(0.5, -1.25)])
        );
        assert_eq!(
            cfg.scene.schedule,
            Some(vec![vec![0, 1, 2, 3], vec![7, 6, 5, 4]])
        );
        assert_eq!(cfg.design.precoder, PrecoderKind::Blp);
        assert_eq!(cfg.run.experiment, Experiment::Mc);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let scene = cfg.scene().unwrap();
        assert_eq!(scene.power_budget, 2.0);
        assert_eq!(scene.comm_noise, 0.001);
        assert_eq!(scene.symbol_schedule[1], vec![7, 6, 5, 4]);
    }

    #[test]
    fn asnr_conversion() {
        let cfg =
            RunConfig::parse("[scene]\nasnr_db = 10\nsensing_noise = 2\n[array]\nelements = 4")
                .unwrap();
        assert_relative_eq!(
            cfg.power_budget().unwrap(),
            10.0 * 2.0 / 16.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn comm_snr_conversion() {
        let cfg = RunConfig::default();
        let scene = cfg.scene().unwrap();
        let array = cfg.array_config().unwrap();
        let mean_beta: f64 = scene
            .users
            .iter()
            .map(|u| path_loss(u, &array).unwrap())
            .sum::<f64>()
            / scene.users.len() as f64;
        let snr = scene.power_budget * 16.0 * mean_beta / scene.comm_noise;
        assert_relative_eq!(10.0 * snr.log10(), 30.0, max_relative = 1e-12);
    }

    #[test]
    fn desk_defaults() {
        let cfg = RunConfig::default();
        let scene = cfg.scene().unwrap();
        assert_eq!(scene.n_elements(), 16);
        assert_eq!(scene.symbol_count, 24);
        assert_relative_eq!(scene.power_budget, 10.0 / 256.0, max_relative = 1e-15);
        let grid = cfg.music_grid().unwrap();
        assert_eq!(grid.shape(), (200, 200));
        assert_relative_eq!(grid.ranges[199], 19.2, max_relative = 1e-12);
        assert_relative_eq!(grid.angles[0], 60f64.to_radians(), max_relative = 1e-12);
        let bp = cfg.beampattern_grid().unwrap();
        let (da, dr) = bp.cell_size();
        assert_relative_eq!(da, 1f64.to_radians(), max_relative = 1e-9);
        assert_relative_eq!(dr, 0.25, max_relative = 1e-9);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("[array]\nelements = x", 2),
            ("[scene]\n\nusers = 3@", 3),
            ("elements = 3", 1),
            ("[nope]", 1),
            ("[array]\ncolour = red", 2),
            ("[scene]\npower_budget = 1\nasnr_db = 3", 3),
            ("[design]\nrho_grid = 0:0.3:1", 2),
            ("[array]\nelements = 3\nelements = 4", 3),
            ("[array]\nwavelength 3", 2),
            ("[array]\nelements = 4\nwavelength = -1", 3),
            ("[run]\nseed = 1\n[beampattern]\nangle_step_deg = 7", 4),
        ];
        for (text, line) in cases {
            match RunConfig::parse(text) {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn cross_field_errors() {
        assert!(matches!(
            RunConfig::parse("[scene]\nreflectivity = 1:0"),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            RunConfig::parse("[design]\nrho = 1.5"),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn weight_grids() {
        let g = parse_weight_grid("0:0.1:1").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.3);
        assert_eq!(g[10], 1.0);
        assert_eq!(parse_weight_grid("0.5").unwrap(), vec![0.5]);
        assert!(parse_weight_grid("0:0.1:1.5").is_err());
        assert!(parse_weight_grid("0:-1:1").is_err());
        assert!(parse_weight_grid("").is_err());
    }

    proptest! {
        #[test]
        fn random_configs_round_trip(
            elements in 1usize..64,
            wavelength in 1e-3f64..10.0,
            range in 0.5f64..100.0,
            angle in 1.0f64..179.0,
            rho in 0.0f64..=1.0,
            asnr in -20.0f64..40.0,
            seed in any::<u64>(),
            use_budget in any::<bool>(),
        ) {
            let mut cfg = RunConfig::default();
            cfg.array.elements = elements;
            cfg.array.wavelength = wavelength;
            cfg.scene.users = vec![Location { range, angle_deg: angle }];
            cfg.scene.power = if use_budget { PowerSpec::Budget(asnr.abs() + 0.1) } else { PowerSpec::AsnrDb(asnr) };
            cfg.design.rho = rho;
            cfg.music.range_max = Some(range + 20.0);
            cfg.run.seed = seed;
            let back = RunConfig::parse(&cfg.to_text()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
