//! C ABI over the `nfisac` library.
//!
//! Every function returns an [`NfisacStatus`] (or a pointer that is null on
//! failure) and never unwinds across the boundary. The message of the last
//! failure on the calling thread is available from
//! [`nfisac_last_error_message`]. Handles are opaque and must be released
//! with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nfisac::designer::{CrbReport, PrecoderKind, Scene};
use nfisac::harness::{run, Design, RunConfig};
use nfisac::Error;

/// Result codes; the nonzero values match the command-line exit codes
/// where both exist.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfisacStatus {
    Ok = 0,
    Io = 1,
    Config = 2,
    Infeasible = 3,
    Solver = 4,
    InvalidArgument = 5,
    NullPointer = 6,
    Panic = 7,
}

/// Precoder selector for [`nfisac_design_compute`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfisacPrecoder {
    Slp = 0,
    Blp = 1,
}

/// A run configuration.
pub struct NfisacConfig {
    inner: RunConfig,
}

/// One design and the scene it was computed for.
pub struct NfisacDesign {
    scene: Scene,
    design: Design,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NfisacStatus {
    match e {
        Error::Io(_) => NfisacStatus::Io,
        Error::Config { .. } => NfisacStatus::Config,
        Error::Infeasible(_) => NfisacStatus::Infeasible,
        Error::Solver { .. } | Error::SingularFisher { .. } => NfisacStatus::Solver,
        Error::InvalidInput(_)
        | Error::DimensionMismatch { .. }
        | Error::DegenerateGeometry(_)
        | Error::NotHermitian { .. }
        | Error::TooLarge(_) => NfisacStatus::InvalidArgument,
    }
}

enum Failure {
    Status(NfisacStatus, String),
    Library(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Library(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(NfisacStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure and converts it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NfisacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NfisacStatus::Ok,
        Ok(Err(Failure::Library(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, message))) => {
            set_error(message);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            NfisacStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure::Status(
            NfisacStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })
}

unsafe fn config_ref<'a>(p: *const NfisacConfig) -> Result<&'a NfisacConfig, Failure> {
    p.as_ref().ok_or_else(|| null("config"))
}

unsafe fn design_ref<'a>(p: *const NfisacDesign) -> Result<&'a NfisacDesign, Failure> {
    p.as_ref().ok_or_else(|| null("design"))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| {
        Failure::Status(
            NfisacStatus::InvalidArgument,
            "string contains a nul byte".into(),
        )
    })
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nfisac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn nfisac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes a new configuration holding the desk-scale defaults to `*out`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn nfisac_config_default(out: *mut *mut NfisacConfig) -> NfisacStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(NfisacConfig {
            inner: RunConfig::default(),
        }));
        Ok(())
    })
}

/// Parses configuration text and writes the new handle to `*out`.
///
/// # Safety
/// `text` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nfisac_config_parse(
    text: *const c_char,
    out: *mut *mut NfisacConfig,
) -> NfisacStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(text, "text")?;
        let cfg = RunConfig::parse(text)?;
        cfg.validate()?;
        *out = Box::into_raw(Box::new(NfisacConfig { inner: cfg }));
        Ok(())
    })
}

/// The effective configuration in file syntax; release it with
/// [`nfisac_string_free`].
///
/// # Safety
/// `config` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nfisac_config_to_text(
    config: *const NfisacConfig,
    out: *mut *mut c_char,
) -> NfisacStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = config_ref(config)?;
        *out = into_c_string(cfg.inner.to_text())?;
        Ok(())
    })
}

/// Sets the run seed.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nfisac_config_set_seed(
    config: *mut NfisacConfig,
    seed: u64,
) -> NfisacStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        cfg.inner.run.seed = seed;
        Ok(())
    })
}

/// Sets the directory that [`nfisac_run`] writes to.
///
/// # Safety
/// `config` must be a live handle and `dir` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nfisac_config_set_output_dir(
    config: *mut NfisacConfig,
    dir: *const c_char,
) -> NfisacStatus {
    guard(|| {
        let dir = read_str(dir, "dir")?;
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        cfg.inner.run.output_dir = dir.into();
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nfisac_config_free(config: *mut NfisacConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the configured experiment, writing its files to the output
/// directory.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nfisac_run(config: *const NfisacConfig) -> NfisacStatus {
    guard(|| {
        let cfg = config_ref(config)?;
        run(&cfg.inner)?;
        Ok(())
    })
}

/// Solves one design of the configured scene at weight `rho`.
///
/// # Safety
/// `config` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nfisac_design_compute(
    config: *const NfisacConfig,
    precoder: NfisacPrecoder,
    rho: f64,
    out: *mut *mut NfisacDesign,
) -> NfisacStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = &config_ref(config)?.inner;
        let scene = cfg.scene()?;
        let kind = match precoder {
            NfisacPrecoder::Slp => PrecoderKind::Slp,
            NfisacPrecoder::Blp => PrecoderKind::Blp,
        };
        let design = Design::compute(&scene, kind, rho, &cfg.design_options())?;
        *out = Box::into_raw(Box::new(NfisacDesign { scene, design }));
        Ok(())
    })
}

/// # Safety
/// `design` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nfisac_design_free(design: *mut NfisacDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// Reported SINR: `gamma'^2` for symbol-level designs, `gamma` for the
/// block-level baseline (linear scale).
///
/// # Safety
/// `design` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nfisac_design_sinr(
    design: *const NfisacDesign,
    out: *mut f64,
) -> NfisacStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = design_ref(design)?.design.sinr();
        Ok(())
    })
}

fn relaxed_crb(d: &Design) -> Option<&CrbReport> {
    match d {
        Design::Slp(d) => d.crb_relaxed.as_ref(),
        Design::Blp(d) => d.crb_relaxed.as_ref(),
    }
}

/// Root CRB of all target angles (radians) and ranges (meters) for the
/// design's relaxed covariance.
///
/// # Safety
/// `design` must be a live handle; both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn nfisac_design_rcrb(
    design: *const NfisacDesign,
    angle_out: *mut f64,
    range_out: *mut f64,
) -> NfisacStatus {
    guard(|| {
        if angle_out.is_null() || range_out.is_null() {
            return Err(null("output"));
        }
        let crb = relaxed_crb(&design_ref(design)?.design).ok_or_else(|| {
            Failure::Status(
                NfisacStatus::Solver,
                "the design's Fisher information is singular".into(),
            )
        })?;
        *angle_out = crb.root_angle();
        *range_out = crb.root_range();
        Ok(())
    })
}

/// Shape of the transmitted block: `N` elements by `S` slots.
///
/// # Safety
/// `design` must be a live handle; both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn nfisac_design_shape(
    design: *const NfisacDesign,
    elements: *mut usize,
    slots: *mut usize,
) -> NfisacStatus {
    guard(|| {
        if elements.is_null() || slots.is_null() {
            return Err(null("output"));
        }
        let x = design_ref(design)?.design.symbols();
        *elements = x.nrows();
        *slots = x.ncols();
        Ok(())
    })
}

/// Copies the transmitted block into `re` and `im`, column-major (all
/// elements of slot 0 first). Both buffers must hold `len = N * S` values.
///
/// # Safety
/// `design` must be a live handle and `re`, `im` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn nfisac_design_symbols(
    design: *const NfisacDesign,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> NfisacStatus {
    guard(|| {
        if re.is_null() || im.is_null() {
            return Err(null("output buffer"));
        }
        let x = design_ref(design)?.design.symbols();
        if len != x.len() {
            return Err(Failure::Status(
                NfisacStatus::InvalidArgument,
                format!(
                    "buffer length {len} does not match the block size {}",
                    x.len()
                ),
            ));
        }
        let re = std::slice::from_raw_parts_mut(re, len);
        let im = std::slice::from_raw_parts_mut(im, len);
        for (k, v) in x.iter().enumerate() {
            re[k] = v.re;
            im[k] = v.im;
        }
        Ok(())
    })
}

/// Design metrics as a JSON object; release it with
/// [`nfisac_string_free`].
///
/// # Safety
/// `design` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nfisac_design_metrics_json(
    design: *const NfisacDesign,
    out: *mut *mut c_char,
) -> NfisacStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = design_ref(design)?;
        let json = serde_json::to_string(&d.design.metrics(&d.scene))
            .map_err(|e| Failure::Status(NfisacStatus::Panic, e.to_string()))?;
        *out = into_c_string(json)?;
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nfisac_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
