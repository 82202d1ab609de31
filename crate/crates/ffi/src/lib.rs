//! C ABI over `scp-core`.
//!
//! Objects cross the boundary as opaque handles created by `scp_*_new`
//! functions and released with the matching `scp_*_free`. Every fallible
//! call returns an [`ScpStatus`]; on failure [`scp_last_error`] returns a
//! message for the calling thread. Panics are caught and reported as
//! [`ScpStatus::Panic`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use scp_core::diagnostics::tv_distance;
use scp_core::experiments::{run, ExperimentConfig, ExperimentKind};
use scp_core::map_model::{evaluate, gram_factor};
use scp_core::pushforward::{make_partition, push_samples};
use scp_core::solver::{sample_solution, solve_cells};
use scp_core::{BoxDomain, DensitySpec, ErrorCategory, InputGrid, MapRegistry, MapSpec, Measure, QoiMap, ScpError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScpStatus {
    Ok = 0,
    /// Invalid configuration, argument or input data.
    Config = 2,
    /// A modelling assumption failed (degenerate map, support mismatch, ...).
    Assumption = 3,
    /// Numerical failure.
    Numeric = 4,
    NullPointer = 5,
    /// Output buffer too small; the required length is written where documented.
    BufferTooSmall = 6,
    Panic = 7,
}

/// Parameter box.
pub struct ScpDomain(BoxDomain);
/// Quantity-of-interest map.
pub struct ScpMap(QoiMap);
/// Compiled probability measure on a domain.
pub struct ScpDensity(Measure);
/// Solution together with the prior it reweights.
pub struct ScpSolution {
    solution: scp_core::ScpSolution,
    prior: Measure,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(err: ScpError) -> ScpStatus {
    let status = match err.category() {
        ErrorCategory::Config => ScpStatus::Config,
        ErrorCategory::Assumption => ScpStatus::Assumption,
        ErrorCategory::Numeric => ScpStatus::Numeric,
    };
    set_error(err.to_string());
    status
}

fn guard(f: impl FnOnce() -> Result<(), ScpStatus>) -> ScpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ScpStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside scp");
            ScpStatus::Panic
        }
    }
}

fn core<T>(r: scp_core::Result<T>) -> Result<T, ScpStatus> {
    r.map_err(fail)
}

fn null(what: &str) -> ScpStatus {
    set_error(format!("{what} is null"));
    ScpStatus::NullPointer
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], ScpStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, ScpStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, ScpStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        ScpStatus::Config
    })
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), ScpStatus> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_out<T: Copy>(src: &[T], out: *mut T, capacity: usize, required: *mut usize) -> Result<(), ScpStatus> {
    if !required.is_null() {
        *required = src.len();
    }
    if src.len() > capacity {
        set_error(format!("buffer holds {capacity} values but {} are needed", src.len()));
        return Err(ScpStatus::BufferTooSmall);
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next `scp_*` call on the same thread.
#[no_mangle]
pub extern "C" fn scp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn scp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a box domain from `dim` lower and upper bounds.
///
/// # Safety
/// `lower` and `upper` must point to `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scp_domain_new(lower: *const f64, upper: *const f64, dim: usize, out: *mut *mut ScpDomain) -> ScpStatus {
    guard(|| {
        let lo = slice(lower, dim, "lower")?.to_vec();
        let hi = slice(upper, dim, "upper")?.to_vec();
        put(out, ScpDomain(core(BoxDomain::new(lo, hi))?))
    })
}

/// # Safety
/// `domain` must come from [`scp_domain_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn scp_domain_free(domain: *mut ScpDomain) {
    if !domain.is_null() {
        drop(Box::from_raw(domain));
    }
}

/// Builds a registered map (`"ellipse"`, `"powerlaw"`). `params_json` is an
/// optional JSON object of numeric parameters, e.g. `{"r": 0.3}`.
///
/// # Safety
/// `id` must be a NUL-terminated string; `params_json` NUL-terminated or null.
#[no_mangle]
pub unsafe extern "C" fn scp_map_new(id: *const c_char, params_json: *const c_char, out: *mut *mut ScpMap) -> ScpStatus {
    guard(|| {
        let id = string(id, "id")?;
        let params: BTreeMap<String, f64> = if params_json.is_null() {
            BTreeMap::new()
        } else {
            core(serde_json::from_str(string(params_json, "params_json")?).map_err(ScpError::from))?
        };
        let map = core(MapRegistry::default().build(&MapSpec { id: id.to_string(), params }))?;
        put(out, ScpMap(map))
    })
}

/// # Safety
/// `map` must come from [`scp_map_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn scp_map_free(map: *mut ScpMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// # Safety
/// `x` must point to `dim` doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn scp_map_eval(map: *const ScpMap, x: *const f64, dim: usize, out: *mut f64) -> ScpStatus {
    guard(|| {
        let map = handle(map, "map")?;
        let v = core(evaluate(&map.0, slice(x, dim, "x")?))?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Gradient norm of the map at `x`.
///
/// # Safety
/// As for [`scp_map_eval`].
#[no_mangle]
pub unsafe extern "C" fn scp_map_gram_factor(map: *const ScpMap, x: *const f64, dim: usize, out: *mut f64) -> ScpStatus {
    guard(|| {
        let map = handle(map, "map")?;
        let v = core(gram_factor(&map.0, slice(x, dim, "x")?))?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Compiles a density spec given as JSON (same schema as the TOML configs,
/// e.g. `{"kind": "uniform"}`) on `domain`.
///
/// # Safety
/// `spec_json` must be NUL-terminated; `domain` a live handle.
#[no_mangle]
pub unsafe extern "C" fn scp_density_new(spec_json: *const c_char, domain: *const ScpDomain, out: *mut *mut ScpDensity) -> ScpStatus {
    guard(|| {
        let spec: DensitySpec = core(serde_json::from_str(string(spec_json, "spec_json")?).map_err(ScpError::from))?;
        let domain = handle(domain, "domain")?;
        put(out, ScpDensity(core(Measure::new(&spec, &domain.0))?))
    })
}

/// # Safety
/// `density` must come from [`scp_density_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn scp_density_free(density: *mut ScpDensity) {
    if !density.is_null() {
        drop(Box::from_raw(density));
    }
}

/// # Safety
/// `x` must point to `dim` doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn scp_density_eval(density: *const ScpDensity, x: *const f64, dim: usize, out: *mut f64) -> ScpStatus {
    guard(|| {
        let d = handle(density, "density")?;
        let v = core(d.0.density(slice(x, dim, "x")?))?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Draws `count` points into `out` (row-major, `count * dim` doubles).
/// `required`, if non-null, receives the number of doubles needed.
///
/// # Safety
/// `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn scp_density_sample(
    density: *const ScpDensity,
    count: usize,
    seed: u64,
    out: *mut f64,
    capacity: usize,
    required: *mut usize,
) -> ScpStatus {
    guard(|| {
        let d = handle(density, "density")?;
        let set = core(d.0.sample(count, seed))?;
        write_out(set.coords(), out, capacity, required)
    })
}

/// Solves on `n_prior` prior draws for the observed outputs `observed`,
/// with `n_bins` equal-width output bins and a `grid` of cells per axis.
///
/// # Safety
/// `observed` must hold `n_observed` doubles and `grid` `grid_dim` counts.
#[no_mangle]
pub unsafe extern "C" fn scp_solve(
    map: *const ScpMap,
    domain: *const ScpDomain,
    prior: *const ScpDensity,
    observed: *const f64,
    n_observed: usize,
    n_prior: usize,
    n_bins: usize,
    grid: *const usize,
    grid_dim: usize,
    seed: u64,
    out: *mut *mut ScpSolution,
) -> ScpStatus {
    guard(|| {
        let map = &handle(map, "map")?.0;
        let domain = &handle(domain, "domain")?.0;
        let prior = &handle(prior, "prior")?.0;
        let observed = slice(observed, n_observed, "observed")?;
        let grid = core(InputGrid::new(domain, slice(grid, grid_dim, "grid")?.to_vec()))?;
        let samples = core(prior.sample(n_prior, seed))?;
        let mut all = core(push_samples(map, &samples))?;
        all.extend_from_slice(observed);
        let partition = core(make_partition(&all, n_bins))?;
        let solution = core(solve_cells(&samples, observed, &partition, &grid, map))?;
        put(out, ScpSolution { solution, prior: prior.clone() })
    })
}

/// # Safety
/// `solution` must come from [`scp_solve`] or be null.
#[no_mangle]
pub unsafe extern "C" fn scp_solution_free(solution: *mut ScpSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Number of grid cells, or 0 for a null handle.
///
/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn scp_solution_n_cells(solution: *const ScpSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.solution.grid.n_cells())
}

/// Observed mass that could not be assigned to any cell.
///
/// # Safety
/// `solution` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn scp_solution_unassigned_mass(solution: *const ScpSolution, out: *mut f64) -> ScpStatus {
    guard(|| {
        let s = handle(solution, "solution")?;
        *out.as_mut().ok_or_else(|| null("out"))? = s.solution.unassigned_mass;
        Ok(())
    })
}

/// Row-major cell masses (last axis fastest).
///
/// # Safety
/// `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn scp_solution_cell_masses(
    solution: *const ScpSolution,
    out: *mut f64,
    capacity: usize,
    required: *mut usize,
) -> ScpStatus {
    guard(|| {
        let s = handle(solution, "solution")?;
        write_out(&s.solution.cell_mass, out, capacity, required)
    })
}

/// Draws `count` points from the solution (row-major).
///
/// # Safety
/// `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn scp_solution_sample(
    solution: *const ScpSolution,
    count: usize,
    seed: u64,
    out: *mut f64,
    capacity: usize,
    required: *mut usize,
) -> ScpStatus {
    guard(|| {
        let s = handle(solution, "solution")?;
        let set = core(sample_solution(&s.solution, &s.prior, count, seed))?;
        write_out(set.coords(), out, capacity, required)
    })
}

/// Total-variation distance between two mass vectors of length `n`.
///
/// # Safety
/// `a` and `b` must hold `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn scp_tv_distance(a: *const f64, b: *const f64, n: usize, out: *mut f64) -> ScpStatus {
    guard(|| {
        let v = core(tv_distance(slice(a, n, "a")?, slice(b, n, "b")?))?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Runs an experiment config (`kind`: solve, stability, local_limit, weak,
/// audit or concrete) and writes its artifacts into `out_dir`.
///
/// # Safety
/// All arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn scp_run_experiment(config_path: *const c_char, kind: *const c_char, out_dir: *const c_char) -> ScpStatus {
    guard(|| {
        let cfg = core(ExperimentConfig::load(Path::new(string(config_path, "config_path")?)))?;
        let kind: ExperimentKind = core(
            serde_json::from_value(serde_json::Value::String(string(kind, "kind")?.replace('-', "_")))
                .map_err(ScpError::from),
        )?;
        core(run(&cfg, kind, Path::new(string(out_dir, "out_dir")?)))?;
        Ok(())
    })
}
