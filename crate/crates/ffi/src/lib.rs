//! C interface to frontierlab.
//!
//! Every function returns an [`FlStatus`]; results come back through out
//! pointers. On failure, `fl_last_error` gives the message for the calling
//! thread until its next failing call. Handles are opaque and freed with
//! their matching `_free` function; freeing NULL is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use frontierlab::analytic::{analytic_frontier_point, closed_form_frontier, solve_analytic};
use frontierlab::autodiff::{NumArray, Tape};
use frontierlab::config::RunConfig;
use frontierlab::market::{preset, MarketModel, Preset};
use frontierlab::network::NetworkParams;
use frontierlab::objectives::cvar_values;
use frontierlab::strategy::{project_to_budget_values, Bounds};
use frontierlab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    Format = 5,
    Panic = 6,
}

/// Trained network parameters.
pub struct FlNetwork {
    params: NetworkParams,
}

/// A named market preset with its time grid and initial wealth.
pub struct FlMarket {
    preset: Preset,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FlStatus {
    match e {
        Error::Io(_) => FlStatus::Io,
        Error::Format(_) | Error::Version(_) => FlStatus::Format,
        e if e.is_numerical() => FlStatus::Numerical,
        _ => FlStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
    Arg(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> FlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FlStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_error(&format!("`{name}` is NULL"));
            FlStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(&msg);
            FlStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            FlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("`{name}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

/// Message of the last failure on this thread; empty if none. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Reads a `.net` file written by the `frontier` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fl_network_load(path: *const c_char, out: *mut *mut FlNetwork) -> FlStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let text = std::fs::read_to_string(path).map_err(Error::from)?;
        let params = NetworkParams::from_text(&text)?;
        *out = Box::into_raw(Box::new(FlNetwork { params }));
        Ok(())
    })
}

/// # Safety
/// `net` must come from `fl_network_load` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fl_network_free(net: *mut FlNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fl_network_shape(
    net: *const FlNetwork,
    n_inputs: *mut usize,
    n_outputs: *mut usize,
    n_params: *mut usize,
) -> FlStatus {
    guard(|| {
        let net = net.as_ref().ok_or(Failure::Null("net"))?;
        *out_arg(n_inputs, "n_inputs")? = net.params.n_inputs();
        *out_arg(n_outputs, "n_outputs")? = net.params.n_outputs();
        *out_arg(n_params, "n_params")? = net.params.param_count();
        Ok(())
    })
}

/// Evaluates the network on `batch` samples. `inputs` holds `batch` rows of
/// `n_inputs` values; `outputs` receives `batch` rows of `n_outputs`.
///
/// # Safety
/// `inputs` and `outputs` must hold `batch * n_inputs` and
/// `batch * n_outputs` doubles.
#[no_mangle]
pub unsafe extern "C" fn fl_network_forward(
    net: *const FlNetwork,
    inputs: *const f64,
    batch: usize,
    outputs: *mut f64,
) -> FlStatus {
    guard(|| {
        let net = net.as_ref().ok_or(Failure::Null("net"))?;
        if batch == 0 {
            return Err(Failure::Arg("batch must be positive".into()));
        }
        let (n_in, n_out) = (net.params.n_inputs(), net.params.n_outputs());
        let x = slice_arg(inputs, batch * n_in, "inputs")?;
        if outputs.is_null() {
            return Err(Failure::Null("outputs"));
        }
        let out = std::slice::from_raw_parts_mut(outputs, batch * n_out);
        let mut feature_major = vec![0.0; batch * n_in];
        for s in 0..batch {
            for f in 0..n_in {
                feature_major[f * batch + s] = x[s * n_in + f];
            }
        }
        let mut tape = Tape::new();
        let nodes = net.params.record(&mut tape);
        let input = tape.constant(NumArray::matrix(n_in, batch, feature_major)?);
        let y = nodes.forward(&mut tape, input)?;
        let y = tape.value(y);
        for s in 0..batch {
            for o in 0..n_out {
                out[s * n_out + o] = y.at(o, s);
            }
        }
        Ok(())
    })
}

/// Looks up a market preset by name, e.g. `"bs4-continuous"` or `"heston4"`.
///
/// # Safety
/// `name` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_market_preset(name: *const c_char, out: *mut *mut FlMarket) -> FlStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let out = out_arg(out, "out")?;
        let preset = preset(name)?;
        *out = Box::into_raw(Box::new(FlMarket { preset }));
        Ok(())
    })
}

/// # Safety
/// `market` must come from `fl_market_preset` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fl_market_free(market: *mut FlMarket) {
    if !market.is_null() {
        drop(Box::from_raw(market));
    }
}

/// # Safety
/// `market` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_market_n_assets(market: *const FlMarket, out: *mut usize) -> FlStatus {
    guard(|| {
        let m = market.as_ref().ok_or(Failure::Null("market"))?;
        *out_arg(out, "out")? = m.preset.model.n_assets();
        Ok(())
    })
}

fn black_scholes(m: &FlMarket) -> Result<&frontierlab::market::BlackScholesModel, Failure> {
    match &m.preset.model {
        MarketModel::BlackScholes(b) => Ok(b),
        MarketModel::Heston(_) => Err(Failure::Arg("the analytic frontier needs a Black-Scholes market".into())),
    }
}

/// Exact mean and variance of the continuously rebalanced optimal wealth.
///
/// # Safety
/// `market` must be a live handle; `mean` and `variance` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_analytic_closed_form(
    market: *const FlMarket,
    beta: f64,
    mean: *mut f64,
    variance: *mut f64,
) -> FlStatus {
    guard(|| {
        let m = market.as_ref().ok_or(Failure::Null("market"))?;
        let sol = solve_analytic(black_scholes(m)?)?;
        let (cm, cv) = closed_form_frontier(beta, &sol, m.preset.grid.horizon(), m.preset.x0)?;
        *out_arg(mean, "mean")? = cm;
        *out_arg(variance, "variance")? = cv;
        Ok(())
    })
}

/// Monte Carlo mean and variance (with standard errors) of the optimal
/// control applied on the preset's grid.
///
/// # Safety
/// `market` must be a live handle; the four out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn fl_analytic_point(
    market: *const FlMarket,
    beta: f64,
    n_sims: usize,
    seed: u64,
    mean: *mut f64,
    variance: *mut f64,
    se_mean: *mut f64,
    se_variance: *mut f64,
) -> FlStatus {
    guard(|| {
        let m = market.as_ref().ok_or(Failure::Null("market"))?;
        let p = &m.preset;
        let a = analytic_frontier_point(beta, black_scholes(m)?, &p.grid, p.x0, n_sims, seed)?;
        *out_arg(mean, "mean")? = a.mean;
        *out_arg(variance, "variance")? = a.variance;
        *out_arg(se_mean, "se_mean")? = a.se_mean;
        *out_arg(se_variance, "se_variance")? = a.se_variance;
        Ok(())
    })
}

/// Moves `w` onto `Σ = 1` inside `[lo, hi]`, adjusting coordinates in
/// `order` (NULL for `0, 1, …, d-1`).
///
/// # Safety
/// `w`, `lo`, `hi` and `out` must hold `d` doubles; `order`, if not NULL,
/// `d` indices.
#[no_mangle]
pub unsafe extern "C" fn fl_project_to_budget(
    w: *const f64,
    lo: *const f64,
    hi: *const f64,
    order: *const usize,
    d: usize,
    out: *mut f64,
) -> FlStatus {
    guard(|| {
        let w = slice_arg(w, d, "w")?;
        let bounds = Bounds::new(slice_arg(lo, d, "lo")?.to_vec(), slice_arg(hi, d, "hi")?.to_vec())?;
        let order: Vec<usize> = if order.is_null() {
            (0..d).collect()
        } else {
            slice_arg(order, d, "order")?.to_vec()
        };
        let p = project_to_budget_values(w, &bounds, &order)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        std::slice::from_raw_parts_mut(out, d).copy_from_slice(&p);
        Ok(())
    })
}

/// Empirical CVaR at level `alpha` of the loss `x0 - x` over `n` samples.
///
/// # Safety
/// `x` must hold `n` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn fl_cvar_empirical(
    x: *const f64,
    n: usize,
    alpha: f64,
    x0: f64,
    out: *mut f64,
) -> FlStatus {
    guard(|| {
        let x = slice_arg(x, n, "x")?;
        *out_arg(out, "out")? = cvar_values(x, alpha, x0)?;
        Ok(())
    })
}

/// Runs the sweep described by a TOML config file and writes its outputs,
/// as the `frontier` command does. `out_dir` may be NULL to keep the
/// config's directory.
///
/// # Safety
/// `config_path` and, if not NULL, `out_dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fl_run_frontier(config_path: *const c_char, out_dir: *const c_char) -> FlStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        let mut config = RunConfig::load(path.as_ref())?;
        if !out_dir.is_null() {
            config.output_dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        }
        frontierlab::cli::cmd_frontier(&config)?;
        Ok(())
    })
}
