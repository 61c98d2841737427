//! C interface to the simulator.
//!
//! Objects cross the boundary as opaque handles created by a `*_new`,
//! `*_load` or `tl_run` call and released with the matching `*_free`.
//! Fallible calls return a [`TlStatus`]; the message for the most recent
//! failure on the calling thread is available from [`tl_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tdma_lorawan::config::ScenarioConfig;
use tdma_lorawan::error::{SchedulerError, SimError};
use tdma_lorawan::phy::RadioConfig;
use tdma_lorawan::scheduler::{
    control_overhead_eta, AllocationRequest, ResourceGrid, Scheduler, SchedulerConfig,
};
use tdma_lorawan::sim::{run_simulation, SimulationReport, REPORT_HEADER};
use tdma_lorawan::sync::{min_guard_time, SyncBudget};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Saturated = 4,
    Runtime = 5,
    Io = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &SimError) -> TlStatus {
    match e {
        SimError::Io { .. } => TlStatus::Io,
        SimError::Config(tdma_lorawan::error::ConfigError::Io { .. }) => TlStatus::Io,
        SimError::Scheduler(SchedulerError::Saturated(_)) => TlStatus::Saturated,
        e if e.is_validation() => TlStatus::Config,
        _ => TlStatus::Runtime,
    }
}

fn fail(status: TlStatus, msg: impl Into<String>) -> TlStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> TlStatus) -> TlStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(TlStatus::Panic, "panic inside the library"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, TlStatus> {
    if p.is_null() {
        return Err(fail(TlStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn tl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Airtime in ms of `payload_bytes` with explicit header, CRC on and
/// automatic low-data-rate optimisation.
///
/// # Safety
/// `out_ms` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn tl_time_on_air_ms(
    sf: u8,
    bw_hz: u32,
    cr: u8,
    preamble: u16,
    payload_bytes: usize,
    out_ms: *mut f64,
) -> TlStatus {
    guard(|| {
        if out_ms.is_null() {
            return fail(TlStatus::NullPointer, "out_ms is null");
        }
        let toa = RadioConfig::new(sf, bw_hz)
            .and_then(|r| r.with_coding_rate(cr))
            .map(|r| r.with_preamble(preamble))
            .and_then(|r| r.time_on_air_ms(payload_bytes));
        match toa {
            Ok(t) => {
                *out_ms = t;
                TlStatus::Ok
            }
            Err(e) => fail(TlStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Smallest guard keeping adjacent slots apart under the given worst-case
/// sync error, drift and hardware jitter, all in ms.
#[no_mangle]
pub extern "C" fn tl_min_guard_time_ms(sync_err_max_ms: f64, drift_max_ms: f64, hw_max_ms: f64) -> f64 {
    min_guard_time(&SyncBudget {
        sync_err_max_ms,
        drift_max_ms,
        hw_max_ms,
    })
}

/// Downlink control messages per delivered uplink over a session.
#[no_mangle]
pub extern "C" fn tl_control_overhead_eta(t_up_s: f64, t_session_s: f64) -> f64 {
    control_overhead_eta(t_up_s, t_session_s)
}

/// Opaque scenario configuration.
pub struct TlConfig(ScenarioConfig);

/// A configuration holding every default.
#[no_mangle]
pub extern "C" fn tl_config_new() -> *mut TlConfig {
    Box::into_raw(Box::new(TlConfig(ScenarioConfig::default())))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn tl_config_load(path: *const c_char, out: *mut *mut TlConfig) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return fail(TlStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ScenarioConfig::load(path) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(TlConfig(c)));
                TlStatus::Ok
            }
            Err(e) => {
                let e = SimError::from(e);
                fail(status_of(&e), e.to_string())
            }
        }
    })
}

/// Sets one key and re-validates; on failure the configuration is unchanged.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn tl_config_set(cfg: *mut TlConfig, key: *const c_char, value: *const c_char) -> TlStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(TlStatus::NullPointer, "cfg is null");
        };
        let (key, value) = match (str_arg(key, "key"), str_arg(value, "value")) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let mut next = cfg.0.clone();
        match next.apply_overrides(&[format!("{key}={value}")]) {
            Ok(()) => {
                cfg.0 = next;
                TlStatus::Ok
            }
            Err(e) => fail(TlStatus::Config, e.to_string()),
        }
    })
}

/// # Safety
/// `cfg` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_config_free(cfg: *mut TlConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Opaque result of one simulation run.
pub struct TlReport(SimulationReport);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TlSummary {
    pub nodes: u64,
    pub seed: u64,
    pub sent: u64,
    pub delivered: u64,
    pub lost_collision: u64,
    pub lost_below_sensitivity: u64,
    pub dropped: u64,
    pub sync_events: u64,
    pub pdr: f64,
    pub pdr_ci95: f64,
    pub throughput_kbps: f64,
    pub utilization: f64,
    /// Infinite when nothing was delivered.
    pub energy_mj_per_success: f64,
    pub total_energy_mj: f64,
    /// Nonzero when some device never obtained a resource block.
    pub infeasible: u8,
}

/// Runs one seed. An infeasible scenario still succeeds and is flagged in
/// the summary.
///
/// # Safety
/// `cfg` must come from this library; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn tl_run(cfg: *const TlConfig, seed: u64, out: *mut *mut TlReport) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return fail(TlStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(cfg) = cfg.as_ref() else {
            return fail(TlStatus::NullPointer, "cfg is null");
        };
        match run_simulation(&cfg.0, seed) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(TlReport(r)));
                TlStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `report` must come from this library; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn tl_report_summary(report: *const TlReport, out: *mut TlSummary) -> TlStatus {
    guard(|| {
        let (Some(r), Some(out)) = (report.as_ref(), out.as_mut()) else {
            return fail(TlStatus::NullPointer, "report or out is null");
        };
        let r = &r.0;
        let c = &r.counters;
        *out = TlSummary {
            nodes: r.nodes as u64,
            seed: r.seed,
            sent: c.sent,
            delivered: c.delivered,
            lost_collision: c.lost_collision,
            lost_below_sensitivity: c.lost_below_sensitivity,
            dropped: c.dropped(),
            sync_events: r.energy.n_sync,
            pdr: r.metrics.pdr,
            pdr_ci95: r.metrics.pdr_ci95,
            throughput_kbps: r.metrics.throughput_kbps,
            utilization: r.metrics.utilization,
            energy_mj_per_success: r.metrics.energy_per_success_mj,
            total_energy_mj: r.energy.total_mj(),
            infeasible: u8::from(r.status.as_str() != "ok"),
        };
        TlStatus::Ok
    })
}

/// Header plus the summary row, as a string the caller releases with
/// [`tl_string_free`]. Null on failure.
///
/// # Safety
/// `report` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tl_report_csv(report: *const TlReport) -> *mut c_char {
    clear_error();
    let Some(r) = report.as_ref() else {
        set_error("report is null");
        return ptr::null_mut();
    };
    match CString::new(format!("{REPORT_HEADER}\n{}\n", r.0.csv_row())) {
        Ok(s) => s.into_raw(),
        Err(_) => {
            set_error("report contains a NUL byte");
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn tl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `report` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_report_free(report: *mut TlReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Opaque slot scheduler over a channel × slot grid whose first cell is
/// reserved for access.
pub struct TlScheduler(Scheduler);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TlAllocation {
    pub channel: u32,
    pub first_slot: u32,
    pub n_slots: u32,
    pub is_reuse: u8,
}

/// Null when the grid is empty.
#[no_mangle]
pub extern "C" fn tl_scheduler_new(channels: usize, slots: usize, slot_ms: f64, reuse: u8) -> *mut TlScheduler {
    clear_error();
    let grid = match ResourceGrid::with_access_slot(channels, slots) {
        Ok(g) => g,
        Err(e) => {
            set_error(e.to_string());
            return ptr::null_mut();
        }
    };
    let cfg = SchedulerConfig {
        slot_len_ms: slot_ms,
        reuse_enabled: reuse != 0,
        ..SchedulerConfig::default()
    };
    Box::into_raw(Box::new(TlScheduler(Scheduler::new(grid, cfg))))
}

/// Grants a single-slot block to `dev_id`.
///
/// # Safety
/// `sched` must come from this library; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn tl_scheduler_allocate(
    sched: *mut TlScheduler,
    dev_id: u32,
    sf: u8,
    payload_bytes: usize,
    priority: u8,
    t_now_ms: f64,
    out: *mut TlAllocation,
) -> TlStatus {
    guard(|| {
        let (Some(s), Some(out)) = (sched.as_mut(), out.as_mut()) else {
            return fail(TlStatus::NullPointer, "sched or out is null");
        };
        let req = AllocationRequest::single(dev_id, sf, payload_bytes, priority);
        match s.0.allocate(&req, t_now_ms) {
            Ok(a) => {
                *out = TlAllocation {
                    channel: a.channel_index as u32,
                    first_slot: a.slot_indices.first().copied().unwrap_or(0) as u32,
                    n_slots: a.slot_indices.len() as u32,
                    is_reuse: u8::from(a.is_reuse),
                };
                TlStatus::Ok
            }
            Err(e) => {
                let e = SimError::from(e);
                fail(status_of(&e), e.to_string())
            }
        }
    })
}

/// Refreshes a device's activity time. Returns 1 if it holds a block.
///
/// # Safety
/// `sched` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tl_scheduler_report(sched: *mut TlScheduler, dev_id: u32, t_now_ms: f64) -> u8 {
    sched.as_mut().map_or(0, |s| u8::from(s.0.report(dev_id, t_now_ms)))
}

/// Frees blocks idle for longer than `t_release_ms`; returns how many.
///
/// # Safety
/// `sched` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tl_scheduler_reclaim(sched: *mut TlScheduler, t_now_ms: f64, t_release_ms: f64) -> usize {
    sched.as_mut().map_or(0, |s| s.0.reclaim_expired(t_now_ms, t_release_ms))
}

/// # Safety
/// `sched` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_scheduler_free(sched: *mut TlScheduler) {
    if !sched.is_null() {
        drop(Box::from_raw(sched));
    }
}
