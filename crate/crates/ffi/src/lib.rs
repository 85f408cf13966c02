//! C ABI over the `accesssim` simulator.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free` function. Every fallible call returns an
//! [`AsimStatus`] and records a message readable through [`asim_last_error`].
//! Strings returned by the library are NUL terminated and must be released
//! with [`asim_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use accesssim::config::ScenarioConfig;
use accesssim::frame::{EthernetFrame, MacAddress};
use accesssim::network::{no_disadvantage_check, Network, RunReport, NO_DISADVANTAGE_EPSILON};
use accesssim::traffic::ReportRow;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    RuntimeError = 4,
    OutOfRange = 5,
    BufferTooSmall = 6,
    FrameError = 7,
    Panic = 8,
}

/// A parsed, validated scenario.
pub struct AsimScenario {
    cfg: ScenarioConfig,
}

/// The outcome of one simulation run.
pub struct AsimReport {
    report: RunReport,
}

/// One subscriber's row of the report.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AsimRow {
    pub subscriber: u16,
    /// 1 for a shared-plan member, 0 for legacy.
    pub shared: u8,
    pub offered_bytes: u64,
    pub delivered_bytes: u64,
    pub dropped_bytes: u64,
    pub goodput_bps: f64,
    pub mean_delay_ns: f64,
    pub p95_delay_ns: u64,
    pub p99_delay_ns: u64,
    pub drop_ratio: f64,
}

impl From<&ReportRow> for AsimRow {
    fn from(r: &ReportRow) -> Self {
        AsimRow {
            subscriber: r.subscriber,
            shared: u8::from(r.plan == "shared"),
            offered_bytes: r.offered_bytes,
            delivered_bytes: r.delivered_bytes,
            dropped_bytes: r.dropped_bytes,
            goodput_bps: r.goodput_bps,
            mean_delay_ns: r.mean_delay_ns,
            p95_delay_ns: r.p95_delay_ns,
            p99_delay_ns: r.p99_delay_ns,
            drop_ratio: r.drop_ratio,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: AsimStatus, msg: impl Into<String>) -> AsimStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> AsimStatus) -> AsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == AsimStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(AsimStatus::Panic, "internal panic"),
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// The message attached to the last failing call on this thread, or an
/// empty string. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn asim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn asim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a scenario in the `key = value` configuration format.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asim_scenario_parse(text: *const c_char, out: *mut *mut AsimScenario) -> AsimStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            return fail(AsimStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(text).to_str() else {
            return fail(AsimStatus::InvalidUtf8, "scenario text is not UTF-8");
        };
        match ScenarioConfig::parse(text).and_then(|c| c.validate().map(|_| c)) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(AsimScenario { cfg }));
                AsimStatus::Ok
            }
            Err(e) => fail(AsimStatus::ConfigError, e.to_string()),
        }
    })
}

/// # Safety
/// `scenario` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn asim_scenario_free(scenario: *mut AsimScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn asim_scenario_set_seed(scenario: *mut AsimScenario, seed: u64) -> AsimStatus {
    guard(|| match scenario.as_mut() {
        Some(s) => {
            s.cfg.run.seed = seed;
            AsimStatus::Ok
        }
        None => fail(AsimStatus::NullPointer, "null scenario"),
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn asim_scenario_set_duration_ns(scenario: *mut AsimScenario, duration_ns: u64) -> AsimStatus {
    guard(|| {
        let Some(s) = scenario.as_mut() else {
            return fail(AsimStatus::NullPointer, "null scenario");
        };
        let mut cfg = s.cfg.clone();
        cfg.run.duration_ns = duration_ns;
        match cfg.validate() {
            Ok(()) => {
                s.cfg = cfg;
                AsimStatus::Ok
            }
            Err(e) => fail(AsimStatus::ConfigError, e.to_string()),
        }
    })
}

/// A copy of `scenario` in which every shared member runs as a legacy
/// subscriber and no group exists.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asim_scenario_legacy_reference(
    scenario: *const AsimScenario,
    out: *mut *mut AsimScenario,
) -> AsimStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(AsimStatus::NullPointer, "null argument");
        };
        *out = Box::into_raw(Box::new(AsimScenario { cfg: s.cfg.legacy_reference() }));
        AsimStatus::Ok
    })
}

/// The canonical text form of `scenario`, or null on a null handle.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asim_scenario_dump(scenario: *const AsimScenario) -> *mut c_char {
    match scenario.as_ref() {
        Some(s) => into_c_string(s.cfg.dump()),
        None => ptr::null_mut(),
    }
}

/// Builds the topology and simulates it to the configured duration.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asim_run(scenario: *const AsimScenario, out: *mut *mut AsimReport) -> AsimStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(AsimStatus::NullPointer, "null argument");
        };
        *out = ptr::null_mut();
        match Network::build(&s.cfg).and_then(Network::run) {
            Ok(report) => {
                *out = Box::into_raw(Box::new(AsimReport { report }));
                AsimStatus::Ok
            }
            Err(e) => fail(AsimStatus::RuntimeError, e.to_string()),
        }
    })
}

/// # Safety
/// `report` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn asim_report_free(report: *mut AsimReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of subscriber rows, 0 on a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asim_report_row_count(report: *const AsimReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.rows.len())
}

/// Row `index`, in ascending subscriber order.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asim_report_row(report: *const AsimReport, index: usize, out: *mut AsimRow) -> AsimStatus {
    guard(|| {
        let (Some(r), false) = (report.as_ref(), out.is_null()) else {
            return fail(AsimStatus::NullPointer, "null argument");
        };
        match r.report.rows.get(index) {
            Some(row) => {
                *out = AsimRow::from(row);
                AsimStatus::Ok
            }
            None => fail(AsimStatus::OutOfRange, format!("row {index} of {}", r.report.rows.len())),
        }
    })
}

/// Simulated end time of the run in nanoseconds, 0 on a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asim_report_end_ns(report: *const AsimReport) -> u64 {
    report.as_ref().map_or(0, |r| r.report.end.as_nanos())
}

/// Writes 1 to `out` if every shaper stayed within its envelope.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asim_report_all_conformant(report: *const AsimReport, out: *mut u8) -> AsimStatus {
    guard(|| {
        let (Some(r), false) = (report.as_ref(), out.is_null()) else {
            return fail(AsimStatus::NullPointer, "null argument");
        };
        *out = u8::from(r.report.all_conformant());
        AsimStatus::Ok
    })
}

/// Writes 1 to `out` if every shared member of `run` achieved at least
/// 98% of its goodput in `reference`.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asim_report_no_disadvantage(
    run: *const AsimReport,
    reference: *const AsimReport,
    out: *mut u8,
) -> AsimStatus {
    guard(|| {
        let (Some(a), Some(b), false) = (run.as_ref(), reference.as_ref(), out.is_null()) else {
            return fail(AsimStatus::NullPointer, "null argument");
        };
        let verdicts = no_disadvantage_check(&a.report.rows, &b.report.rows, NO_DISADVANTAGE_EPSILON);
        *out = u8::from(verdicts.iter().all(|v| v.pass));
        AsimStatus::Ok
    })
}

/// Per-subscriber report as CSV with a header line.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asim_report_csv(report: *const AsimReport) -> *mut c_char {
    report.as_ref().map_or(ptr::null_mut(), |r| into_c_string(r.report.report_csv()))
}

/// Per-shaper conformance verdicts as CSV with a header line.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asim_report_verdicts_csv(report: *const AsimReport) -> *mut c_char {
    report.as_ref().map_or(ptr::null_mut(), |r| into_c_string(r.report.verdicts_csv()))
}

/// Run summary, one `key value` pair per line.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asim_report_summary(report: *const AsimReport) -> *mut c_char {
    report.as_ref().map_or(ptr::null_mut(), |r| into_c_string(r.report.summary()))
}

/// Encodes an Ethernet frame with FCS. `vids` lists tags in push order:
/// the first becomes the C-TAG, later ones S-TAGs. The payload is padded
/// to the minimum frame size.
///
/// # Safety
/// `dst` and `src` point to 6 bytes, `vids` to `n_vids` values, `payload`
/// to `payload_len` bytes, `buf` to `cap` writable bytes, `written` is
/// writable. `vids` and `payload` may be null when their length is 0.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn asim_frame_encode(
    dst: *const u8,
    src: *const u8,
    ethertype: u16,
    vids: *const u16,
    n_vids: usize,
    payload: *const u8,
    payload_len: usize,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> AsimStatus {
    guard(|| {
        if dst.is_null()
            || src.is_null()
            || buf.is_null()
            || written.is_null()
            || (vids.is_null() && n_vids > 0)
            || (payload.is_null() && payload_len > 0)
        {
            return fail(AsimStatus::NullPointer, "null argument");
        }
        let mac = |p: *const u8| MacAddress(ptr::read(p.cast::<[u8; 6]>()));
        let body =
            if payload_len == 0 { Vec::new() } else { std::slice::from_raw_parts(payload, payload_len).to_vec() };
        let mut frame = EthernetFrame::new(mac(dst), mac(src), ethertype, body);
        if n_vids > 0 {
            for &vid in std::slice::from_raw_parts(vids, n_vids) {
                if let Err(e) = frame.push_tag(vid, 0, false) {
                    return fail(AsimStatus::FrameError, e.to_string());
                }
            }
        }
        frame.pad_to_minimum();
        let bytes = frame.serialize();
        *written = bytes.len();
        if bytes.len() > cap {
            return fail(AsimStatus::BufferTooSmall, format!("need {} bytes", bytes.len()));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
        AsimStatus::Ok
    })
}

/// Validates a serialized frame and reports its tag depth and outermost
/// VID (0 when untagged).
///
/// # Safety
/// `bytes` points to `len` bytes; `vid` and `depth` are writable.
#[no_mangle]
pub unsafe extern "C" fn asim_frame_outer_vid(
    bytes: *const u8,
    len: usize,
    vid: *mut u16,
    depth: *mut usize,
) -> AsimStatus {
    guard(|| {
        if bytes.is_null() || vid.is_null() || depth.is_null() {
            return fail(AsimStatus::NullPointer, "null argument");
        }
        match EthernetFrame::parse(std::slice::from_raw_parts(bytes, len)) {
            Ok(f) => {
                *vid = f.outer_vid().map_or(0, |v| v.get());
                *depth = f.depth();
                AsimStatus::Ok
            }
            Err(e) => fail(AsimStatus::FrameError, e.to_string()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(asim_last_error()) }.to_str().unwrap().to_string()
    }

    #[test]
    fn null_arguments_are_rejected() {
        unsafe {
            assert_eq!(asim_scenario_parse(ptr::null(), ptr::null_mut()), AsimStatus::NullPointer);
            assert_eq!(asim_run(ptr::null(), ptr::null_mut()), AsimStatus::NullPointer);
            assert_eq!(asim_report_row_count(ptr::null()), 0);
            assert!(asim_report_csv(ptr::null()).is_null());
            asim_scenario_free(ptr::null_mut());
            asim_report_free(ptr::null_mut());
            asim_string_free(ptr::null_mut());
        }
        assert_eq!(last_error(), "null argument");
    }

    #[test]
    fn error_message_names_key_and_clears_on_success() {
        let mut h = ptr::null_mut();
        let bad = CString::new("run.duration = soon\n").unwrap();
        assert_eq!(unsafe { asim_scenario_parse(bad.as_ptr(), &mut h) }, AsimStatus::ConfigError);
        assert!(h.is_null());
        assert!(last_error().contains("run.duration"), "{}", last_error());
        assert_eq!(unsafe { asim_report_all_conformant(ptr::null(), ptr::null_mut()) }, AsimStatus::NullPointer);
        let good = CString::new("run.duration = 1ms\n").unwrap();
        assert_eq!(unsafe { asim_scenario_parse(good.as_ptr(), &mut h) }, AsimStatus::Ok);
        assert_eq!(last_error(), "");
        unsafe { asim_scenario_free(h) };
    }

    #[test]
    fn row_conversion_flags_shared() {
        let row = ReportRow {
            subscriber: 3,
            plan: "shared".into(),
            offered_bytes: 10,
            delivered_bytes: 8,
            dropped_bytes: 2,
            goodput_bps: 1.5,
            mean_delay_ns: 2.5,
            p95_delay_ns: 4,
            p99_delay_ns: 5,
            drop_ratio: 0.2,
        };
        let c = AsimRow::from(&row);
        assert_eq!((c.subscriber, c.shared, c.dropped_bytes, c.p99_delay_ns), (3, 1, 2, 5));
        assert_eq!(AsimRow::from(&ReportRow { plan: "legacy".into(), ..row }).shared, 0);
    }

    #[test]
    fn end_time_of_null_report_is_zero() {
        assert_eq!(unsafe { asim_report_end_ns(ptr::null()) }, 0);
    }
}
