use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use tdma_lorawan_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn airtime_matches_hand_values() {
    let mut t = 0.0;
    unsafe {
        assert_eq!(tl_time_on_air_ms(9, 125_000, 1, 8, 10, &mut t), TlStatus::Ok);
        assert!((t - 144.384).abs() < 1e-9);
        assert_eq!(tl_time_on_air_ms(7, 125_000, 1, 8, 10, &mut t), TlStatus::Ok);
        assert!((t - 41.216).abs() < 1e-9);
        assert_eq!(tl_time_on_air_ms(9, 125_000, 1, 8, 10, ptr::null_mut()), TlStatus::NullPointer);
    }
}

#[test]
fn closed_forms() {
    assert_eq!(tl_min_guard_time_ms(4.0, 12.0, 0.0), 32.0);
    assert!((tl_control_overhead_eta(4.0, 86_400.0) - 9.259e-5).abs() < 1e-8);
}

#[test]
fn config_run_report_round_trip() {
    unsafe {
        let cfg = tl_config_new();
        for (k, v) in [("nodes", "5"), ("duration_s", "120"), ("protocol", "aloha")] {
            assert_eq!(tl_config_set(cfg, cstr(k).as_ptr(), cstr(v).as_ptr()), TlStatus::Ok);
        }
        assert_eq!(tl_config_set(cfg, cstr("nodez").as_ptr(), cstr("5").as_ptr()), TlStatus::Config);
        let msg = CStr::from_ptr(tl_last_error()).to_str().unwrap().to_owned();
        assert!(msg.contains("unknown key"), "{msg}");

        let mut rep = ptr::null_mut();
        assert_eq!(tl_run(cfg, 7, &mut rep), TlStatus::Ok);
        let mut s = TlSummary::default();
        assert_eq!(tl_report_summary(rep, &mut s), TlStatus::Ok);
        assert_eq!(s.nodes, 5);
        assert_eq!(s.seed, 7);
        assert!(s.sent > 0 && s.delivered <= s.sent);
        assert_eq!(s.infeasible, 0);

        let csv = tl_report_csv(rep);
        let text = CStr::from_ptr(csv).to_str().unwrap().to_owned();
        tl_string_free(csv);
        assert!(text.starts_with("protocol,"));
        assert_eq!(text.lines().count(), 2);

        tl_report_free(rep);
        tl_config_free(cfg);
    }
}

#[test]
fn bad_value_leaves_config_untouched() {
    unsafe {
        let cfg = tl_config_new();
        assert_eq!(tl_config_set(cfg, cstr("duration_s").as_ptr(), cstr("0").as_ptr()), TlStatus::Config);
        let mut rep = ptr::null_mut();
        assert_eq!(tl_run(cfg, 1, &mut rep), TlStatus::Ok);
        tl_report_free(rep);
        tl_config_free(cfg);
    }
}

#[test]
fn missing_file_is_io() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let s = tl_config_load(cstr("/nonexistent/scenario.cfg").as_ptr(), &mut cfg);
        assert_eq!(s, TlStatus::Io);
        assert!(cfg.is_null());
    }
}

#[test]
fn null_handles_are_rejected() {
    unsafe {
        let mut rep = ptr::null_mut();
        assert_eq!(tl_run(ptr::null(), 1, &mut rep), TlStatus::NullPointer);
        assert!(tl_report_csv(ptr::null()).is_null());
        tl_config_free(ptr::null_mut());
        tl_report_free(ptr::null_mut());
        tl_scheduler_free(ptr::null_mut());
        tl_string_free(ptr::null_mut());
    }
}

#[test]
fn scheduler_spreads_then_saturates() {
    unsafe {
        let s = tl_scheduler_new(2, 2, 200.0, 0);
        assert!(!s.is_null());
        let mut a = TlAllocation::default();
        let mut cells = Vec::new();
        for dev in 0..3 {
            assert_eq!(tl_scheduler_allocate(s, dev, 9, 10, 0, 0.0, &mut a), TlStatus::Ok);
            cells.push((a.channel, a.first_slot));
            assert_eq!(a.is_reuse, 0);
        }
        assert!(!cells.contains(&(0, 0)));
        assert_eq!(tl_scheduler_allocate(s, 9, 9, 10, 0, 0.0, &mut a), TlStatus::Saturated);
        assert_eq!(tl_scheduler_report(s, 1, 500.0), 1);
        assert_eq!(tl_scheduler_reclaim(s, 10_000.0, 1_000.0), 3);
        assert_eq!(tl_scheduler_allocate(s, 9, 9, 10, 0, 10_000.0, &mut a), TlStatus::Ok);
        tl_scheduler_free(s);
    }
    assert!(tl_scheduler_new(0, 4, 200.0, 1).is_null());
}

#[test]
fn header_compiles_as_c() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/tdma_lorawan.h");
    assert!(header.exists());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"tdma_lorawan.h\"\nint main(void) { double t; return tl_time_on_air_ms(9, 125000, 1, 8, 10, &t) == TL_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
