use std::ffi::{CStr, CString};
use std::ptr;

use tlsbath_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tlsb_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn small_params() -> TlsbTrialParams {
    let mut p = std::mem::MaybeUninit::uninit();
    assert_eq!(unsafe { tlsb_trial_params_default(p.as_mut_ptr()) }, TlsbStatus::Ok);
    let mut p = unsafe { p.assume_init() };
    p.seed = 3;
    p.retain_k = 5;
    p.output_points = 200;
    p
}

fn synthetic() -> *mut TlsbField {
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { tlsb_field_synthetic(&mut f) }, TlsbStatus::Ok);
    assert!(!f.is_null());
    f
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(tlsb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn defaults_are_sane() {
    let p = small_params();
    assert_eq!(p.n_total, 1_000_000);
    assert!(p.dipole_debye > 0.0 && p.t1_min_us > 0.0 && p.horizon_us > 0.0);
    assert_eq!(p.engine, TlsbEngine::Fast as u32);
}

#[test]
fn null_pointers_are_reported() {
    assert_eq!(unsafe { tlsb_trial_params_default(ptr::null_mut()) }, TlsbStatus::NullPointer);
    assert!(last_error().contains("null"));
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { tlsb_trial_run(ptr::null(), ptr::null(), &mut out) },
        TlsbStatus::NullPointer
    );
    assert!(out.is_null());
    unsafe {
        tlsb_field_free(ptr::null_mut());
        tlsb_trial_free(ptr::null_mut());
    }
}

#[test]
fn field_magnitude_peaks_at_junction() {
    let f = synthetic();
    let (mut near, mut far) = (0.0, 0.0);
    unsafe {
        assert_eq!(tlsb_field_magnitude(f, 0.0, 0.0, &mut near), TlsbStatus::Ok);
        assert_eq!(tlsb_field_magnitude(f, 200.0, 200.0, &mut far), TlsbStatus::Ok);
        tlsb_field_free(f);
    }
    assert!(near > far && far > 0.0);
}

#[test]
fn missing_field_file_is_io_error() {
    let path = CString::new("/nonexistent/fieldmap.txt").unwrap();
    let mut f = ptr::null_mut();
    let s = unsafe { tlsb_field_load(path.as_ptr(), 0.0, &mut f) };
    assert_eq!(s, TlsbStatus::Io);
    assert!(f.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn invalid_parameters_are_rejected() {
    let f = synthetic();
    let mut p = small_params();
    p.engine = 7;
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { tlsb_trial_run(f, &p, &mut t) }, TlsbStatus::InvalidArgument);
    assert!(last_error().contains("engine"));
    p.engine = TlsbEngine::Fast as u32;
    p.t1_min_us = -1.0;
    assert_eq!(unsafe { tlsb_trial_run(f, &p, &mut t) }, TlsbStatus::InvalidArgument);
    assert!(t.is_null());
    unsafe { tlsb_field_free(f) };
}

#[test]
fn trial_round_trip() {
    let f = synthetic();
    let p = small_params();
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { tlsb_trial_run(f, &p, &mut t) }, TlsbStatus::Ok, "{}", last_error());

    let (mut t1, mut censored) = (0.0, 9u32);
    assert_eq!(unsafe { tlsb_trial_t1(t, &mut t1, &mut censored) }, TlsbStatus::Ok);
    assert!(t1 > 0.0 && censored <= 1);

    let mut t2 = 0.0;
    match unsafe { tlsb_trial_t2(t, &mut t2) } {
        TlsbStatus::Ok => assert!(t2 > 0.0),
        s => assert_eq!(s, TlsbStatus::Unresolved),
    }

    let mut n = 0usize;
    assert_eq!(unsafe { tlsb_trial_len(t, &mut n) }, TlsbStatus::Ok);
    assert_eq!(n, p.output_points as usize);

    let mut small = vec![0.0; n - 1];
    assert_eq!(
        unsafe { tlsb_trial_trajectory(t, small.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), n - 1) },
        TlsbStatus::BufferTooSmall
    );

    let (mut ts, mut pq, mut pt) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    assert_eq!(
        unsafe { tlsb_trial_trajectory(t, ts.as_mut_ptr(), pq.as_mut_ptr(), pt.as_mut_ptr(), n) },
        TlsbStatus::Ok
    );
    assert_eq!(ts[0], 0.0);
    assert!((ts[n - 1] - p.horizon_us).abs() < 1e-9);
    assert!((pq[0] - 1.0).abs() < 1e-12);
    assert!(pq.iter().zip(&pt).all(|(a, b)| a + b <= 1.0 + 1e-9));

    let (mut d, mut om) = (0.0, 0.0);
    assert_eq!(unsafe { tlsb_trial_strongest(t, &mut d, &mut om) }, TlsbStatus::Ok);
    assert!(d >= 0.0 && om.abs() > 0.0);

    // same seed, same answer
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { tlsb_trial_run(f, &p, &mut again) }, TlsbStatus::Ok);
    let mut t1b = 0.0;
    unsafe { tlsb_trial_t1(again, &mut t1b, ptr::null_mut()) };
    assert_eq!(t1.to_bits(), t1b.to_bits());

    unsafe {
        tlsb_trial_free(again);
        tlsb_trial_free(t);
        tlsb_field_free(f);
    }
}

#[test]
fn header_declares_public_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/tlsbath.h")).unwrap();
    for sym in [
        "TLSBATH_H",
        "typedef struct TlsbField TlsbField;",
        "typedef struct TlsbTrial TlsbTrial;",
        "TLSB_STATUS_OK = 0",
        "TLSB_STATUS_PANIC",
        "TLSB_ENGINE_FULL = 1",
        "TlsbTrialParams",
        "tlsb_version",
        "tlsb_last_error",
        "tlsb_trial_params_default",
        "tlsb_field_synthetic",
        "tlsb_field_load",
        "tlsb_field_magnitude",
        "tlsb_field_free",
        "tlsb_trial_run",
        "tlsb_trial_t1",
        "tlsb_trial_t2",
        "tlsb_trial_len",
        "tlsb_trial_trajectory",
        "tlsb_trial_strongest",
        "tlsb_trial_free",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
    assert!(header.contains("extern \"C\""));
}
