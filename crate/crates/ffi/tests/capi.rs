use std::ffi::CStr;
use std::process::Command;
use std::ptr;

use delaydyn_ffi::*;

fn last_error() -> String {
    let p = dd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn run_config(noise: DdNoise, t_end: f64) -> DdRunConfig {
    DdRunConfig {
        noise,
        scheme: DdScheme::Default,
        x0: 3.0,
        y0: 1.0,
        dt: 0.01,
        t_end,
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(dd_version()) }.to_str().unwrap();
    assert_eq!(v, delaydyn::VERSION);
}

#[test]
fn equilibria_through_c_api() {
    let mut p = dd_params_hopf_set();
    p.sigma = 1.0 / 3.0;
    let mut eq = DdEquilibria {
        x_star: 0.0,
        y_star: 0.0,
        r0: 0.0,
        rc: 0.0,
        regime: DdRegime::NoInterior,
    };
    assert_eq!(unsafe { dd_compute_equilibria(&p, &mut eq) }, DdStatus::Ok);
    assert!((eq.x_star - 0.75).abs() < 1e-12);
    assert!((eq.y_star - 1.7).abs() < 1e-12);
    assert_eq!(eq.regime, DdRegime::DelayDependent);

    p.beta = 0.05;
    assert_eq!(unsafe { dd_compute_equilibria(&p, &mut eq) }, DdStatus::Ok);
    assert_eq!(eq.regime, DdRegime::NoInterior);
    assert!(eq.x_star.is_nan());
}

#[test]
fn invalid_params_report_field() {
    let mut p = dd_params_hopf_set();
    p.k = -1.0;
    let mut out = [0.0; 2];
    let status = unsafe { dd_drift(&p, 1.0, 1.0, 1.0, out.as_mut_ptr()) };
    assert_eq!(status, DdStatus::InvalidArgument);
    assert!(last_error().contains('K'), "{}", last_error());
}

#[test]
fn null_pointers_rejected() {
    let p = dd_params_hopf_set();
    assert_eq!(
        unsafe { dd_compute_equilibria(ptr::null(), ptr::null_mut()) },
        DdStatus::NullPointer
    );
    assert_eq!(
        unsafe { dd_drift(&p, 1.0, 1.0, 1.0, ptr::null_mut()) },
        DdStatus::NullPointer
    );
    assert_eq!(unsafe { dd_trajectory_len(ptr::null()) }, 0);
    unsafe {
        dd_trajectory_free(ptr::null_mut());
        dd_ensemble_free(ptr::null_mut());
    }
}

#[test]
fn drift_vanishes_at_interior_point() {
    let p = dd_params_stochastic_set();
    let mut out = [1.0; 2];
    let status = unsafe { dd_drift(&p, 0.75, 1.7, 1.7, out.as_mut_ptr()) };
    assert_eq!(status, DdStatus::Ok);
    assert!(out[0].abs() < 1e-12 && out[1].abs() < 1e-12, "{out:?}");
}

#[test]
fn deterministic_simulation_matches_library() {
    let mut p = dd_params_hopf_set();
    p.tau = 0.5;
    let cfg = run_config(DdNoise::Deterministic, 5.0);
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { dd_simulate(&p, &cfg, 0, 0, &mut h) }, DdStatus::Ok);
    let n = unsafe { dd_trajectory_len(h) };
    assert_eq!(n, 501);
    assert_eq!(unsafe { dd_trajectory_dt(h) }, 0.01);
    let (mut t, mut x, mut y) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let status =
        unsafe { dd_trajectory_copy(h, t.as_mut_ptr(), x.as_mut_ptr(), y.as_mut_ptr(), n) };
    assert_eq!(status, DdStatus::Ok);
    let small =
        unsafe { dd_trajectory_copy(h, t.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), n - 1) };
    assert_eq!(small, DdStatus::BufferTooSmall);
    unsafe { dd_trajectory_free(h) };

    let field = delaydyn::PredatorPreyField::new(p.into()).unwrap();
    let psi = delaydyn::HistoryFunction::constant(3.0, 1.0);
    let reference =
        delaydyn::integrate_dde(&field, &psi, &delaydyn::SolverConfig::rk4(0.01, 5.0)).unwrap();
    assert_eq!(t[500], reference.time(500));
    for (i, s) in reference.states.iter().enumerate() {
        assert_eq!((x[i], y[i]), (s.x, s.y));
    }
}

#[test]
fn stochastic_simulation_is_reproducible() {
    let mut p = dd_params_stochastic_set();
    p.tau = 0.5;
    let cfg = run_config(DdNoise::Model1, 2.0);
    let run = |stream| {
        let mut h = ptr::null_mut();
        assert_eq!(
            unsafe { dd_simulate(&p, &cfg, 42, stream, &mut h) },
            DdStatus::Ok
        );
        let n = unsafe { dd_trajectory_len(h) };
        let mut x = vec![0.0; n];
        unsafe {
            dd_trajectory_copy(h, ptr::null_mut(), x.as_mut_ptr(), ptr::null_mut(), n);
            dd_trajectory_free(h);
        }
        x
    };
    assert_eq!(run(0), run(0));
    assert_ne!(run(0), run(1));
}

#[test]
fn step_larger_than_delay_is_reported() {
    let mut p = dd_params_hopf_set();
    p.tau = 0.005;
    let cfg = run_config(DdNoise::Deterministic, 1.0);
    let mut h = ptr::null_mut();
    let status = unsafe { dd_simulate(&p, &cfg, 0, 0, &mut h) };
    assert_ne!(status, DdStatus::Ok);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn ensemble_handle_round_trip() {
    let mut p = dd_params_stochastic_set();
    p.tau = 0.3;
    let cfg = run_config(DdNoise::Model2, 20.0);
    let mut e = ptr::null_mut();
    let status = unsafe { dd_run_ensemble(&p, &cfg, 16, 42, 1e-3, &mut e) };
    assert_eq!(status, DdStatus::Ok);
    assert_eq!(unsafe { dd_ensemble_n_runs(e) }, 16);
    let frac = unsafe { dd_ensemble_fraction_extinct(e) };
    assert!((0.0..=1.0).contains(&frac));

    let mut extinct = 0;
    for i in 0..16 {
        let mut t = 0.0;
        assert_eq!(
            unsafe { dd_ensemble_extinction_time(e, i, &mut t) },
            DdStatus::Ok
        );
        if !t.is_nan() {
            assert!((0.0..=20.0).contains(&t));
            extinct += 1;
        }
    }
    assert_eq!(extinct as f64 / 16.0, frac);
    let mut t = 0.0;
    assert_eq!(
        unsafe { dd_ensemble_extinction_time(e, 16, &mut t) },
        DdStatus::InvalidArgument
    );

    let mut mean = ptr::null_mut();
    assert_eq!(unsafe { dd_ensemble_mean(e, &mut mean) }, DdStatus::Ok);
    assert_eq!(unsafe { dd_trajectory_len(mean) }, 2001);
    unsafe {
        dd_trajectory_free(mean);
        dd_ensemble_free(e);
    }
}

#[test]
fn ensemble_rejects_deterministic_model() {
    let p = dd_params_stochastic_set();
    let cfg = run_config(DdNoise::Deterministic, 1.0);
    let mut e = ptr::null_mut();
    let status = unsafe { dd_run_ensemble(&p, &cfg, 4, 1, 1e-3, &mut e) };
    assert_eq!(status, DdStatus::InvalidArgument);
    assert!(e.is_null());
}

#[test]
fn header_declares_the_api() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/delaydyn.h"))
            .expect("header generated by build script");
    for name in [
        "dd_version",
        "dd_last_error",
        "dd_compute_equilibria",
        "dd_drift",
        "dd_simulate",
        "dd_trajectory_copy",
        "dd_trajectory_free",
        "dd_run_ensemble",
        "dd_ensemble_mean",
        "dd_ensemble_free",
        "typedef struct DdTrajectory DdTrajectory",
        "DD_STATUS_DIVERGENCE",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile_dir();
    let src = dir.join("check.c");
    std::fs::write(
        &src,
        "#include \"delaydyn.h\"\nint main(void) { DdParams p = dd_params_hopf_set(); return p.r > 0 ? 0 : 1; }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ffi_header_check");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
