use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use wrom_ffi::*;

const SMALL: &str = "\
[grid]
width_m = 600
depth_m = 500
h_m = 20
[medium]
model = layered
c_ref_m_per_s = 3000
interface_depth_m = 300
slope = 0
contrast = 1.2
[signal]
f0_hz = 6
bandwidth_hz = 4
[array]
m = 3
aperture_m = 200
depth_m = 100
[rom]
tau_s = 0.0435
n = 4
subsample = 20
[inversion]
region_x0_m = 0
region_x1_m = 600
region_y0_m = 0
region_y1_m = 500
";

fn last_error() -> String {
    unsafe { CStr::from_ptr(wrom_last_error()) }.to_string_lossy().into_owned()
}

fn small_config() -> *mut WromConfig {
    let text = CString::new(SMALL).unwrap();
    let mut config = ptr::null_mut();
    assert_eq!(unsafe { wrom_config_parse(text.as_ptr(), &mut config) }, WromStatus::Ok);
    config
}

#[test]
fn rom_round_trip_through_handles() {
    unsafe {
        let config = small_config();
        let mut medium = ptr::null_mut();
        assert_eq!(wrom_medium_from_config(config, &mut medium), WromStatus::Ok);
        let (mut nx, mut ny) = (0, 0);
        assert_eq!(wrom_medium_dims(medium, &mut nx, &mut ny), WromStatus::Ok);
        assert_eq!((nx, ny), (31, 26));
        let mut series = ptr::null_mut();
        assert_eq!(wrom_series_simulate(config, medium, &mut series), WromStatus::Ok, "{}", last_error());
        let (mut m, mut n) = (0, 0);
        assert_eq!(wrom_series_dims(series, &mut m, &mut n), WromStatus::Ok);
        assert_eq!((m, n), (3, 4));
        let mut rom = ptr::null_mut();
        assert_eq!(wrom_rom_build(series, 1e-9, &mut rom), WromStatus::Ok);
        let mut dim = 0;
        assert_eq!(wrom_rom_dim(rom, &mut dim), WromStatus::Ok);
        assert_eq!(dim, 12);
        let mut fit = WromFitReport::default();
        assert_eq!(wrom_rom_fit(rom, series, &mut fit), WromStatus::Ok);
        assert!(fit.family1 < 1e-10 && fit.family2 < 1e-10, "{fit:?}");
        let mut r = vec![0.0; dim * dim];
        let mut mass = vec![0.0; dim * dim];
        assert_eq!(wrom_rom_matrix(rom, WromRomMatrix::Cholesky, r.as_mut_ptr(), r.len()), WromStatus::Ok);
        assert_eq!(wrom_rom_matrix(rom, WromRomMatrix::Mass, mass.as_mut_ptr(), mass.len()), WromStatus::Ok);
        let rm = nalgebra::DMatrix::from_column_slice(dim, dim, &r);
        let mm = nalgebra::DMatrix::from_column_slice(dim, dim, &mass);
        assert!((rm.transpose() * &rm - &mm).norm() < 1e-10 * mm.norm());
        let mut small = [0.0; 4];
        assert_eq!(
            wrom_rom_matrix(rom, WromRomMatrix::Propagator, small.as_mut_ptr(), small.len()),
            WromStatus::BufferTooSmall
        );
        assert!(last_error().contains("need 144"));
        let mut d0 = vec![0.0; m * m];
        assert_eq!(wrom_series_matrix(series, 0, 0, d0.as_mut_ptr(), d0.len()), WromStatus::Ok);
        assert_eq!(wrom_series_matrix(series, 8, 0, d0.as_mut_ptr(), d0.len()), WromStatus::InvalidInput);
        let mut corr = 0.0;
        assert_eq!(wrom_assess(config, medium, medium, &mut corr), WromStatus::Ok);
        assert!((corr - 1.0).abs() < 1e-12);
        wrom_rom_free(rom);
        wrom_series_free(series);
        wrom_medium_free(medium);
        wrom_config_free(config);
    }
}

#[test]
fn series_from_raw_matrices() {
    let n = 2;
    let d: Vec<f64> = (0..2 * n).map(|j| (0.4 * j as f64).cos()).collect();
    let dd: Vec<f64> = d.iter().map(|v| -4.0 * v).collect();
    unsafe {
        let mut series = ptr::null_mut();
        assert_eq!(wrom_series_new(1, n, 0.1, d.as_ptr(), dd.as_ptr(), &mut series), WromStatus::Ok);
        let mut rom = ptr::null_mut();
        assert_eq!(wrom_rom_build(series, 1e-12, &mut rom), WromStatus::Ok);
        let mut fit = WromFitReport::default();
        assert_eq!(wrom_rom_fit(rom, series, &mut fit), WromStatus::Ok);
        assert!(fit.propagated < 1e-10);
        wrom_rom_free(rom);
        wrom_series_free(series);
    }
}

#[test]
fn errors_are_reported_with_codes_and_messages() {
    unsafe {
        let mut config = ptr::null_mut();
        let bad = CString::new("nosuch").unwrap();
        assert_eq!(wrom_config_preset(bad.as_ptr(), &mut config), WromStatus::InvalidInput);
        assert!(last_error().contains("nosuch"));
        assert!(config.is_null());
        assert_eq!(wrom_config_preset(ptr::null(), &mut config), WromStatus::NullPointer);
        let good = CString::new("camembert").unwrap();
        assert_eq!(wrom_config_preset(good.as_ptr(), &mut config), WromStatus::Ok);
        assert_eq!(last_error(), "");
        let assignment = CString::new("nosuch.key=1").unwrap();
        assert_eq!(wrom_config_set(config, assignment.as_ptr()), WromStatus::InvalidInput);
        wrom_config_free(config);
        wrom_config_free(ptr::null_mut());
        let speed = [1500.0, -1.0, 1500.0, 1500.0];
        let mut medium = ptr::null_mut();
        assert_eq!(wrom_medium_new(2, 2, 10.0, 1500.0, speed.as_ptr(), &mut medium), WromStatus::InvalidInput);
        let zeros = [0.0; 4];
        let mut series = ptr::null_mut();
        assert_eq!(wrom_series_new(1, 2, 0.1, zeros.as_ptr(), zeros.as_ptr(), &mut series), WromStatus::Ok);
        let mut rom = ptr::null_mut();
        assert_eq!(wrom_rom_build(series, 1e-9, &mut rom), WromStatus::Factorization);
        wrom_series_free(series);
    }
    let version = unsafe { CStr::from_ptr(wrom_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_interface_and_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/wrom.h")).unwrap();
    for name in [
        "wrom_last_error", "wrom_config_preset", "wrom_medium_speed", "wrom_series_simulate",
        "wrom_rom_build", "wrom_rom_fit", "typedef struct WromRom WromRom", "WROM_STATUS_FACTORIZATION",
    ] {
        assert!(header.contains(name), "{name}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let source = tmp.path().join("probe.c");
    std::fs::write(
        &source,
        "#include \"wrom.h\"\nint main(void) { WromConfig *c = NULL; return wrom_config_preset(\"camembert\", &c) == WROM_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let status = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&source)
        .status()
    {
        Ok(s) => s,
        Err(_) => return,
    };
    assert!(status.success());
}
