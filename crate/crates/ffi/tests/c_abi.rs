use std::ffi::{CStr, CString};
use std::ptr;

use ectl_ffi::*;

fn last_error() -> String {
    let p = ectl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn encrypt(kp: *mut EctlKeyPair, m: i64) -> *mut EctlCiphertext {
    let mut ct = ptr::null_mut();
    assert_eq!(unsafe { ectl_encrypt_i64(kp, m, &mut ct) }, EctlStatus::Ok);
    ct
}

fn decrypt(kp: *const EctlKeyPair, ct: *const EctlCiphertext) -> i64 {
    let mut v = 0;
    assert_eq!(unsafe { ectl_decrypt_i64(kp, ct, &mut v) }, EctlStatus::Ok);
    v
}

#[test]
fn homomorphic_round_trip() {
    let mut kp = ptr::null_mut();
    unsafe {
        assert_eq!(ectl_keygen(256, 5, &mut kp), EctlStatus::Ok);
        assert!((255..=256).contains(&ectl_keypair_bits(kp)));
        let a = encrypt(kp, -1234);
        let b = encrypt(kp, 5678);
        assert_eq!(decrypt(kp, a), -1234);
        let mut sum = ptr::null_mut();
        assert_eq!(ectl_add(kp, a, b, &mut sum), EctlStatus::Ok);
        assert_eq!(decrypt(kp, sum), 4444);
        let mut prod = ptr::null_mut();
        assert_eq!(ectl_scalar_mult(kp, sum, -3, &mut prod), EctlStatus::Ok);
        assert_eq!(decrypt(kp, prod), -13332);
        for ct in [a, b, sum, prod] {
            ectl_ciphertext_free(ct);
        }
        ectl_keypair_free(kp);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut kp = ptr::null_mut();
        assert_eq!(ectl_keygen(128, 1, ptr::null_mut()), EctlStatus::NullPointer);
        assert!(last_error().contains("null"));
        assert_eq!(ectl_keypair_from_primes(7, 7, 0, &mut kp), EctlStatus::InvalidArgument);
        assert!(last_error().starts_with("InvalidPrimes"));
        assert_eq!(ectl_keypair_from_primes(1009, 1013, 0, &mut kp), EctlStatus::Ok);
        // N = 1022117, N/3 ≈ 340705: 300000 encodes, its double decodes as overflow, 400000 is out of band
        let ct = encrypt(kp, 300000);
        let mut doubled = ptr::null_mut();
        assert_eq!(ectl_add(kp, ct, ct, &mut doubled), EctlStatus::Ok);
        let mut v = 0;
        assert_eq!(ectl_decrypt_i64(kp, doubled, &mut v), EctlStatus::Overflow);
        assert!(last_error().starts_with("OverflowDetected"));
        let mut out = ptr::null_mut();
        assert_eq!(ectl_encrypt_i64(kp, 400000, &mut out), EctlStatus::Overflow);
        assert_eq!(ectl_decrypt_i64(ptr::null(), ct, &mut v), EctlStatus::NullPointer);
        ectl_ciphertext_free(ct);
        ectl_ciphertext_free(doubled);
        ectl_keypair_free(kp);
        ectl_keypair_free(ptr::null_mut());
        ectl_ciphertext_free(ptr::null_mut());
    }
}

#[test]
fn run_config_through_abi() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
mode = "linear"
x0 = [3.0]
seed = 4

[linear]
a = [[1.5]]
b = [[1.0]]
k = [[1.0]]

[output]
csv = "out.csv"
"#,
    )
    .unwrap();
    let path = CString::new(cfg.to_str().unwrap()).unwrap();
    let mut summary = EctlRunSummary::default();
    assert_eq!(unsafe { ectl_run_config(path.as_ptr(), &mut summary) }, EctlStatus::Ok);
    assert!(summary.final_norm <= 1e-9 * 3.0);
    assert!(summary.t0 >= 1);
    assert!(dir.path().join("out.csv").exists());

    let missing = CString::new(dir.path().join("nope.toml").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ectl_run_config(missing.as_ptr(), ptr::null_mut()) }, EctlStatus::Config);
    assert!(last_error().starts_with("ConfigIo"));
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(ectl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
