//! C ABI over `ectl`.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free`. Every fallible call returns an [`EctlStatus`] and
//! records a message retrievable with [`ectl_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ectl::encoding::{decode_signed, encode_signed, EncodingError};
use ectl::paillier::{keygen, keypair_from_primes, Ciphertext, PaillierError, PrivateKey};
use num_bigint::{BigInt, BigUint};
use num_traits::ToPrimitive;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Result codes. `ECTL_STATUS_OK` is zero; everything else is a failure.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EctlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    PrimeSearchExhausted = 3,
    OutOfRange = 4,
    Overflow = 5,
    Config = 6,
    Simulation = 7,
    Io = 8,
    Panic = 9,
}

/// Key pair plus the encryption randomness stream.
pub struct EctlKeyPair {
    secret: PrivateKey,
    rng: ChaCha20Rng,
}

pub struct EctlCiphertext {
    inner: Ciphertext,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(EctlStatus, String);

impl From<PaillierError> for Failure {
    fn from(e: PaillierError) -> Self {
        let status = match e {
            PaillierError::PrimeSearchExhausted { .. } => EctlStatus::PrimeSearchExhausted,
            PaillierError::MessageOutOfRange | PaillierError::CiphertextOutOfRange | PaillierError::ScalarOutOfRange => {
                EctlStatus::OutOfRange
            }
            _ => EctlStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<EncodingError> for Failure {
    fn from(e: EncodingError) -> Self {
        let status = match e {
            EncodingError::OverflowDetected { .. } | EncodingError::EncodeOutOfBand { .. } => EctlStatus::Overflow,
            _ => EctlStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<ectl::Error> for Failure {
    fn from(e: ectl::Error) -> Self {
        let status = match e {
            ectl::Error::Config(_) | ectl::Error::Usage(_) => EctlStatus::Config,
            ectl::Error::Io(_) => EctlStatus::Io,
            _ => EctlStatus::Simulation,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(EctlStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EctlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            EctlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EctlStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn keypair(secret: PrivateKey, seed: u64) -> EctlKeyPair {
    EctlKeyPair {
        secret,
        rng: ChaCha20Rng::seed_from_u64(seed),
    }
}

/// Generates a key pair of `bits` bits, reproducible from `seed`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ectl_keygen(bits: u64, seed: u64, out: *mut *mut EctlKeyPair) -> EctlStatus {
    guard(|| {
        let (_, sk) = keygen(bits, seed)?;
        emit(out, keypair(sk, seed))
    })
}

/// Key pair from explicit primes (small keys for experiments).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ectl_keypair_from_primes(p: u64, q: u64, seed: u64, out: *mut *mut EctlKeyPair) -> EctlStatus {
    guard(|| {
        let (_, sk) = keypair_from_primes(&BigUint::from(p), &BigUint::from(q))?;
        emit(out, keypair(sk, seed))
    })
}

/// Bit length of the modulus N, or 0 for a null handle.
///
/// # Safety
/// `kp` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ectl_keypair_bits(kp: *const EctlKeyPair) -> u64 {
    kp.as_ref().map_or(0, |k| k.secret.public().bits())
}

/// # Safety
/// `kp` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ectl_keypair_free(kp: *mut EctlKeyPair) {
    if !kp.is_null() {
        drop(Box::from_raw(kp));
    }
}

/// Encrypts a signed integer (encoded as a residue mod N, |m| < N/3).
///
/// # Safety
/// `kp` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ectl_encrypt_i64(kp: *mut EctlKeyPair, m: i64, out: *mut *mut EctlCiphertext) -> EctlStatus {
    guard(|| {
        let kp = kp.as_mut().ok_or_else(|| null("keypair"))?;
        let pk = kp.secret.public();
        let residue = encode_signed(pk.n(), &BigInt::from(m))?.into_residue();
        let inner = pk.encrypt(&residue, &mut kp.rng)?;
        emit(out, EctlCiphertext { inner })
    })
}

/// Decrypts and decodes a signed integer.
///
/// # Safety
/// `kp` and `ct` must be live handles; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ectl_decrypt_i64(kp: *const EctlKeyPair, ct: *const EctlCiphertext, out: *mut i64) -> EctlStatus {
    guard(|| {
        let kp = deref(kp, "keypair")?;
        let ct = deref(ct, "ciphertext")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = kp.secret.public().n();
        let z = decode_signed(n, &kp.secret.decrypt(&ct.inner)?)?;
        *out = z
            .to_i64()
            .ok_or_else(|| Failure(EctlStatus::Overflow, format!("plaintext {z} does not fit in 64 bits")))?;
        Ok(())
    })
}

/// Ciphertext of the sum of the two plaintexts.
///
/// # Safety
/// All handles must be live; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ectl_add(
    kp: *const EctlKeyPair,
    a: *const EctlCiphertext,
    b: *const EctlCiphertext,
    out: *mut *mut EctlCiphertext,
) -> EctlStatus {
    guard(|| {
        let kp = deref(kp, "keypair")?;
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        let inner = kp.secret.public().add(&a.inner, &b.inner)?;
        emit(out, EctlCiphertext { inner })
    })
}

/// Ciphertext of `k` times the plaintext; negative `k` is taken mod N.
///
/// # Safety
/// All handles must be live; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ectl_scalar_mult(
    kp: *const EctlKeyPair,
    ct: *const EctlCiphertext,
    k: i64,
    out: *mut *mut EctlCiphertext,
) -> EctlStatus {
    guard(|| {
        let kp = deref(kp, "keypair")?;
        let ct = deref(ct, "ciphertext")?;
        let pk = kp.secret.public();
        let scalar = pk.reduce_signed(&BigInt::from(k));
        let inner = pk.scalar_mult(&scalar, &ct.inner)?;
        emit(out, EctlCiphertext { inner })
    })
}

/// # Safety
/// `ct` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ectl_ciphertext_free(ct: *mut EctlCiphertext) {
    if !ct.is_null() {
        drop(Box::from_raw(ct));
    }
}

/// Summary of a completed run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EctlRunSummary {
    pub steps: u64,
    /// Capture time, or -1 when the run never left zoom-out.
    pub t0: i64,
    pub trigger_count: u64,
    pub final_norm: f64,
    pub key_bits: u64,
}

/// Runs a TOML config file exactly like `ectl run --config PATH`.
///
/// # Safety
/// `config_path` must be a nul-terminated string; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn ectl_run_config(config_path: *const c_char, out: *mut EctlRunSummary) -> EctlStatus {
    guard(|| {
        if config_path.is_null() {
            return Err(null("config_path"));
        }
        let path = CStr::from_ptr(config_path)
            .to_str()
            .map_err(|_| Failure(EctlStatus::InvalidArgument, "config_path is not UTF-8".into()))?;
        let rec = ectl::cli::cmd_run(Path::new(path))?;
        if !out.is_null() {
            *out = EctlRunSummary {
                steps: rec.steps.len() as u64,
                t0: rec.t0.map_or(-1, |t| t as i64),
                trigger_count: rec.trigger_count,
                final_norm: rec.final_norm,
                key_bits: rec.key_bits,
            };
        }
        Ok(())
    })
}

/// Message for the last failure on this thread, or null after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ectl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ectl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
