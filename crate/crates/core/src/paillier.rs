//! Paillier cryptosystem over arbitrary-precision integers.
//!
//! Keys use the generator `g = N + 1`. Encryption takes `m` in `[0, N)` and a
//! fresh nonce `r` from `Z*_N`; decryption uses the `mu` precomputed at key
//! generation. Homomorphic operations work directly on [`Ciphertext`] values.
//!
//! Multiplicative blinding ([`BlindingKey`]) is independent of the nonces used
//! inside encryption: it hides an integer by an exact product with a secret
//! `r` and is undone by exact division.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Miller-Rabin rounds used for every primality decision.
pub const MILLER_RABIN_ROUNDS: usize = 40;

/// Candidate draws allowed per prime before keygen gives up.
const PRIME_ATTEMPTS: usize = 20_000;

/// (p, q) pairs tried before keygen gives up.
const PAIR_ATTEMPTS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PaillierError {
    #[error("PrimeSearchExhausted: no valid prime pair of {bits} bits found")]
    PrimeSearchExhausted { bits: u64 },
    #[error("InvalidPrimes: {0}")]
    InvalidPrimes(String),
    #[error("InvalidKey: {0}")]
    InvalidKey(String),
    #[error("MessageOutOfRange: plaintext must lie in [0, N)")]
    MessageOutOfRange,
    #[error("CiphertextOutOfRange: ciphertext must lie in [0, N^2)")]
    CiphertextOutOfRange,
    #[error("ScalarOutOfRange: scalar must lie in [0, N)")]
    ScalarOutOfRange,
    #[error("LengthMismatch: {left} scalars vs {right} ciphertexts")]
    LengthMismatch { left: usize, right: usize },
    #[error("NotDivisible: blinded value is not a multiple of the blinding factor")]
    NotDivisible,
    #[error("InvalidBlinding: {0}")]
    InvalidBlinding(String),
}

pub type Result<T> = std::result::Result<T, PaillierError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    g: BigUint,
    n_squared: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivateKey {
    lambda: BigUint,
    mu: BigUint,
    public: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    value: BigUint,
}

/// Secret factor for multiplicative blinding, `1 <= r < r_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlindingKey {
    r: BigUint,
    r_max: BigUint,
}

fn l_function(x: &BigUint, n: &BigUint) -> BigUint {
    (x - 1u32) / n
}

impl PublicKey {
    /// Builds a key with the standard generator `g = N + 1`.
    pub fn from_modulus(n: BigUint) -> Result<Self> {
        let g = &n + 1u32;
        Self::from_parts(n, g)
    }

    pub fn from_parts(n: BigUint, g: BigUint) -> Result<Self> {
        if n < BigUint::from(15u32) {
            return Err(PaillierError::InvalidKey(format!("modulus {n} below 15")));
        }
        let n_squared = &n * &n;
        if g.is_zero() || g >= n_squared || !g.gcd(&n_squared).is_one() {
            return Err(PaillierError::InvalidKey("g must be a unit mod N^2".into()));
        }
        Ok(Self { n, g, n_squared })
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    /// Bit length of the modulus.
    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    fn g_pow(&self, m: &BigUint) -> BigUint {
        if self.g == &self.n + 1u32 {
            // (1 + N)^m = 1 + mN (mod N^2)
            (BigUint::one() + m * &self.n) % &self.n_squared
        } else {
            self.g.modpow(m, &self.n_squared)
        }
    }

    /// Encrypts with an explicit nonce; `r` must be a unit mod N.
    pub fn encrypt_with_nonce(&self, m: &BigUint, r: &BigUint) -> Result<Ciphertext> {
        if m >= &self.n {
            return Err(PaillierError::MessageOutOfRange);
        }
        if r.is_zero() || r >= &self.n || !r.gcd(&self.n).is_one() {
            return Err(PaillierError::InvalidKey("nonce must lie in Z*_N".into()));
        }
        let rn = r.modpow(&self.n, &self.n_squared);
        let value = (self.g_pow(m) * rn) % &self.n_squared;
        Ok(Ciphertext { value })
    }

    pub fn encrypt<R: RngCore + ?Sized>(&self, m: &BigUint, rng: &mut R) -> Result<Ciphertext> {
        if m >= &self.n {
            return Err(PaillierError::MessageOutOfRange);
        }
        let r = loop {
            let candidate = random_below(rng, &self.n);
            if !candidate.is_zero() && candidate.gcd(&self.n).is_one() {
                break candidate;
            }
        };
        self.encrypt_with_nonce(m, &r)
    }

    fn check(&self, c: &Ciphertext) -> Result<()> {
        if c.value >= self.n_squared {
            Err(PaillierError::CiphertextOutOfRange)
        } else {
            Ok(())
        }
    }

    /// Homomorphic addition: decrypts to `(m1 + m2) mod N`.
    pub fn add(&self, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext> {
        self.check(c1)?;
        self.check(c2)?;
        Ok(Ciphertext {
            value: (&c1.value * &c2.value) % &self.n_squared,
        })
    }

    /// Plaintext-scalar multiplication: decrypts to `a * m mod N`.
    pub fn scalar_mult(&self, a: &BigUint, c: &Ciphertext) -> Result<Ciphertext> {
        if a >= &self.n {
            return Err(PaillierError::ScalarOutOfRange);
        }
        self.check(c)?;
        Ok(Ciphertext {
            value: c.value.modpow(a, &self.n_squared),
        })
    }

    /// `⊕_i a_i ⊗ c_i`, decrypting to `Σ a_i m_i mod N`.
    pub fn linear_combination(&self, scalars: &[BigUint], cts: &[Ciphertext]) -> Result<Ciphertext> {
        if scalars.len() != cts.len() || scalars.is_empty() {
            return Err(PaillierError::LengthMismatch {
                left: scalars.len(),
                right: cts.len(),
            });
        }
        let mut acc = self.scalar_mult(&scalars[0], &cts[0])?;
        for (a, c) in scalars.iter().zip(cts).skip(1) {
            let term = self.scalar_mult(a, c)?;
            acc = self.add(&acc, &term)?;
        }
        Ok(acc)
    }

    /// Reduces a signed integer into `[0, N)`.
    pub fn reduce_signed(&self, a: &BigInt) -> BigUint {
        let n = BigInt::from_biguint(Sign::Plus, self.n.clone());
        a.mod_floor(&n).to_biguint().expect("mod_floor is nonnegative")
    }
}

impl PrivateKey {
    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }

    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint> {
        let pk = &self.public;
        pk.check(c)?;
        let u = c.value.modpow(&self.lambda, &pk.n_squared);
        Ok((l_function(&u, &pk.n) * &self.mu) % &pk.n)
    }

    /// Rebuilds a key from its stored fields, validating `mu` against `lambda`.
    pub fn from_parts(n: BigUint, g: BigUint, lambda: BigUint, mu: BigUint) -> Result<Self> {
        let public = PublicKey::from_parts(n, g)?;
        let expected = compute_mu(&public, &lambda)?;
        if expected != mu {
            return Err(PaillierError::InvalidKey("mu does not match lambda".into()));
        }
        Ok(Self { lambda, mu, public })
    }

    pub fn to_document(&self) -> KeyDocument {
        KeyDocument {
            n: self.public.n.to_str_radix(10),
            g: self.public.g.to_str_radix(10),
            lambda: self.lambda.to_str_radix(10),
            mu: self.mu.to_str_radix(10),
        }
    }

    pub fn from_document(doc: &KeyDocument) -> Result<Self> {
        let parse = |field: &str, s: &str| {
            BigUint::parse_bytes(s.as_bytes(), 10)
                .ok_or_else(|| PaillierError::InvalidKey(format!("field {field} is not a decimal integer")))
        };
        Self::from_parts(
            parse("n", &doc.n)?,
            parse("g", &doc.g)?,
            parse("lambda", &doc.lambda)?,
            parse("mu", &doc.mu)?,
        )
    }
}

/// Key pair as a text document with decimal fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyDocument {
    pub n: String,
    pub g: String,
    pub lambda: String,
    pub mu: String,
}

impl Ciphertext {
    pub fn from_value(pk: &PublicKey, value: BigUint) -> Result<Self> {
        if value >= pk.n_squared {
            return Err(PaillierError::CiphertextOutOfRange);
        }
        Ok(Self { value })
    }

    /// Wraps a raw value without a range check; operations re-check against the key.
    pub fn from_raw(value: BigUint) -> Self {
        Self { value }
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    /// Unsigned big-endian bytes of minimal length (empty for zero).
    pub fn to_bytes(&self) -> Vec<u8> {
        minimal_be_bytes(&self.value)
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self {
            value: BigUint::from_bytes_be(bytes),
        }
    }
}

pub(crate) fn minimal_be_bytes(v: &BigUint) -> Vec<u8> {
    if v.is_zero() {
        Vec::new()
    } else {
        v.to_bytes_be()
    }
}

fn compute_mu(pk: &PublicKey, lambda: &BigUint) -> Result<BigUint> {
    let u = pk.g.modpow(lambda, &pk.n_squared);
    let l = l_function(&u, &pk.n);
    l.modinv(&pk.n)
        .ok_or_else(|| PaillierError::InvalidKey("L(g^lambda) is not invertible mod N".into()))
}

/// Builds a key pair from explicit primes.
pub fn keypair_from_primes(p: &BigUint, q: &BigUint) -> Result<(PublicKey, PrivateKey)> {
    if p == q {
        return Err(PaillierError::InvalidPrimes("p and q must be distinct".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    for (name, v) in [("p", p), ("q", q)] {
        if !is_probable_prime(v, MILLER_RABIN_ROUNDS, &mut rng) {
            return Err(PaillierError::InvalidPrimes(format!("{name} = {v} is not prime")));
        }
    }
    let n = p * q;
    let p1 = p - 1u32;
    let q1 = q - 1u32;
    if !n.gcd(&(&p1 * &q1)).is_one() {
        return Err(PaillierError::InvalidPrimes("gcd(pq, (p-1)(q-1)) != 1".into()));
    }
    let public = PublicKey::from_modulus(n)?;
    let lambda = p1.lcm(&q1);
    let mu = compute_mu(&public, &lambda)?;
    Ok((
        public.clone(),
        PrivateKey {
            lambda,
            mu,
            public,
        },
    ))
}

/// Deterministic key generation: the same `(bit_length, seed)` always yields the same keys.
pub fn keygen(bit_length: u64, seed: u64) -> Result<(PublicKey, PrivateKey)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    keygen_with_rng(bit_length, &mut rng)
}

pub fn keygen_with_rng<R: RngCore + ?Sized>(bit_length: u64, rng: &mut R) -> Result<(PublicKey, PrivateKey)> {
    let exhausted = PaillierError::PrimeSearchExhausted { bits: bit_length };
    if bit_length < 4 {
        return Err(exhausted);
    }
    let half = bit_length / 2;
    for _ in 0..PAIR_ATTEMPTS {
        let Some(p) = random_prime(half, rng) else {
            return Err(exhausted);
        };
        let Some(q) = random_prime(bit_length - half, rng) else {
            return Err(exhausted);
        };
        if p == q {
            continue;
        }
        match keypair_from_primes(&p, &q) {
            Ok(keys) => return Ok(keys),
            Err(PaillierError::InvalidPrimes(_)) | Err(PaillierError::InvalidKey(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(exhausted)
}

/// Smallest modulus `keygen(bit_length, _)` can produce.
pub fn min_modulus_for_bits(bit_length: u64) -> BigUint {
    let half = bit_length / 2;
    let p_min = prime_candidate_floor(half);
    let q_min = prime_candidate_floor(bit_length - half);
    p_min * q_min
}

fn prime_candidate_floor(bits: u64) -> BigUint {
    if bits < 2 {
        return BigUint::zero();
    }
    let mut v = BigUint::one() << (bits - 1);
    if bits >= 3 {
        v |= BigUint::one() << (bits - 2);
    }
    v
}

fn random_prime<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> Option<BigUint> {
    if bits < 2 {
        return None;
    }
    for _ in 0..PRIME_ATTEMPTS {
        let mut candidate = random_bits(rng, bits);
        candidate.set_bit(bits - 1, true);
        if bits >= 3 {
            // top two bits set so that N has exactly p_bits + q_bits bits
            candidate.set_bit(bits - 2, true);
        }
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, MILLER_RABIN_ROUNDS, rng) {
            return Some(candidate);
        }
    }
    None
}

fn random_bits<R: RngCore + ?Sized>(rng: &mut R, bits: u64) -> BigUint {
    let nbytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; nbytes];
    rng.fill_bytes(&mut buf);
    let excess = nbytes as u64 * 8 - bits;
    if excess > 0 {
        buf[0] &= 0xff >> excess;
    }
    BigUint::from_bytes_be(&buf)
}

/// Uniform sample in `[0, bound)` by rejection.
pub fn random_below<R: RngCore + ?Sized>(rng: &mut R, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero(), "empty sampling range");
    let bits = bound.bits();
    loop {
        let v = random_bits(rng, bits);
        if &v < bound {
            return v;
        }
    }
}

const SMALL_PRIMES: [u32; 25] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

/// Miller-Rabin with `rounds` random bases drawn from `rng`.
pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    if let Some(small) = n.to_u32() {
        if small < 2 {
            return false;
        }
        if SMALL_PRIMES.contains(&small) {
            return true;
        }
    }
    for &sp in &SMALL_PRIMES {
        if (n % sp).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_one = n - 1u32;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    // bases in [2, n-2]
    let span = n - 3u32;
    'witness: for _ in 0..rounds {
        let a = random_below(rng, &span) + 2u32;
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

impl BlindingKey {
    pub fn new(r: BigUint, r_max: BigUint) -> Result<Self> {
        if r.is_zero() || r >= r_max {
            return Err(PaillierError::InvalidBlinding(format!(
                "r = {r} outside [1, {r_max})"
            )));
        }
        Ok(Self { r, r_max })
    }

    /// Draws `r` uniformly from `[1, r_max)`.
    pub fn sample<R: RngCore + ?Sized>(r_max: &BigUint, rng: &mut R) -> Result<Self> {
        if r_max <= &BigUint::one() {
            return Err(PaillierError::InvalidBlinding("r_max must exceed 1".into()));
        }
        let r = random_below(rng, &(r_max - 1u32)) + 1u32;
        Self::new(r, r_max.clone())
    }

    pub fn r(&self) -> &BigUint {
        &self.r
    }

    pub fn r_max(&self) -> &BigUint {
        &self.r_max
    }

    pub fn blind(&self, m: &BigInt) -> BigInt {
        m * BigInt::from_biguint(Sign::Plus, self.r.clone())
    }

    pub fn unblind(&self, c: &BigInt) -> Result<BigInt> {
        let r = BigInt::from_biguint(Sign::Plus, self.r.clone());
        let (q, rem) = c.div_rem(&r);
        if !rem.is_zero() {
            return Err(PaillierError::NotDivisible);
        }
        debug_assert_eq!(q.abs() * &r, c.abs());
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (PublicKey, PrivateKey) {
        keypair_from_primes(&BigUint::from(5u32), &BigUint::from(7u32)).unwrap()
    }

    fn big(v: u64) -> BigUint {
        BigUint::from(v)
    }

    #[test]
    fn tiny_key_from_primes() {
        let (pk, sk) = tiny();
        assert_eq!(pk.n(), &big(35));
        assert_eq!(pk.g(), &big(36));
        assert_eq!(sk.lambda(), &big(12));
        // mu * L(g^lambda mod N^2) = 1 mod N
        let l = l_function(&pk.g().modpow(sk.lambda(), pk.n_squared()), pk.n());
        assert_eq!((l * sk.mu()) % pk.n(), big(1));
    }

    #[test]
    fn rejects_bad_primes() {
        assert!(matches!(
            keypair_from_primes(&big(7), &big(7)),
            Err(PaillierError::InvalidPrimes(_))
        ));
        assert!(matches!(
            keypair_from_primes(&big(9), &big(7)),
            Err(PaillierError::InvalidPrimes(_))
        ));
        // gcd(3*7, 2*6) = 3
        assert!(matches!(
            keypair_from_primes(&big(3), &big(7)),
            Err(PaillierError::InvalidPrimes(_)) | Err(PaillierError::InvalidKey(_))
        ));
    }

    #[test]
    fn roundtrip_tiny() {
        let (pk, sk) = tiny();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for m in 0..35u64 {
            let c = pk.encrypt(&big(m), &mut rng).unwrap();
            assert_eq!(sk.decrypt(&c).unwrap(), big(m));
        }
    }

    #[test]
    fn nonce_one_is_plain_generator_power() {
        let (pk, sk) = tiny();
        for m in [0u64, 1, 9, 34] {
            let direct = pk.g().modpow(&big(m), pk.n_squared());
            let c = pk.encrypt_with_nonce(&big(m), &big(1)).unwrap();
            assert_eq!(c.value(), &direct);
            assert_eq!(sk.decrypt(&Ciphertext::from_raw(direct)).unwrap(), big(m));
        }
    }

    #[test]
    fn probabilistic_encryption() {
        let (pk, sk) = tiny();
        let c1 = pk.encrypt_with_nonce(&big(9), &big(2)).unwrap();
        let c2 = pk.encrypt_with_nonce(&big(9), &big(3)).unwrap();
        assert_ne!(c1, c2);
        assert_eq!(sk.decrypt(&c1).unwrap(), big(9));
        assert_eq!(sk.decrypt(&c2).unwrap(), big(9));
    }

    #[test]
    fn range_errors() {
        let (pk, sk) = tiny();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert_eq!(pk.encrypt(&big(35), &mut rng), Err(PaillierError::MessageOutOfRange));
        assert_eq!(
            sk.decrypt(&Ciphertext::from_raw(big(1225))),
            Err(PaillierError::CiphertextOutOfRange)
        );
        let c = pk.encrypt(&big(1), &mut rng).unwrap();
        assert_eq!(pk.scalar_mult(&big(35), &c), Err(PaillierError::ScalarOutOfRange));
        assert!(matches!(
            pk.linear_combination(&[big(1)], &[]),
            Err(PaillierError::LengthMismatch { .. })
        ));
        assert!(matches!(
            pk.linear_combination(&[], &[]),
            Err(PaillierError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn homomorphic_examples_tiny() {
        let (pk, sk) = tiny();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut e = |m: u64| pk.encrypt(&big(m), &mut rng).unwrap();
        let (c3, c4, c30, c10, c0, c5) = (e(3), e(4), e(30), e(10), e(0), e(5));
        assert_eq!(sk.decrypt(&pk.add(&c3, &c4).unwrap()).unwrap(), big(7));
        assert_eq!(sk.decrypt(&pk.add(&c30, &c10).unwrap()).unwrap(), big(5));
        assert_eq!(sk.decrypt(&pk.add(&c3, &c0).unwrap()).unwrap(), big(3));
        assert_eq!(sk.decrypt(&pk.scalar_mult(&big(5), &c4).unwrap()).unwrap(), big(20));
        assert_eq!(sk.decrypt(&pk.scalar_mult(&big(1), &c4).unwrap()).unwrap(), big(4));
        assert_eq!(sk.decrypt(&pk.scalar_mult(&big(0), &c4).unwrap()).unwrap(), big(0));
        let lc = pk.linear_combination(&[big(2), big(3)], &[c4.clone(), c5.clone()]).unwrap();
        assert_eq!(sk.decrypt(&lc).unwrap(), big(23));
        let single = pk.linear_combination(&[big(6)], &[c4.clone()]).unwrap();
        assert_eq!(single, pk.scalar_mult(&big(6), &c4).unwrap());
        let zero = pk.linear_combination(&[big(0), big(0)], &[c4, c5]).unwrap();
        assert_eq!(sk.decrypt(&zero).unwrap(), big(0));
    }

    #[test]
    fn keygen_is_deterministic_and_valid() {
        let (pk1, sk1) = keygen(512, 1).unwrap();
        let (pk2, sk2) = keygen(512, 1).unwrap();
        assert_eq!(pk1, pk2);
        assert_eq!(sk1, sk2);
        assert_eq!(pk1.bits(), 512);
        assert_eq!(pk1.g(), &(pk1.n() + 1u32));
        assert!(pk1.n() >= &min_modulus_for_bits(512));
        let l = l_function(&pk1.g().modpow(sk1.lambda(), pk1.n_squared()), pk1.n());
        assert!(((l * sk1.mu()) % pk1.n()).is_one());
        let (pk3, _) = keygen(512, 2).unwrap();
        assert_ne!(pk1, pk3);
    }

    #[test]
    fn keygen_tiny_bit_lengths() {
        assert!(matches!(keygen(3, 0), Err(PaillierError::PrimeSearchExhausted { .. })));
        // 2-bit primes cannot form a valid pair
        assert!(matches!(keygen(4, 0), Err(PaillierError::PrimeSearchExhausted { .. })));
        let (pk, _) = keygen(16, 0).unwrap();
        assert_eq!(pk.bits(), 16);
    }

    #[test]
    fn miller_rabin_small_numbers() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let primes: Vec<u32> = (0..2000u32)
            .filter(|&v| is_probable_prime(&BigUint::from(v), 40, &mut rng))
            .collect();
        let sieve: Vec<u32> = (0..2000u32)
            .filter(|&v| v >= 2 && (2..v).take_while(|d| d * d <= v).all(|d| v % d != 0))
            .collect();
        assert_eq!(primes, sieve);
        // Carmichael numbers
        for c in [561u32, 1105, 1729, 2465, 2821, 6601, 8911] {
            assert!(!is_probable_prime(&BigUint::from(c), 40, &mut rng));
        }
    }

    #[test]
    fn key_document_roundtrip() {
        let (_, sk) = keygen(128, 9).unwrap();
        let doc = sk.to_document();
        assert_eq!(PrivateKey::from_document(&doc).unwrap(), sk);
        let mut bad = doc.clone();
        bad.mu = "12".into();
        assert!(PrivateKey::from_document(&bad).is_err());
        bad.mu = "abc".into();
        assert!(PrivateKey::from_document(&bad).is_err());
    }

    #[test]
    fn ciphertext_bytes_are_minimal() {
        let c = Ciphertext::from_raw(big(0x01_02));
        assert_eq!(c.to_bytes(), vec![1, 2]);
        assert_eq!(Ciphertext::from_bytes(&c.to_bytes()), c);
        assert!(Ciphertext::from_raw(big(0)).to_bytes().is_empty());
    }

    #[test]
    fn blinding_examples() {
        let bk = BlindingKey::new(big(3), big(10)).unwrap();
        assert_eq!(bk.blind(&BigInt::from(-4)), BigInt::from(-12));
        assert_eq!(bk.blind(&BigInt::from(0)), BigInt::from(0));
        assert_eq!(bk.unblind(&BigInt::from(24)).unwrap(), BigInt::from(8));
        assert_eq!(bk.unblind(&BigInt::from(-24)).unwrap(), BigInt::from(-8));
        assert_eq!(bk.unblind(&BigInt::from(25)), Err(PaillierError::NotDivisible));
        let id = BlindingKey::new(big(1), big(2)).unwrap();
        assert_eq!(id.unblind(&BigInt::from(-7)).unwrap(), BigInt::from(-7));
        assert!(BlindingKey::new(big(0), big(5)).is_err());
        assert!(BlindingKey::new(big(5), big(5)).is_err());
    }

    #[test]
    fn blinding_sample_in_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let r_max = big(7);
        for _ in 0..200 {
            let bk = BlindingKey::sample(&r_max, &mut rng).unwrap();
            assert!(bk.r() >= &big(1) && bk.r() < &r_max);
        }
        assert!(BlindingKey::sample(&big(1), &mut rng).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn key() -> &'static (PublicKey, PrivateKey) {
            use std::sync::OnceLock;
            static KEY: OnceLock<(PublicKey, PrivateKey)> = OnceLock::new();
            KEY.get_or_init(|| keygen(128, 77).unwrap())
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn roundtrip(m in any::<u64>(), seed in any::<u64>()) {
                let (pk, sk) = key();
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let m = BigUint::from(m);
                prop_assert_eq!(sk.decrypt(&pk.encrypt(&m, &mut rng).unwrap()).unwrap(), m);
            }

            #[test]
            fn linear_combination_law(
                pairs in proptest::collection::vec((any::<u64>(), any::<u64>()), 1..=16),
                seed in any::<u64>(),
            ) {
                let (pk, sk) = key();
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let scalars: Vec<BigUint> = pairs.iter().map(|p| BigUint::from(p.0)).collect();
                let cts: Vec<Ciphertext> = pairs
                    .iter()
                    .map(|p| pk.encrypt(&BigUint::from(p.1), &mut rng).unwrap())
                    .collect();
                let expected = pairs
                    .iter()
                    .fold(BigUint::zero(), |acc, p| acc + BigUint::from(p.0) * BigUint::from(p.1))
                    % pk.n();
                let got = sk.decrypt(&pk.linear_combination(&scalars, &cts).unwrap()).unwrap();
                prop_assert_eq!(got, expected);
            }

            #[test]
            fn blind_unblind_inverse(m in any::<i64>(), r in 1u64..1_000_000) {
                let bk = BlindingKey::new(BigUint::from(r), BigUint::from(1_000_000u64)).unwrap();
                let m = BigInt::from(m);
                prop_assert_eq!(bk.unblind(&bk.blind(&m)).unwrap(), m);
            }
        }
    }
}
