//! Saturating uniform quantizer and the signed-integer residue convention.
//!
//! The quantizer floors with the strict convention `⌊y⌋ = max{k : k < y}`,
//! so `quantize(0.5)` at `Δ = 1` is 0, not 1.
//!
//! Residues mod N are read as signed: below N/3 positive, above 2N/3
//! negative, the middle third flags an overflow.

use nalgebra::DMatrix;
use num_bigint::{BigInt, BigUint, Sign};
use num_traits::Signed;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodingError {
    #[error("EncodeOutOfBand: |{value}| is not below N/3")]
    EncodeOutOfBand { value: BigInt },
    #[error("OverflowDetected: decoded magnitude |{value}| reaches N/3")]
    OverflowDetected { value: BigInt },
    #[error("ResidueOutOfRange: residue must lie in [0, N)")]
    ResidueOutOfRange,
    #[error("InvalidQuantizer: {0}")]
    InvalidQuantizer(String),
}

pub type Result<T> = std::result::Result<T, EncodingError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    delta: f64,
    q_sat: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizedValue {
    pub level: i64,
    pub spec: QuantizerSpec,
}

impl QuantizedValue {
    /// `x̄ = level · Δ`
    pub fn reconstruct(&self) -> f64 {
        self.level as f64 * self.spec.delta
    }
}

/// `max{k ∈ Z : k < y}`
pub fn strict_floor(y: f64) -> f64 {
    y.ceil() - 1.0
}

impl QuantizerSpec {
    pub fn new(delta: f64, q_sat: i64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(EncodingError::InvalidQuantizer(format!("delta = {delta}")));
        }
        if q_sat < 1 {
            return Err(EncodingError::InvalidQuantizer(format!("q_sat = {q_sat}")));
        }
        Ok(Self { delta, q_sat })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn q_sat(&self) -> i64 {
        self.q_sat
    }

    /// Edge of the non-saturated band, `(q_sat + 1/2)Δ`.
    pub fn saturation_edge(&self) -> f64 {
        (self.q_sat as f64 + 0.5) * self.delta
    }

    pub fn level(&self, x: f64) -> i64 {
        let edge = self.saturation_edge();
        if x > edge {
            self.q_sat
        } else if x <= -edge {
            -self.q_sat
        } else {
            let k = strict_floor(x / self.delta + 0.5) as i64;
            k.clamp(-self.q_sat, self.q_sat)
        }
    }

    pub fn quantize(&self, x: f64) -> QuantizedValue {
        QuantizedValue {
            level: self.level(x),
            spec: *self,
        }
    }

    pub fn quantize_vector(&self, v: &[f64]) -> Vec<i64> {
        v.iter().map(|&x| self.level(x)).collect()
    }

    pub fn quantize_matrix(&self, m: &DMatrix<f64>) -> DMatrix<i64> {
        m.map(|x| self.level(x))
    }

    /// True when `x` quantizes to `±q_sat`.
    pub fn saturates(&self, x: f64) -> bool {
        self.level(x).abs() >= self.q_sat
    }
}

/// Residue in `[0, N)` carrying a signed integer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedResidue {
    residue: BigUint,
    modulus: BigUint,
}

impl SignedResidue {
    pub fn residue(&self) -> &BigUint {
        &self.residue
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn into_residue(self) -> BigUint {
        self.residue
    }
}

fn in_band(n: &BigUint, z: &BigInt) -> bool {
    // |z| < N/3  <=>  3|z| < N
    z.magnitude() * 3u32 < *n
}

pub fn encode_signed(n: &BigUint, z: &BigInt) -> Result<SignedResidue> {
    if !in_band(n, z) {
        return Err(EncodingError::EncodeOutOfBand { value: z.clone() });
    }
    let residue = if z.is_negative() {
        n - z.magnitude()
    } else {
        z.magnitude().clone()
    };
    Ok(SignedResidue {
        residue,
        modulus: n.clone(),
    })
}

pub fn decode_signed(n: &BigUint, residue: &BigUint) -> Result<BigInt> {
    if residue >= n {
        return Err(EncodingError::ResidueOutOfRange);
    }
    let z = if residue * 2u32 > *n {
        -BigInt::from_biguint(Sign::Plus, n - residue)
    } else {
        BigInt::from_biguint(Sign::Plus, residue.clone())
    };
    if !in_band(n, &z) {
        return Err(EncodingError::OverflowDetected { value: z });
    }
    Ok(z)
}

/// Convenience for small signed levels.
pub fn encode_level(n: &BigUint, level: i64) -> Result<BigUint> {
    encode_signed(n, &BigInt::from(level)).map(SignedResidue::into_residue)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(delta: f64, q: i64) -> QuantizerSpec {
        QuantizerSpec::new(delta, q).unwrap()
    }

    #[test]
    fn quantize_examples() {
        let s = spec(0.5, 10);
        assert_eq!(s.level(1.3), 3);
        assert_eq!(s.level(-5.3), -10);
        assert_eq!(s.level(0.0), 0);
        assert_eq!(s.quantize(1.3).reconstruct(), 1.5);
    }

    #[test]
    fn strict_floor_at_half_integers() {
        let s = spec(1.0, 10);
        assert_eq!(s.level(0.5), 0);
        assert_eq!(s.level(1.5), 1);
        assert_eq!(s.level(-0.5), -1);
        assert_eq!(s.level(2.0), 2);
        assert_eq!(strict_floor(3.0), 2.0);
        assert_eq!(strict_floor(2.9), 2.0);
        assert_eq!(strict_floor(-0.0), -1.0);
    }

    #[test]
    fn saturation_boundaries() {
        let s = spec(1.0, 3);
        // exactly on the upper edge stays in the middle branch
        assert_eq!(s.level(3.5), 3);
        assert_eq!(s.level(3.5000001), 3);
        assert_eq!(s.level(1e300), 3);
        assert_eq!(s.level(-3.5), -3);
        assert_eq!(s.level(-3.4999), -3);
        assert_eq!(s.level(f64::MIN), -3);
        assert!(s.saturates(2.6));
        assert!(!s.saturates(2.5));
    }

    #[test]
    fn invalid_specs() {
        assert!(QuantizerSpec::new(0.0, 1).is_err());
        assert!(QuantizerSpec::new(f64::NAN, 1).is_err());
        assert!(QuantizerSpec::new(1.0, 0).is_err());
    }

    #[test]
    fn vector_and_matrix() {
        let s = spec(0.25, 100);
        assert_eq!(s.quantize_vector(&[0.0, 0.0]), vec![0, 0]);
        let m = DMatrix::from_row_slice(2, 2, &[0.3, -0.3, 1.0, 2.6]);
        assert_eq!(s.quantize_matrix(&m), DMatrix::from_row_slice(2, 2, &[1, -1, 4, 10]));
    }

    #[test]
    fn signed_residue_examples() {
        let n = BigUint::from(35u32);
        assert_eq!(encode_signed(&n, &BigInt::from(-3)).unwrap().residue(), &BigUint::from(32u32));
        assert_eq!(encode_signed(&n, &BigInt::from(0)).unwrap().residue(), &BigUint::from(0u32));
        assert!(matches!(
            encode_signed(&n, &BigInt::from(12)),
            Err(EncodingError::EncodeOutOfBand { .. })
        ));
        assert!(matches!(
            encode_signed(&n, &BigInt::from(-12)),
            Err(EncodingError::EncodeOutOfBand { .. })
        ));
        assert_eq!(decode_signed(&n, &BigUint::from(32u32)).unwrap(), BigInt::from(-3));
        assert_eq!(decode_signed(&n, &BigUint::from(0u32)).unwrap(), BigInt::from(0));
        assert!(matches!(
            decode_signed(&n, &BigUint::from(13u32)),
            Err(EncodingError::OverflowDetected { .. })
        ));
        assert!(matches!(
            decode_signed(&n, &BigUint::from(23u32)),
            Err(EncodingError::OverflowDetected { .. })
        ));
        assert_eq!(decode_signed(&n, &BigUint::from(24u32)).unwrap(), BigInt::from(-11));
        assert_eq!(decode_signed(&n, &BigUint::from(35u32)), Err(EncodingError::ResidueOutOfRange));
    }

    proptest! {
        #[test]
        fn error_within_half_step(x in -1e3f64..1e3, delta in 1e-3f64..10.0) {
            let s = spec(delta, 1_000_000_000);
            let xbar = s.quantize(x).reconstruct();
            // strict floor: xbar - Δ/2 < x <= xbar + Δ/2, up to rounding of x/Δ
            prop_assert!((x - xbar).abs() <= delta / 2.0 * (1.0 + 1e-9));
        }

        #[test]
        fn monotone(a in -1e4f64..1e4, b in -1e4f64..1e4, delta in 1e-2f64..10.0, q in 1i64..500) {
            let s = spec(delta, q);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.level(lo) <= s.level(hi));
        }

        #[test]
        fn never_exceeds_saturation(x in proptest::num::f64::NORMAL, delta in 1e-6f64..1e6, q in 1i64..10_000) {
            prop_assert!(spec(delta, q).level(x).abs() <= q);
        }

        #[test]
        fn vector_error_norm(v in proptest::collection::vec(-10.0f64..10.0, 1..8), delta in 0.01f64..1.0) {
            let s = spec(delta, 1 << 30);
            let q = s.quantize_vector(&v);
            let err: f64 = v.iter().zip(&q).map(|(x, l)| (x - *l as f64 * delta).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= delta * (v.len() as f64).sqrt() / 2.0 * (1.0 + 1e-9));
        }

        #[test]
        fn matrix_error_frobenius(
            rows in 1usize..5, cols in 1usize..5, seed in proptest::collection::vec(-10.0f64..10.0, 16),
            delta in 0.01f64..1.0,
        ) {
            let m = DMatrix::from_fn(rows, cols, |i, j| seed[i * 4 + j]);
            let s = spec(delta, 1 << 30);
            let q = s.quantize_matrix(&m);
            let err = (m - q.map(|l| l as f64 * delta)).norm();
            prop_assert!(err <= delta * ((rows * cols) as f64).sqrt() / 2.0 * (1.0 + 1e-9));
        }

        #[test]
        fn signed_roundtrip(z in any::<i64>(), extra in 0u64..1000) {
            // N comfortably above 3|z|
            let n = BigUint::from(z.unsigned_abs()) * 3u32 + 1u32 + BigUint::from(extra);
            let z = BigInt::from(z);
            let r = encode_signed(&n, &z).unwrap();
            prop_assert_eq!(decode_signed(&n, r.residue()).unwrap(), z);
        }
    }
}
