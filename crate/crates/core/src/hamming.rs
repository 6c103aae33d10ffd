//! Bit-packed binary codes and the Hamming/cosine identities.
//!
//! A K-bit code over {-1, +1} is stored LSB-first in little-endian `u64`
//! words: bit `k` lives in word `k / 64` at position `k % 64` and is set iff
//! the sign is +1. Unused high bits of the last word are always zero, which
//! keeps XOR-popcount distances exact and makes the layout portable.

use std::fmt;

use crate::error::{ensure_dim, invalid, Error, Result};
use crate::scalar::Scalar;

/// Number of 64-bit words needed for `bits` bits.
pub const fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// A K-bit hash code.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PackedCode {
    bits: usize,
    words: Vec<u64>,
}

impl fmt::Debug for PackedCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PackedCode({}b:", self.bits)?;
        for k in 0..self.bits {
            f.write_str(if self.bit(k) { "+" } else { "-" })?;
        }
        f.write_str(")")
    }
}

impl PackedCode {
    /// All bits -1.
    pub fn zeros(bits: usize) -> Self {
        Self {
            bits,
            words: vec![0; words_for(bits)],
        }
    }

    /// Wraps raw words, rejecting wrong lengths and stray high bits.
    pub fn from_words(bits: usize, words: Vec<u64>) -> Result<Self> {
        ensure_dim("packed words", words_for(bits), words.len())?;
        if let Some(&last) = words.last() {
            let used = bits % 64;
            if used != 0 && last >> used != 0 {
                return Err(Error::Format(format!(
                    "unused high bits set in last word of a {bits}-bit code"
                )));
            }
        }
        Ok(Self { bits, words })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// True iff bit `k` is +1.
    pub fn bit(&self, k: usize) -> bool {
        debug_assert!(k < self.bits);
        (self.words[k / 64] >> (k % 64)) & 1 == 1
    }

    pub fn set_bit(&mut self, k: usize, plus: bool) {
        assert!(k < self.bits, "bit {k} out of range for {} bits", self.bits);
        let mask = 1u64 << (k % 64);
        if plus {
            self.words[k / 64] |= mask;
        } else {
            self.words[k / 64] &= !mask;
        }
    }

    /// Flips every bit (the code `-b`).
    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        let used = self.bits % 64;
        if used != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << used) - 1;
            }
        }
        Self { bits: self.bits, words }
    }

    /// Number of +1 entries.
    pub fn count_plus(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    /// The ±1 vector this code represents.
    pub fn signs(&self) -> Vec<i8> {
        (0..self.bits).map(|k| if self.bit(k) { 1 } else { -1 }).collect()
    }

    /// `<s, v>` where `s` is this code's sign vector.
    pub fn signed_dot<T: Scalar>(&self, v: &[T]) -> T {
        v.iter()
            .enumerate()
            .fold(T::zero(), |acc, (k, &x)| if self.bit(k) { acc + x } else { acc - x })
    }
}

/// Packs a ±1 vector.
pub fn pack_code(signs: &[i8]) -> Result<PackedCode> {
    let mut code = PackedCode::zeros(signs.len());
    for (k, &s) in signs.iter().enumerate() {
        match s {
            1 => code.words[k / 64] |= 1u64 << (k % 64),
            -1 => {}
            other => {
                return Err(Error::NotASign {
                    index: k,
                    value: i64::from(other),
                })
            }
        }
    }
    Ok(code)
}

/// Element-wise sign with ties going to +1.
pub fn sign_binarize<T: Scalar>(v: &[T]) -> Result<Vec<i8>> {
    v.iter()
        .enumerate()
        .map(|(k, &x)| {
            if !x.is_finite() {
                Err(Error::NonFinite(k))
            } else if x >= T::zero() {
                Ok(1)
            } else {
                Ok(-1)
            }
        })
        .collect()
}

/// `pack_code(sign_binarize(v))` without the intermediate vector.
pub fn binarize_and_pack<T: Scalar>(v: &[T]) -> Result<PackedCode> {
    let mut code = PackedCode::zeros(v.len());
    for (k, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite(k));
        }
        if x >= T::zero() {
            code.words[k / 64] |= 1u64 << (k % 64);
        }
    }
    Ok(code)
}

/// XOR-popcount over raw word slices of equal length.
#[inline]
pub fn word_distance(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| u64::from((x ^ y).count_ones())).sum()
}

/// Hamming distance between two codes of the same width.
pub fn hamming_distance(a: &PackedCode, b: &PackedCode) -> Result<u64> {
    ensure_dim("code bits", a.bits, b.bits)?;
    Ok(word_distance(&a.words, &b.words))
}

/// Cosine of the angle between two sign vectors at Hamming distance `d`: `1 - 2d/K`.
pub fn cosine_from_hamming<T: Scalar>(d: u64, bits: usize) -> Result<T> {
    if bits == 0 {
        return Err(invalid("bits must be positive"));
    }
    if d > bits as u64 {
        return Err(invalid(format!("distance {d} exceeds {bits} bits")));
    }
    Ok(T::one() - T::lit(2.0 * d as f64 / bits as f64))
}

/// Angle in degrees between a continuous code and the sign vector of `b`.
pub fn quantization_angle<T: Scalar>(v: &[T], b: &PackedCode) -> Result<T> {
    ensure_dim("continuous code length", b.bits, v.len())?;
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite(0));
    }
    if norm == T::zero() {
        return Err(Error::ZeroNorm(0));
    }
    let cos = b.signed_dot(v) / (norm * T::from_count(b.bits).sqrt());
    Ok(cos.max(-T::one()).min(T::one()).acos().to_degrees())
}

/// Probability that a random hyperplane leaves two vectors at angle `theta`
/// (radians) on the same side: `1 - theta/pi`.
pub fn collision_probability<T: Scalar>(theta: T) -> Result<T> {
    let pi = T::lit(std::f64::consts::PI);
    if !(theta >= T::zero() && theta <= pi) {
        return Err(invalid(format!("theta {theta} outside [0, pi]")));
    }
    Ok(T::one() - theta / pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dot(a: &[i8], b: &[i8]) -> i64 {
        a.iter().zip(b).map(|(&x, &y)| i64::from(x) * i64::from(y)).sum()
    }

    #[test]
    fn pack_bit_order() {
        let c = pack_code(&[1, 1, -1, 1]).unwrap();
        assert_eq!(c.words(), &[0b1011]);
        assert_eq!(pack_code(&[-1; 64]).unwrap().words(), &[0]);
        let c = pack_code(&[1; 70]).unwrap();
        assert_eq!(c.words(), &[u64::MAX, 0b111111]);
    }

    #[test]
    fn pack_rejects_non_sign() {
        assert!(matches!(
            pack_code(&[1, 0, -1]),
            Err(Error::NotASign { index: 1, value: 0 })
        ));
    }

    #[test]
    fn from_words_rejects_high_bits() {
        assert!(PackedCode::from_words(4, vec![0b1_0000]).is_err());
        assert!(PackedCode::from_words(4, vec![0b1111]).is_ok());
        assert!(PackedCode::from_words(64, vec![u64::MAX]).is_ok());
        assert!(PackedCode::from_words(65, vec![0]).is_err());
    }

    #[test]
    fn sign_tie_goes_positive() {
        assert_eq!(sign_binarize(&[0.3, -0.2, 0.0]).unwrap(), vec![1, -1, 1]);
        assert_eq!(sign_binarize(&[-0.0f64]).unwrap(), vec![1]);
        assert_eq!(sign_binarize(&[1.0f32, 2.0, 3.0]).unwrap(), vec![1, 1, 1]);
        assert!(matches!(sign_binarize(&[1.0, f64::NAN]), Err(Error::NonFinite(1))));
    }

    #[test]
    fn distance_examples() {
        let a = pack_code(&[1, 1, 1, 1]).unwrap();
        let b = pack_code(&[-1, -1, 1, 1]).unwrap();
        assert_eq!(hamming_distance(&a, &b).unwrap(), 2);
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);

        let signs: Vec<i8> = (0..64).map(|k| if k % 3 == 0 { 1 } else { -1 }).collect();
        let c = pack_code(&signs).unwrap();
        assert_eq!(hamming_distance(&c, &c.complement()).unwrap(), 64);

        let short = PackedCode::zeros(3);
        assert!(hamming_distance(&a, &short).is_err());
    }

    #[test]
    fn complement_keeps_high_bits_clear() {
        let c = PackedCode::zeros(70).complement();
        assert_eq!(c.words(), &[u64::MAX, 0b111111]);
        assert_eq!(c.count_plus(), 70);
    }

    #[test]
    fn cosine_from_hamming_endpoints() {
        assert_eq!(cosine_from_hamming::<f64>(0, 64).unwrap(), 1.0);
        assert_eq!(cosine_from_hamming::<f64>(64, 64).unwrap(), -1.0);
        assert_eq!(cosine_from_hamming::<f64>(32, 64).unwrap(), 0.0);
        assert!(cosine_from_hamming::<f64>(65, 64).is_err());
    }

    #[test]
    fn quantization_angle_cases() {
        let b = pack_code(&[1, -1, 1, -1]).unwrap();
        let v = [2.5f64, -2.5, 2.5, -2.5];
        assert!(quantization_angle(&v, &b).unwrap().abs() < 1e-12);
        let neg = [-1.0f64, 1.0, -1.0, 1.0];
        assert!((quantization_angle(&neg, &b).unwrap() - 180.0).abs() < 1e-12);
        let orth = [1.0f64, 1.0, 1.0, 1.0];
        assert!((quantization_angle(&orth, &b).unwrap() - 90.0).abs() < 1e-12);
        assert!(matches!(quantization_angle(&[0.0; 4], &b), Err(Error::ZeroNorm(_))));
        assert!(quantization_angle(&[1.0; 3], &b).is_err());
    }

    #[test]
    fn collision_probability_cases() {
        use std::f64::consts::PI;
        assert_eq!(collision_probability(0.0).unwrap(), 1.0);
        assert_eq!(collision_probability(PI).unwrap(), 0.0);
        assert!((collision_probability(PI / 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(collision_probability(-0.1).is_err());
        assert!(collision_probability(4.0).is_err());
        assert!(collision_probability(f64::NAN).is_err());
    }

    fn signs_strategy(k: usize) -> impl Strategy<Value = Vec<i8>> {
        proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], k)
    }

    proptest! {
        #[test]
        fn pack_roundtrip(s in (1usize..200).prop_flat_map(signs_strategy)) {
            let c = pack_code(&s).unwrap();
            prop_assert_eq!(c.signs(), s.clone());
            prop_assert!(c.count_plus() <= s.len() as u64);
            prop_assert_eq!(PackedCode::from_words(c.bits(), c.words().to_vec()).unwrap(), c);
        }

        #[test]
        fn distance_matches_dot_identity(
            (a, b, c) in (1usize..150).prop_flat_map(|k| (signs_strategy(k), signs_strategy(k), signs_strategy(k)))
        ) {
            let k = a.len() as i64;
            let (pa, pb, pc) = (pack_code(&a).unwrap(), pack_code(&b).unwrap(), pack_code(&c).unwrap());
            let dab = hamming_distance(&pa, &pb).unwrap();
            prop_assert_eq!(dab as i64, (k - dot(&a, &b)) / 2);
            prop_assert_eq!(dab, hamming_distance(&pb, &pa).unwrap());
            let dac = hamming_distance(&pa, &pc).unwrap();
            let dbc = hamming_distance(&pb, &pc).unwrap();
            prop_assert!(dac <= dab + dbc);
            let cos: f64 = cosine_from_hamming(dab, a.len()).unwrap();
            prop_assert!((cos - dot(&a, &b) as f64 / k as f64).abs() <= 1e-12);
        }
    }
}
