//! Exact L-bit words and the bit operations both protocols are built from:
//! Hamming weight, circular rotation, XOR, hex serialization and seeded
//! random generation.
//!
//! Bits are indexed MSB-first; a left rotation moves bits toward the MSB.
//! Rotation amounts are reduced mod L, so rotating by L (or by `wt(x)` when
//! `x` is all-ones) is the identity.

use std::fmt;
use std::ops::BitXor;

use rand::RngCore;
use thiserror::Error;

/// Smallest supported word length; small enough for exhaustive oracles.
pub const MIN_BITLEN: u16 = 4;
/// Largest supported word length.
pub const MAX_BITLEN: u16 = 512;

const LIMBS: usize = (MAX_BITLEN as usize) / 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WordError {
    #[error("hex string has {got} digits, expected {expected} for a {bitlen}-bit word")]
    HexLength {
        got: usize,
        expected: usize,
        bitlen: u16,
    },
    #[error("invalid hex digit {0:?}")]
    HexDigit(char),
    #[error("hex value has bits set above bit length {0}")]
    HexOverflow(u16),
}

/// An immutable L-bit string, 4 <= L <= 512. All operands of a binary
/// operation must share the same bit length; mixing lengths is a usage
/// error and panics rather than truncating.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    // Little-endian limbs; bits above `bitlen` are always zero.
    limbs: [u64; LIMBS],
    bitlen: u16,
}

impl Word {
    /// The all-zero word of the given length.
    pub fn zero(bitlen: u16) -> Self {
        assert_bitlen(bitlen);
        Word {
            limbs: [0; LIMBS],
            bitlen,
        }
    }

    /// The all-ones word of the given length.
    pub fn ones(bitlen: u16) -> Self {
        let mut w = Word::zero(bitlen);
        for limb in w.limbs.iter_mut().take(limbs_for(bitlen)) {
            *limb = u64::MAX;
        }
        w.mask_top();
        w
    }

    /// Encodes a non-negative integer into the low bits of an L-bit word.
    /// Panics if the value does not fit, which is a usage error.
    pub fn from_uint(value: u64, bitlen: u16) -> Self {
        assert_bitlen(bitlen);
        assert!(
            bitlen >= 64 || value < (1u64 << bitlen),
            "value {value:#x} does not fit in {bitlen} bits"
        );
        let mut w = Word::zero(bitlen);
        w.limbs[0] = value;
        w
    }

    /// A uniformly random word; deterministic under a seeded generator.
    pub fn random(rng: &mut impl RngCore, bitlen: u16) -> Self {
        let mut w = Word::zero(bitlen);
        for limb in w.limbs.iter_mut().take(limbs_for(bitlen)) {
            *limb = rng.next_u64();
        }
        w.mask_top();
        w
    }

    /// Parses a fixed-width hex string (ceil(L/4) digits, MSB first).
    pub fn from_hex(s: &str, bitlen: u16) -> Result<Self, WordError> {
        assert_bitlen(bitlen);
        let expected = hex_digits(bitlen);
        let got = s.chars().count();
        if got != expected {
            return Err(WordError::HexLength {
                got,
                expected,
                bitlen,
            });
        }
        let mut w = Word::zero(bitlen);
        for (pos, ch) in s.chars().enumerate() {
            let nibble = ch.to_digit(16).ok_or(WordError::HexDigit(ch))? as u64;
            // Digit `pos` covers bits [4*(expected-1-pos), ...+4) from the LSB.
            let shift = 4 * (expected - 1 - pos);
            w.limbs[shift / 64] |= nibble << (shift % 64);
        }
        let masked = {
            let mut m = w;
            m.mask_top();
            m
        };
        if masked.limbs != w.limbs {
            return Err(WordError::HexOverflow(bitlen));
        }
        Ok(w)
    }

    /// Lowercase hex, fixed width ceil(L/4) digits, MSB first.
    pub fn to_hex(&self) -> String {
        let digits = hex_digits(self.bitlen);
        let mut out = String::with_capacity(digits);
        for pos in (0..digits).rev() {
            let shift = 4 * pos;
            let nibble = (self.limbs[shift / 64] >> (shift % 64)) & 0xf;
            out.push(char::from_digit(nibble as u32, 16).unwrap());
        }
        out
    }

    pub fn bitlen(&self) -> u16 {
        self.bitlen
    }

    /// Hamming weight: the number of set bits, in [0, L].
    pub fn wt(&self) -> u32 {
        self.limbs.iter().map(|l| l.count_ones()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.limbs.iter().all(|&l| l == 0)
    }

    /// Circular left rotation by `amount` mod L (toward the MSB).
    pub fn rot_left(self, amount: u32) -> Self {
        let l = self.bitlen as u32;
        let k = amount % l;
        if k == 0 {
            return self;
        }
        let mut out = self.shifted_left(k);
        let low = self.shifted_right(l - k);
        for (o, lo) in out.limbs.iter_mut().zip(low.limbs.iter()) {
            *o |= lo;
        }
        out.mask_top();
        out
    }

    /// Circular right rotation by `amount` mod L; the exact inverse of
    /// `rot_left` with the same amount.
    pub fn rot_right(self, amount: u32) -> Self {
        let l = self.bitlen as u32;
        let k = amount % l;
        if k == 0 {
            return self;
        }
        self.rot_left(l - k)
    }

    /// Bit at MSB-first index `i` (index 0 is the most significant bit).
    pub fn bit(&self, i: u32) -> bool {
        assert!(i < self.bitlen as u32, "bit index {i} out of range");
        let from_lsb = self.bitlen as u32 - 1 - i;
        (self.limbs[(from_lsb / 64) as usize] >> (from_lsb % 64)) & 1 == 1
    }

    /// A copy with the bit at MSB-first index `i` flipped.
    pub fn flip_bit(&self, i: u32) -> Self {
        assert!(i < self.bitlen as u32, "bit index {i} out of range");
        let from_lsb = self.bitlen as u32 - 1 - i;
        let mut w = *self;
        w.limbs[(from_lsb / 64) as usize] ^= 1u64 << (from_lsb % 64);
        w
    }

    /// The word value as an integer, when it fits.
    pub fn try_to_u64(&self) -> Option<u64> {
        if self.limbs[1..].iter().all(|&l| l == 0) {
            Some(self.limbs[0])
        } else {
            None
        }
    }

    /// Appends the word's bits, MSB first, to a bit buffer.
    pub fn extend_bits(&self, bits: &mut Vec<bool>) {
        for i in 0..self.bitlen as u32 {
            bits.push(self.bit(i));
        }
    }

    fn shifted_left(&self, k: u32) -> Word {
        let mut out = Word::zero(self.bitlen);
        let limb_shift = (k / 64) as usize;
        let bit_shift = k % 64;
        for i in (limb_shift..LIMBS).rev() {
            let mut v = self.limbs[i - limb_shift] << bit_shift;
            if bit_shift > 0 && i > limb_shift {
                v |= self.limbs[i - limb_shift - 1] >> (64 - bit_shift);
            }
            out.limbs[i] = v;
        }
        out
    }

    fn shifted_right(&self, k: u32) -> Word {
        let mut out = Word::zero(self.bitlen);
        let limb_shift = (k / 64) as usize;
        let bit_shift = k % 64;
        for i in 0..LIMBS - limb_shift {
            let mut v = self.limbs[i + limb_shift] >> bit_shift;
            if bit_shift > 0 && i + limb_shift + 1 < LIMBS {
                v |= self.limbs[i + limb_shift + 1] << (64 - bit_shift);
            }
            out.limbs[i] = v;
        }
        out
    }

    fn mask_top(&mut self) {
        let used = limbs_for(self.bitlen);
        let top_bits = self.bitlen as u32 % 64;
        if top_bits != 0 {
            self.limbs[used - 1] &= (1u64 << top_bits) - 1;
        }
        for limb in self.limbs.iter_mut().skip(used) {
            *limb = 0;
        }
    }
}

fn assert_bitlen(bitlen: u16) {
    assert!(
        (MIN_BITLEN..=MAX_BITLEN).contains(&bitlen),
        "bit length {bitlen} outside supported range [{MIN_BITLEN}, {MAX_BITLEN}]"
    );
}

fn limbs_for(bitlen: u16) -> usize {
    (bitlen as usize).div_ceil(64)
}

fn hex_digits(bitlen: u16) -> usize {
    (bitlen as usize).div_ceil(4)
}

impl BitXor for Word {
    type Output = Word;

    fn bitxor(self, rhs: Word) -> Word {
        assert_eq!(
            self.bitlen, rhs.bitlen,
            "xor operands have different bit lengths ({} vs {})",
            self.bitlen, rhs.bitlen
        );
        let mut out = self;
        for (o, r) in out.limbs.iter_mut().zip(rhs.limbs.iter()) {
            *o ^= r;
        }
        out
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word({}/{})", self.to_hex(), self.bitlen)
    }
}
