//! Software IEEE 754 binary16.
//!
//! Sums and products are formed in `f32` and rounded to binary16, nearest,
//! ties to even. Products of two binary16 values are exact in `f32`; sums are
//! not, but `f32` carries at least `2*11 + 2` significand bits, which is enough
//! for the second rounding to always agree with a single correct rounding.
//! NaN results are always the single quiet pattern [`Half::NAN`], so two
//! computations can be compared bit for bit.
//!
//! There is deliberately no fused multiply-add: products are rounded before
//! they are summed, as in a datapath built from separate multipliers and an
//! adder tree.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

const SIGN_MASK: u16 = 0x8000;
const EXP_MASK: u16 = 0x7C00;
const FRAC_MASK: u16 = 0x03FF;

/// Exponent of the smallest subnormal quantum (2^-24).
const MIN_QUANTUM_EXP: i32 = -24;

/// A binary16 value stored as its raw bit pattern.
///
/// `PartialEq`/`Eq`/`Hash` compare bit patterns, not numeric values: `+0` and
/// `-0` differ and NaN equals itself. Use [`Half::num_eq`], [`Half::ge`] and
/// [`Half::lt`] for IEEE comparisons.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Half(u16);

impl Half {
    pub const ZERO: Half = Half(0x0000);
    pub const NEG_ZERO: Half = Half(0x8000);
    pub const ONE: Half = Half(0x3C00);
    pub const HALF: Half = Half(0x3800);
    pub const TWO: Half = Half(0x4000);
    pub const INFINITY: Half = Half(0x7C00);
    pub const NEG_INFINITY: Half = Half(0xFC00);
    /// Canonical quiet NaN emitted by every operation that produces NaN.
    pub const NAN: Half = Half(0x7E00);
    /// Largest finite value, 65504.
    pub const MAX: Half = Half(0x7BFF);
    /// Smallest positive normal value, 2^-14.
    pub const MIN_POSITIVE: Half = Half(0x0400);
    /// Smallest positive subnormal value, 2^-24.
    pub const MIN_POSITIVE_SUBNORMAL: Half = Half(0x0001);

    #[inline]
    pub const fn from_bits(bits: u16) -> Half {
        Half(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    #[inline]
    pub const fn to_le_bytes(self) -> [u8; 2] {
        self.0.to_le_bytes()
    }

    #[inline]
    pub const fn from_le_bytes(bytes: [u8; 2]) -> Half {
        Half(u16::from_le_bytes(bytes))
    }

    #[inline]
    pub const fn is_nan(self) -> bool {
        (self.0 & EXP_MASK) == EXP_MASK && (self.0 & FRAC_MASK) != 0
    }

    #[inline]
    pub const fn is_infinite(self) -> bool {
        (self.0 & !SIGN_MASK) == EXP_MASK
    }

    #[inline]
    pub const fn is_finite(self) -> bool {
        (self.0 & EXP_MASK) != EXP_MASK
    }

    #[inline]
    pub const fn is_zero(self) -> bool {
        (self.0 & !SIGN_MASK) == 0
    }

    #[inline]
    pub const fn is_sign_negative(self) -> bool {
        (self.0 & SIGN_MASK) != 0
    }

    #[inline]
    pub const fn is_subnormal(self) -> bool {
        (self.0 & EXP_MASK) == 0 && (self.0 & FRAC_MASK) != 0
    }

    /// Rounds an `f64` to the nearest binary16, ties to even.
    pub fn from_f64(x: f64) -> Half {
        let bits = x.to_bits();
        let sign = (bits >> 63) != 0;
        let exp = ((bits >> 52) & 0x7FF) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        if exp == 0x7FF {
            return if frac != 0 {
                Half::NAN
            } else if sign {
                Half::NEG_INFINITY
            } else {
                Half::INFINITY
            };
        }
        let (mag, scale) = if exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), exp - 1075)
        };
        round_pack(sign, mag as u128, scale)
    }

    /// Rounds an `f32` to the nearest binary16, ties to even.
    #[inline]
    pub fn from_f32(x: f32) -> Half {
        let b = x.to_bits();
        let sign = ((b >> 16) & 0x8000) as u16;
        let exp = ((b >> 23) & 0xFF) as i32;
        let man = b & 0x007F_FFFF;
        if exp == 0xFF {
            return if man != 0 { Half::NAN } else { Half(sign | EXP_MASK) };
        }
        let e = exp - 112;
        if e >= 0x1F {
            return Half(sign | EXP_MASK);
        }
        if e >= 1 {
            let mut r = ((e as u32) << 10) | (man >> 13);
            let rem = man & 0x1FFF;
            if rem > 0x1000 || (rem == 0x1000 && r & 1 == 1) {
                // may carry into the exponent, up to infinity
                r += 1;
            }
            return Half(sign | r as u16);
        }
        // Subnormal (or zero) result: value is `m * 2^-(14 - e)` in units of 2^-24.
        let shift = (14 - e) as u32;
        if shift > 24 {
            return Half(sign);
        }
        let m = man | 0x0080_0000;
        let mut r = m >> shift;
        let rem = m & ((1 << shift) - 1);
        let halfway = 1 << (shift - 1);
        if rem > halfway || (rem == halfway && r & 1 == 1) {
            r += 1;
        }
        Half(sign | r as u16)
    }

    /// Exact conversion; every binary16 is representable in `f32`.
    #[inline]
    pub fn to_f32(self) -> f32 {
        f32::from_bits(TO_F32[self.0 as usize])
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.to_f32())
    }

    /// Sign flip. NaN inputs come back as the canonical NaN.
    #[inline]
    pub fn negate(self) -> Half {
        if self.is_nan() {
            Half::NAN
        } else {
            Half(self.0 ^ SIGN_MASK)
        }
    }

    /// Division by two as an exponent decrement.
    ///
    /// Only values with the two smallest exponent fields need a right shift of
    /// the significand (with round-to-nearest-even); everything else just
    /// decrements the exponent. Bit-identical to `self * 0.5`.
    pub fn halve(self) -> Half {
        let (sign, exp, frac) = self.fields();
        if exp == 0x1F {
            return if frac != 0 { Half::NAN } else { self };
        }
        let sign_bits = if sign { SIGN_MASK } else { 0 };
        if exp >= 2 {
            return Half(self.0 - 0x0400);
        }
        // Value is `sig * 2^-24`; halve in those units.
        let sig = if exp == 1 { frac | 0x0400 } else { frac };
        let mut r = sig >> 1;
        if sig & 1 == 1 && r & 1 == 1 {
            r += 1;
        }
        Half(sign_bits | r)
    }

    /// IEEE numeric equality (`+0 == -0`, NaN never equal).
    pub fn num_eq(self, other: Half) -> bool {
        if self.is_nan() || other.is_nan() {
            return false;
        }
        self.0 == other.0 || (self.is_zero() && other.is_zero())
    }

    /// IEEE `self >= other`; false whenever either side is NaN.
    pub fn ge(self, other: Half) -> bool {
        if self.is_nan() || other.is_nan() {
            return false;
        }
        self.to_f32() >= other.to_f32()
    }

    /// IEEE `self < other`; false whenever either side is NaN.
    pub fn lt(self, other: Half) -> bool {
        if self.is_nan() || other.is_nan() {
            return false;
        }
        self.to_f32() < other.to_f32()
    }

    #[inline]
    fn fields(self) -> (bool, u16, u16) {
        (
            self.0 & SIGN_MASK != 0,
            (self.0 & EXP_MASK) >> 10,
            self.0 & FRAC_MASK,
        )
    }
}

/// `f32` bit pattern of every binary16 value; NaNs map to the `f32` quiet NaN.
static TO_F32: [u32; 65536] = {
    let mut t = [0u32; 65536];
    let mut i = 0;
    while i < 65536 {
        t[i] = widen(i as u16);
        i += 1;
    }
    t
};

const fn widen(h: u16) -> u32 {
    let sign = ((h & SIGN_MASK) as u32) << 16;
    let exp = ((h & EXP_MASK) >> 10) as u32;
    let frac = (h & FRAC_MASK) as u32;
    if exp == 0x1F {
        return if frac != 0 { 0x7FC0_0000 } else { sign | 0x7F80_0000 };
    }
    if exp != 0 {
        return sign | ((exp + 112) << 23) | (frac << 13);
    }
    if frac == 0 {
        return sign;
    }
    // Subnormal: normalise `frac * 2^-24`.
    let lz = frac.leading_zeros() - 22;
    let frac = (frac << (lz + 1)) & 0x3FF;
    sign | ((113 - lz - 1) << 23) | (frac << 13)
}

/// Rounds `(-1)^sign * mag * 2^scale` to binary16, round to nearest even.
fn round_pack(sign: bool, mag: u128, scale: i32) -> Half {
    let sign_bits = if sign { SIGN_MASK } else { 0 };
    if mag == 0 {
        return Half(sign_bits);
    }
    let msb = 127 - mag.leading_zeros() as i32;
    // Exponent of the result's unit in the last place.
    let quantum = (msb + scale - 10).max(MIN_QUANTUM_EXP);
    if quantum > 5 {
        return Half(sign_bits | EXP_MASK);
    }
    let shift = quantum - scale;
    let mut r = if shift <= 0 {
        mag << (-shift) as u32
    } else if shift > 127 {
        0
    } else {
        let kept = mag >> shift as u32;
        let rem = mag & ((1u128 << shift as u32) - 1);
        let halfway = 1u128 << (shift - 1) as u32;
        if rem > halfway || (rem == halfway && kept & 1 == 1) {
            kept + 1
        } else {
            kept
        }
    };
    let mut quantum = quantum;
    if r == 0x800 {
        r = 0x400;
        quantum += 1;
        if quantum > 5 {
            return Half(sign_bits | EXP_MASK);
        }
    }
    // `r` is now < 2^11; biased exponent = quantum + 25, and adding `r`
    // (which carries the implicit bit) folds it in.
    let bits = (((quantum + 24) as u32) << 10) + r as u32;
    Half(sign_bits | bits as u16)
}

impl Add for Half {
    type Output = Half;

    #[inline]
    fn add(self, rhs: Half) -> Half {
        Half::from_f32(self.to_f32() + rhs.to_f32())
    }
}

impl Sub for Half {
    type Output = Half;

    fn sub(self, rhs: Half) -> Half {
        self + rhs.negate()
    }
}

impl Mul for Half {
    type Output = Half;

    #[inline]
    fn mul(self, rhs: Half) -> Half {
        Half::from_f32(self.to_f32() * rhs.to_f32())
    }
}

impl Neg for Half {
    type Output = Half;

    fn neg(self) -> Half {
        self.negate()
    }
}

/// Spike-gated accumulation: `acc + w` when the spike bit is set, else `acc`.
#[inline]
pub fn fused_psum(acc: Half, w: Half, spike: bool) -> Half {
    if spike {
        acc + w
    } else {
        acc
    }
}

impl fmt::Debug for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(0x{:04x})", self.to_f32(), self.0)
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}

impl From<Half> for f32 {
    fn from(h: Half) -> f32 {
        h.to_f32()
    }
}

impl From<Half> for f64 {
    fn from(h: Half) -> f64 {
        h.to_f64()
    }
}

impl serde::Serialize for Half {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f32(self.to_f32())
    }
}

impl<'de> serde::Deserialize<'de> for Half {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Half, D::Error> {
        let v = f64::deserialize(d)?;
        Ok(Half::from_f64(v))
    }
}
