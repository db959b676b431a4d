//! Test-only reference implementations, independent of the library paths
//! they check.
#![allow(dead_code)]

use fflp::Half;
use std::sync::OnceLock;

/// Every finite, non-negative binary16 value in ascending order, paired with
/// its bit pattern.
fn positive_table() -> &'static [(f64, u16)] {
    static TABLE: OnceLock<Vec<(f64, u16)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0u16..0x7C00)
            .map(|b| (decode_bits(b), b))
            .collect::<Vec<_>>()
    })
}

/// Decodes a bit pattern by the textbook formula, without touching `Half`.
pub fn decode_bits(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1F) as i32;
    let frac = (bits & 0x3FF) as f64;
    if exp == 0x1F {
        return if frac != 0.0 { f64::NAN } else { sign * f64::INFINITY };
    }
    if exp == 0 {
        sign * frac * 2f64.powi(-24)
    } else {
        sign * (1.0 + frac / 1024.0) * 2f64.powi(exp - 15)
    }
}

/// Nearest-even binary16 for an exact `f64`, by bracketing the value between
/// consecutive table entries.
pub fn round_by_enumeration(x: f64) -> u16 {
    if x.is_nan() {
        return 0x7E00;
    }
    let sign: u16 = if x.is_sign_negative() { 0x8000 } else { 0 };
    let a = x.abs();
    // 65520 = MAX + half an ulp: ties go to the (odd) MAX's even neighbour, inf.
    if a >= 65520.0 {
        return sign | 0x7C00;
    }
    let table = positive_table();
    let idx = table.partition_point(|&(v, _)| v <= a);
    let (lo_v, lo_b) = table[idx - 1];
    if lo_v == a || idx == table.len() {
        return sign | lo_b;
    }
    let (hi_v, hi_b) = table[idx];
    let d_lo = a - lo_v;
    let d_hi = hi_v - a;
    let pick = if d_lo < d_hi {
        lo_b
    } else if d_hi < d_lo {
        hi_b
    } else if lo_b & 1 == 0 {
        lo_b
    } else {
        hi_b
    };
    sign | pick
}

/// Canonicalizes NaN payloads so bit comparisons are meaningful.
pub fn canon(bits: u16) -> u16 {
    if (bits & 0x7C00) == 0x7C00 && (bits & 0x3FF) != 0 {
        0x7E00
    } else {
        bits
    }
}

/// Reference sum: exact in f64 (binary16 operands span < 53 bits), then one
/// rounding.
pub fn ref_add(a: u16, b: u16) -> u16 {
    let x = decode_bits(a);
    let y = decode_bits(b);
    let s = x + y;
    if s == 0.0 && !s.is_nan() {
        // IEEE: exact zero sum is +0 unless both operands are -0.
        let both_neg = a == 0x8000 && b == 0x8000;
        return if both_neg { 0x8000 } else { 0x0000 };
    }
    round_by_enumeration(s)
}

/// Reference product: 22-bit significand product is exact in f64.
pub fn ref_mul(a: u16, b: u16) -> u16 {
    let p = decode_bits(a) * decode_bits(b);
    if p == 0.0 {
        let neg = (a ^ b) & 0x8000 != 0;
        return if neg { 0x8000 } else { 0x0000 };
    }
    round_by_enumeration(p)
}

pub fn half(bits: u16) -> Half {
    Half::from_bits(bits)
}
