//! Qm.n fixed-point arithmetic.
//!
//! A value `v` stored in a `w`-bit two's-complement integer with `n`
//! fractional bits represents `v * 2^-n`. All rounding is floor (arithmetic
//! right shift), and every narrowing saturates. The emitted `number.h`
//! implements the same operations in C.

use std::fmt;

/// Largest supported operand width. Double-width accumulators must fit 32 bits.
pub const MAX_WIDTH: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("unsupported fixed-point width {0} (expected 2..=16)")]
pub struct WidthError(pub u32);

/// Fixed-point format: total width `w` (sign included) and fractional bits `n`.
///
/// `n` may be negative or exceed `w`; the integer-part bit count
/// `w - n - 1` is then negative or larger than the storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    width: u32,
    frac: i32,
}

impl QFormat {
    pub fn new(width: u32, frac: i32) -> Result<Self, WidthError> {
        if !(2..=MAX_WIDTH).contains(&width) {
            return Err(WidthError(width));
        }
        Ok(Self { width, frac })
    }

    pub const fn width(&self) -> u32 {
        self.width
    }

    pub const fn frac(&self) -> i32 {
        self.frac
    }

    /// Integer-part bits excluding the sign, `w - n - 1`.
    pub const fn int_bits(&self) -> i32 {
        self.width as i32 - self.frac - 1
    }

    pub const fn min_int(&self) -> i64 {
        min_int(self.width)
    }

    pub const fn max_int(&self) -> i64 {
        max_int(self.width)
    }

    pub fn range(&self) -> (f64, f64) {
        format_range(self.width, self.frac)
    }

    pub fn resolution(&self) -> f64 {
        format_resolution(self.frac)
    }

    /// Bytes of the smallest standard container holding `w` bits.
    pub const fn container_bytes(&self) -> usize {
        container_bytes(self.width)
    }
}

impl fmt::Display for QFormat {
    /// Q notation with the sign counted in the integer part, e.g. `Q7.9`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.width as i32 - self.frac, self.frac)
    }
}

pub const fn min_int(bits: u32) -> i64 {
    -(1i64 << (bits - 1))
}

pub const fn max_int(bits: u32) -> i64 {
    (1i64 << (bits - 1)) - 1
}

/// 1 byte up to 8 bits, 2 up to 16, 4 up to 32.
pub const fn container_bytes(bits: u32) -> usize {
    if bits <= 8 {
        1
    } else if bits <= 16 {
        2
    } else {
        4
    }
}

/// Width of the accumulator container for `w`-bit operands (16 or 32).
pub const fn long_bits(width: u32) -> u32 {
    if width <= 8 {
        16
    } else {
        32
    }
}

/// Real range `[-2^(w-1), 2^(w-1) - 1] * 2^-n`. Accepts widths up to 63 so
/// wider reference formats such as Q16.16 can be described.
pub fn format_range(width: u32, frac: i32) -> (f64, f64) {
    (
        ldexp(min_int(width) as f64, -frac),
        ldexp(max_int(width) as f64, -frac),
    )
}

pub fn format_resolution(frac: i32) -> f64 {
    ldexp(1.0, -frac)
}

/// `x * 2^exp`, exact whenever the result is representable.
pub fn ldexp(x: f64, exp: i32) -> f64 {
    let mut x = x;
    let mut e = exp;
    // Step through the exponent so the intermediate scale never overflows.
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e)
}

pub fn saturate(v: i64, bits: u32) -> i64 {
    v.clamp(min_int(bits), max_int(bits))
}

fn saturate_i128(v: i128, bits: u32) -> i64 {
    v.clamp(min_int(bits) as i128, max_int(bits) as i128) as i64
}

/// Two's-complement wrap of `v` to `bits` bits.
pub const fn wrap(v: i64, bits: u32) -> i64 {
    let s = 64 - bits;
    (v << s) >> s
}

/// Arithmetic right shift, i.e. `floor(v / 2^shift)` for any shift amount.
pub const fn shift_right_floor(v: i64, shift: u32) -> i64 {
    if shift >= 63 {
        if v < 0 {
            -1
        } else {
            0
        }
    } else {
        v >> shift
    }
}

/// Exact decomposition of a finite non-zero double into `mantissa * 2^exp`.
fn decompose(x: f64) -> (i128, i32) {
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1 } else { 1 };
    let exp_field = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i128;
    if exp_field == 0 {
        (sign * frac, -1074)
    } else {
        (sign * (frac | (1i128 << 52)), exp_field - 1075)
    }
}

/// `saturate(floor(x * 2^frac), bits)` computed exactly. `bits` may be up to 32.
pub fn quantize_bits(x: f64, frac: i32, bits: u32) -> i64 {
    if x.is_nan() || x == 0.0 {
        return 0;
    }
    if x.is_infinite() {
        return if x > 0.0 { max_int(bits) } else { min_int(bits) };
    }
    let (mant, exp) = decompose(x);
    let shift = exp as i64 + frac as i64;
    if shift >= 0 {
        // |mant| >= 1, so a shift past 70 is far outside any 32-bit range.
        if shift > 70 {
            return if mant > 0 { max_int(bits) } else { min_int(bits) };
        }
        saturate_i128(mant << shift, bits)
    } else {
        let s = (-shift).min(127) as u32;
        saturate_i128(mant >> s, bits)
    }
}

/// `saturate(floor(x * 2^n), w)`.
pub fn quantize_value(x: f64, fmt: QFormat) -> i32 {
    quantize_bits(x, fmt.frac, fmt.width) as i32
}

/// `v * 2^-n`.
pub fn dequantize(v: i64, frac: i32) -> f64 {
    ldexp(v as f64, -frac)
}

/// Rescale a double-width value from `from_n` to `to_n` fractional bits and
/// saturate to `width` bits. Right shifts floor; left shifts saturate.
pub fn requantize(v: i64, from_n: i32, to_n: i32, width: u32) -> i64 {
    let shift = from_n as i64 - to_n as i64;
    if shift >= 0 {
        saturate(shift_right_floor(v, shift.min(63) as u32), width)
    } else if v == 0 {
        0
    } else {
        let s = -shift;
        if s >= 64 {
            return if v > 0 { max_int(width) } else { min_int(width) };
        }
        saturate_i128((v as i128) << s, width)
    }
}

/// Exact `floor(log2(|x|))` for finite non-zero `x`.
pub fn floor_log2(x: f64) -> i32 {
    debug_assert!(x.is_finite() && x != 0.0);
    let bits = x.abs().to_bits();
    let exp_field = (bits >> 52) as i32;
    if exp_field == 0 {
        let frac = bits & ((1u64 << 52) - 1);
        // subnormal: value = frac * 2^-1074
        63 - frac.leading_zeros() as i32 - 1074
    } else {
        exp_field - 1023
    }
}

/// Integer storage in the smallest standard container holding the format width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FixedData {
    I8(Vec<i8>),
    I16(Vec<i16>),
}

impl FixedData {
    pub fn len(&self) -> usize {
        match self {
            FixedData::I8(v) => v.len(),
            FixedData::I16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> i64 {
        match self {
            FixedData::I8(v) => v[i] as i64,
            FixedData::I16(v) => v[i] as i64,
        }
    }

    pub fn to_vec(&self) -> Vec<i64> {
        match self {
            FixedData::I8(v) => v.iter().map(|&x| x as i64).collect(),
            FixedData::I16(v) => v.iter().map(|&x| x as i64).collect(),
        }
    }

    /// Little-endian bytes of every element at container width.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            FixedData::I8(v) => v.iter().map(|&x| x as u8).collect(),
            FixedData::I16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

/// Integer tensor tagged with its fixed-point format. `dims` is the logical
/// shape (`[channels, samples]` for activations, the weight dims otherwise).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTensor {
    format: QFormat,
    dims: Vec<usize>,
    data: FixedData,
}

impl FixedTensor {
    /// Build from integer values, saturating each to the format width.
    pub fn from_values(format: QFormat, dims: Vec<usize>, values: &[i64]) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        let w = format.width();
        let data = if container_bytes(w) == 1 {
            FixedData::I8(values.iter().map(|&v| saturate(v, w) as i8).collect())
        } else {
            FixedData::I16(values.iter().map(|&v| saturate(v, w) as i16).collect())
        };
        Self { format, dims, data }
    }

    pub fn quantize(format: QFormat, dims: Vec<usize>, values: &[f64]) -> Self {
        let ints: Vec<i64> = values.iter().map(|&x| quantize_value(x, format) as i64).collect();
        Self::from_values(format, dims, &ints)
    }

    pub fn format(&self) -> QFormat {
        self.format
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &FixedData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> Vec<i64> {
        self.data.to_vec()
    }

    pub fn dequantize(&self) -> Vec<f64> {
        let n = self.format.frac();
        self.values().into_iter().map(|v| dequantize(v, n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_tensor_containers() {
        let t = FixedTensor::from_values(q(8, 7), vec![3], &[1, -300, 200]);
        assert!(matches!(t.data(), FixedData::I8(_)));
        assert_eq!(t.values(), [1, -128, 127]);
        let t = FixedTensor::from_values(q(9, 0), vec![2], &[300, -300]);
        assert!(matches!(t.data(), FixedData::I16(_)));
        assert_eq!(t.values(), [255, -256]);
        assert_eq!(t.data().to_le_bytes(), [255, 0, 0, 255]);
        let t = FixedTensor::quantize(q(16, 9), vec![1, 2], &[0.75, -0.001]);
        assert_eq!(t.values(), [384, -1]);
        assert_eq!(t.dequantize(), [0.75, -0.001953125]);
    }

    fn q(w: u32, n: i32) -> QFormat {
        QFormat::new(w, n).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_value(0.75, q(16, 15)), 24576);
        assert_eq!(quantize_value(1.5, q(8, 7)), 127);
        assert_eq!(quantize_value(0.3, q(16, 13)), 2457);
        assert_eq!(quantize_value(-0.001, q(16, 9)), -1);
        assert_eq!(quantize_value(-1e9, q(8, 0)), -128);
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(24576, 15), 0.75);
        assert_eq!(dequantize(0, 7), 0.0);
        assert_eq!(dequantize(2457, 13), 0.2999267578125);
    }

    #[test]
    fn requantize_examples() {
        assert_eq!(requantize(4096, 12, 6, 8), 64);
        assert_eq!(requantize(-1, 1, 0, 8), -1);
        assert_eq!(requantize(40000, 0, 0, 16), 32767);
        assert_eq!(requantize(3, 0, 2, 8), 12);
        assert_eq!(requantize(100, 0, 2, 8), 127);
        assert_eq!(requantize(-5, 0, 200, 8), -128);
        assert_eq!(requantize(-5, 200, 0, 8), -1);
    }

    #[test]
    fn ranges() {
        let (lo, hi) = format_range(32, 16);
        assert_eq!(lo, -32768.0);
        assert!((hi - 32767.9999847).abs() < 1e-7);
        assert!((format_resolution(16) - 1.5259e-5).abs() < 1e-9);
        assert_eq!(q(8, 7).range(), (-1.0, 0.9921875));
        assert_eq!(q(16, 9).resolution(), 0.001953125);
        assert_eq!(q(16, 9).to_string(), "Q7.9");
    }

    #[test]
    fn width_bounds() {
        assert!(QFormat::new(1, 0).is_err());
        assert!(QFormat::new(17, 0).is_err());
        assert!(QFormat::new(9, -3).is_ok());
    }

    #[test]
    fn floor_log2_edges() {
        assert_eq!(floor_log2(1.0), 0);
        assert_eq!(floor_log2(0.75), -1);
        assert_eq!(floor_log2(-2.5), 1);
        assert_eq!(floor_log2(f64::MIN_POSITIVE), -1022);
        assert_eq!(floor_log2(5e-324), -1074);
    }

    #[test]
    fn wraps() {
        assert_eq!(wrap(32768, 16), -32768);
        assert_eq!(wrap(-32769, 16), 32767);
        assert_eq!(wrap(12345, 32), 12345);
    }

    proptest! {
        #[test]
        fn floor_error_bound(x in -100.0f64..100.0, n in -4i32..12) {
            let fmt = q(16, n);
            let (lo, hi) = fmt.range();
            prop_assume!(x >= lo && x <= hi);
            let err = x - dequantize(quantize_value(x, fmt) as i64, n);
            prop_assert!(err >= 0.0 && err < fmt.resolution());
        }

        #[test]
        fn monotone(a in -1e3f64..1e3, b in -1e3f64..1e3, w in 2u32..=16, n in -8i32..24) {
            let fmt = q(w, n);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_value(lo, fmt) <= quantize_value(hi, fmt));
        }

        #[test]
        fn requantize_composes(v in -(1i64 << 20)..(1i64 << 20), a in 0i32..24, b in 0i32..24, c in 0i32..24) {
            // The middle step must not saturate, and must not floor bits
            // away that a later left shift would need.
            let mid = requantize(v, a, b, 32);
            prop_assume!(mid > min_int(32) && mid < max_int(32));
            prop_assume!(b >= a || b >= c);
            prop_assert_eq!(requantize(v, a, c, 16), requantize(mid, b, c, 16));
        }
    }
}
