//! Integer encodings used on the wire and in `sensing.csv`.
//!
//! Every encoding rounds half-up (`floor(x + 1/2)`) on the shortest decimal
//! representation of the input, so `21.375 * 100` encodes to `2138` even
//! though the binary product is `2137.4999...`.

use thiserror::Error;

/// Full-scale AQ sensor output voltage.
pub const AQ_FULL_SCALE_VOLTS: f64 = 5.0;
/// Largest AQ code produced by the 10-bit converter.
pub const AQ_MAX_CODE: i64 = 1023;
/// Dust concentration at LPO ratio 1.0, in pcs/L.
pub const DUST_FULL_SCALE: i64 = 28_000;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EncodingError {
    #[error("air-quality voltage {0} V is outside [0, 5]")]
    OutOfRangeVoltage(f64),
    #[error("low-pulse-occupancy ratio {0} is outside [0, 1]")]
    OutOfRangeLpo(f64),
}

/// Decimal digits of `value` as `mantissa / 10^scale`, if they fit in an i128
/// with room left for scaling.
fn decimal_parts(value: f64) -> Option<(i128, u32)> {
    let text = format!("{value}");
    let (negative, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.as_str()),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.len() + frac_part.len() > 24 {
        return None;
    }
    let mut mantissa: i128 = 0;
    for b in int_part.bytes().chain(frac_part.bytes()) {
        if !b.is_ascii_digit() {
            return None;
        }
        mantissa = mantissa * 10 + i128::from(b - b'0');
    }
    Some((
        if negative { -mantissa } else { mantissa },
        frac_part.len() as u32,
    ))
}

/// Rounds `value * num / den` half-up to an integer.
///
/// `den` must be positive.
pub fn round_half_up_ratio(value: f64, num: i64, den: i64) -> i64 {
    debug_assert!(den > 0);
    match decimal_parts(value) {
        Some((mantissa, scale)) => {
            let pow = 10i128.pow(scale);
            let top = 2 * mantissa * i128::from(num) + i128::from(den) * pow;
            let bottom = 2 * i128::from(den) * pow;
            top.div_euclid(bottom) as i64
        }
        None => (value * num as f64 / den as f64 + 0.5).floor() as i64,
    }
}

/// Encodes a percentage or a Celsius value as hundredths.
pub fn encode_raw(value: f64) -> i64 {
    round_half_up_ratio(value, 100, 1)
}

/// Inverse of [`encode_raw`].
pub fn decode_raw(raw: i64) -> f64 {
    raw as f64 / 100.0
}

/// Maps the AQ sensor's 0–5 V output onto the 0–1023 code range.
pub fn aq_voltage_to_code(volts: f64) -> Result<i64, EncodingError> {
    if !(0.0..=AQ_FULL_SCALE_VOLTS).contains(&volts) {
        return Err(EncodingError::OutOfRangeVoltage(volts));
    }
    Ok(round_half_up_ratio(volts, AQ_MAX_CODE, 5))
}

/// Converts a dust sensor low-pulse-occupancy ratio to pcs/L (linear, full scale 28,000).
pub fn dust_from_lpo(lpo_ratio: f64) -> Result<i64, EncodingError> {
    if !(0.0..=1.0).contains(&lpo_ratio) {
        return Err(EncodingError::OutOfRangeLpo(lpo_ratio));
    }
    Ok(round_half_up_ratio(lpo_ratio, DUST_FULL_SCALE, 1))
}
