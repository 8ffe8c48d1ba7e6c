//! Fixed-point quantization of real-valued responses into bit sequences.

use crate::error::{Error, Result};

/// Min-max normalizes `values` over the batch, scales to `2^bits` levels and
/// emits each code MSB-first.
pub fn quantize_to_bits(values: &[f64], bits: u32) -> Result<Vec<u8>> {
    if !(1..=32).contains(&bits) {
        return Err(Error::invalid(format!("bits per value must be in [1, 32], got {bits}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot quantize non-finite values"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || !(hi > lo) {
        return Err(Error::InsufficientData("constant batch has zero range".into()));
    }
    let levels = 2f64.powi(bits as i32);
    let max_code = (1u64 << bits) - 1;
    let mut out = Vec::with_capacity(values.len() * bits as usize);
    for &v in values {
        let u = (v - lo) / (hi - lo);
        let code = ((u * levels).floor() as u64).min(max_code);
        out.extend((0..bits).rev().map(|b| ((code >> b) & 1) as u8));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bit_example() {
        assert_eq!(quantize_to_bits(&[0.0, 0.5, 1.0], 2).unwrap(), vec![0, 0, 1, 0, 1, 1]);
    }

    #[test]
    fn rejects_constant_and_bad_width() {
        assert!(quantize_to_bits(&[3.0, 3.0], 8).is_err());
        assert!(quantize_to_bits(&[0.0, 1.0], 0).is_err());
        assert!(quantize_to_bits(&[0.0, 1.0], 33).is_err());
        assert!(quantize_to_bits(&[], 8).is_err());
    }

    #[test]
    fn length_is_bits_times_values() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        assert_eq!(quantize_to_bits(&v, 16).unwrap().len(), 16_000);
    }

    #[test]
    fn thirty_two_bits() {
        let b = quantize_to_bits(&[0.0, 1.0], 32).unwrap();
        assert!(b[..32].iter().all(|&x| x == 0));
        assert!(b[32..].iter().all(|&x| x == 1));
    }
}
