use super::Mode;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Inverted-dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 − rate)`. Consumes one uniform draw per entry.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
        .collect())
}

pub fn apply_mask(x: &mut [f64], mask: &[f64]) {
    debug_assert_eq!(x.len(), mask.len());
    for (v, m) in x.iter_mut().zip(mask) {
        *v *= m;
    }
}

/// Inverted dropout; the identity in infer mode or when `rate == 0`.
pub fn dropout(x: &[f64], rate: f64, mode: Mode, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x.to_vec());
    }
    let mask = dropout_mask(x.len(), rate, rng)?;
    let mut out = x.to_vec();
    apply_mask(&mut out, &mask);
    Ok(out)
}
