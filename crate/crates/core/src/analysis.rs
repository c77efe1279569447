//! Error metrics, size ratios and an empirical check of the layer-output
//! error bound `‖Xw − Xq‖₁ ≤ 2·m·N₀·ε` (and its ReLU image).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_layer, encode_layer, EncodeParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub rmse: f64,
}

pub fn error_stats(original: &[f32], restored: &[f32]) -> Result<ErrorStats> {
    if original.len() != restored.len() {
        return Err(Error::Dimension(format!(
            "original has {} values, restored has {}",
            original.len(),
            restored.len()
        )));
    }
    if original.is_empty() {
        return Ok(ErrorStats {
            max_abs: 0.0,
            mean_abs: 0.0,
            rmse: 0.0,
        });
    }
    let (mut max_abs, mut sum_abs, mut sum_sq) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in original.iter().zip(restored) {
        let d = (a as f64 - b as f64).abs();
        max_abs = max_abs.max(d);
        sum_abs += d;
        sum_sq += d * d;
    }
    let n = original.len() as f64;
    Ok(ErrorStats {
        max_abs,
        mean_abs: sum_abs / n,
        rmse: (sum_sq / n).sqrt(),
    })
}

pub fn compression_ratio(original_bytes: f64, compressed_bytes: f64) -> Result<f64> {
    if !(original_bytes > 0.0 && compressed_bytes > 0.0) {
        return Err(Error::domain("sizes must be positive"));
    }
    Ok(original_bytes / compressed_bytes)
}

/// Payload-only ratio of f32 pairs to `bit_width`-bit indices.
pub fn payload_ratio(bit_width: u8) -> f64 {
    64.0 / bit_width as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundReport {
    pub trials: usize,
    /// Fraction of trials with `‖Xw − Xq‖₁ ≤ 2·m·N₀·ε`.
    pub pass_fraction: f64,
    /// Same, after ReLU on both sides.
    pub relu_pass_fraction: f64,
    /// Largest `lhs / rhs` seen (0 when ε = 0).
    pub max_ratio_observed: f64,
    pub epsilon_max: f64,
    /// Whether the ReLU gap ever exceeded the pre-activation gap.
    pub relu_exceeded_linear: bool,
}

/// Per trial: `X ~ U[0,1]^{m×N₀}`, `w ~ U[0,1]^{N₀}`, `q = decode(encode(w))`,
/// `ε = max|w − q|`; checks the output-gap bound with `c = 1`, `ξ = 1`.
pub fn validate_error_bound(
    samples: usize,
    dims: usize,
    params: &EncodeParams,
    trials: usize,
    seed: u64,
) -> Result<ErrorBoundReport> {
    if samples == 0 || dims == 0 {
        return Err(Error::domain("sample count and dimension must be at least 1"));
    }
    params.validate()?;
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| one_trial(samples, dims, params, seed.wrapping_add(t as u64)))
        .collect::<Result<Vec<_>>>()?;
    let n = trials.max(1) as f64;
    Ok(ErrorBoundReport {
        trials,
        pass_fraction: outcomes.iter().filter(|o| o.linear_ok).count() as f64 / n,
        relu_pass_fraction: outcomes.iter().filter(|o| o.relu_ok).count() as f64 / n,
        max_ratio_observed: outcomes.iter().map(|o| o.ratio).fold(0.0, f64::max),
        epsilon_max: outcomes.iter().map(|o| o.epsilon).fold(0.0, f64::max),
        relu_exceeded_linear: outcomes.iter().any(|o| o.relu_gap > o.linear_gap),
    })
}

struct TrialOutcome {
    linear_ok: bool,
    relu_ok: bool,
    ratio: f64,
    epsilon: f64,
    linear_gap: f64,
    relu_gap: f64,
}

fn one_trial(samples: usize, dims: usize, params: &EncodeParams, seed: u64) -> Result<TrialOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..samples * dims).map(|_| rng.gen::<f64>()).collect();
    let w: Vec<f32> = (0..dims).map(|_| rng.gen::<f32>()).collect();
    let enc = encode_layer(&w, "w", &[dims as u64], params)?;
    let q = decode_layer(&enc)?;
    check_bound(&x, &w, &q, samples)
}

fn check_bound(x: &[f64], w: &[f32], q: &[f32], samples: usize) -> Result<TrialOutcome> {
    let dims = w.len();
    let epsilon = error_stats(w, q)?.max_abs;
    let (mut linear_gap, mut relu_gap) = (0.0f64, 0.0f64);
    for row in x.chunks_exact(dims).take(samples) {
        let (mut zw, mut zq) = (0.0f64, 0.0f64);
        for ((&xi, &wi), &qi) in row.iter().zip(w).zip(q) {
            zw += xi * wi as f64;
            zq += xi * qi as f64;
        }
        linear_gap += (zw - zq).abs();
        relu_gap += (zw.max(0.0) - zq.max(0.0)).abs();
    }
    let rhs = 2.0 * samples as f64 * dims as f64 * epsilon;
    Ok(TrialOutcome {
        linear_ok: linear_gap <= rhs,
        relu_ok: relu_gap <= rhs,
        ratio: if rhs > 0.0 { linear_gap / rhs } else { 0.0 },
        epsilon,
        linear_gap,
        relu_gap,
    })
}
