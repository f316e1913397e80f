//! Sinusoidal positional encodings and their similarity-decay probe.
//!
//! Entry (k, 2i) = sin(k·θ_i), (k, 2i+1) = cos(k·θ_i) with θ_i = base^(−2i/d).
//! The sensor side uses base 1000 (faster similarity decay over lag), the
//! text side the classic 10000. The decay probe evaluates the exact finite
//! sum g(Δ) = ⟨p_m, p_{m+Δ}⟩ / (d/2) = (2/d)·Σ_i cos(Δ·θ_i).

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PeError {
    #[error("encoding dimension must be even and positive, got {0}")]
    BadDim(usize),
}

fn thetas(d: usize, base: f64) -> Result<Vec<f64>, PeError> {
    if d == 0 || d % 2 != 0 {
        return Err(PeError::BadDim(d));
    }
    Ok((0..d / 2)
        .map(|i| base.powf(-(2.0 * i as f64) / d as f64))
        .collect())
}

/// [max_len, d] table; row k is the encoding of position k. Values are
/// computed in f64 and cast to the working precision.
pub fn pe_table<T: Scalar>(d: usize, base: f64, max_len: usize) -> Result<Tensor<T>, PeError> {
    let th = thetas(d, base)?;
    let mut data = Vec::with_capacity(max_len * d);
    for k in 0..max_len {
        for &theta in &th {
            let arg = k as f64 * theta;
            data.push(T::from_f64(arg.sin()));
            data.push(T::from_f64(arg.cos()));
        }
    }
    Ok(Tensor::new(vec![max_len, d], data).expect("constructed shape"))
}

/// Normalized similarity g(Δ) between positions Δ apart.
pub fn pe_similarity(d: usize, base: f64, lag: usize) -> Result<f64, PeError> {
    let th = thetas(d, base)?;
    let sum: f64 = th.iter().map(|&t| (lag as f64 * t).cos()).sum();
    Ok(sum / th.len() as f64)
}

/// (Δ, g(Δ)) for Δ = 0..=max_lag.
pub fn pe_decay_curve(d: usize, base: f64, max_lag: usize) -> Result<Vec<(usize, f64)>, PeError> {
    (0..=max_lag)
        .map(|lag| pe_similarity(d, base, lag).map(|s| (lag, s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn position_zero_alternates_zero_one() {
        let t: Tensor<f64> = pe_table(8, 1000.0, 3).unwrap();
        let row0 = &t.data()[0..8];
        assert_eq!(row0, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn self_norm_is_half_d() {
        for &(d, base) in &[(8usize, 1000.0), (64, 1000.0), (128, 10000.0)] {
            let t: Tensor<f64> = pe_table(d, base, 50).unwrap();
            for m in [0usize, 7, 49] {
                let row = &t.data()[m * d..(m + 1) * d];
                assert!((dot(row, row) - d as f64 / 2.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shift_invariance_of_inner_products() {
        let d = 32;
        let t: Tensor<f64> = pe_table(d, 1000.0, 200).unwrap();
        let row = |m: usize| &t.data()[m * d..(m + 1) * d];
        for &(m, n, k) in &[(0usize, 5usize, 10usize), (3, 40, 77), (12, 13, 100)] {
            let a = dot(row(m), row(n));
            let b = dot(row(m + k), row(n + k));
            assert!((a - b).abs() < 1e-9, "({m},{n}) vs +{k}: {a} vs {b}");
        }
    }

    #[test]
    fn odd_or_zero_dim_rejected() {
        assert_eq!(pe_table::<f64>(7, 1000.0, 4).unwrap_err(), PeError::BadDim(7));
        assert_eq!(pe_similarity(0, 1000.0, 1).unwrap_err(), PeError::BadDim(0));
    }

    #[test]
    fn decay_curve_bounds_and_origin() {
        let curve = pe_decay_curve(128, 1000.0, 200).unwrap();
        assert_eq!(curve[0], (0, 1.0));
        for &(_, g) in &curve {
            assert!((-1.0..=1.0).contains(&g));
        }
    }

    #[test]
    fn smaller_base_decays_faster_at_lag_20() {
        let g1000 = pe_similarity(128, 1000.0, 20).unwrap();
        let g10000 = pe_similarity(128, 10000.0, 20).unwrap();
        assert!(
            g1000 < g10000,
            "base 1000 must decay faster: {g1000} vs {g10000}"
        );
        // frozen values from an independent evaluation of the finite sum
        assert!((g1000 - 0.48181744977784297).abs() < 1e-12);
        assert!((g10000 - 0.6083444828299376).abs() < 1e-12);
    }

    #[test]
    fn frozen_decay_goldens_d128_base1000() {
        let golden = [
            (1usize, 0.9615741317537868),
            (2, 0.8660095353346398),
            (5, 0.651022027471714),
            (10, 0.5629339577940011),
            (20, 0.48181744977784297),
            (50, 0.35720016653792025),
            (100, 0.21408667967588785),
            (200, 0.14279794039168942),
        ];
        for (lag, want) in golden {
            let got = pe_similarity(128, 1000.0, lag).unwrap();
            assert!((got - want).abs() < 1e-9, "lag {lag}: {got} vs {want}");
        }
    }

    #[test]
    fn first_lag_permanently_below_half_is_16() {
        // regression constant: for d=128, base=1000, g(Δ) < 0.5 holds for all
        // Δ in [16, 200] and fails at Δ=15
        let curve = pe_decay_curve(128, 1000.0, 200).unwrap();
        let threshold_lag = (1..=200)
            .find(|&lo| curve[lo..].iter().all(|&(_, g)| g < 0.5))
            .unwrap();
        assert_eq!(threshold_lag, 16);
        assert!(curve[15].1 >= 0.5);
    }

    #[test]
    fn table_rows_agree_with_direct_similarity_formula() {
        let d = 128;
        let t: Tensor<f64> = pe_table(d, 1000.0, 60).unwrap();
        let row = |m: usize| &t.data()[m * d..(m + 1) * d];
        for lag in [1usize, 7, 33] {
            let via_table = dot(row(9), row(9 + lag)) / (d as f64 / 2.0);
            let direct = pe_similarity(d, 1000.0, lag).unwrap();
            assert!((via_table - direct).abs() < 1e-9);
        }
    }
}
