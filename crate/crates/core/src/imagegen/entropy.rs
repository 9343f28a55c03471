use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEFAULT_ENTROPY_WINDOW: usize = 256;
pub const DEFAULT_ENTROPY_STRIDE: usize = 256;

/// Sliding-window byte entropy, in bits per byte.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProfile {
    pub window: usize,
    pub stride: usize,
    pub values: Vec<f64>,
}

impl EntropyProfile {
    /// Byte offset of window `k`.
    pub fn offset(&self, k: usize) -> usize {
        k * self.stride
    }

    /// CSV with header `offset,entropy`, entropy printed with 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("offset,entropy\n");
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{:.6}", self.offset(k), v);
        }
        out
    }
}

fn entropy_of_counts(counts: &[u32; 256], total: usize) -> f64 {
    let total = total as f64;
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = f64::from(c) / total;
            -p * p.log2()
        })
        .sum::<f64>();
    // Guard the single-symbol case against a -0.0 result.
    h.max(0.0)
}

/// Shannon entropy (base 2) of the byte histogram of `data`.
pub fn shannon_entropy(data: &[u8]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut counts = [0u32; 256];
    for &b in data {
        counts[b as usize] += 1;
    }
    entropy_of_counts(&counts, data.len())
}

/// Entropy of `data[k*stride .. k*stride + window]` for every full window.
///
/// Inputs shorter than one window yield an empty profile.
pub fn entropy_profile(data: &[u8], window: usize, stride: usize) -> Result<EntropyProfile> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidParameter("entropy window and stride must be positive".into()));
    }
    let mut values = Vec::new();
    if data.len() >= window {
        let n = (data.len() - window) / stride + 1;
        values.reserve(n);
        let mut counts = [0u32; 256];
        for &b in &data[..window] {
            counts[b as usize] += 1;
        }
        values.push(entropy_of_counts(&counts, window));
        for k in 1..n {
            let start = k * stride;
            if stride < window {
                for &b in &data[start - stride..start] {
                    counts[b as usize] -= 1;
                }
                for &b in &data[start + window - stride..start + window] {
                    counts[b as usize] += 1;
                }
            } else {
                counts = [0; 256];
                for &b in &data[start..start + window] {
                    counts[b as usize] += 1;
                }
            }
            values.push(entropy_of_counts(&counts, window));
        }
    }
    Ok(EntropyProfile {
        window,
        stride,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_window_is_zero() {
        let p = entropy_profile(&[0x41; 256], 256, 256).unwrap();
        assert_eq!(p.values, vec![0.0]);
    }

    #[test]
    fn uniform_window_is_eight() {
        let data: Vec<u8> = (0..=255).collect();
        assert_eq!(entropy_profile(&data, 256, 256).unwrap().values, vec![8.0]);
    }

    #[test]
    fn two_symbols_is_one() {
        let mut data = vec![0x00; 128];
        data.extend([0xFF; 128]);
        assert_eq!(entropy_profile(&data, 256, 256).unwrap().values, vec![1.0]);
    }

    #[test]
    fn short_input_gives_empty_profile() {
        assert!(entropy_profile(&[1, 2, 3], 256, 256).unwrap().values.is_empty());
    }

    #[test]
    fn zero_window_or_stride_rejected() {
        assert!(entropy_profile(&[1], 0, 1).is_err());
        assert!(entropy_profile(&[1], 1, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut data = vec![0u8; 4];
        data.extend([0, 1, 2, 3]);
        let p = entropy_profile(&data, 4, 4).unwrap();
        assert_eq!(p.to_csv(), "offset,entropy\n0,0.000000\n4,2.000000\n");
    }

    proptest! {
        #[test]
        fn rolling_matches_direct(data in prop::collection::vec(any::<u8>(), 0..600),
                                  window in 1usize..80, stride in 1usize..100) {
            let p = entropy_profile(&data, window, stride).unwrap();
            let expected = if data.len() >= window { (data.len() - window) / stride + 1 } else { 0 };
            prop_assert_eq!(p.values.len(), expected);
            for (k, v) in p.values.iter().enumerate() {
                let direct = shannon_entropy(&data[k * stride..k * stride + window]);
                prop_assert!((v - direct).abs() < 1e-12);
                prop_assert!((0.0..=8.0).contains(v));
            }
        }

        #[test]
        fn permutation_invariant(mut data in prop::collection::vec(any::<u8>(), 1..300), seed in any::<u64>()) {
            let before = shannon_entropy(&data);
            // Deterministic Fisher-Yates driven by an LCG.
            let mut s = seed;
            for i in (1..data.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                data.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert!((shannon_entropy(&data) - before).abs() < 1e-12);
        }
    }
}
