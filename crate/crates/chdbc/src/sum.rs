//! Deterministic pairwise (tree) summation.
//!
//! Every reduction in the crate goes through these helpers so that identity
//! checks at the 1e-12 level stay achievable at N = 256 and so that repeated
//! runs produce bit-identical results regardless of how callers are threaded.

/// Pairwise sum with a fixed split tree.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const BASE: usize = 16;
    if v.len() <= BASE {
        let mut s = 0.0;
        for &x in v {
            s += x;
        }
        return s;
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Pairwise sum of `f(k)` for `k in 0..n` without materializing the slice
/// beyond a fixed-size scratch block.
pub fn pairwise_sum_fn(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    fn go(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
        const BASE: usize = 16;
        if hi - lo <= BASE {
            let mut s = 0.0;
            for k in lo..hi {
                s += f(k);
            }
            return s;
        }
        let mid = lo + (hi - lo) / 2;
        go(lo, mid, f) + go(mid, hi, f)
    }
    go(0, n, &f)
}

/// Euclidean norm via pairwise summation of squares.
pub fn euclidean_norm(v: &[f64]) -> f64 {
    pairwise_sum_fn(v.len(), |k| v[k] * v[k]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_sequential_on_small_input() {
        let v: Vec<f64> = (0..100).map(|k| (k as f64).sin()).collect();
        let seq: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - seq).abs() < 1e-12);
        assert!((pairwise_sum_fn(v.len(), |k| v[k]) - pairwise_sum(&v)).abs() == 0.0);
    }

    #[test]
    fn deterministic() {
        let v: Vec<f64> = (0..1023).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        assert_eq!(pairwise_sum(&v).to_bits(), pairwise_sum(&v).to_bits());
    }
}
