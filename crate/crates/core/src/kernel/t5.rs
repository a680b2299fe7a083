//! Log-binned relative position buckets for a unidirectional (causal) model.

pub const T5_NUM_BUCKETS: usize = 32;
/// Distances below this get their own bucket.
pub const T5_EXACT_BUCKETS: usize = 16;
/// Distance at which the logarithmic bins reach the last bucket.
pub const T5_MAX_DISTANCE: usize = 128;

/// Bucket for the signed distance `d = m - n`.
///
/// Negative distances (future positions) share bucket 0, distances below 16
/// are exact, and larger ones are binned logarithmically up to 128 and then
/// saturate at bucket 31. The arithmetic follows the reference
/// implementation operation for operation, including the truncating cast.
pub fn t5_bucket_index(distance: i64) -> usize {
    if distance < 0 {
        return 0;
    }
    let d = distance as usize;
    if d < T5_EXACT_BUCKETS {
        return d;
    }
    let exact = T5_EXACT_BUCKETS as f64;
    let log_ratio = (d as f64 / exact).ln() / (T5_MAX_DISTANCE as f64 / exact).ln();
    let large = T5_EXACT_BUCKETS + (log_ratio * (T5_NUM_BUCKETS - T5_EXACT_BUCKETS) as f64) as usize;
    large.min(T5_NUM_BUCKETS - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_examples() {
        assert_eq!(t5_bucket_index(-1), 0);
        assert_eq!(t5_bucket_index(-500), 0);
        assert_eq!(t5_bucket_index(0), 0);
        assert_eq!(t5_bucket_index(15), 15);
        assert_eq!(t5_bucket_index(16), 16);
        assert_eq!(t5_bucket_index(127), 31);
        assert_eq!(t5_bucket_index(100_000), 31);
    }

    #[test]
    fn monotone_and_bounded() {
        let mut prev = 0;
        for d in 0..5000 {
            let b = t5_bucket_index(d);
            assert!(b >= prev && b < T5_NUM_BUCKETS);
            prev = b;
        }
    }
}
