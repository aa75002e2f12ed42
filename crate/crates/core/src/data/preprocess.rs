use chrono::{DateTime, Datelike, Timelike, Weekday};

use crate::error::{Error, Result};

pub const DEFAULT_NUM_BUCKETS: usize = 32;

/// Ratings above 3 are positive.
pub fn mlens_labelize(rating: i64) -> Result<u8> {
    if !(1..=5).contains(&rating) {
        return Err(Error::data(format!("rating {rating} outside 1..=5")));
    }
    Ok((rating > 3) as u8)
}

/// `(weekend flag, hour of day)` of a POSIX timestamp, in UTC.
pub fn timestamp_expand(ts: i64) -> (u8, u8) {
    let dt = DateTime::from_timestamp(ts, 0).unwrap_or_default();
    let weekend = matches!(dt.weekday(), Weekday::Sat | Weekday::Sun) as u8;
    (weekend, dt.hour() as u8)
}

/// Equal-frequency bucket boundaries fitted on training values.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileBuckets {
    boundaries: Vec<f64>,
    num_buckets: usize,
}

impl QuantileBuckets {
    pub fn fit(values: &[f64], num_buckets: usize) -> Result<Self> {
        if num_buckets == 0 {
            return Err(Error::config("bucket count must be positive"));
        }
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let boundaries = if n == 0 {
            Vec::new()
        } else {
            (1..num_buckets).map(|k| sorted[(k * n / num_buckets).min(n - 1)]).collect()
        };
        Ok(Self { boundaries, num_buckets })
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    /// Bucket in `0..num_buckets`; monotone in `v`, clamped at both ends.
    pub fn bucket(&self, v: f64) -> usize {
        self.boundaries.partition_point(|&b| b <= v).min(self.num_buckets - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rating_rule() {
        assert_eq!(mlens_labelize(4).unwrap(), 1);
        assert_eq!(mlens_labelize(3).unwrap(), 0);
        assert_eq!(mlens_labelize(1).unwrap(), 0);
        assert_eq!(mlens_labelize(6).unwrap_err().kind(), "data");
        assert!(mlens_labelize(0).is_err());
    }

    #[test]
    fn calendar_cases() {
        // 2024-01-06 was a Saturday; 13:00 UTC.
        let sat = 1_704_546_000;
        assert_eq!(timestamp_expand(sat), (1, 13));
        // 2024-01-03 00:00 UTC was a Wednesday.
        let wed = 1_704_240_000;
        assert_eq!(timestamp_expand(wed), (0, 0));
        let (_, h1) = timestamp_expand(wed + 23 * 3600);
        let (_, h2) = timestamp_expand(wed + 24 * 3600);
        assert_eq!((h1 + 1) % 24, h2);
    }

    #[test]
    fn below_minimum_is_bucket_zero() {
        let b = QuantileBuckets::fit(&[5.0, 6.0, 7.0, 8.0], 4).unwrap();
        assert_eq!(b.bucket(-100.0), 0);
        assert_eq!(b.bucket(1e9), 3);
    }

    #[test]
    fn uniform_values_fill_buckets_evenly() {
        let vals: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let b = QuantileBuckets::fit(&vals, 4).unwrap();
        let mut counts = [0usize; 4];
        for &v in &vals {
            counts[b.bucket(v)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1000.0 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    proptest! {
        #[test]
        fn bucket_is_monotone(train in proptest::collection::vec(-1e3f64..1e3, 1..200), a in -2e3f64..2e3, b in -2e3f64..2e3, nb in 1usize..40) {
            let q = QuantileBuckets::fit(&train, nb).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.bucket(lo) <= q.bucket(hi));
            prop_assert!(q.bucket(hi) < nb);
        }
    }
}
