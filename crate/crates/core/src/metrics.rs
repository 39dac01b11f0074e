//! Percentiles, latency samples and CDF rows.

use serde::{Deserialize, Serialize};

use crate::controlplane::{InvocationRecord, InvocationStatus};
use crate::error::{Error, Result};
use crate::simcore::Micros;

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest sample, `p = 0` gives the minimum.
pub fn percentile(samples: &[Micros], p: f64) -> Result<Micros> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    percentile_sorted(&sorted, p)
}

/// Same as [`percentile`] on already sorted input.
pub fn percentile_sorted(sorted: &[Micros], p: f64) -> Result<Micros> {
    if sorted.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("percentile {p} outside 0..100")));
    }
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// `(kernel - bypass) / kernel * 100`.
pub fn reduction_pct(kernel: Micros, bypass: Micros) -> f64 {
    if kernel == 0 {
        return 0.0;
    }
    (kernel as f64 - bypass as f64) / kernel as f64 * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub e2e_us: Micros,
    pub exec_us: Micros,
    pub queue_us: Micros,
    pub hops_us: Micros,
    pub status: InvocationStatus,
}

impl LatencySample {
    pub fn from_record(r: &InvocationRecord) -> Option<Self> {
        Some(LatencySample {
            e2e_us: r.e2e_us()?,
            exec_us: r.exec_us,
            queue_us: r.queue_us,
            hops_us: r.hops_us(),
            status: r.status,
        })
    }

    pub fn is_consistent(&self) -> bool {
        self.status != InvocationStatus::Ok || self.e2e_us == self.exec_us + self.queue_us + self.hops_us
    }
}

/// Successful samples of finished records.
pub fn ok_samples(records: &[InvocationRecord]) -> Vec<LatencySample> {
    records
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(LatencySample::from_record)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub p50_us: Micros,
    pub p99_us: Micros,
    pub min_us: Micros,
    pub max_us: Micros,
}

impl Summary {
    pub fn of(samples: &[Micros]) -> Result<Self> {
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        Ok(Summary {
            count: sorted.len(),
            p50_us: percentile_sorted(&sorted, 50.0)?,
            p99_us: percentile_sorted(&sorted, 99.0)?,
            min_us: percentile_sorted(&sorted, 0.0)?,
            max_us: percentile_sorted(&sorted, 100.0)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rate_rps: f64,
    pub p50_us: Micros,
    pub p99_us: Micros,
    pub reject_frac: f64,
    pub saturated: bool,
    pub completed: u64,
    pub offered: u64,
}

impl SweepPoint {
    pub fn is_valid(&self) -> bool {
        self.p99_us >= self.p50_us && (0.0..=1.0).contains(&self.reject_frac)
    }
}

/// Largest rate such that it and every lower rate are unsaturated.
pub fn max_unsaturated(points: &[SweepPoint]) -> Option<f64> {
    points.iter().take_while(|p| !p.saturated).last().map(|p| p.rate_rps)
}

/// Empirical CDF, one row per distinct value.
pub fn cdf(samples: &[Micros]) -> Vec<(Micros, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mut rows: Vec<(Micros, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = if i + 1 == n { 1.0 } else { (i + 1) as f64 / n as f64 };
        match rows.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => rows.push((*v, frac)),
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ladder_percentiles() {
        let xs: Vec<Micros> = (1..=100).collect();
        assert_eq!(percentile(&xs, 50.0).unwrap(), 50);
        assert_eq!(percentile(&xs, 99.0).unwrap(), 99);
        assert_eq!(percentile(&xs, 0.0).unwrap(), 1);
        assert_eq!(percentile(&xs, 100.0).unwrap(), 100);
    }

    #[test]
    fn singleton_and_empty() {
        for p in [0.0, 1.0, 50.0, 99.9, 100.0] {
            assert_eq!(percentile(&[7], p).unwrap(), 7);
        }
        assert_eq!(percentile(&[], 50.0), Err(Error::EmptySamples));
    }

    #[test]
    fn cdf_closes_at_one() {
        let xs: Vec<Micros> = (0..100).map(|i| i % 37).collect();
        let rows = cdf(&xs);
        assert!(rows.len() <= 100);
        assert_eq!(rows.last().unwrap().1, 1.0);
        assert!(rows.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
    }

    #[test]
    fn max_unsaturated_stops_at_first_saturation() {
        let pt = |r: f64, s: bool| SweepPoint {
            rate_rps: r,
            p50_us: 1,
            p99_us: 2,
            reject_frac: 0.0,
            saturated: s,
            completed: 1,
            offered: 1,
        };
        assert_eq!(max_unsaturated(&[pt(1.0, false), pt(2.0, true), pt(3.0, false)]), Some(1.0));
        assert_eq!(max_unsaturated(&[pt(1.0, true)]), None);
    }

    proptest! {
        #[test]
        fn matches_sort_reference(xs in proptest::collection::vec(0u64..1000, 1..200), p in 0.0f64..=100.0) {
            let mut s = xs.clone();
            s.sort();
            let k = ((p / 100.0) * s.len() as f64).ceil() as usize;
            let want = if k == 0 { s[0] } else { s[k - 1] };
            prop_assert_eq!(percentile(&xs, p).unwrap(), want);
        }
    }
}
