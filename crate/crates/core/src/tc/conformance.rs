//! Token-bucket envelope checks over departure traces.

use crate::sim::{SimTime, NANOS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvelopeVerdict {
    pub conformant: bool,
    /// Largest `bits(i..=j) - (bucket + slack + rate*(t_j - t_i))` seen, in
    /// bits rounded up; negative when the trace never touches the bound.
    pub worst_excess_bits: i64,
    pub departures: usize,
}

/// Checks `bits departed in [t_i, t_j] <= bucket + slack + rate * (t_j - t_i)`
/// for every pair of departures `i <= j`, exactly, in one pass.
///
/// For a fixed right end `j` the left end maximizing the excess is the one
/// maximizing `rate * t_i - prefix(i - 1)`, so a running maximum covers all
/// pairs. Arithmetic is in bit-nanoseconds on `i128`.
pub fn check_envelope(trace: &[(SimTime, u64)], rate_bps: u64, bucket_bits: u64, slack_bits: u64) -> EnvelopeVerdict {
    let scale = i128::from(NANOS_PER_SEC);
    let rate = i128::from(rate_bps);
    let bound = i128::from(bucket_bits + slack_bits) * scale;
    let mut prefix: i128 = 0;
    let mut best_left = i128::MIN;
    let mut worst = i128::MIN;
    for &(t, bits) in trace {
        let t = i128::from(t.as_nanos());
        best_left = best_left.max(rate * t - prefix);
        prefix += i128::from(bits) * scale;
        let excess = prefix - rate * t + best_left - bound;
        worst = worst.max(excess);
    }
    let worst_bits = if trace.is_empty() { -(bound / scale) as i64 } else { excess_bits(worst, scale) };
    EnvelopeVerdict {
        conformant: trace.is_empty() || worst <= 0,
        worst_excess_bits: worst_bits,
        departures: trace.len(),
    }
}

fn excess_bits(scaled: i128, scale: i128) -> i64 {
    // ceiling division that also works for negatives
    let q = scaled.div_euclid(scale);
    let r = scaled.rem_euclid(scale);
    (if r > 0 { q + 1 } else { q }) as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(trace: &[(SimTime, u64)], rate: u64, bucket: u64, slack: u64) -> bool {
        for i in 0..trace.len() {
            let mut bits: u128 = 0;
            for j in i..trace.len() {
                bits += u128::from(trace[j].1);
                let dt = u128::from(trace[j].0.as_nanos() - trace[i].0.as_nanos());
                let allowed = u128::from(bucket + slack) * 1_000_000_000 + u128::from(rate) * dt;
                if bits * 1_000_000_000 > allowed {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn empty_trace_conforms() {
        assert!(check_envelope(&[], 1, 1, 0).conformant);
    }

    #[test]
    fn burst_of_bucket_then_rate() {
        // 1 Mb bucket, 10 Mb/s: 1 Mb at t=0 then 12000 bits every 1.2 ms
        let mut trace = vec![(SimTime::ZERO, 1_000_000)];
        for k in 1..100u64 {
            trace.push((SimTime::from_nanos(k * 1_200_000), 12_000));
        }
        assert!(check_envelope(&trace, 10_000_000, 1_000_000, 0).conformant);
        trace.push((SimTime::from_nanos(99 * 1_200_000 + 1), 12_000));
        assert!(!check_envelope(&trace, 10_000_000, 1_000_000, 0).conformant);
        assert!(check_envelope(&trace, 10_000_000, 1_000_000, 12_000).conformant);
    }

    proptest! {
        #[test]
        fn matches_quadratic_oracle(
            gaps in proptest::collection::vec(0u64..3_000_000, 1..60),
            sizes in proptest::collection::vec(512u64..12_176, 60),
            bucket in 12_176u64..80_000,
        ) {
            let mut t = 0;
            let trace: Vec<(SimTime, u64)> = gaps.iter().zip(&sizes).map(|(&g, &b)| {
                t += g;
                (SimTime::from_nanos(t), b)
            }).collect();
            let fast = check_envelope(&trace, 10_000_000, bucket, 0).conformant;
            prop_assert_eq!(fast, brute(&trace, 10_000_000, bucket, 0));
        }
    }
}
