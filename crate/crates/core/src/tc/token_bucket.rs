use crate::frame::MAX_FRAME_BITS;
use crate::sim::{SimError, SimTime, NANOS_PER_SEC};

use super::TcError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenBucketParams {
    /// Token generation rate, bits per second.
    pub rate_bps: u64,
    /// Bucket depth, bits.
    pub bucket_bits: u64,
}

impl TokenBucketParams {
    pub fn new(rate_bps: u64, bucket_bits: u64) -> Result<Self, TcError> {
        if rate_bps == 0 {
            return Err(TcError::ZeroRate);
        }
        if bucket_bits < MAX_FRAME_BITS {
            return Err(TcError::BucketTooSmall { bucket_bits, frame_bits: MAX_FRAME_BITS });
        }
        Ok(TokenBucketParams { rate_bps, bucket_bits })
    }
}

const SCALE: u128 = NANOS_PER_SEC as u128;

/// Token bucket with exact integer accounting.
///
/// Tokens are held in bit-nanoseconds (bits x 1e9) so that refilling at
/// `rate` for `dt` nanoseconds adds exactly `rate * dt` units.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    params: TokenBucketParams,
    tokens: u128,
    last_update: SimTime,
}

impl TokenBucket {
    /// Starts full at time zero.
    pub fn new(params: TokenBucketParams) -> Self {
        TokenBucket { params, tokens: u128::from(params.bucket_bits) * SCALE, last_update: SimTime::ZERO }
    }

    pub fn with_tokens(params: TokenBucketParams, tokens_bits: u64, at: SimTime) -> Self {
        let tokens = u128::from(tokens_bits.min(params.bucket_bits)) * SCALE;
        TokenBucket { params, tokens, last_update: at }
    }

    pub fn params(&self) -> TokenBucketParams {
        self.params
    }

    pub fn last_update(&self) -> SimTime {
        self.last_update
    }

    pub fn tokens_bits(&self) -> f64 {
        self.tokens as f64 / SCALE as f64
    }

    /// Exact token level in bit-nanoseconds.
    pub fn tokens_scaled(&self) -> u128 {
        self.tokens
    }

    /// `tokens = min(bucket, tokens + rate * (now - last))`.
    pub fn refill(&mut self, now: SimTime) -> Result<(), SimError> {
        if now < self.last_update {
            return Err(SimError::TimeRegression { at: now, last: self.last_update });
        }
        let dt = u128::from(now - self.last_update);
        let cap = u128::from(self.params.bucket_bits) * SCALE;
        self.tokens = (self.tokens + u128::from(self.params.rate_bps) * dt).min(cap);
        self.last_update = now;
        Ok(())
    }

    pub fn conforms(&self, bits: u64) -> bool {
        self.tokens >= u128::from(bits) * SCALE
    }

    /// Earliest instant at which `bits` tokens are available, given the
    /// current level. Never earlier than the last update.
    pub fn ready_at(&self, bits: u64) -> SimTime {
        let need = u128::from(bits) * SCALE;
        if self.tokens >= need {
            return self.last_update;
        }
        let wait = (need - self.tokens).div_ceil(u128::from(self.params.rate_bps));
        self.last_update + wait as u64
    }

    /// Removes `bits` tokens. The caller must have checked conformance.
    pub fn consume(&mut self, bits: u64) {
        let need = u128::from(bits) * SCALE;
        assert!(self.tokens >= need, "consume beyond available tokens");
        self.tokens -= need;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MB: u64 = 1_000_000;

    fn params() -> TokenBucketParams {
        TokenBucketParams::new(10 * MB, MB).unwrap()
    }

    #[test]
    fn refill_caps_at_bucket() {
        let mut b = TokenBucket::with_tokens(params(), 0, SimTime::ZERO);
        b.refill(SimTime::from_secs_f64(0.2)).unwrap();
        assert_eq!(b.tokens_bits(), 1e6);
    }

    #[test]
    fn zero_interval_is_identity() {
        let mut b = TokenBucket::with_tokens(params(), 123_456, SimTime::from_nanos(77));
        let before = b.tokens_scaled();
        b.refill(SimTime::from_nanos(77)).unwrap();
        assert_eq!(b.tokens_scaled(), before);
        assert_eq!(b.last_update(), SimTime::from_nanos(77));
    }

    #[test]
    fn partial_refill_matches_stepping_oracle() {
        let mut b = TokenBucket::with_tokens(params(), 200_000, SimTime::ZERO);
        b.refill(SimTime::from_secs_f64(0.05)).unwrap();
        // Oracle: 50 refills of 1 ms each, each adding rate * 1 ms, capped.
        let mut oracle = 200_000.0f64;
        for _ in 0..50 {
            oracle = (oracle + 10e6 * 1e-3).min(1e6);
        }
        assert_eq!(b.tokens_bits(), oracle);
        assert_eq!(b.tokens_bits(), 700_000.0);
    }

    #[test]
    fn regression_is_fatal() {
        let mut b = TokenBucket::with_tokens(params(), 0, SimTime::from_nanos(100));
        assert!(matches!(b.refill(SimTime::from_nanos(99)), Err(SimError::TimeRegression { .. })));
    }

    #[test]
    fn ready_at_closed_form() {
        let b = TokenBucket::with_tokens(params(), 0, SimTime::ZERO);
        assert_eq!(b.ready_at(12_000), SimTime::from_nanos(1_200_000));
    }

    #[test]
    fn rejects_bad_params() {
        assert_eq!(TokenBucketParams::new(0, MB), Err(TcError::ZeroRate));
        assert!(matches!(TokenBucketParams::new(MB, 100), Err(TcError::BucketTooSmall { .. })));
    }
}
