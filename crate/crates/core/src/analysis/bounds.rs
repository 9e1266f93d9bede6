//! Closed-form bounds and parameter mappings between the fault models.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BoundError {
    #[error("no baiter count applies to (n={n}, k={k}, t={t})")]
    NotApplicable { n: usize, k: usize, t: usize },
    #[error("precondition failed: {0}")]
    PreconditionFailed(&'static str),
}

/// `k` rationals can split `n - t` quorums on both sides iff `k + 2t >= n`.
pub fn feasible_disagreement(n: usize, k: usize, t: usize) -> bool {
    k + 2 * t >= n && !(k == 0 && t == 0)
}

/// Smallest `m` with `m > (k - n)/2 + t` and `0 < m <= k`.
pub fn min_baiters(n: usize, k: usize, t: usize) -> Result<usize, BoundError> {
    if !feasible_disagreement(n, k, t) {
        return Err(BoundError::NotApplicable { n, k, t });
    }
    // m > (k + 2t - n) / 2, and k + 2t - n >= 0 here
    let m = ((k + 2 * t - n) / 2 + 1).max(1);
    if m > k {
        return Err(BoundError::NotApplicable { n, k, t });
    }
    Ok(m)
}

/// `(k, t)`-robust implies `(k + t, t)`-crash-robust.
pub fn map_robust_to_crash_robust(k: usize, t: usize) -> (usize, usize) {
    (k + t, t)
}

/// `(t', t)`-immune implies `(t, t' + t)`-crash-robust.
pub fn map_immune_to_crash_robust(t_crash: usize, t: usize) -> (usize, usize) {
    (t, t_crash + t)
}

/// `(k, t)`-crash-robust without crash-baiting, `k >= t`, yields a
/// `(k - t, t)`-robust extension.
pub fn map_crash_robust_to_robust(k: usize, t: usize, crash_baiting: bool) -> Result<(usize, usize), BoundError> {
    if k < t {
        return Err(BoundError::PreconditionFailed("k < t"));
    }
    if crash_baiting {
        return Err(BoundError::PreconditionFailed("protocol has a crash-baiting strategy"));
    }
    Ok((k - t, t))
}

/// `(k, t)`-crash-robust without crash-baiting, `t >= k`, yields a
/// `(t - k, k)`-immune extension.
pub fn map_crash_robust_to_immune(k: usize, t: usize, crash_baiting: bool) -> Result<(usize, usize), BoundError> {
    if t < k {
        return Err(BoundError::PreconditionFailed("t < k"));
    }
    if crash_baiting {
        return Err(BoundError::PreconditionFailed("protocol has a crash-baiting strategy"));
    }
    Ok((t - k, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasibility_examples() {
        assert!(feasible_disagreement(4, 2, 1));
        assert!(!feasible_disagreement(5, 1, 1));
        for n in 1..10 {
            assert!(!feasible_disagreement(n, 0, 0));
        }
    }

    #[test]
    fn min_baiter_examples() {
        assert_eq!(min_baiters(4, 2, 1), Ok(1));
        assert_eq!(min_baiters(10, 6, 3), Ok(2));
        assert_eq!(min_baiters(5, 2, 2), Ok(1));
        assert!(min_baiters(5, 1, 1).is_err());
        assert!(min_baiters(8, 1, 6).is_err());
    }

    #[test]
    fn mapping_examples() {
        assert_eq!(map_robust_to_crash_robust(2, 1), (3, 1));
        assert_eq!(map_immune_to_crash_robust(1, 1), (1, 2));
        assert_eq!(map_crash_robust_to_robust(3, 1, false), Ok((2, 1)));
        assert!(map_crash_robust_to_robust(1, 2, false).is_err());
        assert!(map_crash_robust_to_robust(3, 1, true).is_err());
        assert_eq!(map_crash_robust_to_immune(1, 3, false), Ok((2, 1)));
        assert!(map_crash_robust_to_immune(3, 1, false).is_err());
    }
}
