//! Relative position buckets over (token offset, turn offset) pairs.

use super::ModelConfig;

/// Buckets one signed offset.
///
/// Non-negative offsets use buckets `0..num_buckets`, negative ones
/// `num_buckets..2 * num_buckets`. Within a sign, the first half of the
/// buckets hold exact distances; the rest grow logarithmically up to
/// `max_distance`, beyond which everything lands in the last bucket.
pub fn axis_bucket(offset: i64, num_buckets: usize, max_distance: usize) -> usize {
    let (base, n) = if offset < 0 {
        (num_buckets, offset.unsigned_abs() as usize)
    } else {
        (0, offset as usize)
    };
    let max_exact = num_buckets / 2;
    if n < max_exact {
        return base + n;
    }
    let ratio = (n as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln();
    // The nudge keeps exact powers of the ratio from rounding down a bucket.
    let large = max_exact + (ratio * (num_buckets - max_exact) as f64 + 1e-9).floor() as usize;
    base + large.min(num_buckets - 1)
}

/// Index into the relative-bias table for a (token offset, turn offset) pair.
///
/// A disabled axis contributes bucket 0, so with one axis enabled the index
/// is that axis' bucket.
pub fn relative_bucket(d_token: i64, d_turn: i64, config: &ModelConfig) -> usize {
    let nb = config.rpe_num_buckets;
    let md = config.rpe_max_distance;
    let token = if config.use_token_rpe {
        axis_bucket(d_token, nb, md)
    } else {
        0
    };
    let turn = if config.use_turn_rpe {
        axis_bucket(d_turn, nb, md)
    } else {
        0
    };
    token * config.turn_bucket_count() + turn
}

/// Row-major `[queries × keys]` bucket matrix; offsets are key minus query.
pub fn bucket_matrix(
    query_pos: &[usize],
    query_turns: &[usize],
    key_pos: &[usize],
    key_turns: &[usize],
    config: &ModelConfig,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(query_pos.len() * key_pos.len());
    for (&qi, &qt) in query_pos.iter().zip(query_turns) {
        for (&kj, &kt) in key_pos.iter().zip(key_turns) {
            out.push(relative_bucket(
                kj as i64 - qi as i64,
                kt as i64 - qt as i64,
                config,
            ));
        }
    }
    out
}
