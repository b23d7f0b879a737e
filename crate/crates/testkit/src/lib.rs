//! Independent reference implementations of every aggregate computed by the
//! main crate, written as literal loop-based transcriptions of the defining
//! rules, plus seeded random-input generators.
//!
//! Nothing here depends on the main crate: tests compare the two codebases
//! against each other, so this one must stay free-standing and dumb. Prefer
//! obvious O(n^2) scans over anything clever.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Mean over episodes of the per-episode running maximum at the final round.
pub fn overall_utility(series: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for s in series {
        let mut best = f64::NEG_INFINITY;
        for &v in s {
            if v > best {
                best = v;
            }
        }
        acc += best;
    }
    acc / series.len() as f64
}

/// Mean of per-episode performance at the given 1-based round indices.
pub fn mean_at_rounds(series: &[Vec<f64>], rounds: &[usize]) -> f64 {
    let mut acc = 0.0;
    for (s, &k) in series.iter().zip(rounds) {
        acc += s[k - 1];
    }
    acc / series.len() as f64
}

/// Mean of per-episode final-round performance.
pub fn final_mean(series: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for s in series {
        acc += *s.last().expect("non-empty series");
    }
    acc / series.len() as f64
}

/// Absolute refinement gain: mean over episodes of (max_k P_k - P_{k'}).
pub fn refinement_gain_abs(series: &[Vec<f64>], first_update: &[usize]) -> f64 {
    let mut acc = 0.0;
    for (s, &k) in series.iter().zip(first_update) {
        let mut best = f64::NEG_INFINITY;
        for &v in s {
            if v > best {
                best = v;
            }
        }
        acc += best - s[k - 1];
    }
    acc / series.len() as f64
}

/// Relative refinement gain: absolute gain over the mean first-update utility.
pub fn refinement_gain_rel(series: &[Vec<f64>], first_update: &[usize]) -> f64 {
    refinement_gain_abs(series, first_update) / mean_at_rounds(series, first_update)
}

/// Literal transcription of the stopping rule: walk rounds, counting the
/// current run of no-progress rounds; stop at the round that completes the
/// first run of tau + 1 of them, else at the final round.
pub fn stop_round(flags: &[bool], tau: usize) -> usize {
    let mut run = 0usize;
    for (i, &made_progress) in flags.iter().enumerate() {
        if made_progress {
            run = 0;
        } else {
            run += 1;
        }
        if run == tau + 1 {
            return i + 1;
        }
    }
    flags.len()
}

/// Absolute usability drop: mean over episodes of (P_{stop} - P_{final}).
pub fn usability_drop_abs(series: &[Vec<f64>], flags: &[Vec<bool>], tau: usize) -> f64 {
    let mut acc = 0.0;
    for (s, f) in series.iter().zip(flags) {
        let k = stop_round(f, tau);
        acc += s[k - 1] - s[s.len() - 1];
    }
    acc / series.len() as f64
}

/// Relative usability drop: absolute drop over the mean final-round utility.
pub fn usability_drop_rel(series: &[Vec<f64>], flags: &[Vec<bool>], tau: usize) -> f64 {
    usability_drop_abs(series, flags, tau) / final_mean(series)
}

/// Carry-forward extension to the longest episode, then per-round column means.
pub fn scaling_curve(series: &[Vec<f64>]) -> Vec<f64> {
    let kmax = series.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut out = Vec::with_capacity(kmax);
    for k in 0..kmax {
        let mut acc = 0.0;
        for s in series {
            let idx = if k < s.len() { k } else { s.len() - 1 };
            acc += s[idx];
        }
        out.push(acc / series.len() as f64);
    }
    out
}

/// One quantile bucket over effort ratios: inclusive ratio bounds, mean of the
/// member episodes' final performance, and member count.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
    pub mean_performance: f64,
    pub n: usize,
}

/// Sort-then-split bucketing: stable sort by ratio (ties keep input order),
/// then cut into `b` nearly equal groups, earlier groups taking the remainder.
pub fn bucketed_performance(pairs: &[(f64, f64)], b: usize) -> Vec<Bucket> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&i, &j| pairs[i].0.partial_cmp(&pairs[j].0).unwrap());
    let n = pairs.len();
    let base = n / b;
    let rem = n % b;
    let mut out = Vec::with_capacity(b);
    let mut at = 0usize;
    for i in 0..b {
        let size = base + usize::from(i < rem);
        let members = &order[at..at + size];
        let mut acc = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &m in members {
            acc += pairs[m].1;
            lo = lo.min(pairs[m].0);
            hi = hi.max(pairs[m].0);
        }
        out.push(Bucket {
            lo,
            hi,
            mean_performance: acc / size as f64,
            n: size,
        });
        at += size;
    }
    out
}

/// Round segmentation over an actor sequence (true = human): a round starts at
/// position 0 and at every agent-to-human transition. Returns 1-based
/// (start, end) inclusive position pairs.
pub fn segment_rounds(is_human: &[bool]) -> Vec<(usize, usize)> {
    let mut starts = vec![0usize];
    for i in 1..is_human.len() {
        if is_human[i] && !is_human[i - 1] {
            starts.push(i);
        }
    }
    let mut out = Vec::with_capacity(starts.len());
    for (i, &s) in starts.iter().enumerate() {
        let end = if i + 1 < starts.len() {
            starts[i + 1] - 1
        } else {
            is_human.len() - 1
        };
        out.push((s + 1, end + 1));
    }
    out
}

/// Prefill: rounds without a fresh score inherit the previous value, seeded
/// with zero before the first round.
pub fn prefill(raw: &[Option<f64>]) -> Vec<f64> {
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(raw.len());
    for v in raw {
        if let Some(x) = *v {
            prev = x;
        }
        out.push(prev);
    }
    out
}

/// A randomly generated episode for metric equivalence tests.
#[derive(Debug, Clone)]
pub struct RandomEpisode {
    pub performance: Vec<f64>,
    pub progress: Vec<bool>,
    /// 1-based first output-update round.
    pub first_update: usize,
    pub ratio: f64,
}

/// Deterministic set of random episodes: 1..=max_episodes episodes, each with
/// 1..=max_rounds rounds, scores quantized to 3 decimals so oracle and
/// implementation see bit-identical inputs.
pub fn random_episode_set(seed: u64, max_episodes: usize, max_rounds: usize) -> Vec<RandomEpisode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_episodes);
    (0..n)
        .map(|_| {
            let k = rng.random_range(1..=max_rounds);
            let performance: Vec<f64> = (0..k)
                .map(|_| (rng.random_range(0..=1000) as f64) / 1000.0)
                .collect();
            let progress: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
            let first_update = rng.random_range(1..=k);
            let ratio = (rng.random_range(1..=3000) as f64) / 100.0;
            RandomEpisode {
                performance,
progress,
                first_update,
                ratio,
            }
        })
        .collect()
}

/// Deterministic random action sequence: actor flags (true = human) plus
/// per-action output-update flags and optional raw scores for prefill tests.
pub fn random_action_sequence(seed: u64, max_len: usize) -> (Vec<bool>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(1..=max_len);
    let actors: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
    let updates: Vec<bool> = (0..len).map(|_| rng.random_bool(0.3)).collect();
    (actors, updates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_round_matches_hand_runs() {
        assert_eq!(stop_round(&[true, true, false, false, true], 1), 4);
        assert_eq!(stop_round(&[true, true, false, false, true], 2), 5);
        assert_eq!(stop_round(&[false], 0), 1);
    }

    #[test]
    fn segment_matches_hand_runs() {
        let h = true;
        let a = false;
        assert_eq!(segment_rounds(&[a, a]), vec![(1, 2)]);
        assert_eq!(segment_rounds(&[h, a, h, h, a, a]), vec![(1, 2), (3, 6)]);
        assert_eq!(segment_rounds(&[a, h, a]), vec![(1, 1), (2, 3)]);
    }

    #[test]
    fn prefill_matches_hand_run() {
        assert_eq!(prefill(&[None, Some(0.4), None]), vec![0.0, 0.4, 0.4]);
    }
}
