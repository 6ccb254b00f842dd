//! Dataset ingestion, synthetic log generation with planted next-item
//! structure, leave-one-out splitting, and the stochastic sequence
//! augmentations feeding the contrastive views.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad header: expected `user_id,item_id,timestamp`, found `{0}`")]
    BadHeader(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("no users with >= 3 interactions after filtering")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMark {
    Train,
    ValidTarget,
    TestTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user_id: u32,
    pub item_id: u32,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSequence {
    pub user_id: u32,
    pub items: Vec<u32>,
    /// One marker per position. All Train until leave_one_out_split runs.
    pub split: Vec<SplitMark>,
}

impl InteractionSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Training prefix. Split markers are only ever assigned to the last two
    /// positions, so Train positions form a prefix.
    pub fn train_items(&self) -> &[u32] {
        let n = self
            .split
            .iter()
            .filter(|m| **m == SplitMark::Train)
            .count();
        debug_assert!(self.split[..n].iter().all(|m| *m == SplitMark::Train));
        &self.items[..n]
    }

    pub fn valid_target(&self) -> Option<u32> {
        self.split
            .iter()
            .position(|m| *m == SplitMark::ValidTarget)
            .map(|i| self.items[i])
    }

    pub fn test_target(&self) -> Option<u32> {
        self.split
            .iter()
            .position(|m| *m == SplitMark::TestTarget)
            .map(|i| self.items[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_users: usize,
    pub num_items: usize,
    /// Indexed by dense user id: sequences[u].user_id == u.
    pub sequences: Vec<InteractionSequence>,
}

impl Dataset {
    /// Per-item interaction counts over training positions only.
    pub fn train_item_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_items];
        for seq in &self.sequences {
            for &it in seq.train_items() {
                counts[it as usize] += 1;
            }
        }
        counts
    }

    pub fn total_train_interactions(&self) -> usize {
        self.sequences.iter().map(|s| s.train_items().len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadStats {
    pub rows: usize,
    pub users_kept: usize,
    pub users_dropped: usize,
    pub num_items: usize,
}

/// CSV loader. Header `user_id,item_id,timestamp` is required. Users with
/// fewer than 3 interactions are dropped; surviving user and item ids are
/// re-indexed densely in file first-appearance order. Per-user interactions
/// are sorted by timestamp with file order breaking ties; duplicates kept.
pub fn load_interactions(path: &Path) -> Result<(Dataset, LoadStats), DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.trim_end_matches('\r'),
        None => return Err(DataError::BadHeader(String::new())),
    };
    if header != "user_id,item_id,timestamp" {
        return Err(DataError::BadHeader(header.to_string()));
    }

    let mut rows: Vec<(u64, u64, i64)> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| {
            fields.next().ok_or(DataError::Parse {
                line: line_no,
                reason: format!("missing field {name}"),
            })
        };
        let user: u64 = next("user_id")?.trim().parse().map_err(|e| DataError::Parse {
            line: line_no,
            reason: format!("user_id: {e}"),
        })?;
        let item: u64 = next("item_id")?.trim().parse().map_err(|e| DataError::Parse {
            line: line_no,
            reason: format!("item_id: {e}"),
        })?;
        let ts: i64 = next("timestamp")?.trim().parse().map_err(|e| DataError::Parse {
            line: line_no,
            reason: format!("timestamp: {e}"),
        })?;
        if fields.next().is_some() {
            return Err(DataError::Parse {
                line: line_no,
                reason: "expected exactly 3 fields".to_string(),
            });
        }
        rows.push((user, item, ts));
    }

    let mut per_user_count: HashMap<u64, usize> = HashMap::new();
    for (u, _, _) in &rows {
        *per_user_count.entry(*u).or_insert(0) += 1;
    }
    let users_dropped = per_user_count.values().filter(|&&c| c < 3).count();

    // dense ids by first appearance among surviving rows
    let mut user_ids: HashMap<u64, u32> = HashMap::new();
    let mut item_ids: HashMap<u64, u32> = HashMap::new();
    let mut grouped: Vec<Vec<(i64, u32)>> = Vec::new();
    for (u, it, ts) in &rows {
        if per_user_count[u] < 3 {
            continue;
        }
        let next_user = user_ids.len() as u32;
        let uid = *user_ids.entry(*u).or_insert(next_user);
        let next_item = item_ids.len() as u32;
        let iid = *item_ids.entry(*it).or_insert(next_item);
        if uid as usize == grouped.len() {
            grouped.push(Vec::new());
        }
        grouped[uid as usize].push((*ts, iid));
    }
    if grouped.is_empty() {
        return Err(DataError::EmptyDataset);
    }

    let sequences = grouped
        .into_iter()
        .enumerate()
        .map(|(uid, mut events)| {
            events.sort_by_key(|(ts, _)| *ts); // stable: ties keep file order
            let items: Vec<u32> = events.into_iter().map(|(_, it)| it).collect();
            let split = vec![SplitMark::Train; items.len()];
            InteractionSequence {
                user_id: uid as u32,
                items,
                split,
            }
        })
        .collect::<Vec<_>>();

    let stats = LoadStats {
        rows: rows.len(),
        users_kept: sequences.len(),
        users_dropped,
        num_items: item_ids.len(),
    };
    Ok((
        Dataset {
            num_users: stats.users_kept,
            num_items: stats.num_items,
            sequences,
        },
        stats,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub num_users: usize,
    pub num_items: usize,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    /// Probability mass routed to each item's planted successor. The rest is
    /// drawn from a harmonic popularity prior (item 0 most popular).
    pub transition_skew: f64,
    pub seed: u64,
}

/// Draws an item from integer cumulative weights via binary search.
fn draw_weighted(cum: &[u64], rng: &mut ChaCha8Rng) -> u32 {
    let total = *cum.last().expect("nonempty weights");
    let x = rng.gen_range(0..total);
    cum.partition_point(|&c| c <= x) as u32
}

/// Synthetic logs from an order-1 Markov chain: each item has one planted
/// successor receiving `transition_skew` of the mass; the remainder comes
/// from a Zipf-like popularity prior, so frequency-based hot-item selection
/// has real signal. All branching is on integers, so a seed fully determines
/// the dataset across platforms.
pub fn synth_generate(p: &SynthParams) -> Dataset {
    assert!(p.num_items >= 10, "need at least 10 items");
    assert!(p.num_users >= 1);
    assert!(p.seq_len_min >= 3 && p.seq_len_min <= p.seq_len_max);
    assert!(p.transition_skew >= 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let m = p.num_items;

    // harmonic weights: w_k proportional to 1/(k+1), scaled to integers
    let mut cum = Vec::with_capacity(m);
    let mut acc = 0u64;
    for k in 0..m {
        acc += (1u64 << 20) / (k as u64 + 1);
        cum.push(acc);
    }

    let successor: Vec<u32> = (0..m)
        .map(|i| {
            let j = rng.gen_range(0..m - 1);
            if j >= i {
                (j + 1) as u32
            } else {
                j as u32
            }
        })
        .collect();

    // float-to-int conversion happens once; per-step branching is integer
    let threshold = (p.transition_skew * (1u64 << 32) as f64) as u64;

    let sequences = (0..p.num_users)
        .map(|uid| {
            let len = rng.gen_range(p.seq_len_min..=p.seq_len_max);
            let mut items = Vec::with_capacity(len);
            items.push(draw_weighted(&cum, &mut rng));
            for _ in 1..len {
                let prev = *items.last().unwrap() as usize;
                let roll = rng.gen::<u32>() as u64;
                let next = if roll < threshold {
                    successor[prev]
                } else {
                    draw_weighted(&cum, &mut rng)
                };
                items.push(next);
            }
            let split = vec![SplitMark::Train; len];
            InteractionSequence {
                user_id: uid as u32,
                items,
                split,
            }
        })
        .collect();

    Dataset {
        num_users: p.num_users,
        num_items: m,
        sequences,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitReport {
    pub marked: usize,
    pub skipped: usize,
}

/// Marks the last item of each sequence as the test target and the second to
/// last as the validation target. Sequences shorter than 3 are left as pure
/// train and counted in the report.
pub fn leave_one_out_split(dataset: &mut Dataset) -> SplitReport {
    let mut report = SplitReport {
        marked: 0,
        skipped: 0,
    };
    for seq in &mut dataset.sequences {
        let n = seq.items.len();
        if n < 3 {
            report.skipped += 1;
            continue;
        }
        for m in seq.split.iter_mut() {
            *m = SplitMark::Train;
        }
        seq.split[n - 2] = SplitMark::ValidTarget;
        seq.split[n - 1] = SplitMark::TestTarget;
        report.marked += 1;
    }
    report
}

/// Keeps only the most recent `max_len` positions of every sequence.
pub fn truncate_sequences(dataset: &mut Dataset, max_len: usize) {
    assert!(max_len >= 3, "truncation below 3 breaks leave-one-out");
    for seq in &mut dataset.sequences {
        let n = seq.items.len();
        if n > max_len {
            seq.items.drain(..n - max_len);
            seq.split.drain(..n - max_len);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    pub crop_prob: f64,
    pub crop_ratio: f64,
    pub mask_prob: f64,
    pub mask_ratio: f64,
    pub reorder_prob: f64,
    pub reorder_window: usize,
}

impl AugmentationPolicy {
    pub fn identity() -> Self {
        AugmentationPolicy {
            crop_prob: 0.0,
            crop_ratio: 1.0,
            mask_prob: 0.0,
            mask_ratio: 0.1,
            reorder_prob: 0.0,
            reorder_window: 2,
        }
    }

    /// Range checks only. Whether at least one op has probability > 0 is a
    /// training-configuration concern checked where the policy is assembled.
    pub fn check_ranges(&self) -> Result<(), String> {
        for (name, p) in [
            ("crop_prob", self.crop_prob),
            ("mask_prob", self.mask_prob),
            ("reorder_prob", self.reorder_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be in [0,1], got {p}"));
            }
        }
        for (name, r) in [("crop_ratio", self.crop_ratio), ("mask_ratio", self.mask_ratio)] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(format!("{name} must be in (0,1], got {r}"));
            }
        }
        if self.reorder_window < 1 {
            return Err("reorder_window must be >= 1".to_string());
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.crop_prob == 0.0 && self.mask_prob == 0.0 && self.reorder_prob == 0.0
    }
}

/// One stochastic view of a sequence: crop then mask then reorder, each
/// applied with its configured probability. `mask_item` is the reserved id M.
/// The input is never modified; sequences shorter than 2 pass through.
pub fn augment_sequence<R: Rng>(
    seq: &[u32],
    policy: &AugmentationPolicy,
    mask_item: u32,
    rng: &mut R,
) -> Vec<u32> {
    let mut out = seq.to_vec();
    if seq.len() < 2 {
        return out;
    }

    if rng.gen::<f64>() < policy.crop_prob {
        let keep = ((policy.crop_ratio * out.len() as f64).floor() as usize).max(1);
        let start = rng.gen_range(0..=out.len() - keep);
        out = out[start..start + keep].to_vec();
    }

    if rng.gen::<f64>() < policy.mask_prob {
        let n_mask = (policy.mask_ratio * out.len() as f64).ceil() as usize;
        let n_mask = n_mask.min(out.len());
        // partial Fisher-Yates picks n_mask distinct positions
        let mut pos: Vec<usize> = (0..out.len()).collect();
        for i in 0..n_mask {
            let j = rng.gen_range(i..pos.len());
            pos.swap(i, j);
            out[pos[i]] = mask_item;
        }
    }

    if rng.gen::<f64>() < policy.reorder_prob {
        let w = policy.reorder_window.min(out.len());
        let start = rng.gen_range(0..=out.len() - w);
        out[start..start + w].shuffle(rng);
    }

    out
}

/// Two adjacent tail windows offset by one step, for temporal consistency.
/// The window shrinks to len-1 when the sequence is shorter than window+1;
/// sequences shorter than 2 have no adjacent pair.
pub fn adjacent_subsequences(seq: &[u32], window: usize) -> Option<(&[u32], &[u32])> {
    assert!(window >= 1);
    let len = seq.len();
    if len < 2 {
        return None;
    }
    let w = window.min(len - 1);
    Some((&seq[len - w - 1..len - 1], &seq[len - w..len]))
}

/// Order-destroyed copy: a uniform permutation rejected until no position
/// keeps its original index (16 tries, then a rotation, which is always a
/// valid derangement for len >= 2). Preserves the item multiset.
pub fn derangement<R: Rng>(seq: &[u32], rng: &mut R) -> Vec<u32> {
    let len = seq.len();
    if len < 2 {
        return seq.to_vec();
    }
    let mut perm: Vec<usize> = (0..len).collect();
    for _ in 0..16 {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm.iter().map(|&p| seq[p]).collect();
        }
    }
    let mut out = seq[1..].to_vec();
    out.push(seq[0]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_single_user_file() {
        let f = write_csv("user_id,item_id,timestamp\n7,100,3\n7,200,1\n7,100,2\n");
        let (ds, stats) = load_interactions(f.path()).unwrap();
        assert_eq!(ds.num_users, 1);
        assert_eq!(ds.num_items, 2);
        assert_eq!(stats.rows, 3);
        // sorted by timestamp: item 200 (t=1), 100 (t=2), 100 (t=3)
        assert_eq!(ds.sequences[0].items, vec![1, 0, 0]);
    }

    #[test]
    fn duplicates_are_kept() {
        let f = write_csv("user_id,item_id,timestamp\n1,5,10\n1,5,10\n1,5,10\n");
        let (ds, _) = load_interactions(f.path()).unwrap();
        assert_eq!(ds.sequences[0].items, vec![0, 0, 0]);
    }

    #[test]
    fn timestamp_ties_keep_file_order() {
        let f = write_csv("user_id,item_id,timestamp\n1,10,5\n1,20,5\n1,30,5\n");
        let (ds, _) = load_interactions(f.path()).unwrap();
        assert_eq!(ds.sequences[0].items, vec![0, 1, 2]);
    }

    #[test]
    fn short_users_are_dropped_and_counted() {
        let f = write_csv(
            "user_id,item_id,timestamp\n1,10,1\n1,11,2\n1,12,3\n2,10,1\n2,11,2\n3,10,1\n",
        );
        let (ds, stats) = load_interactions(f.path()).unwrap();
        assert_eq!(ds.num_users, 1);
        assert_eq!(stats.users_dropped, 2);
        assert_eq!(stats.users_kept, 1);
    }

    #[test]
    fn items_reindexed_over_survivors_only() {
        // user 2 is dropped, so its exclusive item 99 must not claim an id
        let f = write_csv(
            "user_id,item_id,timestamp\n2,99,1\n1,10,1\n1,11,2\n1,10,3\n",
        );
        let (ds, _) = load_interactions(f.path()).unwrap();
        assert_eq!(ds.num_items, 2);
        assert_eq!(ds.sequences[0].items, vec![0, 1, 0]);
    }

    #[test]
    fn parse_error_names_line() {
        let f = write_csv("user_id,item_id,timestamp\n1,10,1\n1,x,2\n");
        let err = load_interactions(f.path()).unwrap_err();
        match err {
            // file line number, counting the header as line 1
            DataError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_header_is_rejected() {
        let f = write_csv("1,10,1\n1,11,2\n1,12,3\n");
        assert!(matches!(
            load_interactions(f.path()).unwrap_err(),
            DataError::BadHeader(_)
        ));
    }

    #[test]
    fn all_users_filtered_is_an_error() {
        let f = write_csv("user_id,item_id,timestamp\n1,10,1\n2,11,2\n");
        assert!(matches!(
            load_interactions(f.path()).unwrap_err(),
            DataError::EmptyDataset
        ));
    }

    #[test]
    fn crlf_is_accepted() {
        let f = write_csv("user_id,item_id,timestamp\r\n1,10,1\r\n1,11,2\r\n1,12,3\r\n");
        let (ds, _) = load_interactions(f.path()).unwrap();
        assert_eq!(ds.sequences[0].items.len(), 3);
    }

    fn small_synth(seed: u64, skew: f64) -> Dataset {
        synth_generate(&SynthParams {
            num_users: 300,
            num_items: 50,
            seq_len_min: 20,
            seq_len_max: 40,
            transition_skew: skew,
            seed,
        })
    }

    #[test]
    fn synth_is_deterministic() {
        assert_eq!(small_synth(9, 0.8), small_synth(9, 0.8));
        assert_ne!(small_synth(9, 0.8), small_synth(10, 0.8));
    }

    #[test]
    fn synth_ids_in_range() {
        let ds = small_synth(3, 0.5);
        for seq in &ds.sequences {
            assert!(seq.items.iter().all(|&it| (it as usize) < ds.num_items));
            assert!(seq.items.len() >= 20 && seq.items.len() <= 40);
        }
    }

    #[test]
    fn high_skew_makes_bigrams_predictive() {
        // estimate each item's most frequent successor from train positions,
        // then predict the held-out test target from the item before it
        let mut ds = small_synth(42, 0.9);
        leave_one_out_split(&mut ds);
        let m = ds.num_items;
        let mut counts = vec![vec![0u32; m]; m];
        for seq in &ds.sequences {
            let train = seq.train_items();
            for w in train.windows(2) {
                counts[w[0] as usize][w[1] as usize] += 1;
            }
        }
        let argmax: Vec<u32> = counts
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by_key(|(_, &c)| c)
                    .map(|(i, _)| i as u32)
                    .unwrap()
            })
            .collect();
        let mut hits = 0usize;
        for seq in &ds.sequences {
            let n = seq.items.len();
            let prev = seq.items[n - 2];
            if argmax[prev as usize] == seq.items[n - 1] {
                hits += 1;
            }
        }
        let hr = hits as f64 / ds.sequences.len() as f64;
        assert!(hr > 0.8, "bigram oracle HR@1 = {hr}, expected ~0.9");
    }

    #[test]
    fn popularity_prior_is_skewed_toward_low_ids() {
        let ds = small_synth(5, 0.0);
        let mut counts = vec![0u64; ds.num_items];
        for seq in &ds.sequences {
            for &it in &seq.items {
                counts[it as usize] += 1;
            }
        }
        let head: u64 = counts[..5].iter().sum();
        let tail: u64 = counts[ds.num_items - 5..].iter().sum();
        assert!(
            head > 5 * tail,
            "head {head} should dominate tail {tail} under the harmonic prior"
        );
    }

    #[test]
    fn split_marks_last_two_positions() {
        let mut ds = Dataset {
            num_users: 1,
            num_items: 5,
            sequences: vec![InteractionSequence {
                user_id: 0,
                items: vec![0, 1, 2],
                split: vec![SplitMark::Train; 3],
            }],
        };
        let report = leave_one_out_split(&mut ds);
        assert_eq!(report.marked, 1);
        let s = &ds.sequences[0];
        assert_eq!(s.train_items(), &[0]);
        assert_eq!(s.valid_target(), Some(1));
        assert_eq!(s.test_target(), Some(2));
    }

    #[test]
    fn split_length_ten_leaves_eight_train() {
        let mut ds = Dataset {
            num_users: 1,
            num_items: 20,
            sequences: vec![InteractionSequence {
                user_id: 0,
                items: (0..10).collect(),
                split: vec![SplitMark::Train; 10],
            }],
        };
        leave_one_out_split(&mut ds);
        assert_eq!(ds.sequences[0].train_items().len(), 8);
    }

    #[test]
    fn split_skips_short_sequences_and_preserves_items() {
        let mut ds = Dataset {
            num_users: 2,
            num_items: 5,
            sequences: vec![
                InteractionSequence {
                    user_id: 0,
                    items: vec![1, 2],
                    split: vec![SplitMark::Train; 2],
                },
                InteractionSequence {
                    user_id: 1,
                    items: vec![3, 4, 0, 1],
                    split: vec![SplitMark::Train; 4],
                },
            ],
        };
        let before: Vec<Vec<u32>> = ds.sequences.iter().map(|s| s.items.clone()).collect();
        let report = leave_one_out_split(&mut ds);
        assert_eq!(report.skipped, 1);
        assert_eq!(report.marked, 1);
        let after: Vec<Vec<u32>> = ds.sequences.iter().map(|s| s.items.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let mut ds = Dataset {
            num_users: 1,
            num_items: 20,
            sequences: vec![InteractionSequence {
                user_id: 0,
                items: (0..10).collect(),
                split: vec![SplitMark::Train; 10],
            }],
        };
        truncate_sequences(&mut ds, 4);
        assert_eq!(ds.sequences[0].items, vec![6, 7, 8, 9]);
        assert_eq!(ds.sequences[0].split.len(), 4);
    }

    #[test]
    fn identity_policy_returns_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq = vec![3, 1, 4, 1, 5];
        let out = augment_sequence(&seq, &AugmentationPolicy::identity(), 99, &mut rng);
        assert_eq!(out, seq);
    }

    #[test]
    fn crop_keeps_contiguous_half() {
        let policy = AugmentationPolicy {
            crop_prob: 1.0,
            crop_ratio: 0.5,
            ..AugmentationPolicy::identity()
        };
        let seq: Vec<u32> = (10..18).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let out = augment_sequence(&seq, &policy, 99, &mut rng);
            assert_eq!(out.len(), 4);
            let start = out[0] - 10;
            let expect: Vec<u32> = (10 + start..10 + start + 4).collect();
            assert_eq!(out, expect, "crop window must be contiguous");
        }
    }

    #[test]
    fn mask_replaces_ceil_ratio_positions() {
        let policy = AugmentationPolicy {
            mask_prob: 1.0,
            mask_ratio: 0.3,
            ..AugmentationPolicy::identity()
        };
        let seq: Vec<u32> = (0..5).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment_sequence(&seq, &policy, 42, &mut rng);
        // ceil(0.3 * 5) = 2 masked positions
        assert_eq!(out.iter().filter(|&&x| x == 42).count(), 2);
        assert_eq!(out.len(), 5);
    }

    #[test]
    fn augmentation_output_draws_from_input_and_mask_only() {
        let policy = AugmentationPolicy {
            crop_prob: 0.5,
            crop_ratio: 0.6,
            mask_prob: 0.5,
            mask_ratio: 0.4,
            reorder_prob: 0.5,
            reorder_window: 3,
        };
        let seq = vec![7, 8, 9, 7, 8, 11, 12];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let out = augment_sequence(&seq, &policy, 99, &mut rng);
            assert!(!out.is_empty());
            assert!(out.iter().all(|x| seq.contains(x) || *x == 99));
        }
    }

    #[test]
    fn augmentation_is_deterministic_per_rng_state() {
        let policy = AugmentationPolicy {
            crop_prob: 0.7,
            crop_ratio: 0.5,
            mask_prob: 0.7,
            mask_ratio: 0.3,
            reorder_prob: 0.7,
            reorder_window: 3,
        };
        let seq: Vec<u32> = (0..12).collect();
        let a = augment_sequence(&seq, &policy, 99, &mut ChaCha8Rng::seed_from_u64(5));
        let b = augment_sequence(&seq, &policy, 99, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let original = seq.clone();
        assert_eq!(seq, original, "input must not be mutated");
    }

    #[test]
    fn adjacent_windows_offset_by_one() {
        let seq = [10u32, 11, 12, 13];
        assert_eq!(
            adjacent_subsequences(&seq, 3),
            Some((&seq[0..3], &seq[1..4]))
        );
        let two = [5u32, 6];
        assert_eq!(
            adjacent_subsequences(&two, 3),
            Some((&two[0..1], &two[1..2]))
        );
        assert_eq!(
            adjacent_subsequences(&seq, 1),
            Some((&seq[2..3], &seq[3..4]))
        );
        assert_eq!(adjacent_subsequences(&[1u32], 3), None);
    }

    #[test]
    fn derangement_moves_every_position() {
        let seq: Vec<u32> = (0..10).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..30 {
            let out = derangement(&seq, &mut rng);
            assert!(out.iter().enumerate().all(|(i, &v)| v != seq[i]));
            let mut sorted = out.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, seq, "derangement must preserve the multiset");
        }
    }
}
