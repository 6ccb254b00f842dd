//! Ranking metrics over filtered top-K lists: hit rate, NDCG, and the
//! per-target exposure ratio used to quantify promotion attacks.

use std::collections::BTreeSet;

use crate::encoder::{encode, score_items, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub user_id: u32,
    /// Top-K item ids, score descending, ties broken by ascending id.
    pub ranked: Vec<u32>,
    pub test_target: Option<u32>,
    /// 1-based rank of the target among all non-excluded items, regardless
    /// of K, so one scoring pass serves every cutoff.
    pub target_rank: Option<usize>,
}

/// Scores every real item from the encoding of `seq`, drops `exclude`, and
/// returns the K best. K larger than the candidate pool is clamped with a
/// warning on stderr.
pub fn top_k(
    params: &ModelParams,
    seq: &[u32],
    test_target: Option<u32>,
    k: usize,
    exclude: &BTreeSet<u32>,
) -> RankingResult {
    let user_unknown = u32::MAX;
    top_k_for_user(params, user_unknown, seq, test_target, k, exclude)
}

pub fn top_k_for_user(
    params: &ModelParams,
    user_id: u32,
    seq: &[u32],
    test_target: Option<u32>,
    k: usize,
    exclude: &BTreeSet<u32>,
) -> RankingResult {
    let (h, _) = encode(params, seq).expect("evaluation sequence nonempty");
    let logits = score_items(params, &h);
    rank_from_scores(user_id, &logits, test_target, k, exclude)
}

/// Ranking core, separated so oracles can feed raw scores directly.
pub fn rank_from_scores(
    user_id: u32,
    scores: &[f64],
    test_target: Option<u32>,
    k: usize,
    exclude: &BTreeSet<u32>,
) -> RankingResult {
    let m = scores.len();
    let mut candidates: Vec<u32> = (0..m as u32).filter(|id| !exclude.contains(id)).collect();
    let k_eff = if k > candidates.len() {
        eprintln!(
            "warning: top-{k} requested but only {} candidates remain after exclusion; clamping",
            candidates.len()
        );
        candidates.len()
    } else {
        k
    };
    // score descending, id ascending on ties; scores are finite by invariant
    candidates.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .expect("finite scores")
            .then(a.cmp(&b))
    });

    let target_rank = test_target.and_then(|t| {
        if exclude.contains(&t) || (t as usize) >= m {
            return None;
        }
        let ts = scores[t as usize];
        let above = candidates
            .iter()
            .filter(|&&c| {
                let cs = scores[c as usize];
                cs > ts || (cs == ts && c < t)
            })
            .count();
        Some(above + 1)
    });

    RankingResult {
        user_id,
        ranked: candidates[..k_eff].to_vec(),
        test_target,
        target_rank,
    }
}

/// Fraction of users whose test target landed in the top K.
pub fn hr_at_k(results: &[RankingResult], k: usize) -> f64 {
    assert!(!results.is_empty(), "hr over empty result set");
    let hits = results
        .iter()
        .filter(|r| r.target_rank.is_some_and(|rank| rank <= k))
        .count();
    hits as f64 / results.len() as f64
}

/// Mean over users of 1/log2(1 + rank) when the target ranks within K, 0
/// otherwise.
pub fn ndcg_at_k(results: &[RankingResult], k: usize) -> f64 {
    assert!(!results.is_empty(), "ndcg over empty result set");
    let total: f64 = results
        .iter()
        .map(|r| match r.target_rank {
            Some(rank) if rank <= k => 1.0 / ((1 + rank) as f64).log2(),
            _ => 0.0,
        })
        .sum();
    total / results.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureReport {
    /// Mean over targets with a nonempty eligible set.
    pub mean: f64,
    pub per_target: Vec<(u32, f64)>,
    /// Targets every user has already consumed; excluded from the mean.
    pub skipped_targets: Vec<u32>,
}

/// Exposure ratio at K: for each target, the fraction of users who have not
/// consumed it whose top-K list contains it; averaged over targets.
/// `consumed[i]` is the full item set of the user behind `results[i]`.
pub fn er_at_k(
    results: &[RankingResult],
    consumed: &[BTreeSet<u32>],
    targets: &[u32],
    k: usize,
) -> ExposureReport {
    assert_eq!(results.len(), consumed.len(), "one consumed set per result");
    assert!(!targets.is_empty(), "exposure needs at least one target");
    let mut per_target = Vec::new();
    let mut skipped = Vec::new();
    for &t in targets {
        let mut eligible = 0usize;
        let mut exposed = 0usize;
        for (r, seen) in results.iter().zip(consumed.iter()) {
            if seen.contains(&t) {
                continue;
            }
            eligible += 1;
            let cut = k.min(r.ranked.len());
            if r.ranked[..cut].contains(&t) {
                exposed += 1;
            }
        }
        if eligible == 0 {
            eprintln!("warning: target {t} consumed by every user; skipping in ER@{k}");
            skipped.push(t);
        } else {
            per_target.push((t, exposed as f64 / eligible as f64));
        }
    }
    let mean = if per_target.is_empty() {
        0.0
    } else {
        per_target.iter().map(|(_, v)| v).sum::<f64>() / per_target.len() as f64
    };
    ExposureReport {
        mean,
        per_target,
        skipped_targets: skipped,
    }
}
