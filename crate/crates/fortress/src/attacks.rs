//! Malicious-client implementations: sequence-synthesis promotion and
//! embedding-space camouflage.
//!
//! Both are deliberate re-derivations from one-line behavioral summaries,
//! not ports of the original attack code; they exist to exercise the defense
//! surface, not to be optimal attackers. Attackers are white-box (they see
//! the broadcast model) and data-free, but are granted the true top-popular
//! item list as side knowledge.
//!
//! Updates produced here are type-identical to benign ones; the server-side
//! code path consumes them with provenance stripped.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientUpdate, Provenance, GRAD_CLIP_NORM};
use crate::encoder::{encode_all, score_backward, score_items, ModelParams};
use crate::numerics::{l2_norm, softmax_cross_entropy, standard_normal, Vec64};

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("camouflage requires a nonempty popular-item set")]
    EmptyPopularSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Promotion,
    Camouflage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub target_items: Vec<u32>,
    pub malicious_fraction: f64,
    pub pseudo_users_per_client: usize,
    pub pseudo_seq_len: usize,
    pub alt_item_count: usize,
    pub camo_steps: usize,
    pub norm_match: bool,
    /// Side knowledge granted to attackers: the top fraction of items by
    /// true training-interaction count. Pessimistic for the defender.
    pub popular_top_fraction: f64,
    /// First round the malicious clients act; before it they participate
    /// like any benign client. Lets a single run establish a warm
    /// pre-attack model before the campaign begins.
    pub start_round: u64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            kind: AttackKind::None,
            target_items: Vec::new(),
            malicious_fraction: 0.05,
            pseudo_users_per_client: 4,
            pseudo_seq_len: 20,
            alt_item_count: 2,
            camo_steps: 10,
            norm_match: true,
            popular_top_fraction: 0.01,
            start_round: 1,
        }
    }
}

impl AttackSpec {
    pub fn check(&self, num_items: usize) -> Result<(), String> {
        if self.kind == AttackKind::None {
            return Ok(());
        }
        if self.target_items.is_empty() {
            return Err("attack.target_items must be nonempty when an attack is enabled".into());
        }
        for &t in &self.target_items {
            if t as usize >= num_items {
                return Err(format!(
                    "attack.target_items contains {t}, but item ids end at {}",
                    num_items - 1
                ));
            }
        }
        if !(0.0..1.0).contains(&self.malicious_fraction) {
            return Err("attack.malicious_fraction must be in [0,1)".into());
        }
        if self.pseudo_users_per_client < 1 {
            return Err("attack.pseudo_users_per_client must be >= 1".into());
        }
        if self.pseudo_seq_len < 2 {
            return Err("attack.pseudo_seq_len must be >= 2".into());
        }
        if self.kind == AttackKind::Camouflage && self.camo_steps < 1 {
            return Err("attack.camo_steps must be >= 1".into());
        }
        if !(self.popular_top_fraction > 0.0 && self.popular_top_fraction <= 1.0) {
            return Err("attack.popular_top_fraction must be in (0,1]".into());
        }
        if self.start_round < 1 {
            return Err("attack.start_round must be >= 1 (rounds are 1-based)".into());
        }
        Ok(())
    }
}

/// The last floor(fraction * num_users) user ids act maliciously. Identity
/// is fixed for a whole run so per-round sampling hits a stable adversary
/// population.
pub fn malicious_client_ids(num_users: usize, fraction: f64) -> Vec<u32> {
    let count = (fraction * num_users as f64).floor() as usize;
    ((num_users - count) as u32..num_users as u32).collect()
}

fn norm_match_delta(
    global: &ModelParams,
    trained: ModelParams,
    enabled: bool,
    prev_median_norm: Option<f64>,
) -> ModelParams {
    let mut delta = trained.delta(global);
    if enabled {
        // No statistic yet (first attacked round): send the raw update.
        if let Some(stat) = prev_median_norm {
            let n = delta.l2_norm();
            if n > 0.0 && stat > 0.0 {
                delta.scale(stat / n);
            }
        }
    }
    let mut out = global.clone();
    out.axpy(1.0, &delta);
    out
}

/// Promotion via pseudo-users: synthesizes plausible sequences from the
/// popularity prior, then trains toward the target item as the label at
/// every prefix, with a half-weight push toward a few random "alternative"
/// items at the final prefix to dilute the true competitors.
pub fn promotion_update<R: Rng>(
    global: &ModelParams,
    spec: &AttackSpec,
    popular_items: &[u32],
    prev_median_norm: Option<f64>,
    epochs: usize,
    lr: f64,
    client_id: u32,
    round: u64,
    rng: &mut R,
) -> ClientUpdate {
    assert_eq!(spec.kind, AttackKind::Promotion);
    assert!(!popular_items.is_empty(), "popularity prior required");
    assert!(!spec.target_items.is_empty());
    let m = global.num_items();

    // All randomness is drawn up front; training is deterministic after.
    let mut users: Vec<(Vec<u32>, u32, Vec<usize>)> = Vec::new();
    for p in 0..spec.pseudo_users_per_client {
        let seq: Vec<u32> = (0..spec.pseudo_seq_len)
            .map(|_| popular_items[rng.gen_range(0..popular_items.len())])
            .collect();
        let target = spec.target_items[p % spec.target_items.len()];
        let alts: Vec<usize> = (0..spec.alt_item_count)
            .map(|_| rng.gen_range(0..m))
            .collect();
        users.push((seq, target, alts));
    }

    let mut params = global.clone();
    for _ in 0..epochs.max(1) {
        for (seq, target, alts) in &users {
            let (hs, trace) = encode_all(&params, seq).expect("pseudo sequence is nonempty");
            let steps = hs.len();
            let mut grad = params.zeros_like();
            let mut upstreams: Vec<Option<Vec64>> = vec![None; steps];
            for (t, h) in hs.iter().enumerate() {
                let logits = score_items(&params, h);
                let (_, mut dlogits) =
                    softmax_cross_entropy(&logits, *target as usize).expect("target id in range");
                crate::numerics::scale(&mut dlogits, 1.0 / steps as f64);
                let dh = score_backward(&params, h, &dlogits, &mut grad);
                upstreams[t] = Some(dh);
            }
            if !alts.is_empty() {
                let h = &hs[steps - 1];
                let logits = score_items(&params, h);
                let w = 0.5 / alts.len() as f64;
                for &alt in alts {
                    let (_, mut dlogits) =
                        softmax_cross_entropy(&logits, alt).expect("alt id in range");
                    crate::numerics::scale(&mut dlogits, w);
                    let dh = score_backward(&params, h, &dlogits, &mut grad);
                    let slot = upstreams[steps - 1].as_mut().unwrap();
                    crate::numerics::axpy(slot, 1.0, &dh);
                }
            }
            crate::encoder::backward_steps(&params, &trace, &upstreams, &mut grad);

            let gn = grad.l2_norm();
            if gn > GRAD_CLIP_NORM {
                grad.scale(GRAD_CLIP_NORM / gn);
            }
            params.axpy(-lr, &grad);
        }
    }

    let params = norm_match_delta(global, params, spec.norm_match, prev_median_norm);
    ClientUpdate {
        params,
        n_u: spec.pseudo_users_per_client * spec.pseudo_seq_len,
        provenance: Provenance::Malicious,
        client_id,
        round,
    }
}

fn target_rank(logits: &[f64], target: usize) -> usize {
    let ts = logits[target];
    1 + logits
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > ts || (s == ts && j < target))
        .count()
}

/// Camouflage: probes the scorer with random hidden states, keeps the ones
/// that rank the target worst, then walks the target embedding rows toward
/// the frozen popular centroid while closing the hard probes' score deficit.
/// Only embedding rows move; the encoder delta is exactly zero.
pub fn camouflage_update<R: Rng>(
    global: &ModelParams,
    spec: &AttackSpec,
    popular_items: &[u32],
    prev_median_norm: Option<f64>,
    lr: f64,
    client_id: u32,
    round: u64,
    rng: &mut R,
) -> Result<ClientUpdate, AttackError> {
    assert_eq!(spec.kind, AttackKind::Camouflage);
    if popular_items.is_empty() {
        return Err(AttackError::EmptyPopularSet);
    }
    let d = global.dim();

    // Gaussian probes, unit length; 4x oversampling before hardness mining.
    let probe_count = spec.pseudo_users_per_client * 4;
    let mut probes: Vec<Vec64> = Vec::with_capacity(probe_count);
    for _ in 0..probe_count {
        let mut v = Vec64::zeros(d);
        for x in v.iter_mut() {
            *x = standard_normal(rng);
        }
        let n = l2_norm(&v);
        if n > 0.0 {
            crate::numerics::scale(&mut v, 1.0 / n);
        }
        probes.push(v);
    }
    // Hardness = summed target rank under the broadcast model; worst first,
    // probe index breaks ties so mining is deterministic.
    let mut order: Vec<usize> = (0..probes.len()).collect();
    let hardness: Vec<usize> = probes
        .iter()
        .map(|h| {
            let logits = score_items(global, h);
            spec.target_items
                .iter()
                .map(|&t| target_rank(&logits, t as usize))
                .sum()
        })
        .collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(hardness[i]), i));
    order.truncate(spec.pseudo_users_per_client);
    let hard: Vec<&Vec64> = order.iter().map(|&i| &probes[i]).collect();

    // Centroid of the popular rows, frozen from the broadcast model.
    let mut centroid = Vec64::zeros(d);
    for &p in popular_items {
        crate::numerics::axpy(&mut centroid, 1.0, global.item_embeddings.row(p as usize));
    }
    crate::numerics::scale(&mut centroid, 1.0 / popular_items.len() as f64);

    let mut params = global.clone();
    let ce_w = 1.0 / (hard.len() * spec.target_items.len()) as f64;
    for _ in 0..spec.camo_steps {
        let mut grad = params.zeros_like();
        for &t in &spec.target_items {
            let row = params.item_embeddings.row(t as usize);
            let g = grad.item_embeddings.row_mut(t as usize);
            for i in 0..d {
                g[i] += 2.0 * (row[i] - centroid[i]);
            }
        }
        for h in &hard {
            let logits = score_items(&params, h);
            for &t in &spec.target_items {
                let (_, mut dlogits) =
                    softmax_cross_entropy(&logits, t as usize).expect("target id in range");
                crate::numerics::scale(&mut dlogits, ce_w);
                let _ = score_backward(&params, h, &dlogits, &mut grad);
            }
        }
        // Embedding rows only; encoder weights never move.
        params.item_embeddings.axpy(-lr, &grad.item_embeddings);
    }

    let params = norm_match_delta(global, params, spec.norm_match, prev_median_norm);
    Ok(ClientUpdate {
        params,
        n_u: spec.pseudo_users_per_client * spec.pseudo_seq_len,
        provenance: Provenance::Malicious,
        client_id,
        round,
    })
}
