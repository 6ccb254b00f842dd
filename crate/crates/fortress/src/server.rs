//! Server-side round logic: client sampling, weighted FedAvg, popularity
//! bookkeeping, hot/suspicious set identification, and the defense gradient
//! step on item-embedding rows.
//!
//! The server sees parameter bundles and interaction counts, nothing else:
//! no raw sequences, no provenance tags.

use rand::Rng;
use thiserror::Error;

use crate::client::ClientUpdate;
use crate::encoder::ModelParams;
use crate::numerics::{axpy, cosine_sim, cosine_sim_backward, l2_norm, Mat64, Vec64};

#[derive(Debug, Error, PartialEq)]
pub enum ServerError {
    #[error("round produced no client updates")]
    EmptyRound,
    #[error("total aggregation weight is zero")]
    ZeroWeight,
}

/// What the server is allowed to see of a client update. Provenance is a
/// harness-only field and deliberately does not cross this boundary.
#[derive(Debug, Clone)]
pub struct ServerUpdate {
    pub client_id: u32,
    pub n_u: usize,
    pub params: ModelParams,
}

impl From<&ClientUpdate> for ServerUpdate {
    fn from(u: &ClientUpdate) -> Self {
        ServerUpdate {
            client_id: u.client_id,
            n_u: u.n_u,
            params: u.params.clone(),
        }
    }
}

/// Uniform sample without replacement of max(1, ceil(fraction * n)) client
/// ids, returned sorted. Determinism comes from the caller seeding the rng
/// from (base_seed, round).
pub fn sample_clients<R: Rng>(num_clients: usize, fraction: f64, rng: &mut R) -> Vec<u32> {
    assert!(num_clients > 0);
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction in (0,1]");
    let size = ((fraction * num_clients as f64).ceil() as usize)
        .max(1)
        .min(num_clients);
    let mut ids: Vec<u32> = (0..num_clients as u32).collect();
    for i in 0..size {
        let j = rng.gen_range(i..num_clients);
        ids.swap(i, j);
    }
    ids.truncate(size);
    ids.sort_unstable();
    ids
}

/// Interaction-weighted FedAvg: theta = sum_u (n_u / sum_k n_k) theta_u.
/// Updates are summed in client-id order so the result is bit-identical
/// under any permutation of the input list.
pub fn aggregate(updates: &[ServerUpdate]) -> Result<ModelParams, ServerError> {
    if updates.is_empty() {
        return Err(ServerError::EmptyRound);
    }
    let total: f64 = updates.iter().map(|u| u.n_u as f64).sum();
    if total == 0.0 {
        return Err(ServerError::ZeroWeight);
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);

    let mut out = updates[0].params.zeros_like();
    for &i in &order {
        let u = &updates[i];
        out.axpy(u.n_u as f64 / total, &u.params);
    }
    Ok(out)
}

/// Per-item statistics the server accumulates across rounds to derive the
/// hot and suspicious sets. All vectors have length M (real items only).
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityState {
    /// EMA of the mean per-update L2 movement of each embedding row.
    pub ema_magnitude: Vec<f64>,
    /// How many (round, update) pairs changed the row at all. Dense softmax
    /// training touches every row of every update, so with this trainer the
    /// low-frequency filter passes everything and suspicion rests on the
    /// drift percentile; the counter still discriminates for sparse-update
    /// trainers.
    pub update_frequency: Vec<u64>,
    /// Cosine of this round's row displacement against the direction from
    /// the row to the current hot centroid.
    pub drift_score: Vec<f64>,
    pub rounds_completed: u64,
    /// Mean of the hot rows, refreshed by identify_sets.
    pub hot_centroid: Option<Vec64>,
}

impl PopularityState {
    pub fn new(num_items: usize) -> Self {
        PopularityState {
            ema_magnitude: vec![0.0; num_items],
            update_frequency: vec![0; num_items],
            drift_score: vec![0.0; num_items],
            rounds_completed: 0,
            hot_centroid: None,
        }
    }

    pub fn num_items(&self) -> usize {
        self.ema_magnitude.len()
    }
}

/// Folds one round of client updates into the popularity state. `prev` is
/// the global bundle broadcast this round, `new_params` the post-aggregation
/// result; deltas are taken against `prev`.
pub fn update_popularity(
    state: &mut PopularityState,
    prev: &ModelParams,
    updates: &[ServerUpdate],
    new_params: &ModelParams,
    ema_beta: f64,
) {
    let m = state.num_items();
    assert_eq!(m, prev.num_items(), "state sized for this item universe");
    assert!((0.0..1.0).contains(&ema_beta));
    let d = prev.dim();

    // per update: every real row's delta norm
    let mut row_norms: Vec<Vec<f64>> = Vec::with_capacity(updates.len());
    let mut delta = vec![0.0; d];
    for u in updates {
        let mut norms = Vec::with_capacity(m);
        for k in 0..m {
            let a = u.params.item_embeddings.row(k);
            let b = prev.item_embeddings.row(k);
            for i in 0..d {
                delta[i] = a[i] - b[i];
            }
            norms.push(l2_norm(&delta));
        }
        row_norms.push(norms);
    }

    let inv_updates = if updates.is_empty() {
        0.0
    } else {
        1.0 / updates.len() as f64
    };
    for k in 0..m {
        let mean_mag: f64 = row_norms.iter().map(|n| n[k]).sum::<f64>() * inv_updates;
        state.ema_magnitude[k] = ema_beta * state.ema_magnitude[k] + (1.0 - ema_beta) * mean_mag;
        for norms in row_norms.iter() {
            if norms[k] > 0.0 {
                state.update_frequency[k] += 1;
            }
        }
        state.drift_score[k] = match &state.hot_centroid {
            Some(c) => {
                let prev_row = prev.item_embeddings.row(k);
                let new_row = new_params.item_embeddings.row(k);
                let mut disp = vec![0.0; d];
                let mut toward = vec![0.0; d];
                for i in 0..d {
                    disp[i] = new_row[i] - prev_row[i];
                    toward[i] = c[i] - prev_row[i];
                }
                if l2_norm(&disp) == 0.0 || l2_norm(&toward) == 0.0 {
                    0.0
                } else {
                    cosine_sim(&disp, &toward)
                }
            }
            None => 0.0,
        };
    }
    state.rounds_completed += 1;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefenseHyper {
    pub lambda_sep: f64,
    pub lambda_var: f64,
    pub tau_sep: f64,
    pub hot_fraction: f64,
    pub sp_fraction: f64,
    pub neighborhood_k: usize,
    pub server_lr: f64,
    pub ema_beta: f64,
    pub steps: usize,
}

impl DefenseHyper {
    pub fn check(&self) -> Result<(), String> {
        if self.lambda_sep < 0.0 || self.lambda_var < 0.0 {
            return Err("lambda_sep and lambda_var must be >= 0".into());
        }
        if self.tau_sep <= 0.0 {
            return Err(format!("tau_sep must be > 0, got {}", self.tau_sep));
        }
        for (name, f) in [
            ("hot_fraction", self.hot_fraction),
            ("sp_fraction", self.sp_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(format!("{name} must be in (0,1), got {f}"));
            }
        }
        if self.hot_fraction + self.sp_fraction > 1.0 {
            return Err("hot_fraction + sp_fraction must be <= 1".into());
        }
        if self.neighborhood_k < 2 {
            return Err("neighborhood_k must be >= 2".into());
        }
        if self.server_lr <= 0.0 {
            return Err("server_lr must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.ema_beta) {
            return Err("ema_beta must be in [0,1)".into());
        }
        if self.steps < 1 {
            return Err("defense steps must be >= 1".into());
        }
        Ok(())
    }
}

fn nearest_rank(sorted_ascending: &[f64], q: f64) -> f64 {
    let n = sorted_ascending.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted_ascending[idx]
}

/// Derives the hot set (top EMA movement) and the suspicious set (rarely
/// visible rows drifting unusually hard toward the hot centroid). Refreshes
/// the cached hot centroid from the current embeddings. Before the first
/// completed round both sets are empty and the defense is skipped.
pub fn identify_sets(
    state: &mut PopularityState,
    params: &ModelParams,
    hyper: &DefenseHyper,
) -> (Vec<u32>, Vec<u32>) {
    if state.rounds_completed == 0 {
        return (Vec::new(), Vec::new());
    }
    let m = state.num_items();
    let d = params.dim();

    let hot_size = ((hyper.hot_fraction * m as f64).ceil() as usize).clamp(1, m);
    let mut by_magnitude: Vec<u32> = (0..m as u32).collect();
    by_magnitude.sort_by(|&a, &b| {
        state.ema_magnitude[b as usize]
            .partial_cmp(&state.ema_magnitude[a as usize])
            .expect("finite magnitudes")
            .then(a.cmp(&b))
    });
    let mut hot: Vec<u32> = by_magnitude[..hot_size].to_vec();
    hot.sort_unstable();

    let mut centroid = Vec64::zeros(d);
    for &h in &hot {
        axpy(&mut centroid, 1.0, params.item_embeddings.row(h as usize));
    }
    crate::numerics::scale(&mut centroid, 1.0 / hot.len() as f64);
    state.hot_centroid = Some(centroid);

    let mut freqs: Vec<f64> = state.update_frequency.iter().map(|&f| f as f64).collect();
    freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let freq_cut = nearest_rank(&freqs, hyper.sp_fraction);
    let mut drifts = state.drift_score.clone();
    drifts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let drift_cut = nearest_rank(&drifts, 0.9);

    let sp_cap = ((hyper.sp_fraction * m as f64).ceil() as usize).clamp(1, m);
    let mut candidates: Vec<u32> = (0..m as u32)
        .filter(|&k| {
            let k = k as usize;
            (state.update_frequency[k] as f64) <= freq_cut
                && state.drift_score[k] > drift_cut // strict: flat profiles yield nothing
                && !hot.contains(&(k as u32))
        })
        .collect();
    candidates.sort_by(|&a, &b| {
        state.drift_score[b as usize]
            .partial_cmp(&state.drift_score[a as usize])
            .expect("finite drift")
            .then(a.cmp(&b))
    });
    candidates.truncate(sp_cap);
    candidates.sort_unstable();

    (hot, candidates)
}

/// Separation loss, exactly as specified:
///   sum over hot i of [ -1/tau + log sum over sp j of exp(sim(v_i, v_j)/tau) ]
/// Gradients land only on listed rows. Either set empty gives (0, zeros).
pub fn sep_loss(emb: &Mat64, hot: &[u32], sp: &[u32], tau: f64) -> (f64, Mat64) {
    assert!(tau > 0.0, "tau_sep must be positive");
    let mut grad = Mat64::zeros(emb.rows, emb.cols);
    if hot.is_empty() || sp.is_empty() {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    let mut logits = vec![0.0; sp.len()];
    for &i in hot {
        let vi = emb.row(i as usize);
        for (jj, &j) in sp.iter().enumerate() {
            logits[jj] = cosine_sim(vi, emb.row(j as usize)) / tau;
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        loss += -1.0 / tau + mx + sum_exp.ln();

        for (jj, &j) in sp.iter().enumerate() {
            let p = (logits[jj] - mx).exp() / sum_exp;
            let upstream = p / tau;
            // accumulate into two distinct rows of the same matrix
            let i_idx = i as usize;
            let j_idx = j as usize;
            if i_idx == j_idx {
                // identical row on both sides: sim is constant 1, gradient 0
                continue;
            }
            let (lo, hi, swapped) = if i_idx < j_idx {
                (i_idx, j_idx, false)
            } else {
                (j_idx, i_idx, true)
            };
            let (head, tail) = grad.data.split_at_mut(hi * grad.cols);
            let row_lo = &mut head[lo * grad.cols..(lo + 1) * grad.cols];
            let row_hi = &mut tail[..grad.cols];
            let (ga, gb) = if swapped {
                (row_hi, row_lo)
            } else {
                (row_lo, row_hi)
            };
            cosine_sim_backward(vi, emb.row(j_idx), upstream, ga, gb);
        }
    }
    (loss, grad)
}

/// k-nearest rows (cosine, self included, ties by ascending id) among the
/// first `real_rows` rows, per hot item. Selection order is deterministic.
pub fn neighborhoods(emb: &Mat64, real_rows: usize, hot: &[u32], k: usize) -> Vec<Vec<u32>> {
    let k = k.min(real_rows);
    hot.iter()
        .map(|&i| {
            let vi = emb.row(i as usize);
            let mut ids: Vec<u32> = (0..real_rows as u32).collect();
            let sims: Vec<f64> = ids
                .iter()
                .map(|&j| cosine_sim(vi, emb.row(j as usize)))
                .collect();
            ids.sort_by(|&a, &b| {
                sims[b as usize]
                    .partial_cmp(&sims[a as usize])
                    .expect("finite sims")
                    .then(a.cmp(&b))
            });
            ids.truncate(k);
            ids.sort_unstable();
            ids
        })
        .collect()
}

/// Variance loss with the neighborhood selection frozen: for each listed
/// neighborhood, the per-dimension population variance of its rows averaged
/// over dimensions; summed over neighborhoods. Gradient of one neighborhood
/// w.r.t. member row x is (2 / (n * d)) (x - mean).
pub fn var_loss_with_neighborhoods(emb: &Mat64, neigh: &[Vec<u32>]) -> (f64, Mat64) {
    let d = emb.cols;
    let mut grad = Mat64::zeros(emb.rows, emb.cols);
    let mut loss = 0.0;
    for members in neigh {
        let n = members.len();
        if n == 0 {
            continue;
        }
        let mut mean = vec![0.0; d];
        for &j in members {
            axpy(&mut mean, 1.0, emb.row(j as usize));
        }
        crate::numerics::scale(&mut mean, 1.0 / n as f64);

        let mut var_sum = 0.0;
        for &j in members {
            let row = emb.row(j as usize);
            for i in 0..d {
                let c = row[i] - mean[i];
                var_sum += c * c;
            }
        }
        let scale = 1.0 / (n as f64 * d as f64);
        loss += var_sum * scale;
        for &j in members {
            let mut diff = vec![0.0; d];
            {
                let row = emb.row(j as usize);
                for i in 0..d {
                    diff[i] = row[i] - mean[i];
                }
            }
            axpy(grad.row_mut(j as usize), 2.0 * scale, &diff);
        }
    }
    (loss, grad)
}

pub fn var_loss(emb: &Mat64, real_rows: usize, hot: &[u32], k: usize) -> (f64, Mat64) {
    let neigh = neighborhoods(emb, real_rows, hot, k);
    var_loss_with_neighborhoods(emb, &neigh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefenseDiag {
    pub sep: f64,
    pub var: f64,
    pub hot_size: usize,
    pub sp_size: usize,
}

/// Gradient step(s) on item-embedding rows only:
///   E <- E - server_lr * grad(lambda_sep * L_sep + lambda_var * L_var)
/// Encoder weights and the mask row never move. Both lambdas zero returns
/// the input bitwise unchanged. Reported losses are pre-update values from
/// the first step.
pub fn defense_step(
    params: &ModelParams,
    hot: &[u32],
    sp: &[u32],
    hyper: &DefenseHyper,
) -> (ModelParams, DefenseDiag) {
    let mut out = params.clone();
    let mut diag = DefenseDiag {
        sep: 0.0,
        var: 0.0,
        hot_size: hot.len(),
        sp_size: sp.len(),
    };
    if (hyper.lambda_sep == 0.0 && hyper.lambda_var == 0.0) || hot.is_empty() {
        return (out, diag);
    }
    let real_rows = params.num_items();
    for step in 0..hyper.steps {
        let mut grad = Mat64::zeros(out.item_embeddings.rows, out.item_embeddings.cols);
        if hyper.lambda_sep > 0.0 {
            let (l, g) = sep_loss(&out.item_embeddings, hot, sp, hyper.tau_sep);
            if step == 0 {
                diag.sep = l;
            }
            grad.axpy(hyper.lambda_sep, &g);
        }
        if hyper.lambda_var > 0.0 {
            let (l, g) = var_loss(&out.item_embeddings, real_rows, hot, hyper.neighborhood_k);
            if step == 0 {
                diag.var = l;
            }
            grad.axpy(hyper.lambda_var, &g);
        }
        out.item_embeddings.axpy(-hyper.server_lr, &grad);
    }
    (out, diag)
}
