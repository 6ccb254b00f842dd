//! Benign client logic: next-item loss, the three contrastive views, the
//! temporal consistency penalty, and E epochs of local SGD.
//!
//! Every stochastic loss is split into a sampling step and a deterministic
//! core. The core takes the frozen draws (augmented views, noise offsets,
//! inner gradients) as explicit arguments, which is what lets the test suite
//! finite-difference the analytic gradients without chasing RNG state.

use rand::Rng;

use crate::data::{adjacent_subsequences, augment_sequence, derangement, AugmentationPolicy};
use crate::encoder::{
    backward, backward_steps, encode, encode_all, score_backward, score_items, ModelParams,
};
use crate::numerics::{axpy, info_nce, softmax_cross_entropy, standard_normal, Vec64};

/// Per-step global-norm clip keeping adversarially seeded runs finite.
pub const GRAD_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// n_u = number of training interactions (default).
    Interactions,
    /// n_u = 1 per client.
    Sequences,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientHyper {
    pub lambda_cl: f64,
    pub lambda_tcr: f64,
    pub tau: f64,
    pub noise_sigma: f64,
    pub local_epochs: usize,
    pub lr: f64,
    pub tcr_window: usize,
    pub item_view_step: f64,
    pub neg_count: usize,
    pub weight_mode: WeightMode,
    pub augmentation: AugmentationPolicy,
}

impl ClientHyper {
    pub fn check(&self) -> Result<(), String> {
        if self.lambda_cl < 0.0 || self.lambda_tcr < 0.0 {
            return Err("lambda_cl and lambda_tcr must be >= 0".into());
        }
        if self.tau <= 0.0 {
            return Err(format!("tau must be > 0, got {}", self.tau));
        }
        if self.noise_sigma < 0.0 {
            return Err("noise_sigma must be >= 0".into());
        }
        if self.local_epochs < 1 {
            return Err("local_epochs must be >= 1".into());
        }
        if self.lr <= 0.0 {
            return Err(format!("lr must be > 0, got {}", self.lr));
        }
        if self.tcr_window < 1 {
            return Err("tcr_window must be >= 1".into());
        }
        if self.item_view_step < 0.0 {
            return Err("item_view_step must be >= 0".into());
        }
        self.augmentation.check_ranges()?;
        if self.lambda_cl > 0.0 && self.augmentation.is_identity() && self.neg_count == 0 {
            return Err(
                "contrastive training needs at least one augmentation probability > 0 or neg_count > 0"
                    .into(),
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Benign,
    Malicious,
}

#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub params: ModelParams,
    pub n_u: usize,
    pub provenance: Provenance,
    pub client_id: u32,
    pub round: u64,
}

/// Mean per-component losses over the local epochs, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTrace {
    pub rec: f64,
    pub cl: f64,
    pub tcr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    ShortSequence,
    NonFiniteLoss,
}

#[derive(Debug, Clone)]
pub enum LocalTrainOutcome {
    Update {
        update: ClientUpdate,
        trace: LossTrace,
    },
    Skipped {
        client_id: u32,
        reason: SkipReason,
    },
}

/// Mean next-item cross entropy over positions 1..len, each scored from the
/// encoding of the strict prefix. Returns the loss and a full gradient bundle.
pub fn rec_loss(params: &ModelParams, seq: &[u32]) -> (f64, ModelParams) {
    assert!(seq.len() >= 2, "rec loss needs at least two positions");
    let (projected, trace) = encode_all(params, seq).expect("validated sequence");
    let terms = seq.len() - 1;
    let inv = 1.0 / terms as f64;

    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    let mut upstreams: Vec<Option<Vec64>> = vec![None; seq.len()];
    for t in 1..seq.len() {
        let logits = score_items(params, &projected[t - 1]);
        let (l, mut dlogits) = softmax_cross_entropy(&logits, seq[t] as usize)
            .expect("target id in range for real items");
        loss += l * inv;
        crate::numerics::scale(&mut dlogits, inv);
        let dh = score_backward(params, &projected[t - 1], &dlogits, &mut grad);
        upstreams[t - 1] = Some(dh);
    }
    backward_steps(params, &trace, &upstreams, &mut grad);
    (loss, grad)
}

/// Frozen draws for one sequence-view evaluation: two augmented views plus
/// order-destroyed copies of the original sequence as negatives.
#[derive(Debug, Clone)]
pub struct SequenceViewSample {
    pub view1: Vec<u32>,
    pub view2: Vec<u32>,
    pub negatives: Vec<Vec<u32>>,
}

pub fn sample_sequence_view<R: Rng>(
    seq: &[u32],
    policy: &AugmentationPolicy,
    mask_item: u32,
    neg_count: usize,
    rng: &mut R,
) -> SequenceViewSample {
    SequenceViewSample {
        view1: augment_sequence(seq, policy, mask_item, rng),
        view2: augment_sequence(seq, policy, mask_item, rng),
        negatives: (0..neg_count).map(|_| derangement(seq, rng)).collect(),
    }
}

pub fn sequence_view_core(
    params: &ModelParams,
    sample: &SequenceViewSample,
    tau: f64,
) -> (f64, ModelParams) {
    let (h1, tr1) = encode(params, &sample.view1).expect("view nonempty");
    let (h2, tr2) = encode(params, &sample.view2).expect("view nonempty");
    let mut neg_hs = Vec::with_capacity(sample.negatives.len());
    let mut neg_traces = Vec::with_capacity(sample.negatives.len());
    for n in &sample.negatives {
        let (h, tr) = encode(params, n).expect("negative nonempty");
        neg_hs.push(h);
        neg_traces.push(tr);
    }

    let (loss, grads) = info_nce(&h1, &h2, &neg_hs, tau).expect("dims agree");
    let mut grad = params.zeros_like();
    backward(params, &tr1, &grads.anchor, &mut grad);
    backward(params, &tr2, &grads.positive, &mut grad);
    for (tr, g) in neg_traces.iter().zip(grads.negatives.iter()) {
        backward(params, tr, g, &mut grad);
    }
    (loss, grad)
}

pub fn sequence_view_loss<R: Rng>(
    params: &ModelParams,
    seq: &[u32],
    policy: &AugmentationPolicy,
    neg_count: usize,
    tau: f64,
    rng: &mut R,
) -> (f64, ModelParams) {
    let sample = sample_sequence_view(seq, policy, params.mask_item(), neg_count, rng);
    sequence_view_core(params, &sample, tau)
}

/// Frozen noise for one user-view evaluation. Negatives use inflated noise
/// (4x sigma) and stand in for the other-user embeddings a federated client
/// cannot see.
#[derive(Debug, Clone)]
pub struct UserViewSample {
    pub eps1: Vec64,
    pub eps2: Vec64,
    pub neg_eps: Vec<Vec64>,
}

pub const USER_VIEW_NEG_SIGMA_FACTOR: f64 = 4.0;

pub fn sample_user_view<R: Rng>(
    dim: usize,
    noise_sigma: f64,
    neg_count: usize,
    rng: &mut R,
) -> UserViewSample {
    let mut draw = |sigma: f64| {
        Vec64::from_vec((0..dim).map(|_| sigma * standard_normal(rng)).collect())
    };
    UserViewSample {
        eps1: draw(noise_sigma),
        eps2: draw(noise_sigma),
        neg_eps: (0..neg_count)
            .map(|_| draw(USER_VIEW_NEG_SIGMA_FACTOR * noise_sigma))
            .collect(),
    }
}

pub fn user_view_core(
    params: &ModelParams,
    seq: &[u32],
    sample: &UserViewSample,
    tau: f64,
) -> (f64, ModelParams) {
    let (u, trace) = encode(params, seq).expect("nonempty sequence");
    let d = u.dim();
    let offset = |eps: &Vec64| {
        let mut v = u.clone();
        axpy(&mut v, 1.0, eps);
        v
    };
    let u1 = offset(&sample.eps1);
    let u2 = offset(&sample.eps2);
    let negs: Vec<Vec64> = sample.neg_eps.iter().map(&offset).collect();

    let (loss, grads) = info_nce(&u1, &u2, &negs, tau).expect("dims agree");
    // every view is u plus a constant, so all gradients flow straight to u
    let mut du = Vec64::zeros(d);
    axpy(&mut du, 1.0, &grads.anchor);
    axpy(&mut du, 1.0, &grads.positive);
    for g in &grads.negatives {
        axpy(&mut du, 1.0, g);
    }
    let mut grad = params.zeros_like();
    backward(params, &trace, &du, &mut grad);
    (loss, grad)
}

pub fn user_view_loss<R: Rng>(
    params: &ModelParams,
    seq: &[u32],
    noise_sigma: f64,
    neg_count: usize,
    tau: f64,
    rng: &mut R,
) -> (f64, ModelParams) {
    let sample = sample_user_view(params.dim(), noise_sigma, neg_count, rng);
    user_view_core(params, seq, &sample, tau)
}

/// Frozen state for one item-view evaluation: the distinct in-sequence items
/// (first-appearance order) and, per item, two additive offsets that already
/// contain step * rec-gradient + jitter. Freezing the whole offset is what
/// "inner gradient treated as a constant" means operationally.
#[derive(Debug, Clone)]
pub struct ItemViewSample {
    pub items: Vec<u32>,
    pub offsets1: Vec<Vec64>,
    pub offsets2: Vec<Vec64>,
}

pub const ITEM_VIEW_JITTER_FACTOR: f64 = 0.1;

pub fn sample_item_view<R: Rng>(
    params: &ModelParams,
    seq: &[u32],
    item_view_step: f64,
    rng: &mut R,
) -> ItemViewSample {
    let mut items: Vec<u32> = Vec::new();
    for &it in seq {
        if !items.contains(&it) {
            items.push(it);
        }
    }
    let d = params.dim();
    let jitter_sigma = ITEM_VIEW_JITTER_FACTOR * item_view_step;

    let rec_grad = if seq.len() >= 2 {
        Some(rec_loss(params, seq).1)
    } else {
        None
    };

    let mut offsets1 = Vec::with_capacity(items.len());
    let mut offsets2 = Vec::with_capacity(items.len());
    for &it in &items {
        let mut base = Vec64::zeros(d);
        if let Some(g) = &rec_grad {
            axpy(&mut base, item_view_step, g.item_embeddings.row(it as usize));
        }
        let mut o1 = base.clone();
        let mut o2 = base;
        for i in 0..d {
            o1[i] += jitter_sigma * standard_normal(rng);
            o2[i] += jitter_sigma * standard_normal(rng);
        }
        offsets1.push(o1);
        offsets2.push(o2);
    }
    ItemViewSample {
        items,
        offsets1,
        offsets2,
    }
}

pub fn item_view_core(
    params: &ModelParams,
    sample: &ItemViewSample,
    tau: f64,
) -> (f64, ModelParams) {
    let n = sample.items.len();
    let mut grad = params.zeros_like();
    if n < 2 {
        return (0.0, grad); // no negatives to contrast against
    }
    let d = params.dim();
    let view = |it: u32, off: &Vec64| {
        let mut v = Vec64::zeros(d);
        axpy(&mut v, 1.0, params.item_embeddings.row(it as usize));
        axpy(&mut v, 1.0, off);
        v
    };
    let v1: Vec<Vec64> = sample
        .items
        .iter()
        .zip(&sample.offsets1)
        .map(|(&it, o)| view(it, o))
        .collect();
    let v2: Vec<Vec64> = sample
        .items
        .iter()
        .zip(&sample.offsets2)
        .map(|(&it, o)| view(it, o))
        .collect();

    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    for k in 0..n {
        let negs: Vec<Vec64> = (0..n).filter(|&j| j != k).map(|j| v2[j].clone()).collect();
        let (l, grads) = info_nce(&v1[k], &v2[k], &negs, tau).expect("dims agree");
        loss += l * inv;
        // views are embedding row plus a frozen offset: gradients land on rows
        let row_k = sample.items[k] as usize;
        axpy(grad.item_embeddings.row_mut(row_k), inv, &grads.anchor);
        axpy(grad.item_embeddings.row_mut(row_k), inv, &grads.positive);
        let mut gi = 0;
        for j in 0..n {
            if j == k {
                continue;
            }
            let row_j = sample.items[j] as usize;
            axpy(grad.item_embeddings.row_mut(row_j), inv, &grads.negatives[gi]);
            gi += 1;
        }
    }
    (loss, grad)
}

pub fn item_view_loss<R: Rng>(
    params: &ModelParams,
    seq: &[u32],
    item_view_step: f64,
    tau: f64,
    rng: &mut R,
) -> (f64, ModelParams) {
    let sample = sample_item_view(params, seq, item_view_step, rng);
    item_view_core(params, &sample, tau)
}

/// Squared L2 distance between encodings of the two adjacent tail windows.
/// Sequences shorter than 2 have no window pair and contribute 0.
pub fn tcr_loss(params: &ModelParams, seq: &[u32], window: usize) -> (f64, ModelParams) {
    let mut grad = params.zeros_like();
    let Some((s_t, s_next)) = adjacent_subsequences(seq, window) else {
        return (0.0, grad);
    };
    let (h1, tr1) = encode(params, s_t).expect("window nonempty");
    let (h2, tr2) = encode(params, s_next).expect("window nonempty");
    let d = h1.dim();
    let mut diff = Vec64::zeros(d);
    for i in 0..d {
        diff[i] = h1[i] - h2[i];
    }
    let loss = crate::numerics::dot(&diff, &diff);
    let mut dh1 = Vec64::zeros(d);
    let mut dh2 = Vec64::zeros(d);
    axpy(&mut dh1, 2.0, &diff);
    axpy(&mut dh2, -2.0, &diff);
    backward(params, &tr1, &dh1, &mut grad);
    backward(params, &tr2, &dh2, &mut grad);
    (loss, grad)
}

/// E epochs of full-sequence SGD on the combined objective
/// rec + lambda_cl * mean(three views) + lambda_tcr * tcr, with per-step
/// global-norm clipping. The contrastive branch consumes RNG draws only when
/// lambda_cl > 0, so a lambda_cl = 0 run is bit-identical to a plain
/// recommendation client on the same seed.
pub fn local_train<R: Rng>(
    global: &ModelParams,
    train_seq: &[u32],
    hyper: &ClientHyper,
    client_id: u32,
    round: u64,
    rng: &mut R,
) -> LocalTrainOutcome {
    if train_seq.len() < 2 {
        return LocalTrainOutcome::Skipped {
            client_id,
            reason: SkipReason::ShortSequence,
        };
    }
    let mut params = global.clone();
    let mut sums = LossTrace {
        rec: 0.0,
        cl: 0.0,
        tcr: 0.0,
    };

    for _ in 0..hyper.local_epochs {
        let (l_rec, mut grad) = rec_loss(&params, train_seq);
        let mut l_cl = 0.0;
        if hyper.lambda_cl > 0.0 {
            let (ls, gs) = sequence_view_loss(
                &params,
                train_seq,
                &hyper.augmentation,
                hyper.neg_count,
                hyper.tau,
                rng,
            );
            let (lu, gu) = user_view_loss(
                &params,
                train_seq,
                hyper.noise_sigma,
                hyper.neg_count,
                hyper.tau,
                rng,
            );
            let (li, gi) = item_view_loss(&params, train_seq, hyper.item_view_step, hyper.tau, rng);
            l_cl = (ls + lu + li) / 3.0;
            let w = hyper.lambda_cl / 3.0;
            grad.axpy(w, &gs);
            grad.axpy(w, &gu);
            grad.axpy(w, &gi);
        }
        let mut l_tcr = 0.0;
        if hyper.lambda_tcr > 0.0 {
            let (lt, gt) = tcr_loss(&params, train_seq, hyper.tcr_window);
            l_tcr = lt;
            grad.axpy(hyper.lambda_tcr, &gt);
        }

        let total = l_rec + hyper.lambda_cl * l_cl + hyper.lambda_tcr * l_tcr;
        if !total.is_finite() || !grad.is_finite() {
            return LocalTrainOutcome::Skipped {
                client_id,
                reason: SkipReason::NonFiniteLoss,
            };
        }

        let norm = grad.l2_norm();
        if norm > GRAD_CLIP_NORM {
            grad.scale(GRAD_CLIP_NORM / norm);
        }
        params.axpy(-hyper.lr, &grad);

        sums.rec += l_rec;
        sums.cl += l_cl;
        sums.tcr += l_tcr;
    }

    let e = hyper.local_epochs as f64;
    let n_u = match hyper.weight_mode {
        WeightMode::Interactions => train_seq.len(),
        WeightMode::Sequences => 1,
    };
    LocalTrainOutcome::Update {
        update: ClientUpdate {
            params,
            n_u,
            provenance: Provenance::Benign,
            client_id,
            round,
        },
        trace: LossTrace {
            rec: sums.rec / e,
            cl: sums.cl / e,
            tcr: sums.tcr / e,
        },
    }
}
