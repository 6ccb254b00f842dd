//! The sequential model: item-embedding table, single-layer gated recurrent
//! encoder, linear output head, and hand-derived backprop through time.
//! Item id M (one past the last real item) is the mask token; its embedding
//! row starts at zero and is excluded from scoring.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{axpy, dot, Coordinates, Mat64, Vec64};

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("cannot encode an empty sequence")]
    EmptySequence,
    #[error("item id {id} out of range (mask id is {mask})")]
    ItemOutOfRange { id: u32, mask: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    /// Each gate matrix is d x 2d and acts on [x; h_prev].
    pub w_update: Mat64,
    pub w_reset: Mat64,
    pub w_cand: Mat64,
    pub b_update: Vec64,
    pub b_reset: Vec64,
    pub b_cand: Vec64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// (M+1) x d; row M is the mask token.
    pub item_embeddings: Mat64,
    pub gru: GruWeights,
    /// d x d head applied to hidden states before scoring. Identity at init.
    pub out_proj: Mat64,
}

impl ModelParams {
    /// Embedding and gate matrices i.i.d. uniform in [-1/sqrt(d), +1/sqrt(d)];
    /// biases zero; out_proj identity; mask row zeroed. Deterministic in seed.
    pub fn init(num_items: usize, dim: usize, seed: u64) -> ModelParams {
        assert!(dim >= 2, "embedding dim must be >= 2");
        assert!(num_items >= 1, "need at least one item");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let mut fill = |rows: usize, cols: usize| {
            let mut m = Mat64::zeros(rows, cols);
            for v in m.data.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            m
        };
        let mut item_embeddings = fill(num_items + 1, dim);
        for v in item_embeddings.row_mut(num_items) {
            *v = 0.0;
        }
        let gru = GruWeights {
            w_update: fill(dim, 2 * dim),
            w_reset: fill(dim, 2 * dim),
            w_cand: fill(dim, 2 * dim),
            b_update: Vec64::zeros(dim),
            b_reset: Vec64::zeros(dim),
            b_cand: Vec64::zeros(dim),
        };
        let mut out_proj = Mat64::zeros(dim, dim);
        for i in 0..dim {
            out_proj.data[i * dim + i] = 1.0;
        }
        ModelParams {
            item_embeddings,
            gru,
            out_proj,
        }
    }

    /// Number of real items M (the table has M+1 rows).
    pub fn num_items(&self) -> usize {
        self.item_embeddings.rows - 1
    }

    pub fn dim(&self) -> usize {
        self.item_embeddings.cols
    }

    pub fn mask_item(&self) -> u32 {
        self.num_items() as u32
    }

    pub fn zeros_like(&self) -> ModelParams {
        let d = self.dim();
        ModelParams {
            item_embeddings: Mat64::zeros(self.item_embeddings.rows, d),
            gru: GruWeights {
                w_update: Mat64::zeros(d, 2 * d),
                w_reset: Mat64::zeros(d, 2 * d),
                w_cand: Mat64::zeros(d, 2 * d),
                b_update: Vec64::zeros(d),
                b_reset: Vec64::zeros(d),
                b_cand: Vec64::zeros(d),
            },
            out_proj: Mat64::zeros(d, d),
        }
    }

    /// self += a * other, elementwise over every parameter array.
    pub fn axpy(&mut self, a: f64, other: &ModelParams) {
        self.item_embeddings.axpy(a, &other.item_embeddings);
        self.gru.w_update.axpy(a, &other.gru.w_update);
        self.gru.w_reset.axpy(a, &other.gru.w_reset);
        self.gru.w_cand.axpy(a, &other.gru.w_cand);
        axpy(&mut self.gru.b_update, a, &other.gru.b_update);
        axpy(&mut self.gru.b_reset, a, &other.gru.b_reset);
        axpy(&mut self.gru.b_cand, a, &other.gru.b_cand);
        self.out_proj.axpy(a, &other.out_proj);
    }

    pub fn scale(&mut self, a: f64) {
        self.item_embeddings.scale(a);
        self.gru.w_update.scale(a);
        self.gru.w_reset.scale(a);
        self.gru.w_cand.scale(a);
        crate::numerics::scale(&mut self.gru.b_update, a);
        crate::numerics::scale(&mut self.gru.b_reset, a);
        crate::numerics::scale(&mut self.gru.b_cand, a);
        self.out_proj.scale(a);
    }

    /// self - other, as a new bundle.
    pub fn delta(&self, other: &ModelParams) -> ModelParams {
        let mut d = self.clone();
        d.axpy(-1.0, other);
        d
    }

    pub fn l2_norm(&self) -> f64 {
        let mut s = self.item_embeddings.l2_norm_sq();
        s += self.gru.w_update.l2_norm_sq();
        s += self.gru.w_reset.l2_norm_sq();
        s += self.gru.w_cand.l2_norm_sq();
        s += dot(&self.gru.b_update, &self.gru.b_update);
        s += dot(&self.gru.b_reset, &self.gru.b_reset);
        s += dot(&self.gru.b_cand, &self.gru.b_cand);
        s += self.out_proj.l2_norm_sq();
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.item_embeddings.is_finite()
            && self.gru.w_update.is_finite()
            && self.gru.w_reset.is_finite()
            && self.gru.w_cand.is_finite()
            && self.gru.b_update.is_finite()
            && self.gru.b_reset.is_finite()
            && self.gru.b_cand.is_finite()
            && self.out_proj.is_finite()
    }

    fn segments(&self) -> [&[f64]; 8] {
        [
            &self.item_embeddings.data,
            &self.gru.w_update.data,
            &self.gru.w_reset.data,
            &self.gru.w_cand.data,
            &self.gru.b_update.data,
            &self.gru.b_reset.data,
            &self.gru.b_cand.data,
            &self.out_proj.data,
        ]
    }

    fn segments_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.item_embeddings.data,
            &mut self.gru.w_update.data,
            &mut self.gru.w_reset.data,
            &mut self.gru.w_cand.data,
            &mut self.gru.b_update.data,
            &mut self.gru.b_reset.data,
            &mut self.gru.b_cand.data,
            &mut self.out_proj.data,
        ]
    }
}

impl Coordinates for ModelParams {
    fn num_coords(&self) -> usize {
        self.segments().iter().map(|s| s.len()).sum()
    }

    fn coord(&self, i: usize) -> f64 {
        let mut i = i;
        for seg in self.segments() {
            if i < seg.len() {
                return seg[i];
            }
            i -= seg.len();
        }
        panic!("coordinate index out of range");
    }

    fn set_coord(&mut self, i: usize, v: f64) {
        let mut i = i;
        for seg in self.segments_mut() {
            if i < seg.len() {
                seg[i] = v;
                return;
            }
            i -= seg.len();
        }
        panic!("coordinate index out of range");
    }
}

/// Per-step activations cached for backprop. Inputs are re-embedded from the
/// parameter bundle during the backward pass, so only ids are stored.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub item_ids: Vec<u32>,
    hs: Vec<Vec64>,
    us: Vec<Vec64>,
    rs: Vec<Vec64>,
    cs: Vec<Vec64>,
}

impl EncodeTrace {
    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_ids(params: &ModelParams, seq: &[u32]) -> Result<(), EncoderError> {
    if seq.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    let mask = params.mask_item();
    for &id in seq {
        if id > mask {
            return Err(EncoderError::ItemOutOfRange { id, mask });
        }
    }
    Ok(())
}

/// Runs the recurrence over the sequence and returns the projected hidden
/// state at every step (out_proj * h_t) plus the trace needed for backward.
pub fn encode_all(
    params: &ModelParams,
    seq: &[u32],
) -> Result<(Vec<Vec64>, EncodeTrace), EncoderError> {
    check_ids(params, seq)?;
    let d = params.dim();
    let len = seq.len();
    let mut trace = EncodeTrace {
        item_ids: seq.to_vec(),
        hs: Vec::with_capacity(len),
        us: Vec::with_capacity(len),
        rs: Vec::with_capacity(len),
        cs: Vec::with_capacity(len),
    };
    let mut projected = Vec::with_capacity(len);

    let mut h_prev = Vec64::zeros(d);
    let mut zcat = vec![0.0; 2 * d];
    let mut ccat = vec![0.0; 2 * d];
    for &id in seq {
        let x = params.item_embeddings.row(id as usize);
        zcat[..d].copy_from_slice(x);
        zcat[d..].copy_from_slice(&h_prev);

        let mut u = Vec64::zeros(d);
        params.gru.w_update.matvec(&zcat, &mut u);
        let mut r = Vec64::zeros(d);
        params.gru.w_reset.matvec(&zcat, &mut r);
        for i in 0..d {
            u[i] = sigmoid(u[i] + params.gru.b_update[i]);
            r[i] = sigmoid(r[i] + params.gru.b_reset[i]);
        }

        ccat[..d].copy_from_slice(x);
        for i in 0..d {
            ccat[d + i] = r[i] * h_prev[i];
        }
        let mut c = Vec64::zeros(d);
        params.gru.w_cand.matvec(&ccat, &mut c);
        for i in 0..d {
            c[i] = (c[i] + params.gru.b_cand[i]).tanh();
        }

        let mut h = Vec64::zeros(d);
        for i in 0..d {
            h[i] = (1.0 - u[i]) * h_prev[i] + u[i] * c[i];
        }

        let mut proj = Vec64::zeros(d);
        params.out_proj.matvec(&h, &mut proj);
        projected.push(proj);

        trace.us.push(u);
        trace.rs.push(r);
        trace.cs.push(c);
        h_prev = h.clone();
        trace.hs.push(h);
    }
    Ok((projected, trace))
}

/// Final projected hidden state: the sequence representation f(S).
pub fn encode(params: &ModelParams, seq: &[u32]) -> Result<(Vec64, EncodeTrace), EncoderError> {
    let (mut projected, trace) = encode_all(params, seq)?;
    Ok((projected.pop().expect("nonempty by check_ids"), trace))
}

/// logits[k] = dot(h, v_k) over real items only; the mask row never scores.
pub fn score_items(params: &ModelParams, h: &[f64]) -> Vec64 {
    let m = params.num_items();
    let mut logits = Vec64::zeros(m);
    for k in 0..m {
        logits[k] = dot(h, params.item_embeddings.row(k));
    }
    logits
}

/// Backward through score_items: accumulates embedding-row gradients into
/// `grad` and returns the gradient w.r.t. h.
pub fn score_backward(
    params: &ModelParams,
    h: &[f64],
    dlogits: &[f64],
    grad: &mut ModelParams,
) -> Vec64 {
    let m = params.num_items();
    assert_eq!(dlogits.len(), m, "score_backward logit dim");
    let mut dh = Vec64::zeros(params.dim());
    for k in 0..m {
        let g = dlogits[k];
        if g == 0.0 {
            continue;
        }
        axpy(grad.item_embeddings.row_mut(k), g, h);
        axpy(&mut dh, g, params.item_embeddings.row(k));
    }
    dh
}

/// Backprop through time. `upstreams[t]`, when present, is the loss gradient
/// w.r.t. the projected state out_proj * h_t. Gradients accumulate into
/// `grad`, which must have the same shapes as `params`.
pub fn backward_steps(
    params: &ModelParams,
    trace: &EncodeTrace,
    upstreams: &[Option<Vec64>],
    grad: &mut ModelParams,
) {
    assert_eq!(upstreams.len(), trace.len(), "upstream count per step");
    let d = params.dim();
    let len = trace.len();
    let zeros = Vec64::zeros(d);

    let mut dh = vec![0.0; d];
    let mut zcat = vec![0.0; 2 * d];
    let mut ccat = vec![0.0; 2 * d];
    for t in (0..len).rev() {
        if let Some(up) = &upstreams[t] {
            assert_eq!(up.dim(), d, "upstream dim at step {t}");
            // proj_t = P h_t
            grad.out_proj.add_outer(up, &trace.hs[t]);
            params.out_proj.matvec_t_add(up, &mut dh);
        }

        let h_prev: &[f64] = if t == 0 { &zeros } else { &trace.hs[t - 1] };
        let x = params.item_embeddings.row(trace.item_ids[t] as usize);
        let (u, r, c) = (&trace.us[t], &trace.rs[t], &trace.cs[t]);

        zcat[..d].copy_from_slice(x);
        zcat[d..].copy_from_slice(h_prev);
        ccat[..d].copy_from_slice(x);
        for i in 0..d {
            ccat[d + i] = r[i] * h_prev[i];
        }

        // h = (1-u) h_prev + u c
        let mut dh_prev = vec![0.0; d];
        let mut da_c = vec![0.0; d];
        let mut da_u = vec![0.0; d];
        for i in 0..d {
            let du = dh[i] * (c[i] - h_prev[i]);
            let dc = dh[i] * u[i];
            dh_prev[i] = dh[i] * (1.0 - u[i]);
            da_c[i] = dc * (1.0 - c[i] * c[i]);
            da_u[i] = du * u[i] * (1.0 - u[i]);
        }
        grad.gru.w_cand.add_outer(&da_c, &ccat);
        axpy(&mut grad.gru.b_cand, 1.0, &da_c);

        let mut dccat = vec![0.0; 2 * d];
        params.gru.w_cand.matvec_t_add(&da_c, &mut dccat);
        let mut dx = dccat[..d].to_vec();
        let mut da_r = vec![0.0; d];
        for i in 0..d {
            let drh = dccat[d + i];
            da_r[i] = drh * h_prev[i] * r[i] * (1.0 - r[i]);
            dh_prev[i] += drh * r[i];
        }

        grad.gru.w_update.add_outer(&da_u, &zcat);
        axpy(&mut grad.gru.b_update, 1.0, &da_u);
        grad.gru.w_reset.add_outer(&da_r, &zcat);
        axpy(&mut grad.gru.b_reset, 1.0, &da_r);

        let mut dzcat = vec![0.0; 2 * d];
        params.gru.w_update.matvec_t_add(&da_u, &mut dzcat);
        params.gru.w_reset.matvec_t_add(&da_r, &mut dzcat);
        for i in 0..d {
            dx[i] += dzcat[i];
            dh_prev[i] += dzcat[d + i];
        }

        axpy(
            grad.item_embeddings.row_mut(trace.item_ids[t] as usize),
            1.0,
            &dx,
        );
        dh = dh_prev;
    }
}

/// Backward with an upstream gradient only at the final projected state.
pub fn backward(
    params: &ModelParams,
    trace: &EncodeTrace,
    upstream: &Vec64,
    grad: &mut ModelParams,
) {
    let mut ups: Vec<Option<Vec64>> = vec![None; trace.len()];
    let last = trace.len() - 1;
    ups[last] = Some(upstream.clone());
    backward_steps(params, trace, &ups, grad);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;

    fn toy_params(m: usize, d: usize, seed: u64) -> ModelParams {
        ModelParams::init(m, d, seed)
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let a = toy_params(50, 8, 42);
        let b = toy_params(50, 8, 42);
        let c = toy_params(50, 8, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_and_mask_row() {
        let p = toy_params(50, 8, 1);
        assert_eq!(p.item_embeddings.rows, 51);
        assert_eq!(p.item_embeddings.cols, 8);
        assert!(p.item_embeddings.row(50).iter().all(|&v| v == 0.0));
        assert!(p.gru.b_update.iter().all(|&v| v == 0.0));
        // identity head
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_eq!(p.out_proj.row(i)[j], want);
            }
        }
    }

    #[test]
    fn init_weights_within_bound() {
        let p = toy_params(20, 16, 3);
        let bound = 1.0 / 4.0;
        for seg in [&p.gru.w_update, &p.gru.w_reset, &p.gru.w_cand] {
            assert!(seg.data.iter().all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn encode_rejects_empty_and_out_of_range() {
        let p = toy_params(5, 4, 0);
        assert_eq!(encode(&p, &[]).unwrap_err(), EncoderError::EmptySequence);
        assert_eq!(
            encode(&p, &[6]).unwrap_err(),
            EncoderError::ItemOutOfRange { id: 6, mask: 5 }
        );
        // mask id itself is a legal input
        assert!(encode(&p, &[5]).is_ok());
    }

    #[test]
    fn single_item_ignores_other_rows() {
        let p = toy_params(6, 4, 7);
        let (h1, _) = encode(&p, &[3]).unwrap();
        let mut q = p.clone();
        for v in q.item_embeddings.row_mut(0) {
            *v = 9.0;
        }
        let (h2, _) = encode(&q, &[3]).unwrap();
        assert_eq!(h1.data, h2.data);
    }

    #[test]
    fn order_sensitivity() {
        let p = toy_params(8, 6, 13);
        let (ha, _) = encode(&p, &[0, 1, 2, 3, 4]).unwrap();
        let (hb, _) = encode(&p, &[1, 0, 2, 3, 4]).unwrap();
        let diff: f64 = ha
            .iter()
            .zip(hb.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-9, "permuted input produced identical encoding");
    }

    #[test]
    fn all_mask_input_encodes_to_zero() {
        // zero mask embedding + zero biases: u=r=1/2, c=tanh(0)=0, h stays 0
        let p = toy_params(6, 4, 5);
        let (h, _) = encode(&p, &[6, 6, 6]).unwrap();
        assert!(h.iter().all(|&v| v == 0.0), "h = {:?}", h.data);
    }

    #[test]
    fn scoring_excludes_mask_row_and_finds_matching_item() {
        let mut p = toy_params(4, 8, 2);
        // orthogonal table: item k = k-th basis vector
        p.item_embeddings = Mat64::zeros(5, 8);
        for k in 0..4 {
            p.item_embeddings.row_mut(k)[k] = 1.0;
        }
        let h = p.item_embeddings.row(3).to_vec();
        let logits = score_items(&p, &h);
        assert_eq!(logits.dim(), 4);
        let argmax = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 3);

        let zeros = vec![0.0; 8];
        assert!(score_items(&p, &zeros).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = toy_params(6, 4, 9);
        let (_, trace) = encode(&p, &[0, 1, 2]).unwrap();
        let mut g = p.zeros_like();
        backward(&p, &trace, &Vec64::zeros(4), &mut g);
        assert_eq!(g.l2_norm(), 0.0);
    }

    #[test]
    fn unused_embedding_rows_get_zero_gradient() {
        let p = toy_params(6, 4, 9);
        let seq = [0u32, 2, 2];
        let (_, trace) = encode(&p, &seq).unwrap();
        let mut g = p.zeros_like();
        backward(&p, &trace, &Vec64::from_vec(vec![1.0, -2.0, 0.5, 0.3]), &mut g);
        for unused in [1usize, 3, 4, 5, 6] {
            assert!(
                g.item_embeddings.row(unused).iter().all(|&v| v == 0.0),
                "row {unused} touched"
            );
        }
        assert!(g.item_embeddings.row(2).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        // probe loss: dot(w, final projected state), exercises every array
        let p = toy_params(6, 4, 21);
        let seq = [0u32, 3, 1, 3, 5];
        let w = Vec64::from_vec(vec![0.7, -1.1, 0.4, 0.9]);
        let (_, trace) = encode(&p, &seq).unwrap();
        let mut g = p.zeros_like();
        backward(&p, &trace, &w, &mut g);
        let err = finite_diff_check(
            |q: &ModelParams| {
                let (h, _) = encode(q, &seq).unwrap();
                dot(&w, &h)
            },
            &p,
            &g,
            1e-5,
        );
        assert!(err < 1e-6, "bptt fd error {err}");
    }

    #[test]
    fn per_step_upstreams_match_finite_differences() {
        let p = toy_params(6, 4, 33);
        let seq = [2u32, 0, 4, 1];
        let probes: Vec<Vec64> = (0..4)
            .map(|t| Vec64::from_vec((0..4).map(|i| ((t * 4 + i) as f64 * 0.37).sin()).collect()))
            .collect();
        let (_, trace) = encode_all(&p, &seq).unwrap();
        let mut g = p.zeros_like();
        let ups: Vec<Option<Vec64>> = probes.iter().cloned().map(Some).collect();
        backward_steps(&p, &trace, &ups, &mut g);
        let err = finite_diff_check(
            |q: &ModelParams| {
                let (proj, _) = encode_all(q, &seq).unwrap();
                proj.iter()
                    .zip(probes.iter())
                    .map(|(h, w)| dot(h, w))
                    .sum::<f64>()
            },
            &p,
            &g,
            1e-5,
        );
        assert!(err < 1e-6, "per-step fd error {err}");
    }

    #[test]
    fn score_backward_matches_finite_differences() {
        let p = toy_params(5, 4, 17);
        let h = Vec64::from_vec(vec![0.3, -0.8, 1.2, 0.1]);
        let dlogits: Vec<f64> = (0..5).map(|k| ((k as f64) * 0.91).cos()).collect();
        let mut g = p.zeros_like();
        let dh = score_backward(&p, &h, &dlogits, &mut g);

        // loss = dot(dlogits, logits(params, h)), linear in both
        let h2 = h.clone();
        let dl = dlogits.clone();
        let err = finite_diff_check(
            |q: &ModelParams| dot(&dl, &score_items(q, &h2)),
            &p,
            &g,
            1e-5,
        );
        assert!(err < 1e-8, "score param grad error {err}");

        let dl = dlogits.clone();
        let p2 = p.clone();
        let err = finite_diff_check(
            |x: &Vec64| dot(&dl, &score_items(&p2, x)),
            &h,
            &dh,
            1e-5,
        );
        assert!(err < 1e-8, "score dh error {err}");
    }

    #[test]
    fn params_algebra_is_associative_and_scale_one_is_identity() {
        let a = toy_params(5, 4, 1);
        let b = toy_params(5, 4, 2);
        let c = toy_params(5, 4, 3);

        let mut ab = a.clone();
        ab.axpy(1.0, &b);
        let mut ab_c = ab.clone();
        ab_c.axpy(1.0, &c);

        let mut bc = b.clone();
        bc.axpy(1.0, &c);
        let mut a_bc = a.clone();
        a_bc.axpy(1.0, &bc);

        for i in 0..ab_c.num_coords() {
            assert!((ab_c.coord(i) - a_bc.coord(i)).abs() < 1e-12);
        }

        let mut s = a.clone();
        s.scale(1.0);
        assert_eq!(s, a);
    }

    #[test]
    fn delta_recovers_parameters() {
        let a = toy_params(5, 4, 1);
        let b = toy_params(5, 4, 2);
        let d = a.delta(&b);
        let mut back = b.clone();
        back.axpy(1.0, &d);
        for i in 0..a.num_coords() {
            assert!((back.coord(i) - a.coord(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn coordinates_cover_every_array() {
        let p = toy_params(5, 4, 1);
        let d = 4;
        let expected = 6 * d + 3 * (d * 2 * d) + 3 * d + d * d;
        assert_eq!(p.num_coords(), expected);
        let mut q = p.clone();
        for i in 0..q.num_coords() {
            q.set_coord(i, i as f64);
        }
        for i in 0..q.num_coords() {
            assert_eq!(q.coord(i), i as f64);
        }
    }
}
