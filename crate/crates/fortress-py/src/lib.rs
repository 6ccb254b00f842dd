//! Python bindings over the simulator core. Scalar-heavy structures cross
//! the boundary as native lists; nested report structures cross as JSON
//! strings so Python can json.loads them without a dependency on this side.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

use fortress::client::{local_train, ClientHyper, LocalTrainOutcome, WeightMode};
use fortress::config::parse_config_str;
use fortress::data::{synth_generate, AugmentationPolicy, SynthParams};
use fortress::encoder::{encode, score_items, ModelParams};
use fortress::eval::top_k as core_top_k;
use fortress::numerics::info_nce as core_info_nce;
use fortress::numerics::Vec64;
use fortress::runner::{evaluate_model, run_experiment};
use fortress::server::{aggregate, ServerUpdate};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A parameter bundle: item embeddings, the recurrent encoder, and the
/// projection head. Wraps the exact structures the simulator trains.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Model {
    inner: ModelParams,
}

#[pymethods]
impl Model {
    #[new]
    fn new(num_items: usize, dim: usize, seed: u64) -> PyResult<Self> {
        if num_items == 0 || dim == 0 {
            return Err(PyValueError::new_err("num_items and dim must be positive"));
        }
        Ok(Model {
            inner: ModelParams::init(num_items, dim, seed),
        })
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.num_items()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Final encoder state for a sequence, after the projection head.
    fn encode(&self, seq: Vec<u32>) -> PyResult<Vec<f64>> {
        let (h, _) = encode(&self.inner, &seq).map_err(err)?;
        Ok(h.data)
    }

    /// One logit per real item.
    fn scores(&self, seq: Vec<u32>) -> PyResult<Vec<f64>> {
        let (h, _) = encode(&self.inner, &seq).map_err(err)?;
        Ok(score_items(&self.inner, &h).data)
    }

    /// Top-K recommendation with seen-item exclusion; ties break toward the
    /// smaller item id.
    #[pyo3(signature = (seq, k, exclude=None))]
    fn top_k(&self, seq: Vec<u32>, k: usize, exclude: Option<Vec<u32>>) -> PyResult<Vec<u32>> {
        if seq.is_empty() {
            return Err(PyValueError::new_err("sequence must be nonempty"));
        }
        let excl: BTreeSet<u32> = exclude.unwrap_or_default().into_iter().collect();
        Ok(core_top_k(&self.inner, &seq, None, k, &excl).ranked)
    }

    /// Squared L2 distance to another bundle; zero means bit-equal shapes
    /// and values.
    fn distance_sq(&self, other: &Model) -> PyResult<f64> {
        if self.inner.num_items() != other.inner.num_items()
            || self.inner.dim() != other.inner.dim()
        {
            return Err(PyValueError::new_err("shape mismatch"));
        }
        Ok(self.inner.delta(&other.inner).l2_norm().powi(2))
    }
}

fn hyper_from_args(
    lambda_cl: f64,
    lambda_tcr: f64,
    tau: f64,
    lr: f64,
    epochs: usize,
    neg_count: usize,
) -> ClientHyper {
    ClientHyper {
        lambda_cl,
        lambda_tcr,
        tau,
        noise_sigma: 0.1,
        local_epochs: epochs,
        lr,
        tcr_window: 3,
        item_view_step: 0.5,
        neg_count,
        weight_mode: WeightMode::Interactions,
        augmentation: AugmentationPolicy {
            crop_prob: 0.8,
            crop_ratio: 0.6,
            mask_prob: 0.3,
            mask_ratio: 0.3,
            reorder_prob: 0.2,
            reorder_window: 3,
        },
    }
}

/// One client's local training pass. Returns (model, n_u, losses) where
/// losses = (rec, contrastive, temporal). Raises if the sequence is too
/// short or the loss went non-finite.
#[pyfunction]
#[pyo3(signature = (model, seq, seed, lambda_cl=0.1, lambda_tcr=0.1, tau=0.5, lr=0.1, epochs=1, neg_count=4))]
#[allow(clippy::too_many_arguments)]
fn train_local(
    model: &Model,
    seq: Vec<u32>,
    seed: u64,
    lambda_cl: f64,
    lambda_tcr: f64,
    tau: f64,
    lr: f64,
    epochs: usize,
    neg_count: usize,
) -> PyResult<(Model, usize, (f64, f64, f64))> {
    let hyper = hyper_from_args(lambda_cl, lambda_tcr, tau, lr, epochs, neg_count);
    hyper.check().map_err(PyValueError::new_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match local_train(&model.inner, &seq, &hyper, 0, 0, &mut rng) {
        LocalTrainOutcome::Update { update, trace } => Ok((
            Model {
                inner: update.params,
            },
            update.n_u,
            (trace.rec, trace.cl, trace.tcr),
        )),
        LocalTrainOutcome::Skipped { reason, .. } => {
            Err(PyRuntimeError::new_err(format!("skipped: {reason:?}")))
        }
    }
}

/// Interaction-weighted federated average of (model, weight) pairs.
#[pyfunction]
fn fed_avg(updates: Vec<(Model, usize)>) -> PyResult<Model> {
    let server_updates: Vec<ServerUpdate> = updates
        .iter()
        .enumerate()
        .map(|(i, (m, n))| ServerUpdate {
            client_id: i as u32,
            n_u: *n,
            params: m.inner.clone(),
        })
        .collect();
    let merged = aggregate(&server_updates).map_err(err)?;
    Ok(Model { inner: merged })
}

/// Contrastive alignment loss over cosine similarities; the positive sits
/// in the denominator, so the value is never negative.
#[pyfunction]
fn info_nce(
    anchor: Vec<f64>,
    positive: Vec<f64>,
    negatives: Vec<Vec<f64>>,
    tau: f64,
) -> PyResult<f64> {
    let negs: Vec<Vec64> = negatives.into_iter().map(Vec64::from_vec).collect();
    let (loss, _) = core_info_nce(&anchor, &positive, &negs, tau).map_err(err)?;
    Ok(loss)
}

/// Markov-with-popularity-residual synthetic sequences; returns one item
/// list per user. Deterministic in seed.
#[pyfunction]
#[pyo3(signature = (num_users, num_items, seq_len_min, seq_len_max, transition_skew, seed))]
fn generate_synthetic(
    num_users: usize,
    num_items: usize,
    seq_len_min: usize,
    seq_len_max: usize,
    transition_skew: f64,
    seed: u64,
) -> PyResult<Vec<Vec<u32>>> {
    if num_items < 10 || seq_len_min < 3 || seq_len_max < seq_len_min {
        return Err(PyValueError::new_err(
            "need num_items >= 10 and 3 <= seq_len_min <= seq_len_max",
        ));
    }
    if !(0.0..=1.0).contains(&transition_skew) {
        return Err(PyValueError::new_err("transition_skew must be in [0,1]"));
    }
    let dataset = synth_generate(&SynthParams {
        num_users,
        num_items,
        seq_len_min,
        seq_len_max,
        transition_skew,
        seed,
    });
    Ok(dataset.sequences.into_iter().map(|s| s.items).collect())
}

/// Ranks every sequence's last item under the model (leave-one-out) and
/// returns the metrics block as a JSON string.
#[pyfunction]
fn evaluate(model: &Model, sequences: Vec<Vec<u32>>, ks: Vec<usize>) -> PyResult<String> {
    if ks.is_empty() || ks.iter().any(|&k| k == 0) {
        return Err(PyValueError::new_err("ks must list cutoffs >= 1"));
    }
    let mut dataset = fortress::data::Dataset {
        num_users: sequences.len(),
        num_items: model.inner.num_items(),
        sequences: sequences
            .into_iter()
            .enumerate()
            .map(|(u, items)| fortress::data::InteractionSequence {
                user_id: u as u32,
                split: vec![fortress::data::SplitMark::Train; items.len()],
                items,
            })
            .collect(),
    };
    for seq in &dataset.sequences {
        for &it in &seq.items {
            if it as usize >= model.inner.num_items() {
                return Err(PyValueError::new_err(format!(
                    "item {it} outside the model's item table"
                )));
            }
        }
    }
    fortress::data::leave_one_out_split(&mut dataset);
    let metrics = evaluate_model(&model.inner, &dataset, &ks, &[], 3);
    serde_json::to_string(&metrics).map_err(err)
}

/// Runs a full experiment from a TOML config string; `out_dir` overrides
/// the configured output directory. Returns the per-round reports as a
/// JSON array string.
#[pyfunction]
fn run_from_toml(config_toml: &str, out_dir: &str) -> PyResult<String> {
    let mut cfg = parse_config_str(config_toml).map_err(err)?;
    cfg.experiment.out_dir = out_dir.to_string();
    let output = run_experiment(&cfg, None).map_err(err)?;
    serde_json::to_string(&output.reports).map_err(err)
}

#[pymodule]
fn fortress_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train_local, m)?)?;
    m.add_function(wrap_pyfunction!(fed_avg, m)?)?;
    m.add_function(wrap_pyfunction!(info_nce, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_from_toml, m)?)?;
    Ok(())
}
