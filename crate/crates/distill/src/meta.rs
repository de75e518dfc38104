//! Meta-learning: the MAML objective with multi-step loss, the outer
//! training loop, meta-test adaptation, and versioned checkpoints.
//!
//! Each episode contributes a meta-loss computed by adapting the shared
//! initialization on the support set (one gradient step per support example,
//! in sampled order) and scoring the query set after every step. The outer
//! gradient flows through those inner steps unless `first_order` is set.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Var};
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::mlp::{bce_loss_on_tape, forward_on_tape, leaf_params, MLPConfig, Mode, ParamSet};
use crate::rng::{self, Rng};

/// How the per-step query losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiStepWeights {
    /// Average over all post-step states (the multi-step loss).
    Uniform,
    /// Only the final state (vanilla MAML).
    FinalOnly,
}

/// Outer-loop optimizer choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterOptimizer {
    Adam,
    Sgd,
}

/// Meta-training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Inner-loop step size (alpha).
    pub inner_lr: f64,
    pub outer_lr: f64,
    /// Passes over the support set inside one episode.
    pub inner_epochs_per_episode: usize,
    pub meta_batch_size: usize,
    /// Hard cap on passes over the corpus.
    pub total_passes: usize,
    /// Stop after this many passes without validation improvement.
    pub patience: usize,
    /// Drop second-order terms from the meta-gradient.
    pub first_order: bool,
    pub multi_step_weights: MultiStepWeights,
    pub outer_optimizer: OuterOptimizer,
    pub seed: u64,
}

impl MetaConfig {
    pub fn new(seed: u64) -> MetaConfig {
        MetaConfig {
            inner_lr: 0.1,
            outer_lr: 0.0005,
            inner_epochs_per_episode: 1,
            meta_batch_size: 16,
            total_passes: 50,
            patience: 5,
            first_order: false,
            multi_step_weights: MultiStepWeights::Uniform,
            outer_optimizer: OuterOptimizer::Adam,
            seed: 0,
        }
        .with_seed(seed)
    }

    fn with_seed(mut self, seed: u64) -> MetaConfig {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr > 0.0) || !(self.outer_lr > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be > 0".into()));
        }
        if self.meta_batch_size < 1 || self.inner_epochs_per_episode < 1 {
            return Err(Error::InvalidArgument(
                "meta_batch_size and inner_epochs_per_episode must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Inner-loop adaptation on a tape: `steps` gradient steps, each on the
/// single support example `support[j mod |support|]`. Returns the parameter
/// trajectory `theta_0 .. theta_steps` as tape variables; with
/// `record_higher_order` the steps remain differentiable with respect to
/// `theta_0`.
#[allow(clippy::too_many_arguments)]
pub fn inner_adapt_on_tape(
    tape: &Tape,
    init: &[Var],
    support: &[crate::episode::LabeledExample],
    config: &MLPConfig,
    steps: usize,
    inner_lr: f64,
    record_higher_order: bool,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Vec<Vec<Var>>> {
    if steps < 1 {
        return Err(Error::InvalidArgument("inner_adapt needs steps >= 1".into()));
    }
    if support.is_empty() {
        return Err(Error::InvalidArgument("inner_adapt needs a nonempty support set".into()));
    }
    let mut trajectory = vec![init.to_vec()];
    for j in 0..steps {
        let current = trajectory.last().unwrap().clone();
        let ex = &support[j % support.len()];
        let probs = forward_on_tape(tape, &current, config, std::slice::from_ref(&ex.object), mode, rng)?;
        let loss = bce_loss_on_tape(tape, probs, &[ex.label])?;
        if !tape.scalar_value(loss)?.is_finite() {
            return Err(Error::Divergence(format!("non-finite inner loss at step {j}")));
        }
        let grads = tape.grad(loss, &current)?;
        let mut next = Vec::with_capacity(current.len());
        for (&v, &g) in current.iter().zip(&grads) {
            let g = if record_higher_order { g } else { tape.leaf(tape.value(g)) };
            next.push(tape.sub(v, tape.scale(g, inner_lr))?);
        }
        trajectory.push(next);
    }
    Ok(trajectory)
}

/// Value-level inner adaptation: the trajectory as concrete parameter sets.
pub fn inner_adapt(
    params: &ParamSet,
    support: &[crate::episode::LabeledExample],
    config: &MLPConfig,
    steps: usize,
    inner_lr: f64,
) -> Result<Vec<ParamSet>> {
    let tape = Tape::new();
    let init = leaf_params(&tape, params);
    let mut noise = rng::root(0); // eval mode: stream untouched
    let traj = inner_adapt_on_tape(
        &tape, &init, support, config, steps, inner_lr, false, Mode::Eval, &mut noise,
    )?;
    Ok(traj
        .iter()
        .map(|vars| ParamSet { tensors: vars.iter().map(|&v| tape.value(v)).collect() })
        .collect())
}

/// The multi-step query loss: weighted sum of the query-set cross-entropy at
/// every post-step state of the trajectory.
#[allow(clippy::too_many_arguments)]
pub fn multi_step_query_loss(
    tape: &Tape,
    trajectory: &[Vec<Var>],
    query: &[crate::episode::LabeledExample],
    config: &MLPConfig,
    weights: MultiStepWeights,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    if trajectory.len() < 2 {
        return Err(Error::InvalidArgument(
            "multi_step_query_loss needs at least one post-step state".into(),
        ));
    }
    let objects: Vec<_> = query.iter().map(|ex| ex.object.clone()).collect();
    let labels: Vec<u8> = query.iter().map(|ex| ex.label).collect();
    let post = &trajectory[1..];
    let mut total: Option<Var> = None;
    for (j, state) in post.iter().enumerate() {
        let w = match weights {
            MultiStepWeights::Uniform => 1.0 / post.len() as f64,
            MultiStepWeights::FinalOnly => {
                if j + 1 == post.len() {
                    1.0
                } else {
                    continue;
                }
            }
        };
        let probs = forward_on_tape(tape, state, config, &objects, mode, rng)?;
        let term = tape.scale(bce_loss_on_tape(tape, probs, &labels)?, w);
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    Ok(total.expect("at least the final state contributes"))
}

/// One episode's contribution to the meta-objective, recorded on `tape` with
/// the initial parameters `init`.
fn episode_meta_loss(
    tape: &Tape,
    init: &[Var],
    episode: &Episode,
    config: &MLPConfig,
    meta: &MetaConfig,
    mode: Mode,
    higher_order: bool,
    rng: &mut Rng,
) -> Result<Var> {
    let steps = episode.support.len() * meta.inner_epochs_per_episode;
    let trajectory = inner_adapt_on_tape(
        tape,
        init,
        &episode.support,
        config,
        steps,
        meta.inner_lr,
        higher_order,
        mode,
        rng,
    )?;
    multi_step_query_loss(
        tape,
        &trajectory,
        &episode.query,
        config,
        meta.multi_step_weights,
        mode,
        rng,
    )
}

/// Mean meta-objective over episodes at fixed parameters, without recording
/// higher-order terms (values are identical either way).
pub fn meta_objective(
    params: &ParamSet,
    episodes: &[Episode],
    config: &MLPConfig,
    meta: &MetaConfig,
) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("meta_objective over no episodes".into()));
    }
    let mut total = 0.0;
    let mut noise = rng::root(0); // eval mode: stream untouched
    for ep in episodes {
        let tape = Tape::new();
        let init = leaf_params(&tape, params);
        let loss = episode_meta_loss(&tape, &init, ep, config, meta, Mode::Eval, false, &mut noise)?;
        total += tape.scalar_value(loss)?;
    }
    Ok(total / episodes.len() as f64)
}

/// Adam state per parameter tensor.
struct Adam {
    m: Vec<ndarray::Array2<f64>>,
    v: Vec<ndarray::Array2<f64>>,
    t: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ParamSet) -> Adam {
        Adam {
            m: params.tensors.iter().map(|p| ndarray::Array2::zeros(p.dim())).collect(),
            v: params.tensors.iter().map(|p| ndarray::Array2::zeros(p.dim())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ParamSet, grads: &[ndarray::Array2<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            m.zip_mut_with(g, |mi, &gi| *mi = Self::BETA1 * *mi + (1.0 - Self::BETA1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = Self::BETA2 * *vi + (1.0 - Self::BETA2) * gi * gi);
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|pi, &mi, &vi| {
                    *pi -= lr * (mi / bc1) / ((vi / bc2).sqrt() + Self::EPS);
                });
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub pass: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

impl std::fmt::Display for TrainLogEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "pass {} train_loss {:.6} val_loss {:.6}",
            self.pass, self.train_loss, self.val_loss
        )
    }
}

/// A trained initialization plus everything needed to reproduce or reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub mlp_config: MLPConfig,
    pub meta_config: MetaConfig,
    pub corpus_digest: String,
    pub outer_steps: u64,
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSTLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    /// Binary layout: magic, little-endian version, SHA-256 of the payload,
    /// then the JSON payload.
    pub fn save(&self, path: &Path) -> Result<()> {
        let payload = serde_json::to_vec(self)?;
        let mut bytes = Vec::with_capacity(payload.len() + 44);
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let mut h = Sha256::new();
        h.update(&payload);
        bytes.extend_from_slice(&h.finalize());
        bytes.extend_from_slice(&payload);
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path)?;
        if bytes.len() < 44 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Corrupted(format!("{}: not a checkpoint file", path.display())));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version.to_string(),
                expected: CHECKPOINT_VERSION.to_string(),
            });
        }
        let payload = &bytes[44..];
        let mut h = Sha256::new();
        h.update(payload);
        if h.finalize().as_slice() != &bytes[12..44] {
            return Err(Error::Corrupted(format!("{}: digest mismatch", path.display())));
        }
        let ck: Checkpoint = serde_json::from_slice(payload)?;
        ck.params.validate(&ck.mlp_config)?;
        Ok(ck)
    }

    /// Reject a checkpoint trained under a different architecture.
    pub fn require_config(&self, expected: &MLPConfig) -> Result<()> {
        if &self.mlp_config != expected {
            return Err(Error::Incompatible(format!(
                "checkpoint architecture {:?} does not match expected {:?}",
                self.mlp_config, expected
            )));
        }
        Ok(())
    }
}

/// Meta-train an initialization on `train`, selecting the checkpoint with
/// the best validation objective. Deterministic given the configs.
pub fn meta_train(
    train: &[Episode],
    val: &[Episode],
    config: &MLPConfig,
    meta: &MetaConfig,
    corpus_digest: &str,
) -> Result<(Checkpoint, Vec<TrainLogEntry>)> {
    config.validate()?;
    meta.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("meta_train needs train and val episodes".into()));
    }
    for ep in train.iter().chain(val) {
        if ep.n_features() != config.input_dim {
            return Err(Error::InvalidArgument(format!(
                "episode has {} features, network expects {}",
                ep.n_features(),
                config.input_dim
            )));
        }
    }
    let mut params = ParamSet::init(config, &mut rng::stream(meta.seed, 0))?;
    let mut order_rng = rng::stream(meta.seed, 1);
    let mut noise_rng = rng::stream(meta.seed, 2);
    let mut adam = Adam::new(&params);
    let mut outer_steps = 0u64;

    let mut best_params = params.clone();
    let mut best_val = meta_objective(&params, val, config, meta)?;
    let mut best_steps = 0u64;
    let mut since_best = 0usize;
    let mut log = Vec::new();

    let mut indices: Vec<usize> = (0..train.len()).collect();
    for pass in 0..meta.total_passes {
        indices.shuffle(&mut order_rng);
        let mut pass_loss = 0.0;
        let mut pass_count = 0usize;
        for batch in indices.chunks(meta.meta_batch_size) {
            let mut mean_grads: Vec<ndarray::Array2<f64>> = params
                .tensors
                .iter()
                .map(|p| ndarray::Array2::zeros(p.dim()))
                .collect();
            for &ix in batch {
                let tape = Tape::new();
                let init = leaf_params(&tape, &params);
                let loss = episode_meta_loss(
                    &tape,
                    &init,
                    &train[ix],
                    config,
                    meta,
                    Mode::Train,
                    !meta.first_order,
                    &mut noise_rng,
                )?;
                let value = tape.scalar_value(loss)?;
                if !value.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite meta-loss on episode {ix} in pass {pass}"
                    )));
                }
                pass_loss += value;
                pass_count += 1;
                let grads = tape.grad(loss, &init)?;
                for (acc, &g) in mean_grads.iter_mut().zip(&grads) {
                    *acc += &(tape.value(g) / batch.len() as f64);
                }
            }
            match meta.outer_optimizer {
                OuterOptimizer::Adam => adam.step(&mut params, &mean_grads, meta.outer_lr),
                OuterOptimizer::Sgd => {
                    for (p, g) in params.tensors.iter_mut().zip(&mean_grads) {
                        *p -= &(meta.outer_lr * g);
                    }
                }
            }
            outer_steps += 1;
        }
        params.validate(config)?;
        let val_loss = meta_objective(&params, val, config, meta)?;
        log.push(TrainLogEntry { pass, train_loss: pass_loss / pass_count as f64, val_loss });
        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            best_steps = outer_steps;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= meta.patience {
                break;
            }
        }
    }

    Ok((
        Checkpoint {
            params: best_params,
            mlp_config: *config,
            meta_config: meta.clone(),
            corpus_digest: corpus_digest.to_string(),
            outer_steps: best_steps,
        },
        log,
    ))
}

/// Meta-test adaptation: plain sequential gradient descent on the support
/// set, one step per example per epoch, in list order, with dropout off.
/// `epochs = 0` returns the parameters unchanged.
pub fn adapt(
    params: &ParamSet,
    config: &MLPConfig,
    support: &[crate::episode::LabeledExample],
    epochs: usize,
    inner_lr: f64,
) -> Result<ParamSet> {
    if epochs == 0 {
        return Ok(params.clone());
    }
    if support.is_empty() {
        return Err(Error::InvalidArgument("adapt needs a nonempty support set".into()));
    }
    let steps = support.len() * epochs;
    let trajectory = inner_adapt(params, support, config, steps, inner_lr)?;
    let adapted = trajectory.into_iter().next_back().unwrap();
    adapted.validate(config)?;
    Ok(adapted)
}
