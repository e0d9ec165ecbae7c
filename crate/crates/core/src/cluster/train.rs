use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{hard_labels, kmeans_with_rng, soft_assign, target_distribution, Matrix};
use crate::error::{Error, Result};
use crate::model::Dscan;
use crate::rng::{stream, Stream};
use crate::tensor::{Adam, BatchNormMode, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Weight of the clustering loss in the joint objective.
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub pretrain_iters: usize,
    /// Upper bound on joint-phase updates.
    pub max_iters: usize,
    /// Stop once fewer than this fraction of hard labels change between
    /// two refreshes of the target distribution.
    pub epsilon: f64,
    /// Joint-phase updates between refreshes of Q, P and the hard labels.
    pub target_update_interval: usize,
    pub num_clusters: usize,
    pub kmeans_restarts: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            beta: 0.3,
            lr: 0.001,
            batch_size: 32,
            pretrain_iters: 200,
            max_iters: 4000,
            epsilon: 0.05,
            target_update_interval: 100,
            num_clusters: 9,
            kmeans_restarts: 10,
            alpha: 1.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0,1), got {}", self.epsilon));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("target_update_interval", self.target_update_interval),
            ("num_clusters", self.num_clusters),
            ("kmeans_restarts", self.kmeans_restarts),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// One batch update. Losses are those of the batch the update was computed
/// on; `label_change_fraction` is set on updates followed by a refresh of
/// the hard labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: usize,
    #[serde(rename = "L_r")]
    pub l_r: f64,
    #[serde(rename = "L_c")]
    pub l_c: Option<f64>,
    #[serde(rename = "L_J")]
    pub l_j: f64,
    pub label_change_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub centers: Matrix,
    pub q: Matrix,
    pub p: Matrix,
    pub hard_labels: Vec<usize>,
    pub alpha: f64,
}

impl ClusterState {
    fn refresh(z: &Matrix, centers: Matrix, alpha: f64) -> Result<Self> {
        let q = soft_assign(z, &centers, alpha)?;
        let p = target_distribution(&q)?;
        Ok(ClusterState {
            hard_labels: hard_labels(&q),
            centers,
            q,
            p,
            alpha,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Dscan,
    pub state: ClusterState,
    pub history: Vec<HistoryRecord>,
    /// Embeddings of every clip from the final refresh.
    pub embeddings: Matrix,
    pub kmeans_labels: Vec<usize>,
    pub kmeans_centers: Matrix,
    /// Whether the label-change rule stopped the joint phase.
    pub converged: bool,
    pub joint_iters: usize,
}

pub fn label_change_fraction(a: &[usize], b: &[usize]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

/// Epoch-wise shuffled mini-batches. An incomplete trailing batch is
/// dropped; a dataset no larger than one batch is used whole.
#[derive(Clone, Debug)]
struct Batcher {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    size: usize,
}

impl Batcher {
    fn new(n: usize, size: usize, rng: ChaCha8Rng) -> Self {
        Batcher {
            rng,
            order: (0..n).collect(),
            cursor: usize::MAX,
            size: size.min(n),
        }
    }

    fn next(&mut self) -> &[usize] {
        if self.cursor.saturating_add(self.size) > self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let b = &self.order[self.cursor..self.cursor + self.size];
        self.cursor += self.size;
        b
    }
}

fn gather(features: &Tensor, idx: &[usize]) -> Tensor {
    let per: usize = features.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&features.data()[i * per..(i + 1) * per]);
    }
    let mut shape = features.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data).expect("gathered rows match shape")
}

fn embed(model: &Dscan, features: &Tensor) -> Result<Matrix> {
    Matrix::from_tensor(&model.encode(features)?)
}

fn check_finite(iter: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            iter,
            detail: format!("{what} became {v}"),
        })
    }
}

/// Runs the optimization in two resumable stages so the pretrained state
/// can be shared by several joint phases.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Dscan,
    config: TrainingConfig,
    batcher: Batcher,
    history: Vec<HistoryRecord>,
    iter: usize,
}

impl Trainer {
    pub fn new(model: Dscan, n_clips: usize, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        if n_clips < 2 {
            return Err(Error::Input(format!(
                "training needs at least 2 clips, got {n_clips}"
            )));
        }
        if n_clips < config.num_clusters {
            return Err(Error::Input(format!(
                "{n_clips} clips cannot fill {} clusters",
                config.num_clusters
            )));
        }
        let batcher = Batcher::new(
            n_clips,
            config.batch_size,
            stream(config.seed, Stream::Batching),
        );
        Ok(Trainer {
            model,
            config,
            batcher,
            history: Vec::new(),
            iter: 0,
        })
    }

    pub fn model(&self) -> &Dscan {
        &self.model
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        self.config.beta = beta;
        self.config.validate()
    }

    /// Swaps in new joint-phase settings. Batch size and seed are fixed
    /// once the trainer exists.
    pub fn set_config(&mut self, config: TrainingConfig) -> Result<()> {
        config.validate()?;
        if (config.batch_size, config.seed) != (self.config.batch_size, self.config.seed) {
            return Err(Error::Config(
                "batch_size and seed cannot change after the trainer is created".into(),
            ));
        }
        self.config = config;
        Ok(())
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    fn check_features(&self, features: &Tensor) -> Result<()> {
        if features.shape().first() != Some(&self.batcher.order.len()) {
            return Err(Error::dim(
                "train",
                format!(
                    "trainer was set up for {} clips, features are {:?}",
                    self.batcher.order.len(),
                    features.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Autoencoder updates on the reconstruction loss alone.
    pub fn pretrain(&mut self, features: &Tensor) -> Result<()> {
        self.check_features(features)?;
        let mut adam = Adam::new(self.config.lr as f32);
        for _ in 0..self.config.pretrain_iters {
            let batch = gather(features, self.batcher.next());
            let mut tape = Tape::new();
            let b = self.model.bind(&mut tape, true);
            let x = tape.constant(batch);
            let z = self
                .model
                .encode_on(&mut tape, &b, x, BatchNormMode::Train)?;
            let y = self
                .model
                .decode_on(&mut tape, &b, z, BatchNormMode::Train)?;
            let loss = tape.reconstruction_loss(y, x)?;
            let l_r = tape.value(loss).data()[0] as f64;
            self.iter += 1;
            check_finite(self.iter, "reconstruction loss", l_r)?;
            let grads = tape.backward(loss)?;
            self.model.zero_grad();
            self.model.accumulate_grads(&b, &grads)?;
            adam.step(&mut self.model.param_tensors_mut())?;
            self.history.push(HistoryRecord {
                iter: self.iter,
                l_r,
                l_c: None,
                l_j: l_r,
                label_change_fraction: None,
            });
        }
        Ok(())
    }

    /// K-means initialization of the centers followed by joint updates of
    /// the autoencoder and the centers on `L_r + beta * L_c`.
    pub fn run_joint(mut self, features: &Tensor) -> Result<TrainOutcome> {
        self.check_features(features)?;
        let cfg = self.config.clone();
        let z = embed(&self.model, features)?;
        let mut km_rng = stream(cfg.seed, Stream::KMeans);
        let km = kmeans_with_rng(&z, cfg.num_clusters, cfg.kmeans_restarts, &mut km_rng)?;
        let mut state = ClusterState::refresh(&z, km.centers.clone(), cfg.alpha)?;
        let mut embeddings = z;
        let mut centers = km.centers.to_tensor().with_requires_grad();
        let mut adam = Adam::new(cfg.lr as f32);
        let mut converged = false;
        let mut t = 0;
        while t < cfg.max_iters {
            let idx = self.batcher.next().to_vec();
            let batch = gather(features, &idx);
            let p_batch = state.p.select_rows(&idx).to_tensor();
            let mut tape = Tape::new();
            let b = self.model.bind(&mut tape, true);
            let c = tape.param(&centers);
            let x = tape.constant(batch);
            let p = tape.constant(p_batch);
            let z = self
                .model
                .encode_on(&mut tape, &b, x, BatchNormMode::Train)?;
            let q = tape.soft_assign(z, c, cfg.alpha)?;
            let lc = tape.kl_divergence(p, q)?;
            let y = self
                .model
                .decode_on(&mut tape, &b, z, BatchNormMode::Train)?;
            let lr = tape.reconstruction_loss(y, x)?;
            let weighted = tape.scale(lc, cfg.beta as f32);
            let loss = tape.add(lr, weighted)?;
            let (l_r, l_c) = (
                tape.value(lr).data()[0] as f64,
                tape.value(lc).data()[0] as f64,
            );
            let l_j = tape.value(loss).data()[0] as f64;
            self.iter += 1;
            check_finite(self.iter, "joint loss", l_j)?;
            let grads = tape.backward(loss)?;
            self.model.zero_grad();
            self.model.accumulate_grads(&b, &grads)?;
            centers.zero_grad();
            grads.accumulate_into(c, &mut centers)?;
            let mut params = self.model.param_tensors_mut();
            params.push(&mut centers);
            adam.step(&mut params)?;
            self.history.push(HistoryRecord {
                iter: self.iter,
                l_r,
                l_c: Some(l_c),
                l_j,
                label_change_fraction: None,
            });
            t += 1;
            if t % cfg.target_update_interval == 0 || t == cfg.max_iters {
                embeddings = embed(&self.model, features)?;
                let prev = std::mem::take(&mut state.hard_labels);
                state =
                    ClusterState::refresh(&embeddings, Matrix::from_tensor(&centers)?, cfg.alpha)?;
                let change = label_change_fraction(&prev, &state.hard_labels);
                if let Some(last) = self.history.last_mut() {
                    last.label_change_fraction = Some(change);
                }
                if change < cfg.epsilon {
                    converged = true;
                    break;
                }
            }
        }
        Ok(TrainOutcome {
            model: self.model,
            state,
            history: self.history,
            embeddings,
            kmeans_labels: km.labels,
            kmeans_centers: km.centers,
            converged,
            joint_iters: t,
        })
    }
}

/// Pretraining, K-means initialization and the joint phase in one go.
pub fn train(model: Dscan, features: &Tensor, config: &TrainingConfig) -> Result<TrainOutcome> {
    let n = features.shape().first().copied().unwrap_or(0);
    let mut trainer = Trainer::new(model, n, config.clone())?;
    trainer.pretrain(features)?;
    trainer.run_joint(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = TrainingConfig::default();
        assert_eq!(
            (
                c.lr,
                c.batch_size,
                c.pretrain_iters,
                c.max_iters,
                c.epsilon,
                c.num_clusters
            ),
            (0.001, 32, 200, 4000, 0.05, 9)
        );
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for c in [
            TrainingConfig {
                beta: -0.1,
                ..Default::default()
            },
            TrainingConfig {
                epsilon: 1.0,
                ..Default::default()
            },
            TrainingConfig {
                batch_size: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn batcher_covers_each_epoch_once() {
        let mut b = Batcher::new(10, 3, ChaCha8Rng::seed_from_u64(0));
        let mut seen: Vec<usize> = (0..3).flat_map(|_| b.next().to_vec()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        let mut whole = Batcher::new(4, 32, ChaCha8Rng::seed_from_u64(0));
        assert_eq!(whole.next().len(), 4);
    }

    #[test]
    fn change_fraction_counts_differences() {
        assert_eq!(label_change_fraction(&[0, 1, 2, 2], &[0, 1, 1, 0]), 0.5);
    }
}
