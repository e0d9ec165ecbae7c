//! End-to-end operations behind the command line: feature extraction,
//! clustering runs, evaluation, beta sweeps, 2-D projection and complexity
//! analysis. Each one reads and writes the formats in [`crate::io`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::audio::wav::read_wav;
use crate::audio::{extract_logmel, AudioClip, FeatureStats, FrontendConfig, LogMelFeature};
use crate::cluster::{HistoryRecord, Matrix, TrainOutcome, Trainer};
use crate::error::{Error, IoContext, Result};
use crate::io::{
    load_records, save_assignments, save_records, Assignment, Checkpoint, CheckpointHeader,
    DatasetManifest, FeatureStore, RunConfig, TensorRecord,
};
use crate::metrics::ContingencyTable;
use crate::model::{analyze_complexity, ArchitectureSpec, ComplexityReport, Dscan};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// A clip that could not be turned into a feature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipError {
    pub clip_id: String,
    pub wav_path: PathBuf,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct Extraction {
    pub store: FeatureStore,
    pub errors: Vec<ClipError>,
}

fn feature_record(f: LogMelFeature) -> TensorRecord {
    let tensor = Tensor::new([f.n_mels, f.frames], f.data).expect("feature dims match data");
    TensorRecord::new(f.clip_id, tensor)
}

/// Runs `work` on every item across the available cores, keeping order.
fn par_map<T: Sync, U: Send>(items: &[T], work: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(work).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&work).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("extraction worker panicked"))
            .collect()
    })
}

/// One log-mel record per readable clip of the manifest, in manifest
/// order. Unreadable or corrupt files are reported in `errors` and skipped.
pub fn extract_features(
    manifest: &DatasetManifest,
    frontend: &FrontendConfig,
) -> Result<Extraction> {
    if manifest.is_empty() {
        return Err(Error::Input("manifest lists no clips".into()));
    }
    let results = par_map(&manifest.rows, |row| {
        read_wav(&row.wav_path, &row.clip_id).and_then(|clip| extract_logmel(&clip, frontend))
    });
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (row, res) in manifest.rows.iter().zip(results) {
        match res {
            Ok(f) => records.push(feature_record(f)),
            Err(e) => errors.push(ClipError {
                clip_id: row.clip_id.clone(),
                wav_path: row.wav_path.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok(Extraction {
        store: FeatureStore::new(records)?,
        errors,
    })
}

/// Features of in-memory clips.
pub fn features_from_clips(clips: &[AudioClip], frontend: &FrontendConfig) -> Result<FeatureStore> {
    let feats = par_map(clips, |c| extract_logmel(c, frontend));
    FeatureStore::new(
        feats
            .into_iter()
            .map(|f| f.map(feature_record))
            .collect::<Result<_>>()?,
    )
}

/// Stacks a store into a network batch standardized by its global mean
/// and standard deviation.
pub fn standardized_batch(store: &FeatureStore) -> Result<(Tensor, FeatureStats)> {
    let mut batch = store.to_batch()?;
    let stats = FeatureStats::fit(batch.data())?;
    stats.apply(batch.data_mut());
    Ok((batch, stats))
}

fn reference_model(store: &FeatureStore, config: &RunConfig) -> Result<Dscan> {
    let spec = ArchitectureSpec::reference(config.training.num_clusters);
    let [h, w] = store
        .feature_shape()
        .ok_or_else(|| Error::Input("feature store is empty".into()))?;
    if [h, w] != [spec.input_shape[0], spec.input_shape[1]] {
        return Err(Error::dim(
            "run_clustering",
            format!(
                "features are {h}x{w}, the model expects {}x{}",
                spec.input_shape[0], spec.input_shape[1]
            ),
        ));
    }
    Dscan::new(spec, &mut stream(config.training.seed, Stream::Init))
}

#[derive(Clone, Debug)]
pub struct ClusteringRun {
    pub ids: Vec<String>,
    pub outcome: TrainOutcome,
    pub feature_stats: FeatureStats,
}

/// Paths written by [`ClusteringRun::write`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RunFiles {
    pub assignments: PathBuf,
    pub history: PathBuf,
    pub checkpoint: PathBuf,
    pub embeddings: PathBuf,
}

impl ClusteringRun {
    pub fn assignments(&self) -> Vec<Assignment> {
        self.ids
            .iter()
            .zip(&self.outcome.state.hard_labels)
            .map(|(id, &cluster)| Assignment {
                clip_id: id.clone(),
                cluster,
            })
            .collect()
    }

    pub fn checkpoint(&self, config: &RunConfig) -> Checkpoint {
        let o = &self.outcome;
        let last_change = o.history.iter().rev().find_map(|h| h.label_change_fraction);
        Checkpoint {
            header: CheckpointHeader {
                spec: o.model.spec().clone(),
                training: config.training.clone(),
                frontend: config.frontend.clone(),
                feature_stats: self.feature_stats,
                metadata: serde_json::json!({
                    "n_clips": self.ids.len(),
                    "joint_iters": o.joint_iters,
                    "converged": o.converged,
                    "final_label_change_fraction": last_change,
                }),
            },
            model: o.model.clone(),
            centers: Some(o.state.centers.clone()),
        }
    }

    pub fn write(&self, config: &RunConfig) -> Result<RunFiles> {
        std::fs::create_dir_all(&config.out).at(&config.out)?;
        let files = RunFiles {
            assignments: config.assignments_path(),
            history: config.out.join("history.jsonl"),
            checkpoint: config.checkpoint_path(),
            embeddings: config.embeddings_path(),
        };
        save_assignments(&files.assignments, &self.assignments())?;
        write_history(&files.history, &self.outcome.history)?;
        self.checkpoint(config).save(&files.checkpoint)?;
        save_embeddings(&files.embeddings, &self.ids, &self.outcome.embeddings)?;
        Ok(files)
    }
}

/// Trains the reference model on a store without touching the disk.
pub fn cluster_store(store: &FeatureStore, config: &RunConfig) -> Result<ClusteringRun> {
    config.validate()?;
    let model = reference_model(store, config)?;
    let (batch, feature_stats) = standardized_batch(store)?;
    let mut trainer = Trainer::new(model, store.len(), config.training.clone())?;
    trainer.pretrain(&batch)?;
    let outcome = trainer.run_joint(&batch)?;
    Ok(ClusteringRun {
        ids: store.ids().into_iter().map(String::from).collect(),
        outcome,
        feature_stats,
    })
}

/// [`cluster_store`] followed by writing assignments, history, checkpoint
/// and embeddings under the configured paths.
pub fn run_clustering(
    config: &RunConfig,
    store: &FeatureStore,
) -> Result<(ClusteringRun, RunFiles)> {
    let run = cluster_store(store, config)?;
    let files = run.write(config)?;
    Ok((run, files))
}

pub fn write_history(path: impl AsRef<Path>, history: &[HistoryRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).at(path)?);
    for h in history {
        serde_json::to_writer(&mut w, h)?;
        w.write_all(b"\n").at(path)?;
    }
    w.flush().at(path)
}

/// One `[D]` record per clip.
pub fn save_embeddings(path: impl AsRef<Path>, ids: &[String], z: &Matrix) -> Result<()> {
    if ids.len() != z.rows() {
        return Err(Error::dim(
            "save_embeddings",
            format!("{} ids for {} rows", ids.len(), z.rows()),
        ));
    }
    let records: Vec<TensorRecord> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let row = z.row(i).iter().map(|&v| v as f32).collect();
            TensorRecord::new(id, Tensor::new([z.cols()], row).expect("1-d"))
        })
        .collect();
    save_records(path, &records)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(Vec<String>, Matrix)> {
    let path = path.as_ref();
    let records = load_records(path)?;
    let dim = records.first().map_or(0, |r| r.tensor.len());
    let mut ids = Vec::with_capacity(records.len());
    let mut data = Vec::with_capacity(records.len() * dim);
    for r in records {
        if r.tensor.shape() != [dim] {
            return Err(Error::Format(format!(
                "{}: embedding {} has shape {:?}, expected [{dim}]",
                path.display(),
                r.id,
                r.tensor.shape()
            )));
        }
        data.extend(r.tensor.data().iter().map(|&v| v as f64));
        ids.push(r.id);
    }
    let n = ids.len();
    Ok((ids, Matrix::new(n, dim, data)?))
}

/// Labels of `ids` in the manifest; every id must be present and labeled.
pub fn labels_for<'a>(
    ids: impl IntoIterator<Item = &'a str>,
    manifest: &DatasetManifest,
) -> Result<Vec<String>> {
    let by_id: HashMap<&str, Option<&str>> = manifest
        .rows
        .iter()
        .map(|r| (r.clip_id.as_str(), r.label.as_deref()))
        .collect();
    let mut labels = Vec::new();
    let mut missing = Vec::new();
    let mut unlabeled = Vec::new();
    for id in ids {
        match by_id.get(id) {
            Some(Some(l)) => labels.push(l.to_string()),
            Some(None) => unlabeled.push(id),
            None => missing.push(id),
        }
    }
    if missing.is_empty() && unlabeled.is_empty() {
        return Ok(labels);
    }
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("not in the manifest: {missing:?}"));
    }
    if !unlabeled.is_empty() {
        parts.push(format!("unlabeled: {unlabeled:?}"));
    }
    Err(Error::Input(format!(
        "cannot evaluate clips {}",
        parts.join("; ")
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterMapping {
    pub cluster: String,
    /// Matched class, if the cluster was matched.
    pub class: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nmi: f64,
    pub ca: f64,
    pub n_clips: usize,
    pub contingency_table: ContingencyTable,
    pub mapping: Vec<ClusterMapping>,
}

pub fn score(pred: &[usize], truth: &[String]) -> Result<MetricsReport> {
    let table = ContingencyTable::new(pred, truth)?;
    let (map, correct) = table.best_mapping();
    let mapping = table
        .clusters
        .iter()
        .zip(map)
        .map(|(c, m)| ClusterMapping {
            cluster: c.clone(),
            class: m.map(|j| table.classes[j].clone()),
        })
        .collect();
    Ok(MetricsReport {
        nmi: table.nmi(),
        ca: correct as f64 / table.total as f64,
        n_clips: pred.len(),
        contingency_table: table,
        mapping,
    })
}

/// NMI and CA of an assignment file against manifest labels.
pub fn evaluate(assignments: &[Assignment], manifest: &DatasetManifest) -> Result<MetricsReport> {
    if assignments.is_empty() {
        return Err(Error::Input("no assignments to evaluate".into()));
    }
    let truth = labels_for(assignments.iter().map(|a| a.clip_id.as_str()), manifest)?;
    let pred: Vec<usize> = assignments.iter().map(|a| a.cluster).collect();
    score(&pred, &truth)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub nmi: Option<f64>,
    pub ca: Option<f64>,
    pub joint_iters: Option<usize>,
    pub converged: Option<bool>,
    /// Losses of the last recorded update.
    pub final_l_r: Option<f64>,
    pub final_l_c: Option<f64>,
    pub error: Option<String>,
}

/// One joint phase per beta from a shared pretrained autoencoder. A run
/// only differs from a full [`cluster_store`] with that beta in not
/// repeating the pretraining, which is deterministic and beta-independent.
/// Beta 0 skips the joint phase and scores the K-means initialization.
/// A failing beta is recorded in its row and the sweep moves on.
pub fn sweep_beta(
    config: &RunConfig,
    store: &FeatureStore,
    labels: &[String],
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    config.validate()?;
    if grid.is_empty() {
        return Err(Error::Config("beta grid is empty".into()));
    }
    if labels.len() != store.len() {
        return Err(Error::Input(format!(
            "{} labels for {} clips",
            labels.len(),
            store.len()
        )));
    }
    let model = reference_model(store, config)?;
    let (batch, _) = standardized_batch(store)?;
    let mut base = Trainer::new(model, store.len(), config.training.clone())?;
    base.pretrain(&batch)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &beta in grid {
        let result = (|| {
            let mut cfg = config.training.clone();
            cfg.beta = beta;
            if beta == 0.0 {
                cfg.max_iters = 0;
            }
            let mut trainer = base.clone();
            trainer.set_config(cfg)?;
            let outcome = trainer.run_joint(&batch)?;
            let report = score(&outcome.state.hard_labels, labels)?;
            Ok::<_, Error>((report, outcome))
        })();
        rows.push(match result {
            Ok((r, o)) => SweepRow {
                beta,
                nmi: Some(r.nmi),
                ca: Some(r.ca),
                joint_iters: Some(o.joint_iters),
                converged: Some(o.converged),
                final_l_r: o.history.last().map(|h| h.l_r),
                final_l_c: o.history.iter().rev().find_map(|h| h.l_c),
                error: None,
            },
            Err(e) => SweepRow {
                beta,
                nmi: None,
                ca: None,
                joint_iters: None,
                converged: None,
                final_l_r: None,
                final_l_c: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(rows)
}

/// `beta,nmi,ca`; failed runs leave the scores empty.
pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(File::create(path).at(path)?);
    w.write_record(["beta", "nmi", "ca"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        w.write_record([r.beta.to_string(), opt(r.nmi), opt(r.ca)])?;
    }
    w.flush().at(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub clip_id: String,
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pca2 {
    pub points: Vec<[f64; 2]>,
    /// Variance along the two components.
    pub variance: [f64; 2],
    /// Set when the input has no spread and every point maps to the origin.
    pub warning: Option<String>,
}

/// First two principal components. Each component's largest-magnitude
/// loading is made positive (the first such loading on ties).
pub fn pca_2d(z: &Matrix) -> Result<Pca2> {
    let (n, d) = (z.rows(), z.cols());
    if n < 2 {
        return Err(Error::Input(format!(
            "projection needs at least 2 embeddings, got {n}"
        )));
    }
    if d == 0 {
        return Err(Error::Input("embeddings have no dimensions".into()));
    }
    if !z.data().iter().all(|v| v.is_finite()) {
        return Err(Error::Input("projection: non-finite embedding".into()));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut()
            .zip(z.row(i))
            .for_each(|(m, v)| *m += v / n as f64);
    }
    let x = DMatrix::from_fn(n, d, |i, j| z.get(i, j) - mean[j]);
    let scale = z.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if x.iter().all(|v| v.abs() <= 1e-12 * scale) {
        return Ok(Pca2 {
            points: vec![[0.0, 0.0]; n],
            variance: [0.0, 0.0],
            warning: Some(format!(
                "all {n} embeddings are identical; every point is placed at the origin"
            )),
        });
    }
    let cov = x.transpose() * &x / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut points = vec![[0.0; 2]; n];
    let mut variance = [0.0; 2];
    for (c, &k) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = (0..d).fold(
            0,
            |best, j| if v[j].abs() > v[best].abs() { j } else { best },
        );
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        let proj = &x * v;
        for (p, val) in points.iter_mut().zip(proj.iter()) {
            p[c] = *val;
        }
        variance[c] = eig.eigenvalues[k].max(0.0);
    }
    Ok(Pca2 {
        points,
        variance,
        warning: None,
    })
}

/// PCA coordinates for every clip, with its cluster from `assignments`.
pub fn project_2d(
    ids: &[String],
    z: &Matrix,
    assignments: &[Assignment],
) -> Result<(Vec<ProjectionRow>, Option<String>)> {
    if ids.len() != z.rows() {
        return Err(Error::dim(
            "project_2d",
            format!("{} ids for {} embeddings", ids.len(), z.rows()),
        ));
    }
    let cluster: HashMap<&str, usize> = assignments
        .iter()
        .map(|a| (a.clip_id.as_str(), a.cluster))
        .collect();
    let missing: Vec<&str> = ids
        .iter()
        .map(String::as_str)
        .filter(|id| !cluster.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Input(format!(
            "no cluster assignment for clips {missing:?}"
        )));
    }
    let pca = pca_2d(z)?;
    let rows = ids
        .iter()
        .zip(&pca.points)
        .map(|(id, p)| ProjectionRow {
            clip_id: id.clone(),
            x: p[0],
            y: p[1],
            cluster: cluster[id.as_str()],
        })
        .collect();
    Ok((rows, pca.warning))
}

pub fn write_projection_csv(path: impl AsRef<Path>, rows: &[ProjectionRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(File::create(path).at(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["clip_id", "x", "y", "cluster"])?;
    }
    w.flush().at(path)
}

/// Complexity of the reference model with `num_clusters` centers.
pub fn analyze(config: &RunConfig) -> Result<ComplexityReport> {
    analyze_complexity(&ArchitectureSpec::reference(config.training.num_clusters))
}
