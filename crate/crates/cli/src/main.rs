use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use dscan::io::{load_assignments, DatasetManifest, FeatureStore, RunConfig};
use dscan::pipeline::{
    analyze, evaluate, extract_features, labels_for, load_embeddings, project_2d, run_clustering,
    sweep_beta, write_projection_csv, write_sweep_csv,
};
use dscan::synth::{write_toy_dataset, ToyConfig};
use dscan::Error;

/// Unsupervised clustering of audio clips with a depthwise separable
/// convolutional autoencoder.
///
/// Settings come from the defaults, then `--config`, then individual flags.
/// Every configuration key is also a flag (`--batch_size 16` or
/// `--batch-size 16`). Results are summarized as JSON on stdout; failures
/// print `{"error": {"kind", "message"}}` on stderr and exit nonzero.
#[derive(Debug, Parser)]
#[command(name = "dscan", version)]
struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Log-mel features for every clip of a manifest.
    Extract,
    /// Pretrain, initialize with K-means and run the joint phase.
    Train,
    /// NMI and clustering accuracy of an assignment file.
    Evaluate {
        /// Metrics report; defaults to <out>/metrics.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train once per beta from a shared pretrained model and score each run.
    SweepBeta {
        /// Defaults to <out>/sweep_beta.csv.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Project embeddings onto their first two principal components.
    Project {
        /// Defaults to <out>/projection.csv.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Parameter and MAC counts of the reference model.
    Analyze {
        /// Defaults to <out>/complexity.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a synthetic labeled dataset (WAV files and manifest) to <out>.
    Toy {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(
            long = "clips_per_class",
            alias = "clips-per-class",
            default_value_t = 100
        )]
        clips_per_class: usize,
        #[arg(
            long = "duration_secs",
            alias = "duration-secs",
            default_value_t = 10.0
        )]
        duration_secs: f64,
    },
}

macro_rules! overrides {
    ($($field:ident => $key:literal, $alias:literal;)*) => {
        /// One optional flag per configuration key.
        #[derive(Debug, Args)]
        struct Overrides {
            $(
                #[arg(long = $key, alias = $alias, global = true, value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut v = Vec::new();
                $(
                    if let Some(x) = &self.$field {
                        v.push(($key, x.as_str()));
                    }
                )*
                v
            }
        }
    };
}

overrides! {
    beta => "beta", "beta";
    lr => "lr", "lr";
    batch_size => "batch_size", "batch-size";
    pretrain_iters => "pretrain_iters", "pretrain-iters";
    max_iters => "max_iters", "max-iters";
    epsilon => "epsilon", "epsilon";
    target_update_interval => "target_update_interval", "target-update-interval";
    num_clusters => "num_clusters", "num-clusters";
    kmeans_restarts => "kmeans_restarts", "kmeans-restarts";
    alpha => "alpha", "alpha";
    seed => "seed", "seed";
    beta_grid => "beta_grid", "beta-grid";
    sample_rate => "sample_rate", "sample-rate";
    frame_ms => "frame_ms", "frame-ms";
    hop_ms => "hop_ms", "hop-ms";
    f_min => "f_min", "f-min";
    f_max => "f_max", "f-max";
    manifest => "manifest", "manifest";
    features => "features", "features";
    out => "out", "out";
    checkpoint => "checkpoint", "checkpoint";
    assignments => "assignments", "assignments";
    embeddings => "embeddings", "embeddings";
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for (k, v) in cli.overrides.pairs() {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn manifest(cfg: &RunConfig) -> Result<DatasetManifest, Error> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Usage("this command needs --manifest".into()))?;
    DatasetManifest::load(path)
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: &Cli) -> Result<Value, Error> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Extract => {
            let m = manifest(&cfg)?;
            let ex = extract_features(&m, &cfg.frontend)?;
            ensure_dir(&cfg.out)?;
            let errors_path = cfg.out.join("extract_errors.json");
            write_json(&errors_path, &ex.errors)?;
            for e in &ex.errors {
                eprintln!("warning: skipped {}: {}", e.clip_id, e.message);
            }
            if ex.store.is_empty() {
                return Err(Error::Input(format!(
                    "no clip of the manifest could be read; see {}",
                    errors_path.display()
                )));
            }
            let path = cfg.features_path();
            ex.store.save(&path)?;
            Ok(json!({
                "features": path,
                "records": ex.store.len(),
                "failed": ex.errors.len(),
                "errors": errors_path,
            }))
        }
        Command::Train => {
            let store = FeatureStore::load(cfg.features_path())?;
            let (run, files) = run_clustering(&cfg, &store)?;
            std::fs::write(cfg.out.join("run_config.txt"), cfg.to_text()).map_err(|source| {
                Error::File {
                    path: cfg.out.join("run_config.txt"),
                    source,
                }
            })?;
            Ok(json!({
                "files": files,
                "clips": run.ids.len(),
                "joint_iters": run.outcome.joint_iters,
                "converged": run.outcome.converged,
            }))
        }
        Command::Evaluate { report } => {
            let m = manifest(&cfg)?;
            let a = load_assignments(cfg.assignments_path())?;
            let r = evaluate(&a, &m)?;
            ensure_dir(&cfg.out)?;
            let path = report
                .clone()
                .unwrap_or_else(|| cfg.out.join("metrics.json"));
            write_json(&path, &r)?;
            Ok(json!({"report": path, "nmi": r.nmi, "ca": r.ca, "n_clips": r.n_clips}))
        }
        Command::SweepBeta { csv } => {
            let m = manifest(&cfg)?;
            let store = FeatureStore::load(cfg.features_path())?;
            let labels = labels_for(store.ids(), &m)?;
            let rows = sweep_beta(&cfg, &store, &labels, &cfg.beta_grid)?;
            for r in rows.iter().filter(|r| r.error.is_some()) {
                eprintln!(
                    "warning: beta {} failed: {}",
                    r.beta,
                    r.error.as_deref().unwrap_or("")
                );
            }
            ensure_dir(&cfg.out)?;
            let path = csv
                .clone()
                .unwrap_or_else(|| cfg.out.join("sweep_beta.csv"));
            write_sweep_csv(&path, &rows)?;
            Ok(json!({"csv": path, "runs": rows}))
        }
        Command::Project { csv } => {
            let (ids, z) = load_embeddings(cfg.embeddings_path())?;
            let a = load_assignments(cfg.assignments_path())?;
            let (rows, warning) = project_2d(&ids, &z, &a)?;
            if let Some(w) = &warning {
                eprintln!("warning: {w}");
            }
            ensure_dir(&cfg.out)?;
            let path = csv
                .clone()
                .unwrap_or_else(|| cfg.out.join("projection.csv"));
            write_projection_csv(&path, &rows)?;
            Ok(json!({"csv": path, "points": rows.len(), "warning": warning}))
        }
        Command::Analyze { report } => {
            let r = analyze(&cfg)?;
            ensure_dir(&cfg.out)?;
            let path = report
                .clone()
                .unwrap_or_else(|| cfg.out.join("complexity.json"));
            write_json(&path, &r)?;
            Ok(json!({"report": path, "total_params": r.total_params, "total_macs": r.total_macs}))
        }
        Command::Toy {
            classes,
            clips_per_class,
            duration_secs,
        } => {
            let toy = ToyConfig {
                classes: *classes,
                clips_per_class: *clips_per_class,
                duration_secs: *duration_secs,
                seed: cfg.training.seed,
                ..ToyConfig::default()
            };
            let m = write_toy_dataset(&cfg.out, &toy)?;
            Ok(json!({"manifest": cfg.out.join("manifest.csv"), "clips": m.len()}))
        }
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({"error": {"kind": kind, "message": message}}));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = if matches!(e, Error::Usage(_)) { 2 } else { 1 };
            fail(e.kind(), &e.to_string(), code)
        }
    }
}
