//! End-to-end pipeline: generate, identify, design, detect, isolate, report.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use inkwell_core::fd::{
    calibrate_threshold_with, compute_residual, detect, residual_statistic, synthesize,
    DetectionStatistic,
};
use inkwell_core::fi::{isolate_knn, isolate_lr, train_templates, IsolationMethod};
use inkwell_core::metrics::{evaluate_detection, evaluate_isolation, ClassScore};
use inkwell_core::model::FaultVariant;
use inkwell_core::sim::{
    generate_dataset, write_dataset_csv, write_dataset_sidecar, LabeledDataset, Signal,
};
use inkwell_core::sysid::identify;

use crate::config::ExperimentConfig;
use crate::io::{meta_path, write_json_pretty, ResidualMeta, ResidualRow};

/// Pipeline stage names used in error reporting and exit diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Generate,
    Identify,
    Design,
    Detect,
    Isolate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Generate => "generate",
            Stage::Identify => "identify",
            Stage::Design => "design",
            Stage::Detect => "detect",
            Stage::Isolate => "isolate",
            Stage::Report => "report",
        };
        f.write_str(name)
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: anyhow::Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

/// Which signal feeds the isolation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamKind {
    #[serde(rename = "r")]
    Residual,
    #[serde(rename = "y")]
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSection {
    pub confusion: [[usize; 2]; 2],
    pub tdr: f64,
    pub far: f64,
    pub threshold: f64,
    pub mu: f64,
    pub statistic: DetectionStatistic,
    /// Healthy test signals that crossed the threshold and therefore reached
    /// the isolation stage; they carry no fault class to recover and are
    /// excluded from the isolation scores.
    pub flagged_healthy: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationCell {
    pub training_fraction: f64,
    pub training_size: usize,
    pub stream: StreamKind,
    pub method: IsolationMethod,
    pub hma: f64,
    pub class_order: Vec<FaultVariant>,
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub seed_train: u64,
    pub seed_test: u64,
    pub filter_digest: String,
    pub train_size: usize,
    pub test_size: usize,
    pub model_fit_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub detection: DetectionSection,
    pub isolation: Vec<IsolationCell>,
    pub provenance: Provenance,
}

fn stage<T, E: Into<anyhow::Error>>(s: Stage, r: Result<T, E>) -> Result<T, StageError> {
    r.map_err(|e| StageError {
        stage: s,
        source: e.into(),
    })
}

/// Runs the full pipeline into `outdir`, writing every intermediate artifact
/// and the report. The result is a pure function of the configuration.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    outdir: &Path,
) -> Result<ExperimentReport, StageError> {
    stage(
        Stage::Generate,
        cfg.validate().map_err(|e| anyhow::anyhow!(e)),
    )?;
    stage(Stage::Generate, std::fs::create_dir_all(outdir))?;

    // Datasets: shared settings, disjoint seeds.
    let mut train_cfg = cfg.generation.clone();
    train_cfg.seed = cfg.seed_train;
    let mut test_cfg = cfg.generation.clone();
    test_cfg.seed = cfg.seed_test;
    let train = stage(Stage::Generate, generate_dataset(&train_cfg))?;
    let test = stage(Stage::Generate, generate_dataset(&test_cfg))?;
    let train_path = outdir.join("train.csv");
    let test_path = outdir.join("test.csv");
    stage(Stage::Generate, write_dataset_csv(&train, &train_path))?;
    stage(
        Stage::Generate,
        write_dataset_sidecar(&train_cfg, crate::io::sidecar_path(&train_path)),
    )?;
    stage(Stage::Generate, write_dataset_csv(&test, &test_path))?;
    stage(
        Stage::Generate,
        write_dataset_sidecar(&test_cfg, crate::io::sidecar_path(&test_path)),
    )?;

    // Healthy-data identification.
    let mut healthy: Vec<Signal> = train
        .of_class(FaultVariant::Healthy)
        .cloned()
        .collect();
    if let Some(cap) = cfg.sysid.max_signals {
        healthy.truncate(cap.max(1));
    }
    let model = stage(Stage::Identify, identify(&healthy, &cfg.sysid.config))?;
    stage(Stage::Identify, model.save(outdir.join("model.json")))?;

    // Filter synthesis.
    let (filter, _diagnostics) = stage(Stage::Design, synthesize(&model, &cfg.filter))?;
    let filter_path = outdir.join("filter.json");
    stage(Stage::Design, filter.save(&filter_path))?;
    let filter_digest = {
        let bytes = stage(Stage::Design, std::fs::read(&filter_path))?;
        hex::encode(Sha256::digest(&bytes))
    };

    // Residuals for both datasets.
    let residuals_of = |ds: &LabeledDataset| -> Result<Vec<(Signal, FaultVariant)>, StageError> {
        ds.entries
            .iter()
            .map(|(s, label)| {
                stage(Stage::Detect, compute_residual(&filter, s)).map(|r| (r, *label))
            })
            .collect()
    };
    let train_residuals = residuals_of(&train)?;
    let test_residuals = residuals_of(&test)?;
    let residuals_train_ds = LabeledDataset {
        entries: train_residuals.clone(),
        seed: cfg.seed_train,
        config_digest: train_cfg.digest(),
    };
    let residuals_test_ds = LabeledDataset {
        entries: test_residuals.clone(),
        seed: cfg.seed_test,
        config_digest: test_cfg.digest(),
    };
    let rtrain_path = outdir.join("residuals_train.csv");
    let rtest_path = outdir.join("residuals_test.csv");
    stage(Stage::Detect, write_dataset_csv(&residuals_train_ds, &rtrain_path))?;
    stage(Stage::Detect, write_dataset_csv(&residuals_test_ds, &rtest_path))?;

    // Threshold from the healthy training residuals.
    let healthy_train_res: Vec<Signal> = train_residuals
        .iter()
        .filter(|(_, l)| *l == FaultVariant::Healthy)
        .map(|(r, _)| r.clone())
        .collect();
    let threshold = stage(
        Stage::Detect,
        calibrate_threshold_with(&healthy_train_res, cfg.filter.mu, cfg.filter.statistic),
    )?;

    // Detection on the test set.
    let mut rows = Vec::with_capacity(test_residuals.len());
    let mut outcomes = Vec::with_capacity(test_residuals.len());
    for (r, label) in &test_residuals {
        let value = residual_statistic(r, cfg.filter.statistic);
        let decision = detect(value, threshold);
        rows.push(ResidualRow {
            label: *label,
            value,
            flagged: decision.is_faulty,
        });
        outcomes.push((label.is_fault(), decision.is_faulty));
    }
    stage(
        Stage::Detect,
        write_json_pretty(
            &ResidualMeta {
                statistic: cfg.filter.statistic,
                mu: cfg.filter.mu,
                threshold,
                rows: rows.clone(),
            },
            &meta_path(&rtest_path),
        ),
    )?;
    let detection_metrics = stage(Stage::Detect, evaluate_detection(&outcomes))?;
    let flagged_healthy = rows
        .iter()
        .filter(|r| r.flagged && !r.label.is_fault())
        .count();

    // Isolation over the grid of training sizes, input streams and methods,
    // fed only with test signals the detector flagged.
    let mut isolation = Vec::new();
    let any_fault_training = train_residuals.iter().any(|(_, l)| l.is_fault());
    if any_fault_training {
        let train_pool_res = pool_by_class(&train_residuals);
        let train_pool_raw = pool_by_class(
            &train
                .entries
                .iter()
                .map(|(s, l)| (s.clone(), *l))
                .collect::<Vec<_>>(),
        );
        let flagged: Vec<usize> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.flagged && r.label.is_fault())
            .map(|(i, _)| i)
            .collect();

        if !flagged.is_empty() {
            for &fraction in &cfg.isolation.training_fractions {
                for stream in [StreamKind::Residual, StreamKind::Output] {
                    let pool = match stream {
                        StreamKind::Residual => &train_pool_res,
                        StreamKind::Output => &train_pool_raw,
                    };
                    let subset = fraction_subset(pool, fraction);
                    let training_size: usize = subset.values().map(Vec::len).sum();
                    for method in [IsolationMethod::LR, IsolationMethod::KNN] {
                        let cell = stage(
                            Stage::Isolate,
                            isolate_cell(
                                &subset,
                                stream,
                                method,
                                cfg.isolation.k,
                                &flagged,
                                &test,
                                &test_residuals,
                            ),
                        )?;
                        isolation.push(IsolationCell {
                            training_fraction: fraction,
                            training_size,
                            stream,
                            method,
                            hma: cell.0,
                            class_order: cell.1,
                            confusion: cell.2,
                            per_class: cell.3,
                        });
                    }
                }
            }

            // Persist the full-size residual templates.
            let full = fraction_subset(&train_pool_res, 1.0);
            let templates = stage(Stage::Isolate, train_templates(&full))?;
            let tpath = outdir.join("templates.csv");
            stage(Stage::Isolate, templates.save_csv(&tpath))?;
            stage(
                Stage::Isolate,
                write_json_pretty(
                    &crate::io::TemplateMeta {
                        class_order: templates.class_order.clone(),
                        t_a: templates.t_a,
                        dt: templates.dt,
                        n: templates.columns.nrows(),
                    },
                    &meta_path(&tpath),
                ),
            )?;
        }
    }

    let report = ExperimentReport {
        detection: DetectionSection {
            confusion: detection_metrics.confusion,
            tdr: detection_metrics.tdr,
            far: detection_metrics.far,
            threshold,
            mu: cfg.filter.mu,
            statistic: cfg.filter.statistic,
            flagged_healthy,
        },
        isolation,
        provenance: Provenance {
            config_digest: cfg.digest(),
            seed_train: cfg.seed_train,
            seed_test: cfg.seed_test,
            filter_digest,
            train_size: train.len(),
            test_size: test.len(),
            model_fit_residual: model.fit_residual,
        },
    };
    stage(
        Stage::Report,
        write_json_pretty(&report, &outdir.join("report.json")),
    )?;
    Ok(report)
}

fn pool_by_class(entries: &[(Signal, FaultVariant)]) -> BTreeMap<FaultVariant, Vec<Signal>> {
    let mut pool: BTreeMap<FaultVariant, Vec<Signal>> = BTreeMap::new();
    for (s, label) in entries {
        if label.is_fault() {
            pool.entry(*label).or_default().push(s.clone());
        }
    }
    pool
}

/// Deterministic per-class subset: the first `round(fraction · count)`
/// signals of every class, at least one each.
fn fraction_subset(
    pool: &BTreeMap<FaultVariant, Vec<Signal>>,
    fraction: f64,
) -> BTreeMap<FaultVariant, Vec<Signal>> {
    pool.iter()
        .map(|(&class, signals)| {
            let count = ((signals.len() as f64 * fraction).round() as usize)
                .clamp(1, signals.len());
            (class, signals[..count].to_vec())
        })
        .collect()
}

type CellMetrics = (f64, Vec<FaultVariant>, Vec<Vec<usize>>, Vec<ClassScore>);

#[allow(clippy::too_many_arguments)]
fn isolate_cell(
    subset: &BTreeMap<FaultVariant, Vec<Signal>>,
    stream: StreamKind,
    method: IsolationMethod,
    k: usize,
    flagged: &[usize],
    test: &LabeledDataset,
    test_residuals: &[(Signal, FaultVariant)],
) -> anyhow::Result<CellMetrics> {
    let mut pairs = Vec::with_capacity(flagged.len());
    match method {
        IsolationMethod::LR => {
            let templates = train_templates(subset)?;
            for &idx in flagged {
                let query = match stream {
                    StreamKind::Residual => &test_residuals[idx].0,
                    StreamKind::Output => &test.entries[idx].0,
                };
                let result = isolate_lr(&templates, query)?;
                pairs.push((test_residuals[idx].1, result.winner));
            }
        }
        IsolationMethod::KNN => {
            let train_list: Vec<(Signal, FaultVariant)> = subset
                .iter()
                .flat_map(|(&class, signals)| {
                    signals.iter().map(move |s| (s.clone(), class))
                })
                .collect();
            let k = k.min(train_list.len()).max(1);
            for &idx in flagged {
                let query = match stream {
                    StreamKind::Residual => &test_residuals[idx].0,
                    StreamKind::Output => &test.entries[idx].0,
                };
                let result = isolate_knn(&train_list, query, k)?;
                pairs.push((test_residuals[idx].1, result.winner));
            }
        }
    }
    let metrics = evaluate_isolation(&pairs)?;
    Ok((
        metrics.hma,
        metrics.class_order,
        metrics.confusion,
        metrics.per_class,
    ))
}
