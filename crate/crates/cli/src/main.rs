//! `inkwell`: command-line harness for the ink-channel FDI pipeline.
//!
//! Exit codes: 0 on success, 2 for configuration problems, 3 for stage
//! failures. Stage failures additionally print a single JSON line on stderr
//! with the failing stage and message.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use inkwell_cli::config::ExperimentConfig;
use inkwell_cli::experiment::run_experiment;
use inkwell_cli::io::{
    meta_path, read_json, sidecar_path, write_json_pretty, ResidualMeta, ResidualRow,
    TemplateMeta,
};
use inkwell_cli::plot::{emit_plot_data, PlotKind};
use inkwell_core::fd::{
    calibrate_threshold_with, compute_residual, detect, residual_statistic, synthesize,
    DetectionStatistic, FilterConfig, OmegaConvention, ResidualFilter,
};
use inkwell_core::fi::{isolate_knn, isolate_lr, train_templates, IsolationMethod, TemplateMatrix};
use inkwell_core::metrics::{evaluate_detection, evaluate_isolation};
use inkwell_core::model::FaultVariant;
use inkwell_core::sim::{
    generate_dataset, read_dataset_csv, write_dataset_csv, write_dataset_sidecar,
    GenerationConfig, LabeledDataset, Signal,
};
use inkwell_core::sysid::{identify, FitObjective, IdentifiedModel, SysidConfig};

#[derive(Parser)]
#[command(name = "inkwell", version, about = "Ink-channel fault detection and isolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled dataset of sensing signals.
    Gen(GenArgs),
    /// Identify the healthy channel model from a dataset.
    Identify(IdentifyArgs),
    /// Residual filter design and execution.
    Fd {
        #[command(subcommand)]
        command: FdCommand,
    },
    /// Fault isolation training and classification.
    Fi {
        #[command(subcommand)]
        command: FiCommand,
    },
    /// Run the full pipeline and write the report.
    Experiment(ExperimentArgs),
    /// Emit per-class plot data from a dataset.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generation config JSON; defaults to the reference composition.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Dataset CSV; only its healthy rows are used.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "l1")]
    objective: CliObjective,
    /// Cap on the number of healthy signals used.
    #[arg(long, default_value_t = 256)]
    max_signals: usize,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliObjective {
    L1,
    L2,
}

#[derive(Subcommand)]
enum FdCommand {
    /// Synthesize the residual filter from an identified model.
    Design(FdDesignArgs),
    /// Filter a dataset into residuals and flag faulty signals.
    Run(FdRunArgs),
}

#[derive(Args)]
struct FdDesignArgs {
    #[arg(long)]
    model: PathBuf,
    /// Filter order (annihilator blocks).
    #[arg(long, default_value_t = 5)]
    dn: usize,
    /// Residual oscillations over the window.
    #[arg(long, default_value_t = 5)]
    osc: u32,
    #[arg(long, value_enum, default_value = "cycles")]
    omega_convention: CliOmega,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliOmega {
    Cycles,
    Literal,
}

#[derive(Args)]
struct FdRunArgs {
    #[arg(long)]
    filter: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Threshold margin factor.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Fixed threshold; calibrated from the healthy rows when omitted.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "energy")]
    stat: CliStat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliStat {
    Energy,
    Peak,
}

#[derive(Subcommand)]
enum FiCommand {
    /// Average per-class residuals into template columns.
    Train(FiTrainArgs),
    /// Classify residuals against trained templates or a labeled corpus.
    Run(FiRunArgs),
}

#[derive(Args)]
struct FiTrainArgs {
    /// Residual dataset CSV with class labels.
    #[arg(long)]
    residuals: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FiRunArgs {
    #[arg(long)]
    templates: PathBuf,
    #[arg(long, value_enum)]
    method: CliMethod,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    data: PathBuf,
    /// Labeled training residuals; required for the nearest-neighbor method.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliMethod {
    Lr,
    Knn,
}

/// Failure with the exit code and stage it should surface as.
struct CmdError {
    code: u8,
    stage: String,
    message: String,
}

impl CmdError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            stage: "config".into(),
            message: message.into(),
        }
    }

    fn stage(stage: &str, err: impl std::fmt::Display) -> Self {
        Self {
            code: 3,
            stage: stage.into(),
            message: err.to_string(),
        }
    }
}

type CmdResult = Result<(), CmdError>;

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config JSON; defaults to the reference setup.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    outdir: PathBuf,
    #[arg(long)]
    seed_train: Option<u64>,
    #[arg(long)]
    seed_test: Option<u64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    dn: Option<usize>,
    #[arg(long)]
    osc: Option<u32>,
    #[arg(long)]
    k: Option<usize>,
    /// Noise level relative to the nominal healthy peak.
    #[arg(long)]
    noise_rel: Option<f64>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, value_enum)]
    kind: PlotKind,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write one SVG line plot per class.
    #[arg(long)]
    svg: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Identify(args) => cmd_identify(args),
        Command::Fd { command } => match command {
            FdCommand::Design(args) => cmd_fd_design(args),
            FdCommand::Run(args) => cmd_fd_run(args),
        },
        Command::Fi { command } => match command {
            FiCommand::Train(args) => cmd_fi_train(args),
            FiCommand::Run(args) => cmd_fi_run(args),
        },
        Command::Experiment(args) => cmd_experiment(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", json!({ "stage": err.stage, "error": err.message }));
            ExitCode::from(err.code)
        }
    }
}

fn load_dataset(path: &PathBuf) -> Result<LabeledDataset, CmdError> {
    read_dataset_csv(path).map_err(|e| CmdError::stage("load", e))
}

fn cmd_gen(args: GenArgs) -> CmdResult {
    let mut cfg: GenerationConfig = match &args.config {
        Some(path) => read_json(path).map_err(|e| CmdError::config(e.to_string()))?,
        None => GenerationConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dataset = generate_dataset(&cfg).map_err(|e| CmdError::stage("generate", e))?;
    write_dataset_csv(&dataset, &args.out).map_err(|e| CmdError::stage("generate", e))?;
    write_dataset_sidecar(&cfg, sidecar_path(&args.out))
        .map_err(|e| CmdError::stage("generate", e))?;
    println!(
        "{}",
        json!({ "written": args.out, "entries": dataset.len(), "seed": cfg.seed })
    );
    Ok(())
}

fn cmd_identify(args: IdentifyArgs) -> CmdResult {
    let dataset = load_dataset(&args.data)?;
    let mut healthy: Vec<Signal> = dataset.of_class(FaultVariant::Healthy).cloned().collect();
    if healthy.is_empty() {
        return Err(CmdError::config("dataset has no healthy rows to fit"));
    }
    healthy.truncate(args.max_signals.max(1));
    let cfg = SysidConfig {
        objective: match args.objective {
            CliObjective::L1 => FitObjective::L1,
            CliObjective::L2 => FitObjective::L2,
        },
        ..SysidConfig::default()
    };
    let model = identify(&healthy, &cfg).map_err(|e| CmdError::stage("identify", e))?;
    model
        .save(&args.out)
        .map_err(|e| CmdError::stage("identify", e))?;
    println!(
        "{}",
        json!({
            "model": args.out,
            "fit_residual": model.fit_residual,
            "coefficients": model.coefficients(),
        })
    );
    Ok(())
}

fn cmd_fd_design(args: FdDesignArgs) -> CmdResult {
    let model = IdentifiedModel::load(&args.model).map_err(|e| CmdError::config(e.to_string()))?;
    let cfg = FilterConfig {
        d_n: args.dn,
        n_o: args.osc,
        omega_convention: match args.omega_convention {
            CliOmega::Cycles => OmegaConvention::Cycles,
            CliOmega::Literal => OmegaConvention::Literal,
        },
        ..FilterConfig::default()
    };
    let (filter, diagnostics) = synthesize(&model, &cfg).map_err(|e| CmdError::stage("design", e))?;
    filter
        .save(&args.out)
        .map_err(|e| CmdError::stage("design", e))?;
    println!(
        "{}",
        json!({
            "filter": args.out,
            "omega_r": filter.polys.omega_r,
            "null_dimension": diagnostics.null_dimension,
            "annihilation_defect": diagnostics.annihilation_defect,
            "frequency_fit_error": diagnostics.frequency_fit_error,
            "sensitivity": diagnostics.sensitivity,
        })
    );
    Ok(())
}

fn cmd_fd_run(args: FdRunArgs) -> CmdResult {
    let filter = ResidualFilter::load(&args.filter).map_err(|e| CmdError::config(e.to_string()))?;
    let dataset = load_dataset(&args.data)?;
    let statistic = match args.stat {
        CliStat::Energy => DetectionStatistic::Energy,
        CliStat::Peak => DetectionStatistic::PeakAbs,
    };
    let residuals: Vec<(Signal, FaultVariant)> = dataset
        .entries
        .iter()
        .map(|(s, label)| {
            compute_residual(&filter, s)
                .map(|r| (r, *label))
                .map_err(|e| CmdError::stage("detect", e))
        })
        .collect::<Result<_, _>>()?;

    let threshold = match args.threshold {
        Some(t) => t,
        None => {
            let healthy: Vec<Signal> = residuals
                .iter()
                .filter(|(_, l)| !l.is_fault())
                .map(|(r, _)| r.clone())
                .collect();
            calibrate_threshold_with(&healthy, args.mu, statistic)
                .map_err(|e| CmdError::stage("detect", e))?
        }
    };

    let rows: Vec<ResidualRow> = residuals
        .iter()
        .map(|(r, label)| {
            let value = residual_statistic(r, statistic);
            ResidualRow {
                label: *label,
                value,
                flagged: detect(value, threshold).is_faulty,
            }
        })
        .collect();
    let flagged = rows.iter().filter(|r| r.flagged).count();

    let out_ds = LabeledDataset {
        entries: residuals,
        seed: 0,
        config_digest: String::new(),
    };
    write_dataset_csv(&out_ds, &args.out).map_err(|e| CmdError::stage("detect", e))?;
    write_json_pretty(
        &ResidualMeta {
            statistic,
            mu: args.mu,
            threshold,
            rows,
        },
        &meta_path(&args.out),
    )
    .map_err(|e| CmdError::stage("detect", e))?;
    println!(
        "{}",
        json!({
            "residuals": args.out,
            "threshold": threshold,
            "flagged": flagged,
            "total": out_ds.len(),
        })
    );
    Ok(())
}

fn cmd_fi_train(args: FiTrainArgs) -> CmdResult {
    let dataset = load_dataset(&args.residuals)?;
    let mut by_class: BTreeMap<FaultVariant, Vec<Signal>> = BTreeMap::new();
    for (s, label) in &dataset.entries {
        if label.is_fault() {
            by_class.entry(*label).or_default().push(s.clone());
        }
    }
    let templates = train_templates(&by_class).map_err(|e| CmdError::stage("isolate", e))?;
    templates
        .save_csv(&args.out)
        .map_err(|e| CmdError::stage("isolate", e))?;
    write_json_pretty(
        &TemplateMeta {
            class_order: templates.class_order.clone(),
            t_a: templates.t_a,
            dt: templates.dt,
            n: templates.columns.nrows(),
        },
        &meta_path(&args.out),
    )
    .map_err(|e| CmdError::stage("isolate", e))?;
    println!(
        "{}",
        json!({
            "templates": args.out,
            "classes": templates.class_order,
            "samples": templates.columns.nrows(),
        })
    );
    Ok(())
}

fn cmd_fi_run(args: FiRunArgs) -> CmdResult {
    let meta: TemplateMeta =
        read_json(&meta_path(&args.templates)).map_err(|e| CmdError::config(e.to_string()))?;
    let templates = TemplateMatrix::load_csv(&args.templates, meta.t_a, meta.dt)
        .map_err(|e| CmdError::config(e.to_string()))?;
    let dataset = load_dataset(&args.data)?;

    // Rows entering isolation: the detector-flagged ones when detection
    // metadata is present, otherwise every row with a fault label.
    let detection_meta: Option<ResidualMeta> = read_json(&meta_path(&args.data)).ok();
    let eligible: Vec<usize> = match &detection_meta {
        Some(meta) => meta
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.flagged && r.label.is_fault())
            .map(|(i, _)| i)
            .collect(),
        None => dataset
            .entries
            .iter()
            .enumerate()
            .filter(|(_, (_, l))| l.is_fault())
            .map(|(i, _)| i)
            .collect(),
    };

    let method = match args.method {
        CliMethod::Lr => IsolationMethod::LR,
        CliMethod::Knn => IsolationMethod::KNN,
    };
    let train_corpus: Option<Vec<(Signal, FaultVariant)>> = match (&args.train, method) {
        (Some(path), _) => {
            let train_ds = load_dataset(path)?;
            Some(
                train_ds
                    .entries
                    .into_iter()
                    .filter(|(_, l)| l.is_fault())
                    .collect(),
            )
        }
        (None, IsolationMethod::KNN) => {
            return Err(CmdError::config(
                "--method knn needs --train with labeled residuals",
            ));
        }
        (None, IsolationMethod::LR) => None,
    };

    let mut pairs = Vec::with_capacity(eligible.len());
    for &idx in &eligible {
        let (signal, truth) = &dataset.entries[idx];
        let winner = match method {
            IsolationMethod::LR => {
                isolate_lr(&templates, signal)
                    .map_err(|e| CmdError::stage("isolate", e))?
                    .winner
            }
            IsolationMethod::KNN => {
                let corpus = train_corpus.as_ref().expect("validated above");
                isolate_knn(corpus, signal, args.k.min(corpus.len()).max(1))
                    .map_err(|e| CmdError::stage("isolate", e))?
                    .winner
            }
        };
        pairs.push((*truth, winner));
    }
    let isolation = evaluate_isolation(&pairs).map_err(|e| CmdError::stage("isolate", e))?;

    // Detection rates when the flags are available.
    let detection = detection_meta.as_ref().map(|meta| {
        let outcomes: Vec<(bool, bool)> = meta
            .rows
            .iter()
            .map(|r| (r.label.is_fault(), r.flagged))
            .collect();
        evaluate_detection(&outcomes).expect("non-empty rows")
    });

    let report = json!({
        "method": method,
        "k": args.k,
        "hma": isolation.hma,
        "class_order": isolation.class_order,
        "confusion": isolation.confusion,
        "per_class": isolation.per_class,
        "tdr": detection.as_ref().map(|d| d.tdr),
        "far": detection.as_ref().map(|d| d.far),
    });
    write_json_pretty(&report, &args.report).map_err(|e| CmdError::stage("report", e))?;
    println!(
        "{}",
        json!({ "report": args.report, "hma": isolation.hma, "classified": pairs.len() })
    );
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> CmdResult {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| CmdError::config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.seed_train {
        cfg.seed_train = v;
    }
    if let Some(v) = args.seed_test {
        cfg.seed_test = v;
    }
    if let Some(v) = args.mu {
        cfg.filter.mu = v;
    }
    if let Some(v) = args.dn {
        cfg.filter.d_n = v;
    }
    if let Some(v) = args.osc {
        cfg.filter.n_o = v;
    }
    if let Some(v) = args.k {
        cfg.isolation.k = v;
    }
    if let Some(v) = args.noise_rel {
        cfg.generation.noise_sigma_rel = v;
    }
    cfg.validate().map_err(CmdError::config)?;

    let report = run_experiment(&cfg, &args.outdir)
        .map_err(|e| CmdError::stage(&e.stage.to_string(), e.source))?;
    println!(
        "{}",
        json!({
            "report": args.outdir.join("report.json"),
            "tdr": report.detection.tdr,
            "far": report.detection.far,
            "isolation_cells": report.isolation.len(),
        })
    );
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> CmdResult {
    let dataset = load_dataset(&args.data)?;
    let path = emit_plot_data(args.kind, &dataset, &args.out, args.svg)
        .map_err(|e| CmdError::stage("plot", e))?;
    println!("{}", json!({ "written": path }));
    Ok(())
}
