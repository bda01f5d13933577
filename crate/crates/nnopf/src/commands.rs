//! The pipeline steps behind each subcommand.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use nnopf_core::dataset::{
    assemble_dataset, empirical_worst_case, label_sample, sample_domain, InputDomain, LabeledDataset,
    Provenance,
};
use nnopf_core::dcopf::{build_dcopf, solve_dcopf};
use nnopf_core::encode::{
    encode_network, interval_bounds, stability_from_dataset, tighten_bounds, NeuronBounds, Stability,
    StabilityMode, TightenOptions, TightenStage,
};
use nnopf_core::grid::{AdmittanceSet, GridCase};
use nnopf_core::lp::export_lp_format;
use nnopf_core::metrics::Metric;
use nnopf_core::mlp::{test_mae_pct, train, MlpNetwork};
use nnopf_core::verify::{domain_reduction_sweep, term_models, worst_case, SweepConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds_io::{fingerprint, read_bounds, write_bounds};
use crate::case_io::load_case;
use crate::config::{BoundStage, RunConfig};
use crate::data_io::{read_dataset, write_dataset};
use crate::fsutil::{fmt_f64, write_atomic};
use crate::net_io::{net_from_json, net_to_json};
use crate::report_io::{summary_csv, summary_rows, ReportEntry, RunReport};
use crate::runtime::{Rayon, StdClock};

/// Failure classes mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or input files.
    #[error("{0:#}")]
    Usage(anyhow::Error),
    /// A solve or training run failed.
    #[error("{0:#}")]
    Solver(anyhow::Error),
    /// A guarantee exceeded the configured threshold.
    #[error("{0}")]
    Threshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Threshold(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

fn usage<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Usage(e.into())
}

fn solver<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Solver(e.into())
}

pub type CliResult<T> = Result<T, CliError>;

/// Case and admittance matrices for the configured case file.
pub fn load_grid(cfg: &RunConfig) -> CliResult<(GridCase, AdmittanceSet)> {
    let path = cfg.case_path().map_err(usage)?;
    let case = load_case(path).map_err(usage)?.case;
    let adm = AdmittanceSet::build(&case).map_err(usage)?;
    Ok((case, adm))
}

/// The configured case as JSON.
pub fn cmd_convert_case(cfg: &RunConfig) -> CliResult<String> {
    let path = cfg.case_path().map_err(usage)?;
    Ok(crate::case_io::case_to_json(
        &load_case(path).map_err(usage)?.case,
    ))
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes()).map_err(solver)
}

fn net_path(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join("nets").join(format!("net_seed{seed}.json"))
}

pub fn cmd_gen_data(cfg: &RunConfig) -> CliResult<PathBuf> {
    let (case, adm) = load_grid(cfg)?;
    let domain = InputDomain::uniform_box(&case, cfg.lower, cfg.upper);
    let samples = sample_domain(&domain, cfg.n_samples, cfg.data_seed).map_err(solver)?;
    let labels = (0..samples.rows())
        .into_par_iter()
        .map(|i| label_sample(&case, &adm, samples.row(i)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(solver)?;
    let data = assemble_dataset(
        &samples,
        labels,
        case.n_gens(),
        Provenance {
            case_name: case.name.clone(),
            seed: cfg.data_seed,
            domain,
            n_requested: cfg.n_samples,
            n_infeasible: 0,
        },
    )
    .map_err(solver)?;
    if data.provenance.n_infeasible > 0 {
        log::warn!("dropped {} infeasible samples", data.provenance.n_infeasible);
    }
    let dir = cfg.data_dir();
    write_dataset(&dir, &case, &data).map_err(solver)?;
    echo_config(&dir, cfg)?;
    log::info!("wrote {} samples to {}", data.len(), dir.display());
    Ok(dir)
}

fn load_data(cfg: &RunConfig, case: &GridCase) -> CliResult<LabeledDataset> {
    let dir = cfg.data_dir();
    let data = read_dataset(&dir).map_err(usage)?;
    if data.inputs.cols() != case.n_loads() || data.targets.cols() != case.n_gens() {
        return Err(usage(anyhow!(
            "{} does not match the case dimensions",
            dir.display()
        )));
    }
    Ok(data)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    seed: u64,
    best_epoch: usize,
    best_test_mse: f64,
    test_mae_pct: f64,
    sparsity: f64,
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let (case, _) = load_grid(cfg)?;
    let data = load_data(cfg, &case)?;
    let results = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let out = train(&case, &data, &cfg.layers, &cfg.train_config(seed))
                .with_context(|| format!("training seed {seed}"))?;
            let mut log_csv = csv::Writer::from_writer(Vec::new());
            log_csv.write_record(["epoch", "train_mse", "test_mse", "sparsity"])?;
            for e in &out.log {
                log_csv.write_record([
                    e.epoch.to_string(),
                    fmt_f64(e.train_mse),
                    fmt_f64(e.test_mse),
                    fmt_f64(e.sparsity),
                ])?;
            }
            let path = net_path(cfg, seed);
            write_atomic(&path, net_to_json(&out.net).as_bytes())?;
            write_atomic(
                &cfg.out_dir.join("logs").join(format!("train_seed{seed}.csv")),
                &log_csv.into_inner()?,
            )?;
            let mae = test_mae_pct(&case, &data, &out.net);
            let sparsity = out.net.sparsity().iter().sum::<f64>() / out.net.sparsity().len() as f64;
            log::info!(
                "seed {seed}: best epoch {}, test MSE {:.3e}, test MAE {mae:.4} %",
                out.best_epoch,
                out.best_test_mse
            );
            Ok::<_, anyhow::Error>((
                path,
                TrainSummary {
                    seed,
                    best_epoch: out.best_epoch,
                    best_test_mse: out.best_test_mse,
                    test_mae_pct: mae,
                    sparsity,
                },
            ))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(solver)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (_, s) in &results {
        w.serialize(s).map_err(solver)?;
    }
    write_atomic(
        &cfg.out_dir.join("train_summary.csv"),
        &w.into_inner().map_err(solver)?,
    )
    .map_err(solver)?;
    echo_config(&cfg.out_dir, cfg)?;
    Ok(results.into_iter().map(|r| r.0).collect())
}

fn load_net(cfg: &RunConfig, seed: u64, case: &GridCase) -> CliResult<MlpNetwork> {
    let path = net_path(cfg, seed);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {} (run `train` first)", path.display()))
        .map_err(usage)?;
    let net = net_from_json(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(usage)?;
    if net.n_inputs() != case.n_loads() || net.n_outputs() + 1 != case.n_gens() {
        return Err(usage(anyhow!("{} does not fit the case", path.display())));
    }
    Ok(net)
}

fn tighten_options(cfg: &RunConfig) -> TightenOptions {
    TightenOptions {
        milp_max_nodes: Some(cfg.bound_max_nodes),
        milp_time_limit: cfg.time_limit,
        ..TightenOptions::default()
    }
}

/// Bounds for the configured stage, reusing the cache when the network,
/// domain and settings are unchanged.
pub fn cached_bounds(
    cfg: &RunConfig,
    seed: u64,
    net: &MlpNetwork,
    domain: &InputDomain,
) -> CliResult<NeuronBounds> {
    let opts = tighten_options(cfg);
    let settings = format!("{}:{:?}", cfg.bound_stage.as_str(), opts);
    let fp = fingerprint(net, domain, &settings);
    let path = cfg.out_dir.join("bounds").join(format!("bounds_seed{seed}.json"));
    if let Some(b) = read_bounds(&path, &fp) {
        log::info!("seed {seed}: bounds from {}", path.display());
        return Ok(b);
    }
    let clock = StdClock::new();
    let mut b = interval_bounds(net, domain).map_err(solver)?;
    if cfg.bound_stage != BoundStage::Interval {
        b = tighten_bounds(net, domain, &b, TightenStage::LpRelax, &opts, &Rayon, &clock).map_err(solver)?;
    }
    if cfg.bound_stage == BoundStage::Milp {
        b = tighten_bounds(net, domain, &b, TightenStage::Milp, &opts, &Rayon, &clock).map_err(solver)?;
    }
    log::info!(
        "seed {seed}: {} bounds in {:.1} s, {} of {} neurons stable",
        cfg.bound_stage.as_str(),
        clock_seconds(&clock),
        b.count(Stability::AlwaysActive) + b.count(Stability::AlwaysInactive),
        net.hidden().iter().sum::<usize>()
    );
    write_bounds(&path, &fp, &b).map_err(solver)?;
    Ok(b)
}

fn clock_seconds(c: &StdClock) -> f64 {
    use nnopf_core::lp::Clock;
    c.seconds()
}

/// Optimal cost at 100 % loading, the normalization of the cost metric.
pub fn reference_cost(case: &GridCase, adm: &AdmittanceSet) -> CliResult<f64> {
    Ok(solve_dcopf(case, adm, &case.nominal_loads())
        .context("solving the DC-OPF at nominal load")
        .map_err(usage)?
        .objective_cost)
}

pub struct VerifyOutcome {
    pub runs: Vec<RunReport>,
    pub summary_path: PathBuf,
}

pub fn cmd_verify(cfg: &RunConfig) -> CliResult<VerifyOutcome> {
    let (case, adm) = load_grid(cfg)?;
    let data = load_data(cfg, &case)?;
    let reference = reference_cost(&case, &adm)?;
    let domain = data.provenance.domain.clone();
    let metrics: Vec<Metric> = cfg.metrics.iter().map(|m| m.metric()).collect();
    let mode = cfg.stability.mode();
    let opts = cfg.verify_options();
    let mut runs = Vec::new();
    let mut failed = false;
    for &seed in &cfg.seeds {
        let net = load_net(cfg, seed, &case)?;
        let clock = StdClock::new();
        let bounds = cached_bounds(cfg, seed, &net, &domain)?;
        let bound_time = clock_seconds(&clock);
        let flags = (mode == StabilityMode::Dataset).then(|| stability_from_dataset(&net, &data.inputs));
        let enc = encode_network(&net, &case, &domain, &bounds, mode, flags.as_deref()).map_err(solver)?;
        let empirical = empirical_worst_case(&data, &net, &case, &adm, reference);
        let results: Vec<_> = metrics
            .par_iter()
            .map(|&m| {
                let clock = StdClock::new();
                worst_case(m, &enc, &case, &adm, reference, &opts, &clock)
                    .map(|r| r.with_empirical(empirical.get(m).value))
            })
            .collect();
        let mut reports = Vec::new();
        let mut failures = Vec::new();
        for (m, r) in metrics.iter().zip(results) {
            match r {
                Ok(r) => {
                    log::info!(
                        "seed {seed} {}: guarantee {:.6} {} (empirical {:.6}, {})",
                        m.as_str(),
                        r.value,
                        m.unit(),
                        empirical.get(*m).value,
                        r.status.as_str()
                    );
                    reports.push(ReportEntry::from(&r));
                }
                Err(e) => {
                    log::error!("seed {seed} {}: {e}", m.as_str());
                    failures.push((m.as_str().to_string(), e.to_string()));
                    failed = true;
                }
            }
        }
        let run = RunReport {
            case: case.name.clone(),
            seed,
            network: net_path(cfg, seed).display().to_string(),
            bound_stage: cfg.bound_stage.as_str().into(),
            stable_neurons: enc
                .phases
                .iter()
                .flatten()
                .filter(|p| **p != Stability::Free)
                .count(),
            hidden_neurons: net.hidden().iter().sum(),
            bound_time,
            reports,
            failures,
        };
        let path = cfg
            .out_dir
            .join("reports")
            .join(format!("verify_seed{seed}.json"));
        write_atomic(
            &path,
            serde_json::to_string_pretty(&run).map_err(solver)?.as_bytes(),
        )
        .map_err(solver)?;
        runs.push(run);
    }
    let summary_path = cfg.out_dir.join("reports").join("summary.csv");
    write_atomic(&summary_path, &summary_csv(&summary_rows(&runs)).map_err(solver)?).map_err(solver)?;
    echo_config(&cfg.out_dir, cfg)?;
    if failed {
        return Err(solver(anyhow!("some metrics failed; see the reports")));
    }
    if let Some(t) = cfg.threshold {
        let over: Vec<String> = runs
            .iter()
            .flat_map(|r| r.reports.iter().map(move |e| (r.seed, e)))
            .filter(|(_, e)| e.worst_case_value > t)
            .map(|(s, e)| format!("seed {s} {} = {}", e.metric, e.worst_case_value))
            .collect();
        if !over.is_empty() {
            return Err(CliError::Threshold(format!(
                "guarantees above {t}: {}",
                over.join(", ")
            )));
        }
    }
    Ok(VerifyOutcome { runs, summary_path })
}

#[derive(Debug, Serialize)]
struct SweepRow {
    seed: u64,
    delta: f64,
    metric: String,
    value: f64,
    /// Value in % of the first delta's value.
    normalized_pct: Option<f64>,
    exact: bool,
}

pub fn cmd_sweep(cfg: &RunConfig) -> CliResult<PathBuf> {
    if cfg.deltas.is_empty() {
        return Err(usage(anyhow!("the delta list is empty")));
    }
    let (case, adm) = load_grid(cfg)?;
    let data = load_data(cfg, &case)?;
    let reference = reference_cost(&case, &adm)?;
    let sweep_cfg = SweepConfig {
        metrics: cfg.metrics.iter().map(|m| m.metric()).collect(),
        milp_bounds: cfg.bound_stage == BoundStage::Milp,
        tighten: tighten_options(cfg),
        mode: StabilityMode::Certified,
        verify: cfg.verify_options(),
        reference_cost: reference,
    };
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let net = load_net(cfg, seed, &case)?;
        let clock = StdClock::new();
        let points = domain_reduction_sweep(
            &net,
            &case,
            &adm,
            &data.provenance.domain,
            &cfg.deltas,
            &sweep_cfg,
            &Rayon,
            &clock,
        )
        .map_err(solver)?;
        let base = &points[0].reports;
        for p in &points {
            for (r, b) in p.reports.iter().zip(base) {
                rows.push(SweepRow {
                    seed,
                    delta: p.delta,
                    metric: r.metric.as_str().into(),
                    value: r.value,
                    normalized_pct: (b.value.abs() > 0.0).then(|| 100.0 * r.value / b.value),
                    exact: r.is_exact(),
                });
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(solver)?;
    }
    let path = cfg.out_dir.join("reports").join("sweep.csv");
    write_atomic(&path, &w.into_inner().map_err(solver)?).map_err(solver)?;
    echo_config(&cfg.out_dir, cfg)?;
    Ok(path)
}

/// What `export-lp` writes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExportTarget {
    /// The DC-OPF at `scale` times nominal load.
    DcOpf { scale: f64 },
    /// Every per-term model of a metric for the first seed's network.
    Metric(Metric),
}

pub fn cmd_export_lp(cfg: &RunConfig, target: ExportTarget) -> CliResult<Vec<PathBuf>> {
    let (case, adm) = load_grid(cfg)?;
    let dir = cfg.out_dir.join("lp");
    let mut written = Vec::new();
    match target {
        ExportTarget::DcOpf { scale } => {
            let load: Vec<f64> = case.nominal_loads().iter().map(|p| p * scale).collect();
            let (model, _) = build_dcopf(&case, &adm, &load);
            let path = dir.join(format!("dcopf_{}.lp", case.name));
            write_atomic(&path, export_lp_format(&model).as_bytes()).map_err(solver)?;
            written.push(path);
        }
        ExportTarget::Metric(metric) => {
            let data = load_data(cfg, &case)?;
            let seed = cfg.seeds[0];
            let net = load_net(cfg, seed, &case)?;
            let domain = data.provenance.domain.clone();
            let bounds = cached_bounds(cfg, seed, &net, &domain)?;
            let mode = cfg.stability.mode();
            let flags = (mode == StabilityMode::Dataset).then(|| stability_from_dataset(&net, &data.inputs));
            let enc =
                encode_network(&net, &case, &domain, &bounds, mode, flags.as_deref()).map_err(solver)?;
            let reference = reference_cost(&case, &adm)?;
            let models = term_models(metric, &enc, &case, &adm, reference, cfg.big_m).map_err(solver)?;
            for (k, (label, model)) in models.iter().enumerate() {
                let path = dir.join(format!("{}_seed{seed}_term{k}.lp", metric.as_str()));
                let text = format!("\\ {label}\n{}", export_lp_format(model));
                write_atomic(&path, text.as_bytes()).map_err(solver)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
