use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use reslab::data::{dataset_from_root, heldout_from_root, load_dataset, save_dataset};
use reslab::lossgrad::gradient_check_suite;
use reslab::model::{load_checkpoint, save_checkpoint, NetworkShape};
use reslab::numkit::Substream;
use reslab::probes::{self, ProbeReport, Verdict, PROBE_NAMES};
use reslab::trainer::{train, write_trajectory_csv, TrainConfig};
use reslab::{LabeledBatch, MarginDataset, NetworkParams};
use serde::Serialize;

use crate::config::RunConfig;
use crate::exit::{CliError, CliResult};

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn load_data(path: &Path, what: &str) -> CliResult<MarginDataset> {
    if !path.exists() {
        return Err(CliError::io(format!("{what} file {} not found (run gen-data first)", path.display())));
    }
    let ds = load_dataset(path).map_err(|e| CliError::io(format!("cannot load {what} {}: {e}", path.display())))?;
    ds.validate()?;
    Ok(ds)
}

fn check_input_dim(shape: &NetworkShape, ds: &MarginDataset, what: &str) -> CliResult<()> {
    let d = ds.inputs.cols();
    if shape.input_dim != d {
        return Err(CliError::io(format!(
            "{what} expects inputs of dimension {} but the dataset has d = {d}",
            shape.input_dim
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct GenerationReport<'a> {
    config: &'a RunConfig,
    n: usize,
    heldout_n: usize,
    acceptance_rate: f64,
    realized_margin: f64,
    positive_fraction: f64,
    dataset: &'a str,
    heldout: &'a str,
}

pub fn gen_data(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.out_dir();
    create_dir(&out)?;
    let root = cfg.root();
    let ds = dataset_from_root(root, cfg.d, cfg.teacher_features, cfg.gamma, cfg.n)?;
    let heldout = heldout_from_root(root, &ds.teacher, cfg.heldout_n)?;
    save_dataset(&ds, &out.join("dataset.bin"))?;
    save_dataset(&heldout, &out.join("heldout.bin"))?;
    let echo = cfg.echo();
    write_json(
        &out.join("dataset.json"),
        &GenerationReport {
            config: &echo,
            n: ds.len(),
            heldout_n: heldout.len(),
            acceptance_rate: ds.acceptance_rate,
            realized_margin: ds.realized_margin,
            positive_fraction: ds.positive_fraction(),
            dataset: "dataset.bin",
            heldout: "heldout.bin",
        },
    )?;
    println!(
        "wrote {} (n = {}, acceptance {:.4}, margin {:.4}, positive {:.3})",
        out.join("dataset.bin").display(),
        ds.len(),
        ds.acceptance_rate,
        ds.realized_margin,
        ds.positive_fraction()
    );
    Ok(())
}

fn init_params(cfg: &RunConfig) -> CliResult<NetworkParams> {
    Ok(NetworkParams::init_gaussian(cfg.root().substream(Substream::Init), cfg.shape())?)
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        eta: cfg.eta,
        max_steps: cfg.max_steps,
        tau_budget: Some(cfg.tau),
        stop_surrogate: cfg.stop_surrogate,
        stop_requires_separation: cfg.stop_requires_separation,
        record_every: cfg.record_every,
        seed: cfg.root(),
        ..TrainConfig::default()
    }
}

pub fn train_cmd(cfg: &RunConfig) -> CliResult<()> {
    let ds = load_data(&cfg.data_path(), "dataset")?;
    let shape = cfg.shape();
    check_input_dim(&shape, &ds, "the network")?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let init = init_params(cfg)?;
    let outcome = train(&init, &ds.to_batch(), &train_config(cfg))?;
    let csv = fs::File::create(out.join("trajectory.csv"))?;
    write_trajectory_csv(&outcome.records, csv)?;
    write_json(&out.join("summary.json"), &outcome.summary(&cfg.echo()))?;
    save_checkpoint(&init, Some(cfg.seed), &out.join("init.ckpt"))?;
    save_checkpoint(&outcome.params, Some(cfg.seed), &out.join("final.ckpt"))?;
    println!(
        "{} steps: loss {:.6}, surrogate {:.6}, train error {:.4}, best step {}",
        outcome.steps, outcome.last.loss, outcome.last.surrogate, outcome.last.train_err, outcome.best_step
    );
    Ok(())
}

/// Expands `all` and rejects unknown names.
pub fn resolve_probes(names: &[String]) -> CliResult<Vec<&'static str>> {
    let mut out = Vec::new();
    for name in names {
        if name == "all" {
            out.extend(PROBE_NAMES);
            continue;
        }
        match PROBE_NAMES.iter().find(|p| **p == name.as_str()) {
            Some(p) => out.push(*p),
            None => {
                return Err(CliError::usage(format!(
                    "unknown probe {name:?}; valid names: all, {}",
                    PROBE_NAMES.join(", ")
                )))
            }
        }
    }
    let mut seen = Vec::new();
    out.retain(|p| {
        let fresh = !seen.contains(p);
        seen.push(*p);
        fresh
    });
    if out.is_empty() {
        return Err(CliError::usage(format!("no probes selected; valid names: all, {}", PROBE_NAMES.join(", "))));
    }
    Ok(out)
}

fn probe_params(cfg: &RunConfig, ds: &MarginDataset) -> CliResult<NetworkParams> {
    let params = match &cfg.checkpoint {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::io(format!("checkpoint {} not found", path.display())));
            }
            load_checkpoint(path)?.0
        }
        None => init_params(cfg)?,
    };
    check_input_dim(params.shape(), ds, "the checkpoint")?;
    Ok(params)
}

pub fn depth_sweep_config(cfg: &RunConfig, seed: u64, width: usize) -> probes::DepthSweepConfig {
    probes::DepthSweepConfig {
        input_dim: cfg.d,
        width,
        last_width: cfg.m_last,
        n: cfg.n,
        gamma: cfg.gamma,
        teacher_features: cfg.teacher_features,
        depths: cfg.grid_depths.clone(),
        archs: cfg.grid_archs.clone(),
        eta_grid: cfg.eta_grid.clone(),
        max_steps: cfg.max_steps,
        threshold: cfg.threshold,
        seed: reslab::numkit::RngState::root(seed),
        ..probes::DepthSweepConfig::default()
    }
}

fn run_probe(name: &str, cfg: &RunConfig, params: &NetworkParams, ds: &MarginDataset, batch: &LabeledBatch) -> CliResult<ProbeReport> {
    let root = cfg.root();
    let inputs = &ds.inputs;
    let report = match name {
        "activation_norms" => {
            let l = params.depth();
            let pairs = if l >= 2 { vec![(2, l)] } else { Vec::new() };
            let pc = probes::ActivationNormConfig {
                pairs,
                ..Default::default()
            };
            probes::probe_activation_norms(params, inputs, &pc)?
        }
        "input_lipschitz" => {
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..inputs.rows() / 2)
                .map(|i| (inputs.row(2 * i).to_vec(), inputs.row(2 * i + 1).to_vec()))
                .collect();
            probes::probe_input_lipschitz(params, &pairs, &probes::InputLipschitzConfig::default())?
        }
        "weight_lipschitz_flips" => {
            let pc = probes::WeightLipschitzConfig {
                tau_grid: cfg.tau_grid.clone(),
                draws: cfg.probe_draws,
                seed: root.substream(Substream::Ball),
                ..Default::default()
            };
            probes::probe_weight_lipschitz_and_flips(params, inputs, &pc)?
        }
        "semismoothness" => {
            let pc = probes::SemismoothnessConfig {
                tau: cfg.tau,
                draws: cfg.semismooth_draws,
                seed: root.substream(Substream::Ball).child(1),
                ..Default::default()
            };
            probes::probe_semismoothness(params, batch, &pc)?
        }
        "gradient_bounds" => {
            let tc = TrainConfig {
                record_every: 1,
                ..train_config(cfg)
            };
            let outcome = train(params, batch, &tc)?;
            probes::probe_gradient_bounds(&outcome.records, params.shape(), ds.gamma(), &Default::default())?
        }
        "separability" => {
            let pc = probes::SeparabilityConfig {
                control_seed: root.substream(Substream::Probe).child(0),
                ..Default::default()
            };
            probes::probe_separability(&ds.teacher, params, batch, &pc)?
        }
        "threshold_indices" => probes::probe_threshold_indices(params, inputs, &cfg.beta_grid)?,
        "sparse_output" => {
            let pc = probes::SparseOutputConfig {
                tau: cfg.tau,
                sparsity: cfg.sparsity.min(params.shape().width),
                trials: cfg.probe_draws,
                seed: root.substream(Substream::Probe).child(1),
                constant: None,
            };
            probes::probe_sparse_output(params, &pc)?
        }
        "loss_at_init" => probes::probe_loss_at_init(params, batch, &Default::default())?,
        "rademacher" => {
            let pc = probes::RademacherConfig {
                tau: cfg.tau,
                xi_draws: cfg.xi_draws,
                ascent_steps: cfg.ascent_steps,
                seed: root.substream(Substream::Xi),
                ..Default::default()
            };
            probes::rademacher_estimate(params, batch, &pc)?
        }
        "surrogate_markov" => {
            let heldout = load_data(&cfg.heldout_path(), "held-out set")?;
            let pc = probes::MarkovConfig { band: cfg.markov_band };
            probes::probe_surrogate_markov(params, &heldout.to_batch(), &pc)?
        }
        "depth_sweep" => probes::depth_sweep::<f64>(&depth_sweep_config(cfg, cfg.seed, cfg.m))?.0,
        other => return Err(CliError::usage(format!("unknown probe {other:?}"))),
    };
    Ok(report)
}

#[derive(Serialize)]
struct IndexEntry {
    name: String,
    report: String,
    details: String,
    verdict: Verdict,
}

#[derive(Serialize)]
struct ProbeIndex {
    config: RunConfig,
    reports: Vec<IndexEntry>,
}

pub fn probe_cmd(cfg: &RunConfig) -> CliResult<()> {
    let names = resolve_probes(&cfg.probes)?;
    let ds = load_data(&cfg.data_path(), "dataset")?;
    let params = probe_params(cfg, &ds)?;
    let batch = ds.to_batch();
    let dir = cfg.out_dir().join("probes");
    create_dir(&dir)?;
    let mut entries = Vec::new();
    for name in names {
        info!("running probe {name}");
        let mut report = run_probe(name, cfg, &params, &ds, &batch)?;
        report.write(&dir)?;
        println!("{name}: {}", verdict_word(report.verdict));
        entries.push(IndexEntry {
            name: name.to_string(),
            report: format!("{name}.report.json"),
            details: format!("{name}.details.csv"),
            verdict: report.verdict,
        });
    }
    write_json(
        &dir.join("index.json"),
        &ProbeIndex {
            config: cfg.echo(),
            reports: entries,
        },
    )?;
    Ok(())
}

pub fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Hold => "hold",
        Verdict::Violated => "violated",
    }
}

#[derive(Serialize)]
struct GradCheckOutput<'a> {
    config: &'a RunConfig,
    shape: NetworkShape,
    step: f64,
    summary: reslab::lossgrad::GradCheckSummary,
    passed: bool,
}

/// Shapes and tolerances of the gradient check.
pub const GRADCHECK_NETS: usize = 20;
pub const GRADCHECK_STEP: f64 = 1e-4;
pub const GRADCHECK_TOL: f64 = 1e-5;
pub const GRADCHECK_FLOOR: f64 = 1e-6;

pub fn gradcheck_cmd(cfg: &RunConfig) -> CliResult<()> {
    let shape = NetworkShape::residual(4, 6, 16, 16).with_arch(cfg.arch);
    let summary = gradient_check_suite(
        cfg.root().substream(Substream::Probe),
        shape,
        GRADCHECK_NETS,
        GRADCHECK_STEP,
        GRADCHECK_TOL,
        GRADCHECK_FLOOR,
    )?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let passed = summary.passed();
    println!(
        "gradcheck: {} entries compared, {} skipped, {} below the floor, worst relative error {:e} (unfloored {:e}) ({})",
        summary.compared,
        summary.skipped,
        summary.below_floor,
        summary.worst(),
        summary.max_rel_error_unfloored,
        if passed { "pass" } else { "FAIL" }
    );
    let echo = cfg.echo();
    write_json(
        &out.join("gradcheck.json"),
        &GradCheckOutput {
            config: &echo,
            shape,
            step: GRADCHECK_STEP,
            summary,
            passed,
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(CliError::failed("analytic gradients disagree with finite differences"))
    }
}

fn collect_reports(dir: &Path, found: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_reports(&path, found)?;
        } else if path.to_string_lossy().ends_with(".report.json") {
            found.push(path);
        }
    }
    Ok(())
}

fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4e}")
    } else {
        format!("{x}")
    }
}

pub fn report_cmd(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.out_dir();
    if !out.is_dir() {
        return Err(CliError::io(format!("output directory {} does not exist", out.display())));
    }
    let mut paths = Vec::new();
    collect_reports(&out, &mut paths)?;
    let mut md = String::from("# Probe summary\n\n");
    md.push_str("| report | verdict | constant fit | bound | trials | measured |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    let (mut held, mut violated) = (0, 0);
    for path in &paths {
        let r = ProbeReport::load(path)?;
        let rel = path.strip_prefix(&out).unwrap_or(path).display().to_string();
        let measured: Vec<String> = r.measured.iter().map(|(k, v)| format!("{k}={}", fmt_num(*v))).collect();
        match r.verdict {
            Verdict::Hold => held += 1,
            Verdict::Violated => violated += 1,
        }
        md.push_str(&format!(
            "| {rel} | {} | {} | {} | {} | {} |\n",
            verdict_word(r.verdict),
            fmt_num(r.constant_fit),
            fmt_num(r.bound_expr),
            r.trials,
            measured.join(", ")
        ));
    }
    md.push_str(&format!("\n{} reports: {held} hold, {violated} violated.\n", paths.len()));
    fs::write(out.join("report.md"), md)?;
    println!("wrote {} ({} reports)", out.join("report.md").display(), paths.len());
    Ok(())
}
