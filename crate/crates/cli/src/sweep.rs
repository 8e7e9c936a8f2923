use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use reslab::model::Arch;
use reslab::probes::{depth_cell, depth_sweep_report, DepthCell};
use reslab::MarginDataset;
use serde::{Deserialize, Serialize};

use crate::commands::{depth_sweep_config, verdict_word, write_json};
use crate::config::RunConfig;
use crate::exit::{CliError, CliResult};

/// Columns of `sweep.csv`, one row per cell in grid order.
pub const SWEEP_COLUMNS: [&str; 10] = [
    "seed",
    "width",
    "arch",
    "depth",
    "eta",
    "steps",
    "reached",
    "final_surrogate",
    "final_train_err",
    "interlayer_growth",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellKey {
    pub seed: u64,
    pub width: usize,
    pub arch: Arch,
    pub depth: usize,
}

impl CellKey {
    pub fn dir_name(&self) -> String {
        format!("s{}_m{}_{}_L{}", self.seed, self.width, self.arch, self.depth)
    }
}

/// A finished cell as stored in `cells/<key>/cell.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellRecord {
    pub seed: u64,
    pub width: usize,
    pub cell: DepthCell,
}

pub fn grid(cfg: &RunConfig) -> Vec<CellKey> {
    let mut keys = Vec::new();
    for seed in cfg.sweep_seeds() {
        for width in cfg.sweep_widths() {
            for &arch in &cfg.grid_archs {
                for &depth in &cfg.grid_depths {
                    keys.push(CellKey { seed, width, arch, depth });
                }
            }
        }
    }
    keys
}

/// `LAB_THREADS`, defaulting to one worker.
pub fn thread_cap() -> CliResult<usize> {
    match std::env::var("LAB_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::usage(format!("LAB_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

fn load_cell(path: &Path) -> Option<CellRecord> {
    let text = fs::read_to_string(path).ok()?;
    match serde_json::from_str(&text) {
        Ok(c) => Some(c),
        Err(e) => {
            warn!("ignoring unreadable cell {}: {e}", path.display());
            None
        }
    }
}

fn run_cell(cfg: &RunConfig, key: CellKey, dir: &Path) -> CliResult<CellRecord> {
    let sc = depth_sweep_config(cfg, key.seed, key.width);
    let ds: MarginDataset = sc.dataset()?;
    let cell = depth_cell(&sc, &ds.to_batch(), key.arch, key.depth)?;
    let record = CellRecord {
        seed: key.seed,
        width: key.width,
        cell,
    };
    fs::create_dir_all(dir)?;
    let tmp = dir.join("cell.json.tmp");
    write_json(&tmp, &record)?;
    fs::rename(&tmp, dir.join("cell.json"))?;
    Ok(record)
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep_cmd(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.out_dir();
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", cells_dir.display())))?;
    write_json(&out.join("sweep_config.json"), &cfg.echo())?;
    let keys = grid(cfg);
    if keys.is_empty() {
        return Err(CliError::usage("the sweep grid is empty"));
    }
    let dirs: Vec<PathBuf> = keys.iter().map(|k| cells_dir.join(k.dir_name())).collect();
    let results: Vec<Mutex<Option<CellRecord>>> = dirs.iter().map(|d| Mutex::new(load_cell(&d.join("cell.json")))).collect();
    let reused = results.iter().filter(|r| r.lock().unwrap().is_some()).count();
    if reused > 0 {
        info!("resuming: {reused} of {} cells already done", keys.len());
    }
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    let workers = thread_cap()?.min(keys.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= keys.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                if results[i].lock().unwrap().is_some() {
                    continue;
                }
                info!("cell {}", keys[i].dir_name());
                match run_cell(cfg, keys[i], &dirs[i]) {
                    Ok(r) => *results[i].lock().unwrap() = Some(r),
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e);
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let records: Vec<CellRecord> = results.into_iter().map(|r| r.into_inner().unwrap().expect("cell finished")).collect();

    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record(SWEEP_COLUMNS)?;
    for r in &records {
        let c = &r.cell;
        w.write_record([
            r.seed.to_string(),
            r.width.to_string(),
            c.arch.to_string(),
            c.depth.to_string(),
            fmt_opt(c.eta),
            fmt_opt(c.steps),
            c.steps.is_some().to_string(),
            format!("{}", c.final_surrogate),
            format!("{}", c.final_train_err),
            format!("{}", c.interlayer_growth),
        ])?;
    }
    w.flush()?;

    for seed in cfg.sweep_seeds() {
        for width in cfg.sweep_widths() {
            let cells: Vec<DepthCell> = records
                .iter()
                .filter(|r| r.seed == seed && r.width == width)
                .map(|r| r.cell.clone())
                .collect();
            let mut report = depth_sweep_report(&depth_sweep_config(cfg, seed, width), &cells)?;
            report.write(&out.join("reports").join(format!("s{seed}_m{width}")))?;
            println!("depth_sweep seed {seed} width {width}: {}", verdict_word(report.verdict));
        }
    }
    println!("wrote {} ({} cells, {reused} reused)", out.join("sweep.csv").display(), records.len());
    Ok(())
}
