//! Running configured experiments and summarizing their reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use onepass_core::{
    run_multi_epoch, run_naive, run_one_pass, Dataset, HarnessConfig, Method, RunReport,
};
use rayon::prelude::*;

use crate::config::ExperimentConfig;

/// One unit of work in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Epr {
        replay_steps: usize,
        storage_fraction: f64,
        seed_index: u64,
    },
    Naive {
        seed_index: u64,
    },
    MultiEpoch {
        epochs: u32,
        seed_index: u64,
    },
}

impl Job {
    fn seed_index(&self) -> u64 {
        match *self {
            Job::Epr { seed_index, .. }
            | Job::Naive { seed_index }
            | Job::MultiEpoch { seed_index, .. } => seed_index,
        }
    }

    /// Report directory relative to the sweep root.
    pub fn dir(&self) -> PathBuf {
        let cell = match *self {
            Job::Epr {
                replay_steps,
                storage_fraction,
                ..
            } => format!("epr_k{replay_steps}_s{storage_fraction}"),
            Job::Naive { .. } => "naive".to_string(),
            Job::MultiEpoch { epochs, .. } => format!("multi_epoch_e{epochs}"),
        };
        PathBuf::from(cell).join(format!("seed{}", self.seed_index()))
    }
}

/// Sweep jobs in a fixed lexicographic order: EPR cells over
/// `(replay_steps, storage_fraction, seed)`, then multi-epoch rows, then naive.
pub fn sweep_jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let mut ks = cfg.sweep.replay_steps.clone();
    ks.sort_unstable();
    ks.dedup();
    let mut fractions = cfg.sweep.storage_fractions.clone();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let mut jobs = Vec::new();
    for &k in &ks {
        for &s in &fractions {
            for i in 0..cfg.n_seeds {
                jobs.push(Job::Epr {
                    replay_steps: k,
                    storage_fraction: s,
                    seed_index: i,
                });
            }
        }
    }
    if cfg.sweep.multi_epoch {
        for &k in &ks {
            for i in 0..cfg.n_seeds {
                jobs.push(Job::MultiEpoch {
                    epochs: k as u32 + 1,
                    seed_index: i,
                });
            }
        }
    }
    if cfg.sweep.naive {
        for i in 0..cfg.n_seeds {
            jobs.push(Job::Naive { seed_index: i });
        }
    }
    jobs
}

pub fn run_job(cfg: &ExperimentConfig, dataset: &Dataset, job: &Job) -> Result<RunReport> {
    let (seed, order_seed) = cfg.seeds(job.seed_index());
    let mut harness = HarnessConfig {
        seed,
        ..cfg.harness.clone()
    };
    let mut report = match *job {
        Job::Epr {
            replay_steps,
            storage_fraction,
            ..
        } => {
            harness.replay_steps = replay_steps;
            harness.storage_fraction = storage_fraction;
            run_one_pass(&harness, dataset, &cfg.learner, order_seed)
        }
        Job::Naive { .. } => run_naive(&harness, dataset, &cfg.learner, order_seed),
        Job::MultiEpoch { epochs, .. } => {
            run_multi_epoch(epochs, &harness, dataset, &cfg.learner, order_seed)
        }
    }
    .with_context(|| format!("job {job:?} failed"))?;
    report.config_hash = cfg.hash();
    Ok(report)
}

/// Runs `jobs` on up to `parallel` threads; results come back in job order.
pub fn run_jobs(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    jobs: &[Job],
    parallel: usize,
) -> Result<Vec<RunReport>> {
    if parallel <= 1 {
        return jobs.iter().map(|j| run_job(cfg, dataset, j)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .context("building worker pool")?;
    pool.install(|| jobs.par_iter().map(|j| run_job(cfg, dataset, j)).collect())
}

/// Writes `contents` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn report_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `report.json` and `telemetry.csv` into `dir`.
pub fn write_report(dir: &Path, report: &RunReport) -> Result<()> {
    write_atomic(&dir.join("report.json"), report_json(report).as_bytes())?;
    write_atomic(&dir.join("telemetry.csv"), report.telemetry_csv().as_bytes())?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Every `report.json` below `root`, in sorted path order.
pub fn find_reports(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "report.json") {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Identity of one table cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub method: MethodOrd,
    pub effective_epochs: u32,
    /// Storage fraction in parts per million, so keys order and compare exactly.
    pub storage_ppm: u64,
}

/// [`Method`] with a total order for table layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodOrd {
    Epr,
    MultiEpoch,
    Naive,
}

impl From<Method> for MethodOrd {
    fn from(m: Method) -> Self {
        match m {
            Method::Epr => MethodOrd::Epr,
            Method::MultiEpoch => MethodOrd::MultiEpoch,
            Method::Naive => MethodOrd::Naive,
        }
    }
}

impl MethodOrd {
    pub fn name(self) -> &'static str {
        match self {
            MethodOrd::Epr => "epr",
            MethodOrd::MultiEpoch => "multi_epoch",
            MethodOrd::Naive => "naive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub key: CellKey,
    pub storage_fraction: f64,
    pub compute_metric: f64,
    pub n: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation over `sqrt(n)`; 0 for a single report.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub cells: Vec<CellSummary>,
}

/// Mean and standard error of accuracy per cell.
///
/// All reports must come from the same configuration (equal config hash,
/// training-set size and batch size).
pub fn aggregate_reports(reports: &[RunReport]) -> Result<Summary> {
    let Some(first) = reports.first() else {
        bail!("no reports to aggregate");
    };
    for r in reports {
        if r.config_hash != first.config_hash {
            bail!(
                "reports come from different configs ({} vs {})",
                first.config_hash,
                r.config_hash
            );
        }
        if r.n_train != first.n_train || r.batch_size != first.batch_size {
            bail!(
                "reports disagree on dataset size or batch size ({}/{} vs {}/{})",
                first.n_train,
                first.batch_size,
                r.n_train,
                r.batch_size
            );
        }
    }
    let mut groups: BTreeMap<CellKey, Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        let key = CellKey {
            method: r.method.into(),
            effective_epochs: r.effective_epochs,
            storage_ppm: (r.storage_fraction * 1e6).round() as u64,
        };
        groups.entry(key).or_default().push(r);
    }
    let cells = groups
        .into_iter()
        .map(|(key, rs)| {
            let n = rs.len();
            let mean = rs.iter().map(|r| r.top1_accuracy).sum::<f64>() / n as f64;
            let stderr = if n > 1 {
                let var = rs
                    .iter()
                    .map(|r| (r.top1_accuracy - mean).powi(2))
                    .sum::<f64>()
                    / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            CellSummary {
                key,
                storage_fraction: rs[0].storage_fraction,
                compute_metric: rs[0].planned_compute_metric,
                n,
                mean_accuracy: mean,
                stderr,
            }
        })
        .collect();
    Ok(Summary { cells })
}

impl Summary {
    pub fn get(&self, method: Method, effective_epochs: u32, storage: f64) -> Option<&CellSummary> {
        let key = CellKey {
            method: method.into(),
            effective_epochs,
            storage_ppm: (storage * 1e6).round() as u64,
        };
        self.cells.iter().find(|c| c.key == key)
    }

    /// One row per cell:
    /// `method,effective_epochs,storage,compute,n_seeds,mean_accuracy,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,effective_epochs,storage,compute,n_seeds,mean_accuracy,stderr\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.key.method.name(),
                c.key.effective_epochs,
                c.storage_fraction,
                c.compute_metric,
                c.n,
                c.mean_accuracy,
                c.stderr
            ));
        }
        out
    }

    /// Effective epochs down the side, storage fractions across, multi-epoch
    /// in the last column. Values are mean top-1 accuracy in percent.
    pub fn table(&self) -> String {
        let mut rows: Vec<u32> = self
            .cells
            .iter()
            .filter(|c| c.key.method != MethodOrd::Naive)
            .map(|c| c.key.effective_epochs)
            .collect();
        rows.sort_unstable();
        rows.dedup();
        let mut cols: Vec<(u64, f64)> = self
            .cells
            .iter()
            .filter(|c| c.key.method == MethodOrd::Epr)
            .map(|c| (c.key.storage_ppm, c.storage_fraction))
            .collect();
        cols.sort_by_key(|c| c.0);
        cols.dedup_by_key(|c| c.0);

        let mut out = format!("{:>8} {:>9}", "epochs", "compute");
        for (_, s) in &cols {
            out.push_str(&format!(" {:>14}", percent(*s)));
        }
        out.push_str(&format!(" {:>14}\n", "multi-epoch"));
        let fmt = |c: Option<&CellSummary>| match c {
            Some(c) => format!("{:.2}±{:.2}", 100.0 * c.mean_accuracy, 100.0 * c.stderr),
            None => "-".to_string(),
        };
        for e in rows {
            let compute = self
                .cells
                .iter()
                .find(|c| c.key.effective_epochs == e && c.key.method != MethodOrd::Naive)
                .map_or(0.0, |c| c.compute_metric);
            out.push_str(&format!("{e:>8} {:>9}", percent(compute)));
            for (_, s) in &cols {
                out.push_str(&format!(" {:>14}", fmt(self.get(Method::Epr, e, *s))));
            }
            out.push_str(&format!(" {:>14}\n", fmt(self.get(Method::MultiEpoch, e, 1.0))));
        }
        if let Some(n) = self.cells.iter().find(|c| c.key.method == MethodOrd::Naive) {
            out.push_str(&format!("naive one-pass: {}\n", fmt(Some(n))));
        }
        out
    }
}

/// Percentage with at most one decimal and no trailing `.0`.
fn percent(fraction: f64) -> String {
    let text = format!("{:.1}", 100.0 * fraction);
    format!("{}%", text.strip_suffix(".0").unwrap_or(&text))
}
