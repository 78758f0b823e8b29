//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use onepass_cli::config::ExperimentConfig;
use onepass_cli::experiment::{find_reports, run_jobs, Job};
use onepass_core::priority::raw_priority;
use onepass_core::{
    alpha_schedule, compute_metrics, importance_weights, inclusion_probability, priority,
    seeded_rng, AlphaSchedule, BufferConfig, Example, HarnessConfig, InsertOutcome, LayerShape,
    Learner, LearnerParams, ReplayBuffer, ScheduleState, SeenCounter, SumTree, WeightedBatch,
    DEFAULT_PRIORITY_FLOOR,
};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

type Outcome = Result<String, String>;

struct Criterion {
    id: &'static str,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: "1", name: "reservoir inclusion law", limit: Some(Duration::from_secs(10)), run: reservoir_law },
        Criterion { id: "2", name: "sampler fidelity", limit: Some(Duration::from_secs(30)), run: sampler_fidelity },
        Criterion { id: "3", name: "importance-weight unbiasedness", limit: Some(Duration::from_secs(30)), run: iw_unbiased },
        Criterion { id: "4", name: "priority equivalence and schedule", limit: None, run: priority_equivalence },
        Criterion { id: "5", name: "gradient correctness", limit: Some(Duration::from_secs(10)), run: gradients },
        Criterion { id: "6", name: "metric arithmetic", limit: None, run: metric_arithmetic },
        Criterion { id: "7", name: "trend reproduction on blobs", limit: Some(Duration::from_secs(30 * 60)), run: trends },
        Criterion { id: "8", name: "importance-weight ablation", limit: None, run: ablation },
        Criterion { id: "9", name: "sweep determinism", limit: None, run: determinism },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&outcome, c.limit) {
            if elapsed > limit {
                outcome = Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"));
            }
        }
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{}] {}: {detail} ({elapsed:.2?})", c.id, c.name);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}

fn check(ok: bool, msg: String) -> Result<String, String> {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn reservoir_law() -> Outcome {
    let (m, beta, trials) = (100, 1.5, 10_000u64);
    let cfg = BufferConfig::new(m, beta);
    let mut parts = Vec::new();
    let mut ok = true;
    for n in [150u64, 300, 1000] {
        let mut hits = 0;
        for t in 0..trials {
            let mut buf = ReplayBuffer::new(cfg, 1).map_err(|e| e.to_string())?;
            let mut counter = SeenCounter::new();
            let mut rng = seeded_rng(n << 32 | t);
            let mut last = false;
            for i in 0..n {
                counter.observe();
                let x = Example::new(vec![i as f32], 0);
                last = buf.try_insert(&x, 1.0, &counter, 0, &mut rng).map_err(|e| e.to_string())?
                    != InsertOutcome::Skipped;
            }
            hits += last as u64;
        }
        let rate = hits as f64 / trials as f64;
        let expect = (beta * m as f64 / n as f64).min(1.0);
        let law = inclusion_probability(n, &cfg).map_err(|e| e.to_string())?;
        ok &= (rate - expect).abs() <= 0.02 && law == expect;
        parts.push(format!("n={n} {rate:.4} vs {expect:.4}"));
    }
    check(ok, parts.join(", "))
}

fn total_variation(leaves: &[f64], draws: usize, seed: u64) -> Result<f64, String> {
    let mut tree = SumTree::new(leaves.len());
    for (i, &p) in leaves.iter().enumerate() {
        tree.update(i, p).map_err(|e| e.to_string())?;
    }
    let mut counts = vec![0u64; leaves.len()];
    let mut rng = seeded_rng(seed);
    for _ in 0..draws {
        counts[tree.sample_one(&mut rng).map_err(|e| e.to_string())?] += 1;
    }
    let total: f64 = leaves.iter().sum();
    Ok(counts
        .iter()
        .zip(leaves)
        .map(|(&c, &p)| (c as f64 / draws as f64 - p / total).abs())
        .sum::<f64>()
        / 2.0)
}

fn sampler_fidelity() -> Outcome {
    let mut rng = seeded_rng(2);
    let sparse: Vec<f64> = (0..1024)
        .map(|i| if i % 8 == 3 { rng.random_range(0.01..1.0) } else { 0.0 })
        .collect();
    let configs: Vec<(&str, Vec<f64>)> = vec![
        ("two-leaf 1:3", vec![1.0, 3.0]),
        ("uniform 256", vec![0.5; 256]),
        ("geometric 100", (0..100).map(|i| 0.95f64.powi(i)).collect()),
        ("sparse 1024", sparse),
        ("inverse-square 1000", (1..=1000).map(|i| 1.0 / (i * i) as f64).collect()),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, (name, leaves)) in configs.iter().enumerate() {
        let tv = total_variation(leaves, 1_000_000, 100 + i as u64)?;
        ok &= tv < 0.01;
        parts.push(format!("{name} tv={tv:.4}"));
    }

    let cap = 1000;
    let mut tree = SumTree::new(cap);
    let mut shadow = vec![0.0f64; cap];
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let slot = rng.random_range(0..cap);
        let p = rng.random_range(0.0..1.0);
        tree.update(slot, p).map_err(|e| e.to_string())?;
        shadow[slot] = p;
        let oracle: f64 = shadow.iter().sum();
        worst = worst.max((tree.total() - oracle).abs() / oracle);
    }
    ok &= worst <= 1e-9;
    parts.push(format!("root rel err {worst:.1e}"));
    check(ok, parts.join(", "))
}

fn random_params(shape: LayerShape, scale: f64, rng: &mut onepass_core::Rng) -> LearnerParams {
    let mut p = LearnerParams::zeros(shape);
    for t in p.theta.iter_mut() {
        *t = rng.random_range(-scale..scale);
    }
    p
}

fn random_examples(n: usize, d: usize, c: usize, rng: &mut onepass_core::Rng) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let x = (0..d).map(|_| rng.random_range(-2.0f32..2.0)).collect();
            Example::new(x, rng.random_range(0..c as u32))
        })
        .collect()
}

fn iw_unbiased() -> Outcome {
    let configs = [
        (LayerShape::linear(5, 3), 200, 0.5, 11u64),
        (LayerShape::mlp(6, 8, 4), 500, 0.9, 12),
        (LayerShape::linear(10, 10), 1000, 1.0, 13),
    ];
    let (draws, batch) = (1_000_000usize, 64usize);
    let mut parts = Vec::new();
    let mut ok = true;
    for (shape, m, alpha, seed) in configs {
        let mut rng = seeded_rng(seed);
        let params = random_params(shape, 1.0, &mut rng);
        let buffer = random_examples(m, shape.input_dim, shape.n_classes, &mut rng);
        let losses: Vec<f64> = buffer
            .iter()
            .map(|e| params.loss(&e.features, e.label))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let prios: Vec<f64> = losses
            .iter()
            .map(|&l| priority(l, alpha, DEFAULT_PRIORITY_FLOOR))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let mut tree = SumTree::new(m);
        for (i, &p) in prios.iter().enumerate() {
            tree.update(i, p).map_err(|e| e.to_string())?;
        }
        let uniform = losses.iter().sum::<f64>() / m as f64;
        let mut acc = 0.0;
        let batches = draws / batch;
        for _ in 0..batches {
            let slots = tree.sample(batch, &mut rng).map_err(|e| e.to_string())?;
            let p: Vec<f64> = slots.iter().map(|&s| prios[s]).collect();
            let w = importance_weights(&p, DEFAULT_PRIORITY_FLOOR).map_err(|e| e.to_string())?;
            acc += slots.iter().zip(&w).map(|(&s, w)| w * losses[s]).sum::<f64>() / batch as f64;
        }
        let rel = (acc / batches as f64 - uniform).abs() / uniform;
        ok &= rel < 0.01;
        parts.push(format!("m={m} rel err {:.3}%", 100.0 * rel));
    }
    check(ok, parts.join(", "))
}

fn priority_equivalence() -> Outcome {
    let mut rng = seeded_rng(4);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let shape = if i % 2 == 0 { LayerShape::linear(6, 5) } else { LayerShape::mlp(6, 7, 5) };
        let params = random_params(shape, 2.0, &mut rng);
        let ex = random_examples(1, 6, 5, &mut rng).remove(0);
        let alpha = rng.random_range(0.0..=1.0);
        let loss = params.loss(&ex.features, ex.label).map_err(|e| e.to_string())?;
        let fy = params.predict(&ex.features).map_err(|e| e.to_string())?[ex.label as usize];
        let via_loss = raw_priority(loss, alpha).map_err(|e| e.to_string())?;
        worst = worst.max((via_loss - (1.0 - alpha * fy)).abs());
    }
    let t_max = 1000;
    let alpha_at = |t| alpha_schedule(&ScheduleState::new(t, t_max).unwrap(), AlphaSchedule::Scaled);
    let endpoints = alpha_at(0) == 0.0 && alpha_at(t_max) == 1.0;
    let schedule_monotone = (1..=t_max).all(|t| alpha_at(t) >= alpha_at(t - 1));
    let mut priority_monotone = true;
    for _ in 0..10_000 {
        let (l1, l2) = (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
        let (a1, a2) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        let p = |l, a| priority(l, a, DEFAULT_PRIORITY_FLOOR).unwrap();
        priority_monotone &= (l1 <= l2) == (p(l1, a1) <= p(l2, a1)) || p(l1, a1) == p(l2, a1);
        priority_monotone &= (a1 <= a2) == (p(l1, a1) >= p(l1, a2)) || p(l1, a1) == p(l1, a2);
    }
    check(
        worst <= 1e-12 && endpoints && schedule_monotone && priority_monotone,
        format!(
            "max form gap {worst:.1e}, endpoints exact {endpoints}, schedule monotone {schedule_monotone}, priority monotone {priority_monotone}"
        ),
    )
}

fn fd_rel_error(params: &LearnerParams, batch: &WeightedBatch) -> Result<f64, String> {
    let (_, g) = params.loss_and_gradient(batch).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut probe = params.clone();
    let mut num = vec![0.0; g.len()];
    for (i, n) in num.iter_mut().enumerate() {
        let orig = probe.theta[i];
        probe.theta[i] = orig + h;
        let up = probe.loss_and_gradient(batch).map_err(|e| e.to_string())?.0;
        probe.theta[i] = orig - h;
        let down = probe.loss_and_gradient(batch).map_err(|e| e.to_string())?.0;
        probe.theta[i] = orig;
        *n = (up - down) / (2.0 * h);
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = g.iter().zip(&num).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / norm(&g).max(norm(&num)).max(1e-12))
}

fn gradients() -> Outcome {
    let mut rng = seeded_rng(5);
    let mut worst = [0.0f64; 2];
    for (j, shape) in [LayerShape::linear(8, 4), LayerShape::mlp(8, 10, 4)].into_iter().enumerate() {
        for _ in 0..20 {
            let params = random_params(shape, 0.7, &mut rng);
            let examples = random_examples(12, 8, 4, &mut rng);
            let raw: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..4.0)).collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let batch = WeightedBatch::replay(examples, raw.iter().map(|w| w / mean).collect())
                .map_err(|e| e.to_string())?;
            worst[j] = worst[j].max(fd_rel_error(&params, &batch)?);
        }
    }
    check(
        worst[0] < 1e-4 && worst[1] < 1e-4,
        format!("max rel err linear {:.1e}, mlp {:.1e}", worst[0], worst[1]),
    )
}

fn metric_arithmetic() -> Outcome {
    let (n, b, baseline) = (45_000usize, 64usize, 90u32);
    let expected = [(0usize, "1.1"), (1, "2.2"), (3, "4.4"), (5, "6.7"), (8, "10")];
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, shown) in expected {
        let (_, compute) = compute_metrics(k, n, b, 1, baseline);
        let pct = format!("{:.1}", 100.0 * compute);
        let pct = pct.strip_suffix(".0").unwrap_or(&pct).to_string();
        ok &= compute == (k + 1) as f64 / 90.0 && pct == shown;
        parts.push(format!("k={k}: {pct}%"));
    }
    for fraction in [0.01, 0.05, 0.10, 1.0] {
        let cfg = HarnessConfig { storage_fraction: fraction, ..HarnessConfig::default() };
        let cap = cfg.buffer_capacity(n);
        let (storage, _) = compute_metrics(5, n, b, cap, baseline);
        ok &= storage == fraction;
        parts.push(format!("storage {fraction}: {storage}"));
    }
    check(ok, parts.join(", "))
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, sd / n.sqrt())
}

/// Two-sided paired t-test p-value of `a - b`.
fn paired_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, se) = mean_se(&d);
    if se == 0.0 {
        return if m == 0.0 { 1.0 } else { 0.0 };
    }
    let t = StudentsT::new(0.0, 1.0, (d.len() - 1) as f64).unwrap();
    2.0 * (1.0 - t.cdf((m / se).abs()))
}

/// Test accuracies per seed for every blobs configuration the trend and
/// ablation criteria compare.
struct TrendRuns {
    naive: Vec<f64>,
    epr_k5_1pct: Vec<f64>,
    epr_k8_1pct: Vec<f64>,
    /// k = 1, 3, 5, 8 at 10% storage.
    epr_10pct: Vec<Vec<f64>>,
    multi9: Vec<f64>,
    unweighted_k5_1pct: Vec<f64>,
}

fn trend_runs() -> Result<&'static TrendRuns, String> {
    static RUNS: OnceLock<Result<TrendRuns, String>> = OnceLock::new();
    RUNS.get_or_init(compute_trend_runs).as_ref().map_err(Clone::clone)
}

fn compute_trend_runs() -> Result<TrendRuns, String> {
    let cfg = ExperimentConfig::load(&workspace_root().join("configs/blobs.json")).map_err(|e| e.to_string())?;
    let ds = cfg.dataset.load().map_err(|e| e.to_string())?;
    let seeds = cfg.n_seeds;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let accuracies = |cfg: &ExperimentConfig, make: &dyn Fn(u64) -> Job| -> Result<Vec<f64>, String> {
        let jobs: Vec<Job> = (0..seeds).map(make).collect();
        let reports = run_jobs(cfg, &ds, &jobs, threads).map_err(|e| format!("{e:#}"))?;
        Ok(reports.iter().map(|r| r.top1_accuracy).collect())
    };
    let epr = |k, s| move |i| Job::Epr { replay_steps: k, storage_fraction: s, seed_index: i };
    let mut unweighted_cfg = cfg.clone();
    unweighted_cfg.harness.importance_weights = false;
    Ok(TrendRuns {
        naive: accuracies(&cfg, &|i| Job::Naive { seed_index: i })?,
        epr_k5_1pct: accuracies(&cfg, &epr(5, 0.01))?,
        epr_k8_1pct: accuracies(&cfg, &epr(8, 0.01))?,
        epr_10pct: [1, 3, 5, 8]
            .into_iter()
            .map(|k| accuracies(&cfg, &epr(k, 0.10)))
            .collect::<Result<_, _>>()?,
        multi9: accuracies(&cfg, &|i| Job::MultiEpoch { epochs: 9, seed_index: i })?,
        unweighted_k5_1pct: accuracies(&unweighted_cfg, &epr(5, 0.01))?,
    })
}

fn trends() -> Outcome {
    let runs = trend_runs()?;
    let m = |v: &[f64]| mean_se(v).0;
    let mut lines = Vec::new();

    let p = paired_p(&runs.epr_k5_1pct, &runs.naive);
    let a = m(&runs.naive) < m(&runs.epr_k5_1pct) && p < 0.05;
    lines.push(format!(
        "(a) {} naive {:.4} < EPR(k=5, 1%) {:.4}, paired p={p:.1e}",
        tag(a),
        m(&runs.naive),
        m(&runs.epr_k5_1pct)
    ));

    let means: Vec<f64> = runs.epr_10pct.iter().map(|v| m(v)).collect();
    let b = means.windows(2).all(|w| w[0] <= w[1]);
    let gaps: Vec<String> = runs
        .epr_10pct
        .windows(2)
        .map(|w| format!("{:.1e}", paired_p(&w[1], &w[0])))
        .collect();
    lines.push(format!(
        "(b) {} EPR at 10% over 2/4/6/9 epochs {} (paired p of successive gaps {})",
        tag(b),
        means.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" <= "),
        gaps.join(", ")
    ));

    let c = m(&runs.multi9) >= means[3];
    lines.push(format!("(c) {} multi-epoch(9) {:.4} >= EPR(k=8, 10%) {:.4}", tag(c), m(&runs.multi9), means[3]));

    let d = means[3] >= m(&runs.epr_k8_1pct);
    lines.push(format!("(d) {} EPR(k=8) 10% {:.4} >= 1% {:.4}", tag(d), means[3], m(&runs.epr_k8_1pct)));

    check(a && b && c && d, lines.join("; "))
}

fn ablation() -> Outcome {
    let runs = trend_runs()?;
    let (wm, _) = mean_se(&runs.epr_k5_1pct);
    let (um, se) = mean_se(&runs.unweighted_k5_1pct);
    check(
        um - wm <= se,
        format!("EPR(k=5, 1%) unweighted {um:.4} - weighted {wm:.4} = {:+.4}, se {se:.4}", um - wm),
    )
}

fn tag(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = workspace_root().join("configs/smoke.json");
    let outs = [dir.path().join("a"), dir.path().join("b")];
    for (out, parallel) in outs.iter().zip(["1", "2"]) {
        let code = onepass_cli::run_command([
            "onepass".as_ref(),
            "sweep".as_ref(),
            "--config".as_ref(),
            config.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
            "--parallel".as_ref(),
            parallel.as_ref(),
        ] as [&std::ffi::OsStr; 8]);
        if code != 0 {
            return Err(format!("sweep exited with {code}"));
        }
    }
    let a = find_reports(&outs[0]).map_err(|e| e.to_string())?;
    let b = find_reports(&outs[1]).map_err(|e| e.to_string())?;
    if a.is_empty() || a.len() != b.len() {
        return Err(format!("{} vs {} reports", a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(&b) {
        let rel_x = x.strip_prefix(&outs[0]).unwrap();
        let rel_y = y.strip_prefix(&outs[1]).unwrap();
        if rel_x != rel_y || fs::read(x).map_err(|e| e.to_string())? != fs::read(y).map_err(|e| e.to_string())? {
            return Err(format!("{} differs", rel_x.display()));
        }
    }
    Ok(format!("{} report.json files byte-identical", a.len()))
}
