use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use drae_core::harness::{accuracy, gen_stream, run_stream, RunOutcome, RunSummary, TaskStream};
use drae_core::numerics::Rng;
use drae_core::prag::{knowledge_stability, retrieve, Corpus};
use drae_core::rsho::{plan, simulate, PlanOutcome, RuleSet};
use drae_core::trainer::{DraeSystem, SystemCheckpoint};
use drae_core::DraeError;
use log::{debug, info};
use serde::Serialize;

use crate::{Classify, CliError, CliResult, RunConfig};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const REGRET_FILE: &str = "regret.csv";
pub const FORGETTING_FILE: &str = "forgetting.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Per-seed artifact directory under `out_dir`.
pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed-{seed}"))
}

/// Means over replicates; `forgetting` only when every run measured it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryMeans {
    pub slope: f64,
    pub forgetting: Option<f64>,
    pub stability_mean: f64,
    #[serde(rename = "P_T")]
    pub path_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergedSummary {
    pub mean: SummaryMeans,
    pub runs: Vec<RunSummary>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).runtime("serialising")?;
    text.push('\n');
    fs::write(path, text).runtime(format!("writing {}", path.display()))
}

fn write_regret(path: &Path, out: &RunOutcome) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).runtime(format!("creating {}", path.display()))?;
    let r = &out.regret;
    w.write_record(["step", "loss", "comparator_loss", "cumulative_regret"]).runtime("writing regret")?;
    for t in 0..r.per_step_loss.len() {
        let row = [t.to_string(), r.per_step_loss[t].to_string(), r.comparator_loss[t].to_string(), r.cumulative_regret[t].to_string()];
        w.write_record(&row).runtime("writing regret")?;
    }
    w.flush().runtime("writing regret")
}

/// Row `i` is the accuracy on the `i`-th scheduled task after each segment.
fn write_forgetting(path: &Path, out: &RunOutcome) -> CliResult<()> {
    let Some(f) = &out.forgetting else { return Ok(()) };
    let mut w = csv::Writer::from_path(path).runtime(format!("creating {}", path.display()))?;
    let mut header = vec!["task".to_string()];
    header.extend((0..f.accuracy.len()).map(|j| format!("after_{j}")));
    w.write_record(&header).runtime("writing forgetting")?;
    for (i, row) in f.accuracy.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).runtime("writing forgetting")?;
    }
    w.flush().runtime("writing forgetting")
}

fn run_seed(cfg: &RunConfig, seed: u64, corpus: Option<&Corpus>) -> CliResult<RunSummary> {
    let stream = gen_stream(&cfg.stream_for(seed)).input("stream")?;
    let mut system = cfg.build_system(seed, &stream, corpus)?;
    let dir = seed_dir(&cfg.out_dir, seed);
    fs::create_dir_all(&dir).runtime(format!("creating {}", dir.display()))?;
    let log_path = dir.join(TRAIN_LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).runtime(format!("creating {}", log_path.display()))?);
    info!("seed {seed}: {} steps", stream.len());
    let outcome = run_stream(&mut system, &stream, |rec| {
        serde_json::to_writer(&mut log, rec)?;
        log.write_all(b"\n")?;
        if rec.step % 1000 == 0 {
            debug!("seed {seed} step {}: total {:.4}, K {}", rec.step, rec.total, rec.k);
        }
        Ok(())
    })
    .runtime(format!("seed {seed}"))?;
    log.flush().runtime(format!("writing {}", log_path.display()))?;
    write_regret(&dir.join(REGRET_FILE), &outcome)?;
    write_forgetting(&dir.join(FORGETTING_FILE), &outcome)?;
    let ckpt = SystemCheckpoint::capture(&system).to_json().runtime("serialising checkpoint")?;
    fs::write(dir.join(CHECKPOINT_FILE), ckpt).runtime("writing checkpoint")?;
    write_json(&dir.join(SUMMARY_FILE), &outcome.summary)?;
    info!("seed {seed}: slope {:.3}, forgetting {:?}", outcome.summary.slope, outcome.summary.forgetting);
    Ok(outcome.summary)
}

/// Runs every replicate, `threads` at a time, and merges the summaries in
/// seed order.
pub fn cmd_run_stream(cfg: &RunConfig, threads: usize) -> CliResult<MergedSummary> {
    if threads == 0 {
        return Err(CliError::Input(anyhow!("--threads must be at least 1")));
    }
    fs::create_dir_all(&cfg.out_dir).runtime(format!("creating {}", cfg.out_dir.display()))?;
    let corpus = cfg.load_corpus()?;
    let seeds = cfg.seeds();
    let workers = threads.min(seeds.len());
    let mut results: Vec<(u64, CliResult<RunSummary>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (seeds, corpus) = (&seeds, corpus.as_ref());
                scope.spawn(move || {
                    seeds.iter().skip(w).step_by(workers).map(|&s| (s, run_seed(cfg, s, corpus))).collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    results.sort_by_key(|(s, _)| *s);
    let runs: Vec<RunSummary> = results.into_iter().map(|(_, r)| r).collect::<CliResult<_>>()?;
    let n = runs.len() as f64;
    let mean = |f: fn(&RunSummary) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let forgetting = runs.iter().map(|r| r.forgetting).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / n);
    let merged = MergedSummary {
        mean: SummaryMeans {
            slope: mean(|r| r.slope),
            forgetting,
            stability_mean: mean(|r| r.stability_mean),
            path_length: mean(|r| r.path_length),
        },
        runs,
    };
    write_json(&cfg.out_dir.join(SUMMARY_FILE), &merged)?;
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrieveOutput {
    pub selected: Vec<String>,
    pub similarities: Vec<f64>,
    pub objective: f64,
}

/// Comma- or whitespace-separated numbers, optionally in JSON brackets.
pub fn parse_vector(text: &str) -> CliResult<Vec<f64>> {
    let body = text.trim().trim_start_matches('[').trim_end_matches(']');
    let v = body
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| anyhow!("bad number {s:?}: {e}")))
        .collect::<anyhow::Result<Vec<f64>>>()
        .map_err(CliError::Input)?;
    if v.is_empty() {
        return Err(CliError::Input(anyhow!("query vector is empty")));
    }
    Ok(v)
}

pub fn cmd_retrieve(corpus_path: &Path, query: &[f64], lambda: f64) -> CliResult<RetrieveOutput> {
    let f = File::open(corpus_path).input(format!("opening corpus {}", corpus_path.display()))?;
    let corpus = Corpus::from_jsonl(BufReader::new(f)).input(format!("corpus {}", corpus_path.display()))?;
    let r = retrieve(&corpus, query, lambda).input("retrieval")?;
    Ok(RetrieveOutput { selected: r.selected, similarities: r.similarities, objective: r.objective })
}

/// Plan text: `PLAN` with primitive names or `FAIL`, then one line of
/// predicates per visited state.
pub fn cmd_plan(rules_path: &Path, initial: &[String], budget: usize, seed: u64) -> CliResult<String> {
    let text = fs::read_to_string(rules_path).input(format!("reading rule set {}", rules_path.display()))?;
    let rules = RuleSet::from_json(&text).input(format!("rule set {}", rules_path.display()))?;
    let ids = initial
        .iter()
        .map(|name| rules.predicate_id(name).ok_or_else(|| CliError::Input(anyhow!("unknown predicate {name:?}"))))
        .collect::<CliResult<Vec<usize>>>()?;
    let outcome = plan(&rules, &ids, budget, &mut Rng::new(seed)).input("planning")?;
    let fmt_state = |s: u64| {
        let names = rules.names_of(s);
        if names.is_empty() { "-".to_string() } else { names.join(" ") }
    };
    let mut out = String::new();
    let init = rules.state_of(&ids);
    match outcome {
        PlanOutcome::Found(p) => {
            let names = rules.primitive_names(&p);
            out.push_str(&format!("PLAN{}\n", names.iter().map(|n| format!(" {n}")).collect::<String>()));
            let trace = simulate(&rules, init, &p).ok_or_else(|| CliError::Runtime(anyhow!("returned plan does not replay")))?;
            for (i, s) in trace.iter().enumerate() {
                out.push_str(&format!("{i}: {}\n", fmt_state(*s)));
            }
        }
        PlanOutcome::Failed { simulations } => {
            out.push_str(&format!("FAIL after {simulations} simulations\n"));
            out.push_str(&format!("0: {}\n", fmt_state(init)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub seed: u64,
    /// Held-out accuracy per scheduled task.
    pub task_accuracy: Vec<f64>,
    pub mean_task_accuracy: Option<f64>,
    /// Accuracy on the training stream itself, prediction only.
    pub stream_accuracy: f64,
    /// Knowledge stability between consecutive stream inputs.
    pub stability_mean: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub cluster_count: usize,
}

pub fn load_checkpoint(path: &Path) -> CliResult<DraeSystem> {
    let text = fs::read_to_string(path).input(format!("reading checkpoint {}", path.display()))?;
    let ckpt = SystemCheckpoint::from_json(&text).input(format!("checkpoint {}", path.display()))?;
    ckpt.restore().input(format!("checkpoint {}", path.display()))
}

/// Evaluation-only pass of a restored system over the stream its seed
/// generates (or `seed`, when given).
pub fn cmd_eval(checkpoint: &Path, cfg: &RunConfig, seed: Option<u64>) -> CliResult<EvalReport> {
    let system = load_checkpoint(checkpoint)?;
    let seed = seed.unwrap_or(system.train.seed);
    let stream = gen_stream(&cfg.stream_for(seed)).input("stream")?;
    if stream.config.dim != system.config.input_dim || stream.config.classes != system.config.num_classes {
        return Err(CliError::Input(anyhow!("stream shape does not match the checkpoint")));
    }
    eval_system(&system, &stream, seed).runtime("evaluation")
}

fn eval_system(system: &DraeSystem, stream: &TaskStream, seed: u64) -> drae_core::Result<EvalReport> {
    let segments = stream.schedule.len();
    let task_accuracy: Vec<f64> = if stream.holdout.iter().all(|h| !h.is_empty()) {
        stream.schedule.iter().map(|&(task, _)| accuracy(system, &stream.holdout[task])).collect::<drae_core::Result<_>>()?
    } else {
        Vec::new()
    };
    let mean_task_accuracy = (segments >= 2 && !task_accuracy.is_empty()).then(|| task_accuracy.iter().sum::<f64>() / segments as f64);
    let labelled: Vec<(Vec<f64>, usize)> = stream.samples.iter().map(|s| (s.x.clone(), s.y)).collect();
    let stream_accuracy = accuracy(system, &labelled)?;
    let (mut total, mut count) = (0.0, 0usize);
    let mut prev: Option<(Vec<f64>, Vec<String>)> = None;
    for s in &stream.samples {
        let e = system.evaluate(&s.x)?;
        if let Some((h, sel)) = &prev {
            match knowledge_stability(h, &e.hidden, sel, &e.retrieval.selected) {
                Ok(v) => {
                    total += v;
                    count += 1;
                }
                // a zero hidden state has no direction to compare
                Err(DraeError::DegenerateVector(_)) => {}
                Err(err) => return Err(err),
            }
        }
        prev = Some((e.hidden, e.retrieval.selected));
    }
    Ok(EvalReport {
        seed,
        task_accuracy,
        mean_task_accuracy,
        stream_accuracy,
        stability_mean: if count == 0 { 0.0 } else { total / count as f64 },
        k: system.k(),
        cluster_count: system.cluster_count(),
    })
}
