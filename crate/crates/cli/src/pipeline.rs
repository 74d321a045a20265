//! The five-stage experiment pipeline: gen-data -> sft -> rl -> eval ->
//! theory-check, plus the component-ablation sweep.
//!
//! Every run writes into a directory named from the config hash, so
//! identical configs map to identical paths and artifact names. A stage
//! failure halts the pipeline with the stage name attached; artifacts
//! already written stay on disk.

use planrl_core::cold_start::{build_dataset, sft_train, ColdStartRecord, SftTrace};
use planrl_core::config::ExperimentConfig;
use planrl_core::error::{CoreError, Result};
use planrl_core::eval::{evaluate, heldout_tasks, EvalReport};
use planrl_core::grpo::{rl_train, write_metrics_csv, StepMetrics, StepObserver};
use planrl_core::reward::RewardBreakdown;
use planrl_core::rollout::RolloutGroup;
use planrl_core::theory::{fano_check, FanoReport};
use planrl_core::trace::{
    counts_from_traces, read_trace_jsonl, records_from_group, write_trace_jsonl,
};
use planrl_core::{PolicyTable, Vocab};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Deterministic artifact layout inside one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn for_config(out_root: &Path, config: &ExperimentConfig) -> Self {
        Self {
            dir: out_root.join(format!("run-{}", config.hash())),
        }
    }

    pub fn config_json(&self) -> PathBuf {
        self.dir.join("config.json")
    }
    pub fn vocab_json(&self) -> PathBuf {
        self.dir.join("vocab.json")
    }
    pub fn dataset_jsonl(&self) -> PathBuf {
        self.dir.join("dataset.jsonl")
    }
    pub fn sft_loss_csv(&self) -> PathBuf {
        self.dir.join("sft_loss.csv")
    }
    pub fn policy_sft(&self) -> PathBuf {
        self.dir.join("policy_sft.ckpt")
    }
    pub fn policy_rl(&self) -> PathBuf {
        self.dir.join("policy_rl.ckpt")
    }
    pub fn metrics_csv(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
    pub fn rl_traces_jsonl(&self) -> PathBuf {
        self.dir.join("rl_traces.jsonl")
    }
    pub fn eval_report_json(&self) -> PathBuf {
        self.dir.join("eval_report.json")
    }
    pub fn sft_eval_report_json(&self) -> PathBuf {
        self.dir.join("eval_report_sft.json")
    }
    pub fn sft_eval_traces_jsonl(&self) -> PathBuf {
        self.dir.join("eval_traces_sft.jsonl")
    }
    pub fn eval_traces_jsonl(&self) -> PathBuf {
        self.dir.join("eval_traces.jsonl")
    }
    pub fn theory_report_json(&self) -> PathBuf {
        self.dir.join("theory_report.json")
    }
    pub fn heldout_tasks_jsonl(&self) -> PathBuf {
        self.dir.join("heldout_tasks.jsonl")
    }
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }
}

/// Which pipeline stages to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageFlags {
    pub gen_data: bool,
    pub sft: bool,
    pub rl: bool,
    pub eval: bool,
    pub theory: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        Self {
            gen_data: true,
            sft: true,
            rl: true,
            eval: true,
            theory: true,
        }
    }
}

impl StageFlags {
    /// Parses a comma-separated stage list, e.g. `gen-data,sft,rl`.
    pub fn from_list(list: &str) -> Result<Self> {
        let mut flags = Self {
            gen_data: false,
            sft: false,
            rl: false,
            eval: false,
            theory: false,
        };
        for stage in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match stage {
                "gen-data" => flags.gen_data = true,
                "sft" => flags.sft = true,
                "rl" => flags.rl = true,
                "eval" => flags.eval = true,
                "theory-check" => flags.theory = true,
                other => {
                    return Err(CoreError::Config(format!("unknown stage `{other}`")));
                }
            }
        }
        Ok(flags)
    }
}

/// Outcome of a pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub dir: PathBuf,
    pub sft_trace: Option<SftTrace>,
    pub rl_metrics: Option<Vec<StepMetrics>>,
    pub sft_eval: Option<EvalReport>,
    pub eval: Option<EvalReport>,
    pub theory: Option<FanoReport>,
}

/// Streams rollout traces to JSONL as they are produced and writes
/// periodic checkpoints during RL. Streaming keeps partial traces on disk
/// when a run dies mid-flight.
struct RlObserver<'a> {
    vocab: &'a Vocab,
    sink: std::io::BufWriter<std::fs::File>,
    groups_per_step: usize,
    checkpoint_every: usize,
    checkpoint_dir: PathBuf,
}

impl StepObserver for RlObserver<'_> {
    fn on_step(
        &mut self,
        step: usize,
        policy: &PolicyTable,
        groups: &[RolloutGroup],
        breakdowns: &[Vec<RewardBreakdown>],
        _metrics: &StepMetrics,
    ) -> Result<()> {
        for (g_idx, (group, bd)) in groups.iter().zip(breakdowns).enumerate() {
            let question_id = step * self.groups_per_step + g_idx;
            for record in records_from_group(step, question_id, group, bd, self.vocab) {
                serde_json::to_writer(&mut self.sink, &record)?;
                self.sink.write_all(b"\n")?;
            }
        }
        self.sink.flush()?;
        if self.checkpoint_every > 0 && (step + 1).is_multiple_of(self.checkpoint_every) {
            std::fs::create_dir_all(&self.checkpoint_dir)?;
            policy.save(
                &self
                    .checkpoint_dir
                    .join(format!("step_{:05}.ckpt", step + 1)),
            )?;
        }
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn write_dataset_jsonl(path: &Path, records: &[ColdStartRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_dataset_jsonl(path: &Path) -> Result<Vec<ColdStartRecord>> {
    use std::io::BufRead;
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Seeds for the independent pipeline streams, derived from the run seed.
struct Streams {
    dataset: u64,
    rl: u64,
    heldout: u64,
    eval: u64,
}

impl Streams {
    fn new(seed: u64) -> Self {
        // Fixed offsets keep the streams disjoint and reproducible.
        Self {
            dataset: seed.wrapping_add(0x0001_0000),
            rl: seed.wrapping_add(0x0002_0000),
            heldout: seed.wrapping_add(0x0003_0000),
            eval: seed.wrapping_add(0x0004_0000),
        }
    }
}

/// Stage 1: build the cold-start dataset.
pub fn stage_gen_data(config: &ExperimentConfig, paths: &RunPaths) -> Result<Vec<ColdStartRecord>> {
    let vocab = Vocab::standard();
    let streams = Streams::new(config.seed);
    let records = build_dataset(
        streams.dataset,
        config.sft.dataset_size,
        &config.mix(),
        &config.domain,
        &vocab,
    )
    .map_err(|e| e.in_stage("gen-data"))?;
    write_dataset_jsonl(&paths.dataset_jsonl(), &records).map_err(|e| e.in_stage("gen-data"))?;
    Ok(records)
}

/// Stage 2: supervised cold start. Returns the trained policy.
pub fn stage_sft(
    config: &ExperimentConfig,
    paths: &RunPaths,
    records: &[ColdStartRecord],
) -> Result<(PolicyTable, SftTrace)> {
    let vocab = Vocab::standard();
    let mut policy = PolicyTable::for_vocab(
        &vocab,
        config.policy.context_order,
        config.policy.temperature,
    )
    .map_err(|e| e.in_stage("sft"))?;
    let trace = sft_train(&mut policy, records, &config.sft).map_err(|e| e.in_stage("sft"))?;
    policy
        .save(&paths.policy_sft())
        .map_err(|e| e.in_stage("sft"))?;
    let mut w = csv::Writer::from_path(paths.sft_loss_csv()).map_err(CoreError::from)?;
    w.write_record(["epoch", "mean_loss"])
        .map_err(CoreError::from)?;
    for (i, loss) in trace.epoch_losses.iter().enumerate() {
        w.write_record([i.to_string(), loss.to_string()])
            .map_err(CoreError::from)?;
    }
    w.flush().map_err(CoreError::Io)?;
    Ok((policy, trace))
}

/// Stage 3: group-relative policy optimization from the given policy.
pub fn stage_rl(
    config: &ExperimentConfig,
    paths: &RunPaths,
    policy: &mut PolicyTable,
) -> Result<Vec<StepMetrics>> {
    let vocab = Vocab::standard();
    let streams = Streams::new(config.seed);
    let mut observer = RlObserver {
        vocab: &vocab,
        sink: std::io::BufWriter::new(
            std::fs::File::create(paths.rl_traces_jsonl())
                .map_err(|e| CoreError::Io(e).in_stage("rl"))?,
        ),
        groups_per_step: config.rl.groups_per_step,
        checkpoint_every: config.rl.checkpoint_every,
        checkpoint_dir: paths.checkpoint_dir(),
    };
    let metrics = rl_train(
        policy,
        &config.effective_reward(),
        &config.rl,
        &config.rollout,
        &config.mix(),
        &config.domain,
        &vocab,
        streams.rl,
        &mut observer,
    )
    .map_err(|e| e.in_stage("rl"))?;
    write_metrics_csv(&paths.metrics_csv(), &metrics).map_err(|e| e.in_stage("rl"))?;
    policy
        .save(&paths.policy_rl())
        .map_err(|e| e.in_stage("rl"))?;
    Ok(metrics)
}

/// Stage 4: evaluation on a held-out task set. The task set itself is
/// persisted as JSONL next to the report.
pub fn stage_eval(
    config: &ExperimentConfig,
    policy: &PolicyTable,
    report_path: &Path,
    traces_path: Option<&Path>,
) -> Result<EvalReport> {
    let vocab = Vocab::standard();
    let streams = Streams::new(config.seed);
    let tasks = heldout_tasks(
        streams.heldout,
        config.eval.heldout_tasks,
        &config.mix(),
        &config.domain,
    )
    .map_err(|e| e.in_stage("eval"))?;
    if let Some(dir) = report_path.parent() {
        let mut w =
            std::io::BufWriter::new(std::fs::File::create(dir.join("heldout_tasks.jsonl"))?);
        for task in &tasks {
            serde_json::to_writer(&mut w, &planrl_core::task::TaskRecord::from(task))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    let (report, traces) = evaluate(policy, &tasks, &config.eval, &vocab, streams.eval)
        .map_err(|e| e.in_stage("eval"))?;
    write_json(report_path, &report).map_err(|e| e.in_stage("eval"))?;
    if let Some(path) = traces_path {
        write_trace_jsonl(path, &traces).map_err(|e| e.in_stage("eval"))?;
    }
    Ok(report)
}

/// Stage 5: the information-theoretic error-bound check over a trace file.
pub fn stage_theory(traces_path: &Path, report_path: &Path) -> Result<FanoReport> {
    let traces = read_trace_jsonl(traces_path).map_err(|e| e.in_stage("theory-check"))?;
    if traces.is_empty() {
        return Err(CoreError::Config("empty trace file".into()).in_stage("theory-check"));
    }
    let counts = counts_from_traces(&traces);
    let report = fano_check(&counts);
    write_json(report_path, &report).map_err(|e| e.in_stage("theory-check"))?;
    Ok(report)
}

/// Executes the staged pipeline for one config. Every output file name is a
/// pure function of the config hash.
pub fn run_pipeline(
    config: &ExperimentConfig,
    out_root: &Path,
    stages: &StageFlags,
) -> Result<RunSummary> {
    config.validate()?;
    let vocab = Vocab::standard();
    let paths = RunPaths::for_config(out_root, config);
    std::fs::create_dir_all(&paths.dir)?;
    std::fs::write(paths.config_json(), config.to_json_string())?;
    std::fs::write(paths.vocab_json(), vocab.manifest_json())?;

    let mut summary = RunSummary {
        config_hash: config.hash(),
        dir: paths.dir.clone(),
        sft_trace: None,
        rl_metrics: None,
        sft_eval: None,
        eval: None,
        theory: None,
    };

    let records = if stages.gen_data {
        Some(stage_gen_data(config, &paths)?)
    } else if paths.dataset_jsonl().exists() {
        Some(read_dataset_jsonl(&paths.dataset_jsonl())?)
    } else {
        None
    };

    // The skip_sft ablation optimizes straight from the uniform policy.
    let mut policy = if stages.sft && !config.ablation.skip_sft {
        let records = records.as_deref().ok_or_else(|| {
            CoreError::Config("sft stage needs a dataset; run gen-data first".into())
                .in_stage("sft")
        })?;
        let (policy, trace) = stage_sft(config, &paths, records)?;
        summary.sft_trace = Some(trace);
        policy
    } else {
        PolicyTable::for_vocab(
            &vocab,
            config.policy.context_order,
            config.policy.temperature,
        )?
    };

    if stages.sft && !config.ablation.skip_sft && stages.eval {
        summary.sft_eval = Some(stage_eval(
            config,
            &policy,
            &paths.sft_eval_report_json(),
            Some(&paths.sft_eval_traces_jsonl()),
        )?);
    }

    if stages.rl {
        summary.rl_metrics = Some(stage_rl(config, &paths, &mut policy)?);
    }

    if stages.eval {
        summary.eval = Some(stage_eval(
            config,
            &policy,
            &paths.eval_report_json(),
            Some(&paths.eval_traces_jsonl()),
        )?);
    }

    if stages.theory {
        let traces = if paths.eval_traces_jsonl().exists() {
            paths.eval_traces_jsonl()
        } else {
            paths.rl_traces_jsonl()
        };
        summary.theory = Some(stage_theory(&traces, &paths.theory_report_json())?);
    }

    Ok(summary)
}

/// One row of the component-ablation sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub config_hash: String,
    pub accuracy: f64,
    pub mean_response_length: f64,
}

/// Results of the four-variant ablation sweep on a shared seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSummary {
    pub rows: Vec<AblationRow>,
}

/// Runs full / no-analytic / no-format / no-sft variants of one config and
/// summarizes their final held-out accuracies.
pub fn run_ablation_sweep(base: &ExperimentConfig, out_root: &Path) -> Result<AblationSummary> {
    type Variant = (&'static str, Box<dyn Fn(&mut ExperimentConfig)>);
    let mut rows = Vec::new();
    let variants: [Variant; 4] = [
        ("full", Box::new(|_| {})),
        (
            "no_analytic",
            Box::new(|c| c.ablation.disable_analytic = true),
        ),
        ("no_format", Box::new(|c| c.ablation.disable_format = true)),
        ("no_sft", Box::new(|c| c.ablation.skip_sft = true)),
    ];
    for (name, mutate) in variants {
        let mut config = base.clone();
        mutate(&mut config);
        let summary = run_pipeline(&config, out_root, &StageFlags::default())?;
        let eval = summary
            .eval
            .as_ref()
            .expect("eval stage enabled in ablation sweep");
        rows.push(AblationRow {
            variant: name.to_string(),
            config_hash: summary.config_hash.clone(),
            accuracy: eval.accuracy,
            mean_response_length: eval.mean_response_length,
        });
    }
    let summary = AblationSummary { rows };
    write_json(&out_root.join("ablation_summary.json"), &summary)?;
    Ok(summary)
}
