use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use planrl_cli::pipeline::{
    run_ablation_sweep, run_pipeline, stage_eval, stage_gen_data, stage_rl, stage_theory, RunPaths,
    StageFlags,
};
use planrl_cli::plots::emit_plots;
use planrl_core::config::{ExperimentConfig, TaskMixConfig};
use planrl_core::{PolicyTable, Vocab};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "planrl",
    version,
    about = "Plan-conditioned tabular-policy RL lab on synthetic arithmetic tasks"
)]
struct Cli {
    /// Experiment config file (.toml or .json). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output root directory for run artifacts.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the staged pipeline: gen-data, sft, rl, eval, theory-check.
    Run {
        /// Comma-separated subset of stages to execute.
        #[arg(long)]
        stages: Option<String>,
    },
    /// Build the oracle-labelled cold-start dataset.
    GenData {
        /// Number of records (overrides sft.dataset_size).
        #[arg(long)]
        n: Option<usize>,
        /// Difficulty mix as `2:0.5,3:0.5`.
        #[arg(long)]
        difficulty_mix: Option<String>,
    },
    /// Supervised cold start on the generated dataset.
    Sft,
    /// Group-relative policy optimization from the cold-start checkpoint.
    Rl,
    /// Evaluate a checkpoint on held-out tasks.
    Eval {
        /// Checkpoint path; defaults to the run's RL then SFT checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Information-theoretic error-bound check over a trace JSONL file.
    TheoryCheck {
        /// Trace file; defaults to the run's eval traces.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Report path; defaults into the run directory.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Ablation sweep: full, no-analytic, no-format, no-sft variants.
    Ablate,
    /// Emit plot series files and SVG charts from a metrics CSV.
    Plot {
        /// Metrics CSV; defaults to the run's metrics.csv.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Output directory; defaults to `<run>/plots`.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
    },
}

fn parse_mix(text: &str) -> Result<TaskMixConfig> {
    let mut mix = TaskMixConfig {
        d2: 0.0,
        d3: 0.0,
        d4: 0.0,
    };
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (d, w) = part
            .split_once(':')
            .with_context(|| format!("bad difficulty-mix entry `{part}`; use d:weight"))?;
        let weight: f64 = w
            .parse()
            .context("difficulty-mix weight must be a number")?;
        match d.trim() {
            "2" => mix.d2 = weight,
            "3" => mix.d3 = weight,
            "4" => mix.d4 = weight,
            other => bail!("unsupported difficulty `{other}` (expected 2, 3, or 4)"),
        }
    }
    Ok(mix)
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = load_config(&cli)?;
    let out_root = cli.out.clone();

    match cli.command {
        Command::Run { stages } => {
            let flags = match stages {
                Some(list) => StageFlags::from_list(&list)?,
                None => StageFlags::default(),
            };
            let summary = run_pipeline(&config, &out_root, &flags)?;
            println!("run directory: {}", summary.dir.display());
            if let Some(eval) = &summary.eval {
                println!("final accuracy: {:.4}", eval.accuracy);
                for (k, v) in &eval.pass_at_k {
                    println!("pass@{k}: {v:.4}");
                }
            }
            if let Some(theory) = &summary.theory {
                println!(
                    "error bound: p_error {:.4} <= {:.4} (holds: {})",
                    theory.p_error,
                    theory.bound + theory.slack,
                    theory.holds
                );
            }
        }
        Command::GenData { n, difficulty_mix } => {
            if let Some(n) = n {
                config.sft.dataset_size = n;
            }
            if let Some(mix) = difficulty_mix {
                config.task_mix = parse_mix(&mix)?;
            }
            config.validate()?;
            let paths = prepare_run_dir(&config, &out_root)?;
            let records = stage_gen_data(&config, &paths)?;
            println!(
                "wrote {} records to {}",
                records.len(),
                paths.dataset_jsonl().display()
            );
        }
        Command::Sft => {
            let paths = prepare_run_dir(&config, &out_root)?;
            if !paths.dataset_jsonl().exists() {
                bail!(
                    "no dataset at {}; run `planrl gen-data` first",
                    paths.dataset_jsonl().display()
                );
            }
            let summary = run_pipeline(&config, &out_root, &StageFlags::from_list("sft").unwrap())?;
            if let Some(trace) = &summary.sft_trace {
                println!(
                    "sft done: {} epochs, final mean loss {:.6}",
                    trace.epoch_losses.len(),
                    trace.epoch_losses.last().copied().unwrap_or(f64::NAN)
                );
            }
            println!("checkpoint: {}", paths.policy_sft().display());
        }
        Command::Rl => {
            let paths = prepare_run_dir(&config, &out_root)?;
            let vocab = Vocab::standard();
            let mut policy = if config.ablation.skip_sft {
                PolicyTable::for_vocab(
                    &vocab,
                    config.policy.context_order,
                    config.policy.temperature,
                )?
            } else if paths.policy_sft().exists() {
                PolicyTable::load(&paths.policy_sft(), &vocab.manifest_hash())?
            } else {
                bail!(
                    "no cold-start checkpoint at {}; run `planrl sft` first (or set ablation.skip_sft)",
                    paths.policy_sft().display()
                );
            };
            let metrics = stage_rl(&config, &paths, &mut policy)?;
            println!(
                "rl done: {} steps, final mean reward {:.4}",
                metrics.len(),
                metrics.last().map(|m| m.mean_total_reward).unwrap_or(0.0)
            );
            println!("metrics: {}", paths.metrics_csv().display());
        }
        Command::Eval { checkpoint } => {
            let paths = prepare_run_dir(&config, &out_root)?;
            let vocab = Vocab::standard();
            let policy = match checkpoint {
                Some(path) => PolicyTable::load(&path, &vocab.manifest_hash())?,
                None => {
                    if paths.policy_rl().exists() {
                        PolicyTable::load(&paths.policy_rl(), &vocab.manifest_hash())?
                    } else if paths.policy_sft().exists() {
                        PolicyTable::load(&paths.policy_sft(), &vocab.manifest_hash())?
                    } else {
                        PolicyTable::for_vocab(
                            &vocab,
                            config.policy.context_order,
                            config.policy.temperature,
                        )?
                    }
                }
            };
            let report = stage_eval(
                &config,
                &policy,
                &paths.eval_report_json(),
                Some(&paths.eval_traces_jsonl()),
            )?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::TheoryCheck { traces, report } => {
            let paths = prepare_run_dir(&config, &out_root)?;
            let traces = traces.unwrap_or_else(|| paths.eval_traces_jsonl());
            let report_path = report.unwrap_or_else(|| paths.theory_report_json());
            let fano = stage_theory(&traces, &report_path)?;
            println!("{}", serde_json::to_string_pretty(&fano)?);
        }
        Command::Ablate => {
            let summary = run_ablation_sweep(&config, &out_root)?;
            println!("{:<12} {:>10} {:>14}", "variant", "accuracy", "mean length");
            for row in &summary.rows {
                println!(
                    "{:<12} {:>10.4} {:>14.2}",
                    row.variant, row.accuracy, row.mean_response_length
                );
            }
        }
        Command::Plot { metrics, plot_dir } => {
            let paths = prepare_run_dir(&config, &out_root)?;
            let metrics = metrics.unwrap_or_else(|| paths.metrics_csv());
            let plot_dir = plot_dir.unwrap_or_else(|| paths.dir.join("plots"));
            let written = emit_plots(&metrics, &plot_dir)?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn prepare_run_dir(config: &ExperimentConfig, out_root: &std::path::Path) -> Result<RunPaths> {
    config.validate()?;
    let paths = RunPaths::for_config(out_root, config);
    std::fs::create_dir_all(&paths.dir)?;
    Ok(paths)
}
