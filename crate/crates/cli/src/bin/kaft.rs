//! Command-line entry point for the KAFT dataset toolchain.
//!
//! Exit codes: 0 success, 2 bad configuration, 3 bad or missing data,
//! 4 generation endpoint unreachable.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kaft_cli::config::{Overrides, RunConfig, StageContext};
use kaft_cli::stages;
use kaft_core::corpus;
use kaft_core::error::{ErrorClass, KaftError};
use kaft_core::evalkit::{self, EvalOptions, Metric};
use kaft_core::resources;

#[derive(Parser)]
#[command(name = "kaft", version, about = "Build and evaluate knowledge-aware finetuning datasets")]
struct Cli {
    /// Run configuration (TOML). Stages fall back to built-in defaults
    /// without it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Working directory holding stage outputs and manifests.
    #[arg(long, global = true, default_value = "build/kaft")]
    workdir: PathBuf,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the generation endpoint (mock:<table.json> or http(s)://...).
    #[arg(long, global = true)]
    endpoint: Option<String>,

    /// Override the stopword list (builtin:v1 or a file path).
    #[arg(long, global = true)]
    stopwords: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a raw corpus and write the normalized file.
    Ingest {
        /// Input corpus (overrides the configured path).
        #[arg(long = "in")]
        input: Option<String>,
    },
    /// Probe the pretrained model closed-book over the normalized corpus.
    Probe {
        /// Probe spec file or builtin:<name>, applied to every format.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long = "in")]
        input: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Construct context slices for every dataset in the corpus.
    Slices {
        #[arg(long = "in")]
        input: Option<String>,
        /// Restrict to one dataset family.
        #[arg(long)]
        dataset: Option<String>,
        /// Restrict to one mode (relevant|irr-easy|irr-hard|two-hop|empty).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Generate counterfactual slices from the relevant slices.
    Counterfactual {
        #[arg(long = "in")]
        input: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assemble training records from slices and probe results.
    Assemble {
        /// kaft | noisy_ft | relevant_only | kaft_nocf | kaft_nocf_notqa
        #[arg(long)]
        mode: Option<String>,
    },
    /// Sample the training stream by mixture weights.
    Mix {
        /// Mixture spec (TOML) or builtin:table8.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Score a prediction file (or pipeline-generated predictions).
    Eval {
        /// controllability | robustness | em
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long = "ref")]
        references: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage in dependency order.
    Pipeline {
        /// Print the stage plan without touching anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Summarize manifests and eval reports of a working directory.
    Report,
}

fn exit_code_for(error: &KaftError) -> ExitCode {
    match error.class() {
        ErrorClass::Config => ExitCode::from(2),
        ErrorClass::Data | ErrorClass::Skip => ExitCode::from(3),
        ErrorClass::Endpoint => ExitCode::from(4),
    }
}

fn load_context(cli: &Cli) -> Result<StageContext, KaftError> {
    let config = match &cli.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    Ok(StageContext {
        config,
        config_path: cli.config.clone(),
        workdir: cli.workdir.clone(),
        overrides: Overrides {
            seed: cli.seed,
            endpoint: cli.endpoint.clone(),
            stopwords: cli.stopwords.clone(),
        },
    })
}

fn run(cli: Cli) -> Result<(), KaftError> {
    let mut ctx = load_context(&cli)?;
    std::fs::create_dir_all(&ctx.workdir).map_err(|source| KaftError::Io {
        path: ctx.workdir.clone(),
        source,
    })?;

    match cli.command {
        Command::Ingest { input } => {
            if let Some(input) = input {
                ctx.config.ingest.input = input;
                ctx.config_path = None;
            }
            report_outcome("ingest", stages::run_ingest(&ctx)?);
        }
        Command::Probe { spec, input, out } => {
            if let Some(spec) = spec {
                for tag in ["extractive", "open_domain", "cloze", "multiple_choice"] {
                    ctx.config.probe.specs.insert(tag.into(), spec.clone());
                }
            }
            standalone_normalize(&mut ctx, input)?;
            let outcome = stages::run_probe(&ctx)?;
            if let Some(out) = out {
                copy_out(&ctx.workdir.join("probe.jsonl"), &out)?;
            }
            report_outcome("probe", outcome);
        }
        Command::Slices { input, dataset, mode } => {
            // Dataset/mode restriction is a post-filter over the full build.
            standalone_normalize(&mut ctx, input)?;
            report_outcome("slices", stages::run_slices(&ctx)?);
            if dataset.is_some() || mode.is_some() {
                filter_slices(&ctx, dataset.as_deref(), mode.as_deref())?;
            }
        }
        Command::Counterfactual { input, out } => {
            if let Some(input) = input {
                copy_out(std::path::Path::new(&ctx.resolve(&input)), &ctx.workdir.join("slices.jsonl"))?;
            }
            let outcome = stages::run_counterfactual(&ctx)?;
            if let Some(out) = out {
                copy_out(&ctx.workdir.join("counterfactual.jsonl"), &out)?;
            }
            report_outcome("counterfactual", outcome);
        }
        Command::Assemble { mode } => {
            if let Some(mode) = mode {
                ctx.config.assemble.mode = mode;
            }
            report_outcome("assemble", stages::run_assemble(&ctx)?);
        }
        Command::Mix { spec, n } => {
            if let Some(spec) = spec {
                ctx.config.mix.spec = spec;
            }
            if let Some(n) = n {
                ctx.config.mix.n = n;
            }
            report_outcome("mix", stages::run_mix(&ctx)?);
        }
        Command::Eval { metric, pred, references, out } => {
            match (pred, references) {
                (Some(pred), Some(references)) => {
                    let metric = Metric::parse(&metric.unwrap_or_else(|| "controllability".into()))?;
                    let options = EvalOptions {
                        controllability_threshold: ctx.config.eval.controllability_threshold,
                        robustness_threshold: ctx.config.eval.robustness_threshold,
                        stopwords: resources::stopword_list(&ctx.stopwords_designator())?,
                    };
                    let report = evalkit::evaluate_files(&pred, &references, metric, &options)?;
                    let rendered = report.render_table();
                    if let Some(out) = out {
                        std::fs::write(&out, serde_json::to_string_pretty(&report).expect("report"))
                            .map_err(|source| KaftError::Io { path: out, source })?;
                    }
                    println!("{rendered}");
                }
                (None, None) => {
                    if let Some(metric) = metric {
                        ctx.config.eval.metrics = vec![metric];
                    }
                    report_outcome("eval", stages::run_eval(&ctx)?);
                }
                _ => {
                    return Err(KaftError::Config(
                        "--pred and --ref must be given together".into(),
                    ))
                }
            }
        }
        Command::Pipeline { dry_run } => {
            if dry_run {
                for (stage, status) in stages::dry_run_plan(&ctx) {
                    println!("{stage:<16} {status}");
                }
            } else {
                for (stage, status) in stages::run_pipeline(&ctx)? {
                    println!("{stage:<16} {status}");
                }
            }
        }
        Command::Report => {
            println!("{}", stages::render_report(&ctx.workdir)?);
        }
    }
    Ok(())
}

fn report_outcome(stage: &str, outcome: stages::StageOutcome) {
    println!("{stage:<16} {}", outcome.describe());
}

fn copy_out(from: &std::path::Path, to: &std::path::Path) -> Result<(), KaftError> {
    if let Some(parent) = to.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| KaftError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    std::fs::copy(from, to)
        .map(|_| ())
        .map_err(|source| KaftError::Io { path: from.to_path_buf(), source })
}

/// Standalone stage invocations may point `--in` at a raw corpus; ingest it
/// into the workdir first so the stage finds its conventional input.
fn standalone_normalize(ctx: &mut StageContext, input: Option<String>) -> Result<(), KaftError> {
    if let Some(input) = input {
        ctx.config.ingest.input = input;
        ctx.config_path = None;
        stages::run_ingest(ctx)?;
    }
    Ok(())
}

fn filter_slices(ctx: &StageContext, dataset: Option<&str>, mode: Option<&str>) -> Result<(), KaftError> {
    use kaft_core::corpus::SliceKind;
    let kind = mode
        .map(|m| match m {
            "relevant" => Ok(vec![SliceKind::Relevant]),
            "irr-easy" => Ok(vec![SliceKind::IrrelevantEasy]),
            "irr-hard" => Ok(vec![SliceKind::IrrelevantHard]),
            "two-hop" => Ok(vec![SliceKind::TwoHop]),
            "empty" => Ok(vec![SliceKind::Empty]),
            other => Err(KaftError::Config(format!("unknown slice mode `{other}`"))),
        })
        .transpose()?;
    let dataset = dataset.map(corpus::Dataset::parse).transpose()?;
    let all: Vec<corpus::SliceRecord> = corpus::load_jsonl(&ctx.workdir.join("slices.jsonl"))?;
    let filtered: Vec<corpus::SliceRecord> = all
        .into_iter()
        .filter(|r| dataset.is_none_or(|d| r.example.dataset == d))
        .filter(|r| kind.as_ref().is_none_or(|ks| ks.contains(&r.slice_kind)))
        .collect();
    corpus::dump_jsonl(&filtered, &ctx.workdir.join("slices_filtered.jsonl"))?;
    println!(
        "slices_filtered.jsonl: {} records ({} dataset filter, {} mode filter)",
        filtered.len(),
        dataset.map(|d| d.as_str()).unwrap_or("no"),
        kind.map(|ks| ks[0].as_str()).unwrap_or("no"),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            exit_code_for(&error)
        }
    }
}
