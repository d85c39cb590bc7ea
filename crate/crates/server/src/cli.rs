//! Command-line interface. Every command runs in-process against the
//! platform built from the environment, so nothing needs a running server.

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;
use xaistore::config::PlatformConfig;
use xaistore::explain::{ExplanationResult, LimeParams};
use xaistore::faithfulness::{self, FaithfulnessReport, GroundTruthPack};
use xaistore::platform::{ErrorKind, Platform, PlatformError, DEFAULT_COMPARE_K};
use xaistore::rag::{ChatResponse, Strategy};

#[derive(Debug, Parser)]
#[command(name = "xaistore", version, about = "Persistent, searchable explanations for text classifiers")]
pub struct Cli {
    /// User namespace for all artifacts.
    #[arg(long, global = true, env = "XAI_USER", default_value = "default")]
    pub user: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Occlusion,
    Lime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Naive,
    Constrained,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Naive => Strategy::Naive,
            StrategyArg::Constrained => Strategy::Constrained,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalStrategyArg {
    Naive,
    Constrained,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start the HTTP service.
    Serve {
        #[arg(long, env = "XAI_LISTEN", default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
    /// Upload a CSV of headlines and print its dataset id.
    Ingest { file: PathBuf },
    /// Print class distribution, keywords and per-asset counts.
    Stats { dataset_id: String },
    /// Explain one row and store the result.
    Explain {
        dataset_id: String,
        row_id: String,
        #[arg(long, value_enum, default_value = "occlusion")]
        method: MethodArg,
        /// Number of LIME features.
        #[arg(long)]
        k: Option<usize>,
        /// Number of LIME perturbations.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Target class for occlusion (defaults to the predicted label).
        #[arg(long)]
        target: Option<String>,
    },
    /// Compare the latest occlusion and LIME results for a sample.
    Compare {
        sample_id: String,
        #[arg(long, default_value_t = DEFAULT_COMPARE_K)]
        k: usize,
    },
    /// Ask questions about stored explanations. Reads one question per line
    /// from stdin unless `--question` is given.
    Chat {
        #[arg(long, value_enum, default_value = "constrained")]
        strategy: StrategyArg,
        #[arg(long)]
        question: Option<String>,
    },
    /// Run the faithfulness suite and print the metric table.
    Eval {
        /// JSON Lines suite; defaults to the bundled 30-query suite.
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        strategy: EvalStrategyArg,
        /// Ground-truth pack; defaults to values derived from stored artifacts.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Store each report as an artifact.
        #[arg(long)]
        persist: bool,
    },
    /// Rebuild the search index from stored metadata and print the count.
    Rehydrate,
    /// List or fetch artifact records.
    Artifacts {
        #[command(subcommand)]
        action: ArtifactsAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ArtifactsAction {
    Ls,
    Get { id: String },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 0 success, 1 usage or input error, 2 backend unavailable.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Platform(e) => match e.kind() {
                ErrorKind::Unavailable | ErrorKind::Generator | ErrorKind::Upstream => 2,
                _ => 1,
            },
            CliError::Io(_) | CliError::Usage(_) => 1,
        }
    }
}

fn read_file(path: &PathBuf) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

pub fn build_platform() -> Result<Platform, CliError> {
    Ok(PlatformConfig::from_env()?.build()?)
}

pub fn attribution_table(result: &ExplanationResult) -> String {
    let width = result.attributions.iter().map(|a| a.token.chars().count()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "sample {}  method {}  model {}  target {}  baseline {:.6}\n",
        result.sample_id,
        result.method.as_str(),
        result.model_id,
        result.target_class,
        result.baseline_confidence
    );
    out.push_str(&format!("{:>4}  {:<width$}  {:>8}  {:>11}\n", "rank", "token", "position", "importance"));
    for (i, a) in result.attributions.iter().enumerate() {
        out.push_str(&format!("{:>4}  {:<width$}  {:>8}  {:>+11.6}\n", i + 1, a.token, a.position, a.importance));
    }
    out
}

/// Metrics as rows, strategies as columns.
pub fn report_table(reports: &[FaithfulnessReport]) -> String {
    let mut out = format!("{:<26}", "Metric");
    for r in reports {
        out.push_str(&format!("{:>13}", r.strategy.to_string()));
    }
    out.push('\n');
    type Metric = fn(&FaithfulnessReport) -> f64;
    let rows: [(&str, Metric); 3] = [
        ("Hallucination rate", |r| r.hallucination_rate),
        ("Citations per response", |r| r.citations_per_response),
        ("Grounding completeness", |r| r.grounding_completeness),
    ];
    for (name, f) in rows {
        out.push_str(&format!("{name:<26}"));
        for r in reports {
            out.push_str(&format!("{:>13.2}", f(r)));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<26}", "Queries"));
    for r in reports {
        out.push_str(&format!("{:>13}", r.n_queries));
    }
    out.push('\n');
    for r in reports.iter().filter(|r| !r.complete) {
        out.push_str(&format!(
            "warning: {} run stopped early: {}\n",
            r.strategy,
            r.abort_reason.as_deref().unwrap_or("unknown")
        ));
    }
    out
}

fn print_chat(out: &mut impl Write, resp: &ChatResponse) -> std::io::Result<()> {
    writeln!(out, "{}", resp.text)?;
    if resp.cited_artifact_ids.is_empty() {
        writeln!(out, "cited: none")
    } else {
        writeln!(out, "cited: {}", resp.cited_artifact_ids.join(", "))
    }
}

/// Runs a parsed command, writing results to `out`.
pub fn run(cli: Cli, out: &mut impl Write) -> Result<(), CliError> {
    let user = cli.user.as_str();
    match cli.command {
        Command::Serve { listen } => {
            let platform = Arc::new(build_platform()?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(listen).await?;
                writeln!(out, "listening on http://{}", listener.local_addr()?)?;
                out.flush()?;
                crate::serve(listener, platform).await
            })?;
        }
        Command::Ingest { file } => {
            let raw = read_file(&file)?;
            let outcome = build_platform()?.ingest_csv(user, &raw)?;
            eprintln!("{} rows, summary artifact {}", outcome.n_rows, outcome.summary_artifact_id);
            writeln!(out, "{}", outcome.dataset_id)?;
        }
        Command::Stats { dataset_id } => {
            let stats = build_platform()?.dataset_stats(user, &dataset_id)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&stats).expect("serializable"))?;
        }
        Command::Explain { dataset_id, row_id, method, k, samples, seed, target } => {
            let platform = build_platform()?;
            let outcome = match method {
                MethodArg::Occlusion => {
                    if k.is_some() || samples.is_some() || seed.is_some() {
                        return Err(CliError::Usage("--k, --samples and --seed apply to LIME only".into()));
                    }
                    platform.explain_occlusion(user, &dataset_id, &row_id, target.as_deref())?
                }
                MethodArg::Lime => {
                    if target.is_some() {
                        return Err(CliError::Usage("--target applies to occlusion only".into()));
                    }
                    let d = LimeParams::default();
                    let params = LimeParams {
                        k: k.unwrap_or(d.k),
                        n_samples: samples.unwrap_or(d.n_samples),
                        seed: seed.unwrap_or(d.seed),
                        ..d
                    };
                    platform.explain_lime(user, &dataset_id, &row_id, &params)?
                }
            };
            eprintln!("stored artifact {}", outcome.artifact_id);
            write!(out, "{}", attribution_table(&outcome.result))?;
        }
        Command::Compare { sample_id, k } => {
            let report = build_platform()?.compare(user, &sample_id, k)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("serializable"))?;
        }
        Command::Chat { strategy, question } => {
            let platform = build_platform()?;
            let strategy = Strategy::from(strategy);
            match question {
                Some(q) => print_chat(out, &platform.chat(user, &q, strategy, None)?)?,
                None => {
                    let stdin = std::io::stdin();
                    for line in stdin.lock().lines() {
                        let line = line?;
                        let q = line.trim();
                        if q.is_empty() {
                            continue;
                        }
                        if q == "exit" || q == "quit" {
                            break;
                        }
                        print_chat(out, &platform.chat(user, q, strategy, None)?)?;
                        writeln!(out)?;
                        out.flush()?;
                    }
                }
            }
        }
        Command::Eval { suite, strategy, ground_truth, persist } => {
            let queries = match &suite {
                Some(path) => {
                    let raw = String::from_utf8(read_file(path)?)
                        .map_err(|_| CliError::Usage(format!("{} is not UTF-8", path.display())))?;
                    faithfulness::parse_suite(&raw).map_err(PlatformError::from)?
                }
                None => faithfulness::default_suite(),
            };
            let truth = match &ground_truth {
                Some(path) => Some(GroundTruthPack::from_json(&read_file(path)?).map_err(PlatformError::from)?),
                None => None,
            };
            let strategies = match strategy {
                EvalStrategyArg::Naive => vec![Strategy::Naive],
                EvalStrategyArg::Constrained => vec![Strategy::Constrained],
                EvalStrategyArg::Both => vec![Strategy::Naive, Strategy::Constrained],
            };
            let platform = build_platform()?;
            let mut reports = Vec::new();
            for s in strategies {
                reports.push(platform.run_eval(user, &queries, s, truth.as_ref())?);
            }
            if persist {
                for r in &reports {
                    eprintln!("stored report {}", platform.persist_report(user, r)?);
                }
            }
            write!(out, "{}", report_table(&reports))?;
        }
        Command::Rehydrate => {
            writeln!(out, "{}", build_platform()?.rehydrate(user)?)?;
        }
        Command::Artifacts { action } => {
            let platform = build_platform()?;
            match action {
                ArtifactsAction::Ls => {
                    for r in platform.list_artifacts(user)? {
                        writeln!(out, "{}  {:<20}  {}", r.artifact_id, r.plot_type, r.title)?;
                    }
                }
                ArtifactsAction::Get { id } => {
                    let record = platform.get_artifact(user, &id)?;
                    writeln!(out, "{}", serde_json::to_string_pretty(&record).expect("serializable"))?;
                }
            }
        }
    }
    Ok(())
}
