use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use crystal_core::config::EngineConfig;
use crystal_core::extraction::{extract_corpus, parse_corpus, Agent, AgentProfile, CandidateChain, PromptRegistry, ReferenceResponder};
use crystal_core::io::{canonical_graph, load_graph, replay_audit, save_graph, to_canonical};
use crystal_core::merge::{merge_with, HashedTokens};
use crystal_core::rulebook::{graft_as, RuleSet};
use crystal_core::service::{http, Service};
use crystal_core::simulate::{self, Scenario};

#[derive(Parser)]
#[command(name = "crystal", version, about = "Build, check and serve reasoning-chain graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract candidate chains from a case corpus (JSON array of cases).
    Extract {
        corpus: PathBuf,
        /// Strategy id, or a path to an agent profile JSON file.
        #[arg(long, default_value = "default")]
        agent: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Merge candidate-chain files into one graph file.
    Merge {
        #[arg(required = true)]
        chains: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "merged")]
        graph_id: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Graft a rule set (JSON array of rules) into a graph.
    Graft {
        rules: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "rulebook")]
        graph_id: String,
    },
    /// Check a graph file's checksum and structure.
    Validate { graph: PathBuf },
    /// Serve the HTTP API. CRYSTAL_DATA_DIR, when set, overrides --data-dir.
    Serve {
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Rebuild a graph from its audit log and print it canonically.
    Replay {
        log: PathBuf,
        #[arg(long)]
        up_to: Option<u64>,
    },
    /// Run the turn-budget simulation and print accuracy per budget as CSV.
    Simulate {
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        turns: usize,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_agent(spec: &str) -> Result<Agent> {
    let profile = if Path::new(spec).is_file() {
        read_json::<AgentProfile>(Path::new(spec))?
    } else {
        AgentProfile::new("cli", spec)
    };
    Ok(Agent::new(profile, Arc::new(ReferenceResponder)))
}

/// A chains file holds one chain or an array of them.
fn load_chains(path: &Path) -> Result<Vec<CandidateChain>> {
    let value: serde_json::Value = read_json(path)?;
    Ok(if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Extract { corpus, agent, output } => {
            let text = fs::read_to_string(&corpus).with_context(|| format!("reading {}", corpus.display()))?;
            let cases = parse_corpus(&text).context("parsing corpus")?;
            let registry = PromptRegistry::default();
            let agent = load_agent(&agent)?;
            if !registry.contains(&agent.profile.strategy_id) {
                bail!("no prompt template for strategy `{}`", agent.profile.strategy_id);
            }
            let result = extract_corpus(&[agent], &registry, &cases)?;
            for failure in &result.failures {
                eprintln!("skipped {}: {}", failure.case_id, failure.error);
            }
            emit(&serde_json::to_string_pretty(&result.chains)?, output.as_deref())?;
        }
        Command::Merge {
            chains,
            output,
            graph_id,
            config,
        } => {
            let config = match config {
                Some(path) => read_json(&path)?,
                None => EngineConfig::default(),
            };
            let mut all = Vec::new();
            for path in &chains {
                all.extend(load_chains(path)?);
            }
            let (graph, report) = merge_with(&graph_id, &all, &config, &HashedTokens::new(config.embedding_dim))?;
            let checksum = save_graph(&graph, &config, &output)?;
            eprintln!(
                "merged {} chains into {} nodes, {} edges; removed {}; checksum {checksum}",
                all.len(),
                graph.nodes.len(),
                graph.edges.len(),
                report.removed_edges.len()
            );
            print!("{}", to_canonical(&report)?);
        }
        Command::Graft {
            rules,
            output,
            graph_id,
        } => {
            let text = fs::read_to_string(&rules).with_context(|| format!("reading {}", rules.display()))?;
            let ruleset = RuleSet::from_json(&text).context("parsing rules")?;
            let graph = graft_as(&graph_id, &ruleset)?;
            match output {
                Some(path) => {
                    let checksum = save_graph(&graph, &EngineConfig::default(), &path)?;
                    eprintln!("wrote {} ({checksum})", path.display());
                }
                None => print!("{}", canonical_graph(&graph)),
            }
        }
        Command::Validate { graph } => match load_graph(&graph) {
            Ok((g, _)) => println!("ok: {} nodes, {} edges, version {}", g.nodes.len(), g.edges.len(), g.version),
            Err(e) => {
                eprintln!("invalid: {e}");
                if let crystal_core::io::IoError::ValidationFailed(report) = &e {
                    for issue in &report.issues {
                        eprintln!("  {issue:?}");
                    }
                }
                return Ok(ExitCode::FAILURE);
            }
        },
        Command::Serve { data_dir, addr } => {
            let data_dir = std::env::var_os("CRYSTAL_DATA_DIR").map_or(data_dir, PathBuf::from);
            let service = Arc::new(Service::open(&data_dir)?);
            eprintln!("serving {} on http://{addr}", data_dir.display());
            tokio::runtime::Runtime::new()?.block_on(http::serve(service, addr))?;
        }
        Command::Replay { log, up_to } => {
            print!("{}", canonical_graph(&replay_audit(&log, up_to)?));
        }
        Command::Simulate { scenario, turns } => {
            let scenario: Scenario = match scenario {
                Some(path) => read_json(&path)?,
                None => Scenario::default(),
            };
            print!("{}", simulate::to_csv(&simulate::run(&scenario, turns)?));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
