use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use adr_core::experiment::{run_and_report, ExperimentConfig, ExperimentError, EXIT_CONFIG, EXIT_IO};
use adr_core::ledger::{classify_layers, order_blocks, Block, DagLedger, DEFAULT_K_CONF, DEFAULT_MAX_PARENTS};
use adr_core::ranking::{node_rank, EndorsementGraph, DEFAULT_ITERATIONS};
use adr_core::NodeId;

#[derive(Parser)]
#[command(name = "adr", version, about = "ADR blockDAG consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Sweep points run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print the block order of a ledger given as JSON lines, one block per line.
    Order {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K_CONF)]
        k_conf: usize,
    },
    /// Print link ranks for an endorsement graph, one `from to` edge per line.
    Rank {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0.85)]
        factor: f64,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        iterations: usize,
    },
    /// Print a scenario's default config.
    Config {
        #[arg(long, default_value = "throughput-latency")]
        scenario: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, seed, out, jobs } => run(config, seed, out, jobs),
        Command::Order { ledger, k_conf } => report(order(ledger, k_conf)),
        Command::Rank { graph, factor, iterations } => report(rank(graph, factor, iterations)),
        Command::Config { scenario } => report(default_config(&scenario)),
    };
    ExitCode::from(code as u8)
}

fn report(res: anyhow::Result<()>) -> i32 {
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<std::io::Error>()) {
                EXIT_IO
            } else {
                EXIT_CONFIG
            }
        }
    }
}

fn run(config: PathBuf, seed: Option<u64>, out: PathBuf, jobs: usize) -> i32 {
    let text = match std::fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {}: {e}", config.display());
            return EXIT_IO;
        }
    };
    let res = ExperimentConfig::from_toml(&text).and_then(|mut c| {
        if let Some(s) = seed {
            c.seed = s;
        }
        run_and_report(&c, &out, jobs)
    });
    match res {
        Ok(code) => {
            if code != 0 {
                eprintln!("committee became non-operational in at least one run; see {}", out.display());
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let ExperimentError::Config(_) = e {
                eprintln!("run `adr config --scenario <name>` for a template");
            }
            e.exit_code()
        }
    }
}

fn order(path: PathBuf, k_conf: usize) -> anyhow::Result<()> {
    if k_conf == 0 {
        bail!("k-conf must be positive");
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut blocks = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let b: Block = serde_json::from_str(line).with_context(|| format!("line {}", n + 1))?;
        blocks.push(b);
    }
    let max_parents = blocks.iter().map(|b| b.parents().len()).max().unwrap_or(0).max(DEFAULT_MAX_PARENTS);
    let mut ledger = DagLedger::with_max_parents(max_parents);
    for b in blocks {
        let h = b.block_hash;
        ledger.insert_block(b).with_context(|| format!("block {h}"))?;
    }
    if ledger.pending_len() > 0 {
        bail!("{} blocks reference parents missing from the file", ledger.pending_len());
    }
    let layers = classify_layers(&ledger, k_conf);
    let order = order_blocks(&ledger, &layers)?;
    for h in &order.confirmed {
        println!("S {h}");
    }
    for h in &order.unconfirmed {
        println!("U {h}");
    }
    Ok(())
}

/// Nodes are named by label; a 64-digit hex label is taken as a raw id.
fn rank(path: PathBuf, factor: f64, iterations: usize) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut g = EndorsementGraph::new();
    let mut names: BTreeMap<NodeId, String> = BTreeMap::new();
    let mut id_of = |label: &str| {
        let id = NodeId::from_hex(label).unwrap_or_else(|_| NodeId::from_label(label));
        names.entry(id).or_insert_with(|| label.to_string());
        id
    };
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        match parts.as_slice() {
            [a] => g.add_node(id_of(a)),
            [a, b] => {
                let (a, b) = (id_of(a), id_of(b));
                g.endorse(a, b);
            }
            _ => bail!("line {}: expected `from to`", n + 1),
        }
    }
    let ranks = node_rank(&g, factor, iterations)?;
    let mut rows: Vec<(&String, f64)> = ranks.iter().map(|(id, r)| (&names[id], *r)).collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    for (name, r) in rows {
        println!("{name},{r:.12}");
    }
    Ok(())
}

fn default_config(scenario: &str) -> anyhow::Result<()> {
    let sc = serde_json::from_value(serde_json::Value::String(scenario.to_string()))
        .with_context(|| format!("unknown scenario `{scenario}`"))?;
    print!("{}", ExperimentConfig::for_scenario(sc).to_toml());
    Ok(())
}
