use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use enharvest_core::config::{DeploymentConfig, GridConfig, NodeConfig};
use enharvest_core::deployment::{run_deployment, DeploymentReport, NodeTraces};
use enharvest_core::explorer::sweep;
use enharvest_core::sim::{run_node, Recording};
use enharvest_core::Trace;

/// Simulate battery-free light-harvesting sensor nodes.
#[derive(Debug, Parser)]
#[command(name = "enharvest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one node and write its event log and energy ledger.
    SimulateNode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        light_trace: PathBuf,
        #[arg(long)]
        events_trace: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        duration_s: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate every node of a deployment against a base station.
    ///
    /// Traces are looked up as `<trace-dir>/<node_id>.csv` (light) and
    /// `<trace-dir>/<node_id>.events.csv` (optional events).
    SimulateDeployment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace_dir: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        duration_s: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Keep only per-node summaries (no per-event CSV rows).
        #[arg(long)]
        summary_only: bool,
    },
    /// Sweep a design grid and write the frontier CSV.
    Explore {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a node, deployment or grid config file.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::SimulateNode {
            config,
            light_trace,
            events_trace,
            duration_s,
            seed,
            out,
        } => simulate_node(
            &config,
            &light_trace,
            events_trace.as_deref(),
            duration_s,
            seed,
            &out,
        ),
        Command::SimulateDeployment {
            config,
            trace_dir,
            duration_s,
            seed,
            out,
            summary_only,
        } => {
            let recording = if summary_only {
                Recording::SummaryOnly
            } else {
                Recording::Full
            };
            simulate_deployment(&config, &trace_dir, duration_s, seed, &out, recording)
        }
        Command::Explore { config, out } => explore(&config, &out),
        Command::ValidateConfig { config } => validate_config(&config),
    }
}

fn check_duration(duration_s: f64) -> Result<()> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        bail!("--duration-s must be positive, got {duration_s}");
    }
    Ok(())
}

fn load_trace(path: &Path) -> Result<Trace> {
    Trace::from_path(path).with_context(|| format!("invalid trace {}", path.display()))
}

fn simulate_node(
    config: &Path,
    light: &Path,
    events: Option<&Path>,
    duration_s: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    check_duration(duration_s)?;
    let cfg = NodeConfig::load(config)?;
    let light = load_trace(light)?;
    let events = events.map(load_trace).transpose()?.unwrap_or_default();
    let log = run_node(&cfg, &light, &events, duration_s, seed)?;

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let csv_path = out.join(format!("{}.csv", cfg.node_id));
    let file =
        File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    log.write_csv(BufWriter::new(file))?;
    let json_path = out.join(format!("{}.ledger.json", cfg.node_id));
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&log.ledger_json())? + "\n",
    )?;

    let s = &log.summary;
    println!(
        "{}: {} steps, {} packets, uptime {:.4}, final {:.3} V -> {}",
        cfg.node_id,
        s.controller_steps,
        s.packets_emitted,
        s.uptime_fraction(),
        s.final_voltage_v,
        out.display()
    );
    Ok(())
}

fn simulate_deployment(
    config: &Path,
    trace_dir: &Path,
    duration_s: f64,
    seed: u64,
    out: &Path,
    recording: Recording,
) -> Result<()> {
    check_duration(duration_s)?;
    let cfg = DeploymentConfig::load(config)?;
    let mut traces = BTreeMap::new();
    for node in &cfg.nodes {
        let light_path = trace_dir.join(format!("{}.csv", node.node_id));
        if !light_path.is_file() {
            bail!(
                "node `{}` has no light trace (expected {})",
                node.node_id,
                light_path.display()
            );
        }
        let events_path = trace_dir.join(format!("{}.events.csv", node.node_id));
        let events = if events_path.is_file() {
            load_trace(&events_path)?
        } else {
            Trace::empty()
        };
        traces.insert(
            node.node_id.clone(),
            NodeTraces {
                light: load_trace(&light_path)?,
                events,
            },
        );
    }
    let report = run_deployment(&cfg, &traces, duration_s, seed, recording)?;
    report
        .write_to_dir(out)
        .with_context(|| format!("writing report to {}", out.display()))?;
    write_base_station(&report, &out.join("base_station.csv"))?;

    let agg = &report.metrics.aggregate;
    println!(
        "{} nodes: uptime {:.4}, {} of {} packets delivered -> {}",
        agg.nodes,
        agg.uptime_fraction,
        agg.packets_delivered,
        agg.packets_emitted,
        out.display()
    );
    Ok(())
}

/// Packets as received by the base station, in arrival order.
fn write_base_station(report: &DeploymentReport, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    writeln_row(
        &mut w,
        &[
            "time_s",
            "node_id",
            "qos_state",
            "voltage_v",
            "lux",
            "temperature_c",
            "humidity_pct",
        ],
    )?;
    for p in report.received_packets() {
        writeln_row(
            &mut w,
            &[
                &p.timestamp.to_string(),
                &p.node_id,
                &p.qos_state.to_string(),
                &p.voltage.to_string(),
                &p.readings.lux.to_string(),
                &p.readings.temperature_c.to_string(),
                &format!("{:.2}", p.readings.humidity_pct),
            ],
        )?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn writeln_row(w: &mut impl std::io::Write, fields: &[&str]) -> Result<()> {
    writeln!(w, "{}", fields.join(","))?;
    Ok(())
}

fn explore(config: &Path, out: &Path) -> Result<()> {
    let grid = GridConfig::load(config)?;
    let frontier = sweep(&grid);
    frontier.write_csv(csv_writer(out)?)?;
    if !frontier.lux_rows.is_empty() {
        let lux_path = out.with_file_name(format!(
            "{}_lux.csv",
            out.file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("frontier")
        ));
        frontier.write_lux_csv(csv_writer(&lux_path)?)?;
    }
    println!("{} frontier rows -> {}", frontier.rows.len(), out.display());
    Ok(())
}

/// Guesses the file kind from its top-level keys.
fn validate_config(path: &Path) -> Result<()> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: toml::Table =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let origin = path.display().to_string();
    let kind = if doc.contains_key("nodes") || doc.contains_key("node_defaults") {
        DeploymentConfig::from_toml_str(&text, &origin)
            .map(|c| format!("deployment with {} nodes", c.nodes.len()))
    } else if ["capacitances_f", "qos_states", "lux", "v_start_v", "node"]
        .iter()
        .any(|k| doc.contains_key(*k))
    {
        GridConfig::from_toml_str(&text, &origin).map(|g| {
            format!(
                "grid with {} points",
                g.capacitances.len() * g.qos_states.len()
            )
        })
    } else {
        NodeConfig::from_toml_str(&text, &origin).map(|n| format!("node `{}`", n.node_id))
    }?;
    println!("{}: ok ({kind})", path.display());
    Ok(())
}
