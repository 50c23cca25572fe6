//! Batch runner and reporting CLI.
//!
//! Subcommands: `run` (one seeded case as JSON), `batch` (seeded batch with
//! CSV/JSON aggregates), `sweep` (the default experiment grid with
//! cross-variant comparison), `export-topology` (edge list + size summary),
//! and `census` (propagation-route lower bounds).
//!
//! The `SISSLE_WORKERS` environment variable overrides the worker count.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unlsim::analysis::{
    self, apply_severity, compare, default_sweep_cells, emit_case_records, emit_csv, run_batch,
    run_batch_with_cases, severity_preset, BatchRun, Severity,
};
use unlsim::netsim::{run_case, Mode, ScenarioConfig};
use unlsim::overlay::{build_topology, export_edge_list, path_census, size_summary, Variant};

#[derive(Parser)]
#[command(name = "unlsim", version, about = "UNL overlay and consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded case and print its result as JSON.
    Run(RunArgs),
    /// Run a seeded batch and print aggregate statistics.
    Batch(BatchArgs),
    /// Run the default sweep for a mode across all three variants.
    Sweep(SweepArgs),
    /// Export a generated topology as an edge list plus a JSON size summary.
    ExportTopology(ExportArgs),
    /// Print the propagation-route lower bounds for the overlay parameters.
    Census(CensusArgs),
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// SimC, SimRM or SimK.
    #[arg(long, default_value = "simk")]
    variant: Variant,
    /// Simulation mode: 1-6 or 8.
    #[arg(long, default_value_t = 2)]
    mode: u8,
    #[arg(long, default_value_t = 256)]
    num_nodes: usize,
    /// UNL-B slots per foreign affinity group.
    #[arg(long, default_value_t = 2)]
    c: usize,
    /// NML-B multiplier.
    #[arg(long, default_value_t = 2)]
    b: usize,
    /// Retry limit for pulls and trust tokens.
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 0.0)]
    percentage_malicious: f64,
    #[arg(long, default_value_t = 100.0)]
    network_consensus_percent: f64,
    /// Outbound links per node over N (SimC); accepts "10/256" or a float.
    #[arg(long, default_value = "10/256", value_parser = parse_ratio)]
    outbound_links_to_node_ratio: f64,
    #[arg(long, default_value_t = 0.0)]
    min_latency_factor_ni: f64,
    #[arg(long, default_value_t = 0.0)]
    max_latency_factor_ni: f64,
    #[arg(long, default_value_t = 0.0)]
    percent_nodes_ni: f64,
    #[arg(long, default_value_t = 0.0)]
    percent_links_ni: f64,
    #[arg(long, default_value_t = 0.0)]
    percentage_eclipsed: f64,
    /// Severity preset applied on top of the explicit flags.
    #[arg(long)]
    severity: Option<Severity>,
    /// Deterministic latency multiplier for same-group links.
    #[arg(long, default_value_t = 1.0)]
    unla_llf_max: f64,
    /// Deterministic latency multiplier for cross-group links.
    #[arg(long, default_value_t = 1.0)]
    unlb_llf_max: f64,
    /// Exclusive cap on total malicious nodes (mode 8). "auto" means
    /// (c+1)(√N−1).
    #[arg(long, value_parser = parse_upper_limit)]
    upper_limit_malicious: Option<UpperLimit>,
}

#[derive(Clone, Copy, Debug)]
enum UpperLimit {
    Auto,
    Fixed(usize),
}

fn parse_upper_limit(s: &str) -> Result<UpperLimit, String> {
    if s.eq_ignore_ascii_case("auto") {
        Ok(UpperLimit::Auto)
    } else {
        s.parse::<usize>().map(UpperLimit::Fixed).map_err(|e| e.to_string())
    }
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    if let Some((num, den)) = s.split_once('/') {
        let num: f64 = num.trim().parse().map_err(|e| format!("{e}"))?;
        let den: f64 = den.trim().parse().map_err(|e| format!("{e}"))?;
        if den == 0.0 {
            return Err("zero denominator".into());
        }
        Ok(num / den)
    } else {
        s.parse::<f64>().map_err(|e| format!("{e}"))
    }
}

impl ScenarioArgs {
    fn to_config(&self) -> Result<ScenarioConfig> {
        let mode = Mode::from_number(self.mode)?;
        let mut config = ScenarioConfig {
            variant: self.variant,
            mode,
            num_nodes: self.num_nodes,
            c: self.c,
            b: self.b,
            d: self.d,
            percentage_malicious: self.percentage_malicious,
            network_consensus_percent: self.network_consensus_percent,
            outbound_links_to_node_ratio: self.outbound_links_to_node_ratio,
            min_latency_factor_ni: self.min_latency_factor_ni,
            max_latency_factor_ni: self.max_latency_factor_ni,
            percent_nodes_affected_by_ni: self.percent_nodes_ni,
            percent_links_affected_by_ni: self.percent_links_ni,
            percentage_eclipsed: self.percentage_eclipsed,
            ..ScenarioConfig::default()
        };
        if let Some(severity) = self.severity {
            apply_severity(&mut config, &severity_preset(severity), false);
        }
        config.latency.unla_llf_max = self.unla_llf_max;
        config.latency.unlb_llf_max = self.unlb_llf_max;
        match self.upper_limit_malicious {
            Some(UpperLimit::Auto) => {
                config.is_upper_limit_malicious_applicable = true;
                config.upper_limit_malicious = None;
            }
            Some(UpperLimit::Fixed(v)) => {
                config.is_upper_limit_malicious_applicable = true;
                config.upper_limit_malicious = Some(v);
            }
            None => {}
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cases to run; defaults to 1500 for odd modes, 5000 for even.
    #[arg(long)]
    seed_max: Option<u64>,
    /// csv, json or jsonl (one case record per line).
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Simulation mode: 1-6 or 8.
    #[arg(long, default_value_t = 2)]
    mode: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cases per cell; defaults to the mode default.
    #[arg(long)]
    seed_max: Option<u64>,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Edge-list output path; the size summary lands next to it as
    /// `<path>.summary.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CensusArgs {
    #[arg(long, default_value_t = 256)]
    num_nodes: usize,
    #[arg(long, default_value_t = 2)]
    c: usize,
}

fn write_or_print(out: Option<&PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

fn init_workers() {
    if let Ok(value) = std::env::var("SISSLE_WORKERS") {
        if let Ok(workers) = value.parse::<usize>() {
            if workers >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
            }
        }
    }
}

fn main() -> Result<()> {
    init_workers();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let config = args.scenario.to_config()?;
            let result = run_case(&config, args.seed)?;
            let mut record = serde_json::to_value(&result)?;
            record["seed"] = args.seed.into();
            record["config_hash"] = config.config_hash().into();
            write_or_print(args.out.as_ref(), &format!("{}\n", serde_json::to_string_pretty(&record)?))
        }
        Command::Batch(args) => {
            let mut config = args.scenario.to_config()?;
            config.seed_max = args.seed_max;
            match args.format.as_str() {
                "csv" => {
                    let stats = run_batch(&config, args.seed)?;
                    write_or_print(args.out.as_ref(), &emit_csv(&[&stats]))
                }
                "json" => {
                    let stats = run_batch(&config, args.seed)?;
                    write_or_print(args.out.as_ref(), &format!("{}\n", serde_json::to_string_pretty(&stats)?))
                }
                "jsonl" => {
                    let (_, cases) = run_batch_with_cases(&config, args.seed, true)?;
                    write_or_print(args.out.as_ref(), &emit_case_records(&config, args.seed, &cases))
                }
                other => bail!("unknown format '{other}' (csv, json, jsonl)"),
            }
        }
        Command::Sweep(args) => {
            let mode = Mode::from_number(args.mode)?;
            let mut runs: Vec<BatchRun> = Vec::new();
            for (label, mut config) in default_sweep_cells(mode) {
                config.seed_max = args.seed_max;
                let run = analysis::run_labelled(label.clone(), config, args.seed)?;
                eprintln!(
                    "{label}: psc={:.2} avg_time={:?}",
                    run.stats.psc, run.stats.avg_time
                );
                runs.push(run);
            }
            // Pair each SimK cell with its SimC reference.
            let mut comparisons = Vec::new();
            for subject in runs.iter().filter(|r| r.config.variant == Variant::SimK) {
                if let Some(reference) = runs.iter().find(|r| {
                    r.config.variant == Variant::SimC
                        && r.label.replace("SimC", "SimK") == subject.label
                }) {
                    if let Ok(report) = compare(reference, subject) {
                        comparisons.push(report);
                    }
                }
            }
            match args.format.as_str() {
                "csv" => {
                    let mut out = String::from("label,");
                    out.push_str(analysis::CSV_HEADER);
                    out.push('\n');
                    for run in &runs {
                        out.push_str(&format!("{},{}\n", run.label, analysis::emit_csv_row(&run.stats)));
                    }
                    write_or_print(args.out.as_ref(), &out)
                }
                "json" => {
                    let value = serde_json::json!({ "batches": runs, "comparisons": comparisons });
                    write_or_print(args.out.as_ref(), &format!("{}\n", serde_json::to_string_pretty(&value)?))
                }
                other => bail!("unknown format '{other}' (csv, json)"),
            }
        }
        Command::ExportTopology(args) => {
            let config = args.scenario.to_config()?;
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let topology = build_topology(config.variant, &config.overlay_params(), &config.latency, &mut rng)?;
            let mut edges = Vec::new();
            export_edge_list(&topology, &mut edges)?;
            fs::write(&args.out, edges).with_context(|| format!("writing {}", args.out.display()))?;
            let summary_path = args.out.with_extension("summary.json");
            fs::write(&summary_path, serde_json::to_string_pretty(&size_summary(&topology))?)?;
            eprintln!("wrote {} and {}", args.out.display(), summary_path.display());
            Ok(())
        }
        Command::Census(args) => {
            let params = unlsim::overlay::OverlayParams {
                num_nodes: args.num_nodes,
                c: args.c,
                ..Default::default()
            };
            println!("hops same_group cross_group");
            for hops in 1..=3u8 {
                let census = path_census(&params, hops)?;
                println!("{} {} {}", census.hops, census.same_group_count, census.cross_group_count);
            }
            Ok(())
        }
    }
}
