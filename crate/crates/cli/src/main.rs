use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spothedge::cluster::write_event_log;
use spothedge::config::Config;
use spothedge::experiment::{analyze_csv, run_analyze, run_optimize, run_sweep, Experiment, RunOutput};
use spothedge::metrics::{export_reports, outcomes_csv, reports_csv, sweep_csv, write_file, SimReport};
use spothedge::policy::PolicyKind;
use spothedge::trace::GeneratorConfig;
use spothedge::{Error, Result};

#[derive(Parser)]
#[command(name = "spothedge", version, about = "Spot/on-demand replica placement simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, env = "SPOTHEDGE_OUT")]
    out: Option<PathBuf>,
    /// Overrides `policy.name`.
    #[arg(long, global = true)]
    policy: Option<String>,
    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy over one trace.
    Simulate,
    /// Run every (policy, seed) pair and write a comparison table.
    Sweep {
        /// Comma-separated policy names; defaults to all.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Solve the offline cost optimum for the configured trace.
    Optimize {
        /// Event log (JSON lines) of a run to score on the same instance.
        #[arg(long)]
        event_log: Option<PathBuf>,
    },
    /// Compare closed-form and simulated preemption counts.
    Analyze {
        #[arg(long, default_value_t = 6)]
        replicas: u32,
        /// Per-zone preemption rates per tick, comma-separated.
        #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.1, 0.1])]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 100.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1000)]
        runs: usize,
    },
    /// Write a synthetic capacity trace.
    GenTrace {
        /// Trace file to write.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Redraw charts from a saved `report.json`.
    Plot {
        /// JSON file holding one report or a list of them.
        #[arg(long)]
        input: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Infeasible(_) => 3,
        Error::Resource(_) => 4,
        _ => 1,
    }
}

fn flag_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn load_config(common: &Common) -> Result<(Config, Option<PathBuf>)> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| flag_error("--config", "this command needs a config file"))?;
    let mut cfg = Config::load(path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = &common.policy {
        cfg.policy.name = p.parse()?;
    }
    cfg.validate()?;
    Ok((cfg, path.parent().map(Path::to_path_buf)))
}

fn out_dir(common: &Common, cfg: Option<&Config>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.map(|c| PathBuf::from(&c.output.dir)))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn events_jsonl(run: &RunOutput, zones: &[spothedge::trace::Zone]) -> String {
    let mut buf = Vec::new();
    write_event_log(&mut buf, &run.events, zones).expect("in-memory write");
    String::from_utf8(buf).expect("utf-8")
}

fn simulate(common: &Common) -> Result<()> {
    let (cfg, base) = load_config(common)?;
    let out = out_dir(common, Some(&cfg));
    let exp = Experiment::new(cfg.clone(), base.as_deref())?;
    let trace = exp.trace(cfg.seed)?;
    let run = spothedge::experiment::run_policy(&trace, cfg.policy.name, &exp.params(&trace, cfg.seed)?)?;
    let reports = [run.report.clone()];
    if cfg.output.charts {
        export_reports(&out, &reports)?;
    } else {
        write_file(&out.join("reports.csv"), &reports_csv(&reports))?;
    }
    write_file(&out.join("report.json"), &json(&run.report))?;
    if cfg.output.event_log {
        write_file(&out.join("events.jsonl"), &events_jsonl(&run, trace.zones()))?;
    }
    if cfg.workload.is_some() {
        write_file(&out.join("outcomes.csv"), &outcomes_csv(&run.outcomes))?;
    }
    let r = &run.report;
    println!(
        "{} seed={} availability={:.4} cost={:.2} relative_cost={:.4} failure_rate={:.4} -> {}",
        r.policy,
        r.seed,
        r.availability,
        r.cost_total,
        r.cost_relative_to_od,
        r.failure_rate,
        out.display()
    );
    Ok(())
}

fn sweep(common: &Common, policies: &[String], seeds: &[u64], jobs: usize) -> Result<()> {
    let (cfg, base) = load_config(common)?;
    let out = out_dir(common, Some(&cfg));
    let kinds: Vec<PolicyKind> = if policies.is_empty() {
        PolicyKind::ALL.to_vec()
    } else {
        policies.iter().map(|p| p.parse()).collect::<Result<_>>()?
    };
    let seeds: Vec<u64> = if seeds.is_empty() { vec![cfg.seed] } else { seeds.to_vec() };
    let exp = Experiment::new(cfg.clone(), base.as_deref())?;
    let runs = run_sweep(&exp, &kinds, &seeds, jobs)?;
    let reports: Vec<SimReport> = runs.iter().map(|r| r.report.clone()).collect();
    write_file(&out.join("sweep.csv"), &sweep_csv(&reports))?;
    if cfg.output.charts {
        export_reports(&out, &reports)?;
    } else {
        write_file(&out.join("reports.csv"), &reports_csv(&reports))?;
    }
    if cfg.output.event_log {
        for run in &runs {
            let trace = exp.trace(run.seed)?;
            let name = format!("events_{}_{}.jsonl", run.policy, run.seed);
            write_file(&out.join("events").join(name), &events_jsonl(run, trace.zones()))?;
        }
    }
    for r in &reports {
        println!(
            "{} seed={} availability={:.4} relative_cost={:.4}",
            r.policy, r.seed, r.availability, r.cost_relative_to_od
        );
    }
    println!("{} runs -> {}", reports.len(), out.join("sweep.csv").display());
    Ok(())
}

fn optimize(common: &Common, event_log: Option<&Path>) -> Result<()> {
    let (cfg, base) = load_config(common)?;
    let out = out_dir(common, Some(&cfg));
    let exp = Experiment::new(cfg.clone(), base.as_deref())?;
    let log = match event_log {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?),
        None => None,
    };
    let report = run_optimize(&exp, cfg.seed, log.as_deref())?;
    write_file(&out.join("optimize.json"), &json(&report))?;
    println!("objective={} availability={:.4}", report.objective, report.availability);
    if let Some(s) = &report.scored {
        println!(
            "scored run: feasible={} objective={} availability={:.4}",
            s.feasible, s.objective, s.availability
        );
    }
    Ok(())
}

fn analyze(common: &Common, n: u32, lambdas: &[f64], horizon: f64, runs: usize) -> Result<()> {
    let seed = common.seed.unwrap_or(0);
    let rows = run_analyze(n, lambdas, horizon, runs, seed)?;
    let table = analyze_csv(&rows);
    print!("{table}");
    if let Some(dir) = &common.out {
        write_file(&dir.join("analyze.csv"), &table)?;
    }
    Ok(())
}

fn gen_trace(common: &Common, output: &Path) -> Result<()> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| flag_error("--config", "gen-trace needs a generator config"))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    // Either a bare generator table or a full experiment config.
    let (generator, seed) = match toml::from_str::<GeneratorConfig>(&text) {
        Ok(g) => (g, 0),
        Err(_) => {
            let cfg = Config::from_toml(&text)?;
            let g = cfg
                .trace
                .generator
                .clone()
                .ok_or_else(|| flag_error("trace.generator", "config has no generator"))?;
            (g, cfg.seed)
        }
    };
    let seed = common.seed.unwrap_or(seed);
    let trace = generator
        .generate(seed)
        .map_err(|e| flag_error("trace.generator", e.to_string()))?;
    trace.save(output)?;
    println!(
        "{} zones x {} ticks -> {}",
        trace.num_zones(),
        trace.horizon(),
        output.display()
    );
    Ok(())
}

fn plot(common: &Common, input: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::Io {
        path: input.to_path_buf(),
        source: e,
    })?;
    let reports: Vec<SimReport> = match serde_json::from_str::<Vec<SimReport>>(&text) {
        Ok(v) => v,
        Err(_) => vec![serde_json::from_str::<SimReport>(&text).map_err(|e| Error::Parse(e.to_string()))?],
    };
    let dir = common
        .out
        .clone()
        .unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
    for p in export_reports(&dir, &reports)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    if common.print_config {
        let (cfg, _) = load_config(common)?;
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match &cli.command {
        Command::Simulate => simulate(common),
        Command::Sweep { policies, seeds, jobs } => sweep(common, policies, seeds, *jobs),
        Command::Optimize { event_log } => optimize(common, event_log.as_deref()),
        Command::Analyze {
            replicas,
            lambdas,
            horizon,
            runs,
        } => analyze(common, *replicas, lambdas, *horizon, *runs),
        Command::GenTrace { output } => gen_trace(common, output),
        Command::Plot { input } => plot(common, input),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
