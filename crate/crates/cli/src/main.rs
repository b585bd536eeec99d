//! `mergeopt`: run, compare and sweep layer-merging search strategies.
//!
//! Exit codes: 0 success, 2 configuration error, 3 evaluator failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mergeopt::harness::plan::{Condition, ObjectiveConfig, PS_MERGE, TOY_MERGE};
use mergeopt::harness::{
    load_comparison, render_report, run_comparison, suite_sweep, ExperimentPlan, ReportFormat,
};
use mergeopt::harness::sweep::SUITE_LAYERS;
use mergeopt::strategies::STRATEGY_IDS;
use mergeopt::{run, Error, ExecMode};

const EXIT_CONFIG: u8 = 2;
const EXIT_EVALUATOR: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "mergeopt", version, about = "Mixed binary-continuous search over layer-merging recipes")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one strategy on one objective and write its log.
    Run(RunArgs),
    /// Run the four-condition comparison (or a plan file) over shared seeds.
    Compare(CompareArgs),
    /// Re-render the report of a finished experiment directory.
    Report(ReportArgs),
    /// Structured vs unstructured sampling across the objective suite.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct ObjectiveArgs {
    /// toy-merge, masked-sphere or sphere (any id with --evaluator-cmd).
    #[arg(long, default_value = TOY_MERGE)]
    objective: String,

    /// Models and layers per model, as N,L.
    #[arg(long, default_value = "2,96", value_parser = parse_space)]
    space: (usize, usize),

    /// Evaluate through a child process speaking the JSON-lines protocol.
    #[arg(long, value_name = "ARGV")]
    evaluator_cmd: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    objective: ObjectiveArgs,

    #[arg(long, value_parser = parse_strategy)]
    strategy: String,

    #[arg(long, default_value_t = 10)]
    budget: u64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Directory for `<strategy>__seed<k>.jsonl` and its header.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    objective: ObjectiveArgs,

    #[arg(long, default_value_t = 10)]
    budget: u64,

    /// Comma-separated seed list shared by every condition.
    #[arg(long, default_value = "0", value_delimiter = ',')]
    seeds: Vec<u64>,

    /// Parent directory of the `exp-<hash>` experiment directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,

    #[arg(long, default_value = "table-text", value_parser = parse_format)]
    format: ReportFormat,

    /// Full plan as JSON; overrides the objective, budget and seed flags.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// An `exp-<hash>` directory written by `compare`.
    #[arg(long)]
    out: PathBuf,

    #[arg(long, default_value = "table-text", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated objective ids.
    #[arg(long, default_value = "toy-merge,masked-sphere", value_delimiter = ',')]
    objective: Vec<String>,

    /// Comma-separated layers per model (two models each).
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,

    /// Comma-separated seed list.
    #[arg(long, default_value = "0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19", value_delimiter = ',')]
    seeds: Vec<u64>,

    #[arg(long, default_value = "table-text", value_parser = parse_format)]
    format: ReportFormat,

    /// Also write the sweep as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_space(s: &str) -> Result<(usize, usize), String> {
    let (n, l) = s.split_once(',').ok_or("expected N,L")?;
    let n = n.trim().parse().map_err(|e| format!("bad N: {e}"))?;
    let l = l.trim().parse().map_err(|e| format!("bad L: {e}"))?;
    Ok((n, l))
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<String, String> {
    if STRATEGY_IDS.contains(&s) {
        Ok(s.to_owned())
    } else {
        Err(format!("unknown strategy `{s}`; expected one of {}", STRATEGY_IDS.join(", ")))
    }
}

enum Failure {
    Config(String),
    Evaluator(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_evaluator_failure() {
            Failure::Evaluator(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn objective_config(args: &ObjectiveArgs) -> Result<ObjectiveConfig, Failure> {
    let (n, l) = args.space;
    let mut config = ObjectiveConfig::new(&args.objective, n, l);
    if let Some(cmd) = &args.evaluator_cmd {
        let argv = shlex::split(cmd).ok_or_else(|| Failure::Config(format!("cannot parse evaluator command `{cmd}`")))?;
        config = config.with_evaluator(argv);
    }
    config.validate()?;
    Ok(config)
}

fn exec_mode(sequential: bool) -> ExecMode {
    if sequential {
        ExecMode::Sequential
    } else {
        ExecMode::default()
    }
}

fn cmd_run(args: RunArgs, mode: ExecMode) -> Result<(), Failure> {
    let config = objective_config(&args.objective)?;
    let built = config.build(args.seed)?;
    let stem = format!("{}__seed{}", args.strategy, args.seed);
    let outcome = run(&args.strategy, &built.handle, args.budget, args.seed, mode);
    let (log, error) = match outcome {
        Ok(log) => (log, None),
        Err(f) => (f.log, Some(f.error)),
    };
    let (_, jsonl) = log.write(&args.out, &stem)?;
    println!("log: {}", jsonl.display());
    println!("evaluations: {}", log.records.len());
    if let Some(best) = log.best_record() {
        println!("best objective: {}", best.objective);
        match best.score {
            Some(s) => println!("best score: {s}"),
            None => println!("best score: n/a"),
        }
        println!("best active layers: {}", best.active);
    }
    match error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn cmd_compare(args: CompareArgs, mode: ExecMode) -> Result<(), Failure> {
    let plan = match &args.plan {
        Some(path) => {
            let mut plan: ExperimentPlan =
                serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Failure::Config(e.to_string()))?;
            if plan.output_dir.as_os_str().is_empty() {
                plan.output_dir = args.out.clone();
            }
            plan
        }
        None => {
            let config = objective_config(&args.objective)?;
            let external = config.evaluator_cmd.is_some();
            let mut plan = ExperimentPlan::four_conditions(config, args.budget, args.seeds.clone(), args.out.clone());
            if external {
                // Parameter-space merging needs model weights, which an
                // external evaluator does not expose.
                plan.conditions.retain(|c: &Condition| c.strategy_id != PS_MERGE);
            }
            plan
        }
    };
    plan.validate()?;
    let cmp = run_comparison(&plan, mode)?;
    print!("{}", render_report(&cmp.report, args.format)?);
    eprintln!("experiment directory: {}", cmp.dir.display());
    if let Some(row) = cmp.report.rows.iter().find(|r| r.failed) {
        return Err(Failure::Evaluator(format!(
            "condition `{}` failed: {}",
            row.label,
            row.error.as_deref().unwrap_or("unknown error")
        )));
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let (_, report, _) = load_comparison(Path::new(&args.out))?;
    print!("{}", render_report(&report, args.format)?);
    Ok(())
}

fn cmd_bench(args: BenchArgs, mode: ExecMode) -> Result<(), Failure> {
    let ids: Vec<&str> = args.objective.iter().map(String::as_str).collect();
    let layers = args.layers.unwrap_or_else(|| SUITE_LAYERS.to_vec());
    let summary = suite_sweep(&ids, &layers, &args.seeds, mode)?;
    match args.format {
        ReportFormat::Csv => print!("{}", summary.to_csv()?),
        ReportFormat::Json => println!(
            "{}",
            serde_json::to_string_pretty(&summary).map_err(|e| Failure::Config(e.to_string()))?
        ),
        ReportFormat::TableText => {
            println!(
                "{:<14} {:>5} {:>7} {:>6} {:>13} {:>11} {:>9}",
                "objective", "m", "budget", "seeds", "unstructured", "structured", "margin"
            );
            for r in &summary.rows {
                println!(
                    "{:<14} {:>5} {:>7} {:>6} {:>13.4} {:>11.4} {:>+9.4}",
                    r.objective_id,
                    r.m,
                    r.budget,
                    r.seeds,
                    r.unstructured_median,
                    r.structured_median,
                    r.margin()
                );
            }
            println!();
            println!("aggregate margin: {:+.4}", summary.aggregate_margin());
            println!(
                "structured dominates: {}",
                if summary.structured_dominates() { "yes" } else { "no" }
            );
        }
    }
    if let Some(path) = &args.out {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, summary.to_csv()?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mode = exec_mode(cli.sequential);
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, mode),
        Command::Compare(a) => cmd_compare(a, mode),
        Command::Report(a) => cmd_report(a),
        Command::Bench(a) => cmd_bench(a, mode),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Evaluator(msg)) => {
            eprintln!("evaluator failure: {msg}");
            ExitCode::from(EXIT_EVALUATOR)
        }
    }
}
