mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use klbts::baselines::{bespoke_initial_samples, run_uniform};
use klbts::engine::{run_with_rule, DEFAULT_MAX_SAMPLES};
use klbts::mdp::DEFAULT_TOL;
use klbts::oracle::oracle_report;
use klbts::plot::{sweep_svg, ExtraSeries};
use klbts::report::{write_jsonl, write_sweep_csv, BaselineColumns};
use klbts::verify::run_suite;
use klbts::{random_mdp, run_sweep, solve, summarize, Limits, Mdp, SamplingRule, SweepConfig};

use config::{effective_seed, Baseline, ExperimentConfig, MdpSource, Outputs};

#[derive(Parser)]
#[command(name = "klbts", version, about = "Best-policy identification in discounted MDPs with KLB-TS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random MDP and write it as JSON.
    Gen {
        states: usize,
        actions: usize,
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimal policy, values, gaps and next-state statistics.
    Solve {
        #[arg(long)]
        mdp: PathBuf,
    },
    /// Hardness terms, the closed-form allocation, V_P and U.
    Allocation {
        #[arg(long)]
        mdp: PathBuf,
    },
    /// One run of KLB-TS (or a baseline) at a single confidence level.
    Run(RunArgs),
    /// Seeded runs over a list of confidence levels, with CSV/SVG output.
    Sweep(SweepArgs),
    /// One-sided search for cheap alternative models at the closed-form
    /// allocation.
    Oracle {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, default_value_t = 200)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Invariant suite; exits with status 0 iff every check passes.
    Verify {
        #[arg(long)]
        mdp: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_SAMPLES)]
    max_samples: u64,
    #[arg(long)]
    stride: Option<u64>,
    /// Keep sampling until the budget is spent.
    #[arg(long)]
    no_stop: bool,
    /// Only `uniform` changes the sampling rule of a single run.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    #[arg(long)]
    out_jsonl: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON experiment config; flags given alongside override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mdp: Option<PathBuf>,
    /// Comma-separated, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    max_samples: Option<u64>,
    #[arg(long)]
    stride: Option<u64>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_svg: Option<PathBuf>,
    #[arg(long)]
    out_jsonl: Option<PathBuf>,
    /// May be repeated.
    #[arg(long, value_enum)]
    baseline: Vec<Baseline>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load(path: &PathBuf) -> Result<Mdp> {
    Mdp::load(path).with_context(|| format!("loading {}", path.display()))
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen { states, actions, gamma, seed, out } => {
            let mdp = random_mdp(states, actions, gamma, effective_seed(seed)?)?;
            match out {
                Some(path) => mdp.save(&path).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{}", mdp.to_json_string()),
            }
        }
        Command::Solve { mdp } => print_json(&solve(&load(&mdp)?, DEFAULT_TOL)?)?,
        Command::Allocation { mdp } => {
            let mdp = load(&mdp)?;
            print_json(&summarize(&solve(&mdp, DEFAULT_TOL)?, mdp.gamma())?)?
        }
        Command::Run(args) => run(args)?,
        Command::Sweep(args) => sweep(args)?,
        Command::Oracle { mdp, restarts, seed } => {
            print_json(&oracle_report(&load(&mdp)?, restarts, effective_seed(seed)?)?)?
        }
        Command::Verify { mdp, seed } => {
            let model = mdp.as_ref().map(load).transpose()?;
            let report = run_suite(model.as_ref(), effective_seed(seed)?)?;
            print_json(&report)?;
            if !report.passed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(args: RunArgs) -> Result<()> {
    if !(args.delta > 0.0 && args.delta < 1.0) {
        bail!("delta {} is outside (0, 1)", args.delta);
    }
    let mdp = load(&args.mdp)?;
    let limits = Limits { max_samples: args.max_samples, stride: args.stride, stopping: !args.no_stop };
    let seed = effective_seed(args.seed)?;
    let record = match args.baseline {
        Some(Baseline::Uniform) => run_uniform(&mdp, args.delta, seed, &limits)?.record,
        Some(Baseline::BespokeNmin) => bail!("bespoke-nmin is a cost formula, not a sampling rule; use sweep"),
        None => run_with_rule(&mdp, args.delta, seed, &limits, SamplingRule::KlbTs)?,
    };
    if let Some(path) = &args.out_jsonl {
        let mut w = create(path)?;
        write_jsonl(&mut w, std::slice::from_ref(&record))?;
        w.flush()?;
    }
    print_json(&record)
}

fn sweep_config(args: SweepArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig {
            mdp: MdpSource::Path { path: args.mdp.clone().context("either --config or --mdp is required")? },
            deltas: Vec::new(),
            runs_per_delta: 10,
            seed: 0,
            max_samples: DEFAULT_MAX_SAMPLES,
            stride: None,
            jobs: 0,
            outputs: Outputs::default(),
            baselines: Vec::new(),
        },
    };
    if let Some(path) = args.mdp {
        cfg.mdp = MdpSource::Path { path };
    }
    if let Some(d) = args.deltas {
        cfg.deltas = d;
    }
    macro_rules! set {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value {
                $field = v;
            }
        };
    }
    set!(cfg.runs_per_delta, args.runs);
    set!(cfg.seed, args.seed);
    set!(cfg.jobs, args.jobs);
    set!(cfg.max_samples, args.max_samples);
    if args.stride.is_some() {
        cfg.stride = args.stride;
    }
    if args.out_csv.is_some() {
        cfg.outputs.csv = args.out_csv;
    }
    if args.out_svg.is_some() {
        cfg.outputs.svg = args.out_svg;
    }
    if args.out_jsonl.is_some() {
        cfg.outputs.jsonl = args.out_jsonl;
    }
    if !args.baseline.is_empty() {
        cfg.baselines = args.baseline;
    }
    cfg.seed = effective_seed(cfg.seed)?;
    cfg.validate()?;
    Ok(cfg)
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = sweep_config(args)?;
    let mdp = cfg.mdp.load()?;
    let base = SweepConfig {
        deltas: cfg.deltas.clone(),
        runs_per_delta: cfg.runs_per_delta,
        seed_base: cfg.seed,
        limits: cfg.limits(),
        rule: SamplingRule::KlbTs,
        jobs: cfg.jobs,
    };
    let (rows, mut records) = run_sweep(&mdp, &base)?;

    let mut columns: Vec<BaselineColumns> = vec![BaselineColumns::default(); rows.len()];
    let mut extras = Vec::new();
    if cfg.baselines.contains(&Baseline::Uniform) {
        let (uniform_rows, uniform_records) = run_sweep(&mdp, &SweepConfig { rule: SamplingRule::Uniform, ..base })?;
        extras.push(ExtraSeries {
            label: "uniform sampling".into(),
            values: uniform_rows.iter().map(|r| r.mean_tau).collect(),
            color: "#2ca02c",
        });
        for (c, u) in columns.iter_mut().zip(uniform_rows) {
            c.uniform = Some(u);
        }
        records.extend(uniform_records);
    }
    if cfg.baselines.contains(&Baseline::BespokeNmin) {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let totals: Vec<f64> = cfg.deltas.iter().map(|&d| bespoke_initial_samples(mdp.gamma(), ns, na, d)).collect();
        for (c, &t) in columns.iter_mut().zip(&totals) {
            c.bespoke_nmin_total = Some(t);
        }
        extras.push(ExtraSeries { label: "BESPOKE initialization".into(), values: totals, color: "#9467bd" });
    }
    let baselines = (!cfg.baselines.is_empty()).then_some(columns.as_slice());

    match &cfg.outputs.csv {
        Some(path) => {
            let mut w = create(path)?;
            write_sweep_csv(&mut w, &rows, baselines)?;
            w.flush()?;
        }
        None => write_sweep_csv(std::io::stdout().lock(), &rows, baselines)?,
    }
    if let Some(path) = &cfg.outputs.svg {
        let title = format!("S={}, A={}, gamma={}", mdp.num_states(), mdp.num_actions(), mdp.gamma());
        std::fs::write(path, sweep_svg(&rows, &extras, &title))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &cfg.outputs.jsonl {
        let mut w = create(path)?;
        write_jsonl(&mut w, &records)?;
        w.flush()?;
    }
    let exhausted: usize = rows.iter().map(|r| r.budget_exhausted).sum();
    if exhausted > 0 {
        eprintln!("warning: {exhausted} run(s) hit the sample budget before stopping");
    }
    Ok(())
}
