use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ddsopf::construct::Policy;
use ddsopf::driver::{load_case, run_ddsopf_on, run_random_baseline_on, DriverError, RunConfig, RunOutcome};
use ddsopf::montecarlo::write_violation_matrix;
use ddsopf::powerflow::{default_participation, evaluate_violations, solve_scenario};
use ddsopf::sopf::{deterministic_opf, dump_nlp};
use ddsopf::uncertainty::{write_scenarios_csv, BoxUncertainty, BusFilter};

#[derive(Parser)]
#[command(name = "ddsopf", version, about = "Data-driven scenario construction for stochastic AC-OPF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the iterative scenario-construction loop.
    Run(RunArgs),
    /// Solve one scenario OPF over n random samples and assess it.
    Baseline {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Deterministic OPF followed by one base-case power flow.
    Pf {
        #[arg(long)]
        case: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    #[value(alias = "all_loads")]
    AllLoads,
    #[value(alias = "end_buses")]
    EndBuses,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long, default_value_t = 0.03)]
    fluct: f64,
    #[arg(long, value_enum, default_value = "all-loads")]
    filter: FilterArg,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    batch: usize,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, default_value = "mv")]
    policy: Policy,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    lambda_frac: f64,
    #[arg(long, default_value_t = 1e-4)]
    tau2: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 25)]
    max_iterations: usize,
    /// Report file (JSON).
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Per-sample violation matrix of the last in-loop assessment (CSV).
    #[arg(long)]
    dump_violations: Option<PathBuf>,
    /// NLP variables and constraint values at the final solution (JSON).
    #[arg(long)]
    dump_nlp: Option<PathBuf>,
    /// Final scenario set (CSV).
    #[arg(long)]
    dump_scenarios: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        let workers = std::env::var("DDSOPF_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0);
        RunConfig {
            case: self.case.clone(),
            fluct: self.fluct,
            filter: match self.filter {
                FilterArg::AllLoads => BusFilter::AllLoads,
                FilterArg::EndBuses => BusFilter::EndBuses,
            },
            samples: self.samples,
            batch: self.batch,
            tau: self.tau,
            policy: self.policy,
            seed: self.seed,
            lambda_frac: self.lambda_frac,
            tau2: self.tau2,
            max_iterations: self.max_iterations,
            delta: self.delta,
            workers,
            progress: !self.quiet,
            ..RunConfig::default()
        }
    }
}

type BoxError = Box<dyn std::error::Error>;

fn write_outputs(args: &RunArgs, net: &ddsopf::netcase::Network, o: &RunOutcome) -> Result<(), BoxError> {
    std::fs::write(&args.out, serde_json::to_string_pretty(&o.report)?)?;
    if let Some(p) = &args.dump_violations {
        write_violation_matrix(&o.last_assessment.records, BufWriter::new(File::create(p)?))?;
    }
    if let Some(p) = &args.dump_nlp {
        let v = dump_nlp(net, &o.omega, &o.solution);
        std::fs::write(p, serde_json::to_string_pretty(&v)?)?;
    }
    if let Some(p) = &args.dump_scenarios {
        write_scenarios_csv(net, o.omega.as_slice(), BufWriter::new(File::create(p)?))?;
    }
    println!("{}", o.report.summary_row());
    println!("{}", o.report.bound.statement());
    Ok(())
}

fn run(args: &RunArgs, baseline: Option<usize>) -> Result<ExitCode, BoxError> {
    let cfg = args.config();
    let net = load_case(&cfg.case)?;
    let result = match baseline {
        Some(n) => run_random_baseline_on(&net, &cfg, n),
        None => run_ddsopf_on(&net, &cfg),
    };
    match result {
        Ok(o) => {
            write_outputs(args, &net, &o)?;
            Ok(ExitCode::SUCCESS)
        }
        Err(DriverError::MaxIterationsExceeded(o)) => {
            write_outputs(args, &net, &o)?;
            eprintln!("not converged after {} iterations", o.report.iterations);
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e.into()),
    }
}

fn power_flow(case: &Path) -> Result<ExitCode, BoxError> {
    let net = load_case(case)?;
    let det = deterministic_opf(&net, &default_participation(&net))?;
    let base = BoxUncertainty::with_filter(&net, 0.0, BusFilter::AllLoads).base_scenario();
    let st = solve_scenario(&net, &det.op, &base, None)?;
    let viol = evaluate_violations(&net, &st, 0);
    let out = serde_json::json!({
        "objective": det.objective,
        "iterations": st.iterations,
        "bus_id": net.buses.iter().map(|b| b.id).collect::<Vec<_>>(),
        "v": st.v,
        "theta": st.theta,
        "gen_p": st.gen_p,
        "gen_q": st.gen_q,
        "max_violation": viol.max_u(),
        "violations": viol.entries.iter().map(|(c, u)| (c.to_string(), *u)).collect::<Vec<_>>(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Run(a) => run(a, None),
        Command::Baseline { n, run: a } => run(a, Some(*n)),
        Command::Pf { case } => power_flow(case),
    };
    r.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}
