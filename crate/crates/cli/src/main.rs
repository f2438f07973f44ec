//! `sdo`: generate phantoms, compute payoff tables, run the two-phase
//! ε-constraint search and solve single weighted-sum plans.

mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sdo_core::eps::{payoff_table, tighten_ranges, EpsError, Molp};
use sdo_core::lp::{self, LpError, LpOutcome, SolverTolerances};
use sdo_core::model::{build_molp, build_molp_with, ModelError, PlanSolution, N_OBJECTIVES};
use sdo_core::phantom::{generate_phantom, read_instance, write_instance, PhantomError, PhantomSpec, SdoInstance};
use sdo_core::two_phase::{run, RunMode, TwoPhaseConfig, TwoPhaseError};

#[derive(Parser, Debug)]
#[command(name = "sdo", version, about = "Multiobjective sector-duration optimization")]
struct Cli {
    /// Raise log verbosity (ignored when SDO_LOG is set).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom instance.
    Gen(GenArgs),
    /// Compute the lexicographic payoff table and objective ranges.
    Payoff(PayoffArgs),
    /// Run the two-phase ε-constraint search.
    Run(RunArgs),
    /// Solve one weighted-sum plan.
    Single(SingleArgs),
}

#[derive(clap::Args, Debug)]
struct GenArgs {
    #[arg(long, default_value = "small")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tumor radius in mm.
    #[arg(long)]
    tumor_radius: Option<f64>,
    #[arg(long)]
    isocenters: Option<usize>,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    prescription: Option<f64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(clap::Args, Debug)]
struct PayoffArgs {
    instance: PathBuf,
    #[arg(long, default_value_t = 0.98)]
    cov_min: f64,
    /// Write the table and ranges as JSON.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Regular,
    Ml,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    H1,
    H2,
    H3,
    H4,
    H5,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    instance: PathBuf,
    #[arg(long, value_enum, default_value = "regular")]
    mode: ModeArg,
    #[arg(long)]
    cov_min: Option<f64>,
    #[arg(long)]
    pci_min: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    r1: Option<usize>,
    #[arg(long)]
    r2: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    primary_objective: Option<ObjectiveArg>,
    /// Solve every grid vector without the early-detection filters.
    #[arg(long)]
    no_filters: bool,
    /// Archive entry whose DVH is written (default: best qualifying PCI).
    #[arg(long)]
    dvh_entry: Option<usize>,
    #[arg(short, long, default_value = "sdo-out")]
    output: PathBuf,
}

#[derive(clap::Args, Debug)]
struct SingleArgs {
    instance: PathBuf,
    /// Five nonnegative weights on h1..h5.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    weights: Vec<f64>,
    /// Adds the coverage tightening rows for this threshold.
    #[arg(long)]
    cov_min: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Failure with its process exit code.
#[derive(Debug)]
enum Failure {
    Input(String),
    Numeric(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Io(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "input error: {m}"),
            Failure::Numeric(m) => write!(f, "numerical failure: {m}"),
            Failure::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<PhantomError> for Failure {
    fn from(e: PhantomError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<LpError> for Failure {
    fn from(e: LpError) -> Self {
        match e {
            LpError::InvalidProblem(m) => Failure::Input(m),
            e => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<EpsError> for Failure {
    fn from(e: EpsError) -> Self {
        match e {
            EpsError::Lp(e) => e.into(),
            e => Failure::Input(e.to_string()),
        }
    }
}

impl From<TwoPhaseError> for Failure {
    fn from(e: TwoPhaseError) -> Self {
        match e {
            TwoPhaseError::Eps(e) => e.into(),
            TwoPhaseError::Forest(e) => Failure::Numeric(e.to_string()),
            e => Failure::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SDO_LOG", default)).format_timestamp(None).init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Payoff(a) => cmd_payoff(a),
        Command::Run(a) => cmd_run(a),
        Command::Single(a) => cmd_single(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sdo: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn load(path: &Path) -> Result<SdoInstance, Failure> {
    let inst = read_instance(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    inst.validate()?;
    Ok(inst)
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    let mut spec = PhantomSpec::preset(&a.preset, a.seed)
        .ok_or_else(|| Failure::Input(format!("unknown preset `{}` (expected small or medium)", a.preset)))?;
    if let Some(r) = a.tumor_radius {
        spec.tumor_radius_mm = r;
    }
    if let Some(n) = a.isocenters {
        spec.n_isocenters = n;
    }
    if let Some(v) = a.voxel_size {
        spec.voxel_size_mm = v;
    }
    if let Some(d) = a.prescription {
        spec.prescribed_dose_gy = d;
    }
    spec.validate()?;
    let inst = generate_phantom(&spec)?;
    write_instance(&inst, &a.output)?;
    print!("{}", output::summary_table(&inst));
    Ok(())
}

fn cmd_payoff(a: PayoffArgs) -> Result<(), Failure> {
    let inst = load(&a.instance)?;
    let model = build_molp(&inst, a.cov_min)?;
    let molp = Molp::from(&model);
    let (table, ranges) = payoff_table(&molp, &SolverTolerances::default())?;
    let tightened = tighten_ranges(&ranges, &inst, a.cov_min)?;
    print!("{}", output::payoff_text(&table, &ranges, &tightened));
    if let Some(path) = a.output {
        let doc = serde_json::json!({ "payoff": table, "ranges": ranges, "tightened": tightened });
        std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    Ok(())
}

fn run_config(a: &RunArgs) -> TwoPhaseConfig {
    let mut c = TwoPhaseConfig {
        mode: match a.mode {
            ModeArg::Regular => RunMode::Regular,
            ModeArg::Ml => RunMode::Ml,
        },
        ..Default::default()
    };
    if let Some(v) = a.cov_min {
        c.cov_min = v;
    }
    if let Some(v) = a.pci_min {
        c.pci_min = v;
    }
    if let Some(v) = a.beta {
        c.beta = v;
    }
    if let Some(v) = a.r1 {
        c.r_phase1 = v;
    }
    if let Some(v) = a.r2 {
        c.r_phase2 = v;
    }
    if let Some(v) = a.rho {
        c.rho = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.jobs {
        c.jobs = v;
    }
    if let Some(o) = a.primary_objective {
        c.primary = o as usize;
    }
    c.filters = !a.no_filters;
    c
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let config = run_config(&a);
    config.validate()?;
    let inst = load(&a.instance)?;
    let out = run(&inst, &config)?;
    if let Some(id) = a.dvh_entry {
        if id >= out.archive.len() {
            return Err(Failure::Input(format!("dvh entry {id} outside archive of {}", out.archive.len())));
        }
    }
    let written = output::write_run(&a.output, &inst, &out, a.dvh_entry)?;
    println!("{} plans, {} LPs, {:.2} s; outputs in {}", out.archive.len(), out.report.n_lp, out.report.wall_time_s, a.output.display());
    if let Some(id) = written.dvh_entry {
        println!("dvh.csv shows archive entry {id}");
    }
    for w in &out.report.warnings {
        println!("warning: {w}");
    }
    match &out.report.aborted {
        Some(m) => Err(Failure::Numeric(format!("run aborted, partial outputs written: {m}"))),
        None => Ok(()),
    }
}

fn cmd_single(a: SingleArgs) -> Result<(), Failure> {
    let weights: [f64; N_OBJECTIVES] = a
        .weights
        .as_slice()
        .try_into()
        .map_err(|_| Failure::Input(format!("weights: expected {N_OBJECTIVES} values, got {}", a.weights.len())))?;
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Failure::Input("weights must be finite and nonnegative".into()));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Failure::Input("weights must not all be zero".into()));
    }
    let inst = load(&a.instance)?;
    let model = match a.cov_min {
        Some(c) => build_molp(&inst, c)?,
        None => build_molp_with(&inst, None),
    };
    let sol = match lp::solve(&model.weighted(&weights), &SolverTolerances::default())? {
        LpOutcome::Optimal(s) => s,
        LpOutcome::Infeasible => return Err(Failure::Input("the model is infeasible".into())),
        LpOutcome::Unbounded => return Err(Failure::Numeric("weighted objective is unbounded".into())),
    };
    let plan = PlanSolution::evaluate(&inst, model.durations_from(&sol.x), "single")?;
    print!("{}", output::plan_text(&plan, &weights));
    if let Some(path) = a.output {
        std::fs::write(path, serde_json::to_string_pretty(&plan)? + "\n")?;
    }
    Ok(())
}
