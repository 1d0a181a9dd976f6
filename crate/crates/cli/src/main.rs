//! Command-line front end: parse networks, compose closed PID loops, run
//! simulations and verification experiments, and emit CSV artifacts.
//!
//! Exit codes: 0 on success, 1 when a computation fails numerically, 2 for
//! usage, configuration, or parse errors.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crnpid::builtins::{
    constant_reference, gene_expression_plant, sine_reference, GENE_EXPRESSION_ANTAGONIST,
    GENE_EXPRESSION_OUTPUT, GENE_EXPRESSION_TRANSCRIPT,
};
use crnpid::{
    build_closed_loop, derivative_convergence, format_crn, parse_crn, proportional_convergence,
    run_comparison, simulate_document, Actuation, AnalysisError, BlockParams, CompareOptions,
    CrnDocument, Gains, LoopRates, LoopSpec, Method, OutputGrid, RateOverride, ReferenceProfile,
    SimOptions, SineInput, SpeciesId, Trajectory,
};

/// Name accepted wherever a plant network is expected.
const BUILTIN_PLANT: &str = "gene-expression";
/// Trajectory CSVs written by `experiment` keep at most this many rows.
const EXPERIMENT_CSV_ROWS: usize = 2001;

#[derive(Parser)]
#[command(
    name = "crnpid",
    version,
    about = "Build, simulate, and verify chemical-reaction-network PID controllers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a network and print its trajectory as CSV
    Simulate(SimulateArgs),
    /// Build a closed PID loop and emit it as network text
    Compose(ComposeArgs),
    /// Run the PI-versus-PID tracking comparison and write its artifacts
    Experiment(ExperimentArgs),
    /// Check a controller block's convergence as its speed scale grows
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Parse a network file and print it in canonical form
    Fmt(FmtArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Network file, or the builtin plant name `gene-expression`
    input: String,
    /// Integration horizon
    #[arg(long, default_value_t = 100.0)]
    t_end: f64,
    /// Relative error tolerance
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Absolute error tolerance
    #[arg(long)]
    abs_tol: Option<f64>,
    /// Upper bound on the step size
    #[arg(long)]
    max_step: Option<f64>,
    /// Integration method
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    /// Resample the output onto this many evenly spaced times
    #[arg(long)]
    grid_points: Option<usize>,
    /// Write the CSV here instead of standard output
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Pick explicit or stiff automatically from the rate spread
    Auto,
    /// Explicit adaptive Runge-Kutta
    DormandPrince,
    /// Linearly implicit stiff stepper
    Rosenbrock,
}

impl From<MethodArg> for Method {
    fn from(value: MethodArg) -> Method {
        match value {
            MethodArg::Auto => Method::Auto,
            MethodArg::DormandPrince => Method::DormandPrince,
            MethodArg::Rosenbrock => Method::Rosenbrock,
        }
    }
}

#[derive(Args)]
struct ComposeArgs {
    #[command(flatten)]
    loop_args: LoopArgs,
    /// Write the network text here instead of standard output
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    loop_args: LoopArgs,
    /// Directory for trajectory CSVs, the report, and the summary
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relative error tolerance for the comparison runs
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Absolute error tolerance for the comparison runs
    #[arg(long)]
    abs_tol: Option<f64>,
    /// Step-size cap for the comparison runs
    #[arg(long)]
    max_step: Option<f64>,
}

/// Flags describing a closed loop; each has a config-file equivalent and
/// overrides it when both are given.
#[derive(Args, Default)]
struct LoopArgs {
    /// Key-value config file (`key = value` lines, `#` comments)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Plant: `gene-expression` or a network file
    #[arg(long)]
    plant: Option<String>,
    /// Plant species treated as the measured output
    #[arg(long)]
    output_species: Option<String>,
    /// Actuation: `split`, `annihilate-mrna`, `annihilate-output`, or a
    /// network-fragment file driven by `U+`/`U-`
    #[arg(long)]
    actuation: Option<String>,
    /// Species boosted by `U+` under split actuation
    #[arg(long)]
    act_positive: Option<String>,
    /// Species boosted by `U-` under split actuation
    #[arg(long)]
    act_negative: Option<String>,
    /// Reference: `constant`, `sine`, or a network file exposing `R+`/`R-`
    #[arg(long)]
    reference: Option<String>,
    /// Constant reference level
    #[arg(long)]
    level: Option<f64>,
    /// Sine reference amplitude
    #[arg(long)]
    amplitude: Option<f64>,
    /// Sine reference angular rate
    #[arg(long)]
    ref_rate: Option<f64>,
    /// Proportional gain
    #[arg(long)]
    kp: Option<f64>,
    /// Integral gain
    #[arg(long)]
    ki: Option<f64>,
    /// Derivative gain
    #[arg(long)]
    kd: Option<f64>,
    /// Stage rate, e.g. `--stage-rate proportional.s=10` (repeatable)
    #[arg(long = "stage-rate", value_name = "STAGE.PARAM=VALUE")]
    stage_rates: Vec<String>,
    /// Reaction rate override, e.g. `--override 'E+ -> E+ + P+ = 2'`
    /// (repeatable)
    #[arg(long = "override", value_name = "REACTION=RATE")]
    overrides: Vec<String>,
    /// Experiment profile when the reference is a custom file
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    /// 200 time units, steady window [150, 200]
    Constant,
    /// 600 time units, steady window [550, 600]
    Sine,
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Sweep the derivative block's speed scale against a sine drive
    Derivative(VerifyDerivativeArgs),
    /// Sweep the proportional block's speed scale under a constant input
    Proportional(VerifyProportionalArgs),
}

#[derive(Args)]
struct VerifyDerivativeArgs {
    /// Comma-separated speed scales, e.g. `1,10`
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    scales: Vec<f64>,
    /// Sine drive amplitude
    #[arg(long, default_value_t = 10.0)]
    amplitude: f64,
    /// Sine drive angular rate
    #[arg(long, default_value_t = 0.01)]
    rate: f64,
    /// Block gain r
    #[arg(long, default_value_t = 1.0)]
    gain: f64,
    /// Base copy rate s (scaled by each ladder entry)
    #[arg(long, default_value_t = 10.0)]
    s: f64,
    /// Annihilation rate q
    #[arg(long, default_value_t = 10.0)]
    q: f64,
    /// Base tracking rate v (scaled by each ladder entry)
    #[arg(long, default_value_t = 1.0)]
    v: f64,
    /// Also write the report as CSV here
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyProportionalArgs {
    /// Comma-separated speed scales, e.g. `1,10,100`
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    scales: Vec<f64>,
    /// Block gain r
    #[arg(long, default_value_t = 1.0)]
    gain: f64,
    /// Base copy rate s (scaled by each ladder entry)
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    /// Annihilation rate q
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Also write the report as CSV here
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct FmtArgs {
    /// Network file to canonicalize
    file: PathBuf,
    /// Rewrite the file instead of printing to standard output
    #[arg(long)]
    in_place: bool,
}

/// A classified failure: usage/parse problems exit 2, numerical ones 1.
enum Failure {
    Usage(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numerical(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Numerical(m) => m,
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(err: impl std::fmt::Display) -> Failure {
    Failure::Usage(err.to_string())
}

fn numerical(err: impl std::fmt::Display) -> Failure {
    Failure::Numerical(err.to_string())
}

impl From<AnalysisError> for Failure {
    fn from(err: AnalysisError) -> Failure {
        match err {
            AnalysisError::InvalidLadder
            | AnalysisError::InvalidSineInput { .. }
            | AnalysisError::Block(_)
            | AnalysisError::Crn(_) => usage(err),
            AnalysisError::Sim(_) | AnalysisError::IntegralIdentity { .. } => numerical(err),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Compose(args) => cmd_compose(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Fmt(args) => cmd_fmt(args),
    }
}

/// Reads and parses a `.crn` file, or returns the builtin plant.
fn load_network(input: &str) -> CliResult<CrnDocument> {
    if input == BUILTIN_PLANT {
        return Ok(gene_expression_plant());
    }
    load_network_file(Path::new(input))
}

fn load_network_file(path: &Path) -> CliResult<CrnDocument> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    parse_crn(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_or_print(output: Option<&Path>, content: &str) -> CliResult<()> {
    match output {
        Some(path) => fs::write(path, content)
            .map_err(|e| numerical(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let doc = load_network(&args.input)?;
    let mut options = SimOptions::new(args.t_end).with_method(args.method.into());
    if let Some(rel) = args.rel_tol {
        options.rel_tol = rel;
    }
    if let Some(abs) = args.abs_tol {
        options.abs_tol = abs;
    }
    if let Some(h) = args.max_step {
        options.max_step = h;
    }
    if let Some(points) = args.grid_points {
        options.grid = OutputGrid::Fixed { points };
    }
    let trajectory = simulate_document(&doc, &options).map_err(numerical)?;
    match &args.output {
        Some(path) => {
            let file = fs::File::create(path)
                .map_err(|e| numerical(format!("cannot write {}: {e}", path.display())))?;
            trajectory
                .write_csv(io::BufWriter::new(file))
                .map_err(numerical)
        }
        None => {
            let stdout = io::stdout();
            trajectory
                .write_csv(io::BufWriter::new(stdout.lock()))
                .map_err(numerical)
        }
    }
}

fn cmd_compose(args: ComposeArgs) -> CliResult<()> {
    let config = ExperimentConfig::resolve(&args.loop_args)?;
    let spec = config.build_spec()?;
    let doc = build_closed_loop(&spec).map_err(usage)?;
    write_or_print(args.output.as_deref(), &format_crn(&doc))
}

fn cmd_experiment(args: ExperimentArgs) -> CliResult<()> {
    let mut config = ExperimentConfig::resolve(&args.loop_args)?;
    if let Some(out) = args.out {
        config.out = out;
    }
    if let Some(rel) = args.rel_tol {
        config.rel_tol = Some(rel);
    }
    if let Some(abs) = args.abs_tol {
        config.abs_tol = Some(abs);
    }
    if let Some(h) = args.max_step {
        config.max_step = Some(h);
    }
    let spec = config.build_spec()?;
    let profile = config.profile()?;
    let mut compare = CompareOptions::default();
    if let Some(rel) = config.rel_tol {
        compare.rel_tol = rel;
    }
    if let Some(abs) = config.abs_tol {
        compare.abs_tol = abs;
    }
    if let Some(h) = config.max_step {
        compare.max_step = h;
    }
    let run = run_comparison(&spec, profile, &compare)?;

    fs::create_dir_all(&config.out)
        .map_err(|e| numerical(format!("cannot create {}: {e}", config.out.display())))?;
    let write = |name: &str, content: &str| -> CliResult<()> {
        let path = config.out.join(name);
        fs::write(&path, content)
            .map_err(|e| numerical(format!("cannot write {}: {e}", path.display())))
    };
    write_decimated_csv(&run.pi, &config.out.join("pi.csv"))?;
    write_decimated_csv(&run.pid, &config.out.join("pid.csv"))?;
    write("report.csv", &run.report.to_csv())?;
    let summary = run.report.summary();
    write("summary.txt", &summary)?;
    print!("{summary}");
    Ok(())
}

/// Writes a trajectory CSV keeping at most [`EXPERIMENT_CSV_ROWS`] evenly
/// strided rows (the last sample is always included).
fn write_decimated_csv(trajectory: &Trajectory, path: &Path) -> CliResult<()> {
    let n = trajectory.len();
    let stride = n.div_ceil(EXPERIMENT_CSV_ROWS - 1).max(1);
    let file = fs::File::create(path)
        .map_err(|e| numerical(format!("cannot write {}: {e}", path.display())))?;
    let mut out = io::BufWriter::new(file);
    let emit = |out: &mut dyn Write, i: usize| -> io::Result<()> {
        write!(out, "{}", trajectory.times()[i])?;
        for v in &trajectory.samples()[i] {
            write!(out, ",{v}")?;
        }
        writeln!(out)
    };
    (|| -> io::Result<()> {
        write!(out, "time")?;
        for s in trajectory.species() {
            write!(out, ",{s}")?;
        }
        writeln!(out)?;
        let mut i = 0;
        while i < n {
            emit(&mut out, i)?;
            i += stride;
        }
        if n > 0 && (n - 1) % stride != 0 {
            emit(&mut out, n - 1)?;
        }
        out.flush()
    })()
    .map_err(|e| numerical(format!("cannot write {}: {e}", path.display())))
}

fn cmd_verify(command: VerifyCommand) -> CliResult<()> {
    match command {
        VerifyCommand::Derivative(args) => {
            let params = BlockParams::new(args.gain, args.s, args.q)
                .and_then(|p| p.with_tracking_rate(args.v))
                .map_err(usage)?;
            let input = SineInput { amplitude: args.amplitude, rate: args.rate };
            let report = derivative_convergence(&params, &args.scales, &input)?;
            print!("{}", report.summary());
            if let Some(path) = &args.csv {
                write_or_print(Some(path), &report.to_csv())?;
            }
            Ok(())
        }
        VerifyCommand::Proportional(args) => {
            let params = BlockParams::new(args.gain, args.s, args.q).map_err(usage)?;
            let report = proportional_convergence(&params, &args.scales)?;
            print!("{}", report.summary());
            if let Some(path) = &args.csv {
                write_or_print(Some(path), &report.to_csv())?;
            }
            Ok(())
        }
    }
}

fn cmd_fmt(args: FmtArgs) -> CliResult<()> {
    let doc = load_network_file(&args.file)?;
    let canonical = format_crn(&doc);
    if args.in_place {
        fs::write(&args.file, &canonical)
            .map_err(|e| numerical(format!("cannot write {}: {e}", args.file.display())))
    } else {
        print!("{canonical}");
        Ok(())
    }
}

/// A resolved experiment description: defaults, then config-file entries,
/// then flags, later sources overriding earlier ones.
struct ExperimentConfig {
    plant: String,
    output_species: Option<String>,
    actuation: String,
    act_positive: Option<String>,
    act_negative: Option<String>,
    reference: String,
    level: f64,
    amplitude: f64,
    ref_rate: f64,
    kp: f64,
    ki: f64,
    kd: f64,
    /// Raw `stage.param = value` entries, applied to the stock loop rates.
    stage_rates: Vec<(String, f64)>,
    /// Raw `reaction = rate` override entries.
    overrides: Vec<String>,
    profile: Option<ProfileArg>,
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    max_step: Option<f64>,
    out: PathBuf,
}

impl Default for ExperimentConfig {
    /// The stock experiment: the builtin plant under split actuation,
    /// tracking a constant reference of 10 with gains (1, 0.2, 1) — the
    /// configuration whose tracking the acceptance checks pin down.
    fn default() -> Self {
        ExperimentConfig {
            plant: BUILTIN_PLANT.to_string(),
            output_species: None,
            actuation: "split".to_string(),
            act_positive: None,
            act_negative: None,
            reference: "constant".to_string(),
            level: 10.0,
            amplitude: 10.0,
            ref_rate: 0.01,
            kp: 1.0,
            ki: 0.2,
            kd: 1.0,
            stage_rates: Vec::new(),
            overrides: Vec::new(),
            profile: None,
            rel_tol: None,
            abs_tol: None,
            max_step: None,
            out: PathBuf::from("crnpid-experiment"),
        }
    }
}

impl ExperimentConfig {
    fn resolve(args: &LoopArgs) -> CliResult<ExperimentConfig> {
        let mut config = ExperimentConfig::default();
        if let Some(path) = &args.config {
            config.apply_file(path)?;
        }
        config.apply_flags(args)?;
        Ok(config)
    }

    /// Applies `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, and keys `stage.param` (containing a dot) set block rates.
    fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        for (index, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                usage(format!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    index + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            self.apply_entry(key, value).map_err(|f| {
                usage(format!("{}:{}: {}", path.display(), index + 1, f.message()))
            })?;
        }
        Ok(())
    }

    fn apply_entry(&mut self, key: &str, value: &str) -> CliResult<()> {
        let float = |value: &str| -> CliResult<f64> {
            value
                .parse::<f64>()
                .map_err(|_| usage(format!("`{value}` is not a number")))
        };
        match key {
            "plant" => self.plant = value.to_string(),
            "output" => self.output_species = Some(value.to_string()),
            "actuation" => self.actuation = value.to_string(),
            "act-positive" => self.act_positive = Some(value.to_string()),
            "act-negative" => self.act_negative = Some(value.to_string()),
            "reference" => self.reference = value.to_string(),
            "level" => self.level = float(value)?,
            "amplitude" => self.amplitude = float(value)?,
            "rate" => self.ref_rate = float(value)?,
            "kp" => self.kp = float(value)?,
            "ki" => self.ki = float(value)?,
            "kd" => self.kd = float(value)?,
            "override" => self.overrides.push(value.to_string()),
            "profile" => {
                self.profile = Some(match value {
                    "constant" => ProfileArg::Constant,
                    "sine" => ProfileArg::Sine,
                    other => {
                        return Err(usage(format!(
                            "unknown profile `{other}` (expected `constant` or `sine`)"
                        )))
                    }
                })
            }
            "rel-tol" => self.rel_tol = Some(float(value)?),
            "abs-tol" => self.abs_tol = Some(float(value)?),
            "max-step" => self.max_step = Some(float(value)?),
            "out" => self.out = PathBuf::from(value),
            _ if key.contains('.') => {
                self.stage_rates.push((key.to_string(), float(value)?))
            }
            other => return Err(usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    fn apply_flags(&mut self, args: &LoopArgs) -> CliResult<()> {
        if let Some(v) = &args.plant {
            self.plant = v.clone();
        }
        if let Some(v) = &args.output_species {
            self.output_species = Some(v.clone());
        }
        if let Some(v) = &args.actuation {
            self.actuation = v.clone();
        }
        if let Some(v) = &args.act_positive {
            self.act_positive = Some(v.clone());
        }
        if let Some(v) = &args.act_negative {
            self.act_negative = Some(v.clone());
        }
        if let Some(v) = &args.reference {
            self.reference = v.clone();
        }
        if let Some(v) = args.level {
            self.level = v;
        }
        if let Some(v) = args.amplitude {
            self.amplitude = v;
        }
        if let Some(v) = args.ref_rate {
            self.ref_rate = v;
        }
        if let Some(v) = args.kp {
            self.kp = v;
        }
        if let Some(v) = args.ki {
            self.ki = v;
        }
        if let Some(v) = args.kd {
            self.kd = v;
        }
        for entry in &args.stage_rates {
            let (key, value) = entry.split_once('=').ok_or_else(|| {
                usage(format!("stage rate `{entry}` must look like `stage.param=value`"))
            })?;
            let value = value
                .trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("`{}` is not a number", value.trim())))?;
            self.stage_rates.push((key.trim().to_string(), value));
        }
        self.overrides.extend(args.overrides.iter().cloned());
        if let Some(v) = args.profile {
            self.profile = Some(v);
        }
        Ok(())
    }

    /// The experiment profile: explicit setting first, otherwise inferred
    /// from the reference kind (custom reference files default to the
    /// constant profile).
    fn profile(&self) -> CliResult<ReferenceProfile> {
        if let Some(profile) = self.profile {
            return Ok(match profile {
                ProfileArg::Constant => ReferenceProfile::Constant,
                ProfileArg::Sine => ReferenceProfile::Sine,
            });
        }
        Ok(match self.reference.as_str() {
            "sine" => ReferenceProfile::Sine,
            _ => ReferenceProfile::Constant,
        })
    }

    fn build_spec(&self) -> CliResult<LoopSpec> {
        let plant = load_network(&self.plant)?;
        let output_name = match &self.output_species {
            Some(name) => name.clone(),
            None if self.plant == BUILTIN_PLANT => GENE_EXPRESSION_OUTPUT.to_string(),
            None => {
                return Err(usage(
                    "a custom plant needs `output = <species>` (or --output-species)",
                ))
            }
        };
        let output = SpeciesId::new(output_name.clone()).map_err(usage)?;

        let species = |name: &str| SpeciesId::new(name).map_err(usage);
        let actuation = match self.actuation.as_str() {
            "split" => Actuation::Split {
                positive_target: species(
                    self.act_positive.as_deref().unwrap_or(GENE_EXPRESSION_TRANSCRIPT),
                )?,
                negative_target: species(
                    self.act_negative.as_deref().unwrap_or(GENE_EXPRESSION_ANTAGONIST),
                )?,
            },
            "annihilate-mrna" => Actuation::Sequester {
                target: species(GENE_EXPRESSION_TRANSCRIPT)?,
            },
            "annihilate-output" => Actuation::Sequester { target: output.clone() },
            name => {
                let path = Path::new(name);
                if path.is_file() {
                    Actuation::Custom(load_network_file(path)?.crn().clone())
                } else {
                    return Err(usage(format!(
                        "unknown actuation `{name}` (expected split, annihilate-mrna, \
                         annihilate-output, or a network file)"
                    )));
                }
            }
        };

        let reference = match self.reference.as_str() {
            "constant" => {
                if !self.level.is_finite() || self.level < 0.0 {
                    return Err(usage(format!(
                        "reference level must be finite and nonnegative, got {}",
                        self.level
                    )));
                }
                constant_reference(self.level)
            }
            "sine" => {
                if !self.amplitude.is_finite() || self.amplitude < 0.0 {
                    return Err(usage(format!(
                        "sine amplitude must be finite and nonnegative, got {}",
                        self.amplitude
                    )));
                }
                if !self.ref_rate.is_finite() || self.ref_rate <= 0.0 {
                    return Err(usage(format!(
                        "sine rate must be finite and positive, got {}",
                        self.ref_rate
                    )));
                }
                sine_reference(self.amplitude, self.ref_rate)
            }
            name => {
                let path = Path::new(name);
                if path.is_file() {
                    load_network_file(path)?
                } else {
                    return Err(usage(format!(
                        "unknown reference `{name}` (expected constant, sine, or a \
                         network file)"
                    )));
                }
            }
        };

        let mut spec = LoopSpec::new(plant, output, actuation, reference);
        spec.gains = Gains::new(self.kp, self.ki, self.kd).map_err(usage)?;
        spec.rates = self.loop_rates()?;
        for entry in &self.overrides {
            let (reaction, rate) = entry.rsplit_once('=').ok_or_else(|| {
                usage(format!("override `{entry}` must look like `reaction = rate`"))
            })?;
            let rate = rate
                .trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("`{}` is not a number", rate.trim())))?;
            spec.overrides
                .push(RateOverride::new(reaction.trim(), rate).map_err(usage)?);
        }
        Ok(spec)
    }

    fn loop_rates(&self) -> CliResult<LoopRates> {
        let mut rates = LoopRates::default();
        for (key, value) in &self.stage_rates {
            let (stage, param) = key.split_once('.').ok_or_else(|| {
                usage(format!("stage rate key `{key}` must look like `stage.param`"))
            })?;
            let slot = match stage {
                "proportional" => &mut rates.proportional,
                "integral" => &mut rates.integral,
                "derivative" => &mut rates.derivative,
                "sum-pi" => &mut rates.sum_pi,
                "sum-pid" => &mut rates.sum_pid,
                "error" => &mut rates.error,
                "conversion" => &mut rates.conversion,
                other => {
                    return Err(usage(format!(
                        "unknown stage `{other}` (expected proportional, integral, \
                         derivative, sum-pi, sum-pid, error, or conversion)"
                    )))
                }
            };
            let (mut s, mut q, mut v) = (slot.s(), slot.q(), slot.v());
            match param {
                "s" => s = *value,
                "q" => q = *value,
                "v" => v = *value,
                "r" => {
                    return Err(usage(
                        "stage gains are set by kp/ki/kd, not per-stage `r`".to_string(),
                    ))
                }
                other => {
                    return Err(usage(format!(
                        "unknown stage parameter `{other}` (expected s, q, or v)"
                    )))
                }
            }
            *slot = BlockParams::new(slot.r(), s, q)
                .and_then(|p| p.with_tracking_rate(v))
                .map_err(usage)?;
        }
        Ok(rates)
    }
}
