use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use powersym::model::{payoff, MarketScenario};
use powersym::oracles::{fd_price, mc_price};
use powersym::reduction::{Branch, PipelineOptions, PriceBackend, PricingPipeline};
use powersym::symmetry::{
    backend_consistency, closed_form_symmetry, determining_residuals, require_regular_generator, solve_symmetry_ode,
    verify_generator, ConsistencyStatus, GeneratorGrid, SymmetryConstants,
};
use rayon::prelude::*;

use crate::error::CliError;
use crate::output::{num, numeric_csv, text_csv};
use crate::report::{Check, RunReport};
use crate::scenario::{load_scenario, ScenarioFile};

pub const DEFAULT_COMPARE_TOL: f64 = 0.01;
pub const DEFAULT_VERIFY_TOL: f64 = 1e-7;
/// Relative PDE residual allowed for an assembled price.
pub const PRICE_RESIDUAL_TOL: f64 = 1e-5;
/// Terminal RMS fit error allowed, relative to the payoff RMS on the fit grid.
pub const PRICE_FIT_TOL: f64 = 0.01;
/// Monte Carlo must sit within this many standard errors of the FD price.
pub const MC_SIGMAS: f64 = 3.0;

#[derive(Debug, Parser)]
#[command(name = "powersym", version, about = "Symmetry-reduction pricing of power options")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Price through the invariant reduction; CSV `S,t,V,pde_residual`.
    Price(PriceArgs),
    /// Evaluate the determining equations of a symmetry; CSV `t,Rb,Rc,Rd`.
    VerifySymmetry(VerifyArgs),
    /// Reference prices from finite differences or Monte Carlo.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Reduction price against both oracles.
    Compare(CompareArgs),
    /// Run price or compare over every scenario in a directory.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BranchArg {
    ZeroPayoff,
    CallPayoff,
}

impl From<BranchArg> for Branch {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::ZeroPayoff => Branch::ZeroPayoff,
            BranchArg::CallPayoff => Branch::CallPayoff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriceBackendArg {
    Numeric,
    /// Experimental Hermite/Kummer closed form; rejected when it fails its certificate.
    Closed,
}

impl From<PriceBackendArg> for PriceBackend {
    fn from(b: PriceBackendArg) -> Self {
        match b {
            PriceBackendArg::Numeric => PriceBackend::Numeric,
            PriceBackendArg::Closed => PriceBackend::ExperimentalClosedForm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SymmetryBackendArg {
    Ode,
    Closed,
}

#[derive(Debug, Clone, Args)]
pub struct PriceArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum)]
    pub branch: BranchArg,
    /// One spot or a comma-separated list.
    #[arg(long, value_delimiter = ',', required = true)]
    pub spot: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub time: f64,
    #[arg(long, value_enum, default_value = "numeric")]
    pub backend: PriceBackendArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// `theta1=..,theta2=..,gamma1=..,gamma2=..,alpha1=..,k1=..`; omitted keys are zero.
    #[arg(long, default_value = "")]
    pub constants: String,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    #[arg(long, value_enum, default_value = "ode")]
    pub backend: SymmetryBackendArg,
    #[arg(long, default_value_t = DEFAULT_VERIFY_TOL)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum OracleCommand {
    /// Crank–Nicolson surface; CSV `S,t,V`.
    Fd(FdArgs),
    /// Risk-neutral Monte Carlo; CSV `mean,stderr,paths,seed`.
    Mc(McArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FdArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Spot to report; also widens the automatic domain to cover it.
    #[arg(long)]
    pub spot: Option<f64>,
    #[arg(long, default_value_t = 400)]
    pub ns: usize,
    #[arg(long, default_value_t = 400)]
    pub nt: usize,
    /// Grid spans `K^{1/β}/m .. K^{1/β}·m`; chosen from the spot when omitted.
    #[arg(long)]
    pub domain_mult: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub spot: f64,
    #[arg(long, default_value_t = 200_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 16)]
    pub steps: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum)]
    pub branch: BranchArg,
    /// Defaults to 0.8, 0.9, 1, 1.1, 1.2 times the kink spot `K^{1/β}`.
    #[arg(long, value_delimiter = ',')]
    pub spots: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_COMPARE_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 200_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 16)]
    pub steps: usize,
    #[arg(long, default_value_t = 400)]
    pub ns: usize,
    #[arg(long, default_value_t = 400)]
    pub nt: usize,
    #[arg(long, value_enum, default_value = "numeric")]
    pub backend: PriceBackendArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepCommand {
    Price,
    Compare,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario_dir: PathBuf,
    #[arg(long, value_enum)]
    pub command: SweepCommand,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "call-payoff")]
    pub branch: BranchArg,
    #[arg(long, default_value_t = DEFAULT_COMPARE_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 200_000)]
    pub paths: usize,
}

/// What a finished command hands back to the process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

struct Done {
    report: RunReport,
    csv: String,
}

/// Parses arguments (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let echo = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    match Cli::try_parse_from(&args) {
        Ok(cli) => execute(&cli.command, &echo),
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Outcome {
                    code: 0,
                    stdout: text,
                    stderr: String::new(),
                },
                _ => Outcome {
                    code: 2,
                    stdout: String::new(),
                    stderr: text,
                },
            }
        }
    }
}

pub fn execute(command: &Command, echo: &str) -> Outcome {
    let result = match command {
        Command::Price(a) => load_scenario(&a.scenario).and_then(|f| cmd_price(&f, a, echo)),
        Command::VerifySymmetry(a) => cmd_verify(a, echo),
        Command::Oracle(OracleCommand::Fd(a)) => cmd_fd(a, echo),
        Command::Oracle(OracleCommand::Mc(a)) => cmd_mc(a, echo),
        Command::Compare(a) => load_scenario(&a.scenario).and_then(|f| cmd_compare(&f, a, echo)),
        Command::Sweep(a) => cmd_sweep(a, echo),
    };
    let out = match command {
        Command::Price(a) => a.out.as_deref(),
        Command::VerifySymmetry(a) => a.out.as_deref(),
        Command::Oracle(OracleCommand::Fd(a)) => a.out.as_deref(),
        Command::Oracle(OracleCommand::Mc(a)) => a.out.as_deref(),
        Command::Compare(a) => a.out.as_deref(),
        Command::Sweep(_) => None,
    };
    match result.and_then(|done| emit(done, out)) {
        Ok((report, stdout)) => Outcome {
            code: if report.pass() { 0 } else { 1 },
            stdout,
            stderr: report.render(),
        },
        Err(e) => Outcome {
            code: e.exit_code(),
            stdout: String::new(),
            stderr: format!("command: {echo}\nerror: {e}\nresult: FAIL\n"),
        },
    }
}

fn emit(mut done: Done, out: Option<&Path>) -> Result<(RunReport, String), CliError> {
    match out {
        Some(path) => {
            write_file(path, &done.csv)?;
            done.report.outputs.push(path.display().to_string());
            Ok((done.report, String::new()))
        }
        None => {
            if !done.csv.is_empty() {
                done.report.outputs.push("stdout".into());
            }
            Ok((done.report, done.csv))
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn report_for(echo: &str, file: &ScenarioFile) -> RunReport {
    let mut r = RunReport::new(echo);
    r.digest = Some(file.digest.clone());
    r
}

fn require_volatility(sc: &MarketScenario, what: &str) -> Result<(), CliError> {
    sc.require_positive_volatility()
        .map_err(|e| CliError::config(format!("{what} needs sigma > 0: {e}")))
}

fn check_spots(spots: &[f64]) -> Result<(), CliError> {
    if spots.is_empty() {
        return Err(CliError::config("at least one spot is required"));
    }
    match spots.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        Some(s) => Err(CliError::config(format!("spots must be positive, got {s}"))),
        None => Ok(()),
    }
}

/// FD half-width (as a multiple of the kink spot) that keeps every spot
/// well inside the grid.
pub fn auto_domain_mult(sc: &MarketScenario, spots: &[f64]) -> f64 {
    let kink = sc.kink_spot();
    let widest = spots.iter().fold(1.0f64, |m, &s| m.max(s / kink).max(kink / s));
    (1.5 * widest).max(4.0)
}

pub fn default_spots(sc: &MarketScenario) -> Vec<f64> {
    let kink = sc.kink_spot();
    [0.8, 0.9, 1.0, 1.1, 1.2].iter().map(|m| m * kink).collect()
}

fn cmd_price(file: &ScenarioFile, a: &PriceArgs, echo: &str) -> Result<Done, CliError> {
    let sc = &file.scenario;
    require_volatility(sc, "pricing")?;
    check_spots(&a.spot)?;
    let horizon = sc.maturity();
    if !(a.time >= 0.0 && a.time < horizon) {
        return Err(CliError::config(format!("--time must lie in [0, {horizon}), got {}", a.time)));
    }
    let opts = PipelineOptions {
        spots: a.spot.clone(),
        ..PipelineOptions::default()
    };
    let pipeline = PricingPipeline::build(a.branch.into(), sc, a.backend.into(), &opts)?;
    let mut report = report_for(echo, file);
    let disc = sc.discount(a.time, horizon)?;
    let mut rows = Vec::with_capacity(a.spot.len());
    for &s in &a.spot {
        let p = pipeline.price(s, a.time)?;
        let bound = PRICE_RESIDUAL_TOL * (p.value.abs() + sc.strike() * disc);
        report.check(Check::at_most(format!("pde_residual[S={s}]"), p.pde_residual.abs(), bound));
        rows.push(vec![s, a.time, p.value, p.pde_residual]);
    }
    let fit = pipeline.fit();
    report.check(Check::at_most(
        "terminal_fit_max_residual",
        fit.max_residual,
        2.0 * fit.fit_error,
    ));
    report.check(Check::at_most("terminal_fit_relative_rms", fit.relative_error(), PRICE_FIT_TOL));
    report.note(format!(
        "chart {}, reduced ODE order {}, u range [{}, {}]",
        pipeline.chart().kind(),
        pipeline.reduced_ode().order(),
        pipeline.u_range().0,
        pipeline.u_range().1
    ));
    report.note(format!("fit constants {:?}, rms terminal error {:e}", fit.coefficients(), fit.fit_error));
    if let Some(cert) = pipeline.certificate() {
        report.note(format!("closed-form certificate {cert:e}"));
    }
    Ok(Done {
        report,
        csv: numeric_csv("S,t,V,pde_residual", &rows),
    })
}

/// `N` interior times, nudged off coefficient breakpoints.
fn sample_times(sc: &MarketScenario, n: usize) -> Vec<f64> {
    let horizon = sc.maturity();
    let breaks = sc.breakpoints();
    (1..=n)
        .map(|k| {
            let t = horizon * k as f64 / (n + 1) as f64;
            if breaks.iter().any(|b| (t - b).abs() < 1e-9 * horizon) {
                t + 1e-6 * horizon
            } else {
                t
            }
        })
        .collect()
}

fn cmd_verify(a: &VerifyArgs, echo: &str) -> Result<Done, CliError> {
    let file = load_scenario(&a.scenario)?;
    let sc = &file.scenario;
    require_volatility(sc, "symmetry verification")?;
    let constants: SymmetryConstants = a
        .constants
        .parse()
        .map_err(|e: powersym::Error| CliError::config(format!("--constants: {e}")))?;
    if a.samples == 0 {
        return Err(CliError::config("--samples must be at least 1"));
    }
    if !(a.tol > 0.0) {
        return Err(CliError::config(format!("--tol must be positive, got {}", a.tol)));
    }
    require_regular_generator(sc)?;
    let sf = match a.backend {
        SymmetryBackendArg::Ode => solve_symmetry_ode(sc, &constants)?,
        SymmetryBackendArg::Closed => closed_form_symmetry(sc, &constants)?,
    };
    let mut report = report_for(echo, &file);
    let mut rows = Vec::with_capacity(a.samples);
    let mut worst = 0.0f64;
    for t in sample_times(sc, a.samples) {
        let r = determining_residuals(sc, &sf, t)?.normalized();
        worst = worst.max(r[0]).max(r[1]).max(r[2]);
        rows.push(vec![t, r[0], r[1], r[2]]);
    }
    report.check(Check::at_most("max_normalized_residual", worst, a.tol));

    if constants.k1 == 0.0 {
        match backend_consistency(sc, &constants, a.samples) {
            Ok(c) => {
                let verdict = match c.status {
                    ConsistencyStatus::Pass => "agree",
                    _ => "disagree",
                };
                report.note(format!(
                    "backend consistency: ODE and closed form {verdict} \
                     (peak-relative diff theta {:e}, gamma {:e}, alpha {:e}; tol {:e})",
                    c.theta, c.gamma, c.alpha, c.tol
                ));
            }
            Err(e) => report.note(format!("backend consistency not available: {e}")),
        }
    } else {
        report.note("k1 != 0: the determining equations can hold while the generator still fails to preserve the PDE");
    }

    if constants == SymmetryConstants::zero() {
        report.note("generator check skipped: all constants are zero");
    } else if constants.k1 != 0.0 {
        report.note("generator check skipped: k1 != 0");
    } else if !sc.breakpoints().is_empty() {
        report.note("generator check skipped: coefficient curves have breakpoints");
    } else {
        let g = verify_generator(sc, &sf, &GeneratorGrid::default())?;
        for (k, ratio) in g.ratios.iter().enumerate() {
            report.check(Check::within(
                format!("generator_decay_ratio[{k}]"),
                *ratio,
                g.ratio_band.0,
                g.ratio_band.1,
            ));
        }
        let levels: Vec<String> = g
            .levels
            .iter()
            .map(|l| format!("{}x{}: {:e}", l.ns, l.nt, l.residual))
            .collect();
        report.note(format!("generator residual by grid: {}", levels.join(", ")));
    }
    Ok(Done {
        report,
        csv: numeric_csv("t,Rb,Rc,Rd", &rows),
    })
}

fn cmd_fd(a: &FdArgs, echo: &str) -> Result<Done, CliError> {
    let file = load_scenario(&a.scenario)?;
    let sc = &file.scenario;
    require_volatility(sc, "the FD oracle")?;
    if a.ns < 16 || a.nt < 16 {
        return Err(CliError::config(format!("--ns and --nt must be at least 16, got {}x{}", a.ns, a.nt)));
    }
    if let Some(s) = a.spot {
        check_spots(&[s])?;
    }
    let mult = match a.domain_mult {
        Some(m) if !(m >= 4.0 && m.is_finite()) => {
            return Err(CliError::config(format!("--domain-mult must be at least 4, got {m}")))
        }
        Some(m) => m,
        None => auto_domain_mult(sc, a.spot.as_slice()),
    };
    let surface = fd_price(sc, a.ns, a.nt, mult)?;
    let mut report = report_for(echo, &file);
    let mut mismatch = 0.0f64;
    for (s, v) in surface.s_grid.iter().zip(surface.terminal_row()) {
        mismatch = mismatch.max((v - payoff(sc, *s)?).abs());
    }
    report.check(Check::at_most("terminal_payoff_mismatch", mismatch, 0.0));
    report.note(format!("grid {}x{}, domain multiplier {mult}", a.ns, a.nt));
    if let Some(s) = a.spot {
        report.note(format!("V(S={s}, t=0) = {}", num(surface.value_at(s, 0.0)?)));
    }
    let mut csv = String::with_capacity((a.ns + 1) * (a.nt + 1) * 72);
    csv.push_str("S,t,V\n");
    for (j, t) in surface.t_grid.iter().enumerate() {
        let tt = num(*t);
        for (s, v) in surface.s_grid.iter().zip(surface.row(j)) {
            csv.push_str(&num(*s));
            csv.push(',');
            csv.push_str(&tt);
            csv.push(',');
            csv.push_str(&num(*v));
            csv.push('\n');
        }
    }
    Ok(Done { report, csv })
}

fn check_mc_flags(paths: usize, steps: usize) -> Result<(), CliError> {
    if paths < 1000 {
        return Err(CliError::config(format!("--paths must be at least 1000, got {paths}")));
    }
    if steps == 0 {
        return Err(CliError::config("--steps must be at least 1"));
    }
    Ok(())
}

fn cmd_mc(a: &McArgs, echo: &str) -> Result<Done, CliError> {
    let file = load_scenario(&a.scenario)?;
    check_spots(&[a.spot])?;
    check_mc_flags(a.paths, a.steps)?;
    let est = mc_price(&file.scenario, a.spot, a.paths, a.steps, a.seed)?;
    let mut report = report_for(echo, &file);
    if !(est.mean.is_finite() && est.stderr.is_finite()) {
        return Err(CliError::Failure(format!(
            "monte carlo produced a non-finite estimate ({}, {})",
            est.mean, est.stderr
        )));
    }
    report.note(format!("{} steps per path", a.steps));
    let csv = format!(
        "mean,stderr,paths,seed\n{},{},{},{}\n",
        num(est.mean),
        num(est.stderr),
        est.paths,
        est.seed
    );
    Ok(Done { report, csv })
}

fn cmd_compare(file: &ScenarioFile, a: &CompareArgs, echo: &str) -> Result<Done, CliError> {
    let sc = &file.scenario;
    require_volatility(sc, "compare")?;
    let spots = if a.spots.is_empty() { default_spots(sc) } else { a.spots.clone() };
    check_spots(&spots)?;
    if !(a.tol > 0.0) {
        return Err(CliError::config(format!("--tol must be positive, got {}", a.tol)));
    }
    check_mc_flags(a.paths, a.steps)?;
    if a.ns < 16 || a.nt < 16 {
        return Err(CliError::config(format!("--ns and --nt must be at least 16, got {}x{}", a.ns, a.nt)));
    }
    let branch: Branch = a.branch.into();
    let opts = PipelineOptions {
        spots: spots.clone(),
        ..PipelineOptions::default()
    };
    let pipeline = PricingPipeline::build(branch, sc, a.backend.into(), &opts)?;
    let mut report = report_for(echo, file);

    // the zero-payoff branch prices the claim paying nothing, whose value is 0
    let oracle: Vec<(f64, f64, f64)> = match branch {
        Branch::ZeroPayoff => {
            report.note("zero-payoff branch: oracle value of a zero terminal payoff is 0");
            vec![(0.0, 0.0, 0.0); spots.len()]
        }
        Branch::CallPayoff => {
            let mult = auto_domain_mult(sc, &spots);
            let surface = fd_price(sc, a.ns, a.nt, mult)?;
            report.note(format!(
                "fd grid {}x{} (domain multiplier {mult}); mc {} paths, {} steps, seed {}",
                a.ns, a.nt, a.paths, a.steps, a.seed
            ));
            spots
                .iter()
                .map(|&s| {
                    let fd = surface.value_at(s, 0.0)?;
                    let mc = mc_price(sc, s, a.paths, a.steps, a.seed)?;
                    Ok((fd, mc.mean, mc.stderr))
                })
                .collect::<powersym::Result<Vec<_>>>()?
        }
    };

    let mut rows = Vec::with_capacity(spots.len());
    let (mut worst_rel, mut worst_z) = (0.0f64, 0.0f64);
    for (&s, &(fd, mc, se)) in spots.iter().zip(&oracle) {
        let v = pipeline.value(s, 0.0)?;
        let abs = (v - fd).abs();
        let rel = ratio(abs, fd.abs());
        let z = ratio((mc - fd).abs(), se);
        worst_rel = worst_rel.max(rel);
        worst_z = worst_z.max(z);
        rows.push(vec![s, v, fd, mc, se, abs, rel]);
    }
    report.check(Check::at_most("max_rel_diff", worst_rel, a.tol));
    report.check(Check::at_most("max_mc_fd_stderrs", worst_z, MC_SIGMAS));
    Ok(Done {
        report,
        csv: numeric_csv("S,V_sym,V_fd,V_mc,mc_stderr,abs_diff,rel_diff", &rows),
    })
}

/// `a / b`, with `0 / 0 = 0` and `x / 0 = ∞`.
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

struct SweepItem {
    name: String,
    stem: String,
    status: &'static str,
    detail: String,
    csv: Option<String>,
}

fn sweep_one(path: &Path, a: &SweepArgs) -> SweepItem {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let item = |status, detail: String, csv| SweepItem {
        name: name.clone(),
        stem: stem.clone(),
        status,
        detail,
        csv,
    };
    let file = match load_scenario(path) {
        Ok(f) => f,
        Err(e) => return item("CONFIG-ERROR", e.to_string(), None),
    };
    let echo = format!("sweep {}", path.display());
    let result = match a.command {
        SweepCommand::Price => {
            let args = PriceArgs {
                scenario: path.to_path_buf(),
                branch: a.branch,
                spot: vec![file.scenario.kink_spot()],
                time: 0.0,
                backend: PriceBackendArg::Numeric,
                out: None,
            };
            cmd_price(&file, &args, &echo)
        }
        SweepCommand::Compare => {
            let args = CompareArgs {
                scenario: path.to_path_buf(),
                branch: a.branch,
                spots: Vec::new(),
                tol: a.tol,
                seed: a.seed,
                paths: a.paths,
                steps: 16,
                ns: 400,
                nt: 400,
                backend: PriceBackendArg::Numeric,
                out: None,
            };
            cmd_compare(&file, &args, &echo)
        }
    };
    match result {
        Ok(done) => match done.report.first_failure() {
            None => item("PASS", format!("sha256:{}", file.digest), Some(done.csv)),
            Some(c) => item("FAIL", c.describe(), Some(done.csv)),
        },
        Err(CliError::Config(m)) => item("CONFIG-ERROR", m, None),
        Err(e) => item("FAIL", e.to_string(), None),
    }
}

fn cmd_sweep(a: &SweepArgs, echo: &str) -> Result<Done, CliError> {
    if !(a.tol > 0.0) {
        return Err(CliError::config(format!("--tol must be positive, got {}", a.tol)));
    }
    check_mc_flags(a.paths, 1)?;
    let dir = std::fs::read_dir(&a.scenario_dir)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", a.scenario_dir.display())))?;
    let mut paths = Vec::new();
    for entry in dir {
        let entry = entry.map_err(|e| CliError::config(format!("cannot list {}: {e}", a.scenario_dir.display())))?;
        let path = entry.path();
        let hidden = path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
        if path.is_file() && !hidden {
            paths.push(path);
        }
    }
    paths.sort();
    let mut stems: Vec<_> = paths.iter().map(|p| p.file_stem().map(|s| s.to_os_string())).collect();
    stems.sort();
    if stems.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::config("scenario files must have distinct names without extension"));
    }
    std::fs::create_dir_all(&a.out)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", a.out.display())))?;

    let items: Vec<SweepItem> = paths.par_iter().map(|p| sweep_one(p, a)).collect();

    let mut report = RunReport::new(echo);
    let mut summary = Vec::with_capacity(items.len());
    for it in &items {
        if let Some(csv) = &it.csv {
            let path = a.out.join(format!("{}.csv", it.stem));
            write_file(&path, csv)?;
            report.outputs.push(path.display().to_string());
        }
        if it.status != "PASS" {
            report.note(format!("{}: {} {}", it.name, it.status, it.detail));
        }
        summary.push(vec![it.name.clone(), it.status.to_string(), it.detail.clone()]);
    }
    let summary_path = a.out.join("summary.csv");
    write_file(&summary_path, &text_csv("scenario,status,detail", &summary))?;
    report.outputs.push(summary_path.display().to_string());
    let failed = items.iter().filter(|i| i.status != "PASS").count();
    report.check(Check::at_most("failed_scenarios", failed as f64, 0.0));
    Ok(Done {
        report,
        csv: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    const VANILLA: &str = "beta = 1\nstrike = 100\npsi = call\nmaturity = 1\n\
        sigma.kind = constant\nsigma.value = 0.2\n\
        r.kind = constant\nr.value = 0.05\n\
        y.kind = constant\ny.value = 0\n";

    const SMOOTH: &str = "beta = 1.5\nstrike = 100\npsi = call\nmaturity = 1\n\
        sigma.kind = exp\nsigma.base = 0.2\nsigma.rate = 0.1\n\
        r.kind = exp\nr.base = 0.08\nr.rate = -0.2\n\
        y.kind = exp\ny.base = 0.005\ny.rate = 0.3\n";

    fn scenario(dir: &Path, name: &str, text: &str) -> String {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p.display().to_string()
    }

    fn go(args: &[&str]) -> Outcome {
        run(std::iter::once("powersym").chain(args.iter().copied()))
    }

    fn rows(csv: &str) -> Vec<Vec<f64>> {
        csv.lines()
            .skip(1)
            .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
            .collect()
    }

    #[test]
    fn zero_payoff_price_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(dir.path(), "v.scenario", VANILLA);
        let out = go(&["price", "--scenario", &sc, "--branch", "zero-payoff", "--spot", "100", "--time", "0"]);
        assert_eq!(out.code, 0, "{}", out.stderr);
        assert!(out.stdout.starts_with("S,t,V,pde_residual\n"));
        assert_eq!(rows(&out.stdout), vec![vec![100.0, 0.0, 0.0, 0.0]]);
    }

    #[test]
    fn missing_strike_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(dir.path(), "v.scenario", &VANILLA.replace("strike = 100\n", ""));
        let out = go(&["price", "--scenario", &sc, "--branch", "call-payoff", "--spot", "100"]);
        assert_eq!(out.code, 2);
        assert!(out.stderr.contains("`strike`"), "{}", out.stderr);
    }

    #[test]
    fn price_flag_validation() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(dir.path(), "v.scenario", VANILLA);
        for bad in [
            vec!["--spot", "100", "--time", "1"],
            vec!["--spot", "100", "--time", "-0.1"],
            vec!["--spot", "-5"],
        ] {
            let mut args = vec!["price", "--scenario", sc.as_str(), "--branch", "call-payoff"];
            args.extend(bad);
            assert_eq!(go(&args).code, 2);
        }
        assert_eq!(go(&["price", "--scenario", &sc, "--branch", "nope", "--spot", "1"]).code, 2);
        let missing = dir.path().join("absent.scenario").display().to_string();
        assert_eq!(go(&["price", "--scenario", &missing, "--branch", "zero-payoff", "--spot", "1"]).code, 2);
    }

    #[test]
    fn closed_backend_rejection_carries_stage_tag() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(dir.path(), "v.scenario", VANILLA);
        let out = go(&["price", "--scenario", &sc, "--branch", "call-payoff", "--spot", "100", "--backend", "closed"]);
        assert_eq!(out.code, 1);
        assert!(out.stderr.contains("[closed-form]"), "{}", out.stderr);
    }

    #[test]
    fn verify_all_zero_constants_is_exactly_zero() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(dir.path(), "v.scenario", VANILLA);
        let out = go(&["verify-symmetry", "--scenario", &sc, "--constants", "theta1=0,theta2=0,gamma1=0,gamma2=0,alpha1=0,k1=0", "--samples", "8"]);
        assert_eq!(out.code, 0, "{}", out.stderr);
        assert!(out.stdout.starts_with("t,Rb,Rc,Rd\n"));
        let r = rows(&out.stdout);
        assert_eq!(r.len(), 8);
        assert!(r.iter().all(|row| row[1..] == [0.0, 0.0, 0.0]));
        assert!(r.iter().all(|row| row[0] > 0.0 && row[0] < 1.0));
    }

    #[test]
    fn verify_theta1_on_constant_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(dir.path(), "v.scenario", VANILLA);
        for backend in ["ode", "closed"] {
            let out = go(&["verify-symmetry", "--scenario", &sc, "--constants", "theta1=1", "--samples", "5", "--backend", backend]);
            assert_eq!(out.code, 0, "{}", out.stderr);
            for row in rows(&out.stdout) {
                assert_eq!((row[1], row[2]), (0.0, 0.0));
                assert!(row[3] < DEFAULT_VERIFY_TOL);
            }
            assert!(out.stderr.contains("note: backend consistency"), "{}", out.stderr);
            assert!(out.stderr.contains("generator_decay_ratio[1]"), "{}", out.stderr);
        }
    }

    #[test]
    fn verify_smooth_time_varying_ode_backend() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(dir.path(), "s.scenario", SMOOTH);
        let out = go(&[
            "verify-symmetry", "--scenario", &sc, "--constants",
            "theta1=0.3,theta2=-1.2,gamma1=0.5,gamma2=2,alpha1=0.7", "--samples", "64", "--tol", "1e-7",
        ]);
        assert_eq!(out.code, 0, "{}", out.stderr);
        assert_eq!(rows(&out.stdout).len(), 64);
    }

    #[test]
    fn verify_names_the_singular_time() {
        let dir = tempfile::tempdir().unwrap();
        let text = VANILLA.replace(
            "r.kind = constant\nr.value = 0.05\n",
            "r.kind = piecewise_linear\nr.times = 0, 1\nr.values = 0.04, 0\n",
        );
        let sc = scenario(dir.path(), "s.scenario", &text);
        let out = go(&["verify-symmetry", "--scenario", &sc]);
        assert_eq!(out.code, 1);
        assert!(out.stderr.contains("singular at t=0.5"), "{}", out.stderr);
        let bad = go(&["verify-symmetry", "--scenario", &sc, "--constants", "theta9=1"]);
        assert_eq!(bad.code, 2);
    }

    #[test]
    fn mc_without_volatility_has_zero_stderr() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(dir.path(), "f.scenario", &VANILLA.replace("sigma.value = 0.2", "sigma.value = 0"));
        let out = go(&["oracle", "mc", "--scenario", &sc, "--spot", "100", "--paths", "2000", "--seed", "7"]);
        assert_eq!(out.code, 0, "{}", out.stderr);
        assert!(out.stdout.starts_with("mean,stderr,paths,seed\n"));
        let line = out.stdout.lines().nth(1).unwrap();
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(&cells[2..], ["2000", "7"]);
        let forward = 100.0 - 100.0 * (-0.05f64).exp();
        assert!((cells[0].parse::<f64>().unwrap() - forward).abs() < 1e-9);
        // the FD oracle needs a diffusion
        assert_eq!(go(&["oracle", "fd", "--scenario", &sc]).code, 2);
    }

    #[test]
    fn fd_surface_terminal_row_and_vanilla_value() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(dir.path(), "v.scenario", VANILLA);
        let out = go(&["oracle", "fd", "--scenario", &sc, "--spot", "100", "--ns", "400", "--nt", "400"]);
        assert_eq!(out.code, 0, "{}", out.stderr);
        assert!(out.stdout.starts_with("S,t,V\n"));
        let r = rows(&out.stdout);
        assert_eq!(r.len(), 401 * 401);
        for row in r.iter().filter(|row| row[1] == 1.0) {
            assert_eq!(row[2], (row[0] - 100.0).max(0.0));
        }
        let file = crate::scenario::parse_scenario(VANILLA).unwrap();
        let surface = fd_price(&file.scenario, 400, 400, 4.0).unwrap();
        assert!((surface.value_at(100.0, 0.0).unwrap() - 10.4506).abs() < 1e-3);
        assert!(out.stderr.contains("PASS terminal_payoff_mismatch"));
    }

    #[test]
    fn unattainable_compare_tolerance_fails() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(dir.path(), "v.scenario", VANILLA);
        let out = go(&["compare", "--scenario", &sc, "--branch", "call-payoff", "--spots", "90,110", "--tol", "1e-12", "--paths", "20000"]);
        assert_eq!(out.code, 1);
        assert!(out.stdout.starts_with("S,V_sym,V_fd,V_mc,mc_stderr,abs_diff,rel_diff\n"));
        assert!(out.stderr.contains("FAIL max_rel_diff"), "{}", out.stderr);
        assert!(out.stderr.contains("bound 1e-12"), "{}", out.stderr);
    }

    #[test]
    fn zero_payoff_compare_passes() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(dir.path(), "v.scenario", VANILLA);
        let out = go(&["compare", "--scenario", &sc, "--branch", "zero-payoff"]);
        assert_eq!(out.code, 0, "{}", out.stderr);
        assert_eq!(rows(&out.stdout).len(), 5);
    }

    #[test]
    fn out_flag_writes_file_and_keeps_stdout_empty() {
        let dir = tempfile::tempdir().unwrap();
        let sc = scenario(dir.path(), "v.scenario", VANILLA);
        let target = dir.path().join("p.csv");
        let t = target.display().to_string();
        let out = go(&["price", "--scenario", &sc, "--branch", "zero-payoff", "--spot", "90,100", "--out", &t]);
        assert_eq!(out.code, 0);
        assert!(out.stdout.is_empty());
        assert_eq!(fs::read_to_string(&target).unwrap().lines().count(), 3);
        assert!(out.stderr.contains(&format!("output: {t}")));
    }

    #[test]
    fn sweep_empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let (input, out_dir) = (dir.path().join("in"), dir.path().join("out"));
        fs::create_dir(&input).unwrap();
        let out = go(&["sweep", "--scenario-dir", input.to_str().unwrap(), "--command", "compare", "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.code, 0, "{}", out.stderr);
        assert_eq!(fs::read_to_string(out_dir.join("summary.csv")).unwrap(), "scenario,status,detail\n");
    }

    #[test]
    fn sweep_records_invalid_files_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        let (input, out_dir) = (dir.path().join("in"), dir.path().join("out"));
        fs::create_dir(&input).unwrap();
        scenario(&input, "good.scenario", VANILLA);
        scenario(&input, "bad.scenario", "beta = 1\n");
        let out = go(&[
            "sweep", "--scenario-dir", input.to_str().unwrap(), "--command", "compare", "--branch", "zero-payoff",
            "--out", out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.code, 1);
        let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("bad.scenario,CONFIG-ERROR,"), "{summary}");
        assert!(lines[2].starts_with("good.scenario,PASS,"), "{summary}");
        assert!(out_dir.join("good.csv").exists());
        assert!(!out_dir.join("bad.csv").exists());
    }

    #[test]
    fn sweep_matches_sequential_runs() {
        let dir = tempfile::tempdir().unwrap();
        let (input, out_dir) = (dir.path().join("in"), dir.path().join("out"));
        fs::create_dir(&input).unwrap();
        let variants = [
            VANILLA.to_string(),
            VANILLA.replace("beta = 1", "beta = 2"),
            VANILLA.replace("sigma.value = 0.2", "sigma.value = 0.3"),
            VANILLA.replace("strike = 100", "strike = 90"),
            SMOOTH.to_string(),
        ];
        for (k, text) in variants.iter().enumerate() {
            scenario(&input, &format!("s{k}.scenario"), text);
        }
        let out = go(&["sweep", "--scenario-dir", input.to_str().unwrap(), "--command", "price", "--out", out_dir.to_str().unwrap()]);
        assert!(out.code == 0 || out.code == 1, "{}", out.stderr);
        for k in 0..variants.len() {
            let path = input.join(format!("s{k}.scenario"));
            let file = load_scenario(&path).unwrap();
            let single = go(&[
                "price", "--scenario", path.to_str().unwrap(), "--branch", "call-payoff",
                "--spot", &file.scenario.kink_spot().to_string(),
            ]);
            assert_eq!(fs::read_to_string(out_dir.join(format!("s{k}.csv"))).unwrap(), single.stdout);
        }
        let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 1 + variants.len());
    }

    #[test]
    fn auto_domain_covers_far_spots() {
        let file = crate::scenario::parse_scenario(&VANILLA.replace("beta = 1", "beta = 2")).unwrap();
        let m = auto_domain_mult(&file.scenario, &[80.0, 120.0]);
        assert_eq!(m, 18.0);
        assert_eq!(auto_domain_mult(&file.scenario, &[]), 4.0);
        assert_eq!(default_spots(&file.scenario).len(), 5);
    }
}
