//! Command-line front end. [`run`] parses arguments, writes artifacts and
//! returns the process exit code.

mod output;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use crate::assignment::{
    flow_metrics, marginal_regret, ue_reference, AssignmentError, UeReference,
};
use crate::netmodel::{
    gen_synthetic, parallel_network, parse_network, parse_tntp, InstanceConfig, InstanceError,
    NetError, Network, ProblemInstance, SyntheticSpec, SIOUX_FALLS,
};
use crate::nlp::SolveOptions;
use crate::oracle::{
    best_response_ue, grid_search_best, lipschitz_bound, GridObjective, GridOutcome, GridSpec,
    OracleError, DEFAULT_MAX_CELLS,
};
use crate::schemes::{
    solve_aops, solve_aops_ept, solve_cpurr_from, solve_ops, solve_so, solve_ue, Scheme,
    SchemeError, SchemeOptions, SchemeResult,
};

pub use output::{write_results, RunMeta};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

/// Default agreement bound between the best-response and MPCC equilibria.
pub const UE_CERTIFY_TOL: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(
    name = "freight-pricing",
    version,
    about = "Pricing and routing schemes for freight traffic"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an instance and print its size.
    Validate(InstanceArgs),
    /// User equilibrium.
    Ue(SolveArgs),
    /// System optimum.
    So(SolveArgs),
    /// Optimum pricing scheme.
    Ops(SolveArgs),
    /// Approximately optimum pricing scheme.
    Aops(SolveArgs),
    /// AOPS with truthfulness in every scenario.
    #[command(name = "aops-ept")]
    AopsEpt(SolveArgs),
    /// Route tolls with zero net revenue.
    Cpurr(SolveArgs),
    /// Any single scheme, chosen with --scheme.
    Solve {
        #[arg(long)]
        scheme: Scheme,
        #[command(flatten)]
        args: SolveArgs,
    },
    /// UE, SO, OPS, AOPS and CPURR against one shared UE.
    Compare(SolveArgs),
    /// Repeat a comparison over several values of lambda.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        lambdas: Vec<f64>,
        /// Schemes to report besides the UE.
        #[arg(long, value_delimiter = ',', default_value = "so,ops,aops")]
        scheme: Vec<Scheme>,
        #[command(flatten)]
        args: SolveArgs,
    },
    /// Cross-check solver results against the brute-force oracles.
    Certify {
        #[arg(long, value_delimiter = ',', default_value = "ue,so")]
        scheme: Vec<Scheme>,
        /// Grid spacing on each routing simplex.
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_CELLS)]
        max_cells: u64,
        #[command(flatten)]
        args: SolveArgs,
    },
    /// Write a synthetic instance and its network.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    /// Instance file.
    #[arg(long)]
    pub instance: PathBuf,
    /// Network file; overrides the one named in the instance.
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random starts for programs without a warm start.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write the routing and payment tensors.
    #[arg(long)]
    pub emit_tensors: bool,
    #[arg(long, default_value_t = 1e-6)]
    pub tol_step: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol_constraint: f64,
    #[arg(long, default_value_t = 5e-5)]
    pub tol_cpurr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    SiouxFalls,
    ThreeRoute,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "sioux-falls")]
    pub preset: Preset,
    /// Topology to use instead of the preset's built-in network.
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Output directory for `network.net` and `instance.toml`.
    #[arg(long, default_value = "instance")]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Network { path: String, source: NetError },
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

pub fn execute(command: &Command) -> Result<i32, CliError> {
    match command {
        Command::Validate(a) => validate(a),
        Command::Ue(a) => single(Scheme::Ue, a),
        Command::So(a) => single(Scheme::So, a),
        Command::Ops(a) => single(Scheme::Ops, a),
        Command::Aops(a) => single(Scheme::Aops, a),
        Command::AopsEpt(a) => single(Scheme::AopsEpt, a),
        Command::Cpurr(a) => single(Scheme::Cpurr, a),
        Command::Solve { scheme, args } => single(*scheme, args),
        Command::Compare(a) => compare(a),
        Command::Sweep {
            lambdas,
            scheme,
            args,
        } => sweep(lambdas, scheme, args),
        Command::Certify {
            scheme,
            step,
            max_cells,
            args,
        } => certify(
            scheme,
            &GridSpec {
                step: *step,
                max_cells: *max_cells,
            },
            args,
        ),
        Command::Gen(a) => generate(a),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Reads a network in the native link-table format, or TNTP when the file
/// carries TNTP metadata tags.
pub fn load_network(path: &Path) -> Result<Network, CliError> {
    let text = read(path)?;
    let parsed = if text.contains("<NUMBER OF") {
        parse_tntp(&text)
    } else {
        parse_network(&text)
    };
    parsed.map_err(|source| CliError::Network {
        path: path.display().to_string(),
        source,
    })
}

/// Loads the instance, its network and any weight overrides.
pub fn load(args: &InstanceArgs) -> Result<(ProblemInstance, PathBuf), CliError> {
    let config = InstanceConfig::parse(&read(&args.instance)?)?;
    let net_path = match (&args.network, &config.network) {
        (Some(p), _) => p.clone(),
        (None, Some(rel)) => args.instance.parent().unwrap_or(Path::new(".")).join(rel),
        (None, None) => {
            return Err(CliError::Usage(
                "no network: pass --network or set `network` in the instance file".into(),
            ))
        }
    };
    let inst = config.build(&load_network(&net_path)?)?;
    let inst = match (args.lambda, args.mu) {
        (None, None) => inst,
        (l, m) => inst.with_weights(l.unwrap_or(inst.lambda()), m.unwrap_or(inst.mu()))?,
    };
    Ok((inst, net_path))
}

impl SolveArgs {
    pub fn options(&self) -> SchemeOptions {
        SchemeOptions {
            nlp: SolveOptions {
                step_tol: self.tol_step,
                constraint_tol: self.tol_constraint,
                multistart: self.restarts,
                seed: self.seed,
                ..SolveOptions::default()
            },
            cpurr_constraint_tol: self.tol_cpurr,
        }
    }
}

fn validate(args: &InstanceArgs) -> Result<i32, CliError> {
    let (inst, net_path) = load(args)?;
    let net = inst.network();
    println!(
        "network {} ({} nodes, {} links)",
        net_path.display(),
        net.node_count(),
        net.link_count()
    );
    println!(
        "{} OD pairs, {} routes, {} classes, {} scenarios, lambda {}, mu {}",
        inst.n_od(),
        inst.n_routes(),
        inst.n_classes(),
        inst.n_scenarios(),
        inst.lambda(),
        inst.mu()
    );
    Ok(EXIT_OK)
}

/// Results for `wanted` plus the UE, in [`Scheme::ALL`] order. Pricing
/// schemes share one UE; SO, OPS and AOPS are chained through warm starts
/// (AOPS, then OPS from AOPS, then SO from OPS), and CPURR starts from the
/// UE.
pub fn solve_chain(
    inst: &ProblemInstance,
    wanted: &[Scheme],
    opts: &SchemeOptions,
) -> Result<Vec<SchemeResult>, CliError> {
    let want = |s: Scheme| wanted.contains(&s);
    let ue = solve_ue(inst, opts)?;
    let ue_ref = ue_reference(inst, &ue.policy)?;
    let mut out = vec![ue.clone()];
    let aops = if want(Scheme::Aops) || want(Scheme::Ops) || want(Scheme::So) {
        Some(solve_aops(inst, &ue_ref, opts)?)
    } else {
        None
    };
    let ops = if want(Scheme::Ops) || want(Scheme::So) {
        Some(solve_ops(inst, &ue_ref, opts, aops.as_ref())?)
    } else {
        None
    };
    if want(Scheme::So) {
        out.push(solve_so(
            inst,
            &ue_ref,
            opts,
            ops.as_ref().map(|r| &r.policy),
        )?);
    }
    if let Some(r) = ops.filter(|_| want(Scheme::Ops)) {
        out.push(r);
    }
    if let Some(r) = aops.filter(|_| want(Scheme::Aops)) {
        out.push(r);
    }
    if want(Scheme::AopsEpt) {
        out.push(solve_aops_ept(inst, &ue_ref, opts)?);
    }
    if want(Scheme::Cpurr) {
        out.push(solve_cpurr_from(inst, &ue, opts)?);
    }
    Ok(out)
}

/// One scheme on its own; pricing schemes solve their UE first but report
/// only themselves.
pub fn solve_single(
    inst: &ProblemInstance,
    scheme: Scheme,
    opts: &SchemeOptions,
) -> Result<SchemeResult, CliError> {
    let ue = solve_ue(inst, opts)?;
    if scheme == Scheme::Ue {
        return Ok(ue);
    }
    let ue_ref = ue_reference(inst, &ue.policy)?;
    Ok(match scheme {
        Scheme::Ue => unreachable!(),
        Scheme::So => solve_so(inst, &ue_ref, opts, None)?,
        Scheme::Ops => solve_ops(inst, &ue_ref, opts, None)?,
        Scheme::Aops => solve_aops(inst, &ue_ref, opts)?,
        Scheme::AopsEpt => solve_aops_ept(inst, &ue_ref, opts)?,
        Scheme::Cpurr => solve_cpurr_from(inst, &ue, opts)?,
    })
}

/// 2 if any solve failed to converge, else 3 if any verification failed.
pub fn exit_code(results: &[SchemeResult], opts: &SchemeOptions) -> i32 {
    let tol = opts.tolerances();
    if results.iter().any(|r| !r.solver.converged()) {
        EXIT_NOT_CONVERGED
    } else if results.iter().any(|r| !r.verified(&tol)) {
        EXIT_VERIFICATION
    } else {
        EXIT_OK
    }
}

fn report(
    command: &str,
    args: &SolveArgs,
    net_path: &Path,
    runs: &[(ProblemInstance, Vec<SchemeResult>)],
) -> Result<i32, CliError> {
    let opts = args.options();
    let meta = RunMeta::new(command, args, net_path, runs);
    write_results(
        &args.out,
        runs,
        &opts.tolerances(),
        args.emit_tensors,
        &meta,
    )?;
    let all: Vec<SchemeResult> = runs.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    for (inst, results) in runs {
        for r in results {
            let status = if r.verified(&opts.tolerances()) {
                "verified"
            } else {
                "NOT verified"
            };
            eprintln!(
                "{:<8} lambda {:<5} objective {:>14.6}  {}  {}",
                r.scheme.name(),
                inst.lambda(),
                r.metrics.objective,
                r.solver.status,
                status
            );
        }
    }
    Ok(exit_code(&all, &opts))
}

fn single(scheme: Scheme, args: &SolveArgs) -> Result<i32, CliError> {
    let (inst, net_path) = load(&args.instance)?;
    let result = solve_single(&inst, scheme, &args.options())?;
    report(
        &scheme.name().to_lowercase(),
        args,
        &net_path,
        &[(inst, vec![result])],
    )
}

/// Schemes reported by `compare`.
pub const COMPARE_SCHEMES: [Scheme; 5] = [
    Scheme::Ue,
    Scheme::So,
    Scheme::Ops,
    Scheme::Aops,
    Scheme::Cpurr,
];

fn compare(args: &SolveArgs) -> Result<i32, CliError> {
    let (inst, net_path) = load(&args.instance)?;
    let results = solve_chain(&inst, &COMPARE_SCHEMES, &args.options())?;
    report("compare", args, &net_path, &[(inst, results)])
}

fn sweep(lambdas: &[f64], schemes: &[Scheme], args: &SolveArgs) -> Result<i32, CliError> {
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(CliError::Usage(format!(
            "sweep values must lie in [0, 1], got {l}"
        )));
    }
    if lambdas.is_empty() {
        return Err(CliError::Usage("sweep needs at least one lambda".into()));
    }
    let (base, net_path) = load(&args.instance)?;
    let opts = args.options();
    let runs: Vec<(ProblemInstance, Vec<SchemeResult>)> = lambdas
        .par_iter()
        .map(|&l| {
            let inst = base.with_weights(l, base.mu())?;
            let results = solve_chain(&inst, schemes, &opts)?;
            Ok((inst, results))
        })
        .collect::<Result<_, CliError>>()?;
    report("sweep", args, &net_path, &runs)
}

/// One certification outcome: oracle and solver values with the accepted
/// gap.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub scheme: Scheme,
    pub oracle_value: Option<f64>,
    pub solver_value: f64,
    /// Solver minus oracle objective, or the largest routing difference for
    /// the UE.
    pub gap: f64,
    pub bound: f64,
    pub pass: bool,
    pub note: String,
}

pub const CERTIFY_HEADER: &str = "scheme,oracle_value,solver_value,gap,bound,verdict";

impl Certificate {
    pub fn csv_row(&self) -> String {
        let oracle = self
            .oracle_value
            .map_or_else(|| "none".to_string(), |v| format!("{v:.6}"));
        format!(
            "{},{},{:.6},{:.6e},{:.6e},{}",
            self.scheme.name(),
            oracle,
            self.solver_value,
            self.gap,
            self.bound,
            if self.pass { "pass" } else { "fail" }
        )
    }
}

/// Certifies each scheme of `schemes` on a small instance.
pub fn certify_instance(
    inst: &ProblemInstance,
    schemes: &[Scheme],
    grid: &GridSpec,
    opts: &SchemeOptions,
) -> Result<Vec<Certificate>, CliError> {
    grid.validate()?;
    let ue = solve_ue(inst, opts)?;
    let ue_ref: UeReference = ue_reference(inst, &ue.policy)?;
    let bound = lipschitz_bound(inst) * grid.effective_step();
    let mut out = Vec::new();
    for &scheme in schemes {
        let cert = match scheme {
            Scheme::Ue => {
                let (oracle_value, gap, regret, note) = match best_response_ue(inst, 10_000, 1.0) {
                    Ok(br) => {
                        let gap = br
                            .as_slice()
                            .iter()
                            .zip(ue.policy.as_slice())
                            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                        let regret = marginal_regret(inst, &br);
                        (
                            Some(flow_metrics(inst, &br).objective),
                            gap,
                            regret,
                            format!("regret {regret:.3e}"),
                        )
                    }
                    Err(e) => (None, f64::INFINITY, f64::INFINITY, e.to_string()),
                };
                Certificate {
                    scheme,
                    oracle_value,
                    solver_value: ue.metrics.objective,
                    gap,
                    bound: UE_CERTIFY_TOL,
                    pass: gap <= UE_CERTIFY_TOL && regret <= crate::schemes::REGRET_TOL,
                    note,
                }
            }
            Scheme::So | Scheme::Aops | Scheme::AopsEpt => {
                let (objective, solved) = match scheme {
                    Scheme::So => (GridObjective::So, solve_so(inst, &ue_ref, opts, None)?),
                    Scheme::Aops => (
                        GridObjective::Aops(&ue_ref),
                        solve_aops(inst, &ue_ref, opts)?,
                    ),
                    _ => (
                        GridObjective::AopsEpt(&ue_ref),
                        solve_aops_ept(inst, &ue_ref, opts)?,
                    ),
                };
                let grid_out = grid_search_best(inst, objective, grid)?;
                let solver_value = solved.metrics.objective;
                match grid_out {
                    GridOutcome::Best { value, cells, .. } => Certificate {
                        scheme,
                        oracle_value: Some(value),
                        solver_value,
                        gap: solver_value - value,
                        bound,
                        pass: solver_value <= value + bound,
                        note: format!("{cells} cells"),
                    },
                    GridOutcome::NoFeasibleCell { cells } => Certificate {
                        scheme,
                        oracle_value: None,
                        solver_value,
                        gap: 0.0,
                        bound,
                        pass: true,
                        note: format!("no feasible cell among {cells}"),
                    },
                }
            }
            other => return Err(CliError::Usage(format!("no oracle for {other}"))),
        };
        out.push(cert);
    }
    Ok(out)
}

fn certify(schemes: &[Scheme], grid: &GridSpec, args: &SolveArgs) -> Result<i32, CliError> {
    let (inst, _) = load(&args.instance)?;
    let certs = certify_instance(&inst, schemes, grid, &args.options())?;
    let mut text = String::from(CERTIFY_HEADER);
    text.push('\n');
    for c in &certs {
        text.push_str(&c.csv_row());
        text.push('\n');
    }
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let path = args.out.join("certify.csv");
    fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
    print!("{text}");
    for c in &certs {
        eprintln!("{}: {}", c.scheme.name(), c.note);
    }
    Ok(if certs.iter().all(|c| c.pass) {
        EXIT_OK
    } else {
        EXIT_VERIFICATION
    })
}

fn generate(args: &GenArgs) -> Result<i32, CliError> {
    let (net, mut spec) = match args.preset {
        Preset::SiouxFalls => (
            parse_network(SIOUX_FALLS).expect("bundled network parses"),
            SyntheticSpec::sioux_falls(),
        ),
        Preset::ThreeRoute => (parallel_network(3), SyntheticSpec::three_route()),
    };
    let net = match &args.network {
        Some(p) => load_network(p)?,
        None => net,
    };
    spec.lambda = args.lambda.unwrap_or(spec.lambda);
    spec.mu = args.mu.unwrap_or(spec.mu);
    let inst = gen_synthetic(&net, args.seed, &spec)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let net_path = args.out.join("network.net");
    fs::write(&net_path, inst.network().to_text()).map_err(|e| CliError::io(&net_path, e))?;
    let inst_path = args.out.join("instance.toml");
    let config = InstanceConfig::from_instance(&inst, Some("network.net".into()));
    fs::write(&inst_path, config.to_toml()).map_err(|e| CliError::io(&inst_path, e))?;
    println!("{}", inst_path.display());
    Ok(EXIT_OK)
}
