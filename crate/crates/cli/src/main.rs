use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use absstab::constraints::lift;
use absstab::io;
use absstab::matcore::{Mat, Vector};
use absstab::plant::{
    check_assumptions, collect_dataset, linspace, simulate_continuous, simulate_discrete,
    Assumptions, IntegratorOptions, TimeDomain,
};
use absstab::sdpcore::SolverOptions;
use absstab::synth::{self, Method, Outcome, SynthesisSpec};
use absstab::verify::{self, SimulationSetup, VerifyOptions};
use absstab::Error;

mod demo;

pub const EXIT_OK: u8 = 0;
pub const EXIT_STRUCTURAL: u8 = 1;
pub const EXIT_INFEASIBLE: u8 = 2;
pub const EXIT_VERIFY_FAILED: u8 = 3;
pub const EXIT_INCONCLUSIVE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "absstab",
    version,
    about = "Data-driven absolute stabilization of Lurie systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an open-loop experiment and write the data matrices.
    Simulate(SimulateArgs),
    /// Solve a synthesis program and write a certificate.
    Synthesize(SynthesizeArgs),
    /// Check a certificate against data and write a report.
    Verify(VerifyArgs),
    /// End-to-end run of a bundled scenario.
    Demo(DemoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InputKind {
    Sin,
    Zero,
    Random,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "sin")]
    input: InputKind,
    /// Time interval (continuous time); ignored for discrete models.
    #[arg(long, num_args = 2, value_names = ["T0", "TF"], default_values_t = [0.0, 1.0], allow_negative_numbers = true)]
    horizon: Vec<f64>,
    #[arg(long)]
    samples: usize,
    /// Initial state, e.g. "[2;-1]". Defaults to the origin.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    atol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Strictness margin factor (scaled by the data magnitude).
    #[arg(long, default_value_t = 1e-7)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
            ..SolverOptions::default()
        }
    }
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    constraint: PathBuf,
    #[arg(long)]
    method: String,
    /// Input matrix of the nonlinearity, e.g. "[-2;-2.4]".
    #[arg(long = "L", allow_hyphen_values = true)]
    l: Option<String>,
    /// Decay rate for the discrete-time variants.
    #[arg(long)]
    decay: Option<f64>,
    /// Bisect the smallest feasible decay rate in (0, 1).
    #[arg(long, conflicts_with = "decay")]
    bisect_decay: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    cert: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    constraint: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Ground-truth plant for the closed-loop simulation check.
    #[arg(long)]
    with_model: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Simulation horizon (seconds, or steps for discrete models).
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    eq_tol: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq, Debug)]
pub enum DemoName {
    Example1,
    Example2,
    Example3,
    DtRandom,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(value_enum)]
    name: DemoName,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the generated model, data, certificate and report.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure carrying an exit code.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: EXIT_STRUCTURAL,
            message: e.to_string(),
        }
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

fn parse_matrix(s: &str, what: &str) -> std::result::Result<Mat, Failure> {
    io::parse_bracket(s).map_err(|e| Failure {
        code: EXIT_STRUCTURAL,
        message: format!("{what}: {e}"),
    })
}

fn parse_vector(s: &str, n: usize, what: &str) -> std::result::Result<Vector, Failure> {
    let m = parse_matrix(s, what)?;
    if m.len() != n || (m.nrows() != 1 && m.ncols() != 1) {
        return Err(Failure {
            code: EXIT_STRUCTURAL,
            message: format!(
                "{what}: expected a vector of length {n}, got {}x{}",
                m.nrows(),
                m.ncols()
            ),
        });
    }
    Ok(Vector::from_iterator(n, m.iter().copied()))
}

pub fn assumption_summary(a: &Assumptions, d: &absstab::plant::DataSet) -> String {
    let tag = |full: bool| {
        if full {
            "full row rank"
        } else {
            "rank deficient"
        }
    };
    format!(
        "rank W0 = {}/{} ({}), rank Psi0 = {}/{} ({}), rank X0 = {}/{} ({})",
        a.rank_w0,
        d.m() + d.n(),
        tag(a.full_w0),
        a.rank_psi0,
        d.m() + d.n() + d.q(),
        tag(a.full_psi0),
        a.rank_x0,
        d.n(),
        tag(a.full_x0)
    )
}

fn cmd_simulate(a: &SimulateArgs) -> CmdResult {
    let model = io::read_model(&a.model)?;
    if a.samples == 0 {
        return Err(Error::InvalidInput("--samples must be positive".into()).into());
    }
    let (n, m) = (model.n(), model.m());
    let x0 = match &a.x0 {
        Some(s) => parse_vector(s, n, "--x0")?,
        None => Vector::zeros(n),
    };
    let traj = match model.domain {
        TimeDomain::Discrete => {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(a.seed);
            let inputs: Vec<Vector> = (0..a.samples)
                .map(|k| match a.input {
                    InputKind::Sin => Vector::from_element(m, (k as f64).sin()),
                    InputKind::Zero => Vector::zeros(m),
                    InputKind::Random => {
                        Vector::from_fn(m, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0))
                    }
                })
                .collect();
            simulate_discrete(&model, &x0, &inputs)?
        }
        TimeDomain::Continuous => {
            let input: Box<dyn Fn(f64) -> Vector> = match a.input {
                InputKind::Sin => Box::new(move |t: f64| Vector::from_element(m, t.sin())),
                InputKind::Zero => Box::new(move |_| Vector::zeros(m)),
                InputKind::Random => {
                    return Err(Error::Unsupported(
                        "random input is available for discrete models only".into(),
                    )
                    .into())
                }
            };
            let times = linspace(a.horizon[0], a.horizon[1], a.samples);
            let opts = IntegratorOptions {
                rtol: a.rtol,
                atol: a.atol,
                ..IntegratorOptions::default()
            };
            simulate_continuous(&model, &x0, input, &times, &opts)?
        }
    };
    let data = collect_dataset(&traj, &(0..a.samples).collect::<Vec<_>>())?;
    io::write_dataset(&a.out, &data)?;
    let asm = check_assumptions(&data)?;
    println!("wrote {} samples to {}", data.samples(), a.out.display());
    println!("{}", assumption_summary(&asm, &data));
    Ok(())
}

pub fn outcome_failure(o: &Outcome) -> Option<Failure> {
    match o {
        Outcome::Certified(_) => None,
        Outcome::Infeasible(note) => Some(Failure {
            code: EXIT_INFEASIBLE,
            message: format!("INFEASIBLE: {note}"),
        }),
        Outcome::Inconclusive(note) => Some(Failure {
            code: EXIT_INCONCLUSIVE,
            message: format!("INCONCLUSIVE: {note}"),
        }),
    }
}

fn cmd_synthesize(a: &SynthesizeArgs) -> CmdResult {
    let data = io::read_dataset(&a.data)?;
    let c = io::read_constraint(&a.constraint)?;
    let method: Method = a.method.parse()?;
    let lc = lift(&c, data.n())?;
    let mut spec = SynthesisSpec::new(method);
    spec.strictness_eps = a.solver.eps;
    spec.solver = a.solver.options();
    spec.decay_rho = a.decay;
    if let Some(l) = &a.l {
        spec.l = Some(parse_matrix(l, "--L")?);
    }
    let outcome = if a.bisect_decay {
        match synth::bisect_decay(&data, &lc, &spec, 0.0, 1.0 - 1e-6, 20)? {
            Some((rho, cert)) => {
                println!("smallest feasible decay rate on the bisection grid: {rho:.6}");
                Outcome::Certified(Box::new(cert))
            }
            None => Outcome::Infeasible("no decay rate below 1 is feasible".into()),
        }
    } else {
        synth::synthesize(&data, &lc, &spec)?
    };
    if let Some(f) = outcome_failure(&outcome) {
        return Err(f);
    }
    let Outcome::Certified(cert) = outcome else {
        unreachable!()
    };
    io::write_certificate(&a.out, &cert)?;
    println!("FEASIBLE ({})", cert.method);
    println!("K = {}", io::format_bracket(&cert.k));
    if let Some(m) = &cert.m {
        println!("M = {}", io::format_bracket(m));
    }
    println!("P = {}", io::format_bracket(cert.p.as_mat()));
    if let Some(s) = &cert.solver_stats {
        println!(
            "solver: {} iterations, margin {:.3e}, {:.3} s",
            s.iterations, s.achieved_margin, s.runtime_secs
        );
    }
    Ok(())
}

pub fn print_report(r: &verify::VerificationReport) {
    for c in &r.checks {
        println!(
            "  [{}] {:<28} residual {:>11.3e}  tol {:>10.3e}  {}",
            if c.pass { "pass" } else { "FAIL" },
            c.name,
            c.residual,
            c.tolerance,
            c.details
        );
    }
    for i in &r.informational {
        println!(
            "  [info] {:<28} {} ({})",
            i.name,
            if i.raised { "raised" } else { "not raised" },
            i.details
        );
    }
    println!("overall: {}", if r.overall { "PASS" } else { "FAIL" });
}

fn cmd_verify(a: &VerifyArgs) -> CmdResult {
    let cert = io::read_certificate(&a.cert)?;
    let data = io::read_dataset(&a.data)?;
    let c = io::read_constraint(&a.constraint)?;
    let lc = lift(&c, data.n())?;
    let opts = VerifyOptions {
        n_samples: a.samples,
        seed: a.seed,
        eq_tol: a.eq_tol,
        ..VerifyOptions::default()
    };
    let sim = match &a.with_model {
        Some(p) => {
            let model = io::read_model(p)?;
            let x0 = match &a.x0 {
                Some(s) => parse_vector(s, model.n(), "--x0")?,
                None => Vector::from_iterator(model.n(), data.x0.column(0).iter().copied()),
            };
            let horizon = a.horizon.unwrap_or(match model.domain {
                TimeDomain::Discrete => 400.0,
                TimeDomain::Continuous => 300.0,
            });
            Some(SimulationSetup {
                model,
                x0,
                horizon,
                opts: IntegratorOptions::with_tol(1e-9),
            })
        }
        None => None,
    };
    let report = verify::verify_certificate(&cert, &data, &lc, &opts, sim.as_ref())?;
    print_report(&report);
    if let Some(p) = &a.report {
        io::write_report(p, &report)?;
    }
    if report.overall {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY_FAILED,
            message: "verification failed".into(),
        })
    }
}

pub fn ensure_dir(p: &Path) -> std::result::Result<(), Failure> {
    std::fs::create_dir_all(p).map_err(|e| Failure::from(Error::Io(e)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Synthesize(a) => cmd_synthesize(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Demo(a) => demo::run(a.name, a.seed, a.out.as_deref()),
    };
    match r {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
