//! Command-line driver: simulations, verification suites, scans and the
//! perturbation, second-order and rate experiments.
//!
//! Every command writes its primary document to stdout, or into `--out DIR`
//! together with a `manifest.json`. Summaries go to stderr.

pub mod output;

use std::io::Write;
use std::path::PathBuf;

use anchorkit::systems::parse_config;
use anchorkit::verify::{
    check_identities, check_lift_with, check_lyapunov_decrease, estimate_contraction_rate, perturbation_persistence,
    second_order_convergence, transversality_scan, verification_config, NonVerticalFault, VerificationReport,
};
use anchorkit::{integrate, Error, IntegratorConfig, SystemDescriptor, TerminalStatus, Trajectory, Vector};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use output::{fmt_g17, indexed, CsvWriter};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INTEGRATION: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "anchorkit", version, about = "Anchored vector fields: simulate, verify, scan")]
pub struct Cli {
    /// `key = value` file selecting the system and its parameters.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in system: point, circle, sphere, double_pendulum.
    #[arg(long, global = true)]
    pub system: Option<String>,
    /// Constant gain α, overriding the system's default.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Extra parameter override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Directory for output files and the run manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate one trajectory and emit `t,x..,V,fh..,fv..`.
    Simulate(SimulateArgs),
    /// Run the identity and assumption checks on seeded samples.
    Verify(VerifyArgs),
    /// Transversality determinant along the limit cycle.
    Scan(ScanArgs),
    /// Persistence of the invariant manifold under the registered perturbation.
    Perturb(PerturbArgs),
    /// Gap between the second-order embedding and the first-order flow.
    SecondOrder(SecondOrderArgs),
    /// Fitted contraction rate of V over a grid of gains.
    Rates(RatesArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    #[arg(long, default_value_t = 20.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub atol: f64,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Residual threshold; defaults to 1e-8, or 1e-5 with `--fd`.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Drop analytic Jacobians of G and P and use finite differences.
    #[arg(long)]
    pub fd: bool,
    /// Check the lift against a field with a non-vertical stabilising term.
    #[arg(long)]
    pub break_vertical: bool,
    /// Seeded trajectories for the V-decrease check.
    #[arg(long, default_value_t = 3)]
    pub trajectories: usize,
    /// Emit CSV instead of JSON (with `--out`, write both).
    #[arg(long)]
    pub csv: bool,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[arg(long, default_value_t = 360)]
    pub grid: usize,
}

#[derive(Args, Debug)]
pub struct PerturbArgs {
    /// Perturbation size; defaults to the registered value.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Bound on sup ‖G‖ after settling; defaults to the registered bound.
    #[arg(long)]
    pub bound: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SecondOrderArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
    pub mu: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta0: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub omega0: Vec<f64>,
    /// Start on the invariant graph, `ω0 = f(θ0)`.
    #[arg(long, conflicts_with = "omega0")]
    pub on_graph: bool,
    #[arg(long, default_value_t = 20.0)]
    pub t_end: f64,
    /// Relative slack allowed per step of the non-increasing check.
    #[arg(long, default_value_t = 0.05)]
    pub slack: f64,
}

#[derive(Args, Debug)]
pub struct RatesArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1.0")]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1.5")]
    pub window: Vec<f64>,
    /// Allowed relative error of rate ratios against gain ratios.
    #[arg(long, default_value_t = 0.1)]
    pub ratio_tol: f64,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    fn integration(message: impl Into<String>) -> Self {
        Self { code: EXIT_INTEGRATION, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::UnknownSystem(_)
            | Error::InvalidParameters(_)
            | Error::Parse(_)
            | Error::ShapeMismatch(_)
            | Error::OutOfDomain(_)
            | Error::NotOnManifold(_)
            | Error::ConnectionViolated { .. } => EXIT_CONFIG,
            _ => EXIT_INTEGRATION,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::integration(format!("i/o: {e}"))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Reproduction record written next to the outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub system: SystemDescriptor,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub outputs: Vec<String>,
}

/// Where the command writes. Without `--out` the primary document goes to
/// `stdout` and secondary files are skipped.
struct Sink<'a> {
    dir: Option<PathBuf>,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
    written: Vec<String>,
}

impl Sink<'_> {
    fn primary(&mut self, name: &str, body: &[u8]) -> CliResult<()> {
        match &self.dir {
            Some(_) => self.file(name, body),
            None => {
                self.stdout.write_all(body)?;
                Ok(())
            }
        }
    }

    fn file(&mut self, name: &str, body: &[u8]) -> CliResult<()> {
        if let Some(dir) = &self.dir {
            std::fs::write(dir.join(name), body)?;
            self.written.push(name.to_string());
        }
        Ok(())
    }

    fn note(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.stderr, "{}", line.as_ref());
    }
}

/// Parses `argv` and runs it, returning the process exit code.
pub fn run_from<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, &args, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: &Cli, args: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<i32> {
    let (system, config_text) = resolve_system(cli)?;
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
    }
    let mut sink = Sink { dir: cli.out.clone(), stdout, stderr, written: Vec::new() };
    let (command, seed, code) = match &cli.command {
        Command::Simulate(a) => ("simulate", None, simulate(&system, a, &mut sink)?),
        Command::Verify(a) => ("verify", Some(a.seed), verify(&system, a, &mut sink)?),
        Command::Scan(a) => ("scan", None, scan(&system, a, &mut sink)?),
        Command::Perturb(a) => ("perturb", None, perturb(&system, a, &mut sink)?),
        Command::SecondOrder(a) => ("second-order", None, second_order(&system, a, &mut sink)?),
        Command::Rates(a) => ("rates", None, rates(&system, a, &mut sink)?),
    };
    if let Some(dir) = &cli.out {
        let manifest = RunManifest {
            command: command.to_string(),
            args: args.to_vec(),
            system,
            config: config_text,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: sink.written.clone(),
        };
        let body = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::integration(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), body + "\n")?;
    }
    Ok(code)
}

fn resolve_system(cli: &Cli) -> CliResult<(SystemDescriptor, Option<String>)> {
    let (base, text) = match &cli.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            (Some(parse_config(&text)?), Some(text))
        }
        None => (None, None),
    };
    let name = match (&base, &cli.system) {
        (Some(b), Some(s)) if &b.name != s => {
            return Err(CliError::config(format!("--system {s} conflicts with config system {}", b.name)))
        }
        (Some(b), _) => b.name.clone(),
        (None, Some(s)) => s.clone(),
        (None, None) => return Err(CliError::config("no system given (use --system or --config)")),
    };
    let mut overrides: Vec<(String, f64)> = base.map(|b| b.parameters.into_iter().collect()).unwrap_or_default();
    for kv in &cli.set {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        let v: f64 = v.trim().parse().map_err(|_| CliError::config(format!("--set {kv}: not a number")))?;
        overrides.push((k.trim().to_string(), v));
    }
    if let Some(a) = cli.alpha {
        overrides.push(("alpha".into(), a));
    }
    Ok((SystemDescriptor::new(&name, &overrides)?, text))
}

fn vector_arg(values: &[f64], n: usize, what: &str) -> CliResult<Vector> {
    if values.len() != n {
        return Err(CliError::config(format!("{what} needs {n} components, got {}", values.len())));
    }
    Ok(Vector::from_column_slice(values))
}

fn require_completed(tr: &Trajectory, what: &str) -> CliResult<()> {
    if tr.terminal_status == TerminalStatus::Completed {
        return Ok(());
    }
    Err(CliError::integration(format!(
        "{what} stopped at step {} (t = {}): {}",
        tr.len() - 1,
        fmt_g17(tr.final_time()),
        tr.terminal_status
    )))
}

fn simulate(desc: &SystemDescriptor, a: &SimulateArgs, sink: &mut Sink<'_>) -> CliResult<i32> {
    let s = desc.build()?;
    let n = s.ambient_dim();
    let x0 = vector_arg(&a.x0, n, "--x0")?;
    if !s.in_domain(&x0) {
        return Err(CliError::config(format!("--x0 {:?} lies outside the domain of {}", a.x0, desc.name)));
    }
    if !a.t_end.is_finite() || a.t_end <= 0.0 {
        return Err(CliError::config("--t-end must be positive"));
    }
    let cfg = IntegratorConfig::with_tolerances(a.rtol, a.atol);
    let tr = integrate(&s, &x0, (0.0, a.t_end), &cfg)?;
    require_completed(&tr, "integration")?;

    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(indexed("x", n))
        .chain(std::iter::once("V".to_string()))
        .chain(indexed("fh_", n))
        .chain(indexed("fv_", n))
        .collect();
    let mut w = CsvWriter::new(Vec::new(), &header)?;
    for (t, x) in tr.times.iter().zip(&tr.states) {
        let e = s.anchored_field(x)?;
        let mut row = vec![*t];
        row.extend(x.iter());
        row.push(e.v);
        row.extend(e.f_h.iter());
        row.extend(e.f_v.iter());
        w.row(&row)?;
    }
    sink.primary("trajectory.csv", &w.finish()?)?;
    let last = tr.final_state();
    sink.note(format!(
        "{} steps, final |x| = {}, V = {}",
        tr.len() - 1,
        fmt_g17(last.norm()),
        fmt_g17(s.potential_v(last)?)
    ));
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CheckRecord<'a> {
    name: &'a str,
    samples: usize,
    max_residual: f64,
    threshold: f64,
    passed: bool,
}

fn verify(desc: &SystemDescriptor, a: &VerifyArgs, sink: &mut Sink<'_>) -> CliResult<i32> {
    let mut s = desc.build()?;
    if a.fd {
        s = s.without_analytic_jacobians();
    }
    let tol = a.tol.unwrap_or(if a.fd { 1e-5 } else { 1e-8 });
    let samples = desc.domain_samples(a.samples, a.seed);

    let mut reports: Vec<VerificationReport> = check_identities(&s, &samples, tol);
    if a.break_vertical {
        let faulty = check_lift_with(&s, &NonVerticalFault { system: &s }, &samples, tol);
        for r in reports.iter_mut().filter(|r| r.check_name == faulty.check_name) {
            *r = faulty.clone();
        }
    }
    reports.extend(s.check_assumptions(&samples).checks);

    let starts = desc.domain_samples(a.trajectories, a.seed.wrapping_add(1));
    let mut worst = Vec::new();
    for x0 in &starts {
        let tr = integrate(&s, x0, (0.0, 20.0), &verification_config())?;
        let r = check_lyapunov_decrease(&s, &tr);
        let completed = tr.terminal_status == TerminalStatus::Completed;
        worst.push(if completed { r.max_residual } else { f64::INFINITY });
    }
    let mut decrease = VerificationReport::from_residuals("lyapunov_decrease", &worst, 1e-12);
    decrease.details.clear();
    reports.push(decrease);

    let records: Vec<CheckRecord<'_>> = reports
        .iter()
        .map(|r| CheckRecord {
            name: &r.check_name,
            samples: r.samples_tested,
            max_residual: r.max_residual,
            threshold: r.threshold,
            passed: r.passed,
        })
        .collect();

    let mut csv =
        CsvWriter::new(Vec::new(), &["name", "samples", "max_residual", "threshold", "passed"].map(String::from))?;
    for r in &records {
        csv.text_row(&[
            r.name.to_string(),
            r.samples.to_string(),
            fmt_g17(r.max_residual),
            fmt_g17(r.threshold),
            r.passed.to_string(),
        ])?;
    }
    let csv = csv.finish()?;
    let json = json_records(&records)?;

    if sink.dir.is_some() {
        sink.file("verify.json", &json)?;
        if a.csv {
            sink.file("verify.csv", &csv)?;
        }
    } else {
        sink.primary("", if a.csv { &csv } else { &json })?;
    }
    let failed: Vec<&str> = records.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        sink.note(format!("all {} checks passed", records.len()));
        Ok(EXIT_OK)
    } else {
        sink.note(format!("failed: {}", failed.join(", ")));
        Ok(EXIT_CHECK_FAILED)
    }
}

/// JSON array with numbers in `%.17g` form, so output is stable across
/// serializer versions.
fn json_records(records: &[CheckRecord<'_>]) -> CliResult<Vec<u8>> {
    let mut out = String::from("[\n");
    for (i, r) in records.iter().enumerate() {
        let num = |x: f64| if x.is_finite() { fmt_g17(x) } else { "null".into() };
        out.push_str(&format!(
            "  {{\"name\": {}, \"samples\": {}, \"max_residual\": {}, \"threshold\": {}, \"passed\": {}}}{}\n",
            serde_json::to_string(r.name).map_err(|e| CliError::integration(e.to_string()))?,
            r.samples,
            num(r.max_residual),
            num(r.threshold),
            r.passed,
            if i + 1 < records.len() { "," } else { "" }
        ));
    }
    out.push_str("]\n");
    Ok(out.into_bytes())
}

fn scan(desc: &SystemDescriptor, a: &ScanArgs, sink: &mut Sink<'_>) -> CliResult<i32> {
    let s = desc.build()?;
    let tau_max = std::f64::consts::TAU;
    let result = match desc.name.as_str() {
        "circle" => {
            transversality_scan(&s, &|t| Vector::from_column_slice(&[t.cos(), t.sin()]), (0.0, tau_max), a.grid)?
        }
        "double_pendulum" => {
            let p = desc.double_pendulum_params().expect("name checked");
            transversality_scan(&s, &|t| p.cycle(t), (0.0, tau_max), a.grid)?
        }
        other => return Err(CliError::config(format!("scan needs a limit-cycle system, {other} is not one"))),
    };
    let mut w = CsvWriter::new(Vec::new(), &["tau".to_string(), "det".to_string()])?;
    for (t, d) in &result.points {
        w.row(&[*t, *d])?;
    }
    sink.primary("scan.csv", &w.finish()?)?;
    sink.note(format!("min |det| = {}, sign changes = {}", fmt_g17(result.min_abs_det), result.sign_changes));
    let ok = result.min_abs_det > 0.0 && result.min_abs_det.is_finite() && result.sign_changes == 0;
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn perturb(desc: &SystemDescriptor, a: &PerturbArgs, sink: &mut Sink<'_>) -> CliResult<i32> {
    let s = desc.build()?;
    let p =
        desc.perturbation().ok_or_else(|| CliError::config(format!("{} has no registered perturbation", desc.name)))?;
    let eps = a.eps.unwrap_or(p.eps);
    let bound = a.bound.unwrap_or(p.bound);
    let report = perturbation_persistence(&s, &p.eta, eps, &p.probes, p.t_settle, p.t_observe, bound)?;
    for o in &report.probes {
        if o.terminal_status == TerminalStatus::StepFailure {
            require_completed(&o.trajectory, &format!("probe {:?}", o.probe))?;
        }
    }
    let body = serde_json::to_string_pretty(&report).map_err(|e| CliError::integration(e.to_string()))?;
    sink.primary("perturb.json", (body + "\n").as_bytes())?;
    if sink.dir.is_some() {
        let n = s.ambient_dim();
        for (i, o) in report.probes.iter().enumerate() {
            let header: Vec<String> = std::iter::once("t".to_string())
                .chain(indexed("x", n))
                .chain(std::iter::once("G_norm".to_string()))
                .collect();
            let mut w = CsvWriter::new(Vec::new(), &header)?;
            for (t, x) in o.trajectory.times.iter().zip(&o.trajectory.states) {
                let mut row = vec![*t];
                row.extend(x.iter());
                row.push(s.constraint().eval(x)?.norm());
                w.row(&row)?;
            }
            sink.file(&format!("probe_{i}.csv"), &w.finish()?)?;
        }
    }
    for o in &report.probes {
        sink.note(format!(
            "probe {:?}: {}, sup |G| = {}, closure gap = {}",
            o.probe,
            o.terminal_status,
            fmt_g17(o.sup_constraint),
            o.closure_gap.map_or("n/a".to_string(), fmt_g17)
        ));
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn second_order(desc: &SystemDescriptor, a: &SecondOrderArgs, sink: &mut Sink<'_>) -> CliResult<i32> {
    let s = desc.build()?;
    let n = s.ambient_dim();
    let theta0 = if a.theta0.is_empty() {
        match desc.double_pendulum_params() {
            Some(p) => 1.3 * p.cycle(1.0),
            None => return Err(CliError::config("--theta0 is required for this system")),
        }
    } else {
        vector_arg(&a.theta0, n, "--theta0")?
    };
    if !s.in_domain(&theta0) {
        return Err(CliError::config("--theta0 lies outside the domain"));
    }
    let omega0 = if a.on_graph {
        s.anchored_field(&theta0)?.f
    } else if a.omega0.is_empty() {
        Vector::zeros(n)
    } else {
        vector_arg(&a.omega0, n, "--omega0")?
    };
    let gaps = second_order_convergence(&s, &a.mu, &theta0, &omega0, a.t_end)?;
    let mut w = CsvWriter::new(Vec::new(), &["mu".to_string(), "sup_gap".to_string()])?;
    for (mu, g) in &gaps {
        w.row(&[*mu, *g])?;
    }
    sink.primary("second_order.csv", &w.finish()?)?;
    let monotone = gaps.windows(2).all(|p| p[1].1 <= p[0].1 * (1.0 + a.slack));
    sink.note(format!(
        "sup_gap non-increasing within {}% slack: {}",
        fmt_g17(100.0 * a.slack),
        if monotone { "yes" } else { "no" }
    ));
    Ok(if monotone { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn default_rate_probe(desc: &SystemDescriptor) -> Vector {
    match desc.name.as_str() {
        "sphere" => Vector::from_column_slice(&[0.0, 0.0, 1.1]),
        "double_pendulum" => 1.1 * desc.double_pendulum_params().expect("name checked").cycle(0.0),
        "point" => Vector::from_column_slice(&[0.5, 0.0]),
        _ => Vector::from_column_slice(&[1.1, 0.0]),
    }
}

fn rates(desc: &SystemDescriptor, a: &RatesArgs, sink: &mut Sink<'_>) -> CliResult<i32> {
    if a.alphas.is_empty() {
        return Err(CliError::config("empty --alphas grid"));
    }
    if let Some(bad) = a.alphas.iter().find(|x| x.is_nan() || **x <= 0.0) {
        return Err(CliError::config(format!("gain {bad} is below the positive floor")));
    }
    let window = match a.window[..] {
        [lo, hi] => (lo, hi),
        _ => return Err(CliError::config("--window expects LO,HI")),
    };
    let x0 = if a.x0.is_empty() { default_rate_probe(desc) } else { vector_arg(&a.x0, desc.ambient_dim(), "--x0")? };
    let mut rows = Vec::new();
    for &alpha in &a.alphas {
        let s = desc.with_alpha(alpha)?.build()?;
        let e = estimate_contraction_rate(&s, &x0, window)?;
        sink.note(format!("alpha {}: {}", fmt_g17(alpha), e.constants_note));
        rows.push((alpha, e.mu_fitted, e.r_squared));
    }
    let mut w = CsvWriter::new(Vec::new(), &["alpha", "mu_fitted", "r_squared"].map(String::from))?;
    for (al, mu, r2) in &rows {
        w.row(&[*al, *mu, *r2])?;
    }
    sink.primary("rates.csv", &w.finish()?)?;
    let (a0, m0, _) = rows[0];
    let linear = rows.iter().all(|(al, mu, _)| ((mu / m0) / (al / a0) - 1.0).abs() <= a.ratio_tol);
    sink.note(format!(
        "rate ratios track gain ratios within {}%: {}",
        fmt_g17(100.0 * a.ratio_tol),
        if linear { "yes" } else { "no" }
    ));
    Ok(if linear { EXIT_OK } else { EXIT_CHECK_FAILED })
}

/// Sizes the global rayon pool from `ANCHORKIT_THREADS` when set.
pub fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("ANCHORKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("ANCHORKIT_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}
