//! Command-line front end: `solve`, `verify`, `converge`, `oracle-compare`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, UniformGrid};
use crate::pipeline::{self, Methods, PipelineRun, Summary, Tolerances};
use crate::problem::{self, ProblemSpec};
use crate::riccati::{ExponentRule, RiccatiMethod};
use crate::synthesis::PsiMethod;

#[derive(Debug, Parser)]
#[command(name = "hyperlq", version, about = "Optimal feedback for a terminal-constrained transport PDE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline and write the summary and field CSVs.
    Solve(CommonArgs),
    /// Run the pipeline and check it against independent solves.
    Verify(VerifyArgs),
    /// Repeat the pipeline on a ladder of grids.
    Converge(ConvergeArgs),
    /// Compare the synthesis with a dense KKT solve on a coarse lattice.
    OracleCompare(OracleArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Built-in problem: ex1, ex2 or zero_demo.
    #[arg(long, conflicts_with = "config")]
    pub example: Option<String>,
    /// JSON problem file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, conflicts_with_all = ["h", "tau"])]
    pub nz: Option<usize>,
    #[arg(long, conflicts_with_all = ["h", "tau"])]
    pub nt: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Write every N-th node in each axis.
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    /// Comma-separated subset of g,e,psi,x,u,lambda,gamma,terminal; `none` for none.
    #[arg(long, default_value = "g,e,psi,x,u,lambda,gamma,terminal")]
    pub fields: String,
    #[arg(long, default_value = "upwind_euler")]
    pub riccati_method: RiccatiMethod,
    #[arg(long, default_value = "characteristics")]
    pub psi_method: PsiMethod,
    /// Quadrature for the characteristic factor: left_endpoint or trapezoid.
    #[arg(long, default_value = "left_endpoint", value_parser = parse_rule)]
    pub exponent_rule: ExponentRule,
}

#[derive(Debug, Clone, Args)]
pub struct OracleGrid {
    #[arg(long, default_value_t = 11)]
    pub oracle_nz: usize,
    #[arg(long, default_value_t = 121)]
    pub oracle_nt: usize,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Terminal error tolerance relative to max|eta|.
    #[arg(long)]
    pub terminal_tol: Option<f64>,
    #[arg(long)]
    pub costate_tol: Option<f64>,
    #[arg(long)]
    pub cost_tol: Option<f64>,
    /// Also run the coarse KKT comparison.
    #[arg(long)]
    pub oracle: bool,
    #[command(flatten)]
    pub oracle_grid: OracleGrid,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated spatial steps, coarse to fine.
    #[arg(long, default_value = "0.004,0.002,0.001")]
    pub ladder: String,
    /// Fixed tau/h ratio across the ladder.
    #[arg(long, default_value_t = 1.0)]
    pub tau_ratio: f64,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub oracle_grid: OracleGrid,
}

fn parse_rule(s: &str) -> std::result::Result<ExponentRule, String> {
    match s {
        "left_endpoint" => Ok(ExponentRule::LeftEndpoint),
        "trapezoid" => Ok(ExponentRule::Trapezoid),
        other => Err(format!("unknown exponent rule `{other}`")),
    }
}

impl CommonArgs {
    fn load(&self) -> Result<(ProblemSpec, String)> {
        match (&self.example, &self.config) {
            (Some(name), None) => Ok((problem::builtin_example(name)?, name.clone())),
            (None, Some(path)) => {
                let text = fs::read_to_string(path)?;
                Ok((serde_json::from_str(&text)?, path.display().to_string()))
            }
            _ => Err(Error::Usage("exactly one of --example or --config is required".into())),
        }
    }

    fn grid(&self, spec: &ProblemSpec) -> Result<UniformGrid> {
        match (self.nz, self.nt, self.h, self.tau) {
            (Some(nz), Some(nt), _, _) => UniformGrid::new(nz, nt, spec.length, spec.horizon),
            (Some(_), None, _, _) | (None, Some(_), _, _) => {
                Err(Error::Usage("--nz and --nt must be given together".into()))
            }
            (None, None, None, None) => pipeline::default_grid(spec),
            (None, None, h, tau) => {
                let default = pipeline::default_grid(spec)?;
                UniformGrid::from_steps(
                    h.unwrap_or(default.h()),
                    tau.unwrap_or(default.tau()),
                    spec.length,
                    spec.horizon,
                )
            }
        }
    }

    fn methods(&self) -> Methods {
        Methods {
            riccati: self.riccati_method,
            psi: self.psi_method,
            exponent_rule: self.exponent_rule,
        }
    }

    fn wants(&self, field: &str) -> bool {
        self.fields.split(',').any(|f| f.trim() == field || f.trim() == "all")
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    category: &'a str,
    exit_code: i32,
    message: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn write_field(dir: &Path, name: &str, field: &Field, stride: usize) -> Result<()> {
    let mut out = BufWriter::new(File::create(dir.join(format!("{name}.csv")))?);
    field.write_csv(&mut out, stride)?;
    out.flush()?;
    Ok(())
}

fn write_outputs(run: &PipelineRun, args: &CommonArgs) -> Result<()> {
    let dir = &args.out;
    let law = &run.law;
    let stride = args.stride;
    let fields: [(&str, &Field); 6] = [
        ("g", &law.riccati.g),
        ("e", &law.riccati.e),
        ("psi", &law.psi),
        ("x", &run.result.x),
        ("u", &run.result.u),
        ("lambda", &run.result.lambda),
    ];
    for (name, field) in fields {
        if args.wants(name) {
            write_field(dir, name, field, stride)?;
        }
    }
    let grid = run.problem.grid;
    if args.wants("gamma") {
        let mut out = BufWriter::new(File::create(dir.join("gamma.csv"))?);
        writeln!(out, "z,gamma")?;
        for (i, g) in law.gamma.iter().enumerate() {
            writeln!(out, "{},{}", grid.z(i), g)?;
        }
        out.flush()?;
    }
    if args.wants("terminal") {
        let last = grid.nt() - 1;
        let mut out = BufWriter::new(File::create(dir.join("terminal.csv"))?);
        writeln!(out, "z,x_T,eta,error")?;
        for (i, eta) in law.eta_samples.iter().enumerate() {
            let x = run.result.x.get(i, last);
            writeln!(out, "{},{},{},{}", grid.z(i), x, eta, (x - eta).abs())?;
        }
        out.flush()?;
    }
    Ok(())
}

fn prepare(args: &CommonArgs) -> Result<(ProblemSpec, String, UniformGrid)> {
    let (spec, label) = args.load()?;
    problem::validate(&spec).into_result()?;
    let grid = args.grid(&spec)?;
    fs::create_dir_all(&args.out)?;
    Ok((spec, label, grid))
}

fn cmd_solve(args: &CommonArgs) -> Result<()> {
    let (spec, label, grid) = prepare(args)?;
    let run = pipeline::run(&spec, grid, args.methods())?;
    write_outputs(&run, args)?;
    write_json(&args.out.join("summary.json"), &Summary::new(&run, &label))
}

fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let (spec, label, grid) = prepare(&args.common)?;
    let run = pipeline::run(&spec, grid, args.common.methods())?;
    let mut tol = Tolerances::for_mode(spec.target_mode);
    tol.terminal = args.terminal_tol.unwrap_or(tol.terminal);
    tol.costate = args.costate_tol.unwrap_or(tol.costate);
    tol.cost = args.cost_tol.unwrap_or(tol.cost);
    let oracle_grid = if args.oracle {
        Some(UniformGrid::new(
            args.oracle_grid.oracle_nz,
            args.oracle_grid.oracle_nt,
            spec.length,
            spec.horizon,
        )?)
    } else {
        None
    };
    let report = pipeline::verify(&run, &tol, oracle_grid)?;
    let mut summary = Summary::new(&run, &label);
    summary.oracle = report.oracle.clone();
    write_json(&args.common.out.join("summary.json"), &summary)?;
    write_json(&args.common.out.join("verify.json"), &report)?;
    if report.passed {
        Ok(())
    } else {
        Err(Error::Verification(report.failures()))
    }
}

fn parse_ladder(text: &str, ratio: f64) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map(|h| (h, h * ratio))
                .map_err(|_| Error::Usage(format!("bad ladder entry `{s}`")))
        })
        .collect()
}

fn cmd_converge(args: &ConvergeArgs) -> Result<()> {
    let ladder = parse_ladder(&args.ladder, args.tau_ratio)?;
    if ladder.len() < 3 {
        return Err(Error::Usage(format!(
            "a convergence ladder needs at least 3 rungs, got {}",
            ladder.len()
        )));
    }
    let (spec, _, _) = prepare(&args.common)?;
    let rows = pipeline::converge(&spec, &ladder, args.common.methods())?;
    let mut out = BufWriter::new(File::create(args.common.out.join("convergence.csv"))?);
    writeln!(out, "h,tau,terminal_error_inf,cost_gap,state_resid,order")?;
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.h, r.tau, r.terminal_error_inf, r.cost_gap, r.state_resid, r.order
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct OracleSummary {
    grid: pipeline::GridInfo,
    unknowns: usize,
    #[serde(flatten)]
    gaps: crate::oracle::GapReport,
    terminal_residual: f64,
    projected_gradient: f64,
    domination_margin: f64,
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let (spec, _, _) = prepare(&args.common)?;
    let coarse = UniformGrid::new(
        args.oracle_grid.oracle_nz,
        args.oracle_grid.oracle_nt,
        spec.length,
        spec.horizon,
    )?;
    let cmp = pipeline::oracle_compare(&spec, coarse, args.common.methods())?;
    let summary = OracleSummary {
        grid: pipeline::GridInfo::new(&coarse, spec.c),
        unknowns: cmp.dlq.unknowns(),
        gaps: cmp.gaps.clone(),
        terminal_residual: cmp.oracle.terminal_residual,
        projected_gradient: cmp.oracle.projected_gradient,
        domination_margin: cmp.domination_margin,
    };
    write_json(&args.common.out.join("oracle_summary.json"), &summary)?;
    if let Some(u) = cmp.oracle.control_field(&cmp.dlq) {
        write_field(&args.common.out, "u_oracle", &u, 1)?;
    }
    Ok(())
}

fn out_dir(command: &Command) -> &Path {
    match command {
        Command::Solve(a) => &a.out,
        Command::Verify(a) => &a.common.out,
        Command::Converge(a) => &a.common.out,
        Command::OracleCompare(a) => &a.common.out,
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("HYPERLQ_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second initialization in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    configure_threads();
    let outcome = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Converge(a) => cmd_converge(a),
        Command::OracleCompare(a) => cmd_oracle(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            let category = err.category();
            let code = category.exit_code();
            eprintln!("hyperlq: {} error: {err}", category.as_str());
            let dir = out_dir(&cli.command);
            if fs::create_dir_all(dir).is_ok() {
                let report = ErrorReport {
                    category: category.as_str(),
                    exit_code: code,
                    message: err.to_string(),
                };
                let _ = write_json(&dir.join("error.json"), &report);
            }
            code
        }
    }
}

/// Parses arguments and runs; usage errors exit with the validation code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            code
        }
    }
}
