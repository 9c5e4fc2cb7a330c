//! `inflap`: Dirichlet solves, principal eigenvalues, radial profiles and
//! verification suites from TOML run configurations.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use inflap::dirichlet::{analytic_bounds, default_alpha_grid, solve_dirichlet, Classification, SolveReport};
use inflap::eigen::{estimate_principal, level_set_analysis, EigenOptions};
use inflap::geometry::{DomainSpec, Metrics};
use inflap::io::{field_csv, field_pgm};
use inflap::operator::{scheme_consistency_report, ScalarField, Stencil};
use inflap::radial::{beta, eigen_ladder, extend_reflect, radial_first_eigen_with};
use inflap::verify::{
    check_apriori_bounds, check_comparison, check_distance, check_power_transform, check_ratio_principle,
    check_sign_change, default_tolerance, junit_xml, Claim, ViolationReport,
};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "inflap", version, about = "Principal eigenvalues of the infinity-Laplacian")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for colored relaxation sweeps.
    #[arg(long)]
    threads: Option<usize>,
    /// Bisection tolerance on λ.
    #[arg(long = "tol-lambda")]
    tol_lambda: Option<f64>,
    /// Grid spacing; overrides the config.
    #[arg(long)]
    h: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one Dirichlet problem.
    Solve(Common),
    /// Principal eigenvalue and eigenfunction of a grid domain.
    Eigen(Common),
    /// Principal eigenvalue and profile of a ball with radial weight.
    Radial(Common),
    /// Radial eigenvalue ladder β(2ℓ−1)⁴/R⁴ as JSON on stdout.
    Ladder {
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 3)]
        levels: u32,
    },
    /// Run a check suite on stored solve or eigen outputs.
    Verify {
        /// comparison, ratio, apriori, distance, power or sign.
        suite: String,
        /// JSON files written by `solve` or `eigen`.
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Consistency table of the discrete operator.
    Consistency(Common),
}

/// Configuration problems exit with 2, numerical failures with 3.
enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
}

trait Tag<T> {
    fn config(self) -> std::result::Result<T, Failure>;
    fn solver(self) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for std::result::Result<T, E> {
    fn config(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn solver(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure::Solver(e.into()))
    }
}

type Outcome = std::result::Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(c) => cmd_solve(&c),
        Command::Eigen(c) => cmd_eigen(&c),
        Command::Radial(c) => cmd_radial(&c),
        Command::Ladder { radius, levels } => cmd_ladder(radius, levels),
        Command::Verify { suite, inputs, common } => cmd_verify(&suite, &inputs, &common),
        Command::Consistency(c) => cmd_consistency(&c),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("solver error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn load(common: &Common) -> std::result::Result<RunConfig, Failure> {
    match &common.config {
        Some(p) => RunConfig::load(p).config(),
        None => Ok(RunConfig::default()),
    }
}

fn out_dir(cfg: &RunConfig, common: &Common) -> std::result::Result<PathBuf, Failure> {
    let dir = cfg.output_dir(common.out.as_deref());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).config()?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> std::result::Result<(), Failure> {
    let p = dir.join(name);
    std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display())).config()
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

#[derive(Serialize, Deserialize)]
struct SolveOutput {
    domain: DomainSpec,
    metrics: Metrics,
    delta: Option<f64>,
    report: StoredReport,
}

/// Serialized form of a solve report; the field is a list of node values.
#[derive(Serialize, Deserialize)]
struct StoredReport {
    field: Vec<f64>,
    lambda: f64,
    method: inflap::dirichlet::Method,
    ordering: inflap::dirichlet::Ordering,
    iterations: usize,
    residual: f64,
    classification: Classification,
    sup: f64,
    sup_history: Vec<f64>,
    residual_history: Vec<f64>,
    tol: f64,
    cap: f64,
    non_finite: bool,
}

impl StoredReport {
    fn from_report(r: &SolveReport) -> Self {
        Self {
            field: r.field.values().to_vec(),
            lambda: r.lambda,
            method: r.method,
            ordering: r.ordering,
            iterations: r.iterations,
            residual: r.residual,
            classification: r.classification,
            sup: r.field.sup(),
            sup_history: r.sup_history.clone(),
            residual_history: r.residual_history.clone(),
            tol: r.tol,
            cap: r.cap,
            non_finite: r.non_finite,
        }
    }

    fn into_report(self, field: ScalarField) -> SolveReport {
        SolveReport {
            field,
            lambda: self.lambda,
            method: self.method,
            ordering: self.ordering,
            iterations: self.iterations,
            residual: self.residual,
            classification: self.classification,
            sup_history: self.sup_history,
            residual_history: self.residual_history,
            tol: self.tol,
            cap: self.cap,
            non_finite: self.non_finite,
            branch: Vec::new(),
        }
    }
}

fn cmd_solve(common: &Common) -> Outcome {
    let cfg = load(common)?;
    let domain = cfg.domain(common.h).config()?;
    let weight = cfg.weight(&domain).config()?;
    let params = cfg.params(&domain, weight).config()?;
    let stencil = Stencil::new(domain.spec().stencil_width);
    let report = solve_dirichlet(&domain, &params, &stencil, &cfg.solve_options(common.threads)).solver()?;
    let dir = out_dir(&cfg, common)?;
    let out = SolveOutput {
        domain: domain.spec().clone(),
        metrics: *domain.metrics(),
        delta: cfg.problem.boundary.is_none().then_some(cfg.problem.delta),
        report: StoredReport::from_report(&report),
    };
    write(&dir, "report.json", json(&out))?;
    write(&dir, "field.csv", field_csv(&report.field))?;
    write(&dir, "field.pgm", field_pgm(&report.field))?;
    println!("{:?} after {} iterations, sup u = {:.6e}", report.classification, report.iterations, report.field.sup());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize, Deserialize)]
struct EigenOutput {
    domain: DomainSpec,
    metrics: Metrics,
    lambda: f64,
    bracket: [f64; 2],
    lambda0: f64,
    upper: f64,
    soft: bool,
    delta: f64,
    tol_lambda: f64,
    trace: Vec<inflap::eigen::MembershipRecord>,
    eigenfunction: Vec<f64>,
    boundary_level: f64,
    branch_lambda: f64,
    level_sets: Option<inflap::eigen::LevelSetReport>,
}

fn cmd_eigen(common: &Common) -> Outcome {
    let cfg = load(common)?;
    let domain = cfg.domain(common.h).config()?;
    let weight = cfg.weight(&domain).config()?;
    let tol = common.tol_lambda.unwrap_or(cfg.eigen.tol_lambda);
    let opts = EigenOptions {
        stencil: Stencil::new(domain.spec().stencil_width),
        solver: cfg.solve_options(common.threads),
        accelerate: cfg.eigen.accelerate,
        ..Default::default()
    };
    let est = estimate_principal(&domain, &weight, cfg.eigen.delta, tol, &opts).solver()?;
    let ef = est.eigenfunction.clone().ok_or_else(|| anyhow!("no eigenfunction")).solver()?;
    let levels = if cfg.eigen.thresholds.is_empty() {
        None
    } else {
        Some(
            level_set_analysis(&ef.field, &weight, &cfg.eigen.thresholds, est.lambda, cfg.eigen.delta, tol, &opts)
                .solver()?,
        )
    };
    let dir = out_dir(&cfg, common)?;
    if let Some(l) = &levels {
        write(&dir, "levelsets.csv", l.to_csv())?;
    }
    let out = EigenOutput {
        domain: domain.spec().clone(),
        metrics: *domain.metrics(),
        lambda: est.lambda,
        bracket: est.bracket,
        lambda0: est.bounds.lambda0,
        upper: est.bounds.upper,
        soft: est.soft,
        delta: est.delta,
        tol_lambda: tol,
        trace: est.trace,
        eigenfunction: ef.field.values().to_vec(),
        boundary_level: ef.boundary_level,
        branch_lambda: ef.lambda,
        level_sets: levels,
    };
    write(&dir, "eigen.json", json(&out))?;
    write(&dir, "eigenfunction.csv", field_csv(&ef.field))?;
    write(&dir, "eigenfunction.pgm", field_pgm(&ef.field))?;
    println!("lambda in [{:.6}, {:.6}]", est.bracket[0], est.bracket[1]);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct RadialOutput {
    radius: f64,
    lambda: f64,
    beta: f64,
    /// λ̂R⁴.
    scaled: f64,
    tol_lambda: f64,
    dr: f64,
    first_zero: Option<f64>,
    sweeps: usize,
}

fn cmd_radial(common: &Common) -> Outcome {
    let cfg = load(common)?;
    let a = cfg.radial_weight().config()?;
    let rc = &cfg.radial;
    let tol = common.tol_lambda.unwrap_or(rc.tol_lambda);
    let dr = common.h.or(rc.dr).unwrap_or(1e-4 * rc.radius);
    let (lambda, profile) = radial_first_eigen_with(&*a, rc.radius, tol, dr).solver()?;
    let dir = out_dir(&cfg, common)?;
    write(&dir, "profile.csv", profile.to_csv())?;
    if rc.periods > 0 {
        write(&dir, "extended.csv", extend_reflect(&profile, rc.periods).solver()?.to_csv())?;
    }
    let out = RadialOutput {
        radius: rc.radius,
        lambda,
        beta: beta(),
        scaled: lambda * rc.radius.powi(4),
        tol_lambda: tol,
        dr,
        first_zero: profile.first_zero,
        sweeps: profile.sweeps,
    };
    let text = json(&out);
    write(&dir, "radial.json", &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_ladder(radius: f64, levels: u32) -> Outcome {
    if radius.is_nan() || radius <= 0.0 || levels == 0 {
        return Err(Failure::Config(anyhow!("need radius > 0 and at least one level")));
    }
    #[derive(Serialize)]
    struct Ladder {
        radius: f64,
        beta: f64,
        lambdas: Vec<f64>,
    }
    let out = Ladder { radius, beta: beta(), lambdas: (1..=levels).map(|l| eigen_ladder(radius, l)).collect() };
    print!("{}", json(&out));
    Ok(ExitCode::SUCCESS)
}

/// A stored field with its λ and, for eigen outputs, λ̂.
struct Stored {
    field: ScalarField,
    lambda: f64,
    lambda_hat: Option<f64>,
    delta: Option<f64>,
    report: Option<StoredReport>,
}

fn read_stored(path: &Path, domain: &std::sync::Arc<inflap::geometry::GridDomain>) -> Result<Stored> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("report").is_some() {
        let out: SolveOutput = serde_json::from_value(value)?;
        let field = ScalarField::new(domain.clone(), out.report.field.clone())?;
        Ok(Stored { field, lambda: out.report.lambda, lambda_hat: None, delta: out.delta, report: Some(out.report) })
    } else if value.get("eigenfunction").is_some() {
        let out: EigenOutput = serde_json::from_value(value)?;
        let field = ScalarField::new(domain.clone(), out.eigenfunction)?;
        Ok(Stored { field, lambda: out.lambda, lambda_hat: Some(out.lambda), delta: None, report: None })
    } else {
        bail!("{} is neither a solve nor an eigen output", path.display())
    }
}

fn cmd_verify(suite: &str, inputs: &[PathBuf], common: &Common) -> Outcome {
    let cfg = load(common)?;
    let domain = cfg.domain(common.h).config()?;
    let weight = cfg.weight(&domain).config()?;
    let stencil = Stencil::new(domain.spec().stencil_width);
    let tol = default_tolerance(&domain, cfg.verify.c);
    let stored: Vec<Stored> = inputs.iter().map(|p| read_stored(p, &domain)).collect::<Result<_>>().config()?;
    let need = |k: usize| -> std::result::Result<(), Failure> {
        if stored.len() != k {
            return Err(Failure::Config(anyhow!("suite '{suite}' takes {k} input file(s), got {}", stored.len())));
        }
        Ok(())
    };
    let report: ViolationReport = match suite {
        "comparison" => {
            need(2)?;
            let (u, v) = (&stored[0], &stored[1]);
            check_comparison(&u.field, &v.field, u.lambda, v.lambda, &weight, &stencil, tol).solver()?
        }
        "ratio" => {
            need(2)?;
            let (u, v) = (&stored[0], &stored[1]);
            check_ratio_principle(&u.field, &v.field, u.lambda, v.lambda, tol).solver()?
        }
        "apriori" => {
            need(1)?;
            let s = &stored[0];
            let stored_report = s.report.as_ref().ok_or_else(|| anyhow!("apriori needs a solve output")).config()?;
            let params = cfg.params(&domain, weight.clone()).config()?;
            let params = inflap::dirichlet::ProblemParams { lambda: s.lambda, boundary: s.field.boundary().to_vec(), ..params };
            let report = StoredReport { field: Vec::new(), sup_history: Vec::new(), residual_history: Vec::new(), ..clone_meta(stored_report) }
                .into_report(s.field.clone());
            let bounds = analytic_bounds(&domain, &weight, &default_alpha_grid(&weight)).solver()?;
            check_apriori_bounds(&report, &params, &bounds, tol).solver()?
        }
        "distance" => {
            need(1)?;
            let s = &stored[0];
            let delta = s.delta.ok_or_else(|| anyhow!("distance needs constant boundary data")).config()?;
            check_distance(&s.field, delta, s.lambda, weight.inf()).solver()?
        }
        "power" => {
            need(1)?;
            let s = &stored[0];
            let claim = match cfg.verify.claim.as_str() {
                "sub" => Claim::SubSolution,
                "super" => Claim::SuperSolution,
                other => return Err(Failure::Config(anyhow!("verify.claim must be 'sub' or 'super', got '{other}'"))),
            };
            check_power_transform(&s.field, s.lambda, &weight, cfg.verify.q, claim, &stencil, tol).solver()?
        }
        "sign" => {
            need(1)?;
            let s = &stored[0];
            let hat = s
                .lambda_hat
                .or(cfg.verify.lambda_hat)
                .ok_or_else(|| anyhow!("sign needs an eigen output or verify.lambda_hat"))
                .config()?;
            check_sign_change(s.field.interior(), s.lambda, hat, tol * s.field.values().iter().fold(0.0, |m: f64, v| m.max(v.abs())))
        }
        other => return Err(Failure::Config(anyhow!("unknown suite '{other}'"))),
    };
    let dir = out_dir(&cfg, common)?;
    write(&dir, "verify.json", json(&report))?;
    write(&dir, "verify.xml", junit_xml(suite, std::slice::from_ref(&report)))?;
    println!("{suite}: {:?}", report.verdict);
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn clone_meta(r: &StoredReport) -> StoredReport {
    StoredReport {
        field: Vec::new(),
        lambda: r.lambda,
        method: r.method,
        ordering: r.ordering,
        iterations: r.iterations,
        residual: r.residual,
        classification: r.classification,
        sup: r.sup,
        sup_history: Vec::new(),
        residual_history: Vec::new(),
        tol: r.tol,
        cap: r.cap,
        non_finite: r.non_finite,
    }
}

fn cmd_consistency(common: &Common) -> Outcome {
    let cases: Vec<(f64, u32)> = match common.h {
        Some(h) => (1..=4).map(|w| (h, w)).collect(),
        None => vec![(1.0 / 16.0, 1), (1.0 / 32.0, 2), (1.0 / 64.0, 3), (1.0 / 128.0, 4)],
    };
    let rows = scheme_consistency_report(&cases);
    let text = json(&rows);
    if common.out.is_some() || common.config.is_some() {
        let cfg = load(common)?;
        write(&out_dir(&cfg, common)?, "consistency.json", &text)?;
    }
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}
