//! `shflow` batch front-end: reads a TOML run config, runs one analysis and
//! writes a JSON report (plus a CSV for `orbit`) to the output directory.
//!
//! Exit codes: 0 completed (and passed, where the command has a verdict),
//! 1 completed with a failing or inconclusive verdict, 2 usage, config or
//! output error, 3 numerical failure.

// Negated comparisons reject NaN inputs as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod json;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::Vector3;
use serde::Serialize;
use serde_json::json;
use shflow_core::blowup::{verify_extension_limit, verify_speed_ratio_limit, BlowupChart};
use shflow_core::field::{classify_singularity, find_singularities, Point, SingularityInfo, VectorFieldDef};
use shflow_core::flow::{flow, tangent_flow_at, write_trajectory_csv, IntegratorConfig};
use shflow_core::hyperbolicity::{
    estimate_splitting, evaluate_samples, lyapunov_exponents, mixed_domination_from, pliss_report, report_for,
    sample_attractor, singular_hyperbolicity_report, Criterion, SampleSet, SplittingEstimate, Verdict,
};
use shflow_core::poincare::{linear_poincare, rescaled_linear_poincare, PoincareCocycle};

use config::{DirectionSpec, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("output error: {0}")]
    Io(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<shflow_core::Error> for CliError {
    fn from(e: shflow_core::Error) -> Self {
        match e {
            shflow_core::Error::InvalidInput(m) => CliError::Config(m),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "shflow",
    version,
    about = "Poincaré-flow and singular-hyperbolicity diagnostics for 3D vector fields"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Progress on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Zeros of the field in the domain and their eigen-data.
    Classify,
    /// CSV trajectory, optionally with the tangent map.
    Orbit,
    /// ψ and ψ* matrices along an orbit.
    Poincare,
    /// Convergence of ψ* toward the fiber cocycle at a singularity.
    BlowupVerify,
    /// Domination and 2-domination of the linear Poincaré cocycle.
    Domination,
    /// Contraction of E under ψ, ψ* and of E^s under the tangent flow.
    Contraction,
    /// Area expansion on the center-unstable planes.
    Sectional,
    /// Pliss indices of the backward rescaled cocycle on F.
    Pliss,
    /// Lyapunov exponents of the tangent flow and of ψ*.
    Lyapunov,
    /// Full singular-hyperbolicity pipeline.
    Verdict,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Orbit => "orbit",
            Command::Poincare => "poincare",
            Command::BlowupVerify => "blowup-verify",
            Command::Domination => "domination",
            Command::Contraction => "contraction",
            Command::Sectional => "sectional",
            Command::Pliss => "pliss",
            Command::Lyapunov => "lyapunov",
            Command::Verdict => "verdict",
        }
    }
}

/// Finished analysis: files to write and whether the verdict (if any) passed.
pub struct Output {
    pub files: Vec<(String, Vec<u8>)>,
    pub passed: bool,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    f: VectorFieldDef,
    verbose: bool,
}

impl Ctx<'_> {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("shflow: {}", msg.as_ref());
        }
    }

    fn icfg(&self) -> &IntegratorConfig {
        &self.cfg.integrator
    }

    fn singularities(&self) -> Result<(Vec<SingularityInfo>, usize, f64), CliError> {
        let a = &self.cfg.analysis;
        let search = find_singularities(&self.f, &self.f.domain, a.singularity_tol, &a.newton)?;
        let infos = search
            .roots
            .iter()
            .map(|r| classify_singularity(&self.f, r, a.singularity_tol))
            .collect::<Result<Vec<_>, _>>()?;
        self.log(format!("{} singularities", infos.len()));
        Ok((infos, search.skipped_seeds, search.dedup_radius))
    }

    /// The sampling seed flowed past the transient.
    fn attractor_point(&self) -> Result<Point, CliError> {
        let s = &self.cfg.sampling;
        Ok(flow(&self.f, &Point::from(s.seed), s.transient, self.icfg())?)
    }

    fn sampled(&self) -> Result<(SampleSet, SplittingEstimate), CliError> {
        let s = &self.cfg.sampling;
        let a = &self.cfg.analysis;
        let (sings, _, _) = self.singularities()?;
        let mut set = sample_attractor(
            &self.f,
            &Point::from(s.seed),
            s.transient,
            s.n,
            s.spacing,
            self.icfg(),
            a.frame_eps,
        )?;
        let centers: Vec<Point> = sings.iter().map(|s| s.location).collect();
        set.exclude_near(&centers, a.chart_radius(&self.f));
        self.log(format!("{} samples, {} excluded", set.len(), set.excluded_count()));
        let splitting = estimate_splitting(&self.f, &set, a.splitting_t, a, self.icfg())?;
        self.log(format!("splitting: {} not converged", splitting.not_converged()));
        Ok((set, splitting))
    }
}

fn envelope(command: Command, cfg: &RunConfig, report: impl Serialize) -> Result<Vec<u8>, CliError> {
    let v = json!({ "command": command.name(), "config": cfg, "report": report });
    json::to_json_string(&v)
        .map(String::into_bytes)
        .map_err(|e| CliError::Numerical(e.to_string()))
}

fn report_file(command: Command, cfg: &RunConfig, report: impl Serialize, passed: bool) -> Result<Output, CliError> {
    Ok(Output {
        files: vec![(format!("{}.json", command.name()), envelope(command, cfg, report)?)],
        passed,
    })
}

/// Runs `command` without touching the filesystem.
pub fn execute(command: Command, cfg: &RunConfig, verbose: bool) -> Result<Output, CliError> {
    let ctx = Ctx {
        cfg,
        f: cfg.field_def()?,
        verbose,
    };
    match command {
        Command::Classify => classify(&ctx),
        Command::Orbit => orbit(&ctx),
        Command::Poincare => poincare(&ctx),
        Command::BlowupVerify => blowup_verify(&ctx),
        Command::Domination | Command::Contraction | Command::Sectional => sampled_checks(&ctx, command),
        Command::Pliss => pliss(&ctx),
        Command::Lyapunov => lyapunov(&ctx),
        Command::Verdict => verdict(&ctx),
    }
}

fn classify(ctx: &Ctx) -> Result<Output, CliError> {
    let (sings, skipped, dedup) = ctx.singularities()?;
    let report = json!({
        "domain": ctx.f.domain,
        "skipped_seeds": skipped,
        "dedup_radius": dedup,
        "singularities": sings,
    });
    report_file(Command::Classify, ctx.cfg, report, true)
}

fn orbit(ctx: &Ctx) -> Result<Output, CliError> {
    let o = &ctx.cfg.orbit;
    let start = Point::from(o.start.unwrap_or(ctx.cfg.sampling.seed));
    let n = (o.duration / o.spacing).round() as usize;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * o.spacing).collect();
    let rows: Vec<_> = if o.tangent {
        tangent_flow_at(&ctx.f, &start, &times, ctx.icfg())?
            .into_iter()
            .zip(&times)
            .map(|((x, m), &t)| (t, x, Some(m)))
            .collect()
    } else {
        let mut p = start;
        let mut rows = Vec::with_capacity(n + 1);
        rows.push((0.0, p, None));
        for &t in &times[1..] {
            p = flow(&ctx.f, &p, o.spacing, ctx.icfg())?;
            rows.push((t, p, None));
        }
        rows
    };
    let mut csv = Vec::new();
    write_trajectory_csv(&mut csv, &rows).map_err(|e| CliError::Io(e.to_string()))?;
    let end = rows.last().expect("at least the start row").1;
    let report = json!({
        "start": start,
        "end": end,
        "rows": rows.len(),
        "spacing": o.spacing,
        "tangent": o.tangent,
        "csv": "orbit.csv",
    });
    let mut out = report_file(Command::Orbit, ctx.cfg, report, true)?;
    out.files.push(("orbit.csv".into(), csv));
    Ok(out)
}

fn poincare(ctx: &Ctx) -> Result<Output, CliError> {
    let c = &ctx.cfg.cocycle;
    let mut x = match c.start {
        Some(s) => Point::from(s),
        None => ctx.attractor_point()?,
    };
    let mut blocks = Vec::with_capacity(c.steps);
    let mut total: Option<(PoincareCocycle, PoincareCocycle)> = None;
    for k in 0..c.steps {
        let psi = linear_poincare(&ctx.f, &x, c.t, ctx.icfg(), &ctx.cfg.poincare)?;
        let star = rescaled_linear_poincare(&ctx.f, &x, c.t, ctx.icfg(), &ctx.cfg.poincare)?;
        total = Some(match total {
            None => (psi.clone(), star.clone()),
            Some((a, b)) => (a.then(&psi)?, b.then(&star)?),
        });
        x = psi.to.base;
        blocks.push(json!({ "index": k, "psi": psi, "psi_star": star }));
    }
    let report = json!({
        "t": c.t,
        "steps": c.steps,
        "blocks": blocks,
        "composed_psi": total.as_ref().map(|t| &t.0),
        "composed_psi_star": total.as_ref().map(|t| &t.1),
    });
    report_file(Command::Poincare, ctx.cfg, report, true)
}

fn blowup_verify(ctx: &Ctx) -> Result<Output, CliError> {
    let b = &ctx.cfg.blowup;
    let tol = ctx.cfg.analysis.singularity_tol;
    let sigma = match b.singularity {
        Some(p) => classify_singularity(&ctx.f, &Point::from(p), tol)?,
        None => ctx
            .singularities()?
            .0
            .into_iter()
            .find(SingularityInfo::is_lorenz_like)
            .ok_or_else(|| {
                CliError::Config("no Lorenz-like singularity in the domain; set blowup.singularity".into())
            })?,
    };
    let u: Vector3<f64> = match &b.direction {
        DirectionSpec::Vector(v) => Vector3::from(*v),
        DirectionSpec::Named(n) => {
            let v = match n.as_str() {
                "unstable" => sigma.unstable_direction(),
                "strong_stable" => sigma.strong_stable_direction(),
                _ => sigma.eigenvectors[1],
            };
            v.ok_or_else(|| CliError::Config(format!("singularity has no real {n} direction")))?
        }
    };
    if !(u.norm() > 0.0) {
        return Err(CliError::Config("blowup.direction is zero".into()));
    }
    let eps = b.eps.unwrap_or_else(|| ctx.cfg.analysis.chart_radius(&ctx.f));
    let chart = BlowupChart::new(ctx.f.clone(), sigma, eps)?;
    let mut runs = Vec::with_capacity(b.times.len());
    let mut passed = true;
    for &t in &b.times {
        let limit = verify_extension_limit(&chart, &u, t, &b.radii, ctx.icfg(), &ctx.cfg.poincare)?;
        let speed = verify_speed_ratio_limit(&chart, &u, t, &b.radii, ctx.icfg())?;
        // A linear field agrees with its fiber limit at every radius; the
        // errors are then integration noise with no trend to measure.
        let noise = 1e-3 * b.limit_tol;
        let errs: Vec<f64> = limit.errors.iter().flatten().copied().collect();
        let complete = errs.len() == b.radii.len();
        let exact = complete && errs.iter().all(|e| *e <= noise);
        let monotone = complete && errs.windows(2).all(|w| w[1] < w[0]);
        let limit_ok = exact || (monotone && limit.extrapolated_error.is_some_and(|e| e < b.limit_tol));
        let speed_errs: Vec<f64> = speed.errors.iter().flatten().copied().collect();
        let speed_ok = speed_errs.len() == b.radii.len()
            && (speed_errs.iter().all(|e| *e <= noise) || speed.slope.is_some_and(|s| s >= b.min_slope));
        ctx.log(format!(
            "t = {t}: slope {:?}, extrapolated {:?}",
            limit.slope, limit.extrapolated_error
        ));
        passed &= limit_ok && speed_ok;
        runs.push(json!({
            "t": t,
            "extension": limit,
            "monotone": monotone,
            "extension_passed": limit_ok,
            "speed_ratio": speed,
            "speed_ratio_passed": speed_ok,
        }));
    }
    let report = json!({
        "singularity": chart.sigma,
        "direction": u.normalize(),
        "eps": eps,
        "limit_tol": b.limit_tol,
        "min_slope": b.min_slope,
        "times": runs,
        "passed": passed,
    });
    report_file(Command::BlowupVerify, ctx.cfg, report, passed)
}

fn sampled_checks(ctx: &Ctx, command: Command) -> Result<Output, CliError> {
    let a = &ctx.cfg.analysis;
    let (set, splitting) = ctx.sampled()?;
    let grid = &a.t_grid;
    let evals = evaluate_samples(&ctx.f, &set, &splitting, grid, ctx.icfg())?;
    let common = json!({
        "samples": set.len(),
        "excluded": set.excluded_count(),
        "not_converged": splitting.not_converged(),
        "splitting_t": splitting.t,
        "angle_min": splitting.angle_min,
    });
    let (report, passed) = match command {
        Command::Domination => {
            let dom = report_for(Criterion::Domination, false, &evals, grid, a, |m| Some(&m.domination));
            let two = report_for(Criterion::TwoDomination, true, &evals, grid, a, |m| {
                Some(&m.two_domination)
            });
            let mixed = mixed_domination_from(&evals, grid, a);
            let passed = dom.passed;
            (
                json!({ "sampling": common, "domination": dom, "two_domination": two, "mixed_domination": mixed }),
                passed,
            )
        }
        Command::Contraction => {
            let plain = report_for(Criterion::EContraction, false, &evals, grid, a, |m| {
                Some(&m.e_contraction)
            });
            let star = report_for(Criterion::EContraction, true, &evals, grid, a, |m| {
                Some(&m.e_contraction_rescaled)
            });
            let tangent = report_for(Criterion::TangentContraction, false, &evals, grid, a, |m| {
                m.tangent_contraction.as_ref()
            });
            let passed = star.passed && tangent.passed;
            (
                json!({
                    "sampling": common,
                    "e_contraction": plain,
                    "e_contraction_rescaled": star,
                    "tangent_contraction": tangent,
                }),
                passed,
            )
        }
        _ => {
            let sec = report_for(Criterion::SectionalExpansion, false, &evals, grid, a, |m| {
                Some(&m.sectional)
            });
            let passed = sec.passed;
            (json!({ "sampling": common, "sectional_expansion": sec }), passed)
        }
    };
    report_file(command, ctx.cfg, report, passed)
}

fn pliss(ctx: &Ctx) -> Result<Output, CliError> {
    let p = &ctx.cfg.pliss;
    let (set, splitting) = ctx.sampled()?;
    let report = pliss_report(&ctx.f, &set, &splitting, p.tau0, p.gamma, ctx.icfg())?;
    report_file(Command::Pliss, ctx.cfg, report, true)
}

fn lyapunov(ctx: &Ctx) -> Result<Output, CliError> {
    let l = &ctx.cfg.lyapunov;
    let x = match l.start {
        Some(s) => Point::from(s),
        None => ctx.attractor_point()?,
    };
    let report = lyapunov_exponents(
        &ctx.f,
        &x,
        l.t_total,
        l.renorm_dt,
        ctx.icfg(),
        ctx.cfg.analysis.frame_eps,
    )?;
    report_file(Command::Lyapunov, ctx.cfg, report, true)
}

fn verdict(ctx: &Ctx) -> Result<Output, CliError> {
    let report =
        singular_hyperbolicity_report(&ctx.f, &ctx.f.domain, &ctx.cfg.sampling, &ctx.cfg.analysis, ctx.icfg())?;
    ctx.log(format!("verdict {:?} at T = {:?}", report.verdict, report.t));
    let passed = report.verdict == Verdict::Pass;
    report_file(Command::Verdict, ctx.cfg, report, passed)
}

fn write_outputs(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    for (name, bytes) in files {
        std::fs::write(dir.join(name), bytes).map_err(io)?;
    }
    Ok(())
}

fn run_cli(cli: &Cli) -> Result<bool, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let cfg = RunConfig::load(path)?;
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let job = || execute(cli.command, &cfg, cli.verbose);
    let out = match cli.jobs {
        Some(0) => return Err(CliError::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(job)?,
        None => job()?,
    };
    write_outputs(&dir, &out.files)?;
    if cli.verbose {
        for (name, _) in &out.files {
            eprintln!("shflow: wrote {}", dir.join(name).display());
        }
    }
    Ok(out.passed)
}

/// Parses `args` (program name first), runs and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("shflow: {e}");
            e.exit_code()
        }
    }
}
