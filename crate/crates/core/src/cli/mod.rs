//! Command-line orchestration: region construction, verification and
//! dispatch runs with CSV, JSON and SVG output.

mod svg;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::caseio::{case33, read_case};
use crate::formulations::{build, distflow_point_to_socp, FormulationKind};
use crate::ipm::{solve_dispatch, IpmOptions, SolveStatus};
use crate::netmodel::{Network, HOURS_PER_DAY};
use crate::nlpcore::check_derivatives;
use crate::oracle::{bfs_power_flow, mc_sample};
use crate::region::{assemble_polygon, compare, contains, polygon_area, RegionPolygon};
use crate::sweep::{sweep_boundary, Boundary, Side, SweepConfig, SweepError};

pub use svg::render_region_svg;

/// Monte Carlo samples drawn per hour by `verify`.
pub const VERIFY_SAMPLES: usize = 5000;
/// Random interior points per formulation for derivative checks in `verify`.
pub const VERIFY_DERIVATIVE_POINTS: usize = 20;
/// Dilation of the DistFlow region for oracle containment, pu.
pub const CONTAINMENT_DILATION: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(
    name = "flexdom",
    version,
    about = "Flexibility regions of radial distribution networks at the substation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep the feasible exchange region and write CSV, metrics and SVG.
    Region(RunArgs),
    /// Run derivative, oracle and relaxation checks.
    Verify(RunArgs),
    /// Print the least-cost dispatch per formulation and hour as JSON.
    Dispatch(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Case file (MATPOWER `.m` or native JSON); defaults to the bundled 33-bus feeder.
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Comma-separated formulations: acopf, distflow, socp, lindistflow.
    #[arg(long, default_value = "acopf,distflow,socp,lindistflow")]
    pub formulations: String,
    /// Hours of the load profile, e.g. `14`, `12-15` or `1,6-8`.
    #[arg(long, default_value = "14")]
    pub hours: String,
    /// Boundary points per region (even, at least 4).
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    /// Output directory.
    #[arg(long, default_value = "flexdom-out")]
    pub out: PathBuf,
    /// Seed for Monte Carlo sampling and random derivative checks.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Run independent (hour, formulation) jobs concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// KKT tolerance of the interior-point solver.
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Validated run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub network: Network,
    pub case_name: String,
    pub formulations: Vec<FormulationKind>,
    pub hours: Vec<usize>,
    pub n_points: usize,
    pub out: PathBuf,
    pub seed: u64,
    pub parallel: bool,
    pub solver: IpmOptions,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("solve: {0}")]
    Solve(String),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solve(_) | CliError::Io(_) => 2,
            CliError::Verify(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Solve(_) => "solve",
            CliError::Verify(_) => "verify",
            CliError::Io(_) => "io",
        }
    }

    /// Machine-readable error report.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() }).to_string()
    }
}

/// Parses `14`, `12-15`, `1,6-8`; sorted and de-duplicated.
pub fn parse_hours(text: &str) -> Result<Vec<usize>, String> {
    let mut hours = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad hour '{s}'"))
        };
        let (a, b) = match part.split_once('-') {
            Some((a, b)) => (parse(a)?, parse(b)?),
            None => {
                let h = parse(part)?;
                (h, h)
            }
        };
        if a > b {
            return Err(format!("empty hour range '{part}'"));
        }
        for h in a..=b {
            if !(1..=HOURS_PER_DAY).contains(&h) {
                return Err(format!("hour {h} outside 1..={HOURS_PER_DAY}"));
            }
            hours.push(h);
        }
    }
    hours.sort_unstable();
    hours.dedup();
    if hours.is_empty() {
        return Err("no hours given".into());
    }
    Ok(hours)
}

pub fn parse_formulations(text: &str) -> Result<Vec<FormulationKind>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind: FormulationKind = part
            .parse()
            .map_err(|_| format!("unknown formulation '{part}'"))?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    if out.is_empty() {
        return Err("no formulations given".into());
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_args(args: &RunArgs) -> Result<RunConfig, CliError> {
        let (network, case_name) = match &args.case {
            Some(path) => {
                if !path.is_file() {
                    return Err(CliError::Config(format!(
                        "case file {} does not exist",
                        path.display()
                    )));
                }
                let net = read_case(path).map_err(|e| CliError::Config(e.to_string()))?;
                let name = path
                    .file_stem()
                    .map_or("case".into(), |s| s.to_string_lossy().into_owned());
                (net, name)
            }
            None => (case33(), "case33".to_string()),
        };
        let mut solver = IpmOptions::default();
        if let Some(tol) = args.tol {
            solver.tol_kkt = tol;
        }
        solver.validate().map_err(CliError::Config)?;
        let cfg = RunConfig {
            network,
            case_name,
            formulations: parse_formulations(&args.formulations).map_err(CliError::Config)?,
            hours: parse_hours(&args.hours).map_err(CliError::Config)?,
            n_points: args.points,
            out: args.out.clone(),
            seed: args.seed,
            parallel: args.parallel,
            solver,
        };
        cfg.sweep_config(FormulationKind::LinDistFlow)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn sweep_config(&self, kind: FormulationKind) -> SweepConfig {
        SweepConfig {
            solver: self.solver.clone(),
            ..SweepConfig::new(kind).with_points(self.n_points)
        }
    }

    fn hour_network(&self, hour: usize) -> Result<Network, CliError> {
        self.network
            .scale_loads(hour)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    fn jobs(&self) -> Vec<(usize, FormulationKind)> {
        self.hours
            .iter()
            .flat_map(|&h| self.formulations.iter().map(move |&k| (h, k)))
            .collect()
    }

    /// Runs `f` over every (hour, formulation) pair, concurrently when requested.
    fn run_jobs<T: Send>(
        &self,
        f: impl Fn(usize, FormulationKind) -> T + Sync,
    ) -> Vec<((usize, FormulationKind), T)> {
        let jobs = self.jobs();
        if self.parallel {
            jobs.into_par_iter()
                .map(|(h, k)| ((h, k), f(h, k)))
                .collect()
        } else {
            jobs.into_iter().map(|(h, k)| ((h, k), f(h, k))).collect()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedBand {
    pub side: String,
    pub band_index: usize,
    pub status: String,
}

/// One metrics record per (hour, formulation).
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord {
    pub hour: usize,
    pub formulation: String,
    pub area_pu2: f64,
    /// `None` when DistFlow was not swept for this hour.
    pub hausdorff_vs_distflow: Option<f64>,
    pub sym_diff_vs_distflow: Option<f64>,
    pub max_import_p: f64,
    pub max_export_p: f64,
    pub total_wall_ms: f64,
    pub failed_bands: Vec<FailedBand>,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobError {
    pub hour: usize,
    pub formulation: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RegionSummary {
    pub metrics: Vec<MetricsRecord>,
    pub errors: Vec<JobError>,
    pub files: Vec<PathBuf>,
}

/// One CSV row per optimal boundary point.
#[derive(Debug, Clone, Serialize)]
pub struct CsvRow {
    pub hour: usize,
    pub formulation: &'static str,
    pub side: Side,
    pub band_index: usize,
    pub p_se_pu: f64,
    pub q_se_pu: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub solve_ms: f64,
}

/// CSV of the optimal boundary points, with a header row.
pub fn boundary_csv(hour: usize, b: &Boundary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in b.optimal() {
        w.serialize(CsvRow {
            hour,
            formulation: b.kind.key(),
            side: p.side,
            band_index: p.band_index,
            p_se_pu: p.p_se,
            q_se_pu: p.q_se,
            status: p.status,
            iterations: p.iterations,
            solve_ms: p.solve_time.as_secs_f64() * 1e3,
        })
        .expect("in-memory CSV");
    }
    if b.optimal().next().is_none() {
        w.write_record([
            "hour",
            "formulation",
            "side",
            "band_index",
            "p_se_pu",
            "q_se_pu",
            "status",
            "iterations",
            "solve_ms",
        ])
        .expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
}

fn write_file(path: &Path, contents: &str, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::write(path, contents)?;
    files.push(path.to_path_buf());
    Ok(())
}

fn sweep_job(cfg: &RunConfig, hour: usize, kind: FormulationKind) -> Result<Boundary, SweepError> {
    let net = cfg.network.scale_loads(hour)?;
    let start = Instant::now();
    let b = sweep_boundary(&net, &cfg.sweep_config(kind));
    log::info!("hour {hour} {kind}: {:.2} s", start.elapsed().as_secs_f64());
    b
}

/// Sweeps every (hour, formulation), writes per-job CSVs, one SVG per hour
/// and `metrics.json`. Failed sweeps are listed in the summary.
pub fn cmd_region(cfg: &RunConfig) -> Result<RegionSummary, CliError> {
    fs::create_dir_all(&cfg.out)?;
    let results = cfg.run_jobs(|h, k| sweep_job(cfg, h, k));
    let mut files = Vec::new();
    let mut errors = Vec::new();
    let mut by_hour: BTreeMap<usize, Vec<(Boundary, Option<RegionPolygon>)>> = BTreeMap::new();
    for ((hour, kind), r) in results {
        match r {
            Ok(b) => {
                let path = cfg
                    .out
                    .join(format!("region_h{hour:02}_{}.csv", kind.key()));
                write_file(&path, &boundary_csv(hour, &b), &mut files)?;
                let poly = match assemble_polygon(&b.points) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        errors.push(JobError {
                            hour,
                            formulation: kind.key().into(),
                            message: format!("polygon: {e}"),
                        });
                        None
                    }
                };
                by_hour.entry(hour).or_default().push((b, poly));
            }
            Err(e) => errors.push(JobError {
                hour,
                formulation: kind.key().into(),
                message: e.to_string(),
            }),
        }
    }

    let mut metrics = Vec::new();
    for (&hour, jobs) in &by_hour {
        let reference = jobs
            .iter()
            .find(|(b, _)| b.kind == FormulationKind::DistFlow)
            .and_then(|(_, p)| p.as_ref());
        for (b, poly) in jobs {
            let Some(poly) = poly else { continue };
            let m = reference.map(|r| compare(poly, r));
            metrics.push(MetricsRecord {
                hour,
                formulation: b.kind.key().into(),
                area_pu2: polygon_area(poly),
                hausdorff_vs_distflow: m.map(|m| m.hausdorff_vs_ref),
                sym_diff_vs_distflow: m.map(|m| m.sym_diff_area_vs_ref),
                max_import_p: poly.max_import_p(),
                max_export_p: poly.max_export_p(),
                total_wall_ms: b.wall_time.as_secs_f64() * 1e3,
                failed_bands: b
                    .failed()
                    .iter()
                    .map(|p| FailedBand {
                        side: p.side.to_string(),
                        band_index: p.band_index,
                        status: p.status.to_string(),
                    })
                    .collect(),
            });
        }
        let traces: Vec<(FormulationKind, &Boundary)> =
            jobs.iter().map(|(b, _)| (b.kind, b)).collect();
        let title = format!("{}, hour {hour}", cfg.case_name);
        let path = cfg.out.join(format!("region_h{hour:02}.svg"));
        write_file(&path, &render_region_svg(&title, &traces), &mut files)?;
    }
    if by_hour.len() > 1 {
        let panels: Vec<(String, Vec<(FormulationKind, &Boundary)>)> = by_hour
            .iter()
            .map(|(h, jobs)| {
                (
                    format!("hour {h}"),
                    jobs.iter().map(|(b, _)| (b.kind, b)).collect(),
                )
            })
            .collect();
        let path = cfg.out.join("region_hours.svg");
        write_file(
            &path,
            &svg::render_grid_svg(&cfg.case_name, &panels),
            &mut files,
        )?;
    }
    let json =
        serde_json::to_string_pretty(&serde_json::json!({ "metrics": metrics, "errors": errors }))
            .expect("metrics serialize");
    write_file(&cfg.out.join("metrics.json"), &json, &mut files)?;
    Ok(RegionSummary {
        metrics,
        errors,
        files,
    })
}

/// One row of the verification table.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn format_checks(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for c in checks {
        let _ = writeln!(
            s,
            "{:<width$}  {}  {}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    s
}

/// Network validation, derivative checks, and per hour the oracle
/// containment, oracle round-trip and relaxation containment of the
/// DistFlow region.
pub fn cmd_verify(cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();
    let violations = cfg.network.validate();
    let detail = violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ");
    checks.push(Check::new(
        "network validation",
        violations.is_empty(),
        if detail.is_empty() {
            "no violations".into()
        } else {
            detail
        },
    ));
    if !violations.is_empty() {
        return Ok(checks);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for &kind in &cfg.formulations {
        let f = build(&cfg.network, kind).map_err(|e| CliError::Solve(e.to_string()))?;
        let mut worst: f64 = 0.0;
        let mut failing = 0;
        for _ in 0..VERIFY_DERIVATIVE_POINTS {
            let x = f.problem.sample_interior_point(&mut rng, 1e-3);
            for r in check_derivatives(&f.problem, &x, 1e-6, 1e-5) {
                worst = worst.max(r.max_rel_error);
                failing += usize::from(!r.passed);
            }
        }
        checks.push(Check::new(
            format!("derivatives {}", kind.key()),
            failing == 0,
            format!("{VERIFY_DERIVATIVE_POINTS} points, worst relative error {worst:.2e}, {failing} failures"),
        ));
    }

    let hour_checks = |hour: usize| -> Result<Vec<Check>, CliError> {
        let net = cfg.hour_network(hour)?;
        let b = sweep_boundary(&net, &cfg.sweep_config(FormulationKind::DistFlow))
            .map_err(|e| CliError::Solve(format!("hour {hour} DistFlow: {e}")))?;
        let poly = assemble_polygon(&b.points)
            .map_err(|e| CliError::Solve(format!("hour {hour} DistFlow polygon: {e}")))?;
        let mut out = Vec::new();

        let mc = mc_sample(&net, VERIFY_SAMPLES, cfg.seed)
            .map_err(|e| CliError::Solve(e.to_string()))?;
        let outside = mc
            .feasible
            .iter()
            .filter(|(_, pf)| !contains(&poly, (pf.p_se, pf.q_se), CONTAINMENT_DILATION))
            .count();
        out.push(Check::new(
            format!("oracle containment h{hour}"),
            outside == 0 && !mc.feasible.is_empty(),
            format!(
                "{} feasible of {} samples, {outside} outside",
                mc.feasible.len(),
                mc.drawn
            ),
        ));

        let f = &b.formulation;
        let mut worst: f64 = 0.0;
        let mut failures = 0;
        for p in b.optimal() {
            match bfs_power_flow(&f.network, &f.control_setting(&p.x)) {
                Ok(pf) if pf.converged => {
                    worst = worst.max((pf.p_se - p.p_se).abs().max((pf.q_se - p.q_se).abs()))
                }
                _ => failures += 1,
            }
        }
        out.push(Check::new(
            format!("oracle round trip h{hour}"),
            failures == 0 && worst <= 1e-5,
            format!("worst mismatch {worst:.2e} pu, {failures} power-flow failures"),
        ));

        let socp = build(&net, FormulationKind::DistFlowSocp)
            .map_err(|e| CliError::Solve(e.to_string()))?;
        let mut worst: f64 = 0.0;
        for p in b.optimal() {
            let y = distflow_point_to_socp(f, &socp, &p.x);
            worst = worst.max(socp.problem.max_violation(&y).0);
        }
        out.push(Check::new(
            format!("relaxation containment h{hour}"),
            worst <= 1e-6,
            format!("worst SOCP residual {worst:.2e}"),
        ));
        Ok(out)
    };
    let per_hour: Vec<Result<Vec<Check>, CliError>> = if cfg.parallel {
        cfg.hours.par_iter().map(|&h| hour_checks(h)).collect()
    } else {
        cfg.hours.iter().map(|&h| hour_checks(h)).collect()
    };
    for r in per_hour {
        checks.extend(r?);
    }
    Ok(checks)
}

#[derive(Debug, Clone, Serialize)]
pub struct DgReport {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CapReport {
    pub bus: usize,
    pub q: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DispatchReport {
    pub hour: usize,
    pub formulation: String,
    pub status: String,
    pub objective: f64,
    pub p_se: f64,
    pub q_se: f64,
    pub dg: Vec<DgReport>,
    pub capacitors: Vec<CapReport>,
    pub iterations: usize,
}

/// Least-cost dispatch per (hour, formulation).
pub fn cmd_dispatch(cfg: &RunConfig) -> Result<Vec<DispatchReport>, CliError> {
    let results = cfg.run_jobs(|hour, kind| -> Result<DispatchReport, CliError> {
        let net = cfg.hour_network(hour)?;
        let d = solve_dispatch(&net, kind, &cfg.solver)
            .map_err(|e| CliError::Solve(format!("hour {hour} {kind}: {e}")))?;
        let (p_se, q_se) = d.formulation.exchange(&d.result.x);
        let controls = d.formulation.control_setting(&d.result.x);
        let gens = &d.formulation.network.generators;
        Ok(DispatchReport {
            hour,
            formulation: kind.key().into(),
            status: d.result.status.to_string(),
            objective: d.result.objective,
            p_se,
            q_se,
            dg: controls
                .dg
                .iter()
                .map(|s| DgReport {
                    bus: gens[s.generator].bus,
                    p: s.p,
                    q: s.q,
                })
                .collect(),
            capacitors: controls
                .capacitors
                .iter()
                .map(|c| CapReport { bus: c.bus, q: c.q })
                .collect(),
            iterations: d.result.iterations,
        })
    });
    results.into_iter().map(|(_, r)| r).collect()
}

/// Prints a line, tolerating a closed pipe.
fn out(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let result = match &cli.command {
        Command::Region(a) => {
            RunConfig::from_args(a).and_then(|cfg| report_region(cmd_region(&cfg)?))
        }
        Command::Verify(a) => {
            RunConfig::from_args(a).and_then(|cfg| report_verify(cmd_verify(&cfg)?))
        }
        Command::Dispatch(a) => {
            RunConfig::from_args(a).and_then(|cfg| report_dispatch(cmd_dispatch(&cfg)?))
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn report_region(s: RegionSummary) -> Result<(), CliError> {
    for f in &s.files {
        out(&format!("wrote {}", f.display()));
    }
    if s.errors.is_empty() {
        return Ok(());
    }
    let msg: Vec<String> = s
        .errors
        .iter()
        .map(|e| format!("hour {} {}: {}", e.hour, e.formulation, e.message))
        .collect();
    Err(CliError::Solve(msg.join("; ")))
}

fn report_verify(checks: Vec<Check>) -> Result<(), CliError> {
    out(format_checks(&checks).trim_end());
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}

fn report_dispatch(reports: Vec<DispatchReport>) -> Result<(), CliError> {
    out(&serde_json::to_string_pretty(&reports).expect("dispatch serializes"));
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| r.status != "optimal")
        .map(|r| format!("hour {} {}: {}", r.hour, r.formulation, r.status))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Solve(failed.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> RunArgs {
        let mut argv = vec!["flexdom", "region"];
        argv.extend_from_slice(extra);
        match Cli::parse_from(argv).command {
            Command::Region(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn hour_ranges() {
        assert_eq!(parse_hours("14").unwrap(), vec![14]);
        assert_eq!(parse_hours("12-15").unwrap(), vec![12, 13, 14, 15]);
        assert_eq!(parse_hours("6-7, 1,7").unwrap(), vec![1, 6, 7]);
        assert!(parse_hours("0").is_err());
        assert!(parse_hours("25").is_err());
        assert!(parse_hours("15-12").is_err());
        assert!(parse_hours("").is_err());
    }

    #[test]
    fn formulation_lists() {
        assert_eq!(
            parse_formulations("socp, acopf,socp").unwrap(),
            vec![FormulationKind::DistFlowSocp, FormulationKind::AcOpf]
        );
        assert!(parse_formulations("").is_err());
        assert!(parse_formulations("dc").is_err());
    }

    #[test]
    fn empty_formulations_is_config_error() {
        let err = RunConfig::from_args(&args(&["--formulations", ""])).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn missing_case_is_config_error() {
        let err = RunConfig::from_args(&args(&["--case", "/nonexistent/case.m"])).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn odd_points_rejected() {
        assert_eq!(
            RunConfig::from_args(&args(&["--points", "7"]))
                .unwrap_err()
                .exit_code(),
            1
        );
    }

    #[test]
    fn error_report_is_json() {
        let v: serde_json::Value =
            serde_json::from_str(&CliError::Verify("x".into()).to_json()).unwrap();
        assert_eq!(v["exit_code"], 3);
        assert_eq!(v["error"], "verify");
    }
}
