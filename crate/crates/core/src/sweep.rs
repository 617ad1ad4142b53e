//! Epsilon-constraint construction of the feasible exchange region at the
//! substation.
//!
//! The reactive exchange range `[q_min, q_max]` is split into `K = N / 2`
//! equal bands. Within each band the active exchange is maximized (upper
//! side) and minimized (lower side), with loads fixed and every DG and
//! capacitor free within its limits.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::formulations::{build, Formulation, FormulationError, FormulationKind};
use crate::ipm::{solve, IpmOptions, IpmResult, SolveStatus, WarmStart};
use crate::netmodel::{Network, NetworkError};
use crate::nlpcore::{LinearObjective, NlpError, NlpProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub kind: FormulationKind,
    /// Total boundary points `N`, split evenly between the two sides.
    pub n_points: usize,
    pub band_relax: f64,
    pub warm_start_chain: bool,
    pub solver: IpmOptions,
}

impl SweepConfig {
    pub fn new(kind: FormulationKind) -> Self {
        SweepConfig {
            kind,
            n_points: 200,
            band_relax: 1e-8,
            warm_start_chain: true,
            solver: IpmOptions::default(),
        }
    }

    pub fn with_points(mut self, n: usize) -> Self {
        self.n_points = n;
        self
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.n_points < 4 || !self.n_points.is_multiple_of(2) {
            return Err(SweepError::Config(format!(
                "n_points must be even and at least 4, got {}",
                self.n_points
            )));
        }
        if !(self.band_relax >= 0.0 && self.band_relax.is_finite()) {
            return Err(SweepError::Config(format!(
                "band_relax {} invalid",
                self.band_relax
            )));
        }
        self.solver.validate().map_err(SweepError::Config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Maximum active import.
    Upper,
    /// Minimum active import.
    Lower,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Upper => "upper",
            Side::Lower => "lower",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryPoint {
    pub p_se: f64,
    pub q_se: f64,
    pub side: Side,
    /// 1-based band index `kappa`.
    pub band_index: usize,
    pub status: SolveStatus,
    pub iterations: usize,
    pub factorizations: usize,
    pub solve_time: Duration,
    pub kkt_residual: f64,
    /// Full solution vector of the band problem.
    pub x: Vec<f64>,
}

/// One `[lower, upper]` reactive band (without the relaxation margin).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Band {
    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Debug, Clone)]
pub struct Boundary {
    pub kind: FormulationKind,
    pub q_min: f64,
    pub q_max: f64,
    pub epsilon: f64,
    pub bands: Vec<Band>,
    /// Ordered by side (upper first), then band index.
    pub points: Vec<BoundaryPoint>,
    /// The oriented formulation the bands were solved on.
    pub formulation: Formulation,
    pub wall_time: Duration,
}

impl Boundary {
    pub fn failed(&self) -> Vec<&BoundaryPoint> {
        self.points
            .iter()
            .filter(|p| !p.status.is_optimal())
            .collect()
    }

    pub fn optimal(&self) -> impl Iterator<Item = &BoundaryPoint> {
        self.points.iter().filter(|p| p.status.is_optimal())
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Nlp(#[from] NlpError),
    #[error("{which} reactive exchange solve ended with status {status} (kkt {kkt:.3e}, {iterations} iterations)")]
    Extremal {
        which: &'static str,
        status: SolveStatus,
        kkt: f64,
        iterations: usize,
    },
    #[error("{failed} of {total} band solves failed")]
    TooManyFailures { failed: usize, total: usize },
}

fn with_objective(problem: &NlpProblem, var: usize, coef: f64) -> NlpProblem {
    let mut p = problem.clone();
    p.objective = LinearObjective {
        terms: vec![(var, coef)],
        constant: 0.0,
    };
    p
}

/// Extremal reactive exchange `[q_min, q_max]` over the feasible set.
pub fn q_range(
    network: &Network,
    kind: FormulationKind,
    options: &IpmOptions,
) -> Result<(f64, f64), SweepError> {
    let f = build(network, kind)?;
    let base = solve(&f.problem, options, None)?;
    let warm = base.status.is_optimal().then(|| base.warm_start());
    q_range_of(&f, options, warm.as_ref())
}

/// Reactive ranges narrower than this are treated as a single point.
pub const COLLAPSE_TOL: f64 = 1e-7;

fn q_range_of(
    f: &Formulation,
    options: &IpmOptions,
    warm: Option<&WarmStart>,
) -> Result<(f64, f64), SweepError> {
    let q = f.problem.interface.q_se;
    let mut out = [0.0; 2];
    for (slot, (which, coef)) in [("minimum", 1.0), ("maximum", -1.0)]
        .into_iter()
        .enumerate()
    {
        let p = with_objective(&f.problem, q, coef);
        let mut r = solve(&p, options, warm)?;
        if !r.status.is_optimal() && warm.is_some() {
            r = solve(&p, options, None)?;
        }
        if !r.status.is_optimal() {
            return Err(SweepError::Extremal {
                which,
                status: r.status,
                kkt: r.kkt_residual,
                iterations: r.iterations,
            });
        }
        out[slot] = r.x[q];
    }
    let (lo, hi) = (out[0].min(out[1]), out[0].max(out[1]));
    if hi - lo <= COLLAPSE_TOL {
        let mid = 0.5 * (lo + hi);
        return Ok((mid, mid));
    }
    Ok((lo, hi))
}

/// Bands partitioning `[q_min, q_max]`; a collapsed range gives one band.
pub fn make_bands(q_min: f64, q_max: f64, n_points: usize) -> (f64, Vec<Band>) {
    let width = q_max - q_min;
    if width <= 0.0 {
        return (
            0.0,
            vec![Band {
                index: 1,
                lower: q_min,
                upper: q_max,
            }],
        );
    }
    let k = n_points / 2;
    let eps = width / k as f64;
    let bands = (1..=k)
        .map(|kappa| {
            let center = q_min + (kappa as f64 - 0.5) * eps;
            // shared endpoints are computed once so neighbours agree exactly
            let lower = if kappa == 1 {
                q_min
            } else {
                center - 0.5 * eps
            };
            let upper = if kappa == k {
                q_max
            } else {
                center + 0.5 * eps
            };
            Band {
                index: kappa,
                lower,
                upper,
            }
        })
        .collect::<Vec<_>>();
    let mut bands = bands;
    for i in 1..bands.len() {
        bands[i].lower = bands[i - 1].upper;
    }
    (eps, bands)
}

pub fn band_problem(f: &Formulation, band: &Band, side: Side, config: &SweepConfig) -> NlpProblem {
    let iface = f.problem.interface;
    let coef = match side {
        Side::Upper => -1.0,
        Side::Lower => 1.0,
    };
    // the solver widens bounds by its own relaxation; keep the total at band_relax
    let margin =
        |b: f64| (config.band_relax - config.solver.bound_relax * b.abs().max(1.0)).max(0.0);
    let mut p = with_objective(&f.problem, iface.p_se, coef);
    let var = &mut p.variables[iface.q_se];
    var.lower = (band.lower - margin(band.lower)).max(var.lower);
    var.upper = (band.upper + margin(band.upper)).min(var.upper);
    var.init = var.init.clamp(var.lower, var.upper);
    p
}

fn solve_band(
    f: &Formulation,
    band: &Band,
    side: Side,
    config: &SweepConfig,
    warm: Option<&WarmStart>,
) -> Result<(BoundaryPoint, IpmResult), NlpError> {
    let p = band_problem(f, band, side, config);
    let mut r = solve(&p, &config.solver, warm)?;
    if !r.status.is_optimal() && warm.is_some() {
        log::debug!(
            "{} {side} band {} warm start ended {}, retrying cold",
            f.kind,
            band.index,
            r.status
        );
        let cold = solve(&p, &config.solver, None)?;
        let elapsed = r.wall_time + cold.wall_time;
        r = cold;
        r.wall_time = elapsed;
    }
    let (p_se, q_se) = f.exchange(&r.x);
    let point = BoundaryPoint {
        p_se,
        q_se,
        side,
        band_index: band.index,
        status: r.status,
        iterations: r.iterations,
        factorizations: r.factorizations,
        solve_time: r.wall_time,
        kkt_residual: r.kkt_residual,
        x: r.x.clone(),
    };
    Ok((point, r))
}

pub fn sweep_boundary(network: &Network, config: &SweepConfig) -> Result<Boundary, SweepError> {
    config.validate()?;
    let start = Instant::now();
    let f = build(network, config.kind)?;
    let base = solve(&f.problem, &config.solver, None)?;
    let base_warm = base.status.is_optimal().then(|| base.warm_start());
    if base_warm.is_none() {
        log::warn!(
            "{} base dispatch ended {}, sweeping from cold starts",
            config.kind,
            base.status
        );
    }
    let (q_min, q_max) = q_range_of(&f, &config.solver, base_warm.as_ref())?;
    let (epsilon, bands) = make_bands(q_min, q_max, config.n_points);

    let mut points = Vec::with_capacity(2 * bands.len());
    for side in [Side::Upper, Side::Lower] {
        if config.warm_start_chain {
            let mut warm = base_warm.clone();
            for band in &bands {
                let (point, r) = solve_band(&f, band, side, config, warm.as_ref())?;
                if r.status.is_optimal() {
                    warm = Some(r.warm_start());
                }
                points.push(point);
            }
        } else {
            let solved: Result<Vec<_>, NlpError> = bands
                .par_iter()
                .map(|band| solve_band(&f, band, side, config, base_warm.as_ref()).map(|(p, _)| p))
                .collect();
            points.extend(solved?);
        }
    }
    let failed = points.iter().filter(|p| !p.status.is_optimal()).count();
    let total = points.len();
    if failed * 10 > total {
        return Err(SweepError::TooManyFailures { failed, total });
    }
    Ok(Boundary {
        kind: config.kind,
        q_min,
        q_max,
        epsilon,
        bands,
        points,
        formulation: f,
        wall_time: start.elapsed(),
    })
}

/// Independent single-period sweeps on the hourly scaled networks.
pub fn sweep_hours(
    network: &Network,
    config: &SweepConfig,
    hours: &[usize],
) -> BTreeMap<usize, Result<Boundary, SweepError>> {
    hours
        .iter()
        .map(|&h| {
            let r = network
                .scale_loads(h)
                .map_err(SweepError::from)
                .and_then(|net| sweep_boundary(&net, config));
            (h, r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{tinyfeeder, Generator};

    fn tiny_with_dg(p_max: f64) -> Network {
        let mut net = tinyfeeder();
        net.generators.push(Generator {
            bus: 2,
            p_min: 0.0,
            p_max,
            q_min: 0.0,
            q_max: 0.0,
            cost: 10.0,
        });
        net
    }

    #[test]
    fn config_rejects_odd_points() {
        assert!(SweepConfig::new(FormulationKind::LinDistFlow)
            .with_points(7)
            .validate()
            .is_err());
        assert!(SweepConfig::new(FormulationKind::LinDistFlow)
            .with_points(2)
            .validate()
            .is_err());
        assert!(SweepConfig::new(FormulationKind::LinDistFlow)
            .with_points(4)
            .validate()
            .is_ok());
    }

    #[test]
    fn bands_partition_range() {
        let (eps, bands) = make_bands(-0.3, 0.7, 10);
        assert_eq!(bands.len(), 5);
        assert!((eps - 0.2).abs() < 1e-15);
        assert_eq!(bands[0].lower, -0.3);
        assert_eq!(bands[4].upper, 0.7);
        for w in bands.windows(2) {
            assert_eq!(w[0].upper, w[1].lower);
        }
        for b in &bands {
            let expected = -0.3 + (b.index as f64 - 0.5) * eps;
            assert!((b.center() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn collapsed_range_has_one_band() {
        let (eps, bands) = make_bands(0.5, 0.5, 200);
        assert_eq!(eps, 0.0);
        assert_eq!(bands.len(), 1);
    }

    #[test]
    fn no_flexibility_gives_two_points() {
        let cfg = SweepConfig::new(FormulationKind::LinDistFlow).with_points(4);
        let b = sweep_boundary(&tinyfeeder(), &cfg).unwrap();
        assert!((b.q_min - 0.5).abs() < 1e-8 && (b.q_max - 0.5).abs() < 1e-8);
        assert_eq!(b.points.len(), 2);
        for p in &b.points {
            assert!((p.p_se - 1.0).abs() < 1e-7, "{}", p.p_se);
        }
    }

    #[test]
    fn lossless_dg_range() {
        let cfg = SweepConfig::new(FormulationKind::LinDistFlow).with_points(4);
        let b = sweep_boundary(&tiny_with_dg(2.0), &cfg).unwrap();
        let upper = b.points.iter().find(|p| p.side == Side::Upper).unwrap();
        let lower = b.points.iter().find(|p| p.side == Side::Lower).unwrap();
        assert!((upper.p_se - 1.0).abs() < 1e-7);
        assert!((lower.p_se + 1.0).abs() < 1e-7);
    }

    #[test]
    fn capacitor_spans_reactive_range() {
        let mut net = tinyfeeder();
        net.buses[1].cap_q_max = 0.5;
        let (lo, hi) = q_range(&net, FormulationKind::LinDistFlow, &IpmOptions::default()).unwrap();
        assert!(lo.abs() < 1e-7 && (hi - 0.5).abs() < 1e-7, "{lo} {hi}");
    }

    #[test]
    fn hours_out_of_range_are_isolated() {
        let cfg = SweepConfig::new(FormulationKind::LinDistFlow).with_points(4);
        let out = sweep_hours(&tiny_with_dg(1.0), &cfg, &[0, 3]);
        assert!(out[&0].is_err());
        assert!(out[&3].is_ok());
    }
}
