//! Primal-dual interior-point solver for [`NlpProblem`].
//!
//! Inequalities `h(x) <= 0` become `h(x) + s = 0` with `s >= 0`; bounds and
//! slacks carry a logarithmic barrier. Each iteration solves the reduced
//! primal-dual Newton system
//!
//! ```text
//! [ W + Sigma_x + dw I    J^T ] [dx]   [ -r_x ]
//! [ J                     -D  ] [dy] = [ -r_c ]
//! ```
//!
//! where `D` is `dc` on equality rows and `1 / (Sigma_s + dw) + dc` on
//! inequality rows (the slack step is eliminated). The matrix is factorized
//! by dense Bunch-Kaufman `LDL^T`, and `dw` is raised until the inertia is
//! `(n, m, 0)`. Steps are clipped by fraction-to-boundary and globalized by
//! backtracking on an l1 exact-penalty merit function with one second-order
//! correction. Purely linear problems with bounded variables use a Cholesky
//! factorization of the Schur complement `J H^-1 J^T + D` instead.

#![allow(clippy::needless_range_loop)]

use std::fmt;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::formulations::{build, Formulation, FormulationError, FormulationKind};
use crate::linalg::{minimum_degree, Cholesky, Ldlt, SymMatrix};
use crate::netmodel::Network;
use crate::nlpcore::{ConstraintKind, NlpError, NlpProblem, Triplets};

#[derive(Debug, Clone, PartialEq)]
pub struct IpmOptions {
    pub tol_kkt: f64,
    pub max_iter: usize,
    pub mu_init: f64,
    /// Barrier reduction factor `sigma`.
    pub mu_reduce: f64,
    /// Minimum fraction-to-boundary `tau`.
    pub fraction_to_boundary: f64,
    /// First non-zero Hessian regularization `delta_0`.
    pub inertia_regularization: f64,
    /// Relative outward relaxation applied to every variable bound.
    pub bound_relax: f64,
    /// Barrier parameter used when a warm start is supplied.
    pub warm_mu_init: f64,
    /// Relative distance a warm-start point is pushed inside its bounds.
    pub warm_bound_push: f64,
    /// Merit penalty above which stalled feasibility is reported as infeasible.
    pub penalty_cap: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            tol_kkt: 1e-8,
            max_iter: 200,
            mu_init: 0.1,
            mu_reduce: 0.2,
            fraction_to_boundary: 0.995,
            inertia_regularization: 1e-8,
            bound_relax: 1e-10,
            warm_mu_init: 1e-6,
            warm_bound_push: 1e-5,
            penalty_cap: 1e8,
        }
    }
}

impl IpmOptions {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("tol_kkt", self.tol_kkt),
            ("mu_init", self.mu_init),
            ("mu_reduce", self.mu_reduce),
            ("fraction_to_boundary", self.fraction_to_boundary),
            ("inertia_regularization", self.inertia_regularization),
            ("bound_relax", self.bound_relax),
            ("warm_mu_init", self.warm_mu_init),
            ("warm_bound_push", self.warm_bound_push),
            ("penalty_cap", self.penalty_cap),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_iter == 0 {
            return Err("max_iter must be positive".into());
        }
        if self.mu_reduce >= 1.0 {
            return Err(format!(
                "mu_reduce must lie in (0, 1), got {}",
                self.mu_reduce
            ));
        }
        if self.fraction_to_boundary >= 1.0 {
            return Err(format!(
                "fraction_to_boundary must lie in (0, 1), got {}",
                self.fraction_to_boundary
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    InfeasibleDetected,
    IterationLimit,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::InfeasibleDetected => "infeasible_detected",
            SolveStatus::IterationLimit => "iteration_limit",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }

    pub fn is_optimal(self) -> bool {
        self == SolveStatus::Optimal
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Primal point and multipliers from an earlier solve of a problem with the
/// same variables and constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    /// One multiplier per constraint, in constraint order.
    pub multipliers: Vec<f64>,
    /// `(lower, upper)` bound multipliers per variable.
    pub bound_duals: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers of equality constraints, in constraint order.
    pub duals_eq: Vec<f64>,
    /// Multipliers of inequality constraints (non-negative), in constraint order.
    pub duals_ineq: Vec<f64>,
    /// `(lower, upper)` bound multipliers per variable (zero for fixed ones).
    pub duals_bounds: Vec<(f64, f64)>,
    /// All constraint multipliers in constraint order.
    pub multipliers: Vec<f64>,
    /// Scaled KKT error at the returned point.
    pub kkt_residual: f64,
    pub iterations: usize,
    /// KKT factorizations, including inertia-correction retries.
    pub factorizations: usize,
    pub wall_time: Duration,
}

impl IpmResult {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            x: self.x.clone(),
            multipliers: self.multipliers.clone(),
            bound_duals: self.duals_bounds.clone(),
        }
    }
}

const KAPPA_SIGMA: f64 = 1e10;
const BOUND_PUSH: f64 = 1e-2;
const ARMIJO: f64 = 1e-4;
const MERIT_RHO: f64 = 0.1;
const MAX_DELTA: f64 = 1e20;
const ZERO_PIVOT: f64 = 1e-20;
const DELTA_C: f64 = 1e-9;
const MAX_DELTA_C: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;
const MERIT_MEMORY: usize = 4;

pub fn solve(
    problem: &NlpProblem,
    options: &IpmOptions,
    warm: Option<&WarmStart>,
) -> Result<IpmResult, NlpError> {
    problem.check()?;
    options.validate().map_err(NlpError::Malformed)?;
    if let Some(w) = warm {
        let n = problem.n_vars();
        let m = problem.n_constraints();
        for (len, expected) in [
            (w.x.len(), n),
            (w.multipliers.len(), m),
            (w.bound_duals.len(), n),
        ] {
            if len != expected {
                return Err(NlpError::Dimension { expected, got: len });
            }
        }
    }
    let start = Instant::now();
    let mut solver = Solver::new(problem, options);
    let status = solver.run(warm);
    Ok(solver.finish(status, start.elapsed()))
}

/// Dispatch solved on one formulation.
#[derive(Debug, Clone)]
pub struct Dispatch {
    pub formulation: Formulation,
    pub result: IpmResult,
}

/// Builds `kind` for `network` and minimizes the operating cost.
pub fn solve_dispatch(
    network: &Network,
    kind: FormulationKind,
    options: &IpmOptions,
) -> Result<Dispatch, DispatchError> {
    let formulation = build(network, kind)?;
    let result = solve(&formulation.problem, options, None)?;
    Ok(Dispatch {
        formulation,
        result,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum DispatchError {
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Nlp(#[from] NlpError),
}

struct Direction {
    /// Full length, zero on fixed variables.
    dx: Vec<f64>,
    ds: Vec<f64>,
    dy: Vec<f64>,
}

enum Factor {
    Full {
        ldlt: Ldlt,
        matrix: SymMatrix,
        dw: f64,
    },
    Schur {
        chol: Cholesky,
        h: Vec<f64>,
    },
}

impl Factor {
    fn dw(&self) -> f64 {
        match self {
            Factor::Full { dw, .. } => *dw,
            Factor::Schur { .. } => 0.0,
        }
    }
}

fn kkt_order(p: &NlpProblem, pos: &[Option<usize>], nf: usize) -> Vec<usize> {
    let hess = p
        .hessian_pattern()
        .into_iter()
        .filter_map(|(r, c)| Some((pos[r]?, pos[c]?)));
    let jac = p
        .jacobian_pattern()
        .into_iter()
        .filter_map(|(i, k)| Some((nf + i, pos[k]?)));
    minimum_degree(nf + p.n_constraints(), hess.chain(jac))
}

struct Solver<'a> {
    p: &'a NlpProblem,
    o: &'a IpmOptions,
    n: usize,
    m: usize,
    free: Vec<usize>,
    pos: Vec<Option<usize>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    slot: Vec<Option<usize>>,
    ineq_rows: Vec<usize>,
    grad_f: Vec<f64>,
    obj_scale: f64,
    linear: bool,
    /// Jacobian by free column, for the Schur path of linear problems.
    columns: Option<Vec<Vec<(usize, f64)>>>,
    /// Fill-reducing elimination order of the reduced KKT matrix.
    order: Option<Vec<usize>>,

    x: Vec<f64>,
    s: Vec<f64>,
    y: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    v: Vec<f64>,
    mu: f64,
    nu: f64,
    delta_last: f64,
    iterations: usize,
    factorizations: usize,
    kkt: f64,
    infeas_history: Vec<f64>,
    /// Recent accepted merit values for the current `(mu, nu)`.
    merit_memory: Vec<f64>,
    merit_key: (f64, f64),
}

impl<'a> Solver<'a> {
    fn new(p: &'a NlpProblem, o: &'a IpmOptions) -> Self {
        let n = p.n_vars();
        let m = p.n_constraints();
        let mut free = Vec::new();
        let mut pos = vec![None; n];
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for (k, var) in p.variables.iter().enumerate() {
            if var.is_fixed() {
                lo[k] = var.lower;
                hi[k] = var.upper;
                continue;
            }
            pos[k] = Some(free.len());
            free.push(k);
            if var.lower.is_finite() {
                lo[k] = var.lower - o.bound_relax * var.lower.abs().max(1.0);
            }
            if var.upper.is_finite() {
                hi[k] = var.upper + o.bound_relax * var.upper.abs().max(1.0);
            }
        }
        let mut slot = vec![None; m];
        let mut ineq_rows = Vec::new();
        for (i, c) in p.constraints.iter().enumerate() {
            if c.kind == ConstraintKind::Inequality {
                slot[i] = Some(ineq_rows.len());
                ineq_rows.push(i);
            }
        }
        let raw = p.objective.dense_gradient(n);
        let gmax = free.iter().map(|&k| raw[k].abs()).fold(0.0, f64::max);
        let obj_scale = if gmax > 100.0 { 100.0 / gmax } else { 1.0 };
        let grad_f = raw.iter().map(|g| g * obj_scale).collect();
        let linear = p.constraints.iter().all(|c| c.function.is_linear());
        let mi = ineq_rows.len();
        Solver {
            p,
            o,
            n,
            m,
            free,
            pos,
            lo,
            hi,
            slot,
            ineq_rows,
            grad_f,
            obj_scale,
            linear,
            columns: None,
            order: None,
            x: vec![0.0; n],
            s: vec![0.0; mi],
            y: vec![0.0; m],
            zl: vec![0.0; n],
            zu: vec![0.0; n],
            v: vec![0.0; mi],
            mu: o.mu_init,
            nu: 0.0,
            delta_last: 0.0,
            iterations: 0,
            factorizations: 0,
            kkt: f64::INFINITY,
            infeas_history: Vec::new(),
            merit_memory: Vec::new(),
            merit_key: (f64::NAN, f64::NAN),
        }
    }

    fn has_lo(&self, k: usize) -> bool {
        self.lo[k].is_finite()
    }

    fn has_hi(&self, k: usize) -> bool {
        self.hi[k].is_finite()
    }

    fn tau(&self) -> f64 {
        self.o.fraction_to_boundary.max(1.0 - self.mu)
    }

    /// Moves `x` strictly inside its bounds.
    fn push_inside(&self, x: &mut [f64], push: f64) {
        for &k in &self.free {
            let (l, u) = (self.lo[k], self.hi[k]);
            let xk = &mut x[k];
            match (l.is_finite(), u.is_finite()) {
                (true, true) => {
                    let pl = (push * l.abs().max(1.0)).min(push * (u - l));
                    let pu = (push * u.abs().max(1.0)).min(push * (u - l));
                    *xk = xk.clamp(l + pl, u - pu);
                }
                (true, false) => *xk = xk.max(l + push * l.abs().max(1.0)),
                (false, true) => *xk = xk.min(u - push * u.abs().max(1.0)),
                (false, false) => {}
            }
        }
    }

    fn constraint_values(&self, x: &[f64]) -> Option<Vec<f64>> {
        let vals: Vec<f64> = self
            .p
            .constraints
            .iter()
            .map(|c| c.function.value(x))
            .collect();
        vals.iter().all(|v| v.is_finite()).then_some(vals)
    }

    /// `c(x, s)`: constraint values with slacks added on inequality rows.
    fn slacked(&self, mut g: Vec<f64>, s: &[f64]) -> Vec<f64> {
        for (j, &i) in self.ineq_rows.iter().enumerate() {
            g[i] += s[j];
        }
        g
    }

    fn initialize(&mut self, warm: Option<&WarmStart>) -> bool {
        let mut x = match warm {
            Some(w) => w.x.clone(),
            None => self.p.initial_point(),
        };
        for (k, var) in self.p.variables.iter().enumerate() {
            if var.is_fixed() {
                x[k] = var.lower;
            }
        }
        let push = if warm.is_some() {
            self.o.warm_bound_push
        } else {
            BOUND_PUSH
        };
        self.push_inside(&mut x, push);
        self.x = x;
        let Some(g) = self.constraint_values(&self.x) else {
            return false;
        };
        self.s = self.ineq_rows.iter().map(|&i| (-g[i]).max(push)).collect();

        match warm {
            Some(w) => {
                self.mu = self.o.warm_mu_init;
                let mu = self.mu;
                self.y = w.multipliers.iter().map(|v| v * self.obj_scale).collect();
                for &k in &self.free {
                    let (zl, zu) = w.bound_duals[k];
                    if self.has_lo(k) {
                        self.zl[k] = (zl * self.obj_scale).max(mu / (self.x[k] - self.lo[k]));
                    }
                    if self.has_hi(k) {
                        self.zu[k] = (zu * self.obj_scale).max(mu / (self.hi[k] - self.x[k]));
                    }
                }
                for (j, &i) in self.ineq_rows.iter().enumerate() {
                    self.y[i] = self.y[i].max(0.0);
                    self.v[j] = self.y[i].max(mu / self.s[j]);
                }
            }
            None => {
                self.mu = self.o.mu_init;
                for &k in &self.free {
                    if self.has_lo(k) {
                        self.zl[k] = 1.0;
                    }
                    if self.has_hi(k) {
                        self.zu[k] = 1.0;
                    }
                }
                self.v.fill(1.0);
                self.least_squares_multipliers();
            }
        }
        true
    }

    /// Multipliers minimizing the stationarity residual, from the augmented
    /// system `[I J^T; J 0]`; discarded when the estimate is large.
    fn least_squares_multipliers(&mut self) {
        if self.m == 0 {
            return;
        }
        let Ok(ev) = self.p.eval_all(&self.x) else {
            return;
        };
        let nf = self.free.len();
        let dim = nf + self.m;
        let mut a = SymMatrix::zeros(dim);
        for r in 0..nf {
            a.add(r, r, 1.0);
        }
        for r in 0..self.m {
            a.add(nf + r, nf + r, -1e-10);
        }
        let j = &ev.jacobian;
        for t in 0..j.nnz() {
            if let Some(c) = self.pos[j.cols[t]] {
                a.add(nf + j.rows[t], c, j.vals[t]);
            }
        }
        let mut rhs = vec![0.0; dim];
        for (r, &k) in self.free.iter().enumerate() {
            rhs[r] = -(self.grad_f[k] - self.zl[k] + self.zu[k]);
        }
        Ldlt::factor(&a, ZERO_PIVOT).solve(&mut rhs);
        let y = &rhs[nf..];
        let ymax = y.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if ymax.is_finite() && ymax <= 1e3 {
            self.y.copy_from_slice(y);
            for (j, &i) in self.ineq_rows.iter().enumerate() {
                self.y[i] = self.y[i].max(0.0);
                self.v[j] = self.v[j].max(self.y[i]);
            }
        }
    }

    fn dual_scale(&self) -> f64 {
        let mut dmax: f64 = 0.0;
        for v in self.y.iter().chain(&self.v) {
            dmax = dmax.max(v.abs());
        }
        for &k in &self.free {
            dmax = dmax.max(self.zl[k]).max(self.zu[k]);
        }
        (dmax / 100.0).max(1.0)
    }

    /// `grad f + J^T y - z_l + z_u` on free variables (full length).
    fn stationarity(&self, jac: &Triplets) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        for &k in &self.free {
            r[k] = self.grad_f[k] - self.zl[k] + self.zu[k];
        }
        for t in 0..jac.nnz() {
            let k = jac.cols[t];
            if self.pos[k].is_some() {
                r[k] += jac.vals[t] * self.y[jac.rows[t]];
            }
        }
        r
    }

    /// Scaled KKT error of the barrier problem with parameter `mu`.
    fn kkt_error(&self, rx: &[f64], c: &[f64], mu: f64) -> f64 {
        let sd = self.dual_scale();
        let mut stat: f64 = 0.0;
        for &k in &self.free {
            stat = stat.max(rx[k].abs());
        }
        for (j, &i) in self.ineq_rows.iter().enumerate() {
            stat = stat.max((self.y[i] - self.v[j]).abs());
        }
        let feas = c.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut comp: f64 = 0.0;
        for &k in &self.free {
            if self.has_lo(k) {
                comp = comp.max(((self.x[k] - self.lo[k]) * self.zl[k] - mu).abs());
            }
            if self.has_hi(k) {
                comp = comp.max(((self.hi[k] - self.x[k]) * self.zu[k] - mu).abs());
            }
        }
        for j in 0..self.s.len() {
            comp = comp.max((self.s[j] * self.v[j] - mu).abs());
        }
        (stat / sd).max(feas).max(comp / sd)
    }

    fn sigma_x(&self, k: usize) -> f64 {
        let mut s = 0.0;
        if self.has_lo(k) {
            s += self.zl[k] / (self.x[k] - self.lo[k]);
        }
        if self.has_hi(k) {
            s += self.zu[k] / (self.hi[k] - self.x[k]);
        }
        s
    }

    fn run(&mut self, warm: Option<&WarmStart>) -> SolveStatus {
        if !self.initialize(warm) {
            return SolveStatus::NumericalFailure;
        }
        let tol = self.o.tol_kkt;
        loop {
            let Ok(ev) = self.p.eval_all(&self.x) else {
                return SolveStatus::NumericalFailure;
            };
            let c = self.slacked(ev.residuals.clone(), &self.s);
            let rx = self.stationarity(&ev.jacobian);
            self.kkt = self.kkt_error(&rx, &c, 0.0);
            log::trace!(
                "iter {:3} mu {:.2e} kkt {:.3e} inf {:.3e} nu {:.2e}",
                self.iterations,
                self.mu,
                self.kkt,
                c.iter().fold(0.0f64, |a, b| a.max(b.abs())),
                self.nu
            );
            if self.kkt <= tol {
                return SolveStatus::Optimal;
            }
            if self.iterations >= self.o.max_iter {
                return SolveStatus::IterationLimit;
            }
            let floor = tol / 10.0;
            while self.mu > floor && self.kkt_error(&rx, &c, self.mu) <= self.mu {
                self.mu = (self.mu * self.o.mu_reduce).max(floor);
            }

            self.infeas_history.push(c.iter().map(|v| v.abs()).sum());
            if self.nu > self.o.penalty_cap && self.infeasibility_stalled() {
                return SolveStatus::InfeasibleDetected;
            }

            let Ok(hess) = ev.lagrangian_hessian(&self.y) else {
                return SolveStatus::NumericalFailure;
            };
            let Some(factor) = self.factorize(&ev.jacobian, &hess) else {
                log::debug!("no acceptable inertia at iteration {}", self.iterations);
                return SolveStatus::NumericalFailure;
            };
            let rhs_x = self.barrier_gradient_residual(&rx);
            let dir = self.direction(&factor, &rhs_x, &c);
            if dir
                .dx
                .iter()
                .chain(&dir.dy)
                .chain(&dir.ds)
                .any(|v| !v.is_finite())
            {
                return SolveStatus::NumericalFailure;
            }
            if !self.line_search(dir, &factor, &rhs_x, &c, &hess) {
                log::debug!(
                    "line search failed at iteration {} (mu {:.2e}, nu {:.2e})",
                    self.iterations,
                    self.mu,
                    self.nu
                );
                return SolveStatus::NumericalFailure;
            }
            self.iterations += 1;
        }
    }

    fn infeasibility_stalled(&self) -> bool {
        let h = &self.infeas_history;
        if h.len() < 10 {
            return false;
        }
        let recent = h[h.len() - 1];
        recent > self.o.tol_kkt && recent > 0.99 * h[h.len() - 10]
    }

    /// `-(grad f + J^T y - mu/(x - l) + mu/(u - x))` per free variable.
    fn barrier_gradient_residual(&self, rx: &[f64]) -> Vec<f64> {
        let mu = self.mu;
        self.free
            .iter()
            .map(|&k| {
                let mut g = rx[k];
                if self.has_lo(k) {
                    g += self.zl[k] - mu / (self.x[k] - self.lo[k]);
                }
                if self.has_hi(k) {
                    g -= self.zu[k] - mu / (self.hi[k] - self.x[k]);
                }
                -g
            })
            .collect()
    }

    fn factorize(&mut self, jac: &Triplets, hess: &Triplets) -> Option<Factor> {
        if self.linear && self.free.iter().all(|&k| self.has_lo(k) || self.has_hi(k)) {
            if let Some(f) = self.factor_schur(jac) {
                return Some(f);
            }
        }
        self.factor_full(jac, hess)
    }

    fn factor_schur(&mut self, jac: &Triplets) -> Option<Factor> {
        let h: Vec<f64> = self.free.iter().map(|&k| self.sigma_x(k)).collect();
        if h.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return None;
        }
        if self.columns.is_none() {
            let mut cols = vec![Vec::new(); self.free.len()];
            for t in 0..jac.nnz() {
                if let Some(c) = self.pos[jac.cols[t]] {
                    cols[c].push((jac.rows[t], jac.vals[t]));
                }
            }
            self.columns = Some(cols);
        }
        let cols = self.columns.as_ref().expect("columns");
        let mut s = SymMatrix::zeros(self.m);
        for (j, &i) in self.ineq_rows.iter().enumerate() {
            s.add(i, i, self.s[j] / self.v[j]);
        }
        for (c, col) in cols.iter().enumerate() {
            let hinv = 1.0 / h[c];
            for (a, &(ri, vi)) in col.iter().enumerate() {
                for &(rj, vj) in &col[..=a] {
                    s.add(ri, rj, vi * vj * hinv);
                }
            }
        }
        self.factorizations += 1;
        let chol = Cholesky::factor(&s, 1e-14)?;
        Some(Factor::Schur { chol, h })
    }

    fn factor_full(&mut self, jac: &Triplets, hess: &Triplets) -> Option<Factor> {
        let nf = self.free.len();
        let mut base = SymMatrix::zeros(nf + self.m);
        for t in 0..hess.nnz() {
            if let (Some(r), Some(c)) = (self.pos[hess.rows[t]], self.pos[hess.cols[t]]) {
                base.add(r, c, hess.vals[t]);
            }
        }
        for (r, &k) in self.free.iter().enumerate() {
            base.add(r, r, self.sigma_x(k));
        }
        for t in 0..jac.nnz() {
            if let Some(c) = self.pos[jac.cols[t]] {
                base.add(nf + jac.rows[t], c, jac.vals[t]);
            }
        }
        let mut dw = 0.0;
        let mut dc = 0.0;
        loop {
            let mut a = base.clone();
            for r in 0..nf {
                a.add(r, r, dw);
            }
            for i in 0..self.m {
                let d = match self.slot[i] {
                    Some(j) => 1.0 / (self.v[j] / self.s[j] + dw),
                    None => 0.0,
                };
                a.add(nf + i, nf + i, -(d + dc));
            }
            let order = self
                .order
                .get_or_insert_with(|| kkt_order(self.p, &self.pos, nf));
            let ldlt = Ldlt::factor_ordered(&a, ZERO_PIVOT, order);
            self.factorizations += 1;
            let inertia = ldlt.inertia();
            if inertia.positive == nf && inertia.negative == self.m && inertia.zero == 0 {
                if dw > 0.0 {
                    self.delta_last = dw;
                }
                return Some(Factor::Full {
                    ldlt,
                    matrix: a,
                    dw,
                });
            }
            log::trace!(
                "inertia {:?} dw {dw:.1e} dc {dc:.1e} max {:.2e}",
                inertia,
                a.max_abs()
            );
            if inertia.zero > 0 {
                // dependent constraint rows: regularize relative to the matrix scale
                let floor = 100.0 * ZERO_PIVOT * a.max_abs();
                let next = (10.0 * dc).max(DELTA_C).max(floor);
                if next <= MAX_DELTA_C {
                    dc = next;
                    if inertia.positive == nf {
                        continue;
                    }
                }
            }
            dw = if dw > 0.0 {
                2.0 * dw
            } else if self.delta_last > 0.0 {
                (self.delta_last / 4.0).max(self.o.inertia_regularization)
            } else {
                self.o.inertia_regularization
            };
            if dw > MAX_DELTA {
                log::debug!(
                    "inertia {:?} with dw {dw:.1e} dc {dc:.1e}, nf {nf} m {}",
                    inertia,
                    self.m
                );
                return None;
            }
        }
    }

    /// Newton step for the reduced system; `c_rows` is the constraint
    /// right-hand side (`c(x, s)`, or the corrected one in a second-order
    /// correction).
    fn direction(&self, factor: &Factor, rhs_x: &[f64], c_rows: &[f64]) -> Direction {
        let nf = self.free.len();
        let dw = factor.dw();
        let mu = self.mu;
        let mut r2: Vec<f64> = c_rows.iter().map(|c| -c).collect();
        let mut rs = vec![0.0; self.s.len()];
        let mut sig = vec![0.0; self.s.len()];
        for (j, &i) in self.ineq_rows.iter().enumerate() {
            rs[j] = self.y[i] - mu / self.s[j];
            sig[j] = self.v[j] / self.s[j] + dw;
            r2[i] += rs[j] / sig[j];
        }
        let (dxf, dy) = match factor {
            Factor::Full { ldlt, matrix, .. } => {
                let mut rhs = rhs_x.to_vec();
                rhs.extend_from_slice(&r2);
                let mut sol = rhs.clone();
                ldlt.solve(&mut sol);
                // iterative refinement against the regularized matrix
                let mut res = vec![0.0; rhs.len()];
                for _ in 0..2 {
                    matrix.mul_vec(&sol, &mut res);
                    for (r, b) in res.iter_mut().zip(&rhs) {
                        *r = b - *r;
                    }
                    ldlt.solve(&mut res);
                    for (s, r) in sol.iter_mut().zip(&res) {
                        *s += r;
                    }
                }
                let dy = sol.split_off(nf);
                (sol, dy)
            }
            Factor::Schur { chol, h } => {
                let cols = self.columns.as_ref().expect("columns");
                // (J H^-1 J^T + D) dy = J H^-1 r1 - r2
                let mut dy: Vec<f64> = r2.iter().map(|v| -v).collect();
                for (c, col) in cols.iter().enumerate() {
                    let t = rhs_x[c] / h[c];
                    for &(i, a) in col {
                        dy[i] += a * t;
                    }
                }
                chol.solve(&mut dy);
                let dx = cols
                    .iter()
                    .enumerate()
                    .map(|(c, col)| {
                        let jt: f64 = col.iter().map(|&(i, a)| a * dy[i]).sum();
                        (rhs_x[c] - jt) / h[c]
                    })
                    .collect();
                (dx, dy)
            }
        };
        let mut dx = vec![0.0; self.n];
        for (r, &k) in self.free.iter().enumerate() {
            dx[k] = dxf[r];
        }
        let ds = self
            .ineq_rows
            .iter()
            .enumerate()
            .map(|(j, &i)| -(rs[j] + dy[i]) / sig[j])
            .collect();
        Direction { dx, ds, dy }
    }

    /// Largest step in `(0, 1]` keeping `x` and `s` a fraction `tau` away
    /// from their bounds.
    fn primal_step_max(&self, dx: &[f64], ds: &[f64]) -> f64 {
        let tau = self.tau();
        let mut alpha: f64 = 1.0;
        for &k in &self.free {
            if dx[k] < 0.0 && self.has_lo(k) {
                alpha = alpha.min(-tau * (self.x[k] - self.lo[k]) / dx[k]);
            }
            if dx[k] > 0.0 && self.has_hi(k) {
                alpha = alpha.min(tau * (self.hi[k] - self.x[k]) / dx[k]);
            }
        }
        for (s, d) in self.s.iter().zip(ds) {
            if *d < 0.0 {
                alpha = alpha.min(-tau * s / d);
            }
        }
        alpha
    }

    /// Scaled objective plus barrier terms; `None` outside the bounds.
    fn barrier(&self, x: &[f64], s: &[f64]) -> Option<f64> {
        let mut b: f64 = self.free.iter().map(|&k| self.grad_f[k] * x[k]).sum();
        let mut logs = 0.0;
        for &k in &self.free {
            if self.has_lo(k) {
                let g = x[k] - self.lo[k];
                if g <= 0.0 {
                    return None;
                }
                logs += g.ln();
            }
            if self.has_hi(k) {
                let g = self.hi[k] - x[k];
                if g <= 0.0 {
                    return None;
                }
                logs += g.ln();
            }
        }
        for &sj in s {
            if sj <= 0.0 {
                return None;
            }
            logs += sj.ln();
        }
        b -= self.mu * logs;
        Some(b)
    }

    fn trial(&self, d: &Direction, alpha: f64) -> (Vec<f64>, Vec<f64>) {
        let mut x = self.x.clone();
        for &k in &self.free {
            x[k] += alpha * d.dx[k];
        }
        let s = self
            .s
            .iter()
            .zip(&d.ds)
            .map(|(s, ds)| s + alpha * ds)
            .collect();
        (x, s)
    }

    /// Merit value and slacked constraints at a trial point.
    fn merit_at(&self, x: &[f64], s: &[f64]) -> Option<(f64, Vec<f64>)> {
        let b = self.barrier(x, s)?;
        let c = self.slacked(self.constraint_values(x)?, s);
        let l1: f64 = c.iter().map(|v| v.abs()).sum();
        Some((b + self.nu * l1, c))
    }

    fn line_search(
        &mut self,
        dir: Direction,
        factor: &Factor,
        rhs_x: &[f64],
        c: &[f64],
        hess: &Triplets,
    ) -> bool {
        let mu = self.mu;
        let c_l1: f64 = c.iter().map(|v| v.abs()).sum();
        // directional derivative of the barrier function and curvature
        let mut grad_b = 0.0;
        let mut curv = 0.0;
        for &k in &self.free {
            let mut g = self.grad_f[k];
            if self.has_lo(k) {
                g -= mu / (self.x[k] - self.lo[k]);
            }
            if self.has_hi(k) {
                g += mu / (self.hi[k] - self.x[k]);
            }
            grad_b += g * dir.dx[k];
            curv += self.sigma_x(k) * dir.dx[k] * dir.dx[k];
        }
        for j in 0..self.s.len() {
            grad_b -= mu / self.s[j] * dir.ds[j];
            curv += self.v[j] / self.s[j] * dir.ds[j] * dir.ds[j];
        }
        for t in 0..hess.nnz() {
            let (r, cc) = (hess.rows[t], hess.cols[t]);
            if self.pos[r].is_none() || self.pos[cc].is_none() {
                continue;
            }
            let w = hess.vals[t] * dir.dx[r] * dir.dx[cc];
            curv += if r == cc { w } else { 2.0 * w };
        }
        if c_l1 > 1e-14 {
            let nu_trial = (grad_b + 0.5 * curv.max(0.0)) / ((1.0 - MERIT_RHO) * c_l1);
            if self.nu < nu_trial {
                self.nu = nu_trial + 1.0;
            }
        }
        let slope = grad_b - self.nu * c_l1;
        let Some(phi0) = self.barrier(&self.x, &self.s).map(|b| b + self.nu * c_l1) else {
            return false;
        };
        // nonmonotone reference: the worst of the last few accepted merits
        if self.merit_key != (self.mu, self.nu) {
            self.merit_key = (self.mu, self.nu);
            self.merit_memory.clear();
        }
        let reference = self.merit_memory.iter().fold(phi0, |a, &b| a.max(b));
        let noise = 10.0 * f64::EPSILON * phi0.abs().max(1.0);
        let accept =
            |phi: f64, alpha: f64| phi <= reference + ARMIJO * alpha * slope.min(0.0) + noise;

        let alpha_max = self.primal_step_max(&dir.dx, &dir.ds);
        let mut alpha = alpha_max;
        for attempt in 0..MAX_BACKTRACK {
            let (xt, st) = self.trial(&dir, alpha);
            match self.merit_at(&xt, &st) {
                Some((phi, _)) if accept(phi, alpha) => {
                    log::trace!(
                        "step alpha {alpha:.3e} of max {alpha_max:.3e} dw {:.1e}",
                        factor.dw()
                    );
                    self.remember_merit(phi);
                    self.take_step(&dir, alpha);
                    return true;
                }
                Some((_, ct)) if attempt == 0 => {
                    // second-order correction for the first rejected full step
                    let c_soc: Vec<f64> = c.iter().zip(&ct).map(|(a, b)| alpha * a + b).collect();
                    let soc = self.direction(factor, rhs_x, &c_soc);
                    let a_soc = self.primal_step_max(&soc.dx, &soc.ds);
                    let (xs, ss) = self.trial(&soc, a_soc);
                    if let Some((phi, _)) = self.merit_at(&xs, &ss) {
                        if accept(phi, alpha) && soc.dx.iter().chain(&soc.dy).all(|v| v.is_finite())
                        {
                            log::trace!("second-order correction step {a_soc:.3e}");
                            self.remember_merit(phi);
                            self.take_step(&soc, a_soc);
                            return true;
                        }
                    }
                }
                _ => {}
            }
            alpha *= 0.5;
        }
        false
    }

    fn remember_merit(&mut self, phi: f64) {
        if self.merit_memory.len() == MERIT_MEMORY {
            self.merit_memory.remove(0);
        }
        self.merit_memory.push(phi);
    }

    fn take_step(&mut self, d: &Direction, alpha: f64) {
        let mu = self.mu;
        let tau = self.tau();
        let mut dzl = vec![0.0; self.n];
        let mut dzu = vec![0.0; self.n];
        let mut alpha_z: f64 = 1.0;
        for &k in &self.free {
            if self.has_lo(k) {
                let g = self.x[k] - self.lo[k];
                dzl[k] = mu / g - self.zl[k] - self.zl[k] / g * d.dx[k];
                if dzl[k] < 0.0 {
                    alpha_z = alpha_z.min(-tau * self.zl[k] / dzl[k]);
                }
            }
            if self.has_hi(k) {
                let g = self.hi[k] - self.x[k];
                dzu[k] = mu / g - self.zu[k] + self.zu[k] / g * d.dx[k];
                if dzu[k] < 0.0 {
                    alpha_z = alpha_z.min(-tau * self.zu[k] / dzu[k]);
                }
            }
        }
        let dv: Vec<f64> = (0..self.s.len())
            .map(|j| mu / self.s[j] - self.v[j] - self.v[j] / self.s[j] * d.ds[j])
            .collect();
        for j in 0..self.s.len() {
            if dv[j] < 0.0 {
                alpha_z = alpha_z.min(-tau * self.v[j] / dv[j]);
            }
        }
        for &k in &self.free {
            self.x[k] += alpha * d.dx[k];
        }
        for j in 0..self.s.len() {
            self.s[j] += alpha * d.ds[j];
        }
        for i in 0..self.m {
            self.y[i] += alpha * d.dy[i];
        }
        // dual update with the safeguard keeping z near mu / gap
        for &k in &self.free {
            if self.has_lo(k) {
                let g = self.x[k] - self.lo[k];
                let z = self.zl[k] + alpha_z * dzl[k];
                self.zl[k] = z.clamp(mu / (KAPPA_SIGMA * g), KAPPA_SIGMA * mu / g);
            }
            if self.has_hi(k) {
                let g = self.hi[k] - self.x[k];
                let z = self.zu[k] + alpha_z * dzu[k];
                self.zu[k] = z.clamp(mu / (KAPPA_SIGMA * g), KAPPA_SIGMA * mu / g);
            }
        }
        for j in 0..self.s.len() {
            let v = self.v[j] + alpha_z * dv[j];
            self.v[j] = v.clamp(mu / (KAPPA_SIGMA * self.s[j]), KAPPA_SIGMA * mu / self.s[j]);
        }
    }

    fn finish(self, status: SolveStatus, wall_time: Duration) -> IpmResult {
        let unscale = 1.0 / self.obj_scale;
        let multipliers: Vec<f64> = self.y.iter().map(|v| v * unscale).collect();
        let mut duals_eq = Vec::new();
        let mut duals_ineq = Vec::new();
        for (i, &y) in multipliers.iter().enumerate() {
            match self.slot[i] {
                Some(_) => duals_ineq.push(y),
                None => duals_eq.push(y),
            }
        }
        let duals_bounds = (0..self.n)
            .map(|k| (self.zl[k] * unscale, self.zu[k] * unscale))
            .collect();
        IpmResult {
            status,
            objective: self.p.objective.value(&self.x),
            x: self.x,
            duals_eq,
            duals_ineq,
            duals_bounds,
            multipliers,
            kkt_residual: self.kkt,
            iterations: self.iterations,
            factorizations: self.factorizations,
            wall_time,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caseio::case33;
    use crate::netmodel::{tinyfeeder, two_bus};
    use crate::nlpcore::{
        Constraint, InterfaceIndices, LinearFunction, LinearObjective, Polynomial, Variable,
    };

    fn problem(
        variables: Vec<Variable>,
        objective: &[(usize, f64)],
        constraints: Vec<Constraint>,
    ) -> NlpProblem {
        NlpProblem {
            variables,
            objective: LinearObjective {
                terms: objective.to_vec(),
                constant: 0.0,
            },
            constraints,
            interface: InterfaceIndices { p_se: 0, q_se: 0 },
        }
    }

    fn opts() -> IpmOptions {
        IpmOptions::default()
    }

    #[test]
    fn one_dimensional_lp() {
        let p = problem(
            vec![Variable::free("x", 0.0)],
            &[(0, -1.0)],
            vec![
                Constraint::inequality("upper", LinearFunction::new(&[(0, 1.0)], -3.0)),
                Constraint::inequality("lower", LinearFunction::new(&[(0, -1.0)], 0.0)),
            ],
        );
        let r = solve(&p, &opts(), None).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.x[0] - 3.0).abs() < 1e-7, "{}", r.x[0]);
    }

    #[test]
    fn circle_toy() {
        let p = problem(
            vec![Variable::free("p", 0.0), Variable::free("q", 0.0)],
            &[(0, -1.0)],
            vec![
                Constraint::inequality(
                    "disc",
                    Polynomial::new()
                        .term(1.0, &[(0, 2)])
                        .term(1.0, &[(1, 2)])
                        .constant(-4.0),
                ),
                Constraint::equality("q", LinearFunction::new(&[(1, 1.0)], -1.0)),
            ],
        );
        let r = solve(&p, &opts(), None).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.x[0] - 3f64.sqrt()).abs() < 1e-7, "{:?}", r.x);
        assert!(r.kkt_residual <= opts().tol_kkt);
    }

    /// Substation injection of a lossy two-bus feeder by fixed-point iteration.
    fn two_bus_fixed_point(r: f64, x: f64, pl: f64, ql: f64) -> (f64, f64) {
        let (mut p, mut q) = (pl, ql);
        for _ in 0..200 {
            let l = p * p + q * q;
            (p, q) = (pl + r * l, ql + x * l);
        }
        (p, q)
    }

    #[test]
    fn tinyfeeder_distflow_matches_fixed_point() {
        let d = solve_dispatch(&tinyfeeder(), FormulationKind::DistFlow, &opts()).unwrap();
        assert_eq!(d.result.status, SolveStatus::Optimal);
        let (p, q) = d.formulation.exchange(&d.result.x);
        let (pe, qe) = two_bus_fixed_point(0.01, 0.02, 1.0, 0.5);
        assert!(
            (p - pe).abs() < 1e-8 && (q - qe).abs() < 1e-8,
            "{p} {q} vs {pe} {qe}"
        );
    }

    #[test]
    fn deterministic_iterates() {
        let f = crate::formulations::build(&case33(), FormulationKind::DistFlow).unwrap();
        let a = solve(&f.problem, &opts(), None).unwrap();
        let b = solve(&f.problem, &opts(), None).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert!(a
            .x
            .iter()
            .zip(&b.x)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn warm_start_reaches_cold_optimum() {
        for kind in FormulationKind::ALL {
            let f = crate::formulations::build(&case33(), kind).unwrap();
            let cold = solve(&f.problem, &opts(), None).unwrap();
            assert_eq!(cold.status, SolveStatus::Optimal, "{kind}");
            let warm = solve(&f.problem, &opts(), Some(&cold.warm_start())).unwrap();
            assert_eq!(warm.status, SolveStatus::Optimal, "{kind}");
            let scale = cold.objective.abs().max(1.0);
            assert!(
                (warm.objective - cold.objective).abs() <= 2.0 * opts().tol_kkt * scale,
                "{kind}: {} vs {}",
                warm.objective,
                cold.objective
            );
        }
    }

    #[test]
    fn zero_load_dispatch_is_free() {
        for kind in FormulationKind::ALL {
            let d = solve_dispatch(&two_bus(0.01, 0.02, 0.0, 0.0), kind, &opts()).unwrap();
            assert_eq!(d.result.status, SolveStatus::Optimal, "{kind}");
            let (p, _) = d.formulation.exchange(&d.result.x);
            assert!(
                p.abs() < 1e-7 && d.result.objective.abs() < 1e-5,
                "{kind}: {p} {}",
                d.result.objective
            );
        }
    }

    #[test]
    fn cheap_dgs_run_at_capacity() {
        let net = case33();
        let d = solve_dispatch(&net, FormulationKind::LinDistFlow, &opts()).unwrap();
        let se = net.substation_generator().unwrap();
        for (g, gen) in net.generators.iter().enumerate().filter(|&(g, _)| g != se) {
            assert!(gen.cost < net.generators[se].cost);
            let p = d.result.x[d.formulation.layout.gen_p[g]];
            assert!(
                (p - gen.p_max).abs() < 1e-6,
                "generator at bus {}: {p}",
                gen.bus
            );
        }
    }

    #[test]
    fn losses_raise_dispatch_cost() {
        let net = case33();
        let lin = solve_dispatch(&net, FormulationKind::LinDistFlow, &opts()).unwrap();
        let df = solve_dispatch(&net, FormulationKind::DistFlow, &opts()).unwrap();
        assert!(
            df.result.objective >= lin.result.objective,
            "{} < {}",
            df.result.objective,
            lin.result.objective
        );
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = problem(vec![Variable::free("x", 0.0)], &[(0, 1.0)], vec![]);
        let warm = WarmStart {
            x: vec![0.0; 2],
            multipliers: vec![],
            bound_duals: vec![(0.0, 0.0); 2],
        };
        assert!(solve(&p, &opts(), Some(&warm)).is_err());
    }
}
