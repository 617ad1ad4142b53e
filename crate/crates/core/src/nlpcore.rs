//! Smooth nonlinear programs with analytic first and second derivatives.
//!
//! A problem is a linear objective, variable bounds and a list of named
//! scalar constraints `g(x) = 0` or `h(x) <= 0`. Each constraint owns a
//! [`ConstraintFunction`] that declares its sparsity once and fills value,
//! gradient and lower-triangle Hessian entries on demand.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlpError {
    #[error("constraint `{0}` produced a non-finite value")]
    NonFinite(String),
    #[error("point has {got} entries, problem has {expected} variables")]
    Dimension { expected: usize, got: usize },
    #[error("malformed problem: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub init: f64,
    /// Model family implemented by this variable's bounds, if any.
    pub bound_tag: Option<String>,
}

impl Variable {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64, init: f64) -> Self {
        Variable {
            name: name.into(),
            lower,
            upper,
            init: init.clamp(lower, upper),
            bound_tag: None,
        }
    }

    pub fn free(name: impl Into<String>, init: f64) -> Self {
        Variable::new(name, f64::NEG_INFINITY, f64::INFINITY, init)
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.bound_tag = Some(tag.into());
        self
    }

    pub fn is_fixed(&self) -> bool {
        self.lower == self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `g(x) = 0`
    Equality,
    /// `h(x) <= 0`
    Inequality,
}

/// Scalar constraint function with a fixed sparsity pattern.
///
/// `hessian_pattern` lists lower-triangle entries `(row, col)` with
/// `row >= col`; the full Hessian is the symmetric completion.
pub trait ConstraintFunction: Send + Sync + fmt::Debug {
    fn gradient_pattern(&self) -> &[usize];
    fn hessian_pattern(&self) -> &[(usize, usize)];
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn hessian(&self, x: &[f64], out: &mut [f64]);

    fn is_linear(&self) -> bool {
        self.hessian_pattern().is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Constraint {
    /// `tag[+tag...][detail]`, the tags naming the model families this row
    /// implements.
    pub name: String,
    pub kind: ConstraintKind,
    pub function: Arc<dyn ConstraintFunction>,
}

impl Constraint {
    pub fn equality(name: impl Into<String>, f: impl ConstraintFunction + 'static) -> Self {
        Constraint {
            name: name.into(),
            kind: ConstraintKind::Equality,
            function: Arc::new(f),
        }
    }

    pub fn inequality(name: impl Into<String>, f: impl ConstraintFunction + 'static) -> Self {
        Constraint {
            name: name.into(),
            kind: ConstraintKind::Inequality,
            function: Arc::new(f),
        }
    }

    /// Model-family tags carried in the name prefix.
    pub fn tags(&self) -> impl Iterator<Item = &str> {
        let head = self.name.split('[').next().unwrap_or("");
        head.split('+').filter(|t| !t.is_empty())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearObjective {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearObjective {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(k, c)| c * x[k]).sum::<f64>()
    }

    pub fn dense_gradient(&self, n: usize) -> Vec<f64> {
        let mut g = vec![0.0; n];
        for &(k, c) in &self.terms {
            g[k] += c;
        }
        g
    }
}

/// Positions of the substation exchange `(p_se, q_se)` among the variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterfaceIndices {
    pub p_se: usize,
    pub q_se: usize,
}

#[derive(Debug, Clone)]
pub struct NlpProblem {
    pub variables: Vec<Variable>,
    pub objective: LinearObjective,
    pub constraints: Vec<Constraint>,
    pub interface: InterfaceIndices,
}

/// Sparse matrix in coordinate form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            ..Default::default()
        }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        self.rows.push(r);
        self.cols.push(c);
        self.vals.push(v);
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Row-major dense copy, duplicates summed.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.ncols]; self.nrows];
        for k in 0..self.vals.len() {
            m[self.rows[k]][self.cols[k]] += self.vals[k];
        }
        m
    }

    /// Dense symmetric matrix from lower-triangle triplets.
    pub fn to_dense_symmetric(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.ncols]; self.nrows];
        for k in 0..self.vals.len() {
            let (r, c, v) = (self.rows[k], self.cols[k], self.vals[k]);
            m[r][c] += v;
            if r != c {
                m[c][r] += v;
            }
        }
        m
    }
}

/// Objective, residuals and Jacobian at one point.
#[derive(Debug, Clone)]
pub struct Evaluation<'a> {
    pub objective: f64,
    pub residuals: Vec<f64>,
    pub jacobian: Triplets,
    problem: &'a NlpProblem,
    x: Vec<f64>,
}

impl Evaluation<'_> {
    /// Lower triangle of `sum_i multipliers[i] * hess g_i(x)`; the objective
    /// is linear and contributes nothing.
    pub fn lagrangian_hessian(&self, multipliers: &[f64]) -> Result<Triplets, NlpError> {
        self.problem.lagrangian_hessian(&self.x, multipliers)
    }
}

impl NlpProblem {
    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn initial_point(&self) -> Vec<f64> {
        self.variables.iter().map(|v| v.init).collect()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Structural checks: bounds ordered, patterns and interface in range.
    pub fn check(&self) -> Result<(), NlpError> {
        let n = self.n_vars();
        for v in &self.variables {
            if v.lower.is_nan()
                || v.upper.is_nan()
                || v.lower > v.upper
                || v.lower == f64::INFINITY
                || v.upper == f64::NEG_INFINITY
            {
                return Err(NlpError::Malformed(format!(
                    "variable `{}` has bounds [{}, {}]",
                    v.name, v.lower, v.upper
                )));
            }
        }
        for &(k, c) in &self.objective.terms {
            if k >= n || !c.is_finite() {
                return Err(NlpError::Malformed(format!("objective term ({k}, {c})")));
            }
        }
        for c in &self.constraints {
            let f = &c.function;
            if f.gradient_pattern().iter().any(|&k| k >= n)
                || f.hessian_pattern().iter().any(|&(r, cc)| r >= n || cc > r)
            {
                return Err(NlpError::Malformed(format!(
                    "constraint `{}` pattern out of range",
                    c.name
                )));
            }
        }
        if self.interface.p_se >= n || self.interface.q_se >= n {
            return Err(NlpError::Malformed("interface indices out of range".into()));
        }
        Ok(())
    }

    fn check_len(&self, x: &[f64]) -> Result<(), NlpError> {
        if x.len() != self.n_vars() {
            return Err(NlpError::Dimension {
                expected: self.n_vars(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Jacobian sparsity, row order equal to constraint order.
    pub fn jacobian_pattern(&self) -> Vec<(usize, usize)> {
        self.constraints
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.function.gradient_pattern().iter().map(move |&k| (i, k)))
            .collect()
    }

    /// Union of the constraint Hessian sparsity patterns.
    pub fn hessian_pattern(&self) -> Vec<(usize, usize)> {
        self.constraints
            .iter()
            .flat_map(|c| c.function.hessian_pattern().iter().copied())
            .collect()
    }

    pub fn eval_all(&self, x: &[f64]) -> Result<Evaluation<'_>, NlpError> {
        self.check_len(x)?;
        let objective = self.objective.value(x);
        if !objective.is_finite() {
            return Err(NlpError::NonFinite("objective".into()));
        }
        let mut residuals = Vec::with_capacity(self.n_constraints());
        let mut jacobian = Triplets::new(self.n_constraints(), self.n_vars());
        let mut buf = Vec::new();
        for (i, c) in self.constraints.iter().enumerate() {
            let f = &c.function;
            let v = f.value(x);
            let pattern = f.gradient_pattern();
            buf.clear();
            buf.resize(pattern.len(), 0.0);
            f.gradient(x, &mut buf);
            if !v.is_finite() || buf.iter().any(|g| !g.is_finite()) {
                return Err(NlpError::NonFinite(c.name.clone()));
            }
            residuals.push(v);
            for (&k, &g) in pattern.iter().zip(&buf) {
                jacobian.push(i, k, g);
            }
        }
        Ok(Evaluation {
            objective,
            residuals,
            jacobian,
            problem: self,
            x: x.to_vec(),
        })
    }

    pub fn lagrangian_hessian(&self, x: &[f64], multipliers: &[f64]) -> Result<Triplets, NlpError> {
        self.check_len(x)?;
        let n = self.n_vars();
        let mut out = Triplets::new(n, n);
        let mut buf = Vec::new();
        for (c, &y) in self.constraints.iter().zip(multipliers) {
            let f = &c.function;
            let pattern = f.hessian_pattern();
            if pattern.is_empty() || y == 0.0 {
                continue;
            }
            buf.clear();
            buf.resize(pattern.len(), 0.0);
            f.hessian(x, &mut buf);
            for (&(r, cc), &h) in pattern.iter().zip(&buf) {
                if !h.is_finite() {
                    return Err(NlpError::NonFinite(c.name.clone()));
                }
                out.push(r, cc, y * h);
            }
        }
        Ok(out)
    }

    /// A random point at least `margin` inside every non-degenerate bound;
    /// unbounded sides are replaced by `init ± 1`.
    pub fn sample_interior_point<R: Rng>(&self, rng: &mut R, margin: f64) -> Vec<f64> {
        self.variables
            .iter()
            .map(|v| {
                if v.is_fixed() {
                    return v.lower;
                }
                let lo = if v.lower.is_finite() {
                    v.lower
                } else {
                    v.init - 1.0
                } + margin;
                let hi = if v.upper.is_finite() {
                    v.upper
                } else {
                    v.init + 1.0
                } - margin;
                if lo >= hi {
                    0.5 * (v.lower + v.upper)
                } else {
                    rng.gen_range(lo..hi)
                }
            })
            .collect()
    }

    /// Largest bound or constraint violation at `x` and the name of the
    /// offending variable or constraint (empty when feasible).
    pub fn max_violation(&self, x: &[f64]) -> (f64, String) {
        let mut worst = (0.0, String::new());
        let mut note = |v: f64, name: &str| {
            if v > worst.0 {
                worst = (v, name.to_string());
            }
        };
        for (var, &xi) in self.variables.iter().zip(x) {
            note(var.lower - xi, &var.name);
            note(xi - var.upper, &var.name);
        }
        for c in &self.constraints {
            let r = c.function.value(x);
            match c.kind {
                ConstraintKind::Equality => note(r.abs(), &c.name),
                ConstraintKind::Inequality => note(r, &c.name),
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// Building blocks

/// `sum_k a_k x_k + c`
#[derive(Debug, Clone)]
pub struct LinearFunction {
    vars: Vec<usize>,
    coefs: Vec<f64>,
    constant: f64,
}

impl LinearFunction {
    /// Repeated variables are merged.
    pub fn new(terms: &[(usize, f64)], constant: f64) -> Self {
        let mut vars: Vec<usize> = Vec::new();
        let mut coefs: Vec<f64> = Vec::new();
        for &(k, a) in terms {
            match vars.iter().position(|&v| v == k) {
                Some(p) => coefs[p] += a,
                None => {
                    vars.push(k);
                    coefs.push(a);
                }
            }
        }
        LinearFunction {
            vars,
            coefs,
            constant,
        }
    }
}

impl ConstraintFunction for LinearFunction {
    fn gradient_pattern(&self) -> &[usize] {
        &self.vars
    }

    fn hessian_pattern(&self) -> &[(usize, usize)] {
        &[]
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.constant
            + self
                .vars
                .iter()
                .zip(&self.coefs)
                .map(|(&k, a)| a * x[k])
                .sum::<f64>()
    }

    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.coefs);
    }

    fn hessian(&self, _x: &[f64], _out: &mut [f64]) {}
}

#[derive(Debug, Clone)]
struct Monomial {
    coef: f64,
    /// `(local variable slot, exponent)`, slots distinct.
    factors: Vec<(usize, u32)>,
}

/// Sum of monomials `c * prod x_k^e_k` plus a constant.
#[derive(Debug, Clone, Default)]
pub struct Polynomial {
    vars: Vec<usize>,
    hess: Vec<(usize, usize)>,
    monomials: Vec<Monomial>,
    constant: f64,
    // for each monomial: gradient slots per factor, hessian slots per factor pair
    grad_slot: Vec<Vec<usize>>,
    hess_slot: Vec<Vec<(usize, usize, usize)>>,
}

impl Polynomial {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// Adds `coef * prod x_var^exp`.
    pub fn term(mut self, coef: f64, factors: &[(usize, u32)]) -> Self {
        let mut local: Vec<(usize, u32)> = Vec::new();
        for &(var, e) in factors {
            if e == 0 {
                continue;
            }
            let slot = match self.vars.iter().position(|&v| v == var) {
                Some(s) => s,
                None => {
                    self.vars.push(var);
                    self.vars.len() - 1
                }
            };
            match local.iter_mut().find(|(s, _)| *s == slot) {
                Some(f) => f.1 += e,
                None => local.push((slot, e)),
            }
        }
        if local.is_empty() {
            self.constant += coef;
            return self;
        }
        self.monomials.push(Monomial {
            coef,
            factors: local,
        });
        self.rebuild();
        self
    }

    /// `coef * x_var`
    pub fn linear(self, coef: f64, var: usize) -> Self {
        self.term(coef, &[(var, 1)])
    }

    fn rebuild(&mut self) {
        self.hess.clear();
        self.grad_slot.clear();
        self.hess_slot.clear();
        for m in &self.monomials {
            let gs: Vec<usize> = m.factors.iter().map(|&(s, _)| s).collect();
            let mut hs = Vec::new();
            for a in 0..m.factors.len() {
                for b in 0..=a {
                    let (sa, ea) = m.factors[a];
                    let (sb, _) = m.factors[b];
                    if a == b && ea < 2 {
                        continue;
                    }
                    let (va, vb) = (self.vars[sa], self.vars[sb]);
                    let key = (va.max(vb), va.min(vb));
                    let pos = match self.hess.iter().position(|&h| h == key) {
                        Some(p) => p,
                        None => {
                            self.hess.push(key);
                            self.hess.len() - 1
                        }
                    };
                    hs.push((a, b, pos));
                }
            }
            self.grad_slot.push(gs);
            self.hess_slot.push(hs);
        }
    }
}

fn powi(x: f64, e: u32) -> f64 {
    match e {
        0 => 1.0,
        1 => x,
        2 => x * x,
        _ => x.powi(e as i32),
    }
}

impl Monomial {
    /// Product of all factors with exponents reduced by `da`, `db` on the
    /// factors at positions `a`, `b`, times the falling-factorial weights.
    fn partial(&self, xs: &[f64], a: Option<usize>, b: Option<usize>) -> f64 {
        let mut out = self.coef;
        for (pos, &(slot, e)) in self.factors.iter().enumerate() {
            let mut d = 0u32;
            if a == Some(pos) {
                d += 1;
            }
            if b == Some(pos) {
                d += 1;
            }
            if d > e {
                return 0.0;
            }
            let mut w = 1.0;
            for k in 0..d {
                w *= (e - k) as f64;
            }
            out *= w * powi(xs[slot], e - d);
        }
        out
    }
}

impl Polynomial {
    fn locals(&self, x: &[f64]) -> Vec<f64> {
        self.vars.iter().map(|&k| x[k]).collect()
    }
}

impl ConstraintFunction for Polynomial {
    fn gradient_pattern(&self) -> &[usize] {
        &self.vars
    }

    fn hessian_pattern(&self) -> &[(usize, usize)] {
        &self.hess
    }

    fn value(&self, x: &[f64]) -> f64 {
        let xs = self.locals(x);
        self.constant
            + self
                .monomials
                .iter()
                .map(|m| m.partial(&xs, None, None))
                .sum::<f64>()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let xs = self.locals(x);
        out.fill(0.0);
        for (m, slots) in self.monomials.iter().zip(&self.grad_slot) {
            for (a, &s) in slots.iter().enumerate() {
                out[s] += m.partial(&xs, Some(a), None);
            }
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let xs = self.locals(x);
        out.fill(0.0);
        for (m, entries) in self.monomials.iter().zip(&self.hess_slot) {
            for &(a, b, pos) in entries {
                out[pos] += m.partial(&xs, Some(a), Some(b));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Derivative verification

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub constraint: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Compares analytic gradients and Hessians against central differences.
///
/// Gradient entries are checked against differences of the constraint value;
/// Hessian columns against differences of the analytic gradient, so entries
/// missing from the declared Hessian pattern are caught as well. Errors are
/// relative to `max(1, |analytic|)`.
pub fn check_derivatives(
    problem: &NlpProblem,
    x: &[f64],
    step: f64,
    rel_tol: f64,
) -> Vec<DerivativeReport> {
    let mut xw = x.to_vec();
    problem
        .constraints
        .iter()
        .map(|c| {
            let err = constraint_derivative_error(c.function.as_ref(), &mut xw, step);
            DerivativeReport {
                constraint: c.name.clone(),
                max_rel_error: err,
                passed: err <= rel_tol,
            }
        })
        .collect()
}

fn constraint_derivative_error(f: &dyn ConstraintFunction, x: &mut [f64], h: f64) -> f64 {
    let pattern = f.gradient_pattern().to_vec();
    let m = pattern.len();
    let mut grad = vec![0.0; m];
    f.gradient(x, &mut grad);
    let hpat = f.hessian_pattern().to_vec();
    let mut hess = vec![0.0; hpat.len()];
    f.hessian(x, &mut hess);

    let rel = |fd: f64, an: f64| (fd - an).abs() / an.abs().max(1.0);
    let mut worst: f64 = 0.0;
    let mut gp = vec![0.0; m];
    let mut gm = vec![0.0; m];
    for (a, &k) in pattern.iter().enumerate() {
        let x0 = x[k];
        x[k] = x0 + h;
        let fp = f.value(x);
        f.gradient(x, &mut gp);
        x[k] = x0 - h;
        let fm = f.value(x);
        f.gradient(x, &mut gm);
        x[k] = x0;
        worst = worst.max(rel((fp - fm) / (2.0 * h), grad[a]));
        // column k of the Hessian
        for (b, &j) in pattern.iter().enumerate() {
            let fd = (gp[b] - gm[b]) / (2.0 * h);
            let key = (j.max(k), j.min(k));
            let an = hpat
                .iter()
                .zip(&hess)
                .filter(|(p, _)| **p == key)
                .map(|(_, v)| *v)
                .sum::<f64>();
            worst = worst.max(rel(fd, an));
        }
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn problem(constraints: Vec<Constraint>, n: usize) -> NlpProblem {
        NlpProblem {
            variables: (0..n)
                .map(|k| Variable::free(format!("x{k}"), 0.0))
                .collect(),
            objective: LinearObjective {
                terms: vec![(0, 2.0)],
                constant: 1.5,
            },
            constraints,
            interface: InterfaceIndices { p_se: 0, q_se: 0 },
        }
    }

    #[test]
    fn objective_constant_at_origin() {
        let p = problem(vec![], 3);
        let e = p.eval_all(&[0.0; 3]).unwrap();
        assert_eq!(e.objective, 1.5);
        assert!(e.residuals.is_empty());
    }

    #[test]
    fn single_equality_residual() {
        let p = problem(
            vec![Constraint::equality(
                "x1",
                LinearFunction::new(&[(1, 1.0)], -1.0),
            )],
            2,
        );
        let e = p.eval_all(&[0.0, 3.0]).unwrap();
        assert_eq!(e.residuals, vec![2.0]);
        assert_eq!(e.jacobian.to_dense(), vec![vec![0.0, 1.0]]);
    }

    #[test]
    fn dimension_and_nonfinite_errors() {
        let p = problem(
            vec![Constraint::equality(
                "inv",
                Polynomial::new().term(1.0, &[(0, 1), (1, 1)]),
            )],
            2,
        );
        assert!(matches!(
            p.eval_all(&[1.0]),
            Err(NlpError::Dimension { .. })
        ));
        assert_eq!(
            p.eval_all(&[0.0, f64::INFINITY]).unwrap_err(),
            NlpError::NonFinite("inv".into())
        );
    }

    #[test]
    fn linear_derivatives_exact() {
        let p = problem(
            vec![Constraint::equality(
                "lin",
                LinearFunction::new(&[(0, 3.0), (2, -7.5), (0, 1.0)], 4.0),
            )],
            3,
        );
        let r = check_derivatives(&p, &[0.3, -1.2, 5.0], 1e-3, 1e-10);
        assert!(r[0].passed && r[0].max_rel_error <= 1e-10, "{r:?}");
    }

    #[test]
    fn circle_gradient() {
        // p^2 + q^2 - s^2 at (3, 4, 6)
        let f = Polynomial::new()
            .term(1.0, &[(0, 2)])
            .term(1.0, &[(1, 2)])
            .term(-1.0, &[(2, 2)]);
        let x = [3.0, 4.0, 6.0];
        let mut g = [0.0; 3];
        f.gradient(&x, &mut g);
        assert_eq!(g, [6.0, 8.0, -12.0]);
        assert_eq!(f.value(&x), -11.0);
        let p = problem(vec![Constraint::inequality("cap", f)], 3);
        let r = check_derivatives(&p, &x, 1e-6, 1e-7);
        assert!(r[0].passed, "{r:?}");
    }

    #[test]
    fn polynomial_hessian_cubic() {
        // l * v^2 with mixed and repeated factors
        let f = Polynomial::new()
            .term(2.0, &[(0, 1), (1, 2)])
            .term(1.0, &[(1, 1), (1, 2)]);
        let x = [0.7, 1.3];
        let mut h = vec![0.0; f.hessian_pattern().len()];
        f.hessian(&x, &mut h);
        let mut t = Triplets::new(2, 2);
        for (&(r, c), v) in f.hessian_pattern().iter().zip(&h) {
            t.push(r, c, *v);
        }
        let d = t.to_dense_symmetric();
        // f = 2 x0 x1^2 + x1^3
        assert!((d[0][0]).abs() < 1e-15);
        assert!((d[1][0] - 4.0 * 1.3).abs() < 1e-12);
        assert!((d[1][1] - (4.0 * 0.7 + 6.0 * 1.3)).abs() < 1e-12);
        assert_eq!(d[0][1], d[1][0]);
    }

    #[test]
    fn detects_wrong_gradient() {
        #[derive(Debug)]
        struct Bad;
        impl ConstraintFunction for Bad {
            fn gradient_pattern(&self) -> &[usize] {
                &[0]
            }
            fn hessian_pattern(&self) -> &[(usize, usize)] {
                &[]
            }
            fn value(&self, x: &[f64]) -> f64 {
                x[0] * x[0]
            }
            fn gradient(&self, x: &[f64], out: &mut [f64]) {
                out[0] = x[0];
            }
            fn hessian(&self, _x: &[f64], _out: &mut [f64]) {}
        }
        let p = problem(vec![Constraint::equality("bad", Bad)], 1);
        let r = check_derivatives(&p, &[2.0], 1e-6, 1e-5);
        assert!(!r[0].passed);
    }

    #[test]
    fn tags_from_name() {
        let c = Constraint::equality(
            "p_recursion+net_p_withdrawal[2-3]",
            LinearFunction::new(&[], 0.0),
        );
        assert_eq!(
            c.tags().collect::<Vec<_>>(),
            ["p_recursion", "net_p_withdrawal"]
        );
    }

    #[test]
    fn interior_sampling_respects_margin() {
        let mut p = problem(vec![], 3);
        p.variables[0] = Variable::new("a", 0.0, 1.0, 0.5);
        p.variables[1] = Variable::new("b", 2.0, 2.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = p.sample_interior_point(&mut rng, 1e-6);
            assert!(x[0] >= 1e-6 && x[0] <= 1.0 - 1e-6);
            assert_eq!(x[1], 2.0);
            assert!(x[2].abs() <= 1.0);
        }
    }
}
