//! Shared fixtures for integration tests.
#![allow(dead_code)]

use flexdom::nlpcore::{
    Constraint, InterfaceIndices, LinearFunction, LinearObjective, NlpProblem, Variable,
};
use rand::Rng;

/// `min c x` over `0 <= x <= u` and `a x <= b` cuts.
#[derive(Debug, Clone)]
pub struct BoxLp {
    pub c: Vec<f64>,
    pub u: Vec<f64>,
    pub cuts: Vec<(Vec<f64>, f64)>,
}

impl BoxLp {
    /// Random box with 1 to 4 cuts that keep the box centre strictly feasible.
    pub fn random<R: Rng>(rng: &mut R, n: usize) -> Self {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cuts = (0..rng.gen_range(1..5))
            .map(|_| {
                let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let at_centre: f64 = a.iter().zip(&u).map(|(a, u)| a * u / 2.0).sum();
                (a, at_centre + rng.gen_range(0.1..1.0))
            })
            .collect();
        BoxLp { c, u, cuts }
    }

    pub fn problem(&self) -> NlpProblem {
        let n = self.c.len();
        NlpProblem {
            variables: (0..n)
                .map(|k| Variable::new(format!("x{k}"), 0.0, self.u[k], 0.0))
                .collect(),
            objective: LinearObjective {
                terms: self.c.iter().copied().enumerate().collect(),
                constant: 0.0,
            },
            constraints: self
                .cuts
                .iter()
                .enumerate()
                .map(|(i, (a, b))| {
                    let terms: Vec<(usize, f64)> = a.iter().copied().enumerate().collect();
                    Constraint::inequality(format!("cut{i}"), LinearFunction::new(&terms, -b))
                })
                .collect(),
            interface: InterfaceIndices { p_se: 0, q_se: 0 },
        }
    }

    /// Optimal value by enumerating every vertex of the feasible set.
    pub fn vertex_optimum(&self) -> f64 {
        let n = self.c.len();
        let mut rows = self.cuts.clone();
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            rows.push((e.clone(), self.u[k]));
            e[k] = -1.0;
            rows.push((e, 0.0));
        }
        let mut best = f64::INFINITY;
        for sel in combinations(rows.len(), n) {
            if let Some(x) = solve_square(sel.iter().map(|&i| &rows[i])) {
                let feasible = rows.iter().all(|(a, b)| dot(a, &x) <= b + 1e-9);
                if feasible {
                    best = best.min(dot(&self.c, &x));
                }
            }
        }
        best
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn combinations(total: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    (0..total)
        .flat_map(|first| {
            combinations(total - first - 1, k - 1)
                .into_iter()
                .map(move |rest| {
                    std::iter::once(first)
                        .chain(rest.into_iter().map(|r| r + first + 1))
                        .collect()
                })
        })
        .collect()
}

/// Gauss-Jordan elimination with partial pivoting; `None` when singular.
fn solve_square<'a>(rows: impl Iterator<Item = &'a (Vec<f64>, f64)>) -> Option<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = rows
        .map(|(a, b)| a.iter().copied().chain([*b]).collect())
        .collect();
    let n = m.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                let pivot_row = m[col].clone();
                for (x, p) in m[r][col..=n].iter_mut().zip(&pivot_row[col..=n]) {
                    *x -= f * p;
                }
            }
        }
    }
    Some((0..n).map(|k| m[k][n] / m[k][k]).collect())
}
