//! Dense symmetric factorizations used by the interior-point solver.

#![allow(clippy::needless_range_loop)]

/// Dense symmetric matrix, lower triangle stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    a: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            a: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn clear(&mut self) {
        self.a.fill(0.0);
    }

    /// Entry `(i, j)`, either triangle.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.a[r + c * self.n]
    }

    /// Adds `v` to `(i, j)` and, implicitly, `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.a[r + c * self.n] += v;
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.fill(0.0);
        for j in 0..n {
            let col = &self.a[j * n..(j + 1) * n];
            out[j] += col[j] * x[j];
            for i in j + 1..n {
                out[i] += col[i] * x[j];
                out[j] += col[i] * x[i];
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let n = self.n;
        (0..n)
            .flat_map(|j| (j..n).map(move |i| (i, j)))
            .map(|(i, j)| self.a[i + j * n].abs())
            .fold(0.0, f64::max)
    }
}

/// Counts of positive, negative and zero eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

/// `P A P^T = L D L^T` with 1x1 and 2x2 diagonal blocks (Bunch-Kaufman
/// partial pivoting).
#[derive(Debug, Clone)]
pub struct Ldlt {
    n: usize,
    // L below the diagonal, D on the diagonal and in the (k+1, k) entry of 2x2 blocks
    a: Vec<f64>,
    perm: Vec<usize>,
    // 1 or 2 at the first index of each block, 0 at the second index of a 2x2 block
    block: Vec<u8>,
    inertia: Inertia,
}

const BK_ALPHA: f64 = 0.640_388_203_202_208_1; // (1 + sqrt(17)) / 8

impl Ldlt {
    /// Factorizes `m`. Pivots with magnitude at most `zero_tol * max|A|` are
    /// counted as zero eigenvalues.
    pub fn factor(m: &SymMatrix, zero_tol: f64) -> Ldlt {
        Ldlt::pivot(m.a.clone(), (0..m.n).collect(), m.max_abs(), zero_tol)
    }

    /// Factorizes `m` with rows and columns taken in `order` before pivoting.
    pub fn factor_ordered(m: &SymMatrix, zero_tol: f64, order: &[usize]) -> Ldlt {
        let n = m.n;
        assert_eq!(order.len(), n, "ordering length");
        let mut a = vec![0.0; n * n];
        for j in 0..n {
            for i in j..n {
                a[i + j * n] = m.get(order[i], order[j]);
            }
        }
        Ldlt::pivot(a, order.to_vec(), m.max_abs(), zero_tol)
    }

    fn pivot(mut a: Vec<f64>, mut perm: Vec<usize>, max_abs: f64, zero_tol: f64) -> Ldlt {
        let n = perm.len();
        let mut block = vec![1u8; n];
        let mut inertia = Inertia::default();
        let tiny = zero_tol * max_abs.max(f64::MIN_POSITIVE);
        let idx = |i: usize, j: usize| i + j * n;

        let mut k = 0;
        while k < n {
            let absakk = a[idx(k, k)].abs();
            let (mut imax, mut colmax) = (k, 0.0);
            for i in k + 1..n {
                let v = a[idx(i, k)].abs();
                if v > colmax {
                    colmax = v;
                    imax = i;
                }
            }
            if absakk.max(colmax) <= tiny {
                // numerically zero column
                inertia.zero += 1;
                for i in k..n {
                    a[idx(i, k)] = 0.0;
                }
                block[k] = 1;
                k += 1;
                continue;
            }
            let (kp, kstep) = if absakk >= BK_ALPHA * colmax {
                (k, 1)
            } else {
                let mut rowmax: f64 = 0.0;
                for j in k..imax {
                    rowmax = rowmax.max(a[idx(imax, j)].abs());
                }
                for i in imax + 1..n {
                    rowmax = rowmax.max(a[idx(i, imax)].abs());
                }
                if absakk * rowmax >= BK_ALPHA * colmax * colmax {
                    (k, 1)
                } else if a[idx(imax, imax)].abs() >= BK_ALPHA * rowmax {
                    (imax, 1)
                } else {
                    (imax, 2)
                }
            };
            let kk = k + kstep - 1;
            if kp != kk {
                sym_swap(&mut a, n, kk, kp);
                perm.swap(kk, kp);
            }

            if kstep == 1 {
                let d = a[idx(k, k)];
                if d.abs() <= tiny {
                    inertia.zero += 1;
                    for i in k + 1..n {
                        a[idx(i, k)] = 0.0;
                    }
                } else {
                    if d > 0.0 {
                        inertia.positive += 1;
                    } else {
                        inertia.negative += 1;
                    }
                    let dinv = 1.0 / d;
                    let nz: Vec<usize> = (k + 1..n).filter(|&i| a[idx(i, k)] != 0.0).collect();
                    for (t, &j) in nz.iter().enumerate() {
                        let f = a[idx(j, k)] * dinv;
                        for &i in &nz[t..] {
                            a[idx(i, j)] -= a[idx(i, k)] * f;
                        }
                    }
                    for i in k + 1..n {
                        a[idx(i, k)] *= dinv;
                    }
                }
                block[k] = 1;
            } else {
                let d11 = a[idx(k, k)];
                let d21 = a[idx(k + 1, k)];
                let d22 = a[idx(k + 1, k + 1)];
                let det = d11 * d22 - d21 * d21;
                let (e1, e2) = eig2(d11, d21, d22);
                for e in [e1, e2] {
                    if e.abs() <= tiny {
                        inertia.zero += 1;
                    } else if e > 0.0 {
                        inertia.positive += 1;
                    } else {
                        inertia.negative += 1;
                    }
                }
                // multipliers for rows below the block
                let mut l1 = vec![0.0; n];
                let mut l2 = vec![0.0; n];
                for i in k + 2..n {
                    let (ai1, ai2) = (a[idx(i, k)], a[idx(i, k + 1)]);
                    l1[i] = (ai1 * d22 - ai2 * d21) / det;
                    l2[i] = (ai2 * d11 - ai1 * d21) / det;
                }
                let nz: Vec<usize> = (k + 2..n)
                    .filter(|&i| a[idx(i, k)] != 0.0 || a[idx(i, k + 1)] != 0.0)
                    .collect();
                for (t, &j) in nz.iter().enumerate() {
                    let (aj1, aj2) = (a[idx(j, k)], a[idx(j, k + 1)]);
                    for &i in &nz[t..] {
                        a[idx(i, j)] -= l1[i] * aj1 + l2[i] * aj2;
                    }
                }
                for i in k + 2..n {
                    a[idx(i, k)] = l1[i];
                    a[idx(i, k + 1)] = l2[i];
                }
                block[k] = 2;
                block[k + 1] = 0;
            }
            k += kstep;
        }
        Ldlt {
            n,
            a,
            perm,
            block,
            inertia,
        }
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Solves `A x = b` in place. Zero pivots contribute zero components.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let idx = |i: usize, j: usize| i + j * n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // L z = P b
        let mut k = 0;
        while k < n {
            match self.block[k] {
                2 => {
                    let (z1, z2) = (y[k], y[k + 1]);
                    for i in k + 2..n {
                        y[i] -= self.a[idx(i, k)] * z1 + self.a[idx(i, k + 1)] * z2;
                    }
                    k += 2;
                }
                _ => {
                    let z = y[k];
                    if z != 0.0 {
                        for i in k + 1..n {
                            y[i] -= self.a[idx(i, k)] * z;
                        }
                    }
                    k += 1;
                }
            }
        }
        // D w = z
        let mut k = 0;
        while k < n {
            if self.block[k] == 2 {
                let d11 = self.a[idx(k, k)];
                let d21 = self.a[idx(k + 1, k)];
                let d22 = self.a[idx(k + 1, k + 1)];
                let det = d11 * d22 - d21 * d21;
                let (z1, z2) = (y[k], y[k + 1]);
                y[k] = (d22 * z1 - d21 * z2) / det;
                y[k + 1] = (d11 * z2 - d21 * z1) / det;
                k += 2;
            } else {
                let d = self.a[idx(k, k)];
                y[k] = if d == 0.0 { 0.0 } else { y[k] / d };
                k += 1;
            }
        }
        // L^T x = w
        let mut k = n;
        while k > 0 {
            let first = if k >= 2 && self.block[k - 1] == 0 {
                k - 2
            } else {
                k - 1
            };
            for j in first..k {
                let mut s = y[j];
                for i in k..n {
                    s -= self.a[idx(i, j)] * y[i];
                }
                y[j] = s;
            }
            k = first;
        }
        for (pos, &p) in self.perm.iter().enumerate() {
            b[p] = y[pos];
        }
    }
}

/// Greedy minimum-degree elimination order for the graph on `n` nodes with
/// the given edges. Ties go to the lowest index.
pub fn minimum_degree(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<usize> {
    use std::collections::BTreeSet;
    let mut adj = vec![BTreeSet::new(); n];
    for (i, j) in edges {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (t, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[t + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            queue.insert((adj[u].len(), u));
        }
    }
    order
}

/// Eigenvalues of the symmetric 2x2 matrix `[[a, b], [b, c]]`.
fn eig2(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let rad = (0.5 * (a - c)).hypot(b);
    (mean + rad, mean - rad)
}

/// Symmetric interchange of rows/columns `p < q` on lower storage, including
/// the already computed columns of `L`.
fn sym_swap(a: &mut [f64], n: usize, p: usize, q: usize) {
    let idx = |i: usize, j: usize| i + j * n;
    for j in 0..p {
        a.swap(idx(p, j), idx(q, j));
    }
    a.swap(idx(p, p), idx(q, q));
    for i in p + 1..q {
        a.swap(idx(i, p), idx(q, i));
    }
    for i in q + 1..n {
        a.swap(idx(i, p), idx(i, q));
    }
}

/// Dense Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Fails when a pivot is not above `min_pivot * max diag`.
    pub fn factor(m: &SymMatrix, min_pivot: f64) -> Option<Cholesky> {
        let n = m.n;
        let mut l = m.a.clone();
        let idx = |i: usize, j: usize| i + j * n;
        let scale = (0..n).map(|k| m.a[idx(k, k)].abs()).fold(0.0, f64::max);
        for k in 0..n {
            let d = l[idx(k, k)];
            if d.is_nan() || d <= min_pivot * scale {
                return None;
            }
            let s = d.sqrt();
            l[idx(k, k)] = s;
            for i in k + 1..n {
                l[idx(i, k)] /= s;
            }
            for j in k + 1..n {
                let f = l[idx(j, k)];
                if f != 0.0 {
                    let (head, tail) = l.split_at_mut(j * n);
                    let colk = &head[k * n..(k + 1) * n];
                    let colj = &mut tail[..n];
                    for i in j..n {
                        colj[i] -= colk[i] * f;
                    }
                }
            }
        }
        Some(Cholesky { n, l })
    }

    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let idx = |i: usize, j: usize| i + j * n;
        for k in 0..n {
            b[k] /= self.l[idx(k, k)];
            let z = b[k];
            for i in k + 1..n {
                b[i] -= self.l[idx(i, k)] * z;
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for i in k + 1..n {
                s -= self.l[idx(i, k)] * b[i];
            }
            b[k] = s / self.l[idx(k, k)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Cyclic Jacobi eigenvalues; independent of the factorizations.
    fn jacobi_eigenvalues(m: &SymMatrix) -> Vec<f64> {
        let n = m.dim();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| m.get(i, j)).collect())
            .collect();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-22 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i]).collect()
    }

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let mut m = SymMatrix::zeros(n);
        for j in 0..n {
            for i in j..n {
                if rng.gen_bool(0.6) {
                    m.add(i, j, rng.gen_range(-2.0..2.0));
                }
            }
        }
        m
    }

    #[test]
    fn solves_and_counts_inertia() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..60 {
            let n = 1 + trial % 17;
            let m = random_sym(&mut rng, n);
            let f = Ldlt::factor(&m, 1e-14);
            let eig = jacobi_eigenvalues(&m);
            let pos = eig.iter().filter(|e| **e > 1e-9).count();
            let neg = eig.iter().filter(|e| **e < -1e-9).count();
            let inertia = f.inertia();
            assert_eq!(
                (inertia.positive, inertia.negative),
                (pos, neg),
                "trial {trial}: {eig:?}"
            );
            if inertia.zero == 0 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut b = vec![0.0; n];
                m.mul_vec(&x, &mut b);
                f.solve(&mut b);
                let err = x
                    .iter()
                    .zip(&b)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-8, "trial {trial}: err {err}");
            }
        }
    }

    #[test]
    fn ordered_factor_matches_natural() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..30 {
            let n = 2 + trial % 13;
            let m = random_sym(&mut rng, n);
            let edges: Vec<(usize, usize)> = (0..n)
                .flat_map(|j| (j + 1..n).map(move |i| (i, j)))
                .filter(|&(i, j)| m.get(i, j) != 0.0)
                .collect();
            let order = minimum_degree(n, edges);
            let mut sorted = order.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            let a = Ldlt::factor(&m, 1e-14);
            let b = Ldlt::factor_ordered(&m, 1e-14, &order);
            assert_eq!(a.inertia(), b.inertia(), "trial {trial}");
            if b.inertia().zero == 0 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut rhs = vec![0.0; n];
                m.mul_vec(&x, &mut rhs);
                b.solve(&mut rhs);
                let err = x
                    .iter()
                    .zip(&rhs)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-8, "trial {trial}: err {err}");
            }
        }
    }

    #[test]
    fn minimum_degree_on_star_takes_leaves_first() {
        let order = minimum_degree(5, [(0, 1), (0, 2), (0, 3), (0, 4)]);
        assert_eq!(order, vec![1, 2, 3, 0, 4]);
    }

    #[test]
    fn kkt_inertia() {
        // [[I, J^T], [J, 0]] with full-rank J has inertia (n, m, 0)
        let (n, mrows) = (5, 3);
        let mut m = SymMatrix::zeros(n + mrows);
        for k in 0..n {
            m.add(k, k, 1.0);
        }
        for r in 0..mrows {
            m.add(n + r, r, 1.0);
            m.add(n + r, r + 2, -0.5);
        }
        let f = Ldlt::factor(&m, 1e-14);
        assert_eq!(
            f.inertia(),
            Inertia {
                positive: n,
                negative: mrows,
                zero: 0
            }
        );
    }

    #[test]
    fn zero_pivot_detected() {
        let mut m = SymMatrix::zeros(3);
        m.add(0, 0, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 1.0);
        m.add(2, 2, -1.0);
        let f = Ldlt::factor(&m, 1e-14);
        assert_eq!(
            f.inertia(),
            Inertia {
                positive: 1,
                negative: 1,
                zero: 1
            }
        );
    }

    #[test]
    fn needs_two_by_two_pivot() {
        let mut m = SymMatrix::zeros(2);
        m.add(1, 0, 1.0);
        let f = Ldlt::factor(&m, 1e-14);
        assert_eq!(
            f.inertia(),
            Inertia {
                positive: 1,
                negative: 1,
                zero: 0
            }
        );
        let mut b = [2.0, 3.0];
        f.solve(&mut b);
        assert_eq!(b, [3.0, 2.0]);
    }

    #[test]
    fn cholesky_solves_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 9;
        let r = random_sym(&mut rng, n);
        // R^2 + I is SPD
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..n).map(|k| r.get(i, k) * r.get(k, j)).sum();
                m.add(i, j, v + if i == j { 1.0 } else { 0.0 });
            }
        }
        let c = Cholesky::factor(&m, 1e-14).unwrap();
        let x: Vec<f64> = (0..n).map(|k| k as f64 - 3.0).collect();
        let mut b = vec![0.0; n];
        m.mul_vec(&x, &mut b);
        c.solve(&mut b);
        for (a, b) in x.iter().zip(&b) {
            assert!((a - b).abs() < 1e-10);
        }
        let mut ind = SymMatrix::zeros(2);
        ind.add(0, 0, 1.0);
        ind.add(1, 1, -1.0);
        assert!(Cholesky::factor(&ind, 1e-14).is_none());
    }
}
