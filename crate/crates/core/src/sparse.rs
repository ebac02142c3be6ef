//! Compressed sparse rows, deterministic assembly and the linear solvers
//! behind the cell and Reynolds problems.
//!
//! The direct path factors with faer's sparse LU (built without its thread
//! pool, so results do not depend on the machine's core count) and applies
//! iterative refinement. The GMRES path exists for inexact solves.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("sparse LU failed: {0}")]
    Factorization(String),
    #[error("solution is not finite (numerically singular matrix)")]
    NotFinite,
    #[error("GMRES stopped after {iterations} iterations at relative residual {residual:e} (target {target:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        target: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LinearSolver {
    /// Sparse LU plus up to `refinement_steps` rounds of iterative refinement.
    Direct { refinement_steps: usize },
    /// Restarted GMRES on the relative 2-norm residual.
    Gmres {
        tol: f64,
        restart: usize,
        max_iter: usize,
    },
}

impl Default for LinearSolver {
    fn default() -> Self {
        Self::Direct {
            refinement_steps: 2,
        }
    }
}

/// Square matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the matrix from `(row, col, value)` entries. Duplicates are
    /// summed in the order given, so the result depends only on the input
    /// sequence.
    pub fn from_triplets(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        // stable sort keeps the summation order of duplicates
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            assert!(r < n && c < n, "entry ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()]
            .iter()
            .position(|&cc| cc == c)
            .map_or(0.0, |k| self.vals[range.start + k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yr = acc;
        }
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|r| {
                self.vals[self.row_ptr[r]..self.row_ptr[r + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// `b - A x`
    pub fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let ax = self.mul_vec(x);
        b.iter().zip(ax).map(|(bi, ai)| bi - ai).collect()
    }

    /// `max |A - A^T|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[k];
                worst = worst.max((self.vals[k] - self.get(c, r)).abs());
            }
        }
        worst
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>, SolverError> {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                triplets.push(Triplet::new(r, self.cols[k], self.vals[k]));
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &triplets)
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Relative residual `|b - A x| / |b|` in the given norm; the absolute
/// residual when `b = 0`.
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64], norm: fn(&[f64]) -> f64) -> f64 {
    let r = norm(&a.residual(x, b));
    let nb = norm(b);
    if nb > 0.0 {
        r / nb
    } else {
        r
    }
}

/// Solves `A X = B` for each right-hand side in `rhs`.
pub fn solve(
    a: &CsrMatrix,
    rhs: &[Vec<f64>],
    solver: LinearSolver,
) -> Result<Vec<Vec<f64>>, SolverError> {
    match solver {
        LinearSolver::Direct { refinement_steps } => solve_direct(a, rhs, refinement_steps),
        LinearSolver::Gmres {
            tol,
            restart,
            max_iter,
        } => rhs
            .iter()
            .map(|b| gmres(a, b, tol, restart, max_iter))
            .collect(),
    }
}

fn solve_direct(
    a: &CsrMatrix,
    rhs: &[Vec<f64>],
    refinement_steps: usize,
) -> Result<Vec<Vec<f64>>, SolverError> {
    let lu = SparseLu::new(a)?;
    refine(a, rhs, refinement_steps, |b| lu.apply(b))
}

/// `x = M^-1 b` followed by `steps` rounds of `x += M^-1 (b - A x)`.
fn refine(
    a: &CsrMatrix,
    rhs: &[Vec<f64>],
    steps: usize,
    apply: impl Fn(&[Vec<f64>]) -> Vec<Vec<f64>>,
) -> Result<Vec<Vec<f64>>, SolverError> {
    let mut xs = apply(rhs);
    for _ in 0..steps {
        let rs: Vec<Vec<f64>> = xs.iter().zip(rhs).map(|(x, b)| a.residual(x, b)).collect();
        let ds = apply(&rs);
        for (x, d) in xs.iter_mut().zip(ds) {
            for (xi, di) in x.iter_mut().zip(d) {
                *xi += di;
            }
        }
    }
    if xs.iter().flatten().all(|v| v.is_finite()) {
        Ok(xs)
    } else {
        Err(SolverError::NotFinite)
    }
}

struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    fn new(a: &CsrMatrix) -> Result<Self, SolverError> {
        let lu = a
            .to_faer()?
            .sp_lu()
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
        Ok(Self { n: a.dim(), lu })
    }

    fn apply(&self, b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut m = Mat::<f64>::from_fn(n, b.len(), |i, j| b[j][i]);
        self.lu.solve_in_place(m.as_mut());
        (0..b.len())
            .map(|j| (0..n).map(|i| m[(i, j)]).collect())
            .collect()
    }
}

/// Singular matrix `A` with null space spanned by the constants, bordered
/// by a Lagrange multiplier row and column `c`:
///
/// ```text
/// [ A    c ] [x]   [b]
/// [ c^T  0 ] [l] = [r]
/// ```
///
/// The dense border ruins fill-reducing orderings, so the direct path
/// factors only the sparse `A + d e0 e0^T` (nonsingular because the left
/// null vector of `A` has a nonzero first entry), solves the bordered
/// system for that matrix through its scalar Schur complement, and removes
/// the `d e0 e0^T` shift with a Sherman-Morrison correction. Iterative
/// refinement then runs against the true bordered matrix.
#[derive(Debug, Clone)]
pub struct BorderedSystem {
    core: CsrMatrix,
    border: Vec<f64>,
    full: CsrMatrix,
}

impl BorderedSystem {
    pub fn new(core: CsrMatrix, border: Vec<f64>) -> Self {
        let n = core.dim();
        assert_eq!(border.len(), n, "border length must match the matrix");
        let mut entries = Vec::with_capacity(core.nnz() + 2 * n);
        for r in 0..n {
            for k in core.row_ptr[r]..core.row_ptr[r + 1] {
                entries.push((r, core.cols[k], core.vals[k]));
            }
        }
        for (k, &c) in border.iter().enumerate() {
            entries.push((k, n, c));
            entries.push((n, k, c));
        }
        let full = CsrMatrix::from_triplets(n + 1, entries);
        Self { core, border, full }
    }

    /// The assembled `(n + 1) x (n + 1)` bordered matrix.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.full
    }

    /// Solves for right-hand sides of length `n + 1`.
    pub fn solve(
        &self,
        rhs: &[Vec<f64>],
        solver: LinearSolver,
    ) -> Result<Vec<Vec<f64>>, SolverError> {
        match solver {
            LinearSolver::Direct { refinement_steps } => {
                let inverse = ShiftedBorderInverse::new(&self.core, &self.border)?;
                refine(&self.full, rhs, refinement_steps, |b| inverse.apply(b))
            }
            gmres_solver => solve(&self.full, rhs, gmres_solver),
        }
    }
}

struct ShiftedBorderInverse<'a> {
    border: &'a [f64],
    lu: SparseLu,
    shift: f64,
    /// `(A + d e0 e0^T)^-1 c`
    z: Vec<f64>,
    cz: f64,
    /// shifted bordered inverse applied to `e0`
    w: Vec<f64>,
}

impl<'a> ShiftedBorderInverse<'a> {
    fn new(core: &CsrMatrix, border: &'a [f64]) -> Result<Self, SolverError> {
        let n = core.dim();
        let shift = core.get(0, 0).abs().max(f64::MIN_POSITIVE);
        let mut entries = Vec::with_capacity(core.nnz() + 1);
        for r in 0..n {
            for k in core.row_ptr[r]..core.row_ptr[r + 1] {
                entries.push((r, core.cols[k], core.vals[k]));
            }
        }
        entries.push((0, 0, shift));
        let lu = SparseLu::new(&CsrMatrix::from_triplets(n, entries))?;
        let z = lu.apply(&[border.to_vec()]).remove(0);
        let cz: f64 = border.iter().zip(&z).map(|(a, b)| a * b).sum();
        if !(cz.is_finite() && cz != 0.0) {
            return Err(SolverError::NotFinite);
        }
        let mut this = Self {
            border,
            lu,
            shift,
            z,
            cz,
            w: Vec::new(),
        };
        let mut e0 = vec![0.0; n + 1];
        e0[0] = 1.0;
        this.w = this.apply_shifted(&[e0]).remove(0);
        Ok(this)
    }

    /// Inverse of the bordered matrix built on `A + d e0 e0^T`.
    fn apply_shifted(&self, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.z.len();
        let heads: Vec<Vec<f64>> = rhs.iter().map(|r| r[..n].to_vec()).collect();
        let ys = self.lu.apply(&heads);
        ys.into_iter()
            .zip(rhs)
            .map(|(mut y, r)| {
                let cy: f64 = self.border.iter().zip(&y).map(|(a, b)| a * b).sum();
                let mu = (cy - r[n]) / self.cz;
                for (yi, zi) in y.iter_mut().zip(&self.z) {
                    *yi -= mu * zi;
                }
                y.push(mu);
                y
            })
            .collect()
    }

    fn apply(&self, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let denom = 1.0 - self.shift * self.w[0];
        self.apply_shifted(rhs)
            .into_iter()
            .map(|mut t| {
                let factor = self.shift * t[0] / denom;
                for (ti, wi) in t.iter_mut().zip(&self.w) {
                    *ti += factor * wi;
                }
                t
            })
            .collect()
    }
}

/// Restarted GMRES with modified Gram-Schmidt and Givens rotations,
/// starting from zero. Stops when `|b - A x|_2 <= tol |b|_2`.
pub fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<Vec<f64>, SolverError> {
    let n = a.dim();
    let restart = restart.clamp(1, n.max(1));
    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let target = tol * bnorm;
    let mut iterations = 0;
    let mut w = vec![0.0; n];
    loop {
        let r = a.residual(&x, b);
        let beta = norm2(&r);
        if beta <= target {
            return Ok(x);
        }
        if iterations >= max_iter {
            return Err(SolverError::NoConvergence {
                iterations,
                residual: beta / bnorm,
                target: tol,
            });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        // Hessenberg columns, already rotated
        let mut hcols: Vec<Vec<f64>> = Vec::with_capacity(restart);
        let mut cs: Vec<f64> = Vec::with_capacity(restart);
        let mut sn: Vec<f64> = Vec::with_capacity(restart);
        let mut g = vec![beta];
        let mut k = 0;
        while k < restart && iterations < max_iter {
            a.mul_vec_into(&basis[k], &mut w);
            let mut h = vec![0.0; k + 2];
            for (j, v) in basis.iter().enumerate() {
                let hj: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
                h[j] = hj;
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= hj * vi;
                }
            }
            let hn = norm2(&w);
            h[k + 1] = hn;
            for j in 0..k {
                let t = cs[j] * h[j] + sn[j] * h[j + 1];
                h[j + 1] = -sn[j] * h[j] + cs[j] * h[j + 1];
                h[j] = t;
            }
            let denom = h[k].hypot(h[k + 1]);
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (h[k] / denom, h[k + 1] / denom)
            };
            h[k] = c * h[k] + s * h[k + 1];
            h[k + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            g.push(-s * g[k]);
            g[k] *= c;
            hcols.push(h);
            iterations += 1;
            k += 1;
            let converged = g[k].abs() <= target;
            if converged || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        // back substitution on the k x k triangle
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for j in i + 1..k {
                acc -= hcols[j][i] * y[j];
            }
            y[i] = acc / hcols[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, vi) in x.iter_mut().zip(&basis[j]) {
                *xi += yj * vi;
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SolverError::NotFinite);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut e = Vec::new();
        for i in 0..n {
            e.push((i, i, 2.0 + 0.1 * i as f64));
            if i > 0 {
                e.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                e.push((i, i + 1, -1.3));
            }
        }
        CsrMatrix::from_triplets(n, e)
    }

    #[test]
    fn duplicates_are_summed() {
        let a =
            CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (1, 0, 2.0), (0, 0, 0.5), (0, 1, 3.0)]);
        assert_eq!(a.get(0, 0), 1.5);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.mul_vec(&[1.0, 1.0]), vec![4.5, 2.0]);
    }

    #[test]
    fn direct_and_gmres_agree() {
        let a = laplacian_1d(40);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let x = solve(&a, std::slice::from_ref(&b), LinearSolver::default())
            .unwrap()
            .remove(0);
        assert!(relative_residual(&a, &x, &b, norm2) < 1e-14);
        let y = gmres(&a, &b, 1e-12, 40, 200).unwrap();
        assert!(relative_residual(&a, &y, &b, norm2) <= 1e-12);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn gmres_respects_loose_tolerance_and_restarts() {
        let a = laplacian_1d(60);
        let b = vec![1.0; 60];
        let y = gmres(&a, &b, 1e-4, 5, 10_000).unwrap();
        let r = relative_residual(&a, &y, &b, norm2);
        assert!(r <= 1e-4 && r > 1e-9, "{r}");
        assert!(matches!(
            gmres(&a, &b, 1e-14, 2, 3),
            Err(SolverError::NoConvergence { .. })
        ));
    }

    #[test]
    fn asymmetry_measure() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 1, 1.0), (1, 0, 0.25), (0, 0, 1.0)]);
        assert_eq!(a.asymmetry(), 0.75);
    }

    #[test]
    fn bordered_singular_system() {
        // periodic 1D Laplacian plus a skew part; null space = constants
        let n = 30;
        let mut e = Vec::new();
        for i in 0..n {
            let (l, r) = ((i + n - 1) % n, (i + 1) % n);
            e.push((i, i, 2.0));
            e.push((i, l, -1.0 - 0.2));
            e.push((i, r, -1.0 + 0.2));
        }
        let core = CsrMatrix::from_triplets(n, e);
        let border: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i % 3) as f64).collect();
        let sys = BorderedSystem::new(core, border.clone());
        let mut b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let mean = b.iter().sum::<f64>() / n as f64;
        b.iter_mut().for_each(|v| *v -= mean);
        b.push(0.0);
        let x = sys
            .solve(&[b.clone()], LinearSolver::default())
            .unwrap()
            .remove(0);
        assert!(relative_residual(sys.matrix(), &x, &b, norm_inf) < 1e-14);
        let constraint: f64 = border.iter().zip(&x).map(|(c, v)| c * v).sum();
        assert!(constraint.abs() < 1e-13);
        assert!(x[n].abs() < 1e-13);
        // same answer as the unstructured factorization of the full matrix
        let y = solve(sys.matrix(), &[b], LinearSolver::default())
            .unwrap()
            .remove(0);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
