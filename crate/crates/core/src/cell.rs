//! Periodic cell problems for the pressure correctors and the flow factors.
//!
//! For `i = 1, 2` the corrector `q_i` is the zero-mean periodic function on
//! `Z'` with
//!
//! ```text
//! int theta1 (grad q_i + e_i) . grad v  =  int theta2 s_i d_i v     for all periodic v
//! ```
//!
//! discretised with bilinear elements on the `n x n` periodic grid whose
//! nodes are [`cell_node`]. The mean constraint enters through one
//! Lagrange multiplier bordering the stiffness matrix.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coefficients::{self, CoefficientError, CoefficientSample, Phi2Variant};
use crate::params::FluidParams;
use crate::q1;
use crate::roughness::{cell_node, RoughnessProfile};
use crate::sparse::{self, BorderedSystem, CsrMatrix, LinearSolver, SolverError};

pub const MIN_CELL_GRID: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CellError {
    #[error("cell grid n = {0} is below the minimum {MIN_CELL_GRID}")]
    GridTooSmall(usize),
    #[error("cell problem is not elliptic: theta1 = {value:e} at z' = ({}, {})", z[0], z[1])]
    Ellipticity { z: [f64; 2], value: f64 },
    #[error(transparent)]
    Coefficients(#[from] CoefficientError),
    #[error("cell solve failed: {0}")]
    Solver(#[from] SolverError),
}

/// Coefficients at the 2x2 Gauss points of every element of the periodic
/// grid; element `(i, j)` has index `j * n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureField {
    pub n: usize,
    pub samples: Vec<[CoefficientSample; 4]>,
}

impl QuadratureField {
    /// Physical coordinates of quadrature point `q` of element `e`.
    pub fn point(n: usize, e: usize, q: usize) -> [f64; 2] {
        let r = q1::point(q);
        let step = 1.0 / n as f64;
        [
            cell_node(e % n, n) + r[0] * step,
            cell_node(e / n, n) + r[1] * step,
        ]
    }

    fn points(n: usize) -> Vec<[f64; 2]> {
        (0..n * n * 4)
            .map(|k| Self::point(n, k / 4, k % 4))
            .collect()
    }

    fn from_flat(n: usize, flat: Vec<CoefficientSample>) -> Self {
        let samples = flat
            .chunks_exact(4)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect();
        Self { n, samples }
    }

    /// Evaluates the averaged coefficients of `profile` at every quadrature
    /// point.
    pub fn from_profile(
        profile: &RoughnessProfile,
        params: &FluidParams,
        n: usize,
        variant: Phi2Variant,
    ) -> Result<Self, CoefficientError> {
        coefficients::warn_on_rerouting(profile, params);
        let points = Self::points(n);
        let h: Vec<f64> = points.iter().map(|&z| profile.eval(z)).collect();
        let flat = coefficients::evaluate_points(&points, &h, params, variant)?;
        Ok(Self::from_flat(n, flat))
    }

    /// Samples an arbitrary coefficient function of `z'`.
    pub fn from_fn(n: usize, f: impl Fn([f64; 2]) -> CoefficientSample + Sync) -> Self {
        let flat = Self::points(n).into_par_iter().map(&f).collect();
        Self::from_flat(n, flat)
    }

    pub fn constant(n: usize, sample: CoefficientSample) -> Self {
        Self {
            n,
            samples: vec![[sample; 4]; n * n],
        }
    }

    /// Quadrature mean of `f` over the cell.
    pub fn mean(&self, f: impl Fn(&CoefficientSample) -> f64) -> f64 {
        let m = (self.n * self.n) as f64;
        self.samples
            .iter()
            .map(|e| e.iter().map(&f).sum::<f64>() * q1::WEIGHT)
            .sum::<f64>()
            / m
    }

    /// Quadrature means `(harmonic, arithmetic)` of `theta1`.
    pub fn theta1_bounds(&self) -> (f64, f64) {
        (1.0 / self.mean(|c| 1.0 / c.theta1), self.mean(|c| c.theta1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSolution {
    pub n: usize,
    /// Nodal values, row-major with `z2` as the slow index.
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    /// `grad_q[4 e + q][i]` is the gradient of corrector `i` at quadrature
    /// point `q` of element `e`.
    pub grad_q: Vec<[[f64; 2]; 2]>,
    /// Backward error of the bordered linear system.
    pub residual: f64,
    /// Lagrange multipliers of the mean constraint (zero for a compatible load).
    pub multipliers: [f64; 2],
}

impl CellSolution {
    pub fn max_gradient(&self) -> f64 {
        self.grad_q
            .iter()
            .flat_map(|g| g.iter().flatten())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn means(&self) -> [f64; 2] {
        let m = (self.n * self.n) as f64;
        [
            self.q1.iter().sum::<f64>() / m,
            self.q2.iter().sum::<f64>() / m,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowFactors {
    /// Row-major; `k1[r][c] = int theta1 (delta_rc + d_r q_c)`.
    pub k1: [[f64; 2]; 2],
    pub l1: f64,
    pub k2: [[f64; 2]; 2],
    pub l2: f64,
}

impl FlowFactors {
    pub fn constant(c: CoefficientSample) -> Self {
        Self {
            k1: [[c.theta1, 0.0], [0.0, c.theta1]],
            l1: c.theta2,
            k2: [[c.phi1, 0.0], [0.0, c.phi1]],
            l2: c.phi2,
        }
    }

    /// `|K1[0][1] - K1[1][0]|`.
    pub fn symmetry_defect(&self) -> f64 {
        (self.k1[0][1] - self.k1[1][0]).abs()
    }

    /// Eigenvalues of the symmetric part of `K1`, ascending.
    pub fn k1_sym_eigenvalues(&self) -> [f64; 2] {
        let a = self.k1[0][0];
        let d = self.k1[1][1];
        let b = 0.5 * (self.k1[0][1] + self.k1[1][0]);
        let mid = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        [mid - rad, mid + rad]
    }

    /// The factors of the problem with `z1` and `z2` exchanged.
    pub fn transposed(&self) -> Self {
        let swap = |m: [[f64; 2]; 2]| [[m[1][1], m[1][0]], [m[0][1], m[0][0]]];
        Self {
            k1: swap(self.k1),
            l1: self.l1,
            k2: swap(self.k2),
            l2: self.l2,
        }
    }
}

struct ElementSystem {
    stiffness: [[f64; 4]; 4],
    load: [[f64; 4]; 2],
}

fn node_index(n: usize, e: usize, corner: usize) -> usize {
    let (di, dj) = q1::CORNERS[corner];
    let i = (e % n + di) % n;
    let j = (e / n + dj) % n;
    j * n + i
}

fn element_system(field: &QuadratureField, e: usize, s: [f64; 2]) -> ElementSystem {
    let n = field.n;
    let step = 1.0 / n as f64;
    let area = step * step;
    let mut stiffness = [[0.0; 4]; 4];
    let mut load = [[0.0; 4]; 2];
    for (q, c) in field.samples[e].iter().enumerate() {
        let g = q1::gradients(q1::point(q), step, step);
        let w = q1::WEIGHT * area;
        for a in 0..4 {
            for b in 0..4 {
                stiffness[a][b] += w * c.theta1 * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
            for i in 0..2 {
                load[i][a] += w * (s[i] * c.theta2 - c.theta1) * g[a][i];
            }
        }
    }
    ElementSystem { stiffness, load }
}

/// Solves both corrector problems for the wall velocity `s`.
pub fn solve_correctors(
    field: &QuadratureField,
    s: [f64; 2],
    solver: LinearSolver,
) -> Result<CellSolution, CellError> {
    let n = field.n;
    if n < MIN_CELL_GRID {
        return Err(CellError::GridTooSmall(n));
    }
    for (e, qs) in field.samples.iter().enumerate() {
        for (q, c) in qs.iter().enumerate() {
            if !(c.theta1 > 0.0) {
                return Err(CellError::Ellipticity {
                    z: QuadratureField::point(n, e, q),
                    value: c.theta1,
                });
            }
        }
    }

    let dofs = n * n;
    let locals: Vec<ElementSystem> = (0..dofs)
        .into_par_iter()
        .map(|e| element_system(field, e, s))
        .collect();
    let mut triplets = Vec::with_capacity(16 * dofs);
    let mut rhs = vec![vec![0.0; dofs + 1], vec![0.0; dofs + 1]];
    for (e, local) in locals.iter().enumerate() {
        for a in 0..4 {
            let ga = node_index(n, e, a);
            for b in 0..4 {
                triplets.push((ga, node_index(n, e, b), local.stiffness[a][b]));
            }
            rhs[0][ga] += local.load[0][a];
            rhs[1][ga] += local.load[1][a];
        }
    }
    let system = BorderedSystem::new(CsrMatrix::from_triplets(dofs, triplets), vec![1.0; dofs]);
    let matrix = system.matrix();
    let mut x = system.solve(&rhs, solver)?;
    let residual = x
        .iter()
        .zip(&rhs)
        .map(|(xi, bi)| backward_error(matrix, xi, bi))
        .fold(0.0, f64::max);

    let x2 = x.pop().unwrap();
    let x1 = x.pop().unwrap();
    let multipliers = [x1[dofs], x2[dofs]];
    let q1v = x1[..dofs].to_vec();
    let q2v = x2[..dofs].to_vec();
    let step = 1.0 / n as f64;
    let grad_q = (0..dofs * 4)
        .map(|k| {
            let (e, q) = (k / 4, k % 4);
            let g = q1::gradients(q1::point(q), step, step);
            let mut out = [[0.0; 2]; 2];
            for (a, ga) in g.iter().enumerate() {
                let idx = node_index(n, e, a);
                for d in 0..2 {
                    out[0][d] += q1v[idx] * ga[d];
                    out[1][d] += q2v[idx] * ga[d];
                }
            }
            out
        })
        .collect();
    Ok(CellSolution {
        n,
        q1: q1v,
        q2: q2v,
        grad_q,
        residual,
        multipliers,
    })
}

/// `|b - A x|_inf / (|A|_inf |x|_inf + |b|_inf)`.
pub fn backward_error(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let r = sparse::norm_inf(&a.residual(x, b));
    let scale = a.norm_inf() * sparse::norm_inf(x) + sparse::norm_inf(b);
    if scale > 0.0 {
        r / scale
    } else {
        r
    }
}

/// Integrates the flow factors with the quadrature used in assembly.
pub fn flow_factors(cell: &CellSolution, field: &QuadratureField) -> FlowFactors {
    assert_eq!(cell.n, field.n, "corrector and coefficient grids differ");
    let mut k1 = [[0.0; 2]; 2];
    let mut k2 = [[0.0; 2]; 2];
    let (mut l1, mut l2) = (0.0, 0.0);
    for (e, qs) in field.samples.iter().enumerate() {
        for (q, c) in qs.iter().enumerate() {
            // [corrector][direction]
            let g = cell.grad_q[4 * e + q];
            for r in 0..2 {
                for col in 0..2 {
                    let delta = if r == col { 1.0 } else { 0.0 };
                    k1[r][col] += c.theta1 * (delta + g[col][r]);
                }
            }
            k2[0][0] += c.phi1 * (g[1][1] + 1.0);
            k2[0][1] -= c.phi1 * g[0][1];
            k2[1][0] -= c.phi1 * g[1][0];
            k2[1][1] += c.phi1 * (g[0][0] + 1.0);
            l1 += c.theta2;
            l2 += c.phi2;
        }
    }
    let w = q1::WEIGHT / (field.n * field.n) as f64;
    let scale = |m: [[f64; 2]; 2]| m.map(|row| row.map(|v| v * w));
    FlowFactors {
        k1: scale(k1),
        l1: l1 * w,
        k2: scale(k2),
        l2: l2 * w,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sample(theta1: f64, theta2: f64, phi1: f64, phi2: f64) -> CoefficientSample {
        CoefficientSample {
            theta1,
            theta2,
            phi1,
            phi2,
        }
    }

    fn cosine_field(n: usize, a: [f64; 2]) -> QuadratureField {
        let params = FluidParams::new(0.25, 1.0, 1.0, 1.0, [0.0, 0.0]);
        let h = RoughnessProfile::cosine(1.0, a, [0.0, 0.0]).unwrap();
        QuadratureField::from_profile(&h, &params, n, Phi2Variant::A2).unwrap()
    }

    #[test]
    fn constant_coefficients_give_trivial_correctors() {
        let c = sample(0.7, 0.3, -0.1, -0.2);
        let field = QuadratureField::constant(16, c);
        let cell = solve_correctors(&field, [1.0, -0.5], LinearSolver::default()).unwrap();
        assert!(cell.max_gradient() < 1e-12);
        let f = flow_factors(&cell, &field);
        let expect = FlowFactors::constant(c);
        for r in 0..2 {
            for col in 0..2 {
                assert!((f.k1[r][col] - expect.k1[r][col]).abs() < 1e-12);
                assert!((f.k2[r][col] - expect.k2[r][col]).abs() < 1e-12);
            }
        }
        assert!((f.l1 - 0.3).abs() < 1e-12 && (f.l2 + 0.2).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_grid_and_nonpositive_theta1() {
        let field = QuadratureField::constant(4, sample(1.0, 0.0, 0.0, 0.0));
        assert_eq!(
            solve_correctors(&field, [0.0, 0.0], LinearSolver::default()),
            Err(CellError::GridTooSmall(4))
        );
        let field = QuadratureField::from_fn(8, |z| sample(z[0] + 0.3, 0.0, 0.0, 0.0));
        assert!(matches!(
            solve_correctors(&field, [0.0, 0.0], LinearSolver::default()),
            Err(CellError::Ellipticity { .. })
        ));
    }

    #[test]
    fn separable_data_gives_one_dimensional_corrector() {
        let n = 24;
        let field = cosine_field(n, [0.3, 0.0]);
        let cell = solve_correctors(&field, [0.0, 0.0], LinearSolver::default()).unwrap();
        for j in 1..n {
            for i in 0..n {
                assert!((cell.q1[j * n + i] - cell.q1[i]).abs() < 1e-12);
            }
        }
        assert!(cell.q2.iter().all(|v| v.abs() < 1e-12));
        assert!(cell.q1.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn residual_mean_and_symmetry() {
        let field = cosine_field(32, [0.3, 0.2]);
        let cell = solve_correctors(&field, [0.0, 0.0], LinearSolver::default()).unwrap();
        assert!(cell.residual <= 1e-12, "{}", cell.residual);
        let [m1, m2] = cell.means();
        assert!(m1.abs() <= 1e-13 && m2.abs() <= 1e-13);
        let f = flow_factors(&cell, &field);
        assert!(f.symmetry_defect() <= 1e-10);
        let (harmonic, arithmetic) = field.theta1_bounds();
        let [lo, hi] = f.k1_sym_eigenvalues();
        assert!(harmonic <= lo + 1e-12 && hi <= arithmetic + 1e-12);
        assert!(lo < hi);
    }

    #[test]
    fn lamination_matches_one_dimensional_means() {
        // theta1 = 1 + 0.5 cos(2 pi z1): harmonic mean sqrt(0.75), arithmetic mean 1
        let n = 64;
        let field = QuadratureField::from_fn(n, |z| {
            sample(1.0 + 0.5 * (2.0 * PI * z[0]).cos(), 0.0, 1.0, 0.0)
        });
        let cell = solve_correctors(&field, [0.0, 0.0], LinearSolver::default()).unwrap();
        let f = flow_factors(&cell, &field);
        assert!((f.k1[0][0] - 0.75f64.sqrt()).abs() < 1e-3);
        assert!((f.k1[1][1] - 1.0).abs() < 1e-12);
        assert!(f.k1[0][1].abs() < 1e-12 && f.k1[1][0].abs() < 1e-12);
    }

    #[test]
    fn wall_velocity_shifts_only_matching_corrector() {
        let field = cosine_field(16, [0.3, 0.2]);
        let base = solve_correctors(&field, [0.0, 0.0], LinearSolver::default()).unwrap();
        let moved = solve_correctors(&field, [1.0, 0.0], LinearSolver::default()).unwrap();
        assert!(base.q2.iter().zip(&moved.q2).all(|(a, b)| a == b));
        assert!(base
            .q1
            .iter()
            .zip(&moved.q1)
            .any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn transposed_profile_transposes_factors() {
        let params = FluidParams::new(0.25, 1.0, 2.0, 1.0, [0.0, 0.0]);
        let h = RoughnessProfile::cosine(1.0, [0.3, 0.1], [0.1, 0.3]).unwrap();
        let n = 16;
        let solve = |p: &RoughnessProfile| {
            let field = QuadratureField::from_profile(p, &params, n, Phi2Variant::A2).unwrap();
            let cell = solve_correctors(&field, [0.0, 0.0], LinearSolver::default()).unwrap();
            flow_factors(&cell, &field)
        };
        let f = solve(&h).transposed();
        let g = solve(&h.transposed());
        for r in 0..2 {
            for c in 0..2 {
                assert!((f.k1[r][c] - g.k1[r][c]).abs() < 1e-12);
                assert!((f.k2[r][c] - g.k2[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_period_phase_shift_is_invisible() {
        let params = FluidParams::new(0.25, 1.0, 1.0, 1.0, [0.0, 0.0]);
        let n = 16;
        let solve = |phase: [f64; 2]| {
            let h = RoughnessProfile::cosine(1.0, [0.3, 0.2], phase).unwrap();
            let field = QuadratureField::from_profile(&h, &params, n, Phi2Variant::A2).unwrap();
            let cell = solve_correctors(&field, [0.0, 0.0], LinearSolver::default()).unwrap();
            flow_factors(&cell, &field)
        };
        let a = solve([0.1, 0.0]);
        let b = solve([1.1, -1.0]);
        for r in 0..2 {
            for c in 0..2 {
                assert!((a.k1[r][c] - b.k1[r][c]).abs() < 1e-12);
            }
        }
        assert!((a.l1 - b.l1).abs() < 1e-12 && (a.l2 - b.l2).abs() < 1e-12);
    }
}
