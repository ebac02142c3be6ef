//! Macroscopic Reynolds problem on a rectangle.
//!
//! Finds the zero-mean pressure `p` on `(0, Lx) x (0, Ly)` with
//!
//! ```text
//! int K1 grad p . grad v  =  int L1 s . grad v      for all v in H^1
//! ```
//!
//! using bilinear elements. No boundary condition is imposed; the flux
//! condition on the boundary is natural. The averaged fields are
//! `U = -K1 grad p + L1 s` (divergence free in the weak sense) and
//! `W = K2 (grad p)^perp + L2 s^perp`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::FlowFactors;
use crate::q1;
use crate::sparse::{self, BorderedSystem, CsrMatrix, LinearSolver, SolverError};

pub const MIN_MACRO_GRID: usize = 8;

/// Relative size of `K1 - K1^T` above which a warning is logged.
const ASYMMETRY_WARNING: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReynoldsError {
    #[error("macro domain: {0}")]
    Domain(String),
    #[error("symmetric part of K1 is not positive definite (eigenvalues {0:?})")]
    Indefinite([f64; 2]),
    #[error("Reynolds solve failed: {0}")]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroDomain {
    #[serde(rename = "Lx")]
    pub lx: f64,
    #[serde(rename = "Ly")]
    pub ly: f64,
    pub mx: usize,
    pub my: usize,
}

impl MacroDomain {
    pub fn new(lx: f64, ly: f64, mx: usize, my: usize) -> Result<Self, ReynoldsError> {
        let d = Self { lx, ly, mx, my };
        d.check()?;
        Ok(d)
    }

    pub fn check(&self) -> Result<(), ReynoldsError> {
        if !(self.lx.is_finite() && self.lx > 0.0 && self.ly.is_finite() && self.ly > 0.0) {
            return Err(ReynoldsError::Domain(format!(
                "Lx = {}, Ly = {} must be > 0",
                self.lx, self.ly
            )));
        }
        if self.mx < MIN_MACRO_GRID || self.my < MIN_MACRO_GRID {
            return Err(ReynoldsError::Domain(format!(
                "mx = {}, my = {} must be >= {MIN_MACRO_GRID}",
                self.mx, self.my
            )));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        (self.mx + 1) * (self.my + 1)
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.lx / self.mx as f64, self.ly / self.my as f64)
    }

    /// Node `k`, row-major with `x2` as the slow index.
    pub fn node(&self, k: usize) -> [f64; 2] {
        let (hx, hy) = self.spacing();
        let i = k % (self.mx + 1);
        let j = k / (self.mx + 1);
        [i as f64 * hx, j as f64 * hy]
    }

    fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = (e % self.mx, e / self.mx);
        q1::CORNERS.map(|(di, dj)| (j + dj) * (self.mx + 1) + i + di)
    }

    /// `int phi_k` divided by the element area.
    fn mass_weight(&self, k: usize) -> f64 {
        let i = k % (self.mx + 1);
        let j = k / (self.mx + 1);
        let edge = |t: usize, m: usize| if t == 0 || t == m { 0.5 } else { 1.0 };
        edge(i, self.mx) * edge(j, self.my)
    }

    /// Transposed domain (axes exchanged).
    pub fn transposed(&self) -> Self {
        Self {
            lx: self.ly,
            ly: self.lx,
            mx: self.my,
            my: self.mx,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroSolution {
    pub domain: MacroDomain,
    pub factors: FlowFactors,
    pub s: [f64; 2],
    /// Nodal pressure with zero mean.
    pub p: Vec<f64>,
    /// Nodal averages of the quadrature-point fields.
    pub u: Vec<[f64; 2]>,
    pub w: Vec<[f64; 2]>,
    /// `|b - A x|_inf / |b|_inf` of the bordered system (absolute when `b = 0`).
    pub residual: f64,
}

impl MacroSolution {
    pub fn mean_pressure(&self) -> f64 {
        mean(&self.domain, &self.p)
    }
}

fn mean(domain: &MacroDomain, v: &[f64]) -> f64 {
    let total: f64 = v
        .iter()
        .enumerate()
        .map(|(k, x)| domain.mass_weight(k) * x)
        .sum();
    total / (domain.mx * domain.my) as f64
}

fn check_factors(factors: &FlowFactors) -> Result<(), ReynoldsError> {
    let eig = factors.k1_sym_eigenvalues();
    if !(eig[0] > 0.0) {
        return Err(ReynoldsError::Indefinite(eig));
    }
    let defect = factors.symmetry_defect();
    if defect > ASYMMETRY_WARNING * eig[1] {
        log::warn!(
            "K1 is not symmetric (|K1_12 - K1_21| = {defect:e}); its symmetric part is positive definite, proceeding"
        );
    }
    Ok(())
}

/// Gradient of the bilinear interpolant of `p` at each quadrature point of
/// element `e`.
fn element_gradients(domain: &MacroDomain, p: &[f64], e: usize) -> [[f64; 2]; 4] {
    let (hx, hy) = domain.spacing();
    let nodes = domain.element_nodes(e);
    let mut out = [[0.0; 2]; 4];
    for (q, g) in out.iter_mut().enumerate() {
        let grads = q1::gradients(q1::point(q), hx, hy);
        for a in 0..4 {
            g[0] += p[nodes[a]] * grads[a][0];
            g[1] += p[nodes[a]] * grads[a][1];
        }
    }
    out
}

fn velocity(f: &FlowFactors, s: [f64; 2], g: [f64; 2]) -> [f64; 2] {
    [
        -(f.k1[0][0] * g[0] + f.k1[0][1] * g[1]) + f.l1 * s[0],
        -(f.k1[1][0] * g[0] + f.k1[1][1] * g[1]) + f.l1 * s[1],
    ]
}

fn microrotation(f: &FlowFactors, s: [f64; 2], g: [f64; 2]) -> [f64; 2] {
    let gp = [-g[1], g[0]];
    [
        f.k2[0][0] * gp[0] + f.k2[0][1] * gp[1] - f.l2 * s[1],
        f.k2[1][0] * gp[0] + f.k2[1][1] * gp[1] + f.l2 * s[0],
    ]
}

/// Weak load `int L1 s . grad phi_k` for every node.
fn load_vector(domain: &MacroDomain, factors: &FlowFactors, s: [f64; 2]) -> Vec<f64> {
    let (hx, hy) = domain.spacing();
    let mut b = vec![0.0; domain.node_count()];
    for e in 0..domain.mx * domain.my {
        let nodes = domain.element_nodes(e);
        for q in 0..4 {
            let grads = q1::gradients(q1::point(q), hx, hy);
            for a in 0..4 {
                b[nodes[a]] +=
                    q1::WEIGHT * hx * hy * factors.l1 * (s[0] * grads[a][0] + s[1] * grads[a][1]);
            }
        }
    }
    b
}

/// Solves for the pressure and evaluates the averaged fields.
pub fn solve_pressure(
    factors: &FlowFactors,
    domain: &MacroDomain,
    s: [f64; 2],
    solver: LinearSolver,
) -> Result<MacroSolution, ReynoldsError> {
    domain.check()?;
    check_factors(factors)?;
    let (hx, hy) = domain.spacing();
    let dofs = domain.node_count();
    let elements = domain.mx * domain.my;

    // every element carries the same stiffness since K1 is constant
    let mut local = [[0.0; 4]; 4];
    for q in 0..4 {
        let g = q1::gradients(q1::point(q), hx, hy);
        for a in 0..4 {
            for b in 0..4 {
                let kg = [
                    factors.k1[0][0] * g[b][0] + factors.k1[0][1] * g[b][1],
                    factors.k1[1][0] * g[b][0] + factors.k1[1][1] * g[b][1],
                ];
                local[a][b] += q1::WEIGHT * hx * hy * (kg[0] * g[a][0] + kg[1] * g[a][1]);
            }
        }
    }
    let mut triplets = Vec::with_capacity(16 * elements);
    for e in 0..elements {
        let nodes = domain.element_nodes(e);
        for a in 0..4 {
            for b in 0..4 {
                triplets.push((nodes[a], nodes[b], local[a][b]));
            }
        }
    }
    // the constraint row carries int phi_k so it scales like the equations
    let border = (0..dofs).map(|k| hx * hy * domain.mass_weight(k)).collect();
    let system = BorderedSystem::new(CsrMatrix::from_triplets(dofs, triplets), border);
    let matrix = system.matrix();
    let mut rhs = load_vector(domain, factors, s);
    rhs.push(0.0);
    let x = system.solve(std::slice::from_ref(&rhs), solver)?.remove(0);
    let residual = sparse::relative_residual(matrix, &x, &rhs, sparse::norm_inf);
    let p = x[..dofs].to_vec();
    let (u, w) = nodal_fields(domain, factors, s, &p);
    Ok(MacroSolution {
        domain: *domain,
        factors: *factors,
        s,
        p,
        u,
        w,
        residual,
    })
}

/// Averages the quadrature-point values of `U` and `W` of the adjacent
/// elements onto each node.
fn nodal_fields(
    domain: &MacroDomain,
    factors: &FlowFactors,
    s: [f64; 2],
    p: &[f64],
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let elements = domain.mx * domain.my;
    let per_element: Vec<([f64; 2], [f64; 2])> = (0..elements)
        .into_par_iter()
        .map(|e| {
            let mut u = [0.0; 2];
            let mut w = [0.0; 2];
            for g in element_gradients(domain, p, e) {
                let (uq, wq) = (velocity(factors, s, g), microrotation(factors, s, g));
                for d in 0..2 {
                    u[d] += 0.25 * uq[d];
                    w[d] += 0.25 * wq[d];
                }
            }
            (u, w)
        })
        .collect();
    let dofs = domain.node_count();
    let mut u = vec![[0.0; 2]; dofs];
    let mut w = vec![[0.0; 2]; dofs];
    let mut count = vec![0u32; dofs];
    for (e, (ue, we)) in per_element.iter().enumerate() {
        for k in domain.element_nodes(e) {
            for d in 0..2 {
                u[k][d] += ue[d];
                w[k][d] += we[d];
            }
            count[k] += 1;
        }
    }
    for k in 0..dofs {
        let c = f64::from(count[k]);
        for d in 0..2 {
            u[k][d] /= c;
            w[k][d] /= c;
        }
    }
    (u, w)
}

/// `max_k |int U . grad phi_k| / max_k |int L1 s . grad phi_k|`, with `U`
/// taken at the quadrature points (absolute when the load vanishes).
pub fn mass_residual(sol: &MacroSolution) -> f64 {
    let domain = &sol.domain;
    let (hx, hy) = domain.spacing();
    let mut flux = vec![0.0; domain.node_count()];
    for e in 0..domain.mx * domain.my {
        let nodes = domain.element_nodes(e);
        for (q, g) in element_gradients(domain, &sol.p, e).into_iter().enumerate() {
            let u = velocity(&sol.factors, sol.s, g);
            let grads = q1::gradients(q1::point(q), hx, hy);
            for a in 0..4 {
                flux[nodes[a]] += q1::WEIGHT * hx * hy * (u[0] * grads[a][0] + u[1] * grads[a][1]);
            }
        }
    }
    let load = sparse::norm_inf(&load_vector(domain, &sol.factors, sol.s));
    let worst = sparse::norm_inf(&flux);
    if load > 0.0 {
        worst / load
    } else {
        worst
    }
}

/// Subtracts the mean so the pressure lies in the zero-mean gauge.
pub fn normalize_gauge(domain: &MacroDomain, p: &mut [f64]) {
    let m = mean(domain, p);
    for v in p.iter_mut() {
        *v -= m;
    }
}

/// Recomputes `U` and `W` from a given nodal pressure.
pub fn averaged_fields(
    domain: &MacroDomain,
    factors: &FlowFactors,
    s: [f64; 2],
    p: &[f64],
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    nodal_fields(domain, factors, s, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientSample;

    fn factors() -> FlowFactors {
        FlowFactors::constant(CoefficientSample {
            theta1: 0.6,
            theta2: 0.25,
            phi1: -0.05,
            phi2: -0.1,
        })
    }

    fn aniso() -> FlowFactors {
        FlowFactors {
            k1: [[0.5, 0.02], [0.01, 0.7]],
            l1: 0.3,
            k2: [[-0.04, 0.003], [0.001, -0.06]],
            l2: -0.1,
        }
    }

    #[test]
    fn constant_factors_give_linear_pressure() {
        let d = MacroDomain::new(2.0, 1.0, 16, 20).unwrap();
        let f = factors();
        let sol = solve_pressure(&f, &d, [1.0, 0.0], LinearSolver::default()).unwrap();
        for (k, p) in sol.p.iter().enumerate() {
            let x = d.node(k);
            assert!((p - 0.25 / 0.6 * (x[0] - 1.0)).abs() < 1e-12);
        }
        for u in &sol.u {
            assert!(u[0].abs() < 1e-12 && u[1].abs() < 1e-12);
        }
        assert!(sol.residual <= 1e-12);
        assert!(mass_residual(&sol) <= 1e-12);
        assert!(sol.mean_pressure().abs() < 1e-14);
    }

    #[test]
    fn zero_load_gives_zero_fields() {
        let d = MacroDomain::new(1.0, 1.0, 8, 8).unwrap();
        let sol = solve_pressure(&aniso(), &d, [0.0, 0.0], LinearSolver::default()).unwrap();
        assert!(sol.p.iter().all(|v| *v == 0.0));
        assert!(sol.u.iter().chain(&sol.w).flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_indefinite_and_bad_domain() {
        let mut f = factors();
        f.k1 = [[1.0, 3.0], [3.0, 1.0]];
        let d = MacroDomain::new(1.0, 1.0, 8, 8).unwrap();
        assert!(matches!(
            solve_pressure(&f, &d, [1.0, 0.0], LinearSolver::default()),
            Err(ReynoldsError::Indefinite(_))
        ));
        assert!(MacroDomain::new(1.0, 1.0, 4, 8).is_err());
        assert!(MacroDomain::new(0.0, 1.0, 8, 8).is_err());
    }

    #[test]
    fn truncated_solver_shows_in_mass_residual() {
        // K1 with a small off-diagonal part makes the discrete solution non-trivial
        let d = MacroDomain::new(1.0, 1.0, 24, 24).unwrap();
        let solver = LinearSolver::Gmres {
            tol: 1e-4,
            restart: 400,
            max_iter: 10_000,
        };
        let sol = solve_pressure(&aniso(), &d, [1.0, 0.5], solver).unwrap();
        let m = mass_residual(&sol);
        assert!(
            sol.residual > 1e-7 && sol.residual < 1e-3,
            "{}",
            sol.residual
        );
        assert!(
            m / sol.residual < 10.0 && sol.residual / m < 10.0,
            "{m} vs {}",
            sol.residual
        );
    }

    #[test]
    fn gauge_shift_changes_nothing_observable() {
        let d = MacroDomain::new(1.5, 1.0, 12, 10).unwrap();
        let f = aniso();
        let sol = solve_pressure(&f, &d, [0.4, -1.0], LinearSolver::default()).unwrap();
        let mut shifted: Vec<f64> = sol.p.iter().map(|v| v + 3.75).collect();
        let (u, w) = averaged_fields(&d, &f, sol.s, &shifted);
        for k in 0..u.len() {
            for c in 0..2 {
                assert!((u[k][c] - sol.u[k][c]).abs() < 1e-12);
                assert!((w[k][c] - sol.w[k][c]).abs() < 1e-12);
            }
        }
        normalize_gauge(&d, &mut shifted);
        for (a, b) in shifted.iter().zip(&sol.p) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn axis_swap_transposes_pressure() {
        let d = MacroDomain::new(1.0, 1.0, 12, 12).unwrap();
        let f = aniso();
        let a = solve_pressure(&f, &d, [1.0, 0.3], LinearSolver::default()).unwrap();
        let b = solve_pressure(
            &f.transposed(),
            &d.transposed(),
            [0.3, 1.0],
            LinearSolver::default(),
        )
        .unwrap();
        let n = 13;
        for j in 0..n {
            for i in 0..n {
                assert!((a.p[j * n + i] - b.p[i * n + j]).abs() < 1e-10);
            }
        }
    }
}
