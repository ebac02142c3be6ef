//! Finite-difference solution of the reduced micropolar two-point problem.
//!
//! With `G` the effective in-plane pressure gradient at a frozen point, the
//! unknowns `u = (u1, u2)`, `w = (w1, w2)` on `0 <= z3 <= h` satisfy
//!
//! ```text
//! -u''     - 2N^2 (w^perp)'           = -G
//! -Rc w''  + 4N^2 w - 2N^2 (u^perp)'  = 0
//! u = w = 0                                   at z3 = h
//! u' = -(2/alpha) w^perp,  Rc w' = -2N^2 beta (u - s)^perp   at z3 = 0
//! ```
//!
//! with `(a1, a2)^perp = (-a2, a1)`. The system is discretized with centred
//! second-order differences, one-sided second-order differences in the wall
//! rows, and solved as one banded system of size `4 (M + 1)`. This module is
//! deliberately independent of the closed forms in [`crate::coefficients`].

use serde::Serialize;
use thiserror::Error;

use crate::banded::BandMatrix;
use crate::coefficients::{self, CoefficientError, CoefficientSample};
use crate::params::{self, FluidParams, ParamError};

pub const MIN_INTERVALS: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("h = {0} must be finite and > 0")]
    InvalidHeight(f64),
    #[error("oracle needs at least {MIN_INTERVALS} intervals, got {0}")]
    TooCoarse(usize),
    #[error("load must be finite")]
    NonFiniteLoad,
    #[error("singular two-point system (pivot column {column}); parameters are outside the well-posed regime")]
    SingularSystem { column: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BvpLoad {
    /// Effective in-plane pressure gradient, constant across the film.
    pub g: [f64; 2],
    pub s: [f64; 2],
}

impl BvpLoad {
    pub fn pressure(g: [f64; 2]) -> Self {
        Self { g, s: [0.0, 0.0] }
    }

    pub fn wall(s: [f64; 2]) -> Self {
        Self { g: [0.0, 0.0], s }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvpSolution {
    pub h: f64,
    /// `M + 1` uniform nodes on `[0, h]`.
    pub z: Vec<f64>,
    pub u: Vec<[f64; 2]>,
    pub w: Vec<[f64; 2]>,
    /// Simpson integrals of `u` and `w` over `[0, h]`.
    pub avg_u: [f64; 2],
    pub avg_w: [f64; 2],
    /// Normwise backward error `|b - Ax|_inf / (|A|_inf |x|_inf + |b|_inf)`.
    pub residual: f64,
}

impl BvpSolution {
    pub fn intervals(&self) -> usize {
        self.z.len() - 1
    }
}

const U1: usize = 0;
const U2: usize = 1;
const W1: usize = 2;
const W2: usize = 3;

/// Solves the two-point problem on `m` intervals (rounded up to even).
pub fn solve_bvp(
    h: f64,
    params: &FluidParams,
    load: BvpLoad,
    m: usize,
) -> Result<BvpSolution, OracleError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(OracleError::InvalidHeight(h));
    }
    if m < MIN_INTERVALS {
        return Err(OracleError::TooCoarse(m));
    }
    if !load.g.iter().chain(load.s.iter()).all(|v| v.is_finite()) {
        return Err(OracleError::NonFiniteLoad);
    }
    params::validate(params, h)?;
    let m = m + m % 2;
    let n = 4 * (m + 1);
    let dz = h / m as f64;
    let n2 = params.n2;
    let rc = params.rc;

    let idx = |node: usize, c: usize| 4 * node + c;
    // wall rows reach node 2, at most 8 columns right of the diagonal
    let mut a = BandMatrix::zeros(n, 7, 8);
    let mut b = vec![0.0; n];

    let d2 = 1.0 / (dz * dz);
    let d1 = 1.0 / (2.0 * dz);
    let coup = 2.0 * n2;
    for i in 1..m {
        // -u1'' + 2N^2 w2' = -G1
        let r = idx(i, U1);
        a.add(r, idx(i - 1, U1), -d2);
        a.add(r, idx(i, U1), 2.0 * d2);
        a.add(r, idx(i + 1, U1), -d2);
        a.add(r, idx(i + 1, W2), coup * d1);
        a.add(r, idx(i - 1, W2), -coup * d1);
        b[r] = -load.g[0];
        // -u2'' - 2N^2 w1' = -G2
        let r = idx(i, U2);
        a.add(r, idx(i - 1, U2), -d2);
        a.add(r, idx(i, U2), 2.0 * d2);
        a.add(r, idx(i + 1, U2), -d2);
        a.add(r, idx(i + 1, W1), -coup * d1);
        a.add(r, idx(i - 1, W1), coup * d1);
        b[r] = -load.g[1];
        // -Rc w1'' + 4N^2 w1 + 2N^2 u2' = 0
        let r = idx(i, W1);
        a.add(r, idx(i - 1, W1), -rc * d2);
        a.add(r, idx(i, W1), 2.0 * rc * d2 + 4.0 * n2);
        a.add(r, idx(i + 1, W1), -rc * d2);
        a.add(r, idx(i + 1, U2), coup * d1);
        a.add(r, idx(i - 1, U2), -coup * d1);
        // -Rc w2'' + 4N^2 w2 - 2N^2 u1' = 0
        let r = idx(i, W2);
        a.add(r, idx(i - 1, W2), -rc * d2);
        a.add(r, idx(i, W2), 2.0 * rc * d2 + 4.0 * n2);
        a.add(r, idx(i + 1, W2), -rc * d2);
        a.add(r, idx(i + 1, U1), -coup * d1);
        a.add(r, idx(i - 1, U1), coup * d1);
    }

    // wall rows: f'(0) ~ (-3 f0 + 4 f1 - f2) / (2 dz)
    let one_sided = |a: &mut BandMatrix, row: usize, c: usize| {
        a.add(row, idx(0, c), -3.0 * d1);
        a.add(row, idx(1, c), 4.0 * d1);
        a.add(row, idx(2, c), -d1);
    };
    // natural condition of the microrotation equation: Rc w' = -2N^2 beta (u - s)^perp
    let slip = 2.0 * n2 * params.beta / rc;
    // u1' = (2/alpha) w2
    one_sided(&mut a, idx(0, U1), U1);
    a.add(idx(0, U1), idx(0, W2), -2.0 / params.alpha);
    // u2' = -(2/alpha) w1
    one_sided(&mut a, idx(0, U2), U2);
    a.add(idx(0, U2), idx(0, W1), 2.0 / params.alpha);
    // w1' = 2N^2 beta / Rc (u2 - s2)
    one_sided(&mut a, idx(0, W1), W1);
    a.add(idx(0, W1), idx(0, U2), -slip);
    b[idx(0, W1)] = -slip * load.s[1];
    // w2' = -2N^2 beta / Rc (u1 - s1)
    one_sided(&mut a, idx(0, W2), W2);
    a.add(idx(0, W2), idx(0, U1), slip);
    b[idx(0, W2)] = slip * load.s[0];

    for c in 0..4 {
        a.add(idx(m, c), idx(m, c), 1.0);
    }

    let norm_a = a.norm_inf();
    let lu = a
        .clone()
        .factor()
        .map_err(|p| OracleError::SingularSystem { column: p.column })?;
    let x = lu.solve(&b);

    let ax = a.mul_vec(&x);
    let r_inf = ax
        .iter()
        .zip(&b)
        .map(|(l, r)| (l - r).abs())
        .fold(0.0, f64::max);
    let x_inf = x.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let b_inf = b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let scale = norm_a * x_inf + b_inf;
    let residual = if scale > 0.0 { r_inf / scale } else { 0.0 };

    let z: Vec<f64> = (0..=m).map(|i| i as f64 * dz).collect();
    let u: Vec<[f64; 2]> = (0..=m).map(|i| [x[idx(i, U1)], x[idx(i, U2)]]).collect();
    let w: Vec<[f64; 2]> = (0..=m).map(|i| [x[idx(i, W1)], x[idx(i, W2)]]).collect();
    let avg_u = [simpson(&u, dz, 0), simpson(&u, dz, 1)];
    let avg_w = [simpson(&w, dz, 0), simpson(&w, dz, 1)];
    Ok(BvpSolution {
        h,
        z,
        u,
        w,
        avg_u,
        avg_w,
        residual,
    })
}

fn simpson(values: &[[f64; 2]], dz: f64, c: usize) -> f64 {
    let m = values.len() - 1;
    let mut acc = values[0][c] + values[m][c];
    for (i, v) in values.iter().enumerate().take(m).skip(1) {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * v[c];
    }
    acc * dz / 3.0
}

/// Averaged coefficients from unit-load solves at a single resolution.
///
/// `G = e1` gives `theta1 = -U1`, `phi1 = W2`; `s = e1` gives
/// `theta2 = U1`, `phi2 = W2`.
pub fn unit_load_coefficients(
    h: f64,
    params: &FluidParams,
    m: usize,
) -> Result<CoefficientSample, OracleError> {
    let pressure = solve_bvp(h, params, BvpLoad::pressure([1.0, 0.0]), m)?;
    let wall = solve_bvp(h, params, BvpLoad::wall([1.0, 0.0]), m)?;
    Ok(CoefficientSample {
        theta1: -pressure.avg_u[0],
        theta2: wall.avg_u[0],
        phi1: pressure.avg_w[1],
        phi2: wall.avg_w[1],
    })
}

/// Oracle coefficients: unit-load averages on `m` and `m / 2` intervals
/// combined by Richardson extrapolation of the second-order error.
/// `m` is rounded up to a multiple of 4.
pub fn oracle_coefficients(
    h: f64,
    params: &FluidParams,
    m: usize,
) -> Result<CoefficientSample, OracleError> {
    if m < MIN_INTERVALS {
        return Err(OracleError::TooCoarse(m));
    }
    let m = m.div_ceil(4) * 4;
    let fine = unit_load_coefficients(h, params, m)?.as_array();
    let coarse = unit_load_coefficients(h, params, m / 2)?.as_array();
    let e: Vec<f64> = fine
        .iter()
        .zip(coarse)
        .map(|(f, c)| (4.0 * f - c) / 3.0)
        .collect();
    Ok(CoefficientSample {
        theta1: e[0],
        theta2: e[1],
        phi1: e[2],
        phi2: e[3],
    })
}

/// Max over nodes of `|u_oracle - u_closed| + |w_oracle - w_closed|`
/// (Euclidean norms) for the same load.
pub fn oracle_profile_check(
    h: f64,
    params: &FluidParams,
    load: BvpLoad,
    m: usize,
) -> Result<f64, CoefficientError> {
    let sol = solve_bvp(h, params, load, m)?;
    let mut worst = 0.0f64;
    for ((z, u), w) in sol.z.iter().zip(&sol.u).zip(&sol.w) {
        let closed = coefficients::profile(z.min(h), h, params, load.g, load.s)?;
        let du = (u[0] - closed.u[0]).hypot(u[1] - closed.u[1]);
        let dw = (w[0] - closed.w[0]).hypot(w[1] - closed.w[1]);
        worst = worst.max(du + dw);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(n2: f64, alpha: f64) -> FluidParams {
        FluidParams::new(n2, 1.0, alpha, 1.0, [0.0, 0.0])
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let sol = solve_bvp(1.0, &fp(0.25, 2.0), BvpLoad::pressure([0.0, 0.0]), 64).unwrap();
        assert!(sol
            .u
            .iter()
            .chain(&sol.w)
            .all(|v| v[0] == 0.0 && v[1] == 0.0));
        let d =
            oracle_profile_check(1.0, &fp(0.25, 2.0), BvpLoad::pressure([0.0, 0.0]), 64).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn newtonian_limit_parabola() {
        let sol = solve_bvp(1.0, &fp(1e-8, 1.0), BvpLoad::pressure([1.0, 0.0]), 256).unwrap();
        for (z, u) in sol.z.iter().zip(&sol.u) {
            assert!((u[0] - 0.5 * (z * z - 1.0)).abs() < 1e-6);
        }
        assert!((sol.avg_u[0] + 1.0 / 3.0).abs() < 1e-6);
        assert!(sol.w.iter().all(|w| w[0].abs() < 1e-6 && w[1].abs() < 1e-6));
    }

    #[test]
    fn top_dirichlet_and_small_residual() {
        let sol = solve_bvp(
            1.0,
            &fp(0.25, 2.0),
            BvpLoad {
                g: [1.0, -0.5],
                s: [0.3, 0.8],
            },
            128,
        )
        .unwrap();
        let last = sol.intervals();
        assert_eq!(sol.u[last], [0.0, 0.0]);
        assert_eq!(sol.w[last], [0.0, 0.0]);
        assert!(sol.residual <= 1e-12, "{}", sol.residual);
    }

    #[test]
    fn odd_interval_count_is_rounded_up() {
        let sol = solve_bvp(1.0, &fp(0.25, 1.0), BvpLoad::pressure([1.0, 0.0]), 33).unwrap();
        assert_eq!(sol.intervals(), 34);
        assert!(matches!(
            solve_bvp(1.0, &fp(0.25, 1.0), BvpLoad::pressure([1.0, 0.0]), 8),
            Err(OracleError::TooCoarse(8))
        ));
    }

    #[test]
    fn component_pairing() {
        let p = fp(0.5, 2.0);
        let a = solve_bvp(1.0, &p, BvpLoad::pressure([1.0, 0.0]), 128).unwrap();
        let b = solve_bvp(1.0, &p, BvpLoad::pressure([0.0, 1.0]), 128).unwrap();
        for i in 0..=128 {
            assert!((a.u[i][0] - b.u[i][1]).abs() < 1e-13);
            assert!((a.w[i][1] + b.w[i][0]).abs() < 1e-13);
        }
    }

    #[test]
    fn gated_by_existence() {
        let p = FluidParams::new(0.25, 1.0, 0.1, 1.0, [0.0, 0.0]);
        assert!(matches!(
            solve_bvp(1.0, &p, BvpLoad::pressure([1.0, 0.0]), 64),
            Err(OracleError::Param(ParamError::Existence { .. }))
        ));
    }

    #[test]
    fn wall_condition_scales_with_rc() {
        let p = FluidParams::new(0.25, 2.0, 2.0, 1.0, [0.0, 0.0]);
        let m = 256;
        let sol = solve_bvp(1.0, &p, BvpLoad::wall([1.0, 0.0]), m).unwrap();
        let dz = 1.0 / m as f64;
        let dw2 = (-3.0 * sol.w[0][1] + 4.0 * sol.w[1][1] - sol.w[2][1]) / (2.0 * dz);
        let expected = -2.0 * 0.25 * 1.0 * (sol.u[0][0] - 1.0) / p.rc;
        assert!((dw2 - expected).abs() < 1e-10, "{dw2} vs {expected}");
    }

    #[test]
    fn agrees_with_closed_forms_for_rc_away_from_one() {
        for p in [
            FluidParams::new(0.25, 0.5, 2.0, 1.0, [0.0, 0.0]),
            FluidParams::new(0.25, 4.0, 1.0, 0.5, [0.0, 0.0]),
        ] {
            let o = oracle_coefficients(1.0, &p, 512).unwrap().as_array();
            let c = coefficients::closed_form_theta_phi(1.0, &p, coefficients::Phi2Variant::A2)
                .unwrap()
                .as_array();
            for (a, b) in o.iter().zip(c) {
                assert!((a - b).abs() <= 1e-7 * b.abs(), "{a} vs {b}");
            }
        }
    }
}
