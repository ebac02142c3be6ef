//! Closed-form solution of the reduced micropolar ODE system across the film.
//!
//! For a frozen in-plane point the velocity and microrotation profiles are
//! affine in the effective pressure gradient `G` and the wall velocity `s`:
//!
//! ```text
//! u(z3) = fu_G(z3) G + fu_s(z3) s
//! w(z3) = fw_G(z3) G^perp + fw_s(z3) s^perp,      (a1, a2)^perp = (-a2, a1)
//! ```
//!
//! Integrating over `0 <= z3 <= h` gives the averaged coefficients
//! `U = -theta1 G + theta2 s` and `W = phi1 G^perp + phi2 s^perp`.
//!
//! Two sets of constants exist, one for `alpha != 1` and one for `alpha = 1`
//! (see [`crate::params::ALPHA_BRANCH_THRESHOLD`]). In the `alpha != 1` set
//! the constant `A2` is `+2 N^2 k L sinh(kh)` and the averaged microrotation
//! carries `sinh(kh)/k + gamma_alpha h / 2`; these are the signs that satisfy
//! the wall conditions (checked against [`crate::oracle`] in the tests).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{self, OracleError};
use crate::params::{self, FluidParams, ParamError};
use crate::roughness::{cell_node, RoughnessProfile};

/// Closed forms are abandoned above this value of `k h` (hyperbolic growth).
pub const KH_OVERFLOW_LIMIT: f64 = 30.0;
/// Below this coupling the closed forms lose digits to cancellation.
pub const LOW_COUPLING_N2: f64 = 1e-4;
/// Smallest admissible magnitude of the denominator of `L`.
pub const DENOMINATOR_FLOOR: f64 = 1e-14;
/// Oracle resolution used when the closed forms are bypassed.
pub const FALLBACK_ORACLE_M: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoefficientError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("h = {0} must be finite and > 0")]
    InvalidHeight(f64),
    #[error("denominator of L vanishes (|D| = {value:e}) at h = {h}, k = {k}")]
    DegenerateDenominator { h: f64, k: f64, value: f64 },
    #[error("theta1 = {value:e} is not positive at h = {h}; the cell problem is not elliptic")]
    NonPositiveTheta1 { h: f64, value: f64 },
    #[error("z3 = {z3} outside [0, {h}]")]
    Domain { z3: f64, h: f64 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("at z' = ({}, {}): {source}", z[0], z[1])]
    At {
        z: [f64; 2],
        source: Box<CoefficientError>,
    },
}

/// Which of the two constants multiplies the leading bracket of `phi2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Phi2Variant {
    A1,
    /// The variant reproducing the ODE solution.
    #[default]
    A2,
}

impl std::fmt::Display for Phi2Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::A1 => f.write_str("A1"),
            Self::A2 => f.write_str("A2"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// `alpha != 1`, constants `L, A1, A2, B1, B2`.
    General,
    /// `alpha = 1`, constants `L', A1', A2', B1', B2'`.
    UnitAlpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefConstants {
    pub branch: Branch,
    pub l: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CoefficientSample {
    pub theta1: f64,
    pub theta2: f64,
    pub phi1: f64,
    pub phi2: f64,
}

impl CoefficientSample {
    pub fn as_array(&self) -> [f64; 4] {
        [self.theta1, self.theta2, self.phi1, self.phi2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileSample {
    pub u: [f64; 2],
    pub w: [f64; 2],
}

/// How [`theta_phi`] evaluates a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CoefficientRoute {
    ClosedForm,
    /// `N^2` below [`LOW_COUPLING_N2`].
    OracleLowCoupling,
    /// `k h` above [`KH_OVERFLOW_LIMIT`].
    OracleOverflow,
}

pub fn route(h: f64, params: &FluidParams) -> CoefficientRoute {
    if params.n2 < LOW_COUPLING_N2 {
        CoefficientRoute::OracleLowCoupling
    } else if params::wave_number(params) * h > KH_OVERFLOW_LIMIT {
        CoefficientRoute::OracleOverflow
    } else {
        CoefficientRoute::ClosedForm
    }
}

/// Scalars shared by the constants and the averages at one thickness.
struct Hyperbolic {
    n2: f64,
    k: f64,
    h: f64,
    ch: f64,
    sh: f64,
    /// `Rc / beta`
    r: f64,
}

impl Hyperbolic {
    fn new(h: f64, params: &FluidParams) -> Result<Self, CoefficientError> {
        if !(h.is_finite() && h > 0.0) {
            return Err(CoefficientError::InvalidHeight(h));
        }
        params.check_ranges()?;
        let k = params::wave_number(params);
        Ok(Self {
            n2: params.n2,
            k,
            h,
            ch: (k * h).cosh(),
            sh: (k * h).sinh(),
            r: params.rc / params.beta,
        })
    }

    fn one_minus_n2(&self) -> f64 {
        1.0 - self.n2
    }

    /// `4 N^4 (1 - cosh kh) + (Rc / beta) k^2`
    fn base(&self) -> f64 {
        4.0 * self.n2 * self.n2 * (1.0 - self.ch) + self.r * self.k * self.k
    }
}

/// The five branch-appropriate constants at thickness `h`.
pub fn coef_constants(h: f64, params: &FluidParams) -> Result<CoefConstants, CoefficientError> {
    let hy = Hyperbolic::new(h, params)?;
    let Hyperbolic {
        n2,
        k,
        h,
        ch,
        sh,
        r,
    } = hy;
    let omn = hy.one_minus_n2();
    let base = hy.base();
    if params.is_unit_alpha() {
        let denom = base + 4.0 * n2 * k * h * sh;
        if denom.abs() < DENOMINATOR_FLOOR {
            return Err(CoefficientError::DegenerateDenominator { h, k, value: denom });
        }
        let l = -1.0 / denom;
        Ok(CoefConstants {
            branch: Branch::UnitAlpha,
            l,
            a1: l * (h * base - k * sh * (r - 2.0 * n2 * h * h)),
            a2: 4.0 * n2 * k * omn * l * sh,
            b1: k * l / (2.0 * omn) * (2.0 * n2 * h * h + r),
            b2: -2.0 * n2 * k * l,
        })
    } else {
        let g = params::gamma_alpha(params)?;
        let g2 = 0.5 * g;
        let denom = (g2 + ch) * base + 2.0 * n2 * sh * (g * k * h + 2.0 * n2 * sh);
        if denom.abs() < DENOMINATOR_FLOOR {
            return Err(CoefficientError::DegenerateDenominator { h, k, value: denom });
        }
        let l = -1.0 / denom;
        Ok(CoefConstants {
            branch: Branch::General,
            l,
            a1: l / (2.0 * omn) * (h * base - k * sh * (r - 2.0 * n2 * h * h)),
            a2: 2.0 * n2 * k * l * sh,
            b1: l / (2.0 * omn)
                * (2.0 * n2 * h * (2.0 * n2 * sh + g * k * h)
                    + k * (r - 2.0 * n2 * h * h) * (ch + g2)),
            b2: -2.0 * n2 * k * l * (g2 + ch),
        })
    }
}

/// Averaged coefficients from the closed forms, whatever the regime.
///
/// Prefer [`theta_phi`], which reroutes regimes where the closed forms are
/// numerically unreliable.
pub fn closed_form_theta_phi(
    h: f64,
    params: &FluidParams,
    variant: Phi2Variant,
) -> Result<CoefficientSample, CoefficientError> {
    let c = coef_constants(h, params)?;
    let hy = Hyperbolic::new(h, params)?;
    let Hyperbolic {
        n2, k, h, ch, sh, ..
    } = hy;
    let omn = hy.one_minus_n2();
    // integral of (cosh(kz) - cosh(kh)) and of (sinh(kz) - sinh(kh)) scaled by 2N^2/k
    let q = 2.0 * n2 / k * (sh / k - h * ch);
    let sample = match c.branch {
        Branch::General => {
            let g2 = 0.5 * params::gamma_alpha(params)?;
            let p = 2.0 * n2 / k * ((ch - 1.0) / k - h * sh) - g2 * h * h;
            let lead = sh / k + g2 * h;
            let phi2_const = match variant {
                Phi2Variant::A1 => c.a1,
                Phi2Variant::A2 => c.a2,
            };
            CoefficientSample {
                theta1: h * h * h / (3.0 * omn) - p * c.a1 - q * c.b1,
                theta2: p * c.a2 + q * c.b2,
                phi1: h * h / (4.0 * omn) + lead * c.a1 + (ch - 1.0) / k * c.b1,
                phi2: lead * phi2_const + (ch - 1.0) / k * c.b2,
            }
        }
        Branch::UnitAlpha => CoefficientSample {
            theta1: h * h * h / (3.0 * omn) + h * h / (2.0 * omn) * c.a1 - q * c.b1,
            theta2: -h * h / (2.0 * omn) * c.a2 + q * c.b2,
            phi1: h * h / (4.0 * omn) + h / (2.0 * omn) * c.a1 + (ch - 1.0) / k * c.b1,
            phi2: h / (2.0 * omn) * c.a2 + (ch - 1.0) / k * c.b2,
        },
    };
    check_positive(h, sample)
}

fn check_positive(h: f64, s: CoefficientSample) -> Result<CoefficientSample, CoefficientError> {
    if !(s.theta1 > 0.0) {
        return Err(CoefficientError::NonPositiveTheta1 { h, value: s.theta1 });
    }
    Ok(s)
}

/// Averaged coefficients at thickness `h`.
///
/// Uses the closed forms unless `N^2 < 1e-4` or `k h > 30`, where the ODE
/// oracle is evaluated instead.
pub fn theta_phi(
    h: f64,
    params: &FluidParams,
    variant: Phi2Variant,
) -> Result<CoefficientSample, CoefficientError> {
    match route(h, params) {
        CoefficientRoute::ClosedForm => closed_form_theta_phi(h, params, variant),
        _ => {
            let s = oracle::oracle_coefficients(h, params, FALLBACK_ORACLE_M)?;
            check_positive(h, s)
        }
    }
}

/// Velocity and microrotation at height `z3` for effective pressure
/// gradient `g` and wall velocity `s`.
pub fn profile(
    z3: f64,
    h: f64,
    params: &FluidParams,
    g: [f64; 2],
    s: [f64; 2],
) -> Result<ProfileSample, CoefficientError> {
    if !(0.0..=h).contains(&z3) {
        return Err(CoefficientError::Domain { z3, h });
    }
    let c = coef_constants(h, params)?;
    let hy = Hyperbolic::new(h, params)?;
    let Hyperbolic { n2, k, ch, sh, .. } = hy;
    let omn = hy.one_minus_n2();
    let dc = (k * z3).cosh() - ch;
    let ds = (k * z3).sinh() - sh;
    let dz = z3 - h;
    // every profile is written as f(z3) - f(h) so it vanishes exactly on top
    let (fu_g, fw_g, fu_s, fw_s) = match c.branch {
        Branch::General => {
            let g_a = params::gamma_alpha(params)?;
            (
                2.0 * n2 / k * (ds * c.a1 + dc * c.b1)
                    + g_a * dz * c.a1
                    + (z3 * z3 - h * h) / (2.0 * omn),
                dc * c.a1 + ds * c.b1 + dz / (2.0 * omn),
                2.0 * n2 / k * (ds * c.a2 + dc * c.b2) + g_a * dz * c.a2,
                dc * c.a2 + ds * c.b2,
            )
        }
        Branch::UnitAlpha => (
            2.0 * n2 / k * dc * c.b1 + (z3 * z3 - h * h) / (2.0 * omn) + c.a1 / omn * dz,
            ds * c.b1 + dz / (2.0 * omn),
            2.0 * n2 / k * dc * c.b2 + c.a2 / omn * dz,
            ds * c.b2,
        ),
    };
    let perp = |v: [f64; 2]| [-v[1], v[0]];
    let (gp, sp) = (perp(g), perp(s));
    Ok(ProfileSample {
        u: [fu_g * g[0] + fu_s * s[0], fu_g * g[1] + fu_s * s[1]],
        w: [fw_g * gp[0] + fw_s * sp[0], fw_g * gp[1] + fw_s * sp[1]],
    })
}

/// Node-centred samples of the averaged coefficients over `Z'`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientGrid {
    pub n: usize,
    /// Row-major with `z2` as the slow index.
    pub nodes: Vec<[f64; 2]>,
    pub h: Vec<f64>,
    pub samples: Vec<CoefficientSample>,
}

impl CoefficientGrid {
    pub fn get(&self, i: usize, j: usize) -> &CoefficientSample {
        &self.samples[j * self.n + i]
    }
}

/// Evaluates [`theta_phi`] at every node `(-1/2 + i/n, -1/2 + j/n)`.
pub fn sample_field(
    profile: &RoughnessProfile,
    params: &FluidParams,
    n: usize,
    variant: Phi2Variant,
) -> Result<CoefficientGrid, CoefficientError> {
    assert!(n >= 4, "coefficient grid needs n >= 4");
    warn_on_rerouting(profile, params);
    let nodes: Vec<[f64; 2]> = (0..n * n)
        .map(|idx| [cell_node(idx % n, n), cell_node(idx / n, n)])
        .collect();
    let h: Vec<f64> = nodes.iter().map(|&z| profile.eval(z)).collect();
    let samples = evaluate_points(&nodes, &h, params, variant)?;
    Ok(CoefficientGrid {
        n,
        nodes,
        h,
        samples,
    })
}

/// Evaluates [`theta_phi`] at arbitrary points, in parallel, keeping the
/// input order.
pub(crate) fn evaluate_points(
    points: &[[f64; 2]],
    h: &[f64],
    params: &FluidParams,
    variant: Phi2Variant,
) -> Result<Vec<CoefficientSample>, CoefficientError> {
    let results: Vec<Result<CoefficientSample, CoefficientError>> = points
        .par_iter()
        .zip(h.par_iter())
        .map(|(&z, &hv)| {
            theta_phi(hv, params, variant).map_err(|e| CoefficientError::At {
                z,
                source: Box::new(e),
            })
        })
        .collect();
    // first failure in index order, independent of scheduling
    results.into_iter().collect()
}

pub(crate) fn warn_on_rerouting(profile: &RoughnessProfile, params: &FluidParams) {
    match route(profile.h_max(), params) {
        CoefficientRoute::ClosedForm => {}
        CoefficientRoute::OracleLowCoupling => log::warn!(
            "N2 = {} below {LOW_COUPLING_N2:e}: coefficients evaluated by the ODE oracle",
            params.n2
        ),
        CoefficientRoute::OracleOverflow => log::warn!(
            "k*h_max = {} above {KH_OVERFLOW_LIMIT}: coefficients evaluated by the ODE oracle where k*h exceeds the limit",
            params::wave_number(params) * profile.h_max()
        ),
    }
}
