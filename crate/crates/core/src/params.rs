//! Dimensionless model parameters and the existence gate.
//!
//! All inputs carry the coupling parameter squared (`n2`), never `N` itself.
//! Every downstream computation starts from a [`DerivedParams`] obtained via
//! [`validate`], which refuses parameter sets outside the well-posed regime
//!
//! ```text
//! gamma^2 = |1/alpha - N^2 - N^2 beta|^2  <  Rc / h_max^2 * (1 - N^2)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-width of the band around `alpha = 1` routed to the dedicated
/// `alpha = 1` formulas.
pub const ALPHA_BRANCH_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidParams {
    /// Coupling parameter squared, `N^2 = nu_r / (nu + nu_r)`.
    pub n2: f64,
    /// Scaled microrotation viscosity.
    pub rc: f64,
    /// Boundary-viscosity coefficient linking microrotation and vorticity at the flat wall.
    pub alpha: f64,
    /// Slip control coefficient at the flat wall.
    pub beta: f64,
    /// Velocity of the flat wall.
    pub s: [f64; 2],
}

impl FluidParams {
    pub fn new(n2: f64, rc: f64, alpha: f64, beta: f64, s: [f64; 2]) -> Self {
        Self {
            n2,
            rc,
            alpha,
            beta,
            s,
        }
    }

    /// Same parameters with a different wall velocity.
    pub fn with_s(self, s: [f64; 2]) -> Self {
        Self { s, ..self }
    }

    /// Same parameters with a different `alpha`.
    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }

    /// `N`, the positive square root of `n2`.
    pub fn n(&self) -> f64 {
        self.n2.sqrt()
    }

    /// `|1/alpha - N^2 - N^2 beta|`.
    pub fn gamma(&self) -> f64 {
        (1.0 / self.alpha - self.n2 - self.n2 * self.beta).abs()
    }

    /// True when the coefficient formulas for `alpha = 1` apply.
    pub fn is_unit_alpha(&self) -> bool {
        (self.alpha - 1.0).abs() <= ALPHA_BRANCH_THRESHOLD
    }

    /// Checks the open/closed range constraints on every field.
    pub fn check_ranges(&self) -> Result<(), ParamError> {
        let range = |name: &'static str, value: f64, constraint: &'static str| ParamError::Range {
            name,
            value,
            constraint,
        };
        if !(self.n2.is_finite() && self.n2 > 0.0 && self.n2 < 1.0) {
            return Err(range("N2", self.n2, "must lie in (0,1)"));
        }
        if !(self.rc.is_finite() && self.rc > 0.0) {
            return Err(range("Rc", self.rc, "must be > 0"));
        }
        // alpha = 0 (Dirichlet microrotation) decouples stress and microrotation
        if !(self.alpha.is_finite() && self.alpha > 0.0 && self.alpha <= 1.0 / self.n2) {
            return Err(range("alpha", self.alpha, "must lie in (0, 1/N2]"));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(range("beta", self.beta, "must be > 0"));
        }
        if !(self.s[0].is_finite() && self.s[1].is_finite()) {
            return Err(range("s", f64::NAN, "must be finite"));
        }
        Ok(())
    }
}

/// Quantities derived from validated [`FluidParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedParams {
    /// Profile wave number `k`.
    pub k: f64,
    /// Boundary constant `gamma_alpha`; `None` on the `alpha = 1` branch.
    pub gamma_alpha: Option<f64>,
    pub gamma2: f64,
    /// Upper bound `Rc / h_max^2 * (1 - N^2)` of the existence condition.
    pub bound: f64,
    /// `bound - gamma2`, strictly positive for admitted parameters.
    pub existence_margin: f64,
    pub h_max: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{name} = {value} {constraint}")]
    Range {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("h_max = {0} must be finite and > 0")]
    HMax(f64),
    #[error(
        "existence condition violated: gamma^2 = {gamma2:.6e} is not below the bound \
         Rc/h_max^2*(1-N2) = {bound:.6e} (deficit {deficit:.6e}); {suggestion}"
    )]
    Existence {
        gamma2: f64,
        bound: f64,
        deficit: f64,
        suggestion: String,
    },
    #[error("alpha = {alpha} is within {threshold:e} of 1; use the alpha = 1 formulas")]
    Branch { alpha: f64, threshold: f64 },
}

/// Profile wave number `k = 2 N sqrt((1 - N^2) / Rc)`.
pub fn wave_number(params: &FluidParams) -> f64 {
    2.0 * params.n() * ((1.0 - params.n2) / params.rc).sqrt()
}

/// `gamma_alpha = 2 (1 - alpha N^2) / (alpha - 1)`, undefined near `alpha = 1`.
pub fn gamma_alpha(params: &FluidParams) -> Result<f64, ParamError> {
    if params.is_unit_alpha() {
        return Err(ParamError::Branch {
            alpha: params.alpha,
            threshold: ALPHA_BRANCH_THRESHOLD,
        });
    }
    Ok(2.0 * (1.0 - params.alpha * params.n2) / (params.alpha - 1.0))
}

/// Range checks plus the existence condition for a film whose maximal
/// rescaled thickness is `h_max`.
pub fn validate(params: &FluidParams, h_max: f64) -> Result<DerivedParams, ParamError> {
    params.check_ranges()?;
    if !(h_max.is_finite() && h_max > 0.0) {
        return Err(ParamError::HMax(h_max));
    }
    let gamma = params.gamma();
    let gamma2 = gamma * gamma;
    let bound = params.rc / (h_max * h_max) * (1.0 - params.n2);
    let margin = bound - gamma2;
    if !(margin > 0.0) {
        return Err(ParamError::Existence {
            gamma2,
            bound,
            deficit: -margin,
            suggestion: existence_suggestion(params, h_max, gamma2, bound),
        });
    }
    Ok(DerivedParams {
        k: wave_number(params),
        gamma_alpha: gamma_alpha(params).ok(),
        gamma2,
        bound,
        existence_margin: margin,
        h_max,
    })
}

fn existence_suggestion(params: &FluidParams, h_max: f64, gamma2: f64, bound: f64) -> String {
    let mut parts = Vec::new();
    if gamma2 > 0.0 {
        let rc_min = gamma2 * h_max * h_max / (1.0 - params.n2);
        parts.push(format!("increase Rc above {rc_min:.6e}"));
        let h_lim = (params.rc * (1.0 - params.n2) / gamma2).sqrt();
        parts.push(format!("reduce h_max below {h_lim:.6e}"));
    }
    // |1/alpha - c| < sqrt(bound) with c = N2 (1 + beta)
    let c = params.n2 * (1.0 + params.beta);
    let r = bound.sqrt();
    let inv_hi = c + r;
    let inv_lo = (c - r).max(params.n2);
    if inv_hi > inv_lo {
        parts.push(format!(
            "or choose alpha in ({:.6e}, {:.6e})",
            1.0 / inv_hi,
            1.0 / inv_lo
        ));
    }
    format!("suggestions: {}", parts.join(", "))
}
