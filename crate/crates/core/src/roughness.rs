//! Periodic film thickness `h` on the unit cell `Z' = (-1/2, 1/2)^2`.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoughnessError {
    #[error("roughness must stay positive: h_min = {0}")]
    NonPositive(f64),
    #[error("sampled roughness needs n >= 2 and n*n values, got n = {n} with {len} values")]
    Shape { n: usize, len: usize },
    #[error("roughness parameter {0} is not finite")]
    NotFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RoughnessProfile {
    /// `h(z) = h0 + a1 cos(2 pi (z1 - phi1)) + a2 cos(2 pi (z2 - phi2))`.
    Cosine {
        h0: f64,
        amplitude: [f64; 2],
        phase: [f64; 2],
    },
    /// Nodal values on the periodic `n x n` grid `z = -1/2 + (i, j) / n`,
    /// row-major with `z2` as the slow index, interpolated bilinearly.
    Sampled {
        n: usize,
        values: Vec<f64>,
        #[serde(skip)]
        extrema: (f64, f64),
    },
}

impl RoughnessProfile {
    pub fn constant(h: f64) -> Result<Self, RoughnessError> {
        Self::cosine(h, [0.0, 0.0], [0.0, 0.0])
    }

    pub fn cosine(h0: f64, amplitude: [f64; 2], phase: [f64; 2]) -> Result<Self, RoughnessError> {
        if !h0.is_finite() {
            return Err(RoughnessError::NotFinite("h0"));
        }
        if !amplitude.iter().chain(phase.iter()).all(|v| v.is_finite()) {
            return Err(RoughnessError::NotFinite("amplitude/phase"));
        }
        let profile = Self::Cosine {
            h0,
            amplitude,
            phase,
        };
        let h_min = profile.h_min();
        if !(h_min > 0.0) {
            return Err(RoughnessError::NonPositive(h_min));
        }
        Ok(profile)
    }

    pub fn sampled(n: usize, values: Vec<f64>) -> Result<Self, RoughnessError> {
        if n < 2 || values.len() != n * n {
            return Err(RoughnessError::Shape {
                n,
                len: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(RoughnessError::NotFinite("values"));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo > 0.0) {
            return Err(RoughnessError::NonPositive(lo));
        }
        Ok(Self::Sampled {
            n,
            values,
            extrema: (lo, hi),
        })
    }

    /// Thickness at `z`; any real `z` is accepted and wrapped periodically.
    pub fn eval(&self, z: [f64; 2]) -> f64 {
        match self {
            Self::Cosine {
                h0,
                amplitude,
                phase,
            } => {
                h0 + amplitude[0] * (2.0 * PI * (z[0] - phase[0])).cos()
                    + amplitude[1] * (2.0 * PI * (z[1] - phase[1])).cos()
            }
            Self::Sampled { n, values, .. } => {
                let n = *n;
                let nf = n as f64;
                // grid coordinate measured from the node at -1/2
                let t1 = (z[0] + 0.5) * nf;
                let t2 = (z[1] + 0.5) * nf;
                let f1 = t1.floor();
                let f2 = t2.floor();
                let (x, y) = (t1 - f1, t2 - f2);
                let i0 = (f1 as i64).rem_euclid(n as i64) as usize;
                let j0 = (f2 as i64).rem_euclid(n as i64) as usize;
                let i1 = (i0 + 1) % n;
                let j1 = (j0 + 1) % n;
                let v = |i: usize, j: usize| values[j * n + i];
                (1.0 - x) * (1.0 - y) * v(i0, j0)
                    + x * (1.0 - y) * v(i1, j0)
                    + x * y * v(i1, j1)
                    + (1.0 - x) * y * v(i0, j1)
            }
        }
    }

    pub fn h_min(&self) -> f64 {
        match self {
            Self::Cosine { h0, amplitude, .. } => h0 - amplitude[0].abs() - amplitude[1].abs(),
            Self::Sampled { extrema, .. } => extrema.0,
        }
    }

    pub fn h_max(&self) -> f64 {
        match self {
            Self::Cosine { h0, amplitude, .. } => h0 + amplitude[0].abs() + amplitude[1].abs(),
            Self::Sampled { extrema, .. } => extrema.1,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.h_min() == self.h_max()
    }

    /// The profile with `z1` and `z2` exchanged.
    pub fn transposed(&self) -> Self {
        match self {
            Self::Cosine {
                h0,
                amplitude,
                phase,
            } => Self::Cosine {
                h0: *h0,
                amplitude: [amplitude[1], amplitude[0]],
                phase: [phase[1], phase[0]],
            },
            Self::Sampled { n, values, extrema } => {
                let n = *n;
                let mut t = vec![0.0; n * n];
                for j in 0..n {
                    for i in 0..n {
                        t[i * n + j] = values[j * n + i];
                    }
                }
                Self::Sampled {
                    n,
                    values: t,
                    extrema: *extrema,
                }
            }
        }
    }
}

/// Coordinate of node `i` on the periodic `n`-node grid of `Z'`.
pub fn cell_node(i: usize, n: usize) -> f64 {
    -0.5 + i as f64 / n as f64
}
