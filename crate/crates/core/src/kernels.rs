//! Similarity kernels over fragment and question representations.
//!
//! Inputs are unit vectors or all-zero vectors. Cosine is the plain inner
//! product (zero when either side is zero), the polynomial kernel is
//! `(<u, v> + c)^k` and the Gaussian kernel is `exp(-|u - v|^2 / (2 sigma^2))`,
//! computed from the actual distance.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid kernel parameters: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Cosine,
    Polynomial { degree: u32, coef0: f64 },
    Gaussian { sigma: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gaussian { sigma: 1.0 }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Cosine => write!(f, "cosine"),
            KernelSpec::Polynomial { degree, coef0 } => write!(f, "polynomial(degree={degree}, coef0={coef0})"),
            KernelSpec::Gaussian { sigma } => write!(f, "gaussian(sigma={sigma})"),
        }
    }
}

/// Closed bounds of a kernel's output on unit vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelRange {
    pub lo: f64,
    pub hi: f64,
}

impl KernelRange {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), KernelError> {
        match *self {
            KernelSpec::Cosine => Ok(()),
            KernelSpec::Polynomial { degree, coef0 } => {
                if degree == 0 {
                    Err(KernelError::InvalidSpec("polynomial degree must be >= 1".into()))
                } else if !coef0.is_finite() {
                    Err(KernelError::InvalidSpec("polynomial coef0 must be finite".into()))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Gaussian { sigma } => {
                if sigma > 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(KernelError::InvalidSpec("gaussian sigma must be positive".into()))
                }
            }
        }
    }

    /// Kernel value from the inner product and squared norms of the inputs.
    pub fn from_parts(&self, dot: f64, norm_u2: f64, norm_v2: f64) -> f64 {
        match *self {
            KernelSpec::Cosine => dot,
            KernelSpec::Polynomial { degree, coef0 } => (dot + coef0).powi(degree as i32),
            KernelSpec::Gaussian { sigma } => {
                let dist2 = (norm_u2 + norm_v2 - 2.0 * dot).max(0.0);
                (-dist2 / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    pub fn range(&self) -> KernelRange {
        kernel_range(self)
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn kernel(spec: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64, KernelError> {
    if u.len() != v.len() {
        return Err(KernelError::LengthMismatch(u.len(), v.len()));
    }
    Ok(match *spec {
        KernelSpec::Gaussian { sigma } => {
            let dist2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            (-dist2 / (2.0 * sigma * sigma)).exp()
        }
        _ => spec.from_parts(dot(u, v), 0.0, 0.0),
    })
}

/// Output bounds over `<u, v>` in `[-1, 1]`.
pub fn kernel_range(spec: &KernelSpec) -> KernelRange {
    match *spec {
        KernelSpec::Cosine => KernelRange { lo: -1.0, hi: 1.0 },
        KernelSpec::Gaussian { sigma } => KernelRange {
            lo: (-2.0 / (sigma * sigma)).exp(),
            hi: 1.0,
        },
        KernelSpec::Polynomial { degree, coef0 } => {
            let k = degree as i32;
            let at_lo = (coef0 - 1.0).powi(k);
            let at_hi = (coef0 + 1.0).powi(k);
            if degree % 2 == 1 || coef0 >= 1.0 {
                KernelRange { lo: at_lo, hi: at_hi }
            } else if coef0 <= -1.0 {
                KernelRange { lo: at_hi, hi: at_lo }
            } else {
                // Even degree with the base crossing zero inside the interval.
                KernelRange {
                    lo: 0.0,
                    hi: at_lo.max(at_hi),
                }
            }
        }
    }
}
