//! Analytic primitives of the LSV family
//!
//! ```text
//! T_γ(x) = x (1 + (2x)^γ)   for 0 ≤ x < 1/2
//!        = 2x − 1           for 1/2 ≤ x ≤ 1
//! ```
//!
//! together with the inverse `g_γ` of the left branch, the pullback weight
//! `g_γ'`, the parameter velocity `v_γ = ∂_γ T_γ` and its conjugate
//! `X_γ = v_γ ∘ g_γ`.
//!
//! Powers and logarithms near the neutral fixed point are evaluated through
//! `exp`/`ln` with an explicit short-circuit at `x = 0`.

use crate::error::{Error, Result};
use crate::math::{ln, pow_nonneg};

const ROOT_TOL: f64 = 1e-14;
const ROOT_MAX_ITER: usize = 200;

/// The LSV exponent `γ`.
///
/// Regular parameters live in the open interval `(0, 1)`. `γ = 0` (the
/// doubling map) is only reachable through [`MapParameter::doubling`] and is
/// meant for oracle checks.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MapParameter {
    gamma: f64,
}

impl MapParameter {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma < 1.0 {
            Ok(Self { gamma })
        } else {
            Err(Error::Domain {
                what: "LSV parameter gamma",
                value: gamma,
            })
        }
    }

    /// Boundary mode: the doubling map `x ↦ 2x mod 1`.
    pub fn doubling() -> Self {
        Self { gamma: 0.0 }
    }

    /// Accepts `γ ∈ [0, 1)`; `γ = 0` yields the doubling map.
    pub fn with_boundary(gamma: f64) -> Result<Self> {
        if gamma == 0.0 {
            Ok(Self::doubling())
        } else {
            Self::new(gamma)
        }
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn is_boundary(&self) -> bool {
        self.gamma == 0.0
    }

    /// `T_γ(x)` without domain checks. Hot path for orbit simulation.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        if x < 0.5 {
            x * (1.0 + pow_nonneg(2.0 * x, self.gamma))
        } else {
            2.0 * x - 1.0
        }
    }

    /// Left-branch formula evaluated at any `x ∈ [0, 1/2]`, including the
    /// limit value `1` at `x = 1/2`.
    #[inline]
    pub fn left_branch(&self, x: f64) -> f64 {
        x * (1.0 + pow_nonneg(2.0 * x, self.gamma))
    }

    #[inline]
    fn left_slope(&self, x: f64) -> f64 {
        1.0 + (1.0 + self.gamma) * pow_nonneg(2.0 * x, self.gamma)
    }

    #[inline]
    fn left_curvature(&self, x: f64) -> f64 {
        // 2^γ γ(1+γ) x^{γ-1} = 2γ(1+γ)(2x)^{γ-1}
        if self.gamma == 0.0 {
            return 0.0;
        }
        2.0 * self.gamma * (1.0 + self.gamma) * pow_nonneg(2.0 * x, self.gamma - 1.0)
    }

    #[inline]
    fn velocity_unchecked(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= 0.5 {
            return 0.0;
        }
        let two_x = 2.0 * x;
        x * pow_nonneg(two_x, self.gamma) * ln(two_x)
    }

    /// Inverse of the left branch; `y` must already lie in `[0, 1]`.
    pub(crate) fn left_inverse_unchecked(&self, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(0.0);
        }
        if y >= 1.0 {
            return Ok(0.5);
        }
        if self.gamma == 0.0 {
            return Ok(0.5 * y);
        }
        // T(x) ≤ 2x on the left branch, so g(y) ≥ y/2; and T(x) ≥ x gives g(y) ≤ y.
        let mut lo = 0.5 * y;
        let mut hi = if y < 0.5 { y } else { 0.5 };
        let mut x = lo;
        for _ in 0..ROOT_MAX_ITER {
            let fx = self.left_branch(x) - y;
            if fx == 0.0 {
                return Ok(x);
            }
            if fx < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let mut next = x - fx / self.left_slope(x);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 4.0 * f64::EPSILON * next || hi - lo <= 2.0 * f64::EPSILON * hi
            {
                return self.accept_root(next, y);
            }
            x = next;
        }
        self.accept_root(x, y)
    }

    fn accept_root(&self, x: f64, y: f64) -> Result<f64> {
        let residual = (self.left_branch(x) - y).abs();
        if residual <= ROOT_TOL {
            Ok(x)
        } else {
            Err(Error::NoConvergence {
                what: "left inverse root solve",
                iterations: ROOT_MAX_ITER,
                residual,
            })
        }
    }
}

/// Which branch of `T_γ` a point lies on. `x = 1/2` belongs to the right branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchPoint {
    pub x: f64,
    pub branch: Branch,
}

impl BranchPoint {
    pub fn new(x: f64) -> Result<Self> {
        check_unit(x, "point")?;
        let branch = if x < 0.5 { Branch::Left } else { Branch::Right };
        Ok(Self { x, branch })
    }
}

fn check_unit(x: f64, what: &'static str) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain { what, value: x })
    }
}

pub fn map_apply(param: MapParameter, x: f64) -> Result<f64> {
    check_unit(x, "map argument")?;
    Ok(param.apply(x))
}

/// Value of the left-branch formula at `x = 1/2`; it equals `1` for every `γ`
/// and is the left limit of `T_γ` at the branch point.
pub fn left_branch_limit(param: MapParameter) -> f64 {
    param.left_branch(0.5)
}

/// First or second derivative of `T_γ`.
pub fn map_derivative(param: MapParameter, x: f64, order: u8) -> Result<f64> {
    check_unit(x, "derivative argument")?;
    let left = x < 0.5;
    match (order, left) {
        (1, true) => Ok(param.left_slope(x)),
        (1, false) => Ok(2.0),
        (2, true) => {
            if x == 0.0 && !param.is_boundary() {
                Err(Error::Singular {
                    what: "second derivative of T at the neutral fixed point",
                })
            } else {
                Ok(param.left_curvature(x))
            }
        }
        (2, false) => Ok(0.0),
        _ => Err(Error::Domain {
            what: "derivative order",
            value: order as f64,
        }),
    }
}

/// `g_γ(y)`: inverse of `T_γ` restricted to `[0, 1/2]`.
///
/// Safeguarded Newton seeded at `y/2` with a bisection fallback on the
/// bracket `[y/2, min(y, 1/2)]`; `|T_γ(g_γ(y)) − y| ≤ 1e-14`.
pub fn left_inverse(param: MapParameter, y: f64) -> Result<f64> {
    check_unit(y, "left inverse argument")?;
    param.left_inverse_unchecked(y)
}

/// `(g_γ'(y), g_γ''(y))` by implicit differentiation:
/// `g' = 1/T'(g)`, `g'' = −T''(g)/T'(g)^3`.
pub fn inverse_branch_derivatives(param: MapParameter, y: f64) -> Result<(f64, f64)> {
    check_unit(y, "inverse derivative argument")?;
    if y == 0.0 && !param.is_boundary() {
        return Err(Error::Singular {
            what: "second derivative of g at y = 0",
        });
    }
    let x = param.left_inverse_unchecked(y)?;
    let slope = param.left_slope(x);
    let first = 1.0 / slope;
    let second = -param.left_curvature(x) / (slope * slope * slope);
    Ok((first, second))
}

/// `g_γ'(y)` alone; finite at `y = 0` where it equals 1.
pub fn inverse_branch_slope(param: MapParameter, y: f64) -> Result<f64> {
    check_unit(y, "inverse derivative argument")?;
    let x = param.left_inverse_unchecked(y)?;
    Ok(1.0 / param.left_slope(x))
}

/// `v_γ(x) = ∂_γ T_γ(x) = 2^γ x^{1+γ} log(2x)` on the left branch.
pub fn parameter_velocity(param: MapParameter, x: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&x) {
        return Err(Error::Domain {
            what: "velocity argument (left branch only)",
            value: x,
        });
    }
    Ok(param.velocity_unchecked(x))
}

/// `X_γ(y) = v_γ(g_γ(y))`.
pub fn conjugated_velocity(param: MapParameter, y: f64) -> Result<f64> {
    check_unit(y, "conjugated velocity argument")?;
    let x = param.left_inverse_unchecked(y)?;
    Ok(param.velocity_unchecked(x))
}

/// Node data shared by the operator builder and the parameter derivative:
/// `g(y)` and the flux weight `X(y) g'(y)` at one point.
#[inline]
pub(crate) fn preimage_and_flux(param: MapParameter, y: f64) -> Result<(f64, f64)> {
    let x = param.left_inverse_unchecked(y)?;
    let flux = param.velocity_unchecked(x) / param.left_slope(x);
    Ok((x, flux))
}
