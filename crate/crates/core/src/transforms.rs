//! Attribute transformation functions for travel time differences.
//!
//! Every transform maps a time difference `dt` (minutes) to a perceived time
//! difference. All kinds are odd functions of `dt`; they are evaluated on
//! `|dt|` and the sign is re-applied, so `f(-dt) == -f(dt)` holds bit for bit.
//!
//! | kind        | f(dt) for dt >= 0                      |
//! |-------------|----------------------------------------|
//! | `Linear`    | `dt`                                   |
//! | `Htf`       | `0` if `dt < a`, else `dt - a`         |
//! | `Stf1`      | `dt - a * tanh(dt / a)`                |
//! | `Stf2`      | `dt * (1 - 1 / sqrt((dt / a)^2 + 1))`  |
//! | `Power`     | `dt^a`                                 |
//! | `Reverting` | `dt / (1 + exp(a - dt))`               |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this threshold the soft threshold functions are evaluated as their
/// `alpha -> 0` limit, the identity.
pub const SOFT_ALPHA_FLOOR: f64 = 1e-8;

/// Switch point between the series expansion and the closed form of the
/// hyperbolic tangent terms.
const SERIES_CUTOFF: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Linear,
    Htf,
    Stf1,
    Stf2,
    Power,
    Reverting,
}

impl TransformKind {
    pub const ALL: [TransformKind; 6] = [
        TransformKind::Linear,
        TransformKind::Htf,
        TransformKind::Stf1,
        TransformKind::Stf2,
        TransformKind::Power,
        TransformKind::Reverting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Linear => "linear",
            TransformKind::Htf => "htf",
            TransformKind::Stf1 => "stf1",
            TransformKind::Stf2 => "stf2",
            TransformKind::Power => "power",
            TransformKind::Reverting => "reverting",
        }
    }

    /// Whether the kind carries a threshold/exponent parameter.
    pub fn has_alpha(self) -> bool {
        self != TransformKind::Linear
    }

    /// Kinds whose value is continuously differentiable in both `dt` and `alpha`.
    pub fn is_smooth(self) -> bool {
        !matches!(self, TransformKind::Htf)
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidSpec(format!("unknown transform kind {s:?}")))
    }
}

/// A transformation kind together with its parameter.
///
/// For `Linear` the parameter is absent. For the threshold kinds it is the
/// threshold width in minutes, for `Power` the dimensionless exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransformSpec", into = "RawTransformSpec")]
pub struct TransformSpec {
    kind: TransformKind,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct RawTransformSpec {
    kind: TransformKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
}

impl TryFrom<RawTransformSpec> for TransformSpec {
    type Error = Error;

    fn try_from(raw: RawTransformSpec) -> Result<Self> {
        match (raw.kind, raw.alpha) {
            (TransformKind::Linear, _) => Ok(TransformSpec::linear()),
            (kind, Some(alpha)) => TransformSpec::new(kind, alpha),
            (kind, None) => Err(Error::InvalidSpec(format!(
                "transform {kind} requires an alpha parameter"
            ))),
        }
    }
}

impl From<TransformSpec> for RawTransformSpec {
    fn from(spec: TransformSpec) -> Self {
        RawTransformSpec {
            kind: spec.kind,
            alpha: spec.alpha(),
        }
    }
}

impl TransformSpec {
    pub fn new(kind: TransformKind, alpha: f64) -> Result<Self> {
        if kind == TransformKind::Linear {
            return Ok(Self::linear());
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "alpha must be a positive finite number for {kind}, got {alpha}"
            )));
        }
        Ok(TransformSpec { kind, alpha })
    }

    pub fn linear() -> Self {
        TransformSpec {
            kind: TransformKind::Linear,
            alpha: 0.0,
        }
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    /// The parameter, or `None` for `Linear`.
    pub fn alpha(&self) -> Option<f64> {
        self.kind.has_alpha().then_some(self.alpha)
    }

    /// Same kind with a different parameter.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        TransformSpec::new(self.kind, alpha)
    }

    pub fn eval(&self, dt: f64) -> Result<f64> {
        eval_transform(self, dt)
    }

    pub fn gradient(&self, dt: f64) -> Result<(f64, f64)> {
        transform_gradient(self, dt)
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time difference must be finite, got {dt}")))
    }
}

/// Evaluates the transform at `dt` minutes.
pub fn eval_transform(spec: &TransformSpec, dt: f64) -> Result<f64> {
    check_dt(dt)?;
    Ok(value_unchecked(spec.kind, spec.alpha, dt))
}

/// Partial derivatives `(df/d dt, df/d alpha)`.
///
/// The hard threshold function has a kink at `|dt| == alpha`; there the
/// one-sided derivative from `|dt| > alpha` is returned. `df/d alpha` is 0 for
/// `Linear`.
pub fn transform_gradient(spec: &TransformSpec, dt: f64) -> Result<(f64, f64)> {
    check_dt(dt)?;
    Ok(gradient_unchecked(spec.kind, spec.alpha, dt))
}

#[inline]
fn signed(dt: f64, magnitude: f64) -> f64 {
    if dt < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

/// `u - tanh(u)` for `u >= 0` without cancellation near zero.
#[inline]
fn u_minus_tanh(u: f64) -> f64 {
    if u < SERIES_CUTOFF {
        let u2 = u * u;
        u * u2
            * (1.0 / 3.0
                + u2 * (-2.0 / 15.0
                    + u2 * (17.0 / 315.0 + u2 * (-62.0 / 2835.0 + u2 * (1382.0 / 155_925.0)))))
    } else {
        u - u.tanh()
    }
}

/// `tanh(u) - u * sech^2(u)` for `u >= 0`.
#[inline]
fn tanh_minus_u_sech2(u: f64) -> f64 {
    if u < SERIES_CUTOFF {
        let u2 = u * u;
        u * u2 * (2.0 / 3.0 + u2 * (-8.0 / 15.0 + u2 * (34.0 / 105.0 + u2 * (-496.0 / 2835.0))))
    } else {
        u.tanh() - u * sech2(u)
    }
}

#[inline]
fn sech2(u: f64) -> f64 {
    if u > 350.0 {
        0.0
    } else {
        let c = u.cosh();
        1.0 / (c * c)
    }
}

/// Logistic sigmoid pair `(1 / (1 + e^z), 1 / (1 + e^-z))`.
#[inline]
fn logistic_pair(z: f64) -> (f64, f64) {
    (1.0 / (1.0 + z.exp()), 1.0 / (1.0 + (-z).exp()))
}

/// Transform value; `dt` must be finite and `alpha` valid for `kind`.
#[inline]
pub(crate) fn value_unchecked(kind: TransformKind, alpha: f64, dt: f64) -> f64 {
    let x = dt.abs();
    let m = match kind {
        TransformKind::Linear => x,
        TransformKind::Htf => {
            if x < alpha {
                0.0
            } else {
                x - alpha
            }
        }
        TransformKind::Stf1 => {
            if alpha < SOFT_ALPHA_FLOOR {
                x
            } else {
                alpha * u_minus_tanh(x / alpha)
            }
        }
        TransformKind::Stf2 => {
            if alpha < SOFT_ALPHA_FLOOR {
                x
            } else {
                // x * (1 - 1/s) == x * u^2 / (s * (s + 1)) with s = sqrt(u^2 + 1)
                let u = x / alpha;
                let s = u.hypot(1.0);
                x * (u / s) * (u / (s + 1.0))
            }
        }
        TransformKind::Power => {
            if x == 0.0 {
                0.0
            } else {
                x.powf(alpha)
            }
        }
        TransformKind::Reverting => x * logistic_pair(alpha - x).0,
    };
    signed(dt, m)
}

#[inline]
pub(crate) fn gradient_unchecked(kind: TransformKind, alpha: f64, dt: f64) -> (f64, f64) {
    let x = dt.abs();
    let sign = if dt < 0.0 { -1.0 } else { 1.0 };
    match kind {
        TransformKind::Linear => (1.0, 0.0),
        TransformKind::Htf => {
            if x < alpha {
                (0.0, 0.0)
            } else {
                (1.0, -sign)
            }
        }
        TransformKind::Stf1 => {
            if alpha < SOFT_ALPHA_FLOOR {
                return (1.0, 0.0);
            }
            let u = x / alpha;
            let t = u.tanh();
            (t * t, -sign * tanh_minus_u_sech2(u))
        }
        TransformKind::Stf2 => {
            if alpha < SOFT_ALPHA_FLOOR {
                return (1.0, 0.0);
            }
            let u = x / alpha;
            let s = u.hypot(1.0);
            // 1 - s^-3 == (s - 1)(s^2 + s + 1) / s^3 with s - 1 == u^2 / (s + 1)
            let s_minus_1 = u * u / (s + 1.0);
            let d_dt = s_minus_1 * (s * s + s + 1.0) / (s * s * s);
            let r = u / s;
            (d_dt, -sign * r * r * r)
        }
        TransformKind::Power => {
            if x == 0.0 {
                (0.0, 0.0)
            } else {
                let p = x.powf(alpha);
                (alpha * p / x, sign * p * x.ln())
            }
        }
        TransformKind::Reverting => {
            let (s, one_minus_s) = logistic_pair(alpha - x);
            (s + x * s * one_minus_s, -sign * x * s * one_minus_s)
        }
    }
}
