//! Value of travel time savings (VTTS).
//!
//! The VTTS for a time difference `dt` is the cost change that keeps the
//! utility difference at zero, per unit of time, in cost units per hour:
//! `(beta_t / beta_c) * f(dt) / dt * 60`. For the threshold kinds it tends
//! to `60 * beta_t / beta_c` for large `|dt|`; for the power transform it has
//! no limit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::likelihood::ParameterSet;
use crate::transforms::{TransformKind, TransformSpec};

pub const MINUTES_PER_HOUR: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    MvnSimulation,
    Fieller,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interval {
    Bounded { low: f64, high: f64 },
    /// The denominator is not significantly different from zero.
    Unbounded,
}

impl Interval {
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Interval::Bounded { low, high } => Some((low, high)),
            Interval::Unbounded => None,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Interval::Bounded { low, high } => low <= x && x <= high,
            Interval::Unbounded => true,
        }
    }
}

/// Asymptotic VTTS, or the ratio that would be misread as one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Asymptotic {
    Defined(f64),
    Undefined { diagnostic_ratio: f64 },
}

impl Asymptotic {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Asymptotic::Defined(v) => Some(v),
            Asymptotic::Undefined { .. } => None,
        }
    }
}

fn ratio_per_hour(beta_t: f64, beta_c: f64) -> Result<f64> {
    if beta_c == 0.0 || !beta_c.is_finite() || !beta_t.is_finite() {
        return Err(Error::Domain(format!(
            "VTTS needs finite coefficients and a nonzero cost coefficient, got beta_c = {beta_c}"
        )));
    }
    Ok(beta_t / beta_c * MINUTES_PER_HOUR)
}

/// VTTS at time difference `dt` minutes, in cost units per hour.
///
/// At `dt = 0` the analytic limit is returned; for a power exponent below one
/// that limit is infinite and an error is returned instead.
pub fn vtts_at(params: &ParameterSet, transform: &TransformSpec, dt: f64) -> Result<f64> {
    if !dt.is_finite() {
        return Err(Error::Domain(format!("time difference must be finite, got {dt}")));
    }
    let ratio = ratio_per_hour(params.beta_t, params.beta_c)?;
    let x = dt.abs();
    let alpha = transform.alpha().unwrap_or(0.0);
    let factor = match transform.kind() {
        TransformKind::Linear => 1.0,
        TransformKind::Htf => {
            if x < alpha {
                0.0
            } else {
                1.0 - alpha / x
            }
        }
        TransformKind::Stf1 => {
            if x == 0.0 {
                0.0
            } else {
                1.0 - alpha * (x / alpha).tanh() / x
            }
        }
        TransformKind::Stf2 => {
            let u = x / alpha;
            1.0 - 1.0 / u.hypot(1.0)
        }
        TransformKind::Power => {
            if x > 0.0 {
                x.powf(alpha - 1.0)
            } else if alpha > 1.0 {
                0.0
            } else if alpha == 1.0 {
                1.0
            } else {
                return Err(Error::Domain(
                    "VTTS of a power transform with exponent below one diverges at dt = 0".into(),
                ));
            }
        }
        TransformKind::Reverting => 1.0 / (1.0 + (alpha - x).exp()),
    };
    Ok(ratio * factor)
}

/// `60 * beta_t / beta_c` for every kind except `Power`.
pub fn asymptotic_vtts(params: &ParameterSet, kind: TransformKind) -> Result<Asymptotic> {
    let ratio = ratio_per_hour(params.beta_t, params.beta_c)?;
    Ok(match kind {
        TransformKind::Power => Asymptotic::Undefined {
            diagnostic_ratio: ratio,
        },
        _ => Asymptotic::Defined(ratio),
    })
}

/// Default curve grid: -25 to 25 minutes in steps of 0.25, without 0.
pub fn default_curve_grid() -> Vec<f64> {
    (-100..=100)
        .filter(|&k| k != 0)
        .map(|k| f64::from(k) * 0.25)
        .collect()
}

pub fn vtts_curve(
    params: &ParameterSet,
    transform: &TransformSpec,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&dt| Ok((dt, vtts_at(params, transform, dt)?)))
        .collect()
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("confidence level must lie in (0, 1), got {level}")))
    }
}

/// Lower-triangular factor of a symmetric positive semi-definite 2x2 matrix.
fn cholesky_2x2(cov: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let [[a, b], [b2, c]] = *cov;
    if [a, b, b2, c].iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    let scale = a.abs().max(c.abs()).max(f64::MIN_POSITIVE);
    if (b - b2).abs() > 1e-12 * scale {
        return Err(Error::NotPositiveDefinite);
    }
    let tol = 1e-12 * scale;
    if a < 0.0 || c < 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    let l11 = a.sqrt();
    let l21 = if l11 > 0.0 {
        b / l11
    } else if b.abs() <= tol {
        0.0
    } else {
        return Err(Error::NotPositiveDefinite);
    };
    let rest = c - l21 * l21;
    if rest < -tol {
        return Err(Error::NotPositiveDefinite);
    }
    Ok([[l11, 0.0], [l21, rest.max(0.0).sqrt()]])
}

/// Standard-normal pairs from a seeded stream.
pub fn standard_normal_pairs(draws: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..draws)
        .map(|_| {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            [z1, z2]
        })
        .collect()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval of `60 * b_t / b_c` over given standard-normal pairs.
pub fn ratio_interval_from_draws(
    mean: [f64; 2],
    cov: &[[f64; 2]; 2],
    normals: &[[f64; 2]],
    level: f64,
) -> Result<Interval> {
    check_level(level)?;
    if normals.is_empty() {
        return Err(Error::Domain("no draws".into()));
    }
    let l = cholesky_2x2(cov)?;
    let mut ratios: Vec<f64> = normals
        .iter()
        .map(|[z1, z2]| {
            let bt = mean[0] + l[0][0] * z1;
            let bc = mean[1] + l[1][0] * z1 + l[1][1] * z2;
            bt / bc * MINUTES_PER_HOUR
        })
        .collect();
    if ratios.iter().any(|r| r.is_nan()) {
        return Err(Error::Numerical("undefined ratio draw (0/0)".into()));
    }
    ratios.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(Interval::Bounded {
        low: quantile_sorted(&ratios, tail),
        high: quantile_sorted(&ratios, 1.0 - tail),
    })
}

/// Confidence interval of the asymptotic VTTS by simulating `(beta_t, beta_c)`
/// from their bivariate normal sampling distribution.
pub fn vtts_ci_simulation(
    mean: [f64; 2],
    cov: &[[f64; 2]; 2],
    draws: usize,
    level: f64,
    seed: u64,
) -> Result<Interval> {
    if draws < 1000 {
        return Err(Error::Domain(format!("at least 1000 draws required, got {draws}")));
    }
    check_level(level)?;
    cholesky_2x2(cov)?;
    ratio_interval_from_draws(mean, cov, &standard_normal_pairs(draws, seed), level)
}

/// Fieller confidence interval of `60 * beta_t / beta_c`.
///
/// The interval is the set of `r` with
/// `(b_t - r b_c)^2 <= z^2 (V_tt - 2 r V_tc + r^2 V_cc)`; it is bounded only
/// when `b_c^2 > z^2 V_cc`, i.e. the denominator is significant.
pub fn vtts_ci_fieller(mean: [f64; 2], cov: &[[f64; 2]; 2], level: f64) -> Result<Interval> {
    check_level(level)?;
    cholesky_2x2(cov)?;
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let z2 = z * z;
    let [bt, bc] = mean;
    let [[vtt, vtc], [_, vcc]] = *cov;

    let a = bc * bc - z2 * vcc;
    if !(a > 0.0) {
        return Ok(Interval::Unbounded);
    }
    let half_b = bt * bc - z2 * vtc;
    let c = bt * bt - z2 * vtt;
    let disc = (half_b * half_b - a * c).max(0.0);
    let root = disc.sqrt();
    let (r1, r2) = ((half_b - root) / a, (half_b + root) / a);
    Ok(Interval::Bounded {
        low: r1 * MINUTES_PER_HOUR,
        high: r2 * MINUTES_PER_HOUR,
    })
}

/// Asymptotic VTTS with its confidence interval and curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VttsSummary {
    pub method: CiMethod,
    pub level: f64,
    /// Asymptotic VTTS; absent for the power transform.
    #[serde(rename = "point")]
    pub asymptotic_vtts: Option<f64>,
    #[serde(rename = "low")]
    pub ci_low: Option<f64>,
    #[serde(rename = "high")]
    pub ci_high: Option<f64>,
    /// True when the Fieller interval is unbounded.
    #[serde(default)]
    pub unbounded: bool,
    pub draws: Option<usize>,
    pub seed: Option<u64>,
    /// `60 * beta_t / beta_c` when no asymptotic VTTS exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic_ratio: Option<f64>,
    /// `(dt minutes, VTTS per hour)`; exported separately as CSV.
    #[serde(skip)]
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiRequest {
    pub method: CiMethod,
    pub level: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for CiRequest {
    fn default() -> Self {
        CiRequest {
            method: CiMethod::MvnSimulation,
            level: 0.95,
            draws: 100_000,
            seed: 1,
        }
    }
}

/// Builds a [`VttsSummary`]. `moments` are the mean and covariance of
/// `(beta_t, beta_c)`; without them no interval is computed.
pub fn summarize(
    params: &ParameterSet,
    transform: &TransformSpec,
    moments: Option<([f64; 2], [[f64; 2]; 2])>,
    request: &CiRequest,
    grid: &[f64],
) -> Result<VttsSummary> {
    check_level(request.level)?;
    let asymptotic = asymptotic_vtts(params, transform.kind())?;
    let curve = vtts_curve(params, transform, grid)?;
    let mut summary = VttsSummary {
        method: request.method,
        level: request.level,
        asymptotic_vtts: asymptotic.value(),
        ci_low: None,
        ci_high: None,
        unbounded: false,
        draws: None,
        seed: None,
        diagnostic_ratio: match asymptotic {
            Asymptotic::Undefined { diagnostic_ratio } => Some(diagnostic_ratio),
            Asymptotic::Defined(_) => None,
        },
        curve,
    };
    if let (Asymptotic::Defined(_), Some((mean, cov))) = (asymptotic, moments) {
        let interval = match request.method {
            CiMethod::MvnSimulation => {
                summary.draws = Some(request.draws);
                summary.seed = Some(request.seed);
                vtts_ci_simulation(mean, &cov, request.draws, request.level, request.seed)?
            }
            CiMethod::Fieller => vtts_ci_fieller(mean, &cov, request.level)?,
        };
        match interval.bounds() {
            Some((lo, hi)) => {
                summary.ci_low = Some(lo);
                summary.ci_high = Some(hi);
            }
            None => summary.unbounded = true,
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(bt: f64, bc: f64, alpha: Option<f64>) -> ParameterSet {
        ParameterSet::basic(bt, bc, alpha)
    }

    fn spec(kind: TransformKind, alpha: f64) -> TransformSpec {
        TransformSpec::new(kind, alpha).unwrap()
    }

    #[test]
    fn linear_vtts_is_flat() {
        let p = params(-0.127, -0.305, None);
        for dt in [-30.0, -1.0, 0.5, 12.0] {
            let v = vtts_at(&p, &TransformSpec::linear(), dt).unwrap();
            assert!((v - 24.98).abs() < 0.005, "{v}");
        }
    }

    #[test]
    fn threshold_vtts_by_hand() {
        let p = params(-0.1, -0.6, Some(5.0));
        let htf = spec(TransformKind::Htf, 5.0);
        assert_eq!(vtts_at(&p, &htf, 5.0).unwrap(), 0.0);
        assert_eq!(vtts_at(&p, &htf, -3.0).unwrap(), 0.0);
        assert!((vtts_at(&p, &htf, 10.0).unwrap() - 5.0).abs() < 1e-12);
        assert!((vtts_at(&p, &htf, -10.0).unwrap() - 5.0).abs() < 1e-12);
        let stf2 = spec(TransformKind::Stf2, 5.0);
        let v = vtts_at(&p, &stf2, 5.0).unwrap();
        assert!((v - 10.0 * (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((v - 2.929).abs() < 1e-3);
    }

    #[test]
    fn vtts_matches_transform_ratio() {
        // f(dt) / dt from the transforms module as the independent route
        let p = params(-0.11, -0.58, Some(3.0));
        for kind in TransformKind::ALL {
            let t = spec(kind, if kind == TransformKind::Power { 1.4 } else { 3.0 });
            for dt in [-17.0, -2.5, 0.3, 4.0, 22.0] {
                let expected = 0.11 / 0.58 * 60.0 * t.eval(dt).unwrap() / dt;
                let got = vtts_at(&p, &t, dt).unwrap();
                assert!((got - expected).abs() < 1e-10 * expected.abs().max(1.0), "{kind} {dt}");
            }
        }
    }

    #[test]
    fn limits_at_zero() {
        let p = params(-0.1, -0.6, Some(5.0));
        assert_eq!(vtts_at(&p, &spec(TransformKind::Stf1, 5.0), 0.0).unwrap(), 0.0);
        assert_eq!(vtts_at(&p, &spec(TransformKind::Stf2, 5.0), 0.0).unwrap(), 0.0);
        assert_eq!(vtts_at(&p, &spec(TransformKind::Power, 1.5), 0.0).unwrap(), 0.0);
        assert!(vtts_at(&p, &spec(TransformKind::Power, 0.5), 0.0).is_err());
        let r = vtts_at(&p, &spec(TransformKind::Reverting, 5.0), 0.0).unwrap();
        assert!((r - 10.0 / (1.0 + 5f64.exp())).abs() < 1e-12);
        assert!(vtts_at(&params(-0.1, 0.0, None), &TransformSpec::linear(), 1.0).is_err());
    }

    #[test]
    fn asymptotic_values() {
        let htf = asymptotic_vtts(&params(-0.106, -0.596, Some(5.41)), TransformKind::Htf).unwrap();
        assert!((htf.value().unwrap() - 10.67).abs() < 0.005);
        let stf1 = asymptotic_vtts(&params(-0.151, -0.285, Some(2.17)), TransformKind::Stf1).unwrap();
        assert!((stf1.value().unwrap() - 31.79).abs() < 0.005);
        match asymptotic_vtts(&params(-0.013, -0.602, Some(1.6)), TransformKind::Power).unwrap() {
            Asymptotic::Undefined { diagnostic_ratio } => {
                assert!((diagnostic_ratio - 1.30).abs() < 0.01)
            }
            other => panic!("expected undefined, got {other:?}"),
        }
        assert!(asymptotic_vtts(&params(-0.1, 0.0, None), TransformKind::Linear).is_err());
    }

    #[test]
    fn curve_grid() {
        let g = default_curve_grid();
        assert_eq!(g.len(), 200);
        assert_eq!(g[0], -25.0);
        assert_eq!(g[199], 25.0);
        assert!(!g.contains(&0.0));
    }

    #[test]
    fn zero_covariance_collapses() {
        let zero = [[0.0, 0.0], [0.0, 0.0]];
        let i = vtts_ci_simulation([-0.1, -0.6], &zero, 1000, 0.95, 3).unwrap();
        let (lo, hi) = i.bounds().unwrap();
        assert_eq!(lo, hi);
        assert!((lo - 10.0).abs() < 1e-12);
        let f = vtts_ci_fieller([-0.1, -0.6], &zero, 0.95).unwrap();
        let (lo, hi) = f.bounds().unwrap();
        assert!((lo - 10.0).abs() < 1e-12 && (hi - 10.0).abs() < 1e-12);
    }

    #[test]
    fn fieller_small_variance_band_is_symmetric() {
        let cov = [[1e-14, 0.0], [0.0, 1e-14]];
        let (lo, hi) = vtts_ci_fieller([-0.1, -0.6], &cov, 0.95).unwrap().bounds().unwrap();
        assert!(lo < 10.0 && hi > 10.0);
        assert!(((10.0 - lo) - (hi - 10.0)).abs() < 1e-3 * (hi - lo));
        assert!(hi - lo < 1e-3);
    }

    #[test]
    fn fieller_unbounded_when_denominator_insignificant() {
        // |beta_c| / se = 1.5 < 1.96
        let cov = [[1e-4, 0.0], [0.0, 0.04]];
        assert_eq!(
            vtts_ci_fieller([-0.1, -0.3], &cov, 0.95).unwrap(),
            Interval::Unbounded
        );
        assert!(Interval::Unbounded.bounds().is_none());
    }

    #[test]
    fn covariance_validation() {
        let not_psd = [[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(
            vtts_ci_fieller([1.0, 1.0], &not_psd, 0.95),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(vtts_ci_simulation([1.0, 1.0], &not_psd, 1000, 0.95, 1).is_err());
        let asym = [[1.0, 0.1], [0.2, 1.0]];
        assert!(vtts_ci_fieller([1.0, 1.0], &asym, 0.95).is_err());
        let ok = [[1e-4, 0.0], [0.0, 1e-4]];
        assert!(vtts_ci_simulation([1.0, 1.0], &ok, 999, 0.95, 1).is_err());
        assert!(vtts_ci_fieller([1.0, 1.0], &ok, 1.0).is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let cov = [[6.4e-5, 1e-5], [1e-5, 3.6e-4]];
        let a = vtts_ci_simulation([-0.1, -0.6], &cov, 5000, 0.95, 17).unwrap();
        let b = vtts_ci_simulation([-0.1, -0.6], &cov, 5000, 0.95, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quantile_interpolates() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&x, 0.0), 1.0);
        assert_eq!(quantile_sorted(&x, 1.0), 5.0);
        assert_eq!(quantile_sorted(&x, 0.5), 3.0);
        assert!((quantile_sorted(&x, 0.1) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn power_summary_has_no_interval() {
        let p = params(-0.013, -0.602, Some(1.6));
        let cov = [[1e-5, 0.0], [0.0, 4e-4]];
        let s = summarize(
            &p,
            &spec(TransformKind::Power, 1.6),
            Some(([-0.013, -0.602], cov)),
            &CiRequest::default(),
            &default_curve_grid(),
        )
        .unwrap();
        assert!(s.asymptotic_vtts.is_none());
        assert!(s.ci_low.is_none());
        assert!((s.diagnostic_ratio.unwrap() - 1.30).abs() < 0.01);
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["point"].is_null());
    }
}
