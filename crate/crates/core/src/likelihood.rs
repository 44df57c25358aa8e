//! Binary logit likelihood over threshold-transformed utility differences.
//!
//! The systematic utility difference of a record is
//!
//! ```text
//! dV = beta_t * f(dt, alpha)
//!    + beta_c * dc * (I / I_mean)^lambda_i * (T / T_mean)^lambda_t
//!    + beta_h * dh + beta_k * dk
//! ```
//!
//! with every term after the cost term optional. The choice probability of
//! alternative 1 is `logistic(scale[group] * dV)` where `scale[0] == 1`.
//!
//! Estimation maximizes the log-likelihood with BFGS on a parameterization in
//! which `alpha` and the group scales are optimized on a log scale. The hard
//! threshold function is not differentiable in `alpha`, so it is estimated by
//! profile likelihood: a grid over `alpha`, a smooth inner fit of the other
//! parameters at each grid point, and golden-section refinement of the best
//! grid cell.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::optimize::{self, fd_hessian, neg_inverse, OptimOptions};
use crate::transforms::{gradient_unchecked, value_unchecked, TransformKind, TransformSpec};

/// One binary choice observation. Differences are alternative 1 minus alternative 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    /// Travel time difference, minutes.
    pub dt: f64,
    /// Cost difference.
    pub dc: f64,
    /// Headway difference, minutes.
    #[serde(default)]
    pub dh: f64,
    /// Difference in the number of changes.
    #[serde(default)]
    pub dk: f64,
    #[serde(default)]
    pub income: Option<f64>,
    /// Mean trip time of the two alternatives, minutes.
    #[serde(default)]
    pub mean_trip_time: Option<f64>,
    /// Error-scale group; 0 is the reference group.
    #[serde(default)]
    pub group: u32,
    pub chose_alt1: bool,
}

impl ChoiceRecord {
    pub fn new(dt: f64, dc: f64, chose_alt1: bool) -> Self {
        ChoiceRecord {
            dt,
            dc,
            dh: 0.0,
            dk: 0.0,
            income: None,
            mean_trip_time: None,
            group: 0,
            chose_alt1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dt", self.dt), ("dc", self.dc), ("dh", self.dh), ("dk", self.dk)] {
            if !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite, got {v}")));
            }
        }
        for (name, v) in [("income", self.income), ("mean_trip_time", self.mean_trip_time)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Domain(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// The same observation with the alternatives swapped.
    pub fn relabeled(&self) -> Self {
        ChoiceRecord {
            dt: -self.dt,
            dc: -self.dc,
            dh: -self.dh,
            dk: -self.dk,
            chose_alt1: !self.chose_alt1,
            ..*self
        }
    }
}

/// Which terms enter the utility difference and how it is normalized.
///
/// The transform's `alpha` is used as the starting value of estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub transform: TransformSpec,
    #[serde(default)]
    pub use_headway: bool,
    #[serde(default)]
    pub use_changes: bool,
    #[serde(default)]
    pub use_income_elasticity: bool,
    #[serde(default)]
    pub use_time_elasticity: bool,
    pub n_groups: usize,
    /// Income normalization; `None` means the sample mean.
    #[serde(default)]
    pub income_mean: Option<f64>,
    /// Mean-trip-time normalization; `None` means the sample mean.
    #[serde(default)]
    pub time_mean: Option<f64>,
}

impl UtilitySpec {
    /// Time and cost only, a single scale group.
    pub fn basic(transform: TransformSpec) -> Self {
        UtilitySpec {
            transform,
            use_headway: false,
            use_changes: false,
            use_income_elasticity: false,
            use_time_elasticity: false,
            n_groups: 1,
            income_mean: None,
            time_mean: None,
        }
    }

    /// A spec of the given kind with the default starting value `alpha = 1`.
    pub fn of_kind(kind: TransformKind) -> Self {
        let transform = TransformSpec::new(kind, 1.0).expect("1.0 is a valid alpha");
        UtilitySpec::basic(transform)
    }

    /// All covariates of the stated-choice form plus `n_groups` scale groups.
    pub fn full(transform: TransformSpec, n_groups: usize) -> Self {
        UtilitySpec {
            use_headway: true,
            use_changes: true,
            use_income_elasticity: true,
            use_time_elasticity: true,
            n_groups,
            ..UtilitySpec::basic(transform)
        }
    }

    pub fn with_transform(&self, transform: TransformSpec) -> Self {
        UtilitySpec {
            transform,
            ..self.clone()
        }
    }

    pub fn kind(&self) -> TransformKind {
        self.transform.kind()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 {
            return Err(Error::InvalidSpec("n_groups must be at least 1".into()));
        }
        for (name, v) in [("income_mean", self.income_mean), ("time_mean", self.time_mean)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Parameter names in the order used by vectors, gradients and covariances.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = vec!["beta_t".to_string(), "beta_c".to_string()];
        if self.kind().has_alpha() {
            names.push("alpha".into());
        }
        if self.use_headway {
            names.push("beta_h".into());
        }
        if self.use_changes {
            names.push("beta_k".into());
        }
        if self.use_income_elasticity {
            names.push("lambda_i".into());
        }
        if self.use_time_elasticity {
            names.push("lambda_t".into());
        }
        for g in 1..self.n_groups {
            names.push(format!("scale_{g}"));
        }
        names
    }

    pub fn n_parameters(&self) -> usize {
        self.parameter_names().len()
    }

    /// Copy with `None` normalizations replaced by the means over `data`.
    pub fn resolved(&self, data: &[ChoiceRecord]) -> UtilitySpec {
        fn mean(values: impl Iterator<Item = f64>) -> f64 {
            let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            if n == 0 {
                1.0
            } else {
                sum / n as f64
            }
        }
        UtilitySpec {
            income_mean: Some(
                self.income_mean
                    .unwrap_or_else(|| mean(data.iter().filter_map(|r| r.income))),
            ),
            time_mean: Some(
                self.time_mean
                    .unwrap_or_else(|| mean(data.iter().filter_map(|r| r.mean_trip_time))),
            ),
            ..self.clone()
        }
    }
}

/// Utility coefficients. Optional entries are present exactly when the
/// corresponding [`UtilitySpec`] term is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub beta_t: f64,
    pub beta_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_i: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_t: Option<f64>,
    /// Scale per group; `scales[0] == 1`.
    pub scales: Vec<f64>,
}

impl ParameterSet {
    /// Time and cost coefficients only.
    pub fn basic(beta_t: f64, beta_c: f64, alpha: Option<f64>) -> Self {
        ParameterSet {
            beta_t,
            beta_c,
            alpha,
            beta_h: None,
            beta_k: None,
            lambda_i: None,
            lambda_t: None,
            scales: vec![1.0],
        }
    }

    /// All coefficients zero, unit scales, `alpha` from the spec.
    pub fn null(spec: &UtilitySpec) -> Self {
        let zero = |on: bool| on.then_some(0.0);
        ParameterSet {
            beta_t: 0.0,
            beta_c: 0.0,
            alpha: spec.transform.alpha(),
            beta_h: zero(spec.use_headway),
            beta_k: zero(spec.use_changes),
            lambda_i: zero(spec.use_income_elasticity),
            lambda_t: zero(spec.use_time_elasticity),
            scales: vec![1.0; spec.n_groups],
        }
    }

    pub fn check(&self, spec: &UtilitySpec) -> Result<()> {
        let mismatch = |what: &str| Err(Error::InvalidSpec(format!("parameter set: {what}")));
        if self.alpha.is_some() != spec.kind().has_alpha() {
            return mismatch("alpha presence does not match the transform kind");
        }
        if let Some(a) = self.alpha {
            if !(a.is_finite() && a > 0.0) {
                return mismatch("alpha must be positive");
            }
        }
        if self.beta_h.is_some() != spec.use_headway
            || self.beta_k.is_some() != spec.use_changes
            || self.lambda_i.is_some() != spec.use_income_elasticity
            || self.lambda_t.is_some() != spec.use_time_elasticity
        {
            return mismatch("optional coefficients do not match the utility terms");
        }
        if self.scales.len() != spec.n_groups {
            return mismatch("one scale per group is required");
        }
        if self.scales[0] != 1.0 {
            return mismatch("the reference group scale must be exactly 1");
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return mismatch("scales must be positive");
        }
        Ok(())
    }

    /// Flattens in [`UtilitySpec::parameter_names`] order.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = vec![self.beta_t, self.beta_c];
        v.extend(
            [self.alpha, self.beta_h, self.beta_k, self.lambda_i, self.lambda_t]
                .into_iter()
                .flatten(),
        );
        v.extend(self.scales.iter().skip(1));
        v
    }

    pub fn from_vector(spec: &UtilitySpec, v: &[f64]) -> Result<Self> {
        if v.len() != spec.n_parameters() {
            return Err(Error::InvalidSpec(format!(
                "expected {} parameters, got {}",
                spec.n_parameters(),
                v.len()
            )));
        }
        let mut it = v.iter().copied();
        let mut take = |on: bool| if on { it.next() } else { None };
        let beta_t = take(true).unwrap();
        let beta_c = take(true).unwrap();
        let alpha = take(spec.kind().has_alpha());
        let beta_h = take(spec.use_headway);
        let beta_k = take(spec.use_changes);
        let lambda_i = take(spec.use_income_elasticity);
        let lambda_t = take(spec.use_time_elasticity);
        let mut scales = vec![1.0];
        scales.extend(it);
        Ok(ParameterSet {
            beta_t,
            beta_c,
            alpha,
            beta_h,
            beta_k,
            lambda_i,
            lambda_t,
            scales,
        })
    }

    /// Value by name as in [`UtilitySpec::parameter_names`].
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "beta_t" => Some(self.beta_t),
            "beta_c" => Some(self.beta_c),
            "alpha" => self.alpha,
            "beta_h" => self.beta_h,
            "beta_k" => self.beta_k,
            "lambda_i" => self.lambda_i,
            "lambda_t" => self.lambda_t,
            _ => name
                .strip_prefix("scale_")
                .and_then(|g| g.parse::<usize>().ok())
                .and_then(|g| self.scales.get(g).copied()),
        }
    }

    /// The transform with this parameter set's `alpha`.
    pub fn transform(&self, kind: TransformKind) -> Result<TransformSpec> {
        match self.alpha {
            _ if kind == TransformKind::Linear => Ok(TransformSpec::linear()),
            Some(a) => TransformSpec::new(kind, a),
            None => Err(Error::InvalidSpec(format!("{kind} requires alpha"))),
        }
    }
}

/// Observation prepared for repeated likelihood evaluation.
#[derive(Debug, Clone, Copy)]
struct Row {
    dt: f64,
    dc: f64,
    dh: f64,
    dk: f64,
    ln_income: f64,
    ln_time: f64,
    group: usize,
    chosen: bool,
}

fn prepare(data: &[ChoiceRecord], spec: &UtilitySpec) -> Result<Vec<Row>> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    spec.validate()?;
    let income_mean = spec.income_mean.expect("spec resolved");
    let time_mean = spec.time_mean.expect("spec resolved");
    data.iter()
        .enumerate()
        .map(|(i, r)| {
            r.validate()
                .map_err(|e| Error::Domain(format!("record {i}: {e}")))?;
            let group = r.group as usize;
            if group >= spec.n_groups {
                return Err(Error::InvalidSpec(format!(
                    "record {i} has group {group} but the spec declares {} group(s)",
                    spec.n_groups
                )));
            }
            Ok(Row {
                dt: r.dt,
                dc: r.dc,
                dh: r.dh,
                dk: r.dk,
                ln_income: r.income.map_or(0.0, |v| (v / income_mean).ln()),
                ln_time: r.mean_trip_time.map_or(0.0, |v| (v / time_mean).ln()),
                group,
                chosen: r.chose_alt1,
            })
        })
        .collect()
}

/// Logistic choice probability of alternative 1 given the utility difference.
pub fn choice_probability(dv: f64) -> f64 {
    if dv >= 0.0 {
        1.0 / (1.0 + (-dv).exp())
    } else {
        let e = dv.exp();
        e / (1.0 + e)
    }
}

/// `ln(logistic(x))` without overflow or cancellation.
#[inline]
fn log_logistic(x: f64) -> f64 {
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

fn cost_multiplier(row: &Row, params: &ParameterSet) -> f64 {
    let e = params.lambda_i.unwrap_or(0.0) * row.ln_income
        + params.lambda_t.unwrap_or(0.0) * row.ln_time;
    if e == 0.0 {
        1.0
    } else {
        e.exp()
    }
}

fn row_utility(row: &Row, params: &ParameterSet, kind: TransformKind) -> f64 {
    let f = value_unchecked(kind, params.alpha.unwrap_or(0.0), row.dt);
    params.beta_t * f
        + params.beta_c * row.dc * cost_multiplier(row, params)
        + params.beta_h.unwrap_or(0.0) * row.dh
        + params.beta_k.unwrap_or(0.0) * row.dk
}

/// Systematic utility difference `dV` of one record, before group scaling.
///
/// Income and mean trip time are normalized by the spec's means; records
/// without them sit at the mean. Unset means are treated as 1.
pub fn systematic_utility(
    record: &ChoiceRecord,
    params: &ParameterSet,
    spec: &UtilitySpec,
) -> Result<f64> {
    params.check(spec)?;
    let spec = UtilitySpec {
        income_mean: Some(spec.income_mean.unwrap_or(1.0)),
        time_mean: Some(spec.time_mean.unwrap_or(1.0)),
        ..spec.clone()
    };
    let row = prepare(std::slice::from_ref(record), &spec)?[0];
    Ok(row_utility(&row, params, spec.kind()))
}

/// `dV` multiplied by the record's group scale, the argument of the logistic.
pub fn scaled_utility(
    record: &ChoiceRecord,
    params: &ParameterSet,
    spec: &UtilitySpec,
) -> Result<f64> {
    let v = systematic_utility(record, params, spec)?;
    Ok(params.scales[record.group as usize] * v)
}

/// Log-likelihood and its gradient in [`UtilitySpec::parameter_names`] order.
fn evaluate(
    rows: &[Row],
    params: &ParameterSet,
    spec: &UtilitySpec,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let kind = spec.kind();
    let alpha = params.alpha.unwrap_or(0.0);
    let beta_h = params.beta_h.unwrap_or(0.0);
    let beta_k = params.beta_k.unwrap_or(0.0);

    // gradient slots
    let mut next = 2;
    let mut slot = |on: bool| {
        on.then(|| {
            next += 1;
            next - 1
        })
    };
    let i_alpha = slot(kind.has_alpha());
    let i_h = slot(spec.use_headway);
    let i_k = slot(spec.use_changes);
    let i_li = slot(spec.use_income_elasticity);
    let i_lt = slot(spec.use_time_elasticity);
    let i_scale = next;

    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }

    let mut ll = 0.0;
    for row in rows {
        let f = value_unchecked(kind, alpha, row.dt);
        let mult = cost_multiplier(row, params);
        let cost = params.beta_c * row.dc * mult;
        let v = params.beta_t * f + cost + beta_h * row.dh + beta_k * row.dk;
        let scale = params.scales[row.group];
        let dv = scale * v;
        ll += if row.chosen {
            log_logistic(dv)
        } else {
            log_logistic(-dv)
        };

        if let Some(g) = grad.as_deref_mut() {
            let y = if row.chosen { 1.0 } else { 0.0 };
            let r = y - choice_probability(dv);
            let rs = r * scale;
            g[0] += rs * f;
            g[1] += rs * row.dc * mult;
            if let Some(i) = i_alpha {
                let (_, df_da) = gradient_unchecked(kind, alpha, row.dt);
                g[i] += rs * params.beta_t * df_da;
            }
            if let Some(i) = i_h {
                g[i] += rs * row.dh;
            }
            if let Some(i) = i_k {
                g[i] += rs * row.dk;
            }
            if let Some(i) = i_li {
                g[i] += rs * cost * row.ln_income;
            }
            if let Some(i) = i_lt {
                g[i] += rs * cost * row.ln_time;
            }
            if row.group > 0 {
                g[i_scale + row.group - 1] += r * v;
            }
        }
    }
    ll
}

/// Sum over records of the log-probability of the observed choice.
pub fn log_likelihood(
    params: &ParameterSet,
    data: &[ChoiceRecord],
    spec: &UtilitySpec,
) -> Result<f64> {
    params.check(spec)?;
    let spec = spec.resolved(data);
    let rows = prepare(data, &spec)?;
    Ok(evaluate(&rows, params, &spec, None))
}

/// Analytic gradient of [`log_likelihood`] in [`UtilitySpec::parameter_names`] order.
///
/// For the hard threshold function the `alpha` component is the one-sided
/// derivative away from the kinks.
pub fn log_likelihood_gradient(
    params: &ParameterSet,
    data: &[ChoiceRecord],
    spec: &UtilitySpec,
) -> Result<Vec<f64>> {
    params.check(spec)?;
    let spec = spec.resolved(data);
    let rows = prepare(data, &spec)?;
    let mut g = vec![0.0; spec.n_parameters()];
    evaluate(&rows, params, &spec, Some(&mut g));
    Ok(g)
}

/// Two-sided normal p-value for `estimate == target`.
pub fn wald_test(estimate: f64, std_error: f64, target: f64) -> Result<f64> {
    if !(std_error.is_finite() && std_error > 0.0) {
        return Err(Error::Domain(format!(
            "standard error must be positive, got {std_error}"
        )));
    }
    let z = (estimate - target) / std_error;
    Ok(erfc(z.abs() / std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Grid step of the hard-threshold profile, minutes.
    pub htf_grid_step: f64,
    /// Upper end of the hard-threshold grid; `None` is half the largest `|dt|`.
    pub htf_grid_max: Option<f64>,
    pub compute_covariance: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            htf_grid_step: 0.25,
            htf_grid_max: None,
            compute_covariance: true,
        }
    }
}

impl FitOptions {
    fn optim(&self) -> OptimOptions {
        OptimOptions {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
        }
    }
}

/// Maximum-likelihood estimates with their sampling covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Spec with the normalizations actually used.
    pub spec: UtilitySpec,
    pub estimates: ParameterSet,
    pub parameter_names: Vec<String>,
    /// Inverse observed information, `None` when the information matrix is singular.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub std_errors: Option<Vec<f64>>,
    pub final_ll: f64,
    pub null_ll: f64,
    /// Gradient max-norm criterion met.
    pub converged: bool,
    /// Estimates at a boundary (perfect prediction, vanishing threshold, ...).
    pub boundary: bool,
    pub iterations: usize,
    pub gradient_max_norm: f64,
    pub n_obs: usize,
    pub n_free_params: usize,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|n| n == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.estimates.get(name)
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        let i = self.index(name)?;
        self.std_errors.as_ref().map(|se| se[i])
    }

    pub fn covariance_between(&self, a: &str, b: &str) -> Option<f64> {
        let (i, j) = (self.index(a)?, self.index(b)?);
        self.covariance.as_ref().map(|c| c[i][j])
    }

    /// Mean and covariance of `(beta_t, beta_c)`.
    pub fn time_cost_moments(&self) -> Option<([f64; 2], [[f64; 2]; 2])> {
        let vtt = self.covariance_between("beta_t", "beta_t")?;
        let vtc = self.covariance_between("beta_t", "beta_c")?;
        let vcc = self.covariance_between("beta_c", "beta_c")?;
        Some((
            [self.estimates.beta_t, self.estimates.beta_c],
            [[vtt, vtc], [vtc, vcc]],
        ))
    }

    /// Wald p-value of `name == target`.
    pub fn wald(&self, name: &str, target: f64) -> Result<f64> {
        let est = self
            .estimate(name)
            .ok_or_else(|| Error::InvalidSpec(format!("no parameter named {name}")))?;
        let se = self
            .std_error(name)
            .ok_or_else(|| Error::Numerical(format!("no standard error for {name}")))?;
        wald_test(est, se, target)
    }
}

/// Maps between natural parameters and the unconstrained optimization
/// vector: `alpha` and the scales enter as logs, and a fixed `alpha` is
/// removed altogether.
struct Layout {
    spec: UtilitySpec,
    log_mask: Vec<bool>,
    alpha_index: Option<usize>,
    fixed_alpha: Option<f64>,
}

impl Layout {
    fn new(spec: &UtilitySpec, fixed_alpha: Option<f64>) -> Self {
        let names = spec.parameter_names();
        let log_mask = names
            .iter()
            .map(|n| n == "alpha" || n.starts_with("scale_"))
            .collect();
        Layout {
            spec: spec.clone(),
            log_mask,
            alpha_index: names.iter().position(|n| n == "alpha"),
            fixed_alpha,
        }
    }

    fn dropped(&self, i: usize) -> bool {
        self.fixed_alpha.is_some() && Some(i) == self.alpha_index
    }

    fn to_internal(&self, natural: &[f64]) -> Vec<f64> {
        natural
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.dropped(*i))
            .map(|(i, &v)| if self.log_mask[i] { v.ln() } else { v })
            .collect()
    }

    fn to_natural(&self, internal: &[f64]) -> Vec<f64> {
        let mut it = internal.iter();
        (0..self.log_mask.len())
            .map(|i| {
                if self.dropped(i) {
                    self.fixed_alpha.unwrap()
                } else {
                    let v = *it.next().expect("internal vector length");
                    if self.log_mask[i] {
                        v.exp()
                    } else {
                        v
                    }
                }
            })
            .collect()
    }

    fn gradient_to_internal(&self, natural: &[f64], grad: &[f64], out: &mut [f64]) {
        let mut k = 0;
        for i in 0..natural.len() {
            if self.dropped(i) {
                continue;
            }
            out[k] = if self.log_mask[i] {
                grad[i] * natural[i]
            } else {
                grad[i]
            };
            k += 1;
        }
    }

    /// Objective over the internal vector.
    fn objective<'a>(&'a self, rows: &'a [Row]) -> impl FnMut(&[f64], &mut [f64]) -> f64 + 'a {
        let mut natural_grad = vec![0.0; self.log_mask.len()];
        move |theta: &[f64], out: &mut [f64]| {
            let natural = self.to_natural(theta);
            let invalid = natural
                .iter()
                .enumerate()
                .any(|(i, v)| !v.is_finite() || (self.log_mask[i] && *v <= 0.0));
            if invalid {
                out.fill(f64::NAN);
                return f64::NEG_INFINITY;
            }
            let params = ParameterSet::from_vector(&self.spec, &natural).expect("layout length");
            let ll = evaluate(rows, &params, &self.spec, Some(&mut natural_grad));
            self.gradient_to_internal(&natural, &natural_grad, out);
            ll
        }
    }
}

struct SmoothFit {
    natural: Vec<f64>,
    ll: f64,
    converged: bool,
    iterations: usize,
    gradient_max_norm: f64,
}

fn fit_smooth(
    rows: &[Row],
    spec: &UtilitySpec,
    fixed_alpha: Option<f64>,
    start: &[f64],
    options: &FitOptions,
) -> SmoothFit {
    let layout = Layout::new(spec, fixed_alpha);
    let x0 = layout.to_internal(start);
    let result = optimize::maximize(layout.objective(rows), &x0, &options.optim());
    SmoothFit {
        natural: layout.to_natural(&result.x),
        ll: result.value,
        converged: result.converged,
        iterations: result.iterations,
        gradient_max_norm: result.gradient_max_norm(),
    }
}

/// Natural-scale starting vector: linear-fit coefficients plus `alpha`.
fn start_from_linear(spec: &UtilitySpec, linear: &ParameterSet, alpha: f64) -> Vec<f64> {
    let mut p = linear.clone();
    p.alpha = spec.kind().has_alpha().then_some(alpha);
    p.to_vector()
}

fn validate_groups(data: &[ChoiceRecord], spec: &UtilitySpec) -> Result<()> {
    let mut counts = vec![0usize; spec.n_groups];
    for r in data {
        if let Some(c) = counts.get_mut(r.group as usize) {
            *c += 1;
        }
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidConfig(format!(
            "no records for declared scale group {g}"
        )));
    }
    Ok(())
}

/// Maximum-likelihood estimation.
///
/// Starting values come from a linear-utility fit with the same terms; the
/// threshold parameter starts at the spec's `alpha`. Non-convergence is
/// reported through [`FitResult::converged`], never as an error.
pub fn fit(data: &[ChoiceRecord], spec: &UtilitySpec, options: &FitOptions) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    spec.validate()?;
    let spec = spec.resolved(data);
    let rows = prepare(data, &spec)?;
    validate_groups(data, &spec)?;

    let linear_spec = spec.with_transform(TransformSpec::linear());
    let linear_start = ParameterSet::null(&linear_spec).to_vector();
    let linear = fit_smooth(&rows, &linear_spec, None, &linear_start, options);
    let linear_params = ParameterSet::from_vector(&linear_spec, &linear.natural)?;

    let kind = spec.kind();
    let mut notes = Vec::new();
    let (natural, ll, converged, iterations, gnorm, covariance) = match kind {
        TransformKind::Linear => {
            let cov = options
                .compute_covariance
                .then(|| smooth_covariance(&rows, &spec, &linear.natural))
                .flatten();
            (
                linear.natural,
                linear.ll,
                linear.converged,
                linear.iterations,
                linear.gradient_max_norm,
                cov,
            )
        }
        TransformKind::Htf => {
            let profile = fit_htf_profile(&rows, &spec, &linear_params, options)?;
            notes.push(
                "alpha is estimated by profile likelihood; its standard error comes from \
                 the curvature of the profile, which is kinked at every observed |dt|"
                    .to_string(),
            );
            let cov = options
                .compute_covariance
                .then(|| htf_covariance(&rows, &spec, &profile.natural, options))
                .flatten();
            (
                profile.natural,
                profile.ll,
                profile.converged,
                profile.iterations,
                profile.gradient_max_norm,
                cov,
            )
        }
        _ => {
            let alpha0 = spec.transform.alpha().unwrap_or(1.0);
            let start = start_from_linear(&spec, &linear_params, alpha0);
            let mut best = fit_smooth(&rows, &spec, None, &start, options);
            // Linear is the alpha -> 0 limit of the soft thresholds and alpha = 1
            // of the power transform: never end below the linear fit.
            if best.ll < linear.ll - 1e-9 || !best.converged {
                let retry_alpha = if kind == TransformKind::Power { 1.0 } else { 1e-3 };
                let retry_start = start_from_linear(&spec, &linear_params, retry_alpha);
                let retry = fit_smooth(&rows, &spec, None, &retry_start, options);
                if retry.ll > best.ll || (retry.converged && !best.converged) {
                    best = retry;
                }
            }
            let cov = options
                .compute_covariance
                .then(|| smooth_covariance(&rows, &spec, &best.natural))
                .flatten();
            (
                best.natural,
                best.ll,
                best.converged,
                best.iterations,
                best.gradient_max_norm,
                cov,
            )
        }
    };

    let estimates = ParameterSet::from_vector(&spec, &natural)?;
    let n_obs = data.len();
    let mut boundary = false;
    if ll > -1e-3 * (n_obs as f64).max(1.0).sqrt() {
        boundary = true;
        notes.push("near-perfect prediction: the data are (quasi-)separated".into());
    }
    if kind.has_alpha() && kind != TransformKind::Power {
        if let Some(a) = estimates.alpha {
            if a < 1e-4 {
                boundary = true;
                notes.push("threshold parameter collapsed towards zero".into());
            }
        }
    }
    if options.compute_covariance && covariance.is_none() {
        notes.push("information matrix is singular; covariance unavailable".into());
    }
    let std_errors = covariance
        .as_ref()
        .map(|c| (0..c.len()).map(|i| c[i][i].sqrt()).collect());

    Ok(FitResult {
        parameter_names: spec.parameter_names(),
        n_free_params: spec.n_parameters(),
        spec,
        estimates,
        covariance,
        std_errors,
        final_ll: ll,
        null_ll: n_obs as f64 * 0.5f64.ln(),
        converged,
        boundary,
        iterations,
        gradient_max_norm: gnorm,
        n_obs,
        notes,
    })
}

/// Covariance from the central-difference Hessian of the analytic gradient.
fn smooth_covariance(rows: &[Row], spec: &UtilitySpec, natural: &[f64]) -> Option<Vec<Vec<f64>>> {
    let mut grad = natural_gradient(rows, spec);
    let hessian = fd_hessian(&mut grad, natural);
    to_covariance(&hessian)
}

fn natural_gradient<'a>(
    rows: &'a [Row],
    spec: &'a UtilitySpec,
) -> impl FnMut(&[f64], &mut [f64]) -> f64 + 'a {
    let names = spec.parameter_names();
    let positive: Vec<bool> = names
        .iter()
        .map(|n| n == "alpha" || n.starts_with("scale_"))
        .collect();
    move |x: &[f64], g: &mut [f64]| {
        if x.iter().zip(&positive).any(|(v, p)| *p && *v <= 0.0) {
            g.fill(f64::NAN);
            return f64::NAN;
        }
        let params = ParameterSet::from_vector(spec, x).expect("layout length");
        evaluate(rows, &params, spec, Some(g))
    }
}

fn to_covariance(hessian: &DMatrix<f64>) -> Option<Vec<Vec<f64>>> {
    let cov = neg_inverse(hessian)?;
    if cov.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let n = cov.nrows();
    Some(
        (0..n)
            .map(|i| (0..n).map(|j| 0.5 * (cov[(i, j)] + cov[(j, i)])).collect())
            .collect(),
    )
}

struct ProfileFit {
    natural: Vec<f64>,
    ll: f64,
    converged: bool,
    iterations: usize,
    gradient_max_norm: f64,
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Hard-threshold estimation by profile likelihood over `alpha`.
/// Smallest hard threshold considered.
const HTF_ALPHA_MIN: f64 = 1e-8;

fn fit_htf_profile(
    rows: &[Row],
    spec: &UtilitySpec,
    linear: &ParameterSet,
    options: &FitOptions,
) -> Result<ProfileFit> {
    let step = options.htf_grid_step;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "hard-threshold grid step must be positive, got {step}"
        )));
    }
    let max_abs_dt = rows.iter().fold(0.0_f64, |m, r| m.max(r.dt.abs()));
    let upper = options.htf_grid_max.unwrap_or(max_abs_dt / 2.0);
    let n_grid = ((upper / step).floor() as usize).max(1);

    let alpha_index = 2;
    let profile_at = |alpha: f64, warm: &[f64]| {
        let mut start = warm.to_vec();
        start[alpha_index] = alpha;
        fit_smooth(rows, spec, Some(alpha), &start, options)
    };

    // the first point stands in for the linear limit alpha -> 0
    let grid = std::iter::once(HTF_ALPHA_MIN).chain((1..=n_grid).map(|k| step * k as f64));
    let mut warm = start_from_linear(spec, linear, HTF_ALPHA_MIN);
    let mut best: Option<(f64, SmoothFit)> = None;
    for alpha in grid {
        let fit = profile_at(alpha, &warm);
        warm.clone_from(&fit.natural);
        if best.as_ref().map_or(true, |(_, b)| fit.ll > b.ll) {
            best = Some((alpha, fit));
        }
    }
    let (grid_alpha, grid_fit) = best.expect("grid has at least one point");

    // golden-section refinement inside the neighbouring grid cells
    let warm = grid_fit.natural.clone();
    let mut lo = (grid_alpha - step).max(HTF_ALPHA_MIN);
    let mut hi = grid_alpha + step;
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = profile_at(x1, &warm);
    let mut f2 = profile_at(x2, &warm);
    while hi - lo > 1e-4 * step.max(1.0) {
        if f1.ll >= f2.ll {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = profile_at(x1, &warm);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = profile_at(x2, &warm);
        }
    }
    let refined = if f1.ll >= f2.ll { f1 } else { f2 };
    let chosen = if refined.ll >= grid_fit.ll {
        refined
    } else {
        grid_fit
    };

    Ok(ProfileFit {
        natural: chosen.natural,
        ll: chosen.ll,
        converged: chosen.converged,
        iterations: chosen.iterations,
        gradient_max_norm: chosen.gradient_max_norm,
    })
}

/// Covariance of a hard-threshold fit.
///
/// The block of the smooth parameters comes from the finite-difference
/// Hessian at the estimated threshold. The curvature of the profile
/// log-likelihood in `alpha` and the cross derivatives are least-squares
/// slopes over a window of `alpha` values one grid step apart, which spans
/// enough kinks to be meaningful. The `alpha` diagonal entry of the Hessian is
/// then chosen so that its Schur complement equals the profile curvature.
fn htf_covariance(
    rows: &[Row],
    spec: &UtilitySpec,
    natural: &[f64],
    options: &FitOptions,
) -> Option<Vec<Vec<f64>>> {
    const ALPHA: usize = 2;
    let alpha_hat = natural[ALPHA];
    let h = options.htf_grid_step;
    let n = natural.len();
    let others: Vec<usize> = (0..n).filter(|&i| i != ALPHA).collect();
    let mut grad = natural_gradient(rows, spec);

    let mut offsets = Vec::new();
    let mut profile_ll = Vec::new();
    let mut cross = Vec::new();
    let mut g = vec![0.0; n];
    for k in -4i32..=4 {
        let alpha = alpha_hat + f64::from(k) * h;
        if alpha <= 0.05 * h {
            continue;
        }
        let mut start = natural.to_vec();
        start[ALPHA] = alpha;
        let inner = fit_smooth(rows, spec, Some(alpha), &start, options);
        grad(&start, &mut g);
        offsets.push(alpha - alpha_hat);
        profile_ll.push(inner.ll);
        cross.push(others.iter().map(|&i| g[i]).collect::<Vec<_>>());
    }
    if offsets.len() < 5 {
        return None;
    }

    // profile curvature from a least-squares quadratic
    let m = offsets.len();
    let design = DMatrix::from_fn(m, 3, |r, c| offsets[r].powi(c as i32));
    let y = nalgebra::DVector::from_column_slice(&profile_ll);
    let coef = (design.transpose() * &design)
        .lu()
        .solve(&(design.transpose() * y))?;
    let curvature = 2.0 * coef[2];
    if !(curvature < 0.0) {
        return None;
    }

    let mean_x = offsets.iter().sum::<f64>() / m as f64;
    let sxx: f64 = offsets.iter().map(|x| (x - mean_x).powi(2)).sum();
    let slopes: Vec<f64> = (0..others.len())
        .map(|j| {
            let mean_g = cross.iter().map(|c| c[j]).sum::<f64>() / m as f64;
            offsets
                .iter()
                .zip(&cross)
                .map(|(x, c)| (x - mean_x) * (c[j] - mean_g))
                .sum::<f64>()
                / sxx
        })
        .collect();

    // smooth block at the fixed threshold
    let mut reduced = |x: &[f64], out: &mut [f64]| {
        let mut full = Vec::with_capacity(n);
        full.extend_from_slice(&x[..ALPHA]);
        full.push(alpha_hat);
        full.extend_from_slice(&x[ALPHA..]);
        let v = grad(&full, &mut g);
        for (o, &i) in out.iter_mut().zip(&others) {
            *o = g[i];
        }
        v
    };
    let x_others: Vec<f64> = others.iter().map(|&i| natural[i]).collect();
    let h_bb = fd_hessian(&mut reduced, &x_others);
    let h_bb_inv = h_bb.clone().try_inverse()?;
    let h_ab = nalgebra::DVector::from_column_slice(&slopes);
    let h_aa = curvature + (h_ab.transpose() * &h_bb_inv * &h_ab)[(0, 0)];

    let mut hessian = DMatrix::zeros(n, n);
    for (a, &i) in others.iter().enumerate() {
        for (b, &j) in others.iter().enumerate() {
            hessian[(i, j)] = h_bb[(a, b)];
        }
        hessian[(i, ALPHA)] = slopes[a];
        hessian[(ALPHA, i)] = slopes[a];
    }
    hessian[(ALPHA, ALPHA)] = h_aa;
    to_covariance(&hessian)
}
