//! Synthetic choice data and Monte Carlo replication studies.
//!
//! Time and cost differences are uniform over their ranges and redrawn until
//! they have opposite signs, so no alternative dominates the other. The
//! choice follows `dV + eps > 0` with a standard logistic `eps`, drawn by
//! inverse CDF from a seeded ChaCha stream.

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{fit, ChoiceRecord, FitOptions, FitResult, UtilitySpec};
use crate::transforms::{value_unchecked, TransformKind, TransformSpec};

/// Covariates and coefficients of the stated-choice style generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedDgp {
    pub headway_range: (f64, f64),
    /// Inclusive integer range of the difference in number of changes.
    pub changes_range: (i32, i32),
    pub income_range: (f64, f64),
    pub trip_time_range: (f64, f64),
    pub beta_h: f64,
    pub beta_k: f64,
    pub lambda_i: f64,
    pub lambda_t: f64,
    /// Probability that a record belongs to group 1.
    pub group1_share: f64,
    /// Error scale of group 1 (group 0 is fixed at 1).
    pub group1_scale: f64,
}

impl Default for ExtendedDgp {
    fn default() -> Self {
        ExtendedDgp {
            headway_range: (-30.0, 30.0),
            changes_range: (-2, 2),
            income_range: (2000.0, 12000.0),
            trip_time_range: (15.0, 60.0),
            beta_h: -0.05,
            beta_k: -1.43,
            lambda_i: -0.25,
            lambda_t: -0.4,
            group1_share: 0.5,
            group1_scale: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_obs: usize,
    pub cost_range: (f64, f64),
    /// Minutes.
    pub time_range: (f64, f64),
    pub dgp_transform: TransformSpec,
    pub beta_t: f64,
    pub beta_c: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extended: Option<ExtendedDgp>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_obs: 5000,
            cost_range: (-10.0, 10.0),
            time_range: (-25.0, 25.0),
            dgp_transform: TransformSpec::new(TransformKind::Htf, 5.0).expect("valid"),
            beta_t: -0.1,
            beta_c: -0.6,
            seed: 1,
            extended: None,
        }
    }
}

impl SimConfig {
    /// Stated-choice style defaults: all covariates, two scale groups.
    pub fn stated_choice(n_obs: usize, seed: u64) -> Self {
        SimConfig {
            n_obs,
            cost_range: (-10.0, 10.0),
            time_range: (-45.0, 45.0),
            dgp_transform: TransformSpec::new(TransformKind::Stf2, 2.3).expect("valid"),
            beta_t: -0.152,
            beta_c: -0.286,
            seed,
            extended: Some(ExtendedDgp::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_obs == 0 {
            return bad("n_obs must be at least 1".into());
        }
        for (name, (lo, hi)) in [("cost_range", self.cost_range), ("time_range", self.time_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo < 0.0 && hi > 0.0) {
                return bad(format!(
                    "{name} must have a negative lower and a positive upper bound, got [{lo}, {hi}]"
                ));
            }
        }
        if !(self.beta_t.is_finite() && self.beta_c.is_finite()) {
            return bad("coefficients must be finite".into());
        }
        if let Some(ext) = &self.extended {
            let (hlo, hhi) = ext.headway_range;
            if !(hlo.is_finite() && hhi.is_finite() && hlo <= hhi) {
                return bad("headway_range must be an ordered finite interval".into());
            }
            if ext.changes_range.0 > ext.changes_range.1 {
                return bad("changes_range must be ordered".into());
            }
            for (name, (lo, hi)) in [
                ("income_range", ext.income_range),
                ("trip_time_range", ext.trip_time_range),
            ] {
                if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                    return bad(format!("{name} must be a positive ordered interval"));
                }
            }
            if !(0.0..=1.0).contains(&ext.group1_share) {
                return bad("group1_share must lie in [0, 1]".into());
            }
            if !(ext.group1_scale.is_finite() && ext.group1_scale > 0.0) {
                return bad("group1_scale must be positive".into());
            }
        }
        Ok(())
    }

    /// Utility spec matching the generator's terms, with the given transform.
    pub fn matching_spec(&self, transform: TransformSpec) -> UtilitySpec {
        match &self.extended {
            Some(_) => UtilitySpec::full(transform, 2),
            None => UtilitySpec::basic(transform),
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Standard logistic draw by inverse CDF.
fn logistic<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = Open01.sample(rng);
    u.ln() - (-u).ln_1p()
}

pub fn generate_dataset(config: &SimConfig) -> Result<Vec<ChoiceRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.n_obs);
    let mut errors = Vec::with_capacity(config.n_obs);

    for _ in 0..config.n_obs {
        // dominance exclusion; exact zeros count as non-mixed and are redrawn
        let (dt, dc) = loop {
            let dt = uniform(&mut rng, config.time_range);
            let dc = uniform(&mut rng, config.cost_range);
            if dt * dc < 0.0 {
                break (dt, dc);
            }
        };
        let mut record = ChoiceRecord::new(dt, dc, false);
        if let Some(ext) = &config.extended {
            record.dh = uniform(&mut rng, ext.headway_range);
            record.dk = f64::from(rng.random_range(ext.changes_range.0..=ext.changes_range.1));
            record.income = Some(uniform(&mut rng, ext.income_range));
            record.mean_trip_time = Some(uniform(&mut rng, ext.trip_time_range));
            record.group = u32::from(rng.random::<f64>() < ext.group1_share);
        }
        errors.push(logistic(&mut rng));
        records.push(record);
    }

    // normalizations are the sample means, as in estimation
    let n = records.len() as f64;
    let income_mean = records.iter().filter_map(|r| r.income).sum::<f64>() / n;
    let time_mean = records.iter().filter_map(|r| r.mean_trip_time).sum::<f64>() / n;
    let kind = config.dgp_transform.kind();
    let alpha = config.dgp_transform.alpha().unwrap_or(0.0);

    for (record, eps) in records.iter_mut().zip(errors) {
        let mut dv = config.beta_t * value_unchecked(kind, alpha, record.dt);
        match &config.extended {
            None => dv += config.beta_c * record.dc,
            Some(ext) => {
                let inc = record.income.unwrap() / income_mean;
                let time = record.mean_trip_time.unwrap() / time_mean;
                dv += config.beta_c
                    * record.dc
                    * inc.powf(ext.lambda_i)
                    * time.powf(ext.lambda_t)
                    + ext.beta_h * record.dh
                    + ext.beta_k * record.dk;
                if record.group == 1 {
                    dv *= ext.group1_scale;
                }
            }
        }
        record.chose_alt1 = dv + eps > 0.0;
    }
    Ok(records)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `run` in a study with master seed `master`.
pub fn derive_seed(master: u64, run: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(run.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation of the estimates across runs.
    pub empirical_sd: f64,
    /// Mean of the standard errors reported by the individual fits.
    pub mean_std_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub spec: UtilitySpec,
    pub parameters: Vec<ParameterSummary>,
    /// Runs whose fit converged and entered the summary.
    pub runs: usize,
    /// Runs that failed, did not converge or ended on a boundary.
    pub excluded: usize,
    /// Final log-likelihood per included run, in run order.
    pub log_likelihoods: Vec<f64>,
}

impl ReplicationSummary {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: usize,
    pub seed: u64,
    /// One entry per fitted spec, in the order given to the study.
    pub fits: Vec<std::result::Result<FitResult, String>>,
}

impl RunOutcome {
    /// The fit for spec `i` when it converged cleanly.
    pub fn usable(&self, i: usize) -> Option<&FitResult> {
        match &self.fits[i] {
            Ok(f) if f.converged && !f.boundary => Some(f),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub summaries: Vec<ReplicationSummary>,
    pub runs: Vec<RunOutcome>,
}

impl StudyResult {
    /// Mean of `ll[b] - ll[a]` over runs where both fits are usable.
    pub fn mean_ll_gap(&self, a: usize, b: usize) -> Option<f64> {
        let gaps: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| Some(r.usable(b)?.final_ll - r.usable(a)?.final_ll))
            .collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }
}

/// Generates `runs` datasets with seeds derived from `config.seed` and fits every spec to each.
pub fn replicate_study(
    config: &SimConfig,
    fit_specs: &[UtilitySpec],
    runs: usize,
    options: &FitOptions,
) -> Result<StudyResult> {
    let seeds: Vec<u64> = (0..runs as u64).map(|r| derive_seed(config.seed, r)).collect();
    replicate_with_seeds(config, fit_specs, &seeds, options)
}

/// As [`replicate_study`] with explicit per-run seeds.
pub fn replicate_with_seeds(
    config: &SimConfig,
    fit_specs: &[UtilitySpec],
    seeds: &[u64],
    options: &FitOptions,
) -> Result<StudyResult> {
    if seeds.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "a replication study needs at least 2 runs, got {}",
            seeds.len()
        )));
    }
    if fit_specs.is_empty() {
        return Err(Error::InvalidConfig("no specs to fit".into()));
    }
    config.validate()?;
    for spec in fit_specs {
        spec.validate()?;
    }

    let runs: Vec<RunOutcome> = seeds
        .par_iter()
        .enumerate()
        .map(|(run, &seed)| {
            let cfg = SimConfig {
                seed,
                ..config.clone()
            };
            let fits = match generate_dataset(&cfg) {
                Ok(data) => fit_specs
                    .iter()
                    .map(|spec| fit(&data, spec, options).map_err(|e| e.to_string()))
                    .collect(),
                Err(e) => fit_specs.iter().map(|_| Err(e.to_string())).collect(),
            };
            RunOutcome { run, seed, fits }
        })
        .collect();

    let summaries = fit_specs
        .iter()
        .enumerate()
        .map(|(i, spec)| summarize(spec, i, &runs))
        .collect();
    Ok(StudyResult { summaries, runs })
}

fn summarize(spec: &UtilitySpec, index: usize, runs: &[RunOutcome]) -> ReplicationSummary {
    let usable: Vec<&FitResult> = runs.iter().filter_map(|r| r.usable(index)).collect();
    let names = spec.parameter_names();
    let parameters = names
        .iter()
        .map(|name| {
            let values: Vec<f64> = usable.iter().filter_map(|f| f.estimate(name)).collect();
            let ses: Vec<f64> = usable.iter().filter_map(|f| f.std_error(name)).collect();
            let (mean, empirical_sd) = mean_sd(&values);
            ParameterSummary {
                name: name.clone(),
                mean,
                empirical_sd,
                mean_std_error: (!ses.is_empty()).then(|| ses.iter().sum::<f64>() / ses.len() as f64),
            }
        })
        .collect();
    ReplicationSummary {
        spec: spec.clone(),
        parameters,
        runs: usable.len(),
        excluded: runs.len() - usable.len(),
        log_likelihoods: usable.iter().map(|f| f.final_ll).collect(),
    }
}

/// Mean and sample standard deviation; NaN when undefined.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}
