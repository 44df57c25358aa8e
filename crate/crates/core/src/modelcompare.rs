//! Likelihood-ratio tests for nested models and the Horowitz bound for
//! non-nested ones.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::likelihood::UtilitySpec;
use crate::transforms::TransformKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorowitzVariant {
    /// Adjusted rho-squared `1 - (L - K/2) / L0`, as in Horowitz (1983).
    #[default]
    Original,
    /// Adjusted rho-squared `1 - (L - K) / L0`, as in Ben-Akiva and Lerman (1985).
    BenAkivaLerman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    LikelihoodRatio,
    HorowitzOriginal,
    HorowitzBal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: TestMethod,
    /// `2 (ll_full - ll_restricted)`, or the adjusted rho-squared difference.
    pub statistic: f64,
    /// Chi-squared p-value, or the Horowitz upper bound.
    pub p_value: f64,
    /// Degrees of freedom, or `k_b - k_a`.
    pub df: i64,
}

/// Likelihood-ratio test of a restricted model against the full model.
///
/// Negative differences down to `-1e-9` are treated as zero.
pub fn lr_test(ll_restricted: f64, ll_full: f64, df: u32) -> Result<TestReport> {
    if df < 1 {
        return Err(Error::InvalidTest("degrees of freedom must be at least 1".into()));
    }
    if !ll_restricted.is_finite() || !ll_full.is_finite() {
        return Err(Error::InvalidTest("log-likelihoods must be finite".into()));
    }
    let diff = ll_full - ll_restricted;
    if diff < -1e-9 {
        return Err(Error::InvalidTest(format!(
            "full model fits worse than the restricted one ({ll_full} < {ll_restricted})"
        )));
    }
    let statistic = 2.0 * diff.max(0.0);
    let chi2 = ChiSquared::new(f64::from(df)).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(TestReport {
        method: TestMethod::LikelihoodRatio,
        statistic,
        p_value: chi2.sf(statistic).clamp(0.0, 1.0),
        df: i64::from(df),
    })
}

fn adjusted_rho_squared(ll: f64, k: usize, null_ll: f64, variant: HorowitzVariant) -> f64 {
    let penalty = match variant {
        HorowitzVariant::Original => k as f64 / 2.0,
        HorowitzVariant::BenAkivaLerman => k as f64,
    };
    1.0 - (ll - penalty) / null_ll
}

/// Upper bound on the probability that model A, the one with the lower
/// adjusted rho-squared, is the true model:
/// `Phi(-sqrt(-2 z L0 + (K_b - K_a)))` with `z` the adjusted rho-squared
/// difference. A negative argument under the root gives the trivial bound 1.
pub fn horowitz_test(
    ll_a: f64,
    k_a: usize,
    ll_b: f64,
    k_b: usize,
    null_ll: f64,
    variant: HorowitzVariant,
) -> Result<TestReport> {
    if !(null_ll < 0.0) {
        return Err(Error::InvalidTest(format!("null log-likelihood must be negative, got {null_ll}")));
    }
    if !ll_a.is_finite() || !ll_b.is_finite() {
        return Err(Error::InvalidTest("log-likelihoods must be finite".into()));
    }
    if ll_a < null_ll || ll_b < null_ll {
        return Err(Error::InvalidTest(
            "a model log-likelihood lies below the null log-likelihood".into(),
        ));
    }
    let z = adjusted_rho_squared(ll_b, k_b, null_ll, variant)
        - adjusted_rho_squared(ll_a, k_a, null_ll, variant);
    if z < 0.0 {
        return Err(Error::InvalidTest(format!(
            "model B has the lower adjusted rho-squared (difference {z:.6}); swap the models"
        )));
    }
    let dk = k_b as f64 - k_a as f64;
    let arg = -2.0 * z * null_ll + dk;
    let bound = if arg < 0.0 {
        1.0
    } else {
        Normal::standard().cdf(-arg.sqrt())
    };
    Ok(TestReport {
        method: match variant {
            HorowitzVariant::Original => TestMethod::HorowitzOriginal,
            HorowitzVariant::BenAkivaLerman => TestMethod::HorowitzBal,
        },
        statistic: z,
        p_value: bound,
        df: k_b as i64 - k_a as i64,
    })
}

/// Degrees of freedom of an LR test of `restricted` within `full`.
///
/// Accepted nestings: a Linear model inside an HTF, STF1, STF2 or Power model
/// with the same covariates (`alpha -> 0`, or `alpha = 1` for Power), and a
/// model inside one of the same transform kind that adds covariates or scale
/// groups.
pub fn nesting_df(restricted: &UtilitySpec, full: &UtilitySpec) -> Result<u32> {
    let covariates = |s: &UtilitySpec| {
        [
            s.use_headway,
            s.use_changes,
            s.use_income_elasticity,
            s.use_time_elasticity,
        ]
    };
    let subset = covariates(restricted)
        .iter()
        .zip(covariates(full))
        .all(|(&r, f)| !r || f);
    let same_normalization =
        restricted.income_mean == full.income_mean && restricted.time_mean == full.time_mean;

    let nested = match (restricted.kind(), full.kind()) {
        (TransformKind::Linear, TransformKind::Reverting) => false,
        (TransformKind::Linear, _) => subset,
        (r, f) if r == f => subset,
        _ => false,
    };
    let groups_ok = restricted.n_groups == full.n_groups || restricted.n_groups == 1;
    if !(nested && groups_ok && same_normalization) {
        return Err(Error::InvalidTest(format!(
            "a {} model is not nested in a {} model with these covariates; \
             use the Horowitz test for non-nested comparisons",
            restricted.kind(),
            full.kind()
        )));
    }
    let df = full.n_parameters().saturating_sub(restricted.n_parameters());
    if df == 0 {
        return Err(Error::InvalidTest(
            "the models have the same number of parameters; nothing to test".into(),
        ));
    }
    Ok(df as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::TransformSpec;

    #[test]
    fn lr_examples() {
        let r = lr_test(-687.064, -684.184, 1).unwrap();
        assert!((r.statistic - 5.76).abs() < 1e-9);
        assert!((r.p_value - 0.0164).abs() < 5e-4, "{}", r.p_value);
        let r = lr_test(-687.064, -684.651, 1).unwrap();
        assert!((r.statistic - 4.826).abs() < 1e-9);
        assert!((r.p_value - 0.028).abs() < 5e-4, "{}", r.p_value);
        let r = lr_test(-1787.714, -1779.042, 1).unwrap();
        assert!((r.statistic - 17.344).abs() < 1e-9);
        assert!((r.p_value - 3.1e-5).abs() < 1e-6, "{}", r.p_value);
    }

    #[test]
    fn lr_tail_matches_closed_forms() {
        // P(chi2_1 > 1) = P(|Z| > 1)
        let r = lr_test(-0.5, 0.0, 1).unwrap();
        assert!((r.p_value - (1.0 - 0.682_689_492_137_085_9)).abs() < 1e-12);
        // even df: exp(-s/2) * sum_{k < df/2} (s/2)^k / k!
        for df in [2u32, 4, 6, 8, 10] {
            for s in [0.3, 2.0, 7.5, 18.0] {
                let h = s / 2.0;
                let mut term = 1.0;
                let mut sum = 0.0;
                for k in 0..df / 2 {
                    if k > 0 {
                        term *= h / f64::from(k);
                    }
                    sum += term;
                }
                let expected = (-h).exp() * sum;
                let p = lr_test(-h, 0.0, df).unwrap().p_value;
                assert!((p - expected).abs() < 1e-12, "df {df} s {s}: {p} vs {expected}");
            }
        }
    }

    #[test]
    fn lr_edge_cases() {
        let r = lr_test(-10.0, -10.0, 1).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = lr_test(-10.0, -10.0 - 1e-10, 1).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(lr_test(-10.0, -11.0, 1).is_err());
        assert!(lr_test(-10.0, -9.0, 0).is_err());
    }

    #[test]
    fn horowitz_anchor() {
        for v in [HorowitzVariant::Original, HorowitzVariant::BenAkivaLerman] {
            let r = horowitz_test(-500.0, 3, -500.0, 3, -1000.0, v).unwrap();
            assert_eq!(r.statistic, 0.0);
            assert!((r.p_value - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn horowitz_equal_size_models() {
        // HTF (B) against STF1 (A), eight parameters each
        let r = horowitz_test(-684.651, 8, -684.184, 8, -1110.422, HorowitzVariant::Original)
            .unwrap();
        assert!(r.p_value > 0.05);
        let z = 0.467 / 1110.422;
        assert!((r.statistic - z).abs() < 1e-12);
        let expected = Normal::standard().cdf(-(2.0 * z * 1110.422f64).sqrt());
        assert!((r.p_value - expected).abs() < 1e-12);
        assert!((r.p_value - 0.167).abs() < 1e-3);
        assert!(horowitz_test(-684.184, 8, -684.651, 8, -1110.422, HorowitzVariant::Original).is_err());
    }

    #[test]
    fn horowitz_variants_differ_in_penalty() {
        let o = horowitz_test(-700.0, 2, -690.0, 4, -1000.0, HorowitzVariant::Original).unwrap();
        let b =
            horowitz_test(-700.0, 2, -690.0, 4, -1000.0, HorowitzVariant::BenAkivaLerman).unwrap();
        assert!((o.statistic - 9.0 / 1000.0).abs() < 1e-12);
        assert!((b.statistic - 8.0 / 1000.0).abs() < 1e-12);
        assert_eq!(o.method, TestMethod::HorowitzOriginal);
        assert_eq!(b.method, TestMethod::HorowitzBal);
        assert_eq!(o.df, 2);
    }

    #[test]
    fn horowitz_large_z_is_small() {
        let r = horowitz_test(-900.0, 3, -800.0, 3, -1000.0, HorowitzVariant::Original).unwrap();
        // Phi(-sqrt(200))
        assert!(r.p_value < 1e-3);
        assert!(horowitz_test(-900.0, 3, -800.0, 3, 0.0, HorowitzVariant::Original).is_err());
        assert!(horowitz_test(-1100.0, 3, -800.0, 3, -1000.0, HorowitzVariant::Original).is_err());
    }

    #[test]
    fn nesting_rules() {
        let lin = UtilitySpec::basic(TransformSpec::linear());
        let htf = UtilitySpec::of_kind(TransformKind::Htf);
        assert_eq!(nesting_df(&lin, &htf).unwrap(), 1);
        assert_eq!(nesting_df(&lin, &UtilitySpec::of_kind(TransformKind::Power)).unwrap(), 1);
        assert!(nesting_df(&htf, &UtilitySpec::of_kind(TransformKind::Stf1)).is_err());
        assert!(nesting_df(&lin, &UtilitySpec::of_kind(TransformKind::Reverting)).is_err());
        assert!(nesting_df(&htf, &lin).is_err());
        assert!(nesting_df(&lin, &lin).is_err());
        let full_lin = UtilitySpec::full(TransformSpec::linear(), 2);
        let full_htf = UtilitySpec::full(TransformSpec::new(TransformKind::Htf, 1.0).unwrap(), 2);
        assert_eq!(nesting_df(&full_lin, &full_htf).unwrap(), 1);
        assert_eq!(nesting_df(&htf, &full_htf).unwrap(), 5);
        assert!(nesting_df(&full_lin, &htf).is_err());
    }
}
