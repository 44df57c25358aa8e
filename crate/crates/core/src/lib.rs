//! Binary logit models with threshold transformations of travel time
//! differences, values of travel time savings and model comparison tests.

pub mod error;
pub mod io;
pub mod likelihood;
pub mod modelcompare;
pub mod optimize;
pub mod synthetic;
pub mod transforms;
pub mod wtp;

pub use error::{Error, Result};
pub use likelihood::{
    choice_probability, fit, log_likelihood, log_likelihood_gradient, scaled_utility,
    systematic_utility, wald_test, ChoiceRecord, FitOptions, FitResult, ParameterSet, UtilitySpec,
};
pub use transforms::{eval_transform, transform_gradient, TransformKind, TransformSpec};
