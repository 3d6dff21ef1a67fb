//! Incidence-based healthy life expectancy from ordered-probit transition
//! models, with joint least-squares alignment of the annual transition
//! matrices to an exogenous life table.
//!
//! The pipeline: [`probit`] turns coefficients into 100 annual matrices,
//! [`multistate`] propagates cohorts through them, [`alignment`] adjusts the
//! matrices so the implied survival curve matches a [`lifetable`], and
//! [`sullivan`] and [`simcheck`] provide a prevalence-based baseline and a
//! Monte Carlo cross-check.

pub mod alignment;
pub mod error;
pub mod lifetable;
pub mod matrix;
pub mod multistate;
pub mod normal;
pub mod probit;
pub mod simcheck;
pub mod sullivan;

pub use alignment::{align, AlignOptions, Alignment, AlignmentReport, StackedVector};
pub use error::{Error, Result};
pub use lifetable::{load_life_table, LifeTable};
pub use matrix::TransitionMatrix;
pub use multistate::{CohortVector, HealthExpectancy};
pub use normal::standard_normal_cdf;
pub use probit::{Covariates, Gender, HealthMeasure, ProbitCoefficientSet, ProbitEquation};
