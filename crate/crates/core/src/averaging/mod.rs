//! Action-angle charts, torus averages, the averaged slow system and the
//! ε-sweep that compares it with the perturbed fast system.

mod chart;
mod ergodic;
mod experiment;
mod perturbation;

pub use chart::{torus_average, ActionAngleChart};
pub use ergodic::{
    analytic_ergodic_moment, analytic_l2_deviation, cos_squared_angle, ergodic_average,
    ergodic_study, time_averages, ErgodicEstimate, ErgodicStudy, ErgodicWindow,
};
pub use experiment::{
    averaged_rhs, fit_trend, run_averaging_experiment, solve_averaged, AveragedPath,
    AveragingParams, AveragingReport, AveragingRow, AveragingTrend,
};
pub use perturbation::{
    check_perturbation, ChannelSpec, DriftSpec, PerturbationFields, PerturbationReport,
    PerturbationSpec,
};
