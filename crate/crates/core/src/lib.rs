//! Tension-reduction model of dichotomic sequential measurements.
//!
//! A state is a point on the unit sphere and a measurement is an elastic
//! stretched between two antipodal anchors. The elastic breaks at a random
//! point drawn from a break density; the state is carried to whichever anchor
//! it remains attached to. Uniform break densities reproduce the Born rule;
//! other densities produce order effects and other non-Hilbertian statistics.

pub mod density;
pub mod document;
pub mod effects;
pub mod ensemble;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod measurement;
pub mod montecarlo;
pub mod optim;
pub mod pair;
pub mod sequential;

#[cfg(test)]
mod testing;

pub use density::{BreakDensity, PiecewiseConstant};
pub use document::{normalized_document, parse_scenario, ScenarioDraft};
pub use effects::{analytic_effects, empirical_effects, qq_value, EffectsReport};
pub use ensemble::{universal_average_probability, EnsembleConfig};
pub use error::{GtrError, Result};
pub use fitting::{fit, loss, FitProblem, FitResult, FitSpec};
pub use geometry::{gram_realizable, landing_coordinate, MeasurementAxis, ScenarioGeometry, UnitVector3};
pub use measurement::{
    born_probabilities, outcome_probabilities, post_state, Answer, ConditionalDensityMap, DichotomicMeasurement,
    OutcomeLabel, Scenario, INITIAL_CONTEXT,
};
pub use montecarlo::{simulate_sequence, EmpiricalTable, Estimate, RunConfig};
pub use pair::{pair_scenario, PairDensities};
pub use sequential::{conditional_probabilities, sequence_distribution, ProbabilityTable, SequenceSpec};
