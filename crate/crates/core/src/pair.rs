//! Two-measurement scenarios described by three cosines and six densities.

use crate::density::BreakDensity;
use crate::error::Result;
use crate::geometry::ScenarioGeometry;
use crate::measurement::{ConditionalDensityMap, DichotomicMeasurement, Scenario};

/// The six densities of an A/B pair: each measurement on the initial state
/// and after either outcome of the other one.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDensities {
    pub a_initial: BreakDensity,
    pub b_initial: BreakDensity,
    pub b_after_a_yes: BreakDensity,
    pub b_after_a_no: BreakDensity,
    pub a_after_b_yes: BreakDensity,
    pub a_after_b_no: BreakDensity,
}

impl PairDensities {
    pub fn uniform() -> Self {
        PairDensities {
            a_initial: BreakDensity::Uniform,
            b_initial: BreakDensity::Uniform,
            b_after_a_yes: BreakDensity::Uniform,
            b_after_a_no: BreakDensity::Uniform,
            a_after_b_yes: BreakDensity::Uniform,
            a_after_b_no: BreakDensity::Uniform,
        }
    }
}

impl Default for PairDensities {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Realizes `geometry` on the sphere and attaches the densities to
/// measurements named `a_id` and `b_id`.
pub fn pair_scenario(
    geometry: &ScenarioGeometry,
    densities: &PairDensities,
    a_id: &str,
    b_id: &str,
) -> Result<Scenario> {
    let (state, a_axis, b_axis) = geometry.realize();
    let a_map = ConditionalDensityMap::initial_only(densities.a_initial.clone())
        .with(format!("{b_id}:yes"), densities.a_after_b_yes.clone())?
        .with(format!("{b_id}:no"), densities.a_after_b_no.clone())?;
    let b_map = ConditionalDensityMap::initial_only(densities.b_initial.clone())
        .with(format!("{a_id}:yes"), densities.b_after_a_yes.clone())?
        .with(format!("{a_id}:no"), densities.b_after_a_no.clone())?;
    Scenario::new(
        state,
        vec![
            DichotomicMeasurement::new(a_id, a_axis, a_map)?,
            DichotomicMeasurement::new(b_id, b_axis, b_map)?,
        ],
    )
}
