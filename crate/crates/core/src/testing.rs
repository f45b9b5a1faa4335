use crate::density::BreakDensity;
use crate::geometry::ScenarioGeometry;
use crate::measurement::Scenario;
use crate::pair::{pair_scenario, PairDensities};

pub(crate) fn uniform_pair_scenario(ca: f64, cb: f64, c: f64) -> Scenario {
    let g = ScenarioGeometry::new(ca, cb, c).unwrap();
    pair_scenario(&g, &PairDensities::uniform(), "A", "B").unwrap()
}

/// B after A:yes breaks by a two-cell density; everything else uniform.
/// Its QQ value is 0.05.
pub(crate) fn q_scenario() -> Scenario {
    let g = ScenarioGeometry::new(0.0, 0.0, 0.5).unwrap();
    let densities = PairDensities {
        b_after_a_yes: BreakDensity::piecewise(vec![-1.0, 0.0, 1.0], vec![0.7, 0.3]).unwrap(),
        ..PairDensities::uniform()
    };
    pair_scenario(&g, &densities, "A", "B").unwrap()
}
