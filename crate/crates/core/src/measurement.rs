//! Single dichotomic measurements.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::density::BreakDensity;
use crate::error::{GtrError, Result};
use crate::geometry::{landing_coordinate, MeasurementAxis, UnitVector3};

/// Context key used before any measurement has been performed.
pub const INITIAL_CONTEXT: &str = "initial";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub const BOTH: [Answer; 2] = [Answer::Yes, Answer::No];

    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Yes => "yes",
            Answer::No => "no",
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Answer {
    type Err = GtrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yes" => Ok(Answer::Yes),
            "no" => Ok(Answer::No),
            other => Err(GtrError::construction(format!(
                "answer must be yes or no, got {other:?}"
            ))),
        }
    }
}

/// An outcome of a named measurement, rendered as `"A:yes"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OutcomeLabel {
    measurement_id: String,
    answer: Answer,
}

impl OutcomeLabel {
    pub fn new(measurement_id: impl Into<String>, answer: Answer) -> Result<Self> {
        let measurement_id = measurement_id.into();
        if measurement_id.is_empty() {
            return Err(GtrError::construction("measurement id must be nonempty"));
        }
        Ok(OutcomeLabel { measurement_id, answer })
    }

    pub fn measurement_id(&self) -> &str {
        &self.measurement_id
    }

    pub fn answer(&self) -> Answer {
        self.answer
    }

    /// The key under which densities conditioned on this outcome are stored.
    pub fn context_key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.measurement_id, self.answer)
    }
}

impl FromStr for OutcomeLabel {
    type Err = GtrError;

    fn from_str(s: &str) -> Result<Self> {
        let (id, answer) = s
            .rsplit_once(':')
            .ok_or_else(|| GtrError::construction(format!("outcome {s:?} is not of the form id:answer")))?;
        OutcomeLabel::new(id, answer.parse()?)
    }
}

/// Break densities keyed by the context they are actualized in: `"initial"`
/// or the preceding outcome (`"A:yes"`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, BreakDensity>", into = "BTreeMap<String, BreakDensity>")]
pub struct ConditionalDensityMap {
    entries: BTreeMap<String, BreakDensity>,
}

impl ConditionalDensityMap {
    pub fn new(entries: BTreeMap<String, BreakDensity>) -> Result<Self> {
        if !entries.contains_key(INITIAL_CONTEXT) {
            return Err(GtrError::construction("density map requires an \"initial\" entry"));
        }
        for key in entries.keys() {
            if key != INITIAL_CONTEXT {
                key.parse::<OutcomeLabel>()?;
            }
        }
        Ok(ConditionalDensityMap { entries })
    }

    /// A map holding the same density for the initial context only.
    pub fn initial_only(density: BreakDensity) -> Self {
        ConditionalDensityMap {
            entries: BTreeMap::from([(INITIAL_CONTEXT.to_string(), density)]),
        }
    }

    pub fn with(mut self, key: impl Into<String>, density: BreakDensity) -> Result<Self> {
        let key = key.into();
        if key != INITIAL_CONTEXT {
            key.parse::<OutcomeLabel>()?;
        }
        self.entries.insert(key, density);
        Ok(self)
    }

    pub fn get(&self, key: &str) -> Option<&BreakDensity> {
        self.entries.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut BreakDensity> {
        self.entries.get_mut(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BreakDensity)> {
        self.entries.iter()
    }
}

impl TryFrom<BTreeMap<String, BreakDensity>> for ConditionalDensityMap {
    type Error = GtrError;

    fn try_from(entries: BTreeMap<String, BreakDensity>) -> Result<Self> {
        ConditionalDensityMap::new(entries)
    }
}

impl From<ConditionalDensityMap> for BTreeMap<String, BreakDensity> {
    fn from(m: ConditionalDensityMap) -> Self {
        m.entries
    }
}

/// A measurement elastic stretched along `axis`, breaking according to the
/// density of the context it is performed in.
#[derive(Debug, Clone, PartialEq)]
pub struct DichotomicMeasurement {
    id: String,
    axis: MeasurementAxis,
    densities: ConditionalDensityMap,
}

impl DichotomicMeasurement {
    pub fn new(id: impl Into<String>, axis: MeasurementAxis, densities: ConditionalDensityMap) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.contains(':') || id.contains(',') {
            return Err(GtrError::construction(format!(
                "measurement id {id:?} must be nonempty and free of ':' and ','"
            )));
        }
        Ok(DichotomicMeasurement { id, axis, densities })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn axis(&self) -> &MeasurementAxis {
        &self.axis
    }

    pub fn densities(&self) -> &ConditionalDensityMap {
        &self.densities
    }

    pub fn densities_mut(&mut self) -> &mut ConditionalDensityMap {
        &mut self.densities
    }
}

/// An initial state together with the measurements that can be performed on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    initial_state: UnitVector3,
    measurements: Vec<DichotomicMeasurement>,
    default_to_initial: bool,
}

impl Scenario {
    pub fn new(initial_state: UnitVector3, measurements: Vec<DichotomicMeasurement>) -> Result<Self> {
        if measurements.is_empty() {
            return Err(GtrError::construction("a scenario needs at least one measurement"));
        }
        let mut seen = HashSet::new();
        for m in &measurements {
            if !seen.insert(m.id()) {
                return Err(GtrError::construction(format!("duplicate measurement id {:?}", m.id())));
            }
        }
        Ok(Scenario {
            initial_state,
            measurements,
            default_to_initial: false,
        })
    }

    /// Lets lookups of absent conditional contexts fall back to `"initial"`.
    pub fn with_default_to_initial(mut self, enabled: bool) -> Self {
        self.default_to_initial = enabled;
        self
    }

    pub fn initial_state(&self) -> &UnitVector3 {
        &self.initial_state
    }

    pub fn measurements(&self) -> &[DichotomicMeasurement] {
        &self.measurements
    }

    pub fn default_to_initial(&self) -> bool {
        self.default_to_initial
    }

    pub fn measurement(&self, id: &str) -> Result<&DichotomicMeasurement> {
        self.measurements
            .iter()
            .find(|m| m.id() == id)
            .ok_or_else(|| GtrError::lookup(format!("measurement {id}")))
    }

    /// The context key under which `m` is evaluated, honouring the
    /// fallback flag. `None` if unresolvable.
    pub fn resolve_context<'a>(&self, m: &DichotomicMeasurement, key: &'a str) -> Option<&'a str> {
        if m.densities().contains(key) {
            Some(key)
        } else if self.default_to_initial {
            Some(INITIAL_CONTEXT)
        } else {
            None
        }
    }
}

/// Probabilities of "yes" and "no" for measuring `m` on `state`, using the
/// density stored under `context_key`.
///
/// The elastic breaks at λ; the outcome is "yes" when λ falls below the
/// landing coordinate, so `p_yes` is the mass of [-1, c].
pub fn outcome_probabilities(state: &UnitVector3, m: &DichotomicMeasurement, context_key: &str) -> Result<(f64, f64)> {
    let density = m
        .densities()
        .get(context_key)
        .ok_or_else(|| GtrError::lookup(format!("{}[{}]", m.id(), context_key)))?;
    let c = landing_coordinate(state, m.axis());
    Ok(split_at(density, c))
}

pub(crate) fn split_at(density: &BreakDensity, c: f64) -> (f64, f64) {
    let below = density.cdf_unchecked(c);
    let above = density.cdf_unchecked(1.0) - below;
    (below, above.clamp(0.0, 1.0))
}

/// The uniform-density special case: `((1 + cos)/2, (1 - cos)/2)`.
pub fn born_probabilities(cos_theta: f64) -> Result<(f64, f64)> {
    if !(-1.0..=1.0).contains(&cos_theta) {
        return Err(GtrError::domain(format!("cos_theta = {cos_theta} is outside [-1, 1]")));
    }
    Ok(((1.0 + cos_theta) / 2.0, (1.0 - cos_theta) / 2.0))
}

/// Position of the state after `m` answered `answer`: the corresponding anchor.
pub fn post_state(m: &DichotomicMeasurement, answer: Answer) -> UnitVector3 {
    match answer {
        Answer::Yes => m.axis().yes_anchor(),
        Answer::No => m.axis().no_anchor(),
    }
}
