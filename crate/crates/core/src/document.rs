//! Scenario documents: JSON in, validated scenarios out.
//!
//! Parsing walks a `serde_json::Value` by hand so that every diagnostic names
//! the JSON path of the offending value, e.g.
//! `measurements[0].densities.initial.weights`.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::density::BreakDensity;
use crate::error::{GtrError, Result};
use crate::geometry::{gram_violation, MeasurementAxis, ScenarioGeometry, UnitVector3};
use crate::measurement::{ConditionalDensityMap, DichotomicMeasurement, OutcomeLabel, Scenario, INITIAL_CONTEXT};

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// A dotted/indexed location inside a JSON document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JsonPath(String);

impl JsonPath {
    pub fn root() -> Self {
        JsonPath(String::new())
    }

    pub fn key(&self, key: &str) -> Self {
        if self.0.is_empty() {
            JsonPath(key.to_string())
        } else {
            JsonPath(format!("{}.{key}", self.0))
        }
    }

    pub fn index(&self, i: usize) -> Self {
        JsonPath(format!("{}[{i}]", self.0))
    }

    pub fn error(&self, message: impl Into<String>) -> GtrError {
        let path = if self.0.is_empty() {
            "$".to_string()
        } else {
            self.0.clone()
        };
        GtrError::validation(path, message)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub(crate) fn object<'a>(v: &'a Value, path: &JsonPath) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| path.error("expected an object"))
}

pub(crate) fn only_keys(map: &Map<String, Value>, allowed: &[&str], path: &JsonPath) -> Result<()> {
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(path
            .key(k)
            .error(format!("unknown field (expected one of: {})", allowed.join(", ")))),
        None => Ok(()),
    }
}

pub(crate) fn required<'a>(map: &'a Map<String, Value>, key: &str, path: &JsonPath) -> Result<&'a Value> {
    map.get(key)
        .ok_or_else(|| path.key(key).error("missing required field"))
}

pub(crate) fn number(v: &Value, path: &JsonPath) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| path.error("expected a finite number"))
}

pub(crate) fn unsigned(v: &Value, path: &JsonPath) -> Result<u64> {
    v.as_u64().ok_or_else(|| path.error("expected a nonnegative integer"))
}

pub(crate) fn string<'a>(v: &'a Value, path: &JsonPath) -> Result<&'a str> {
    v.as_str().ok_or_else(|| path.error("expected a string"))
}

pub(crate) fn numbers(v: &Value, path: &JsonPath) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| path.error("expected an array of numbers"))?;
    arr.iter().enumerate().map(|(i, x)| number(x, &path.index(i))).collect()
}

fn parse_vector(v: &Value, path: &JsonPath) -> Result<UnitVector3> {
    let map = object(v, path)?;
    only_keys(map, &["vector"], path)?;
    let p = path.key("vector");
    let xs = numbers(required(map, "vector", path)?, &p)?;
    if xs.len() != 3 {
        return Err(p.error(format!("expected 3 components, got {}", xs.len())));
    }
    UnitVector3::normalize(xs[0], xs[1], xs[2]).map_err(|e| p.error(e.to_string()))
}

fn parse_cosines(v: &Value, path: &JsonPath) -> Result<ScenarioGeometry> {
    let map = object(v, path)?;
    let names = ["cos_theta_A", "cos_theta_B", "cos_theta"];
    only_keys(map, &names, path)?;
    let mut values = [0.0; 3];
    for (slot, name) in values.iter_mut().zip(names) {
        let p = path.key(name);
        *slot = number(required(map, name, path)?, &p)?;
        if !(-1.0..=1.0).contains(slot) {
            return Err(p.error(format!("{slot} is outside [-1, 1]")));
        }
    }
    ScenarioGeometry::new(values[0], values[1], values[2]).map_err(|_| {
        path.error(format!(
            "cosines are not realizable by unit vectors (Gram matrix violation {:.3e})",
            gram_violation(values[0], values[1], values[2])
        ))
    })
}

/// Parses the JSON density encoding at `path`.
pub fn parse_density(v: &Value, path: &JsonPath) -> Result<BreakDensity> {
    let map = object(v, path)?;
    let kind = string(required(map, "kind", path)?, &path.key("kind"))?;
    match kind {
        "uniform" => {
            only_keys(map, &["kind"], path)?;
            Ok(BreakDensity::Uniform)
        }
        "locally_uniform" => {
            only_keys(map, &["kind", "center", "half_width"], path)?;
            let center = number(required(map, "center", path)?, &path.key("center"))?;
            let hw_path = path.key("half_width");
            let half_width = number(required(map, "half_width", path)?, &hw_path)?;
            if !(-1.0 < center && center < 1.0) {
                return Err(path.key("center").error("center must lie strictly inside (-1, 1)"));
            }
            if half_width <= 0.0 {
                return Err(hw_path.error("half_width must be positive"));
            }
            BreakDensity::locally_uniform(center, half_width).map_err(|e| hw_path.error(e.to_string()))
        }
        "piecewise" => {
            only_keys(map, &["kind", "breakpoints", "weights"], path)?;
            let bp_path = path.key("breakpoints");
            let w_path = path.key("weights");
            let breakpoints = numbers(required(map, "breakpoints", path)?, &bp_path)?;
            let weights = numbers(required(map, "weights", path)?, &w_path)?;
            if breakpoints.len() < 2 || breakpoints[0] != -1.0 || breakpoints[breakpoints.len() - 1] != 1.0 {
                return Err(bp_path.error("breakpoints must start at -1 and end at 1"));
            }
            if let Some(i) = breakpoints.windows(2).position(|w| w[0] >= w[1]) {
                return Err(bp_path.index(i + 1).error("breakpoints must be strictly increasing"));
            }
            if weights.len() + 1 != breakpoints.len() {
                return Err(w_path.error(format!(
                    "expected {} weights for {} breakpoints, got {}",
                    breakpoints.len() - 1,
                    breakpoints.len(),
                    weights.len()
                )));
            }
            if let Some(i) = weights.iter().position(|w| *w < 0.0) {
                return Err(w_path.index(i).error("weights must be nonnegative"));
            }
            let total: f64 = weights.iter().sum();
            if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(w_path.error(format!("weights sum to {total}, expected 1")));
            }
            BreakDensity::piecewise(breakpoints, weights).map_err(|e| path.error(e.to_string()))
        }
        other => Err(path.key("kind").error(format!(
            "unknown density kind {other:?} (expected uniform, locally_uniform or piecewise)"
        ))),
    }
}

/// How the initial state and axes are given.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Vector(UnitVector3),
    /// Two measurements whose axes follow from the cosines; the first listed
    /// is A, the second B.
    Cosines(ScenarioGeometry),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementDraft {
    pub id: String,
    pub axis: Option<UnitVector3>,
    pub densities: ConditionalDensityMap,
}

/// A parsed but not yet realized scenario document.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDraft {
    pub initial: InitialSpec,
    pub measurements: Vec<MeasurementDraft>,
    pub default_to_initial: bool,
}

impl std::str::FromStr for ScenarioDraft {
    type Err = GtrError;

    fn from_str(text: &str) -> Result<Self> {
        let v: Value =
            serde_json::from_str(text).map_err(|e| GtrError::validation("$", format!("invalid JSON: {e}")))?;
        Self::from_json(&v)
    }
}

impl ScenarioDraft {
    pub fn from_json(v: &Value) -> Result<Self> {
        Self::parse(v, &JsonPath::root())
    }

    pub(crate) fn parse(v: &Value, path: &JsonPath) -> Result<Self> {
        let root = object(v, path)?;
        only_keys(root, &["initial_state", "measurements", "default_to_initial"], path)?;

        let init_path = path.key("initial_state");
        let init = object(required(root, "initial_state", path)?, &init_path)?;
        let initial = match (init.get("vector"), init.get("cosines")) {
            (Some(_), None) => InitialSpec::Vector(parse_vector(&Value::Object(init.clone()), &init_path)?),
            (None, Some(c)) => {
                only_keys(init, &["cosines"], &init_path)?;
                InitialSpec::Cosines(parse_cosines(c, &init_path.key("cosines"))?)
            }
            _ => return Err(init_path.error("expected exactly one of \"vector\" or \"cosines\"")),
        };

        let default_to_initial = match root.get("default_to_initial") {
            None => false,
            Some(b) => b
                .as_bool()
                .ok_or_else(|| path.key("default_to_initial").error("expected a boolean"))?,
        };

        let m_path = path.key("measurements");
        let list = required(root, "measurements", path)?
            .as_array()
            .ok_or_else(|| m_path.error("expected an array"))?;
        if list.is_empty() {
            return Err(m_path.error("at least one measurement is required"));
        }
        let mut ids = Vec::with_capacity(list.len());
        for (i, m) in list.iter().enumerate() {
            let p = m_path.index(i);
            let map = object(m, &p)?;
            let id = string(required(map, "id", &p)?, &p.key("id"))?;
            if id.is_empty() || id.contains(':') || id.contains(',') {
                return Err(p.key("id").error("id must be nonempty and free of ':' and ','"));
            }
            if ids.contains(&id) {
                return Err(p.key("id").error(format!("duplicate measurement id {id:?}")));
            }
            ids.push(id);
        }
        let known: HashSet<&str> = ids.iter().copied().collect();

        let mut measurements = Vec::with_capacity(list.len());
        for (i, m) in list.iter().enumerate() {
            let p = m_path.index(i);
            let map = object(m, &p)?;
            only_keys(map, &["id", "axis", "densities"], &p)?;
            let axis = match map.get("axis") {
                Some(a) => Some(parse_vector(a, &p.key("axis"))?),
                None => None,
            };
            let d_path = p.key("densities");
            let d_map = object(required(map, "densities", &p)?, &d_path)?;
            let mut entries = BTreeMap::new();
            for (key, value) in d_map {
                let k_path = d_path.key(key);
                if key != INITIAL_CONTEXT {
                    let label: OutcomeLabel = key
                        .parse()
                        .map_err(|_| k_path.error("context key must be \"initial\" or \"<measurement id>:yes|no\""))?;
                    if !known.contains(label.measurement_id()) {
                        return Err(k_path.error(format!("unknown measurement {:?}", label.measurement_id())));
                    }
                }
                entries.insert(key.clone(), parse_density(value, &k_path)?);
            }
            if !entries.contains_key(INITIAL_CONTEXT) {
                return Err(d_path.key(INITIAL_CONTEXT).error("missing required density"));
            }
            let densities = ConditionalDensityMap::new(entries).map_err(|e| d_path.error(e.to_string()))?;
            measurements.push(MeasurementDraft {
                id: ids[i].to_string(),
                axis,
                densities,
            });
        }

        match &initial {
            InitialSpec::Vector(_) => {
                if let Some(i) = measurements.iter().position(|m| m.axis.is_none()) {
                    return Err(m_path
                        .index(i)
                        .key("axis")
                        .error("missing axis (required with a vector initial state)"));
                }
            }
            InitialSpec::Cosines(_) => {
                if measurements.len() != 2 {
                    return Err(m_path.error("a cosine initial state describes exactly two measurements"));
                }
                if let Some(i) = measurements.iter().position(|m| m.axis.is_some()) {
                    return Err(m_path
                        .index(i)
                        .key("axis")
                        .error("axes are implied by the cosines and must be omitted"));
                }
            }
        }

        Ok(ScenarioDraft {
            initial,
            measurements,
            default_to_initial,
        })
    }

    pub fn geometry(&self) -> Option<&ScenarioGeometry> {
        match &self.initial {
            InitialSpec::Cosines(g) => Some(g),
            InitialSpec::Vector(_) => None,
        }
    }

    pub fn measurement_mut(&mut self, id: &str) -> Option<&mut MeasurementDraft> {
        self.measurements.iter_mut().find(|m| m.id == id)
    }

    /// Realizes the draft on the sphere.
    pub fn build(&self) -> Result<Scenario> {
        let (state, axes): (UnitVector3, Vec<UnitVector3>) = match &self.initial {
            InitialSpec::Vector(v) => (
                *v,
                self.measurements
                    .iter()
                    .map(|m| {
                        m.axis
                            .ok_or_else(|| GtrError::structural(format!("measurement {} has no axis", m.id)))
                    })
                    .collect::<Result<_>>()?,
            ),
            InitialSpec::Cosines(g) => {
                let (s, a, b) = g.realize();
                (s, vec![a.yes_anchor(), b.yes_anchor()])
            }
        };
        let measurements = self
            .measurements
            .iter()
            .zip(axes)
            .map(|(m, axis)| DichotomicMeasurement::new(m.id.clone(), MeasurementAxis::new(axis), m.densities.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario::new(state, measurements)?.with_default_to_initial(self.default_to_initial))
    }
}

/// Parses and realizes a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    text.parse::<ScenarioDraft>()?.build()
}

#[derive(Serialize)]
struct VectorRepr {
    vector: [f64; 3],
}

#[derive(Serialize)]
struct MeasurementRepr<'a> {
    id: &'a str,
    axis: VectorRepr,
    densities: &'a ConditionalDensityMap,
}

#[derive(Serialize)]
struct ScenarioRepr<'a> {
    initial_state: VectorRepr,
    measurements: Vec<MeasurementRepr<'a>>,
    default_to_initial: bool,
}

/// The normalized document of a scenario: explicit vectors throughout.
pub fn normalized_document(scenario: &Scenario) -> Value {
    let repr = ScenarioRepr {
        initial_state: VectorRepr {
            vector: scenario.initial_state().components(),
        },
        measurements: scenario
            .measurements()
            .iter()
            .map(|m| MeasurementRepr {
                id: m.id(),
                axis: VectorRepr {
                    vector: m.axis().yes_anchor().components(),
                },
                densities: m.densities(),
            })
            .collect(),
        default_to_initial: scenario.default_to_initial(),
    };
    serde_json::to_value(repr).expect("scenario serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn cosine_doc() -> Value {
        json!({
            "initial_state": {"cosines": {"cos_theta_A": 0.0, "cos_theta_B": 0.0, "cos_theta": 0.5}},
            "measurements": [
                {"id": "A", "densities": {
                    "initial": {"kind": "uniform"},
                    "B:yes": {"kind": "uniform"},
                    "B:no": {"kind": "uniform"}}},
                {"id": "B", "densities": {
                    "initial": {"kind": "uniform"},
                    "A:yes": {"kind": "piecewise", "breakpoints": [-1, 0, 1], "weights": [0.7, 0.3]},
                    "A:no": {"kind": "uniform"}}}
            ]
        })
    }

    fn path_of(err: GtrError) -> String {
        match err {
            GtrError::Validation { path, .. } => path,
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn parses_cosine_documents() {
        let s = ScenarioDraft::from_json(&cosine_doc()).unwrap().build().unwrap();
        assert_eq!(s.measurements().len(), 2);
        assert!(!s.default_to_initial());
        let g = ScenarioGeometry::from_vectors(
            s.initial_state(),
            s.measurements()[0].axis(),
            s.measurements()[1].axis(),
        );
        assert!((g.cos_theta - 0.5).abs() < 1e-12 && g.cos_theta_a.abs() < 1e-12);
    }

    #[test]
    fn bad_weights_point_at_their_path() {
        let mut doc = cosine_doc();
        doc["measurements"][0]["densities"]["initial"] =
            json!({"kind": "piecewise", "breakpoints": [-1, 0, 1], "weights": [0.6, 0.3]});
        let err = ScenarioDraft::from_json(&doc).unwrap_err();
        assert_eq!(path_of(err), "measurements[0].densities.initial.weights");
    }

    #[test]
    fn diagnostics_name_paths() {
        type Edit = Box<dyn Fn(&mut Value)>;
        let cases: Vec<(Edit, &str)> = vec![
            (
                Box::new(|d| d["initial_state"]["cosines"]["cos_theta"] = json!(1.5)),
                "initial_state.cosines.cos_theta",
            ),
            (
                Box::new(|d| {
                    d["initial_state"]["cosines"] = json!({"cos_theta_A": 0.9, "cos_theta_B": -0.9, "cos_theta": 0.9})
                }),
                "initial_state.cosines",
            ),
            (
                Box::new(|d| d["measurements"][1]["id"] = json!("A")),
                "measurements[1].id",
            ),
            (
                Box::new(|d| d["measurements"][1]["densities"]["A:maybe"] = json!({"kind": "uniform"})),
                "measurements[1].densities.A:maybe",
            ),
            (
                Box::new(|d| d["measurements"][1]["densities"]["C:yes"] = json!({"kind": "uniform"})),
                "measurements[1].densities.C:yes",
            ),
            (
                Box::new(|d| d["measurements"][0]["densities"]["initial"] = json!({"kind": "gaussian"})),
                "measurements[0].densities.initial.kind",
            ),
            (
                Box::new(|d| {
                    d["measurements"][0]["densities"]["initial"] =
                        json!({"kind": "locally_uniform", "center": 0.9, "half_width": 0.2})
                }),
                "measurements[0].densities.initial.half_width",
            ),
            (
                Box::new(|d| {
                    d["measurements"][0]["densities"]["initial"] =
                        json!({"kind": "piecewise", "breakpoints": [-1, 0.5, 0.2, 1], "weights": [0.3, 0.3, 0.4]})
                }),
                "measurements[0].densities.initial.breakpoints[2]",
            ),
            (
                Box::new(|d| {
                    d["measurements"][0]["densities"]
                        .as_object_mut()
                        .unwrap()
                        .remove("initial");
                }),
                "measurements[0].densities.initial",
            ),
            (
                Box::new(|d| d["measurements"][0]["axis"] = json!({"vector": [0, 0, 1]})),
                "measurements[0].axis",
            ),
            (Box::new(|d| d["extra"] = json!(1)), "extra"),
            (Box::new(|d| d["measurements"] = json!([])), "measurements"),
        ];
        for (mutate, want) in cases {
            let mut doc = cosine_doc();
            mutate(&mut doc);
            assert_eq!(path_of(ScenarioDraft::from_json(&doc).unwrap_err()), want);
        }
    }

    #[test]
    fn vector_documents_need_axes() {
        let doc = json!({
            "initial_state": {"vector": [0, 0, 2]},
            "measurements": [{"id": "A", "densities": {"initial": {"kind": "uniform"}}}]
        });
        assert_eq!(
            path_of(ScenarioDraft::from_json(&doc).unwrap_err()),
            "measurements[0].axis"
        );
        let zero = json!({
            "initial_state": {"vector": [0, 0, 0]},
            "measurements": [{"id": "A", "axis": {"vector": [1, 0, 0]}, "densities": {"initial": {"kind": "uniform"}}}]
        });
        assert_eq!(
            path_of(ScenarioDraft::from_json(&zero).unwrap_err()),
            "initial_state.vector"
        );
    }

    #[test]
    fn normalized_output_reparses_identically() {
        let s = ScenarioDraft::from_json(&cosine_doc()).unwrap().build().unwrap();
        let normalized = normalized_document(&s);
        let again = ScenarioDraft::from_json(&normalized).unwrap().build().unwrap();
        assert_eq!(again, s);
        let text = serde_json::to_string(&normalized).unwrap();
        assert_eq!(
            serde_json::to_string(&normalized_document(&parse_scenario(&text).unwrap())).unwrap(),
            text
        );
    }

    #[test]
    fn invalid_json_is_reported() {
        assert!(matches!("{".parse::<ScenarioDraft>(), Err(GtrError::Validation { .. })));
    }
}
