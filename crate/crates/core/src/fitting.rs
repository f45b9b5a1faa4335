//! Recovering scenario parameters from target AB/BA probability tables.
//!
//! Free parameters are bound to geometry cosines or to density parameters of
//! a skeleton scenario. Piecewise weights are searched through softmax logits
//! so every candidate is a valid density. The objective is the sum of squared
//! differences over the eight AB and BA entries; candidates that violate a
//! constraint (unrealizable cosines, support leaving [-1, 1]) score
//! `INFEASIBLE_PENALTY` plus the size of the violation.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::density::BreakDensity;
use crate::document::{number, object, only_keys, required, string, unsigned, JsonPath, ScenarioDraft};
use crate::error::{GtrError, Result};
use crate::geometry::{gram_violation, ScenarioGeometry};
use crate::measurement::{OutcomeLabel, INITIAL_CONTEXT};
use crate::montecarlo::substream;
use crate::optim::{minimize, NelderMeadOptions};
use crate::sequential::{sequence_distribution, ProbabilityTable, SequenceSpec};

pub const INFEASIBLE_PENALTY: f64 = 1e6;
pub const CONVERGED_LOSS: f64 = 1e-8;
const GRAM_TOLERANCE: f64 = 1e-10;
const START_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeometryParam {
    CosThetaA,
    CosThetaB,
    CosTheta,
}

impl GeometryParam {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "cos_theta_A" => Some(GeometryParam::CosThetaA),
            "cos_theta_B" => Some(GeometryParam::CosThetaB),
            "cos_theta" => Some(GeometryParam::CosTheta),
            _ => None,
        }
    }
}

/// What a free parameter controls.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Binding {
    Geometry(GeometryParam),
    /// Center of a locally uniform density.
    Center {
        measurement: String,
        context: String,
    },
    /// Half width of a locally uniform density.
    HalfWidth {
        measurement: String,
        context: String,
    },
    /// Softmax logit of one cell of a piecewise density; unbound cells keep
    /// the logit of their skeleton weight.
    Logit {
        measurement: String,
        context: String,
        cell: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeParameter {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub binding: Binding,
}

/// A skeleton scenario, the measurement pair whose AB/BA tables are fitted,
/// and the free parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSpec {
    skeleton: ScenarioDraft,
    a_id: String,
    b_id: String,
    free: Vec<FreeParameter>,
}

impl FitSpec {
    pub fn new(skeleton: ScenarioDraft, a_id: &str, b_id: &str, free: Vec<FreeParameter>) -> Result<Self> {
        if a_id == b_id {
            return Err(GtrError::structural("the fitted pair needs two different measurements"));
        }
        for id in [a_id, b_id] {
            if !skeleton.measurements.iter().any(|m| m.id == id) {
                return Err(GtrError::structural(format!(
                    "pair measurement {id:?} is not in the scenario"
                )));
            }
        }
        let mut names = HashSet::new();
        let mut bindings = HashSet::new();
        for p in &free {
            if !names.insert(p.name.as_str()) {
                return Err(GtrError::structural(format!("duplicate parameter name {:?}", p.name)));
            }
            if !bindings.insert(&p.binding) {
                return Err(GtrError::structural(format!(
                    "parameter {:?} rebinds a bound target",
                    p.name
                )));
            }
            check_parameter(&skeleton, p)?;
        }
        let spec = FitSpec {
            skeleton,
            a_id: a_id.to_string(),
            b_id: b_id.to_string(),
            free,
        };
        let scenario = spec.skeleton.build()?;
        spec.ab_sequence().validate(&scenario)?;
        spec.ab_sequence().reversed().validate(&scenario)?;
        Ok(spec)
    }

    pub fn free_parameters(&self) -> &[FreeParameter] {
        &self.free
    }

    pub fn skeleton(&self) -> &ScenarioDraft {
        &self.skeleton
    }

    pub fn ab_sequence(&self) -> SequenceSpec {
        SequenceSpec::new([self.a_id.as_str(), self.b_id.as_str()]).expect("ids validated")
    }

    fn check_targets(&self, ab: &ProbabilityTable, ba: &ProbabilityTable) -> Result<()> {
        let want = self.ab_sequence();
        if ab.sequence() != &want {
            return Err(GtrError::structural(format!(
                "target_ab is over {}, expected {want}",
                ab.sequence()
            )));
        }
        if ba.sequence() != &want.reversed() {
            return Err(GtrError::structural(format!(
                "target_ba is over {}, expected {}",
                ba.sequence(),
                want.reversed()
            )));
        }
        Ok(())
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.free.len() {
            return Err(GtrError::structural(format!(
                "expected {} parameters, got {}",
                self.free.len(),
                params.len()
            )));
        }
        for (p, x) in self.free.iter().zip(params) {
            if !(p.lower..=p.upper).contains(x) {
                return Err(GtrError::structural(format!(
                    "parameter {} = {x} is outside [{}, {}]",
                    p.name, p.lower, p.upper
                )));
            }
        }
        Ok(())
    }

    /// The skeleton with `params` applied, or the amount of constraint violation.
    pub fn instantiate(&self, params: &[f64]) -> Result<std::result::Result<ScenarioDraft, f64>> {
        self.check_params(params)?;
        let mut draft = self.skeleton.clone();

        if let Some(g) = draft.geometry().copied() {
            let mut cos = [g.cos_theta_a, g.cos_theta_b, g.cos_theta];
            for (p, x) in self.free.iter().zip(params) {
                if let Binding::Geometry(which) = p.binding {
                    cos[which as usize] = *x;
                }
            }
            let violation = gram_violation(cos[0], cos[1], cos[2]);
            if violation > GRAM_TOLERANCE {
                return Ok(Err(violation));
            }
            let geometry = ScenarioGeometry {
                cos_theta_a: cos[0],
                cos_theta_b: cos[1],
                cos_theta: cos[2],
            };
            draft.initial = crate::document::InitialSpec::Cosines(geometry);
        }

        // group density parameters by target density
        let mut touched: BTreeMap<(String, String), Vec<(&Binding, f64)>> = BTreeMap::new();
        for (p, x) in self.free.iter().zip(params) {
            match &p.binding {
                Binding::Geometry(_) => {}
                Binding::Center { measurement, context }
                | Binding::HalfWidth { measurement, context }
                | Binding::Logit {
                    measurement, context, ..
                } => touched
                    .entry((measurement.clone(), context.clone()))
                    .or_default()
                    .push((&p.binding, *x)),
            }
        }
        for ((measurement, context), updates) in touched {
            let m = draft.measurement_mut(&measurement).expect("validated");
            let density = m.densities.get_mut(&context).expect("validated");
            match density.clone() {
                BreakDensity::LocallyUniform {
                    mut center,
                    mut half_width,
                } => {
                    for (b, x) in updates {
                        match b {
                            Binding::Center { .. } => center = x,
                            Binding::HalfWidth { .. } => half_width = x,
                            _ => unreachable!("validated binding family"),
                        }
                    }
                    let overshoot = (center.abs() + half_width - 1.0).max(0.0);
                    match BreakDensity::locally_uniform(center, half_width) {
                        Ok(d) => *density = d,
                        Err(_) => return Ok(Err(overshoot.max(f64::EPSILON))),
                    }
                }
                BreakDensity::PiecewiseConstant(p) => {
                    let mut logits: Vec<f64> = p.weights().iter().map(|w| w.ln()).collect();
                    for (b, x) in updates {
                        if let Binding::Logit { cell, .. } = b {
                            logits[*cell] = x;
                        }
                    }
                    *density = BreakDensity::piecewise(p.breakpoints().to_vec(), softmax(&logits))?;
                }
                BreakDensity::Uniform => unreachable!("validated binding family"),
            }
        }
        Ok(Ok(draft))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut w: Vec<f64> = exps.iter().map(|e| e / total).collect();
    // put the rounding residue on the largest cell so the sum is 1 to an ulp
    let residue = 1.0 - w.iter().sum::<f64>();
    if let Some(i) = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])) {
        w[i] = (w[i] + residue).max(0.0);
    }
    w
}

fn check_parameter(skeleton: &ScenarioDraft, p: &FreeParameter) -> Result<()> {
    let fail = |msg: String| Err(GtrError::structural(format!("parameter {:?}: {msg}", p.name)));
    if p.name.is_empty() {
        return fail("name must be nonempty".into());
    }
    if !(p.lower.is_finite() && p.upper.is_finite()) || p.lower >= p.upper {
        return fail(format!(
            "bounds [{}, {}] must be finite with lower < upper",
            p.lower, p.upper
        ));
    }
    let density_of = |measurement: &str, context: &str| -> Result<BreakDensity> {
        skeleton
            .measurements
            .iter()
            .find(|m| m.id == measurement)
            .and_then(|m| m.densities.get(context))
            .cloned()
            .ok_or_else(|| GtrError::structural(format!("parameter {:?}: no density {measurement}[{context}]", p.name)))
    };
    match &p.binding {
        Binding::Geometry(_) => {
            if skeleton.geometry().is_none() {
                return fail("geometry parameters need a cosine initial state".into());
            }
            if p.lower < -1.0 || p.upper > 1.0 {
                return fail("cosine bounds must lie in [-1, 1]".into());
            }
        }
        Binding::Center { measurement, context } => {
            if !matches!(density_of(measurement, context)?, BreakDensity::LocallyUniform { .. }) {
                return fail("center binds a locally_uniform density".into());
            }
            if p.lower <= -1.0 || p.upper >= 1.0 {
                return fail("center bounds must lie inside (-1, 1)".into());
            }
        }
        Binding::HalfWidth { measurement, context } => {
            if !matches!(density_of(measurement, context)?, BreakDensity::LocallyUniform { .. }) {
                return fail("half_width binds a locally_uniform density".into());
            }
            if p.lower <= 0.0 || p.upper > 1.0 {
                return fail("half_width bounds must lie in (0, 1]".into());
            }
        }
        Binding::Logit {
            measurement,
            context,
            cell,
        } => match density_of(measurement, context)? {
            BreakDensity::PiecewiseConstant(pc) if *cell < pc.cells() => {}
            BreakDensity::PiecewiseConstant(pc) => {
                return fail(format!("cell {cell} is out of range for {} cells", pc.cells()))
            }
            _ => return fail("logit binds a piecewise density".into()),
        },
    }
    Ok(())
}

/// Sum of squared errors over the AB and BA tables at `params`.
pub fn loss(params: &[f64], spec: &FitSpec, target_ab: &ProbabilityTable, target_ba: &ProbabilityTable) -> Result<f64> {
    spec.check_targets(target_ab, target_ba)?;
    evaluate(params, spec, target_ab, target_ba)
}

fn evaluate(params: &[f64], spec: &FitSpec, target_ab: &ProbabilityTable, target_ba: &ProbabilityTable) -> Result<f64> {
    let draft = match spec.instantiate(params)? {
        Ok(d) => d,
        Err(violation) => return Ok(INFEASIBLE_PENALTY + violation),
    };
    let scenario = draft.build()?;
    let mut total = 0.0;
    for target in [target_ab, target_ba] {
        let model = sequence_distribution(&scenario, target.sequence())?;
        total += model
            .probabilities()
            .iter()
            .zip(target.probabilities())
            .map(|(m, t)| (m - t).powi(2))
            .sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub parameters: BTreeMap<String, f64>,
    pub loss: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub best_restart: usize,
    /// Normalized document of the fitted scenario.
    pub scenario: Value,
}

/// Multi-start bounded simplex descent; restart `k` starts from a point drawn
/// from substream `k` of `seed`. Ties in loss go to the lowest restart index.
pub fn fit(
    spec: &FitSpec,
    target_ab: &ProbabilityTable,
    target_ba: &ProbabilityTable,
    restarts: usize,
    seed: u64,
) -> Result<FitResult> {
    spec.check_targets(target_ab, target_ba)?;
    if restarts == 0 {
        return Err(GtrError::structural("restarts must be at least 1"));
    }
    let lower: Vec<f64> = spec.free.iter().map(|p| p.lower).collect();
    let upper: Vec<f64> = spec.free.iter().map(|p| p.upper).collect();
    let to_params = |t: &[f64]| -> Vec<f64> {
        t.iter()
            .zip(lower.iter().zip(&upper))
            .map(|(t, (lo, hi))| (lo + t * (hi - lo)).clamp(*lo, *hi))
            .collect()
    };
    let objective = |t: &[f64]| evaluate(&to_params(t), spec, target_ab, target_ba).unwrap_or(f64::INFINITY);
    let options = NelderMeadOptions::default();

    let runs: Vec<(Vec<f64>, f64, usize)> = (0..restarts)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, k as u64);
            let mut evaluations = 0;
            let mut start: Vec<f64> = (0..spec.free.len()).map(|_| rng.random::<f64>()).collect();
            for _ in 0..START_ATTEMPTS {
                evaluations += 1;
                if objective(&start) < INFEASIBLE_PENALTY {
                    break;
                }
                start = (0..spec.free.len()).map(|_| rng.random::<f64>()).collect();
            }
            let m = minimize(objective, &start, &options);
            (m.x, m.value, evaluations + m.evaluations)
        })
        .collect();

    let evaluations = runs.iter().map(|r| r.2).sum();
    let (best_restart, (t, _, _)) = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .expect("restarts >= 1");
    let params = to_params(t);
    let loss = evaluate(&params, spec, target_ab, target_ba)?;
    let scenario = match spec.instantiate(&params)? {
        Ok(draft) => crate::document::normalized_document(&draft.build()?),
        Err(_) => Value::Null,
    };
    Ok(FitResult {
        parameters: spec.free.iter().map(|p| p.name.clone()).zip(params).collect(),
        loss,
        evaluations,
        converged: loss < CONVERGED_LOSS,
        best_restart,
        scenario,
    })
}

/// A complete fit problem as read from JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    pub spec: FitSpec,
    pub target_ab: ProbabilityTable,
    pub target_ba: ProbabilityTable,
    pub restarts: Option<usize>,
    pub seed: Option<u64>,
}

fn parse_binding(v: &Value, path: &JsonPath) -> Result<Binding> {
    let map = object(v, path)?;
    if let Some(g) = map.get("geometry") {
        only_keys(map, &["geometry"], path)?;
        let p = path.key("geometry");
        return GeometryParam::parse(string(g, &p)?)
            .map(Binding::Geometry)
            .ok_or_else(|| p.error("expected cos_theta_A, cos_theta_B or cos_theta"));
    }
    only_keys(map, &["measurement", "context", "param", "cell"], path)?;
    let measurement = string(required(map, "measurement", path)?, &path.key("measurement"))?.to_string();
    let context = string(required(map, "context", path)?, &path.key("context"))?.to_string();
    if context != INITIAL_CONTEXT && context.parse::<OutcomeLabel>().is_err() {
        return Err(path
            .key("context")
            .error("context must be \"initial\" or \"<id>:yes|no\""));
    }
    let param_path = path.key("param");
    match string(required(map, "param", path)?, &param_path)? {
        "center" => Ok(Binding::Center { measurement, context }),
        "half_width" => Ok(Binding::HalfWidth { measurement, context }),
        "logit" => {
            let cell_path = path.key("cell");
            let cell = unsigned(required(map, "cell", path)?, &cell_path)?;
            Ok(Binding::Logit {
                measurement,
                context,
                cell: cell as usize,
            })
        }
        _ => Err(param_path.error("expected center, half_width or logit")),
    }
}

fn parse_table(v: &Value, path: &JsonPath) -> Result<ProbabilityTable> {
    serde_json::from_value(v.clone()).map_err(|e| path.error(e.to_string()))
}

impl std::str::FromStr for FitProblem {
    type Err = GtrError;

    fn from_str(text: &str) -> Result<Self> {
        let v: Value =
            serde_json::from_str(text).map_err(|e| GtrError::validation("$", format!("invalid JSON: {e}")))?;
        Self::from_json(&v)
    }
}

impl FitProblem {
    pub fn from_json(v: &Value) -> Result<Self> {
        let root_path = JsonPath::root();
        let root = object(v, &root_path)?;
        only_keys(
            root,
            &["spec", "target_ab", "target_ba", "restarts", "seed"],
            &root_path,
        )?;

        let spec_path = root_path.key("spec");
        let spec_map = object(required(root, "spec", &root_path)?, &spec_path)?;
        only_keys(spec_map, &["scenario", "pair", "free_parameters"], &spec_path)?;
        let skeleton = ScenarioDraft::parse(required(spec_map, "scenario", &spec_path)?, &spec_path.key("scenario"))?;

        let pair_path = spec_path.key("pair");
        let pair = required(spec_map, "pair", &spec_path)?
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| pair_path.error("expected two measurement ids"))?;
        let a_id = string(&pair[0], &pair_path.index(0))?;
        let b_id = string(&pair[1], &pair_path.index(1))?;

        let free_path = spec_path.key("free_parameters");
        let list = required(spec_map, "free_parameters", &spec_path)?
            .as_array()
            .ok_or_else(|| free_path.error("expected an array"))?;
        let mut free = Vec::with_capacity(list.len());
        for (i, item) in list.iter().enumerate() {
            let p = free_path.index(i);
            let map = object(item, &p)?;
            only_keys(map, &["name", "lower", "upper", "bind"], &p)?;
            free.push(FreeParameter {
                name: string(required(map, "name", &p)?, &p.key("name"))?.to_string(),
                lower: number(required(map, "lower", &p)?, &p.key("lower"))?,
                upper: number(required(map, "upper", &p)?, &p.key("upper"))?,
                binding: parse_binding(required(map, "bind", &p)?, &p.key("bind"))?,
            });
        }
        let spec = FitSpec::new(skeleton, a_id, b_id, free).map_err(|e| spec_path.error(e.to_string()))?;

        let target_ab = parse_table(required(root, "target_ab", &root_path)?, &root_path.key("target_ab"))?;
        let target_ba = parse_table(required(root, "target_ba", &root_path)?, &root_path.key("target_ba"))?;
        spec.check_targets(&target_ab, &target_ba)
            .map_err(|e| root_path.error(e.to_string()))?;

        let restarts = match root.get("restarts") {
            None => None,
            Some(r) => Some(
                r.as_u64()
                    .filter(|r| *r >= 1)
                    .ok_or_else(|| root_path.key("restarts").error("expected a positive integer"))?
                    as usize,
            ),
        };
        let seed = match root.get("seed") {
            None => None,
            Some(s) => Some(unsigned(s, &root_path.key("seed"))?),
        };
        Ok(FitProblem {
            spec,
            target_ab,
            target_ba,
            restarts,
            seed,
        })
    }
}
