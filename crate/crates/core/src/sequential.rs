//! Outcome distributions of measurement sequences.
//!
//! Each step is evaluated on the anchor the previous step collapsed to, with
//! the density conditioned on that previous outcome; the probability of an
//! outcome string is the product of its step probabilities.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{GtrError, Result};
use crate::measurement::{
    outcome_probabilities, post_state, Answer, DichotomicMeasurement, OutcomeLabel, Scenario, INITIAL_CONTEXT,
};

/// Longest sequence accepted; tables have `2^len` entries.
pub const MAX_SEQUENCE_LEN: usize = 20;

const TABLE_SUM_TOLERANCE: f64 = 1e-10;

/// An ordered list of measurement ids, e.g. `A,B,A`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SequenceSpec {
    steps: Vec<String>,
}

impl SequenceSpec {
    pub fn new<S: Into<String>>(steps: impl IntoIterator<Item = S>) -> Result<Self> {
        let steps: Vec<String> = steps.into_iter().map(Into::into).collect();
        if steps.is_empty() {
            return Err(GtrError::construction("a sequence needs at least one step"));
        }
        if steps.len() > MAX_SEQUENCE_LEN {
            return Err(GtrError::construction(format!(
                "sequences are limited to {MAX_SEQUENCE_LEN} steps, got {}",
                steps.len()
            )));
        }
        if let Some(bad) = steps
            .iter()
            .find(|s| s.is_empty() || s.contains(':') || s.contains(','))
        {
            return Err(GtrError::construction(format!(
                "invalid measurement id {bad:?} in sequence"
            )));
        }
        Ok(SequenceSpec { steps })
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn reversed(&self) -> Self {
        SequenceSpec {
            steps: self.steps.iter().rev().cloned().collect(),
        }
    }

    /// Number of distinct outcome strings.
    pub fn outcome_count(&self) -> usize {
        1 << self.steps.len()
    }

    /// Answers of outcome `index`; the first step is the most significant bit
    /// and "yes" sorts before "no".
    pub fn answers_of(&self, index: usize) -> Vec<Answer> {
        let n = self.steps.len();
        (0..n)
            .map(|k| {
                if index >> (n - 1 - k) & 1 == 0 {
                    Answer::Yes
                } else {
                    Answer::No
                }
            })
            .collect()
    }

    pub fn index_of(&self, answers: &[Answer]) -> Result<usize> {
        if answers.len() != self.steps.len() {
            return Err(GtrError::structural(format!(
                "expected {} answers, got {}",
                self.steps.len(),
                answers.len()
            )));
        }
        Ok(answers
            .iter()
            .fold(0, |acc, a| (acc << 1) | usize::from(*a == Answer::No)))
    }

    /// Comma-joined `id:answer` tokens in step order.
    pub fn outcome_label(&self, index: usize) -> String {
        self.steps
            .iter()
            .zip(self.answers_of(index))
            .map(|(id, a)| format!("{id}:{a}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_outcome(&self, label: &str) -> Result<usize> {
        let tokens: Vec<&str> = label.split(',').collect();
        if tokens.len() != self.steps.len() {
            return Err(GtrError::structural(format!(
                "outcome {label:?} does not match sequence {self}"
            )));
        }
        let mut answers = Vec::with_capacity(tokens.len());
        for (token, step) in tokens.iter().zip(&self.steps) {
            let parsed: OutcomeLabel = token.parse()?;
            if parsed.measurement_id() != step {
                return Err(GtrError::structural(format!(
                    "outcome {label:?} does not match sequence {self}"
                )));
            }
            answers.push(parsed.answer());
        }
        self.index_of(&answers)
    }

    /// Checks ids and every density context the sequence will need, reporting
    /// all missing ones at once.
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        let mut missing = Vec::new();
        for (k, id) in self.steps.iter().enumerate() {
            let Ok(m) = scenario.measurement(id) else {
                missing.push(format!("measurement {id}"));
                continue;
            };
            if k == 0 {
                if scenario.resolve_context(m, INITIAL_CONTEXT).is_none() {
                    missing.push(format!("{id}[{INITIAL_CONTEXT}]"));
                }
                continue;
            }
            let prev = &self.steps[k - 1];
            if prev == id {
                // repeating the same measurement is forced regardless of density
                continue;
            }
            for answer in Answer::BOTH {
                let key = format!("{prev}:{answer}");
                if scenario.resolve_context(m, &key).is_none() {
                    missing.push(format!("{id}[{key}]"));
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(GtrError::Lookup { keys: missing })
        }
    }
}

impl fmt::Display for SequenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.steps.join(","))
    }
}

impl FromStr for SequenceSpec {
    type Err = GtrError;

    fn from_str(s: &str) -> Result<Self> {
        SequenceSpec::new(s.split(',').map(str::trim))
    }
}

/// A distribution over the outcome strings of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable {
    sequence: SequenceSpec,
    probabilities: Vec<f64>,
}

impl ProbabilityTable {
    pub fn new(sequence: SequenceSpec, probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() != sequence.outcome_count() {
            return Err(GtrError::structural(format!(
                "sequence {sequence} needs {} entries, got {}",
                sequence.outcome_count(),
                probabilities.len()
            )));
        }
        if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(GtrError::structural(format!("probability {p} is outside [0, 1]")));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > TABLE_SUM_TOLERANCE {
            return Err(GtrError::structural(format!(
                "table entries sum to {total}, expected 1"
            )));
        }
        Ok(ProbabilityTable {
            sequence,
            probabilities,
        })
    }

    /// Builds a table from `"A:yes,B:no" -> p` entries; every outcome must appear once.
    pub fn from_entries(sequence: SequenceSpec, entries: &BTreeMap<String, f64>) -> Result<Self> {
        let mut probabilities = vec![f64::NAN; sequence.outcome_count()];
        for (label, p) in entries {
            let idx = sequence.parse_outcome(label)?;
            probabilities[idx] = *p;
        }
        if let Some(idx) = probabilities.iter().position(|p| p.is_nan()) {
            return Err(GtrError::structural(format!(
                "missing entry {:?}",
                sequence.outcome_label(idx)
            )));
        }
        ProbabilityTable::new(sequence, probabilities)
    }

    pub fn sequence(&self) -> &SequenceSpec {
        &self.sequence
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn get(&self, answers: &[Answer]) -> Result<f64> {
        Ok(self.probabilities[self.sequence.index_of(answers)?])
    }

    pub fn entries(&self) -> impl Iterator<Item = (String, f64)> + '_ {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(i, p)| (self.sequence.outcome_label(i), *p))
    }
}

impl Serialize for ProbabilityTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(2))?;
        map.serialize_entry("sequence", self.sequence.steps())?;
        map.serialize_entry("entries", &OrderedEntries(self))?;
        map.end()
    }
}

struct OrderedEntries<'a>(&'a ProbabilityTable);

impl Serialize for OrderedEntries<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.probabilities.len()))?;
        for (label, p) in self.0.entries() {
            map.serialize_entry(&label, &p)?;
        }
        map.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRepr {
    sequence: Vec<String>,
    entries: BTreeMap<String, f64>,
}

impl<'de> Deserialize<'de> for ProbabilityTable {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = TableRepr::deserialize(deserializer)?;
        let sequence = SequenceSpec::new(repr.sequence).map_err(serde::de::Error::custom)?;
        ProbabilityTable::from_entries(sequence, &repr.entries).map_err(serde::de::Error::custom)
    }
}

/// Probabilities of measuring `m` right after `prior` was obtained.
pub fn conditional_probabilities(
    prior: &OutcomeLabel,
    m: &DichotomicMeasurement,
    scenario: &Scenario,
) -> Result<(f64, f64)> {
    let prior_m = scenario.measurement(prior.measurement_id())?;
    step_probabilities(scenario, Some((prior_m, prior.answer())), m)
}

/// Probabilities of one step, given what (if anything) preceded it.
pub(crate) fn step_probabilities(
    scenario: &Scenario,
    prev: Option<(&DichotomicMeasurement, Answer)>,
    m: &DichotomicMeasurement,
) -> Result<(f64, f64)> {
    let (state, key) = match prev {
        None => (*scenario.initial_state(), INITIAL_CONTEXT.to_string()),
        Some((pm, answer)) => (post_state(pm, answer), format!("{}:{}", pm.id(), answer)),
    };
    match scenario.resolve_context(m, &key) {
        Some(resolved) => outcome_probabilities(&state, m, resolved),
        None => match prev {
            Some((pm, Answer::Yes)) if pm.id() == m.id() => Ok((1.0, 0.0)),
            Some((pm, Answer::No)) if pm.id() == m.id() => Ok((0.0, 1.0)),
            _ => Err(GtrError::lookup(format!("{}[{}]", m.id(), key))),
        },
    }
}

/// Analytic distribution over all outcome strings of `seq`.
pub fn sequence_distribution(scenario: &Scenario, seq: &SequenceSpec) -> Result<ProbabilityTable> {
    seq.validate(scenario)?;
    let measurements: Vec<&DichotomicMeasurement> = seq
        .steps()
        .iter()
        .map(|id| scenario.measurement(id))
        .collect::<Result<_>>()?;

    // step_probs[k][prev answer] = (p_yes, p_no); step 0 only uses slot 0
    let mut step_probs = Vec::with_capacity(measurements.len());
    step_probs.push([step_probabilities(scenario, None, measurements[0])?; 2]);
    for k in 1..measurements.len() {
        let after_yes = step_probabilities(scenario, Some((measurements[k - 1], Answer::Yes)), measurements[k])?;
        let after_no = step_probabilities(scenario, Some((measurements[k - 1], Answer::No)), measurements[k])?;
        step_probs.push([after_yes, after_no]);
    }

    let probabilities = (0..seq.outcome_count())
        .map(|idx| {
            let answers = seq.answers_of(idx);
            let mut p = 1.0;
            for (k, answer) in answers.iter().enumerate() {
                let slot = if k == 0 {
                    0
                } else {
                    usize::from(answers[k - 1] == Answer::No)
                };
                let (y, n) = step_probs[k][slot];
                p *= if *answer == Answer::Yes { y } else { n };
            }
            p
        })
        .collect();
    ProbabilityTable::new(seq.clone(), probabilities)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::BreakDensity;
    use crate::geometry::ScenarioGeometry;
    use crate::measurement::ConditionalDensityMap;
    use crate::testing::{q_scenario, uniform_pair_scenario};

    #[test]
    fn sequence_parsing() {
        let s: SequenceSpec = "A, B,A".parse().unwrap();
        assert_eq!(s.steps(), ["A", "B", "A"]);
        assert!("".parse::<SequenceSpec>().is_err());
        assert!("A,,B".parse::<SequenceSpec>().is_err());
        assert_eq!(s.outcome_label(0), "A:yes,B:yes,A:yes");
        assert_eq!(s.outcome_label(5), "A:no,B:yes,A:no");
        assert_eq!(s.parse_outcome("A:no,B:yes,A:no").unwrap(), 5);
        assert!(s.parse_outcome("A:no,C:yes,A:no").is_err());
    }

    #[test]
    fn conditional_examples() {
        let scenario = uniform_pair_scenario(0.6, 0.2, 0.5);
        let b = scenario.measurement("B").unwrap();
        let a = scenario.measurement("A").unwrap();
        let after_yes = conditional_probabilities(&"A:yes".parse().unwrap(), b, &scenario).unwrap();
        assert!((after_yes.0 - 0.75).abs() < 1e-12);
        let after_no = conditional_probabilities(&"A:no".parse().unwrap(), b, &scenario).unwrap();
        assert!((after_no.0 - 0.25).abs() < 1e-12);
        let again = conditional_probabilities(&"A:yes".parse().unwrap(), a, &scenario).unwrap();
        assert_eq!(again, (1.0, 0.0));
    }

    #[test]
    fn distribution_examples() {
        let scenario = uniform_pair_scenario(0.6, 0.2, 0.5);
        let ab = sequence_distribution(&scenario, &"A,B".parse().unwrap()).unwrap();
        assert!((ab.get(&[Answer::Yes, Answer::Yes]).unwrap() - 0.6).abs() < 1e-12);

        let aa = sequence_distribution(&scenario, &"A,A".parse().unwrap()).unwrap();
        assert!((aa.get(&[Answer::Yes, Answer::Yes]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(aa.get(&[Answer::Yes, Answer::No]).unwrap(), 0.0);
        assert_eq!(aa.get(&[Answer::No, Answer::Yes]).unwrap(), 0.0);

        let q = q_scenario();
        let ab = sequence_distribution(&q, &"A,B".parse().unwrap()).unwrap();
        assert!((ab.get(&[Answer::Yes, Answer::Yes]).unwrap() - 0.425).abs() < 1e-12);
    }

    #[test]
    fn missing_contexts_are_all_reported() {
        let g = ScenarioGeometry::new(0.1, 0.2, 0.3).unwrap();
        let (s, a, b) = g.realize();
        let scenario = Scenario::new(
            s,
            vec![
                DichotomicMeasurement::new("A", a, ConditionalDensityMap::initial_only(BreakDensity::Uniform)).unwrap(),
                DichotomicMeasurement::new("B", b, ConditionalDensityMap::initial_only(BreakDensity::Uniform)).unwrap(),
            ],
        )
        .unwrap();
        let err = sequence_distribution(&scenario, &"A,B,C".parse().unwrap()).unwrap_err();
        match err {
            GtrError::Lookup { keys } => {
                assert_eq!(keys, vec!["B[A:yes]", "B[A:no]", "measurement C"]);
            }
            other => panic!("unexpected {other:?}"),
        }
        // fallback opts into the initial density
        let fallback = scenario.with_default_to_initial(true);
        let ab = sequence_distribution(&fallback, &"A,B".parse().unwrap()).unwrap();
        assert!((ab.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_json_round_trip_and_validation() {
        let scenario = uniform_pair_scenario(0.6, 0.2, 0.5);
        let ab = sequence_distribution(&scenario, &"A,B".parse().unwrap()).unwrap();
        let json = serde_json::to_string(&ab).unwrap();
        assert!(json.starts_with(r#"{"sequence":["A","B"],"entries":{"A:yes,B:yes":"#));
        let back: ProbabilityTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ab);

        let bad =
            r#"{"sequence":["A","B"],"entries":{"A:yes,B:yes":0.5,"A:yes,B:no":0.2,"A:no,B:yes":0.1,"A:no,B:no":0.1}}"#;
        assert!(serde_json::from_str::<ProbabilityTable>(bad).is_err());
        let missing = r#"{"sequence":["A","B"],"entries":{"A:yes,B:yes":0.5,"A:yes,B:no":0.5,"A:no,B:yes":0.0}}"#;
        assert!(serde_json::from_str::<ProbabilityTable>(missing).is_err());
    }
}
