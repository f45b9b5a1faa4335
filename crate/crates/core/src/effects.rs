//! Question order effects, the QQ value and response replicability.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{GtrError, Result};
use crate::measurement::{Answer, Scenario};
use crate::montecarlo::{simulate_sequence, EmpiricalTable, RunConfig};
use crate::sequential::{sequence_distribution, ProbabilityTable, SequenceSpec};

/// Deltas above this are order effects on analytic tables.
pub const ANALYTIC_TOLERANCE: f64 = 1e-9;
/// Empirical deltas count as effects beyond this many standard errors.
pub const EMPIRICAL_SIGMAS: f64 = 4.0;
/// Off-diagonal mass below this still counts as replicable.
pub const REPLICABILITY_TOLERANCE: f64 = 1e-12;

/// `p(A_i B_j) - p(B_j A_i)` for the four answer pairs `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderDeltas {
    cells: [[f64; 2]; 2],
}

impl OrderDeltas {
    pub fn get(&self, a: Answer, b: Answer) -> f64 {
        self.cells[slot(a)][slot(b)]
    }

    pub fn max_abs(&self) -> f64 {
        self.cells.iter().flatten().fold(0.0, |m, d| m.max(d.abs()))
    }

    /// Sum of the two diagonal deltas, i.e. the QQ value.
    pub fn qq(&self) -> f64 {
        self.cells[0][0] + self.cells[1][1]
    }
}

impl Serialize for OrderDeltas {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(4))?;
        for a in Answer::BOTH {
            for b in Answer::BOTH {
                map.serialize_entry(&format!("{a},{b}"), &self.get(a, b))?;
            }
        }
        map.end()
    }
}

fn slot(a: Answer) -> usize {
    usize::from(a == Answer::No)
}

/// Checks that the tables are `X,Y` and `Y,X` and returns `(X, Y)`.
fn pair_ids<'a>(ab: &'a ProbabilityTable, ba: &'a ProbabilityTable) -> Result<(&'a str, &'a str)> {
    let (s1, s2) = (ab.sequence().steps(), ba.sequence().steps());
    if s1.len() != 2 || s2.len() != 2 {
        return Err(GtrError::structural("order effects need two-step tables"));
    }
    if s1[0] == s1[1] {
        return Err(GtrError::structural(format!(
            "table {} measures the same question twice",
            ab.sequence()
        )));
    }
    if s1[0] != s2[1] || s1[1] != s2[0] {
        return Err(GtrError::structural(format!(
            "tables {} and {} are not the same pair in opposite orders",
            ab.sequence(),
            ba.sequence()
        )));
    }
    Ok((&s1[0], &s1[1]))
}

pub fn order_effect_deltas(ab: &ProbabilityTable, ba: &ProbabilityTable) -> Result<OrderDeltas> {
    pair_ids(ab, ba)?;
    let mut cells = [[0.0; 2]; 2];
    for a in Answer::BOTH {
        for b in Answer::BOTH {
            cells[slot(a)][slot(b)] = ab.get(&[a, b])? - ba.get(&[b, a])?;
        }
    }
    Ok(OrderDeltas { cells })
}

/// `p(A_y B_y) - p(B_y A_y) + p(A_n B_n) - p(B_n A_n)`.
pub fn qq_value(ab: &ProbabilityTable, ba: &ProbabilityTable) -> Result<f64> {
    Ok(order_effect_deltas(ab, ba)?.qq())
}

/// A separated-replicability branch `X_i Y_j X_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparatedEntry {
    /// Joint probability of the three outcomes.
    pub probability: f64,
    /// Probability that the third step repeats the first, given the first two
    /// outcomes; absent when that branch has probability zero.
    pub conditional: Option<f64>,
}

impl SeparatedEntry {
    pub fn replicates(&self) -> bool {
        self.conditional
            .is_some_and(|c| (c - 1.0).abs() <= REPLICABILITY_TOLERANCE)
    }
}

/// Adjacent (`XX`) and separated (`XYX`) replicability of a measurement pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replicability {
    pub adjacent: BTreeMap<String, bool>,
    pub separated: BTreeMap<String, SeparatedEntry>,
}

fn adjacent_holds(table: &ProbabilityTable) -> bool {
    table.get(&[Answer::Yes, Answer::No]).unwrap_or(1.0) < REPLICABILITY_TOLERANCE
        && table.get(&[Answer::No, Answer::Yes]).unwrap_or(1.0) < REPLICABILITY_TOLERANCE
}

fn separated_entries(table: &ProbabilityTable, out: &mut BTreeMap<String, SeparatedEntry>) -> Result<()> {
    let seq = table.sequence();
    for i in Answer::BOTH {
        for j in Answer::BOTH {
            let joint = table.get(&[i, j, i])?;
            let branch = joint + table.get(&[i, j, other(i)])?;
            let idx = seq.index_of(&[i, j, i])?;
            out.insert(
                seq.outcome_label(idx),
                SeparatedEntry {
                    probability: joint,
                    conditional: (branch > 0.0).then(|| joint / branch),
                },
            );
        }
    }
    Ok(())
}

fn other(a: Answer) -> Answer {
    match a {
        Answer::Yes => Answer::No,
        Answer::No => Answer::Yes,
    }
}

struct PairSequences {
    ab: SequenceSpec,
    ba: SequenceSpec,
    aa: SequenceSpec,
    bb: SequenceSpec,
    aba: SequenceSpec,
    bab: SequenceSpec,
}

impl PairSequences {
    fn new(a_id: &str, b_id: &str) -> Result<Self> {
        if a_id == b_id {
            return Err(GtrError::structural(
                "an order-effect pair needs two different measurements",
            ));
        }
        Ok(PairSequences {
            ab: SequenceSpec::new([a_id, b_id])?,
            ba: SequenceSpec::new([b_id, a_id])?,
            aa: SequenceSpec::new([a_id, a_id])?,
            bb: SequenceSpec::new([b_id, b_id])?,
            aba: SequenceSpec::new([a_id, b_id, a_id])?,
            bab: SequenceSpec::new([b_id, a_id, b_id])?,
        })
    }

    fn all(&self) -> [&SequenceSpec; 6] {
        [&self.ab, &self.ba, &self.aa, &self.bb, &self.aba, &self.bab]
    }

    /// Validates every sequence up front and merges the missing keys.
    fn validate(&self, scenario: &Scenario) -> Result<()> {
        let mut missing: Vec<String> = Vec::new();
        for seq in self.all() {
            match seq.validate(scenario) {
                Ok(()) => {}
                Err(GtrError::Lookup { keys }) => {
                    for k in keys {
                        if !missing.contains(&k) {
                            missing.push(k);
                        }
                    }
                }
                Err(e) => return Err(e),
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(GtrError::Lookup { keys: missing })
        }
    }
}

/// Adjacent and separated replicability of the pair, from analytic tables.
pub fn replicability_report(scenario: &Scenario, a_id: &str, b_id: &str) -> Result<Replicability> {
    let seqs = PairSequences::new(a_id, b_id)?;
    seqs.validate(scenario)?;
    analytic_replicability(scenario, &seqs)
}

fn analytic_replicability(scenario: &Scenario, seqs: &PairSequences) -> Result<Replicability> {
    let mut adjacent = BTreeMap::new();
    for seq in [&seqs.aa, &seqs.bb] {
        let table = sequence_distribution(scenario, seq)?;
        adjacent.insert(seq.steps()[0].clone(), adjacent_holds(&table));
    }
    let mut separated = BTreeMap::new();
    for seq in [&seqs.aba, &seqs.bab] {
        separated_entries(&sequence_distribution(scenario, seq)?, &mut separated)?;
    }
    Ok(Replicability { adjacent, separated })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ReportTables {
    Analytic { ab: ProbabilityTable, ba: ProbabilityTable },
    Empirical { ab: EmpiricalTable, ba: EmpiricalTable },
}

/// QQ value, order deltas and replicability for one measurement pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectsReport {
    pub qq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qq_stderr: Option<f64>,
    pub deltas: OrderDeltas,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_stderr: Option<OrderDeltas>,
    pub order_effect: bool,
    pub adjacent: BTreeMap<String, bool>,
    pub separated: BTreeMap<String, SeparatedEntry>,
    pub tables: ReportTables,
}

/// Effects computed from the closed-form sequence distributions.
pub fn analytic_effects(scenario: &Scenario, a_id: &str, b_id: &str) -> Result<EffectsReport> {
    let seqs = PairSequences::new(a_id, b_id)?;
    seqs.validate(scenario)?;
    let ab = sequence_distribution(scenario, &seqs.ab)?;
    let ba = sequence_distribution(scenario, &seqs.ba)?;
    let deltas = order_effect_deltas(&ab, &ba)?;
    let Replicability { adjacent, separated } = analytic_replicability(scenario, &seqs)?;
    Ok(EffectsReport {
        qq: deltas.qq(),
        qq_stderr: None,
        deltas,
        delta_stderr: None,
        order_effect: deltas.max_abs() > ANALYTIC_TOLERANCE,
        adjacent,
        separated,
        tables: ReportTables::Analytic { ab, ba },
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th independent run derived from a master seed.
pub fn derived_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Standard error of the QQ estimate from independent AB and BA runs.
///
/// Within one run the two diagonal cells are disjoint events, so their sum is
/// itself a Bernoulli frequency.
pub fn qq_stderr(ab: &EmpiricalTable, ba: &EmpiricalTable) -> f64 {
    let diag_var = |t: &EmpiricalTable| {
        let n = t.samples() as f64;
        let s = (t.counts()[0] + t.counts()[3]) as f64 / n;
        s * (1.0 - s) / n
    };
    (diag_var(ab) + diag_var(ba)).sqrt()
}

/// Effects estimated by simulation. Each of the six sequences is run
/// independently from its own seed derived from `seed`.
pub fn empirical_effects(
    scenario: &Scenario,
    a_id: &str,
    b_id: &str,
    samples: u64,
    seed: u64,
) -> Result<EffectsReport> {
    let seqs = PairSequences::new(a_id, b_id)?;
    seqs.validate(scenario)?;
    let run = |k: u64, seq: &SequenceSpec| {
        let config = RunConfig::new(samples, derived_seed(seed, k))?;
        simulate_sequence(scenario, seq, &config)
    };
    let ab = run(0, &seqs.ab)?;
    let ba = run(1, &seqs.ba)?;
    let deltas = order_effect_deltas(&ab.frequencies(), &ba.frequencies())?;
    let mut stderr = [[0.0; 2]; 2];
    for a in Answer::BOTH {
        for b in Answer::BOTH {
            let x = ab.estimate(ab.sequence().index_of(&[a, b])?).stderr;
            let y = ba.estimate(ba.sequence().index_of(&[b, a])?).stderr;
            stderr[slot(a)][slot(b)] = x.hypot(y);
        }
    }
    let order_effect = Answer::BOTH.iter().any(|&a| {
        Answer::BOTH
            .iter()
            .any(|&b| deltas.get(a, b).abs() > EMPIRICAL_SIGMAS * stderr[slot(a)][slot(b)])
    });

    let mut adjacent = BTreeMap::new();
    for (k, seq) in [(2, &seqs.aa), (3, &seqs.bb)] {
        let t = run(k, seq)?;
        adjacent.insert(seq.steps()[0].clone(), t.counts()[1] == 0 && t.counts()[2] == 0);
    }
    let mut separated = BTreeMap::new();
    for (k, seq) in [(4, &seqs.aba), (5, &seqs.bab)] {
        separated_entries(&run(k, seq)?.frequencies(), &mut separated)?;
    }

    Ok(EffectsReport {
        qq: deltas.qq(),
        qq_stderr: Some(qq_stderr(&ab, &ba)),
        deltas,
        delta_stderr: Some(OrderDeltas { cells: stderr }),
        order_effect,
        adjacent,
        separated,
        tables: ReportTables::Empirical { ab, ba },
    })
}
