//! Sampling the hidden break point to estimate outcome frequencies.
//!
//! Samples are split into fixed-size chunks; chunk `i` draws from the ChaCha
//! stream `i` of the master seed, so the counts do not depend on how rayon
//! schedules the chunks.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::density::BreakDensity;
use crate::error::{GtrError, Result};
use crate::geometry::{landing_coordinate, UnitVector3};
use crate::measurement::{post_state, Answer, DichotomicMeasurement, OutcomeLabel, Scenario, INITIAL_CONTEXT};
use crate::sequential::{ProbabilityTable, SequenceSpec};

pub const DEFAULT_CHUNK_SIZE: u64 = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    samples: u64,
    seed: u64,
    chunk_size: u64,
}

impl RunConfig {
    pub fn new(samples: u64, seed: u64) -> Result<Self> {
        Self::with_chunk_size(samples, seed, DEFAULT_CHUNK_SIZE)
    }

    pub fn with_chunk_size(samples: u64, seed: u64, chunk_size: u64) -> Result<Self> {
        if samples == 0 {
            return Err(GtrError::construction("samples must be at least 1"));
        }
        if chunk_size == 0 {
            return Err(GtrError::construction("chunk_size must be at least 1"));
        }
        Ok(RunConfig {
            samples,
            seed,
            chunk_size,
        })
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn chunk_size(&self) -> u64 {
        self.chunk_size
    }

    fn chunks(&self) -> impl IndexedParallelIterator<Item = (u64, u64)> + '_ {
        let n_chunks = self.samples.div_ceil(self.chunk_size) as usize;
        (0..n_chunks).into_par_iter().map(move |i| {
            let i = i as u64;
            let start = i * self.chunk_size;
            (i, self.chunk_size.min(self.samples - start))
        })
    }
}

/// Generator for chunk `index` of a run seeded with `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A realized break point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreakSample {
    lambda: f64,
}

impl BreakSample {
    pub fn new(lambda: f64) -> Result<Self> {
        if (-1.0..=1.0).contains(&lambda) {
            Ok(BreakSample { lambda })
        } else {
            Err(GtrError::domain(format!("break point {lambda} is outside [-1, 1]")))
        }
    }

    pub fn draw<R: Rng + ?Sized>(density: &BreakDensity, rng: &mut R) -> Self {
        BreakSample {
            lambda: density.sample_break_point(rng),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Outcome when the elastic breaks here with the state landed at `c`.
    ///
    /// Below the landing point the state stays on the yes fragment. A break
    /// exactly at the landing point is decided by a fair coin from `rng`. A
    /// state sitting on an anchor (`c = ±1`) keeps that anchor's outcome.
    pub fn resolve<R: Rng + ?Sized>(&self, c: f64, rng: &mut R) -> Answer {
        if c >= 1.0 {
            Answer::Yes
        } else if c <= -1.0 {
            Answer::No
        } else if self.lambda < c {
            Answer::Yes
        } else if self.lambda > c {
            Answer::No
        } else if rng.random::<bool>() {
            Answer::Yes
        } else {
            Answer::No
        }
    }
}

/// A sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl Estimate {
    /// Frequency estimate from `hits` successes in `n` Bernoulli trials.
    pub fn bernoulli(hits: u64, n: u64) -> Self {
        let mean = hits as f64 / n as f64;
        Estimate {
            mean,
            stderr: (mean * (1.0 - mean) / n as f64).sqrt(),
            n,
        }
    }

    /// Mean and standard error of the mean of `values`, accumulated in order.
    pub fn from_values(values: &[f64]) -> Self {
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (i, x) in values.iter().enumerate() {
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
        }
        let n = values.len() as u64;
        let stderr = if n > 1 {
            (m2 / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { mean, stderr, n }
    }
}

/// One run of measurement `m` on `state` in the given context.
pub fn simulate_single<R: Rng + ?Sized>(
    state: &UnitVector3,
    m: &DichotomicMeasurement,
    context_key: &str,
    rng: &mut R,
) -> Result<OutcomeLabel> {
    let density = m
        .densities()
        .get(context_key)
        .ok_or_else(|| GtrError::lookup(format!("{}[{}]", m.id(), context_key)))?;
    let c = landing_coordinate(state, m.axis());
    let answer = BreakSample::draw(density, rng).resolve(c, rng);
    OutcomeLabel::new(m.id(), answer)
}

/// How one step behaves after a given predecessor.
#[derive(Debug, Clone, Copy)]
enum StepPlan<'a> {
    Sample { density: &'a BreakDensity, landing: f64 },
    Repeat(Answer),
}

impl StepPlan<'_> {
    fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> Answer {
        match *self {
            StepPlan::Sample { density, landing } => BreakSample::draw(density, rng).resolve(landing, rng),
            StepPlan::Repeat(answer) => answer,
        }
    }
}

fn plan_step<'a>(
    scenario: &'a Scenario,
    prev: Option<(&'a DichotomicMeasurement, Answer)>,
    m: &'a DichotomicMeasurement,
) -> Result<StepPlan<'a>> {
    let (state, key) = match prev {
        None => (*scenario.initial_state(), INITIAL_CONTEXT.to_string()),
        Some((pm, answer)) => (post_state(pm, answer), format!("{}:{}", pm.id(), answer)),
    };
    match scenario.resolve_context(m, &key) {
        Some(resolved) => Ok(StepPlan::Sample {
            density: m.densities().get(resolved).expect("resolved key exists"),
            landing: landing_coordinate(&state, m.axis()),
        }),
        None => match prev {
            Some((pm, answer)) if pm.id() == m.id() => Ok(StepPlan::Repeat(answer)),
            _ => Err(GtrError::lookup(format!("{}[{}]", m.id(), key))),
        },
    }
}

/// Outcome counts of a simulated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTable {
    sequence: SequenceSpec,
    counts: Vec<u64>,
    samples: u64,
}

impl EmpiricalTable {
    pub fn sequence(&self) -> &SequenceSpec {
        &self.sequence
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn estimate(&self, index: usize) -> Estimate {
        Estimate::bernoulli(self.counts[index], self.samples)
    }

    pub fn estimates(&self) -> impl Iterator<Item = (String, Estimate)> + '_ {
        (0..self.counts.len()).map(|i| (self.sequence.outcome_label(i), self.estimate(i)))
    }

    /// Observed frequencies as a probability table.
    pub fn frequencies(&self) -> ProbabilityTable {
        let probs = self.counts.iter().map(|c| *c as f64 / self.samples as f64).collect();
        ProbabilityTable::new(self.sequence.clone(), probs).expect("frequencies are normalized")
    }
}

impl Serialize for EmpiricalTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Entry {
            probability: f64,
            stderr: f64,
        }
        struct Entries<'a>(&'a EmpiricalTable);
        impl Serialize for Entries<'_> {
            fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
                let mut map = serializer.serialize_map(Some(self.0.counts.len()))?;
                for (label, e) in self.0.estimates() {
                    map.serialize_entry(
                        &label,
                        &Entry {
                            probability: e.mean,
                            stderr: e.stderr,
                        },
                    )?;
                }
                map.end()
            }
        }
        let mut map = serializer.serialize_map(Some(3))?;
        map.serialize_entry("sequence", self.sequence.steps())?;
        map.serialize_entry("samples", &self.samples)?;
        map.serialize_entry("entries", &Entries(self))?;
        map.end()
    }
}

/// Runs the measurement cascade `config.samples()` times, collapsing the state
/// between steps.
pub fn simulate_sequence(scenario: &Scenario, seq: &SequenceSpec, config: &RunConfig) -> Result<EmpiricalTable> {
    seq.validate(scenario)?;
    let measurements: Vec<&DichotomicMeasurement> = seq
        .steps()
        .iter()
        .map(|id| scenario.measurement(id))
        .collect::<Result<_>>()?;
    let first = plan_step(scenario, None, measurements[0])?;
    let later: Vec<[StepPlan; 2]> = measurements
        .windows(2)
        .map(|w| {
            Ok([
                plan_step(scenario, Some((w[0], Answer::Yes)), w[1])?,
                plan_step(scenario, Some((w[0], Answer::No)), w[1])?,
            ])
        })
        .collect::<Result<_>>()?;

    let outcomes = seq.outcome_count();
    let counts = config
        .chunks()
        .map(|(chunk, n)| {
            let mut rng = substream(config.seed, chunk);
            let mut counts = vec![0u64; outcomes];
            for _ in 0..n {
                let mut answer = first.run(&mut rng);
                let mut index = usize::from(answer == Answer::No);
                for step in &later {
                    answer = step[usize::from(answer == Answer::No)].run(&mut rng);
                    index = (index << 1) | usize::from(answer == Answer::No);
                }
                counts[index] += 1;
            }
            counts
        })
        .reduce(
            || vec![0u64; outcomes],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(EmpiricalTable {
        sequence: seq.clone(),
        counts,
        samples: config.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MeasurementAxis;
    use crate::measurement::ConditionalDensityMap;
    use crate::sequential::sequence_distribution;
    use crate::testing::{q_scenario, uniform_pair_scenario};
    use rand::RngCore;

    fn measurement(density: BreakDensity) -> DichotomicMeasurement {
        let axis = MeasurementAxis::new(UnitVector3::normalize(0.0, 0.0, 1.0).unwrap());
        DichotomicMeasurement::new("A", axis, ConditionalDensityMap::initial_only(density)).unwrap()
    }

    fn state_at(c: f64) -> UnitVector3 {
        UnitVector3::normalize((1.0 - c * c).sqrt(), 0.0, c).unwrap()
    }

    fn yes_frequency(state: &UnitVector3, m: &DichotomicMeasurement, n: u64, seed: u64) -> Estimate {
        let mut rng = substream(seed, 0);
        let hits = (0..n)
            .filter(|_| simulate_single(state, m, INITIAL_CONTEXT, &mut rng).unwrap().answer() == Answer::Yes)
            .count() as u64;
        Estimate::bernoulli(hits, n)
    }

    #[test]
    fn state_on_yes_anchor_always_answers_yes() {
        let m = measurement(BreakDensity::piecewise(vec![-1.0, 0.9, 1.0], vec![0.1, 0.9]).unwrap());
        let e = yes_frequency(&m.axis().yes_anchor(), &m, 10_000, 3);
        assert_eq!(e.mean, 1.0);
    }

    #[test]
    fn uniform_frequency_matches_born() {
        let m = measurement(BreakDensity::Uniform);
        let e = yes_frequency(&state_at(0.6), &m, 100_000, 11);
        let want = landing_coordinate(&state_at(0.6), m.axis()) / 2.0 + 0.5;
        assert!((e.mean - want).abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn locally_uniform_frequency_matches_cdf() {
        let m = measurement(BreakDensity::locally_uniform(0.2, 0.1).unwrap());
        let e = yes_frequency(&state_at(0.15), &m, 100_000, 12);
        assert!((e.mean - 0.25).abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn missing_context_fails() {
        let m = measurement(BreakDensity::Uniform);
        let mut rng = substream(0, 0);
        assert!(simulate_single(&state_at(0.0), &m, "B:no", &mut rng).is_err());
    }

    /// Every `next_u64` yields the same word (fixing the uniform variate);
    /// `next_u32` comes from a real generator (the coin).
    struct Rigged {
        word: u64,
        coin: ChaCha8Rng,
    }

    impl RngCore for Rigged {
        fn next_u32(&mut self) -> u32 {
            self.coin.next_u32()
        }
        fn next_u64(&mut self) -> u64 {
            self.word
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            self.coin.fill_bytes(dst)
        }
    }

    #[test]
    fn ties_are_broken_by_a_fair_coin() {
        // u = 0.75 inverts to exactly 0.5 under the uniform density
        let word = (3u64 << 51) << 11;
        let mut rng = Rigged {
            word,
            coin: substream(99, 0),
        };
        assert_eq!(BreakDensity::Uniform.sample_break_point(&mut rng), 0.5);

        let axis = MeasurementAxis::new(UnitVector3::normalize(0.0, 0.0, 1.0).unwrap());
        let state = UnitVector3::normalize(0.75f64.sqrt(), 0.0, 0.5).unwrap();
        assert_eq!(landing_coordinate(&state, &axis), 0.5);
        let m =
            DichotomicMeasurement::new("A", axis, ConditionalDensityMap::initial_only(BreakDensity::Uniform)).unwrap();

        let n = 100_000u64;
        let hits = (0..n)
            .filter(|_| simulate_single(&state, &m, INITIAL_CONTEXT, &mut rng).unwrap().answer() == Answer::Yes)
            .count() as u64;
        let e = Estimate::bernoulli(hits, n);
        assert!((e.mean - 0.5).abs() < 4.0 * e.stderr, "{e:?}");
        assert!(e.mean > 0.0 && e.mean < 1.0);
    }

    #[test]
    fn repeated_measurement_never_flips() {
        let scenario = q_scenario();
        let config = RunConfig::new(50_000, 5).unwrap();
        for seq in ["A,A", "B,B", "A,A,A"] {
            let t = simulate_sequence(&scenario, &seq.parse().unwrap(), &config).unwrap();
            let analytic = sequence_distribution(&scenario, t.sequence()).unwrap();
            for (i, p) in analytic.probabilities().iter().enumerate() {
                if *p == 0.0 {
                    assert_eq!(t.counts()[i], 0, "{seq} outcome {}", t.sequence().outcome_label(i));
                }
            }
        }
    }

    #[test]
    fn uniform_pair_matches_product() {
        let scenario = uniform_pair_scenario(0.6, 0.2, 0.5);
        let t = simulate_sequence(
            &scenario,
            &"A,B".parse().unwrap(),
            &RunConfig::new(1_000_000, 8).unwrap(),
        )
        .unwrap();
        let e = t.estimate(0);
        assert!((e.mean - 0.6).abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn chunking_and_threads_do_not_change_counts() {
        let scenario = q_scenario();
        let seq: SequenceSpec = "A,B,A".parse().unwrap();
        let config = RunConfig::with_chunk_size(30_001, 77, 1000).unwrap();
        let parallel = simulate_sequence(&scenario, &seq, &config).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| simulate_sequence(&scenario, &seq, &config).unwrap());
        assert_eq!(parallel, serial);
        assert_eq!(parallel.counts().iter().sum::<u64>(), 30_001);
        let again = simulate_sequence(&scenario, &seq, &config).unwrap();
        assert_eq!(parallel, again);
    }

    #[test]
    fn estimates() {
        let e = Estimate::bernoulli(25, 100);
        assert_eq!(e.mean, 0.25);
        assert!((e.stderr - (0.25f64 * 0.75 / 100.0).sqrt()).abs() < 1e-15);
        let e = Estimate::from_values(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        // sample variance 5/3
        assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(Estimate::from_values(&[0.3]).stderr, 0.0);
    }

    #[test]
    fn run_config_rejects_zero() {
        assert!(RunConfig::new(0, 1).is_err());
        assert!(RunConfig::with_chunk_size(10, 1, 0).is_err());
        assert!(BreakSample::new(1.5).is_err());
    }
}
