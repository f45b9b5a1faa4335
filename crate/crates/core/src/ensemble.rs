//! Averaging outcome probabilities over random break densities.
//!
//! Densities are drawn as equally spaced piecewise-constant functions whose
//! cell masses are uniform on the probability simplex, with the number of
//! cells itself drawn uniformly from `1..=max_cells`. By symmetry every cell
//! carries mass `1/n` on average, so the average probability approaches the
//! uniform-density (Born) value; when `cos_theta` falls inside a cell the
//! per-draw expectation is off by at most `O(1/n)`.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::density::{BreakDensity, PiecewiseConstant};
use crate::error::{GtrError, Result};
use crate::montecarlo::{substream, Estimate};

const TRIALS_PER_STREAM: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleConfig {
    trials: u64,
    max_cells: usize,
    seed: u64,
}

impl EnsembleConfig {
    pub fn new(trials: u64, max_cells: usize, seed: u64) -> Result<Self> {
        if trials == 0 {
            return Err(GtrError::construction("trials must be at least 1"));
        }
        if max_cells == 0 {
            return Err(GtrError::construction("max_cells must be at least 1"));
        }
        Ok(EnsembleConfig {
            trials,
            max_cells,
            seed,
        })
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn max_cells(&self) -> usize {
        self.max_cells
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// `n_cells` equal cells with simplex-uniform masses (normalized unit exponentials).
pub fn sample_random_density<R: Rng + ?Sized>(n_cells: usize, rng: &mut R) -> Result<BreakDensity> {
    if n_cells == 0 {
        return Err(GtrError::construction("n_cells must be at least 1"));
    }
    let raw: Vec<f64> = (0..n_cells).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    let weights = if total > 0.0 {
        raw.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / n_cells as f64; n_cells]
    };
    PiecewiseConstant::equally_spaced(weights).map(BreakDensity::PiecewiseConstant)
}

/// Mean of `p_yes = cdf(cos_theta)` over `config.trials()` random densities.
pub fn universal_average_probability(cos_theta: f64, config: &EnsembleConfig) -> Result<Estimate> {
    if !(-1.0..=1.0).contains(&cos_theta) {
        return Err(GtrError::domain(format!("cos_theta = {cos_theta} is outside [-1, 1]")));
    }
    let streams = config.trials.div_ceil(TRIALS_PER_STREAM) as usize;
    let blocks: Vec<Vec<f64>> = (0..streams)
        .into_par_iter()
        .map(|i| {
            let i = i as u64;
            let mut rng = substream(config.seed, i);
            let n = TRIALS_PER_STREAM.min(config.trials - i * TRIALS_PER_STREAM);
            (0..n)
                .map(|_| {
                    let cells = rng.random_range(1..=config.max_cells);
                    let density = sample_random_density(cells, &mut rng).expect("cells >= 1");
                    density.cdf_unchecked(cos_theta)
                })
                .collect()
        })
        .collect();
    let values: Vec<f64> = blocks.into_iter().flatten().collect();
    Ok(Estimate::from_values(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::born_probabilities;

    #[test]
    fn single_cell_is_uniform() {
        let mut rng = substream(1, 0);
        for _ in 0..20 {
            let d = sample_random_density(1, &mut rng).unwrap();
            for x in [-1.0, -0.3, 0.0, 0.9, 1.0] {
                assert_eq!(d.pdf_at(x).unwrap(), 0.5);
                assert_eq!(d.cdf(x).unwrap(), BreakDensity::Uniform.cdf(x).unwrap());
            }
        }
        assert!(sample_random_density(0, &mut rng).is_err());
    }

    #[test]
    fn cell_masses_average_to_one_over_n() {
        let mut rng = substream(2, 0);
        let n = 5;
        let draws = 20_000;
        let mut sums = vec![0.0; n];
        for _ in 0..draws {
            if let BreakDensity::PiecewiseConstant(p) = sample_random_density(n, &mut rng).unwrap() {
                for (s, w) in sums.iter_mut().zip(p.weights()) {
                    *s += w;
                }
            }
        }
        // each mass is Beta(1, 4): sd = sqrt(4/(25*6)) ~ 0.163
        let tol = 4.0 * 0.1633 / (draws as f64).sqrt();
        for s in sums {
            assert!((s / draws as f64 - 0.2).abs() < tol);
        }
    }

    #[test]
    fn pdf_mean_is_one_half() {
        let mut rng = substream(3, 0);
        let draws = 10_000;
        for x in [-0.77, 0.05, 0.5] {
            let mean = (0..draws)
                .map(|_| sample_random_density(10, &mut rng).unwrap().pdf_at(x).unwrap())
                .sum::<f64>()
                / draws as f64;
            assert!((mean - 0.5).abs() < 0.02, "x {x}: {mean}");
        }
    }

    #[test]
    fn on_grid_expectation_is_born() {
        // cos = 0.2 sits on the boundary after six of ten cells: E[p] = 0.6 exactly
        let mut rng = substream(4, 0);
        let values: Vec<f64> = (0..20_000)
            .map(|_| sample_random_density(10, &mut rng).unwrap().cdf(0.2).unwrap())
            .collect();
        let e = Estimate::from_values(&values);
        assert!((e.mean - 0.6).abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn full_integral_is_exact() {
        let e = universal_average_probability(1.0, &EnsembleConfig::new(500, 7, 9).unwrap()).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn single_cell_average_is_exactly_born() {
        for c in [-0.8, 0.0, 0.37, 0.6] {
            let e = universal_average_probability(c, &EnsembleConfig::new(3000, 1, 5).unwrap()).unwrap();
            assert_eq!(e.mean, born_probabilities(c).unwrap().0);
            assert_eq!(e.stderr, 0.0);
        }
    }

    #[test]
    fn averages_approach_born() {
        for (c, cells) in [(0.0, 10), (0.6, 20)] {
            let config = EnsembleConfig::new(10_000, cells, 17).unwrap();
            let e = universal_average_probability(c, &config).unwrap();
            assert!((e.mean - born_probabilities(c).unwrap().0).abs() < 0.02, "{c}: {e:?}");
            assert!(e.stderr <= 0.5 / (config.trials() as f64).sqrt());
        }
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let config = EnsembleConfig::new(5000, 12, 99).unwrap();
        let a = universal_average_probability(0.3, &config).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| universal_average_probability(0.3, &config).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(universal_average_probability(1.5, &EnsembleConfig::new(1, 1, 0).unwrap()).is_err());
        assert!(EnsembleConfig::new(0, 1, 0).is_err());
        assert!(EnsembleConfig::new(1, 0, 0).is_err());
    }
}
