//! Break-point densities on the elastic coordinate [-1, 1].
//!
//! Every family has a piecewise-linear CDF, so integration and inversion are
//! closed-form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GtrError, Result};

const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// A normalized probability density on [-1, 1] describing where an elastic breaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityRepr", into = "DensityRepr")]
pub enum BreakDensity {
    /// Constant 1/2 on [-1, 1].
    Uniform,
    /// Constant on `[center - half_width, center + half_width]`, zero elsewhere.
    LocallyUniform {
        center: f64,
        half_width: f64,
    },
    PiecewiseConstant(PiecewiseConstant),
}

/// Cells `[b_k, b_{k+1})` carrying probability mass `weights[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    breakpoints: Vec<f64>,
    weights: Vec<f64>,
    // cumulative[k] = mass strictly left of breakpoints[k]; len = cells + 1
    cumulative: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(breakpoints: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(GtrError::construction("breakpoints need at least two entries"));
        }
        if weights.len() + 1 != breakpoints.len() {
            return Err(GtrError::construction(format!(
                "{} breakpoints require {} weights, got {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                weights.len()
            )));
        }
        if breakpoints[0] != -1.0 || breakpoints[breakpoints.len() - 1] != 1.0 {
            return Err(GtrError::construction("breakpoints must start at -1 and end at 1"));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GtrError::construction("breakpoints must be strictly increasing"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GtrError::construction("weights must be finite and nonnegative"));
        }
        let mut cumulative = Vec::with_capacity(weights.len() + 1);
        let mut acc = 0.0;
        cumulative.push(acc);
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        if (acc - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(GtrError::construction(format!("weights sum to {acc}, expected 1")));
        }
        Ok(PiecewiseConstant {
            breakpoints,
            weights,
            cumulative,
        })
    }

    /// `cells` equal-width cells over [-1, 1].
    pub fn equally_spaced(weights: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(GtrError::construction("at least one cell is required"));
        }
        let breakpoints = (0..=n)
            .map(|k| match k {
                0 => -1.0,
                k if k == n => 1.0,
                k => -1.0 + 2.0 * k as f64 / n as f64,
            })
            .collect();
        Self::new(breakpoints, weights)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cells(&self) -> usize {
        self.weights.len()
    }

    // Right-continuous: a point on a breakpoint belongs to the cell on its right.
    fn cell_of(&self, x: f64) -> usize {
        let k = self.breakpoints.partition_point(|b| *b <= x);
        k.saturating_sub(1).min(self.cells() - 1)
    }

    fn pdf(&self, x: f64) -> f64 {
        let k = self.cell_of(x);
        self.weights[k] / (self.breakpoints[k + 1] - self.breakpoints[k])
    }

    fn cdf(&self, x: f64) -> f64 {
        let k = self.cell_of(x);
        let (lo, hi) = (self.breakpoints[k], self.breakpoints[k + 1]);
        self.cumulative[k] + self.weights[k] * ((x - lo) / (hi - lo))
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            let first = self.weights.iter().position(|w| *w > 0.0).unwrap_or(0);
            return self.breakpoints[first];
        }
        // first cell whose right-edge cumulative mass reaches u
        let k = self.cumulative[1..].partition_point(|c| *c < u);
        let k = if k >= self.cells() {
            self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(self.cells() - 1)
        } else {
            k
        };
        let (lo, hi) = (self.breakpoints[k], self.breakpoints[k + 1]);
        let frac = ((u - self.cumulative[k]) / self.weights[k]).clamp(0.0, 1.0);
        (lo + frac * (hi - lo)).clamp(lo, hi)
    }
}

impl BreakDensity {
    pub fn uniform() -> Self {
        BreakDensity::Uniform
    }

    pub fn locally_uniform(center: f64, half_width: f64) -> Result<Self> {
        if !(center.is_finite() && half_width.is_finite()) {
            return Err(GtrError::construction("center and half_width must be finite"));
        }
        if half_width <= 0.0 {
            return Err(GtrError::construction("half_width must be positive"));
        }
        if center - half_width < -1.0 || center + half_width > 1.0 {
            return Err(GtrError::construction(format!(
                "support [{}, {}] is not contained in [-1, 1]",
                center - half_width,
                center + half_width
            )));
        }
        Ok(BreakDensity::LocallyUniform { center, half_width })
    }

    pub fn piecewise(breakpoints: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        PiecewiseConstant::new(breakpoints, weights).map(BreakDensity::PiecewiseConstant)
    }

    pub fn pdf_at(&self, x: f64) -> Result<f64> {
        check_coordinate(x)?;
        Ok(match self {
            BreakDensity::Uniform => 0.5,
            BreakDensity::LocallyUniform { center, half_width } => {
                let (lo, hi) = (center - half_width, center + half_width);
                if x >= lo && x < hi {
                    0.5 / half_width
                } else {
                    0.0
                }
            }
            BreakDensity::PiecewiseConstant(p) => p.pdf(x),
        })
    }

    /// Probability that the elastic breaks inside `[x1, x2]`.
    pub fn integrate(&self, x1: f64, x2: f64) -> Result<f64> {
        check_coordinate(x1)?;
        check_coordinate(x2)?;
        if x1 > x2 {
            return Err(GtrError::domain(format!("lower limit {x1} exceeds upper limit {x2}")));
        }
        Ok((self.cdf_unchecked(x2) - self.cdf_unchecked(x1)).clamp(0.0, 1.0))
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        check_coordinate(x)?;
        Ok(self.cdf_unchecked(x))
    }

    pub(crate) fn cdf_unchecked(&self, x: f64) -> f64 {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let value = match self {
            BreakDensity::Uniform => (x + 1.0) / 2.0,
            BreakDensity::LocallyUniform { center, half_width } => {
                let lo = center - half_width;
                ((x - lo) / (2.0 * half_width)).clamp(0.0, 1.0)
            }
            BreakDensity::PiecewiseConstant(p) => p.cdf(x),
        };
        value.clamp(0.0, 1.0)
    }

    /// Smallest `x` with `cdf(x) >= u`. For `u = 0` this is the left edge of
    /// the support.
    pub fn inverse_cdf(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(GtrError::domain(format!("u = {u} is outside [0, 1]")));
        }
        Ok(self.inverse_cdf_unchecked(u))
    }

    fn inverse_cdf_unchecked(&self, u: f64) -> f64 {
        match self {
            BreakDensity::Uniform => (2.0 * u - 1.0).clamp(-1.0, 1.0),
            BreakDensity::LocallyUniform { center, half_width } => {
                let lo = center - half_width;
                (lo + 2.0 * half_width * u).clamp(lo, center + half_width)
            }
            BreakDensity::PiecewiseConstant(p) => p.inverse_cdf(u),
        }
    }

    /// Draws a break point by inverting the CDF at a uniform variate from `rng`.
    pub fn sample_break_point<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.inverse_cdf_unchecked(u)
    }
}

fn check_coordinate(x: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(GtrError::domain(format!("x = {x} is outside [-1, 1]")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum DensityRepr {
    Uniform,
    LocallyUniform { center: f64, half_width: f64 },
    Piecewise { breakpoints: Vec<f64>, weights: Vec<f64> },
}

impl TryFrom<DensityRepr> for BreakDensity {
    type Error = GtrError;

    fn try_from(repr: DensityRepr) -> Result<Self> {
        match repr {
            DensityRepr::Uniform => Ok(BreakDensity::Uniform),
            DensityRepr::LocallyUniform { center, half_width } => BreakDensity::locally_uniform(center, half_width),
            DensityRepr::Piecewise { breakpoints, weights } => BreakDensity::piecewise(breakpoints, weights),
        }
    }
}

impl From<BreakDensity> for DensityRepr {
    fn from(d: BreakDensity) -> Self {
        match d {
            BreakDensity::Uniform => DensityRepr::Uniform,
            BreakDensity::LocallyUniform { center, half_width } => DensityRepr::LocallyUniform { center, half_width },
            BreakDensity::PiecewiseConstant(p) => DensityRepr::Piecewise {
                breakpoints: p.breakpoints,
                weights: p.weights,
            },
        }
    }
}
