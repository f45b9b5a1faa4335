//! Nelder-Mead simplex descent on the unit box `[0, 1]^n`.
//!
//! Trial points are clipped back into the box. When the simplex collapses the
//! search restarts from the best vertex with a fresh simplex, until a restart
//! no longer improves the objective.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evaluations: usize,
    /// Stop once the spread of objective values across the simplex falls below this.
    pub f_tolerance: f64,
    /// ...and the simplex fits in a box of this size.
    pub x_tolerance: f64,
    pub initial_step: f64,
    pub max_rebuilds: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evaluations: 5000,
            f_tolerance: 1e-24,
            x_tolerance: 1e-12,
            initial_step: 0.1,
            max_rebuilds: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

fn clip(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

fn initial_simplex(x0: &[f64], step: f64) -> Vec<Vec<f64>> {
    let mut simplex = vec![x0.to_vec()];
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        // step inward when the start sits near the upper face
        v[i] = if x0[i] + step <= 1.0 {
            x0[i] + step
        } else {
            x0[i] - step
        };
        clip(&mut v);
        simplex.push(v);
    }
    simplex
}

/// Minimizes `f` over `[0, 1]^n` starting from `x0`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], options: &NelderMeadOptions) -> Minimum {
    let n = x0.len();
    let mut start = x0.to_vec();
    clip(&mut start);
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], count: &mut usize| {
        *count += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    if n == 0 {
        let value = eval(&start, &mut evaluations);
        return Minimum {
            x: start,
            value,
            evaluations,
        };
    }

    let mut best_x = start.clone();
    let mut best_f = eval(&start, &mut evaluations);
    let mut step = options.initial_step;

    for _ in 0..=options.max_rebuilds {
        let mut points = initial_simplex(&best_x, step);
        let mut values: Vec<f64> = points.iter().map(|p| eval(p, &mut evaluations)).collect();

        while evaluations < options.max_evaluations {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            points = order.iter().map(|&i| points[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let size = points[1..]
                .iter()
                .flat_map(|p| p.iter().zip(&points[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if spread <= options.f_tolerance && size <= options.x_tolerance {
                break;
            }
            if size <= options.x_tolerance * 1e-3 {
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| points[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                let mut v: Vec<f64> = centroid.iter().zip(&points[n]).map(|(c, w)| c + t * (w - c)).collect();
                clip(&mut v);
                v
            };

            let reflected = along(-1.0);
            let fr = eval(&reflected, &mut evaluations);
            if fr < values[0] {
                let expanded = along(-2.0);
                let fe = eval(&expanded, &mut evaluations);
                if fe < fr {
                    points[n] = expanded;
                    values[n] = fe;
                } else {
                    points[n] = reflected;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                points[n] = reflected;
                values[n] = fr;
                continue;
            }
            let (contracted, fc) = if fr < values[n] {
                let c = along(-0.5);
                let fc = eval(&c, &mut evaluations);
                (c, fc)
            } else {
                let c = along(0.5);
                let fc = eval(&c, &mut evaluations);
                (c, fc)
            };
            if fc < values[n].min(fr) {
                points[n] = contracted;
                values[n] = fc;
                continue;
            }
            // shrink toward the best vertex
            for i in 1..=n {
                let mut v: Vec<f64> = points[0]
                    .iter()
                    .zip(&points[i])
                    .map(|(b, p)| b + 0.5 * (p - b))
                    .collect();
                clip(&mut v);
                values[i] = eval(&v, &mut evaluations);
                points[i] = v;
            }
        }

        let (i_best, f_round) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, v)| (i, *v))
            .expect("simplex is nonempty");
        let improved = f_round < best_f;
        if f_round <= best_f {
            best_f = f_round;
            best_x = points[i_best].clone();
        }
        if !improved || evaluations >= options.max_evaluations {
            break;
        }
        step = (step * 0.5).max(1e-4);
    }

    Minimum {
        x: best_x,
        value: best_f,
        evaluations,
    }
}
