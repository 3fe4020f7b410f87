//! Derivative-free minimization over a box `x >= lower`.
//!
//! Nelder-Mead with dimension-adaptive coefficients (Gao & Han, 2012). Trial
//! points are projected onto the feasible region before evaluation, so every
//! vertex of the simplex is feasible.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadConfig {
    pub max_evaluations: usize,
    /// Spread of objective values across the simplex.
    pub f_tol: f64,
    /// Largest vertex distance (max-norm) from the best vertex.
    pub x_tol: f64,
    /// Initial edge length relative to `|x0_i|`, with `min_step` as floor.
    pub relative_step: f64,
    pub min_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_evaluations: 10_000,
            f_tol: 1e-8,
            x_tol: 1e-6,
            relative_step: 0.5,
            min_step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
}

struct Problem<'a, F> {
    f: F,
    lower: &'a [f64],
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> Problem<'_, F> {
    fn eval(&mut self, x: &mut [f64]) -> f64 {
        for (v, lo) in x.iter_mut().zip(self.lower) {
            if *v < *lo {
                *v = *lo;
            }
        }
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Minimizes `f` subject to `x >= lower`, starting from `x0`.
pub fn minimize_bounded<F>(f: F, x0: &[f64], lower: &[f64], cfg: &NelderMeadConfig) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut prob = Problem { f, lower, evaluations: 0 };
    if n == 0 {
        let v = prob.eval(&mut []);
        return Minimum {
            x: Vec::new(),
            f: v,
            evaluations: 1,
            converged: true,
        };
    }
    let nf = n as f64;
    let (alpha, gamma) = (1.0, 1.0 + 2.0 / nf);
    let (rho, sigma) = (0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    values.push(prob.eval(&mut start));
    simplex.push(start.clone());
    for i in 0..n {
        let mut v = start.clone();
        let step = (cfg.relative_step * start[i].abs()).max(cfg.min_step);
        v[i] += step;
        values.push(prob.eval(&mut v));
        simplex.push(v);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    loop {
        order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
        let (best, worst, second) = (order[0], order[n], order[n - 1]);

        let f_spread = values[worst] - values[best];
        let x_spread = simplex
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if f_spread.abs() < cfg.f_tol && x_spread < cfg.x_tol {
            return Minimum {
                x: simplex[best].clone(),
                f: values[best],
                evaluations: prob.evaluations,
                converged: true,
            };
        }
        if prob.evaluations >= cfg.max_evaluations {
            return Minimum {
                x: simplex[best].clone(),
                f: values[best],
                evaluations: prob.evaluations,
                converged: false,
            };
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                *c += v / nf;
            }
        }

        for j in 0..n {
            trial[j] = centroid[j] + alpha * (centroid[j] - simplex[worst][j]);
        }
        let fr = prob.eval(&mut trial);

        if fr < values[best] {
            for j in 0..n {
                trial2[j] = centroid[j] + gamma * (trial[j] - centroid[j]);
            }
            let fe = prob.eval(&mut trial2);
            if fe < fr {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = fe;
            } else {
                simplex[worst].copy_from_slice(&trial);
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second] {
            simplex[worst].copy_from_slice(&trial);
            values[worst] = fr;
            continue;
        }
        // contraction, outside or inside
        let outside = fr < values[worst];
        for j in 0..n {
            trial2[j] = if outside {
                centroid[j] + rho * (trial[j] - centroid[j])
            } else {
                centroid[j] - rho * (centroid[j] - simplex[worst][j])
            };
        }
        let fc = prob.eval(&mut trial2);
        if (outside && fc <= fr) || (!outside && fc < values[worst]) {
            simplex[worst].copy_from_slice(&trial2);
            values[worst] = fc;
            continue;
        }
        // shrink toward the best vertex
        let anchor = simplex[best].clone();
        for &i in &order[1..] {
            for j in 0..n {
                simplex[i][j] = anchor[j] + sigma * (simplex[i][j] - anchor[j]);
            }
            let mut v = std::mem::take(&mut simplex[i]);
            values[i] = prob.eval(&mut v);
            simplex[i] = v;
        }
    }
}
