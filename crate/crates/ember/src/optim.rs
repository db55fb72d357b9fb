//! Small derivative-free optimizers shared by the fitting routines.

/// Golden-section maximization of a unimodal function on [a, b].
///
/// Returns (x, f(x)). Non-finite function values are treated as -inf, so a
/// bracket that touches an infeasible region still converges to the feasible
/// optimum.
pub(crate) fn golden_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, iters: usize) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let val = |v: f64| if v.is_finite() { v } else { f64::NEG_INFINITY };
    let (mut a, mut b) = (a, b);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = val(f(c));
    let mut fd = val(f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = val(f(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = val(f(d));
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Outcome of a Nelder–Mead run.
#[derive(Debug, Clone)]
pub(crate) struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Number of times the incumbent best improved by more than `tol`.
    pub improved_moves: usize,
    pub converged: bool,
}

/// Nelder–Mead maximization with standard coefficients.
///
/// Convergence: the simplex value spread and the best-value improvement over
/// a full iteration both fall below `tol`. Gives up after `max_evals`
/// function evaluations and reports `converged = false`.
pub(crate) fn nelder_mead_max<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    tol: f64,
    max_evals: usize,
) -> SimplexResult {
    let n = x0.len();
    let mut evals = 0usize;
    let mut improved_moves = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evals)).collect();

    let mut best = values
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);

    loop {
        // order descending by value (maximization)
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap());
        let reorder_points: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let reorder_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = reorder_points;
        values = reorder_values;

        let spread = values[0] - values[n];
        if spread.abs() < tol {
            return SimplexResult {
                x: simplex[0].clone(),
                value: values[0],
                evaluations: evals,
                improved_moves,
                converged: true,
            };
        }
        if evals >= max_evals {
            return SimplexResult {
                x: simplex[0].clone(),
                value: values[0],
                evaluations: evals,
                improved_moves,
                converged: false,
            };
        }

        // centroid of all but worst
        let mut centroid = vec![0.0; n];
        for p in simplex.iter().take(n) {
            for (c, &x) in centroid.iter_mut().zip(p) {
                *c += x;
            }
        }
        for c in centroid.iter_mut() {
            *c /= n as f64;
        }

        let lerp = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(&c, &w)| c + t * (c - w))
                .collect()
        };

        let reflected = lerp(1.0);
        let fr = eval(&reflected, &mut evals);
        if fr > values[0] {
            // try expansion
            let expanded = lerp(2.0);
            let fe = eval(&expanded, &mut evals);
            if fe > fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr > values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            // contraction (outside if reflected beats worst, else inside)
            let contracted = if fr > values[n] { lerp(0.5) } else { lerp(-0.5) };
            let fc = eval(&contracted, &mut evals);
            if fc > values[n].max(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                // shrink toward best
                for i in 1..=n {
                    let p: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(&b, &x)| b + 0.5 * (x - b))
                        .collect();
                    values[i] = eval(&p, &mut evals);
                    simplex[i] = p;
                }
            }
        }

        let new_best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if new_best > best + tol {
            improved_moves += 1;
        }
        if new_best > best {
            best = new_best;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, v) = golden_max(|x| -(x - 1.3) * (x - 1.3), -10.0, 10.0, 80);
        assert!((x - 1.3).abs() < 1e-8);
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn nelder_mead_maximizes_quadratic() {
        let res = nelder_mead_max(
            |x| -((x[0] - 2.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2)),
            &[0.0, 0.0],
            0.5,
            1e-10,
            2000,
        );
        assert!(res.converged);
        assert!((res.x[0] - 2.0).abs() < 1e-4);
        assert!((res.x[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_started_at_optimum_reports_no_improving_moves() {
        let res = nelder_mead_max(
            |x| -(x[0] * x[0] + x[1] * x[1]),
            &[0.0, 0.0],
            0.1,
            1e-6,
            2000,
        );
        assert!(res.converged);
        assert_eq!(res.improved_moves, 0);
    }
}
