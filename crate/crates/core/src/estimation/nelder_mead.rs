//! Nelder-Mead simplex minimization.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    /// Stop when `|f_worst - f_best| <= rel_tol * (|f_best| + rel_tol)`.
    pub rel_tol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { rel_tol: 1e-8, max_evals: 2000 }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` starting from a simplex of `x0` and `x0 + step_i e_i`.
///
/// Non-finite objective values are treated as `+inf`, so infeasible points
/// are simply never accepted.
pub fn minimize<F>(mut f: F, x0: &[f64], step: &[f64], opts: NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let k = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let f0 = eval(x0, &mut evals);
    if k == 0 {
        return NelderMeadResult { x: vec![], fx: f0, evals, converged: true };
    }

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    let mut values = Vec::with_capacity(k + 1);
    simplex.push(x0.to_vec());
    values.push(f0);
    for i in 0..k {
        let mut x = x0.to_vec();
        x[i] += step[i];
        values.push(eval(&x, &mut evals));
        simplex.push(x);
    }

    let mut converged = false;
    let mut order: Vec<usize> = (0..=k).collect();
    loop {
        // stable sort keeps the earlier vertex first on ties
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let (best, worst, second) = (order[0], order[k], order[k - 1]);
        let spread = values[worst] - values[best];
        if values[best].is_finite() && spread <= opts.rel_tol * (values[best].abs() + opts.rel_tol) {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }

        let mut centroid = vec![0.0; k];
        for &i in &order[..k] {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x / k as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[worst]).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(REFLECT);
        let fr = eval(&xr, &mut evals);
        if fr < values[best] {
            let xe = along(EXPAND);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second] {
            simplex[worst] = xr;
            values[worst] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[worst] {
            let x = along(REFLECT * CONTRACT);
            let v = eval(&x, &mut evals);
            (x, v)
        } else {
            let x = along(-CONTRACT);
            let v = eval(&x, &mut evals);
            (x, v)
        };
        if fc < values[worst].min(fr) {
            simplex[worst] = xc;
            values[worst] = fc;
            continue;
        }
        let xb = simplex[best].clone();
        for &i in &order[1..] {
            let shrunk: Vec<f64> = xb.iter().zip(&simplex[i]).map(|(b, x)| b + SHRINK * (x - b)).collect();
            values[i] = eval(&shrunk, &mut evals);
            simplex[i] = shrunk;
        }
    }
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let best = order[0];
    NelderMeadResult { x: simplex[best].clone(), fx: values[best], evals, converged }
}
