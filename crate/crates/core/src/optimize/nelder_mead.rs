//! Nelder-Mead simplex minimizer on fixed-size points.

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Edge length of the initial axis-aligned simplex.
    pub initial_step: f64,
    /// Stop once the largest vertex distance from the best vertex falls below this.
    pub xtol: f64,
    /// Stop once `f_worst - f_best` falls below this.
    pub ftol: f64,
    pub max_evals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexResult<const N: usize> {
    pub x: [f64; N],
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

pub fn minimize<const N: usize, F>(
    mut f: F,
    x0: [f64; N],
    opts: &SimplexOptions,
) -> SimplexResult<N>
where
    F: FnMut(&[f64; N]) -> f64,
{
    let mut evals = 0usize;
    let mut eval = |x: &[f64; N], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((x0, eval(&x0, &mut evals)));
    for i in 0..N {
        let mut v = x0;
        v[i] += opts.initial_step;
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    let mut converged = false;
    loop {
        // stable sort keeps ties in insertion order, so runs are reproducible
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));

        let best = simplex[0];
        let worst = simplex[N];
        let spread = worst.1 - best.1;
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| {
                v.iter()
                    .zip(best.0.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter < opts.xtol || spread < opts.ftol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }

        let mut centroid = [0.0; N];
        for (v, _) in &simplex[..N] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / N as f64;
            }
        }
        let along = |t: f64| {
            let mut p = [0.0; N];
            for k in 0..N {
                p[k] = centroid[k] + t * (worst.0[k] - centroid[k]);
            }
            p
        };

        let xr = along(-ALPHA);
        let fr = eval(&xr, &mut evals);
        if fr < best.1 {
            let xe = along(-GAMMA);
            let fe = eval(&xe, &mut evals);
            simplex[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[N - 1].1 {
            simplex[N] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(-RHO);
            (xc, eval(&xc, &mut evals))
        } else {
            let xc = along(RHO);
            (xc, eval(&xc, &mut evals))
        };
        if fc < fr.min(worst.1) {
            simplex[N] = (xc, fc);
            continue;
        }
        for vertex in simplex.iter_mut().skip(1) {
            let p: [f64; N] =
                std::array::from_fn(|k| best.0[k] + SIGMA * (vertex.0[k] - best.0[k]));
            *vertex = (p, eval(&p, &mut evals));
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    SimplexResult {
        x: simplex[0].0,
        value: simplex[0].1,
        evaluations: evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SimplexOptions {
        SimplexOptions {
            initial_step: 0.5,
            xtol: 1e-10,
            ftol: 1e-20,
            max_evals: 10_000,
        }
    }

    #[test]
    fn quadratic_bowl() {
        let r = minimize(
            |x: &[f64; 3]| {
                (x[0] - 1.0).powi(2) + 2.0 * (x[1] + 0.5).powi(2) + 3.0 * (x[2] - 2.0).powi(2)
            },
            [0.0; 3],
            &opts(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8);
        assert!((r.x[1] + 0.5).abs() < 1e-8);
        assert!((r.x[2] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock() {
        let r = minimize(
            |x: &[f64; 2]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            [-1.2, 1.0],
            &opts(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!((r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let mut o = opts();
        o.max_evals = 10;
        let r = minimize(|x: &[f64; 2]| x[0].powi(2) + x[1].powi(2), [5.0, 5.0], &o);
        assert!(!r.converged);
        assert!(r.evaluations >= 10);
    }

    #[test]
    fn deterministic() {
        let f = |x: &[f64; 4]| x.iter().map(|v| (v.sin() - 0.3).powi(2)).sum::<f64>();
        let a = minimize(f, [0.1, 0.2, 0.3, 0.4], &opts());
        let b = minimize(f, [0.1, 0.2, 0.3, 0.4], &opts());
        assert_eq!(a.x, b.x);
        assert_eq!(a.evaluations, b.evaluations);
    }
}
