//! BFGS maximization and QR-based linear least squares.

use crate::error::{Error, Result};

const ARMIJO_C: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

/// A smooth objective to maximize.
pub struct OptProblem<F>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    pub dim: usize,
    /// Returns the value and gradient at a point.
    pub objective: F,
    /// Stop once the gradient norm falls to or below this value.
    pub tolerance: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `prob.objective` from `x0` with BFGS and Armijo backtracking.
///
/// The inverse Hessian of the negated objective starts at the identity, is
/// rescaled after the first accepted step, and is reset to the identity when
/// the curvature condition fails. A line search that cannot find sufficient
/// increase ends the run with `converged = false` and the best iterate.
pub fn bfgs_maximize<F>(prob: &mut OptProblem<F>, x0: &[f64]) -> Result<OptResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = prob.dim;
    if n == 0 || x0.len() != n {
        return Err(Error::Contract(format!(
            "optimizer dimension {n} with start point of length {}",
            x0.len()
        )));
    }
    if !(prob.tolerance > 0.0) {
        return Err(Error::Contract("tolerance must be positive".into()));
    }

    // Work on the minimization of -f.
    let mut eval = |x: &[f64]| {
        let (v, g) = (prob.objective)(x);
        (-v, g.into_iter().map(|gi| -gi).collect::<Vec<_>>())
    };
    let mut x = x0.to_vec();
    let (mut f, mut g) = eval(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("objective is not finite at the start point".into()));
    }
    let mut h = identity(n);
    let mut fresh = true;
    let mut iters = 0;
    let mut gnorm = norm(&g);

    while gnorm > prob.tolerance && iters < prob.max_iters {
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }

        let Some((x_new, f_new, g_new)) = line_search(&mut eval, &x, f, slope, &dir) else {
            if fresh {
                break;
            }
            // Retry from steepest descent before giving up.
            h = identity(n);
            fresh = true;
            continue;
        };
        iters += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if fresh {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        } else {
            h = identity(n);
            fresh = true;
        }
        x = x_new;
        f = f_new;
        g = g_new;
        gnorm = norm(&g);
    }

    Ok(OptResult {
        x,
        value: -f,
        grad_norm: gnorm,
        iterations: iters,
        converged: gnorm <= prob.tolerance,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let coef = rho * rho * yhy + rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

type Eval<'a> = dyn FnMut(&[f64]) -> (f64, Vec<f64>) + 'a;

fn line_search(
    eval: &mut Eval<'_>,
    x: &[f64],
    f: f64,
    slope: f64,
    dir: &[f64],
) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    let mut alpha = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + alpha * d).collect();
        let (ft, gt) = eval(&trial);
        let finite = ft.is_finite() && gt.iter().all(|v| v.is_finite());
        if finite && ft <= f + ARMIJO_C * alpha * slope {
            return Some(refine(eval, x, f, slope, dir, alpha, (trial, ft, gt)));
        }
        // Safeguarded quadratic interpolation, never shrinking by less than SHRINK.
        let next = if finite {
            let denom = 2.0 * (ft - f - slope * alpha);
            if denom > 0.0 {
                (-slope * alpha * alpha / denom).clamp(0.1 * alpha, SHRINK * alpha)
            } else {
                SHRINK * alpha
            }
        } else {
            SHRINK * alpha
        };
        alpha = next;
    }
    None
}

/// Secant correction of an accepted step: the zero of the directional
/// derivative interpolated between `0` and `alpha`. Exact on quadratics. The
/// corrected point is kept only if it also satisfies the Armijo condition and
/// lowers the objective further.
fn refine(
    eval: &mut Eval<'_>,
    x: &[f64],
    f: f64,
    slope: f64,
    dir: &[f64],
    alpha: f64,
    accepted: (Vec<f64>, f64, Vec<f64>),
) -> (Vec<f64>, f64, Vec<f64>) {
    let slope_t = dot(&accepted.2, dir);
    let denom = slope_t - slope;
    if !(denom > 0.0) {
        return accepted;
    }
    let star = -alpha * slope / denom;
    if !(star > 0.0) || (star - alpha).abs() <= 1e-12 * alpha || star > 4.0 * alpha {
        return accepted;
    }
    let trial: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + star * d).collect();
    let (ft, gt) = eval(&trial);
    if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft < accepted.1
        && ft <= f + ARMIJO_C * star * slope
    {
        (trial, ft, gt)
    } else {
        accepted
    }
}

/// Solves `min |A theta - y|` for a column-major `rows x cols` design.
///
/// Uses Householder QR without normal equations. Columns whose diagonal of
/// `R` falls below `1e-12 * max|R_jj|` are reported as dependent on the
/// preceding columns.
pub fn least_squares(a: &[f64], rows: usize, cols: usize, y: &[f64]) -> Result<Vec<f64>> {
    least_squares_named(a, rows, cols, y, &|j| format!("column {j}"))
}

/// [`least_squares`] with caller-supplied column names in the rank error.
pub fn least_squares_named(
    a: &[f64],
    rows: usize,
    cols: usize,
    y: &[f64],
    name: &dyn Fn(usize) -> String,
) -> Result<Vec<f64>> {
    if a.len() != rows * cols || y.len() != rows {
        return Err(Error::Dimension(format!(
            "design {} values for {rows}x{cols}, rhs {}",
            a.len(),
            y.len()
        )));
    }
    if cols == 0 || rows < cols {
        return Err(Error::InsufficientData(format!(
            "least squares needs rows >= cols >= 1, got {rows}x{cols}"
        )));
    }
    let mut q = a.to_vec();
    let mut rhs = y.to_vec();
    let mut diag = vec![0.0; cols];

    for j in 0..cols {
        let col = &mut q[j * rows..(j + 1) * rows];
        let sigma = col[j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if sigma == 0.0 {
            diag[j] = 0.0;
            continue;
        }
        let alpha = if col[j] > 0.0 { -sigma } else { sigma };
        col[j] -= alpha;
        let vnorm2 = col[j..].iter().map(|v| v * v).sum::<f64>();
        diag[j] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let v: Vec<f64> = col[j..].to_vec();
        for c in j + 1..cols {
            let other = &mut q[c * rows + j..(c + 1) * rows];
            let t = 2.0 * dot(&v, other) / vnorm2;
            other.iter_mut().zip(&v).for_each(|(o, vi)| *o -= t * vi);
        }
        let t = 2.0 * dot(&v, &rhs[j..]) / vnorm2;
        rhs[j..].iter_mut().zip(&v).for_each(|(o, vi)| *o -= t * vi);
    }

    let rmax = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let dependent: Vec<usize> = (0..cols)
        .filter(|&j| !(diag[j].abs() > 1e-12 * rmax))
        .collect();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient {
            terms: dependent.into_iter().map(name).collect(),
        });
    }

    let mut theta = vec![0.0; cols];
    for j in (0..cols).rev() {
        let mut acc = rhs[j];
        for c in j + 1..cols {
            acc -= q[c * rows + j] * theta[c];
        }
        theta[j] = acc / diag[j];
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn maximize<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(f: F, x0: &[f64], tol: f64) -> OptResult {
        let mut p = OptProblem { dim: x0.len(), objective: f, tolerance: tol, max_iters: 500 };
        bfgs_maximize(&mut p, x0).unwrap()
    }

    #[test]
    fn negative_squared_distance() {
        let c = [1.5, -2.0, 0.25];
        for x0 in [[0.0, 0.0, 0.0], [10.0, -7.0, 3.0], [-100.0, 50.0, 1e3]] {
            let r = maximize(
                |x| {
                    let v = -x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                    (v, x.iter().zip(&c).map(|(a, b)| -2.0 * (a - b)).collect())
                },
                &x0,
                1e-8,
            );
            assert!(r.converged && r.iterations <= 5, "{r:?}");
            for (a, b) in r.x.iter().zip(&c) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn negated_rosenbrock() {
        let r = maximize(
            |x| {
                let (a, b) = (x[0], x[1]);
                let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let ga = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                let gb = 200.0 * (b - a * a);
                (-v, vec![-ga, -gb])
            },
            &[-1.2, 1.0],
            1e-10,
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn variance_likelihood_matches_closed_form() {
        let res = [0.3, -1.2, 0.8, 2.1, -0.4, 0.05];
        let s: f64 = res.iter().map(|v| v * v).sum();
        let m = res.len() as f64;
        // Parametrize by log(sigma2) to stay in the domain.
        let r = maximize(
            |t| {
                let s2 = t[0].exp();
                let v = -s / (2.0 * s2) - 0.5 * m * s2.ln();
                (v, vec![s / (2.0 * s2) - 0.5 * m])
            },
            &[0.0],
            1e-12,
        );
        assert!((r.x[0].exp() - s / m).abs() < 1e-10);
    }

    #[test]
    fn start_with_non_finite_objective_is_an_error() {
        let mut p = OptProblem {
            dim: 1,
            objective: |_: &[f64]| (f64::NAN, vec![0.0]),
            tolerance: 1e-6,
            max_iters: 10,
        };
        assert!(bfgs_maximize(&mut p, &[0.0]).is_err());
    }

    fn normal_equations(a: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
        // Gram matrix + Gaussian elimination with partial pivoting.
        let mut g = vec![vec![0.0; cols + 1]; cols];
        for i in 0..cols {
            for j in 0..cols {
                g[i][j] = (0..rows).map(|r| a[i * rows + r] * a[j * rows + r]).sum();
            }
            g[i][cols] = (0..rows).map(|r| a[i * rows + r] * y[r]).sum();
        }
        for c in 0..cols {
            let p = (c..cols).max_by(|&i, &j| g[i][c].abs().total_cmp(&g[j][c].abs())).unwrap();
            g.swap(c, p);
            for r in c + 1..cols {
                let f = g[r][c] / g[c][c];
                for k in c..=cols {
                    g[r][k] -= f * g[c][k];
                }
            }
        }
        let mut x = vec![0.0; cols];
        for c in (0..cols).rev() {
            let s: f64 = (c + 1..cols).map(|k| g[c][k] * x[k]).sum();
            x[c] = (g[c][cols] - s) / g[c][c];
        }
        x
    }

    #[test]
    fn square_system_is_solved_exactly() {
        let a = [2.0, 1.0, 1.0, 3.0]; // columns (2,1), (1,3)
        let x = least_squares(&a, 2, 2, &[5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn matches_normal_equations_and_residual_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, cols) = (1000, 6);
        let a: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..rows).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = least_squares(&a, rows, cols, &y).unwrap();
        let oracle = normal_equations(&a, rows, cols, &y);
        for (u, v) in x.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-8);
        }
        let r: Vec<f64> = (0..rows)
            .map(|i| y[i] - (0..cols).map(|j| a[j * rows + i] * x[j]).sum::<f64>())
            .collect();
        let anorm = norm(&a);
        for j in 0..cols {
            let atr = dot(&a[j * rows..(j + 1) * rows], &r);
            assert!(atr.abs() <= 1e-8 * anorm * norm(&y));
        }
    }

    #[test]
    fn exact_fit_in_column_span() {
        let rows = 50;
        let a: Vec<f64> = (0..rows).map(|_| 1.0).chain((0..rows).map(|i| i as f64)).collect();
        let y: Vec<f64> = (0..rows).map(|i| 2.0 - 0.5 * i as f64).collect();
        let x = least_squares(&a, rows, 2, &y).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_names_dependent_columns() {
        let rows = 20;
        let c0: Vec<f64> = (0..rows).map(|i| i as f64).collect();
        let c1: Vec<f64> = (0..rows).map(|i| (i as f64).sin()).collect();
        let c2: Vec<f64> = c0.iter().zip(&c1).map(|(a, b)| 2.0 * a - b).collect();
        let a: Vec<f64> = [c0, c1, c2].concat();
        let err = least_squares(&a, rows, 3, &vec![1.0; rows]).unwrap_err();
        assert_eq!(err, Error::RankDeficient { terms: vec!["column 2".into()] });
    }

    proptest! {
        #[test]
        fn concave_quadratic_terminates_quickly(seed in 0u64..1000, dim in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // A = M M^T + dim I keeps the condition number moderate.
            let m: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut a = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    a[i * dim + j] = (0..dim).map(|k| m[i * dim + k] * m[j * dim + k]).sum::<f64>()
                        + if i == j { dim as f64 } else { 0.0 };
                }
            }
            let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let x0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let a2 = a.clone();
            let c2 = c.clone();
            let r = maximize(
                move |x| {
                    let d: Vec<f64> = x.iter().zip(&c2).map(|(u, v)| u - v).collect();
                    let ad: Vec<f64> = (0..dim).map(|i| dot(&a2[i * dim..(i + 1) * dim], &d)).collect();
                    (-0.5 * dot(&d, &ad), ad.iter().map(|v| -v).collect())
                },
                &x0,
                1e-6,
            );
            prop_assert!(r.converged);
            prop_assert!(r.iterations <= dim + 2, "{} iterations for dim {}", r.iterations, dim);
            for (u, v) in r.x.iter().zip(&c) {
                prop_assert!((u - v).abs() < 1e-5);
            }
        }
    }
}
