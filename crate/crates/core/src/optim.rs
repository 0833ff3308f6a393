//! Box-constrained minimization by projected Newton steps with an
//! active-set split and a backtracking line search along the projected arc.
//!
//! The callback fills the gradient and the dense Hessian on every
//! evaluation; at the problem sizes this crate targets the Hessian assembly
//! is cheap next to the factorization inside the objective itself.
//! Coordinates sitting at a bound
//! with an outward-pointing gradient are held by projection; the Newton
//! system is solved on the remaining free block, with a diagonal ridge
//! escalation if the block is numerically indefinite. Termination is on the
//! sup-norm of the projected gradient.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Result, SsepError};

#[derive(Debug, Clone)]
pub struct OptimOptions {
    /// Sup-norm tolerance on the projected gradient.
    pub tol: f64,
    pub max_iters: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_c1: f64,
    /// Step halvings before the line search gives up.
    pub max_backtracks: u32,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 500,
            armijo_c1: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub projected_grad_norm: f64,
    pub iterations: usize,
    /// Projected gradient reached `tol`.
    pub converged: bool,
    /// The line search stalled before convergence; `x` is the best iterate.
    pub line_search_failed: bool,
}

fn project(x: &mut DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

/// Gradient with components pointing out of the feasible box zeroed.
fn projected_gradient(
    x: &DVector<f64>,
    g: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        if (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0) {
            0.0
        } else {
            g[i]
        }
    })
}

/// Newton direction restricted to the free coordinates, `−g` on the pinned
/// ones. Escalates a diagonal ridge until the free block factorizes.
fn newton_direction(
    g: &DVector<f64>,
    hess: &DMatrix<f64>,
    free: &[usize],
) -> Option<DVector<f64>> {
    let n = g.len();
    let k = free.len();
    let mut direction = DVector::from_fn(n, |i, _| -g[i]);
    if k == 0 {
        return Some(direction);
    }
    let mut block = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (a, &i) in free.iter().enumerate() {
        rhs[a] = -g[i];
        for (b, &j) in free.iter().enumerate() {
            block[(a, b)] = hess[(i, j)];
        }
    }
    let max_diag = (0..k).map(|a| block[(a, a)].abs()).fold(0.0, f64::max);
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut shifted = block.clone();
        for a in 0..k {
            shifted[(a, a)] += ridge;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            let step = chol.solve(&rhs);
            if step.iter().all(|v| v.is_finite()) {
                for (a, &i) in free.iter().enumerate() {
                    direction[i] = step[a];
                }
                return Some(direction);
            }
        }
        ridge = if ridge == 0.0 {
            1e-12 * max_diag.max(1e-300)
        } else {
            ridge * 100.0
        };
    }
    None
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0` (projected
/// into the box). The callback may return non-finite values away from the
/// current iterate, which the line search treats as a rejection.
pub fn minimize_box<F>(
    mut f: F,
    x0: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    opts: &OptimOptions,
) -> Result<OptimOutcome>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>, &mut DMatrix<f64>) -> f64,
{
    let n = x0.len();
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);

    let mut x = x0.clone();
    project(&mut x, lower, upper);
    let mut g = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let mut fx = f(&x, &mut g, &mut hess);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(SsepError::NonFinite("objective at the starting point"));
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut line_search_failed = false;

    for _ in 0..opts.max_iters {
        let pg = projected_gradient(&x, &g, lower, upper);
        if pg.amax() < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Coordinates pinned at a bound by an outward gradient are excluded
        // from the Newton block.
        let free: Vec<usize> = (0..n)
            .filter(|&i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let mut direction = match newton_direction(&g, &hess, &free) {
            Some(d) => d,
            None => -&g,
        };
        if direction.dot(&g) >= 0.0 {
            direction = -&g;
        }

        let mut accepted = false;
        let mut tried_steepest = false;
        let mut hess_trial = DMatrix::zeros(n, n);
        'search: loop {
            let mut step = 1.0;
            for _ in 0..=opts.max_backtracks {
                let mut x_new = &x + &direction * step;
                project(&mut x_new, lower, upper);
                if (&x_new - &x).amax() == 0.0 {
                    break;
                }
                let mut g_new = DVector::zeros(n);
                let f_new = f(&x_new, &mut g_new, &mut hess_trial);
                let decrease = opts.armijo_c1 * g.dot(&(&x_new - &x));
                if f_new.is_finite() && f_new <= fx + decrease {
                    x = x_new;
                    fx = f_new;
                    g = g_new;
                    std::mem::swap(&mut hess, &mut hess_trial);
                    accepted = true;
                    break 'search;
                }
                step *= 0.5;
            }
            if tried_steepest {
                break;
            }
            // Retry once along steepest descent before declaring a stall.
            direction = -&g;
            tried_steepest = true;
        }
        if !accepted {
            line_search_failed = true;
            break;
        }
    }

    let pg = projected_gradient(&x, &g, lower, upper);
    let projected_grad_norm = pg.amax();
    if projected_grad_norm < opts.tol {
        converged = true;
        line_search_failed = false;
    }
    Ok(OptimOutcome {
        x,
        value: fx,
        gradient: g,
        projected_grad_norm,
        iterations,
        converged,
        line_search_failed,
    })
}
