//! Matrix-free conjugate gradients on flat vectors.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// y += a x
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgExit {
    Converged,
    MaxIterations,
    /// A direction with `<p, A p> <= 0` was met and the iteration stopped.
    NegativeCurvature,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub exit: CgExit,
    pub relative_residual: f64,
}

/// Solves `A x = b` from `x = 0` with optional preconditioner `M^-1`.
///
/// On negative curvature the current iterate is returned, or the steepest
/// descent direction `b` if that happens in the first iteration.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    precondition: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    rel_tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let len = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; len];
    if b_norm == 0.0 {
        return CgOutcome {
            x,
            iterations: 0,
            exit: CgExit::Converged,
            relative_residual: 0.0,
        };
    }
    let mut r = b.to_vec();
    let mut z = match precondition {
        Some(m) => m(&r),
        None => r.clone(),
    };
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut exit = CgExit::MaxIterations;
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < max_iter {
        let ap = apply(&p);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            if iterations == 0 {
                x.copy_from_slice(b);
            }
            exit = CgExit::NegativeCurvature;
            break;
        }
        let alpha = rz / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        iterations += 1;
        rel = norm(&r) / b_norm;
        if rel <= rel_tol {
            exit = CgExit::Converged;
            break;
        }
        z = match precondition {
            Some(m) => m(&r),
            None => r.clone(),
        };
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    CgOutcome {
        x,
        iterations,
        exit,
        relative_residual: rel,
    }
}
