use nalgebra::{DMatrix, DVector};

use crate::loss::Objective;

pub(crate) const MAX_ITER: usize = 100;
pub(crate) const MAX_HALVINGS: usize = 30;
pub(crate) const GRAD_TOL: f64 = 1e-8;
/// Increase in the objective tolerated by the line search, relative to `1 + |f|`, so
/// that steps near the optimum are not rejected for summation roundoff.
const ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct NewtonResult {
    pub theta: Vec<f64>,
    pub objective: Objective,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted step, starting with the initial point. Steps may
    /// raise it by at most the roundoff slack.
    #[allow(dead_code)]
    pub values: Vec<f64>,
}

impl NewtonResult {
    /// Inverse Hessian at the final point, if it is positive definite.
    pub fn inverse_hessian(&self) -> Option<DMatrix<f64>> {
        self.objective.hessian.clone().cholesky().map(|c| c.inverse())
    }
}

fn converged(obj: &Objective) -> bool {
    obj.gradient.amax() < GRAD_TOL * (1.0 + obj.value.abs())
}

/// Damped Newton minimization with step-halving.
///
/// `eval` returns value, gradient and Hessian; `value` only the objective value (used by
/// the line search).
pub(crate) fn minimize<E, V>(eval: E, value: V, theta0: Vec<f64>) -> NewtonResult
where
    E: Fn(&[f64]) -> Objective,
    V: Fn(&[f64]) -> f64,
{
    let mut theta = theta0;
    let mut obj = eval(&theta);
    let mut values = vec![obj.value];
    let mut iterations = 0;
    let mut ok = obj.value.is_finite() && converged(&obj);

    while !ok && iterations < MAX_ITER && obj.value.is_finite() {
        iterations += 1;
        let neg_grad = -&obj.gradient;
        let step: Option<DVector<f64>> = match obj.hessian.clone().cholesky() {
            Some(c) => Some(c.solve(&neg_grad)),
            None => obj.hessian.clone().lu().solve(&neg_grad),
        };
        let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) else {
            break;
        };

        let slack = ROUNDOFF * (1.0 + obj.value.abs());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let v = value(&cand);
            if v.is_finite() && v <= obj.value + slack {
                accepted = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        let Some(next) = accepted else {
            break;
        };
        theta = next;
        obj = eval(&theta);
        values.push(obj.value);
        ok = converged(&obj);
    }

    NewtonResult {
        theta,
        objective: obj,
        iterations,
        converged: ok,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // f(x, y) = exp(x) - x + (y - 1)^4
    fn eval(t: &[f64]) -> Objective {
        let (x, y) = (t[0], t[1]);
        Objective {
            value: x.exp() - x + (y - 1.0).powi(4),
            gradient: DVector::from_vec(vec![x.exp() - 1.0, 4.0 * (y - 1.0).powi(3)]),
            hessian: DMatrix::from_row_slice(2, 2, &[x.exp(), 0.0, 0.0, 12.0 * (y - 1.0).powi(2) + 1e-12]),
        }
    }

    #[test]
    fn accepted_values_never_increase() {
        let res = minimize(eval, |t| eval(t).value, vec![3.0, -2.0]);
        assert!(res.converged);
        assert!(res.values.windows(2).all(|w| w[1] <= w[0] + ROUNDOFF * (1.0 + w[0].abs())));
        assert!(res.theta[0].abs() < 1e-6);
        assert!((res.theta[1] - 1.0).abs() < 1e-2);
    }
}
