//! Ridge-penalised logistic regression fitted by damped Newton iterations.
//! The intercept is not penalised.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Design;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeParams {
    pub penalty: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RidgeParams {
    fn default() -> Self {
        Self {
            penalty: 1.0,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    intercept: f64,
    weights: Vec<f64>,
}

impl LogisticModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let eta = self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        sigmoid(eta)
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(t)) without overflow.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t
    } else if t < -30.0 {
        t.exp()
    } else {
        t.exp().ln_1p()
    }
}

fn objective(design: &Design, target: &[f64], beta: &DVector<f64>, penalty: f64) -> f64 {
    let p = design.dim();
    let mut loss = 0.0;
    for (i, &y) in target.iter().enumerate() {
        let eta = linear(design.row(i), beta);
        loss += softplus(eta) - y * eta;
    }
    let ridge: f64 = (1..=p).map(|k| beta[k] * beta[k]).sum();
    loss + 0.5 * penalty * ridge
}

fn linear(x: &[f64], beta: &DVector<f64>) -> f64 {
    beta[0] + x.iter().enumerate().map(|(k, v)| beta[k + 1] * v).sum::<f64>()
}

/// Fits the model; `None` when Newton fails to converge within
/// `max_iter` iterations or the iterates become non-finite. Targets with a
/// constant value must be handled by the caller.
pub fn fit(design: &Design, target: &[f64], params: &RidgeParams) -> Option<LogisticModel> {
    let m = design.rows();
    let p = design.dim();
    let mean = target.iter().sum::<f64>() / m as f64;
    let mut beta = DVector::<f64>::zeros(p + 1);
    beta[0] = (mean / (1.0 - mean)).ln();
    let mut current = objective(design, target, &beta, params.penalty);

    for _ in 0..params.max_iter {
        let mut grad = DVector::<f64>::zeros(p + 1);
        let mut hess = DMatrix::<f64>::zeros(p + 1, p + 1);
        let mut row = vec![1.0; p + 1];
        for (i, &y) in target.iter().enumerate() {
            row[1..].copy_from_slice(design.row(i));
            let mu = sigmoid(linear(design.row(i), &beta));
            let w = mu * (1.0 - mu);
            for a in 0..=p {
                grad[a] += (mu - y) * row[a];
                for b in 0..=a {
                    hess[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..=p {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        for k in 1..=p {
            grad[k] += params.penalty * beta[k];
            hess[(k, k)] += params.penalty;
        }
        let step = hess.cholesky()?.solve(&grad);
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }
        // step halving until the objective does not increase
        let mut scale = 1.0;
        let mut next = &beta - &step;
        let mut value = objective(design, target, &next, params.penalty);
        while !(value <= current) && scale > 1e-6 {
            scale *= 0.5;
            next = &beta - &step * scale;
            value = objective(design, target, &next, params.penalty);
        }
        let moved = (&step * scale).amax();
        beta = next;
        current = value;
        if !current.is_finite() {
            return None;
        }
        if moved < params.tol {
            return Some(LogisticModel {
                intercept: beta[0],
                weights: beta.iter().skip(1).copied().collect(),
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huge_penalty_reduces_to_intercept() {
        let x: Vec<f64> = (0..50).map(|k| f64::from(k) / 10.0).collect();
        let y: Vec<f64> = (0..50).map(|k| f64::from(u8::from(k % 3 == 0 || k > 40))).collect();
        let mean = y.iter().sum::<f64>() / 50.0;
        let model = fit(
            &Design::new(x, 1),
            &y,
            &RidgeParams {
                penalty: 1e12,
                ..RidgeParams::default()
            },
        )
        .unwrap();
        assert!((model.predict(&[0.0]) - mean).abs() < 1e-8);
        assert!((model.predict(&[4.9]) - mean).abs() < 1e-8);
    }

    #[test]
    fn recovers_logistic_coefficients() {
        // deterministic design with exact logistic frequencies
        let mut x = Vec::new();
        let mut y = Vec::new();
        for k in 0..20 {
            let v = f64::from(k) / 5.0 - 2.0;
            let prob = sigmoid(0.5 + 1.5 * v);
            let ones = (prob * 1000.0).round() as usize;
            for r in 0..1000 {
                x.push(v);
                y.push(f64::from(u8::from(r < ones)));
            }
        }
        let model = fit(
            &Design::new(x, 1),
            &y,
            &RidgeParams {
                penalty: 0.0,
                ..RidgeParams::default()
            },
        )
        .unwrap();
        assert!((model.intercept - 0.5).abs() < 0.01);
        assert!((model.weights[0] - 1.5).abs() < 0.01);
    }

    #[test]
    fn separable_data_without_penalty_does_not_converge() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = (0..20).map(|k| f64::from(u8::from(k >= 10))).collect();
        let params = RidgeParams {
            penalty: 0.0,
            max_iter: 25,
            tol: 1e-10,
        };
        assert!(fit(&Design::new(x, 1), &y, &params).is_none());
    }

    #[test]
    fn softplus_is_overflow_safe() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(softplus(-1000.0) >= 0.0);
    }
}
