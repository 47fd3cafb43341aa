//! Damped least-squares (Levenberg-Marquardt) curve fitting.
//!
//! One small engine serves both the antibunching fits and the Lorentzian
//! dip fits: models supply a value and an analytic gradient per point, plus
//! a domain predicate so the optimizer never steps onto invalid parameters
//! (negative widths, probabilities outside the unit interval, and so on).
//! Weighted fits interpret the supplied sigmas as absolute standard errors;
//! unweighted fits scale the covariance by the reduced chi-square instead.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Model interface for [`fit`]: y(x; p) with analytic partial derivatives.
pub trait FitModel {
    /// Number of parameters.
    fn dim(&self) -> usize;

    /// Model value at one sample point.
    fn value(&self, params: &[f64], x: f64) -> f64;

    /// Partial derivatives of the model value with respect to every
    /// parameter, written into `out` (length `dim()`).
    fn gradient(&self, params: &[f64], x: f64, out: &mut [f64]);

    /// Whether a parameter vector lies in the model's domain. Steps that
    /// leave the domain are rejected and retried with stronger damping.
    fn in_domain(&self, _params: &[f64]) -> bool {
        true
    }
}

/// Iteration limits and tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub max_iterations: usize,
    /// Relative chi-square improvement below which the fit has converged.
    pub ftol: f64,
    /// Relative parameter step below which the fit has converged.
    pub xtol: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-12,
            xtol: 1e-12,
        }
    }
}

/// Converged fit: parameters, their standard errors, and goodness of fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub params: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Covariance matrix, `dim x dim` and symmetric, flattened.
    pub covariance: Vec<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

impl FitOutcome {
    /// Reduced chi-square; 1.0 when dof is zero.
    pub fn chi2_red(&self) -> f64 {
        if self.dof == 0 {
            1.0
        } else {
            self.chi2 / self.dof as f64
        }
    }
}

fn weighted_residuals(
    model: &impl FitModel,
    params: &[f64],
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        x.iter().zip(y).enumerate().map(|(i, (&xi, &yi))| {
            let w = sigma.map_or(1.0, |s| 1.0 / s[i]);
            (yi - model.value(params, xi)) * w
        }),
    )
}

fn weighted_jacobian(
    model: &impl FitModel,
    params: &[f64],
    x: &[f64],
    sigma: Option<&[f64]>,
) -> DMatrix<f64> {
    let dim = model.dim();
    let mut jac = DMatrix::zeros(x.len(), dim);
    let mut grad = vec![0.0; dim];
    for (i, &xi) in x.iter().enumerate() {
        model.gradient(params, xi, &mut grad);
        let w = sigma.map_or(1.0, |s| 1.0 / s[i]);
        for j in 0..dim {
            jac[(i, j)] = grad[j] * w;
        }
    }
    jac
}

/// Fits the model to (x, y) by Levenberg-Marquardt, starting from
/// `initial`. `sigma`, when given, holds per-point absolute standard
/// errors; every entry must be positive.
pub fn fit(
    model: &impl FitModel,
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    initial: &[f64],
    settings: &FitSettings,
) -> Result<FitOutcome> {
    let dim = model.dim();
    if x.len() != y.len() {
        return Err(Error::invalid("x and y lengths differ"));
    }
    if let Some(s) = sigma {
        if s.len() != x.len() {
            return Err(Error::invalid("sigma length differs from data length"));
        }
        if s.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("sigmas must be positive"));
        }
    }
    if initial.len() != dim {
        return Err(Error::invalid(format!(
            "initial guess has {} parameters, model needs {dim}",
            initial.len()
        )));
    }
    if x.len() < dim {
        return Err(Error::FitDegenerate(format!(
            "{} points cannot constrain {dim} parameters",
            x.len()
        )));
    }
    if !model.in_domain(initial) {
        return Err(Error::invalid("initial guess outside the model domain"));
    }

    let mut params = initial.to_vec();
    let mut residuals = weighted_residuals(model, &params, x, y, sigma);
    let mut chi2 = residuals.norm_squared();
    if !chi2.is_finite() {
        return Err(Error::invalid("initial guess gives non-finite residuals"));
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        iterations += 1;
        let jac = weighted_jacobian(model, &params, x, sigma);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &residuals;

        // Retry the step with stronger damping until chi2 improves.
        let mut improved = false;
        while lambda < 1e14 {
            let mut damped = jtj.clone();
            for d in 0..dim {
                damped[(d, d)] += lambda * jtj[(d, d)].max(1e-30);
            }
            let step = match damped.clone().lu().solve(&jtr) {
                Some(s) if s.iter().all(|v| v.is_finite()) => s,
                _ => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            if !model.in_domain(&trial) {
                lambda *= 10.0;
                continue;
            }
            let trial_residuals = weighted_residuals(model, &trial, x, y, sigma);
            let trial_chi2 = trial_residuals.norm_squared();
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let chi2_drop = chi2 - trial_chi2;
                let max_rel_step = params
                    .iter()
                    .zip(step.iter())
                    .map(|(p, s)| s.abs() / p.abs().max(1e-30))
                    .fold(0.0, f64::max);
                params = trial;
                residuals = trial_residuals;
                chi2 = trial_chi2;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if chi2_drop <= settings.ftol * chi2.max(1e-300)
                    || max_rel_step <= settings.xtol
                {
                    return finish(model, &params, x, sigma, chi2, iterations);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // Damping maxed out without an acceptable step: the current
            // point is a (local) optimum or the problem is singular.
            return finish(model, &params, x, sigma, chi2, iterations);
        }
    }
    Err(Error::FitDiverged {
        iterations,
        residual_norm: chi2.sqrt(),
    })
}

fn finish(
    model: &impl FitModel,
    params: &[f64],
    x: &[f64],
    sigma: Option<&[f64]>,
    chi2: f64,
    iterations: usize,
) -> Result<FitOutcome> {
    let dim = model.dim();
    let dof = x.len().saturating_sub(dim);
    let jac = weighted_jacobian(model, params, x, sigma);
    let jtj = jac.transpose() * &jac;
    let mut covariance = jtj
        .try_inverse()
        .ok_or_else(|| Error::FitDegenerate("singular normal matrix at the optimum".into()))?;
    // Without absolute errors the covariance is calibrated by the scatter
    // of the residuals themselves.
    if sigma.is_none() && dof > 0 {
        covariance *= chi2 / dof as f64;
    }
    let std_errors: Vec<f64> = (0..dim).map(|d| covariance[(d, d)].max(0.0).sqrt()).collect();
    Ok(FitOutcome {
        params: params.to_vec(),
        std_errors,
        covariance: covariance.iter().copied().collect(),
        chi2,
        dof,
        iterations,
    })
}
