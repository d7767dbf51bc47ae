use serde::{Deserialize, Serialize};

use crate::{DashError, Result};

/// Tolerance of the `rho_hat` / `b0` fixed-point iteration (relative).
pub const FIXED_POINT_TOL: f64 = 1e-10;
/// Iteration budget of the fixed point.
pub const FIXED_POINT_MAX_ITER: usize = 1000;

/// Problem and algorithm constants that the derived quantities depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryInputs {
    /// Bound on stochastic gradient norms.
    pub g: f64,
    /// Smoothness.
    pub l: f64,
    /// PL constant.
    pub mu: f64,
    /// Objective level guaranteed after warm-up.
    pub a: f64,
    /// Constant of the low-loss condition on Q.
    pub b: f64,
    /// Exponent of the low-loss condition on Q.
    pub theta: f64,
    pub delta: f64,
    /// Weight of the in-distribution component, in `(0, 1]`.
    pub q: f64,
    pub c: f64,
    pub eta0: f64,
    pub eta: f64,
    /// Objective value at the starting point.
    pub f_w0: f64,
    /// Batch parameter to use instead of the formula value; must not be smaller.
    #[serde(default)]
    pub m_override: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub inputs: TheoryInputs,
    /// Warm-up iterations, before rounding.
    pub t0: f64,
    /// Warm-up batch size, before rounding.
    pub m0: f64,
    /// Batch parameter from the formula.
    pub m_formula: u64,
    /// Batch parameter in use.
    pub m: u64,
    pub beta: f64,
    pub alpha: f64,
    pub a0: f64,
    pub b0: f64,
    pub b1: f64,
    pub rho_hat: f64,
    pub gamma_theory: f64,
    pub fixed_point_iterations: usize,
}

impl TheoryConstants {
    /// Warm-up iterations to run (`ceil(t0)`, at least 0).
    pub fn t0_steps(&self) -> usize {
        self.t0.max(0.0).ceil() as usize
    }

    /// Warm-up batch size to use (`ceil(m0)`).
    pub fn m0_batch(&self) -> usize {
        self.m0.ceil() as usize
    }

    /// Predicted lower bound `a0 m gamma^(t-1)` on selected P draws.
    pub fn a_bound(&self, t: usize) -> f64 {
        self.a0 * self.m as f64 * self.gamma_theory.powi(t as i32 - 1)
    }

    /// Predicted upper bound `b0 m` on selected Q draws.
    pub fn b_bound(&self) -> f64 {
        self.b0 * self.m as f64
    }

    /// Objective envelope `rho_hat gamma^-t` after `t` selection steps.
    pub fn envelope(&self, t: usize) -> f64 {
        self.rho_hat * self.gamma_theory.powi(-(t as i32))
    }
}

fn log_term(delta: f64) -> f64 {
    (2.0 / delta).ln()
}

/// Three-term batch parameter. Terms involving `1 - q` vanish when `q = 1`.
pub fn m_formula(delta: f64, q: f64, c: f64) -> u64 {
    let l = log_term(delta);
    let mut v = (l / (q * q)).sqrt().max((l / (q * (1.0 - 1.0 / c).powi(2))).sqrt());
    if q < 1.0 {
        v = v.max((l / (1.0 - q).powi(2)).sqrt());
    }
    v.ceil() as u64
}

/// `(beta, alpha)` for a given batch parameter.
pub fn beta_alpha(delta: f64, q: f64, c: f64, m: u64) -> (f64, f64) {
    let l = log_term(delta);
    let m = m as f64;
    let mut beta = (l / (2.0 * q * q * m)).sqrt();
    if q < 1.0 {
        beta = beta.max((l / (2.0 * (1.0 - q).powi(2) * m)).sqrt());
    }
    let alpha = (l / (q * m * (1.0 - 1.0 / c).powi(2))).sqrt();
    (beta, alpha)
}

/// Smallest batch parameter with `beta <= beta_max` and `alpha <= alpha_max`.
pub fn min_m_for(delta: f64, q: f64, c: f64, beta_max: f64, alpha_max: f64) -> u64 {
    let l = log_term(delta);
    let mut need = (l / (2.0 * q * q * beta_max * beta_max))
        .max(l / (q * (1.0 - 1.0 / c).powi(2) * alpha_max * alpha_max));
    if q < 1.0 {
        need = need.max(l / (2.0 * (1.0 - q).powi(2) * beta_max * beta_max));
    }
    let mut m = need.ceil().max(1.0) as u64;
    // guard against rounding right at the boundary
    while {
        let (b, a) = beta_alpha(delta, q, c, m);
        b > beta_max || a > alpha_max
    } {
        m += 1;
    }
    m
}

/// `max{a, 4 G^2 (1 + delta b0 m) / (delta mu a0 m)}`.
pub fn rho_hat_theoretical(g: f64, delta: f64, mu: f64, m: u64, a0: f64, b0: f64, a: f64) -> Result<f64> {
    if a0 <= 0.0 {
        return Err(DashError::Infeasible(format!("a0 = {a0} is not positive")));
    }
    let m = m as f64;
    Ok(a.max(4.0 * g * g * (1.0 + delta * b0 * m) / (delta * mu * a0 * m)))
}

/// `2 ((1 - q)(1 + beta) b rho^theta + ln(1/delta))`.
pub fn b0_of(inputs: &TheoryInputs, beta: f64, rho_hat: f64) -> f64 {
    2.0 * ((1.0 - inputs.q) * (1.0 + beta) * inputs.b * rho_hat.powf(inputs.theta) + (1.0 / inputs.delta).ln())
}

fn check(name: &str, ok: bool, v: f64) -> Result<()> {
    if ok && v.is_finite() {
        Ok(())
    } else {
        Err(DashError::input(format!("{name} = {v} out of range")))
    }
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<()> {
        check("G", self.g > 0.0, self.g)?;
        check("L", self.l > 0.0, self.l)?;
        check("mu", self.mu > 0.0 && self.mu <= self.l, self.mu)?;
        check("a", self.a > 0.0, self.a)?;
        check("b", self.b >= 0.0, self.b)?;
        check("theta", self.theta >= 1.0, self.theta)?;
        check("delta", self.delta > 0.0 && self.delta < 1.0, self.delta)?;
        check("q", self.q > 0.0 && self.q <= 1.0, self.q)?;
        check("C", self.c > 1.0, self.c)?;
        check("eta0", self.eta0 > 0.0 && self.eta0 * self.mu < 1.0, self.eta0)?;
        check("eta", self.eta > 0.0 && self.eta * self.mu < 2.0, self.eta)?;
        check("F(w0)", self.f_w0 > 0.0, self.f_w0)?;
        Ok(())
    }
}

/// Derives every constant in order: batch parameter, concentration radii,
/// `a0`, the `rho_hat`/`b0` fixed point, `b1`, warm-up length and batch, and
/// the theory decay factor.
pub fn derive_constants(inputs: &TheoryInputs) -> Result<TheoryConstants> {
    inputs.validate()?;
    let m_formula = m_formula(inputs.delta, inputs.q, inputs.c);
    let m = match inputs.m_override {
        Some(m) if m < m_formula => {
            return Err(DashError::input(format!(
                "m_override = {m} is below the formula value {m_formula}"
            )))
        }
        Some(m) => m,
        None => m_formula,
    };
    let (beta, alpha) = beta_alpha(inputs.delta, inputs.q, inputs.c, m);
    let a0 = (1.0 - 1.0 / inputs.c) * (1.0 - beta) * (1.0 - alpha) * inputs.q;
    if a0 <= 0.0 || beta >= 1.0 || alpha >= 1.0 {
        let mut bad = Vec::new();
        if beta >= 1.0 {
            bad.push(format!("beta = {beta:.6}"));
        }
        if alpha >= 1.0 {
            bad.push(format!("alpha = {alpha:.6}"));
        }
        return Err(DashError::Infeasible(format!(
            "m = {m} gives {} (must be below 1 for a positive a0)",
            bad.join(" and ")
        )));
    }

    let mut rho = inputs.a;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < FIXED_POINT_MAX_ITER {
        iterations += 1;
        let next = rho_hat_theoretical(inputs.g, inputs.delta, inputs.mu, m, a0, b0_of(inputs, beta, rho), inputs.a)?;
        if !next.is_finite() {
            break;
        }
        let done = (next - rho).abs() <= FIXED_POINT_TOL * next.abs().max(1.0);
        rho = next;
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DashError::Infeasible(format!(
            "rho_hat / b0 fixed point did not converge after {iterations} iterations (last rho_hat = {rho:e})"
        )));
    }
    let b0 = b0_of(inputs, beta, rho);

    let t0 = (2.0 * inputs.f_w0 / inputs.a).ln() / (1.0 / (1.0 - inputs.eta0 * inputs.mu)).ln();
    let m0 = 4.0 * inputs.g * inputs.g / (inputs.delta * inputs.mu * inputs.a);
    Ok(TheoryConstants {
        inputs: *inputs,
        t0,
        m0,
        m_formula,
        m,
        beta,
        alpha,
        a0,
        b0,
        b1: b0 / a0,
        rho_hat: rho,
        gamma_theory: 1.0 / (1.0 - inputs.eta * inputs.mu / 2.0),
        fixed_point_iterations: iterations,
    })
}
