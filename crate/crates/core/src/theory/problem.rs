use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{self, tag, Rng};
use crate::{DashError, Result};

/// Largest value of the per-draw loss multiplier `s ~ U[0, 2]`.
pub const NOISE_MAX: f64 = 2.0;

/// Diagonal quadratic `F(w) = 1/2 (w - w*)' A (w - w*)` on a ball of radius
/// `radius` around `w*`.
///
/// A draw scales the whole loss: `f(w; s) = s F(w)` with `s ~ U[0, 2]`, so
/// every draw is nonnegative, `E f = F` and `F(w*) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PLProblem {
    pub mu: f64,
    pub l: f64,
    pub radius: f64,
    pub eigenvalues: Vec<f64>,
    pub w_star: Vec<f64>,
}

pub fn make_pl_problem(d: usize, mu: f64, l: f64, radius: f64, seed: u64) -> Result<PLProblem> {
    if d == 0 {
        return Err(DashError::input("dimension must be positive"));
    }
    if !(mu > 0.0 && mu <= l && l.is_finite()) {
        return Err(DashError::input(format!("need 0 < mu <= L, got mu = {mu}, L = {l}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(DashError::input(format!("radius = {radius} must be positive")));
    }
    let eigenvalues = (0..d)
        .map(|i| {
            if d == 1 {
                mu
            } else {
                mu * (l / mu).powf(i as f64 / (d - 1) as f64)
            }
        })
        .collect();
    let mut r = rng::stream(seed, &[tag::PROBLEM]);
    let w_star = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
    Ok(PLProblem {
        mu,
        l,
        radius,
        eigenvalues,
        w_star,
    })
}

fn quad(eig: &[f64], diff: impl Iterator<Item = f64>) -> f64 {
    0.5 * eig.iter().zip(diff).map(|(l, v)| l * v * v).sum::<f64>()
}

impl PLProblem {
    pub fn dim(&self) -> usize {
        self.w_star.len()
    }

    /// Gradient bound `2 L R` over the domain for draws with `s <= 2`.
    pub fn g_bound(&self) -> f64 {
        2.0 * self.l * self.radius
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        quad(&self.eigenvalues, w.iter().zip(&self.w_star).map(|(a, b)| a - b))
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .zip(w.iter().zip(&self.w_star))
            .map(|(l, (a, b))| l * (a - b))
            .collect()
    }

    /// Euclidean projection onto the ball around `w*`.
    pub fn project(&self, w: &mut [f64]) {
        let norm = w
            .iter()
            .zip(&self.w_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if norm > self.radius {
            let s = self.radius / norm;
            w.iter_mut()
                .zip(&self.w_star)
                .for_each(|(a, b)| *a = b + (*a - b) * s);
        }
    }

    /// A point on the boundary sphere in a uniformly random direction.
    pub fn boundary_point(&self, r: &mut Rng) -> Vec<f64> {
        let dir = unit_vector(self.dim(), r);
        self.w_star
            .iter()
            .zip(dir)
            .map(|(b, u)| b + self.radius * u)
            .collect()
    }

    /// Loss and gradient of one P draw.
    pub fn sample(&self, w: &[f64], r: &mut Rng) -> (f64, Vec<f64>) {
        let s = r.random_range(0.0..NOISE_MAX);
        let mut g = self.gradient(w);
        g.iter_mut().for_each(|v| *v *= s);
        (s * self.objective(w), g)
    }
}

fn unit_vector(d: usize, r: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(r)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum QKind {
    /// Losses centred at `w* + offset * u` for a random unit `u`.
    ShiftedMinimizer { offset: f64 },
    /// P losses multiplied by `factor`.
    ScaledLoss { factor: f64 },
}

/// Interfering distribution paired with a [`PLProblem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QDistribution {
    pub kind: QKind,
    /// Minimizer shift (zero for scaled losses).
    pub shift: Vec<f64>,
}

pub fn make_q_distribution(problem: &PLProblem, kind: QKind, seed: u64) -> Result<QDistribution> {
    let d = problem.dim();
    let shift = match kind {
        QKind::ShiftedMinimizer { offset } => {
            if !(offset >= 0.0 && offset.is_finite()) {
                return Err(DashError::input(format!("offset = {offset} must be nonnegative")));
            }
            let u = unit_vector(d, &mut rng::stream(seed, &[tag::PROBLEM, 1]));
            u.into_iter().map(|x| x * offset).collect()
        }
        QKind::ScaledLoss { factor } => {
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(DashError::input(format!("factor = {factor} must be positive")));
            }
            vec![0.0; d]
        }
    };
    Ok(QDistribution { kind, shift })
}

impl QDistribution {
    /// Expected Q loss at `w`.
    pub fn expected(&self, problem: &PLProblem, w: &[f64]) -> f64 {
        match self.kind {
            QKind::ShiftedMinimizer { .. } => quad(
                &problem.eigenvalues,
                w.iter()
                    .zip(&problem.w_star)
                    .zip(&self.shift)
                    .map(|((a, b), o)| a - b - o),
            ),
            QKind::ScaledLoss { factor } => factor * problem.objective(w),
        }
    }

    /// Loss and gradient of one Q draw.
    pub fn sample(&self, problem: &PLProblem, w: &[f64], r: &mut Rng) -> (f64, Vec<f64>) {
        let s = r.random_range(0.0..NOISE_MAX);
        match self.kind {
            QKind::ShiftedMinimizer { .. } => {
                let g = problem
                    .eigenvalues
                    .iter()
                    .zip(w.iter().zip(&problem.w_star).zip(&self.shift))
                    .map(|(l, ((a, b), o))| s * l * (a - b - o))
                    .collect();
                (s * self.expected(problem, w), g)
            }
            QKind::ScaledLoss { factor } => {
                let g = problem.gradient(w).into_iter().map(|v| s * factor * v).collect();
                (s * factor * problem.objective(w), g)
            }
        }
    }

    /// Analytic `(b, theta)` such that `Pr_Q[f <= F(w)] <= b F(w)^theta` on the
    /// whole domain, when one is available.
    pub fn analytic_condition(&self, problem: &PLProblem) -> Option<(f64, f64)> {
        match self.kind {
            QKind::ShiftedMinimizer { offset } if offset > problem.radius => {
                let gap = offset - problem.radius;
                Some((1.0 / (problem.mu * gap * gap), 1.0))
            }
            _ => None,
        }
    }
}

/// Monte Carlo estimate of a probability with its 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsybakovEstimate {
    pub f_value: f64,
    pub probability: f64,
    pub half_width: f64,
    pub n: usize,
}

/// Estimates `Pr_Q[f(w; xi) <= f_value]` from `n >= 100` draws.
pub fn estimate_tsybakov(
    q: &QDistribution,
    problem: &PLProblem,
    w: &[f64],
    f_value: f64,
    n: usize,
    r: &mut Rng,
) -> Result<TsybakovEstimate> {
    if n < 100 {
        return Err(DashError::input(format!("need at least 100 samples, got {n}")));
    }
    let hits = (0..n).filter(|_| q.sample(problem, w, r).0 <= f_value).count();
    let p = hits as f64 / n as f64;
    Ok(TsybakovEstimate {
        f_value,
        probability: p,
        half_width: 1.96 * (p * (1.0 - p) / n as f64).sqrt(),
        n,
    })
}

/// Least-squares fit of `ln p = ln b + theta ln F` over estimates with
/// positive probability and objective value.
pub fn fit_tsybakov(estimates: &[TsybakovEstimate]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = estimates
        .iter()
        .filter(|e| e.probability > 0.0 && e.f_value > 0.0)
        .map(|e| (e.f_value.ln(), e.probability.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(DashError::input("need two estimates with positive probability"));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(DashError::input("objective values do not vary"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let theta = sxy / sxx;
    Ok(((my - theta * mx).exp(), theta))
}

/// Estimates over points at growing distance from `w*` along one random ray.
pub fn tsybakov_grid(
    q: &QDistribution,
    problem: &PLProblem,
    levels: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<TsybakovEstimate>> {
    let mut r = rng::stream(seed, &[tag::SAMPLE, 0x7ab]);
    let dir = unit_vector(problem.dim(), &mut r);
    (1..=levels)
        .map(|k| {
            let scale = problem.radius * k as f64 / levels as f64;
            let w: Vec<f64> = problem
                .w_star
                .iter()
                .zip(&dir)
                .map(|(b, u)| b + scale * u)
                .collect();
            let f = problem.objective(&w);
            estimate_tsybakov(q, problem, &w, f, n, &mut r)
        })
        .collect()
}
