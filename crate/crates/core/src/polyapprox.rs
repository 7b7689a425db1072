//! Polynomial approximation of a scalar nonlinearity, its quantized evaluation,
//! and the design of the feedback-linearizing encrypted loop built on it.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigUint;
use thiserror::Error;

use crate::encoding::QuantizerSpec;
use crate::lindesign::key_size_bound;

/// Points of the uniform grid used to measure sup-norm errors.
pub const GRID_POINTS: usize = 10_001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("DegreeExhausted: sup error {best_error:e} above {target:e} at degree {max_degree}")]
    DegreeExhausted { max_degree: usize, target: f64, best_error: f64 },
    #[error("SaturationInDomain: {what} saturates at Δ = {delta}")]
    SaturationInDomain { what: String, delta: f64 },
    #[error("LengthMismatch: {left} coefficient levels vs {right} monomial levels")]
    LengthMismatch { left: usize, right: usize },
    #[error("InvalidModel: {0}")]
    InvalidModel(String),
    #[error("QSatTooSmall: Ω = {omega} is not below 1 for q_sat = {q_sat}")]
    QSatTooSmall { omega: f64, q_sat: i64 },
    #[error("InitialStateOutside: |x0| = {x0} exceeds {bound}")]
    InitialStateOutside { x0: f64, bound: f64 },
    #[error("FreezeStageTooDeep: Δ_f = {delta_f:e} below the certified {delta_min:e}")]
    FreezeStageTooDeep { delta_f: f64, delta_min: f64 },
}

pub type Result<T> = std::result::Result<T, ApproxError>;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ApproxError::InvalidModel(format!("bad interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn grid(&self, points: usize) -> impl Iterator<Item = f64> + '_ {
        let step = (self.hi - self.lo) / (points - 1) as f64;
        (0..points).map(move |i| if i + 1 == points { self.hi } else { self.lo + step * i as f64 })
    }

    /// `max_{x ∈ X} |x^j|`, attained at an endpoint.
    pub fn max_abs_power(&self, j: usize) -> f64 {
        self.lo.abs().powi(j as i32).max(self.hi.abs().powi(j as i32))
    }
}

/// Scalar plant `x⁺ = a x + b (u − α(x))` with linearizing gain `k`.
#[derive(Clone)]
pub struct NonlinearModel {
    pub a: f64,
    pub b: f64,
    pub k: f64,
    pub alpha: ScalarFn,
    pub domain: Interval,
}

impl fmt::Debug for NonlinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearModel")
            .field("a", &self.a)
            .field("b", &self.b)
            .field("k", &self.k)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl NonlinearModel {
    pub fn new(a: f64, b: f64, k: f64, alpha: ScalarFn, domain: Interval) -> Result<Self> {
        if a * b == 0.0 || !(a * b).is_finite() {
            return Err(ApproxError::InvalidModel("need a·b != 0".into()));
        }
        if !((a - b * k).abs() < 1.0) {
            return Err(ApproxError::InvalidModel(format!("|a − bk| = {} is not below 1", (a - b * k).abs())));
        }
        Ok(Self { a, b, k, alpha, domain })
    }

    pub fn step(&self, x: f64, u: f64) -> f64 {
        self.a * x + self.b * (u - (self.alpha)(x))
    }
}

/// `[1, x, …, x^p]`
pub fn monomial_vector(x: f64, p: usize) -> Vec<f64> {
    (0..=p).map(|j| x.powi(j as i32)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyApprox {
    pub coeffs: Vec<f64>,
    /// Measured sup error over the uniform grid.
    pub eps1_prime: f64,
}

impl PolyApprox {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        monomial_vector(x, self.degree())
            .iter()
            .zip(&self.coeffs)
            .map(|(m, c)| m * c)
            .sum()
    }

    /// Same polynomial with at least `min_degree` (zero-padded).
    pub fn padded(&self, min_degree: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        if coeffs.len() < min_degree + 1 {
            coeffs.resize(min_degree + 1, 0.0);
        }
        Self {
            coeffs,
            eps1_prime: self.eps1_prime,
        }
    }
}

fn chebyshev_nodes(domain: &Interval, count: usize) -> Vec<f64> {
    let mid = 0.5 * (domain.lo + domain.hi);
    let half = 0.5 * (domain.hi - domain.lo);
    (0..count)
        .map(|k| mid + half * (std::f64::consts::PI * (2 * k + 1) as f64 / (2 * count) as f64).cos())
        .collect()
}

pub fn sup_error(alpha: &dyn Fn(f64) -> f64, approx: &PolyApprox, domain: &Interval) -> f64 {
    domain
        .grid(GRID_POINTS)
        .map(|x| (approx.eval(x) - alpha(x)).abs())
        .fold(0.0, f64::max)
}

/// Least-squares fits on `2p + 1` Chebyshev nodes for `p = 0, 1, …` until the
/// grid sup error reaches `target_eps`.
pub fn fit_polynomial(alpha: &dyn Fn(f64) -> f64, domain: &Interval, target_eps: f64, max_degree: usize) -> Result<PolyApprox> {
    if !(target_eps > 0.0) {
        return Err(ApproxError::InvalidModel(format!("target_eps = {target_eps}")));
    }
    let mut best = f64::INFINITY;
    for p in 0..=max_degree {
        let nodes = chebyshev_nodes(domain, 2 * p + 1);
        let vander = DMatrix::from_fn(nodes.len(), p + 1, |i, j| nodes[i].powi(j as i32));
        let rhs = DVector::from_iterator(nodes.len(), nodes.iter().map(|&x| alpha(x)));
        let coeffs = vander
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| ApproxError::InvalidModel(e.to_string()))?;
        let mut approx = PolyApprox {
            coeffs: coeffs.iter().copied().collect(),
            eps1_prime: 0.0,
        };
        let err = sup_error(alpha, &approx, domain);
        if err <= target_eps {
            approx.eps1_prime = err;
            return Ok(approx);
        }
        best = best.min(err);
    }
    Err(ApproxError::DegreeExhausted {
        max_degree,
        target: target_eps,
        best_error: best,
    })
}

/// ε₂ with `|ᾱ_p(x̄) − α_p(x)| <= ε₂Δ/2` over the domain.
pub fn eps2_bound(approx: &PolyApprox, spec: &QuantizerSpec, domain: &Interval) -> Result<f64> {
    let delta = spec.delta();
    let mut eps2 = 0.0;
    for (j, &c) in approx.coeffs.iter().enumerate() {
        let mono = domain.max_abs_power(j);
        if spec.saturates(mono) || spec.saturates(-mono) {
            return Err(ApproxError::SaturationInDomain {
                what: format!("x^{j}"),
                delta,
            });
        }
        if spec.saturates(c) {
            return Err(ApproxError::SaturationInDomain {
                what: format!("c_{j} = {c}"),
                delta,
            });
        }
        let c_bar = spec.level(c) as f64 * delta;
        eps2 += mono + delta / 2.0 + c_bar.abs() + c.abs();
    }
    Ok(eps2)
}

/// `(Σ_j c_{j,q} x^j_q) Δ²`, with the dot product in exact integer arithmetic.
pub fn eval_quantized_poly(coeff_levels: &[i64], monomial_levels: &[i64], delta: f64) -> Result<f64> {
    if coeff_levels.len() != monomial_levels.len() {
        return Err(ApproxError::LengthMismatch {
            left: coeff_levels.len(),
            right: monomial_levels.len(),
        });
    }
    let dot: i128 = coeff_levels
        .iter()
        .zip(monomial_levels)
        .map(|(&c, &m)| c as i128 * m as i128)
        .sum();
    Ok(scale_squared(dot, delta))
}

/// `u_q Δ²`, the rescaling the plant applies in nonlinear mode.
pub fn scale_squared(u_q: i128, delta: f64) -> f64 {
    u_q as f64 * (delta * delta)
}

/// Approximation constants at one sensitivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxConstants {
    pub delta: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub m_const: f64,
}

pub fn approximation_constants(approx: &PolyApprox, spec: &QuantizerSpec, domain: &Interval) -> Result<ApproxConstants> {
    let delta = spec.delta();
    let eps2 = eps2_bound(approx, spec, domain)?;
    let eps1 = 2.0 * approx.eps1_prime / delta;
    Ok(ApproxConstants {
        delta,
        eps1,
        eps2,
        m_const: eps1 + eps2,
    })
}

/// Worst grid errors at one sensitivity: `(|ᾱ_p(x̄) − α_p(x)|, |ᾱ_p(x̄) − α(x)|)`.
pub fn grid_errors(alpha: &dyn Fn(f64) -> f64, approx: &PolyApprox, spec: &QuantizerSpec, domain: &Interval) -> (f64, f64) {
    let c_levels = spec.quantize_vector(&approx.coeffs);
    let mut worst_poly: f64 = 0.0;
    let mut worst_total: f64 = 0.0;
    for x in domain.grid(GRID_POINTS) {
        let x_levels = spec.quantize_vector(&monomial_vector(x, approx.degree()));
        let q = eval_quantized_poly(&c_levels, &x_levels, spec.delta()).expect("equal lengths");
        worst_poly = worst_poly.max((q - approx.eval(x)).abs());
        worst_total = worst_total.max((q - alpha(x)).abs());
    }
    (worst_poly, worst_total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearParams {
    pub target_eps: f64,
    pub max_degree: usize,
    pub q_sat: i64,
    pub epsilon: f64,
    pub safety_factor: f64,
    pub r_max: u64,
    /// Requested practical-stability radius.
    pub c2: f64,
    pub delta0: Option<f64>,
    pub freeze_stage: Option<u32>,
}

impl Default for NonlinearParams {
    fn default() -> Self {
        Self {
            target_eps: 1e-6,
            max_degree: 12,
            q_sat: 48,
            epsilon: 0.01,
            safety_factor: 0.9,
            r_max: 1000,
            c2: 1.0,
            delta0: None,
            freeze_stage: None,
        }
    }
}

/// One zoom stage of the nonlinear loop.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearStage {
    pub delta: f64,
    /// `c_q − k_q e₂`, the vector the controller multiplies by.
    pub gain_levels: Vec<i64>,
    pub constants: ApproxConstants,
}

#[derive(Debug, Clone)]
pub struct NonlinearDesign {
    pub model: NonlinearModel,
    pub approx: PolyApprox,
    pub q_sat: i64,
    pub epsilon: f64,
    pub delta0: f64,
    pub delta_min: f64,
    pub theta: f64,
    pub omega: f64,
    pub freeze_stage: u32,
    pub stages: Vec<NonlinearStage>,
    pub r_max: u64,
    pub n_min: BigUint,
}

impl NonlinearDesign {
    pub fn new(model: NonlinearModel, params: NonlinearParams) -> Result<Self> {
        let fitted = fit_polynomial(model.alpha.as_ref(), &model.domain, params.target_eps, params.max_degree)?;
        let approx = fitted.padded(1);
        let q_sat = params.q_sat;
        let half = q_sat as f64 - 0.5;
        if q_sat < 1 || !(params.c2 > 0.0) || params.r_max < 2 {
            return Err(ApproxError::InvalidModel("need q_sat >= 1, c2 > 0, r_max >= 2".into()));
        }
        let (a, b, k) = (model.a, model.b, model.k);
        let gap = 1.0 - (a - b * k).abs();
        let delta0_cap = params.safety_factor * 2.0 * gap / b.abs();
        let delta0 = match params.delta0 {
            Some(d) if d > 0.0 && d <= delta0_cap => d,
            Some(d) => {
                return Err(ApproxError::InvalidModel(format!("Δ₀ = {d} outside (0, {delta0_cap}]")));
            }
            // largest power of two under the cap keeps products exact
            None => 2f64.powi(delta0_cap.log2().floor() as i32),
        };

        // certify Θ over every sensitivity in [delta_min, delta0]
        let delta_min = params.c2 / half;
        let m_upper = 2.0 * approx.eps1_prime / delta_min
            + approx
                .coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| model.domain.max_abs_power(j) + delta0 + 2.0 * c.abs())
                .sum::<f64>();
        let g_upper = (a - b * k).abs() + b.abs() * delta0 / 2.0;
        if !(g_upper < 1.0) {
            return Err(ApproxError::InvalidModel(format!("|a − b k̄| may reach {g_upper}")));
        }
        let theta = b.abs() * (k.abs() + delta0 / 2.0 + m_upper) / (1.0 - g_upper);
        let omega = (theta + params.epsilon + 1.0) / half;
        if !(omega < 1.0) {
            return Err(ApproxError::QSatTooSmall { omega, q_sat });
        }
        let freeze_stage = match params.freeze_stage {
            Some(f) => {
                let delta_f = omega.powi(f as i32) * delta0;
                if delta_f < delta_min {
                    return Err(ApproxError::FreezeStageTooDeep { delta_f, delta_min });
                }
                f
            }
            None if delta_min >= delta0 => 0,
            None => {
                let mut f = ((delta_min / delta0).ln() / omega.ln()).floor() as u32;
                while f > 0 && omega.powi(f as i32) * delta0 < delta_min {
                    f -= 1;
                }
                f
            }
        };

        let mut stages = Vec::with_capacity(freeze_stage as usize + 1);
        let mut max_gain_level = 0i64;
        for i in 0..=freeze_stage {
            let delta = omega.powi(i as i32) * delta0;
            let spec = QuantizerSpec::new(delta, q_sat).map_err(|e| ApproxError::InvalidModel(e.to_string()))?;
            if spec.saturates(k) {
                return Err(ApproxError::SaturationInDomain {
                    what: format!("k = {k}"),
                    delta,
                });
            }
            let constants = approximation_constants(&approx, &spec, &model.domain)?;
            let mut gain_levels = spec.quantize_vector(&approx.coeffs);
            gain_levels[1] -= spec.level(k);
            max_gain_level = max_gain_level.max(gain_levels.iter().map(|v| v.abs()).max().unwrap_or(0));
            stages.push(NonlinearStage {
                delta,
                gain_levels,
                constants,
            });
        }
        let n_min = key_size_bound(
            q_sat as u64,
            max_gain_level.max(1) as u64,
            approx.coeffs.len() as u64,
            &BigUint::from(params.r_max),
        );
        Ok(Self {
            model,
            approx,
            q_sat,
            epsilon: params.epsilon,
            delta0,
            delta_min,
            theta,
            omega,
            freeze_stage,
            stages,
            r_max: params.r_max,
            n_min,
        })
    }

    /// Stage-advance threshold on `|q_Δ(x)|`.
    pub fn update_threshold(&self) -> f64 {
        self.theta + self.epsilon + 0.5
    }

    /// Radius of the final region, `Δ_f (q_sat − 1/2)`.
    pub fn final_radius(&self) -> f64 {
        self.stages[self.freeze_stage as usize].delta * (self.q_sat as f64 - 0.5)
    }

    pub fn stage_radius(&self, i: usize) -> f64 {
        self.stages[i].delta * (self.q_sat as f64 - 0.5)
    }

    pub fn degree(&self) -> usize {
        self.approx.degree()
    }

    pub fn check_initial_state(&self, x0: f64) -> Result<()> {
        let bound = self.delta0 * (self.q_sat as f64 - 0.5);
        if !self.model.domain.contains(x0) || x0.abs() > bound {
            return Err(ApproxError::InitialStateOutside { x0, bound });
        }
        Ok(())
    }
}
