//! Linear design: discrete Lyapunov solves, symmetric eigenvalues, the gain
//! quantizer sensitivity, zoom constants and the key-size bound.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigUint;
use num_integer::Integer;
use thiserror::Error;

use crate::encoding::QuantizerSpec;

/// Relative residual accepted for a Lyapunov solve.
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-9;
/// Off-diagonal Frobenius tolerance for the Jacobi eigensolver, relative to `‖S‖_F`.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

pub const DEFAULT_EPSILON: f64 = 0.01;
/// Multiplier applied to the gain sensitivity bound in place of the additive margin.
pub const DEFAULT_SAFETY_FACTOR: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("NotSchur: {0}")]
    NotSchur(String),
    #[error("NoConvergence: Jacobi sweeps exhausted (off-diagonal norm {off_norm:e})")]
    NoConvergence { off_norm: f64 },
    #[error("DegenerateB: ‖BᵀPB‖ = 0")]
    DegenerateB,
    #[error("QSatTooSmall: Ω = {omega} is not below 1 for q_sat = {q_sat}")]
    QSatTooSmall { omega: f64, q_sat: i64 },
    #[error("NotControllable: controllability matrix has rank {rank} < {n}")]
    NotControllable { rank: usize, n: usize },
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("InvalidInput: {0}")]
    InvalidInput(String),
    #[error("LyapunovResidual: residual {residual:e} exceeds {bound:e}")]
    LyapunovResidual { residual: f64, bound: f64 },
}

pub type Result<T> = std::result::Result<T, DesignError>;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl PlantModel {
    /// Validates shapes and controllability of `(A, B)`.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(DesignError::DimensionMismatch("A must be square and nonempty".into()));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(DesignError::DimensionMismatch(format!(
                "B is {}x{}, expected {n}x(n_u > 0)",
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(DesignError::InvalidInput("non-finite plant entry".into()));
        }
        let rank = controllability_matrix(&a, &b).rank(1e-10);
        if rank < n {
            return Err(DesignError::NotControllable { rank, n });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a - &self.b * k
    }
}

pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut c = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        c.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    c
}

/// Gaussian elimination with partial pivoting on a dense square system.
fn gauss_solve(mut a: DMatrix<f64>, mut b: DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let (pivot_row, pivot_val) = (col..n)
            .map(|r| (r, a[(r, col)].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if pivot_val <= 1e-14 * scale {
            return None;
        }
        if pivot_row != col {
            a.swap_rows(pivot_row, col);
            b.swap_rows(pivot_row, col);
        }
        let pivot = a[(col, col)];
        for r in col + 1..n {
            let f = a[(r, col)] / pivot;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[(r, c)] -= f * a[(col, c)];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = DVector::zeros(n);
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[(r, c)] * x[c]).sum();
        x[r] = (b[r] - s) / a[(r, r)];
    }
    Some(x)
}

fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * m.amax().max(1.0)
}

/// `A_clᵀ P A_cl − P + Q = 0` residual, Frobenius norm.
pub fn lyapunov_residual(a_cl: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a_cl.transpose() * p * a_cl - p + q).norm()
}

/// Solves `A_clᵀ P A_cl − P + Q = 0` by vectorization; P is returned exactly symmetric
/// and certified positive definite.
pub fn solve_discrete_lyapunov(a_cl: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a_cl.nrows();
    if n == 0 || !a_cl.is_square() || q.shape() != (n, n) {
        return Err(DesignError::DimensionMismatch("Lyapunov inputs must be n x n".into()));
    }
    if !is_symmetric(q, 1e-12) {
        return Err(DesignError::InvalidInput("Q must be symmetric".into()));
    }
    let (q_min, _) = eig_extremes_sym(q)?;
    if q_min <= 0.0 {
        return Err(DesignError::InvalidInput("Q must be positive definite".into()));
    }
    // (I − A_clᵀ ⊗ A_clᵀ) vec(P) = vec(Q), column-major vec
    let at = a_cl.transpose();
    let dim = n * n;
    let mut sys = DMatrix::<f64>::identity(dim, dim);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    sys[(j * n + i, l * n + k)] -= at[(j, l)] * at[(i, k)];
                }
            }
        }
    }
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol = gauss_solve(sys, rhs)
        .ok_or_else(|| DesignError::NotSchur("singular Lyapunov operator".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    let (p_min, _) = eig_extremes_sym(&p)?;
    if !(p_min > 0.0) {
        return Err(DesignError::NotSchur(format!("λ_min(P) = {p_min:e}")));
    }
    let residual = lyapunov_residual(a_cl, &p, q);
    let bound = LYAPUNOV_RESIDUAL_TOL * p.norm();
    if residual > bound {
        return Err(DesignError::LyapunovResidual { residual, bound });
    }
    Ok(p)
}

/// True when a Lyapunov solve with `Q = I` returns a positive-definite P.
pub fn is_schur(a_cl: &DMatrix<f64>) -> bool {
    solve_discrete_lyapunov(a_cl, &DMatrix::identity(a_cl.nrows(), a_cl.nrows())).is_ok()
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi, ascending.
pub fn eigenvalues_sym(s: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = s.nrows();
    if !s.is_square() {
        return Err(DesignError::DimensionMismatch("eigenvalues need a square matrix".into()));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(DesignError::InvalidInput("non-finite entry".into()));
    }
    let mut a = (s + s.transpose()) * 0.5;
    let tol = JACOBI_TOL * a.norm();
    let off_norm = |a: &DMatrix<f64>| {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += a[(i, j)] * a[(i, j)];
                }
            }
        }
        acc.sqrt()
    };
    let mut sweeps = 0;
    while off_norm(&a) > tol {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(DesignError::NoConvergence { off_norm: off_norm(&a) });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    let new_rp = c * arp - sn * arq;
                    let new_rq = sn * arp + c * arq;
                    a[(r, p)] = new_rp;
                    a[(p, r)] = new_rp;
                    a[(r, q)] = new_rq;
                    a[(q, r)] = new_rq;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn eig_extremes_sym(s: &DMatrix<f64>) -> Result<(f64, f64)> {
    let eig = eigenvalues_sym(s)?;
    match (eig.first(), eig.last()) {
        (Some(&lo), Some(&hi)) => Ok((lo, hi)),
        _ => Err(DesignError::DimensionMismatch("empty matrix".into())),
    }
}

/// Induced 2-norm, `λ_max(MᵀM)^(1/2)`.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let (_, hi) = eig_extremes_sym(&(m.transpose() * m))?;
    Ok(hi.max(0.0).sqrt())
}

/// Largest admissible gain sensitivity Δ_g, scaled by `safety_factor`.
pub fn gain_sensitivity_bound(
    plant: &PlantModel,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    p: &DMatrix<f64>,
    safety_factor: f64,
) -> Result<f64> {
    let b = plant.b();
    let btpb = spectral_norm(&(b.transpose() * p * b))?;
    if btpb == 0.0 {
        return Err(DesignError::DegenerateB);
    }
    let cross = spectral_norm(&(plant.closed_loop(k).transpose() * p * b))?;
    let (q_min, _) = eig_extremes_sym(q)?;
    let dims = ((plant.n_x() * plant.n_u()) as f64).sqrt();
    let root = (cross * cross + q_min * btpb).sqrt();
    // root - cross loses precision when cross dominates; use the conjugate form
    let gap = q_min * btpb / (root + cross);
    Ok(safety_factor * 2.0 / (dims * btpb) * gap)
}

/// Smallest `q_sat_g` with `max |K_ij| <= (q_sat_g − 1/2)Δ_g`.
pub fn gain_saturation(k: &DMatrix<f64>, delta_g: f64) -> i64 {
    let kmax = k.amax();
    let mut q = ((kmax / delta_g + 0.5).ceil() as i64).max(1);
    while kmax > (q as f64 - 0.5) * delta_g {
        q += 1;
    }
    while q > 1 && kmax <= (q as f64 - 1.5) * delta_g {
        q -= 1;
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoomConstants {
    pub theta: f64,
    pub omega_prime: f64,
    pub omega: f64,
    /// `√(λ_max(P̄)/λ_min(P̄))`
    pub condition_root: f64,
}

/// Θ of the quantized closed loop.
pub fn theta_constant(plant: &PlantModel, k_bar: &DMatrix<f64>, q_bar: &DMatrix<f64>, p_bar: &DMatrix<f64>) -> Result<f64> {
    let bk = plant.b() * k_bar;
    let cross = spectral_norm(&(plant.closed_loop(k_bar).transpose() * p_bar * &bk))?;
    let quad = spectral_norm(&(bk.transpose() * p_bar * &bk))?;
    let (q_min, _) = eig_extremes_sym(q_bar)?;
    Ok((cross + (cross * cross + q_min * quad).sqrt()) / (2.0 * q_min))
}

pub fn zoom_constants(
    plant: &PlantModel,
    k_bar: &DMatrix<f64>,
    q_bar: &DMatrix<f64>,
    p_bar: &DMatrix<f64>,
    epsilon: f64,
    q_sat: i64,
) -> Result<ZoomConstants> {
    if !(epsilon > 0.0) {
        return Err(DesignError::InvalidInput(format!("epsilon = {epsilon}")));
    }
    if q_sat < 1 {
        return Err(DesignError::InvalidInput(format!("q_sat = {q_sat}")));
    }
    let theta = theta_constant(plant, k_bar, q_bar, p_bar)?;
    let (p_min, p_max) = eig_extremes_sym(p_bar)?;
    let kappa = (p_max / p_min).sqrt();
    let sqrt_n = (plant.n_x() as f64).sqrt();
    let omega_prime = (theta * sqrt_n + epsilon) * kappa + sqrt_n;
    let omega = omega_prime * kappa / (q_sat as f64 - 0.5);
    if !(omega < 1.0) {
        return Err(DesignError::QSatTooSmall { omega, q_sat });
    }
    Ok(ZoomConstants {
        theta,
        omega_prime,
        omega,
        condition_root: kappa,
    })
}

/// Smallest q_sat giving Ω ≤ `omega_target` for fixed Ω′ and P̄.
pub fn q_sat_for_omega(omega_prime: f64, condition_root: f64, omega_target: f64) -> i64 {
    let q = (omega_prime * condition_root / omega_target + 0.5).ceil() as i64;
    q.max(1)
}

pub fn event_trigger_threshold(theta: f64) -> f64 {
    2.0 * theta
}

/// Fires when `‖x‖ <= 2Θ‖e‖`.
pub fn should_trigger(theta: f64, x: &[f64], e: &[f64]) -> bool {
    euclid(x) <= event_trigger_threshold(theta) * euclid(e)
}

pub fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `ceil(3 (q_sat + 1/2)(q_sat_g + 1/2) n_x r_max)`, in exact integer arithmetic.
pub fn key_size_bound(q_sat: u64, q_sat_g: u64, n_x: u64, r_max: &BigUint) -> BigUint {
    let numer = BigUint::from(3u32)
        * BigUint::from(2 * q_sat + 1)
        * BigUint::from(2 * q_sat_g + 1)
        * BigUint::from(n_x)
        * r_max;
    numer.div_ceil(&BigUint::from(4u32))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignParams {
    pub epsilon: f64,
    pub safety_factor: f64,
    pub q_sat: i64,
    pub r_max: u64,
}

impl Default for DesignParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            safety_factor: DEFAULT_SAFETY_FACTOR,
            q_sat: 1000,
            r_max: 1000,
        }
    }
}

/// Everything the plant node needs for encrypted state feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDesign {
    pub plant: PlantModel,
    pub k: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub delta_g: f64,
    pub q_sat_g: i64,
    pub k_q: DMatrix<i64>,
    pub k_bar: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    pub p_bar: DMatrix<f64>,
    pub p_bar_extremes: (f64, f64),
    pub theta: f64,
    pub omega_prime: f64,
    pub omega: f64,
    pub q_sat: i64,
    pub epsilon: f64,
    pub r_max: u64,
    pub norm_a: f64,
    pub n_min: BigUint,
}

impl LinearDesign {
    /// Full design with `Q = Q̄ = I`.
    pub fn new(plant: PlantModel, k: DMatrix<f64>, params: DesignParams) -> Result<Self> {
        let n = plant.n_x();
        Self::with_weights(plant, k, DMatrix::identity(n, n), DMatrix::identity(n, n), params)
    }

    pub fn with_weights(
        plant: PlantModel,
        k: DMatrix<f64>,
        q: DMatrix<f64>,
        q_bar: DMatrix<f64>,
        params: DesignParams,
    ) -> Result<Self> {
        let (delta_g, q_sat_g, k_q, k_bar, p, p_bar) = Self::quantize_gain(&plant, &k, &q, &q_bar, params.safety_factor)?;
        let zc = zoom_constants(&plant, &k_bar, &q_bar, &p_bar, params.epsilon, params.q_sat)?;
        if params.r_max < 2 {
            return Err(DesignError::InvalidInput("r_max must be at least 2".into()));
        }
        let norm_a = spectral_norm(plant.a())?;
        let p_bar_extremes = eig_extremes_sym(&p_bar)?;
        let n_min = key_size_bound(
            params.q_sat as u64,
            q_sat_g as u64,
            plant.n_x() as u64,
            &BigUint::from(params.r_max),
        );
        Ok(Self {
            plant,
            k,
            q,
            p,
            delta_g,
            q_sat_g,
            k_q,
            k_bar,
            q_bar,
            p_bar,
            p_bar_extremes,
            theta: zc.theta,
            omega_prime: zc.omega_prime,
            omega: zc.omega,
            q_sat: params.q_sat,
            epsilon: params.epsilon,
            r_max: params.r_max,
            norm_a,
            n_min,
        })
    }

    #[allow(clippy::type_complexity)]
    fn quantize_gain(
        plant: &PlantModel,
        k: &DMatrix<f64>,
        q: &DMatrix<f64>,
        q_bar: &DMatrix<f64>,
        safety_factor: f64,
    ) -> Result<(f64, i64, DMatrix<i64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        if k.shape() != (plant.n_u(), plant.n_x()) {
            return Err(DesignError::DimensionMismatch(format!(
                "K is {}x{}, expected {}x{}",
                k.nrows(),
                k.ncols(),
                plant.n_u(),
                plant.n_x()
            )));
        }
        if !(safety_factor > 0.0 && safety_factor <= 1.0) {
            return Err(DesignError::InvalidInput(format!("safety factor {safety_factor}")));
        }
        let p = solve_discrete_lyapunov(&plant.closed_loop(k), q)?;
        let delta_g = gain_sensitivity_bound(plant, k, q, &p, safety_factor)?;
        let q_sat_g = gain_saturation(k, delta_g);
        let spec = QuantizerSpec::new(delta_g, q_sat_g)
            .map_err(|e| DesignError::InvalidInput(e.to_string()))?;
        let k_q = spec.quantize_matrix(k);
        let k_bar = k_q.map(|v| v as f64 * delta_g);
        let p_bar = solve_discrete_lyapunov(&plant.closed_loop(&k_bar), q_bar)?;
        Ok((delta_g, q_sat_g, k_q, k_bar, p, p_bar))
    }

    /// Smallest q_sat reaching `Ω <= omega_target` for this plant and gain.
    pub fn minimal_q_sat(plant: &PlantModel, k: &DMatrix<f64>, epsilon: f64, safety_factor: f64, omega_target: f64) -> Result<i64> {
        let n = plant.n_x();
        let eye = DMatrix::identity(n, n);
        let (_, _, _, k_bar, _, p_bar) = Self::quantize_gain(plant, k, &eye, &eye, safety_factor)?;
        // Ω′ does not depend on q_sat; evaluate it with a huge q_sat
        let zc = zoom_constants(plant, &k_bar, &eye, &p_bar, epsilon, i64::MAX / 4)?;
        Ok(q_sat_for_omega(zc.omega_prime, zc.condition_root, omega_target))
    }

    pub fn n_x(&self) -> usize {
        self.plant.n_x()
    }

    pub fn n_u(&self) -> usize {
        self.plant.n_u()
    }

    /// Capture threshold on ‖x_q‖ during zoom-out.
    pub fn capture_threshold(&self) -> f64 {
        let (lo, hi) = self.p_bar_extremes;
        (self.q_sat as f64 - 0.5) * (lo / hi).sqrt() - (self.n_x() as f64).sqrt() / 2.0
    }

    /// Stage-advance threshold on ‖x_q‖ during zoom-in.
    pub fn update_threshold(&self) -> f64 {
        self.omega_prime - (self.n_x() as f64).sqrt() / 2.0
    }

    /// The gain the controller multiplies by, with the feedback sign folded in.
    pub fn signed_gain_levels(&self) -> DMatrix<i64> {
        self.k_q.map(|v| -v)
    }
}

/// Single-input pole placement by Ackermann's formula; `poles` must be real.
pub fn place_poles_single_input(a: &DMatrix<f64>, b: &DVector<f64>, poles: &[f64]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if poles.len() != n || b.len() != n {
        return Err(DesignError::DimensionMismatch("need n poles and an n-vector b".into()));
    }
    let ctrb = controllability_matrix(a, &DMatrix::from_column_slice(n, 1, b.as_slice()));
    let inv = ctrb
        .try_inverse()
        .ok_or(DesignError::NotControllable { rank: n - 1, n })?;
    let mut phi = DMatrix::<f64>::identity(n, n);
    for &pole in poles {
        phi = phi * (a - DMatrix::<f64>::identity(n, n) * pole);
    }
    let last = inv.row(n - 1).into_owned();
    Ok(DMatrix::from_row_slice(1, n, (last * phi).as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn lyapunov_zero_map() {
        let q = m(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = solve_discrete_lyapunov(&DMatrix::zeros(2, 2), &q).unwrap();
        assert!((p - q).amax() < 1e-15);
    }

    #[test]
    fn lyapunov_scalar_closed_form() {
        let p = solve_discrete_lyapunov(&m(1, 1, &[0.5]), &m(1, 1, &[1.0])).unwrap();
        assert!(close(p[(0, 0)], 4.0 / 3.0, 1e-14));
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        assert!(matches!(
            solve_discrete_lyapunov(&m(1, 1, &[1.0]), &m(1, 1, &[1.0])),
            Err(DesignError::NotSchur(_))
        ));
        assert!(matches!(
            solve_discrete_lyapunov(&m(1, 1, &[2.0]), &m(1, 1, &[1.0])),
            Err(DesignError::NotSchur(_))
        ));
        assert!(!is_schur(&m(2, 2, &[1.0, 1.0, 0.0, 1.0])));
        assert!(is_schur(&m(2, 2, &[0.5, 1.0, 0.0, 0.5])));
    }

    #[test]
    fn lyapunov_rejects_bad_q() {
        let a = m(1, 1, &[0.5]);
        assert!(matches!(
            solve_discrete_lyapunov(&a, &m(1, 1, &[-1.0])),
            Err(DesignError::InvalidInput(_))
        ));
        assert!(matches!(
            solve_discrete_lyapunov(&m(2, 2, &[0.0; 4]), &m(2, 2, &[1.0, 1.0, 0.0, 1.0])),
            Err(DesignError::InvalidInput(_))
        ));
    }

    #[test]
    fn lyapunov_random_schur_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(1..=5);
            let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let rho = spectral_norm(&raw).unwrap();
            let a = raw * (rng.gen_range(0.1..0.95) / rho);
            let q = DMatrix::identity(n, n);
            let p = solve_discrete_lyapunov(&a, &q).unwrap();
            assert!(lyapunov_residual(&a, &p, &q) <= 1e-9 * p.norm());
            assert_eq!(p, p.transpose());
        }
    }

    #[test]
    fn norms_and_eigs_trivial() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert_eq!(spectral_norm(&eye).unwrap(), 1.0);
        assert_eq!(eig_extremes_sym(&eye).unwrap(), (1.0, 1.0));
        let d = m(2, 2, &[2.0, 0.0, 0.0, -3.0]);
        assert!(close(spectral_norm(&d).unwrap(), 3.0, 1e-15));
        assert_eq!(eig_extremes_sym(&d).unwrap(), (-3.0, 2.0));
    }

    #[test]
    fn eigenvalues_two_by_two() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let e = eigenvalues_sym(&m(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert!(close(e[0], 1.0, 1e-14) && close(e[1], 3.0, 1e-14));
    }

    #[test]
    fn spectral_norm_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let mat: DMatrix<f64> = DMatrix::from_fn(r, c, |_, _| rng.gen_range(-3.0..3.0));
            let s = spectral_norm(&mat).unwrap();
            assert!(s <= mat.norm() * (1.0 + 1e-12));
            for _ in 0..100 {
                let v: DVector<f64> = DVector::from_fn(c, |_, _| rng.gen_range(-1.0..1.0));
                let v = &v / v.norm();
                assert!((&mat * &v).norm() <= s * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn gain_bound_scalar_closed_form() {
        let plant = PlantModel::new(m(1, 1, &[1.0]), m(1, 1, &[1.0])).unwrap();
        let k = m(1, 1, &[0.5]);
        let q = m(1, 1, &[1.0]);
        let p = solve_discrete_lyapunov(&plant.closed_loop(&k), &q).unwrap();
        // BᵀPB = 4/3, (A−BK)ᵀPB = 2/3: (2 / (4/3)) (−2/3 + √(4/9 + 4/3)) = 1
        let raw = gain_sensitivity_bound(&plant, &k, &q, &p, 1.0).unwrap();
        assert!(close(raw, 1.0, 1e-14));
        let safe = gain_sensitivity_bound(&plant, &k, &q, &p, 0.9).unwrap();
        assert!(close(safe, 0.9, 1e-14));
    }

    #[test]
    fn gain_saturation_examples() {
        assert_eq!(gain_saturation(&m(1, 1, &[0.0]), 0.3), 1);
        assert_eq!(gain_saturation(&m(1, 2, &[2.3, -1.0]), 1.0), 3);
        assert_eq!(gain_saturation(&m(1, 1, &[2.5]), 1.0), 3);
        assert_eq!(gain_saturation(&m(1, 1, &[-2.51]), 1.0), 4);
    }

    #[test]
    fn zoom_constants_scalar() {
        let plant = PlantModel::new(m(1, 1, &[1.0]), m(1, 1, &[1.0])).unwrap();
        let k_bar = m(1, 1, &[0.5]);
        let q_bar = m(1, 1, &[1.0]);
        let p_bar = solve_discrete_lyapunov(&plant.closed_loop(&k_bar), &q_bar).unwrap();
        let zc = zoom_constants(&plant, &k_bar, &q_bar, &p_bar, 0.01, 4).unwrap();
        // cross = 0.5·(4/3)·0.5 = 1/3, quad = 1/3: Θ = (1/3 + √(1/9 + 1/3)) / 2 = 1/2
        assert!(close(zc.theta, 0.5, 1e-14));
        assert!(close(zc.omega_prime, 1.51, 1e-14));
        assert!(close(zc.omega, 1.51 / 3.5, 1e-14));
        let zc2 = zoom_constants(&plant, &k_bar, &q_bar, &p_bar, 0.01, 8).unwrap();
        // (q_sat − 1/2) goes 3.5 → 7.5
        assert!(close(zc2.omega * 7.5, zc.omega * 3.5, 1e-14));
        assert!(matches!(
            zoom_constants(&plant, &k_bar, &q_bar, &p_bar, 0.01, 2),
            Err(DesignError::QSatTooSmall { .. })
        ));
    }

    #[test]
    fn double_integrator_design() {
        let plant = PlantModel::new(m(2, 2, &[1.0, 1.0, 0.0, 1.0]), m(2, 1, &[0.0, 1.0])).unwrap();
        let k = place_poles_single_input(plant.a(), &DVector::from_column_slice(&[0.0, 1.0]), &[0.3, 0.4]).unwrap();
        let q_sat = LinearDesign::minimal_q_sat(&plant, &k, 0.01, 0.9, 0.5).unwrap();
        let d = LinearDesign::new(plant, k, DesignParams { q_sat, ..Default::default() }).unwrap();
        assert!(d.omega > 0.0 && d.omega < 1.0);
        assert!(d.omega <= 0.5);
        assert!(is_schur(&d.plant.closed_loop(&d.k_bar)));
        assert!(d.capture_threshold() > 0.0);
    }

    #[test]
    fn pole_placement_places_poles() {
        let a = m(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = DVector::from_column_slice(&[0.0, 1.0]);
        let k = place_poles_single_input(&a, &b, &[0.2, -0.1]).unwrap();
        let acl = &a - DMatrix::from_column_slice(2, 1, b.as_slice()) * &k;
        // trace and determinant of the closed loop encode the poles
        assert!(close(acl.trace(), 0.1, 1e-12));
        assert!(close(acl.determinant(), -0.02, 1e-12));
    }

    #[test]
    fn uncontrollable_plant_rejected() {
        let r = PlantModel::new(m(2, 2, &[1.0, 0.0, 0.0, 2.0]), m(2, 1, &[1.0, 0.0]));
        assert!(matches!(r, Err(DesignError::NotControllable { rank: 1, n: 2 })));
        assert!(matches!(
            PlantModel::new(m(2, 2, &[1.0; 4]), m(1, 1, &[1.0])),
            Err(DesignError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn trigger_examples() {
        assert!(!should_trigger(1.0, &[1.0, 0.0], &[0.0, 0.0]));
        assert!(should_trigger(1.0, &[0.0, 0.0], &[0.0, 0.0]));
        assert!(should_trigger(1.0, &[1.0, 0.0], &[1.0, 0.0]));
        assert!(!should_trigger(0.25, &[1.0, 0.0], &[1.0, 0.0]));
    }

    #[test]
    fn key_bound_examples() {
        assert_eq!(key_size_bound(10, 3, 2, &BigUint::from(100u32)), BigUint::from(22050u32));
        assert_eq!(key_size_bound(1, 1, 1, &BigUint::from(1u32)), BigUint::from(7u32));
    }

    proptest! {
        #[test]
        fn trigger_scale_invariant(
            x in proptest::collection::vec(-10.0f64..10.0, 3),
            e in proptest::collection::vec(-10.0f64..10.0, 3),
            theta in 0.01f64..10.0,
            c in prop_oneof![Just(0.5f64), Just(2.0), Just(4.0), Just(0.125)],
        ) {
            let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
            let es: Vec<f64> = e.iter().map(|v| v * c).collect();
            prop_assert_eq!(should_trigger(theta, &x, &e), should_trigger(theta, &xs, &es));
        }

        #[test]
        fn key_bound_monotone(q in 1u64..1000, g in 1u64..1000, n in 1u64..10, r in 1u64..10_000, which in 0usize..4) {
            let base = key_size_bound(q, g, n, &BigUint::from(r));
            let bumped = match which {
                0 => key_size_bound(q + 1, g, n, &BigUint::from(r)),
                1 => key_size_bound(q, g + 1, n, &BigUint::from(r)),
                2 => key_size_bound(q, g, n + 1, &BigUint::from(r)),
                _ => key_size_bound(q, g, n, &BigUint::from(r + 1)),
            };
            prop_assert!(bumped >= base);
        }
    }
}
