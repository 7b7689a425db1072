//! Time-varying quantizer sensitivity.
//!
//! Linear loops start in zoom-out with `Δ[t] = ‖A‖^{2t}` until the quantized
//! state is captured at `t₀`, then shrink the sensitivity geometrically,
//! `Δ_i = Ω^i Δ₀`, each time the quantized state drops under the update
//! threshold. Nonlinear loops start directly in zoom-in at `t₀ = 0` and freeze
//! after stage `f`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::encoding::QuantizerSpec;
use crate::lindesign::euclid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoomPhase {
    ZoomOut,
    ZoomIn,
    Frozen,
}

impl fmt::Display for ZoomPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZoomPhase::ZoomOut => "zoom_out",
            ZoomPhase::ZoomIn => "zoom_in",
            ZoomPhase::Frozen => "frozen",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoomState {
    phase: ZoomPhase,
    delta: f64,
    stage: u32,
    t0: Option<u64>,
    update_times: Vec<u64>,
    omega: f64,
    delta0: f64,
    norm_a: f64,
    q_sat: i64,
    capture_threshold: f64,
    update_threshold: f64,
    freeze_stage: Option<u32>,
}

impl ZoomState {
    /// Linear-mode state, in zoom-out at `t = 0`.
    pub fn linear(norm_a: f64, omega: f64, q_sat: i64, capture_threshold: f64, update_threshold: f64) -> Self {
        Self {
            phase: ZoomPhase::ZoomOut,
            delta: 1.0,
            stage: 0,
            t0: None,
            update_times: Vec::new(),
            omega,
            delta0: f64::NAN,
            norm_a,
            q_sat,
            capture_threshold,
            update_threshold,
            freeze_stage: None,
        }
    }

    /// Nonlinear-mode state, in zoom-in at `t₀ = 0` with `Δ = Δ₀`.
    pub fn nonlinear(delta0: f64, omega: f64, q_sat: i64, update_threshold: f64, freeze_stage: u32) -> Self {
        Self {
            phase: if freeze_stage == 0 { ZoomPhase::Frozen } else { ZoomPhase::ZoomIn },
            delta: delta0,
            stage: 0,
            t0: Some(0),
            update_times: vec![0],
            omega,
            delta0,
            norm_a: f64::NAN,
            q_sat,
            capture_threshold: f64::NAN,
            update_threshold,
            freeze_stage: Some(freeze_stage),
        }
    }

    pub fn phase(&self) -> ZoomPhase {
        self.phase
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn stage(&self) -> u32 {
        self.stage
    }

    pub fn t0(&self) -> Option<u64> {
        self.t0
    }

    /// `t₀, t₁, …` in order.
    pub fn update_times(&self) -> &[u64] {
        &self.update_times
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn freeze_stage(&self) -> Option<u32> {
        self.freeze_stage
    }

    /// `Δ_i = Ω^i Δ₀`, evaluated directly rather than by repeated products.
    pub fn stage_delta(&self, i: u32) -> f64 {
        self.omega.powi(i as i32) * self.delta0
    }

    pub fn zoomout_delta(&self, t: u64) -> f64 {
        self.norm_a.powi(2 * t as i32)
    }

    fn quantized_norm(&self, delta: f64, x: &[f64]) -> f64 {
        let spec = QuantizerSpec::new(delta, self.q_sat).expect("sensitivity stays positive");
        let levels = spec.quantize_vector(x);
        euclid(&levels.iter().map(|&l| l as f64).collect::<Vec<_>>())
    }

    fn may_advance(&self, t: u64) -> bool {
        self.update_times.last().is_some_and(|&last| t > last)
    }

    /// Zoom-out step at time `t`; returns `(Δ[t], captured)`.
    pub fn zoomout_step(&mut self, t: u64, x: &[f64]) -> (f64, bool) {
        assert_eq!(self.phase, ZoomPhase::ZoomOut, "zoomout_step outside zoom-out");
        let delta = self.zoomout_delta(t);
        self.delta = delta;
        if t >= 1 && self.quantized_norm(delta, x) <= self.capture_threshold {
            self.phase = ZoomPhase::ZoomIn;
            self.t0 = Some(t);
            self.delta0 = delta;
            self.stage = 0;
            self.update_times.push(t);
            return (delta, true);
        }
        (delta, false)
    }

    /// Linear zoom-in step at time `t`; returns `(Δ[t], stage_advanced)`.
    pub fn zoomin_step(&mut self, t: u64, x: &[f64]) -> (f64, bool) {
        assert_eq!(self.phase, ZoomPhase::ZoomIn, "zoomin_step outside zoom-in");
        if self.may_advance(t) && self.quantized_norm(self.delta, x) <= self.update_threshold {
            self.stage += 1;
            self.delta = self.stage_delta(self.stage);
            self.update_times.push(t);
            return (self.delta, true);
        }
        (self.delta, false)
    }

    /// Nonlinear zoom-in step; stops advancing and freezes at stage `f`.
    pub fn zoomin_step_nonlinear(&mut self, t: u64, x: f64) -> (f64, bool) {
        let f = self.freeze_stage.expect("nonlinear zoom state");
        if self.phase == ZoomPhase::Frozen {
            return (self.delta, false);
        }
        if self.stage < f && self.may_advance(t) && self.quantized_norm(self.delta, &[x]) <= self.update_threshold {
            self.stage += 1;
            self.delta = self.stage_delta(self.stage);
            self.update_times.push(t);
            if self.stage == f {
                self.phase = ZoomPhase::Frozen;
            }
            return (self.delta, true);
        }
        (self.delta, false)
    }

    /// Dispatches to the step matching the current phase (linear mode).
    pub fn step(&mut self, t: u64, x: &[f64]) -> (f64, bool) {
        match self.phase {
            ZoomPhase::ZoomOut => self.zoomout_step(t, x),
            ZoomPhase::ZoomIn => self.zoomin_step(t, x),
            ZoomPhase::Frozen => (self.delta, false),
        }
    }
}

/// Ellipsoid `{x : xᵀ P̄ x <= radius_sq}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentRegion {
    pub p_bar: DMatrix<f64>,
    pub radius_sq: f64,
}

impl ContainmentRegion {
    pub fn value(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        (v.transpose() * &self.p_bar * &v)[(0, 0)]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.value(x) <= self.radius_sq
    }
}

/// `R = {x : xᵀP̄x <= λ_min(P̄) Δ_i² (q_sat − 1/2)²}`
pub fn containment_region(p_bar: &DMatrix<f64>, lambda_min: f64, delta_i: f64, q_sat: i64) -> ContainmentRegion {
    let half = q_sat as f64 - 0.5;
    ContainmentRegion {
        p_bar: p_bar.clone(),
        radius_sq: lambda_min * delta_i * delta_i * half * half,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoomout_schedule_and_capture() {
        let mut z = ZoomState::linear(2.0, 0.5, 10, 5.0, 4.5);
        assert_eq!(z.zoomout_delta(3), 64.0);
        // t = 0 never captures, even at the origin
        assert_eq!(z.zoomout_step(0, &[0.0]), (1.0, false));
        assert_eq!(z.zoomout_step(1, &[0.0]), (4.0, true));
        assert_eq!(z.phase(), ZoomPhase::ZoomIn);
        assert_eq!(z.t0(), Some(1));
        assert_eq!(z.delta0(), 4.0);
    }

    #[test]
    fn capture_uses_quantized_norm() {
        // x = 5.4 at Δ = 1 quantizes to 5 (≤ 5) although |x| > 5
        let mut z = ZoomState::linear(1.0, 0.5, 100, 5.0, 1.0);
        assert_eq!(z.zoomout_step(1, &[5.4]), (1.0, true));
        let mut z = ZoomState::linear(1.0, 0.5, 100, 5.0, 1.0);
        assert_eq!(z.zoomout_step(1, &[5.6]), (1.0, false));
    }

    #[test]
    fn unstable_scalar_capture() {
        // open loop x[t] = 2^t · 100 against Δ[t] = 4^t
        let mut z = ZoomState::linear(2.0, 0.5, 20, 19.0, 5.0);
        let mut x = 100.0;
        let mut captured = None;
        for t in 0..60u64 {
            if z.zoomout_step(t, &[x]).1 {
                captured = Some(t);
                break;
            }
            x *= 2.0;
        }
        let t0 = captured.expect("capture happens");
        // levels: t=1,2 saturate at 20; t=3 gives ⌊12.5 + 0.5⌋ = 12
        assert_eq!(t0, 3);
    }

    #[test]
    fn zoomin_threshold_and_geometry() {
        let mut z = ZoomState::linear(1.0, 0.25, 100, 1e9, 5.0 - 0.5);
        z.zoomout_step(1, &[0.0]);
        // same step as capture: no advance
        assert_eq!(z.zoomin_step(1, &[0.0]), (1.0, false));
        // ‖x_q‖ = 4 ≤ 4.5
        assert_eq!(z.zoomin_step(2, &[4.0]), (0.25, true));
        assert_eq!(z.zoomin_step(2, &[0.0]), (0.25, false));
        // at Δ = 0.25, x = 1.25 quantizes to 5 > 4.5
        assert_eq!(z.zoomin_step(3, &[1.25]), (0.25, false));
        for t in 4..40 {
            z.zoomin_step(t, &[0.0]);
        }
        let times = z.update_times();
        assert!(times.windows(2).all(|w| w[1] >= w[0] + 1));
        for i in 1..z.stage() {
            let ratio = z.stage_delta(i) / z.stage_delta(i - 1);
            assert!((ratio - 0.25).abs() <= 1e-12 * 0.25);
        }
    }

    #[test]
    fn nonlinear_freeze() {
        let omega = 0.5;
        let mut z = ZoomState::nonlinear(2.0, omega, 50, 3.0, 6);
        let mut deltas = vec![z.delta()];
        for t in 1..30 {
            let (d, adv) = z.zoomin_step_nonlinear(t, 0.0);
            if adv {
                deltas.push(d);
            }
        }
        assert_eq!(deltas, (0..=6).map(|i| 2.0 * omega.powi(i)).collect::<Vec<_>>());
        assert_eq!(z.phase(), ZoomPhase::Frozen);
        assert_eq!(z.stage(), 6);
        for t in 30..40 {
            assert_eq!(z.zoomin_step_nonlinear(t, 0.0), (2.0 * omega.powi(6), false));
        }
        let frozen_at_start = ZoomState::nonlinear(1.0, 0.5, 10, 3.0, 0);
        assert_eq!(frozen_at_start.phase(), ZoomPhase::Frozen);
    }

    #[test]
    fn containment_examples() {
        let r = containment_region(&DMatrix::from_element(1, 1, 2.0), 2.0, 1.0, 2);
        assert!(r.contains(&[0.0]));
        assert!(r.contains(&[1.5]));
        assert!(r.contains(&[-1.5]));
        assert!(!r.contains(&[1.5001]));
        let shrink: Vec<f64> = (0..5)
            .map(|i| containment_region(&DMatrix::identity(2, 2), 1.0, 0.5f64.powi(i), 10).radius_sq)
            .collect();
        assert!(shrink.windows(2).all(|w| w[1] < w[0]));
    }
}
