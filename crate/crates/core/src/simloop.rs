//! Closed-loop simulators.
//!
//! Every loop is written once against [`LoopBackend`], the integer map
//! `x_q ↦ G x_q`. The encrypted backend realizes it through the plant and
//! controller nodes; the plaintext backend is the reference it must match.

use std::net::{TcpListener, TcpStream};
use std::thread::JoinHandle;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::encoding::QuantizerSpec;
use crate::lindesign::{euclid, should_trigger, DesignError, DesignParams, LinearDesign, PlantModel};
use crate::paillier::{keygen, keypair_from_primes, min_modulus_for_bits, PaillierError, PrivateKey};
use crate::polyapprox::{monomial_vector, scale_squared, ApproxError, NonlinearDesign, NonlinearModel, NonlinearParams};
use crate::protocol::{
    run_controller, ChannelTransport, ControllerStats, PlantEndpoint, ProtocolError, RecordingTransport, TcpTransport,
    TrafficLog, Transport,
};
use crate::zoom::{ZoomPhase, ZoomState};

pub const DEFAULT_FLOOR_RATIO: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Crypto(#[from] PaillierError),
    #[error("KeyTooSmall: N has {bits} bits but must exceed {bound}")]
    KeyTooSmall { bits: u64, bound: BigUint },
    #[error("InvalidScenario: {0}")]
    InvalidScenario(String),
    #[error("ContainmentViolated: |x[{t}]| = {x} exceeds {radius}")]
    ContainmentViolated { t: u64, x: f64, radius: f64 },
    #[error("ControllerFailed: {0}")]
    ControllerFailed(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Linear,
    EventTriggered,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyChoice {
    Bits(u64),
    /// Smallest power of two clearing the key-size bound by 8 bits.
    Auto,
    /// Explicit primes, for tiny-key experiments.
    Primes(BigUint, BigUint),
}

#[derive(Debug, Clone)]
pub enum System {
    Linear {
        plant: PlantModel,
        k: DMatrix<f64>,
        q: Option<DMatrix<f64>>,
        q_bar: Option<DMatrix<f64>>,
        params: DesignParams,
    },
    Nonlinear {
        model: NonlinearModel,
        params: NonlinearParams,
    },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub mode: Mode,
    pub system: System,
    pub x0: Vec<f64>,
    pub horizon: u64,
    pub key: KeyChoice,
    pub seed: u64,
    pub transport: TransportKind,
    /// Linear runs stop once `‖x‖ <= floor_ratio·‖x0‖`.
    pub floor_ratio: f64,
    /// Event-triggered mode: fire at every step after capture.
    pub always_trigger: bool,
    /// Re-send the gain under a fresh `r` before every step.
    pub reblind_each_step: bool,
    pub record_timing: bool,
    /// Run even when N does not exceed the key-size bound.
    pub allow_undersized_key: bool,
}

impl Scenario {
    pub fn new(mode: Mode, system: System, x0: Vec<f64>) -> Self {
        Self {
            mode,
            system,
            x0,
            horizon: 5000,
            key: KeyChoice::Auto,
            seed: 0,
            transport: TransportKind::InProcess,
            floor_ratio: DEFAULT_FLOOR_RATIO,
            always_trigger: false,
            reblind_each_step: false,
            record_timing: false,
            allow_undersized_key: false,
        }
    }

    pub fn linear_design(&self) -> Result<LinearDesign> {
        match &self.system {
            System::Linear { plant, k, q, q_bar, params } => {
                let n = plant.n_x();
                let eye = DMatrix::identity(n, n);
                Ok(LinearDesign::with_weights(
                    plant.clone(),
                    k.clone(),
                    q.clone().unwrap_or_else(|| eye.clone()),
                    q_bar.clone().unwrap_or(eye),
                    *params,
                )?)
            }
            System::Nonlinear { .. } => Err(SimError::InvalidScenario("linear mode needs a linear system".into())),
        }
    }

    pub fn nonlinear_design(&self) -> Result<NonlinearDesign> {
        match &self.system {
            System::Nonlinear { model, params } => Ok(NonlinearDesign::new(model.clone(), *params)?),
            System::Linear { .. } => Err(SimError::InvalidScenario("nonlinear mode needs a scalar model".into())),
        }
    }

    fn validate(&self, n_x: usize) -> Result<()> {
        if self.horizon < 1 {
            return Err(SimError::InvalidScenario("horizon must be at least 1".into()));
        }
        if self.x0.len() != n_x || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidScenario(format!("x0 must be {n_x} finite values")));
        }
        Ok(())
    }

    /// Key pair meeting `bound` (unless explicitly allowed not to).
    pub fn secret_key(&self, bound: &BigUint) -> Result<PrivateKey> {
        let (_, sk) = match &self.key {
            KeyChoice::Bits(b) => keygen(*b, self.seed)?,
            KeyChoice::Auto => keygen(auto_key_bits(bound), self.seed)?,
            KeyChoice::Primes(p, q) => keypair_from_primes(p, q)?,
        };
        let n = sk.public().n();
        if n <= bound && !self.allow_undersized_key {
            return Err(SimError::KeyTooSmall {
                bits: n.bits(),
                bound: bound.clone(),
            });
        }
        Ok(sk)
    }

    fn plant_rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.seed ^ 0x5eed_0f_91a7)
    }
}

/// Smallest power-of-two bit length whose weakest modulus exceeds `bound·2^8`.
pub fn auto_key_bits(bound: &BigUint) -> u64 {
    let target = bound << 8u32;
    let mut bits = 32;
    while min_modulus_for_bits(bits) <= target {
        bits *= 2;
    }
    bits
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Integer control levels returned by the backend, when it was queried.
    pub u_q: Option<Vec<i128>>,
    pub delta: f64,
    pub phase: ZoomPhase,
    pub stage: u32,
    pub triggered: bool,
    pub crypto_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub mode: Mode,
    pub steps: Vec<StepRecord>,
    pub t0: Option<u64>,
    pub update_times: Vec<u64>,
    pub trigger_count: u64,
    pub final_state: Vec<f64>,
    pub final_norm: f64,
    pub key_bits: u64,
}

impl TrajectoryRecord {
    pub fn crypto_ms_mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.steps.iter().filter_map(|s| s.crypto_ms).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// The integer map `x_q ↦ G x_q` shared by all loops.
pub trait LoopBackend {
    fn start(&mut self, gain: &DMatrix<i64>) -> Result<()>;
    fn update_gain(&mut self, gain: &DMatrix<i64>) -> Result<()>;
    fn reblind(&mut self) -> Result<()>;
    fn apply(&mut self, x_q: &[i64]) -> Result<Vec<i128>>;
    /// Cumulative crypto wall-clock time.
    fn elapsed(&self) -> Duration;
    fn key_bits(&self) -> u64;
    fn finish(self: Box<Self>) -> Result<()>;
}

/// Reference backend: plain integer matrix-vector product.
#[derive(Debug, Clone, Default)]
pub struct PlaintextBackend {
    gain: DMatrix<i64>,
}

impl PlaintextBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

pub fn integer_matvec(gain: &DMatrix<i64>, x_q: &[i64]) -> Vec<i128> {
    (0..gain.nrows())
        .map(|i| (0..gain.ncols()).map(|j| gain[(i, j)] as i128 * x_q[j] as i128).sum())
        .collect()
}

impl LoopBackend for PlaintextBackend {
    fn start(&mut self, gain: &DMatrix<i64>) -> Result<()> {
        self.gain = gain.clone();
        Ok(())
    }

    fn update_gain(&mut self, gain: &DMatrix<i64>) -> Result<()> {
        self.start(gain)
    }

    fn reblind(&mut self) -> Result<()> {
        Ok(())
    }

    fn apply(&mut self, x_q: &[i64]) -> Result<Vec<i128>> {
        if x_q.len() != self.gain.ncols() {
            return Err(PaillierError::LengthMismatch {
                left: self.gain.ncols(),
                right: x_q.len(),
            }
            .into());
        }
        Ok(integer_matvec(&self.gain, x_q))
    }

    fn elapsed(&self) -> Duration {
        Duration::ZERO
    }

    fn key_bits(&self) -> u64 {
        0
    }

    fn finish(self: Box<Self>) -> Result<()> {
        Ok(())
    }
}

/// Plant endpoint plus, for self-hosted runs, the controller thread.
pub struct EncryptedBackend {
    endpoint: PlantEndpoint<Box<dyn Transport>>,
    controller: Option<JoinHandle<std::result::Result<ControllerStats, ProtocolError>>>,
}

impl EncryptedBackend {
    /// Connects through `transport` to a controller running elsewhere.
    pub fn remote(secret: PrivateKey, r_max: u64, transport: Box<dyn Transport>, seed_rng: ChaCha20Rng) -> Self {
        Self {
            endpoint: PlantEndpoint::new(secret, BigUint::from(r_max), transport, Box::new(seed_rng)),
            controller: None,
        }
    }

    /// Starts a controller thread reachable through `kind`.
    pub fn spawn(secret: PrivateKey, r_max: u64, kind: TransportKind, seed_rng: ChaCha20Rng, log: Option<&mut Option<TrafficLog>>) -> Result<Self> {
        let (plant_side, handle): (Box<dyn Transport>, _) = match kind {
            TransportKind::InProcess => {
                let (plant_side, mut ctrl_side) = ChannelTransport::pair();
                let handle = std::thread::spawn(move || run_controller(&mut ctrl_side));
                (Box::new(plant_side), handle)
            }
            TransportKind::Tcp => {
                let listener = TcpListener::bind("127.0.0.1:0").map_err(ProtocolError::from)?;
                let addr = listener.local_addr().map_err(ProtocolError::from)?;
                let handle = std::thread::spawn(move || {
                    let (stream, _) = listener.accept()?;
                    let mut t = TcpTransport::new(stream)?;
                    run_controller(&mut t)
                });
                let stream = TcpStream::connect(addr).map_err(ProtocolError::from)?;
                (Box::new(TcpTransport::new(stream)?), handle)
            }
        };
        let plant_side: Box<dyn Transport> = match log {
            Some(slot) => {
                let (rec, traffic) = RecordingTransport::new(plant_side);
                *slot = Some(traffic);
                Box::new(rec)
            }
            None => plant_side,
        };
        let mut backend = Self::remote(secret, r_max, plant_side, seed_rng);
        backend.controller = Some(handle);
        Ok(backend)
    }

    pub fn used_blinding_factors(&self) -> &[BigUint] {
        self.endpoint.used_blinding_factors()
    }
}

impl LoopBackend for EncryptedBackend {
    fn start(&mut self, gain: &DMatrix<i64>) -> Result<()> {
        Ok(self.endpoint.handshake(gain)?)
    }

    fn update_gain(&mut self, gain: &DMatrix<i64>) -> Result<()> {
        Ok(self.endpoint.update_gain(gain)?)
    }

    fn reblind(&mut self) -> Result<()> {
        Ok(self.endpoint.reblind()?)
    }

    fn apply(&mut self, x_q: &[i64]) -> Result<Vec<i128>> {
        Ok(self.endpoint.round_trip(x_q)?)
    }

    fn elapsed(&self) -> Duration {
        self.endpoint.crypto_time()
    }

    fn key_bits(&self) -> u64 {
        self.endpoint.public_key().bits()
    }

    fn finish(self: Box<Self>) -> Result<()> {
        let Self { endpoint, controller } = *self;
        endpoint.shutdown()?;
        if let Some(handle) = controller {
            let stats = handle
                .join()
                .map_err(|_| SimError::ControllerFailed("controller thread panicked".into()))?
                .map_err(|e| SimError::ControllerFailed(e.to_string()))?;
            log::debug!("controller handled {} messages, {} evaluations", stats.messages, stats.evaluations);
        }
        Ok(())
    }
}

/// `u_q Δ_g Δ`, the rescaling the plant applies in linear mode.
pub fn scale_linear(u_q: i128, delta_g: f64, delta: f64) -> f64 {
    u_q as f64 * (delta_g * delta)
}

struct Recorder {
    steps: Vec<StepRecord>,
    timing: bool,
    last: Duration,
}

impl Recorder {
    fn new(timing: bool) -> Self {
        Self {
            steps: Vec::new(),
            timing,
            last: Duration::ZERO,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, backend: &dyn LoopBackend, t: u64, x: &[f64], u: &[f64], u_q: Option<Vec<i128>>, delta: f64, zoom: &ZoomState, triggered: bool) {
        let now = backend.elapsed();
        let crypto_ms = self.timing.then(|| (now - self.last).as_secs_f64() * 1e3);
        self.last = now;
        self.steps.push(StepRecord {
            t,
            x: x.to_vec(),
            u: u.to_vec(),
            u_q,
            delta,
            phase: zoom.phase(),
            stage: zoom.stage(),
            triggered,
            crypto_ms,
        });
    }
}

fn linear_zoom(design: &LinearDesign) -> ZoomState {
    ZoomState::linear(
        design.norm_a,
        design.omega,
        design.q_sat,
        design.capture_threshold(),
        design.update_threshold(),
    )
}

fn advance(design: &LinearDesign, x: &DVector<f64>, u: &[f64]) -> DVector<f64> {
    design.plant.a() * x + design.plant.b() * DVector::from_column_slice(u)
}

fn query(backend: &mut dyn LoopBackend, design: &LinearDesign, x: &[f64], delta: f64) -> Result<(Vec<i128>, Vec<f64>)> {
    let spec = QuantizerSpec::new(delta, design.q_sat).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let u_q = backend.apply(&spec.quantize_vector(x))?;
    let u = u_q.iter().map(|&v| scale_linear(v, design.delta_g, delta)).collect();
    Ok((u_q, u))
}

/// State-feedback loop with zoom-out, capture and zoom-in.
pub fn drive_linear(sc: &Scenario, design: &LinearDesign, backend: &mut dyn LoopBackend) -> Result<TrajectoryRecord> {
    sc.validate(design.n_x())?;
    let (n_x, n_u) = (design.n_x(), design.n_u());
    backend.start(&design.signed_gain_levels())?;
    let mut zoom = linear_zoom(design);
    let mut rec = Recorder::new(sc.record_timing);
    let floor = sc.floor_ratio * euclid(&sc.x0);
    let mut x = DVector::from_column_slice(&sc.x0);
    for t in 0..sc.horizon {
        if sc.reblind_each_step {
            backend.reblind()?;
        }
        let (delta, _) = zoom.step(t, x.as_slice());
        let (u_q, u) = if zoom.phase() == ZoomPhase::ZoomOut {
            // E(0) keeps the traffic shape constant; the input stays zero
            let u_q = backend.apply(&vec![0; n_x])?;
            (u_q, vec![0.0; n_u])
        } else {
            query(backend, design, x.as_slice(), delta)?
        };
        rec.push(backend, t, x.as_slice(), &u, Some(u_q), delta, &zoom, false);
        x = advance(design, &x, &u);
        if x.norm() <= floor {
            break;
        }
    }
    Ok(TrajectoryRecord {
        mode: Mode::Linear,
        steps: rec.steps,
        t0: zoom.t0(),
        update_times: zoom.update_times().to_vec(),
        trigger_count: 0,
        final_norm: x.norm(),
        final_state: x.as_slice().to_vec(),
        key_bits: backend.key_bits(),
    })
}

/// Same loop, but after capture the input is refreshed only on trigger.
pub fn drive_event_triggered(sc: &Scenario, design: &LinearDesign, backend: &mut dyn LoopBackend) -> Result<TrajectoryRecord> {
    sc.validate(design.n_x())?;
    let (n_x, n_u) = (design.n_x(), design.n_u());
    backend.start(&design.signed_gain_levels())?;
    let mut zoom = linear_zoom(design);
    let mut rec = Recorder::new(sc.record_timing);
    let floor = sc.floor_ratio * euclid(&sc.x0);
    let mut x = DVector::from_column_slice(&sc.x0);
    let mut held_u = vec![0.0; n_u];
    let mut held_xbar = vec![0.0; n_x];
    let mut triggers = 0u64;
    for t in 0..sc.horizon {
        if sc.reblind_each_step {
            backend.reblind()?;
        }
        let (delta, u_q, fired) = if zoom.phase() == ZoomPhase::ZoomOut {
            let (delta, captured) = zoom.zoomout_step(t, x.as_slice());
            if captured {
                let (u_q, u) = query(backend, design, x.as_slice(), delta)?;
                held_u = u;
                (delta, Some(u_q), true)
            } else {
                let u_q = backend.apply(&vec![0; n_x])?;
                (delta, Some(u_q), false)
            }
        } else {
            let e: Vec<f64> = x.iter().zip(&held_xbar).map(|(a, b)| a - b).collect();
            if sc.always_trigger || should_trigger(design.theta, x.as_slice(), &e) {
                let (delta, _) = zoom.zoomin_step(t, x.as_slice());
                let (u_q, u) = query(backend, design, x.as_slice(), delta)?;
                held_u = u;
                (delta, Some(u_q), true)
            } else {
                (zoom.delta(), None, false)
            }
        };
        if fired {
            triggers += 1;
            let spec = QuantizerSpec::new(delta, design.q_sat).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
            held_xbar = spec.quantize_vector(x.as_slice()).iter().map(|&l| l as f64 * delta).collect();
        }
        let u = held_u.clone();
        rec.push(backend, t, x.as_slice(), &u, u_q, delta, &zoom, fired);
        x = advance(design, &x, &u);
        if x.norm() <= floor {
            break;
        }
    }
    Ok(TrajectoryRecord {
        mode: Mode::EventTriggered,
        steps: rec.steps,
        t0: zoom.t0(),
        update_times: zoom.update_times().to_vec(),
        trigger_count: triggers,
        final_norm: x.norm(),
        final_state: x.as_slice().to_vec(),
        key_bits: backend.key_bits(),
    })
}

fn stage_gain(design: &NonlinearDesign, stage: u32) -> DMatrix<i64> {
    let levels = &design.stages[stage as usize].gain_levels;
    DMatrix::from_row_slice(1, levels.len(), levels)
}

/// Feedback-linearized scalar loop with a frozen zoom-in tail.
pub fn drive_nonlinear(sc: &Scenario, design: &NonlinearDesign, backend: &mut dyn LoopBackend) -> Result<TrajectoryRecord> {
    sc.validate(1)?;
    let x0 = sc.x0[0];
    design.check_initial_state(x0)?;
    let p = design.degree();
    let mut zoom = ZoomState::nonlinear(design.delta0, design.omega, design.q_sat, design.update_threshold(), design.freeze_stage);
    backend.start(&stage_gain(design, 0))?;
    let mut rec = Recorder::new(sc.record_timing);
    let radius = design.final_radius();
    let mut x = x0;
    for t in 0..sc.horizon {
        let (delta, advanced) = zoom.zoomin_step_nonlinear(t, x);
        if advanced {
            backend.update_gain(&stage_gain(design, zoom.stage()))?;
        } else if sc.reblind_each_step {
            backend.reblind()?;
        }
        if zoom.phase() == ZoomPhase::Frozen && x.abs() > radius {
            return Err(SimError::ContainmentViolated { t, x: x.abs(), radius });
        }
        let spec = QuantizerSpec::new(delta, design.q_sat).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        let u_q = backend.apply(&spec.quantize_vector(&monomial_vector(x, p)))?;
        let u = scale_squared(u_q[0], delta);
        rec.push(backend, t, &[x], &[u], Some(u_q), delta, &zoom, false);
        x = design.model.step(x, u);
        if !x.is_finite() {
            return Err(SimError::InvalidScenario(format!("state diverged at t = {t}")));
        }
    }
    Ok(TrajectoryRecord {
        mode: Mode::Nonlinear,
        steps: rec.steps,
        t0: zoom.t0(),
        update_times: zoom.update_times().to_vec(),
        trigger_count: 0,
        final_norm: x.abs(),
        final_state: vec![x],
        key_bits: backend.key_bits(),
    })
}

fn drive(sc: &Scenario, backend: &mut dyn LoopBackend) -> Result<TrajectoryRecord> {
    match sc.mode {
        Mode::Linear => drive_linear(sc, &sc.linear_design()?, backend),
        Mode::EventTriggered => drive_event_triggered(sc, &sc.linear_design()?, backend),
        Mode::Nonlinear => drive_nonlinear(sc, &sc.nonlinear_design()?, backend),
    }
}

/// Key-size bound and blinding range of the scenario's design.
pub fn key_requirements(sc: &Scenario) -> Result<(BigUint, u64)> {
    Ok(match sc.mode {
        Mode::Nonlinear => {
            let d = sc.nonlinear_design()?;
            (d.n_min, d.r_max)
        }
        _ => {
            let d = sc.linear_design()?;
            (d.n_min, d.r_max)
        }
    })
}

fn run_encrypted(sc: &Scenario, mode: Mode) -> Result<TrajectoryRecord> {
    if sc.mode != mode {
        return Err(SimError::InvalidScenario(format!("scenario mode is {:?}", sc.mode)));
    }
    let (bound, r_max) = key_requirements(sc)?;
    let secret = sc.secret_key(&bound)?;
    let mut backend = Box::new(EncryptedBackend::spawn(secret, r_max, sc.transport, sc.plant_rng(), None)?);
    let record = drive(sc, backend.as_mut())?;
    backend.finish()?;
    Ok(record)
}

pub fn run_linear(sc: &Scenario) -> Result<TrajectoryRecord> {
    run_encrypted(sc, Mode::Linear)
}

pub fn run_event_triggered(sc: &Scenario) -> Result<TrajectoryRecord> {
    run_encrypted(sc, Mode::EventTriggered)
}

pub fn run_nonlinear(sc: &Scenario) -> Result<TrajectoryRecord> {
    run_encrypted(sc, Mode::Nonlinear)
}

/// Encrypted run in whichever mode the scenario names.
pub fn run(sc: &Scenario) -> Result<TrajectoryRecord> {
    run_encrypted(sc, sc.mode)
}

/// The same loop over plaintext integers.
pub fn run_reference_plaintext(sc: &Scenario) -> Result<TrajectoryRecord> {
    let mut backend = Box::new(PlaintextBackend::new());
    let record = drive(sc, backend.as_mut())?;
    backend.finish()?;
    Ok(record)
}

/// Encrypted run over an already-connected transport (remote controller).
pub fn run_remote(sc: &Scenario, transport: Box<dyn Transport>) -> Result<TrajectoryRecord> {
    let (bound, r_max) = key_requirements(sc)?;
    let secret = sc.secret_key(&bound)?;
    let mut backend = Box::new(EncryptedBackend::remote(secret, r_max, transport, sc.plant_rng()));
    let record = drive(sc, backend.as_mut())?;
    backend.finish()?;
    Ok(record)
}
