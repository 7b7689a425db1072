//! Commands behind the `ectl` binary, plus the trajectory CSV and metrics formats.

use std::fmt::Write as _;
use std::io::Write as _;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde_json::json;

use crate::config::RunConfig;
use crate::paillier::{keygen, PrivateKey};
use crate::protocol::{run_controller, ControllerStats, ProtocolError, TcpTransport};
use crate::simloop::{self, key_requirements, Mode, TrajectoryRecord};
use crate::Error;

pub const CSV_VERSION: u32 = 1;

/// Shortest round-trip decimal, switching to exponent form for extreme magnitudes.
fn real(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Linear => "linear",
        Mode::EventTriggered => "event_triggered",
        Mode::Nonlinear => "nonlinear",
    }
}

/// Trajectory CSV: a versioned comment line, a header row, one row per step.
pub fn trajectory_csv(rec: &TrajectoryRecord) -> String {
    let n_x = rec.final_state.len();
    let n_u = rec.steps.first().map_or(0, |s| s.u.len());
    let mut out = String::new();
    writeln!(out, "# ectl trajectory v{CSV_VERSION} mode={}", mode_name(rec.mode)).unwrap();
    let mut cols = vec!["t".to_string()];
    cols.extend((0..n_x).map(|i| format!("x_{i}")));
    cols.extend((0..n_u).map(|i| format!("u_{i}")));
    cols.extend(["delta", "phase", "stage", "triggered", "crypto_ms"].map(String::from));
    writeln!(out, "{}", cols.join(",")).unwrap();
    for s in &rec.steps {
        let mut row = vec![s.t.to_string()];
        row.extend(s.x.iter().map(|&v| real(v)));
        row.extend(s.u.iter().map(|&v| real(v)));
        row.push(real(s.delta));
        row.push(s.phase.to_string());
        row.push(s.stage.to_string());
        row.push(u8::from(s.triggered).to_string());
        row.push(s.crypto_ms.map_or_else(|| "-".to_string(), real));
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    out
}

pub fn metrics(rec: &TrajectoryRecord) -> serde_json::Value {
    json!({
        "mode": mode_name(rec.mode),
        "steps": rec.steps.len(),
        "t0": rec.t0,
        "update_times": rec.update_times,
        "trigger_count": rec.trigger_count,
        "final_norm": rec.final_norm,
        "key_bits": rec.key_bits,
        "crypto_ms_mean": rec.crypto_ms_mean(),
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Writes the configured outputs; relative paths resolve against the config's directory.
/// Without a CSV path the trajectory goes to stdout.
fn write_outputs(cfg: &RunConfig, config_path: &Path, rec: &TrajectoryRecord) -> Result<(), Error> {
    let base = config_path.parent().unwrap_or(Path::new("."));
    let csv = trajectory_csv(rec);
    match &cfg.output.csv {
        Some(p) => std::fs::write(resolve(base, p), csv)?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    if let Some(p) = &cfg.output.metrics {
        let text = serde_json::to_string_pretty(&metrics(rec)).expect("metrics serialize");
        std::fs::write(resolve(base, p), text + "\n")?;
    }
    Ok(())
}

/// Runs the configured scenario with a self-hosted controller.
pub fn cmd_run(config_path: &Path) -> Result<TrajectoryRecord, Error> {
    let cfg = RunConfig::load(config_path)?;
    let sc = cfg.scenario()?;
    log::info!("running {:?} scenario, horizon {}, seed {}", sc.mode, sc.horizon, sc.seed);
    let rec = simloop::run(&sc)?;
    log::info!("{} steps, final norm {:e}, {}-bit key", rec.steps.len(), rec.final_norm, rec.key_bits);
    write_outputs(&cfg, config_path, &rec)?;
    Ok(rec)
}

fn connect_with_retry(addr: &str, patience: Duration) -> Result<TcpStream, Error> {
    let deadline = Instant::now() + patience;
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(ProtocolError::Io(e).into()),
            Err(_) => std::thread::sleep(Duration::from_millis(50)),
        }
    }
}

/// Plant node: connects to a running controller and drives the loop.
pub fn cmd_plant(config_path: &Path, connect: &str) -> Result<TrajectoryRecord, Error> {
    let cfg = RunConfig::load(config_path)?;
    let sc = cfg.scenario()?;
    let stream = connect_with_retry(connect, Duration::from_secs(10))?;
    log::info!("plant connected to {connect}");
    let rec = simloop::run_remote(&sc, Box::new(TcpTransport::new(stream)?))?;
    write_outputs(&cfg, config_path, &rec)?;
    Ok(rec)
}

/// Binds the controller socket; split from [`serve_controller`] so callers can learn the port.
pub fn bind_controller(listen: &str) -> Result<TcpListener, Error> {
    let listener = TcpListener::bind(listen).map_err(ProtocolError::from)?;
    Ok(listener)
}

/// Serves one plant. Returns `None` when no plant connects within `idle`.
pub fn serve_controller(listener: TcpListener, idle: Duration) -> Result<Option<ControllerStats>, Error> {
    listener.set_nonblocking(true).map_err(ProtocolError::from)?;
    let deadline = Instant::now() + idle;
    let stream = loop {
        match listener.accept() {
            Ok((s, peer)) => {
                log::info!("controller: plant connected from {peer}");
                break s;
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    log::info!("controller: no plant within {idle:?}, shutting down");
                    return Ok(None);
                }
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(ProtocolError::Io(e).into()),
        }
    };
    stream.set_nonblocking(false).map_err(ProtocolError::from)?;
    let mut transport = TcpTransport::new(stream)?;
    transport.set_timeout(Some(idle))?;
    let stats = run_controller(&mut transport)?;
    log::info!("controller: {} messages, {} evaluations", stats.messages, stats.evaluations);
    Ok(Some(stats))
}

pub fn cmd_controller(listen: &str, idle: Duration) -> Result<Option<ControllerStats>, Error> {
    let listener = bind_controller(listen)?;
    let addr: SocketAddr = listener.local_addr().map_err(ProtocolError::from)?;
    println!("listening on {addr}");
    std::io::stdout().flush()?;
    serve_controller(listener, idle)
}

pub const MIN_KEYGEN_BITS: u64 = 64;

/// Generates a key pair and writes it as JSON. With a config, also reports
/// whether the modulus clears that scenario's key-size bound.
pub fn cmd_keygen(bits: u64, seed: u64, out: &Path, config: Option<&Path>) -> Result<PrivateKey, Error> {
    if bits < MIN_KEYGEN_BITS {
        return Err(Error::Usage(format!("--bits must be at least {MIN_KEYGEN_BITS}, got {bits}")));
    }
    let (_, sk) = keygen(bits, seed)?;
    let text = serde_json::to_string_pretty(&sk.to_document()).expect("key document serializes");
    std::fs::write(out, text + "\n")?;
    if let Some(path) = config {
        let sc = RunConfig::load(path)?.scenario()?;
        let (bound, _) = key_requirements(&sc)?;
        let n = sk.public().n();
        let verdict = if n > &bound { "ok" } else { "too small" };
        println!("N has {} bits; scenario needs N > {bound} ({} bits): {verdict}", n.bits(), bound.bits());
    }
    Ok(sk)
}

pub fn load_key(path: &Path) -> Result<PrivateKey, Error> {
    let text = std::fs::read_to_string(path)?;
    let doc = serde_json::from_str(&text).map_err(|e| Error::Usage(format!("key file: {e}")))?;
    Ok(PrivateKey::from_document(&doc)?)
}
