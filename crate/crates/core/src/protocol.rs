//! Wire format, transports and the two network endpoints.
//!
//! Frame: `"ECTL" | version u8 | type u8 | payload length u32 | payload`, all
//! integers big-endian. Unsigned big integers are a `u32` byte count followed
//! by minimal big-endian magnitude; signed ones prefix a sign byte.

use std::io::{self, BufReader, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_bigint::{BigInt, BigUint, Sign};
use rand::RngCore;
use thiserror::Error;

use crate::encoding::{decode_signed, encode_level, EncodingError};
use crate::paillier::{minimal_be_bytes, BlindingKey, Ciphertext, PaillierError, PrivateKey, PublicKey};

pub const MAGIC: [u8; 4] = *b"ECTL";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
/// Frames above this size are rejected before allocation.
pub const MAX_PAYLOAD: u32 = 64 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("BadMagic: frame does not start with ECTL")]
    BadMagic,
    #[error("BadVersion: unsupported version {0}")]
    BadVersion(u8),
    #[error("Truncated: stream ended inside a frame")]
    Truncated,
    #[error("UnknownType: message type {0}")]
    UnknownType(u8),
    #[error("Malformed: {0}")]
    Malformed(String),
    #[error("NoGainEpoch: state received before any gain")]
    NoGainEpoch,
    #[error("EpochMismatch: expected epoch {expected}, got {got}")]
    EpochMismatch { expected: u64, got: u64 },
    #[error("UnexpectedMessage: {0}")]
    UnexpectedMessage(String),
    #[error("Disconnected: peer closed the connection")]
    Disconnected,
    #[error("Timeout: no message within {0:?}")]
    Timeout(Duration),
    #[error("Io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Crypto(#[from] PaillierError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    PubKey = 1,
    BlindedGain = 2,
    EncState = 3,
    EncInput = 4,
    SensitivityEpoch = 5,
    Shutdown = 6,
}

impl TryFrom<u8> for MessageType {
    type Error = ProtocolError;

    fn try_from(b: u8) -> Result<Self> {
        Ok(match b {
            1 => Self::PubKey,
            2 => Self::BlindedGain,
            3 => Self::EncState,
            4 => Self::EncInput,
            5 => Self::SensitivityEpoch,
            6 => Self::Shutdown,
            other => return Err(ProtocolError::UnknownType(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    PubKey { n: BigUint, g: BigUint },
    /// Row-major entries of `r·G`.
    BlindedGain { epoch: u64, rows: u32, cols: u32, entries: Vec<BigInt> },
    EncState { epoch: u64, cts: Vec<Ciphertext> },
    EncInput { epoch: u64, cts: Vec<Ciphertext> },
    SensitivityEpoch(u64),
    Shutdown,
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Message::PubKey { .. } => MessageType::PubKey,
            Message::BlindedGain { .. } => MessageType::BlindedGain,
            Message::EncState { .. } => MessageType::EncState,
            Message::EncInput { .. } => MessageType::EncInput,
            Message::SensitivityEpoch(_) => MessageType::SensitivityEpoch,
            Message::Shutdown => MessageType::Shutdown,
        }
    }
}

fn put_biguint(out: &mut Vec<u8>, v: &BigUint) {
    let bytes = minimal_be_bytes(v);
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(&bytes);
}

fn put_bigint(out: &mut Vec<u8>, v: &BigInt) {
    out.push(u8::from(v.sign() == Sign::Minus));
    put_biguint(out, v.magnitude());
}

fn put_cts(out: &mut Vec<u8>, epoch: u64, cts: &[Ciphertext]) {
    out.extend_from_slice(&epoch.to_be_bytes());
    out.extend_from_slice(&(cts.len() as u32).to_be_bytes());
    for c in cts {
        put_biguint(out, c.value());
    }
}

pub fn serialize(msg: &Message) -> Vec<u8> {
    let mut payload = Vec::new();
    match msg {
        Message::PubKey { n, g } => {
            put_biguint(&mut payload, n);
            put_biguint(&mut payload, g);
        }
        Message::BlindedGain { epoch, rows, cols, entries } => {
            payload.extend_from_slice(&epoch.to_be_bytes());
            payload.extend_from_slice(&rows.to_be_bytes());
            payload.extend_from_slice(&cols.to_be_bytes());
            for e in entries {
                put_bigint(&mut payload, e);
            }
        }
        Message::EncState { epoch, cts } | Message::EncInput { epoch, cts } => put_cts(&mut payload, *epoch, cts),
        Message::SensitivityEpoch(epoch) => payload.extend_from_slice(&epoch.to_be_bytes()),
        Message::Shutdown => {}
    }
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
    frame.extend_from_slice(&MAGIC);
    frame.push(VERSION);
    frame.push(msg.kind() as u8);
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    frame
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(ProtocolError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn biguint(&mut self) -> Result<BigUint> {
        let len = self.u32()? as usize;
        Ok(BigUint::from_bytes_be(self.take(len)?))
    }

    fn bigint(&mut self) -> Result<BigInt> {
        let sign = match self.u8()? {
            0 => Sign::Plus,
            1 => Sign::Minus,
            b => return Err(ProtocolError::Malformed(format!("sign byte {b}"))),
        };
        Ok(BigInt::from_biguint(sign, self.biguint()?))
    }

    fn cts(&mut self) -> Result<(u64, Vec<Ciphertext>)> {
        let epoch = self.u64()?;
        let count = self.u32()? as usize;
        // every ciphertext needs at least its length prefix
        if count > (self.buf.len() - self.pos) / 4 {
            return Err(ProtocolError::Truncated);
        }
        let cts = (0..count)
            .map(|_| self.biguint().map(Ciphertext::from_raw))
            .collect::<Result<_>>()?;
        Ok((epoch, cts))
    }
}

/// `(type, payload length)` from a 10-byte header.
pub fn parse_header(header: &[u8]) -> Result<(MessageType, u32)> {
    if header.len() < HEADER_LEN {
        return Err(ProtocolError::Truncated);
    }
    if header[..4] != MAGIC {
        return Err(ProtocolError::BadMagic);
    }
    if header[4] != VERSION {
        return Err(ProtocolError::BadVersion(header[4]));
    }
    let kind = MessageType::try_from(header[5])?;
    let len = u32::from_be_bytes(header[6..10].try_into().expect("4 bytes"));
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::Malformed(format!("payload of {len} bytes")));
    }
    Ok((kind, len))
}

pub fn parse_payload(kind: MessageType, payload: &[u8]) -> Result<Message> {
    let mut c = Cursor { buf: payload, pos: 0 };
    let msg = match kind {
        MessageType::PubKey => Message::PubKey {
            n: c.biguint()?,
            g: c.biguint()?,
        },
        MessageType::BlindedGain => {
            let epoch = c.u64()?;
            let rows = c.u32()?;
            let cols = c.u32()?;
            let count = rows as usize * cols as usize;
            // sign byte plus length prefix per entry
            if count > payload.len() / 5 {
                return Err(ProtocolError::Truncated);
            }
            let entries = (0..count).map(|_| c.bigint()).collect::<Result<_>>()?;
            Message::BlindedGain { epoch, rows, cols, entries }
        }
        MessageType::EncState => {
            let (epoch, cts) = c.cts()?;
            Message::EncState { epoch, cts }
        }
        MessageType::EncInput => {
            let (epoch, cts) = c.cts()?;
            Message::EncInput { epoch, cts }
        }
        MessageType::SensitivityEpoch => Message::SensitivityEpoch(c.u64()?),
        MessageType::Shutdown => Message::Shutdown,
    };
    if c.pos != payload.len() {
        return Err(ProtocolError::Malformed(format!("{} trailing bytes", payload.len() - c.pos)));
    }
    Ok(msg)
}

/// Parses one frame; returns the message and the bytes consumed.
pub fn parse(buf: &[u8]) -> Result<(Message, usize)> {
    let (kind, len) = parse_header(buf)?;
    let end = HEADER_LEN + len as usize;
    if buf.len() < end {
        return Err(ProtocolError::Truncated);
    }
    Ok((parse_payload(kind, &buf[HEADER_LEN..end])?, end))
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

/// Reads one frame; `Ok(None)` on a clean end of stream between frames.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>> {
    let mut header = [0u8; HEADER_LEN];
    match read_full(r, &mut header)? {
        0 => return Ok(None),
        HEADER_LEN => {}
        _ => return Err(ProtocolError::Truncated),
    }
    let (kind, len) = parse_header(&header)?;
    let mut payload = vec![0u8; len as usize];
    if read_full(r, &mut payload)? != payload.len() {
        return Err(ProtocolError::Truncated);
    }
    parse_payload(kind, &payload).map(Some)
}

pub trait Transport: Send {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()>;
    fn recv_frame(&mut self) -> Result<Vec<u8>>;

    fn send(&mut self, msg: &Message) -> Result<()> {
        self.send_frame(serialize(msg))
    }

    fn recv(&mut self) -> Result<Message> {
        let frame = self.recv_frame()?;
        let (msg, used) = parse(&frame)?;
        if used != frame.len() {
            return Err(ProtocolError::Malformed("extra bytes after frame".into()));
        }
        Ok(msg)
    }
}

/// In-process transport over a pair of channels.
pub struct ChannelTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    timeout: Option<Duration>,
}

impl ChannelTransport {
    pub fn pair() -> (Self, Self) {
        let (a_tx, b_rx) = mpsc::channel();
        let (b_tx, a_rx) = mpsc::channel();
        (
            Self { tx: a_tx, rx: a_rx, timeout: None },
            Self { tx: b_tx, rx: b_rx, timeout: None },
        )
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }
}

impl Transport for ChannelTransport {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        self.tx.send(frame).map_err(|_| ProtocolError::Disconnected)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        match self.timeout {
            None => self.rx.recv().map_err(|_| ProtocolError::Disconnected),
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => ProtocolError::Timeout(t),
                RecvTimeoutError::Disconnected => ProtocolError::Disconnected,
            }),
        }
    }
}

pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
        })
    }

    /// Read timeout; `None` blocks forever.
    pub fn set_timeout(&mut self, timeout: Option<Duration>) -> Result<()> {
        self.reader.get_ref().set_read_timeout(timeout)?;
        Ok(())
    }
}

impl Transport for TcpTransport {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        self.writer.write_all(&frame)?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        let mut header = [0u8; HEADER_LEN];
        let got = match read_full(&mut self.reader, &mut header) {
            Err(ProtocolError::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                let t = self.reader.get_ref().read_timeout().ok().flatten().unwrap_or_default();
                return Err(ProtocolError::Timeout(t));
            }
            other => other?,
        };
        match got {
            0 => return Err(ProtocolError::Disconnected),
            HEADER_LEN => {}
            _ => return Err(ProtocolError::Truncated),
        }
        let (_, len) = parse_header(&header)?;
        let mut frame = header.to_vec();
        frame.resize(HEADER_LEN + len as usize, 0);
        if read_full(&mut self.reader, &mut frame[HEADER_LEN..])? != len as usize {
            return Err(ProtocolError::Truncated);
        }
        Ok(frame)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        (**self).send_frame(frame)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        (**self).recv_frame()
    }
}

/// Frames seen by one endpoint, split by direction.
#[derive(Debug, Clone, Default)]
pub struct Traffic {
    pub sent: Vec<Vec<u8>>,
    pub received: Vec<Vec<u8>>,
}

pub type TrafficLog = Arc<Mutex<Traffic>>;

/// Copies every frame passing through `inner` into a shared log.
pub struct RecordingTransport<T> {
    inner: T,
    log: TrafficLog,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> (Self, TrafficLog) {
        let log = TrafficLog::default();
        (Self { inner, log: log.clone() }, log)
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<()> {
        self.log.lock().expect("log lock").sent.push(frame.clone());
        self.inner.send_frame(frame)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        let frame = self.inner.recv_frame()?;
        self.log.lock().expect("log lock").received.push(frame.clone());
        Ok(frame)
    }
}

/// Everything the controller ever holds.
#[derive(Debug, Clone, Default)]
pub struct Controller {
    pub public_key: Option<PublicKey>,
    /// Row-major `r·G`, reduced mod N.
    pub blinded_gain: Vec<BigUint>,
    pub rows: usize,
    pub cols: usize,
    pub epoch: Option<u64>,
}

impl Controller {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(&self) -> Result<&PublicKey> {
        self.public_key
            .as_ref()
            .ok_or_else(|| ProtocolError::UnexpectedMessage("message before PUBKEY".into()))
    }

    /// Applies one message; returns the reply, if any.
    pub fn handle(&mut self, msg: Message) -> Result<Option<Message>> {
        match msg {
            Message::PubKey { n, g } => {
                self.public_key = Some(PublicKey::from_parts(n, g)?);
                self.blinded_gain.clear();
                self.epoch = None;
                Ok(None)
            }
            Message::BlindedGain { epoch, rows, cols, entries } => {
                let pk = self.key()?;
                if entries.len() != rows as usize * cols as usize || entries.is_empty() {
                    return Err(ProtocolError::Malformed(format!("{rows}x{cols} gain with {} entries", entries.len())));
                }
                self.blinded_gain = entries.iter().map(|e| pk.reduce_signed(e)).collect();
                self.rows = rows as usize;
                self.cols = cols as usize;
                self.epoch = Some(epoch);
                Ok(None)
            }
            Message::SensitivityEpoch(epoch) => match self.epoch {
                None => Err(ProtocolError::NoGainEpoch),
                Some(e) if e != epoch => Err(ProtocolError::EpochMismatch { expected: e, got: epoch }),
                Some(_) => Ok(None),
            },
            Message::EncState { epoch, cts } => {
                let current = self.epoch.ok_or(ProtocolError::NoGainEpoch)?;
                if epoch != current {
                    return Err(ProtocolError::EpochMismatch { expected: current, got: epoch });
                }
                let pk = self.key()?;
                if cts.len() != self.cols {
                    return Err(PaillierError::LengthMismatch {
                        left: self.cols,
                        right: cts.len(),
                    }
                    .into());
                }
                let out = self
                    .blinded_gain
                    .chunks(self.cols)
                    .map(|row| pk.linear_combination(row, &cts))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Ok(Some(Message::EncInput { epoch, cts: out }))
            }
            Message::EncInput { .. } => Err(ProtocolError::UnexpectedMessage("ENC_INPUT sent to controller".into())),
            Message::Shutdown => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControllerStats {
    pub messages: u64,
    pub evaluations: u64,
}

/// Serves one plant until SHUTDOWN or disconnect.
pub fn run_controller<T: Transport>(transport: &mut T) -> Result<ControllerStats> {
    let mut controller = Controller::new();
    let mut stats = ControllerStats::default();
    loop {
        let msg = match transport.recv() {
            Ok(m) => m,
            Err(ProtocolError::Disconnected) => return Ok(stats),
            Err(e) => return Err(e),
        };
        stats.messages += 1;
        if msg == Message::Shutdown {
            log::debug!("controller: shutdown after {} messages", stats.messages);
            return Ok(stats);
        }
        if let Some(reply) = controller.handle(msg)? {
            stats.evaluations += 1;
            transport.send(&reply)?;
        }
    }
}

/// Plant side of the link: owns the secret key, `r`, and the plaintext gain.
pub struct PlantEndpoint<T: Transport> {
    secret: PrivateKey,
    r_max: BigUint,
    blinding: Option<BlindingKey>,
    used_r: Vec<BigUint>,
    gain: DMatrix<i64>,
    transport: T,
    rng: Box<dyn RngCore + Send>,
    epoch: u64,
    crypto_time: Duration,
}

impl<T: Transport> PlantEndpoint<T> {
    /// A fresh `r` in `[1, r_max)` is drawn for every gain epoch.
    pub fn new(secret: PrivateKey, r_max: BigUint, transport: T, rng: Box<dyn RngCore + Send>) -> Self {
        Self {
            secret,
            r_max,
            blinding: None,
            used_r: Vec::new(),
            gain: DMatrix::zeros(0, 0),
            transport,
            rng,
            epoch: 0,
            crypto_time: Duration::ZERO,
        }
    }

    pub fn public_key(&self) -> &PublicKey {
        self.secret.public()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Every blinding factor drawn so far, in order.
    pub fn used_blinding_factors(&self) -> &[BigUint] {
        &self.used_r
    }

    /// Cumulative time spent encrypting, waiting and decrypting.
    pub fn crypto_time(&self) -> Duration {
        self.crypto_time
    }

    fn emit_gain(&mut self) -> Result<()> {
        let blinding = BlindingKey::sample(&self.r_max, &mut *self.rng)?;
        self.used_r.push(blinding.r().clone());
        let gain = &self.gain;
        if gain.iter().any(|g| g.abs() == 1) {
            log::warn!("gain level of magnitude 1: its blinded entry equals ±r");
        }
        // row-major
        let entries = (0..gain.nrows())
            .flat_map(|i| (0..gain.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| blinding.blind(&BigInt::from(gain[(i, j)])))
            .collect();
        let msg = Message::BlindedGain {
            epoch: self.epoch,
            rows: gain.nrows() as u32,
            cols: gain.ncols() as u32,
            entries,
        };
        self.blinding = Some(blinding);
        self.transport.send(&msg)
    }

    /// Sends PUBKEY and the epoch-0 gain.
    pub fn handshake(&mut self, gain: &DMatrix<i64>) -> Result<()> {
        let pk = self.secret.public();
        self.transport.send(&Message::PubKey {
            n: pk.n().clone(),
            g: pk.g().clone(),
        })?;
        self.epoch = 0;
        self.gain = gain.clone();
        self.emit_gain()
    }

    /// Replaces the controller's gain under a fresh epoch and a fresh `r`.
    pub fn update_gain(&mut self, gain: &DMatrix<i64>) -> Result<()> {
        self.epoch += 1;
        self.gain = gain.clone();
        self.emit_gain()?;
        self.transport.send(&Message::SensitivityEpoch(self.epoch))
    }

    /// Re-sends the current gain under a fresh `r`.
    pub fn reblind(&mut self) -> Result<()> {
        let gain = self.gain.clone();
        self.update_gain(&gain)
    }

    /// Encrypts `x_q`, has the controller apply the gain, returns `G x_q`.
    pub fn round_trip(&mut self, x_q: &[i64]) -> Result<Vec<i128>> {
        let start = Instant::now();
        let blinding = self.blinding.clone().ok_or(ProtocolError::NoGainEpoch)?;
        let n = self.secret.public().n().clone();
        let cts = x_q
            .iter()
            .map(|&l| {
                let m = encode_level(&n, l)?;
                Ok(self.secret.public().encrypt(&m, &mut *self.rng)?)
            })
            .collect::<Result<Vec<_>>>()?;
        self.transport.send(&Message::EncState { epoch: self.epoch, cts })?;
        let reply = self.transport.recv()?;
        let cts = match reply {
            Message::EncInput { epoch, cts } if epoch == self.epoch => cts,
            Message::EncInput { epoch, .. } => {
                return Err(ProtocolError::EpochMismatch {
                    expected: self.epoch,
                    got: epoch,
                })
            }
            other => return Err(ProtocolError::UnexpectedMessage(format!("{:?} instead of ENC_INPUT", other.kind()))),
        };
        if cts.len() != self.gain.nrows() {
            return Err(PaillierError::LengthMismatch {
                left: self.gain.nrows(),
                right: cts.len(),
            }
            .into());
        }
        let mut out = Vec::with_capacity(cts.len());
        for c in &cts {
            let blinded = decode_signed(&n, &self.secret.decrypt(c)?)?;
            let v = blinding.unblind(&blinded)?;
            let v = i128::try_from(v).map_err(|_| ProtocolError::Malformed("input level beyond i128".into()))?;
            out.push(v);
        }
        self.crypto_time += start.elapsed();
        Ok(out)
    }

    pub fn shutdown(mut self) -> Result<()> {
        self.transport.send(&Message::Shutdown)
    }
}
