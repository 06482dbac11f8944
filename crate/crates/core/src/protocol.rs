//! Application byte streams seen by the DPI: a shape-faithful Tor TLS
//! handshake, plain HTTP requests, and a keyed obfuscating transport.
//!
//! Wire records use a TLS-like framing: `type, 0x03, 0x01, len_hi, len_lo`
//! followed by `len` body bytes. No cryptography is performed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// The 58-byte cipher-suite list sent by Tor clients, the sole fingerprint
/// the DPI keys on.
pub const TOR_CIPHER_LIST: [u8; 58] = [
    0xc0, 0x0a, 0xc0, 0x14, 0x00, 0x39, 0x00, 0x38, 0xc0, 0x0f, 0xc0, 0x05, 0x00, 0x35, 0xc0, 0x07, //
    0xc0, 0x09, 0xc0, 0x11, 0xc0, 0x13, 0x00, 0x33, 0x00, 0x32, 0xc0, 0x0c, 0xc0, 0x0e, 0xc0, 0x02, //
    0xc0, 0x04, 0x00, 0x04, 0x00, 0x05, 0x00, 0x2f, 0xc0, 0x08, 0xc0, 0x12, 0x00, 0x16, 0x00, 0x13, //
    0xc0, 0x0d, 0xc0, 0x03, 0xfe, 0xff, 0x00, 0x0a, 0x00, 0xff,
];

/// Record header (handshake, TLS 1.0, length 66), handshake header
/// (client hello, length 62) and the cipher-suite vector length (58).
/// The random and session id of a real hello are omitted.
pub const CLIENT_HELLO_PREAMBLE: [u8; 11] = [0x16, 0x03, 0x01, 0x00, 0x42, 0x01, 0x00, 0x00, 0x3e, 0x00, 0x3a];

/// One compression method: null.
pub const CLIENT_HELLO_TRAILER: [u8; 2] = [0x01, 0x00];

pub const CLIENT_HELLO_LEN: usize = 71;

/// Offset of the cipher list inside the plain client hello.
pub const CIPHER_LIST_OFFSET: usize = CLIENT_HELLO_PREAMBLE.len();

/// A browser-style list that shares no 58-byte run with Tor's; used for
/// opaque HTTPS traffic.
const BROWSER_CIPHER_LIST: [u8; 16] = [
    0x13, 0x01, 0x13, 0x02, 0x13, 0x03, 0xc0, 0x2b, 0xc0, 0x2f, 0xc0, 0x2c, 0xc0, 0x30, 0x00, 0x9c,
];

const RECORD_HANDSHAKE: u8 = 0x16;
const RECORD_APPLICATION: u8 = 0x17;
const HS_CLIENT_HELLO: u8 = 0x01;
const HS_SERVER_HELLO: u8 = 0x02;
const OP_RENEGOTIATE: u8 = 0x01;
const OP_RENEGOTIATE_OK: u8 = 0x02;
const OP_CREATE: u8 = 0x03;
const OP_CREATED: u8 = 0x04;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transport {
    PlainTor,
    Obfuscated(Vec<u8>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    PlainTor,
    Obfuscated,
    Http,
    SpaGuarded,
}

pub fn build_client_hello(transport: &Transport) -> Vec<u8> {
    let mut hello = Vec::with_capacity(CLIENT_HELLO_LEN);
    hello.extend_from_slice(&CLIENT_HELLO_PREAMBLE);
    hello.extend_from_slice(&TOR_CIPHER_LIST);
    hello.extend_from_slice(&CLIENT_HELLO_TRAILER);
    match transport {
        Transport::PlainTor => hello,
        Transport::Obfuscated(key) => obfuscate(&hello, key),
    }
}

/// A client hello a browser might send: same framing, non-Tor ciphers.
pub fn build_browser_hello() -> Vec<u8> {
    let body_len = 4 + 2 + BROWSER_CIPHER_LIST.len() + 2;
    let mut out = vec![RECORD_HANDSHAKE, 0x03, 0x01, 0x00, body_len as u8];
    out.extend_from_slice(&[HS_CLIENT_HELLO, 0x00, 0x00, (body_len - 4) as u8]);
    out.extend_from_slice(&[0x00, BROWSER_CIPHER_LIST.len() as u8]);
    out.extend_from_slice(&BROWSER_CIPHER_LIST);
    out.extend_from_slice(&CLIENT_HELLO_TRAILER);
    out
}

fn record(kind: u8, body: &[u8]) -> Vec<u8> {
    let mut out = vec![kind, 0x03, 0x01, (body.len() >> 8) as u8, body.len() as u8];
    out.extend_from_slice(body);
    out
}

fn server_hello() -> Vec<u8> {
    record(RECORD_HANDSHAKE, &[HS_SERVER_HELLO, 0x00, 0x00, 0x02, 0xc0, 0x14])
}

fn app_message(op: u8) -> Vec<u8> {
    record(RECORD_APPLICATION, &[op])
}

/// Keyed, length-preserving stream transform standing in for an obfuscating
/// pluggable transport. Keystream offsets persist across calls, so a
/// connection can feed its byte stream through in arbitrary pieces.
#[derive(Clone)]
pub struct Obfuscator {
    keystream: ChaCha20Rng,
}

impl std::fmt::Debug for Obfuscator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Obfuscator")
    }
}

impl Obfuscator {
    /// `lane` separates the two directions of a connection.
    pub fn new(key: &[u8], lane: u64) -> Obfuscator {
        assert!(!key.is_empty(), "obfuscation key must be non-empty");
        let seed: [u8; 32] = Sha256::digest(key).into();
        let mut keystream = ChaCha20Rng::from_seed(seed);
        keystream.set_stream(lane);
        Obfuscator { keystream }
    }

    pub fn apply(&mut self, bytes: &[u8]) -> Vec<u8> {
        let mut pad = vec![0u8; bytes.len()];
        self.keystream.fill_bytes(&mut pad);
        bytes.iter().zip(pad).map(|(b, k)| b ^ k).collect()
    }
}

pub fn obfuscate(payload: &[u8], key: &[u8]) -> Vec<u8> {
    Obfuscator::new(key, 0).apply(payload)
}

pub fn deobfuscate(payload: &[u8], key: &[u8]) -> Vec<u8> {
    // XOR keystream: the transform is its own inverse
    obfuscate(payload, key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Closed,
    TcpSynSent,
    TcpEstablished,
    HelloSent,
    HelloReceived,
    Renegotiating,
    CircuitBuilding,
    TorEstablished,
    Failed,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Closed => "closed",
            Phase::TcpSynSent => "tcp-syn-sent",
            Phase::TcpEstablished => "tcp-established",
            Phase::HelloSent => "hello-sent",
            Phase::HelloReceived => "hello-received",
            Phase::Renegotiating => "renegotiating",
            Phase::CircuitBuilding => "circuit-building",
            Phase::TorEstablished => "tor-established",
            Phase::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeRole {
    Client,
    ScannerClient,
    Bridge,
}

impl HandshakeRole {
    fn is_client(self) -> bool {
        matches!(self, HandshakeRole::Client | HandshakeRole::ScannerClient)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeState {
    pub phase: Phase,
    pub bytes_sent: u64,
    pub transport: TransportKind,
    history: Vec<Phase>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("illegal handshake transition {from:?} -> {to:?}")]
pub struct TransitionError {
    pub from: Phase,
    pub to: Phase,
}

impl HandshakeState {
    pub fn new(transport: TransportKind) -> HandshakeState {
        HandshakeState {
            phase: Phase::Closed,
            bytes_sent: 0,
            transport,
            history: vec![Phase::Closed],
        }
    }

    /// Every phase visited, in order.
    pub fn history(&self) -> &[Phase] {
        &self.history
    }

    /// Moves to `to`. Clients advance one phase at a time; bridges never
    /// pass through the client-only phases. Any phase may fail.
    pub fn advance(&mut self, to: Phase, role: HandshakeRole) -> Result<(), TransitionError> {
        let ok = match (self.phase, to) {
            (Phase::Failed | Phase::TorEstablished, _) => false,
            (_, Phase::Failed) => true,
            (from, to) if role.is_client() => to as u8 == from as u8 + 1,
            (Phase::Closed, Phase::TcpEstablished)
            | (Phase::TcpEstablished, Phase::HelloReceived)
            | (Phase::HelloReceived, Phase::Renegotiating)
            | (Phase::Renegotiating, Phase::CircuitBuilding)
            | (Phase::CircuitBuilding, Phase::TorEstablished) => true,
            _ => false,
        };
        if !ok {
            return Err(TransitionError { from: self.phase, to });
        }
        self.phase = to;
        self.history.push(to);
        Ok(())
    }

    fn fail(&mut self) {
        if !matches!(self.phase, Phase::Failed | Phase::TorEstablished) {
            self.phase = Phase::Failed;
            self.history.push(Phase::Failed);
        }
    }
}

/// Checks a visited-phase sequence: tor-established is only reachable
/// through renegotiating and then circuit-building.
pub fn phase_sequence_is_valid(history: &[Phase]) -> bool {
    match history.iter().position(|p| *p == Phase::TorEstablished) {
        None => true,
        Some(end) => {
            let reneg = history[..end].iter().position(|p| *p == Phase::Renegotiating);
            let circuit = history[..end].iter().position(|p| *p == Phase::CircuitBuilding);
            matches!((reneg, circuit), (Some(r), Some(c)) if r < c)
        }
    }
}

/// Outcome of one handshake step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Drive {
    /// Bytes to write (possibly empty) after a phase change.
    Advance(Vec<u8>),
    /// Nothing to do until more input arrives.
    Wait,
}

/// Advances the handshake by one step. `incoming` is one complete record
/// from the peer, or `None` when the step is driven by our own progress.
/// Malformed or unexpected input fails the handshake.
pub fn drive_handshake(state: &mut HandshakeState, role: HandshakeRole, incoming: Option<&[u8]>) -> Drive {
    let step = if role.is_client() {
        client_step(state.phase, incoming)
    } else {
        bridge_step(state.phase, incoming)
    };
    match step {
        Step::Wait => Drive::Wait,
        Step::Fail => {
            state.fail();
            Drive::Advance(Vec::new())
        }
        Step::Go(to, bytes) => {
            if state.advance(to, role).is_err() {
                state.fail();
                return Drive::Advance(Vec::new());
            }
            state.bytes_sent += bytes.len() as u64;
            Drive::Advance(bytes)
        }
    }
}

enum Step {
    Go(Phase, Vec<u8>),
    Wait,
    Fail,
}

fn client_step(phase: Phase, incoming: Option<&[u8]>) -> Step {
    match (phase, incoming) {
        (Phase::TcpEstablished, None) => Step::Go(Phase::HelloSent, build_client_hello(&Transport::PlainTor)),
        (Phase::HelloSent, Some(rec)) if is_server_hello(rec) => Step::Go(Phase::HelloReceived, Vec::new()),
        (Phase::HelloReceived, None) => Step::Go(Phase::Renegotiating, app_message(OP_RENEGOTIATE)),
        (Phase::Renegotiating, Some(rec)) if is_app(rec, OP_RENEGOTIATE_OK) => {
            Step::Go(Phase::CircuitBuilding, app_message(OP_CREATE))
        }
        (Phase::CircuitBuilding, Some(rec)) if is_app(rec, OP_CREATED) => Step::Go(Phase::TorEstablished, Vec::new()),
        (_, None) => Step::Wait,
        (_, Some(_)) => Step::Fail,
    }
}

fn bridge_step(phase: Phase, incoming: Option<&[u8]>) -> Step {
    match (phase, incoming) {
        (Phase::TcpEstablished, Some(rec)) if is_client_hello(rec) => Step::Go(Phase::HelloReceived, server_hello()),
        (Phase::HelloReceived, Some(rec)) if is_app(rec, OP_RENEGOTIATE) => {
            Step::Go(Phase::Renegotiating, app_message(OP_RENEGOTIATE_OK))
        }
        (Phase::Renegotiating, Some(rec)) if is_app(rec, OP_CREATE) => {
            Step::Go(Phase::CircuitBuilding, app_message(OP_CREATED))
        }
        (Phase::CircuitBuilding, None) => Step::Go(Phase::TorEstablished, Vec::new()),
        (_, None) => Step::Wait,
        (_, Some(_)) => Step::Fail,
    }
}

fn is_client_hello(rec: &[u8]) -> bool {
    rec.len() > 5 && rec[0] == RECORD_HANDSHAKE && rec[5] == HS_CLIENT_HELLO
}

fn is_server_hello(rec: &[u8]) -> bool {
    rec.len() > 5 && rec[0] == RECORD_HANDSHAKE && rec[5] == HS_SERVER_HELLO
}

fn is_app(rec: &[u8], op: u8) -> bool {
    rec.len() == 6 && rec[0] == RECORD_APPLICATION && rec[5] == op
}

/// Result of feeding a record-framed stream.
#[derive(Debug, PartialEq, Eq)]
enum Framing {
    Record(Vec<u8>),
    Incomplete,
    Malformed,
}

fn take_record(buf: &mut Vec<u8>) -> Framing {
    if buf.is_empty() {
        return Framing::Incomplete;
    }
    if !matches!(buf[0], RECORD_HANDSHAKE | RECORD_APPLICATION) || (buf.len() >= 3 && buf[1..3] != [0x03, 0x01]) {
        return Framing::Malformed;
    }
    if buf.len() < 5 {
        return Framing::Incomplete;
    }
    let len = 5 + (((buf[3] as usize) << 8) | buf[4] as usize);
    if buf.len() < len {
        return Framing::Incomplete;
    }
    Framing::Record(buf.drain(..len).collect())
}

/// One endpoint of a Tor-speaking connection: framing, optional
/// obfuscation, and the handshake state machine.
#[derive(Debug, Clone)]
pub struct TorSession {
    pub state: HandshakeState,
    role: HandshakeRole,
    rx: Vec<u8>,
    obfs: Option<(Obfuscator, Obfuscator)>,
}

impl TorSession {
    pub fn new(role: HandshakeRole, transport: &Transport) -> TorSession {
        let (kind, obfs) = match transport {
            Transport::PlainTor => (TransportKind::PlainTor, None),
            Transport::Obfuscated(key) => {
                // lane 0 carries client-to-bridge bytes
                let (tx, rx) = if role.is_client() { (0, 1) } else { (1, 0) };
                (
                    TransportKind::Obfuscated,
                    Some((Obfuscator::new(key, tx), Obfuscator::new(key, rx))),
                )
            }
        };
        TorSession {
            state: HandshakeState::new(kind),
            role,
            rx: Vec::new(),
            obfs,
        }
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    /// Client side: TCP SYN sent.
    pub fn on_syn_sent(&mut self) {
        let _ = self.state.advance(Phase::TcpSynSent, self.role);
    }

    /// TCP is up. Returns bytes to send (the client hello for clients).
    pub fn on_tcp_established(&mut self) -> Vec<u8> {
        if self.state.advance(Phase::TcpEstablished, self.role).is_err() {
            self.state.fail();
            return Vec::new();
        }
        self.pump(None)
    }

    pub fn on_bytes(&mut self, bytes: &[u8]) -> Vec<u8> {
        if matches!(self.phase(), Phase::Failed | Phase::TorEstablished) {
            return Vec::new();
        }
        let plain = match &mut self.obfs {
            Some((_, rx)) => rx.apply(bytes),
            None => bytes.to_vec(),
        };
        self.rx.extend_from_slice(&plain);
        let mut out = Vec::new();
        loop {
            match take_record(&mut self.rx) {
                Framing::Record(rec) => {
                    out.extend(self.pump(Some(&rec)));
                    if self.phase() == Phase::Failed {
                        break;
                    }
                }
                Framing::Incomplete => break,
                Framing::Malformed => {
                    self.state.fail();
                    break;
                }
            }
        }
        out
    }

    fn pump(&mut self, mut incoming: Option<&[u8]>) -> Vec<u8> {
        let mut out = Vec::new();
        while let Drive::Advance(bytes) = drive_handshake(&mut self.state, self.role, incoming.take()) {
            out.extend(bytes);
            if matches!(self.phase(), Phase::Failed | Phase::TorEstablished) {
                break;
            }
        }
        match &mut self.obfs {
            Some((tx, _)) if !out.is_empty() => tx.apply(&out),
            _ => out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method_line: Vec<u8>,
    pub headers: Vec<(Vec<u8>, Vec<u8>)>,
}

impl HttpRequest {
    pub fn get(path: &str, host: &str) -> HttpRequest {
        HttpRequest {
            method_line: format!("GET {path} HTTP/1.1").into_bytes(),
            headers: vec![(b"Host".to_vec(), host.as_bytes().to_vec())],
        }
    }

    pub fn header(mut self, name: &[u8], value: &[u8]) -> HttpRequest {
        self.headers.push((name.to_vec(), value.to_vec()));
        self
    }
}

/// `<method-line>\r\n` then `<name>: <value>\r\n` per header.
pub fn serialize_http(req: &HttpRequest) -> Vec<u8> {
    let mut out = req.method_line.clone();
    out.extend_from_slice(b"\r\n");
    for (name, value) in &req.headers {
        out.extend_from_slice(name);
        out.extend_from_slice(b": ");
        out.extend_from_slice(value);
        out.extend_from_slice(b"\r\n");
    }
    out
}

/// A GET to baidu.com carrying the plain client hello as its User-Agent.
pub fn http_embedded_hello() -> Vec<u8> {
    let req = HttpRequest::get("/", "baidu.com").header(b"User-Agent", &build_client_hello(&Transport::PlainTor));
    serialize_http(&req)
}

/// [`http_embedded_hello`] with its first six bytes zeroed.
pub fn zeroed_http_embedded_hello() -> Vec<u8> {
    let mut bytes = http_embedded_hello();
    bytes[..6].fill(0);
    bytes
}

pub fn http_ok_response() -> Vec<u8> {
    b"HTTP/1.1 200 OK\r\nContent-Length: 0\r\n\r\n".to_vec()
}

pub fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    count_occurrences(haystack, needle) > 0
}

pub fn count_occurrences(haystack: &[u8], needle: &[u8]) -> usize {
    if needle.is_empty() || haystack.len() < needle.len() {
        return 0;
    }
    haystack.windows(needle.len()).filter(|w| *w == needle).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cipher_list_matches_known_bytes() {
        assert_eq!(TOR_CIPHER_LIST.len(), 58);
        assert_eq!(&TOR_CIPHER_LIST[..6], &[0xc0, 0x0a, 0xc0, 0x14, 0x00, 0x39]);
        assert_eq!(&TOR_CIPHER_LIST[52..], &[0xfe, 0xff, 0x00, 0x0a, 0x00, 0xff]);
    }

    #[test]
    fn plain_hello_layout() {
        let hello = build_client_hello(&Transport::PlainTor);
        assert_eq!(hello.len(), CLIENT_HELLO_LEN);
        assert_eq!(&hello[11..69], &TOR_CIPHER_LIST);
        assert_eq!(count_occurrences(&hello, &TOR_CIPHER_LIST), 1);
        // record length field covers everything after the 5-byte header
        assert_eq!(hello[4] as usize, CLIENT_HELLO_LEN - 5);
        assert_eq!(hello, build_client_hello(&Transport::PlainTor));
    }

    #[test]
    fn obfuscated_hello_hides_fingerprint() {
        let hello = build_client_hello(&Transport::Obfuscated(b"k".to_vec()));
        assert_eq!(hello.len(), CLIENT_HELLO_LEN);
        assert!(!contains(&hello, &TOR_CIPHER_LIST));
    }

    #[test]
    fn obfuscation_depends_on_key() {
        let p = b"some payload bytes".to_vec();
        assert_ne!(obfuscate(&p, b"k1"), obfuscate(&p, b"k2"));
        assert_eq!(deobfuscate(&obfuscate(&p, b"k1"), b"k1"), p);
    }

    #[test]
    fn browser_hello_is_not_tor() {
        let hello = build_browser_hello();
        assert!(!contains(&hello, &TOR_CIPHER_LIST));
        assert_eq!(hello[4] as usize, hello.len() - 5);
    }

    fn run_pair(client_t: &Transport, bridge_t: &Transport) -> (TorSession, TorSession) {
        let mut c = TorSession::new(HandshakeRole::Client, client_t);
        let mut b = TorSession::new(HandshakeRole::Bridge, bridge_t);
        c.on_syn_sent();
        let mut to_bridge = c.on_tcp_established();
        b.on_tcp_established();
        for _ in 0..10 {
            let to_client = b.on_bytes(&to_bridge);
            to_bridge = c.on_bytes(&to_client);
        }
        (c, b)
    }

    #[test]
    fn client_and_bridge_reach_tor_established() {
        let (c, b) = run_pair(&Transport::PlainTor, &Transport::PlainTor);
        assert_eq!(c.phase(), Phase::TorEstablished);
        assert_eq!(b.phase(), Phase::TorEstablished);
        assert_eq!(
            c.state.history(),
            &[
                Phase::Closed,
                Phase::TcpSynSent,
                Phase::TcpEstablished,
                Phase::HelloSent,
                Phase::HelloReceived,
                Phase::Renegotiating,
                Phase::CircuitBuilding,
                Phase::TorEstablished
            ]
        );
        assert!(phase_sequence_is_valid(c.state.history()));
        assert!(phase_sequence_is_valid(b.state.history()));
    }

    #[test]
    fn obfuscated_pair_connects_and_plain_client_fails_against_it() {
        let key = Transport::Obfuscated(b"bridge-secret".to_vec());
        let (c, _) = run_pair(&key, &key);
        assert_eq!(c.phase(), Phase::TorEstablished);
        let (_, b) = run_pair(&Transport::PlainTor, &key);
        assert_ne!(b.phase(), Phase::TorEstablished);
    }

    #[test]
    fn echo_server_fails_client() {
        let mut c = TorSession::new(HandshakeRole::ScannerClient, &Transport::PlainTor);
        c.on_syn_sent();
        let hello = c.on_tcp_established();
        c.on_bytes(&hello);
        assert_eq!(c.phase(), Phase::Failed);
    }

    #[test]
    fn http_reply_fails_client() {
        let mut c = TorSession::new(HandshakeRole::Client, &Transport::PlainTor);
        c.on_syn_sent();
        c.on_tcp_established();
        c.on_bytes(&http_ok_response());
        assert_eq!(c.phase(), Phase::Failed);
    }

    #[test]
    fn client_cannot_skip_renegotiation() {
        let mut s = HandshakeState::new(TransportKind::PlainTor);
        for p in [
            Phase::TcpSynSent,
            Phase::TcpEstablished,
            Phase::HelloSent,
            Phase::HelloReceived,
        ] {
            s.advance(p, HandshakeRole::Client).unwrap();
        }
        assert!(s.advance(Phase::CircuitBuilding, HandshakeRole::Client).is_err());
        assert!(s.advance(Phase::TorEstablished, HandshakeRole::Client).is_err());
        s.advance(Phase::Failed, HandshakeRole::Client).unwrap();
    }

    #[test]
    fn sequence_validator() {
        assert!(!phase_sequence_is_valid(&[Phase::Closed, Phase::TorEstablished]));
        assert!(!phase_sequence_is_valid(&[
            Phase::CircuitBuilding,
            Phase::Renegotiating,
            Phase::TorEstablished
        ]));
        assert!(phase_sequence_is_valid(&[Phase::Closed, Phase::Failed]));
    }

    #[test]
    fn http_serialization_shape() {
        let empty = HttpRequest {
            method_line: b"GET / HTTP/1.1".to_vec(),
            headers: vec![],
        };
        assert_eq!(serialize_http(&empty), b"GET / HTTP/1.1\r\n");
        let req = HttpRequest::get("/", "baidu.com");
        assert_eq!(serialize_http(&req), b"GET / HTTP/1.1\r\nHost: baidu.com\r\n");
    }

    #[test]
    fn listing_style_request_embeds_hello() {
        let bytes = http_embedded_hello();
        assert!(bytes.starts_with(b"GET "));
        assert!(contains(&bytes, &TOR_CIPHER_LIST));
        let zeroed = zeroed_http_embedded_hello();
        assert!(!zeroed.starts_with(b"GET "));
        assert_eq!(&zeroed[..6], &[0u8; 6]);
        assert!(contains(&zeroed, &TOR_CIPHER_LIST));
    }
}
