//! Countermeasures as composable endpoint policies: client-side stream
//! fragmentation, the bridge guard (SYN-index filter, deaf window, SYN/ACK
//! window rewriting), and single-packet authorization.

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddrV4};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::simnet::{Flags, Proto, Segment, SimTime, QUEUE_PERIOD_S};

/// Splits `payload` into chunks of `mss` bytes; only the last may be shorter.
pub fn fragment_stream(payload: &[u8], mss: usize) -> Vec<Vec<u8>> {
    assert!(mss >= 1, "mss must be at least 1");
    payload.chunks(mss).map(<[u8]>::to_vec).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FragmentPolicy {
    pub mss_override: u16,
}

impl Default for FragmentPolicy {
    fn default() -> Self {
        FragmentPolicy { mss_override: 16 }
    }
}

pub const SYN_COUNTER_IDLE_S: u64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct GuardPolicy {
    /// Only the n-th SYN from a client tuple is accepted; 1 disables the filter.
    pub syn_accept_index: u32,
    /// Seconds after each queue multiple during which SYNs are dropped.
    pub deaf_window_s: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synack_window_override: Option<u16>,
}

impl Default for GuardPolicy {
    fn default() -> Self {
        GuardPolicy {
            syn_accept_index: 3,
            deaf_window_s: 0,
            synack_window_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynDecision {
    Accept,
    SilentDrop,
}

#[derive(Debug, Clone, Copy)]
struct SynCounter {
    count: u32,
    last_syn: SimTime,
}

/// Per-bridge guard state: SYN counters keyed by client tuple.
#[derive(Debug, Clone, Default)]
pub struct GuardState {
    counters: HashMap<SocketAddrV4, SynCounter>,
}

impl GuardState {
    pub fn new() -> GuardState {
        GuardState::default()
    }

    pub fn on_established(&mut self, client: SocketAddrV4) {
        self.counters.remove(&client);
    }

    pub fn tracked(&self) -> usize {
        self.counters.len()
    }
}

pub fn in_deaf_window(policy: &GuardPolicy, now: SimTime) -> bool {
    policy.deaf_window_s > 0 && now.secs() % QUEUE_PERIOD_S < policy.deaf_window_s
}

/// Decides whether an inbound SYN reaches the bridge's TCP stack. Every SYN
/// counts, including ones dropped by the deaf window.
pub fn guard_filter_syn(state: &mut GuardState, seg: &Segment, policy: &GuardPolicy, now: SimTime) -> SynDecision {
    debug_assert!(seg.flags.contains(Flags::SYN));
    let counter = state.counters.entry(seg.src).or_insert(SynCounter {
        count: 0,
        last_syn: now,
    });
    if now.saturating_sub(counter.last_syn) >= SYN_COUNTER_IDLE_S {
        counter.count = 0;
    }
    counter.count += 1;
    counter.last_syn = now;
    if counter.count == policy.syn_accept_index.max(1) && !in_deaf_window(policy, now) {
        SynDecision::Accept
    } else {
        SynDecision::SilentDrop
    }
}

/// Returns `seg` with its window replaced by the override. Only SYN/ACKs
/// are touched.
pub fn rewrite_synack_window(seg: &Segment, policy: &GuardPolicy) -> Segment {
    let mut out = seg.clone();
    if let Some(window) = policy.synack_window_override {
        if seg.flags.is_syn_ack() {
            out.window = window;
        }
    }
    out
}

/// Keeps announcing the small window on every ACK-bearing segment of the
/// connection, so retransmitted hellos are split as well.
pub fn rewrite_window(seg: &Segment, policy: &GuardPolicy) -> Segment {
    let mut out = seg.clone();
    if let Some(window) = policy.synack_window_override {
        if seg.flags.contains(Flags::ACK) {
            out.window = window;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SpaPolicy {
    pub shared_secret: String,
    #[serde(default = "default_auth_validity")]
    pub auth_validity_s: u64,
    #[serde(default = "default_spa_port")]
    pub port: u16,
}

fn default_auth_validity() -> u64 {
    60
}

fn default_spa_port() -> u16 {
    62201
}

const SPA_MAGIC: &[u8; 4] = b"SPA1";
const SPA_TOKEN_LEN: usize = 4 + 8 + 16;

fn spa_mac(secret: &[u8], source: Ipv4Addr, issued: u64) -> [u8; 16] {
    let mut h = Sha256::new();
    h.update(secret);
    h.update(source.octets());
    h.update(issued.to_be_bytes());
    let digest = h.finalize();
    let mut mac = [0u8; 16];
    mac.copy_from_slice(&digest[..16]);
    mac
}

/// Token binding the sender address and issue time to the shared secret.
pub fn spa_token(secret: &[u8], source: Ipv4Addr, issued: SimTime) -> Vec<u8> {
    let mut out = Vec::with_capacity(SPA_TOKEN_LEN);
    out.extend_from_slice(SPA_MAGIC);
    out.extend_from_slice(&issued.secs().to_be_bytes());
    out.extend_from_slice(&spa_mac(secret, source, issued.secs()));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaDecision {
    Open { source: Ipv4Addr, until: SimTime },
    Pass,
    SilentDrop,
}

/// Bridge-side authorization gate.
#[derive(Debug, Clone, Default)]
pub struct SpaGate {
    open: HashMap<Ipv4Addr, SimTime>,
}

impl SpaGate {
    pub fn new() -> SpaGate {
        SpaGate::default()
    }

    pub fn is_open(&self, source: Ipv4Addr, now: SimTime) -> bool {
        self.open.get(&source).is_some_and(|until| now <= *until)
    }
}

/// An auth datagram opens the bridge for its sender; anything else passes
/// only while the sender is open. Replays are accepted only while the token
/// itself is still fresh.
pub fn spa_gate(gate: &mut SpaGate, seg: &Segment, policy: &SpaPolicy, now: SimTime) -> SpaDecision {
    let source = *seg.src.ip();
    if seg.proto == Proto::Datagram {
        if seg.dst.port() != policy.port {
            return SpaDecision::SilentDrop;
        }
        return match verify_token(&seg.payload, policy, source, now) {
            Some(until) => {
                gate.open.insert(source, until);
                SpaDecision::Open { source, until }
            }
            None => SpaDecision::SilentDrop,
        };
    }
    if gate.is_open(source, now) {
        SpaDecision::Pass
    } else {
        SpaDecision::SilentDrop
    }
}

fn verify_token(payload: &[u8], policy: &SpaPolicy, source: Ipv4Addr, now: SimTime) -> Option<SimTime> {
    if payload.len() != SPA_TOKEN_LEN || &payload[..4] != SPA_MAGIC {
        return None;
    }
    let issued = u64::from_be_bytes(payload[4..12].try_into().ok()?);
    if issued > now.secs() || now.secs() - issued > policy.auth_validity_s {
        return None;
    }
    if payload[12..] != spa_mac(policy.shared_secret.as_bytes(), source, issued) {
        return None;
    }
    Some(SimTime(issued + policy.auth_validity_s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{build_client_hello, Transport, CIPHER_LIST_OFFSET, TOR_CIPHER_LIST};

    fn tuple(port: u16) -> SocketAddrV4 {
        SocketAddrV4::new(Ipv4Addr::new(10, 1, 1, 1), port)
    }

    fn syn(port: u16) -> Segment {
        Segment::tcp(
            tuple(port),
            SocketAddrV4::new(Ipv4Addr::new(20, 0, 0, 1), 443),
            Flags::SYN,
        )
    }

    #[test]
    fn fragment_cipher_list_into_four() {
        let sizes: Vec<_> = fragment_stream(&TOR_CIPHER_LIST, 16).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![16, 16, 16, 10]);
    }

    #[test]
    fn fragment_hello_into_five_with_five_byte_remnant() {
        let hello = build_client_hello(&Transport::PlainTor);
        let chunks = fragment_stream(&hello, 16);
        assert_eq!(chunks.len(), 5);
        // the first chunk ends with the first five cipher-list bytes
        assert_eq!(&chunks[0][CIPHER_LIST_OFFSET..], &TOR_CIPHER_LIST[..5]);
        assert_eq!(chunks.concat(), hello);
    }

    #[test]
    fn fragment_identity_and_empty() {
        assert_eq!(fragment_stream(b"abc", 3), vec![b"abc".to_vec()]);
        assert_eq!(fragment_stream(b"abc", 100), vec![b"abc".to_vec()]);
        assert!(fragment_stream(b"", 4).is_empty());
    }

    #[test]
    fn scanner_two_syns_never_accepted() {
        let policy = GuardPolicy::default();
        let mut st = GuardState::new();
        assert_eq!(
            guard_filter_syn(&mut st, &syn(4000), &policy, SimTime(100)),
            SynDecision::SilentDrop
        );
        assert_eq!(
            guard_filter_syn(&mut st, &syn(4000), &policy, SimTime(103)),
            SynDecision::SilentDrop
        );
    }

    #[test]
    fn third_syn_accepted_then_fourth_dropped() {
        let policy = GuardPolicy::default();
        let mut st = GuardState::new();
        let t = [100, 101, 103, 107];
        let d: Vec<_> = t
            .iter()
            .map(|s| guard_filter_syn(&mut st, &syn(4000), &policy, SimTime(*s)))
            .collect();
        assert_eq!(
            d,
            vec![
                SynDecision::SilentDrop,
                SynDecision::SilentDrop,
                SynDecision::Accept,
                SynDecision::SilentDrop
            ]
        );
    }

    #[test]
    fn counters_are_per_tuple_and_expire() {
        let policy = GuardPolicy::default();
        let mut st = GuardState::new();
        guard_filter_syn(&mut st, &syn(1), &policy, SimTime(0));
        guard_filter_syn(&mut st, &syn(1), &policy, SimTime(1));
        // another port starts from scratch
        assert_eq!(
            guard_filter_syn(&mut st, &syn(2), &policy, SimTime(2)),
            SynDecision::SilentDrop
        );
        // idle for 60 s resets the count: this is SYN #1 again
        assert_eq!(
            guard_filter_syn(&mut st, &syn(1), &policy, SimTime(61)),
            SynDecision::SilentDrop
        );
        assert_eq!(
            guard_filter_syn(&mut st, &syn(1), &policy, SimTime(62)),
            SynDecision::SilentDrop
        );
        assert_eq!(
            guard_filter_syn(&mut st, &syn(1), &policy, SimTime(63)),
            SynDecision::Accept
        );
        st.on_established(tuple(1));
        assert_eq!(st.tracked(), 1);
    }

    #[test]
    fn deaf_window_drops_even_the_nth() {
        let policy = GuardPolicy {
            syn_accept_index: 1,
            deaf_window_s: 180,
            synack_window_override: None,
        };
        let mut st = GuardState::new();
        assert_eq!(
            guard_filter_syn(&mut st, &syn(9), &policy, SimTime(900 + 60)),
            SynDecision::SilentDrop
        );
        let mut st = GuardState::new();
        assert_eq!(
            guard_filter_syn(&mut st, &syn(9), &policy, SimTime(900 + 200)),
            SynDecision::Accept
        );
    }

    #[test]
    fn window_rewrite_touches_only_window() {
        let policy = GuardPolicy {
            synack_window_override: Some(40),
            ..GuardPolicy::default()
        };
        let mut synack = Segment::tcp(tuple(443), tuple(5000), Flags::SYN_ACK);
        synack.window = 65535;
        synack.seq = 77;
        synack.ack = 12;
        synack.ttl = 64;
        let out = rewrite_synack_window(&synack, &policy);
        assert_eq!(out.window, 40);
        assert_eq!(Segment { window: 65535, ..out }, synack);
        let plain_syn = syn(1);
        assert_eq!(rewrite_synack_window(&plain_syn, &policy), plain_syn);
    }

    fn spa() -> SpaPolicy {
        SpaPolicy {
            shared_secret: "s3cret".into(),
            auth_validity_s: 60,
            port: 62201,
        }
    }

    fn auth(src: Ipv4Addr, secret: &[u8], issued: u64) -> Segment {
        Segment::datagram(
            SocketAddrV4::new(src, 5555),
            SocketAddrV4::new(Ipv4Addr::new(20, 0, 0, 1), 62201),
            spa_token(secret, src, SimTime(issued)),
        )
    }

    #[test]
    fn spa_opens_for_valid_token_only() {
        let client = Ipv4Addr::new(10, 1, 1, 1);
        let mut gate = SpaGate::new();
        let d = spa_gate(&mut gate, &auth(client, b"s3cret", 100), &spa(), SimTime(101));
        assert_eq!(
            d,
            SpaDecision::Open {
                source: client,
                until: SimTime(160)
            }
        );
        assert_eq!(spa_gate(&mut gate, &syn(7), &spa(), SimTime(102)), SpaDecision::Pass);
        assert_eq!(
            spa_gate(&mut gate, &syn(7), &spa(), SimTime(161)),
            SpaDecision::SilentDrop
        );
    }

    #[test]
    fn spa_rejects_wrong_secret_stale_replay_and_garbage() {
        let client = Ipv4Addr::new(10, 1, 1, 1);
        let mut gate = SpaGate::new();
        assert_eq!(
            spa_gate(&mut gate, &auth(client, b"wrong", 100), &spa(), SimTime(100)),
            SpaDecision::SilentDrop
        );
        assert_eq!(
            spa_gate(&mut gate, &auth(client, b"s3cret", 100), &spa(), SimTime(161)),
            SpaDecision::SilentDrop
        );
        let mut garbage = auth(client, b"s3cret", 100);
        garbage.payload.truncate(7);
        assert_eq!(
            spa_gate(&mut gate, &garbage, &spa(), SimTime(100)),
            SpaDecision::SilentDrop
        );
        // token bound to another source
        let mut stolen = auth(client, b"s3cret", 100);
        stolen.src = SocketAddrV4::new(Ipv4Addr::new(10, 9, 9, 9), 1);
        assert_eq!(
            spa_gate(&mut gate, &stolen, &spa(), SimTime(100)),
            SpaDecision::SilentDrop
        );
        assert_eq!(
            spa_gate(&mut gate, &syn(1), &spa(), SimTime(100)),
            SpaDecision::SilentDrop
        );
    }
}
