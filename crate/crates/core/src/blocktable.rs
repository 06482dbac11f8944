//! Blocking state and its enforcement at border links.
//!
//! Entries are keyed by address and port; `ip-drop` entries use port 0 and
//! cover the whole address.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddrV4};

use serde::{Deserialize, Serialize};

use crate::simnet::{Direction, EventLog, LogKind, RngStreams, Segment, SimTime, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockMode {
    SynackDrop,
    IpDrop,
    RstOnConnect,
}

impl BlockMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockMode::SynackDrop => "synack-drop",
            BlockMode::IpDrop => "ip-drop",
            BlockMode::RstOnConnect => "rst-on-connect",
        }
    }
}

/// Why an entry exists. Only scan-origin entries are revalidated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockOrigin {
    Scan,
    Consensus,
    Static,
}

impl BlockOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockOrigin::Scan => "scan",
            BlockOrigin::Consensus => "consensus",
            BlockOrigin::Static => "static",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockEntry {
    pub tuple: SocketAddrV4,
    pub mode: BlockMode,
    pub origin: BlockOrigin,
    pub added_at: SimTime,
    pub last_successful_revalidation: SimTime,
    pub failure_streak_started: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct BlockPolicy {
    pub expiry_threshold_s: u64,
    pub revalidation_period_s: u64,
    pub consensus_ingest_period_s: u64,
    pub consensus_miss_rate: f64,
}

impl Default for BlockPolicy {
    fn default() -> Self {
        BlockPolicy {
            expiry_threshold_s: 43_200,
            revalidation_period_s: 900,
            consensus_ingest_period_s: 259_200,
            consensus_miss_rate: 0.016,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enforcement {
    Pass,
    Drop,
    Rst,
}

/// Outcome of recording one revalidation probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeEffect {
    Kept,
    Removed,
    /// The tuple was no longer in the table.
    Absent,
}

fn ip_key(addr: Ipv4Addr) -> SocketAddrV4 {
    SocketAddrV4::new(addr, 0)
}

#[derive(Debug, Clone, Default)]
pub struct BlockTable {
    policy: BlockPolicy,
    entries: BTreeMap<SocketAddrV4, BlockEntry>,
}

impl BlockTable {
    pub fn new(policy: BlockPolicy) -> BlockTable {
        BlockTable {
            policy,
            entries: BTreeMap::new(),
        }
    }

    pub fn policy(&self) -> &BlockPolicy {
        &self.policy
    }

    /// Adds or refreshes an entry. `ip-drop` entries cover every port.
    pub fn add(
        &mut self,
        tuple: SocketAddrV4,
        mode: BlockMode,
        origin: BlockOrigin,
        now: SimTime,
        log: &mut EventLog,
    ) -> BlockEntry {
        let key = if mode == BlockMode::IpDrop {
            ip_key(*tuple.ip())
        } else {
            tuple
        };
        if let Some(e) = self.entries.get_mut(&key) {
            e.last_successful_revalidation = now;
            e.failure_streak_started = None;
            return e.clone();
        }
        let entry = BlockEntry {
            tuple: key,
            mode,
            origin,
            added_at: now,
            last_successful_revalidation: now,
            failure_streak_started: None,
        };
        log.push(
            now,
            LogKind::BlockAdded,
            [
                ("mode", mode.as_str()),
                ("origin", origin.as_str()),
                ("tuple", &key.to_string()),
            ],
        );
        self.entries.insert(key, entry.clone());
        entry
    }

    pub fn get(&self, tuple: SocketAddrV4) -> Option<&BlockEntry> {
        self.entries.get(&tuple)
    }

    pub fn contains(&self, tuple: SocketAddrV4) -> bool {
        self.entries.contains_key(&tuple)
    }

    pub fn ip_blocked(&self, addr: Ipv4Addr) -> bool {
        self.entries.contains_key(&ip_key(addr))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &BlockEntry> {
        self.entries.values()
    }

    /// Verdict for a segment crossing a border link.
    pub fn enforce(&self, seg: &Segment) -> Enforcement {
        if self.ip_blocked(*seg.src.ip()) || self.ip_blocked(*seg.dst.ip()) {
            return Enforcement::Drop;
        }
        if seg.flags.is_syn_ack() && seg.direction == Direction::Ingress {
            if let Some(e) = self.entries.get(&seg.src) {
                if e.mode == BlockMode::SynackDrop {
                    return Enforcement::Drop;
                }
            }
        }
        if seg.flags.is_syn_only() && seg.direction == Direction::Egress {
            if let Some(e) = self.entries.get(&seg.dst) {
                if e.mode == BlockMode::RstOnConnect {
                    return Enforcement::Rst;
                }
            }
        }
        Enforcement::Pass
    }

    /// Scan-origin tuples added strictly before `slot`; these get one
    /// revalidation probe per period.
    pub fn revalidation_targets(&self, slot: SimTime) -> Vec<SocketAddrV4> {
        self.entries
            .values()
            .filter(|e| e.origin == BlockOrigin::Scan && e.added_at < slot)
            .map(|e| e.tuple)
            .collect()
    }

    /// Applies one revalidation result. `slot` is the probe's queue slot, so
    /// streak lengths are exact multiples of the period.
    pub fn record_probe(
        &mut self,
        tuple: SocketAddrV4,
        slot: SimTime,
        success: bool,
        now: SimTime,
        log: &mut EventLog,
    ) -> ProbeEffect {
        let Some(e) = self.entries.get_mut(&tuple) else {
            return ProbeEffect::Absent;
        };
        if success {
            e.last_successful_revalidation = slot;
            e.failure_streak_started = None;
            return ProbeEffect::Kept;
        }
        let start = *e.failure_streak_started.get_or_insert(slot);
        if slot.saturating_sub(start) < self.policy.expiry_threshold_s {
            return ProbeEffect::Kept;
        }
        let e = self.entries.remove(&tuple).expect("entry present");
        log.push(
            now,
            LogKind::BlockRemoved,
            [
                ("added-at", e.added_at.to_string()),
                ("mode", e.mode.as_str().to_string()),
                ("streak-start", start.to_string()),
                ("tuple", tuple.to_string()),
            ],
        );
        ProbeEffect::Removed
    }

    /// Adds every listed relay except a fresh Bernoulli sample of misses.
    /// Returns the tuples missed this round.
    pub fn ingest_consensus(
        &mut self,
        relays: &[SocketAddrV4],
        now: SimTime,
        rng: &mut RngStreams,
        log: &mut EventLog,
    ) -> Vec<SocketAddrV4> {
        let mut missed = Vec::new();
        for &r in relays {
            if rng.bernoulli(Stream::Consensus, self.policy.consensus_miss_rate) {
                missed.push(r);
            } else {
                self.add(r, BlockMode::SynackDrop, BlockOrigin::Consensus, now, log);
            }
        }
        missed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::Flags;

    fn addr(last: u8, port: u16) -> SocketAddrV4 {
        SocketAddrV4::new(Ipv4Addr::new(20, 0, 0, last), port)
    }

    fn client() -> SocketAddrV4 {
        SocketAddrV4::new(Ipv4Addr::new(10, 0, 0, 1), 40000)
    }

    fn seg(src: SocketAddrV4, dst: SocketAddrV4, flags: Flags, direction: Direction) -> Segment {
        let mut s = Segment::tcp(src, dst, flags);
        s.direction = direction;
        s
    }

    #[test]
    fn synack_drop_lets_syn_out() {
        let mut t = BlockTable::new(BlockPolicy::default());
        let mut log = EventLog::new();
        t.add(
            addr(1, 443),
            BlockMode::SynackDrop,
            BlockOrigin::Scan,
            SimTime(0),
            &mut log,
        );
        let syn = seg(client(), addr(1, 443), Flags::SYN, Direction::Egress);
        let synack = seg(addr(1, 443), client(), Flags::SYN_ACK, Direction::Ingress);
        assert_eq!(t.enforce(&syn), Enforcement::Pass);
        assert_eq!(t.enforce(&synack), Enforcement::Drop);
        let other_port = seg(addr(1, 80), client(), Flags::SYN_ACK, Direction::Ingress);
        assert_eq!(t.enforce(&other_port), Enforcement::Pass);
        let abroad = seg(addr(1, 443), addr(2, 5000), Flags::SYN_ACK, Direction::Abroad);
        assert_eq!(t.enforce(&abroad), Enforcement::Pass);
    }

    #[test]
    fn ip_drop_covers_both_directions() {
        let mut t = BlockTable::new(BlockPolicy::default());
        let mut log = EventLog::new();
        t.add(
            addr(7, 9030),
            BlockMode::IpDrop,
            BlockOrigin::Static,
            SimTime(0),
            &mut log,
        );
        assert!(t.ip_blocked(*addr(7, 0).ip()));
        for flags in [Flags::SYN, Flags::ACK, Flags::SYN_ACK] {
            assert_eq!(
                t.enforce(&seg(client(), addr(7, 22), flags, Direction::Egress)),
                Enforcement::Drop
            );
            assert_eq!(
                t.enforce(&seg(addr(7, 80), client(), flags, Direction::Ingress)),
                Enforcement::Drop
            );
        }
    }

    #[test]
    fn rst_on_connect_answers_syn() {
        let mut t = BlockTable::new(BlockPolicy::default());
        let mut log = EventLog::new();
        t.add(
            addr(3, 443),
            BlockMode::RstOnConnect,
            BlockOrigin::Static,
            SimTime(0),
            &mut log,
        );
        assert_eq!(
            t.enforce(&seg(client(), addr(3, 443), Flags::SYN, Direction::Egress)),
            Enforcement::Rst
        );
        assert_eq!(
            t.enforce(&seg(client(), addr(3, 443), Flags::ACK, Direction::Egress)),
            Enforcement::Pass
        );
    }

    #[test]
    fn readd_is_idempotent_and_refreshes() {
        let mut t = BlockTable::new(BlockPolicy::default());
        let mut log = EventLog::new();
        t.add(
            addr(1, 443),
            BlockMode::SynackDrop,
            BlockOrigin::Scan,
            SimTime(0),
            &mut log,
        );
        t.record_probe(addr(1, 443), SimTime(900), false, SimTime(950), &mut log);
        let e = t.add(
            addr(1, 443),
            BlockMode::SynackDrop,
            BlockOrigin::Scan,
            SimTime(1000),
            &mut log,
        );
        assert_eq!(e.added_at, SimTime(0));
        assert_eq!(e.last_successful_revalidation, SimTime(1000));
        assert_eq!(e.failure_streak_started, None);
        assert_eq!(log.count(LogKind::BlockAdded), 1);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn streak_reaching_threshold_removes() {
        let mut t = BlockTable::new(BlockPolicy::default());
        let mut log = EventLog::new();
        let tuple = addr(1, 443);
        t.add(tuple, BlockMode::SynackDrop, BlockOrigin::Scan, SimTime(0), &mut log);
        let mut slot = 900;
        // a success in the middle resets the streak
        for ok in [false, false, true] {
            t.record_probe(tuple, SimTime(slot), ok, SimTime(slot + 10), &mut log);
            slot += 900;
        }
        let streak_start = slot;
        loop {
            let effect = t.record_probe(tuple, SimTime(slot), false, SimTime(slot + 10), &mut log);
            if effect == ProbeEffect::Removed {
                break;
            }
            assert_eq!(effect, ProbeEffect::Kept);
            slot += 900;
        }
        assert_eq!(slot - streak_start, 43_200);
        let rec = log.of_kind(LogKind::BlockRemoved).next().unwrap();
        assert_eq!(rec.get_u64("streak-start"), Some(streak_start));
        assert_eq!(
            t.record_probe(tuple, SimTime(slot + 900), false, SimTime(slot + 900), &mut log),
            ProbeEffect::Absent
        );
    }

    #[test]
    fn only_scan_entries_revalidated() {
        let mut t = BlockTable::new(BlockPolicy::default());
        let mut log = EventLog::new();
        t.add(
            addr(2, 443),
            BlockMode::SynackDrop,
            BlockOrigin::Consensus,
            SimTime(0),
            &mut log,
        );
        t.add(
            addr(3, 443),
            BlockMode::RstOnConnect,
            BlockOrigin::Static,
            SimTime(0),
            &mut log,
        );
        t.add(
            addr(1, 443),
            BlockMode::SynackDrop,
            BlockOrigin::Scan,
            SimTime(100),
            &mut log,
        );
        t.add(
            addr(4, 443),
            BlockMode::SynackDrop,
            BlockOrigin::Scan,
            SimTime(900),
            &mut log,
        );
        assert_eq!(t.revalidation_targets(SimTime(900)), vec![addr(1, 443)]);
    }

    #[test]
    fn consensus_miss_rate() {
        let mut t = BlockTable::new(BlockPolicy::default());
        let mut log = EventLog::new();
        let mut rng = RngStreams::new(2);
        let relays: Vec<_> = (0..2819u32)
            .map(|i| SocketAddrV4::new(Ipv4Addr::from(0x3000_0000 + i), 9001))
            .collect();
        let missed = t.ingest_consensus(&relays, SimTime(0), &mut rng, &mut log);
        // mean 45.1, sd 6.7
        assert!((25..=66).contains(&missed.len()), "missed {}", missed.len());
        assert_eq!(t.len() + missed.len(), relays.len());
        let again = t.ingest_consensus(&relays, SimTime(259_200), &mut rng, &mut log);
        let still = missed.iter().filter(|m| again.contains(m)).count();
        assert!(still <= 5);
        assert!(t.ingest_consensus(&[], SimTime(518_400), &mut rng, &mut log).is_empty());
    }
}
