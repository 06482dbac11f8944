//! Deterministic network fabric: simulated clock, named random substreams,
//! hosts and links, and the segment type every other module works on.
//!
//! Time has one-second resolution. Everything that depends on randomness
//! draws from a named substream of [`RngStreams`], so a run is a pure
//! function of the scenario and the master seed.

mod log;
mod queue;
mod rng;
pub mod tcp;
mod topology;

use std::fmt;
use std::net::SocketAddrV4;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

pub use log::{EventLog, LogKind, LogRecord, ParseLogError};
pub use queue::{EventHandle, EventQueue};
pub use rng::{Draw, DrawKind, RngStreams, Stream};
pub use topology::{Host, HostId, Link, LinkId, Network, Path, Role};

/// Length of one scan-queue cycle.
pub const QUEUE_PERIOD_S: u64 = 900;

/// Whole seconds since scenario start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn secs(self) -> u64 {
        self.0
    }

    /// Smallest multiple of `period` strictly greater than `self`.
    pub fn next_multiple_after(self, period: u64) -> SimTime {
        SimTime((self.0 / period + 1) * period)
    }

    pub fn seconds_of_day(self) -> u64 {
        self.0 % 86_400
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: u64) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

impl Sub for SimTime {
    type Output = u64;
    fn sub(self, rhs: SimTime) -> u64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    InsideChina,
    OutsideChina,
}

/// Direction of a segment relative to the border, derived from the regions
/// of its two endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Inside China towards the outside world.
    Egress,
    /// Outside world towards inside China.
    Ingress,
    /// Both endpoints inside China.
    Domestic,
    /// Both endpoints outside China; never crosses the border.
    Abroad,
}

impl Direction {
    pub fn between(src: Region, dst: Region) -> Direction {
        match (src, dst) {
            (Region::InsideChina, Region::OutsideChina) => Direction::Egress,
            (Region::OutsideChina, Region::InsideChina) => Direction::Ingress,
            (Region::InsideChina, Region::InsideChina) => Direction::Domestic,
            (Region::OutsideChina, Region::OutsideChina) => Direction::Abroad,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Egress => "egress",
            Direction::Ingress => "ingress",
            Direction::Domestic => "domestic",
            Direction::Abroad => "abroad",
        }
    }
}

/// TCP control flags carried by a [`Segment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Flags(u8);

impl Flags {
    pub const NONE: Flags = Flags(0);
    pub const SYN: Flags = Flags(1);
    pub const ACK: Flags = Flags(2);
    pub const RST: Flags = Flags(4);
    pub const FIN: Flags = Flags(8);
    pub const SYN_ACK: Flags = Flags(1 | 2);

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_syn_only(self) -> bool {
        self.contains(Flags::SYN) && !self.contains(Flags::ACK)
    }

    pub fn is_syn_ack(self) -> bool {
        self.contains(Flags::SYN_ACK)
    }
}

impl std::ops::BitOr for Flags {
    type Output = Flags;
    fn bitor(self, rhs: Flags) -> Flags {
        Flags(self.0 | rhs.0)
    }
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [
            (Flags::SYN, "SYN"),
            (Flags::ACK, "ACK"),
            (Flags::RST, "RST"),
            (Flags::FIN, "FIN"),
        ];
        let mut first = true;
        for (flag, name) in names {
            if self.contains(flag) {
                if !first {
                    f.write_str("|")?;
                }
                f.write_str(name)?;
                first = false;
            }
        }
        if first {
            f.write_str("-")?;
        }
        Ok(())
    }
}

/// Transport carrying a segment. Datagrams are only used for
/// single-packet authorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Proto {
    Tcp,
    Datagram,
}

/// The unit of simulated traffic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub src: SocketAddrV4,
    pub dst: SocketAddrV4,
    pub proto: Proto,
    pub flags: Flags,
    pub seq: u32,
    pub ack: u32,
    pub window: u16,
    /// Set to the sender's initial TTL on send, decremented by the path
    /// hop count on delivery.
    pub ttl: u8,
    pub payload: Vec<u8>,
    pub direction: Direction,
}

impl Segment {
    pub fn tcp(src: SocketAddrV4, dst: SocketAddrV4, flags: Flags) -> Segment {
        Segment {
            src,
            dst,
            proto: Proto::Tcp,
            flags,
            seq: 0,
            ack: 0,
            window: 0,
            ttl: 0,
            payload: Vec::new(),
            direction: Direction::Abroad,
        }
    }

    pub fn datagram(src: SocketAddrV4, dst: SocketAddrV4, payload: Vec<u8>) -> Segment {
        Segment {
            proto: Proto::Datagram,
            payload,
            ..Segment::tcp(src, dst, Flags::NONE)
        }
    }
}

/// Half-open interval `[start, end)` of simulated time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Window {
    pub start_s: u64,
    pub end_s: u64,
}

impl Window {
    pub fn contains(&self, t: SimTime) -> bool {
        self.start_s <= t.0 && t.0 < self.end_s
    }
}

pub fn in_any(windows: &[Window], t: SimTime) -> bool {
    windows.iter().any(|w| w.contains(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn next_multiple_is_strict() {
        assert_eq!(SimTime(0).next_multiple_after(900), SimTime(900));
        assert_eq!(SimTime(100).next_multiple_after(900), SimTime(900));
        assert_eq!(SimTime(899).next_multiple_after(900), SimTime(900));
        assert_eq!(SimTime(900).next_multiple_after(900), SimTime(1800));
    }

    #[test]
    fn direction_from_regions() {
        use Region::*;
        assert_eq!(Direction::between(InsideChina, OutsideChina), Direction::Egress);
        assert_eq!(Direction::between(OutsideChina, InsideChina), Direction::Ingress);
        assert_eq!(Direction::between(InsideChina, InsideChina), Direction::Domestic);
        assert_eq!(Direction::between(OutsideChina, OutsideChina), Direction::Abroad);
    }

    #[test]
    fn flags_display() {
        assert_eq!(Flags::SYN_ACK.to_string(), "SYN|ACK");
        assert_eq!(Flags::NONE.to_string(), "-");
        assert!(Flags::SYN.is_syn_only());
        assert!(!Flags::SYN_ACK.is_syn_only());
    }
}
