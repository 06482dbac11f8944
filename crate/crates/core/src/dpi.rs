//! Stateless per-segment inspection at border links.
//!
//! The leading bytes of a payload select the rule set: payloads opening with
//! an HTTP method token get the Host-header rule only, everything else gets
//! the Tor cipher-list rule only. Segments are never reassembled.

use std::collections::BTreeSet;
use std::net::SocketAddrV4;

use serde::{Deserialize, Serialize};

use crate::protocol::TOR_CIPHER_LIST;
use crate::scanner::{Enqueued, Scanner};
use crate::simnet::{in_any, Direction, EventLog, RngStreams, Segment, SimTime, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HostAction {
    #[default]
    InjectRst,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct DpiConfig {
    pub inspect_directions: BTreeSet<Direction>,
    pub http_block_hosts: BTreeSet<String>,
    pub http_methods: Vec<String>,
    pub blocked_host_action: HostAction,
    /// Windows during which the whole blocking apparatus is down: no
    /// inspection, no scanning, no enforcement.
    pub outages: Vec<Window>,
}

impl Default for DpiConfig {
    fn default() -> Self {
        DpiConfig {
            inspect_directions: BTreeSet::from([Direction::Egress]),
            http_block_hosts: BTreeSet::from(["torproject.org".to_string()]),
            http_methods: vec!["GET ".into(), "POST ".into(), "HEAD ".into()],
            blocked_host_action: HostAction::InjectRst,
            outages: Vec::new(),
        }
    }
}

impl DpiConfig {
    pub fn active(&self, now: SimTime) -> bool {
        !in_any(&self.outages, now)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    ReportTor(SocketAddrV4),
    InjectRst,
    Drop,
}

pub fn inspect(seg: &Segment, cfg: &DpiConfig, now: SimTime) -> Verdict {
    if !cfg.active(now) || !cfg.inspect_directions.contains(&seg.direction) {
        return Verdict::Pass;
    }
    let payload = &seg.payload;
    if cfg.http_methods.iter().any(|m| payload.starts_with(m.as_bytes())) {
        if host_header_blocked(payload, cfg) {
            return match cfg.blocked_host_action {
                HostAction::InjectRst => Verdict::InjectRst,
                HostAction::Drop => Verdict::Drop,
            };
        }
        return Verdict::Pass;
    }
    if payload.len() >= TOR_CIPHER_LIST.len() && payload.windows(TOR_CIPHER_LIST.len()).any(|w| w == TOR_CIPHER_LIST) {
        return Verdict::ReportTor(seg.dst);
    }
    Verdict::Pass
}

/// True when some header line is exactly `Host: <h>` for a blocked `h`.
fn host_header_blocked(payload: &[u8], cfg: &DpiConfig) -> bool {
    payload
        .split(|b| *b == b'\n')
        .skip(1)
        .map(|line| line.strip_suffix(b"\r").unwrap_or(line))
        .filter_map(|line| line.strip_prefix(b"Host: "))
        .any(|host| cfg.http_block_hosts.iter().any(|h| h.as_bytes() == host))
}

/// Hands a detected tuple to the scan queue; repeats before the next drain
/// coalesce into the pending job.
pub fn report_tor(
    scanner: &mut Scanner,
    tuple: SocketAddrV4,
    now: SimTime,
    rng: &mut RngStreams,
    log: &mut EventLog,
) -> Enqueued {
    scanner.enqueue(tuple, now, rng, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{
        build_browser_hello, build_client_hello, http_embedded_hello, serialize_http, zeroed_http_embedded_hello,
        HttpRequest, Transport,
    };
    use crate::simnet::Flags;
    use std::net::Ipv4Addr;

    fn seg(payload: Vec<u8>, direction: Direction) -> Segment {
        let mut s = Segment::tcp(
            SocketAddrV4::new(Ipv4Addr::new(10, 0, 0, 2), 40000),
            SocketAddrV4::new(Ipv4Addr::new(20, 0, 0, 9), 443),
            Flags::ACK,
        );
        s.payload = payload;
        s.direction = direction;
        s
    }

    fn verdict(payload: Vec<u8>) -> Verdict {
        inspect(&seg(payload, Direction::Egress), &DpiConfig::default(), SimTime(0))
    }

    #[test]
    fn plain_hello_reports_destination() {
        let v = verdict(build_client_hello(&Transport::PlainTor));
        assert_eq!(
            v,
            Verdict::ReportTor(SocketAddrV4::new(Ipv4Addr::new(20, 0, 0, 9), 443))
        );
    }

    #[test]
    fn http_context_suppresses_tor_rule() {
        assert_eq!(verdict(http_embedded_hello()), Verdict::Pass);
        assert!(matches!(verdict(zeroed_http_embedded_hello()), Verdict::ReportTor(_)));
    }

    #[test]
    fn exact_host_match_only() {
        let rst = |host: &str| verdict(serialize_http(&HttpRequest::get("/", host)));
        assert_eq!(rst("torproject.org"), Verdict::InjectRst);
        assert_eq!(rst("orproject.org"), Verdict::Pass);
        assert_eq!(rst("torproject.or"), Verdict::Pass);
        assert_eq!(rst("gmail.com"), Verdict::Pass);
    }

    #[test]
    fn host_rule_can_drop_instead() {
        let cfg = DpiConfig {
            blocked_host_action: HostAction::Drop,
            ..DpiConfig::default()
        };
        let s = seg(
            serialize_http(&HttpRequest::get("/", "torproject.org")),
            Direction::Egress,
        );
        assert_eq!(inspect(&s, &cfg, SimTime(0)), Verdict::Drop);
    }

    #[test]
    fn post_and_head_are_http_context() {
        let mut body = b"POST / HTTP/1.1\r\n".to_vec();
        body.extend(build_client_hello(&Transport::PlainTor));
        assert_eq!(verdict(body), Verdict::Pass);
    }

    #[test]
    fn split_hello_is_missed_on_both_halves() {
        let hello = build_client_hello(&Transport::PlainTor);
        let (a, b) = hello.split_at(40);
        assert_eq!(verdict(a.to_vec()), Verdict::Pass);
        assert_eq!(verdict(b.to_vec()), Verdict::Pass);
    }

    #[test]
    fn only_egress_inspected_by_default() {
        let hello = build_client_hello(&Transport::PlainTor);
        for d in [Direction::Ingress, Direction::Domestic, Direction::Abroad] {
            assert_eq!(
                inspect(&seg(hello.clone(), d), &DpiConfig::default(), SimTime(0)),
                Verdict::Pass
            );
        }
    }

    #[test]
    fn outage_passes_everything() {
        let cfg = DpiConfig {
            outages: vec![Window {
                start_s: 100,
                end_s: 200,
            }],
            ..DpiConfig::default()
        };
        let s = seg(build_client_hello(&Transport::PlainTor), Direction::Egress);
        assert_eq!(inspect(&s, &cfg, SimTime(150)), Verdict::Pass);
        assert!(matches!(inspect(&s, &cfg, SimTime(200)), Verdict::ReportTor(_)));
    }

    #[test]
    fn opaque_https_passes() {
        assert_eq!(verdict(build_browser_hello()), Verdict::Pass);
        assert_eq!(verdict(Vec::new()), Verdict::Pass);
    }
}
