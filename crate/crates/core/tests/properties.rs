use std::net::{Ipv4Addr, SocketAddrV4};

use gfcsim_core::analysis::{exp_smooth, SmoothingParams, TimeSeries};
use gfcsim_core::dpi::{inspect, DpiConfig, Verdict};
use gfcsim_core::evasion::{fragment_stream, rewrite_synack_window, GuardPolicy};
use gfcsim_core::protocol::{build_client_hello, deobfuscate, obfuscate, Transport, TOR_CIPHER_LIST};
use gfcsim_core::simnet::{Direction, Flags, RngStreams, Stream};
use gfcsim_core::{Segment, SimTime};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn seg(payload: Vec<u8>, direction: Direction) -> Segment {
    let mut s = Segment::tcp(
        SocketAddrV4::new(Ipv4Addr::new(10, 0, 0, 2), 40000),
        SocketAddrV4::new(Ipv4Addr::new(198, 51, 100, 7), 443),
        Flags::ACK,
    );
    s.payload = payload;
    s.direction = direction;
    s
}

fn verdict(payload: &[u8], direction: Direction) -> Verdict {
    inspect(&seg(payload.to_vec(), direction), &DpiConfig::default(), SimTime(0))
}

fn contains_cipher_list(bytes: &[u8]) -> bool {
    bytes.windows(TOR_CIPHER_LIST.len()).any(|w| w == TOR_CIPHER_LIST)
}

#[test]
fn plain_hello_carries_cipher_list_once() {
    let hello = build_client_hello(&Transport::PlainTor);
    assert_eq!(hello.len(), 71);
    let hits = hello
        .windows(TOR_CIPHER_LIST.len())
        .filter(|w| *w == TOR_CIPHER_LIST)
        .count();
    assert_eq!(hits, 1);
}

#[test]
fn every_two_way_split_of_the_hello_evades() {
    let hello = build_client_hello(&Transport::PlainTor);
    for cut in 1..hello.len() {
        let (a, b) = hello.split_at(cut);
        let whole_in_one = contains_cipher_list(a) || contains_cipher_list(b);
        for part in [a, b] {
            let v = verdict(part, Direction::Egress);
            if !whole_in_one {
                assert_eq!(v, Verdict::Pass, "cut at {cut}");
            }
        }
        // Cuts inside the list itself always hide it.
        if (12..69).contains(&cut) {
            assert!(!whole_in_one);
        }
    }
}

#[test]
fn every_mss_up_to_57_hides_the_list() {
    let hello = build_client_hello(&Transport::PlainTor);
    for mss in 1..=57 {
        for part in fragment_stream(&hello, mss) {
            assert_eq!(verdict(&part, Direction::Egress), Verdict::Pass, "mss {mss}");
        }
    }
    let caught = fragment_stream(&hello, 58)
        .iter()
        .any(|p| verdict(p, Direction::Egress) != Verdict::Pass);
    assert!(
        !caught,
        "58-byte segments start at offset 0 and cannot align with the list at offset 11"
    );
    let caught = fragment_stream(&hello, 69)
        .iter()
        .any(|p| verdict(p, Direction::Egress) != Verdict::Pass);
    assert!(caught);
}

/// Two samples from distinct streams are independent: chi-squared test on a
/// 10x10 contingency table of paired draws.
#[test]
fn streams_are_pairwise_independent() {
    let mut rng = RngStreams::new(2024);
    let pairs = [
        (Stream::Loss, Stream::Delays),
        (Stream::ScannerPool, Stream::Spoof),
        (Stream::ClientBehavior, Stream::Consensus),
        (Stream::Ports, Stream::Loss),
    ];
    let crit = ChiSquared::new(81.0).unwrap().inverse_cdf(0.999);
    for (a, b) in pairs {
        let n = 20_000;
        let mut table = [[0u32; 10]; 10];
        for _ in 0..n {
            let x = (rng.unit(a) * 10.0) as usize;
            let y = (rng.unit(b) * 10.0) as usize;
            table[x][y] += 1;
        }
        let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<u32>() as f64).collect();
        let cols: Vec<f64> = (0..10)
            .map(|j| table.iter().map(|r| r[j]).sum::<u32>() as f64)
            .collect();
        let mut chi = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                let e = rows[i] * cols[j] / n as f64;
                chi += (table[i][j] as f64 - e).powi(2) / e;
            }
        }
        assert!(chi < crit, "{a:?} x {b:?}: chi2 {chi} >= {crit}");
    }
}

proptest! {
    #[test]
    fn obfuscation_round_trips(payload in proptest::collection::vec(any::<u8>(), 0..4096), key in proptest::collection::vec(any::<u8>(), 1..40)) {
        prop_assert_eq!(deobfuscate(&obfuscate(&payload, &key), &key), payload);
    }

    #[test]
    fn obfuscated_hello_is_never_reported(key in proptest::collection::vec(any::<u8>(), 1..40)) {
        let hello = build_client_hello(&Transport::Obfuscated(key));
        prop_assert_eq!(verdict(&hello, Direction::Egress), Verdict::Pass);
    }

    #[test]
    fn arbitrary_splits_without_the_whole_list_pass(mut cuts in proptest::collection::vec(1usize..71, 1..12)) {
        let hello = build_client_hello(&Transport::PlainTor);
        cuts.sort_unstable();
        cuts.dedup();
        let mut start = 0;
        let mut parts = Vec::new();
        for c in cuts.into_iter().chain([hello.len()]) {
            parts.push(&hello[start..c]);
            start = c;
        }
        for p in parts {
            if !contains_cipher_list(p) {
                prop_assert_eq!(verdict(p, Direction::Egress), Verdict::Pass);
            }
        }
    }

    #[test]
    fn ingress_and_domestic_are_never_acted_on(prefix in proptest::collection::vec(any::<u8>(), 0..64), host in "[a-z.]{0,20}") {
        let mut with_hello = prefix.clone();
        with_hello.extend(build_client_hello(&Transport::PlainTor));
        let http = format!("GET / HTTP/1.1\r\nHost: torproject.org\r\nX: {host}\r\n\r\n").into_bytes();
        for d in [Direction::Ingress, Direction::Domestic] {
            prop_assert_eq!(verdict(&with_hello, d), Verdict::Pass);
            prop_assert_eq!(verdict(&http, d), Verdict::Pass);
        }
    }

    #[test]
    fn http_context_never_reports_tor(method in prop::sample::select(vec!["GET ", "POST ", "HEAD "]), rest in proptest::collection::vec(any::<u8>(), 0..200)) {
        let mut p = method.as_bytes().to_vec();
        p.extend(build_client_hello(&Transport::PlainTor));
        p.extend(rest);
        prop_assert!(!matches!(verdict(&p, Direction::Egress), Verdict::ReportTor(_)));
    }

    #[test]
    fn only_the_exact_host_is_reset(host in "[a-z]{1,12}(\\.[a-z]{2,4})?") {
        let p = format!("GET / HTTP/1.1\r\nHost: {host}\r\n\r\n").into_bytes();
        let want = if host == "torproject.org" { Verdict::InjectRst } else { Verdict::Pass };
        prop_assert_eq!(verdict(&p, Direction::Egress), want);
    }

    #[test]
    fn fragments_concatenate_back(payload in proptest::collection::vec(any::<u8>(), 0..600), mss in 1usize..100) {
        let parts = fragment_stream(&payload, mss);
        prop_assert!(parts.iter().all(|p| !p.is_empty() && p.len() <= mss));
        prop_assert_eq!(parts.concat(), payload);
    }

    #[test]
    fn window_rewrite_touches_only_the_window(flags in 0u8..16, seq: u32, ack: u32, window: u16, ttl: u8, over in 1u16..2000, payload in proptest::collection::vec(any::<u8>(), 0..32)) {
        let mut s = seg(payload, Direction::Ingress);
        s.flags = [Flags::SYN, Flags::ACK, Flags::RST, Flags::FIN]
            .into_iter()
            .enumerate()
            .filter(|(i, _)| flags & (1 << i) != 0)
            .fold(Flags::NONE, |acc, (_, f)| acc | f);
        s.seq = seq;
        s.ack = ack;
        s.window = window;
        s.ttl = ttl;
        let policy = GuardPolicy { synack_window_override: Some(over), ..GuardPolicy::default() };
        let out = rewrite_synack_window(&s, &policy);
        let mut expect = s.clone();
        if s.flags.is_syn_ack() {
            expect.window = over;
        }
        prop_assert_eq!(out, expect);
    }

    #[test]
    fn smoothing_is_shift_equivariant(xs in proptest::collection::vec(-1e3f64..1e3, 1..80), a in 0.0f64..=1.0, c in -1e3f64..1e3) {
        let p = SmoothingParams::new(a).unwrap();
        let base = exp_smooth(&TimeSeries::from_values(xs.iter().copied()), p).values();
        let shifted = exp_smooth(&TimeSeries::from_values(xs.iter().map(|x| x + c)), p).values();
        for (s, b) in shifted.iter().zip(&base) {
            prop_assert!((s - (b + c)).abs() <= 1e-9 * (1.0 + c.abs() + b.abs()));
        }
    }

    #[test]
    fn smoothing_stays_within_range(xs in proptest::collection::vec(-1e3f64..1e3, 1..80), a in 0.0f64..=1.0) {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let eps = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        let out = exp_smooth(&TimeSeries::from_values(xs.iter().copied()), SmoothingParams::new(a).unwrap());
        prop_assert_eq!(out.len(), xs.len());
        for v in out.values() {
            prop_assert!(v >= lo - eps && v <= hi + eps);
        }
    }
}
