//! The simulation engine: wires hosts, links, DPI, the scanner and the block
//! table together and runs a scenario to completion.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::net::{Ipv4Addr, SocketAddrV4};

use crate::blocktable::{BlockMode, BlockOrigin, BlockTable, Enforcement};
use crate::dpi::{self, Verdict};
use crate::evasion::{
    guard_filter_syn, rewrite_window, spa_gate, spa_token, GuardPolicy, GuardState, SpaDecision, SpaGate, SpaPolicy,
    SynDecision,
};
use crate::protocol::{
    build_browser_hello, build_client_hello, http_embedded_hello, http_ok_response, serialize_http,
    zeroed_http_embedded_hello, HandshakeRole, HttpRequest, Phase, TorSession, Transport,
};
use crate::scanner::{Enqueued, PickedSource, ScanJob, ScanKind, ScanOutcome, Scanner};
use crate::scenario::{
    member_address, member_names, Behavior, ClientSpec, ClientTransport, FirewallSpec, PayloadKind, Scenario,
    ServiceKind, ServiceSpec, TargetSelect,
};
use crate::simnet::tcp::{Backoff, CloseReason, Tcb, TcpConfig, TcpEvent};
use crate::simnet::{
    in_any, Direction, EventLog, EventQueue, Flags, HostId, Link, LogKind, Network, Proto, Region, RngStreams, Role,
    Segment, SimTime, Stream, Window,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const EPHEMERAL_BASE: u16 = 40_000;
const CLIENT_HANDSHAKE_TIMEOUT_S: u64 = 60;
const DEFAULT_SPA_PORT: u16 = 62_201;

type ConnKey = (SocketAddrV4, SocketAddrV4);

#[derive(Debug)]
enum Ev {
    Deliver {
        id: u64,
        seg: Segment,
        to: HostId,
        hops: u32,
    },
    Inject {
        seg: Segment,
        to: HostId,
    },
    Timer {
        key: ConnKey,
        serial: u64,
        generation: u64,
    },
    AppTimeout {
        key: ConnKey,
        serial: u64,
    },
    ClientRound {
        client: usize,
        attempt: u64,
    },
    Drain {
        slot: SimTime,
    },
    Scan {
        job: ScanJob,
    },
    Ingest,
    PingReply {
        addr: Ipv4Addr,
        onset_s: u64,
        scan_ttl: u8,
        ttl: u8,
    },
}

struct HostRt {
    name: String,
    region: Region,
    initial_ttl: u8,
    tcp: TcpConfig,
    services: BTreeMap<u16, ServiceSpec>,
    guard: Option<(GuardPolicy, GuardState)>,
    spa: Option<(SpaPolicy, SpaGate)>,
    offline: Vec<Window>,
    firewall: Option<FirewallSpec>,
    silent: bool,
    next_port: u16,
}

impl HostRt {
    fn ephemeral(&mut self) -> u16 {
        let p = self.next_port;
        self.next_port = if p == u16::MAX { EPHEMERAL_BASE } else { p + 1 };
        p
    }

    fn accepts_from(&self, src: Ipv4Addr, now: SimTime) -> bool {
        match &self.firewall {
            Some(fw) if now.secs() >= fw.from_s => fw.allow_only.contains(&src),
            _ => true,
        }
    }
}

/// One instantiated client schedule: a client spec bound to one host.
struct ClientRt {
    spec: usize,
    host: HostId,
    targets: Vec<SocketAddrV4>,
}

struct ClientConn {
    client: usize,
    attempt: u64,
    behavior: Behavior,
    session: Option<TorSession>,
    payload: Vec<u8>,
    established: bool,
    done: bool,
}

struct ScanConn {
    job: ScanJob,
    session: Option<TorSession>,
    source: PickedSource,
    hops: u32,
    established: bool,
    done: bool,
}

enum ServerApp {
    Tor(Box<TorSession>),
    Web { answered: bool },
    Echo,
}

enum App {
    Client(ClientConn),
    Scan(ScanConn),
    Server(ServerApp),
}

struct Conn {
    owner: HostId,
    serial: u64,
    tcb: Tcb,
    app: App,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub log: EventLog,
    /// Effective configuration, seed and version.
    pub header: String,
    pub summary: BTreeMap<String, String>,
}

impl RunOutput {
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.summary {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

pub struct Simulation {
    scenario: Scenario,
    seed: u64,
    duration: SimTime,
    now: SimTime,
    queue: EventQueue<Ev>,
    rng: RngStreams,
    log: EventLog,
    net: Network,
    hosts: Vec<HostRt>,
    clients: Vec<ClientRt>,
    scanner: Scanner,
    scanner_host: Option<HostId>,
    leases: HashMap<Ipv4Addr, u32>,
    blocks: BlockTable,
    consensus: Vec<SocketAddrV4>,
    conns: HashMap<ConnKey, Conn>,
    next_serial: u64,
    next_segment: u64,
}

/// Runs `scenario` with its own seed, or `seed` when given.
pub fn run(scenario: &Scenario, seed: Option<u64>) -> RunOutput {
    Simulation::new(scenario.clone(), seed).run()
}

impl Simulation {
    pub fn new(scenario: Scenario, seed: Option<u64>) -> Simulation {
        let seed = seed.unwrap_or(scenario.meta.seed);
        let mut net = Network::new();
        let mut hosts = Vec::new();
        let mut scanner_host = None;
        let mut by_name: BTreeMap<String, Vec<HostId>> = BTreeMap::new();
        let scanner_ttl = scenario.scanner.initial_ttl;
        for spec in &scenario.hosts {
            for (m, member) in member_names(spec).into_iter().enumerate() {
                let addrs = (0..spec.addresses.len())
                    .map(|a| member_address(spec, m as u32, a))
                    .collect();
                let id = net.add_host(&member, spec.region, addrs, spec.roles.clone());
                let is_scanner = spec.roles.contains(&Role::ScannerPool);
                if is_scanner && scanner_host.is_none() {
                    scanner_host = Some(id);
                }
                hosts.push(HostRt {
                    name: member.clone(),
                    region: spec.region,
                    initial_ttl: if is_scanner { scanner_ttl } else { spec.initial_ttl },
                    tcp: spec.tcp,
                    services: spec.services.iter().map(|s| (s.port, s.clone())).collect(),
                    guard: spec.guard.map(|g| (g, GuardState::new())),
                    spa: spec.spa.clone().map(|p| (p, SpaGate::new())),
                    offline: spec.offline.clone(),
                    firewall: spec.firewall.clone(),
                    silent: is_scanner || spec.guard.is_some() || spec.spa.is_some(),
                    next_port: EPHEMERAL_BASE,
                });
                by_name.entry(member.clone()).or_default().push(id);
                if spec.count > 1 {
                    by_name.entry(spec.name.clone()).or_default().push(id);
                }
            }
        }
        for l in &scenario.links {
            for &a in &by_name[&l.a] {
                for &b in &by_name[&l.b] {
                    net.add_link(Link {
                        a,
                        b,
                        delay_s: l.delay_s,
                        loss: l.loss,
                        hops: l.hops,
                        border: l.border,
                        dpi: l.dpi,
                        enforce: l.enforce,
                    });
                }
            }
        }
        let mut clients = Vec::new();
        for (i, c) in scenario.clients.iter().enumerate() {
            let targets = scenario.resolve_tuples(&c.target).expect("validated target");
            for &host in &by_name[&c.host] {
                clients.push(ClientRt {
                    spec: i,
                    host,
                    targets: targets.clone(),
                });
            }
        }
        let consensus = scenario
            .blocking
            .consensus
            .iter()
            .flat_map(|r| scenario.resolve_tuples(r).expect("validated consensus"))
            .collect();
        Simulation {
            seed,
            duration: SimTime(scenario.meta.duration_s),
            now: SimTime::ZERO,
            queue: EventQueue::new(),
            rng: RngStreams::new(seed),
            log: EventLog::new(),
            net,
            hosts,
            clients,
            scanner: Scanner::new(scenario.scanner.clone()),
            scanner_host,
            leases: HashMap::new(),
            blocks: BlockTable::new(scenario.blocking.policy),
            consensus,
            conns: HashMap::new(),
            next_serial: 0,
            next_segment: 0,
            scenario,
        }
    }

    pub fn run(mut self) -> RunOutput {
        if self.duration > SimTime::ZERO {
            self.init();
        }
        while let Some(t) = self.queue.peek_time() {
            if t >= self.duration {
                break;
            }
            let (t, ev) = self.queue.pop().expect("peeked");
            self.now = t;
            self.handle(ev);
        }
        self.expire_in_flight();
        let summary = self.summary();
        let mut effective = self.scenario.clone();
        effective.meta.seed = self.seed;
        let header = format!(
            "[run]\nversion = \"{VERSION}\"\nseed = {}\n\n{}",
            self.seed,
            effective.to_toml()
        );
        RunOutput {
            seed: self.seed,
            log: self.log,
            header,
            summary,
        }
    }

    fn init(&mut self) {
        let blocking = self.scenario.blocking.clone();
        for r in &blocking.static_blacklist {
            for t in self.scenario.resolve_tuples(r).expect("validated") {
                self.blocks
                    .add(t, BlockMode::RstOnConnect, BlockOrigin::Static, self.now, &mut self.log);
            }
        }
        let exempt: Vec<SocketAddrV4> = blocking
            .unblocked_dir_authorities
            .iter()
            .flat_map(|r| self.scenario.resolve_tuples(r).expect("validated"))
            .collect();
        for r in &blocking.dir_authorities {
            for t in self.scenario.resolve_tuples(r).expect("validated") {
                if !exempt.iter().any(|e| e.ip() == t.ip()) {
                    self.blocks
                        .add(t, BlockMode::IpDrop, BlockOrigin::Static, self.now, &mut self.log);
                }
            }
        }
        if !self.consensus.is_empty() {
            self.queue.schedule(Ev::Ingest, SimTime::ZERO);
        }
        let period = blocking.policy.revalidation_period_s;
        self.queue
            .schedule(Ev::Drain { slot: SimTime(period) }, SimTime(period));
        for client in 0..self.clients.len() {
            let spec = &self.scenario.clients[self.clients[client].spec];
            let jitter = self.rng.int_inclusive(Stream::ClientBehavior, 0, spec.start_jitter_s);
            let at = SimTime(spec.start_s + jitter);
            self.queue.schedule(Ev::ClientRound { client, attempt: 0 }, at);
        }
    }

    /// The blocking apparatus (inspection, scanning, enforcement) is up.
    fn apparatus_active(&self) -> bool {
        self.scenario.dpi.active(self.now)
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Deliver { id, seg, to, hops } => self.deliver(id, seg, to, hops),
            Ev::Inject { seg, to } => self.receive(to, seg),
            Ev::Timer {
                key,
                serial,
                generation,
            } => {
                if let Some(mut conn) = self.take_conn(key, serial) {
                    let events = conn.tcb.on_timer(generation, self.now);
                    self.process(key, conn, events);
                }
            }
            Ev::AppTimeout { key, serial } => {
                if let Some(conn) = self.take_conn(key, serial) {
                    self.app_timeout(key, conn);
                }
            }
            Ev::ClientRound { client, attempt } => self.client_round(client, attempt),
            Ev::Drain { slot } => self.drain(slot),
            Ev::Scan { job } => self.start_scan(job),
            Ev::Ingest => {
                if self.apparatus_active() {
                    let relays = std::mem::take(&mut self.consensus);
                    self.blocks
                        .ingest_consensus(&relays, self.now, &mut self.rng, &mut self.log);
                    self.consensus = relays;
                }
                let next = self.now + self.blocks.policy().consensus_ingest_period_s;
                self.queue.schedule(Ev::Ingest, next);
            }
            Ev::PingReply {
                addr,
                onset_s,
                scan_ttl,
                ttl,
            } => {
                self.log.push(
                    self.now,
                    LogKind::PingReply,
                    [
                        ("addr", addr.to_string()),
                        ("delta", (ttl as i64 - scan_ttl as i64).to_string()),
                        ("delay-s", onset_s.to_string()),
                        ("scan-ttl", scan_ttl.to_string()),
                        ("ttl", ttl.to_string()),
                    ],
                );
            }
        }
    }

    fn take_conn(&mut self, key: ConnKey, serial: u64) -> Option<Conn> {
        match self.conns.get(&key) {
            Some(c) if c.serial == serial => self.conns.remove(&key),
            _ => None,
        }
    }

    // ---- network ----

    fn drop_segment(&mut self, id: u64, reason: &str) {
        self.log.push(
            self.now,
            LogKind::SegmentDropped,
            [("id", id.to_string()), ("reason", reason.to_string())],
        );
    }

    fn is_scanner_traffic(&self, seg: &Segment) -> bool {
        let Some(sh) = self.scanner_host else {
            return false;
        };
        [seg.src.ip(), seg.dst.ip()]
            .into_iter()
            .any(|ip| self.leases.contains_key(ip) || self.net.owner(*ip) == Some(sh))
    }

    fn send(&mut self, from: HostId, mut seg: Segment) {
        let id = self.next_segment;
        self.next_segment += 1;
        let src_region = self.hosts[from.0 as usize].region;
        let dst_host = self.net.resolve(*seg.dst.ip());
        let dst_region = dst_host.map_or(src_region, |h| self.hosts[h.0 as usize].region);
        seg.direction = Direction::between(src_region, dst_region);
        seg.ttl = self.hosts[from.0 as usize].initial_ttl;
        self.log.push(
            self.now,
            LogKind::SegmentSent,
            [
                ("dir", seg.direction.as_str().to_string()),
                ("dst", seg.dst.to_string()),
                ("flags", seg.flags.to_string()),
                ("id", id.to_string()),
                ("len", seg.payload.len().to_string()),
                ("src", seg.src.to_string()),
            ],
        );
        let Some(to) = dst_host else {
            return self.drop_segment(id, "no-path");
        };
        let Some(path) = self.net.route(from, to) else {
            return self.drop_segment(id, "no-path");
        };
        let exempt = self.is_scanner_traffic(&seg);
        for link_id in &path.links {
            let link = self.net.link(*link_id);
            let (loss, border, enforce, inspect) = (link.loss, link.border, link.enforce, link.dpi);
            if loss > 0.0 && self.rng.bernoulli(Stream::Loss, loss) {
                return self.drop_segment(id, "loss");
            }
            if !border || exempt || !self.apparatus_active() {
                continue;
            }
            if enforce {
                match self.blocks.enforce(&seg) {
                    Enforcement::Pass => {}
                    Enforcement::Drop => return self.drop_segment(id, "enforcement"),
                    Enforcement::Rst => self.inject_rst(&seg, from, to, path.delay_s, false, "blacklist"),
                }
            }
            if inspect {
                match dpi::inspect(&seg, &self.scenario.dpi, self.now) {
                    Verdict::Pass => {}
                    Verdict::ReportTor(tuple) => self.report_tor(tuple),
                    Verdict::InjectRst => {
                        self.inject_rst(&seg, from, to, path.delay_s, true, "host-rule");
                        return self.drop_segment(id, "dpi");
                    }
                    Verdict::Drop => return self.drop_segment(id, "dpi"),
                }
            }
        }
        self.queue.schedule(
            Ev::Deliver {
                id,
                seg,
                to,
                hops: path.hops,
            },
            self.now + path.delay_s,
        );
    }

    /// Forged RSTs: always towards the sender, optionally towards the
    /// receiver as well.
    fn inject_rst(&mut self, seg: &Segment, from: HostId, to: HostId, delay: u64, both: bool, reason: &str) {
        let mut targets = vec![(seg.dst, seg.src, from)];
        if both {
            targets.push((seg.src, seg.dst, to));
        }
        for (spoofed, victim, host) in targets {
            let mut rst = Segment::tcp(spoofed, victim, Flags::RST);
            rst.ttl = 64;
            self.log.push(
                self.now,
                LogKind::RstInjected,
                [
                    ("from", spoofed.to_string()),
                    ("reason", reason.to_string()),
                    ("to", victim.to_string()),
                ],
            );
            self.queue.schedule(Ev::Inject { seg: rst, to: host }, self.now + delay);
        }
    }

    fn deliver(&mut self, id: u64, mut seg: Segment, to: HostId, hops: u32) {
        seg.ttl = seg.ttl.saturating_sub(hops.min(255) as u8);
        self.log.push(
            self.now,
            LogKind::SegmentDelivered,
            [
                ("hops", hops.to_string()),
                ("id", id.to_string()),
                ("ttl", seg.ttl.to_string()),
            ],
        );
        // a leased scanner address may have moved on
        if self.net.resolve(*seg.dst.ip()) != Some(to) {
            return;
        }
        self.receive(to, seg);
    }

    fn receive(&mut self, h: HostId, seg: Segment) {
        let now = self.now;
        let host = &mut self.hosts[h.0 as usize];
        if in_any(&host.offline, now) || !host.accepts_from(*seg.src.ip(), now) {
            return;
        }
        if seg.proto == Proto::Datagram {
            if let Some((policy, gate)) = &mut host.spa {
                spa_gate(gate, &seg, policy, now);
            }
            return;
        }
        let key = (seg.dst, seg.src);
        let syn_only = seg.flags.is_syn_only();
        if let Some(conn) = self.conns.get(&key) {
            let is_server = matches!(conn.app, App::Server(_));
            if syn_only && is_server {
                if let Some((policy, state)) = &mut host.guard {
                    if guard_filter_syn(state, &seg, policy, now) == SynDecision::SilentDrop {
                        return;
                    }
                }
            }
            let mut conn = self.conns.remove(&key).expect("present");
            let events = conn.tcb.on_segment(&seg, now);
            return self.process(key, conn, events);
        }
        if !syn_only {
            return;
        }
        if let Some((policy, gate)) = &mut host.spa {
            if spa_gate(gate, &seg, policy, now) == SpaDecision::SilentDrop {
                return;
            }
        }
        if let Some((policy, state)) = &mut host.guard {
            if guard_filter_syn(state, &seg, policy, now) == SynDecision::SilentDrop {
                return;
            }
        }
        let Some(service) = host.services.get(&seg.dst.port()).cloned() else {
            if !host.silent {
                let mut rst = Segment::tcp(seg.dst, seg.src, Flags::RST | Flags::ACK);
                rst.ack = seg.seq.wrapping_add(1);
                self.send(h, rst);
            }
            return;
        };
        let app = match service.kind {
            ServiceKind::TorBridge => {
                ServerApp::Tor(Box::new(TorSession::new(HandshakeRole::Bridge, &Transport::PlainTor)))
            }
            ServiceKind::ObfsBridge => {
                let key = service.obfs_key.clone().unwrap_or_default().into_bytes();
                ServerApp::Tor(Box::new(TorSession::new(
                    HandshakeRole::Bridge,
                    &Transport::Obfuscated(key),
                )))
            }
            ServiceKind::Web => ServerApp::Web { answered: false },
            ServiceKind::Echo => ServerApp::Echo,
        };
        let iss = self.rng.int_inclusive(Stream::Ports, 0, u32::MAX as u64) as u32;
        let (tcb, events) = Tcb::accept(&seg, host.tcp, iss, now);
        let conn = self.new_conn(h, tcb, App::Server(app));
        self.process(key, conn, events);
    }

    fn new_conn(&mut self, owner: HostId, tcb: Tcb, app: App) -> Conn {
        self.next_serial += 1;
        Conn {
            owner,
            serial: self.next_serial,
            tcb,
            app,
        }
    }

    // ---- connection event processing ----

    fn process(&mut self, key: ConnKey, mut conn: Conn, events: Vec<TcpEvent>) {
        let mut pending: VecDeque<TcpEvent> = events.into();
        while let Some(ev) = pending.pop_front() {
            match ev {
                TcpEvent::Send(seg) => {
                    let seg = match (&conn.app, &self.hosts[conn.owner.0 as usize].guard) {
                        (App::Server(_), Some((policy, _))) => rewrite_window(&seg, policy),
                        _ => seg,
                    };
                    self.send(conn.owner, seg);
                }
                TcpEvent::ArmTimer { at, generation } => {
                    self.queue.schedule(
                        Ev::Timer {
                            key,
                            serial: conn.serial,
                            generation,
                        },
                        at.max(self.now),
                    );
                }
                TcpEvent::Established => {
                    let out = self.on_established(key, &mut conn);
                    pending.extend(out);
                }
                TcpEvent::Data(bytes) => {
                    let out = self.on_data(&mut conn, &bytes);
                    pending.extend(out);
                }
                TcpEvent::Closed(reason) => self.on_closed(&mut conn, reason),
            }
        }
        if conn.tcb.is_closed() {
            self.conn_gone(&conn);
        } else {
            self.conns.insert(key, conn);
        }
    }

    fn conn_gone(&mut self, conn: &Conn) {
        if let App::Scan(_) = conn.app {
            let addr = *conn.tcb.local.ip();
            if let Some(n) = self.leases.get_mut(&addr) {
                *n -= 1;
                if *n == 0 {
                    self.leases.remove(&addr);
                    self.net.release(addr);
                }
            }
        }
    }

    fn on_established(&mut self, key: ConnKey, conn: &mut Conn) -> Vec<TcpEvent> {
        let now = self.now;
        let serial = conn.serial;
        match &mut conn.app {
            App::Server(app) => {
                if let Some((_, state)) = &mut self.hosts[conn.owner.0 as usize].guard {
                    state.on_established(conn.tcb.remote);
                }
                if let ServerApp::Tor(session) = app {
                    let out = session.on_tcp_established();
                    return conn.tcb.send(&out, now);
                }
                Vec::new()
            }
            App::Client(c) => {
                c.established = true;
                self.queue
                    .schedule(Ev::AppTimeout { key, serial }, now + CLIENT_HANDSHAKE_TIMEOUT_S);
                let bytes = match c.behavior {
                    Behavior::Tor => c.session.as_mut().expect("tor session").on_tcp_established(),
                    Behavior::TcpProbe => {
                        c.done = true;
                        let rec = client_record(&self.scenario, &self.clients, &self.hosts, c, conn.tcb.remote, None);
                        self.log.push(now, LogKind::ConnectionEstablished, rec);
                        return conn.tcb.close();
                    }
                    Behavior::SendPayload => {
                        c.done = true;
                        let rec = client_record(&self.scenario, &self.clients, &self.hosts, c, conn.tcb.remote, None);
                        self.log.push(now, LogKind::ConnectionEstablished, rec);
                        c.payload.clone()
                    }
                    _ => c.payload.clone(),
                };
                conn.tcb.send(&bytes, now)
            }
            App::Scan(s) => {
                s.established = true;
                match s.job.kind {
                    ScanKind::Revalidate => {
                        self.finish_scan_inline(conn, ScanOutcome::SpeaksTor);
                        conn.tcb.close()
                    }
                    ScanKind::Detect => {
                        let timeout = self.scanner.config().handshake_timeout_s;
                        self.queue.schedule(Ev::AppTimeout { key, serial }, now + timeout);
                        let out = s.session.as_mut().expect("scan session").on_tcp_established();
                        conn.tcb.send(&out, now)
                    }
                }
            }
        }
    }

    fn on_data(&mut self, conn: &mut Conn, bytes: &[u8]) -> Vec<TcpEvent> {
        let now = self.now;
        match &mut conn.app {
            App::Server(ServerApp::Tor(session)) => {
                let out = session.on_bytes(bytes);
                conn.tcb.send(&out, now)
            }
            App::Server(ServerApp::Web { answered }) => {
                if *answered {
                    return Vec::new();
                }
                *answered = true;
                conn.tcb.send(&http_ok_response(), now)
            }
            App::Server(ServerApp::Echo) => conn.tcb.send(bytes, now),
            App::Client(c) => {
                if c.done {
                    return Vec::new();
                }
                let (out, verdict) = match c.behavior {
                    Behavior::Tor => {
                        let session = c.session.as_mut().expect("tor session");
                        let out = session.on_bytes(bytes);
                        let verdict = match session.phase() {
                            Phase::TorEstablished => Some(Ok(())),
                            Phase::Failed => Some(Err("protocol")),
                            _ => None,
                        };
                        (out, verdict)
                    }
                    Behavior::Http | Behavior::Https => (Vec::new(), Some(Ok(()))),
                    _ => (Vec::new(), None),
                };
                let mut events = conn.tcb.send(&out, now);
                if let Some(result) = verdict {
                    c.done = true;
                    let remote = conn.tcb.remote;
                    match result {
                        Ok(()) => {
                            let rec = client_record(&self.scenario, &self.clients, &self.hosts, c, remote, None);
                            self.log.push(now, LogKind::ConnectionEstablished, rec);
                        }
                        Err(reason) => {
                            let rec = client_record(
                                &self.scenario,
                                &self.clients,
                                &self.hosts,
                                c,
                                remote,
                                Some(("handshake", reason)),
                            );
                            self.log.push(now, LogKind::ConnectionFailed, rec);
                        }
                    }
                    events.extend(conn.tcb.close());
                }
                events
            }
            App::Scan(s) => {
                let Some(session) = s.session.as_mut() else {
                    return Vec::new();
                };
                if s.done {
                    return Vec::new();
                }
                let out = session.on_bytes(bytes);
                let outcome = match session.phase() {
                    Phase::TorEstablished => Some(ScanOutcome::SpeaksTor),
                    Phase::Failed => Some(ScanOutcome::NoTor),
                    _ => None,
                };
                let mut events = conn.tcb.send(&out, now);
                if let Some(outcome) = outcome {
                    self.finish_scan_inline(conn, outcome);
                    events.extend(conn.tcb.close());
                }
                events
            }
        }
    }

    fn on_closed(&mut self, conn: &mut Conn, reason: CloseReason) {
        let now = self.now;
        match &mut conn.app {
            App::Client(c) if !c.done => {
                c.done = true;
                let stage = if c.established { "handshake" } else { "tcp" };
                let rec = client_record(
                    &self.scenario,
                    &self.clients,
                    &self.hosts,
                    c,
                    conn.tcb.remote,
                    Some((stage, reason.as_str())),
                );
                self.log.push(now, LogKind::ConnectionFailed, rec);
            }
            App::Scan(s) if !s.done => {
                let outcome = if s.established {
                    ScanOutcome::NoTor
                } else {
                    ScanOutcome::Unreachable
                };
                self.finish_scan_inline(conn, outcome);
            }
            _ => {}
        }
    }

    fn app_timeout(&mut self, key: ConnKey, mut conn: Conn) {
        let now = self.now;
        match &mut conn.app {
            App::Client(c) if !c.done => {
                c.done = true;
                let rec = client_record(
                    &self.scenario,
                    &self.clients,
                    &self.hosts,
                    c,
                    conn.tcb.remote,
                    Some(("handshake", "timeout")),
                );
                self.log.push(now, LogKind::ConnectionFailed, rec);
            }
            App::Scan(s) if !s.done => {
                self.finish_scan_inline(&mut conn, ScanOutcome::NoTor);
            }
            _ => {}
        }
        let events = conn.tcb.close();
        self.process(key, conn, events);
    }

    // ---- clients ----

    fn client_round(&mut self, client: usize, attempt: u64) {
        let spec = self.scenario.clients[self.clients[client].spec].clone();
        let host = self.clients[client].host;
        let targets = self.clients[client].targets.clone();
        if !in_any(&self.hosts[host.0 as usize].offline, self.now) {
            let chosen: Vec<SocketAddrV4> = match spec.target_select {
                TargetSelect::All => targets,
                TargetSelect::Random => {
                    let i = self
                        .rng
                        .int_inclusive(Stream::ClientBehavior, 0, targets.len() as u64 - 1);
                    vec![targets[i as usize]]
                }
            };
            for target in chosen {
                self.open_client(client, &spec, host, attempt, target);
            }
        }
        if spec.attempts == 0 || attempt + 1 < spec.attempts {
            let gap = self
                .rng
                .int_inclusive(Stream::ClientBehavior, spec.interval_min_s, spec.interval_max_s)
                .max(1);
            self.queue.schedule(
                Ev::ClientRound {
                    client,
                    attempt: attempt + 1,
                },
                self.now + gap,
            );
        }
    }

    fn open_client(&mut self, client: usize, spec: &ClientSpec, host: HostId, attempt: u64, target: SocketAddrV4) {
        let now = self.now;
        let local_ip = self.net.host(host).addresses[0];
        let transport = match spec.transport {
            ClientTransport::PlainTor => Transport::PlainTor,
            ClientTransport::Obfuscated => {
                Transport::Obfuscated(spec.obfs_key.clone().unwrap_or_default().into_bytes())
            }
        };
        let payload = match spec.behavior {
            Behavior::Http => serialize_http(&HttpRequest::get("/", &spec.http_host)),
            Behavior::Https => build_browser_hello(),
            Behavior::RawBait | Behavior::SendPayload => match spec.payload {
                PayloadKind::TorHello => build_client_hello(&transport),
                PayloadKind::HttpEmbeddedHello => http_embedded_hello(),
                PayloadKind::ZeroedHttpEmbeddedHello => zeroed_http_embedded_hello(),
            },
            Behavior::Tor | Behavior::TcpProbe => Vec::new(),
        };
        let port = self.hosts[host.0 as usize].ephemeral();
        let local = SocketAddrV4::new(local_ip, port);
        if spec.behavior == Behavior::RawBait {
            let mut seg = Segment::tcp(local, target, Flags::ACK);
            seg.window = self.hosts[host.0 as usize].tcp.window;
            seg.payload = payload;
            self.send(host, seg);
            return;
        }
        if let Some(secret) = &spec.spa_secret {
            let token = spa_token(secret.as_bytes(), local_ip, now);
            let knock = SocketAddrV4::new(*target.ip(), spec.spa_port.unwrap_or(DEFAULT_SPA_PORT));
            self.send(host, Segment::datagram(local, knock, token));
        }
        let mut cfg = self.hosts[host.0 as usize].tcp;
        if let Some(mss) = spec.fragment_mss {
            cfg.mss = mss;
        }
        let session = (spec.behavior == Behavior::Tor).then(|| {
            let mut s = TorSession::new(HandshakeRole::Client, &transport);
            s.on_syn_sent();
            s
        });
        let key = (local, target);
        if let Some(old) = self.conns.remove(&key) {
            self.conn_gone(&old);
        }
        let iss = self.rng.int_inclusive(Stream::Ports, 0, u32::MAX as u64) as u32;
        let (tcb, events) = Tcb::connect(local, target, cfg, iss, now);
        let app = App::Client(ClientConn {
            client,
            attempt,
            behavior: spec.behavior,
            session,
            payload,
            established: false,
            done: false,
        });
        let conn = self.new_conn(host, tcb, app);
        self.process(key, conn, events);
    }

    // ---- scanning ----

    fn report_tor(&mut self, tuple: SocketAddrV4) {
        if self.scanner_host.is_none() {
            return;
        }
        if let Enqueued::New(job) = dpi::report_tor(&mut self.scanner, tuple, self.now, &mut self.rng, &mut self.log) {
            let at = job.start_time();
            self.queue.schedule(Ev::Scan { job }, at);
        }
    }

    fn scanning_active(&self) -> bool {
        self.scanner_host.is_some() && self.apparatus_active() && !self.scanner.in_downtime(self.now)
    }

    fn drain(&mut self, slot: SimTime) {
        if self.scanning_active() {
            for tuple in self.blocks.revalidation_targets(slot) {
                let job = self.scanner.revalidation_job(tuple, slot, &mut self.rng);
                self.log.push(
                    self.now,
                    LogKind::ScanScheduled,
                    [
                        ("delay", job.attempt_delay.to_string()),
                        ("job", job.id.to_string()),
                        ("kind", job.kind.as_str().to_string()),
                        ("slot", slot.to_string()),
                        ("target", tuple.to_string()),
                    ],
                );
                let at = job.start_time();
                self.queue.schedule(Ev::Scan { job }, at);
            }
        }
        let next = slot + self.blocks.policy().revalidation_period_s;
        self.queue.schedule(Ev::Drain { slot: next }, next);
    }

    fn start_scan(&mut self, job: ScanJob) {
        if job.kind == ScanKind::Detect {
            self.scanner.dequeue(&job);
        }
        if !self.scanning_active() {
            return;
        }
        let sh = self.scanner_host.expect("scanning active");
        let source = self.scanner.pick_source(&mut self.rng);
        *self.leases.entry(source.addr).or_insert(0) += 1;
        self.net.lease(source.addr, sh);
        let port = self.hosts[sh.0 as usize].ephemeral();
        let local = SocketAddrV4::new(source.addr, port);
        let hops = self
            .net
            .resolve(*job.target.ip())
            .and_then(|to| self.net.route(sh, to))
            .map_or(0, |p| p.hops);
        self.log.push(
            self.now,
            LogKind::ScanStarted,
            [
                ("as", source.as_label.clone()),
                ("delay", job.attempt_delay.to_string()),
                ("job", job.id.to_string()),
                ("kind", job.kind.as_str().to_string()),
                ("master", source.master.to_string()),
                ("recycled", source.recycled.to_string()),
                ("slot", job.scheduled_for.to_string()),
                ("src", source.addr.to_string()),
                ("target", job.target.to_string()),
            ],
        );
        let cfg = self.scanner.config();
        let tcp = TcpConfig {
            syn_retries: cfg.syn_retries,
            syn_rto_s: cfg.syn_retry_spacing_s,
            syn_backoff: Backoff::Fixed,
            ..TcpConfig::default()
        };
        let session = (job.kind == ScanKind::Detect).then(|| {
            let mut s = TorSession::new(HandshakeRole::ScannerClient, &Transport::PlainTor);
            s.on_syn_sent();
            s
        });
        let key = (local, job.target);
        if let Some(old) = self.conns.remove(&key) {
            self.conn_gone(&old);
        }
        let iss = self.rng.int_inclusive(Stream::Ports, 0, u32::MAX as u64) as u32;
        let (tcb, events) = Tcb::connect(local, job.target, tcp, iss, self.now);
        let app = App::Scan(ScanConn {
            job,
            session,
            source,
            hops,
            established: false,
            done: false,
        });
        let conn = self.new_conn(sh, tcb, app);
        self.process(key, conn, events);
    }

    /// Records a scan result. For probes `SpeaksTor` means the tuple
    /// accepted the connection.
    fn finish_scan_inline(&mut self, conn: &mut Conn, outcome: ScanOutcome) {
        let App::Scan(s) = &mut conn.app else {
            return;
        };
        if s.done {
            return;
        }
        s.done = true;
        let now = self.now;
        let success = outcome == ScanOutcome::SpeaksTor;
        let outcome_name = match (s.job.kind, success) {
            (ScanKind::Revalidate, true) => "reachable",
            (ScanKind::Revalidate, false) => "unreachable",
            _ => outcome.as_str(),
        };
        self.log.push(
            now,
            if success {
                LogKind::ScanSucceeded
            } else {
                LogKind::ScanFailed
            },
            [
                ("job", s.job.id.to_string()),
                ("kind", s.job.kind.as_str().to_string()),
                ("outcome", outcome_name.to_string()),
                ("src", s.source.addr.to_string()),
                ("target", s.job.target.to_string()),
            ],
        );
        match s.job.kind {
            ScanKind::Detect => {
                if success {
                    self.blocks.add(
                        s.job.target,
                        BlockMode::SynackDrop,
                        BlockOrigin::Scan,
                        now,
                        &mut self.log,
                    );
                }
            }
            ScanKind::Revalidate => {
                self.blocks
                    .record_probe(s.job.target, s.job.scheduled_for, success, now, &mut self.log);
            }
        }
        let scan_ttl = self.scanner.config().initial_ttl;
        if let Some(artifact) = self.scanner.config().ttl_spoof.sample(scan_ttl, &mut self.rng) {
            let seen_scan_ttl = scan_ttl.saturating_sub(s.hops.min(255) as u8);
            let hops_back = s.hops.saturating_sub(1).min(255) as u8;
            let ttl = artifact.underlying_initial_ttl.saturating_sub(hops_back);
            self.queue.schedule(
                Ev::PingReply {
                    addr: s.source.addr,
                    onset_s: artifact.onset_s,
                    scan_ttl: seen_scan_ttl,
                    ttl,
                },
                now + artifact.onset_s,
            );
        }
    }

    // ---- wrap-up ----

    fn expire_in_flight(&mut self) {
        let end = self.now.max(self.duration);
        for (_, ev) in self.queue.drain_pending() {
            if let Ev::Deliver { id, .. } = ev {
                self.log.push(
                    end,
                    LogKind::SegmentDropped,
                    [("id", id.to_string()), ("reason", "expired".to_string())],
                );
            }
        }
    }

    fn summary(&self) -> BTreeMap<String, String> {
        let mut s = BTreeMap::new();
        let count = |k: LogKind| self.log.count(k).to_string();
        s.insert("scenario".into(), self.scenario.meta.name.clone());
        s.insert("seed".into(), self.seed.to_string());
        s.insert("duration-s".into(), self.duration.to_string());
        s.insert("records".into(), self.log.len().to_string());
        for kind in LogKind::ALL {
            s.insert(format!("count.{kind}"), count(kind));
        }
        s.insert("blocks-at-end".into(), self.blocks.len().to_string());
        let detect = self
            .log
            .of_kind(LogKind::ScanStarted)
            .filter(|r| r.get("kind") == Some("detect"))
            .count();
        s.insert("detect-scans".into(), detect.to_string());
        s
    }
}

fn client_record(
    scenario: &Scenario,
    clients: &[ClientRt],
    hosts: &[HostRt],
    c: &ClientConn,
    dst: SocketAddrV4,
    failure: Option<(&str, &str)>,
) -> Vec<(&'static str, String)> {
    let rt = &clients[c.client];
    let host = &hosts[rt.host.0 as usize];
    let region = match host.region {
        Region::InsideChina => "inside-china",
        Region::OutsideChina => "outside-china",
    };
    let mut rec = vec![
        ("attempt", c.attempt.to_string()),
        ("client", host.name.clone()),
        ("dst", dst.to_string()),
        ("goal", scenario.clients[rt.spec].behavior.goal().to_string()),
        ("region", region.to_string()),
    ];
    if let Some((stage, reason)) = failure {
        rec.push(("reason", reason.to_string()));
        rec.push(("stage", stage.to_string()));
    }
    rec
}
