//! Scenario files: TOML with kebab-case keys and explicit units, validated
//! on load. Every omitted value takes its documented default, and the full
//! effective configuration can be written back out for run headers.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{Ipv4Addr, SocketAddrV4};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocktable::BlockPolicy;
use crate::dpi::DpiConfig;
use crate::evasion::{GuardPolicy, SpaPolicy};
use crate::scanner::ScannerConfig;
use crate::simnet::tcp::TcpConfig;
use crate::simnet::{Region, Role, Window};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{}", located(*line, message))]
    Parse { line: Option<usize>, message: String },
    #[error("{}", located(*line, &format!("{field}: {message}")))]
    Invalid {
        line: Option<usize>,
        field: String,
        message: String,
    },
    #[error("unknown bundled scenario '{0}'")]
    UnknownBundled(String),
}

fn located(line: Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("line {l}: {message}"),
        None => message.to_string(),
    }
}

impl ScenarioError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ScenarioError::Parse { line, .. } | ScenarioError::Invalid { line, .. } => *line,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Meta {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub duration_s: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ServiceKind {
    TorBridge,
    ObfsBridge,
    /// Answers any request with a small response; serves HTTP and HTTPS.
    Web,
    Echo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ServiceSpec {
    pub kind: ServiceKind,
    pub port: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obfs_key: Option<String>,
}

/// Host-level allow list: once active, segments from other sources are
/// silently discarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FirewallSpec {
    pub allow_only: Vec<Ipv4Addr>,
    #[serde(default)]
    pub from_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct HostSpec {
    pub name: String,
    pub region: Region,
    /// With `count > 1`, member `i` gets this address plus `i`.
    pub addresses: Vec<Ipv4Addr>,
    #[serde(default = "default_count")]
    pub count: u32,
    #[serde(default)]
    pub roles: BTreeSet<Role>,
    #[serde(default = "default_ttl")]
    pub initial_ttl: u8,
    #[serde(default)]
    pub tcp: TcpConfig,
    #[serde(default)]
    pub services: Vec<ServiceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<GuardPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spa: Option<SpaPolicy>,
    #[serde(default)]
    pub offline: Vec<Window>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub firewall: Option<FirewallSpec>,
}

fn default_count() -> u32 {
    1
}

fn default_ttl() -> u8 {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct LinkSpec {
    /// Host or group name; a group links every member.
    pub a: String,
    pub b: String,
    #[serde(default = "default_delay")]
    pub delay_s: u64,
    #[serde(default)]
    pub loss: f64,
    #[serde(default = "default_hops")]
    pub hops: u32,
    #[serde(default)]
    pub border: bool,
    #[serde(default)]
    pub dpi: bool,
    #[serde(default)]
    pub enforce: bool,
}

fn default_delay() -> u64 {
    1
}

fn default_hops() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct BlockingConfig {
    pub policy: BlockPolicy,
    /// Tuples answered with an injected RST on connect.
    pub static_blacklist: Vec<String>,
    pub dir_authorities: Vec<String>,
    /// Directory authorities exempt from the address block.
    pub unblocked_dir_authorities: Vec<String>,
    /// Public relays ingested periodically.
    pub consensus: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    /// Full Tor handshake.
    Tor,
    /// One data segment carrying the payload, sent without a TCP handshake.
    RawBait,
    /// TCP connect, then write the payload.
    SendPayload,
    Http,
    Https,
    /// TCP connect only.
    TcpProbe,
}

impl Behavior {
    pub fn goal(self) -> &'static str {
        match self {
            Behavior::Tor => "tor",
            Behavior::RawBait | Behavior::SendPayload => "payload",
            Behavior::Http => "http",
            Behavior::Https => "https",
            Behavior::TcpProbe => "tcp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSelect {
    #[default]
    All,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClientTransport {
    #[default]
    PlainTor,
    Obfuscated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PayloadKind {
    #[default]
    TorHello,
    HttpEmbeddedHello,
    ZeroedHttpEmbeddedHello,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ClientSpec {
    /// Host or group; every member runs its own schedule.
    pub host: String,
    pub behavior: Behavior,
    /// `name:port` or `a.b.c.d:port`; a group name expands to all members.
    pub target: String,
    #[serde(default)]
    pub target_select: TargetSelect,
    #[serde(default)]
    pub start_s: u64,
    /// Per-member uniform offset added to `start-s`.
    #[serde(default)]
    pub start_jitter_s: u64,
    /// Number of rounds; 0 repeats until the run ends.
    #[serde(default = "default_attempts")]
    pub attempts: u64,
    #[serde(default)]
    pub interval_min_s: u64,
    #[serde(default)]
    pub interval_max_s: u64,
    #[serde(default)]
    pub transport: ClientTransport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obfs_key: Option<String>,
    #[serde(default)]
    pub payload: PayloadKind,
    #[serde(default = "default_http_host")]
    pub http_host: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fragment_mss: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spa_secret: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spa_port: Option<u16>,
}

fn default_attempts() -> u64 {
    1
}

fn default_http_host() -> String {
    "torproject.org".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct AnalysisConfig {
    pub smoothing_alpha: f64,
    pub usage_bucket_s: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            smoothing_alpha: 0.05,
            usage_bucket_s: 3600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Scenario {
    pub meta: Meta,
    #[serde(default)]
    pub hosts: Vec<HostSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub dpi: DpiConfig,
    #[serde(default)]
    pub scanner: ScannerConfig,
    #[serde(default)]
    pub blocking: BlockingConfig,
    #[serde(default)]
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Seg {
    Key(&'static str),
    Index(usize),
}

fn invalid(path: &[Seg], message: impl Into<String>) -> (Vec<Seg>, String) {
    (path.to_vec(), message.into())
}

fn path_string(path: &[Seg]) -> String {
    let mut out = String::new();
    for s in path {
        match s {
            Seg::Key(k) => {
                if !out.is_empty() {
                    out.push('.');
                }
                out.push_str(k);
            }
            Seg::Index(i) => out.push_str(&format!("[{i}]")),
        }
    }
    out
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Line of the deepest element of `path` that exists in the source.
fn locate(src: &str, path: &[Seg]) -> Option<usize> {
    let root = toml::de::DeTable::parse(src).ok()?;
    let mut span: Option<Range<usize>> = None;
    let top = toml::de::DeValue::Table(root.into_inner());
    let mut cur = &top;
    for seg in path {
        let next = match seg {
            Seg::Key(k) => cur.get(*k),
            Seg::Index(i) => cur.get(*i),
        };
        match next {
            Some(v) => {
                span = Some(v.span());
                cur = v.get_ref();
            }
            None => break,
        }
    }
    span.map(|s| line_of(src, s.start))
}

fn fraction(path: &[Seg], v: f64) -> Result<(), (Vec<Seg>, String)> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(path, format!("{v} is not a fraction in [0, 1]")))
    }
}

fn with(path: &[Seg], more: &[Seg]) -> Vec<Seg> {
    let mut p = path.to_vec();
    p.extend_from_slice(more);
    p
}

/// Splits `name:port`.
pub fn split_tuple_ref(s: &str) -> Option<(&str, u16)> {
    let (name, port) = s.rsplit_once(':')?;
    Some((name, port.parse().ok()?))
}

impl Scenario {
    pub fn from_toml_str(src: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = toml::from_str(src).map_err(|e| ScenarioError::Parse {
            line: e.span().map(|s| line_of(src, s.start)),
            message: e.message().trim().to_string(),
        })?;
        scenario.validate().map_err(|(path, message)| ScenarioError::Invalid {
            line: locate(src, &path),
            field: path_string(&path),
            message,
        })?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let src = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::from_toml_str(&src)
    }

    /// The effective configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Host names to the member names they expand to.
    pub fn groups(&self) -> BTreeMap<&str, Vec<String>> {
        let mut out = BTreeMap::new();
        for h in &self.hosts {
            out.insert(h.name.as_str(), member_names(h));
        }
        out
    }

    /// Addresses of every member of the named host or group, or the literal
    /// address.
    pub fn resolve_name(&self, name: &str) -> Option<Vec<Ipv4Addr>> {
        if let Ok(ip) = name.parse::<Ipv4Addr>() {
            return Some(vec![ip]);
        }
        for h in &self.hosts {
            if h.name == name {
                return Some((0..h.count).map(|i| member_address(h, i, 0)).collect());
            }
            if h.count > 1 {
                if let Some(i) = member_names(h).iter().position(|m| m == name) {
                    return Some(vec![member_address(h, i as u32, 0)]);
                }
            }
        }
        None
    }

    pub fn resolve_tuples(&self, tuple_ref: &str) -> Option<Vec<SocketAddrV4>> {
        let (name, port) = split_tuple_ref(tuple_ref)?;
        let addrs = self.resolve_name(name)?;
        Some(addrs.into_iter().map(|a| SocketAddrV4::new(a, port)).collect())
    }

    fn validate(&self) -> Result<(), (Vec<Seg>, String)> {
        let mut names = BTreeSet::new();
        let mut addrs = BTreeSet::new();
        for (i, h) in self.hosts.iter().enumerate() {
            let p = [Seg::Key("hosts"), Seg::Index(i)];
            for m in member_names(h) {
                if !names.insert(m.clone()) {
                    return Err(invalid(
                        &with(&p, &[Seg::Key("name")]),
                        format!("duplicate host name '{m}'"),
                    ));
                }
            }
            if h.addresses.is_empty() {
                return Err(invalid(
                    &with(&p, &[Seg::Key("addresses")]),
                    "at least one address required",
                ));
            }
            if h.count == 0 {
                return Err(invalid(&with(&p, &[Seg::Key("count")]), "count must be at least 1"));
            }
            if h.count > 1 && h.addresses.len() != 1 {
                return Err(invalid(
                    &with(&p, &[Seg::Key("addresses")]),
                    "host groups take exactly one base address",
                ));
            }
            for m in 0..h.count {
                for a in 0..h.addresses.len() {
                    let addr = member_address(h, m, a);
                    if !addrs.insert(addr) {
                        return Err(invalid(
                            &with(&p, &[Seg::Key("addresses")]),
                            format!("address {addr} used twice"),
                        ));
                    }
                }
            }
            if h.tcp.mss == 0 || h.tcp.window == 0 {
                return Err(invalid(
                    &with(&p, &[Seg::Key("tcp")]),
                    "mss and window must be positive",
                ));
            }
            for (j, s) in h.services.iter().enumerate() {
                if s.kind == ServiceKind::ObfsBridge && s.obfs_key.as_deref().is_none_or(str::is_empty) {
                    return Err(invalid(
                        &with(&p, &[Seg::Key("services"), Seg::Index(j)]),
                        "obfs-bridge needs a non-empty obfs-key",
                    ));
                }
            }
            if let Some(g) = &h.guard {
                let gp = with(&p, &[Seg::Key("guard")]);
                if g.synack_window_override == Some(0) {
                    return Err(invalid(
                        &with(&gp, &[Seg::Key("synack-window-override")]),
                        "a zero window would stall every connection",
                    ));
                }
                if g.syn_accept_index == 0 {
                    return Err(invalid(
                        &with(&gp, &[Seg::Key("syn-accept-index")]),
                        "must be at least 1",
                    ));
                }
            }
            if let Some(spa) = &h.spa {
                if spa.shared_secret.is_empty() {
                    return Err(invalid(
                        &with(&p, &[Seg::Key("spa"), Seg::Key("shared-secret")]),
                        "must not be empty",
                    ));
                }
            }
        }
        let groups = self.groups();
        let known = |n: &str| groups.contains_key(n) || names.contains(n);
        for (i, l) in self.links.iter().enumerate() {
            let p = [Seg::Key("links"), Seg::Index(i)];
            for (key, end) in [("a", &l.a), ("b", &l.b)] {
                if !known(end) {
                    return Err(invalid(&with(&p, &[Seg::Key(key)]), format!("unknown host '{end}'")));
                }
            }
            fraction(&with(&p, &[Seg::Key("loss")]), l.loss)?;
            if l.hops == 0 {
                return Err(invalid(&with(&p, &[Seg::Key("hops")]), "hop count must be at least 1"));
            }
            if l.dpi && !l.border {
                return Err(invalid(
                    &with(&p, &[Seg::Key("dpi")]),
                    "inspection is only allowed on border links",
                ));
            }
            if l.enforce && !l.border {
                return Err(invalid(
                    &with(&p, &[Seg::Key("enforce")]),
                    "enforcement is only allowed on border links",
                ));
            }
            if l.dpi && !self.hosts.iter().any(|h| h.roles.contains(&Role::ScannerPool)) {
                return Err(invalid(
                    &with(&p, &[Seg::Key("dpi")]),
                    "inspection needs a host with role scanner-pool",
                ));
            }
        }
        let sp = [Seg::Key("scanner")];
        let pool = &self.scanner.pool;
        fraction(
            &with(&sp, &[Seg::Key("pool"), Seg::Key("master-probability")]),
            pool.master_probability,
        )?;
        let mut total = 0.0;
        for (i, w) in pool.as_weights.iter().enumerate() {
            fraction(
                &with(
                    &sp,
                    &[
                        Seg::Key("pool"),
                        Seg::Key("as-weights"),
                        Seg::Index(i),
                        Seg::Key("weight"),
                    ],
                ),
                w.weight,
            )?;
            total += w.weight;
        }
        if !pool.as_weights.is_empty() && (total - 1.0).abs() > 1e-9 {
            return Err(invalid(
                &with(&sp, &[Seg::Key("pool"), Seg::Key("as-weights")]),
                format!("weights sum to {total}, not 1"),
            ));
        }
        if pool.pool_size == 0 {
            return Err(invalid(
                &with(&sp, &[Seg::Key("pool"), Seg::Key("pool-size")]),
                "must be positive",
            ));
        }
        let spoof = &self.scanner.ttl_spoof;
        let tp = with(&sp, &[Seg::Key("ttl-spoof")]);
        fraction(
            &with(&tp, &[Seg::Key("live-host-probability")]),
            spoof.live_host_probability,
        )?;
        fraction(
            &with(&tp, &[Seg::Key("outlier-probability")]),
            spoof.outlier_probability,
        )?;
        if spoof.reply_onset_min.0 > spoof.reply_onset_min.1 {
            return Err(invalid(&with(&tp, &[Seg::Key("reply-onset-min")]), "empty range"));
        }
        let load = &self.scanner.load;
        for (key, (lo, hi)) in [("evening-hours", load.evening_hours), ("night-hours", load.night_hours)] {
            if lo >= hi || hi > 24 {
                return Err(invalid(
                    &with(&sp, &[Seg::Key("load"), Seg::Key(key)]),
                    "need start < end <= 24",
                ));
            }
        }
        if self.scanner.syn_retry_spacing_s == 0 {
            return Err(invalid(
                &with(&sp, &[Seg::Key("syn-retry-spacing-s")]),
                "must be positive",
            ));
        }
        let bp = [Seg::Key("blocking"), Seg::Key("policy")];
        let policy = &self.blocking.policy;
        fraction(
            &with(&bp, &[Seg::Key("consensus-miss-rate")]),
            policy.consensus_miss_rate,
        )?;
        if policy.revalidation_period_s == 0 || !policy.expiry_threshold_s.is_multiple_of(policy.revalidation_period_s)
        {
            return Err(invalid(
                &with(&bp, &[Seg::Key("expiry-threshold-s")]),
                "must be a whole multiple of revalidation-period-s",
            ));
        }
        if policy.consensus_ingest_period_s == 0 {
            return Err(invalid(
                &with(&bp, &[Seg::Key("consensus-ingest-period-s")]),
                "must be positive",
            ));
        }
        for (key, list) in [
            ("static-blacklist", &self.blocking.static_blacklist),
            ("dir-authorities", &self.blocking.dir_authorities),
            ("unblocked-dir-authorities", &self.blocking.unblocked_dir_authorities),
            ("consensus", &self.blocking.consensus),
        ] {
            for (i, r) in list.iter().enumerate() {
                if self.resolve_tuples(r).is_none() {
                    return Err(invalid(
                        &[Seg::Key("blocking"), Seg::Key(key), Seg::Index(i)],
                        format!("cannot resolve '{r}' (expected host:port)"),
                    ));
                }
            }
        }
        for (i, c) in self.clients.iter().enumerate() {
            let p = [Seg::Key("clients"), Seg::Index(i)];
            if !known(&c.host) {
                return Err(invalid(
                    &with(&p, &[Seg::Key("host")]),
                    format!("unknown host '{}'", c.host),
                ));
            }
            if self.resolve_tuples(&c.target).is_none() {
                return Err(invalid(
                    &with(&p, &[Seg::Key("target")]),
                    format!("cannot resolve '{}'", c.target),
                ));
            }
            if c.interval_min_s > c.interval_max_s {
                return Err(invalid(
                    &with(&p, &[Seg::Key("interval-min-s")]),
                    "exceeds interval-max-s",
                ));
            }
            if c.attempts != 1 && c.interval_max_s == 0 {
                return Err(invalid(
                    &with(&p, &[Seg::Key("interval-max-s")]),
                    "repeated attempts need a positive interval",
                ));
            }
            if c.transport == ClientTransport::Obfuscated && c.obfs_key.as_deref().is_none_or(str::is_empty) {
                return Err(invalid(
                    &with(&p, &[Seg::Key("obfs-key")]),
                    "obfuscated transport needs a key",
                ));
            }
            if c.fragment_mss == Some(0) {
                return Err(invalid(&with(&p, &[Seg::Key("fragment-mss")]), "must be at least 1"));
            }
        }
        let ap = [Seg::Key("analysis")];
        fraction(
            &with(&ap, &[Seg::Key("smoothing-alpha")]),
            self.analysis.smoothing_alpha,
        )?;
        if self.analysis.usage_bucket_s == 0 {
            return Err(invalid(&with(&ap, &[Seg::Key("usage-bucket-s")]), "must be positive"));
        }
        Ok(())
    }
}

pub fn member_names(h: &HostSpec) -> Vec<String> {
    if h.count <= 1 {
        vec![h.name.clone()]
    } else {
        (0..h.count).map(|i| format!("{}-{i}", h.name)).collect()
    }
}

pub fn member_address(h: &HostSpec, member: u32, idx: usize) -> Ipv4Addr {
    Ipv4Addr::from(u32::from(h.addresses[idx]).wrapping_add(member))
}
