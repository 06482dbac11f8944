//! Active probing: 15-minute scan queues with load-dependent start delay,
//! scanner source selection, and the TTL artifacts left by spoofed sources.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddrV4};

use serde::{Deserialize, Serialize};

use crate::protocol::Phase;
use crate::simnet::{EventLog, LogKind, RngStreams, SimTime, Stream, Window, QUEUE_PERIOD_S};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AsWeight {
    pub label: String,
    pub weight: f64,
    /// First address of the synthetic block this AS hands out.
    pub prefix: Ipv4Addr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct ScannerPoolConfig {
    pub master_address: Ipv4Addr,
    pub master_probability: f64,
    pub pool_size: u32,
    pub as_weights: Vec<AsWeight>,
}

impl Default for ScannerPoolConfig {
    fn default() -> Self {
        ScannerPoolConfig {
            master_address: Ipv4Addr::new(202, 108, 181, 70),
            master_probability: 0.51,
            pool_size: 10_000,
            as_weights: vec![
                AsWeight {
                    label: "AS4837".into(),
                    weight: 0.657,
                    prefix: Ipv4Addr::new(60, 208, 0, 0),
                },
                AsWeight {
                    label: "AS4134".into(),
                    weight: 0.305,
                    prefix: Ipv4Addr::new(61, 128, 0, 0),
                },
                AsWeight {
                    label: "AS17622".into(),
                    weight: 0.038,
                    prefix: Ipv4Addr::new(58, 248, 0, 0),
                },
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LoadShape {
    Flat,
    /// Raised cosine over hour of day with its maximum at `peak-hour`.
    Diurnal {
        #[serde(rename = "peak-hour")]
        peak_hour: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct LoadCurve {
    pub shape: LoadShape,
    pub max_extra_delay_s: u64,
    /// `[start, end)` hours used when comparing busy and quiet periods.
    pub evening_hours: (u32, u32),
    pub night_hours: (u32, u32),
}

impl Default for LoadCurve {
    fn default() -> Self {
        LoadCurve {
            shape: LoadShape::Diurnal { peak_hour: 20.0 },
            max_extra_delay_s: 180,
            evening_hours: (18, 24),
            night_hours: (2, 6),
        }
    }
}

impl LoadCurve {
    /// Load factor in `[0, 1]`; periodic over one day.
    pub fn factor(&self, t: SimTime) -> f64 {
        match self.shape {
            LoadShape::Flat => 1.0,
            LoadShape::Diurnal { peak_hour } => {
                let hour = t.seconds_of_day() as f64 / 3600.0;
                let phase = 2.0 * std::f64::consts::PI * (hour - peak_hour) / 24.0;
                0.5 * (1.0 + phase.cos())
            }
        }
    }

    pub fn max_delay(&self, t: SimTime) -> u64 {
        (self.max_extra_delay_s as f64 * self.factor(t)).floor() as u64
    }

    fn hour_in(range: (u32, u32), t: SimTime) -> bool {
        let hour = (t.seconds_of_day() / 3600) as u32;
        range.0 <= hour && hour < range.1
    }

    pub fn is_evening(&self, t: SimTime) -> bool {
        Self::hour_in(self.evening_hours, t)
    }

    pub fn is_night(&self, t: SimTime) -> bool {
        Self::hour_in(self.night_hours, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct TtlSpoofModel {
    pub enabled: bool,
    pub live_host_probability: f64,
    /// Among live hosts, the share whose underlying machine uses a
    /// different initial TTL.
    pub outlier_probability: f64,
    pub outlier_initial_ttls: Vec<u8>,
    pub reply_onset_min: (u64, u64),
}

impl Default for TtlSpoofModel {
    fn default() -> Self {
        TtlSpoofModel {
            enabled: true,
            live_host_probability: 0.20,
            outlier_probability: 14.0 / 85.0,
            outlier_initial_ttls: vec![128, 255],
            reply_onset_min: (1, 15),
        }
    }
}

/// The machine behind a spoofed address, one hop closer than the scanner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpoofArtifact {
    pub onset_s: u64,
    pub underlying_initial_ttl: u8,
}

impl SpoofArtifact {
    /// Reply TTL minus scan TTL, for a scan that crossed `scan_hops`.
    pub fn ttl_delta(&self, scan_initial_ttl: u8, scan_hops: u32) -> i64 {
        let reply = self.underlying_initial_ttl as i64 - (scan_hops as i64 - 1);
        let during = scan_initial_ttl as i64 - scan_hops as i64;
        reply - during
    }
}

impl TtlSpoofModel {
    pub fn sample(&self, scan_initial_ttl: u8, rng: &mut RngStreams) -> Option<SpoofArtifact> {
        if !self.enabled || !rng.bernoulli(Stream::Spoof, self.live_host_probability) {
            return None;
        }
        let onset_min = rng.int_inclusive(Stream::Spoof, self.reply_onset_min.0, self.reply_onset_min.1);
        let underlying_initial_ttl =
            if !self.outlier_initial_ttls.is_empty() && rng.bernoulli(Stream::Spoof, self.outlier_probability) {
                let i = rng.int_inclusive(Stream::Spoof, 0, self.outlier_initial_ttls.len() as u64 - 1);
                self.outlier_initial_ttls[i as usize]
            } else {
                scan_initial_ttl
            };
        Some(SpoofArtifact {
            onset_s: onset_min * 60,
            underlying_initial_ttl,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct ScannerConfig {
    pub pool: ScannerPoolConfig,
    pub load: LoadCurve,
    pub ttl_spoof: TtlSpoofModel,
    /// SYN retransmissions per scan.
    pub syn_retries: u32,
    pub syn_retry_spacing_s: u64,
    pub initial_ttl: u8,
    /// Give up on a handshake that stalls this long after TCP is up.
    pub handshake_timeout_s: u64,
    /// Extra windows with no scanning at all.
    pub downtime: Vec<Window>,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        ScannerConfig {
            pool: ScannerPoolConfig::default(),
            load: LoadCurve::default(),
            ttl_spoof: TtlSpoofModel::default(),
            syn_retries: 1,
            syn_retry_spacing_s: 3,
            initial_ttl: 64,
            handshake_timeout_s: 30,
            downtime: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanKind {
    /// Triggered by a DPI report: full Tor handshake.
    Detect,
    /// Periodic TCP-connect probe of a blocked tuple.
    Revalidate,
}

impl ScanKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScanKind::Detect => "detect",
            ScanKind::Revalidate => "revalidate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanJob {
    pub id: u64,
    pub kind: ScanKind,
    pub target: SocketAddrV4,
    pub detected_at: SimTime,
    /// Always a multiple of the queue period.
    pub scheduled_for: SimTime,
    pub attempt_delay: u64,
}

impl ScanJob {
    pub fn start_time(&self) -> SimTime {
        self.scheduled_for + self.attempt_delay
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Enqueued {
    New(ScanJob),
    Coalesced(ScanJob),
}

impl Enqueued {
    pub fn job(&self) -> &ScanJob {
        match self {
            Enqueued::New(j) | Enqueued::Coalesced(j) => j,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanOutcome {
    SpeaksTor,
    NoTor,
    Unreachable,
}

impl ScanOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            ScanOutcome::SpeaksTor => "speaks-tor",
            ScanOutcome::NoTor => "no-tor",
            ScanOutcome::Unreachable => "unreachable",
        }
    }

    pub fn classify(tcp_established: bool, phase: Phase) -> ScanOutcome {
        if !tcp_established {
            ScanOutcome::Unreachable
        } else if phase == Phase::TorEstablished {
            ScanOutcome::SpeaksTor
        } else {
            ScanOutcome::NoTor
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PickedSource {
    pub addr: Ipv4Addr,
    pub as_label: String,
    pub master: bool,
    pub recycled: bool,
}

#[derive(Debug, Clone)]
struct SubPool {
    label: String,
    prefix: u32,
    size: u32,
    drawn: u32,
}

/// Scanner source addresses: a master address plus per-AS pools handed out
/// without replacement until exhausted, then recycled oldest first.
#[derive(Debug, Clone)]
pub struct ScannerPool {
    master: Ipv4Addr,
    master_label: String,
    master_probability: f64,
    cumulative: Vec<f64>,
    subpools: Vec<SubPool>,
}

impl ScannerPool {
    pub fn new(cfg: &ScannerPoolConfig) -> ScannerPool {
        let total: f64 = cfg.as_weights.iter().map(|w| w.weight).sum();
        let mut acc = 0.0;
        let cumulative = cfg
            .as_weights
            .iter()
            .map(|w| {
                acc += w.weight / total;
                acc
            })
            .collect();
        let subpools = cfg
            .as_weights
            .iter()
            .map(|w| SubPool {
                label: w.label.clone(),
                prefix: u32::from(w.prefix),
                size: ((cfg.pool_size as f64 * w.weight / total).round() as u32).max(1),
                drawn: 0,
            })
            .collect();
        ScannerPool {
            master: cfg.master_address,
            master_label: cfg.as_weights.first().map(|w| w.label.clone()).unwrap_or_default(),
            master_probability: cfg.master_probability,
            cumulative,
            subpools,
        }
    }

    pub fn master(&self) -> Ipv4Addr {
        self.master
    }

    pub fn pick_source(&mut self, rng: &mut RngStreams) -> PickedSource {
        if self.subpools.is_empty() || rng.bernoulli(Stream::ScannerPool, self.master_probability) {
            return PickedSource {
                addr: self.master,
                as_label: self.master_label.clone(),
                master: true,
                recycled: false,
            };
        }
        let u = rng.unit(Stream::ScannerPool);
        let idx = self
            .cumulative
            .iter()
            .position(|c| u < *c)
            .unwrap_or(self.subpools.len() - 1);
        let pool = &mut self.subpools[idx];
        let recycled = pool.drawn >= pool.size;
        let offset = pool.drawn % pool.size;
        pool.drawn += 1;
        PickedSource {
            addr: Ipv4Addr::from(pool.prefix.wrapping_add(offset)),
            as_label: pool.label.clone(),
            master: false,
            recycled,
        }
    }

    /// Whether `addr` belongs to the master or any AS block.
    pub fn owns(&self, addr: Ipv4Addr) -> bool {
        let a = u32::from(addr);
        addr == self.master || self.subpools.iter().any(|p| a.wrapping_sub(p.prefix) < p.size)
    }
}

pub struct Scanner {
    cfg: ScannerConfig,
    pool: ScannerPool,
    pending: BTreeMap<(SimTime, SocketAddrV4), ScanJob>,
    next_job: u64,
}

impl Scanner {
    pub fn new(cfg: ScannerConfig) -> Scanner {
        Scanner {
            pool: ScannerPool::new(&cfg.pool),
            cfg,
            pending: BTreeMap::new(),
            next_job: 0,
        }
    }

    pub fn config(&self) -> &ScannerConfig {
        &self.cfg
    }

    pub fn pool(&self) -> &ScannerPool {
        &self.pool
    }

    fn make_job(
        &mut self,
        kind: ScanKind,
        target: SocketAddrV4,
        detected_at: SimTime,
        slot: SimTime,
        rng: &mut RngStreams,
    ) -> ScanJob {
        let max = self.cfg.load.max_delay(slot);
        let attempt_delay = rng.int_inclusive(Stream::Delays, 0, max);
        let id = self.next_job;
        self.next_job += 1;
        ScanJob {
            id,
            kind,
            target,
            detected_at,
            scheduled_for: slot,
            attempt_delay,
        }
    }

    /// Queues a detected tuple for the next queue multiple strictly after
    /// `detected_at`.
    pub fn enqueue(
        &mut self,
        tuple: SocketAddrV4,
        detected_at: SimTime,
        rng: &mut RngStreams,
        log: &mut EventLog,
    ) -> Enqueued {
        let slot = detected_at.next_multiple_after(QUEUE_PERIOD_S);
        if let Some(job) = self.pending.get(&(slot, tuple)) {
            return Enqueued::Coalesced(job.clone());
        }
        let job = self.make_job(ScanKind::Detect, tuple, detected_at, slot, rng);
        log.push(
            detected_at,
            LogKind::ScanScheduled,
            [
                ("delay", job.attempt_delay.to_string()),
                ("job", job.id.to_string()),
                ("kind", job.kind.as_str().to_string()),
                ("slot", slot.to_string()),
                ("target", tuple.to_string()),
            ],
        );
        self.pending.insert((slot, tuple), job.clone());
        Enqueued::New(job)
    }

    pub fn revalidation_job(&mut self, tuple: SocketAddrV4, slot: SimTime, rng: &mut RngStreams) -> ScanJob {
        self.make_job(ScanKind::Revalidate, tuple, slot, slot, rng)
    }

    /// Removes a detect job from the pending queue once it starts.
    pub fn dequeue(&mut self, job: &ScanJob) {
        self.pending.remove(&(job.scheduled_for, job.target));
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn pick_source(&mut self, rng: &mut RngStreams) -> PickedSource {
        self.pool.pick_source(rng)
    }

    pub fn in_downtime(&self, now: SimTime) -> bool {
        crate::simnet::in_any(&self.cfg.downtime, now)
    }
}
