//! Simplified TCP: three-way handshake, cumulative byte sequencing,
//! go-back-N retransmission with configurable retry counts and backoff, and
//! senders that honor the peer's advertised window. No SACK, no congestion
//! control.
//!
//! The control block is sans-IO: every call returns the [`TcpEvent`]s the
//! host must act on.

use std::net::SocketAddrV4;

use serde::{Deserialize, Serialize};

use super::{Flags, Segment, SimTime};
use crate::evasion::fragment_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backoff {
    /// `rto * 2^k` before the k-th retransmission.
    Doubling,
    Fixed,
}

impl Backoff {
    fn delay(self, base: u64, retransmissions: u32) -> u64 {
        match self {
            Backoff::Doubling => base << retransmissions.min(20),
            Backoff::Fixed => base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct TcpConfig {
    pub mss: u16,
    /// Advertised receive window.
    pub window: u16,
    /// SYN (and SYN/ACK) retransmissions before giving up.
    pub syn_retries: u32,
    pub syn_rto_s: u64,
    pub syn_backoff: Backoff,
    pub data_rto_s: u64,
    pub data_retries: u32,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig {
            mss: 1460,
            window: 65535,
            syn_retries: 5,
            syn_rto_s: 1,
            syn_backoff: Backoff::Doubling,
            data_rto_s: 3,
            data_retries: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpState {
    SynSent,
    SynReceived,
    Established,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloseReason {
    Timeout,
    Reset,
    Fin,
}

impl CloseReason {
    pub fn as_str(self) -> &'static str {
        match self {
            CloseReason::Timeout => "timeout",
            CloseReason::Reset => "rst",
            CloseReason::Fin => "fin",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TcpEvent {
    Send(Segment),
    ArmTimer { at: SimTime, generation: u64 },
    Established,
    Data(Vec<u8>),
    Closed(CloseReason),
}

#[derive(Debug, Clone)]
pub struct Tcb {
    pub local: SocketAddrV4,
    pub remote: SocketAddrV4,
    pub state: TcpState,
    cfg: TcpConfig,
    iss: u32,
    snd_una: u32,
    snd_nxt: u32,
    /// Bytes from `snd_una` onwards: unacknowledged then unsent.
    send_buf: Vec<u8>,
    rcv_nxt: u32,
    peer_window: u16,
    retransmissions: u32,
    timer_gen: u64,
    timer_armed: bool,
    syns_sent: u32,
}

impl Tcb {
    /// Active open: emits the SYN.
    pub fn connect(
        local: SocketAddrV4,
        remote: SocketAddrV4,
        cfg: TcpConfig,
        iss: u32,
        now: SimTime,
    ) -> (Tcb, Vec<TcpEvent>) {
        let mut tcb = Tcb::blank(local, remote, cfg, iss, TcpState::SynSent);
        let mut out = Vec::new();
        tcb.send_syn(&mut out);
        tcb.arm(now + cfg.syn_rto_s, &mut out);
        (tcb, out)
    }

    /// Passive open in response to `syn`: emits the SYN/ACK.
    pub fn accept(syn: &Segment, cfg: TcpConfig, iss: u32, now: SimTime) -> (Tcb, Vec<TcpEvent>) {
        let mut tcb = Tcb::blank(syn.dst, syn.src, cfg, iss, TcpState::SynReceived);
        tcb.rcv_nxt = syn.seq.wrapping_add(1);
        tcb.peer_window = syn.window;
        let mut out = Vec::new();
        tcb.send_syn(&mut out);
        tcb.arm(now + cfg.syn_rto_s, &mut out);
        (tcb, out)
    }

    fn blank(local: SocketAddrV4, remote: SocketAddrV4, cfg: TcpConfig, iss: u32, state: TcpState) -> Tcb {
        Tcb {
            local,
            remote,
            state,
            cfg,
            iss,
            snd_una: iss.wrapping_add(1),
            snd_nxt: iss.wrapping_add(1),
            send_buf: Vec::new(),
            rcv_nxt: 0,
            peer_window: 0,
            retransmissions: 0,
            timer_gen: 0,
            timer_armed: false,
            syns_sent: 0,
        }
    }

    pub fn peer_window(&self) -> u16 {
        self.peer_window
    }

    pub fn syns_sent(&self) -> u32 {
        self.syns_sent
    }

    pub fn is_closed(&self) -> bool {
        self.state == TcpState::Closed
    }

    fn segment(&self, flags: Flags) -> Segment {
        let mut seg = Segment::tcp(self.local, self.remote, flags);
        seg.window = self.cfg.window;
        seg.ack = if flags.contains(Flags::ACK) { self.rcv_nxt } else { 0 };
        seg
    }

    fn send_syn(&mut self, out: &mut Vec<TcpEvent>) {
        let flags = match self.state {
            TcpState::SynSent => Flags::SYN,
            _ => Flags::SYN_ACK,
        };
        let mut seg = self.segment(flags);
        seg.seq = self.iss;
        self.syns_sent += 1;
        out.push(TcpEvent::Send(seg));
    }

    fn send_ack(&self, out: &mut Vec<TcpEvent>) {
        let mut seg = self.segment(Flags::ACK);
        seg.seq = self.snd_nxt;
        out.push(TcpEvent::Send(seg));
    }

    fn arm(&mut self, at: SimTime, out: &mut Vec<TcpEvent>) {
        self.timer_gen += 1;
        self.timer_armed = true;
        out.push(TcpEvent::ArmTimer {
            at,
            generation: self.timer_gen,
        });
    }

    fn disarm(&mut self) {
        self.timer_gen += 1;
        self.timer_armed = false;
    }

    fn close_with(&mut self, reason: CloseReason, out: &mut Vec<TcpEvent>) {
        self.state = TcpState::Closed;
        self.disarm();
        out.push(TcpEvent::Closed(reason));
    }

    /// Queue application bytes for transmission.
    pub fn send(&mut self, bytes: &[u8], now: SimTime) -> Vec<TcpEvent> {
        let mut out = Vec::new();
        if self.state == TcpState::Closed {
            return out;
        }
        self.send_buf.extend_from_slice(bytes);
        if self.state == TcpState::Established {
            self.transmit(now, &mut out);
        }
        out
    }

    /// Local close: a single FIN, no lingering state.
    pub fn close(&mut self) -> Vec<TcpEvent> {
        let mut out = Vec::new();
        if self.state == TcpState::Established {
            let mut seg = self.segment(Flags::FIN | Flags::ACK);
            seg.seq = self.snd_nxt;
            out.push(TcpEvent::Send(seg));
        }
        self.state = TcpState::Closed;
        self.disarm();
        out
    }

    pub fn all_acked(&self) -> bool {
        self.send_buf.is_empty()
    }

    fn transmit(&mut self, now: SimTime, out: &mut Vec<TcpEvent>) {
        let in_flight = self.snd_nxt.wrapping_sub(self.snd_una) as usize;
        let window_end = (self.peer_window as usize).min(self.send_buf.len());
        if window_end <= in_flight {
            return;
        }
        let sendable = &self.send_buf[in_flight..window_end];
        let mut sent_any = false;
        for chunk in fragment_stream(sendable, self.cfg.mss as usize) {
            let mut seg = self.segment(Flags::ACK);
            seg.seq = self.snd_nxt;
            self.snd_nxt = self.snd_nxt.wrapping_add(chunk.len() as u32);
            seg.payload = chunk;
            out.push(TcpEvent::Send(seg));
            sent_any = true;
        }
        if sent_any && !self.timer_armed {
            let rto = Backoff::Doubling.delay(self.cfg.data_rto_s, self.retransmissions);
            self.arm(now + rto, out);
        }
    }

    pub fn on_segment(&mut self, seg: &Segment, now: SimTime) -> Vec<TcpEvent> {
        let mut out = Vec::new();
        if self.state == TcpState::Closed {
            return out;
        }
        if seg.flags.contains(Flags::RST) {
            self.close_with(CloseReason::Reset, &mut out);
            return out;
        }
        match self.state {
            TcpState::SynSent => {
                if seg.flags.is_syn_ack() && seg.ack == self.iss.wrapping_add(1) {
                    self.rcv_nxt = seg.seq.wrapping_add(1);
                    self.peer_window = seg.window;
                    self.state = TcpState::Established;
                    self.retransmissions = 0;
                    self.disarm();
                    self.send_ack(&mut out);
                    out.push(TcpEvent::Established);
                    self.transmit(now, &mut out);
                }
            }
            TcpState::SynReceived => {
                if seg.flags.is_syn_only() {
                    // peer retransmitted its SYN; repeat our SYN/ACK
                    self.send_syn(&mut out);
                } else if seg.flags.contains(Flags::ACK) && seg.ack == self.iss.wrapping_add(1) {
                    self.state = TcpState::Established;
                    self.retransmissions = 0;
                    self.disarm();
                    out.push(TcpEvent::Established);
                    self.established_segment(seg, now, &mut out);
                }
            }
            TcpState::Established => {
                if seg.flags.is_syn_ack() {
                    // our handshake ACK was lost
                    self.send_ack(&mut out);
                } else if !seg.flags.contains(Flags::SYN) {
                    self.established_segment(seg, now, &mut out);
                }
            }
            TcpState::Closed => {}
        }
        out
    }

    fn established_segment(&mut self, seg: &Segment, now: SimTime, out: &mut Vec<TcpEvent>) {
        if seg.flags.contains(Flags::ACK) {
            self.peer_window = seg.window;
            let acked = seg.ack.wrapping_sub(self.snd_una);
            let outstanding = self.snd_nxt.wrapping_sub(self.snd_una);
            if acked > 0 && acked <= outstanding {
                self.send_buf.drain(..acked as usize);
                self.snd_una = seg.ack;
                self.retransmissions = 0;
                self.disarm();
            }
        }
        if !seg.payload.is_empty() {
            if seg.seq == self.rcv_nxt {
                self.rcv_nxt = self.rcv_nxt.wrapping_add(seg.payload.len() as u32);
                self.send_ack(out);
                out.push(TcpEvent::Data(seg.payload.clone()));
            } else {
                // duplicate or out of order: re-ACK what we have
                self.send_ack(out);
            }
        }
        if seg.flags.contains(Flags::FIN) {
            self.close_with(CloseReason::Fin, out);
            return;
        }
        self.transmit(now, out);
        if self.snd_nxt != self.snd_una && !self.timer_armed {
            let rto = Backoff::Doubling.delay(self.cfg.data_rto_s, self.retransmissions);
            self.arm(now + rto, out);
        }
    }

    pub fn on_timer(&mut self, generation: u64, now: SimTime) -> Vec<TcpEvent> {
        let mut out = Vec::new();
        if !self.timer_armed || generation != self.timer_gen || self.state == TcpState::Closed {
            return out;
        }
        self.timer_armed = false;
        match self.state {
            TcpState::SynSent | TcpState::SynReceived => {
                if self.retransmissions < self.cfg.syn_retries {
                    self.retransmissions += 1;
                    self.send_syn(&mut out);
                    let rto = self.cfg.syn_backoff.delay(self.cfg.syn_rto_s, self.retransmissions);
                    self.arm(now + rto, &mut out);
                } else {
                    self.close_with(CloseReason::Timeout, &mut out);
                }
            }
            TcpState::Established => {
                if self.snd_nxt == self.snd_una {
                    return out;
                }
                if self.retransmissions < self.cfg.data_retries {
                    self.retransmissions += 1;
                    self.snd_nxt = self.snd_una;
                    self.transmit(now, &mut out);
                } else {
                    self.close_with(CloseReason::Timeout, &mut out);
                }
            }
            TcpState::Closed => {}
        }
        out
    }
}
