use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use super::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LogKind {
    SegmentSent,
    SegmentDropped,
    SegmentDelivered,
    RstInjected,
    ScanScheduled,
    ScanStarted,
    ScanSucceeded,
    ScanFailed,
    BlockAdded,
    BlockRemoved,
    ConnectionEstablished,
    ConnectionFailed,
    /// A scanner address began answering pings after its scan finished.
    PingReply,
}

impl LogKind {
    pub const ALL: [LogKind; 13] = [
        LogKind::SegmentSent,
        LogKind::SegmentDropped,
        LogKind::SegmentDelivered,
        LogKind::RstInjected,
        LogKind::ScanScheduled,
        LogKind::ScanStarted,
        LogKind::ScanSucceeded,
        LogKind::ScanFailed,
        LogKind::BlockAdded,
        LogKind::BlockRemoved,
        LogKind::ConnectionEstablished,
        LogKind::ConnectionFailed,
        LogKind::PingReply,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LogKind::SegmentSent => "segment-sent",
            LogKind::SegmentDropped => "segment-dropped",
            LogKind::SegmentDelivered => "segment-delivered",
            LogKind::RstInjected => "rst-injected",
            LogKind::ScanScheduled => "scan-scheduled",
            LogKind::ScanStarted => "scan-started",
            LogKind::ScanSucceeded => "scan-succeeded",
            LogKind::ScanFailed => "scan-failed",
            LogKind::BlockAdded => "block-added",
            LogKind::BlockRemoved => "block-removed",
            LogKind::ConnectionEstablished => "connection-established",
            LogKind::ConnectionFailed => "connection-failed",
            LogKind::PingReply => "ping-reply",
        }
    }
}

impl fmt::Display for LogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LogKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        LogKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub time: SimTime,
    pub kind: LogKind,
    pub attrs: BTreeMap<String, String>,
}

impl LogRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn get_i64(&self, key: &str) -> Option<i64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    /// `<time>\t<kind>\t<key>=<value>...`, keys in lexicographic order.
    pub fn write_line(&self, out: &mut String) {
        let _ = write!(out, "{}\t{}", self.time, self.kind);
        for (k, v) in &self.attrs {
            out.push('\t');
            out.push_str(k);
            out.push('=');
            escape_into(v, out);
        }
        out.push('\n');
    }
}

fn escape_into(v: &str, out: &mut String) {
    for c in v.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
}

fn unescape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("event log line {line}: {reason}")]
pub struct ParseLogError {
    pub line: usize,
    pub reason: String,
}

/// Append-only record of everything observable in a run.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> EventLog {
        EventLog::default()
    }

    pub fn push<I, K, V>(&mut self, time: SimTime, kind: LogKind, attrs: I)
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: ToString,
    {
        if let Some(last) = self.records.last() {
            assert!(
                last.time <= time,
                "event log out of order: {} after {}",
                time,
                last.time
            );
        }
        let attrs = attrs.into_iter().map(|(k, v)| (k.into(), v.to_string())).collect();
        self.records.push(LogRecord { time, kind, attrs });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn of_kind(&self, kind: LogKind) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn count(&self, kind: LogKind) -> usize {
        self.of_kind(kind).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 64);
        for r in &self.records {
            r.write_line(&mut out);
        }
        out
    }

    pub fn parse(text: &str) -> Result<EventLog, ParseLogError> {
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| ParseLogError {
                line: idx + 1,
                reason: reason.to_string(),
            };
            let mut fields = line.split('\t');
            let time = fields
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err("bad time"))?;
            let kind = fields
                .next()
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| err("unknown kind"))?;
            let mut attrs = BTreeMap::new();
            for field in fields {
                let (k, v) = field.split_once('=').ok_or_else(|| err("attribute without '='"))?;
                attrs.insert(k.to_string(), unescape(v));
            }
            records.push(LogRecord {
                time: SimTime(time),
                kind,
                attrs,
            });
        }
        Ok(EventLog { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_sorted_in_text_form() {
        let mut log = EventLog::new();
        log.push(
            SimTime(5),
            LogKind::BlockAdded,
            [("tuple", "1.2.3.4:443"), ("mode", "synack-drop")],
        );
        assert_eq!(log.to_text(), "5\tblock-added\tmode=synack-drop\ttuple=1.2.3.4:443\n");
    }

    #[test]
    fn text_round_trip_with_escapes() {
        let mut log = EventLog::new();
        log.push(SimTime(0), LogKind::ConnectionFailed, [("reason", "a\tb\\c\nd")]);
        log.push(SimTime(0), LogKind::ScanStarted, Vec::<(String, String)>::new());
        let parsed = EventLog::parse(&log.to_text()).unwrap();
        assert_eq!(parsed.records(), log.records());
    }

    #[test]
    #[should_panic(expected = "out of order")]
    fn rejects_time_going_backwards() {
        let mut log = EventLog::new();
        log.push(SimTime(10), LogKind::ScanStarted, [("a", "b")]);
        log.push(SimTime(9), LogKind::ScanStarted, [("a", "b")]);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = EventLog::parse("1\tscan-started\n2\tbogus\n").unwrap_err();
        assert_eq!(err.line, 2);
    }
}
