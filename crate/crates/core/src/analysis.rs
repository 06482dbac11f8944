//! Post-processing over completed event logs.
//!
//! Every function here is a pure function of the log, so reports regenerate
//! byte for byte. CSV columns are fixed and documented on each report.

use std::collections::{BTreeMap, BTreeSet};

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::scenario::Scenario;
use crate::sim;
use crate::simnet::{EventLog, LogKind, LogRecord, SimTime};

pub const SLOT_S: u64 = 900;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("smoothing factor {0} outside [0, 1]")]
    Alpha(f64),
    #[error("series indices must be strictly increasing (index {0})")]
    Unordered(u64),
    #[error("interval index {0} outside 0..=3")]
    Interval(u8),
    #[error("bucket width must be positive")]
    Bucket,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeries {
    points: Vec<(u64, f64)>,
}

impl TimeSeries {
    pub fn new(points: Vec<(u64, f64)>) -> Result<TimeSeries, AnalysisError> {
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(AnalysisError::Unordered(w[1].0));
            }
        }
        Ok(TimeSeries { points })
    }

    /// Points indexed 0, 1, 2, ...
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> TimeSeries {
        TimeSeries {
            points: values.into_iter().enumerate().map(|(i, x)| (i as u64, x)).collect(),
        }
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    alpha: f64,
}

impl SmoothingParams {
    pub fn new(alpha: f64) -> Result<SmoothingParams, AnalysisError> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(SmoothingParams { alpha })
        } else {
            Err(AnalysisError::Alpha(alpha))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Default for SmoothingParams {
    fn default() -> Self {
        SmoothingParams { alpha: 0.05 }
    }
}

/// Simple exponential smoothing with x̂_0 = x̂_1 = x_0 and
/// x̂_t = α·x_{t-1} + (1-α)·x̂_{t-1} afterwards. Indices are carried over.
pub fn exp_smooth(series: &TimeSeries, params: SmoothingParams) -> TimeSeries {
    let a = params.alpha;
    let mut out = Vec::with_capacity(series.len());
    let mut prev = 0.0;
    for (t, &(idx, _)) in series.points.iter().enumerate() {
        let s = if t <= 1 {
            series.points[0].1
        } else {
            a * series.points[t - 1].1 + (1.0 - a) * prev
        };
        out.push((idx, s));
        prev = s;
    }
    TimeSeries { points: out }
}

/// One observed scan connection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanTiming {
    pub time: SimTime,
    pub slot: u64,
    pub minute_of_hour: f64,
}

impl ScanTiming {
    pub fn delay_s(&self) -> u64 {
        self.time.0 - self.slot
    }

    pub fn interval(&self) -> u8 {
        (self.minute_of_hour / 15.0) as u8
    }
}

pub fn scan_timings(log: &EventLog) -> Vec<ScanTiming> {
    log.of_kind(LogKind::ScanStarted)
        .map(|r| {
            let t = r.time.0;
            ScanTiming {
                time: r.time,
                slot: r.get_u64("slot").unwrap_or(t - t % SLOT_S),
                minute_of_hour: (t % 3600) as f64 / 60.0,
            }
        })
        .collect()
}

/// Minute-of-hour of every scan whose minute falls in [15k, 15k+15), in
/// arrival order.
pub fn scan_timing_series(log: &EventLog, k: u8) -> Result<TimeSeries, AnalysisError> {
    if k > 3 {
        return Err(AnalysisError::Interval(k));
    }
    Ok(TimeSeries::from_values(
        scan_timings(log)
            .into_iter()
            .filter(|s| s.interval() == k)
            .map(|s| s.minute_of_hour),
    ))
}

/// Connections established by inside-china clients per bucket. The series
/// covers [0, last record time] and is indexed by bucket start.
pub fn usage_curve(log: &EventLog, bucket_s: u64) -> Result<TimeSeries, AnalysisError> {
    let end = log.records().last().map(|r| r.time.0 + 1).unwrap_or(0);
    usage_curve_until(log, bucket_s, end)
}

pub fn usage_curve_until(log: &EventLog, bucket_s: u64, end_s: u64) -> Result<TimeSeries, AnalysisError> {
    if bucket_s == 0 {
        return Err(AnalysisError::Bucket);
    }
    let n = end_s.div_ceil(bucket_s) as usize;
    let mut counts = vec![0u64; n];
    for r in log.of_kind(LogKind::ConnectionEstablished) {
        if r.get("region") == Some("inside-china") && r.time.0 < end_s {
            counts[(r.time.0 / bucket_s) as usize] += 1;
        }
    }
    Ok(TimeSeries {
        points: counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (i as u64 * bucket_s, c as f64))
            .collect(),
    })
}

/// Sample autocorrelation at `lag`, normalized by the lag-0 sum.
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    if xs.len() <= lag {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let denom: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    if denom == 0.0 {
        return 0.0;
    }
    let num: f64 = xs.windows(lag + 1).map(|w| (w[0] - mean) * (w[lag] - mean)).sum();
    num / denom
}

/// Mean of the values falling into each hour of [start, end); empty hours
/// repeat the previous hour's mean.
pub fn resample_hourly(times: &[SimTime], values: &[f64], start_s: u64, end_s: u64) -> Vec<f64> {
    let hours = end_s.saturating_sub(start_s).div_ceil(3600) as usize;
    let mut sums = vec![(0.0, 0u32); hours];
    for (t, v) in times.iter().zip(values) {
        if t.0 >= start_s && t.0 < end_s {
            let h = ((t.0 - start_s) / 3600) as usize;
            sums[h].0 += v;
            sums[h].1 += 1;
        }
    }
    let first = sums.iter().find(|s| s.1 > 0).map(|s| s.0 / s.1 as f64).unwrap_or(0.0);
    let mut last = first;
    sums.into_iter()
        .map(|(s, c)| {
            if c > 0 {
                last = s / c as f64;
            }
            last
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for mean_a > mean_b.
    pub p_greater: f64,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let (sa, sb) = (va / na, vb / nb);
    let se = (sa + sb).sqrt();
    if se == 0.0 {
        return None;
    }
    let t = (ma - mb) / se;
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(WelchTest {
        mean_a: ma,
        mean_b: mb,
        t,
        df,
        p_greater: 1.0 - dist.cdf(t),
    })
}

/// Named metrics and CSV tables derived from one log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub inputs: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, String>,
    pub tables: BTreeMap<String, String>,
}

impl ExperimentReport {
    pub fn new(name: &str) -> ExperimentReport {
        ExperimentReport {
            name: name.to_string(),
            ..ExperimentReport::default()
        }
    }

    pub fn input(&mut self, key: &str, value: impl ToString) {
        self.inputs.insert(key.to_string(), value.to_string());
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.metrics.insert(key.to_string(), value.to_string());
    }

    pub fn set_f(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), format!("{value:.6}"));
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key)?.parse().ok()
    }

    pub fn summary_text(&self) -> String {
        let mut out = format!("[report]\nname = {}\n", self.name);
        for (k, v) in &self.inputs {
            out.push_str(&format!("input.{k} = {v}\n"));
        }
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for k in self.tables.keys() {
            out.push_str(&format!("table = {k}\n"));
        }
        out
    }
}

fn csv_table<R>(header: &[&str], rows: impl IntoIterator<Item = R>) -> String
where
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

fn is_evening(hour: u64) -> bool {
    (18..24).contains(&hour)
}

fn is_night(hour: u64) -> bool {
    (2..6).contains(&hour)
}

/// `timing`: one row per scan (`time_s,slot_s,delay_s,minute`) plus the
/// evening-versus-night delay comparison.
pub fn timing_report(log: &EventLog) -> ExperimentReport {
    let scans = scan_timings(log);
    let mut rep = ExperimentReport::new("timing");
    rep.set("scans", scans.len());
    let max_offset = scans
        .iter()
        .map(|s| s.minute_of_hour - 15.0 * s.interval() as f64)
        .fold(0.0, f64::max);
    rep.set_f("max-minute-offset", max_offset);
    let delays = |pred: fn(u64) -> bool| -> Vec<f64> {
        scans
            .iter()
            .filter(|s| pred(s.slot / 3600 % 24))
            .map(|s| s.delay_s() as f64)
            .collect()
    };
    let (evening, night) = (delays(is_evening), delays(is_night));
    rep.set("evening-scans", evening.len());
    rep.set("night-scans", night.len());
    if let Some(w) = welch_t_test(&evening, &night) {
        rep.set_f("evening-mean-delay-s", w.mean_a);
        rep.set_f("night-mean-delay-s", w.mean_b);
        rep.set_f("welch-t", w.t);
        rep.set_f("welch-df", w.df);
        rep.set_f("welch-p-greater", w.p_greater);
    }
    rep.tables.insert(
        "timing.csv".into(),
        csv_table(
            &["time_s", "slot_s", "delay_s", "minute"],
            scans.iter().map(|s| {
                [
                    s.time.0.to_string(),
                    s.slot.to_string(),
                    s.delay_s().to_string(),
                    format!("{:.3}", s.minute_of_hour),
                ]
            }),
        ),
    );
    rep
}

/// `smooth`: the four interval series and their smoothing, one CSV per
/// interval (`index,time_s,minute,smoothed`). Metrics include the hourly
/// autocorrelation of each smoothed series at 12 h and 24 h lags.
pub fn smooth_report(log: &EventLog, params: SmoothingParams) -> ExperimentReport {
    let scans = scan_timings(log);
    let mut rep = ExperimentReport::new("smooth");
    rep.input("alpha", params.alpha());
    let (start, end) = match (scans.first(), scans.last()) {
        (Some(a), Some(b)) => (a.time.0 - a.time.0 % 3600, b.time.0 + 1),
        _ => (0, 0),
    };
    for k in 0..4u8 {
        let picked: Vec<&ScanTiming> = scans.iter().filter(|s| s.interval() == k).collect();
        let raw = TimeSeries::from_values(picked.iter().map(|s| s.minute_of_hour));
        let smooth = exp_smooth(&raw, params);
        let times: Vec<SimTime> = picked.iter().map(|s| s.time).collect();
        let hourly = resample_hourly(&times, &smooth.values(), start, end);
        rep.set(&format!("k{k}.scans"), picked.len());
        rep.set_f(&format!("k{k}.acf-12h"), autocorrelation(&hourly, 12));
        rep.set_f(&format!("k{k}.acf-24h"), autocorrelation(&hourly, 24));
        rep.tables.insert(
            format!("smooth-k{k}.csv"),
            csv_table(
                &["index", "time_s", "minute", "smoothed"],
                picked.iter().zip(smooth.points()).map(|(s, (i, x))| {
                    [
                        i.to_string(),
                        s.time.0.to_string(),
                        format!("{:.3}", s.minute_of_hour),
                        format!("{x:.6}"),
                    ]
                }),
            ),
        );
    }
    rep
}

/// `usage`: `bucket_start_s,count` over inside-china established connections.
pub fn usage_report(log: &EventLog, bucket_s: u64) -> Result<ExperimentReport, AnalysisError> {
    let curve = usage_curve(log, bucket_s)?;
    let mut rep = ExperimentReport::new("usage-curve");
    rep.input("bucket-s", bucket_s);
    rep.set("buckets", curve.len());
    rep.set("total", curve.values().iter().sum::<f64>() as u64);
    rep.tables.insert(
        "usage.csv".into(),
        csv_table(
            &["bucket_start_s", "count"],
            curve
                .points()
                .iter()
                .map(|(t, c)| [t.to_string(), (*c as u64).to_string()]),
        ),
    );
    Ok(rep)
}

/// Outcome of each probe, keyed by (client, attempt, destination).
fn probe_outcomes(log: &EventLog) -> BTreeMap<(String, u64, String), (String, bool)> {
    let mut out = BTreeMap::new();
    for r in log.records() {
        let ok = match r.kind {
            LogKind::ConnectionEstablished => true,
            LogKind::ConnectionFailed => false,
            _ => continue,
        };
        let key = (
            r.get("client").unwrap_or_default().to_string(),
            r.get_u64("attempt").unwrap_or(0),
            r.get("dst").unwrap_or_default().to_string(),
        );
        out.insert(key, (r.get("region").unwrap_or_default().to_string(), ok));
    }
    out
}

/// `reachability`: per-probe table (`client,region,attempt,dst,reachable`)
/// plus counts for inside-china probes. With two or more rounds the
/// destinations reachable in the first round are re-checked in the last.
pub fn reachability_report(log: &EventLog) -> ExperimentReport {
    let probes = probe_outcomes(log);
    let mut rep = ExperimentReport::new("reachability");
    let inside = |r: &str| r == "inside-china";
    let rounds: BTreeSet<u64> = probes.keys().map(|k| k.1).collect();
    let first = rounds.first().copied().unwrap_or(0);
    let last = rounds.last().copied().unwrap_or(0);
    let reach_in = |round: u64, want_inside: bool| -> (BTreeSet<&str>, BTreeSet<&str>) {
        let mut all = BTreeSet::new();
        let mut ok = BTreeSet::new();
        for ((_, a, dst), (region, good)) in &probes {
            if *a == round && inside(region) == want_inside {
                all.insert(dst.as_str());
                if *good {
                    ok.insert(dst.as_str());
                }
            }
        }
        (all, ok)
    };
    let (all, ok) = reach_in(first, true);
    rep.set("rounds", rounds.len());
    rep.set("probed", all.len());
    rep.set("reachable-count", ok.len());
    rep.set("unreachable-count", all.len() - ok.len());
    rep.set_f(
        "reachable-fraction",
        if all.is_empty() {
            0.0
        } else {
            ok.len() as f64 / all.len() as f64
        },
    );
    let (out_all, out_ok) = reach_in(first, false);
    if !out_all.is_empty() {
        rep.set("outside-probed", out_all.len());
        rep.set("outside-reachable-count", out_ok.len());
    }
    if rounds.len() > 1 {
        let (_, again) = reach_in(last, true);
        rep.set("still-reachable-after-reingest", ok.intersection(&again).count());
    }
    rep.tables.insert(
        "reachability.csv".into(),
        csv_table(
            &["client", "region", "attempt", "dst", "reachable"],
            probes.iter().map(|((c, a, d), (region, good))| {
                [c.clone(), region.clone(), a.to_string(), d.clone(), good.to_string()]
            }),
        ),
    );
    rep
}

/// Runs a scenario and summarizes its probe outcomes.
pub fn run_reachability_experiment(scenario: &Scenario, seed: Option<u64>) -> ExperimentReport {
    let out = sim::run(scenario, seed);
    let mut rep = reachability_report(&out.log);
    rep.input("scenario", &scenario.meta.name);
    rep.input("seed", out.seed);
    rep
}

fn attr_is(r: &LogRecord, key: &str, value: &str) -> bool {
    r.get(key) == Some(value)
}

/// `scanner-stats`: source-address statistics over all scan connections.
/// Tables: `as.csv` (`as,addresses,fraction`) over distinct source
/// addresses and `ttl-delta.csv` (`delta,count`) over ping replies.
pub fn scanner_distribution_stats(log: &EventLog) -> ExperimentReport {
    let scans: Vec<&LogRecord> = log.of_kind(LogKind::ScanStarted).collect();
    let mut rep = ExperimentReport::new("scanner-stats");
    let n = scans.len();
    let master = scans.iter().filter(|r| attr_is(r, "master", "true")).count();
    let fresh: Vec<&&LogRecord> = scans
        .iter()
        .filter(|r| attr_is(r, "master", "false") && attr_is(r, "recycled", "false"))
        .collect();
    let fresh_unique: BTreeSet<&str> = fresh.iter().filter_map(|r| r.get("src")).collect();
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    rep.set("scans", n);
    rep.set("master-scans", master);
    rep.set_f("master-fraction", frac(master, n));
    rep.set_f("unique-fraction", frac(fresh_unique.len(), fresh.len()));

    let mut by_addr: BTreeMap<&str, &str> = BTreeMap::new();
    for r in &scans {
        if let (Some(src), Some(asn)) = (r.get("src"), r.get("as")) {
            by_addr.insert(src, asn);
        }
    }
    let mut as_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for asn in by_addr.values() {
        *as_counts.entry(asn).or_default() += 1;
    }
    rep.set("distinct-sources", by_addr.len());
    for (asn, c) in &as_counts {
        rep.set_f(&format!("as.{asn}"), frac(*c, by_addr.len()));
    }

    let replies: Vec<&LogRecord> = log.of_kind(LogKind::PingReply).collect();
    rep.set_f("live-host-fraction", frac(replies.len(), n));
    let mut deltas: BTreeMap<i64, usize> = BTreeMap::new();
    for r in &replies {
        if let Some(d) = r.get_i64("delta") {
            *deltas.entry(d).or_default() += 1;
        }
    }
    if let Some((mode, _)) = deltas.iter().max_by_key(|(d, c)| (**c, std::cmp::Reverse(**d))) {
        rep.set("ttl-delta-mode", mode);
    }
    rep.tables.insert(
        "as.csv".into(),
        csv_table(
            &["as", "addresses", "fraction"],
            as_counts
                .iter()
                .map(|(a, c)| [a.to_string(), c.to_string(), format!("{:.6}", frac(*c, by_addr.len()))]),
        ),
    );
    rep.tables.insert(
        "ttl-delta.csv".into(),
        csv_table(
            &["delta", "count"],
            deltas.iter().map(|(d, c)| [d.to_string(), c.to_string()]),
        ),
    );
    rep
}
