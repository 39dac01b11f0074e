//! Discrete-event engine: integer-microsecond virtual clock, a `(fire_at, seq)`
//! ordered event queue, dispatch traces and per-component random streams.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Virtual time in integer microseconds.
pub type Micros = u64;

/// Half-up rounding of a non-negative microsecond quantity.
pub fn round_us(value: f64) -> Micros {
    if value <= 0.0 || !value.is_finite() {
        0
    } else {
        (value + 0.5).floor() as Micros
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: Micros,
}

impl VirtualClock {
    pub fn now(&self) -> Micros {
        self.now
    }

    fn advance_to(&mut self, t: Micros) {
        debug_assert!(t >= self.now, "clock moved backwards: {} -> {}", self.now, t);
        self.now = t;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    PacketArrival,
    RpcComplete,
    SchedulerTick,
    InstanceReady,
    ServiceComplete,
    LoadArrival,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::PacketArrival => "packet-arrival",
            EventKind::RpcComplete => "rpc-complete",
            EventKind::SchedulerTick => "scheduler-tick",
            EventKind::InstanceReady => "instance-ready",
            EventKind::ServiceComplete => "service-complete",
            EventKind::LoadArrival => "load-arrival",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub fire_at: Micros,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: P,
}

/// Payloads describe themselves for trace records.
pub trait TraceDetail {
    fn detail(&self) -> String;
}

impl TraceDetail for () {
    fn detail(&self) -> String {
        String::new()
    }
}

impl TraceDetail for &'static str {
    fn detail(&self) -> String {
        (*self).to_string()
    }
}

impl TraceDetail for u64 {
    fn detail(&self) -> String {
        self.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time_us: Micros,
    pub kind: EventKind,
    pub detail: String,
}

/// Dispatch history. Every dispatch is counted; records are only retained when
/// recording is enabled on the engine.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub dispatched: u64,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// SHA-256 over the `time_us,kind,detail` lines.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for r in &self.records {
            hasher.update(format!("{},{},{}\n", r.time_us, r.kind, r.detail).as_bytes());
        }
        hex(&hasher.finalize())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time_us,kind,detail")?;
        for r in &self.records {
            writeln!(out, "{},{},{}", r.time_us, r.kind, r.detail)?;
        }
        Ok(())
    }

    pub fn extend(&mut self, other: Trace) {
        self.dispatched += other.dispatched;
        self.records.extend(other.records);
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
struct Queued<P> {
    fire_at: Micros,
    seq: u64,
    kind: EventKind,
    payload: P,
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.fire_at, self.seq) == (other.fire_at, other.seq)
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

/// Event queue plus clock. Handlers drive it with [`Engine::next_until`] so
/// they can own the rest of the simulation state.
#[derive(Debug)]
pub struct Engine<P> {
    clock: VirtualClock,
    heap: BinaryHeap<Reverse<Queued<P>>>,
    next_seq: u64,
    scheduled: u64,
    dispatched: u64,
    record: bool,
    trace: Trace,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Engine {
            clock: VirtualClock::default(),
            heap: BinaryHeap::new(),
            next_seq: 0,
            scheduled: 0,
            dispatched: 0,
            record: false,
            trace: Trace::default(),
        }
    }

    pub fn with_recording(mut self, record: bool) -> Self {
        self.record = record;
        self
    }

    pub fn now(&self) -> Micros {
        self.clock.now()
    }

    pub fn clock(&self) -> VirtualClock {
        self.clock
    }

    pub fn scheduled_count(&self) -> u64 {
        self.scheduled
    }

    pub fn dispatched_count(&self) -> u64 {
        self.dispatched
    }

    pub fn queued_count(&self) -> u64 {
        self.heap.len() as u64
    }

    pub fn peek_time(&self) -> Option<Micros> {
        self.heap.peek().map(|Reverse(q)| q.fire_at)
    }

    /// Enqueue an event. Scheduling into the past is a contract violation.
    pub fn schedule(&mut self, fire_at: Micros, kind: EventKind, payload: P) -> Result<u64> {
        if fire_at < self.clock.now() {
            return Err(Error::PastTimestamp {
                fire_at,
                now: self.clock.now(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.scheduled += 1;
        self.heap.push(Reverse(Queued {
            fire_at,
            seq,
            kind,
            payload,
        }));
        Ok(seq)
    }

    /// Schedule `delay` microseconds after now; never fails.
    pub fn schedule_in(&mut self, delay: Micros, kind: EventKind, payload: P) -> u64 {
        let at = self.clock.now() + delay;
        self.schedule(at, kind, payload)
            .expect("relative schedule cannot be in the past")
    }

    /// Take the earliest event if it fires at or before `t_end`, advancing the clock.
    pub fn next_until(&mut self, t_end: Micros) -> Option<Event<P>>
    where
        P: TraceDetail,
    {
        match self.heap.peek() {
            Some(Reverse(q)) if q.fire_at <= t_end => {}
            _ => return None,
        }
        let Reverse(q) = self.heap.pop()?;
        self.clock.advance_to(q.fire_at);
        self.dispatched += 1;
        self.trace.dispatched += 1;
        if self.record {
            self.trace.records.push(TraceRecord {
                time_us: q.fire_at,
                kind: q.kind,
                detail: q.payload.detail(),
            });
        }
        Some(Event {
            fire_at: q.fire_at,
            seq: q.seq,
            kind: q.kind,
            payload: q.payload,
        })
    }

    /// Move the clock forward with no dispatch. Used to close a `run_until` window.
    pub fn advance_idle(&mut self, t: Micros) {
        if t > self.clock.now() {
            self.clock.advance_to(t);
        }
    }

    /// Hand back the trace accumulated since the last call.
    pub fn take_trace(&mut self) -> Trace {
        std::mem::take(&mut self.trace)
    }

    /// Dispatch every event with `fire_at <= t_end` through `handler`.
    ///
    /// The clock ends at `t_end`; events beyond it stay queued.
    pub fn run_until<F>(&mut self, t_end: Micros, mut handler: F) -> Result<Trace>
    where
        P: TraceDetail,
        F: FnMut(&mut Engine<P>, Event<P>) -> Result<()>,
    {
        if t_end < self.clock.now() {
            return Err(Error::PastTimestamp {
                fire_at: t_end,
                now: self.clock.now(),
            });
        }
        while let Some(ev) = self.next_until(t_end) {
            handler(self, ev)?;
        }
        self.advance_idle(t_end);
        Ok(self.take_trace())
    }
}

/// Distribution specification, in microseconds where it denotes time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Constant { value: f64 },
    Exponential { rate: f64 },
    /// `mu` and `sigma` of the underlying normal.
    Lognormal { mu: f64, sigma: f64 },
}

impl Dist {
    pub fn constant(value: f64) -> Self {
        Dist::Constant { value }
    }

    pub fn exponential_mean(mean: f64) -> Self {
        Dist::Exponential { rate: 1.0 / mean }
    }

    pub fn lognormal_median(median: f64, sigma: f64) -> Self {
        Dist::Lognormal {
            mu: median.ln(),
            sigma,
        }
    }

    /// Lognormal with the given arithmetic mean.
    pub fn lognormal_mean(mean: f64, sigma: f64) -> Self {
        Dist::Lognormal {
            mu: mean.ln() - sigma * sigma / 2.0,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Dist::Constant { value } if !value.is_finite() => {
                Err(Error::InvalidDistribution(format!("constant value {value}")))
            }
            Dist::Exponential { rate } if !(rate.is_finite() && rate > 0.0) => {
                Err(Error::InvalidDistribution(format!("exponential rate {rate}")))
            }
            Dist::Lognormal { mu, sigma } if !(sigma.is_finite() && sigma > 0.0 && mu.is_finite()) => {
                Err(Error::InvalidDistribution(format!("lognormal mu {mu} sigma {sigma}")))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Constant { value } => value,
            Dist::Exponential { rate } => 1.0 / rate,
            Dist::Lognormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
        }
    }

    /// Same family, rescaled to the given mean.
    pub fn with_mean(&self, mean: f64) -> Self {
        match *self {
            Dist::Constant { .. } => Dist::constant(mean),
            Dist::Exponential { .. } => Dist::exponential_mean(mean),
            Dist::Lognormal { sigma, .. } => Dist::lognormal_mean(mean, sigma),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self, Dist::Constant { value } if value == 0.0)
    }
}

/// A named, independently seeded random stream.
///
/// Streams are ChaCha8 instances keyed by the run seed and a stream number
/// derived from the component label, so draws from one component never shift
/// another component's sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: String,
    draws: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: impl Into<String>) -> Self {
        let stream_id = stream_id.into();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_number(&stream_id));
        RngStream {
            seed,
            stream_id,
            draws: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    pub fn draw_index(&self) -> u64 {
        self.draws
    }

    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.rng.gen::<f64>()
    }

    pub fn draw(&mut self, dist: &Dist) -> Result<f64> {
        dist.validate()?;
        self.draws += 1;
        Ok(match *dist {
            Dist::Constant { value } => value,
            Dist::Exponential { rate } => Exp::new(rate)
                .map_err(|e| Error::InvalidDistribution(e.to_string()))?
                .sample(&mut self.rng),
            Dist::Lognormal { mu, sigma } => LogNormal::new(mu, sigma)
                .map_err(|e| Error::InvalidDistribution(e.to_string()))?
                .sample(&mut self.rng),
        })
    }
}

fn stream_number(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(engine: &mut Engine<&'static str>, t_end: Micros) -> Vec<(Micros, &'static str)> {
        let mut seen = Vec::new();
        engine
            .run_until(t_end, |_, ev| {
                seen.push((ev.fire_at, ev.payload));
                Ok(())
            })
            .unwrap();
        seen
    }

    #[test]
    fn single_event_forces_clock() {
        let mut e = Engine::new();
        e.schedule(5, EventKind::LoadArrival, "a").unwrap();
        let mut at = None;
        e.run_until(5, |eng, _| {
            at = Some(eng.now());
            Ok(())
        })
        .unwrap();
        assert_eq!(at, Some(5));
    }

    #[test]
    fn same_time_events_dispatch_in_schedule_order() {
        let mut e = Engine::new();
        e.schedule(7, EventKind::LoadArrival, "A").unwrap();
        e.schedule(7, EventKind::LoadArrival, "B").unwrap();
        assert_eq!(drain(&mut e, 7), vec![(7, "A"), (7, "B")]);
    }

    #[test]
    fn scheduling_into_the_past_is_rejected() {
        let mut e: Engine<&'static str> = Engine::new();
        e.run_until(10, |_, _| Ok(())).unwrap();
        let err = e.schedule(3, EventKind::LoadArrival, "late").unwrap_err();
        assert_eq!(err, Error::PastTimestamp { fire_at: 3, now: 10 });
        assert!(err.to_string().contains('3') && err.to_string().contains("10"));
    }

    #[test]
    fn empty_run_moves_clock_to_end() {
        let mut e: Engine<()> = Engine::new().with_recording(true);
        let trace = e.run_until(100, |_, _| Ok(())).unwrap();
        assert!(trace.is_empty());
        assert_eq!(e.now(), 100);
    }

    #[test]
    fn run_until_filters_on_boundary() {
        let mut e = Engine::new().with_recording(true);
        for (t, p) in [(2, "a"), (9, "b"), (9, "c"), (40, "d")] {
            e.schedule(t, EventKind::PacketArrival, p).unwrap();
        }
        let trace = e.run_until(10, |_, _| Ok(())).unwrap();
        assert_eq!(trace.len(), 3);
        assert_eq!(e.queued_count(), 1);
        assert_eq!(e.peek_time(), Some(40));
        assert_eq!(e.scheduled_count(), e.dispatched_count() + e.queued_count());
    }

    #[test]
    fn handlers_can_schedule_follow_ups() {
        let mut e = Engine::new().with_recording(true);
        e.schedule(1, EventKind::LoadArrival, 0u64).unwrap();
        let trace = e
            .run_until(1_000, |eng, ev| {
                if ev.payload < 5 {
                    eng.schedule_in(10, EventKind::RpcComplete, ev.payload + 1);
                }
                Ok(())
            })
            .unwrap();
        let times: Vec<_> = trace.records.iter().map(|r| r.time_us).collect();
        assert_eq!(times, vec![1, 11, 21, 31, 41, 51]);
    }

    #[test]
    fn constant_distribution_is_degenerate() {
        let mut s = RngStream::new(1, "x");
        assert_eq!(s.draw(&Dist::constant(42.0)).unwrap(), 42.0);
        assert_eq!(s.draw_index(), 1);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut s = RngStream::new(1, "x");
        assert!(s.draw(&Dist::Exponential { rate: 0.0 }).is_err());
        assert!(s.draw(&Dist::Exponential { rate: -1.0 }).is_err());
        assert!(s.draw(&Dist::Lognormal { mu: 1.0, sigma: 0.0 }).is_err());
        assert!(s.draw(&Dist::Lognormal { mu: 1.0, sigma: -2.0 }).is_err());
    }

    #[test]
    fn exponential_mean_converges() {
        let lambda = 0.25;
        let mut s = RngStream::new(7, "lln");
        let n = 1_000_000;
        let sum: f64 = (0..n)
            .map(|_| s.draw(&Dist::Exponential { rate: lambda }).unwrap())
            .sum();
        let mean = sum / n as f64;
        assert!((mean - 1.0 / lambda).abs() / (1.0 / lambda) < 0.01, "mean {mean}");
    }

    #[test]
    fn distinct_streams_differ_and_replay() {
        let mut a = RngStream::new(99, "workload");
        let mut b = RngStream::new(99, "jitter");
        let mut a2 = RngStream::new(99, "workload");
        let pa: Vec<f64> = (0..16).map(|_| a.uniform()).collect();
        let pb: Vec<f64> = (0..16).map(|_| b.uniform()).collect();
        let pa2: Vec<f64> = (0..16).map(|_| a2.uniform()).collect();
        assert_ne!(pa, pb);
        assert_eq!(pa, pa2);
    }

    #[test]
    fn round_half_up() {
        assert_eq!(round_us(154.6), 155);
        assert_eq!(round_us(0.5), 1);
        assert_eq!(round_us(0.49), 0);
        assert_eq!(round_us(-3.0), 0);
    }

    #[test]
    fn lognormal_mean_parametrisation() {
        let d = Dist::lognormal_mean(40.0, 1.0);
        assert!((d.mean() - 40.0).abs() < 1e-9);
        assert!((d.with_mean(80.0).mean() - 80.0).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dispatch_is_ordered_and_conserved(
                times in proptest::collection::vec(0u64..500, 1..200),
                cut in 0u64..600,
            ) {
                let mut e = Engine::new().with_recording(true);
                for (i, t) in times.iter().enumerate() {
                    e.schedule(*t, EventKind::LoadArrival, i as u64).unwrap();
                }
                let mut last = (0u64, 0u64);
                let mut first = true;
                e.run_until(cut, |eng, ev| {
                    assert_eq!(eng.scheduled_count(), eng.dispatched_count() + eng.queued_count());
                    if !first {
                        assert!((ev.fire_at, ev.seq) > last);
                    }
                    first = false;
                    last = (ev.fire_at, ev.seq);
                    Ok(())
                }).unwrap();
                prop_assert_eq!(e.now(), cut);
                let expected = times.iter().filter(|t| **t <= cut).count() as u64;
                prop_assert_eq!(e.dispatched_count(), expected);
                prop_assert_eq!(e.scheduled_count(), e.dispatched_count() + e.queued_count());
            }
        }
    }
}
