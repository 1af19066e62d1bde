//! Address-event plumbing: simulated time, event ordering, seeded random
//! streams, lazily generated Poisson sources and the event log.
//!
//! Time is an integer count of microseconds. Events are totally ordered by
//! `(time, address, insertion sequence)`, so two runs fed the same seeds
//! deliver the same events in the same order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};

pub const MICROS_PER_SEC: f64 = 1e6;

/// Simulated time in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    /// Rounds to the nearest microsecond. Negative or non-finite input is an error.
    pub fn from_secs(s: f64) -> Result<SimTime> {
        if !s.is_finite() || s < 0.0 {
            return Err(SimError::param("time", format!("{s} s is not a finite non-negative time")));
        }
        Ok(SimTime((s * MICROS_PER_SEC).round() as u64))
    }

    pub fn secs(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC
    }

    pub fn micros(self) -> u64 {
        self.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.secs())
    }
}

/// Population tag of an address. The numeric code is used by the binary
/// log format and also fixes the tie-break order between populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Population {
    Exc,
    Inh,
    /// Macro-pixel of the (emulated) retina.
    Retina,
    /// Background noise sources, one per neuron.
    Noise,
    /// Synthetic trains used by characterization protocols.
    Probe,
    /// Internal callbacks.
    Control,
}

impl Population {
    pub fn code(self) -> u8 {
        match self {
            Population::Exc => 0,
            Population::Inh => 1,
            Population::Retina => 2,
            Population::Noise => 3,
            Population::Probe => 4,
            Population::Control => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Population> {
        Some(match code {
            0 => Population::Exc,
            1 => Population::Inh,
            2 => Population::Retina,
            3 => Population::Noise,
            4 => Population::Probe,
            5 => Population::Control,
            _ => return None,
        })
    }

    pub fn tag(self) -> &'static str {
        match self {
            Population::Exc => "E",
            Population::Inh => "I",
            Population::Retina => "R",
            Population::Noise => "N",
            Population::Probe => "P",
            Population::Control => "C",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Population> {
        Some(match tag {
            "E" => Population::Exc,
            "I" => Population::Inh,
            "R" => Population::Retina,
            "N" => Population::Noise,
            "P" => Population::Probe,
            "C" => Population::Control,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address {
    pub pop: Population,
    pub index: u16,
}

impl Address {
    pub fn new(pop: Population, index: u16) -> Self {
        Address { pop, index }
    }

    pub fn exc(index: usize) -> Self {
        Address::new(Population::Exc, index as u16)
    }

    pub fn inh(index: usize) -> Self {
        Address::new(Population::Inh, index as u16)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.pop.tag(), self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpikeEvent {
    pub time: SimTime,
    pub address: Address,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Spike,
    Callback(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Scheduled {
    pub time: SimTime,
    pub address: Address,
    seq: u64,
    pub kind: EventKind,
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Scheduled>>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: SimTime, address: Address, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Scheduled {
            time,
            address,
            seq,
            kind,
        }));
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(s)| s.time)
    }

    pub fn pop(&mut self) -> Option<Scheduled> {
        self.heap.pop().map(|Reverse(s)| s)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn clear(&mut self) {
        self.heap.clear();
    }
}

/// Event queue plus the simulation clock.
#[derive(Debug, Default)]
pub struct Scheduler {
    queue: EventQueue,
    now: SimTime,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn schedule(&mut self, at: SimTime, address: Address, kind: EventKind) -> Result<()> {
        if at < self.now {
            return Err(SimError::ScheduleInPast {
                now_us: self.now.0,
                requested_us: at.0,
            });
        }
        self.queue.push(at, address, kind);
        Ok(())
    }

    pub fn schedule_spike(&mut self, event: SpikeEvent) -> Result<()> {
        self.schedule(event.time, event.address, EventKind::Spike)
    }

    /// Pops the next event with `time <= t_end` and moves the clock to it.
    pub fn next_until(&mut self, t_end: SimTime) -> Option<Scheduled> {
        match self.queue.peek_time() {
            Some(t) if t <= t_end => {
                let ev = self.queue.pop().expect("peeked");
                self.now = ev.time;
                Some(ev)
            }
            _ => None,
        }
    }

    /// Moves the clock forward to `t` once all earlier events are drained.
    pub fn advance_to(&mut self, t: SimTime) -> Result<()> {
        if t < self.now {
            return Err(SimError::ScheduleInPast {
                now_us: self.now.0,
                requested_us: t.0,
            });
        }
        self.now = t;
        Ok(())
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn clear(&mut self) {
        self.queue.clear();
    }
}

/// Purpose labels for independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamId {
    Topology,
    Stimulus,
    Plasticity,
    Mismatch,
    Noise,
    Probe,
}

impl StreamId {
    pub fn label(self) -> &'static str {
        match self {
            StreamId::Topology => "topology",
            StreamId::Stimulus => "stimulus",
            StreamId::Plasticity => "plasticity",
            StreamId::Mismatch => "mismatch",
            StreamId::Noise => "noise",
            StreamId::Probe => "probe",
        }
    }
}

/// A named, seeded random stream. The ChaCha key is the SHA-256 digest of
/// `(seed, label)`, so the draw sequence is platform independent and distinct
/// labels yield unrelated keys. Sub-streams share the key and differ in the
/// ChaCha stream number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomStream {
    pub seed: u64,
    pub id: StreamId,
}

impl RandomStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        RandomStream { seed, id }
    }

    fn key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.id.label().as_bytes());
        h.finalize().into()
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key())
    }

    pub fn substream(&self, k: u64) -> ChaCha8Rng {
        let mut rng = self.rng();
        rng.set_stream(k);
        rng
    }
}

/// Exponential inter-arrival generator restricted to `[t0, t1]`.
#[derive(Debug, Clone)]
pub struct PoissonTrain {
    rate: f64,
    cursor: f64,
    end: f64,
    rng: ChaCha8Rng,
}

impl PoissonTrain {
    pub fn new(rate: f64, t0: f64, t1: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(SimError::param("rate", format!("{rate} Hz must be finite and >= 0")));
        }
        if !(t1 >= t0) || t0 < 0.0 {
            return Err(SimError::param("window", format!("[{t0}, {t1}] is not a valid window")));
        }
        Ok(PoissonTrain {
            rate,
            cursor: t0,
            end: t1,
            rng,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl Iterator for PoissonTrain {
    type Item = SimTime;

    fn next(&mut self) -> Option<SimTime> {
        if self.rate <= 0.0 {
            return None;
        }
        // 1 - U lies in (0, 1], so the log is finite.
        let u: f64 = self.rng.random();
        self.cursor += -(1.0 - u).ln() / self.rate;
        if self.cursor > self.end {
            self.rate = 0.0;
            return None;
        }
        Some(SimTime((self.cursor * MICROS_PER_SEC).round() as u64))
    }
}

/// External Poisson sources keyed by address. Each source keeps exactly one
/// pending event in the scheduler; the next one is drawn when it fires.
#[derive(Debug, Default)]
pub struct SourceBank {
    sources: BTreeMap<Address, Vec<PoissonTrain>>,
}

impl SourceBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a train for `address` and schedules its first spike.
    /// Several trains may share an address; their spikes interleave.
    pub fn add(&mut self, address: Address, mut train: PoissonTrain, sched: &mut Scheduler) -> Result<()> {
        if let Some(t) = train.next() {
            sched.schedule(t.max(sched.now()), address, EventKind::Callback(self.slot_count(address)))?;
            self.sources.entry(address).or_default().push(train);
        }
        Ok(())
    }

    fn slot_count(&self, address: Address) -> u32 {
        self.sources.get(&address).map_or(0, |v| v.len() as u32)
    }

    /// Called when slot `slot` of `address` has fired; schedules its next spike.
    pub fn advance(&mut self, address: Address, slot: u32, sched: &mut Scheduler) -> Result<()> {
        if let Some(train) = self
            .sources
            .get_mut(&address)
            .and_then(|v| v.get_mut(slot as usize))
        {
            if let Some(t) = train.next() {
                sched.schedule(t.max(sched.now()), address, EventKind::Callback(slot))?;
            }
        }
        Ok(())
    }

    pub fn contains(&self, address: &Address) -> bool {
        self.sources.contains_key(address)
    }

    pub fn clear(&mut self) {
        self.sources.clear();
    }
}

/// Delivered spikes in delivery order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub events: Vec<SpikeEvent>,
    /// Set when a run was cut short; holds the time the log stops at.
    pub truncated_at: Option<SimTime>,
}

const BINARY_RECORD: usize = 11;
const TRUNCATION_CODE: u8 = 0xFF;

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: SpikeEvent) {
        self.events.push(event);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn extend(&mut self, other: EventLog) {
        self.events.extend(other.events);
        if other.truncated_at.is_some() {
            self.truncated_at = other.truncated_at;
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.events.windows(2).all(|w| w[0].time <= w[1].time)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            writeln!(w, "{}\t{}\t{}", e.time.0, e.address.pop.tag(), e.address.index)?;
        }
        if let Some(t) = self.truncated_at {
            writeln!(w, "# truncated at {}", t.0)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<EventLog> {
        let mut log = EventLog::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# truncated at ") {
                let t = rest
                    .trim()
                    .parse::<u64>()
                    .map_err(|e| SimError::parse(n + 1, e.to_string()))?;
                log.truncated_at = Some(SimTime(t));
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(t), Some(p), Some(i), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(SimError::parse(n + 1, "expected time_us<TAB>population<TAB>index"));
            };
            let time = t.parse::<u64>().map_err(|e| SimError::parse(n + 1, e.to_string()))?;
            let pop = Population::from_tag(p)
                .ok_or_else(|| SimError::parse(n + 1, format!("unknown population `{p}`")))?;
            let index = i.parse::<u16>().map_err(|e| SimError::parse(n + 1, e.to_string()))?;
            log.push(SpikeEvent {
                time: SimTime(time),
                address: Address::new(pop, index),
            });
        }
        Ok(log)
    }

    /// Little-endian `u64 time_us, u8 population, u16 index` records. A
    /// truncation marker is stored as a record with population code 0xFF.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            w.write_all(&e.time.0.to_le_bytes())?;
            w.write_all(&[e.address.pop.code()])?;
            w.write_all(&e.address.index.to_le_bytes())?;
        }
        if let Some(t) = self.truncated_at {
            w.write_all(&t.0.to_le_bytes())?;
            w.write_all(&[TRUNCATION_CODE])?;
            w.write_all(&0u16.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<EventLog> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() % BINARY_RECORD != 0 {
            return Err(SimError::parse(0, format!("binary log length {} is not a multiple of {BINARY_RECORD}", buf.len())));
        }
        let mut log = EventLog::new();
        for (n, rec) in buf.chunks_exact(BINARY_RECORD).enumerate() {
            let time = SimTime(u64::from_le_bytes(rec[0..8].try_into().expect("8 bytes")));
            let index = u16::from_le_bytes([rec[9], rec[10]]);
            if rec[8] == TRUNCATION_CODE {
                log.truncated_at = Some(time);
                continue;
            }
            let pop = Population::from_code(rec[8])
                .ok_or_else(|| SimError::parse(n + 1, format!("unknown population code {}", rec[8])))?;
            log.push(SpikeEvent {
                time,
                address: Address::new(pop, index),
            });
        }
        Ok(log)
    }

    /// Writes binary when the extension is `bin`, text otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        if is_binary_path(path) {
            self.write_binary(w)
        } else {
            self.write_text(w)
        }
    }

    pub fn load(path: &Path) -> Result<EventLog> {
        let f = File::open(path)?;
        if is_binary_path(path) {
            EventLog::read_binary(f)
        } else {
            EventLog::read_text(BufReader::new(f))
        }
    }
}

fn is_binary_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

/// Minimal engine for runs made only of external sources and explicitly
/// scheduled spikes. Network simulations drive the scheduler themselves.
#[derive(Debug, Default)]
pub struct Simulation {
    pub scheduler: Scheduler,
    sources: SourceBank,
}

impl Simulation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.scheduler.now()
    }

    pub fn schedule(&mut self, event: SpikeEvent) -> Result<()> {
        self.scheduler.schedule_spike(event)
    }

    /// Poisson train at `rate` Hz from `address` over `[t0, t1]` seconds.
    pub fn poisson_source(&mut self, rate: f64, address: Address, window: (f64, f64), rng: ChaCha8Rng) -> Result<()> {
        let train = PoissonTrain::new(rate, window.0, window.1, rng)?;
        self.sources.add(address, train, &mut self.scheduler)
    }

    /// Delivers everything up to `t_end` and returns the delivered spikes.
    pub fn run_until(&mut self, t_end: f64) -> Result<EventLog> {
        let t_end = SimTime::from_secs(t_end)?;
        if t_end < self.now() {
            return Err(SimError::ScheduleInPast {
                now_us: self.now().0,
                requested_us: t_end.0,
            });
        }
        let mut log = EventLog::new();
        while let Some(ev) = self.scheduler.next_until(t_end) {
            log.push(SpikeEvent {
                time: ev.time,
                address: ev.address,
            });
            if let EventKind::Callback(slot) = ev.kind {
                self.sources.advance(ev.address, slot, &mut self.scheduler)?;
            }
        }
        self.scheduler.advance_to(t_end)?;
        Ok(log)
    }
}

/// Draws a standard-normal-scaled multiplicative jitter `1 + cv * z`, floored
/// at a small positive value so parameters keep their sign.
pub fn jitter<R: Rng>(rng: &mut R, cv: f64) -> f64 {
    if cv <= 0.0 {
        return 1.0;
    }
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    (1.0 + cv * z).max(0.05)
}
