//! Two-population recurrent network: random sparse topology, macro-pixel
//! mapping and the event-driven run loop with plastic E→E synapses.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};
use crate::event::{
    jitter, Address, EventKind, EventLog, Population, PoissonTrain, RandomStream, Scheduler,
    SimTime, SourceBank, SpikeEvent, StreamId,
};
use crate::neuron::{NeuronParams, NeuronState};
use crate::synapse::{SynapseJitter, SynapseParams, SynapseState};

pub const GRID: usize = 14;
pub const GRID_CELLS: usize = GRID * GRID;
pub const RETINA_SIDE: usize = 128;

/// Independent per-neuron background Poisson drive. Each E neuron gets an
/// excitatory and an inhibitory train; each I neuron an excitatory one.
/// Efficacies are magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundNoise {
    pub exc_plus_rate: f64,
    pub exc_plus_j: f64,
    pub exc_minus_rate: f64,
    pub exc_minus_j: f64,
    pub inh_plus_rate: f64,
    pub inh_plus_j: f64,
}

impl BackgroundNoise {
    pub const OFF: BackgroundNoise = BackgroundNoise {
        exc_plus_rate: 0.0,
        exc_plus_j: 0.0,
        exc_minus_rate: 0.0,
        exc_minus_j: 0.0,
        inh_plus_rate: 0.0,
        inh_plus_j: 0.0,
    };

    /// Mean drive onto an E neuron, potential units per second.
    pub fn exc_mean(&self) -> f64 {
        self.exc_plus_rate * self.exc_plus_j - self.exc_minus_rate * self.exc_minus_j
    }

    /// Variance rate of the drive onto an E neuron.
    pub fn exc_variance(&self) -> f64 {
        self.exc_plus_rate * self.exc_plus_j.powi(2) + self.exc_minus_rate * self.exc_minus_j.powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub topology: u64,
    pub stimulus: u64,
    pub plasticity: u64,
    pub mismatch: u64,
    pub noise: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Seeds {
            topology: seed,
            stimulus: seed,
            plasticity: seed,
            mismatch: seed,
            noise: seed,
        }
    }

    pub fn stream(&self, id: StreamId) -> RandomStream {
        let seed = match id {
            StreamId::Topology => self.topology,
            StreamId::Stimulus => self.stimulus,
            StreamId::Plasticity | StreamId::Probe => self.plasticity,
            StreamId::Mismatch => self.mismatch,
            StreamId::Noise => self.noise,
        };
        RandomStream::new(seed, id)
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::all(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mismatch {
    /// Coefficient of variation of per-neuron theta and leak.
    pub neuron_cv: f64,
    /// Coefficient of variation of per-synapse jumps and drifts.
    pub synapse_cv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub n_exc: usize,
    pub n_inh: usize,
    pub p_ee: f64,
    pub p_ie: f64,
    pub p_ei: f64,
    pub p_retina_inh: f64,
    pub initial_potentiated_fraction: f64,
    pub exc: NeuronParams,
    pub inh: NeuronParams,
    /// E→E plasticity, including `j_pot` and `j_dep`.
    pub synapse: SynapseParams,
    /// Magnitude of I→E efficacy.
    pub j_inh: f64,
    pub j_ei: f64,
    pub j_stim: f64,
    pub j_retina_inh: f64,
    pub noise: BackgroundNoise,
    /// Fixed spike delivery delay, seconds.
    pub delay: f64,
    /// Each neuron's delay is `delay + U[0, delay_spread)`, drawn once.
    pub delay_spread: f64,
    pub mismatch: Mismatch,
    pub seeds: Seeds,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            n_exc: GRID_CELLS,
            n_inh: 43,
            p_ee: 0.25,
            p_ie: 0.5,
            p_ei: 0.3,
            p_retina_inh: 0.02,
            initial_potentiated_fraction: 0.05,
            exc: NeuronParams { leak: 100.0, ..NeuronParams::default() },
            inh: NeuronParams { leak: 50.0, ..NeuronParams::default() },
            synapse: SynapseParams::default(),
            j_inh: 0.06,
            j_ei: 0.04,
            j_stim: 0.09,
            j_retina_inh: 0.01,
            noise: BackgroundNoise { exc_plus_rate: 750.0, exc_plus_j: 0.1, ..BackgroundNoise::OFF },
            delay: 0.001,
            delay_spread: 0.004,
            mismatch: Mismatch::default(),
            seeds: Seeds::default(),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_exc == 0 || self.n_inh == 0 {
            return Err(SimError::param("n_exc/n_inh", "counts must be > 0"));
        }
        if 2 * self.n_exc + self.n_inh > u16::MAX as usize {
            return Err(SimError::param("n_exc/n_inh", "counts must fit in 16 bits"));
        }
        for (name, p) in [
            ("p_ee", self.p_ee),
            ("p_ie", self.p_ie),
            ("p_ei", self.p_ei),
            ("p_retina_inh", self.p_retina_inh),
            ("initial_potentiated_fraction", self.initial_potentiated_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::param(name, format!("{p} is not a probability")));
            }
        }
        self.exc.validate()?;
        self.inh.validate()?;
        self.synapse.validate(self.exc.floor, self.exc.theta)?;
        for (name, v) in [
            ("j_inh", self.j_inh),
            ("j_ei", self.j_ei),
            ("j_stim", self.j_stim),
            ("j_retina_inh", self.j_retina_inh),
            ("noise.exc_plus_rate", self.noise.exc_plus_rate),
            ("noise.exc_plus_j", self.noise.exc_plus_j),
            ("noise.exc_minus_rate", self.noise.exc_minus_rate),
            ("noise.exc_minus_j", self.noise.exc_minus_j),
            ("noise.inh_plus_rate", self.noise.inh_plus_rate),
            ("noise.inh_plus_j", self.noise.inh_plus_j),
            ("delay", self.delay),
            ("delay_spread", self.delay_spread),
            ("mismatch.neuron_cv", self.mismatch.neuron_cv),
            ("mismatch.synapse_cv", self.mismatch.synapse_cv),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::param(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Projection {
    /// Recurrent excitatory (plastic).
    EE,
    /// Excitatory to inhibitory.
    EI,
    /// Inhibitory to excitatory.
    IE,
    /// Retina macro-pixel to inhibitory.
    RI,
}

impl Projection {
    pub fn tag(self) -> &'static str {
        match self {
            Projection::EE => "ee",
            Projection::EI => "ei",
            Projection::IE => "ie",
            Projection::RI => "ri",
        }
    }

    pub fn from_tag(s: &str) -> Option<Projection> {
        Some(match s {
            "ee" => Projection::EE,
            "ei" => Projection::EI,
            "ie" => Projection::IE,
            "ri" => Projection::RI,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synapse {
    pub pre: u16,
    pub post: u16,
    pub state: SynapseState,
}

/// Edges of one projection sorted by `(pre, post)` with a CSR index on `pre`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub edges: Vec<Synapse>,
    offsets: Vec<usize>,
}

impl EdgeList {
    fn from_sorted(n_pre: usize, edges: Vec<Synapse>) -> Self {
        let mut offsets = vec![0usize; n_pre + 1];
        for e in &edges {
            offsets[e.pre as usize + 1] += 1;
        }
        for i in 0..n_pre {
            offsets[i + 1] += offsets[i];
        }
        EdgeList { edges, offsets }
    }

    pub fn range(&self, pre: usize) -> Range<usize> {
        if pre + 1 >= self.offsets.len() {
            return 0..0;
        }
        self.offsets[pre]..self.offsets[pre + 1]
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub n_exc: usize,
    pub n_inh: usize,
    pub ee: EdgeList,
    pub ei: EdgeList,
    pub ie: EdgeList,
    pub ri: EdgeList,
    /// Empty unless synapse mismatch is enabled; otherwise one entry per E→E edge.
    pub ee_jitter: Vec<SynapseJitter>,
}

fn bernoulli_edges(
    rng: &mut ChaCha8Rng,
    n_pre: usize,
    n_post: usize,
    p: f64,
    skip_self: bool,
    mut state: impl FnMut(&mut ChaCha8Rng) -> SynapseState,
) -> Vec<Synapse> {
    let mut edges = Vec::new();
    for pre in 0..n_pre {
        for post in 0..n_post {
            if skip_self && pre == post {
                continue;
            }
            if rng.random::<f64>() < p {
                let s = state(rng);
                edges.push(Synapse {
                    pre: pre as u16,
                    post: post as u16,
                    state: s,
                });
            }
        }
    }
    edges
}

impl Topology {
    pub fn build(config: &NetworkConfig) -> Result<Topology> {
        config.validate()?;
        let stream = config.seeds.stream(StreamId::Topology);
        let f0 = config.initial_potentiated_fraction;
        let mut rng = stream.substream(0);
        let ee = bernoulli_edges(&mut rng, config.n_exc, config.n_exc, config.p_ee, true, |r| {
            let x = if r.random::<f64>() < f0 { 1.0 } else { 0.0 };
            SynapseState::plastic(x)
        });
        let mut rng = stream.substream(1);
        let ei = bernoulli_edges(&mut rng, config.n_exc, config.n_inh, config.p_ei, false, |_| {
            SynapseState::fixed(true)
        });
        let mut rng = stream.substream(2);
        let ie = bernoulli_edges(&mut rng, config.n_inh, config.n_exc, config.p_ie, false, |_| {
            SynapseState::fixed(false)
        });
        let mut rng = stream.substream(3);
        let ri = bernoulli_edges(&mut rng, GRID_CELLS, config.n_inh, config.p_retina_inh, false, |_| {
            SynapseState::fixed(true)
        });

        let ee_jitter = if config.mismatch.synapse_cv > 0.0 {
            let mut rng = config.seeds.stream(StreamId::Mismatch).substream(1);
            let cv = config.mismatch.synapse_cv;
            ee.iter()
                .map(|_| SynapseJitter {
                    jump_up: jitter(&mut rng, cv),
                    jump_down: jitter(&mut rng, cv),
                    drift_up: jitter(&mut rng, cv),
                    drift_down: jitter(&mut rng, cv),
                })
                .collect()
        } else {
            Vec::new()
        };

        Ok(Topology {
            n_exc: config.n_exc,
            n_inh: config.n_inh,
            ee: EdgeList::from_sorted(config.n_exc, ee),
            ei: EdgeList::from_sorted(config.n_exc, ei),
            ie: EdgeList::from_sorted(config.n_inh, ie),
            ri: EdgeList::from_sorted(GRID_CELLS, ri),
            ee_jitter,
        })
    }

    pub fn projection(&self, p: Projection) -> &EdgeList {
        match p {
            Projection::EE => &self.ee,
            Projection::EI => &self.ei,
            Projection::IE => &self.ie,
            Projection::RI => &self.ri,
        }
    }

    pub fn potentiated_count(&self, p: &SynapseParams) -> usize {
        self.ee.edges.iter().filter(|e| e.state.is_potentiated(p)).count()
    }

    /// Re-draws the binary state of every E→E edge whose endpoints are both
    /// in `members`: potentiated (x = 1) with probability `fraction`, else
    /// depressed (x = 0).
    pub fn force_fraction(&mut self, members: &[bool], fraction: f64, rng: &mut ChaCha8Rng) {
        for e in &mut self.ee.edges {
            if members[e.pre as usize] && members[e.post as usize] {
                e.state.x = if rng.random::<f64>() < fraction { 1.0 } else { 0.0 };
            }
        }
    }

    /// `projection,pre,post,plastic_flag,x0`, one edge per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# n_exc={} n_inh={}", self.n_exc, self.n_inh)?;
        for p in [Projection::EE, Projection::EI, Projection::IE, Projection::RI] {
            for e in &self.projection(p).edges {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    p.tag(),
                    e.pre,
                    e.post,
                    u8::from(e.state.is_plastic),
                    e.state.x
                )?;
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R, n_exc: usize, n_inh: usize) -> Result<Topology> {
        let mut lists: BTreeMap<Projection, Vec<Synapse>> = BTreeMap::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(SimError::parse(n + 1, "expected projection,pre,post,plastic_flag,x0"));
            }
            let proj = Projection::from_tag(f[0])
                .ok_or_else(|| SimError::parse(n + 1, format!("unknown projection `{}`", f[0])))?;
            let num = |s: &str| s.parse::<u16>().map_err(|e| SimError::parse(n + 1, e.to_string()));
            let pre = num(f[1])?;
            let post = num(f[2])?;
            let plastic = match f[3] {
                "0" => false,
                "1" => true,
                other => return Err(SimError::parse(n + 1, format!("bad plastic flag `{other}`"))),
            };
            let x: f64 = f[4].parse().map_err(|_| SimError::parse(n + 1, "bad x0"))?;
            if !(0.0..=1.0).contains(&x) {
                return Err(SimError::parse(n + 1, "x0 outside [0, 1]"));
            }
            let (n_pre, n_post) = match proj {
                Projection::EE => (n_exc, n_exc),
                Projection::EI => (n_exc, n_inh),
                Projection::IE => (n_inh, n_exc),
                Projection::RI => (GRID_CELLS, n_inh),
            };
            if pre as usize >= n_pre || post as usize >= n_post {
                return Err(SimError::parse(n + 1, "index out of range"));
            }
            let state = SynapseState {
                x,
                last_update: 0.0,
                is_plastic: plastic,
                is_excitatory: proj != Projection::IE,
            };
            lists.entry(proj).or_default().push(Synapse { pre, post, state });
        }
        let mut take = |p: Projection, n_pre: usize| {
            let mut v = lists.remove(&p).unwrap_or_default();
            v.sort_by_key(|e| (e.pre, e.post));
            EdgeList::from_sorted(n_pre, v)
        };
        Ok(Topology {
            n_exc,
            n_inh,
            ee: take(Projection::EE, n_exc),
            ei: take(Projection::EI, n_exc),
            ie: take(Projection::IE, n_inh),
            ri: take(Projection::RI, GRID_CELLS),
            ee_jitter: Vec::new(),
        })
    }
}

/// One macro-pixel: a rectangle of retina pixels feeding one E neuron.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroPixel {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub neuron: usize,
}

impl MacroPixel {
    pub fn pixel_count(&self) -> usize {
        self.rows.len() * self.cols.len()
    }
}

/// 14×14 tiling of the 128×128 retina. Stripe `k` spans
/// `[floor(128k/14), floor(128(k+1)/14))`, which gives twelve stripes of 9
/// pixels and two of 10. Cell `(r, c)` maps to E neuron `14r + c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroPixelMap {
    pub cells: Vec<MacroPixel>,
}

fn stripe(k: usize) -> Range<usize> {
    (k * RETINA_SIDE / GRID)..((k + 1) * RETINA_SIDE / GRID)
}

impl MacroPixelMap {
    pub fn new() -> Self {
        let mut cells = Vec::with_capacity(GRID_CELLS);
        for r in 0..GRID {
            for c in 0..GRID {
                cells.push(MacroPixel {
                    rows: stripe(r),
                    cols: stripe(c),
                    neuron: r * GRID + c,
                });
            }
        }
        MacroPixelMap { cells }
    }

    pub fn neuron_of_cell(&self, cell: usize) -> usize {
        self.cells[cell].neuron
    }

    pub fn cell_of_pixel(&self, row: usize, col: usize) -> Option<usize> {
        if row >= RETINA_SIDE || col >= RETINA_SIDE {
            return None;
        }
        let find = |p: usize| (0..GRID).find(|&k| stripe(k).contains(&p));
        Some(find(row)? * GRID + find(col)?)
    }
}

impl Default for MacroPixelMap {
    fn default() -> Self {
        Self::new()
    }
}

/// An external Poisson train emitted from `address` over `[t0, t1]`.
/// `substream` selects the ChaCha stream within `stream`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub address: Address,
    pub rate: f64,
    pub t0: f64,
    pub t1: f64,
    pub stream: RandomStream,
    pub substream: u64,
}

/// Which populations end up in the event log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recording {
    pub neurons: bool,
    pub external: bool,
}

impl Default for Recording {
    fn default() -> Self {
        Recording {
            neurons: true,
            external: false,
        }
    }
}

/// Counts used to check event conservation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpikeCounters {
    pub threshold_crossings: u64,
    pub external_emitted: u64,
}

/// A built network plus its running state.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub topology: Topology,
    pub map: MacroPixelMap,
    pub exc_params: Vec<NeuronParams>,
    pub inh_params: Vec<NeuronParams>,
    pub exc: Vec<NeuronState>,
    pub inh: Vec<NeuronState>,
    exc_delay: Vec<f64>,
    inh_delay: Vec<f64>,
    pub plasticity: bool,
    pub recording: Recording,
    pub counters: SpikeCounters,
    severed: Vec<bool>,
    probe_targets: Vec<(Address, f64)>,
    sched: SchedulerCell,
}

/// `Scheduler` and `SourceBank` are not `Clone`; a cloned network starts
/// with an empty queue at the same clock.
#[derive(Debug, Default)]
struct SchedulerCell {
    sched: Scheduler,
    sources: SourceBank,
}

impl Clone for SchedulerCell {
    fn clone(&self) -> Self {
        let mut sched = Scheduler::new();
        sched.advance_to(self.sched.now()).expect("forward");
        SchedulerCell {
            sched,
            sources: SourceBank::new(),
        }
    }
}

impl Network {
    pub fn build(config: NetworkConfig) -> Result<Network> {
        let topology = Topology::build(&config)?;
        Network::from_topology(config, topology)
    }

    pub fn from_topology(config: NetworkConfig, topology: Topology) -> Result<Network> {
        config.validate()?;
        if topology.n_exc != config.n_exc || topology.n_inh != config.n_inh {
            return Err(SimError::param("topology", "population sizes differ from config"));
        }
        let mut rng = config.seeds.stream(StreamId::Mismatch).substream(0);
        let cv = config.mismatch.neuron_cv;
        let mut jittered = |base: &NeuronParams, n: usize| -> Vec<NeuronParams> {
            (0..n)
                .map(|_| {
                    let mut p = *base;
                    if cv > 0.0 {
                        p.theta = p.floor + (p.theta - p.floor) * jitter(&mut rng, cv);
                        p.leak *= jitter(&mut rng, cv);
                        p.v_reset = p.v_reset.min(p.theta * 0.5);
                    }
                    p
                })
                .collect()
        };
        let exc_params = jittered(&config.exc, config.n_exc);
        let inh_params = jittered(&config.inh, config.n_inh);
        let mut rng = config.seeds.stream(StreamId::Mismatch).substream(2);
        let (d, spread) = (config.delay, config.delay_spread);
        let mut delays = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if spread > 0.0 { d + spread * rng.random::<f64>() } else { d })
                .collect()
        };
        let exc_delay = delays(config.n_exc);
        let inh_delay = delays(config.n_inh);
        let exc = exc_params.iter().map(NeuronState::at_rest).collect();
        let inh = inh_params.iter().map(NeuronState::at_rest).collect();
        let n_ee = topology.ee.len();
        let mut net = Network {
            config,
            topology,
            map: MacroPixelMap::new(),
            exc_params,
            inh_params,
            exc,
            inh,
            exc_delay,
            inh_delay,
            plasticity: true,
            recording: Recording::default(),
            counters: SpikeCounters::default(),
            severed: vec![false; n_ee],
            probe_targets: Vec::new(),
            sched: SchedulerCell::default(),
        };
        net.add_background_noise()?;
        Ok(net)
    }

    pub fn now(&self) -> f64 {
        self.sched.sched.now().secs()
    }

    /// Noise addresses: `i` is the excitatory train onto E neuron `i`,
    /// `n_exc + k` the train onto I neuron `k`, and `n_exc + n_inh + i` the
    /// inhibitory train onto E neuron `i`.
    fn add_background_noise(&mut self) -> Result<()> {
        let noise = self.config.noise;
        let stream = self.config.seeds.stream(StreamId::Noise);
        let t0 = self.now();
        let (n_exc, n_inh) = (self.config.n_exc, self.config.n_inh);
        let mut specs = Vec::new();
        let mut push = |index: usize, rate: f64| {
            specs.push(SourceSpec {
                address: Address::new(Population::Noise, index as u16),
                rate,
                t0,
                t1: f64::INFINITY,
                stream,
                substream: index as u64,
            })
        };
        if noise.exc_plus_rate > 0.0 && noise.exc_plus_j > 0.0 {
            (0..n_exc).for_each(|i| push(i, noise.exc_plus_rate));
        }
        if noise.inh_plus_rate > 0.0 && noise.inh_plus_j > 0.0 {
            (0..n_inh).for_each(|k| push(n_exc + k, noise.inh_plus_rate));
        }
        if noise.exc_minus_rate > 0.0 && noise.exc_minus_j > 0.0 {
            (0..n_exc).for_each(|i| push(n_exc + n_inh + i, noise.exc_minus_rate));
        }
        self.add_sources(&specs)
    }

    /// Registers external trains. Retina sources route to their macro-pixel's
    /// E neuron and sampled I targets; noise sources to their own neuron.
    pub fn add_sources(&mut self, specs: &[SourceSpec]) -> Result<()> {
        for s in specs {
            match s.address.pop {
                Population::Retina if s.address.index as usize >= GRID_CELLS => {
                    return Err(SimError::param("source", format!("no macro-pixel {}", s.address.index)));
                }
                Population::Retina | Population::Noise | Population::Probe => {}
                _ => return Err(SimError::param("source", format!("{} is not an external address", s.address))),
            }
            let train = PoissonTrain::new(s.rate, s.t0.max(self.now()), s.t1, s.stream.substream(s.substream))?;
            let cell = &mut self.sched;
            cell.sources.add(s.address, train, &mut cell.sched)?;
        }
        Ok(())
    }

    /// Adds a probe source whose spikes land on `target` with `efficacy`.
    /// Returns the probe's address.
    pub fn add_probe(&mut self, target: Address, efficacy: f64, rate: f64, window: (f64, f64), stream: RandomStream, substream: u64) -> Result<Address> {
        let idx = self.probe_targets.len();
        if idx > u16::MAX as usize {
            return Err(SimError::param("probe", "too many probe sources"));
        }
        self.probe_targets.push((target, efficacy));
        let address = Address::new(Population::Probe, idx as u16);
        self.add_sources(&[SourceSpec {
            address,
            rate,
            t0: window.0,
            t1: window.1,
            stream,
            substream,
        }])?;
        Ok(address)
    }

    /// Cuts every E→E edge with both endpoints in `members`. Returns the cut
    /// edge indices.
    pub fn sever_within(&mut self, members: &[bool]) -> Vec<usize> {
        let mut cut = Vec::new();
        for (k, e) in self.topology.ee.edges.iter().enumerate() {
            if members[e.pre as usize] && members[e.post as usize] {
                self.severed[k] = true;
                cut.push(k);
            }
        }
        cut
    }

    pub fn restore_severed(&mut self) {
        self.severed.iter_mut().for_each(|s| *s = false);
    }

    /// Turns plasticity on or off. Re-enabling restarts drift from now, so
    /// frozen intervals leave synapses untouched.
    pub fn set_plasticity(&mut self, on: bool) {
        if on && !self.plasticity {
            let t = self.now();
            for e in &mut self.topology.ee.edges {
                e.state.last_update = t;
            }
        }
        self.plasticity = on;
    }

    /// Resets membrane potentials and refractory clocks to rest at the
    /// current time.
    pub fn reset_neurons(&mut self) {
        let t = self.now();
        for (s, p) in self.exc.iter_mut().zip(&self.exc_params) {
            *s = NeuronState::at_rest(p);
            s.last_update = t;
        }
        for (s, p) in self.inh.iter_mut().zip(&self.inh_params) {
            *s = NeuronState::at_rest(p);
            s.last_update = t;
        }
    }

    /// Runs the event loop up to `t_end` seconds and returns the recorded spikes.
    pub fn run_until(&mut self, t_end: f64) -> Result<EventLog> {
        let t_end = SimTime::from_secs(t_end)?;
        let now = self.sched.sched.now();
        if t_end < now {
            return Err(SimError::ScheduleInPast {
                now_us: now.0,
                requested_us: t_end.0,
            });
        }
        let mut log = EventLog::new();
        while let Some(ev) = self.sched.sched.next_until(t_end) {
            let spike = SpikeEvent {
                time: ev.time,
                address: ev.address,
            };
            let external = !matches!(ev.address.pop, Population::Exc | Population::Inh);
            if (external && self.recording.external) || (!external && self.recording.neurons) {
                log.push(spike);
            }
            if external {
                self.counters.external_emitted += 1;
                if let EventKind::Callback(slot) = ev.kind {
                    let cell = &mut self.sched;
                    cell.sources.advance(ev.address, slot, &mut cell.sched)?;
                }
            }
            self.deliver(spike)?;
        }
        self.sched.sched.advance_to(t_end)?;
        Ok(log)
    }

    fn deliver(&mut self, spike: SpikeEvent) -> Result<()> {
        let t = spike.time.secs();
        let idx = spike.address.index as usize;
        match spike.address.pop {
            Population::Exc => {
                let range = self.topology.ee.range(idx);
                for k in range {
                    if self.severed[k] {
                        continue;
                    }
                    let post = self.topology.ee.edges[k].post as usize;
                    self.exc[post].integrate_to(&self.exc_params[post], t)?;
                    let syn_p = &self.config.synapse;
                    let edge = &mut self.topology.ee.edges[k];
                    if self.plasticity && edge.state.is_plastic {
                        let j = self.topology.ee_jitter.get(k).copied().unwrap_or(SynapseJitter::NONE);
                        edge.state.drift_to_with(syn_p, &j, t)?;
                        edge.state.on_presynaptic_spike_with(syn_p, &j, self.exc[post].v);
                    }
                    let w = edge.state.efficacy(syn_p, self.config.j_inh);
                    self.inject_exc(post, w, t)?;
                }
                for k in self.topology.ei.range(idx) {
                    let post = self.topology.ei.edges[k].post as usize;
                    self.inject_inh(post, self.config.j_ei, t)?;
                }
            }
            Population::Inh => {
                for k in self.topology.ie.range(idx) {
                    let post = self.topology.ie.edges[k].post as usize;
                    self.inject_exc(post, -self.config.j_inh, t)?;
                }
            }
            Population::Retina => {
                let neuron = self.map.neuron_of_cell(idx);
                if neuron < self.config.n_exc {
                    self.inject_exc(neuron, self.config.j_stim, t)?;
                }
                for k in self.topology.ri.range(idx) {
                    let post = self.topology.ri.edges[k].post as usize;
                    self.inject_inh(post, self.config.j_retina_inh, t)?;
                }
            }
            Population::Noise => {
                let (n_exc, n_inh) = (self.config.n_exc, self.config.n_inh);
                let noise = self.config.noise;
                if idx < n_exc {
                    self.inject_exc(idx, noise.exc_plus_j, t)?;
                } else if idx < n_exc + n_inh {
                    self.inject_inh(idx - n_exc, noise.inh_plus_j, t)?;
                } else {
                    self.inject_exc(idx - n_exc - n_inh, -noise.exc_minus_j, t)?;
                }
            }
            Population::Probe => {
                let (target, w) = self.probe_targets[idx];
                match target.pop {
                    Population::Exc => self.inject_exc(target.index as usize, w, t)?,
                    Population::Inh => self.inject_inh(target.index as usize, w, t)?,
                    _ => {}
                }
            }
            Population::Control => {}
        }
        Ok(())
    }

    fn inject_exc(&mut self, i: usize, w: f64, t: f64) -> Result<()> {
        let p = &self.exc_params[i];
        let s = &mut self.exc[i];
        s.integrate_to(p, t)?;
        debug_assert!(s.v >= p.floor && s.v <= p.theta);
        if s.receive(p, w, t) {
            self.counters.threshold_crossings += 1;
            self.emit(Address::exc(i), t + self.exc_delay[i])?;
        }
        Ok(())
    }

    fn inject_inh(&mut self, i: usize, w: f64, t: f64) -> Result<()> {
        let p = &self.inh_params[i];
        let s = &mut self.inh[i];
        s.integrate_to(p, t)?;
        if s.receive(p, w, t) {
            self.counters.threshold_crossings += 1;
            self.emit(Address::inh(i), t + self.inh_delay[i])?;
        }
        Ok(())
    }

    fn emit(&mut self, address: Address, at: f64) -> Result<()> {
        let at = SimTime::from_secs(at)?;
        self.sched.sched.schedule(at, address, EventKind::Spike)
    }

    /// Binary state of every E→E edge.
    pub fn potentiated_flags(&self) -> Vec<bool> {
        let p = &self.config.synapse;
        self.topology.ee.edges.iter().map(|e| e.state.is_potentiated(p)).collect()
    }
}

/// Mean rate of `members` over `[t0, t1]`.
pub fn population_rate(log: &EventLog, pop: Population, members: &[usize], window: (f64, f64)) -> Result<f64> {
    if members.is_empty() {
        return Err(SimError::EmptyPopulation);
    }
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(SimError::param("window", "need t1 > t0"));
    }
    let max = members.iter().copied().max().unwrap_or(0);
    let mut is_member = vec![false; max + 1];
    for &m in members {
        is_member[m] = true;
    }
    let (a, b) = (SimTime::from_secs(t0)?, SimTime::from_secs(t1)?);
    let count = log
        .events
        .iter()
        .filter(|e| {
            e.address.pop == pop
                && e.time >= a
                && e.time < b
                && is_member.get(e.address.index as usize).copied().unwrap_or(false)
        })
        .count();
    Ok(count as f64 / (members.len() as f64 * (t1 - t0)))
}
