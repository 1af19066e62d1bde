//! The end-to-end learning experiment and its observables: rate traces,
//! synaptic snapshots, group potentiation fractions, Hamming distances,
//! delay-period images and pattern completion.

use std::io::{BufRead, Write};

use crate::error::{Result, SimError};
use crate::event::{EventLog, Population, RandomStream, SimTime};
use crate::network::{population_rate, MacroPixelMap, Network, Topology, GRID, GRID_CELLS};
use crate::stimulus::{PresentationSchedule, StimulusPattern};

/// Role of one E neuron with respect to a set of disjoint patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Selective(usize),
    Background,
}

/// Per-neuron labels. `None` marks a neuron nobody assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub labels: Vec<Option<Label>>,
    pub n_patterns: usize,
}

impl Assignment {
    /// Labels every E neuron from the pattern masks; neurons outside every
    /// mask are background. Overlapping masks are rejected.
    pub fn from_patterns(patterns: &[StimulusPattern], map: &MacroPixelMap, n_exc: usize) -> Result<Self> {
        let mut labels = vec![Some(Label::Background); n_exc];
        for (k, p) in patterns.iter().enumerate() {
            for cell in p.active_cells() {
                let n = map.neuron_of_cell(cell);
                if n >= n_exc {
                    return Err(SimError::param("assignment", format!("cell {cell} maps outside E")));
                }
                if labels[n] != Some(Label::Background) {
                    return Err(SimError::param("assignment", format!("neuron {n} is in two patterns")));
                }
                labels[n] = Some(Label::Selective(k));
            }
        }
        Ok(Assignment { labels, n_patterns: patterns.len() })
    }

    pub fn members(&self, label: Label) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(label))
            .map(|(i, _)| i)
            .collect()
    }

    fn get(&self, i: usize) -> Result<Label> {
        self.labels.get(i).copied().flatten().ok_or(SimError::Unlabeled(i))
    }
}

/// Binary state of every E→E edge at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SynapticSnapshot {
    pub time: f64,
    pub edges: Vec<(u16, u16)>,
    pub flags: Vec<bool>,
}

impl SynapticSnapshot {
    pub fn take(net: &Network) -> Self {
        SynapticSnapshot {
            time: net.now(),
            edges: net.topology.ee.edges.iter().map(|e| (e.pre, e.post)).collect(),
            flags: net.potentiated_flags(),
        }
    }

    /// Writes the binary states back into `topo`: flagged edges to `x = 1`,
    /// the rest to `x = 0`. Drift clocks restart at zero.
    pub fn apply_to(&self, topo: &mut Topology) -> Result<()> {
        let edges = &mut topo.ee.edges;
        if edges.len() != self.edges.len() || edges.iter().zip(&self.edges).any(|(e, &(pre, post))| e.pre != pre || e.post != post) {
            return Err(SimError::EdgeMismatch("snapshot does not match the topology's E→E edges".into()));
        }
        for (e, &f) in edges.iter_mut().zip(&self.flags) {
            e.state.x = if f { 1.0 } else { 0.0 };
            e.state.last_update = 0.0;
        }
        Ok(())
    }

    pub fn potentiated_fraction(&self) -> f64 {
        if self.flags.is_empty() {
            return 0.0;
        }
        self.flags.iter().filter(|&&f| f).count() as f64 / self.flags.len() as f64
    }

    /// `# time=<s>` then `pre,post,flag` per edge.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# time={}", self.time)?;
        for (&(pre, post), &f) in self.edges.iter().zip(&self.flags) {
            writeln!(w, "{},{},{}", pre, post, u8::from(f))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut time = None;
        let mut edges = Vec::new();
        let mut flags = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# time=") {
                time = Some(rest.parse::<f64>().map_err(|_| SimError::parse(n + 1, "bad time header"))?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(SimError::parse(n + 1, "expected pre,post,flag"));
            }
            let num = |s: &str| s.parse::<u16>().map_err(|e| SimError::parse(n + 1, e.to_string()));
            edges.push((num(f[0])?, num(f[1])?));
            flags.push(match f[2] {
                "0" => false,
                "1" => true,
                other => return Err(SimError::parse(n + 1, format!("bad flag `{other}`"))),
            });
        }
        let time = time.ok_or_else(|| SimError::parse(1, "missing `# time=` header"))?;
        Ok(SynapticSnapshot { time, edges, flags })
    }
}

/// Potentiated fraction per synapse group. `within[k]` is pattern k onto
/// itself; the other groups pool all patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFractions {
    pub time: f64,
    pub within: Vec<f64>,
    pub inter_selective: f64,
    pub selective_to_bkg: f64,
    pub bkg_to_selective: f64,
    pub bkg_to_bkg: f64,
    /// Edge count per group in the order within..., inter, sel→bkg, bkg→sel, bkg→bkg.
    pub counts: Vec<usize>,
}

pub fn group_fractions(snapshot: &SynapticSnapshot, assignment: &Assignment) -> Result<GroupFractions> {
    let k = assignment.n_patterns;
    let mut pot = vec![0usize; k + 4];
    let mut tot = vec![0usize; k + 4];
    for (&(pre, post), &flag) in snapshot.edges.iter().zip(&snapshot.flags) {
        let g = match (assignment.get(pre as usize)?, assignment.get(post as usize)?) {
            (Label::Selective(a), Label::Selective(b)) if a == b => a,
            (Label::Selective(_), Label::Selective(_)) => k,
            (Label::Selective(_), Label::Background) => k + 1,
            (Label::Background, Label::Selective(_)) => k + 2,
            (Label::Background, Label::Background) => k + 3,
        };
        tot[g] += 1;
        pot[g] += usize::from(flag);
    }
    let frac = |g: usize| if tot[g] == 0 { 0.0 } else { pot[g] as f64 / tot[g] as f64 };
    Ok(GroupFractions {
        time: snapshot.time,
        within: (0..k).map(frac).collect(),
        inter_selective: frac(k),
        selective_to_bkg: frac(k + 1),
        bkg_to_selective: frac(k + 2),
        bkg_to_bkg: frac(k + 3),
        counts: tot,
    })
}

/// Number of edges whose binary state differs, per consecutive pair.
pub fn hamming_series(snapshots: &[SynapticSnapshot]) -> Result<Vec<usize>> {
    if snapshots.len() < 2 {
        return Err(SimError::TooFewSamples { needed: 2, got: snapshots.len() });
    }
    snapshots
        .windows(2)
        .map(|w| {
            if w[0].edges != w[1].edges {
                return Err(SimError::EdgeMismatch(format!(
                    "snapshots at {} s and {} s cover different edges",
                    w[0].time, w[1].time
                )));
            }
            Ok(w[0].flags.iter().zip(&w[1].flags).filter(|(a, b)| a != b).count())
        })
        .collect()
}

/// Binned population rates, one row per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTraces {
    pub bin: f64,
    pub names: Vec<String>,
    /// `rows[i][g]`: rate of group g (patterns..., bkg, inh) in bin i.
    pub rows: Vec<Vec<f64>>,
}

impl RateTraces {
    pub fn from_log(log: &EventLog, assignment: &Assignment, names: &[String], n_inh: usize, t_end: f64, bin: f64) -> Result<Self> {
        if !(bin > 0.0) {
            return Err(SimError::param("bin", "must be > 0"));
        }
        let k = assignment.n_patterns;
        let mut sizes = vec![0usize; k + 2];
        let mut group_of = Vec::with_capacity(assignment.labels.len());
        for i in 0..assignment.labels.len() {
            let g = match assignment.get(i)? {
                Label::Selective(p) => p,
                Label::Background => k,
            };
            sizes[g] += 1;
            group_of.push(g);
        }
        sizes[k + 1] = n_inh;
        let n_bins = (t_end / bin).round() as usize;
        let mut counts = vec![vec![0u64; k + 2]; n_bins];
        for e in &log.events {
            let b = (e.time.secs() / bin).floor() as usize;
            if b >= n_bins {
                continue;
            }
            let g = match e.address.pop {
                Population::Exc => group_of[e.address.index as usize],
                Population::Inh => k + 1,
                _ => continue,
            };
            counts[b][g] += 1;
        }
        let rows = counts
            .into_iter()
            .map(|c| {
                c.iter()
                    .zip(&sizes)
                    .map(|(&n, &s)| if s == 0 { 0.0 } else { n as f64 / (s as f64 * bin) })
                    .collect()
            })
            .collect();
        let mut all_names: Vec<String> = names.to_vec();
        all_names.push("bkg".into());
        all_names.push("inh".into());
        Ok(RateTraces { bin, names: all_names, rows })
    }

    /// CSV with `t_bin_s` (bin start) then one `<name>_hz` column per group.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t_bin_s")?;
        for n in &self.names {
            write!(w, ",{n}_hz")?;
        }
        writeln!(w)?;
        for (i, row) in self.rows.iter().enumerate() {
            write!(w, "{:.3}", i as f64 * self.bin)?;
            for r in row {
                write!(w, ",{r:.3}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// 14×14 per-cell rates of the mapped E neurons over a window, plus the
/// thresholded binary grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayImage {
    pub rates: Vec<f64>,
    pub active: Vec<bool>,
    pub threshold: f64,
}

impl DelayImage {
    pub fn active_pattern(&self, name: &str) -> StimulusPattern {
        StimulusPattern { name: name.to_string(), cells: self.active.clone() }
    }

    /// Fraction of the mask's active cells that are active in the image.
    pub fn overlap_with(&self, mask: &StimulusPattern) -> f64 {
        let on = mask.active_cells();
        if on.is_empty() {
            return 0.0;
        }
        on.iter().filter(|&&c| self.active[c]).count() as f64 / on.len() as f64
    }

    pub fn write_rates<W: Write>(&self, mut w: W) -> Result<()> {
        for r in 0..GRID {
            let line: Vec<String> = (0..GRID).map(|c| format!("{:.2}", self.rates[r * GRID + c])).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for r in 0..GRID {
            let line: Vec<&str> = (0..GRID).map(|c| if self.active[r * GRID + c] { "1" } else { "0" }).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

pub fn delay_output_image(log: &EventLog, window: (f64, f64), map: &MacroPixelMap, rate_threshold: f64) -> Result<DelayImage> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(SimError::param("window", "need t1 > t0"));
    }
    let (a, b) = (SimTime::from_secs(t0)?, SimTime::from_secs(t1)?);
    let mut cell_of = vec![usize::MAX; GRID_CELLS];
    for (k, c) in map.cells.iter().enumerate() {
        cell_of[c.neuron] = k;
    }
    let mut counts = vec![0u64; GRID_CELLS];
    for e in &log.events {
        if e.address.pop != Population::Exc || e.time < a || e.time >= b {
            continue;
        }
        if let Some(&cell) = cell_of.get(e.address.index as usize) {
            if cell != usize::MAX {
                counts[cell] += 1;
            }
        }
    }
    let rates: Vec<f64> = counts.iter().map(|&n| n as f64 / (t1 - t0)).collect();
    let active = rates.iter().map(|&r| r > 0.0 && r >= rate_threshold).collect();
    Ok(DelayImage { rates, active, threshold: rate_threshold })
}

/// Activity threshold: `factor` × background rate, but at least `floor_hz`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityThreshold {
    pub factor: f64,
    pub floor_hz: f64,
}

impl Default for ActivityThreshold {
    fn default() -> Self {
        ActivityThreshold { factor: 5.0, floor_hz: 5.0 }
    }
}

impl ActivityThreshold {
    pub fn resolve(&self, bkg_rate: f64) -> f64 {
        (self.factor * bkg_rate).max(self.floor_hz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningOptions {
    pub rate_on: f64,
    pub rate_off: f64,
    /// Presentations of each pattern between snapshots.
    pub snapshot_every: usize,
    pub trace_bin: f64,
    /// Delay window relative to stimulus offset, used for persistence scoring.
    pub delay_window: (f64, f64),
    pub threshold: ActivityThreshold,
}

impl Default for LearningOptions {
    fn default() -> Self {
        LearningOptions {
            rate_on: 2600.0,
            rate_off: 0.0,
            snapshot_every: 2,
            trace_bin: 0.1,
            delay_window: (0.25, 1.25),
            threshold: ActivityThreshold::default(),
        }
    }
}

/// Delay-period outcome after one presentation.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayRecord {
    pub presentation: usize,
    pub pattern: usize,
    pub window: (f64, f64),
    /// Mean rate per pattern during the window.
    pub selective_hz: Vec<f64>,
    pub bkg_hz: f64,
    pub threshold_hz: f64,
}

impl DelayRecord {
    /// The stimulated population stayed above threshold and every other
    /// selective population stayed below 20% of it.
    pub fn persistent(&self) -> bool {
        let own = self.selective_hz[self.pattern];
        own >= self.threshold_hz
            && self
                .selective_hz
                .iter()
                .enumerate()
                .all(|(k, &r)| k == self.pattern || r < 0.2 * own)
    }
}

#[derive(Debug, Clone)]
pub struct LearningRun {
    pub log: EventLog,
    pub snapshots: Vec<SynapticSnapshot>,
    pub traces: RateTraces,
    pub delays: Vec<DelayRecord>,
    pub assignment: Assignment,
    /// Set when the run stopped early; time of the stop.
    pub truncated_at: Option<f64>,
}

/// Simulates `schedule` on `net` with plasticity on throughout. Snapshots
/// are taken at t = 0 and at the midpoint of the gap after every
/// `snapshot_every × n_patterns` presentations. `stop` is polled between
/// presentations; returning true ends the run early.
pub fn run_learning(
    net: &mut Network,
    patterns: &[StimulusPattern],
    schedule: &PresentationSchedule,
    opts: &LearningOptions,
    stream: RandomStream,
    mut stop: impl FnMut(f64) -> bool,
) -> Result<LearningRun> {
    if opts.snapshot_every == 0 {
        return Err(SimError::param("snapshot_every", "must be >= 1"));
    }
    let assignment = Assignment::from_patterns(patterns, &net.map, net.config.n_exc)?;
    let groups: Vec<Vec<usize>> = (0..patterns.len()).map(|k| assignment.members(Label::Selective(k))).collect();
    let bkg = assignment.members(Label::Background);
    net.set_plasticity(true);

    let items = &schedule.items;
    for (i, p) in items.iter().enumerate() {
        if p.pattern >= patterns.len() {
            return Err(SimError::param("schedule", format!("unknown pattern index {}", p.pattern)));
        }
        let specs = patterns[p.pattern].encode((p.onset, p.offset()), opts.rate_on, opts.rate_off, stream, i as u64)?;
        net.add_sources(&specs)?;
    }

    let mut log = EventLog::new();
    let mut snapshots = vec![SynapticSnapshot::take(net)];
    let mut delays = Vec::new();
    let mut truncated_at = None;
    let every = opts.snapshot_every * patterns.len().max(1);
    let end = schedule.end();
    for (i, p) in items.iter().enumerate() {
        let next_onset = items.get(i + 1).map(|q| q.onset).unwrap_or(end.max(p.offset() + opts.delay_window.1));
        let w = (p.offset() + opts.delay_window.0, p.offset() + opts.delay_window.1);
        if w.1 <= next_onset {
            log.extend(net.run_until(w.1.max(net.now()))?);
            let selective_hz = groups
                .iter()
                .map(|g| if g.is_empty() { Ok(0.0) } else { population_rate(&log, Population::Exc, g, w) })
                .collect::<Result<Vec<_>>>()?;
            let bkg_hz = if bkg.is_empty() { 0.0 } else { population_rate(&log, Population::Exc, &bkg, w)? };
            delays.push(DelayRecord {
                presentation: i,
                pattern: p.pattern,
                window: w,
                selective_hz,
                bkg_hz,
                threshold_hz: opts.threshold.resolve(bkg_hz),
            });
        }
        if (i + 1) % every == 0 {
            let mid = 0.5 * (p.offset() + next_onset);
            log.extend(net.run_until(mid.max(net.now()))?);
            snapshots.push(SynapticSnapshot::take(net));
        }
        if i + 1 < items.len() && stop(net.now()) {
            truncated_at = Some(net.now());
            break;
        }
    }
    if truncated_at.is_none() && net.now() < end {
        log.extend(net.run_until(end)?);
    }
    log.truncated_at = truncated_at.map(SimTime::from_secs).transpose()?;
    let names: Vec<String> = patterns.iter().map(|p| p.name.clone()).collect();
    let traces = RateTraces::from_log(&log, &assignment, &names, net.config.n_inh, net.now(), opts.trace_bin)?;
    Ok(LearningRun { log, snapshots, traces, delays, assignment, truncated_at })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionScore {
    pub recall_coverage: f64,
    pub intrusion: f64,
    pub threshold_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallOptions {
    pub rate_on: f64,
    /// Quiet period before the stimulus, also the baseline window.
    pub quiet: f64,
    pub stimulus: f64,
    pub delay_window: (f64, f64),
    pub threshold: ActivityThreshold,
    /// Freeze synapses during the trial.
    pub frozen: bool,
}

impl Default for RecallOptions {
    fn default() -> Self {
        RecallOptions {
            rate_on: 2600.0,
            quiet: 1.0,
            stimulus: 1.0,
            delay_window: (0.25, 1.25),
            threshold: ActivityThreshold::default(),
            frozen: false,
        }
    }
}

/// Presents `pattern` with `removal_fraction` of its cells removed and
/// scores the delay window. The threshold uses the background rate of
/// non-pattern neurons in the quiet period before the stimulus. `trial`
/// selects the degradation and encoding substreams.
pub fn recall_test(
    net: &mut Network,
    pattern: &StimulusPattern,
    removal_fraction: f64,
    opts: &RecallOptions,
    stream: RandomStream,
    trial: u64,
) -> Result<CompletionScore> {
    let degraded = pattern.degrade(removal_fraction, &stream, trial)?;
    net.set_plasticity(!opts.frozen);
    let n_exc = net.config.n_exc;
    let mut in_pattern = vec![false; n_exc];
    for c in pattern.active_cells() {
        in_pattern[net.map.neuron_of_cell(c)] = true;
    }
    let members: Vec<usize> = (0..n_exc).filter(|&i| in_pattern[i]).collect();
    let others: Vec<usize> = (0..n_exc).filter(|&i| !in_pattern[i]).collect();

    let t0 = net.now();
    let onset = t0 + opts.quiet;
    let offset = onset + opts.stimulus;
    let specs = degraded.encode((onset, offset), opts.rate_on, 0.0, stream, (1 << 40) | trial)?;
    net.add_sources(&specs)?;
    let w = (offset + opts.delay_window.0, offset + opts.delay_window.1);
    let log = net.run_until(w.1)?;

    let baseline = if others.is_empty() || opts.quiet <= 0.0 {
        0.0
    } else {
        population_rate(&log, Population::Exc, &others, (t0, onset))?
    };
    let threshold_hz = opts.threshold.resolve(baseline);
    let image = delay_output_image(&log, w, &net.map, threshold_hz)?;
    let mut neuron_active = vec![false; n_exc];
    for (k, c) in net.map.cells.iter().enumerate() {
        if c.neuron < n_exc {
            neuron_active[c.neuron] = image.active[k];
        }
    }
    let frac = |set: &[usize]| {
        if set.is_empty() {
            0.0
        } else {
            set.iter().filter(|&&i| neuron_active[i]).count() as f64 / set.len() as f64
        }
    };
    net.set_plasticity(true);
    Ok(CompletionScore {
        recall_coverage: frac(&members),
        intrusion: frac(&others),
        threshold_hz,
    })
}
