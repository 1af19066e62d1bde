//! Characterization experiments: LTP/LTD probability maps measured with
//! synthetic trains, the effective transfer function of an excitatory
//! subpopulation, and fixed points of `nu_out(nu) = nu`.

use std::io::Write;

use crate::error::{Result, SimError};
use crate::event::{Address, Population, RandomStream, Simulation, StreamId};
use crate::network::{population_rate, Network, SourceSpec};
use crate::neuron::{transfer_function, InputSpec, NeuronParams, NeuronState};
use crate::stimulus::StimulusPattern;
use crate::synapse::{SynapseParams, SynapseState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlasticityProtocol {
    pub n_neurons: usize,
    pub n_nonplastic: usize,
    pub j_nonplastic: f64,
    pub n_plastic: usize,
    /// Seconds between initialization and the binary-state check.
    pub window: f64,
    pub n_trials: usize,
    /// Run length of each transfer-function evaluation during calibration.
    pub calibration_duration: f64,
}

impl Default for PlasticityProtocol {
    fn default() -> Self {
        PlasticityProtocol {
            n_neurons: 64,
            n_nonplastic: 64,
            j_nonplastic: 0.05,
            n_plastic: 64,
            window: 1.0,
            n_trials: 1,
            calibration_duration: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionEstimate {
    pub p: f64,
    pub stderr: f64,
}

impl TransitionEstimate {
    fn from_counts(k: usize, n: usize) -> Self {
        let p = if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let stderr = if n == 0 { 0.0 } else { (p * (1.0 - p) / n as f64).sqrt() };
        TransitionEstimate { p, stderr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub nu_pre: f64,
    pub nu_post: f64,
    /// Measured postsynaptic rate after calibration.
    pub nu_post_measured: f64,
    /// Per-source rate on the non-plastic drive synapses.
    pub drive_rate: f64,
    pub ltp: TransitionEstimate,
    pub ltd: TransitionEstimate,
    pub n: usize,
}

/// Row-major over `nu_post`, then `nu_pre`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlasticityMap {
    pub nu_pre: Vec<f64>,
    pub nu_post: Vec<f64>,
    pub points: Vec<MapPoint>,
    pub protocol: PlasticityProtocol,
}

impl PlasticityMap {
    pub fn at(&self, i_pre: usize, i_post: usize) -> &MapPoint {
        &self.points[i_post * self.nu_pre.len() + i_pre]
    }

    /// `nu_pre,nu_post,p_ltp,p_ltp_se,p_ltd,p_ltd_se,n`
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "nu_pre,nu_post,p_ltp,p_ltp_se,p_ltd,p_ltd_se,n")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{:.6},{:.6},{:.6},{:.6},{}",
                p.nu_pre, p.nu_post, p.ltp.p, p.ltp.stderr, p.ltd.p, p.ltd.stderr, p.n
            )?;
        }
        Ok(())
    }

    /// Adjacent pairs along either axis where `metric` decreases by more
    /// than twice the combined standard error, together with the number of
    /// pairs checked. `along_post` selects the axis.
    pub fn monotonicity_violations(&self, metric: impl Fn(&MapPoint) -> TransitionEstimate, along_post: bool) -> (usize, usize) {
        let (n_pre, n_post) = (self.nu_pre.len(), self.nu_post.len());
        let mut violations = 0;
        let mut pairs = 0;
        if along_post {
            for i in 0..n_pre {
                for j in 1..n_post {
                    let (a, b) = (metric(self.at(i, j - 1)), metric(self.at(i, j)));
                    pairs += 1;
                    if a.p - b.p > 2.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt() {
                        violations += 1;
                    }
                }
            }
        } else {
            for j in 0..n_post {
                for i in 1..n_pre {
                    let (a, b) = (metric(self.at(i - 1, j)), metric(self.at(i, j)));
                    pairs += 1;
                    if a.p - b.p > 2.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt() {
                        violations += 1;
                    }
                }
            }
        }
        (violations, pairs)
    }
}

/// Per-source drive rate on `n` synapses of efficacy `j` that makes the
/// neuron fire at `target` Hz (within 10%), found by bisection on the
/// measured transfer function.
pub fn calibrate_drive(
    params: &NeuronParams,
    n: usize,
    j: f64,
    target: f64,
    duration: f64,
    stream: RandomStream,
) -> Result<(f64, f64)> {
    if target <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let rate_at = |r: f64| -> Result<f64> {
        let input = InputSpec {
            n_sources: n,
            rate_each: r,
            efficacy_each: j,
        };
        Ok(transfer_function(params, input, duration, stream)?.rate)
    };
    let span = params.theta - params.floor;
    // Drive that pushes ten thresholds through per refractory period.
    let cap = 10.0 * span / (n as f64 * j * params.tau_arp.max(1e-4));
    // Deterministic-drift guess, then widen until the target is bracketed.
    let mut hi = (2.0 * (params.leak + target * span) / (n as f64 * j)).min(cap);
    let mut out_hi = rate_at(hi)?;
    while out_hi < target && hi < cap {
        hi = (hi * 2.0).min(cap);
        out_hi = rate_at(hi)?;
    }
    if out_hi < target * 0.9 {
        return Err(SimError::CalibrationFailed {
            target_hz: target,
            min_hz: 0.0,
            max_hz: out_hi,
        });
    }
    let max_out = out_hi;
    let mut lo = 0.0;
    let mut best = (hi, out_hi);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let out = rate_at(mid)?;
        if (out - target).abs() < (best.1 - target).abs() {
            best = (mid, out);
        }
        if (out - target).abs() <= 0.02 * target {
            break;
        }
        if out < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - target).abs() > 0.1 * target {
        return Err(SimError::CalibrationFailed {
            target_hz: target,
            min_hz: 0.0,
            max_hz: max_out,
        });
    }
    Ok(best)
}

/// Runs one probe neuron for `window` seconds and returns how many of its
/// plastic synapses ended on the other side of `x_theta`.
fn probe_transitions(
    neuron: &NeuronParams,
    syn: &SynapseParams,
    proto: &PlasticityProtocol,
    drive_rate: f64,
    nu_pre: f64,
    x0: f64,
    stream: &RandomStream,
    key: u64,
) -> Result<usize> {
    let mut sim = Simulation::new();
    let n_drive = proto.n_nonplastic;
    let base = key * (n_drive + proto.n_plastic) as u64;
    for k in 0..n_drive {
        sim.poisson_source(
            drive_rate,
            Address::new(Population::Probe, k as u16),
            (0.0, proto.window),
            stream.substream(base + k as u64),
        )?;
    }
    for k in 0..proto.n_plastic {
        sim.poisson_source(
            nu_pre,
            Address::new(Population::Probe, (n_drive + k) as u16),
            (0.0, proto.window),
            stream.substream(base + (n_drive + k) as u64),
        )?;
    }
    let log = sim.run_until(proto.window)?;
    let mut v = NeuronState::at_rest(neuron);
    let mut synapses = vec![SynapseState::plastic(x0); proto.n_plastic];
    let initial = synapses[0].is_potentiated(syn);
    for e in &log.events {
        let t = e.time.secs();
        v.integrate_to(neuron, t)?;
        let k = e.address.index as usize;
        if k < n_drive {
            v.receive(neuron, proto.j_nonplastic, t);
        } else {
            let s = &mut synapses[k - n_drive];
            s.drift_to(syn, t)?;
            s.on_presynaptic_spike(syn, v.v);
        }
    }
    let mut flips = 0;
    for s in &mut synapses {
        s.drift_to(syn, proto.window)?;
        if s.is_potentiated(syn) != initial {
            flips += 1;
        }
    }
    Ok(flips)
}

/// LTP/LTD transition probabilities over a `(nu_pre, nu_post)` grid.
pub fn measure_plasticity_map(
    nu_pre: &[f64],
    nu_post: &[f64],
    proto: &PlasticityProtocol,
    neuron: &NeuronParams,
    syn: &SynapseParams,
    stream: RandomStream,
) -> Result<PlasticityMap> {
    if nu_pre.iter().chain(nu_post).any(|&r| !(r >= 0.0)) {
        return Err(SimError::param("grid", "rates must be >= 0"));
    }
    neuron.validate()?;
    syn.validate(neuron.floor, neuron.theta)?;
    let calib_stream = RandomStream::new(stream.seed, StreamId::Probe);
    let mut points = Vec::with_capacity(nu_pre.len() * nu_post.len());
    for (j_post, &target) in nu_post.iter().enumerate() {
        let (drive, measured) = calibrate_drive(
            neuron,
            proto.n_nonplastic,
            proto.j_nonplastic,
            target,
            proto.calibration_duration,
            calib_stream,
        )?;
        for (i_pre, &pre) in nu_pre.iter().enumerate() {
            let mut ltp = 0;
            let mut ltd = 0;
            for trial in 0..proto.n_trials {
                for n in 0..proto.n_neurons {
                    let cell = (((j_post * nu_pre.len() + i_pre) * proto.n_trials + trial) * proto.n_neurons + n) as u64;
                    ltp += probe_transitions(neuron, syn, proto, drive, pre, 0.0, &stream, 2 * cell)?;
                    ltd += probe_transitions(neuron, syn, proto, drive, pre, 1.0, &stream, 2 * cell + 1)?;
                }
            }
            let n = proto.n_trials * proto.n_neurons * proto.n_plastic;
            points.push(MapPoint {
                nu_pre: pre,
                nu_post: target,
                nu_post_measured: measured,
                drive_rate: drive,
                ltp: TransitionEstimate::from_counts(ltp, n),
                ltd: TransitionEstimate::from_counts(ltd, n),
                n,
            });
        }
    }
    Ok(PlasticityMap {
        nu_pre: nu_pre.to_vec(),
        nu_post: nu_post.to_vec(),
        points,
        protocol: *proto,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub rate: f64,
    pub stability: Stability,
    /// Secant slope of `nu_out` across the crossing.
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtfSample {
    pub nu_in: f64,
    pub nu_out: f64,
    pub stderr: f64,
    /// False when the two halves of the measurement window disagree.
    pub stationary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtfCurve {
    pub potentiated_fraction: f64,
    pub samples: Vec<EtfSample>,
}

impl EtfCurve {
    pub fn from_pairs(potentiated_fraction: f64, pairs: &[(f64, f64)]) -> Self {
        EtfCurve {
            potentiated_fraction,
            samples: pairs
                .iter()
                .map(|&(nu_in, nu_out)| EtfSample {
                    nu_in,
                    nu_out,
                    stderr: 0.0,
                    stationary: true,
                })
                .collect(),
        }
    }

    /// `nu_in,nu_out,stderr,potentiated_fraction`, fixed points as `#` footer lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "nu_in,nu_out,stderr,potentiated_fraction")?;
        for s in &self.samples {
            writeln!(w, "{},{:.6},{:.6},{}", s.nu_in, s.nu_out, s.stderr, self.potentiated_fraction)?;
        }
        for fp in find_fixed_points(self)? {
            let label = match fp.stability {
                Stability::Stable => "stable",
                Stability::Unstable => "unstable",
            };
            writeln!(w, "# fixed_point,{:.6},{},{:.6}", fp.rate, label, fp.slope)?;
        }
        Ok(())
    }
}

/// Crossings of `nu_out - nu_in` through zero, located by linear
/// interpolation between samples, in increasing order of rate. A curve that
/// starts exactly on the diagonal at its first sample and then drops below
/// it yields a boundary fixed point there.
pub fn find_fixed_points(curve: &EtfCurve) -> Result<Vec<FixedPoint>> {
    let s = &curve.samples;
    if s.len() < 3 {
        return Err(SimError::TooFewSamples {
            needed: 3,
            got: s.len(),
        });
    }
    let d: Vec<f64> = s.iter().map(|p| p.nu_out - p.nu_in).collect();
    let slope = |i: usize| (s[i + 1].nu_out - s[i].nu_out) / (s[i + 1].nu_in - s[i].nu_in);
    let classify = |k: f64| if k < 1.0 { Stability::Stable } else { Stability::Unstable };
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < s.len() {
        if d[i] == 0.0 {
            // Exact hit: judge the direction from the neighbours.
            let before = (0..i).rev().map(|k| d[k]).find(|&x| x != 0.0);
            let after = (i + 1..s.len()).map(|k| d[k]).find(|&x| x != 0.0);
            let crosses = match (before, after) {
                (Some(b), Some(a)) => b.signum() != a.signum(),
                (None, Some(a)) => a < 0.0,
                (Some(b), None) => b > 0.0,
                (None, None) => false,
            };
            if crosses {
                let lo = if i > 0 { i - 1 } else { i };
                let hi = (i + 1).min(s.len() - 1);
                let k = (s[hi].nu_out - s[lo].nu_out) / (s[hi].nu_in - s[lo].nu_in);
                out.push(FixedPoint {
                    rate: s[i].nu_in,
                    stability: classify(k),
                    slope: k,
                });
            }
            i += 1;
            continue;
        }
        if d[i + 1] != 0.0 && d[i].signum() != d[i + 1].signum() {
            let frac = d[i] / (d[i] - d[i + 1]);
            let rate = s[i].nu_in + frac * (s[i + 1].nu_in - s[i].nu_in);
            let k = slope(i);
            out.push(FixedPoint {
                rate,
                stability: classify(k),
                slope: k,
            });
        }
        i += 1;
    }
    if d[s.len() - 1] == 0.0 {
        let last = s.len() - 1;
        let before = (0..last).rev().map(|k| d[k]).find(|&x| x != 0.0);
        if before.is_some_and(|b| b > 0.0) {
            let k = slope(last - 1);
            out.push(FixedPoint {
                rate: s[last].nu_in,
                stability: classify(k),
                slope: k,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtfProtocol {
    /// Seconds discarded before measuring.
    pub settle: f64,
    pub measure: f64,
}

impl Default for EtfProtocol {
    fn default() -> Self {
        EtfProtocol {
            settle: 0.5,
            measure: 4.0,
        }
    }
}

/// Effective transfer function of `members` (E indices).
///
/// For every `nu_in`: the E→E edges inside the subpopulation are cut and
/// each is replaced by an independent Poisson train at `nu_in` through the
/// same efficacy; the rest of the network, inhibition included, runs live
/// with plasticity frozen. The within-subpopulation synapses are first set
/// to `fraction` potentiated.
pub fn measure_etf(
    base: &Network,
    members: &[usize],
    nu_in_grid: &[f64],
    fraction: f64,
    proto: &EtfProtocol,
    stream: RandomStream,
) -> Result<EtfCurve> {
    if members.is_empty() {
        return Err(SimError::EmptyPopulation);
    }
    if members.iter().any(|&m| m >= base.config.n_exc) {
        return Err(SimError::param("subpopulation", "index outside the excitatory population"));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(SimError::param("potentiated_fraction", "must lie in [0, 1]"));
    }
    let mut mask = vec![false; base.config.n_exc];
    for &m in members {
        mask[m] = true;
    }
    let mut template = base.clone();
    let mut rng = base.config.seeds.stream(StreamId::Topology).substream(0xE7F);
    template.topology.force_fraction(&mask, fraction, &mut rng);

    let mut samples = Vec::with_capacity(nu_in_grid.len());
    for (g, &nu_in) in nu_in_grid.iter().enumerate() {
        let mut net = Network::from_topology(template.config.clone(), template.topology.clone())?;
        net.set_plasticity(false);
        let cut = net.sever_within(&mask);
        let t_end = proto.settle + proto.measure;
        for (k, &edge) in cut.iter().enumerate() {
            let e = net.topology.ee.edges[edge];
            let w = e.state.efficacy(&net.config.synapse, net.config.j_inh);
            net.add_probe(
                Address::exc(e.post as usize),
                w,
                nu_in,
                (0.0, t_end),
                stream,
                ((g as u64) << 24) | k as u64,
            )?;
        }
        let log = net.run_until(t_end)?;
        let half = proto.measure / 2.0;
        let r1 = population_rate(&log, Population::Exc, members, (proto.settle, proto.settle + half))?;
        let r2 = population_rate(&log, Population::Exc, members, (proto.settle + half, t_end))?;
        let nu_out = 0.5 * (r1 + r2);
        let stderr = (nu_out / (members.len() as f64 * proto.measure)).sqrt();
        let half_se = 2.0 * stderr;
        samples.push(EtfSample {
            nu_in,
            nu_out,
            stderr,
            stationary: (r1 - r2).abs() < 2.0 * half_se.max(1e-9),
        });
    }
    Ok(EtfCurve {
        potentiated_fraction: fraction,
        samples,
    })
}

/// Drives `pattern` for `stim` seconds on a plasticity-frozen copy of
/// `base` whose within-pattern synapses are `fraction` potentiated, then
/// returns the pattern population's mean rate over `delay_window` (seconds
/// after stimulus offset).
pub fn free_running_delay_rate(
    base: &Network,
    pattern: &StimulusPattern,
    fraction: f64,
    rate_on: f64,
    stim: f64,
    delay_window: (f64, f64),
    stream: RandomStream,
) -> Result<f64> {
    let members: Vec<usize> = pattern.active_cells().iter().map(|&c| base.map.neuron_of_cell(c)).collect();
    let mut mask = vec![false; base.config.n_exc];
    for &m in &members {
        mask[m] = true;
    }
    let mut topo = base.topology.clone();
    let mut rng = base.config.seeds.stream(StreamId::Topology).substream(0xE7F);
    topo.force_fraction(&mask, fraction, &mut rng);
    let mut net = Network::from_topology(base.config.clone(), topo)?;
    net.set_plasticity(false);
    let specs: Vec<SourceSpec> = pattern.encode((0.0, stim), rate_on, 0.0, stream, 0)?;
    net.add_sources(&specs)?;
    let t_end = stim + delay_window.1;
    let log = net.run_until(t_end)?;
    population_rate(&log, Population::Exc, &members, (stim + delay_window.0, t_end))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> EtfCurve {
        let n = ((hi - lo) / step).round() as usize;
        let pairs: Vec<(f64, f64)> = (0..=n)
            .map(|k| {
                let x = lo + k as f64 * step;
                (x, f(x))
            })
            .collect();
        EtfCurve::from_pairs(0.0, &pairs)
    }

    #[test]
    fn shifted_identity_has_boundary_fixed_point() {
        let c = curve(|x| (x - 5.0).max(0.0), 0.0, 50.0, 5.0);
        let fps = find_fixed_points(&c).unwrap();
        assert_eq!(fps.len(), 1);
        assert_eq!(fps[0].rate, 0.0);
        assert_eq!(fps[0].stability, Stability::Stable);
    }

    #[test]
    fn constant_curve() {
        let c = curve(|_| 12.5, 0.0, 50.0, 5.0);
        let fps = find_fixed_points(&c).unwrap();
        assert_eq!(fps.len(), 1);
        assert!((fps[0].rate - 12.5).abs() < 1e-12);
        assert_eq!(fps[0].stability, Stability::Stable);
    }

    #[test]
    fn needs_three_samples() {
        let c = EtfCurve::from_pairs(0.0, &[(0.0, 1.0), (1.0, 0.0)]);
        assert!(find_fixed_points(&c).is_err());
    }

    #[test]
    fn linear_crossing_is_exact() {
        // nu_out = 0.5 nu + 10 meets the diagonal at 20.
        let c = curve(|x| 0.5 * x + 10.0, 0.0, 47.0, 3.7);
        let fps = find_fixed_points(&c).unwrap();
        assert_eq!(fps.len(), 1);
        assert!((fps[0].rate - 20.0).abs() < 1e-9);
    }

    #[test]
    fn protocol_defaults_follow_methods() {
        let p = PlasticityProtocol::default();
        assert_eq!((p.n_neurons, p.n_nonplastic, p.n_plastic), (64, 64, 64));
        assert_eq!(p.j_nonplastic, 0.05);
        assert_eq!(p.window, 1.0);
    }

    #[test]
    fn zero_target_needs_no_drive() {
        let (r, out) = calibrate_drive(&NeuronParams::default(), 64, 0.05, 0.0, 2.0, RandomStream::new(1, StreamId::Probe)).unwrap();
        assert_eq!((r, out), (0.0, 0.0));
    }

    #[test]
    fn unreachable_target_names_range() {
        let err = calibrate_drive(&NeuronParams::default(), 64, 0.05, 5000.0, 2.0, RandomStream::new(1, StreamId::Probe)).unwrap_err();
        assert!(matches!(err, SimError::CalibrationFailed { .. }), "{err}");
    }
}
