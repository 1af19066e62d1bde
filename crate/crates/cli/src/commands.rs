//! One function per subcommand. Each reads only the effective config and
//! writes its files into an existing, empty run directory.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use spikelearn_core::characterization::{
    find_fixed_points, free_running_delay_rate, measure_etf, measure_plasticity_map, EtfCurve, EtfProtocol,
    PlasticityProtocol, Stability,
};
use spikelearn_core::event::StreamId;
use spikelearn_core::learning::{
    delay_output_image, group_fractions, hamming_series, run_learning, recall_test, ActivityThreshold, CompletionScore,
    GroupFractions, LearningOptions, LearningRun, RecallOptions, SynapticSnapshot,
};
use spikelearn_core::network::{Network, Topology};
use spikelearn_core::neuron::{gain_curve, write_gain_csv};
use spikelearn_core::stimulus::{builtin_patterns, disjoint_patterns, PresentationSchedule, StimulusPattern};
use spikelearn_core::SimError;

use crate::config::{parse_subpopulation, ConfigError, ExperimentConfig, Subpopulation};

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Sim(SimError),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Sim(e) => write!(f, "runtime error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        RunError::Sim(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Sim(SimError::Io(e))
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Sim(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, RunError>;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    let mut f = create(dir, name)?;
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn build_patterns(cfg: &ExperimentConfig) -> Result<Vec<StimulusPattern>> {
    let s = &cfg.stimulus;
    Ok(match s.patterns.as_str() {
        "faces" => builtin_patterns().into_iter().take(s.n_patterns).collect(),
        _ => disjoint_patterns(s.n_patterns, s.pattern_size, &cfg.network.seeds.stream(StreamId::Stimulus))?,
    })
}

pub fn learning_options(cfg: &ExperimentConfig) -> LearningOptions {
    LearningOptions {
        rate_on: cfg.stimulus.rate_on,
        rate_off: cfg.stimulus.rate_off,
        snapshot_every: cfg.learn.snapshot_every,
        trace_bin: cfg.learn.trace_bin,
        delay_window: (cfg.learn.delay_start, cfg.learn.delay_end),
        threshold: ActivityThreshold {
            factor: cfg.learn.threshold_factor,
            floor_hz: cfg.learn.threshold_floor,
        },
    }
}

pub fn recall_options(cfg: &ExperimentConfig) -> RecallOptions {
    RecallOptions {
        rate_on: cfg.stimulus.rate_on,
        quiet: cfg.recall.quiet,
        stimulus: cfg.recall.stimulus,
        delay_window: (cfg.recall.delay_start, cfg.recall.delay_end),
        threshold: ActivityThreshold {
            factor: cfg.learn.threshold_factor,
            floor_hz: cfg.learn.threshold_floor,
        },
        frozen: cfg.recall.frozen,
    }
}

pub fn schedule(cfg: &ExperimentConfig, n_patterns: usize) -> Result<PresentationSchedule> {
    let s = &cfg.stimulus;
    Ok(PresentationSchedule::alternating(n_patterns, s.presentations, s.duration, s.gap, s.start)?)
}

pub fn cmd_neuron_tf(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let t = &cfg.neuron_tf;
    let params = if t.population == "exc" { &cfg.network.exc } else { &cfg.network.inh };
    let curve = gain_curve(params, t.n_sources, t.efficacy, &t.rates, t.duration, cfg.network.seeds.stream(StreamId::Probe))?;
    let mut f = create(out, "gain.csv")?;
    write_gain_csv(&mut f, &curve)?;
    f.flush()?;
    Ok(format!("{} points written to gain.csv\n", curve.len()))
}

pub fn cmd_ltp_ltd(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let l = &cfg.ltp_ltd;
    let proto = PlasticityProtocol {
        n_neurons: l.n_neurons,
        n_nonplastic: l.n_nonplastic,
        j_nonplastic: l.j_nonplastic,
        n_plastic: l.n_plastic,
        window: l.window,
        n_trials: l.trials,
        calibration_duration: l.calibration_duration,
    };
    let map = measure_plasticity_map(
        &l.nu_pre,
        &l.nu_post,
        &proto,
        &cfg.network.exc,
        &cfg.network.synapse,
        cfg.network.seeds.stream(StreamId::Plasticity),
    )?;
    let mut f = create(out, "plasticity_map.csv")?;
    map.write_csv(&mut f)?;
    f.flush()?;
    let (vp, np) = map.monotonicity_violations(|p| p.ltp, true);
    let (vq, nq) = map.monotonicity_violations(|p| p.ltp, false);
    let mut report = String::new();
    let _ = writeln!(report, "p_ltp violations along nu_post: {vp}/{np}");
    let _ = writeln!(report, "p_ltp violations along nu_pre: {vq}/{nq}");
    let max_ltd_high_post = map
        .points
        .iter()
        .filter(|p| p.nu_post >= 80.0)
        .map(|p| p.ltd.p)
        .fold(f64::NAN, f64::max);
    if max_ltd_high_post.is_finite() {
        let _ = writeln!(report, "max p_ltd at nu_post >= 80 Hz: {max_ltd_high_post:.4}");
    }
    write_file(out, "report.txt", &report)?;
    Ok(report)
}

fn members_for(spec: &str, net: &Network, patterns: &[StimulusPattern]) -> Result<(Vec<usize>, Option<usize>)> {
    match parse_subpopulation(spec, net.config.n_exc)? {
        Subpopulation::Pattern(k) => {
            let p = patterns
                .get(k)
                .ok_or_else(|| ConfigError(format!("etf.subpopulation: no pattern {k}")))?;
            Ok((p.active_cells().iter().map(|&c| net.map.neuron_of_cell(c)).collect(), Some(k)))
        }
        Subpopulation::Neurons(v) => Ok((v, None)),
    }
}

/// Validates `etf.subpopulation` against the configured patterns.
pub fn check_subpopulation(cfg: &ExperimentConfig) -> Result<()> {
    if let Subpopulation::Pattern(k) = parse_subpopulation(&cfg.etf.subpopulation, cfg.network.n_exc)? {
        let n = build_patterns(cfg)?.len();
        if k >= n {
            return Err(ConfigError(format!("etf.subpopulation: no pattern {k} among {n}")).into());
        }
    }
    Ok(())
}

pub fn count_stable(curve: &EtfCurve) -> Result<usize> {
    Ok(find_fixed_points(curve)?.iter().filter(|p| p.stability == Stability::Stable).count())
}

pub fn cmd_etf(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let e = &cfg.etf;
    let patterns = build_patterns(cfg)?;
    let net = Network::build(cfg.network.clone())?;
    let (members, pattern) = members_for(&e.subpopulation, &net, &patterns)?;
    if e.free_run && pattern.is_none() {
        return Err(ConfigError("etf.free_run needs a `pattern:K` subpopulation".into()).into());
    }
    let proto = EtfProtocol { settle: e.settle, measure: e.measure };
    let stream = cfg.network.seeds.stream(StreamId::Probe);
    // Fractions are independent; results are collected in grid order.
    let curves: Vec<Result<EtfCurve>> = std::thread::scope(|s| {
        let handles: Vec<_> = e
            .fractions
            .iter()
            .map(|&f| {
                let (net, members) = (&net, &members);
                s.spawn(move || measure_etf(net, members, &e.nu_in, f, &proto, stream).map_err(RunError::from))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("etf worker panicked")).collect()
    });
    let mut report = String::new();
    for (f, curve) in e.fractions.iter().zip(curves) {
        let curve = curve?;
        let mut w = create(out, &format!("etf_f{f}.csv"))?;
        curve.write_csv(&mut w)?;
        w.flush()?;
        let fps = find_fixed_points(&curve)?;
        let stable = fps.iter().filter(|p| p.stability == Stability::Stable).count();
        let listed: Vec<String> = fps
            .iter()
            .map(|p| format!("{:.2}Hz/{}", p.rate, if p.stability == Stability::Stable { "stable" } else { "unstable" }))
            .collect();
        let _ = write!(report, "f={f}: {stable} stable [{}]", listed.join(" "));
        if let (true, Some(k)) = (e.free_run, pattern) {
            let window = (e.free_window_start, e.free_window_end);
            let r = free_running_delay_rate(
                &net,
                &patterns[k],
                *f,
                cfg.stimulus.rate_on,
                cfg.stimulus.duration,
                window,
                cfg.network.seeds.stream(StreamId::Stimulus),
            )?;
            let _ = write!(report, " free-run delay rate {r:.2}Hz");
        }
        report.push('\n');
    }
    write_file(out, "report.txt", &report)?;
    Ok(report)
}

fn fractions_line(g: &GroupFractions, names: &[String]) -> String {
    let mut s = format!("t={:.1}s", g.time);
    for (n, w) in names.iter().zip(&g.within) {
        let _ = write!(s, " {n}->{n}={w:.4}");
    }
    let _ = write!(
        s,
        " inter={:.4} sel->bkg={:.4} bkg->sel={:.4} bkg->bkg={:.4}",
        g.inter_selective, g.selective_to_bkg, g.bkg_to_selective, g.bkg_to_bkg
    );
    s
}

/// Snapshot nearest to `t`, if the run got that far.
fn snapshot_at(snaps: &[SynapticSnapshot], t: f64) -> Option<&SynapticSnapshot> {
    let last = snaps.last()?;
    if last.time + 1e-9 < t && t > 0.0 {
        return None;
    }
    snaps.iter().min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
}

pub fn learn_report(run: &LearningRun, names: &[String]) -> Result<String> {
    let mut r = String::new();
    if let Some(t) = run.truncated_at {
        let _ = writeln!(r, "TRUNCATED at t={t}s");
    }
    let _ = writeln!(r, "group fractions:");
    for t in [0.0, 30.0, 300.0] {
        match snapshot_at(&run.snapshots, t) {
            Some(s) => {
                let _ = writeln!(r, "  epoch {t}s: {}", fractions_line(&group_fractions(s, &run.assignment)?, names));
            }
            None => {
                let _ = writeln!(r, "  epoch {t}s: not reached");
            }
        }
    }
    if let Some(s) = run.snapshots.last() {
        let _ = writeln!(r, "  final: {}", fractions_line(&group_fractions(s, &run.assignment)?, names));
    }
    let persistent = run.delays.iter().filter(|d| d.persistent()).count();
    let _ = writeln!(r, "persistent delay windows: {persistent}/{}", run.delays.len());
    if run.snapshots.len() >= 2 {
        let ham = hamming_series(&run.snapshots)?;
        let zero = ham.iter().filter(|&&h| h == 0).count();
        let _ = writeln!(r, "hamming intervals: {} ({} with distance 0)", ham.len(), zero);
    }
    Ok(r)
}

/// Runs the learning schedule. `stop` is polled between presentations.
pub fn cmd_learn(cfg: &ExperimentConfig, out: &Path, mut stop: impl FnMut() -> bool) -> Result<String> {
    let patterns = build_patterns(cfg)?;
    let sched = schedule(cfg, patterns.len())?;
    let opts = learning_options(cfg);
    let mut net = Network::build(cfg.network.clone())?;
    let stop_at = cfg.learn.stop_at;
    let run = run_learning(&mut net, &patterns, &sched, &opts, cfg.network.seeds.stream(StreamId::Stimulus), |t| {
        stop() || stop_at.is_some_and(|s| t >= s)
    })?;
    let names: Vec<String> = patterns.iter().map(|p| p.name.clone()).collect();

    for p in &patterns {
        let mut w = create(out, &format!("patterns/{}.txt", p.name))?;
        p.write_text(&mut w)?;
        w.flush()?;
    }
    let mut w = create(out, "schedule.txt")?;
    sched.write_text(&mut w, &patterns)?;
    w.flush()?;
    if cfg.learn.write_events {
        let mut w = create(out, "events.txt")?;
        run.log.write_text(&mut w)?;
        w.flush()?;
    }
    for (i, s) in run.snapshots.iter().enumerate() {
        let mut w = create(out, &format!("snapshots/snapshot_{i:04}.txt"))?;
        s.write_text(&mut w)?;
        w.flush()?;
    }
    if let Some(s) = run.snapshots.last() {
        let mut w = create(out, "final_snapshot.txt")?;
        s.write_text(&mut w)?;
        w.flush()?;
    }

    let mut groups = String::from("t_s");
    for n in &names {
        let _ = write!(groups, ",{n}_{n}");
    }
    groups.push_str(",inter_selective,selective_to_bkg,bkg_to_selective,bkg_to_bkg\n");
    for s in &run.snapshots {
        let g = group_fractions(s, &run.assignment)?;
        let _ = write!(groups, "{}", g.time);
        for w in &g.within {
            let _ = write!(groups, ",{w:.6}");
        }
        let _ = writeln!(
            groups,
            ",{:.6},{:.6},{:.6},{:.6}",
            g.inter_selective, g.selective_to_bkg, g.bkg_to_selective, g.bkg_to_bkg
        );
    }
    write_file(out, "groups.csv", &groups)?;

    if run.snapshots.len() >= 2 {
        let mut ham = String::from("t_from_s,t_to_s,distance\n");
        for (w, h) in run.snapshots.windows(2).zip(hamming_series(&run.snapshots)?) {
            let _ = writeln!(ham, "{},{},{}", w[0].time, w[1].time, h);
        }
        write_file(out, "hamming.csv", &ham)?;
    }

    let mut w = create(out, "traces.csv")?;
    run.traces.write_csv(&mut w)?;
    w.flush()?;

    let mut delays = String::from("presentation,pattern,window_start_s,window_end_s");
    for n in &names {
        let _ = write!(delays, ",{n}_hz");
    }
    delays.push_str(",bkg_hz,threshold_hz,persistent\n");
    for d in &run.delays {
        let _ = write!(delays, "{},{},{},{}", d.presentation, names[d.pattern], d.window.0, d.window.1);
        for r in &d.selective_hz {
            let _ = write!(delays, ",{r:.4}");
        }
        let _ = writeln!(delays, ",{:.4},{:.4},{}", d.bkg_hz, d.threshold_hz, u8::from(d.persistent()));
    }
    write_file(out, "delays.csv", &delays)?;

    for (k, name) in names.iter().enumerate() {
        if let Some(d) = run.delays.iter().rev().find(|d| d.pattern == k) {
            let img = delay_output_image(&run.log, d.window, &net.map, d.threshold_hz)?;
            let mut w = create(out, &format!("delay_{name}.txt"))?;
            img.write_rates(&mut w)?;
            w.flush()?;
            let mut w = create(out, &format!("delay_{name}_binary.txt"))?;
            img.write_binary(&mut w)?;
            w.flush()?;
        }
    }

    let report = learn_report(&run, &names)?;
    write_file(out, "report.txt", &report)?;
    Ok(report)
}

/// The configured topology, with the trained matrix applied when a
/// snapshot path is set.
pub fn recall_topology(cfg: &ExperimentConfig) -> Result<Topology> {
    let mut topo = Topology::build(&cfg.network)?;
    if !cfg.recall.snapshot.is_empty() {
        let f = File::open(&cfg.recall.snapshot)
            .map_err(|e| ConfigError(format!("recall.snapshot: cannot open {}: {e}", cfg.recall.snapshot)))?;
        let snap = SynapticSnapshot::read_text(BufReader::new(f))?;
        snap.apply_to(&mut topo)?;
    }
    Ok(topo)
}

/// Runs `trials` independent recall trials on fresh copies of `topo`.
/// Trial `k` uses pattern `k mod n` and its own noise seed.
pub fn recall_trials(
    cfg: &ExperimentConfig,
    topo: &Topology,
    patterns: &[StimulusPattern],
) -> Result<Vec<(usize, CompletionScore)>> {
    let opts = recall_options(cfg);
    (0..cfg.recall.trials)
        .map(|k| {
            let mut c = cfg.network.clone();
            c.seeds.noise = c.seeds.noise.wrapping_add(k as u64);
            let mut net = Network::from_topology(c, topo.clone())?;
            let p = k % patterns.len();
            let score = recall_test(
                &mut net,
                &patterns[p],
                cfg.recall.removal,
                &opts,
                cfg.network.seeds.stream(StreamId::Stimulus),
                k as u64,
            )?;
            Ok((p, score))
        })
        .collect()
}

pub fn cmd_recall(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let patterns = build_patterns(cfg)?;
    if patterns.is_empty() {
        return Err(ConfigError("recall needs at least one pattern".into()).into());
    }
    let topo = recall_topology(cfg)?;
    let scores = recall_trials(cfg, &topo, &patterns)?;
    let mut csv = String::from("trial,pattern,recall_coverage,intrusion,threshold_hz\n");
    for (k, (p, s)) in scores.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{k},{},{:.6},{:.6},{:.4}",
            patterns[*p].name, s.recall_coverage, s.intrusion, s.threshold_hz
        );
    }
    write_file(out, "scores.csv", &csv)?;
    let n = scores.len().max(1) as f64;
    let coverage = scores.iter().map(|(_, s)| s.recall_coverage).sum::<f64>() / n;
    let intrusion = scores.iter().map(|(_, s)| s.intrusion).sum::<f64>() / n;
    let good = scores
        .iter()
        .filter(|(_, s)| s.recall_coverage >= 0.9 && s.intrusion <= 0.1)
        .count();
    let mut r = String::new();
    let _ = writeln!(r, "matrix: {}", if cfg.recall.snapshot.is_empty() { "untrained" } else { &cfg.recall.snapshot });
    let _ = writeln!(r, "removal: {}", cfg.recall.removal);
    let _ = writeln!(r, "mean recall_coverage: {coverage:.4}");
    let _ = writeln!(r, "mean intrusion: {intrusion:.4}");
    let _ = writeln!(r, "trials with coverage >= 0.9 and intrusion <= 0.1: {good}/{}", scores.len());
    if coverage < cfg.recall.attractor_coverage {
        let _ = writeln!(r, "no attractor");
    }
    write_file(out, "report.txt", &r)?;
    Ok(r)
}
