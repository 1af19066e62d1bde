//! Experiment configuration: flat `key = value` lines grouped under
//! `[section]` headers. Every key has a default; unknown keys are errors.
//! The effective configuration renders back to the same format, so a run
//! directory's `config.txt` reproduces the run.

use std::fmt::Write as _;
use std::path::Path;

use spikelearn_core::network::NetworkConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusConfig {
    /// `faces` for the two built-in faces, `disjoint` for random masks.
    pub patterns: String,
    pub n_patterns: usize,
    pub pattern_size: usize,
    /// Per-pixel-group rate of an active macro-pixel, Hz.
    pub rate_on: f64,
    pub rate_off: f64,
    pub duration: f64,
    pub gap: f64,
    pub start: f64,
    pub presentations: usize,
}

impl Default for StimulusConfig {
    fn default() -> Self {
        StimulusConfig {
            patterns: "faces".into(),
            n_patterns: 2,
            pattern_size: 65,
            rate_on: 2600.0,
            rate_off: 0.0,
            duration: 1.0,
            gap: 6.5,
            start: 1.0,
            presentations: 80,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTfConfig {
    /// `exc` or `inh`.
    pub population: String,
    pub rates: Vec<f64>,
    pub n_sources: usize,
    pub efficacy: f64,
    pub duration: f64,
}

impl Default for NeuronTfConfig {
    fn default() -> Self {
        NeuronTfConfig {
            population: "exc".into(),
            rates: (0..=15).map(|k| 10.0 * k as f64).collect(),
            n_sources: 64,
            efficacy: 0.05,
            duration: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtpLtdConfig {
    pub nu_pre: Vec<f64>,
    pub nu_post: Vec<f64>,
    pub n_neurons: usize,
    pub n_plastic: usize,
    pub n_nonplastic: usize,
    pub j_nonplastic: f64,
    pub window: f64,
    pub trials: usize,
    pub calibration_duration: f64,
}

impl Default for LtpLtdConfig {
    fn default() -> Self {
        let grid = vec![0.0, 10.0, 20.0, 40.0, 80.0, 120.0];
        LtpLtdConfig {
            nu_pre: grid.clone(),
            nu_post: grid,
            n_neurons: 64,
            n_plastic: 64,
            n_nonplastic: 64,
            j_nonplastic: 0.05,
            window: 1.0,
            trials: 1,
            calibration_duration: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtfConfig {
    pub fractions: Vec<f64>,
    pub nu_in: Vec<f64>,
    pub settle: f64,
    pub measure: f64,
    /// `pattern:K` or a list of E indices and ranges such as `0-9;20;31`.
    pub subpopulation: String,
    /// Also run a free network per fraction and report its delay rate.
    pub free_run: bool,
    pub free_window_start: f64,
    pub free_window_end: f64,
}

impl Default for EtfConfig {
    fn default() -> Self {
        EtfConfig {
            fractions: vec![0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95],
            nu_in: (0..=32).map(|k| 12.5 * k as f64).collect(),
            settle: 0.5,
            measure: 4.0,
            subpopulation: "pattern:0".into(),
            free_run: false,
            free_window_start: 1.0,
            free_window_end: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub snapshot_every: usize,
    pub trace_bin: f64,
    pub delay_start: f64,
    pub delay_end: f64,
    pub threshold_factor: f64,
    pub threshold_floor: f64,
    /// Simulated time at which to stop early, leaving a truncated log.
    pub stop_at: Option<f64>,
    pub write_events: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            snapshot_every: 2,
            trace_bin: 0.1,
            delay_start: 0.25,
            delay_end: 1.25,
            threshold_factor: 5.0,
            threshold_floor: 5.0,
            stop_at: None,
            write_events: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallConfig {
    pub removal: f64,
    pub trials: usize,
    pub quiet: f64,
    pub stimulus: f64,
    pub delay_start: f64,
    pub delay_end: f64,
    pub frozen: bool,
    /// Snapshot file holding the trained matrix. Empty means untrained.
    pub snapshot: String,
    /// Mean coverage below this flags the matrix as holding no attractor.
    pub attractor_coverage: f64,
}

impl Default for RecallConfig {
    fn default() -> Self {
        RecallConfig {
            removal: 0.2,
            trials: 10,
            quiet: 1.0,
            stimulus: 1.0,
            delay_start: 0.25,
            delay_end: 1.25,
            frozen: false,
            snapshot: String::new(),
            attractor_coverage: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub stimulus: StimulusConfig,
    pub neuron_tf: NeuronTfConfig,
    pub ltp_ltd: LtpLtdConfig,
    pub etf: EtfConfig,
    pub learn: LearnConfig,
    pub recall: RecallConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

trait Value: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

impl Value for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"))
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl Value for usize {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse::<usize>().map_err(|_| format!("`{s}` is not a non-negative integer"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for u64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse::<u64>().map_err(|_| format!("`{s}` is not a non-negative integer"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for bool {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("`{s}` is not true/false")),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for String {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(s.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl Value for Option<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            f64::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.map_or("none".into(), |v| v.render())
    }
}

impl Value for Vec<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|x| f64::parse_value(x.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.render()).collect::<Vec<_>>().join(",")
    }
}

macro_rules! keys {
    ($( $name:literal => $($field:ident).+ : $ty:ty ),* $(,)?) => {
        /// Every key in canonical order.
        pub const KEYS: &[&str] = &[$($name),*];

        fn get_key(c: &ExperimentConfig, key: &str) -> Option<String> {
            match key {
                $($name => Some(<$ty as Value>::render(&c$(.$field)+)),)*
                _ => None,
            }
        }

        fn set_key(c: &mut ExperimentConfig, key: &str, v: &str) -> Result<(), String> {
            match key {
                $($name => { c$(.$field)+ = <$ty as Value>::parse_value(v)?; Ok(()) })*
                _ => Err("unknown key".into()),
            }
        }
    };
}

keys! {
    "network.n_exc" => network.n_exc: usize,
    "network.n_inh" => network.n_inh: usize,
    "network.p_ee" => network.p_ee: f64,
    "network.p_ie" => network.p_ie: f64,
    "network.p_ei" => network.p_ei: f64,
    "network.p_retina_inh" => network.p_retina_inh: f64,
    "network.initial_potentiated_fraction" => network.initial_potentiated_fraction: f64,
    "network.j_inh" => network.j_inh: f64,
    "network.j_ei" => network.j_ei: f64,
    "network.j_stim" => network.j_stim: f64,
    "network.j_retina_inh" => network.j_retina_inh: f64,
    "network.delay" => network.delay: f64,
    "network.delay_spread" => network.delay_spread: f64,
    "exc.theta" => network.exc.theta: f64,
    "exc.v_reset" => network.exc.v_reset: f64,
    "exc.leak" => network.exc.leak: f64,
    "exc.tau_arp" => network.exc.tau_arp: f64,
    "exc.floor" => network.exc.floor: f64,
    "inh.theta" => network.inh.theta: f64,
    "inh.v_reset" => network.inh.v_reset: f64,
    "inh.leak" => network.inh.leak: f64,
    "inh.tau_arp" => network.inh.tau_arp: f64,
    "inh.floor" => network.inh.floor: f64,
    "synapse.j_pot" => network.synapse.j_pot: f64,
    "synapse.j_dep" => network.synapse.j_dep: f64,
    "synapse.x_theta" => network.synapse.x_theta: f64,
    "synapse.jump_up" => network.synapse.jump_up: f64,
    "synapse.jump_down" => network.synapse.jump_down: f64,
    "synapse.drift_up" => network.synapse.drift_up: f64,
    "synapse.drift_down" => network.synapse.drift_down: f64,
    "synapse.v_gate" => network.synapse.v_gate: f64,
    "noise.exc_plus_rate" => network.noise.exc_plus_rate: f64,
    "noise.exc_plus_j" => network.noise.exc_plus_j: f64,
    "noise.exc_minus_rate" => network.noise.exc_minus_rate: f64,
    "noise.exc_minus_j" => network.noise.exc_minus_j: f64,
    "noise.inh_plus_rate" => network.noise.inh_plus_rate: f64,
    "noise.inh_plus_j" => network.noise.inh_plus_j: f64,
    "mismatch.neuron_cv" => network.mismatch.neuron_cv: f64,
    "mismatch.synapse_cv" => network.mismatch.synapse_cv: f64,
    "seeds.topology" => network.seeds.topology: u64,
    "seeds.stimulus" => network.seeds.stimulus: u64,
    "seeds.plasticity" => network.seeds.plasticity: u64,
    "seeds.mismatch" => network.seeds.mismatch: u64,
    "seeds.noise" => network.seeds.noise: u64,
    "stimulus.patterns" => stimulus.patterns: String,
    "stimulus.n_patterns" => stimulus.n_patterns: usize,
    "stimulus.pattern_size" => stimulus.pattern_size: usize,
    "stimulus.rate_on" => stimulus.rate_on: f64,
    "stimulus.rate_off" => stimulus.rate_off: f64,
    "stimulus.duration" => stimulus.duration: f64,
    "stimulus.gap" => stimulus.gap: f64,
    "stimulus.start" => stimulus.start: f64,
    "stimulus.presentations" => stimulus.presentations: usize,
    "neuron_tf.population" => neuron_tf.population: String,
    "neuron_tf.rates" => neuron_tf.rates: Vec<f64>,
    "neuron_tf.n_sources" => neuron_tf.n_sources: usize,
    "neuron_tf.efficacy" => neuron_tf.efficacy: f64,
    "neuron_tf.duration" => neuron_tf.duration: f64,
    "ltp_ltd.nu_pre" => ltp_ltd.nu_pre: Vec<f64>,
    "ltp_ltd.nu_post" => ltp_ltd.nu_post: Vec<f64>,
    "ltp_ltd.n_neurons" => ltp_ltd.n_neurons: usize,
    "ltp_ltd.n_plastic" => ltp_ltd.n_plastic: usize,
    "ltp_ltd.n_nonplastic" => ltp_ltd.n_nonplastic: usize,
    "ltp_ltd.j_nonplastic" => ltp_ltd.j_nonplastic: f64,
    "ltp_ltd.window" => ltp_ltd.window: f64,
    "ltp_ltd.trials" => ltp_ltd.trials: usize,
    "ltp_ltd.calibration_duration" => ltp_ltd.calibration_duration: f64,
    "etf.fractions" => etf.fractions: Vec<f64>,
    "etf.nu_in" => etf.nu_in: Vec<f64>,
    "etf.settle" => etf.settle: f64,
    "etf.measure" => etf.measure: f64,
    "etf.subpopulation" => etf.subpopulation: String,
    "etf.free_run" => etf.free_run: bool,
    "etf.free_window_start" => etf.free_window_start: f64,
    "etf.free_window_end" => etf.free_window_end: f64,
    "learn.snapshot_every" => learn.snapshot_every: usize,
    "learn.trace_bin" => learn.trace_bin: f64,
    "learn.delay_start" => learn.delay_start: f64,
    "learn.delay_end" => learn.delay_end: f64,
    "learn.threshold_factor" => learn.threshold_factor: f64,
    "learn.threshold_floor" => learn.threshold_floor: f64,
    "learn.stop_at" => learn.stop_at: Option<f64>,
    "learn.write_events" => learn.write_events: bool,
    "recall.removal" => recall.removal: f64,
    "recall.trials" => recall.trials: usize,
    "recall.quiet" => recall.quiet: f64,
    "recall.stimulus" => recall.stimulus: f64,
    "recall.delay_start" => recall.delay_start: f64,
    "recall.delay_end" => recall.delay_end: f64,
    "recall.frozen" => recall.frozen: bool,
    "recall.snapshot" => recall.snapshot: String,
    "recall.attractor_coverage" => recall.attractor_coverage: f64,
}

impl ExperimentConfig {
    pub fn get(&self, key: &str) -> Option<String> {
        get_key(self, key)
    }

    /// Sets one `section.key`. Unknown keys and unparsable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError(format!("unknown key `{key}`")));
        }
        set_key(self, key, value.trim()).map_err(|e| ConfigError(format!("`{key}`: {e}")))
    }

    /// Applies `KEY=VALUE` overrides on top of the current values.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), ConfigError> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("override `{o}` is not KEY=VALUE")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Parses the text format on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = ExperimentConfig::default();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| ConfigError(format!("line {}: {msg}", n + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("malformed section header `{line}`")))?
                    .trim();
                if !KEYS.iter().any(|k| k.split_once('.').is_some_and(|(s, _)| s == name)) {
                    return Err(at(format!("unknown section `{name}`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let sec = section.as_deref().ok_or_else(|| at("key outside any section".into()))?;
            let key = format!("{sec}.{}", k.trim());
            c.set(&key, v).map_err(|e| at(e.0))?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Renders every key, grouped by section, in canonical order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for key in KEYS {
            let (sec, name) = key.split_once('.').expect("keys are section.name");
            if sec != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{sec}]");
                current = sec;
            }
            let _ = writeln!(out, "{name} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    /// Range and consistency checks beyond what parsing catches.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.network.validate().map_err(|e| ConfigError(e.to_string()))?;
        let s = &self.stimulus;
        if !matches!(s.patterns.as_str(), "faces" | "disjoint") {
            return Err(ConfigError(format!("stimulus.patterns: `{}` is not faces/disjoint", s.patterns)));
        }
        if s.patterns == "faces" && s.n_patterns > 2 {
            return Err(ConfigError("stimulus.n_patterns: faces provide at most 2 patterns".into()));
        }
        if !(s.rate_on >= 0.0 && s.rate_off >= 0.0 && s.duration > 0.0 && s.gap >= 0.0 && s.start >= 0.0) {
            return Err(ConfigError("stimulus: rates, duration, gap and start must be non-negative".into()));
        }
        if !matches!(self.neuron_tf.population.as_str(), "exc" | "inh") {
            return Err(ConfigError(format!("neuron_tf.population: `{}` is not exc/inh", self.neuron_tf.population)));
        }
        if !(0.0..=1.0).contains(&self.recall.removal) {
            return Err(ConfigError(format!("recall.removal: {} is outside [0, 1]", self.recall.removal)));
        }
        if self.etf.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(ConfigError("etf.fractions: values must lie in [0, 1]".into()));
        }
        if self.learn.snapshot_every == 0 {
            return Err(ConfigError("learn.snapshot_every: must be >= 1".into()));
        }
        if !(self.learn.delay_end > self.learn.delay_start) || !(self.recall.delay_end > self.recall.delay_start) {
            return Err(ConfigError("delay windows must have end > start".into()));
        }
        Ok(())
    }

    /// Sets every seed stream to `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.network.seeds = spikelearn_core::network::Seeds::all(seed);
    }
}

/// Parses `pattern:K` or a `;`-separated list of E indices and `a-b` ranges.
pub enum Subpopulation {
    Pattern(usize),
    Neurons(Vec<usize>),
}

pub fn parse_subpopulation(spec: &str, n_exc: usize) -> Result<Subpopulation, ConfigError> {
    let bad = || ConfigError(format!("etf.subpopulation: malformed spec `{spec}`"));
    let spec = spec.trim();
    if let Some(k) = spec.strip_prefix("pattern:") {
        return k.trim().parse().map(Subpopulation::Pattern).map_err(|_| bad());
    }
    let mut out = Vec::new();
    for part in spec.split(';') {
        let part = part.trim();
        let (a, b) = match part.split_once('-') {
            Some((a, b)) => (a.trim().parse::<usize>(), b.trim().parse::<usize>()),
            None => (part.parse::<usize>(), part.parse::<usize>()),
        };
        let (a, b) = (a.map_err(|_| bad())?, b.map_err(|_| bad())?);
        if a > b || b >= n_exc {
            return Err(bad());
        }
        out.extend(a..=b);
    }
    out.sort_unstable();
    out.dedup();
    Ok(Subpopulation::Neurons(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut c = ExperimentConfig::default();
        c.set("synapse.j_pot", "0.2").unwrap();
        c.set("etf.fractions", "0.1,0.9").unwrap();
        c.set("learn.stop_at", "12.5").unwrap();
        let back = ExperimentConfig::parse(&c.render()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_and_section_rejected() {
        assert!(ExperimentConfig::parse("[synapse]\nj_pott = 0.1\n").is_err());
        assert!(ExperimentConfig::parse("[synapses]\nj_pot = 0.1\n").is_err());
        assert!(ExperimentConfig::parse("j_pot = 0.1\n").is_err());
    }

    #[test]
    fn bad_values_rejected() {
        assert!(ExperimentConfig::parse("[network]\np_ee = lots\n").is_err());
        assert!(ExperimentConfig::parse("[recall]\nfrozen = yes\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = ExperimentConfig::parse("# hi\n\n[exc]\nleak = 50 # trailing\n").unwrap();
        assert_eq!(c.network.exc.leak, 50.0);
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_overrides(&["recall.removal=0.5"]).unwrap();
        assert_eq!(c.recall.removal, 0.5);
        assert!(c.apply_overrides(&["recall.removal"]).is_err());
    }

    #[test]
    fn validation_catches_removal_range() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.recall.removal = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn subpopulation_specs() {
        assert!(matches!(parse_subpopulation("pattern:1", 196), Ok(Subpopulation::Pattern(1))));
        match parse_subpopulation("0-3;7;2", 196) {
            Ok(Subpopulation::Neurons(v)) => assert_eq!(v, vec![0, 1, 2, 3, 7]),
            _ => panic!("expected neuron list"),
        }
        assert!(parse_subpopulation("pattern:x", 196).is_err());
        assert!(parse_subpopulation("5-2", 196).is_err());
        assert!(parse_subpopulation("0-300", 196).is_err());
        assert!(parse_subpopulation("", 196).is_err());
    }
}
