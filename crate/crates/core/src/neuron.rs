//! Linear (constant-leak) integrate-and-fire neuron with a reflecting lower
//! barrier and an absolute refractory period. State is advanced lazily, only
//! at input times.

use std::io::Write;

use crate::error::{Result, SimError};
use crate::event::{Address, Population, RandomStream, Simulation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronParams {
    pub theta: f64,
    pub v_reset: f64,
    /// Constant decay rate, potential units per second.
    pub leak: f64,
    /// Absolute refractory period, seconds.
    pub tau_arp: f64,
    pub floor: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            theta: 1.0,
            v_reset: 0.0,
            leak: 20.0,
            tau_arp: 0.001,
            floor: 0.0,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > self.floor) {
            return Err(SimError::param("theta", "must exceed floor"));
        }
        if !(self.v_reset >= self.floor && self.v_reset < self.theta) {
            return Err(SimError::param("v_reset", "must lie in [floor, theta)"));
        }
        if !(self.leak >= 0.0) {
            return Err(SimError::param("leak", "must be >= 0"));
        }
        if !(self.tau_arp >= 0.0) {
            return Err(SimError::param("tau_arp", "must be >= 0"));
        }
        Ok(())
    }

    pub fn max_rate(&self) -> f64 {
        if self.tau_arp > 0.0 {
            1.0 / self.tau_arp
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronState {
    pub v: f64,
    pub refractory_until: f64,
    pub last_update: f64,
}

impl NeuronState {
    pub fn at_rest(p: &NeuronParams) -> Self {
        NeuronState {
            v: p.v_reset.max(p.floor),
            refractory_until: 0.0,
            last_update: 0.0,
        }
    }

    /// Applies the leak from `last_update` to `t`.
    pub fn integrate_to(&mut self, p: &NeuronParams, t: f64) -> Result<()> {
        if t < self.last_update {
            return Err(SimError::TimeReversal {
                last_s: self.last_update,
                requested_s: t,
            });
        }
        let dt = t - self.last_update;
        if dt > 0.0 {
            self.v = (self.v - p.leak * dt).max(p.floor);
            self.last_update = t;
        }
        Ok(())
    }

    /// Adds one input of size `efficacy` at `t` (state must already be
    /// integrated to `t`). Returns true when the input triggers a spike.
    pub fn receive(&mut self, p: &NeuronParams, efficacy: f64, t: f64) -> bool {
        if t < self.refractory_until {
            return false;
        }
        self.v = (self.v + efficacy).clamp(p.floor, p.theta);
        if self.v >= p.theta {
            self.v = p.v_reset;
            self.refractory_until = t + p.tau_arp;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputSpec {
    pub n_sources: usize,
    pub rate_each: f64,
    pub efficacy_each: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub rate: f64,
    pub stderr: f64,
}

/// Output rate of one neuron driven by `n_sources` independent Poisson trains.
///
/// The standard error comes from the spread of spike counts across 1 s
/// batches of the run.
pub fn transfer_function(
    params: &NeuronParams,
    input: InputSpec,
    duration: f64,
    stream: RandomStream,
) -> Result<RateEstimate> {
    params.validate()?;
    if !(duration >= 1.0) {
        return Err(SimError::param("duration", "must be at least 1 s"));
    }
    if !(input.rate_each >= 0.0) {
        return Err(SimError::param("rate_each", "must be >= 0"));
    }
    let mut sim = Simulation::new();
    for k in 0..input.n_sources {
        sim.poisson_source(
            input.rate_each,
            Address::new(Population::Probe, k as u16),
            (0.0, duration),
            stream.substream(k as u64),
        )?;
    }
    let log = sim.run_until(duration)?;

    let mut state = NeuronState::at_rest(params);
    let n_batches = duration.floor() as usize;
    let mut counts = vec![0u64; n_batches.max(1)];
    for e in &log.events {
        let t = e.time.secs();
        state.integrate_to(params, t)?;
        if state.receive(params, input.efficacy_each, t) {
            let b = ((t as usize).min(counts.len() - 1)).max(0);
            counts[b] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let rate = total as f64 / duration;
    let n = counts.len() as f64;
    let stderr = if counts.len() > 1 {
        let mean = total as f64 / n;
        let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt() * n / duration
    } else {
        (total as f64).sqrt() / duration
    };
    Ok(RateEstimate { rate, stderr })
}

/// Gain curve over a list of per-source input rates.
pub fn gain_curve(
    params: &NeuronParams,
    n_sources: usize,
    efficacy_each: f64,
    rates: &[f64],
    duration: f64,
    stream: RandomStream,
) -> Result<Vec<(f64, RateEstimate)>> {
    rates
        .iter()
        .map(|&r| {
            let input = InputSpec {
                n_sources,
                rate_each: r,
                efficacy_each,
            };
            transfer_function(params, input, duration, stream).map(|est| (r, est))
        })
        .collect()
}

pub fn write_gain_csv<W: Write>(mut w: W, curve: &[(f64, RateEstimate)]) -> Result<()> {
    writeln!(w, "input_rate_hz,output_rate_hz,stderr_hz")?;
    for (r, est) in curve {
        writeln!(w, "{},{:.6},{:.6}", r, est.rate, est.stderr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::StreamId;

    fn p(leak: f64) -> NeuronParams {
        NeuronParams {
            leak,
            ..NeuronParams::default()
        }
    }

    #[test]
    fn linear_decay() {
        let mut s = NeuronState { v: 0.5, refractory_until: 0.0, last_update: 0.0 };
        s.integrate_to(&p(0.4), 1.0).unwrap();
        assert!((s.v - 0.1).abs() < 1e-12);
        assert_eq!(s.last_update, 1.0);
    }

    #[test]
    fn reflecting_floor() {
        let mut s = NeuronState { v: 0.1, refractory_until: 0.0, last_update: 0.0 };
        s.integrate_to(&p(0.4), 1.0).unwrap();
        assert_eq!(s.v, 0.0);
    }

    #[test]
    fn zero_interval_is_identity() {
        let mut s = NeuronState { v: 0.3, refractory_until: 0.0, last_update: 2.0 };
        let before = s;
        s.integrate_to(&p(0.4), 2.0).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn integrating_backwards_fails() {
        let mut s = NeuronState { v: 0.3, refractory_until: 0.0, last_update: 2.0 };
        assert!(s.integrate_to(&p(0.4), 1.0).is_err());
    }

    #[test]
    fn threshold_crossing_resets() {
        let params = NeuronParams::default();
        let mut s = NeuronState { v: 0.96, refractory_until: 0.0, last_update: 1.0 };
        assert!(s.receive(&params, 0.05, 1.0));
        assert_eq!(s.v, 0.0);
        assert!((s.refractory_until - 1.001).abs() < 1e-12);
    }

    #[test]
    fn inhibitory_input() {
        let params = NeuronParams::default();
        let mut s = NeuronState { v: 0.5, refractory_until: 0.0, last_update: 1.0 };
        assert!(!s.receive(&params, -0.2, 1.0));
        assert!((s.v - 0.3).abs() < 1e-12);
    }

    #[test]
    fn refractory_input_discarded() {
        let params = NeuronParams::default();
        let mut s = NeuronState { v: 0.0, refractory_until: 1.002, last_update: 1.001 };
        let before = s;
        assert!(!s.receive(&params, 0.5, 1.001));
        assert_eq!(s, before);
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = NeuronParams { v_reset: 1.0, ..NeuronParams::default() };
        assert!(bad.validate().is_err());
        let bad = NeuronParams { leak: -1.0, ..NeuronParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_input_gives_zero_rate() {
        let est = transfer_function(
            &NeuronParams::default(),
            InputSpec { n_sources: 64, rate_each: 0.0, efficacy_each: 0.05 },
            2.0,
            RandomStream::new(1, StreamId::Probe),
        )
        .unwrap();
        assert_eq!(est.rate, 0.0);
    }

    #[test]
    fn saturates_near_refractory_ceiling() {
        let params = NeuronParams::default();
        let est = transfer_function(
            &params,
            InputSpec { n_sources: 64, rate_each: 2000.0, efficacy_each: 0.5 },
            2.0,
            RandomStream::new(1, StreamId::Probe),
        )
        .unwrap();
        assert!(est.rate <= params.max_rate());
        assert!(est.rate > 0.9 * params.max_rate(), "{}", est.rate);
    }

    #[test]
    fn short_duration_rejected() {
        let r = transfer_function(
            &NeuronParams::default(),
            InputSpec { n_sources: 1, rate_each: 1.0, efficacy_each: 0.1 },
            0.5,
            RandomStream::new(1, StreamId::Probe),
        );
        assert!(r.is_err());
    }
}
