//! Bistable stochastic Hebbian synapse.
//!
//! An analog internal variable `x` in `[0, 1]` sets a binary efficacy
//! (potentiated iff `x > x_theta`). Between presynaptic spikes `x` drifts
//! toward the nearer stable extreme; each presynaptic spike makes it jump up
//! or down depending on whether the postsynaptic potential is above `v_gate`.

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynapseParams {
    pub j_pot: f64,
    pub j_dep: f64,
    pub x_theta: f64,
    pub jump_up: f64,
    pub jump_down: f64,
    /// Drift toward 1 above `x_theta`, units/s.
    pub drift_up: f64,
    /// Drift toward 0 below `x_theta`, units/s.
    pub drift_down: f64,
    pub v_gate: f64,
}

impl Default for SynapseParams {
    fn default() -> Self {
        SynapseParams {
            j_pot: 0.125,
            j_dep: 0.005,
            x_theta: 0.5,
            jump_up: 0.17,
            jump_down: 0.02,
            drift_up: 1.0,
            drift_down: 3.0,
            v_gate: 0.7,
        }
    }
}

impl SynapseParams {
    /// `floor` and `theta` are the postsynaptic neuron's potential bounds.
    pub fn validate(&self, floor: f64, theta: f64) -> Result<()> {
        if !(self.j_pot > self.j_dep && self.j_dep >= 0.0) {
            return Err(SimError::param("j_pot/j_dep", "need j_pot > j_dep >= 0"));
        }
        if !(self.x_theta > 0.0 && self.x_theta < 1.0) {
            return Err(SimError::param("x_theta", "must lie in (0, 1)"));
        }
        for (name, v) in [
            ("jump_up", self.jump_up),
            ("jump_down", self.jump_down),
            ("drift_up", self.drift_up),
            ("drift_down", self.drift_down),
        ] {
            if !(v > 0.0) {
                return Err(SimError::param(name, "must be > 0"));
            }
        }
        if !(self.v_gate > floor && self.v_gate < theta) {
            return Err(SimError::param("v_gate", "must lie strictly between floor and theta"));
        }
        Ok(())
    }
}

/// Per-synapse multiplicative factors on jumps and drifts (mismatch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynapseJitter {
    pub jump_up: f64,
    pub jump_down: f64,
    pub drift_up: f64,
    pub drift_down: f64,
}

impl SynapseJitter {
    pub const NONE: SynapseJitter = SynapseJitter {
        jump_up: 1.0,
        jump_down: 1.0,
        drift_up: 1.0,
        drift_down: 1.0,
    };
}

impl Default for SynapseJitter {
    fn default() -> Self {
        Self::NONE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynapseState {
    pub x: f64,
    pub last_update: f64,
    pub is_plastic: bool,
    pub is_excitatory: bool,
}

impl SynapseState {
    pub fn plastic(x: f64) -> Self {
        SynapseState {
            x,
            last_update: 0.0,
            is_plastic: true,
            is_excitatory: true,
        }
    }

    pub fn fixed(is_excitatory: bool) -> Self {
        SynapseState {
            x: 1.0,
            last_update: 0.0,
            is_plastic: false,
            is_excitatory,
        }
    }

    pub fn is_potentiated(&self, p: &SynapseParams) -> bool {
        self.x > p.x_theta
    }

    pub fn drift_to(&mut self, p: &SynapseParams, t: f64) -> Result<()> {
        self.drift_to_with(p, &SynapseJitter::NONE, t)
    }

    pub fn drift_to_with(&mut self, p: &SynapseParams, j: &SynapseJitter, t: f64) -> Result<()> {
        if t < self.last_update {
            return Err(SimError::TimeReversal {
                last_s: self.last_update,
                requested_s: t,
            });
        }
        let dt = t - self.last_update;
        self.last_update = t;
        if !self.is_plastic || dt == 0.0 {
            return Ok(());
        }
        if self.x > p.x_theta {
            self.x = (self.x + p.drift_up * j.drift_up * dt).min(1.0);
        } else if self.x < p.x_theta {
            self.x = (self.x - p.drift_down * j.drift_down * dt).max(0.0);
        }
        Ok(())
    }

    /// Jump triggered by a presynaptic spike; `x` must already be drifted to
    /// the spike time. No-op for non-plastic synapses.
    pub fn on_presynaptic_spike(&mut self, p: &SynapseParams, v_post: f64) {
        self.on_presynaptic_spike_with(p, &SynapseJitter::NONE, v_post)
    }

    pub fn on_presynaptic_spike_with(&mut self, p: &SynapseParams, j: &SynapseJitter, v_post: f64) {
        if !self.is_plastic {
            return;
        }
        if v_post > p.v_gate {
            self.x = (self.x + p.jump_up * j.jump_up).min(1.0);
        } else {
            self.x = (self.x - p.jump_down * j.jump_down).max(0.0);
        }
    }

    /// Excitatory synapses return `j_pot` or `j_dep` by binary state.
    /// Inhibitory synapses are fixed and return `-j_inh`.
    pub fn efficacy(&self, p: &SynapseParams, j_inh: f64) -> f64 {
        if !self.is_excitatory {
            -j_inh
        } else if self.is_potentiated(p) {
            p.j_pot
        } else {
            p.j_dep
        }
    }
}
