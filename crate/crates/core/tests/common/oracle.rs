//! Event-driven neuron and synapse updates against a clock-driven
//! reimplementation that advances in 1 µs steps. Shared by the core tests
//! and the acceptance runner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikelearn_core::neuron::{NeuronParams, NeuronState};
use spikelearn_core::synapse::{SynapseParams, SynapseState};

pub const TOL: f64 = 1e-9;
const STEP: f64 = 1e-6;

#[derive(Clone, Copy)]
pub enum Input {
    /// Non-plastic input onto the neuron.
    Drive(f64),
    /// Presynaptic spike on plastic synapse `k`.
    Pre(usize),
}

pub struct Scenario {
    pub neuron: NeuronParams,
    pub syn: SynapseParams,
    pub x0: Vec<f64>,
    /// `(time in µs, input)`, sorted by time.
    pub inputs: Vec<(u64, Input)>,
    pub end_us: u64,
}

pub fn scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let neuron = NeuronParams {
        theta: 1.0,
        v_reset: rng.random_range(0.0..0.3),
        leak: rng.random_range(0.0..150.0),
        tau_arp: rng.random_range(0..3000) as f64 * 1e-6,
        floor: 0.0,
    };
    let syn = SynapseParams {
        jump_up: rng.random_range(0.05..0.4),
        jump_down: rng.random_range(0.01..0.2),
        drift_up: rng.random_range(0.1..5.0),
        drift_down: rng.random_range(0.1..5.0),
        v_gate: rng.random_range(0.3..0.9),
        ..SynapseParams::default()
    };
    let n_syn = 4;
    let x0 = (0..n_syn).map(|_| rng.random::<f64>()).collect();
    let end_us = rng.random_range(20_000..100_000u64);
    let n_inputs = rng.random_range(50..400);
    let mut inputs: Vec<(u64, Input)> = (0..n_inputs)
        .map(|_| {
            let t = rng.random_range(1..end_us);
            let input = if rng.random::<f64>() < 0.7 {
                Input::Drive(rng.random_range(-0.1..0.35))
            } else {
                Input::Pre(rng.random_range(0..n_syn))
            };
            (t, input)
        })
        .collect();
    inputs.sort_by_key(|(t, _)| *t);
    Scenario { neuron, syn, x0, inputs, end_us }
}

/// Trajectory sample: after each input, `(v, x...)`, plus output spike times.
pub type Trace = (Vec<Vec<f64>>, Vec<u64>);

pub fn event_driven(s: &Scenario) -> Trace {
    let mut v = NeuronState::at_rest(&s.neuron);
    let mut syn: Vec<SynapseState> = s.x0.iter().map(|&x| SynapseState::plastic(x)).collect();
    let mut samples = Vec::new();
    let mut spikes = Vec::new();
    for &(t_us, input) in &s.inputs {
        let t = t_us as f64 * STEP;
        v.integrate_to(&s.neuron, t).unwrap();
        match input {
            Input::Drive(j) => {
                if v.receive(&s.neuron, j, t) {
                    spikes.push(t_us);
                }
            }
            Input::Pre(k) => {
                syn[k].drift_to(&s.syn, t).unwrap();
                syn[k].on_presynaptic_spike(&s.syn, v.v);
            }
        }
        let mut row = vec![v.v];
        for x in &mut syn {
            x.drift_to(&s.syn, t).unwrap();
            row.push(x.x);
        }
        samples.push(row);
    }
    let t_end = s.end_us as f64 * STEP;
    v.integrate_to(&s.neuron, t_end).unwrap();
    let mut row = vec![v.v];
    for x in &mut syn {
        x.drift_to(&s.syn, t_end).unwrap();
        row.push(x.x);
    }
    samples.push(row);
    (samples, spikes)
}

/// Independent fixed-step integration of the same dynamics.
pub fn clock_driven(s: &Scenario) -> Trace {
    let p = &s.neuron;
    let q = &s.syn;
    let mut v = p.v_reset.max(p.floor);
    let mut refractory_until = 0.0f64;
    let mut x = s.x0.clone();
    let mut samples = Vec::new();
    let mut spikes = Vec::new();
    let mut next = 0;
    let snapshot = |v: f64, x: &[f64]| {
        let mut row = vec![v];
        row.extend_from_slice(x);
        row
    };
    for step in 1..=s.end_us {
        v = (v - p.leak * STEP).max(p.floor);
        for xi in x.iter_mut() {
            if *xi > q.x_theta {
                *xi = (*xi + q.drift_up * STEP).min(1.0);
            } else if *xi < q.x_theta {
                *xi = (*xi - q.drift_down * STEP).max(0.0);
            }
        }
        while next < s.inputs.len() && s.inputs[next].0 == step {
            let t = step as f64 * STEP;
            match s.inputs[next].1 {
                Input::Drive(j) => {
                    if t >= refractory_until {
                        v = (v + j).clamp(p.floor, p.theta);
                        if v >= p.theta {
                            v = p.v_reset;
                            refractory_until = t + p.tau_arp;
                            spikes.push(step);
                        }
                    }
                }
                Input::Pre(k) => {
                    if v > q.v_gate {
                        x[k] = (x[k] + q.jump_up).min(1.0);
                    } else {
                        x[k] = (x[k] - q.jump_down).max(0.0);
                    }
                }
            }
            samples.push(snapshot(v, &x));
            next += 1;
        }
    }
    samples.push(snapshot(v, &x));
    (samples, spikes)
}

/// Runs `n` random scenarios from `seed`. Returns the largest state
/// deviation, or a description of the first disagreement.
pub fn compare_scenarios(n: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for k in 0..n {
        let s = scenario(&mut rng);
        let (ev, ev_spikes) = event_driven(&s);
        let (ck, ck_spikes) = clock_driven(&s);
        if ev_spikes != ck_spikes {
            return Err(format!("scenario {k}: spike times differ"));
        }
        if ev.len() != ck.len() {
            return Err(format!("scenario {k}: sample counts differ"));
        }
        for (a, b) in ev.iter().zip(&ck) {
            for (u, w) in a.iter().zip(b) {
                let d = (u - w).abs();
                worst = worst.max(d);
                if d > TOL {
                    return Err(format!("scenario {k}: state differs by {d:e}"));
                }
            }
        }
    }
    Ok(worst)
}
