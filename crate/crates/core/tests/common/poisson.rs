//! Poisson source calibration helpers shared with the acceptance runner.

use spikelearn_core::event::{Address, Population, RandomStream, Simulation, StreamId};

pub const RATES: [f64; 4] = [2.0, 20.0, 200.0, 2000.0];

pub fn spike_times(rate: f64, duration: f64, seed: u64) -> Vec<f64> {
    let mut sim = Simulation::new();
    let stream = RandomStream::new(seed, StreamId::Noise);
    sim.poisson_source(rate, Address::new(Population::Noise, 0), (0.0, duration), stream.substream(0)).unwrap();
    let log = sim.run_until(duration).unwrap();
    log.events.iter().map(|e| e.time.secs()).collect()
}

/// `(rate, count, expected, within 3σ)` for each rate over `duration` s.
pub fn count_check(duration: f64) -> Vec<(f64, usize, f64, bool)> {
    RATES
        .iter()
        .enumerate()
        .map(|(k, &rate)| {
            let n = spike_times(rate, duration, 11 + k as u64).len();
            let mean = rate * duration;
            (rate, n, mean, (n as f64 - mean).abs() < 3.0 * mean.sqrt())
        })
        .collect()
}
