//! Replay determinism and observable recounts on short network runs.

use spikelearn_core::event::{Population, StreamId};
use spikelearn_core::learning::{delay_output_image, run_learning, LearningOptions};
use spikelearn_core::network::{population_rate, Network, NetworkConfig, Seeds, GRID_CELLS};
use spikelearn_core::stimulus::{builtin_patterns, PresentationSchedule};

fn short_run(seed: u64) -> (Vec<u8>, Vec<Vec<bool>>) {
    let cfg = NetworkConfig { seeds: Seeds::all(seed), ..NetworkConfig::default() };
    let mut net = Network::build(cfg.clone()).unwrap();
    let pats = builtin_patterns();
    let sched = PresentationSchedule::alternating(2, 4, 1.0, 1.5, 0.5).unwrap();
    let opts = LearningOptions { snapshot_every: 1, ..LearningOptions::default() };
    let run = run_learning(&mut net, &pats, &sched, &opts, cfg.seeds.stream(StreamId::Stimulus), |_| false).unwrap();
    let mut text = Vec::new();
    run.log.write_text(&mut text).unwrap();
    (text, run.snapshots.into_iter().map(|s| s.flags).collect())
}

#[test]
fn same_seed_replays_byte_identically() {
    let a = short_run(7);
    let b = short_run(7);
    assert!(!a.0.is_empty());
    assert_eq!(a, b);
}

#[test]
fn different_seeds_differ() {
    assert_ne!(short_run(7).0, short_run(8).0);
}

#[test]
fn stimulus_drives_the_stimulated_population() {
    let mut net = Network::build(NetworkConfig::default()).unwrap();
    let pats = builtin_patterns();
    let specs = pats[0].encode((0.2, 1.2), 2000.0, 0.0, net.config.seeds.stream(StreamId::Stimulus), 0).unwrap();
    net.add_sources(&specs).unwrap();
    let log = net.run_until(1.2).unwrap();
    assert!(log.is_monotone());
    let members: Vec<usize> = pats[0].active_cells().iter().map(|&c| net.map.neuron_of_cell(c)).collect();
    let others: Vec<usize> = pats[1].active_cells().iter().map(|&c| net.map.neuron_of_cell(c)).collect();
    let on = population_rate(&log, Population::Exc, &members, (0.4, 1.2)).unwrap();
    let off = population_rate(&log, Population::Exc, &others, (0.4, 1.2)).unwrap();
    assert!(on > 20.0 && on > 10.0 * off.max(0.1), "stimulated {on} Hz, other {off} Hz");
}

#[test]
fn delay_image_recount_matches_population_rate() {
    let mut net = Network::build(NetworkConfig::default()).unwrap();
    let pats = builtin_patterns();
    let specs = pats[1].encode((0.0, 1.0), 2000.0, 0.0, net.config.seeds.stream(StreamId::Stimulus), 0).unwrap();
    net.add_sources(&specs).unwrap();
    let log = net.run_until(2.0).unwrap();
    let w = (0.5, 1.5);
    let img = delay_output_image(&log, w, &net.map, 5.0).unwrap();
    for (k, cell) in net.map.cells.iter().enumerate().take(GRID_CELLS) {
        let r = population_rate(&log, Population::Exc, &[cell.neuron], w).unwrap();
        assert!((img.rates[k] - r).abs() < 1e-9, "cell {k}");
        assert_eq!(img.active[k], r >= 5.0);
    }
}
