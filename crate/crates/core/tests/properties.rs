//! Property tests over randomly generated inputs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spikelearn_core::characterization::{find_fixed_points, EtfCurve, Stability};
use spikelearn_core::event::{Address, EventKind, EventLog, EventQueue, Population, SimTime, SpikeEvent};
use spikelearn_core::learning::{group_fractions, hamming_series, Assignment, SynapticSnapshot};
use spikelearn_core::network::{MacroPixelMap, NetworkConfig, Topology, GRID_CELLS};
use spikelearn_core::neuron::{NeuronParams, NeuronState};
use spikelearn_core::stimulus::{builtin_patterns, StimulusPattern};
use spikelearn_core::synapse::{SynapseParams, SynapseState};

fn population() -> impl Strategy<Value = Population> {
    prop_oneof![
        Just(Population::Exc),
        Just(Population::Inh),
        Just(Population::Retina),
        Just(Population::Noise),
        Just(Population::Probe),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn queue_pops_in_time_address_insertion_order(
        items in prop::collection::vec((0u64..50, population(), 0u16..8), 1..200)
    ) {
        let mut q = EventQueue::new();
        for (t, pop, i) in &items {
            q.push(SimTime(*t), Address::new(*pop, *i), EventKind::Spike);
        }
        let mut expected: Vec<(u64, Address, usize)> = items
            .iter()
            .enumerate()
            .map(|(k, (t, pop, i))| (*t, Address::new(*pop, *i), k))
            .collect();
        expected.sort();
        for (t, a, _) in expected {
            let got = q.pop().unwrap();
            prop_assert_eq!(got.time, SimTime(t));
            prop_assert_eq!(got.address, a);
        }
        prop_assert!(q.pop().is_none());
    }

    #[test]
    fn neuron_potential_stays_in_bounds(
        leak in 0.0f64..200.0,
        tau in 0.0f64..0.005,
        inputs in prop::collection::vec((1u64..2000, -0.5f64..0.8), 1..300)
    ) {
        let p = NeuronParams { leak, tau_arp: tau, ..NeuronParams::default() };
        let mut s = NeuronState::at_rest(&p);
        let mut t = 0.0;
        for (dt_us, j) in inputs {
            t += dt_us as f64 * 1e-6;
            s.integrate_to(&p, t).unwrap();
            s.receive(&p, j, t);
            prop_assert!(s.v >= p.floor && s.v < p.theta);
        }
    }

    #[test]
    fn synapse_variable_stays_in_unit_interval(
        x0 in 0.0f64..=1.0,
        spikes in prop::collection::vec((1u64..200_000, 0.0f64..1.0), 1..200)
    ) {
        let p = SynapseParams::default();
        let mut s = SynapseState::plastic(x0);
        let mut t = 0.0;
        for (dt_us, v) in spikes {
            t += dt_us as f64 * 1e-6;
            s.drift_to(&p, t).unwrap();
            s.on_presynaptic_spike(&p, v);
            prop_assert!((0.0..=1.0).contains(&s.x));
        }
    }

    #[test]
    fn synapse_without_spikes_keeps_its_state(x0 in 0.0f64..=1.0, dt in 0.0f64..100.0) {
        let p = SynapseParams::default();
        let mut s = SynapseState::plastic(x0);
        let before = s.is_potentiated(&p);
        s.drift_to(&p, dt).unwrap();
        prop_assert_eq!(s.is_potentiated(&p), before);
    }

    #[test]
    fn event_log_text_and_binary_round_trip(
        events in prop::collection::vec((0u64..10_000_000, population(), 0u16..300), 0..100),
        truncated in prop::option::of(0u64..10_000_000)
    ) {
        let mut log = EventLog::new();
        let mut events = events;
        events.sort();
        for (t, pop, i) in events {
            log.push(SpikeEvent { time: SimTime(t), address: Address::new(pop, i) });
        }
        log.truncated_at = truncated.map(SimTime);
        let mut text = Vec::new();
        log.write_text(&mut text).unwrap();
        prop_assert_eq!(&EventLog::read_text(&text[..]).unwrap(), &log);
        let mut bin = Vec::new();
        log.write_binary(&mut bin).unwrap();
        prop_assert_eq!(&EventLog::read_binary(&bin[..]).unwrap(), &log);
    }

    #[test]
    fn topology_is_well_formed(seed in 0u64..1000, n_exc in 2usize..60, n_inh in 1usize..20) {
        let mut cfg = NetworkConfig { n_exc, n_inh, ..NetworkConfig::default() };
        cfg.seeds = spikelearn_core::network::Seeds::all(seed);
        let topo = Topology::build(&cfg).unwrap();
        for e in &topo.ee.edges {
            prop_assert!(e.pre != e.post);
            prop_assert!((e.pre as usize) < n_exc && (e.post as usize) < n_exc);
            prop_assert!(e.state.is_plastic && e.state.is_excitatory);
        }
        for e in &topo.ie.edges {
            prop_assert!((e.pre as usize) < n_inh && (e.post as usize) < n_exc);
            prop_assert!(!e.state.is_plastic && !e.state.is_excitatory);
        }
        for e in &topo.ei.edges {
            prop_assert!((e.pre as usize) < n_exc && (e.post as usize) < n_inh);
        }
        let mut pairs: Vec<(u16, u16)> = topo.ee.edges.iter().map(|e| (e.pre, e.post)).collect();
        let n = pairs.len();
        pairs.dedup();
        prop_assert_eq!(pairs.len(), n);
    }

    #[test]
    fn forced_fraction_only_touches_members(seed in 0u64..1000, fraction in 0.0f64..=1.0) {
        let cfg = NetworkConfig { n_exc: 40, n_inh: 10, ..NetworkConfig::default() };
        let topo = Topology::build(&cfg).unwrap();
        let members: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let mut forced = topo.clone();
        forced.force_fraction(&members, fraction, &mut ChaCha8Rng::seed_from_u64(seed));
        for (a, b) in topo.ee.edges.iter().zip(&forced.ee.edges) {
            if !(members[a.pre as usize] && members[a.post as usize]) {
                prop_assert_eq!(a.state, b.state);
            } else {
                prop_assert!(b.state.x == 0.0 || b.state.x == 1.0);
            }
        }
    }

    #[test]
    fn snapshot_apply_then_take_is_identity(seed in 0u64..500, bits in prop::collection::vec(any::<bool>(), 64)) {
        let cfg = NetworkConfig { n_exc: 30, n_inh: 5, seeds: spikelearn_core::network::Seeds::all(seed), ..NetworkConfig::default() };
        let mut topo = Topology::build(&cfg).unwrap();
        let edges: Vec<(u16, u16)> = topo.ee.edges.iter().map(|e| (e.pre, e.post)).collect();
        let flags: Vec<bool> = (0..edges.len()).map(|k| bits[k % bits.len()]).collect();
        let snap = SynapticSnapshot { time: 3.0, edges: edges.clone(), flags: flags.clone() };
        snap.apply_to(&mut topo).unwrap();
        let p = SynapseParams::default();
        let got: Vec<bool> = topo.ee.edges.iter().map(|e| e.state.is_potentiated(&p)).collect();
        prop_assert_eq!(got, flags);
    }

    #[test]
    fn hamming_counts_flips(flags in prop::collection::vec(any::<bool>(), 1..300), flips in prop::collection::vec(any::<prop::sample::Index>(), 0..20)) {
        let edges: Vec<(u16, u16)> = (0..flags.len() as u16).map(|i| (i, i + 1)).collect();
        let a = SynapticSnapshot { time: 0.0, edges: edges.clone(), flags: flags.clone() };
        let mut b = a.clone();
        let mut idx: Vec<usize> = flips.iter().map(|i| i.index(flags.len())).collect();
        idx.sort();
        idx.dedup();
        for &i in &idx {
            b.flags[i] = !b.flags[i];
        }
        prop_assert_eq!(hamming_series(&[a.clone(), b.clone()]).unwrap(), vec![idx.len()]);
        prop_assert_eq!(hamming_series(&[b, a]).unwrap(), vec![idx.len()]);
    }

    #[test]
    fn group_fractions_partition_and_range(bits in prop::collection::vec(any::<bool>(), 1..500)) {
        let map = MacroPixelMap::new();
        let asg = Assignment::from_patterns(&builtin_patterns(), &map, GRID_CELLS).unwrap();
        let edges: Vec<(u16, u16)> = (0..bits.len()).map(|k| ((k * 7 % 196) as u16, (k * 13 % 196) as u16)).collect();
        let g = group_fractions(&SynapticSnapshot { time: 0.0, edges, flags: bits.clone() }, &asg).unwrap();
        prop_assert_eq!(g.counts.iter().sum::<usize>(), bits.len());
        for f in g.within.iter().chain([&g.inter_selective, &g.selective_to_bkg, &g.bkg_to_selective, &g.bkg_to_bkg]) {
            prop_assert!((0.0..=1.0).contains(f));
        }
    }

    #[test]
    fn degradation_removes_the_requested_share(removal in 0.0f64..=1.0, trial in 0u64..1000) {
        let p = &builtin_patterns()[0];
        let stream = spikelearn_core::event::RandomStream::new(1, spikelearn_core::event::StreamId::Stimulus);
        let d: StimulusPattern = p.degrade(removal, &stream, trial).unwrap();
        let expect = p.active_count() - (removal * p.active_count() as f64).round() as usize;
        prop_assert_eq!(d.active_count(), expect);
        prop_assert_eq!(d.overlap(p), expect);
    }

    #[test]
    fn piecewise_linear_crossings_are_exact(
        a in 5.0f64..40.0, gap1 in 10.0f64..40.0, gap2 in 10.0f64..40.0, lift in 0.5f64..3.0
    ) {
        // nu_out - nu_in = -lift * (x - a)(x - b)(x - c) sampled on a grid that
        // avoids the roots, then replaced by its secant interpolation: the
        // finder must recover the secant roots exactly.
        let (b, c) = (a + gap1, a + gap1 + gap2);
        let g = |x: f64| -lift * (x - a) * (x - b) * (x - c) / 1000.0;
        let xs: Vec<f64> = (0..=130).map(|k| k as f64 + 0.37).collect();
        let pairs: Vec<(f64, f64)> = xs.iter().map(|&x| (x, x + g(x))).collect();
        let fps = find_fixed_points(&EtfCurve::from_pairs(0.5, &pairs)).unwrap();
        let mut secant_roots = Vec::new();
        for w in xs.windows(2) {
            let (g0, g1) = (g(w[0]), g(w[1]));
            if g0.signum() != g1.signum() {
                secant_roots.push(w[0] + g0 / (g0 - g1) * (w[1] - w[0]));
            }
        }
        prop_assert_eq!(fps.len(), secant_roots.len());
        for (fp, r) in fps.iter().zip(&secant_roots) {
            prop_assert!((fp.rate - r).abs() < 1e-9);
        }
        prop_assert_eq!(fps.len(), 3);
        prop_assert_eq!(fps[0].stability, Stability::Stable);
        prop_assert_eq!(fps[1].stability, Stability::Unstable);
        prop_assert_eq!(fps[2].stability, Stability::Stable);
    }
}
