use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdc_core::channels::{make_scenario, NoiseScenario, ScenarioDescriptor};
use sdc_core::postprocess::{
    estimate_and_decide, parse_records, privacy_amplify, raw_keys, reconcile, reconcile_pair,
    run_session, sample_runs, ReconcileConfig, RunRecord, SessionConfig, SymbolChannel,
    ToeplitzHash,
};
use sdc_core::protocol::RunType;
use sdc_core::rates::rate_point;

#[test]
fn estimates_track_exact_rates() {
    for (lambda, delta) in [(0.0, 0.0), (0.1, 0.2), (0.2, 0.1)] {
        let sc = make_scenario(&ScenarioDescriptor::DepolIndep { lambda, delta }).unwrap();
        let exact = rate_point(&sc).unwrap();
        let est = estimate_and_decide(&sample_runs(&sc, 60_000, 0.2, 3).unwrap()).unwrap();
        assert!(
            (est.r1 - exact.r1_lower).abs() < 0.03,
            "{lambda},{delta}: {} vs {}",
            est.r1,
            exact.r1_lower
        );
        assert!(
            (est.r2 - exact.r2_lower).abs() < 0.03,
            "{lambda},{delta}: {} vs {}",
            est.r2,
            exact.r2_lower
        );
    }
}

#[test]
fn run_type_frequencies_follow_p_test() {
    let session = sample_runs(&NoiseScenario::identity(), 40_000, 0.3, 5).unwrap();
    let c = session.counts();
    let n = session.n() as f64;
    assert!((c.key_key as f64 / n - 0.49).abs() < 0.01);
    assert!((c.test_key as f64 / n - 0.21).abs() < 0.01);
    assert!((c.key_test as f64 / n - 0.21).abs() < 0.01);
    assert!((c.test_test as f64 / n - 0.09).abs() < 0.01);
    for r in session.records() {
        let alice_full = r.i.is_some() && r.j.is_some() && r.k.is_some();
        match (r.bob1, r.bob2) {
            (RunType::Test, RunType::Key) => {
                assert!(r.i.is_some() && r.j.is_some() && r.k.is_none())
            }
            (RunType::Key, RunType::Test) => {
                assert!(r.i.is_none() && r.j.is_none() && r.k.is_some())
            }
            _ => assert!(alice_full),
        }
    }
}

#[test]
fn reconciliation_fixes_noisy_keys() {
    let sc = make_scenario(&ScenarioDescriptor::DepolIndep {
        lambda: 0.1,
        delta: 0.1,
    })
    .unwrap();
    let session = sample_runs(&sc, 6000, 0.1, 21).unwrap();
    let keys = raw_keys(&session).unwrap();
    assert_ne!(keys.alice1, keys.bob1);
    for block_len in [12, 20] {
        let cfg = ReconcileConfig {
            margin_bits: 10,
            block_len,
        };
        let ch = SymbolChannel::estimate(&keys.alice1, &keys.bob1, 2).unwrap();
        let r = reconcile_pair(&keys.alice1, &keys.bob1, &ch, &cfg, 4).unwrap();
        assert!(
            r.block_failure_rate() < 0.01,
            "L={block_len}: {}",
            r.block_failure_rate()
        );
        let ch = SymbolChannel::estimate(&keys.alice2, &keys.bob2, 1).unwrap();
        let r = reconcile_pair(&keys.alice2, &keys.bob2, &ch, &cfg, 4).unwrap();
        assert!(
            r.block_failure_rate() < 0.01,
            "L={block_len}: {}",
            r.block_failure_rate()
        );
    }
}

#[test]
fn identity_reconcile_leaks_nothing_beyond_margin() {
    let session = sample_runs(&NoiseScenario::identity(), 3000, 0.1, 2).unwrap();
    let cfg = ReconcileConfig {
        margin_bits: 0,
        block_len: 12,
    };
    let r = reconcile(&session, &cfg, 0).unwrap();
    assert_eq!(r.alice1, r.bob1);
    assert_eq!(r.alice2, r.bob2);
    assert_eq!(r.leak1 + r.leak2, 0);
}

#[test]
fn session_is_reproducible() {
    let sc = make_scenario(&ScenarioDescriptor::DepolIndep {
        lambda: 0.05,
        delta: 0.05,
    })
    .unwrap();
    let cfg = SessionConfig {
        n: 4000,
        p_test: 0.2,
        seed: 99,
        reconcile: ReconcileConfig::default(),
    };
    let a = run_session(&sc, &cfg).unwrap();
    assert_eq!(a, run_session(&sc, &cfg).unwrap());
    assert_eq!(a.sampling_key_bits, 64);
}

#[test]
fn identity_estimates_and_noisy_abort() {
    let est =
        estimate_and_decide(&sample_runs(&NoiseScenario::identity(), 10_000, 0.1, 8).unwrap())
            .unwrap();
    assert!((est.r1 - 2.0).abs() < 0.05 && (est.r2 - 1.0).abs() < 0.05);
    assert!(!est.abort);
    let sc = make_scenario(&ScenarioDescriptor::DepolIndep {
        lambda: 0.8,
        delta: 0.8,
    })
    .unwrap();
    assert!(
        estimate_and_decide(&sample_runs(&sc, 10_000, 0.1, 8).unwrap())
            .unwrap()
            .abort
    );
}

#[test]
fn toeplitz_collision_rate_is_near_universal() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let trials = 200_000;
    let mut collisions = 0usize;
    for _ in 0..trials {
        let a: Vec<u8> = (0..48).map(|_| rng.gen_range(0..2u8)).collect();
        let mut b = a.clone();
        let flips = rng.gen_range(1..=48);
        for _ in 0..flips {
            b[rng.gen_range(0..48)] ^= 1;
        }
        if a == b {
            continue;
        }
        let h = ToeplitzHash::new(48, 16, rng.gen()).unwrap();
        collisions += usize::from(h.apply(&a).unwrap() == h.apply(&b).unwrap());
    }
    let p = 2f64.powi(-16);
    let bound = p + 3.0 * (p / trials as f64).sqrt();
    assert!(
        (collisions as f64 / trials as f64) <= bound,
        "{collisions} collisions"
    );
}

#[test]
fn amplified_bits_are_unbiased_over_seeds() {
    let key: Vec<u8> = (0..256).map(|t| u8::from(t % 7 == 0)).collect();
    let sessions = 10_000;
    let mut ones = [0usize; 16];
    for seed in 0..sessions {
        for (count, bit) in ones
            .iter_mut()
            .zip(privacy_amplify(&key, 16, seed).unwrap())
        {
            *count += usize::from(bit);
        }
    }
    for count in ones {
        assert!((count as f64 / sessions as f64 - 0.5).abs() <= 0.02);
    }
}

#[test]
fn block_failure_rate_at_default_parameters() {
    let sc = make_scenario(&ScenarioDescriptor::DepolIndep {
        lambda: 0.1,
        delta: 0.1,
    })
    .unwrap();
    // enough key runs for well over 1000 blocks per pair
    let session = sample_runs(&sc, 30_000, 0.1, 31).unwrap();
    let keys = raw_keys(&session).unwrap();
    for block_len in [12, 20] {
        let cfg = ReconcileConfig {
            margin_bits: 10,
            block_len,
        };
        for (a, b, width) in [(&keys.alice1, &keys.bob1, 2), (&keys.alice2, &keys.bob2, 1)] {
            let ch = SymbolChannel::estimate(a, b, width).unwrap();
            let r = reconcile_pair(a, b, &ch, &cfg, 6).unwrap();
            assert!(r.blocks >= 1000);
            assert!(
                r.block_failure_rate() <= 1e-3,
                "L={block_len}: {}",
                r.block_failure_rate()
            );
            let floor = (a.len() / width) as f64 * ch.entropy_per_symbol();
            assert!(
                r.leak_bits as f64 >= floor,
                "leak {} below {floor}",
                r.leak_bits
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn toeplitz_is_linear(
        (a, b) in (1usize..300).prop_flat_map(|n| (
            prop::collection::vec(0u8..2, n),
            prop::collection::vec(0u8..2, n),
        )),
        frac in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let m = (a.len() as f64 * frac) as usize;
        let h = ToeplitzHash::new(a.len(), m, seed).unwrap();
        let ab: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        let (ha, hb) = (h.apply(&a).unwrap(), h.apply(&b).unwrap());
        let sum: Vec<u8> = ha.iter().zip(&hb).map(|(x, y)| x ^ y).collect();
        prop_assert_eq!(h.apply(&ab).unwrap(), sum);
        prop_assert_eq!(privacy_amplify(&a, m, seed).unwrap(), ha);
    }

    #[test]
    fn record_lines_round_trip(
        index in any::<u64>(),
        types in (0u8..4),
        bits in prop::collection::vec(0u8..2, 7),
    ) {
        let bob1 = if types & 2 == 0 { RunType::Key } else { RunType::Test };
        let bob2 = if types & 1 == 0 { RunType::Key } else { RunType::Test };
        let record = RunRecord {
            index,
            bob1,
            bob2,
            i: (bob2 == RunType::Key || bob1 == RunType::Key).then_some(bits[0]),
            j: Some(bits[1]),
            k: (bob1 == RunType::Key).then_some(bits[2]),
            x: bits[3],
            y: bits[4],
            z: bits[5],
            s: bits[6],
        };
        let parsed = parse_records(&format!("# header\n{}\n", record.to_line())).unwrap();
        prop_assert_eq!(parsed, vec![record]);
    }
}
