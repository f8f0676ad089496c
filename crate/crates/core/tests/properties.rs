mod common;

use common::{run_sequence, Op, INTERVALS_S};
use gsm_access::analytics::{arrival_histogram, truncated_poisson};
use gsm_access::calendar::EusfParams;
use gsm_access::config::{SimConfig, TruncationVariant};
use gsm_access::data_plane::{blocks_required, CodingScheme};
use gsm_access::geometry::{ChannelPlan, Geometry};
use gsm_access::grant::Variant;
use proptest::prelude::*;

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        2 => Just(Op::Legacy),
        3 => (1u32..=12, 0u32..30).prop_map(|(blocks, delay_blocks)| Op::OneShot { blocks, delay_blocks }),
        3 => (1u32..=400, 0usize..INTERVALS_S.len())
            .prop_map(|(payload, i)| Op::Periodic { payload, interval_s: INTERVALS_S[i] }),
        2 => any::<usize>().prop_map(Op::Release),
        1 => (0u32..6).prop_map(Op::Advance),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn allocator_invariants_hold(
        n_pdch in 1u8..=7,
        valid in 1u32..=3,
        gap in 0u32..=3,
        ops in prop::collection::vec(op(), 1..60),
    ) {
        let params = EusfParams { valid_multiframes: valid, gap_multiframes: gap };
        if let Err(msg) = run_sequence(n_pdch, params, &ops) {
            return Err(TestCaseError::fail(msg));
        }
    }
}

proptest! {
    #[test]
    fn locate_is_a_bijection(frame in 0u64..10_000_000) {
        let g = Geometry::default();
        let pos = g.locate(frame as i64).unwrap();
        prop_assert_eq!(g.frame_of(&pos), frame);
        prop_assert!(pos.block.is_some_and(|b| b < 12) && pos.frame_in_block < 4);
    }

    #[test]
    fn agch_boundaries_per_multiframe(mf in 0u64..100_000) {
        let g = Geometry::default();
        let plan = ChannelPlan::default();
        let ends = (mf * 48..(mf + 1) * 48)
            .filter_map(|f| g.block_ending_at(f))
            .filter(|&u| plan.is_agch_block((u % 12) as u32))
            .count();
        prop_assert_eq!(ends, 7);
    }

    #[test]
    fn truncated_pmf_sums_to_one(lambda in 0.0f64..200.0, cap in 0u32..80) {
        for v in [TruncationVariant::MassAtCap, TruncationVariant::Renormalized] {
            let p = truncated_poisson(lambda, cap, v).unwrap();
            prop_assert_eq!(p.len(), cap as usize + 1);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn histogram_sums_to_window_count(counts in prop::collection::vec(0u32..60, 1..500)) {
        let h = arrival_histogram(&counts);
        prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let max = *counts.iter().max().unwrap() as usize;
        prop_assert_eq!(h.len(), max + 1);
    }

    #[test]
    fn blocks_cover_payload(payload in 1u32..10_000, bp in 1u32..100) {
        let cs = CodingScheme { name: "x".into(), block_payload: bp };
        let n = blocks_required(payload, &cs).unwrap();
        prop_assert!(n as u64 * bp as u64 >= payload as u64);
        prop_assert!((n as u64 - 1) * (bp as u64) < payload as u64);
    }

    #[test]
    fn config_round_trips(
        seed in any::<u64>(),
        warmup in 0.0f64..1e4,
        measure in 1.0f64..1e5,
        v in 0usize..3,
        sep in any::<bool>(),
        retain in any::<bool>(),
        x in 1u32..5,
        gap in 0u32..5,
    ) {
        let mut c = SimConfig {
            seed,
            warmup_s: warmup,
            measure_s: measure,
            variant: Variant::ALL[v],
            separate_rach: sep,
            retain_on_usf_block: retain,
            ..SimConfig::default()
        };
        c.eusf = EusfParams { valid_multiframes: x, gap_multiframes: gap };
        let text = c.to_toml().unwrap();
        prop_assert_eq!(SimConfig::from_toml(&text).unwrap(), c);
    }
}
