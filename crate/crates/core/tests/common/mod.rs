#![allow(dead_code)]

use std::fmt::Write;
use std::sync::OnceLock;

use floodwatch_core::domain::MotionCue;
use floodwatch_core::evalkit::{
    canonical, default_baselines, generate_all, run_matrix, MatrixResult, MatrixSpec, MetricOptions, NamedSequence,
    SensorVariant,
};
use floodwatch_core::fsm::{step, Band, FsmInputs, FsmPolicyParams, FsmState, ResourceFlag, StateId};
use floodwatch_core::simnet::SimConfig;

pub const SEED: u64 = 7;

pub fn sequences(seed: u64) -> Vec<NamedSequence> {
    generate_all(seed)
        .unwrap()
        .into_iter()
        .map(|(n, f)| NamedSequence::new(n, f))
        .collect()
}

pub fn spec(variants: Vec<SensorVariant>) -> MatrixSpec {
    MatrixSpec {
        configs: canonical(),
        sequences: sequences(SEED),
        variants,
        base: SimConfig::default(),
        baselines: default_baselines(),
        seed: SEED,
        metrics: MetricOptions::default(),
    }
}

/// Full matrix, all variants, computed once per test binary.
pub fn full_matrix() -> &'static MatrixResult {
    static CELL: OnceLock<MatrixResult> = OnceLock::new();
    CELL.get_or_init(|| run_matrix(&spec(SensorVariant::ALL.to_vec())))
}

fn band_name(b: Band) -> &'static str {
    match b {
        Band::Low => "low",
        Band::Mid => "mid",
        Band::High => "high",
    }
}

/// One row per (state, motion, resource, conflict, band). The input state
/// holds the row band's streak one short of its threshold and the calm
/// streak one short of the exit threshold; S4 rows remember S2.
pub fn fsm_table() -> String {
    let p = FsmPolicyParams::default();
    let mut out = String::from("state motion resource conflict band -> next anchor tier offload\n");
    for state in StateId::ALL {
        for motion in MotionCue::ALL {
            for resource in [ResourceFlag::Normal, ResourceFlag::Constrained] {
                for conflict in [false, true] {
                    for (band, score) in [(Band::Low, 0.05), (Band::Mid, 0.25), (Band::High, 0.5)] {
                        let anchor = if state == StateId::S4 { StateId::S2 } else { state };
                        let mut s = FsmState::entering(state, anchor);
                        match band {
                            Band::Low => s.consecutive_low = p.demote_streak - 1,
                            Band::Mid => s.consecutive_mid = p.promote_streak - 1,
                            Band::High => s.consecutive_high = p.promote_streak - 1,
                        }
                        s.consecutive_calm = p.promote_streak - 1;
                        let inputs = FsmInputs {
                            combined_score: score,
                            motion,
                            resource,
                            conflict,
                        };
                        let o = step(&s, &inputs, &p);
                        writeln!(
                            out,
                            "{} {} {} {} {} -> {} {} {} {}",
                            state,
                            motion.as_str(),
                            match resource {
                                ResourceFlag::Normal => "normal",
                                ResourceFlag::Constrained => "constrained",
                            },
                            conflict,
                            band_name(band),
                            o.next.current,
                            o.next.anchor,
                            o.tier,
                            o.offload
                        )
                        .unwrap();
                    }
                }
            }
        }
    }
    out
}

pub const GOLDEN_FSM: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/fsm_table.txt");
