mod common;

use std::collections::BTreeMap;

use floodwatch_core::domain::{BoundingBox, Detection, FrameMessage, ModelId, MotionCue, SensorReading, Tier};
use floodwatch_core::evalkit::{ablation, generator, SensorVariant};
use floodwatch_core::fsm::StateId;
use floodwatch_core::provenance::{Disposition, LogEntry};
use floodwatch_core::simnet::{
    self, emission_times, CostModel, OffloadPolicy, PipelineConfig, SimConfig, WorkerOutage,
};
use floodwatch_core::Error;

fn frame(id: u64, area_frac: f64) -> FrameMessage {
    let mut by_tier = BTreeMap::new();
    for tier in Tier::ALL {
        let dets = if area_frac > 0.0 {
            let w = 640.0 * 0.8;
            let h = area_frac * 640.0 * 480.0 / w;
            (1..=3)
                .map(|m| {
                    Detection::new(
                        BoundingBox::new(10.0, 400.0 - h, 10.0 + w, 400.0).unwrap(),
                        0.8,
                        ModelId(m),
                    )
                    .unwrap()
                })
                .collect()
        } else {
            Vec::new()
        };
        by_tier.insert(tier, dets);
    }
    FrameMessage {
        frame_id: id,
        timestamp_ms: generator::SEQUENCE_START_MS + id * 1000,
        motion: MotionCue::Slow,
        sensor: SensorReading {
            temperature: 23.5,
            relative_humidity: 55.0,
            pressure: 1013.0,
            timestamp_ms: generator::SEQUENCE_START_MS + id * 1000,
        },
        detections_by_tier: by_tier,
        sequence_id: "hand".into(),
    }
}

fn quiet_cost() -> CostModel {
    CostModel {
        jitter: 0.0,
        ..CostModel::default()
    }
}

fn config(id: &str) -> SimConfig {
    SimConfig {
        pipeline: ablation::by_id(id).unwrap().pipeline,
        cost: quiet_cost(),
        ..SimConfig::default()
    }
}

fn decisions(out: &simnet::RunOutput) -> Vec<&floodwatch_core::provenance::DecisionRecord> {
    out.log.iter().filter_map(LogEntry::as_decision).collect()
}

#[test]
fn emission_schedule() {
    assert_eq!(
        emission_times(21, 1000).unwrap(),
        (0..=20).map(|i| i * 1000).collect::<Vec<_>>()
    );
    assert_eq!(emission_times(1, 1000).unwrap(), vec![0]);
    assert!(matches!(emission_times(0, 1000), Err(Error::EmptySequence)));
    assert!(matches!(
        simnet::run(&[], &generator::default_baselines(), &SimConfig::default()),
        Err(Error::EmptySequence)
    ));
}

#[test]
fn idle_nano_frame_is_local_without_bus_traffic() {
    let out = simnet::run(&[frame(0, 0.0)], &generator::default_baselines(), &config("4")).unwrap();
    let d = decisions(&out);
    assert_eq!(d.len(), 1);
    assert_eq!(
        (d[0].tier, d[0].offload, d[0].job_id.clone()),
        (Tier::Nano, false, None)
    );
    // Local nano with three models, plus the one-way sensor hop.
    assert_eq!(d[0].latency_ms, 20 + 1500);
    assert_eq!(out.offload_jobs(), 0);
}

#[test]
fn busy_node_keeps_only_latest_frame() {
    // Three-model local nano takes 1500 ms; frames arrive every 400 ms.
    let mut cfg = config("3");
    cfg.frame_interval_ms = 400;
    let frames: Vec<_> = (0..4).map(|i| frame(i, 0.0)).collect();
    let out = simnet::run(&frames, &generator::default_baselines(), &cfg).unwrap();
    let dropped: Vec<u64> = out
        .log
        .iter()
        .filter_map(|e| match e {
            LogEntry::Skip(s) if s.disposition == Disposition::Dropped => Some(s.frame_id),
            _ => None,
        })
        .collect();
    assert_eq!(dropped, vec![1, 2]);
    assert_eq!(
        decisions(&out).iter().map(|d| d.frame_id).collect::<Vec<_>>(),
        vec![0, 3]
    );
    assert_eq!(out.max_buffered_frames, 1);
    assert!(out.counts.conserved());
}

#[test]
fn offload_timeout_falls_back_to_nano_in_s4() {
    let mut cfg = config("6");
    cfg.worker_outages.push(WorkerOutage {
        kill_at_ms: 0,
        revive_at_ms: None,
    });
    let out = simnet::run(&[frame(0, 0.3)], &generator::default_baselines(), &cfg).unwrap();
    let d = decisions(&out)[0];
    assert!(d.offload && d.fallback);
    assert_eq!((d.tier, d.fsm_after), (Tier::Nano, StateId::S4));
    assert_eq!(d.decide_ms, 20 + 2000 + 750);
}

#[test]
fn worker_breaker_stops_offloads() {
    let mut cfg = config("6");
    cfg.worker_outages.push(WorkerOutage {
        kill_at_ms: 0,
        revive_at_ms: None,
    });
    let frames: Vec<_> = (0..12).map(|i| frame(i, 0.3)).collect();
    let out = simnet::run(&frames, &generator::default_baselines(), &cfg).unwrap();
    // Only frames started before the heartbeat goes stale get offloaded.
    assert!(out.offload_requests_ms.iter().all(|t| *t <= 3000));
    let late: Vec<_> = decisions(&out).into_iter().filter(|d| d.ingest_ms > 4000).collect();
    assert!(!late.is_empty());
    assert!(late
        .iter()
        .all(|d| !d.offload && d.tier == Tier::Nano && d.fsm_after == StateId::S4));
}

#[test]
fn disabled_worker_with_adaptive_policy_goes_constrained() {
    let cfg = SimConfig {
        pipeline: PipelineConfig {
            worker_enabled: false,
            offload_policy: OffloadPolicy::Adaptive,
            ..PipelineConfig::default()
        },
        cost: quiet_cost(),
        ..SimConfig::default()
    };
    let frames: Vec<_> = (0..10).map(|i| frame(i, 0.3)).collect();
    let out = simnet::run(&frames, &generator::default_baselines(), &cfg).unwrap();
    assert!(decisions(&out).iter().all(|d| d.tier == Tier::Nano || d.fallback));
}

#[test]
fn rejected_frames_are_logged_and_counted() {
    let mut frames: Vec<_> = (0..3).map(|i| frame(i, 0.0)).collect();
    frames[1].sensor.relative_humidity = 140.0;
    frames[2].frame_id = 0;
    let out = simnet::run(&frames, &generator::default_baselines(), &config("1b")).unwrap();
    assert_eq!((out.counts.decided, out.counts.rejected), (1, 2));
    assert!(out.counts.conserved());
}

#[test]
fn energy_is_idle_plus_items() {
    let seqs = common::sequences(3);
    for id in ["1b", "4", "6"] {
        let cfg = SimConfig { seed: 5, ..config(id) };
        let out = simnet::run(
            &seqs[0].messages(SensorVariant::Neutral),
            &generator::default_baselines(),
            &cfg,
        )
        .unwrap();
        let expected = cfg.cost.processing_idle_w * out.end_ms as f64 / 1000.0
            + out.energy.items.iter().map(|i| i.joules).sum::<f64>();
        let total = out.energy.total_j();
        assert!((total - expected).abs() <= 1e-9 * expected, "{id}");
        let per_frame: f64 = decisions(&out).iter().map(|d| d.energy_j).sum();
        assert!(per_frame <= out.energy.itemized_j() + 1e-9);
    }
}

#[test]
fn static_configs_have_fixed_tier_usage() {
    let m = common::full_matrix();
    for c in m.cells.iter().filter(|c| c.key.variant == SensorVariant::Neutral) {
        let d: Vec<_> = c.log.iter().filter_map(LogEntry::as_decision).collect();
        match c.key.config_id.as_str() {
            "1b" => {
                assert_eq!(c.metrics.offload_jobs, 0);
                assert!(d.iter().all(|r| r.tier == Tier::Nano));
            }
            "6" => assert!(d.iter().all(|r| r.tier == Tier::Medium && r.offload)),
            _ => {}
        }
        let hist: u64 = c.metrics.tier_histogram.values().sum();
        assert_eq!(hist, c.metrics.counts.decided);
    }
}

#[test]
fn runs_are_deterministic_including_traces() {
    let seqs = common::sequences(9);
    let cfg = SimConfig {
        seed: 99,
        ..SimConfig::default()
    };
    for s in &seqs {
        let msgs = s.messages(SensorVariant::RealWet);
        let a = simnet::run(&msgs, &generator::default_baselines(), &cfg).unwrap();
        let b = simnet::run(&msgs, &generator::default_baselines(), &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.log, b.log);
        assert!(a.max_worker_queue <= 1 && a.max_buffered_frames <= 1);
    }
}

#[test]
fn runaway_guard_aborts() {
    let cfg = SimConfig {
        max_pending_events: 4,
        ..SimConfig::default()
    };
    let frames: Vec<_> = (0..10).map(|i| frame(i, 0.0)).collect();
    assert!(matches!(
        simnet::run(&frames, &generator::default_baselines(), &cfg),
        Err(Error::RunawayScenario(_))
    ));
}
