//! Acceptance criteria, one pass/fail line each. Run with
//! `cargo test -p floodwatch-core --test acceptance -- --nocapture`.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use floodwatch_core::consensus::{aggregate, brute_force_aggregate, image_score, AggregationParams, ORACLE_LIMIT};
use floodwatch_core::domain::{BoundingBox, Detection, HazardLabel, ModelId, ScoreThresholds, SensorReading, Tier};
use floodwatch_core::evalkit::{generator, MatrixResult, RunMetrics, SensorVariant};
use floodwatch_core::fsm::StateId;
use floodwatch_core::fusion::{sensor_boost, BoostRuleTable, DiurnalPeriod};
use floodwatch_core::provenance::{replay, write_log, LogEntry, RunArtifact, SkipRecord};
use floodwatch_core::scenario::Scenario;
use floodwatch_core::simnet::{self, SimConfig, WorkerOutage};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn ac1_boost() -> Outcome {
    let rules = BoostRuleTable::default();
    let base = generator::default_baselines();
    let period = DiurnalPeriod::Midday;
    let b = base.period(period);
    let mut got = Vec::new();
    for v in [SensorVariant::RealWet, SensorVariant::AntiFlood, SensorVariant::Neutral] {
        let inj = v.injection();
        let reading = SensorReading {
            temperature: b.temperature + inj.temperature,
            relative_humidity: b.humidity + inj.humidity,
            pressure: b.pressure + inj.pressure,
            timestamp_ms: generator::SEQUENCE_START_MS,
        };
        got.push(sensor_boost(&base.anomalies(&reading, period), &rules));
    }
    check(got == vec![0.14, -0.08, 0.0], format!("boosts {got:?}"))?;
    Ok(format!("boosts {got:?}"))
}

fn random_detections(rng: &mut ChaCha8Rng) -> Vec<Detection> {
    let n = rng.gen_range(0..=ORACLE_LIMIT);
    // A few anchor boxes so that overlaps and chains are common.
    let anchors: Vec<[f64; 2]> = (0..3)
        .map(|_| [rng.gen_range(0.0..400.0), rng.gen_range(0.0..300.0)])
        .collect();
    (0..n)
        .map(|_| {
            let a = anchors[rng.gen_range(0..anchors.len())];
            let (x, y) = (a[0] + rng.gen_range(-30.0..30.0), a[1] + rng.gen_range(-30.0..30.0));
            let (w, h) = (rng.gen_range(20.0..200.0), rng.gen_range(20.0..150.0));
            let c = if rng.gen_bool(0.1) {
                rng.gen_range(0.0..0.02)
            } else {
                rng.gen_range(0.0..1.0)
            };
            Detection::new(
                BoundingBox::new(x.max(0.0), y.max(0.0), x.max(0.0) + w, y.max(0.0) + h).unwrap(),
                c,
                ModelId(rng.gen_range(1..=3)),
            )
            .unwrap()
        })
        .collect()
}

fn ac2_consensus_oracle() -> Outcome {
    let params = AggregationParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut boxes_seen = 0;
    for case in 0..1000 {
        let dets = random_detections(&mut rng);
        let fast = aggregate(&dets, &params);
        let oracle = brute_force_aggregate(&dets, &params).map_err(|e| e.to_string())?;
        check(
            fast.len() == oracle.len(),
            format!("case {case}: {} vs {} groups", fast.len(), oracle.len()),
        )?;
        for (a, b) in fast.iter().zip(&oracle) {
            let close = a
                .bbox
                .coords()
                .iter()
                .zip(b.bbox.coords())
                .all(|(x, y)| (x - y).abs() <= 1e-9);
            check(
                close && a.agreement == b.agreement && (a.summed_confidence - b.summed_confidence).abs() <= 1e-9,
                format!("case {case}: {a:?} vs {b:?}"),
            )?;
        }
        boxes_seen += fast.len();
        let direct: f64 = fast
            .iter()
            .map(|b| {
                let area = (b.bbox.x_max() - b.bbox.x_min()) * (b.bbox.y_max() - b.bbox.y_min());
                b.summed_confidence * area / (640.0 * 480.0) * (1.0 + 0.2 * (b.agreement as f64 - 1.0))
            })
            .sum();
        let s = image_score(&fast, &params);
        check(
            (s - direct).abs() <= 1e-12,
            format!("case {case}: score {s} vs {direct}"),
        )?;
    }
    Ok(format!("1000 sets, {boxes_seen} consensus boxes"))
}

fn ac3_thresholds() -> Outcome {
    let t = ScoreThresholds::default();
    let got: Vec<u8> = [0.149, 0.15, 0.399, 0.40]
        .iter()
        .map(|s| HazardLabel::from_score(*s, &t) as u8)
        .collect();
    check(got == vec![0, 1, 1, 2], format!("labels {got:?}"))?;
    Ok(format!("labels {got:?}"))
}

fn ac4_fsm_golden() -> Outcome {
    let table = common::fsm_table();
    let golden = std::fs::read_to_string(common::GOLDEN_FSM).map_err(|e| e.to_string())?;
    check(table == golden, "table differs from golden file")?;
    for line in table.lines().skip(1) {
        let c: Vec<&str> = line.split_whitespace().collect();
        if c[2] == "constrained" {
            check(
                c[6] == "S4" && c[8] == "nano" && c[9] == "false",
                format!("S4 forcing: {line}"),
            )?;
        }
        if c[8] == "nano" {
            check(c[9] == "false", format!("nano offloaded: {line}"))?;
        }
    }
    Ok(format!("{} rows", table.lines().count() - 1))
}

fn ac5_replay() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let mut lines = 0;
    for (name, frames) in generator::generate_all(common::SEED).map_err(|e| e.to_string())? {
        let rel = format!("sequences/{name}.jsonl");
        generator::write_sequence(&root.join(&rel), &frames).map_err(|e| e.to_string())?;
        let resolved = Scenario::new(&rel, "production", common::SEED)
            .resolve(root)
            .map_err(|e| e.to_string())?;
        let first = write_log(&resolved.run().map_err(|e| e.to_string())?.log).map_err(|e| e.to_string())?;
        let second = write_log(&resolved.run().map_err(|e| e.to_string())?.log).map_err(|e| e.to_string())?;
        check(first == second, format!("{name}: two runs differ"))?;
        let run_dir = root.join("results").join(name);
        resolved.execute(&run_dir).map_err(|e| e.to_string())?;
        let verdict = replay(&RunArtifact::new(&run_dir)).map_err(|e| e.to_string())?;
        check(verdict.is_identical(), format!("{name}: {verdict:?}"))?;
        lines += first.lines().count();
    }
    Ok(format!("5 sequences, {lines} log lines identical"))
}

fn neutral(m: &MatrixResult, id: &str) -> RunMetrics {
    let rows = m.aggregate(SensorVariant::Neutral, &Default::default()).unwrap();
    rows.into_iter().find(|r| r.config_id == id).unwrap().metrics
}

fn ac6_energy_accuracy(m: &MatrixResult) -> Outcome {
    let (nano, prod, always) = (neutral(m, "1b"), neutral(m, "4"), neutral(m, "6"));
    let (e1, e4, e6) = (nano.total_energy_j, prod.total_energy_j, always.total_energy_j);
    check(e1 < e4 && e4 < e6, format!("energy 1b {e1:.1} / 4 {e4:.1} / 6 {e6:.1}"))?;
    let (f4, f6) = (prod.classification.macro_f1, always.classification.macro_f1);
    check(
        f4 >= f6,
        format!("macro F1 production {f4:.3} < always_offload {f6:.3}"),
    )?;
    let dry = m
        .cell("4", "slow_no_water", SensorVariant::Neutral)
        .ok_or("missing dry cell")?;
    check(
        dry.metrics.offload_jobs == 0,
        format!("{} offloads on dry sequence", dry.metrics.offload_jobs),
    )?;
    Ok(format!(
        "E {e1:.1} < {e4:.1} < {e6:.1} J; F1 {f4:.3} >= {f6:.3}; dry offloads 0"
    ))
}

fn ac7_consensus_pairs(m: &MatrixResult) -> Outcome {
    let mut parts = Vec::new();
    for (multi, single) in [("2", "2b"), ("3", "3b"), ("4", "4b")] {
        let (a, b) = (neutral(m, multi), neutral(m, single));
        let (fa, fb) = (a.classification.macro_f1, b.classification.macro_f1);
        check(fa >= fb, format!("{multi} F1 {fa:.3} < {single} F1 {fb:.3}"))?;
        check(
            a.p99_latency_ms > b.p99_latency_ms,
            format!("{multi} p99 {} <= {single} p99 {}", a.p99_latency_ms, b.p99_latency_ms),
        )?;
        parts.push(format!(
            "{multi}/{single} F1 {fa:.3}/{fb:.3} p99 {}/{}",
            a.p99_latency_ms, b.p99_latency_ms
        ));
    }
    Ok(parts.join("; "))
}

fn ac8_sensor_variants(m: &MatrixResult) -> Outcome {
    let get = |v| {
        m.cell("4", "slow_creeping", v)
            .map(|c| c.metrics.clone())
            .ok_or(format!("missing {v} cell"))
    };
    let (n, w, a) = (
        get(SensorVariant::Neutral)?,
        get(SensorVariant::RealWet)?,
        get(SensorVariant::AntiFlood)?,
    );
    check(
        w.temporal_coverage > n.temporal_coverage,
        format!(
            "coverage wet {} <= neutral {}",
            w.temporal_coverage, n.temporal_coverage
        ),
    )?;
    let (wn, ww, wa) = (
        n.classification.watch_recall,
        w.classification.watch_recall,
        a.classification.watch_recall,
    );
    check(ww > wn, format!("watch recall wet {ww:.3} <= neutral {wn:.3}"))?;
    check(wa <= wn, format!("watch recall anti {wa:.3} > neutral {wn:.3}"))?;
    for (name, x) in [("neutral", &n), ("real_wet", &w), ("anti_flood", &a)] {
        let r = x.classification.flood_recall;
        check(r >= 0.9, format!("{name} flood recall {r:.3} < 0.9"))?;
    }
    Ok(format!(
        "coverage {:.3}/{:.3}/{:.3}, watch R {wn:.3}/{ww:.3}/{wa:.3}, flood R {:.3}/{:.3}/{:.3} (neutral/wet/anti)",
        n.temporal_coverage,
        w.temporal_coverage,
        a.temporal_coverage,
        n.classification.flood_recall,
        w.classification.flood_recall,
        a.classification.flood_recall
    ))
}

fn ac9_reliability() -> Outcome {
    let (kill, revive) = (10_000u64, 20_000u64);
    let frames: Vec<_> = generator::generate(generator::script("stopped_water_2").unwrap(), common::SEED)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|f| f.frame)
        .collect();
    let mut config = SimConfig {
        pipeline: floodwatch_core::evalkit::ablation::by_id("4").unwrap().pipeline,
        seed: common::SEED,
        ..SimConfig::default()
    };
    config.worker_outages.push(WorkerOutage {
        kill_at_ms: kill,
        revive_at_ms: Some(revive),
    });
    let out = simnet::run(&frames, &generator::default_baselines(), &config).map_err(|e| e.to_string())?;
    let limit = config.health.miss_limit as u64 * config.health.heartbeat_period_ms;

    // (a) breaker open whenever the last heartbeat seen is stale; no request then.
    for &t in &out.offload_requests_ms {
        let last = out
            .heartbeats_seen_ms
            .iter()
            .filter(|h| **h <= t)
            .max()
            .copied()
            .unwrap_or(0);
        check(t - last <= limit, format!("request at {t} with last heartbeat {last}"))?;
    }
    let silent = out
        .offload_requests_ms
        .iter()
        .filter(|t| **t > kill + limit + config.cost.one_way_ms() && **t <= revive)
        .count();
    check(silent == 0, format!("{silent} requests during outage"))?;

    let decisions: Vec<_> = out.log.iter().filter_map(LogEntry::as_decision).collect();
    // (b) frames that arrived after the kill and were decided before revival.
    let during: Vec<_> = decisions
        .iter()
        .filter(|d| d.ingest_ms > kill && d.decide_ms <= revive)
        .collect();
    check(!during.is_empty(), "no frames decided during outage")?;
    for d in &during {
        check(
            d.tier == Tier::Nano && d.fsm_after == StateId::S4,
            format!("frame {} decided {} in {}", d.frame_id, d.tier, d.fsm_after),
        )?;
    }
    let anchor = during.last().unwrap().fsm_anchor;

    // (c) back on the anchor once miss_limit heartbeats have had time to arrive.
    let settled = revive + limit + config.cost.one_way_ms();
    let after: Vec<_> = decisions.iter().filter(|d| d.ingest_ms >= settled).collect();
    check(!after.is_empty(), "no frames after recovery window")?;
    check(
        after[0].fsm_after == anchor,
        format!(
            "frame {} in {} after recovery, anchor {anchor}",
            after[0].frame_id, after[0].fsm_after
        ),
    )?;
    check(after.iter().all(|d| d.fsm_after != StateId::S4), "S4 after recovery")?;
    Ok(format!(
        "{} frames nano/S4 during outage, recovered to {anchor} by frame {}",
        during.len(),
        after[0].frame_id
    ))
}

fn ac10_conservation(m: &MatrixResult) -> Outcome {
    check(m.failures.is_empty(), format!("failed cells: {:?}", m.failures))?;
    for c in &m.cells {
        let mut tally: BTreeMap<&str, u64> = BTreeMap::new();
        for e in &c.log {
            let k = match e {
                LogEntry::Decision(_) => "decided",
                LogEntry::Skip(SkipRecord { disposition, .. }) => match disposition {
                    floodwatch_core::provenance::Disposition::Dropped => "dropped",
                    floodwatch_core::provenance::Disposition::Rejected => "rejected",
                },
            };
            *tally.entry(k).or_default() += 1;
        }
        let n = c.metrics.counts;
        let emitted = 32;
        let (d, dr, r) = (
            tally.get("decided").copied().unwrap_or(0),
            tally.get("dropped").copied().unwrap_or(0),
            tally.get("rejected").copied().unwrap_or(0),
        );
        check(
            d + dr + r == emitted && n.emitted == emitted && (n.decided, n.dropped, n.rejected) == (d, dr, r),
            format!("{:?}: counts {n:?} vs log {d}/{dr}/{r}", c.key),
        )?;
        check(
            c.metrics.temporal_coverage == d as f64 / emitted as f64,
            format!("{:?}: coverage {}", c.key, c.metrics.temporal_coverage),
        )?;
    }
    Ok(format!("{} cells conserved", m.cells.len()))
}

// Written straight to stdout so the lines survive libtest output capture.
macro_rules! report {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, $($arg)*);
        let _ = out.flush();
    }};
}

type Criterion<'a> = (&'static str, Duration, Box<dyn Fn() -> Outcome + 'a>);

#[test]
fn acceptance_suite() {
    let started = Instant::now();
    let matrix = common::full_matrix();
    let matrix_time = started.elapsed();
    let criteria: Vec<Criterion> = vec![
        (
            "AC1 sensor boost exactness",
            Duration::from_secs(1),
            Box::new(ac1_boost),
        ),
        (
            "AC2 consensus oracle equivalence",
            Duration::from_secs(10),
            Box::new(ac2_consensus_oracle),
        ),
        (
            "AC3 classification thresholds",
            Duration::from_secs(1),
            Box::new(ac3_thresholds),
        ),
        (
            "AC4 FSM exhaustive determinism",
            Duration::from_secs(1),
            Box::new(ac4_fsm_golden),
        ),
        ("AC5 replay determinism", Duration::from_secs(30), Box::new(ac5_replay)),
        (
            "AC6 energy/accuracy ordering",
            Duration::from_secs(120),
            Box::new(|| ac6_energy_accuracy(matrix)),
        ),
        (
            "AC7 consensus pairs",
            Duration::from_secs(120),
            Box::new(|| ac7_consensus_pairs(matrix)),
        ),
        (
            "AC8 sensor variants",
            Duration::from_secs(60),
            Box::new(|| ac8_sensor_variants(matrix)),
        ),
        (
            "AC9 reliability tactics",
            Duration::from_secs(30),
            Box::new(ac9_reliability),
        ),
        (
            "AC10 frame conservation",
            Duration::from_secs(1),
            Box::new(|| ac10_conservation(matrix)),
        ),
    ];
    report!("matrix: {} cells in {:.2?}", matrix.cells.len(), matrix_time);
    let mut failed = Vec::new();
    for (name, budget, f) in criteria {
        let t = Instant::now();
        let outcome = f();
        let elapsed = t.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; took {elapsed:.2?} > {budget:?}")),
            o => o,
        };
        match &outcome {
            Ok(detail) => report!("PASS {name} ({elapsed:.2?}): {detail}"),
            Err(why) => {
                report!("FAIL {name} ({elapsed:.2?}): {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
