//! Event loop and node actors.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::consensus::{aggregate, image_score, AggregationParams};
use crate::domain::{validate_frame, Detection, FrameMessage, HazardLabel, ModelId, Tier};
use crate::error::{Error, Result};
use crate::fsm::{step, FsmInputs, FsmState, ResourceFlag};
use crate::fusion::{sensor_boost, Anomalies, DiurnalBaselines, DiurnalPeriod};
use crate::provenance::{fingerprint, DecisionRecord, Disposition, LogEntry, SkipRecord};

use super::bus::{Bus, Delivery, Topic};
use super::clock::VirtualClock;
use super::cost::Site;
use super::health::{health_update, HealthEvent, WorkerHealth};
use super::{
    emission_times, EnergyItem, EnergyKind, EnergyLedger, FrameCounts, OffloadPolicy, RunOutput, SimConfig, TraceEvent,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Processing,
    Worker,
}

#[derive(Debug, Clone)]
struct InferenceJob {
    job_id: String,
    frame_id: u64,
    tier: Tier,
    models: u8,
    detections: Vec<Detection>,
}

#[derive(Debug, Clone)]
enum JobOutcome {
    Completed { detections: Vec<Detection> },
    Rejected,
}

#[derive(Debug, Clone)]
enum Payload {
    Frame {
        frame: Box<FrameMessage>,
        published_at: u64,
    },
    Job(Box<InferenceJob>),
    Response {
        job_id: String,
        outcome: JobOutcome,
    },
    Heartbeat,
}

#[derive(Debug)]
enum Event {
    Emit(usize),
    Deliver(Delivery<Node, Payload>),
    LocalDone { token: u64 },
    WorkerDone { token: u64 },
    Timeout { job_id: String },
    Heartbeat { epoch: u64 },
    Kill,
    Revive,
}

fn deliver(d: Delivery<Node, Payload>) -> Event {
    Event::Deliver(d)
}

/// A frame admitted by validation, waiting or in progress.
#[derive(Debug, Clone)]
struct Admitted {
    frame: FrameMessage,
    published_at: u64,
    ingest_ms: u64,
}

#[derive(Debug, Clone)]
enum Stage {
    Local { token: u64 },
    Offload { job_id: String },
}

#[derive(Debug, Clone)]
struct InFlight {
    item: Admitted,
    fsm_before: FsmState,
    fsm_next: FsmState,
    tier: Tier,
    offload: bool,
    job_id: Option<String>,
    anomalies: Anomalies,
    boost: f64,
    fallback: bool,
    stage: Stage,
}

struct Processing {
    baselines: DiurnalBaselines,
    fsm: FsmState,
    health: WorkerHealth,
    prev_score: f64,
    prev_conflict: bool,
    prev_label: Option<HazardLabel>,
    last_frame_id: Option<u64>,
    busy: Option<InFlight>,
    buffer: Option<Admitted>,
    next_job: u64,
    next_token: u64,
}

struct ResidentJob {
    job: InferenceJob,
    arrived_at: u64,
}

struct Worker {
    online: bool,
    epoch: u64,
    busy: Option<(ResidentJob, u64)>,
    queued: Option<ResidentJob>,
    next_token: u64,
}

pub(super) struct World<'a> {
    frames: &'a [FrameMessage],
    emit_at: Vec<u64>,
    cfg: &'a SimConfig,
    agg: AggregationParams,
    required_tiers: Vec<Tier>,
    fingerprint: String,
    clock: VirtualClock<Event>,
    bus: Bus<Node, Payload>,
    rng: ChaCha8Rng,
    proc: Processing,
    worker: Worker,
    ledger: EnergyLedger,
    log: Vec<LogEntry>,
    trace: Vec<TraceEvent>,
    counts: FrameCounts,
    offload_requests_ms: Vec<u64>,
    heartbeats_seen_ms: Vec<u64>,
    max_buffered: usize,
    max_worker_queue: usize,
}

impl<'a> World<'a> {
    pub(super) fn new(frames: &'a [FrameMessage], baselines: &DiurnalBaselines, cfg: &'a SimConfig) -> Result<Self> {
        let emit_at = emission_times(frames.len(), cfg.frame_interval_ms)?;
        let mut world = Self {
            frames,
            emit_at,
            cfg,
            agg: cfg.aggregation.with_ensemble_size(cfg.pipeline.ensemble_size),
            required_tiers: cfg.pipeline.required_tiers(),
            fingerprint: fingerprint(cfg),
            clock: VirtualClock::new(cfg.max_pending_events),
            bus: Bus::new(cfg.cost.one_way_ms()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            proc: Processing {
                baselines: baselines.clone(),
                fsm: FsmState::default(),
                health: WorkerHealth::new(cfg.health, 0),
                prev_score: 0.0,
                prev_conflict: false,
                prev_label: None,
                last_frame_id: None,
                busy: None,
                buffer: None,
                next_job: 0,
                next_token: 0,
            },
            worker: Worker {
                online: cfg.pipeline.worker_enabled,
                epoch: 0,
                busy: None,
                queued: None,
                next_token: 0,
            },
            ledger: EnergyLedger::default(),
            log: Vec::new(),
            trace: Vec::new(),
            counts: FrameCounts::default(),
            offload_requests_ms: Vec::new(),
            heartbeats_seen_ms: Vec::new(),
            max_buffered: 0,
            max_worker_queue: 0,
        };
        world.bootstrap()?;
        Ok(world)
    }

    fn bootstrap(&mut self) -> Result<()> {
        let clock = &mut self.clock;
        self.bus.subscribe(Node::Processing, "sensor/data", clock, deliver)?;
        self.bus
            .subscribe(Node::Processing, "inference/response/+", clock, deliver)?;
        self.bus
            .subscribe(Node::Processing, "inference/jetson/status", clock, deliver)?;
        if self.cfg.pipeline.worker_enabled {
            self.bus.subscribe(Node::Worker, "inference/request", clock, deliver)?;
            clock.schedule_at(0, Event::Heartbeat { epoch: 0 })?;
            for o in &self.cfg.worker_outages {
                clock.schedule_at(o.kill_at_ms, Event::Kill)?;
                if let Some(r) = o.revive_at_ms {
                    clock.schedule_at(r, Event::Revive)?;
                }
            }
        }
        for (i, at) in self.emit_at.iter().enumerate() {
            clock.schedule_at(*at, Event::Emit(i))?;
        }
        Ok(())
    }

    fn resolved(&self) -> u64 {
        self.counts.decided + self.counts.dropped + self.counts.rejected
    }

    fn note(&mut self, what: String) {
        self.trace.push(TraceEvent {
            at_ms: self.clock.now(),
            what,
        });
    }

    fn charge(&mut self, kind: EnergyKind, frame_id: u64, joules: f64) {
        self.ledger.items.push(EnergyItem {
            at_ms: self.clock.now(),
            kind,
            frame_id,
            joules,
        });
    }

    pub(super) fn run(mut self) -> Result<RunOutput> {
        let total = self.frames.len() as u64;
        let budget = 64 * (self.frames.len() + 16) * (1 + self.cfg.worker_outages.len());
        let mut processed = 0usize;
        while self.resolved() < total {
            let Some((_, event)) = self.clock.advance() else {
                return Err(Error::RunawayScenario(self.cfg.max_pending_events));
            };
            processed += 1;
            if processed > budget {
                return Err(Error::RunawayScenario(budget));
            }
            self.handle(event)?;
        }
        let end_ms = self.clock.now();
        self.flush_worker(end_ms);
        self.ledger.idle_j = self.cfg.cost.processing_idle_w * end_ms as f64 / 1000.0;
        Ok(RunOutput {
            log: self.log,
            trace: self.trace,
            energy: self.ledger,
            counts: self.counts,
            offload_requests_ms: self.offload_requests_ms,
            heartbeats_seen_ms: self.heartbeats_seen_ms,
            end_ms,
            max_buffered_frames: self.max_buffered,
            max_worker_queue: self.max_worker_queue,
            config_fingerprint: self.fingerprint,
        })
    }

    fn handle(&mut self, event: Event) -> Result<()> {
        match event {
            Event::Emit(i) => self.emit(i),
            Event::Deliver(d) => match (d.subscriber, d.payload) {
                (Node::Processing, Payload::Frame { frame, published_at }) => self.on_frame(*frame, published_at),
                (Node::Processing, Payload::Response { job_id, outcome }) => self.on_response(job_id, outcome),
                (Node::Processing, Payload::Heartbeat) => {
                    let now = self.clock.now();
                    self.heartbeats_seen_ms.push(now);
                    self.set_health(health_update(self.proc.health, HealthEvent::Heartbeat, now));
                    Ok(())
                }
                (Node::Worker, Payload::Job(job)) => self.worker_accept(*job),
                _ => Ok(()),
            },
            Event::LocalDone { token } => self.on_local_done(token),
            Event::WorkerDone { token } => self.worker_done(token),
            Event::Timeout { job_id } => self.on_timeout(job_id),
            Event::Heartbeat { epoch } => self.worker_heartbeat(epoch),
            Event::Kill => self.worker_kill(),
            Event::Revive => self.worker_revive(),
        }
    }

    // ---- gathering node ----

    fn emit(&mut self, i: usize) -> Result<()> {
        let frame = self.frames[i].clone();
        let published_at = self.clock.now();
        self.counts.emitted += 1;
        self.note(format!("emit frame {}", frame.frame_id));
        let payload = Payload::Frame {
            frame: Box::new(frame),
            published_at,
        };
        self.bus.publish(Topic::SensorData, payload, &mut self.clock, deliver)?;
        Ok(())
    }

    // ---- processing node ----

    fn set_health(&mut self, next: WorkerHealth) {
        if next.breaker != self.proc.health.breaker {
            self.note(format!("breaker {:?}", next.breaker));
        }
        self.proc.health = next;
    }

    fn skip(&mut self, frame: &FrameMessage, ingest_ms: u64, disposition: Disposition, reason: String) {
        match disposition {
            Disposition::Dropped => self.counts.dropped += 1,
            Disposition::Rejected => self.counts.rejected += 1,
        }
        self.note(format!("{disposition:?} frame {}", frame.frame_id));
        self.log.push(LogEntry::Skip(SkipRecord {
            frame_id: frame.frame_id,
            sequence_id: frame.sequence_id.clone(),
            ingest_ms,
            at_ms: self.clock.now(),
            disposition,
            reason,
            config_fingerprint: self.fingerprint.clone(),
        }));
    }

    fn on_frame(&mut self, frame: FrameMessage, published_at: u64) -> Result<()> {
        let now = self.clock.now();
        let frame = match validate_frame(frame.clone(), self.proc.last_frame_id, &self.required_tiers) {
            Ok(f) => f,
            Err(rejection) => {
                self.skip(&frame, now, Disposition::Rejected, rejection.to_string());
                return Ok(());
            }
        };
        self.proc.last_frame_id = Some(frame.frame_id);
        let item = Admitted {
            frame,
            published_at,
            ingest_ms: now,
        };
        if self.proc.busy.is_some() {
            if let Some(old) = self.proc.buffer.take() {
                self.skip(
                    &old.frame,
                    old.ingest_ms,
                    Disposition::Dropped,
                    "displaced by newer frame".into(),
                );
            }
            self.proc.buffer = Some(item);
            self.max_buffered = self.max_buffered.max(1);
            return Ok(());
        }
        self.start(item)
    }

    fn start(&mut self, item: Admitted) -> Result<()> {
        let now = self.clock.now();
        let cfg = self.cfg;
        let pipeline = &cfg.pipeline;
        let sensor = item.frame.sensor;
        let period = DiurnalPeriod::from_timestamp(sensor.timestamp_ms);
        let anomalies = self.proc.baselines.anomalies(&sensor, period);
        let boost = if pipeline.fusion_enabled {
            sensor_boost(&anomalies, &cfg.boost_rules)
        } else {
            0.0
        };
        if let Some(label) = self.proc.prev_label {
            self.proc.baselines = self.proc.baselines.update(&sensor, label, period);
        }

        let constrained = pipeline.offload_policy != OffloadPolicy::None && self.proc.health.is_open(now);
        let resource = if constrained {
            ResourceFlag::Constrained
        } else {
            ResourceFlag::Normal
        };
        let fsm_before = self.proc.fsm;
        let (fsm_next, planned) = if pipeline.fsm_enabled {
            let inputs = FsmInputs {
                combined_score: self.proc.prev_score,
                motion: item.frame.motion,
                resource,
                conflict: self.proc.prev_conflict,
            };
            let out = step(&fsm_before, &inputs, &cfg.fsm);
            (out.next, out.tier)
        } else if constrained {
            (fsm_before.constrained(), Tier::Nano)
        } else {
            (FsmState::default(), pipeline.max_tier())
        };
        let mut tier = if constrained {
            Tier::Nano
        } else {
            pipeline.clamp_tier(planned)
        };
        if pipeline.offload_policy == OffloadPolicy::ForceMediumOnFast
            && !constrained
            && item.frame.motion == crate::domain::MotionCue::Fast
        {
            tier = Tier::Medium;
        }
        let offload = pipeline.offload_policy != OffloadPolicy::None && !constrained && tier != Tier::Nano;

        let mut flight = InFlight {
            item,
            fsm_before,
            fsm_next,
            tier,
            offload,
            job_id: None,
            anomalies,
            boost,
            fallback: false,
            stage: Stage::Local { token: 0 },
        };
        if offload {
            self.proc.next_job += 1;
            let job_id = format!("job-{:06}", self.proc.next_job);
            let job = InferenceJob {
                job_id: job_id.clone(),
                frame_id: flight.item.frame.frame_id,
                tier,
                models: pipeline.ensemble_size,
                detections: flight.item.frame.detections(tier, pipeline.ensemble_size),
            };
            self.charge(EnergyKind::Transfer, job.frame_id, cfg.cost.transfer_j);
            self.note(format!("request {job_id} tier {tier}"));
            self.offload_requests_ms.push(now);
            self.bus.publish(
                Topic::InferenceRequest,
                Payload::Job(Box::new(job)),
                &mut self.clock,
                deliver,
            )?;
            self.clock
                .schedule_in(cfg.offload_timeout_ms, Event::Timeout { job_id: job_id.clone() })?;
            flight.job_id = Some(job_id.clone());
            flight.stage = Stage::Offload { job_id };
        } else {
            flight.stage = self.run_local(flight.item.frame.frame_id, tier)?;
        }
        self.proc.busy = Some(flight);
        Ok(())
    }

    fn run_local(&mut self, frame_id: u64, tier: Tier) -> Result<Stage> {
        let models = self.cfg.pipeline.ensemble_size;
        let ms = self.cfg.cost.inference_ms(Site::Local, tier, models, &mut self.rng)?;
        let joules = self.cfg.cost.inference_j(Site::Local, tier, models)?;
        self.charge(EnergyKind::LocalInference, frame_id, joules);
        self.proc.next_token += 1;
        let token = self.proc.next_token;
        self.clock.schedule_in(ms, Event::LocalDone { token })?;
        Ok(Stage::Local { token })
    }

    fn on_local_done(&mut self, token: u64) -> Result<()> {
        let Some(flight) = &self.proc.busy else {
            return Ok(());
        };
        if !matches!(flight.stage, Stage::Local { token: t } if t == token) {
            return Ok(());
        }
        let tier = if flight.fallback { Tier::Nano } else { flight.tier };
        let detections = flight.item.frame.detections(tier, self.cfg.pipeline.ensemble_size);
        self.decide(detections)
    }

    fn current_job(&self, job_id: &str) -> bool {
        matches!(&self.proc.busy, Some(InFlight { stage: Stage::Offload { job_id: j }, .. }) if j == job_id)
    }

    fn on_response(&mut self, job_id: String, outcome: JobOutcome) -> Result<()> {
        let now = self.clock.now();
        self.set_health(health_update(self.proc.health, HealthEvent::Response, now));
        if !self.current_job(&job_id) {
            self.note(format!("late response {job_id}"));
            return Ok(());
        }
        match outcome {
            JobOutcome::Completed { detections } => {
                self.note(format!("response {job_id}"));
                self.decide(detections)
            }
            JobOutcome::Rejected => {
                self.note(format!("rejected {job_id}"));
                self.fall_back(false)
            }
        }
    }

    fn on_timeout(&mut self, job_id: String) -> Result<()> {
        if !self.current_job(&job_id) {
            return Ok(());
        }
        let now = self.clock.now();
        self.note(format!("timeout {job_id}"));
        self.set_health(health_update(self.proc.health, HealthEvent::Timeout, now));
        self.fall_back(true)
    }

    /// Local nano inference for the in-flight frame after its offload failed.
    fn fall_back(&mut self, force_constrained: bool) -> Result<()> {
        let Some(mut flight) = self.proc.busy.take() else {
            return Ok(());
        };
        flight.fallback = true;
        flight.tier = Tier::Nano;
        if force_constrained {
            flight.fsm_next = flight.fsm_next.constrained();
        }
        flight.stage = self.run_local(flight.item.frame.frame_id, Tier::Nano)?;
        self.proc.busy = Some(flight);
        Ok(())
    }

    fn decide(&mut self, detections: Vec<Detection>) -> Result<()> {
        let Some(flight) = self.proc.busy.take() else {
            return Ok(());
        };
        let now = self.clock.now();
        let cfg = self.cfg;
        let consensus = aggregate(&detections, &self.agg);
        let image = image_score(&consensus, &self.agg);
        let combined = image + flight.boost;
        let label = HazardLabel::from_score(combined, &cfg.thresholds);
        let conflict = cfg.fsm.conflict(image, flight.boost);

        let mut detection_counts: BTreeMap<ModelId, u32> =
            (1..=cfg.pipeline.ensemble_size).map(|m| (ModelId(m), 0)).collect();
        for d in &detections {
            *detection_counts.entry(d.model_id).or_insert(0) += 1;
        }

        self.proc.fsm = flight.fsm_next;
        self.proc.prev_score = combined;
        self.proc.prev_conflict = conflict;
        self.proc.prev_label = Some(label);
        self.counts.decided += 1;
        let frame = &flight.item.frame;
        self.note(format!("decide frame {} label {}", frame.frame_id, label as u8));

        let record = DecisionRecord {
            frame_id: frame.frame_id,
            sequence_id: frame.sequence_id.clone(),
            ingest_ms: flight.item.ingest_ms,
            decide_ms: now,
            fsm_before: flight.fsm_before.current,
            fsm_after: flight.fsm_next.current,
            fsm_anchor: flight.fsm_next.anchor,
            tier: flight.tier,
            offload: flight.offload,
            job_id: flight.job_id.clone(),
            detection_counts,
            consensus,
            image_score: image,
            anomalies: flight.anomalies,
            sensor_boost: flight.boost,
            combined_score: combined,
            label,
            fallback: flight.fallback,
            config_fingerprint: self.fingerprint.clone(),
            energy_j: self.ledger.frame_j(frame.frame_id),
            latency_ms: now - flight.item.published_at,
        };
        record.check()?;
        self.log.push(LogEntry::Decision(record));

        if let Some(next) = self.proc.buffer.take() {
            self.start(next)?;
        }
        Ok(())
    }

    // ---- worker node ----

    fn resident_j(&self, job: &ResidentJob, until: u64) -> f64 {
        self.cfg.cost.worker_resident_w * until.saturating_sub(job.arrived_at) as f64 / 1000.0
    }

    fn release(&mut self, job: ResidentJob) {
        let j = self.resident_j(&job, self.clock.now());
        self.charge(EnergyKind::WorkerResident, job.job.frame_id, j);
    }

    fn worker_accept(&mut self, job: InferenceJob) -> Result<()> {
        if !self.worker.online {
            return Ok(());
        }
        let resident = ResidentJob {
            job,
            arrived_at: self.clock.now(),
        };
        if self.worker.busy.is_none() {
            return self.worker_start(resident);
        }
        if let Some(displaced) = self.worker.queued.take() {
            let job_id = displaced.job.job_id.clone();
            self.release(displaced);
            self.bus.publish(
                Topic::InferenceResponse(job_id.clone()),
                Payload::Response {
                    job_id,
                    outcome: JobOutcome::Rejected,
                },
                &mut self.clock,
                deliver,
            )?;
        }
        self.worker.queued = Some(resident);
        self.max_worker_queue = self.max_worker_queue.max(1);
        Ok(())
    }

    fn worker_start(&mut self, resident: ResidentJob) -> Result<()> {
        let job = &resident.job;
        let ms = self
            .cfg
            .cost
            .inference_ms(Site::Worker, job.tier, job.models, &mut self.rng)?;
        let joules = self.cfg.cost.inference_j(Site::Worker, job.tier, job.models)?;
        let frame_id = job.frame_id;
        self.charge(EnergyKind::WorkerInference, frame_id, joules);
        self.worker.next_token += 1;
        let token = self.worker.next_token;
        self.clock.schedule_in(ms, Event::WorkerDone { token })?;
        self.worker.busy = Some((resident, token));
        Ok(())
    }

    fn worker_done(&mut self, token: u64) -> Result<()> {
        if !matches!(&self.worker.busy, Some((_, t)) if *t == token) {
            return Ok(());
        }
        let (resident, _) = self.worker.busy.take().expect("checked above");
        let job_id = resident.job.job_id.clone();
        let detections = resident.job.detections.clone();
        self.release(resident);
        self.bus.publish(
            Topic::InferenceResponse(job_id.clone()),
            Payload::Response {
                job_id,
                outcome: JobOutcome::Completed { detections },
            },
            &mut self.clock,
            deliver,
        )?;
        if let Some(next) = self.worker.queued.take() {
            self.worker_start(next)?;
        }
        Ok(())
    }

    fn worker_heartbeat(&mut self, epoch: u64) -> Result<()> {
        if !self.worker.online || epoch != self.worker.epoch {
            return Ok(());
        }
        self.bus
            .publish(Topic::JetsonStatus, Payload::Heartbeat, &mut self.clock, deliver)?;
        self.clock
            .schedule_in(self.cfg.health.heartbeat_period_ms, Event::Heartbeat { epoch })?;
        Ok(())
    }

    fn worker_kill(&mut self) -> Result<()> {
        if !self.worker.online {
            return Ok(());
        }
        self.note("worker offline".into());
        self.worker.online = false;
        self.worker.epoch += 1;
        if let Some((resident, _)) = self.worker.busy.take() {
            self.release(resident);
        }
        if let Some(resident) = self.worker.queued.take() {
            self.release(resident);
        }
        Ok(())
    }

    fn worker_revive(&mut self) -> Result<()> {
        if self.worker.online {
            return Ok(());
        }
        self.note("worker online".into());
        self.worker.online = true;
        self.worker.epoch += 1;
        self.worker_heartbeat(self.worker.epoch)
    }

    /// Charges residency for jobs still on the worker when the run ends.
    fn flush_worker(&mut self, end_ms: u64) {
        let mut items = Vec::new();
        if let Some((resident, _)) = &self.worker.busy {
            items.push((resident.job.frame_id, self.resident_j(resident, end_ms)));
        }
        if let Some(resident) = &self.worker.queued {
            items.push((resident.job.frame_id, self.resident_j(resident, end_ms)));
        }
        for (frame_id, j) in items {
            self.charge(EnergyKind::WorkerResident, frame_id, j);
        }
    }
}
