use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::Rng;

use crate::config::{Mode, ScenarioConfig};
use crate::context::{ContextRecord, EntityId, Millis};
use crate::detection::{build_graph, Report, ReportSource, Verdict};
use crate::metrics::RunMetrics;
use crate::protocol::{
    CriticalProtocol, MessageKind, ProtocolMessage, Resolution, RoundState, RouteContext,
};
use crate::rng::{keyed_rng, Domain};
use crate::roles::{
    DeviceState, DigestReport, RegistrationRequest, RegistryEntry, Role, RoleState, Trust,
};
use crate::transcript::{Entry, Meta, Outcome, Transcript};

use super::{AttackPlan, DevicePlacement, FinalState, RunOutput, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Periodic,
    Revalidation,
}

#[derive(Debug, Clone)]
enum Body {
    Context {
        record: ContextRecord,
        tick: u64,
        purpose: Purpose,
        truth: bool,
    },
    Digest {
        digest: Box<DigestReport>,
        record: ContextRecord,
        tick: u64,
        purpose: Purpose,
        truth: bool,
    },
    PeriodStart {
        expected_next: u32,
    },
    Alarm,
    Patch,
    Revalidate,
    ReRegister {
        generation: u32,
        base_tick: u64,
        entry: Option<Box<RegistryEntry>>,
    },
    Eliminate,
}

#[derive(Debug, Clone)]
enum Action {
    PeriodTick(u64),
    ReportSweep(u64),
    Compromise(EntityId),
    PatchAvailable(EntityId),
    Deliver(ProtocolMessage, Body),
    NodeBuilt {
        node: EntityId,
        device: EntityId,
        record: ContextRecord,
        tick: u64,
        purpose: Purpose,
        truth: bool,
    },
    CdsReady {
        device: EntityId,
        tick: u64,
        report: Report,
        record: ContextRecord,
        purpose: Purpose,
        truth: bool,
    },
    DispatchPatch(EntityId),
    BeginRevalidation(EntityId),
    RoundDeadline(EntityId),
}

#[derive(Debug)]
struct Event {
    at: Millis,
    seq: u64,
    action: Action,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest (at, seq) first.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

pub(super) struct Engine<'a> {
    scenario: &'a Scenario,
    cfg: &'a ScenarioConfig,
    distributed: bool,
    now: Millis,
    seq: u64,
    queue: BinaryHeap<Event>,
    cds: RoleState,
    nodes: BTreeMap<EntityId, RoleState>,
    devices: Vec<DeviceState>,
    silenced: BTreeSet<EntityId>,
    busy_until: BTreeMap<EntityId, Millis>,
    protocol: CriticalProtocol,
    attacks: BTreeMap<EntityId, AttackPlan>,
    patch_ready: BTreeSet<EntityId>,
    /// `(device, tick)` pairs whose report reached the CDS or was timed out.
    handled: BTreeSet<(EntityId, u64)>,
    messages_sent: u64,
    transcript: Transcript,
}

impl<'a> Engine<'a> {
    pub(super) fn new(scenario: &'a Scenario, mode: Mode) -> Self {
        let cfg = &scenario.config;
        let topo = &scenario.topology;
        let distributed = mode.is_distributed();
        let mut cds = RoleState::new(Role::Cds, topo.cds, cfg.seed);
        let mut nodes: BTreeMap<EntityId, RoleState> = BTreeMap::new();
        if distributed {
            for id in &topo.lds_nodes {
                nodes.insert(*id, RoleState::new(Role::Lds, *id, cfg.seed));
            }
            for id in &topo.sds_nodes {
                nodes.insert(*id, RoleState::new(Role::Sds, *id, cfg.seed));
            }
        }
        let mut devices = Vec::with_capacity(topo.devices.len());
        for d in &topo.devices {
            cds.register_device(
                RegistrationRequest {
                    device: d.id,
                    record: d.record,
                    diagnosis_node: d.diagnosis_node,
                },
                cfg.stages,
                0,
            )
            .expect("topology devices are unique and valid");
            if let Some(node) = d.diagnosis_node.and_then(|n| nodes.get_mut(&n)) {
                let entry = cds.entry(d.id).expect("just registered").clone();
                node.admit(d.id, entry).expect("fresh node registry");
            }
            devices.push(DeviceState::new(d.id, d.record, cfg.seed));
        }
        let transcript = Transcript::new(Meta {
            mode,
            devices: topo.devices.len(),
            seed: cfg.seed,
            period_ms: cfg.period_ms,
            duration_ms: cfg.duration_ms,
        });
        Engine {
            scenario,
            cfg,
            distributed,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            cds,
            nodes,
            devices,
            silenced: BTreeSet::new(),
            busy_until: BTreeMap::new(),
            protocol: CriticalProtocol::new(cfg.sizes, cfg.period_ms),
            attacks: scenario.attacks.iter().map(|a| (a.device, *a)).collect(),
            patch_ready: BTreeSet::new(),
            handled: BTreeSet::new(),
            messages_sent: 0,
            transcript,
        }
    }

    fn schedule(&mut self, at: Millis, action: Action) {
        debug_assert!(at >= self.now, "events never go back in time");
        self.seq += 1;
        self.queue.push(Event {
            at,
            seq: self.seq,
            action,
        });
    }

    fn placement(&self, device: EntityId) -> &'a DevicePlacement {
        self.scenario
            .topology
            .device(device)
            .expect("device exists")
    }

    fn device_mut(&mut self, device: EntityId) -> &mut DeviceState {
        &mut self.devices[device.0 as usize - 1]
    }

    fn active_node(&self, device: EntityId) -> Option<EntityId> {
        if self.distributed {
            self.placement(device).diagnosis_node
        } else {
            None
        }
    }

    fn ctx(&self, device: EntityId) -> RouteContext {
        let p = self.placement(device);
        RouteContext {
            cds: self.scenario.topology.cds,
            device,
            route: p.route,
            gateway: p.gateway,
            diagnosis_node: p.diagnosis_node,
            header_bytes: p.record.header_bytes(),
            distributed: self.distributed,
        }
    }

    /// Transit time of `msg`, derived from the device's path: two hops span
    /// device to CDS, one hop touching the device is the access link, any
    /// other single hop is the gateway uplink.
    fn transit(&self, msg: &ProtocolMessage) -> Millis {
        let topo = &self.scenario.topology;
        let p = self.placement(msg.device_id);
        match msg.hops {
            2 => topo.device_to_cds(p).0,
            1 if msg.src == p.id || msg.dst == p.id => {
                topo.latency(p.id, p.gateway).expect("access link")
            }
            1 => topo.latency(p.gateway, topo.cds).expect("uplink"),
            _ => 0,
        }
    }

    fn message(
        &self,
        kind: MessageKind,
        src: EntityId,
        dst: EntityId,
        device: EntityId,
        hops: u32,
    ) -> ProtocolMessage {
        ProtocolMessage::new(
            kind,
            src,
            dst,
            device,
            self.placement(device).record.header_bytes(),
            &self.cfg.sizes,
            hops,
            self.now,
        )
    }

    fn send(&mut self, msg: ProtocolMessage, body: Body) {
        self.messages_sent += 1;
        let lost = self.cfg.loss_rate > 0.0
            && keyed_rng(Domain::Loss, self.cfg.seed, self.messages_sent, 0).gen::<f64>()
                < self.cfg.loss_rate;
        self.transcript.push(Entry::Send {
            sent_at: msg.sent_at,
            kind: msg.kind,
            src: msg.src,
            dst: msg.dst,
            device: msg.device_id,
            payload_bytes: msg.payload_bytes,
            hops: msg.hops,
            delivered: !lost,
        });
        if !lost {
            let at = self.now + self.transit(&msg);
            self.schedule(at, Action::Deliver(msg, body));
        }
    }

    /// Queues `cost` ms of work on `who` (FIFO) and returns its finish time.
    fn reserve(&mut self, who: EntityId, cost: Millis) -> Millis {
        let busy = self.busy_until.entry(who).or_insert(0);
        let done = (*busy).max(self.now) + cost;
        *busy = done;
        done
    }

    fn last_tick(&self) -> u64 {
        (self.cfg.duration_ms / self.cfg.period_ms).saturating_sub(1)
    }

    pub(super) fn run(mut self) -> RunOutput {
        let attacks: Vec<AttackPlan> = self.attacks.values().copied().collect();
        for a in &attacks {
            self.transcript.push(Entry::Attack {
                device: a.device,
                profile: a.profile,
                disposition: a.disposition,
                discovery_at: a.timeline.discovery_at,
                exploit_at: a.timeline.exploit_at,
                patch_available_at: a.timeline.patch_available_at,
            });
            self.schedule(a.timeline.exploit_at, Action::Compromise(a.device));
            self.schedule(
                a.timeline.patch_available_at,
                Action::PatchAvailable(a.device),
            );
        }
        if self.last_tick() >= 1 {
            self.schedule(self.cfg.period_ms, Action::PeriodTick(1));
        }
        while let Some(ev) = self.queue.pop() {
            if ev.at > self.cfg.duration_ms {
                self.queue.push(ev);
                break;
            }
            self.now = ev.at;
            self.handle(ev.action);
        }
        self.finish()
    }

    fn finish(self) -> RunOutput {
        let eliminations_in_flight = self
            .queue
            .iter()
            .filter_map(|ev| match &ev.action {
                Action::Deliver(m, Body::Eliminate) => Some((m.dst, m.device_id)),
                _ => None,
            })
            .collect();
        let metrics = RunMetrics::from_transcript(&self.transcript);
        let cds_trust = self
            .cds
            .registry
            .iter()
            .map(|(id, e)| (*id, e.trust))
            .collect();
        let node_registries = self
            .nodes
            .iter()
            .map(|(id, n)| (*id, n.registry.keys().copied().collect()))
            .collect();
        RunOutput {
            metrics,
            transcript: self.transcript,
            attacks: self.attacks.into_values().collect(),
            final_state: FinalState {
                cds_trust,
                node_registries,
                unresolved_rounds: self.protocol.open_rounds().count(),
                eliminations_in_flight,
            },
        }
    }

    fn handle(&mut self, action: Action) {
        match action {
            Action::PeriodTick(k) => self.on_tick(k),
            Action::ReportSweep(k) => self.on_sweep(k),
            Action::Compromise(d) => self.on_compromise(d),
            Action::PatchAvailable(d) => {
                self.patch_ready.insert(d);
                if self.round_state(d) == Some(RoundState::Alarmed) {
                    self.schedule(self.now, Action::DispatchPatch(d));
                }
            }
            Action::Deliver(msg, body) => self.on_deliver(msg, body),
            Action::NodeBuilt {
                node,
                device,
                record,
                tick,
                purpose,
                truth,
            } => self.on_node_built(node, device, record, tick, purpose, truth),
            Action::CdsReady {
                device,
                tick,
                report,
                record,
                purpose,
                truth,
            } => match purpose {
                Purpose::Periodic => self.decide(device, tick, Some(report), truth),
                Purpose::Revalidation => self.on_revalidation(device, tick, report, record),
            },
            Action::DispatchPatch(d) => self.on_dispatch_patch(d),
            Action::BeginRevalidation(d) => {
                if self.round_state(d) == Some(RoundState::Patching) {
                    let ctx = self.ctx(d);
                    let msgs = self
                        .protocol
                        .revalidate_trust(&ctx, self.now)
                        .expect("round is patching");
                    for m in msgs {
                        self.send(m, Body::Revalidate);
                    }
                }
            }
            Action::RoundDeadline(d) => {
                let due = self
                    .protocol
                    .round(d)
                    .is_some_and(|r| r.deadline <= self.now);
                if due {
                    let ctx = self.ctx(d);
                    let opened_at = self.protocol.round(d).expect("open").opened_at;
                    let res = self
                        .protocol
                        .expire(&mut self.cds, &ctx, self.now)
                        .expect("open round expires cleanly")
                        .expect("deadline reached");
                    self.apply_resolution(d, res, opened_at);
                }
            }
        }
    }

    fn round_state(&self, d: EntityId) -> Option<RoundState> {
        self.protocol.round(d).map(|r| r.state)
    }

    fn on_tick(&mut self, k: u64) {
        let ids: Vec<EntityId> = self
            .scenario
            .topology
            .devices
            .iter()
            .map(|d| d.id)
            .collect();
        for id in ids {
            if self.silenced.contains(&id) {
                continue;
            }
            let dev = &self.devices[id.0 as usize - 1];
            let record = dev.emit_context(dev.epoch_at(k));
            let truth = dev.compromised;
            self.share_context(id, record, k, Purpose::Periodic, truth);
        }
        let p = self.cfg.period_ms;
        // Reports still missing two periods after the tick count as absent.
        self.schedule(self.now + 2 * p, Action::ReportSweep(k));
        if k < self.last_tick() {
            self.schedule((k + 1) * p, Action::PeriodTick(k + 1));
        }
    }

    fn share_context(
        &mut self,
        device: EntityId,
        record: ContextRecord,
        tick: u64,
        purpose: Purpose,
        truth: bool,
    ) {
        let (dst, hops) = match self.active_node(device) {
            Some(node) => (node, 1),
            None => (self.scenario.topology.cds, 2),
        };
        let msg = self.message(MessageKind::ContextShare, device, dst, device, hops);
        self.send(
            msg,
            Body::Context {
                record,
                tick,
                purpose,
                truth,
            },
        );
    }

    fn on_sweep(&mut self, k: u64) {
        let due: Vec<EntityId> = self
            .cds
            .registry
            .iter()
            .filter(|(id, e)| {
                e.trust == Trust::Trusted
                    && k >= e.diagnose_from_tick
                    && !self.silenced.contains(id)
                    && !self.handled.contains(&(**id, k))
            })
            .map(|(id, _)| *id)
            .collect();
        for d in due {
            self.handled.insert((d, k));
            let truth = self.devices[d.0 as usize - 1].compromised;
            self.decide(d, k, None, truth);
        }
    }

    fn on_compromise(&mut self, d: EntityId) {
        let plan = self.attacks[&d];
        let tick = self.now / self.cfg.period_ms;
        let dev = self.device_mut(d);
        let epoch = dev.epoch_at(tick);
        dev.compromise(plan.profile, epoch, plan.disposition);
        self.transcript.push(Entry::Compromise {
            at: self.now,
            device: d,
            epoch,
        });
    }

    fn on_deliver(&mut self, msg: ProtocolMessage, body: Body) {
        let d = msg.device_id;
        let cds = self.scenario.topology.cds;
        let at_device = msg.dst == d;
        let at_cds = msg.dst == cds;
        match body {
            Body::Context {
                record,
                tick,
                purpose,
                truth,
            } => {
                if at_cds {
                    let cost = self.cfg.latency.graph_build_ms + self.cfg.latency.cds_check_ms;
                    let graph = build_graph(d, &record, self.cfg.stages)
                        .expect("emitted records stay valid");
                    let report = Report {
                        source: ReportSource::Device,
                        graph,
                    };
                    self.cds_enqueue(d, tick, report, record, purpose, truth, cost);
                } else if self
                    .nodes
                    .get(&msg.dst)
                    .is_some_and(|n| n.entry(d).is_some())
                {
                    let done = self.reserve(msg.dst, self.cfg.latency.graph_build_ms);
                    self.schedule(
                        done,
                        Action::NodeBuilt {
                            node: msg.dst,
                            device: d,
                            record,
                            tick,
                            purpose,
                            truth,
                        },
                    );
                }
            }
            Body::Digest {
                digest,
                record,
                tick,
                purpose,
                truth,
            } => {
                let report = Report {
                    source: digest.source,
                    graph: digest.graph,
                };
                let cost = self.cfg.latency.cds_check_ms;
                self.cds_enqueue(d, tick, report, record, purpose, truth, cost);
            }
            Body::PeriodStart { expected_next } => {
                if let Some(n) = self.nodes.get_mut(&msg.dst) {
                    n.note_expected(d, expected_next);
                }
            }
            Body::Alarm => {
                if let Some(n) = self.nodes.get_mut(&msg.dst) {
                    // The subordinate may already have dropped the device.
                    let _ = n.set_trust(d, Trust::Suspect);
                }
            }
            Body::Patch => {
                let effective = keyed_rng(Domain::Patch, self.cfg.seed, d.0, 0).gen::<f64>()
                    < self.cfg.patch_efficacy;
                let now = self.now;
                let applied = self.device_mut(d).apply_patch(effective, d.0);
                if applied {
                    if let Some(a) = self.attacks.get_mut(&d) {
                        a.timeline.patch_applied_at = Some(now);
                    }
                }
                self.transcript.push(Entry::Patch {
                    at: now,
                    device: d,
                    applied,
                });
            }
            Body::Revalidate => {
                if at_device {
                    if self.silenced.contains(&d) {
                        return;
                    }
                    let tick = self.now / self.cfg.period_ms;
                    let dev = &self.devices[d.0 as usize - 1];
                    let record = dev.emit_context(dev.epoch_at(tick));
                    let truth = dev.compromised;
                    self.share_context(d, record, tick, Purpose::Revalidation, truth);
                } else {
                    let fwd = self.message(MessageKind::TrustRevalidate, msg.dst, d, d, 1);
                    self.send(fwd, Body::Revalidate);
                }
            }
            Body::ReRegister {
                generation,
                base_tick,
                entry,
            } => match entry {
                Some(entry) if !at_device => {
                    if let Some(n) = self.nodes.get_mut(&msg.dst) {
                        n.readmit(d, *entry).expect("LDS/SDS accepts readmission");
                    }
                }
                _ => self.device_mut(d).reregistered(generation, base_tick),
            },
            Body::Eliminate => {
                if let Some(n) = self.nodes.get_mut(&msg.dst) {
                    n.remove(d);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn cds_enqueue(
        &mut self,
        device: EntityId,
        tick: u64,
        report: Report,
        record: ContextRecord,
        purpose: Purpose,
        truth: bool,
        cost: Millis,
    ) {
        if purpose == Purpose::Periodic && !self.handled.insert((device, tick)) {
            return;
        }
        let cds = self.scenario.topology.cds;
        let done = self.reserve(cds, cost);
        self.schedule(
            done,
            Action::CdsReady {
                device,
                tick,
                report,
                record,
                purpose,
                truth,
            },
        );
    }

    fn on_node_built(
        &mut self,
        node: EntityId,
        device: EntityId,
        record: ContextRecord,
        tick: u64,
        purpose: Purpose,
        truth: bool,
    ) {
        let Some(state) = self.nodes.get(&node) else {
            return;
        };
        let Ok(digest) = state.local_diagnose(device, &record, self.cfg.stages) else {
            // Device was removed while its graph was being built.
            return;
        };
        let kind = match purpose {
            Purpose::Periodic => MessageKind::DigestReport,
            Purpose::Revalidation => MessageKind::TrustAck,
        };
        let msg = self.message(kind, node, self.scenario.topology.cds, device, 1);
        self.send(
            msg,
            Body::Digest {
                digest: Box::new(digest),
                record,
                tick,
                purpose,
                truth,
            },
        );
    }

    fn decide(&mut self, d: EntityId, tick: u64, report: Option<Report>, truth: bool) {
        let Some(entry) = self.cds.entry(d) else {
            return;
        };
        if entry.trust != Trust::Trusted || tick < entry.diagnose_from_tick {
            return;
        }
        if let Some(r) = report {
            self.cds.add_report(d, tick, r);
        }
        let verdict = self
            .cds
            .cds_decide(d, tick, self.distributed)
            .expect("registered device");
        self.transcript.push(Entry::Decide {
            at: self.now,
            device: d,
            tick,
            tick_at: tick * self.cfg.period_ms,
            verdict,
            compromised: truth,
        });
        match verdict {
            Verdict::Threat(_) => self.open_round(d, verdict),
            Verdict::Consistent => {
                if let Some(node) = self.active_node(d) {
                    let next = self
                        .cds
                        .expected_counter(d, tick + 1)
                        .expect("registered device");
                    let cds = self.scenario.topology.cds;
                    let msg = self.message(MessageKind::PeriodStart, cds, node, d, 1);
                    self.send(
                        msg,
                        Body::PeriodStart {
                            expected_next: next.value,
                        },
                    );
                }
            }
        }
    }

    fn open_round(&mut self, d: EntityId, verdict: Verdict) {
        let ctx = self.ctx(d);
        let alarms = self
            .protocol
            .raise_alarm(&self.cds, &ctx, verdict, self.now)
            .expect("suspect device without an open round");
        self.transcript.push(Entry::Round {
            at: self.now,
            device: d,
        });
        for m in alarms {
            self.send(m, Body::Alarm);
        }
        let deadline = self.protocol.round(d).expect("just opened").deadline;
        self.schedule(deadline, Action::RoundDeadline(d));
        // Devices outside the attack plan have no pending vulnerability, so
        // the patch can go out at once.
        if !self.attacks.contains_key(&d) || self.patch_ready.contains(&d) {
            self.schedule(self.now, Action::DispatchPatch(d));
        }
    }

    fn on_dispatch_patch(&mut self, d: EntityId) {
        if self.round_state(d) != Some(RoundState::Alarmed) {
            return;
        }
        let ctx = self.ctx(d);
        let msg = self
            .protocol
            .dispatch_patch(&ctx, self.now)
            .expect("round is alarmed");
        let arrives = self.now + self.transit(&msg);
        self.send(msg, Body::Patch);
        self.schedule(arrives, Action::BeginRevalidation(d));
    }

    fn on_revalidation(&mut self, d: EntityId, tick: u64, report: Report, record: ContextRecord) {
        if self.round_state(d) != Some(RoundState::Revalidating) {
            return;
        }
        let ctx = self.ctx(d);
        let opened_at = self.protocol.round(d).expect("open").opened_at;
        let (to_device, _) = self.scenario.topology.device_to_cds(self.placement(d));
        let base_tick = (self.now + to_device) / self.cfg.period_ms;
        let res = self
            .protocol
            .resolve(
                &mut self.cds,
                &ctx,
                &[report],
                Some(&record),
                tick,
                self.cfg.stages,
                base_tick,
                self.now,
            )
            .expect("revalidating round resolves");
        self.apply_resolution(d, res, opened_at);
    }

    fn apply_resolution(&mut self, d: EntityId, res: Resolution, opened_at: Millis) {
        let outcome = match res {
            Resolution::ReRegistered { entry, messages } => {
                for m in messages {
                    let body = Body::ReRegister {
                        generation: entry.generation,
                        base_tick: entry.base_tick,
                        entry: (m.dst != d).then(|| entry.clone()),
                    };
                    self.send(m, body);
                }
                Outcome::ReRegistered
            }
            Resolution::Eliminated { messages } => {
                self.silenced.insert(d);
                for m in messages {
                    self.send(m, Body::Eliminate);
                }
                Outcome::Eliminated
            }
        };
        // Logged after the resolution messages so every round's CDS
        // messages sit between its Round and Resolve entries.
        self.transcript.push(Entry::Resolve {
            at: self.now,
            device: d,
            outcome,
            opened_at,
        });
    }
}
